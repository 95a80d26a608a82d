//! Micro-benchmarks for the mediation pipeline.
//!
//! Timing suites discard a priming round, take ten measured rounds and average
//! the middle eight. Costs are host wall-clock and only their shape is meant to
//! be compared across machines.

use std::fmt::{self, Write as _};
use std::hint::black_box;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::authz::{AuthorizationCache, Verdict};
use crate::authz::{PathAuthorizer, ScriptedPolicy};
use crate::domain::{
    EventId, HandoffEvent, InputEvent, OperationRequest, ProgramId, Registry, Timestamp, WidgetKind,
};
use crate::graph::{DelegationPath, GraphStore, PathKey};
use crate::mediator::{DelayStats, Mode, DEFAULT_WINDOW_MS};
use crate::scenario::{self, RunOptions, ScenarioError, WorkloadError, WorkloadParams};

pub const ROUNDS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    GraphConstruction,
    CacheRw,
    Enforcement,
    Ambiguity,
    TwoLevel,
    Memory,
}

impl Suite {
    pub const ALL: [Suite; 6] = [
        Suite::GraphConstruction,
        Suite::CacheRw,
        Suite::Enforcement,
        Suite::Ambiguity,
        Suite::TwoLevel,
        Suite::Memory,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::GraphConstruction => "graph_construction",
            Suite::CacheRw => "cache_rw",
            Suite::Enforcement => "enforcement",
            Suite::Ambiguity => "ambiguity",
            Suite::TwoLevel => "two_level",
            Suite::Memory => "memory",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Suite::ALL
            .into_iter()
            .find(|suite| suite.name() == s)
            .ok_or_else(|| format!("unknown suite {s:?}"))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
}

/// Least-squares line through `(x, y)` points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

pub fn linear_fit(points: &[(f64, f64)]) -> Fit {
    let n = points.len() as f64;
    if points.len() < 2 {
        return Fit {
            slope: 0.0,
            intercept: points.first().map_or(0.0, |p| p.1),
            r2: 1.0,
        };
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = if sxx == 0.0 { 0.0 } else { sxy / sxx };
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 {
        1.0
    } else {
        (sxy * sxy) / (sxx * syy)
    };
    Fit {
        slope,
        intercept,
        r2,
    }
}

/// Mean after dropping the lowest and highest tenth of the samples.
pub fn middle_mean(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let trim = sorted.len() / 10;
    let kept = &sorted[trim..sorted.len() - trim];
    kept.iter().sum::<f64>() / kept.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphRow {
    pub handoffs: usize,
    pub micros: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphConstruction {
    pub rows: Vec<GraphRow>,
    pub fit: Fit,
}

/// A prepared input, handoff chain and request, ready to be recorded.
pub struct Chain {
    input: InputEvent,
    handoffs: Vec<HandoffEvent>,
    request: OperationRequest,
}

fn chain_world(max_handoffs: usize) -> (Registry, Vec<ProgramId>) {
    let mut reg = Registry::with_standard_sensors();
    let programs = (0..=max_handoffs)
        .map(|i| {
            reg.register_program(&format!("p{i}"), &format!("P{i}"))
                .unwrap()
        })
        .collect();
    reg.register_widget("go", WidgetKind::GuiWidget, Vec::<&str>::new())
        .unwrap();
    (reg, programs)
}

fn chain(reg: &Registry, programs: &[ProgramId], handoffs: usize) -> Chain {
    let widget = reg.widgets()[0].id;
    let camera = reg.sensor_by_name("camera").unwrap();
    let capture = reg.operation_by_name("capture_picture").unwrap();
    let root = EventId(1);
    let input = reg
        .input_event(root, widget, programs[0], Timestamp(0))
        .unwrap();
    let handoffs = (0..handoffs)
        .map(|i| {
            reg.handoff_event(
                EventId(i as u64 + 2),
                programs[i],
                programs[i + 1],
                Timestamp(i as u64 + 1),
                None,
                Some(root),
            )
            .unwrap()
        })
        .collect::<Vec<_>>();
    let request = reg
        .operation_request(
            EventId(handoffs.len() as u64 + 2),
            programs[handoffs.len()],
            capture,
            camera,
            Timestamp(handoffs.len() as u64 + 1),
        )
        .unwrap();
    Chain {
        input,
        handoffs,
        request,
    }
}

impl Chain {
    pub fn len(&self) -> usize {
        self.handoffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.handoffs.is_empty()
    }

    /// Records the chain into a fresh store and walks the path back.
    pub fn build(&self) -> DelegationPath {
        let mut store = GraphStore::new(DEFAULT_WINDOW_MS);
        store.record_input(&self.input).unwrap();
        for h in &self.handoffs {
            store.record_handoff(h, h.t).unwrap();
        }
        store.record_request(&self.request).unwrap();
        store.compute_path(&self.request).unwrap()
    }
}

/// Chain of `handoffs` hops between distinct programs ending in a camera request.
pub fn chain_fixture(handoffs: usize) -> Chain {
    let (reg, programs) = chain_world(handoffs);
    chain(&reg, &programs, handoffs)
}

/// Cost of recording an input, `k` handoffs and a request, then walking the
/// path back, for `k` in 1..=10. Every round times each length once so drift
/// in the host spreads evenly over the sweep.
pub fn graph_construction(batch: usize) -> GraphConstruction {
    let batch = batch.max(1);
    let (reg, programs) = chain_world(10);
    let chains: Vec<Chain> = (1..=10).map(|k| chain(&reg, &programs, k)).collect();
    let mut samples = vec![Vec::with_capacity(ROUNDS); chains.len()];
    for round in 0..=ROUNDS {
        for (c, out) in chains.iter().zip(samples.iter_mut()) {
            let start = Instant::now();
            for _ in 0..batch {
                black_box(black_box(c).build());
            }
            if round > 0 {
                out.push(start.elapsed().as_secs_f64() * 1e6 / batch as f64);
            }
        }
    }
    let rows: Vec<GraphRow> = samples
        .iter()
        .enumerate()
        .map(|(i, s)| GraphRow {
            handoffs: i + 1,
            micros: middle_mean(s),
        })
        .collect();
    let fit = linear_fit(
        &rows
            .iter()
            .map(|r| (r.handoffs as f64, r.micros))
            .collect::<Vec<_>>(),
    );
    GraphConstruction { rows, fit }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CacheRow {
    pub bytes: usize,
    pub store_micros: f64,
    pub evict_micros: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CacheRw {
    pub rows: Vec<CacheRow>,
    pub store_fit: Fit,
    pub evict_fit: Fit,
}

pub const CACHE_STEP: usize = 512;
pub const CACHE_MAX: usize = 16 * 1024;

/// Path key for `i`, used to fill a cache with distinct entries.
pub fn cache_key(i: usize) -> PathKey {
    PathKey {
        widget: crate::domain::WidgetId(i as u32),
        programs: vec![ProgramId(0), ProgramId(1)],
        op: crate::domain::OperationId(0),
        sensor: crate::domain::SensorId(0),
    }
}

/// Store and evict cost for snapshots of 512 B up to 16 KB.
pub fn cache_rw(batch: usize) -> CacheRw {
    let batch = batch.max(1);
    let keys: Vec<PathKey> = (0..batch).map(cache_key).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let sizes: Vec<usize> = (CACHE_STEP..=CACHE_MAX).step_by(CACHE_STEP).collect();
    let payloads: Vec<Vec<u8>> = sizes
        .iter()
        .map(|&n| (0..n).map(|_| rng.random()).collect())
        .collect();
    let mut store = vec![Vec::with_capacity(ROUNDS); sizes.len()];
    let mut evict = vec![Vec::with_capacity(ROUNDS); sizes.len()];
    for round in 0..=ROUNDS {
        for (i, payload) in payloads.iter().enumerate() {
            let mut cache = AuthorizationCache::new();
            let snapshots: Vec<Vec<u8>> = (0..batch).map(|_| payload.clone()).collect();
            let start = Instant::now();
            for (key, snap) in keys.iter().zip(snapshots) {
                cache.store(key.clone(), Verdict::Allow, snap);
            }
            let stored = start.elapsed().as_secs_f64() * 1e6 / batch as f64;
            let start = Instant::now();
            for key in &keys {
                black_box(cache.evict(key).unwrap());
            }
            let evicted = start.elapsed().as_secs_f64() * 1e6 / batch as f64;
            if round > 0 {
                store[i].push(stored);
                evict[i].push(evicted);
            }
        }
    }
    let rows: Vec<CacheRow> = sizes
        .iter()
        .enumerate()
        .map(|(i, &bytes)| CacheRow {
            bytes,
            store_micros: middle_mean(&store[i]),
            evict_micros: middle_mean(&evict[i]),
        })
        .collect();
    let points = |f: fn(&CacheRow) -> f64| -> Vec<(f64, f64)> {
        rows.iter().map(|r| (r.bytes as f64, f(r))).collect()
    };
    CacheRw {
        store_fit: linear_fit(&points(|r| r.store_micros)),
        evict_fit: linear_fit(&points(|r| r.evict_micros)),
        rows,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Enforcement {
    pub events: usize,
    pub mediated_micros: f64,
    pub baseline_micros: f64,
}

impl Enforcement {
    pub fn overhead(&self) -> f64 {
        if self.baseline_micros == 0.0 {
            0.0
        } else {
            self.mediated_micros / self.baseline_micros - 1.0
        }
    }
}

/// Whole-run cost with full mediation against the pass-through engine.
pub fn enforcement(params: &WorkloadParams) -> Result<Enforcement, BenchError> {
    let s = scenario::generate(params)?.into_scenario()?;
    let mut per_mode = [0.0; 2];
    let mut events = 0;
    for (slot, mode) in [Mode::Entrust, Mode::Unmediated].into_iter().enumerate() {
        let mut rounds = Vec::with_capacity(ROUNDS);
        for round in 0..=ROUNDS {
            let report = scenario::run(
                &s,
                RunOptions {
                    mode: Some(mode),
                    ..RunOptions::default()
                },
            )?
            .report;
            events = report.stats.total_events as usize;
            if round > 0 {
                rounds.push(report.wall_time_us as f64);
            }
        }
        per_mode[slot] = middle_mean(&rounds);
    }
    Ok(Enforcement {
        events,
        mediated_micros: per_mode[0],
        baseline_micros: per_mode[1],
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ambiguity {
    pub stats: DelayStats,
    pub three_edge_fraction: f64,
    pub path_lengths: Vec<(usize, usize)>,
}

/// Delay statistics for a generated workload under ambiguity prevention.
pub fn ambiguity(params: &WorkloadParams) -> Result<Ambiguity, BenchError> {
    let s = scenario::generate(params)?.into_scenario()?;
    let report = scenario::run(&s, RunOptions::default())?.report;
    Ok(Ambiguity {
        three_edge_fraction: report.three_edge_fraction(),
        path_lengths: report.path_lengths.iter().map(|(k, v)| (*k, *v)).collect(),
        stats: report.stats,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoLevelRow {
    pub apps: usize,
    pub on: DelayStats,
    pub off: DelayStats,
}

/// Paired runs with and without input-derived priority, same seed, for each
/// app count.
pub fn two_level(
    base: &WorkloadParams,
    apps: impl IntoIterator<Item = usize>,
) -> Result<Vec<TwoLevelRow>, BenchError> {
    apps.into_iter()
        .map(|n| {
            let params = WorkloadParams {
                n_apps: n,
                ..base.clone()
            };
            let s = scenario::generate(&params)?.into_scenario()?;
            let mut stats = [true, false].map(|on| {
                scenario::run(
                    &s,
                    RunOptions {
                        two_level: Some(on),
                        ..RunOptions::default()
                    },
                )
                .map(|o| o.report.stats)
            });
            let off = std::mem::replace(&mut stats[1], Ok(DelayStats::default()))?;
            let on = std::mem::replace(&mut stats[0], Ok(DelayStats::default()))?;
            Ok(TwoLevelRow { apps: n, on, off })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Memory {
    pub programs: usize,
    pub paths: usize,
    pub mean_bytes: f64,
    pub max_bytes: usize,
}

/// Builds a cache for `programs` programs, each holding one to four
/// authorized paths with the observed mix of path lengths, and reports the
/// serialized footprint per program.
pub fn memory(programs: usize, seed: u64) -> Memory {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reg = Registry::with_standard_sensors();
    let ids: Vec<ProgramId> = (0..programs)
        .map(|i| {
            reg.register_program(&format!("program {i}"), &format!("M{i}"))
                .unwrap()
        })
        .collect();
    let widgets: Vec<_> = (0..4)
        .map(|i| {
            reg.register_widget(
                &format!("action {i}"),
                WidgetKind::VoiceCommand,
                Vec::<&str>::new(),
            )
            .unwrap()
            .id
        })
        .collect();
    let ops: Vec<_> = reg
        .operations()
        .iter()
        .map(|o| (o.id, o.sensors[0]))
        .collect();
    let mut auth = PathAuthorizer::new(false);
    let mut allow = ScriptedPolicy::allow_all();
    let mut paths = 0;
    let mut next = 0u64;
    let mut id = || {
        next += 1;
        EventId(next)
    };
    for &owner in &ids {
        let count = rng.random_range(1..=widgets.len());
        for &widget in &widgets[..count] {
            let hops = match rng.random_range(0..100) {
                0..87 => 1,
                87..92 => 2,
                _ => 0,
            };
            let mut holder = owner;
            let input = reg.input_event(id(), widget, owner, Timestamp(0)).unwrap();
            let mut handoffs = Vec::new();
            for h in 0..hops {
                let to = loop {
                    let p = ids[rng.random_range(0..ids.len())];
                    if p != holder && p != owner {
                        break p;
                    }
                };
                handoffs.push(
                    reg.handoff_event(id(), holder, to, Timestamp(h + 1), None, Some(input.id))
                        .unwrap(),
                );
                holder = to;
            }
            let (op, sensor) = ops[rng.random_range(0..ops.len())];
            let request = reg
                .operation_request(id(), holder, op, sensor, Timestamp(hops + 1))
                .unwrap();
            let path = DelegationPath {
                input,
                handoffs,
                request,
            };
            auth.prompt(&reg, std::slice::from_ref(&path), &mut allow)
                .expect("well-formed path");
            paths += 1;
        }
    }
    let fp = auth.cache().footprint();
    Memory {
        programs,
        paths,
        mean_bytes: fp.mean_per_program(programs),
        max_bytes: fp.per_program.values().copied().max().unwrap_or(0),
    }
}

/// Runs one suite with its default sizes and renders a plain-text table.
pub fn run_suite(suite: Suite) -> Result<String, BenchError> {
    let mut out = String::new();
    match suite {
        Suite::GraphConstruction => {
            let g = graph_construction(300);
            writeln!(out, "handoffs  us/graph").unwrap();
            for r in &g.rows {
                writeln!(out, "{:>8}  {:>8.3}", r.handoffs, r.micros).unwrap();
            }
            write_fit(&mut out, "per handoff", g.fit);
        }
        Suite::CacheRw => {
            let c = cache_rw(20);
            writeln!(out, "   bytes  store us  evict us").unwrap();
            for r in &c.rows {
                writeln!(
                    out,
                    "{:>8}  {:>8.3}  {:>8.3}",
                    r.bytes, r.store_micros, r.evict_micros
                )
                .unwrap();
            }
            write_fit(&mut out, "store per byte", c.store_fit);
            write_fit(&mut out, "evict per byte", c.evict_fit);
        }
        Suite::Enforcement => {
            let e = enforcement(&WorkloadParams {
                n_inputs: 2000,
                ..WorkloadParams::default()
            })?;
            writeln!(out, "events      {}", e.events).unwrap();
            writeln!(out, "mediated    {:.0} us", e.mediated_micros).unwrap();
            writeln!(out, "baseline    {:.0} us", e.baseline_micros).unwrap();
            writeln!(out, "overhead    {:.1}%", e.overhead() * 100.0).unwrap();
        }
        Suite::Ambiguity => {
            let a = ambiguity(&WorkloadParams::default())?;
            let s = &a.stats;
            writeln!(out, "events          {}", s.total_events).unwrap();
            writeln!(
                out,
                "delayed         {} ({:.2}%)",
                s.delayed_events,
                s.delayed_fraction() * 100.0
            )
            .unwrap();
            writeln!(out, "max delay       {} ms", s.max_delay_ms).unwrap();
            writeln!(out, "three-edge      {:.2}%", a.three_edge_fraction * 100.0).unwrap();
            for (edges, n) in &a.path_lengths {
                writeln!(out, "  {edges}-edge paths  {n}").unwrap();
            }
        }
        Suite::TwoLevel => {
            let rows = two_level(&WorkloadParams::default(), (10..=100).step_by(10))?;
            writeln!(
                out,
                "apps  delayed(on)  max input(on)  delayed(off)  max input(off)"
            )
            .unwrap();
            for r in &rows {
                writeln!(
                    out,
                    "{:>4}  {:>11}  {:>13}  {:>12}  {:>14}",
                    r.apps,
                    r.on.delayed_events,
                    r.on.max_input_derived_delay_ms,
                    r.off.delayed_events,
                    r.off.max_input_derived_delay_ms
                )
                .unwrap();
            }
        }
        Suite::Memory => {
            let runs: Vec<Memory> = (1..=ROUNDS as u64).map(|s| memory(1000, s)).collect();
            let mean = middle_mean(&runs.iter().map(|m| m.mean_bytes).collect::<Vec<_>>());
            writeln!(out, "programs        {}", runs[0].programs).unwrap();
            writeln!(out, "paths           {}", runs[0].paths).unwrap();
            writeln!(out, "bytes/program   {mean:.0}").unwrap();
        }
    }
    Ok(out)
}

fn write_fit(out: &mut String, what: &str, fit: Fit) {
    writeln!(
        out,
        "fit: {:.4} us {what} + {:.3} us, R^2 {:.4}",
        fit.slope, fit.intercept, fit.r2
    )
    .unwrap();
}
