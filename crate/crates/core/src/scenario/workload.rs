//! Seeded synthetic workloads shaped like field measurements: sparse user
//! input, short service lags, mostly one-handoff delegation paths, plus
//! bursts of background handoffs that compete for the same services.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::WidgetKind;
use crate::mediator::Mode;

use super::format::{
    self, ActionLine, EventBody, EventLine, HandlerLine, Header, Line, PolicyLine, ProgramLine,
    Scenario, ScenarioError, StepLine, TriggerLine, WidgetLine, SCENARIO_FORMAT, SCENARIO_VERSION,
};

const STANDARD_OPS: [(&str, &str); 4] = [
    ("capture_picture", "camera"),
    ("record_audio", "microphone"),
    ("read_location", "gps"),
    ("capture_screen", "screen"),
];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WorkloadError {
    #[error("infeasible workload: {0}")]
    InfeasibleWorkload(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadParams {
    pub n_inputs: usize,
    pub gap_range_ms: (u64, u64),
    /// Handoff events per input event.
    pub handoff_ratio: f64,
    /// Operation requests per input event.
    pub request_ratio: f64,
    /// Share of requests whose path has exactly one handoff.
    pub three_edge_fraction: f64,
    /// Share of requests whose path has two handoffs.
    pub four_edge_fraction: f64,
    /// Share of handoffs sent in background bursts, unrelated to any input.
    pub background_fraction: f64,
    pub input_lag_max_ms: u64,
    pub handoff_lag_max_ms: u64,
    pub n_apps: usize,
    pub n_services: usize,
    pub seed: u64,
}

impl Default for WorkloadParams {
    fn default() -> Self {
        Self {
            n_inputs: 15_000,
            gap_range_ms: (140, 1500),
            handoff_ratio: 2037.0 / 15_000.0,
            request_ratio: 5252.0 / 15_000.0,
            three_edge_fraction: 0.87,
            four_edge_fraction: 0.05,
            background_fraction: 0.10,
            input_lag_max_ms: 22,
            handoff_lag_max_ms: 15,
            n_apps: 20,
            n_services: 10,
            seed: 1,
        }
    }
}

fn infeasible(msg: impl Into<String>) -> WorkloadError {
    WorkloadError::InfeasibleWorkload(msg.into())
}

impl WorkloadParams {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        let (lo, hi) = self.gap_range_ms;
        if lo == 0 || hi < lo {
            return Err(infeasible(format!("bad gap range [{lo}, {hi}]")));
        }
        for (name, v) in [
            ("handoff_ratio", self.handoff_ratio),
            ("request_ratio", self.request_ratio),
            ("three_edge_fraction", self.three_edge_fraction),
            ("four_edge_fraction", self.four_edge_fraction),
            ("background_fraction", self.background_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(infeasible(format!("{name} = {v} is outside [0, 1]")));
            }
        }
        if self.three_edge_fraction + self.four_edge_fraction > 1.0 {
            return Err(infeasible("path-length fractions add up to more than 1"));
        }
        if self.input_lag_max_ms < 2 || self.handoff_lag_max_ms < 2 {
            return Err(infeasible("service lags must allow at least 2 ms"));
        }
        // The longest chain must be over before the next input can arrive.
        let chain = self.input_lag_max_ms + 2 * self.handoff_lag_max_ms;
        if lo <= chain {
            return Err(infeasible(format!(
                "minimum input gap {lo} ms does not exceed the longest chain ({chain} ms)"
            )));
        }
        if self.n_inputs > 0 && (self.n_apps == 0 || self.n_services < 2) {
            return Err(infeasible("need at least one app and two services"));
        }
        Ok(())
    }
}

/// Exact event budget derived from the parameters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Allocation {
    pub handoffs: usize,
    pub background: usize,
    pub requests: usize,
    pub direct_paths: usize,
    pub three_edge_paths: usize,
    pub four_edge_paths: usize,
    pub relay_inputs: usize,
    pub chain_inputs: usize,
    pub plain_inputs: usize,
}

fn round(x: f64) -> usize {
    x.round().max(0.0) as usize
}

pub fn allocate(params: &WorkloadParams) -> Result<Allocation, WorkloadError> {
    params.validate()?;
    let n = params.n_inputs;
    let handoffs = round(params.handoff_ratio * n as f64);
    let requests = round(params.request_ratio * n as f64);
    let background = round(params.background_fraction * handoffs as f64);
    let derived = handoffs - background;
    let p3 = round(params.three_edge_fraction * requests as f64);
    let p4 = round(params.four_edge_fraction * requests as f64).min(requests - p3);
    let p2 = requests - p3 - p4;

    let (relay, chain) = if p3 + 2 * p4 == 0 {
        (0, 0)
    } else {
        let d3 = round(derived as f64 * p3 as f64 / (p3 + 2 * p4) as f64);
        let d4 = if p4 == 0 {
            0
        } else {
            (derived - d3.min(derived)) / 2
        };
        (derived - 2 * d4, d4)
    };
    if (relay == 0) != (p3 == 0) || (chain == 0) != (p4 == 0) || relay > p3 || chain > p4 {
        return Err(infeasible(format!(
            "{derived} input-derived handoffs cannot carry {p3} three-edge and {p4} four-edge paths"
        )));
    }
    if relay + 2 * chain != derived {
        return Err(infeasible(format!(
            "{derived} input-derived handoffs cannot be split into whole chains"
        )));
    }
    let max_per_leaf = (params.handoff_lag_max_ms - 1) as usize;
    for (paths, leaves) in [(p3, relay), (p4, chain)] {
        if leaves > 0 && paths.div_ceil(leaves) > max_per_leaf {
            return Err(infeasible("too many requests per delegated input"));
        }
    }
    let busy = relay + chain + p2;
    if busy > n {
        return Err(infeasible(format!(
            "{busy} active inputs needed but only {n} generated"
        )));
    }
    Ok(Allocation {
        handoffs,
        background,
        requests,
        direct_paths: p2,
        three_edge_paths: p3,
        four_edge_paths: p4,
        relay_inputs: relay,
        chain_inputs: chain,
        plain_inputs: n - busy,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Behaviour {
    Plain,
    Direct,
    Relay(usize),
    Chain(usize),
}

impl Behaviour {
    fn label(self, app: usize) -> String {
        match self {
            Behaviour::Plain => format!("app{app} open"),
            Behaviour::Direct => format!("app{app} sense"),
            Behaviour::Relay(k) => format!("app{app} share {k}"),
            Behaviour::Chain(k) => format!("app{app} forward {k}"),
        }
    }
}

fn split(total: usize, parts: usize) -> [(usize, usize); 2] {
    if parts == 0 {
        return [(0, 0), (0, 0)];
    }
    let base = total / parts;
    let extra = total % parts;
    [(base + 1, extra), (base, parts - extra)]
}

fn app_name(i: usize) -> String {
    format!("App {i:03}")
}

fn service_name(i: usize) -> String {
    format!("Service {i:03}")
}

fn complete(after: u64) -> ActionLine {
    ActionLine {
        after,
        step: StepLine::Complete {},
    }
}

fn request(after: u64, (op, sensor): (&str, &str)) -> ActionLine {
    ActionLine {
        after,
        step: StepLine::Request {
            op: op.into(),
            sensor: sensor.into(),
        },
    }
}

fn handoff(after: u64, to: String, label: String) -> ActionLine {
    ActionLine {
        after,
        step: StepLine::Handoff {
            to,
            label: Some(label),
        },
    }
}

pub struct Generated {
    pub header: Header,
    pub lines: Vec<Line>,
    pub allocation: Allocation,
}

impl Generated {
    pub fn to_text(&self) -> String {
        format::render(&self.header, &self.lines)
    }

    pub fn into_scenario(self) -> Result<Scenario, ScenarioError> {
        format::from_lines(self.header, self.lines)
    }
}

pub fn generate(params: &WorkloadParams) -> Result<Generated, WorkloadError> {
    let alloc = allocate(params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let header = Header {
        format: SCENARIO_FORMAT.into(),
        version: SCENARIO_VERSION,
        name: format!("workload-{}", params.seed),
        mode: Mode::Entrust,
    };

    let mut plan = Vec::with_capacity(params.n_inputs);
    plan.extend(std::iter::repeat_n(Behaviour::Plain, alloc.plain_inputs));
    plan.extend(std::iter::repeat_n(Behaviour::Direct, alloc.direct_paths));
    for (k, count) in split(alloc.three_edge_paths, alloc.relay_inputs) {
        plan.extend(std::iter::repeat_n(Behaviour::Relay(k), count));
    }
    for (k, count) in split(alloc.four_edge_paths, alloc.chain_inputs) {
        plan.extend(std::iter::repeat_n(Behaviour::Chain(k), count));
    }
    plan.shuffle(&mut rng);
    let kinds: BTreeSet<Behaviour> = plan.iter().copied().collect();

    let mut lines = vec![Line::Policy(PolicyLine {
        phase: None,
        rules: vec!["default allow".into()],
    })];
    if params.n_inputs == 0 {
        return Ok(Generated {
            header,
            lines,
            allocation: alloc,
        });
    }
    for i in 0..params.n_apps {
        lines.push(Line::Program(ProgramLine {
            name: app_name(i),
            mark: format!("A{i}"),
            noun: Some("app".into()),
        }));
    }
    for i in 0..params.n_services {
        lines.push(Line::Program(ProgramLine {
            name: service_name(i),
            mark: format!("S{i}"),
            noun: Some("service".into()),
        }));
    }

    let il = params.input_lag_max_ms;
    let hl = params.handoff_lag_max_ms;
    let mut service_labels: BTreeSet<(usize, String)> = BTreeSet::new();
    let mut first_hop: BTreeMap<(usize, Behaviour), usize> = BTreeMap::new();
    for app in 0..params.n_apps {
        for &kind in &kinds {
            let label = kind.label(app);
            let widget_kind = if rng.random_bool(0.5) {
                WidgetKind::VoiceCommand
            } else {
                WidgetKind::GuiWidget
            };
            lines.push(Line::Widget(WidgetLine {
                label: label.clone(),
                kind: widget_kind,
                aliases: Vec::new(),
            }));
            let emit = rng.random_range(1..il);
            let rest = rng.random_range(0..=il - emit);
            let actions = match kind {
                Behaviour::Plain => vec![complete(rng.random_range(1..=il))],
                Behaviour::Direct => {
                    vec![request(emit, STANDARD_OPS[app % 4]), complete(rest)]
                }
                Behaviour::Relay(k) => {
                    let s = rng.random_range(0..params.n_services);
                    let l = format!("k{k}");
                    service_labels.insert((s, l.clone()));
                    first_hop.insert((app, kind), s);
                    vec![handoff(emit, service_name(s), l), complete(rest)]
                }
                Behaviour::Chain(k) => {
                    let s1 = rng.random_range(0..params.n_services);
                    let s2 = (s1 + rng.random_range(1..params.n_services)) % params.n_services;
                    let l = format!("via {s2} k{k}");
                    service_labels.insert((s1, l.clone()));
                    service_labels.insert((s2, format!("k{k}")));
                    first_hop.insert((app, kind), s1);
                    vec![handoff(emit, service_name(s1), l), complete(rest)]
                }
            };
            lines.push(Line::Handler(HandlerLine {
                program: app_name(app),
                on: TriggerLine::Widget(label),
                actions,
            }));
        }
    }
    for s in 0..params.n_services {
        lines.push(Line::Handler(HandlerLine {
            program: service_name(s),
            on: TriggerLine::Handoff(Some("sync".into())),
            actions: vec![complete(rng.random_range(2..=hl))],
        }));
    }
    for (s, label) in &service_labels {
        let actions = if let Some(rest) = label.strip_prefix("via ") {
            let (target, k) = rest.split_once(' ').expect("label shape");
            let emit = rng.random_range(1..hl);
            vec![
                handoff(
                    emit,
                    service_name(target.parse().expect("label shape")),
                    k.to_string(),
                ),
                complete(rng.random_range(0..=hl - emit)),
            ]
        } else {
            let k: u64 = label[1..].parse().expect("label shape");
            let first = rng.random_range(1..=hl - k);
            let mut actions = vec![request(first, STANDARD_OPS[s % 4])];
            for _ in 1..k {
                actions.push(request(1, STANDARD_OPS[s % 4]));
            }
            actions.push(complete(rng.random_range(0..=hl - first - (k - 1))));
            actions
        };
        lines.push(Line::Handler(HandlerLine {
            program: service_name(*s),
            on: TriggerLine::Handoff(Some(label.clone())),
            actions,
        }));
    }

    let (lo, hi) = params.gap_range_ms;
    let mut events: Vec<EventLine> = Vec::with_capacity(plan.len() + alloc.background);
    let mut t = 0u64;
    let mut delegating = Vec::new();
    for kind in plan {
        t += rng.random_range(lo..=hi);
        let app = rng.random_range(0..params.n_apps);
        if let Some(&s) = first_hop.get(&(app, kind)) {
            delegating.push((t, s));
        }
        events.push(EventLine {
            at: t,
            body: EventBody::Input {
                widget: kind.label(app),
                program: app_name(app),
            },
        });
    }
    let mut background = Vec::with_capacity(alloc.background);
    let mut left = alloc.background;
    while left > 0 {
        let size = rng.random_range(2..=5usize).min(left);
        left -= size;
        // Background chatter clusters around services the user is driving.
        let (mut at, busy) = if delegating.is_empty() {
            (rng.random_range(0..=t), None)
        } else {
            let (at, s) = delegating[rng.random_range(0..delegating.len())];
            (at + rng.random_range(0..=il), Some(s))
        };
        let from = rng.random_range(0..params.n_apps);
        let to = match busy {
            Some(s) if rng.random_bool(0.5) => s,
            _ => rng.random_range(0..params.n_services),
        };
        for _ in 0..size {
            background.push(EventLine {
                at,
                body: EventBody::Handoff {
                    from: app_name(from),
                    to: service_name(to),
                    label: Some("sync".into()),
                },
            });
            at += rng.random_range(0..=3);
        }
    }
    events.extend(background);
    events.sort_by_key(|e| e.at);
    lines.extend(events.into_iter().map(Line::Event));
    Ok(Generated {
        header,
        lines,
        allocation: alloc,
    })
}
