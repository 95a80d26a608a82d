//! Drives a loaded scenario through the engine and summarizes the result.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::authz::{
    AuthorizationCache, Authorizer, Outcome, PathAuthorizer, RecordedAnswers, ScriptedPolicy,
    Verdict,
};
use crate::domain::{EventId, MediatedEvent, OperationId, ProgramId, SensorId, Timestamp};
use crate::mediator::{
    AuthState, DecisionRecord, DelayStats, Engine, EngineError, Mode, PromptRecord, SchedulerConfig,
};
use crate::trace::{Phase, TraceRecord};

use super::format::{PhasePolicy, Scenario, ScenarioError, TimedEvent, TimelineEvent};
use super::workload;

/// Knobs a caller may set on top of what the scenario file says.
#[derive(Default)]
pub struct RunOptions {
    pub mode: Option<Mode>,
    /// Beats the scenario's config line.
    pub window_ms: Option<u64>,
    /// Used only when neither the flag nor the scenario sets a window.
    pub fallback_window_ms: Option<u64>,
    /// Workload seed; ignored by scenarios with an explicit timeline.
    pub seed: Option<u64>,
    /// Replaces the scenario's main-phase policy.
    pub policy: Option<PhasePolicy>,
    /// Replaces any main-phase policy, e.g. a terminal prompt.
    pub authorizer: Option<Box<dyn Authorizer>>,
    pub cache_denials: bool,
    /// Authorization state carried over from an earlier run.
    pub auth: Option<AuthState>,
    pub trace: bool,
    pub ambiguity_prevention: Option<bool>,
    pub two_level: Option<bool>,
}

/// The subset of [`RunOptions`] that a trace needs to reproduce a run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayOptions {
    pub mode: Mode,
    pub window_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub cache_denials: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<String>,
    /// Main-phase answers given at a terminal.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answers: Option<Vec<Verdict>>,
    /// Hex of an exported cache the run started from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub grants: Vec<(ProgramId, OperationId, SensorId)>,
    pub ambiguity_prevention: bool,
    pub two_level: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DecisionLine {
    pub phase: Phase,
    pub t: Timestamp,
    pub request: EventId,
    pub program: String,
    pub op: String,
    pub sensor: String,
    #[serde(flatten)]
    pub outcome: Outcome,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chain: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub edges: Option<usize>,
    pub reauthorized: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AttackResult {
    pub program: String,
    pub op: String,
    pub sensor: String,
    pub succeeded: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExpectationResult {
    pub what: String,
    pub expected: String,
    pub actual: String,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub scenario: String,
    pub mode: Mode,
    pub window_ms: u64,
    pub events: usize,
    pub preliminary_prompts: usize,
    pub main_prompts: usize,
    pub prompts: Vec<PromptRecord>,
    pub decisions: Vec<DecisionLine>,
    pub allowed: usize,
    pub denied: usize,
    pub attacks: Vec<AttackResult>,
    pub attack_succeeded: Option<bool>,
    pub expectations: Vec<ExpectationResult>,
    pub rejected: usize,
    pub unattributed_handoffs: usize,
    pub stats: DelayStats,
    pub cache_entries: usize,
    pub cache_bytes: usize,
    /// Requests by delegation path length in edges.
    pub path_lengths: BTreeMap<usize, usize>,
    pub wall_time_us: u64,
}

impl RunReport {
    pub fn expectations_met(&self) -> bool {
        self.expectations.iter().all(|e| e.passed)
    }

    /// Share of attributed requests whose path has exactly three edges.
    pub fn three_edge_fraction(&self) -> f64 {
        let total: usize = self.path_lengths.values().sum();
        if total == 0 {
            0.0
        } else {
            *self.path_lengths.get(&3).unwrap_or(&0) as f64 / total as f64
        }
    }
}

pub struct RunOutcome {
    pub report: RunReport,
    pub trace: Option<super::replay::TraceFile>,
    pub auth: AuthState,
}

/// Swaps a workload directive for the generated scenario it describes.
pub fn materialize(scenario: &Scenario, seed: Option<u64>) -> Result<Scenario, ScenarioError> {
    let Some(params) = &scenario.workload else {
        return Ok(scenario.clone());
    };
    let mut params = params.clone();
    if let Some(seed) = seed {
        params.seed = seed;
    }
    let generated = workload::generate(&params)
        .map_err(|e| ScenarioError::InvariantViolation {
            line: 1,
            msg: e.to_string(),
        })?
        .into_scenario()?;
    let mut out = generated;
    out.name = scenario.name.clone();
    out.mode = scenario.mode;
    if scenario.window_set {
        out.config = scenario.config;
        out.window_set = true;
    }
    if scenario.main_policy.policy.is_some() {
        out.main_policy = scenario.main_policy.clone();
    }
    if scenario.preliminary_policy.policy.is_some() {
        out.preliminary_policy = scenario.preliminary_policy.clone();
    }
    out.expectations = scenario.expectations.clone();
    out.source = scenario.source.clone();
    Ok(out)
}

fn authorizer_for(policy: &PhasePolicy) -> Box<dyn Authorizer> {
    Box::new(
        policy
            .policy
            .clone()
            .unwrap_or_else(ScriptedPolicy::deny_all),
    )
}

fn submit(engine: &mut Engine, offset: u64, ev: &TimedEvent) -> Result<(), EngineError> {
    let t = Timestamp(offset + ev.at);
    let event = match &ev.event {
        TimelineEvent::Input { widget, program } => {
            MediatedEvent::Input(engine.input(*widget, *program, t)?)
        }
        TimelineEvent::Handoff { from, to, label } => {
            MediatedEvent::Handoff(engine.handoff(*from, *to, t, label.clone())?)
        }
        TimelineEvent::Request {
            program,
            op,
            sensor,
        } => MediatedEvent::Request(engine.request(*program, *op, *sensor, t)?),
    };
    engine.submit(event).map(|_| ())
}

pub fn run(scenario: &Scenario, mut options: RunOptions) -> Result<RunOutcome, ScenarioError> {
    let started = Instant::now();
    let scenario = materialize(scenario, options.seed)?;
    let mode = options.mode.unwrap_or(scenario.mode);
    let window_ms = options
        .window_ms
        .or(scenario.window_set.then_some(scenario.config.window_ms))
        .or(options.fallback_window_ms)
        .unwrap_or(scenario.config.window_ms);
    let config = SchedulerConfig {
        window_ms,
        ambiguity_prevention: options
            .ambiguity_prevention
            .unwrap_or(mode == Mode::Entrust),
        two_level: options.two_level.unwrap_or(scenario.config.two_level),
        ..scenario.config
    };

    let main_policy = options
        .policy
        .clone()
        .unwrap_or_else(|| scenario.main_policy.clone());
    let interactive = options.authorizer.is_some();
    let initial = options.auth.take().unwrap_or_else(|| AuthState {
        paths: PathAuthorizer::new(options.cache_denials),
        ..AuthState::default()
    });
    let replay = ReplayOptions {
        mode,
        window_ms,
        seed: options.seed,
        cache_denials: options.cache_denials,
        policy: options.policy.as_ref().map(|p| p.text.clone()),
        answers: None,
        cache: (!initial.paths.cache().is_empty())
            .then(|| hex::encode(initial.paths.cache().export())),
        grants: initial.first_use.grants().iter().copied().collect(),
        ambiguity_prevention: config.ambiguity_prevention,
        two_level: config.two_level,
    };

    let registry = Arc::new(scenario.registry.clone());
    let mut engine = Engine::new(
        registry.clone(),
        Arc::new(scenario.handlers.clone()),
        config,
        mode,
        authorizer_for(&scenario.preliminary_policy),
    )
    .with_auth(initial);
    if options.trace {
        engine = engine.with_tracing();
    }

    let mut rejected = 0;
    let mut offset = 0;
    if !scenario.preliminary.is_empty() {
        engine.set_phase(Phase::Preliminary);
        for ev in &scenario.preliminary {
            if submit(&mut engine, 0, ev).is_err() {
                rejected += 1;
            }
        }
        engine.run_until_idle();
        offset = engine.now().ms() + 1;
    }
    engine.set_phase(Phase::Main);
    engine.set_authorizer(
        options
            .authorizer
            .take()
            .unwrap_or_else(|| authorizer_for(&main_policy)),
    );
    for ev in &scenario.timeline {
        if submit(&mut engine, offset, ev).is_err() {
            rejected += 1;
        }
    }
    engine.run_until_idle();

    let report = summarize(&scenario, &engine, mode, window_ms, rejected, started);
    let trace = options.trace.then(|| {
        let mut replay = replay;
        if interactive {
            replay.answers = Some(
                report
                    .prompts
                    .iter()
                    .filter(|p| p.phase == Phase::Main)
                    .map(|p| p.verdict)
                    .collect(),
            );
        }
        super::replay::TraceFile::new(replay, scenario.source.clone(), engine.take_trace())
    });
    Ok(RunOutcome {
        report,
        trace,
        auth: engine.into_auth(),
    })
}

fn summarize(
    scenario: &Scenario,
    engine: &Engine,
    mode: Mode,
    window_ms: u64,
    rejected: usize,
    started: Instant,
) -> RunReport {
    let reg = engine.registry();
    let name = |p: ProgramId| reg.program(p).map(|r| r.name.clone()).unwrap_or_default();
    let op_name = |o: OperationId| reg.operation(o).map(|r| r.name.clone()).unwrap_or_default();
    let sensor_name = |s: SensorId| reg.sensor(s).map(|r| r.name.clone()).unwrap_or_default();

    let mut path_lengths = BTreeMap::new();
    let decisions: Vec<DecisionLine> = engine
        .decisions()
        .iter()
        .map(|d: &DecisionRecord| {
            let chain = d.decision.path.as_ref().map(|p| {
                let widget = reg
                    .widget(p.input.widget)
                    .map(|w| w.label.clone())
                    .unwrap_or_default();
                let programs: Vec<String> = p.programs().into_iter().map(&name).collect();
                format!("{widget} > {}", programs.join(" > "))
            });
            let edges = d.decision.path.as_ref().map(|p| p.edge_count());
            if let Some(e) = edges {
                *path_lengths.entry(e).or_insert(0) += 1;
            }
            DecisionLine {
                phase: d.phase,
                t: d.t,
                request: d.request.id,
                program: name(d.request.program),
                op: op_name(d.request.op),
                sensor: sensor_name(d.request.sensor),
                outcome: d.decision.outcome,
                chain,
                edges,
                reauthorized: d.decision.reauthorized,
            }
        })
        .collect();

    let main: Vec<&DecisionRecord> = engine
        .decisions()
        .iter()
        .filter(|d| d.phase == Phase::Main)
        .collect();
    let attacks: Vec<AttackResult> = scenario
        .attacks
        .iter()
        .map(|a| AttackResult {
            program: name(a.program),
            op: op_name(a.op),
            sensor: sensor_name(a.sensor),
            succeeded: main.iter().any(|d| {
                d.request.program == a.program
                    && d.request.op == a.op
                    && d.request.sensor == a.sensor
                    && d.decision.outcome.is_allowed()
                    && !(a.without_prompt && d.decision.outcome.prompted())
            }),
        })
        .collect();
    let attack_succeeded = (!attacks.is_empty()).then(|| attacks.iter().any(|a| a.succeeded));

    let preliminary_prompts = engine
        .prompts()
        .iter()
        .filter(|p| p.phase == Phase::Preliminary)
        .count();
    let main_prompts = engine.prompts().len() - preliminary_prompts;

    let mut expectations = Vec::new();
    if let Some(exp) = scenario.expectation_for(mode) {
        if let Some(want) = exp.attack_succeeded {
            let got = attack_succeeded.unwrap_or(false);
            expectations.push(ExpectationResult {
                what: "attack_succeeded".into(),
                expected: want.to_string(),
                actual: got.to_string(),
                passed: want == got,
            });
        }
        if let Some(want) = exp.main_prompts {
            expectations.push(ExpectationResult {
                what: "main_prompts".into(),
                expected: want.to_string(),
                actual: main_prompts.to_string(),
                passed: want == main_prompts,
            });
        }
    }

    let cache = engine.auth().paths.cache();
    let allowed = decisions.iter().filter(|d| d.outcome.is_allowed()).count();
    RunReport {
        scenario: scenario.name.clone(),
        mode,
        window_ms,
        events: scenario.event_count(),
        preliminary_prompts,
        main_prompts,
        prompts: engine.prompts().to_vec(),
        allowed,
        denied: decisions.len() - allowed,
        decisions,
        attacks,
        attack_succeeded,
        expectations,
        rejected,
        unattributed_handoffs: engine.graphs().unattributed().len(),
        stats: engine.stats_snapshot(),
        cache_entries: cache.len(),
        cache_bytes: cache.footprint().total,
        path_lengths,
        wall_time_us: started.elapsed().as_micros() as u64,
    }
}

/// Both authorization models run from a clean state on the same scenario.
#[derive(Debug, Clone, Serialize)]
pub struct Comparison {
    pub entrust: RunReport,
    pub first_use: RunReport,
}

impl Comparison {
    pub fn table(&self) -> String {
        let row = |label: &str, a: String, b: String| format!("{label:<22}{a:>12}{b:>12}\n");
        let attack = |r: &RunReport| match r.attack_succeeded {
            Some(true) => "succeeded".to_string(),
            Some(false) => "blocked".to_string(),
            None => "-".to_string(),
        };
        let mut out = row("", "entrust".into(), "first-use".into());
        for (label, f) in [
            (
                "prompts (preliminary)",
                (|r: &RunReport| r.preliminary_prompts) as fn(&RunReport) -> usize,
            ),
            ("prompts (main)", |r| r.main_prompts),
            ("allowed", |r| r.allowed),
            ("denied", |r| r.denied),
        ] {
            out.push_str(&row(
                label,
                f(&self.entrust).to_string(),
                f(&self.first_use).to_string(),
            ));
        }
        out.push_str(&row(
            "attack",
            attack(&self.entrust),
            attack(&self.first_use),
        ));
        out
    }
}

pub fn compare_modes(scenario: &Scenario, seed: Option<u64>) -> Result<Comparison, ScenarioError> {
    let go = |mode| {
        run(
            scenario,
            RunOptions {
                mode: Some(mode),
                seed,
                ..RunOptions::default()
            },
        )
        .map(|o| o.report)
    };
    Ok(Comparison {
        entrust: go(Mode::Entrust)?,
        first_use: go(Mode::FirstUse)?,
    })
}

/// Rebuilds the authorization state a trace header describes.
pub fn auth_from(options: &ReplayOptions) -> Result<AuthState, String> {
    let cache = match &options.cache {
        Some(h) => {
            let bytes = hex::decode(h).map_err(|e| e.to_string())?;
            AuthorizationCache::import(&bytes).map_err(|e| e.to_string())?
        }
        None => AuthorizationCache::new(),
    };
    let mut auth = AuthState {
        paths: PathAuthorizer::with_cache(cache, options.cache_denials),
        ..AuthState::default()
    };
    for &(p, o, s) in &options.grants {
        auth.first_use.grant(p, o, s);
    }
    Ok(auth)
}

pub(crate) fn options_from(replay: &ReplayOptions) -> Result<RunOptions, String> {
    let policy = match &replay.policy {
        Some(text) => Some(PhasePolicy {
            text: text.clone(),
            policy: Some(ScriptedPolicy::parse(text).map_err(|e| e.to_string())?),
        }),
        None => None,
    };
    let authorizer = replay
        .answers
        .as_ref()
        .map(|a| Box::new(RecordedAnswers::new(a.iter().copied())) as Box<dyn Authorizer>);
    Ok(RunOptions {
        mode: Some(replay.mode),
        window_ms: Some(replay.window_ms),
        seed: replay.seed,
        policy,
        authorizer,
        cache_denials: replay.cache_denials,
        auth: Some(auth_from(replay)?),
        trace: true,
        ambiguity_prevention: Some(replay.ambiguity_prevention),
        two_level: Some(replay.two_level),
        fallback_window_ms: None,
    })
}

/// Convenience for callers that only need records, e.g. oracles in tests.
pub fn trace_records(
    scenario: &Scenario,
    options: RunOptions,
) -> Result<Vec<TraceRecord>, ScenarioError> {
    let out = run(
        scenario,
        RunOptions {
            trace: true,
            ..options
        },
    )?;
    Ok(out.trace.map(|t| t.records).unwrap_or_default())
}
