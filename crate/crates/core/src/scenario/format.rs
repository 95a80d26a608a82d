//! JSON Lines scenario files.
//!
//! The first non-blank line is a header; every following line is a single-key
//! object such as `{"program":{...}}` or `{"event":{...}}`. Blank lines and
//! lines starting with `#` are skipped.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::authz::ScriptedPolicy;
use crate::domain::{
    DomainError, OperationId, ProgramId, Registry, SensorId, WidgetId, WidgetKind,
};
use crate::mediator::{
    Action, HandlerError, HandlerSpec, Handlers, Mode, SchedulerConfig, Trigger,
};
use crate::trace::Phase;

use super::workload::WorkloadParams;

pub const SCENARIO_FORMAT: &str = "handoff-scenario";
pub const SCENARIO_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScenarioError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: unresolved reference: {msg}")]
    UnresolvedReference { line: usize, msg: String },
    #[error("line {line}: {msg}")]
    InvariantViolation { line: usize, msg: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Header {
    pub format: String,
    pub version: u32,
    pub name: String,
    #[serde(default)]
    pub mode: Mode,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProgramLine {
    pub name: String,
    pub mark: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noun: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperationLine {
    pub name: String,
    pub sensors: Vec<String>,
    pub phrase: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_use_phrase: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WidgetLine {
    pub label: String,
    pub kind: WidgetKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub aliases: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TriggerLine {
    Widget(String),
    Handoff(Option<String>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepLine {
    Handoff {
        to: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label: Option<String>,
    },
    Request {
        op: String,
        sensor: String,
    },
    Complete {},
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionLine {
    pub after: u64,
    #[serde(flatten)]
    pub step: StepLine,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HandlerLine {
    pub program: String,
    pub on: TriggerLine,
    pub actions: Vec<ActionLine>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyLine {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase: Option<Phase>,
    pub rules: Vec<String>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackLine {
    pub program: String,
    pub op: String,
    pub sensor: String,
    #[serde(default = "yes")]
    pub without_prompt: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpectLine {
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attack_succeeded: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub main_prompts: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigLine {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default_service_lag_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub queue_bound: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub two_level: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventBody {
    Input {
        widget: String,
        program: String,
    },
    Handoff {
        from: String,
        to: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label: Option<String>,
    },
    Request {
        program: String,
        op: String,
        sensor: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventLine {
    pub at: u64,
    #[serde(flatten)]
    pub body: EventBody,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Line {
    Program(ProgramLine),
    Sensor(String),
    Operation(OperationLine),
    Widget(WidgetLine),
    Handler(HandlerLine),
    Policy(PolicyLine),
    Attack(AttackLine),
    Expect(ExpectLine),
    Config(ConfigLine),
    Workload(WorkloadParams),
    Phase(Phase),
    Event(EventLine),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum TimelineEvent {
    Input {
        widget: WidgetId,
        program: ProgramId,
    },
    Handoff {
        from: ProgramId,
        to: ProgramId,
        label: Option<String>,
    },
    Request {
        program: ProgramId,
        op: OperationId,
        sensor: SensorId,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TimedEvent {
    /// Milliseconds from the start of the event's phase.
    pub at: u64,
    pub event: TimelineEvent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AttackSpec {
    pub program: ProgramId,
    pub op: OperationId,
    pub sensor: SensorId,
    pub without_prompt: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Expectation {
    pub mode: Mode,
    pub attack_succeeded: Option<bool>,
    pub main_prompts: Option<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct PhasePolicy {
    pub text: String,
    pub policy: Option<ScriptedPolicy>,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub mode: Mode,
    pub registry: Registry,
    pub handlers: Handlers,
    pub config: SchedulerConfig,
    pub preliminary_policy: PhasePolicy,
    pub main_policy: PhasePolicy,
    pub preliminary: Vec<TimedEvent>,
    pub timeline: Vec<TimedEvent>,
    pub attacks: Vec<AttackSpec>,
    pub expectations: Vec<Expectation>,
    pub workload: Option<WorkloadParams>,
    /// Whether a config line set the window explicitly.
    pub window_set: bool,
    /// The text this scenario was parsed from, kept for traces.
    pub source: String,
}

impl Scenario {
    pub fn event_count(&self) -> usize {
        self.preliminary.len() + self.timeline.len()
    }

    pub fn expectation_for(&self, mode: Mode) -> Option<&Expectation> {
        self.expectations.iter().find(|e| e.mode == mode)
    }
}

pub fn render(header: &Header, lines: &[Line]) -> String {
    let mut out = serde_json::to_string(header).expect("header serializes");
    out.push('\n');
    for line in lines {
        out.push_str(&serde_json::to_string(line).expect("lines serialize"));
        out.push('\n');
    }
    out
}

pub fn parse(text: &str) -> Result<Scenario, ScenarioError> {
    let mut numbered = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let (hline, htext) = numbered.next().ok_or(ScenarioError::Parse {
        line: 1,
        msg: "empty scenario".into(),
    })?;
    let header: Header = serde_json::from_str(htext).map_err(|e| ScenarioError::Parse {
        line: hline,
        msg: format!("bad header: {e}"),
    })?;
    if header.format != SCENARIO_FORMAT {
        return Err(ScenarioError::Parse {
            line: hline,
            msg: format!(
                "expected format {SCENARIO_FORMAT:?}, found {:?}",
                header.format
            ),
        });
    }
    if header.version != SCENARIO_VERSION {
        return Err(ScenarioError::Parse {
            line: hline,
            msg: format!("unsupported version {}", header.version),
        });
    }
    let mut lines = Vec::new();
    for (n, raw) in numbered {
        let line: Line = serde_json::from_str(raw).map_err(|e| ScenarioError::Parse {
            line: n,
            msg: e.to_string(),
        })?;
        lines.push((n, line));
    }
    let mut scenario = build(header, lines)?;
    scenario.source = text.to_string();
    Ok(scenario)
}

pub fn from_lines(header: Header, lines: Vec<Line>) -> Result<Scenario, ScenarioError> {
    let text = render(&header, &lines);
    let numbered = lines
        .into_iter()
        .enumerate()
        .map(|(i, l)| (i + 2, l))
        .collect();
    let mut scenario = build(header, numbered)?;
    scenario.source = text;
    Ok(scenario)
}

struct Builder {
    registry: Registry,
    line: usize,
}

impl Builder {
    fn unresolved(&self, msg: impl Into<String>) -> ScenarioError {
        ScenarioError::UnresolvedReference {
            line: self.line,
            msg: msg.into(),
        }
    }

    fn invariant(&self, msg: impl Into<String>) -> ScenarioError {
        ScenarioError::InvariantViolation {
            line: self.line,
            msg: msg.into(),
        }
    }

    fn domain(&self, err: DomainError) -> ScenarioError {
        match err {
            DomainError::UnknownWidget(_)
            | DomainError::UnknownProgram(_)
            | DomainError::UnknownWidgetId(_)
            | DomainError::UnknownSensor(_)
            | DomainError::UnknownOperation(_) => self.unresolved(err.to_string()),
            other => self.invariant(other.to_string()),
        }
    }

    /// Programs are referenced by name, or `Name#MARK` when names repeat.
    fn program(&self, reference: &str) -> Result<ProgramId, ScenarioError> {
        let (name, mark) = match reference.rsplit_once('#') {
            Some((n, m)) => (n.trim(), Some(m.trim())),
            None => (reference.trim(), None),
        };
        let found: Vec<ProgramId> = self
            .registry
            .programs()
            .iter()
            .filter(|p| p.name == name && mark.is_none_or(|m| p.identity_mark == m))
            .map(|p| p.id)
            .collect();
        match found.as_slice() {
            [id] => Ok(*id),
            [] => Err(self.unresolved(format!("program {reference:?}"))),
            _ => Err(self.unresolved(format!(
                "program name {reference:?} is shared; use \"name#mark\""
            ))),
        }
    }

    fn widget(&self, label: &str) -> Result<WidgetId, ScenarioError> {
        self.registry
            .resolve_widget(label)
            .map(|w| w.id)
            .map_err(|e| self.domain(e))
    }

    fn op_sensor(&self, op: &str, sensor: &str) -> Result<(OperationId, SensorId), ScenarioError> {
        let op = self
            .registry
            .operation_by_name(op)
            .map_err(|e| self.domain(e))?;
        let sensor = self
            .registry
            .sensor_by_name(sensor)
            .map_err(|e| self.domain(e))?;
        self.registry
            .check_compatible(op, sensor)
            .map_err(|e| self.domain(e))?;
        Ok((op, sensor))
    }
}

fn policy_from(builder: &Builder, rules: &[String]) -> Result<PhasePolicy, ScenarioError> {
    let text = rules.join("\n");
    let policy =
        ScriptedPolicy::parse(&text).map_err(|e| builder.invariant(format!("policy: {e}")))?;
    Ok(PhasePolicy {
        text,
        policy: Some(policy),
    })
}

fn build(header: Header, lines: Vec<(usize, Line)>) -> Result<Scenario, ScenarioError> {
    let mut b = Builder {
        registry: Registry::with_standard_sensors(),
        line: 1,
    };
    let mut handlers = Handlers::new();
    let mut config = SchedulerConfig::default();
    let mut preliminary_policy = PhasePolicy::default();
    let mut main_policy = PhasePolicy::default();
    let mut preliminary = Vec::new();
    let mut timeline: Vec<TimedEvent> = Vec::new();
    let mut attacks = Vec::new();
    let mut expectations = Vec::new();
    let mut workload = None;
    let mut window_set = false;
    let mut phase = Phase::Main;
    let mut declarations = 0usize;

    for (n, line) in lines {
        b.line = n;
        match line {
            Line::Program(p) => {
                declarations += 1;
                b.registry
                    .register_program_with_noun(&p.name, &p.mark, p.noun.as_deref())
                    .map_err(|e| b.domain(e))?;
            }
            Line::Sensor(name) => {
                declarations += 1;
                b.registry.register_sensor(&name).map_err(|e| b.domain(e))?;
            }
            Line::Operation(o) => {
                declarations += 1;
                let sensors: Vec<&str> = o.sensors.iter().map(String::as_str).collect();
                b.registry
                    .register_operation(
                        &o.name,
                        &sensors,
                        &o.phrase,
                        o.first_use_phrase.as_deref().unwrap_or(&o.phrase),
                    )
                    .map_err(|e| b.domain(e))?;
            }
            Line::Widget(w) => {
                declarations += 1;
                b.registry
                    .register_widget(&w.label, w.kind, &w.aliases)
                    .map_err(|e| b.domain(e))?;
            }
            Line::Handler(h) => {
                declarations += 1;
                let program = b.program(&h.program)?;
                let trigger = match &h.on {
                    TriggerLine::Widget(label) => Trigger::Widget(b.widget(label)?),
                    TriggerLine::Handoff(label) => Trigger::Handoff(label.clone()),
                };
                let mut actions = Vec::with_capacity(h.actions.len());
                for a in &h.actions {
                    actions.push(match &a.step {
                        StepLine::Handoff { to, label } => Action::Handoff {
                            to: b.program(to)?,
                            label: label.clone(),
                            after: a.after,
                        },
                        StepLine::Request { op, sensor } => {
                            let (op, sensor) = b.op_sensor(op, sensor)?;
                            Action::Request {
                                op,
                                sensor,
                                after: a.after,
                            }
                        }
                        StepLine::Complete {} => Action::Complete { after: a.after },
                    });
                }
                let spec = HandlerSpec {
                    program,
                    trigger,
                    actions,
                };
                handlers.insert(spec, &b.registry).map_err(|e| match e {
                    HandlerError::Domain(d) => b.domain(d),
                    other => b.invariant(other.to_string()),
                })?;
            }
            Line::Policy(p) => {
                let parsed = policy_from(&b, &p.rules)?;
                match p.phase.unwrap_or(phase) {
                    Phase::Preliminary => preliminary_policy = parsed,
                    Phase::Main => main_policy = parsed,
                }
            }
            Line::Attack(a) => {
                let program = b.program(&a.program)?;
                let (op, sensor) = b.op_sensor(&a.op, &a.sensor)?;
                attacks.push(AttackSpec {
                    program,
                    op,
                    sensor,
                    without_prompt: a.without_prompt,
                });
            }
            Line::Expect(e) => expectations.push(Expectation {
                mode: e.mode,
                attack_succeeded: e.attack_succeeded,
                main_prompts: e.main_prompts,
            }),
            Line::Config(c) => {
                if let Some(w) = c.window_ms {
                    if w == 0 {
                        return Err(b.invariant("window_ms must be positive"));
                    }
                    config.window_ms = w;
                    window_set = true;
                }
                if let Some(l) = c.default_service_lag_ms {
                    config.default_service_lag_ms = l;
                }
                if let Some(q) = c.queue_bound {
                    config.queue_bound = q;
                }
                if let Some(t) = c.two_level {
                    config.two_level = t;
                }
            }
            Line::Workload(w) => {
                w.validate().map_err(|e| b.invariant(e.to_string()))?;
                workload = Some(w);
            }
            Line::Phase(p) => phase = p,
            Line::Event(e) => {
                declarations += 1;
                let event = match &e.body {
                    EventBody::Input { widget, program } => TimelineEvent::Input {
                        widget: b.widget(widget)?,
                        program: b.program(program)?,
                    },
                    EventBody::Handoff { from, to, label } => {
                        let from = b.program(from)?;
                        let to = b.program(to)?;
                        if from == to {
                            return Err(b.domain(DomainError::SelfHandoff(from)));
                        }
                        TimelineEvent::Handoff {
                            from,
                            to,
                            label: label.clone(),
                        }
                    }
                    EventBody::Request {
                        program,
                        op,
                        sensor,
                    } => {
                        let program = b.program(program)?;
                        let (op, sensor) = b.op_sensor(op, sensor)?;
                        TimelineEvent::Request {
                            program,
                            op,
                            sensor,
                        }
                    }
                };
                let target = match phase {
                    Phase::Preliminary => &mut preliminary,
                    Phase::Main => &mut timeline,
                };
                if target
                    .last()
                    .is_some_and(|last: &TimedEvent| last.at > e.at)
                {
                    return Err(b.invariant(format!(
                        "timeline out of order: event at {} follows a later one",
                        e.at
                    )));
                }
                target.push(TimedEvent { at: e.at, event });
            }
        }
    }
    if workload.is_some() && declarations > 0 {
        return Err(ScenarioError::InvariantViolation {
            line: 1,
            msg: "a workload scenario cannot also declare programs, widgets, handlers or events"
                .into(),
        });
    }
    Ok(Scenario {
        name: header.name,
        mode: header.mode,
        registry: b.registry,
        handlers,
        config,
        preliminary_policy,
        main_policy,
        preliminary,
        timeline,
        attacks,
        expectations,
        workload,
        window_set,
        source: String::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEAD: &str = r#"{"format":"handoff-scenario","version":1,"name":"t"}"#;

    fn scenario(body: &str) -> Result<Scenario, ScenarioError> {
        parse(&format!("{HEAD}\n{body}"))
    }

    #[test]
    fn parses_a_small_scenario() {
        let s = scenario(
            r#"
# comment
{"program":{"name":"Cam","mark":"C","noun":"app"}}
{"widget":{"label":"snap","kind":"gui"}}
{"handler":{"program":"Cam","on":{"widget":"snap"},"actions":[{"after":3,"request":{"op":"capture_picture","sensor":"camera"}},{"after":1,"complete":{}}]}}
{"policy":{"rules":["default allow"]}}
{"event":{"at":0,"input":{"widget":"Snap","program":"Cam"}}}
{"event":{"at":0,"request":{"program":"Cam","op":"capture_picture","sensor":"camera"}}}
"#,
        )
        .unwrap();
        assert_eq!(s.registry.programs().len(), 1);
        assert_eq!(s.handlers.len(), 1);
        assert_eq!(s.timeline.len(), 2);
        assert!(s.main_policy.policy.is_some());
        assert_eq!(s.mode, Mode::Entrust);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err =
            scenario("{\"program\":{\"name\":\"A\",\"mark\":\"A\"}}\n{\"bogus\":1}").unwrap_err();
        assert!(
            matches!(err, ScenarioError::Parse { line: 3, .. }),
            "{err:?}"
        );

        let err = scenario(
            r#"{"program":{"name":"A","mark":"A"}}
{"handler":{"program":"A","on":{"handoff":null},"actions":[{"after":1,"handoff":{"to":"Ghost"}},{"after":1,"complete":{}}]}}"#,
        )
        .unwrap_err();
        assert!(
            matches!(err, ScenarioError::UnresolvedReference { line: 3, .. }),
            "{err:?}"
        );

        let err = scenario(
            r#"{"program":{"name":"A","mark":"A"}}
{"widget":{"label":"go","kind":"gui"}}
{"event":{"at":5,"input":{"widget":"go","program":"A"}}}
{"event":{"at":4,"input":{"widget":"go","program":"A"}}}"#,
        )
        .unwrap_err();
        assert!(
            matches!(err, ScenarioError::InvariantViolation { line: 5, .. }),
            "{err:?}"
        );

        let err = scenario(
            r#"{"program":{"name":"A","mark":"A"}}
{"event":{"at":1,"request":{"program":"A","op":"capture_picture","sensor":"gps"}}}"#,
        )
        .unwrap_err();
        assert!(
            matches!(err, ScenarioError::InvariantViolation { line: 3, .. }),
            "{err:?}"
        );
    }

    #[test]
    fn shared_names_need_a_mark() {
        let body = r#"{"program":{"name":"Mail","mark":"M1"}}
{"program":{"name":"Mail","mark":"M2"}}
{"widget":{"label":"go","kind":"gui"}}"#;
        let ambiguous = format!("{body}\n{{\"event\":{{\"at\":0,\"input\":{{\"widget\":\"go\",\"program\":\"Mail\"}}}}}}");
        assert!(matches!(
            scenario(&ambiguous),
            Err(ScenarioError::UnresolvedReference { .. })
        ));
        let marked = format!("{body}\n{{\"event\":{{\"at\":0,\"input\":{{\"widget\":\"go\",\"program\":\"Mail#M2\"}}}}}}");
        let s = scenario(&marked).unwrap();
        assert_eq!(
            s.timeline[0].event,
            TimelineEvent::Input {
                widget: WidgetId(0),
                program: ProgramId(1)
            }
        );
    }

    #[test]
    fn lines_round_trip_through_text() {
        let header = Header {
            format: SCENARIO_FORMAT.into(),
            version: SCENARIO_VERSION,
            name: "rt".into(),
            mode: Mode::FirstUse,
        };
        let lines = vec![
            Line::Program(ProgramLine {
                name: "A".into(),
                mark: "A".into(),
                noun: None,
            }),
            Line::Program(ProgramLine {
                name: "B".into(),
                mark: "B".into(),
                noun: Some("service".into()),
            }),
            Line::Handler(HandlerLine {
                program: "B".into(),
                on: TriggerLine::Handoff(Some("x".into())),
                actions: vec![
                    ActionLine {
                        after: 2,
                        step: StepLine::Request {
                            op: "record_audio".into(),
                            sensor: "microphone".into(),
                        },
                    },
                    ActionLine {
                        after: 1,
                        step: StepLine::Complete {},
                    },
                ],
            }),
            Line::Phase(Phase::Preliminary),
            Line::Event(EventLine {
                at: 3,
                body: EventBody::Handoff {
                    from: "A".into(),
                    to: "B".into(),
                    label: Some("x".into()),
                },
            }),
        ];
        let text = render(&header, &lines);
        let parsed = parse(&text).unwrap();
        assert_eq!(parsed.preliminary.len(), 1);
        assert_eq!(parsed.mode, Mode::FirstUse);
        let again = from_lines(header, lines).unwrap();
        assert_eq!(again.source, text);
    }
}
