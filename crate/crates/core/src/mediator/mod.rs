//! Discrete-event mediator: admits events, serializes each program's
//! processing, builds delegation graphs and asks the authorization layer
//! about every operation request.
//!
//! Time is virtual. [`Engine::submit`] first runs everything scheduled up to
//! the event's timestamp, then admits the event. Program behaviour comes from
//! [`Handlers`]; each delivered event runs its handler's steps and finally
//! completes, which frees the program for the next queued event.

pub mod handler;
pub mod stats;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashMap, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use handler::{Action, HandlerError, HandlerSpec, Handlers, Trigger};
pub use stats::{DelayStats, KindStats};

use crate::authz::{
    deny_for, AllowedBy, Authorizer, CacheCheck, Decision, DeniedBy, FirstUseState, Outcome,
    PathAuthorizer, Verdict,
};
use crate::domain::{
    DomainError, EventId, HandoffEvent, InputEvent, MediatedEvent, OperationId, OperationRequest,
    ProgramId, Registry, SensorId, Timestamp, WidgetId,
};
use crate::graph::{DelegationPath, GraphStore, InputKey};
use crate::trace::{Admission, Level, Phase, TraceBody, TraceRecord};
use stats::Kind;

pub const DEFAULT_WINDOW_MS: u64 = 150;
pub const DEFAULT_SERVICE_LAG_MS: u64 = 10;
pub const DEFAULT_QUEUE_BOUND: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchedulerConfig {
    pub window_ms: u64,
    /// Processing time of a program that has no handler for what it received.
    pub default_service_lag_ms: u64,
    pub queue_bound: usize,
    /// Serialize each program's processing so emissions have one cause.
    pub ambiguity_prevention: bool,
    /// Let input-derived events overtake queued background events.
    pub two_level: bool,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            window_ms: DEFAULT_WINDOW_MS,
            default_service_lag_ms: DEFAULT_SERVICE_LAG_MS,
            queue_bound: DEFAULT_QUEUE_BOUND,
            ambiguity_prevention: true,
            two_level: true,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Delegation graphs and path-scoped authorization.
    #[default]
    Entrust,
    /// Per-program grants remembered after the first prompt.
    FirstUse,
    /// Every request allowed without any check.
    Unmediated,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EngineError {
    #[error("program {program} is not processing event {event}")]
    ProtocolViolation { program: ProgramId, event: EventId },
    #[error("queue of program {program} is full; event {event} rejected")]
    Backpressure { program: ProgramId, event: EventId },
    #[error("event {event} at {t} is earlier than the engine clock ({now})")]
    ClockRewind {
        event: EventId,
        t: Timestamp,
        now: Timestamp,
    },
    #[error(transparent)]
    Domain(#[from] DomainError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RepeatCheck {
    DeliverFresh,
    DeliverAsRepeat,
    Hold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Ticket {
    pub event: EventId,
    pub admission: Admission,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "what", rename_all = "snake_case")]
pub enum Delivery {
    Delivered {
        event: EventId,
        program: ProgramId,
        t: Timestamp,
        delay_ms: u64,
    },
    Expired {
        event: EventId,
        program: ProgramId,
        t: Timestamp,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DecisionRecord {
    pub phase: Phase,
    pub t: Timestamp,
    pub request: OperationRequest,
    pub decision: Decision,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PromptRecord {
    pub phase: Phase,
    pub t: Timestamp,
    pub root: Option<EventId>,
    pub text: String,
    pub verdict: Verdict,
}

/// Everything the authorization layer has learned so far.
#[derive(Debug, Clone, Default)]
pub struct AuthState {
    pub paths: PathAuthorizer,
    pub first_use: FirstUseState,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ProgramStatus {
    pub in_flight: usize,
    pub high: usize,
    pub low: usize,
}

impl ProgramStatus {
    pub fn busy(&self) -> bool {
        self.in_flight > 0
    }
}

#[derive(Debug)]
struct InFlight {
    event: EventId,
    token: u64,
    root: Option<EventId>,
    input_key: Option<InputKey>,
    outstanding: u32,
}

#[derive(Debug)]
struct Queued {
    event: MediatedEvent,
    level: Level,
}

#[derive(Debug, Default)]
struct ProgramState {
    in_flight: Vec<InFlight>,
    high: VecDeque<Queued>,
    low: VecDeque<Queued>,
}

impl ProgramState {
    fn queued(&self) -> usize {
        self.high.len() + self.low.len()
    }
}

#[derive(Debug)]
enum Item {
    Step {
        program: ProgramId,
        token: u64,
        action: Action,
    },
    HoldTimeout {
        program: ProgramId,
        event: EventId,
    },
    WindowClose {
        root: EventId,
    },
}

impl Item {
    fn class(&self) -> u8 {
        match self {
            Item::Step { .. } => 0,
            Item::HoldTimeout { .. } => 1,
            Item::WindowClose { .. } => 2,
        }
    }
}

#[derive(Debug)]
struct Scheduled {
    t: Timestamp,
    class: u8,
    seq: u64,
    item: Item,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    // BinaryHeap is a max-heap; invert so the earliest entry pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.t, other.class, other.seq).cmp(&(self.t, self.class, self.seq))
    }
}

struct Pending {
    request: OperationRequest,
    path: DelegationPath,
    reauthorized: bool,
}

pub struct Engine {
    registry: Arc<Registry>,
    handlers: Arc<Handlers>,
    config: SchedulerConfig,
    mode: Mode,
    authorizer: Box<dyn Authorizer>,
    auth: AuthState,
    graphs: GraphStore,
    programs: HashMap<ProgramId, ProgramState>,
    agenda: BinaryHeap<Scheduled>,
    pending: BTreeMap<EventId, Vec<Pending>>,
    now: Timestamp,
    agenda_seq: u64,
    next_id: u64,
    next_token: u64,
    phase: Phase,
    stats: DelayStats,
    log: Vec<Delivery>,
    trace: Option<Vec<TraceRecord>>,
    trace_seq: u64,
    decisions: Vec<DecisionRecord>,
    prompts: Vec<PromptRecord>,
}

impl Engine {
    pub fn new(
        registry: Arc<Registry>,
        handlers: Arc<Handlers>,
        config: SchedulerConfig,
        mode: Mode,
        authorizer: Box<dyn Authorizer>,
    ) -> Self {
        Self {
            registry,
            handlers,
            graphs: GraphStore::new(config.window_ms),
            config,
            mode,
            authorizer,
            auth: AuthState::default(),
            programs: HashMap::new(),
            agenda: BinaryHeap::new(),
            pending: BTreeMap::new(),
            now: Timestamp::ZERO,
            agenda_seq: 0,
            next_id: 1,
            next_token: 0,
            phase: Phase::Main,
            stats: DelayStats::default(),
            log: Vec::new(),
            trace: None,
            trace_seq: 0,
            decisions: Vec::new(),
            prompts: Vec::new(),
        }
    }

    pub fn with_tracing(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }

    pub fn with_auth(mut self, auth: AuthState) -> Self {
        self.auth = auth;
        self
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn config(&self) -> &SchedulerConfig {
        &self.config
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn now(&self) -> Timestamp {
        self.now
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn set_phase(&mut self, phase: Phase) {
        self.phase = phase;
    }

    pub fn set_authorizer(&mut self, authorizer: Box<dyn Authorizer>) {
        self.authorizer = authorizer;
    }

    pub fn auth(&self) -> &AuthState {
        &self.auth
    }

    pub fn auth_mut(&mut self) -> &mut AuthState {
        &mut self.auth
    }

    pub fn into_auth(self) -> AuthState {
        self.auth
    }

    pub fn graphs(&self) -> &GraphStore {
        &self.graphs
    }

    pub fn graphs_mut(&mut self) -> &mut GraphStore {
        &mut self.graphs
    }

    pub fn decisions(&self) -> &[DecisionRecord] {
        &self.decisions
    }

    pub fn prompts(&self) -> &[PromptRecord] {
        &self.prompts
    }

    pub fn stats_snapshot(&self) -> DelayStats {
        self.stats
    }

    pub fn trace(&self) -> Option<&[TraceRecord]> {
        self.trace.as_deref()
    }

    pub fn take_trace(&mut self) -> Vec<TraceRecord> {
        self.trace.as_mut().map(std::mem::take).unwrap_or_default()
    }

    pub fn program_status(&self, program: ProgramId) -> ProgramStatus {
        self.programs
            .get(&program)
            .map(|s| ProgramStatus {
                in_flight: s.in_flight.len(),
                high: s.high.len(),
                low: s.low.len(),
            })
            .unwrap_or_default()
    }

    /// True once nothing is scheduled, queued or in flight.
    pub fn is_idle(&self) -> bool {
        self.agenda.is_empty()
            && self
                .programs
                .values()
                .all(|s| s.in_flight.is_empty() && s.queued() == 0)
    }

    pub fn fresh_id(&mut self) -> EventId {
        let id = EventId(self.next_id);
        self.next_id += 1;
        id
    }

    pub fn input(
        &mut self,
        widget: WidgetId,
        program: ProgramId,
        t: Timestamp,
    ) -> Result<InputEvent, EngineError> {
        let id = self.fresh_id();
        Ok(self.registry.input_event(id, widget, program, t)?)
    }

    /// A handoff with no provenance, as a program acting on its own would send.
    pub fn handoff(
        &mut self,
        from: ProgramId,
        to: ProgramId,
        t: Timestamp,
        label: Option<String>,
    ) -> Result<HandoffEvent, EngineError> {
        let id = self.fresh_id();
        Ok(self.registry.handoff_event(id, from, to, t, label, None)?)
    }

    pub fn request(
        &mut self,
        program: ProgramId,
        op: OperationId,
        sensor: SensorId,
        t: Timestamp,
    ) -> Result<OperationRequest, EngineError> {
        let id = self.fresh_id();
        Ok(self
            .registry
            .operation_request(id, program, op, sensor, t)?)
    }

    /// Runs the agenda up to `event.t`, then admits the event.
    pub fn submit(&mut self, event: MediatedEvent) -> Result<Ticket, EngineError> {
        let t = event.t();
        if t < self.now {
            return Err(EngineError::ClockRewind {
                event: event.id(),
                t,
                now: self.now,
            });
        }
        self.next_id = self.next_id.max(event.id().0 + 1);
        self.run_due(t);
        self.admit(event)
    }

    /// Runs everything scheduled at or before `to` and reports deliveries and
    /// expiries since the last call.
    pub fn advance(&mut self, to: Timestamp) -> Vec<Delivery> {
        self.run_due(to);
        std::mem::take(&mut self.log)
    }

    /// Runs the agenda until nothing is left scheduled.
    pub fn run_until_idle(&mut self) -> Vec<Delivery> {
        while let Some(next) = self.agenda.peek() {
            let t = next.t;
            self.run_due(t);
        }
        std::mem::take(&mut self.log)
    }

    pub fn check_repeat_input(&self, input: &InputEvent) -> RepeatCheck {
        let Some(state) = self.programs.get(&input.program) else {
            return RepeatCheck::DeliverFresh;
        };
        if state.in_flight.is_empty() {
            return RepeatCheck::DeliverFresh;
        }
        let key = InputKey {
            widget: input.widget,
            program: input.program,
        };
        if state
            .in_flight
            .iter()
            .any(|f| f.input_key == Some(key) && f.root.is_some())
        {
            RepeatCheck::DeliverAsRepeat
        } else {
            RepeatCheck::Hold
        }
    }

    /// Ends `program`'s processing of `event` and hands it the next queued event.
    pub fn complete_handling(
        &mut self,
        program: ProgramId,
        event: EventId,
    ) -> Result<Option<EventId>, EngineError> {
        let state = self.programs.entry(program).or_default();
        let Some(pos) = state.in_flight.iter().position(|f| f.event == event) else {
            return Err(EngineError::ProtocolViolation { program, event });
        };
        state.in_flight.remove(pos);
        let idle = state.in_flight.is_empty();
        if self.mode == Mode::Entrust {
            self.graphs.release(program, event);
        }
        self.record(TraceBody::Complete { event, program });
        if self.config.ambiguity_prevention && idle {
            Ok(self.deliver_next(program))
        } else {
            Ok(None)
        }
    }

    fn record(&mut self, body: TraceBody) {
        if let Some(trace) = self.trace.as_mut() {
            trace.push(TraceRecord {
                seq: self.trace_seq,
                t: self.now,
                phase: self.phase,
                body,
            });
            self.trace_seq += 1;
        }
    }

    fn schedule(&mut self, t: Timestamp, item: Item) {
        let seq = self.agenda_seq;
        self.agenda_seq += 1;
        self.agenda.push(Scheduled {
            t,
            class: item.class(),
            seq,
            item,
        });
    }

    fn run_due(&mut self, to: Timestamp) {
        while self.agenda.peek().is_some_and(|s| s.t <= to) {
            let next = self.agenda.pop().expect("peeked");
            self.now = self.now.max(next.t);
            self.dispatch(next.item);
        }
        self.now = self.now.max(to);
    }

    fn dispatch(&mut self, item: Item) {
        match item {
            Item::Step {
                program,
                token,
                action,
            } => self.step(program, token, action),
            Item::HoldTimeout { program, event } => self.hold_timeout(program, event),
            Item::WindowClose { root } => self.close_window(root),
        }
    }

    fn kind(event: &MediatedEvent) -> Kind {
        match event {
            MediatedEvent::Input(_) => Kind::Input,
            MediatedEvent::Handoff(_) => Kind::Handoff,
            MediatedEvent::Request(_) => Kind::Request,
        }
    }

    fn input_derived(event: &MediatedEvent) -> bool {
        match event {
            MediatedEvent::Input(_) => true,
            MediatedEvent::Handoff(h) => h.provenance.is_some(),
            MediatedEvent::Request(_) => false,
        }
    }

    fn admit(&mut self, event: MediatedEvent) -> Result<Ticket, EngineError> {
        let id = event.id();
        self.stats.admitted(Self::kind(&event));
        let program = match &event {
            MediatedEvent::Request(r) => {
                let r = r.clone();
                self.record(TraceBody::Admit {
                    event,
                    outcome: Admission::Monitored,
                });
                self.monitor(r);
                return Ok(Ticket {
                    event: id,
                    admission: Admission::Monitored,
                });
            }
            MediatedEvent::Input(i) => i.program,
            MediatedEvent::Handoff(h) => h.to,
        };
        self.registry.program(program)?;
        if !self.config.ambiguity_prevention {
            self.record(TraceBody::Admit {
                event: event.clone(),
                outcome: Admission::Delivered,
            });
            self.deliver(program, event);
            return Ok(Ticket {
                event: id,
                admission: Admission::Delivered,
            });
        }
        let busy = self
            .programs
            .get(&program)
            .is_some_and(|s| !s.in_flight.is_empty());
        if !busy {
            self.record(TraceBody::Admit {
                event: event.clone(),
                outcome: Admission::Delivered,
            });
            self.deliver(program, event);
            return Ok(Ticket {
                event: id,
                admission: Admission::Delivered,
            });
        }
        if let MediatedEvent::Input(i) = &event {
            if self.check_repeat_input(i) == RepeatCheck::DeliverAsRepeat && self.fold_repeat(i) {
                return Ok(Ticket {
                    event: id,
                    admission: Admission::Repeat,
                });
            }
        }
        let level = if Self::input_derived(&event) {
            Level::High
        } else {
            Level::Low
        };
        self.enqueue(program, event, level)
    }

    fn enqueue(
        &mut self,
        program: ProgramId,
        event: MediatedEvent,
        level: Level,
    ) -> Result<Ticket, EngineError> {
        let id = event.id();
        let bound = self.config.queue_bound;
        let two_level = self.config.two_level;
        let state = self.programs.entry(program).or_default();
        if state.queued() >= bound {
            self.stats.rejected_events += 1;
            self.record(TraceBody::Admit {
                event,
                outcome: Admission::Rejected,
            });
            return Err(EngineError::Backpressure { program, event: id });
        }
        let expiry = event.t().after(self.config.window_ms + 1);
        self.stats.held(Self::kind(&event));
        let queued = Queued {
            event: event.clone(),
            level,
        };
        if two_level && level == Level::High {
            state.high.push_back(queued);
        } else {
            state.low.push_back(queued);
        }
        self.record(TraceBody::Admit {
            event,
            outcome: Admission::Held,
        });
        self.record(TraceBody::Hold {
            event: id,
            program,
            level,
        });
        self.schedule(expiry, Item::HoldTimeout { program, event: id });
        Ok(Ticket {
            event: id,
            admission: Admission::Held,
        })
    }

    fn fold_repeat(&mut self, input: &InputEvent) -> bool {
        let key = InputKey {
            widget: input.widget,
            program: input.program,
        };
        let Some(state) = self.programs.get(&input.program) else {
            return false;
        };
        let Some((token, root)) = state
            .in_flight
            .iter()
            .find(|f| f.input_key == Some(key))
            .and_then(|f| f.root.map(|r| (f.token, r)))
        else {
            return false;
        };
        if self.graphs.record_repeat(input, root).is_err() {
            return false;
        }
        if let Some(f) = self
            .programs
            .get_mut(&input.program)
            .and_then(|s| s.in_flight.iter_mut().find(|f| f.token == token))
        {
            f.outstanding += 1;
        }
        self.stats.repeat_inputs += 1;
        self.stats.delivered(Kind::Input, 0, true);
        self.record(TraceBody::Admit {
            event: MediatedEvent::Input(input.clone()),
            outcome: Admission::Repeat,
        });
        self.record(TraceBody::Deliver {
            event: input.id,
            program: input.program,
            delay_ms: 0,
            repeat: true,
        });
        self.log.push(Delivery::Delivered {
            event: input.id,
            program: input.program,
            t: self.now,
            delay_ms: 0,
        });
        self.start_handler(input.program, token, Trigger::Widget(input.widget));
        true
    }

    fn deliver(&mut self, program: ProgramId, event: MediatedEvent) {
        let delay = self.now.since(event.t());
        let id = event.id();
        self.stats
            .delivered(Self::kind(&event), delay, Self::input_derived(&event));
        self.record(TraceBody::Deliver {
            event: id,
            program,
            delay_ms: delay,
            repeat: false,
        });
        self.log.push(Delivery::Delivered {
            event: id,
            program,
            t: self.now,
            delay_ms: delay,
        });
        let (root, input_key, trigger) = match &event {
            MediatedEvent::Input(i) => {
                let root = if self.mode == Mode::Entrust {
                    self.graphs.record_input(i).ok()
                } else {
                    None
                };
                if let Some(root) = root {
                    let close = self
                        .graphs
                        .live_graph(root)
                        .map(|g| g.deadline().after(1))
                        .expect("just recorded");
                    self.schedule(close, Item::WindowClose { root });
                }
                let key = InputKey {
                    widget: i.widget,
                    program: i.program,
                };
                (root, Some(key), Trigger::Widget(i.widget))
            }
            MediatedEvent::Handoff(h) => {
                let root = if self.mode == Mode::Entrust {
                    match self.graphs.record_handoff(h, self.now) {
                        Ok(root) => {
                            self.record(TraceBody::Handoff {
                                event: id,
                                root: Some(root),
                                error: None,
                            });
                            Some(root)
                        }
                        Err(e) => {
                            self.record(TraceBody::Handoff {
                                event: id,
                                root: None,
                                error: Some(e.to_string()),
                            });
                            None
                        }
                    }
                } else {
                    None
                };
                (root, None, Trigger::Handoff(h.label.clone()))
            }
            MediatedEvent::Request(_) => unreachable!("requests are never delivered"),
        };
        let token = self.next_token;
        self.next_token += 1;
        self.programs
            .entry(program)
            .or_default()
            .in_flight
            .push(InFlight {
                event: id,
                token,
                root,
                input_key,
                outstanding: 1,
            });
        self.start_handler(program, token, trigger);
    }

    fn start_handler(&mut self, program: ProgramId, token: u64, trigger: Trigger) {
        let actions = match self.handlers.lookup(program, &trigger) {
            Some(spec) => spec.actions.clone(),
            None => vec![Action::Complete {
                after: self.config.default_service_lag_ms,
            }],
        };
        let mut at = self.now;
        for action in actions {
            at = at.after(action.after());
            self.schedule(
                at,
                Item::Step {
                    program,
                    token,
                    action,
                },
            );
        }
    }

    fn in_flight_event(&self, program: ProgramId, token: u64) -> Option<EventId> {
        self.programs
            .get(&program)?
            .in_flight
            .iter()
            .find(|f| f.token == token)
            .map(|f| f.event)
    }

    fn step(&mut self, program: ProgramId, token: u64, action: Action) {
        let Some(event) = self.in_flight_event(program, token) else {
            return;
        };
        match action {
            Action::Handoff { to, label, .. } => self.emit_handoff(program, to, label),
            Action::Request { op, sensor, .. } => {
                let id = self.fresh_id();
                if let Ok(r) = self
                    .registry
                    .operation_request(id, program, op, sensor, self.now)
                {
                    let _ = self.admit(MediatedEvent::Request(r));
                }
            }
            Action::Complete { .. } => {
                let state = self.programs.get_mut(&program).expect("in flight");
                let f = state
                    .in_flight
                    .iter_mut()
                    .find(|f| f.token == token)
                    .expect("in flight");
                f.outstanding -= 1;
                if f.outstanding == 0 {
                    let _ = self.complete_handling(program, event);
                }
            }
        }
    }

    fn emit_handoff(&mut self, from: ProgramId, to: ProgramId, label: Option<String>) {
        let id = self.fresh_id();
        let attribution = if self.mode == Mode::Entrust {
            self.graphs.attribute(from, self.now, id).ok()
        } else {
            None
        };
        let Ok(h) =
            self.registry
                .handoff_event(id, from, to, self.now, label, attribution.map(|a| a.root))
        else {
            return;
        };
        if let Some(a) = attribution {
            self.graphs.stage_handoff(id, a);
        }
        let _ = self.admit(MediatedEvent::Handoff(h));
    }

    fn deliver_next(&mut self, program: ProgramId) -> Option<EventId> {
        let window = self.config.window_ms;
        loop {
            let state = self.programs.get_mut(&program)?;
            let next = state.high.pop_front().or_else(|| state.low.pop_front())?;
            let id = next.event.id();
            if self.now > next.event.t().after(window) {
                self.expire_queued(program, id);
                continue;
            }
            debug_assert!(matches!(next.level, Level::High | Level::Low));
            self.deliver(program, next.event);
            return Some(id);
        }
    }

    fn expire_queued(&mut self, program: ProgramId, event: EventId) {
        self.stats.expired_events += 1;
        self.record(TraceBody::Expire { event, program });
        self.log.push(Delivery::Expired {
            event,
            program,
            t: self.now,
        });
    }

    fn hold_timeout(&mut self, program: ProgramId, event: EventId) {
        let Some(state) = self.programs.get_mut(&program) else {
            return;
        };
        let removed = [&mut state.high, &mut state.low].into_iter().any(|q| {
            match q.iter().position(|e| e.event.id() == event) {
                Some(pos) => {
                    q.remove(pos);
                    true
                }
                None => false,
            }
        });
        if removed {
            self.expire_queued(program, event);
        }
    }

    fn decide(&mut self, request: OperationRequest, decision: Decision) {
        self.record(TraceBody::Decision {
            request: request.id,
            outcome: decision.outcome,
            path: decision.path.as_ref().map(DelegationPath::event_ids),
        });
        self.decisions.push(DecisionRecord {
            phase: self.phase,
            t: self.now,
            request,
            decision,
        });
    }

    fn monitor(&mut self, request: OperationRequest) {
        match self.mode {
            Mode::Unmediated => {
                let decision = Decision {
                    outcome: Outcome::Allowed(AllowedBy::Cached),
                    path: None,
                    prompt_text: None,
                    reauthorized: false,
                };
                self.decide(request, decision);
            }
            Mode::FirstUse => {
                let decision = self.auth.first_use.authorize(
                    &self.registry,
                    &request,
                    self.authorizer.as_mut(),
                );
                if let Some(text) = &decision.prompt_text {
                    let verdict = if decision.outcome.is_allowed() {
                        Verdict::Allow
                    } else {
                        Verdict::Deny
                    };
                    self.record(TraceBody::Prompt {
                        root: None,
                        text: text.clone(),
                        verdict,
                    });
                    self.prompts.push(PromptRecord {
                        phase: self.phase,
                        t: self.now,
                        root: None,
                        text: text.clone(),
                        verdict,
                    });
                }
                self.decide(request, decision);
            }
            Mode::Entrust => self.monitor_path(request),
        }
    }

    fn monitor_path(&mut self, request: OperationRequest) {
        let root = match self.graphs.record_request(&request) {
            Ok(root) => root,
            Err(e) => {
                self.record(TraceBody::Request {
                    event: request.id,
                    root: None,
                    error: Some(e.to_string()),
                });
                self.decide(request, Decision::denied(deny_for(&e)));
                return;
            }
        };
        self.record(TraceBody::Request {
            event: request.id,
            root: Some(root),
            error: None,
        });
        let path = self
            .graphs
            .compute_path(&request)
            .expect("request was just recorded");
        debug_assert!(path.validate().is_ok());
        match self.auth.paths.check(&path) {
            CacheCheck::Allowed => self.decide(
                request,
                Decision {
                    outcome: Outcome::Allowed(AllowedBy::Cached),
                    path: Some(path),
                    prompt_text: None,
                    reauthorized: false,
                },
            ),
            CacheCheck::Denied => self.decide(
                request,
                Decision {
                    outcome: Outcome::Denied(DeniedBy::Policy),
                    path: Some(path),
                    prompt_text: None,
                    reauthorized: false,
                },
            ),
            CacheCheck::Miss { superseded } => {
                self.pending.entry(root).or_default().push(Pending {
                    request,
                    path,
                    reauthorized: !superseded.is_empty(),
                });
            }
        }
    }

    /// Fires after a root's window: one aggregated prompt for every path
    /// that missed the cache, then the graph is sealed.
    fn close_window(&mut self, root: EventId) {
        if let Some(deadline) = self.graphs.live_graph(root).map(|g| g.deadline()) {
            if deadline >= self.now {
                self.schedule(deadline.after(1), Item::WindowClose { root });
                return;
            }
        }
        if let Some(pending) = self.pending.remove(&root) {
            let paths: Vec<DelegationPath> = pending.iter().map(|p| p.path.clone()).collect();
            match self
                .auth
                .paths
                .prompt(&self.registry, &paths, self.authorizer.as_mut())
            {
                Ok(out) => {
                    self.record(TraceBody::Prompt {
                        root: Some(root),
                        text: out.text.clone(),
                        verdict: out.verdict,
                    });
                    self.prompts.push(PromptRecord {
                        phase: self.phase,
                        t: self.now,
                        root: Some(root),
                        text: out.text.clone(),
                        verdict: out.verdict,
                    });
                    let outcome = match out.verdict {
                        Verdict::Allow => Outcome::Allowed(AllowedBy::Prompted),
                        Verdict::Deny => Outcome::Denied(DeniedBy::Prompted),
                    };
                    for p in pending {
                        self.decide(
                            p.request,
                            Decision {
                                outcome,
                                path: Some(p.path),
                                prompt_text: Some(out.text.clone()),
                                reauthorized: p.reauthorized,
                            },
                        );
                    }
                }
                Err(_) => {
                    for p in pending {
                        self.decide(p.request, Decision::denied(DeniedBy::NoAttribution));
                    }
                }
            }
        }
        self.graphs.expire_graph(root, self.now);
    }
}

#[cfg(test)]
mod tests;
