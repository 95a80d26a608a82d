//! Random small scenarios and an independent attribution oracle that works
//! only from trace records.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use handoff_core::authz::Outcome;
use handoff_core::domain::{EventId, MediatedEvent, ProgramId};
use handoff_core::trace::{TraceBody, TraceRecord};
use rand::Rng;

pub const MAX_PROGRAMS: usize = 6;
/// Programs at or above this index never hand off, which caps chains at four hops.
const LAST_DELEGATOR: usize = 3;

fn actions(rng: &mut impl Rng, me: usize, n: usize) -> String {
    let ops = [
        ("capture_picture", "camera"),
        ("record_audio", "microphone"),
        ("read_location", "gps"),
    ];
    let mut steps = Vec::new();
    if me <= LAST_DELEGATOR && me + 1 < n {
        for _ in 0..rng.random_range(0..=2) {
            let to = rng.random_range(me + 1..n);
            steps.push(format!(
                r#"{{"after":{},"handoff":{{"to":"P{to}"}}}}"#,
                rng.random_range(1..=8)
            ));
        }
    }
    for _ in 0..rng.random_range(0..=2) {
        let (op, sensor) = ops[rng.random_range(0..ops.len())];
        let at = rng.random_range(0..steps.len() + 1);
        steps.insert(
            at,
            format!(
                r#"{{"after":{},"request":{{"op":"{op}","sensor":"{sensor}"}}}}"#,
                rng.random_range(1..=8)
            ),
        );
    }
    steps.push(format!(
        r#"{{"after":{},"complete":{{}}}}"#,
        rng.random_range(1..=6)
    ));
    steps.join(",")
}

/// Scenario text with up to six programs, inputs close enough together to
/// overlap, and handlers that delegate along a DAG at most four hops deep.
pub fn random_scenario(rng: &mut impl Rng, name: &str) -> String {
    let n = rng.random_range(2..=MAX_PROGRAMS);
    let mut lines = vec![format!(
        r#"{{"format":"handoff-scenario","version":1,"name":"{name}","mode":"entrust"}}"#
    )];
    for i in 0..n {
        lines.push(format!(r#"{{"program":{{"name":"P{i}","mark":"M{i}"}}}}"#));
    }
    for i in 1..n {
        lines.push(format!(
            r#"{{"handler":{{"program":"P{i}","on":{{"handoff":null}},"actions":[{}]}}}}"#,
            actions(rng, i, n)
        ));
    }
    let inputs = rng.random_range(2..=8);
    let mut events = Vec::new();
    for m in 0..inputs {
        let p = rng.random_range(0..n.min(LAST_DELEGATOR + 1));
        lines.push(format!(r#"{{"widget":{{"label":"in{m}","kind":"gui"}}}}"#));
        lines.push(format!(
            r#"{{"handler":{{"program":"P{p}","on":{{"widget":"in{m}"}},"actions":[{}]}}}}"#,
            actions(rng, p, n)
        ));
        let at: u64 = rng.random_range(0..=200);
        events.push((
            at,
            format!(r#"{{"event":{{"at":{at},"input":{{"widget":"in{m}","program":"P{p}"}}}}}}"#),
        ));
    }
    lines.push(r#"{"policy":{"phase":"main","rules":["default allow"]}}"#.into());
    events.sort_by_key(|e| e.0);
    lines.extend(events.into_iter().map(|e| e.1));
    lines.join("\n")
}

#[derive(Debug, Clone)]
struct Interval {
    event: EventId,
    start: u64,
    end: u64,
}

/// What the oracle concluded for one emitted handoff or request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Unique(Vec<EventId>),
    None,
    Multiple(usize),
}

#[derive(Debug, Default)]
pub struct Analysis {
    /// Requests the oracle attributes to exactly one chain.
    pub attributed: usize,
    /// Of those, how many the engine's path matched.
    pub matched: usize,
    /// Requests the oracle cannot attribute, and how many the engine allowed anyway.
    pub unattributable: usize,
    pub wrongly_allowed: usize,
    /// Emissions (handoffs or requests) with more than one candidate root.
    pub multi: usize,
    pub mismatches: Vec<String>,
}

/// Re-derives every request's causal chain from delivery and completion
/// records alone: an emission at `t` by `p` belongs to whatever `p` was
/// handling at `t`, provided that work's root input is still in its window.
pub fn analyze(records: &[TraceRecord], window_ms: u64) -> Analysis {
    let mut intervals: BTreeMap<ProgramId, Vec<Interval>> = BTreeMap::new();
    let mut open: BTreeMap<(EventId, ProgramId), usize> = BTreeMap::new();
    for r in records {
        match &r.body {
            TraceBody::Deliver { event, program, .. } => {
                let list = intervals.entry(*program).or_default();
                open.insert((*event, *program), list.len());
                list.push(Interval {
                    event: *event,
                    start: r.t.ms(),
                    end: u64::MAX,
                });
            }
            TraceBody::Complete { event, program } => {
                if let Some(i) = open.remove(&(*event, *program)) {
                    intervals.get_mut(program).unwrap()[i].end = r.t.ms();
                }
            }
            _ => {}
        }
    }

    let mut input_t: BTreeMap<EventId, u64> = BTreeMap::new();
    let mut chains: BTreeMap<EventId, Verdict> = BTreeMap::new();
    let mut analysis = Analysis::default();
    let mut engine_paths: BTreeMap<EventId, (Outcome, Option<Vec<EventId>>)> = BTreeMap::new();
    for r in records {
        if let TraceBody::Decision {
            request,
            outcome,
            path,
        } = &r.body
        {
            engine_paths.insert(*request, (*outcome, path.clone()));
        }
    }

    let attribute = |program: ProgramId,
                     t: u64,
                     chains: &BTreeMap<EventId, Verdict>,
                     input_t: &BTreeMap<EventId, u64>|
     -> Verdict {
        let mut found: BTreeSet<Vec<EventId>> = BTreeSet::new();
        let mut multi = 0;
        for iv in intervals.get(&program).map(Vec::as_slice).unwrap_or(&[]) {
            if !(iv.start < t && t <= iv.end) {
                continue;
            }
            match chains.get(&iv.event) {
                Some(Verdict::Unique(chain)) => {
                    let root_t = input_t[&chain[0]];
                    if t <= root_t + window_ms {
                        found.insert(chain.clone());
                    }
                }
                Some(Verdict::Multiple(_)) => multi += 1,
                _ => {}
            }
        }
        match (found.len(), multi) {
            (0, 0) => Verdict::None,
            (1, 0) => Verdict::Unique(found.into_iter().next().unwrap()),
            (k, m) => Verdict::Multiple(k + m),
        }
    };

    for r in records {
        let TraceBody::Admit { event, .. } = &r.body else {
            continue;
        };
        let t = r.t.ms();
        match event {
            MediatedEvent::Input(i) => {
                input_t.insert(i.id, i.t.ms());
                chains.insert(i.id, Verdict::Unique(vec![i.id]));
            }
            MediatedEvent::Handoff(h) => {
                let v = match attribute(h.from, t, &chains, &input_t) {
                    Verdict::Unique(mut c) => {
                        c.push(h.id);
                        Verdict::Unique(c)
                    }
                    other => other,
                };
                if matches!(v, Verdict::Multiple(_)) {
                    analysis.multi += 1;
                }
                chains.insert(h.id, v);
            }
            MediatedEvent::Request(q) => {
                let v = attribute(q.program, t, &chains, &input_t);
                let engine = engine_paths.get(&q.id);
                match v {
                    Verdict::Unique(mut c) => {
                        c.push(q.id);
                        analysis.attributed += 1;
                        match engine {
                            Some((_, Some(path))) if *path == c => analysis.matched += 1,
                            other => analysis
                                .mismatches
                                .push(format!("request {}: oracle {c:?}, engine {other:?}", q.id)),
                        }
                    }
                    Verdict::None => {
                        analysis.unattributable += 1;
                        if engine.is_some_and(|(o, _)| o.is_allowed()) {
                            analysis.wrongly_allowed += 1;
                            analysis
                                .mismatches
                                .push(format!("request {} allowed without attribution", q.id));
                        }
                    }
                    Verdict::Multiple(_) => {
                        analysis.multi += 1;
                        if engine.is_some_and(|(o, _)| o.is_allowed()) {
                            analysis.wrongly_allowed += 1;
                        }
                    }
                }
            }
        }
    }
    analysis
}
