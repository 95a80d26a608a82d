//! Delegation graphs: one rooted instance per user input event, grown by
//! handoffs and closed off by sensor operation requests.
//!
//! Each delivered event becomes a node whose `cause` is the event its sender
//! was processing when it emitted it. A delegation path is recovered by
//! walking causes backwards from a request to the root input. Attribution only
//! considers events that are currently being processed (delivered and not yet
//! released) under a root whose window is still open, so with per-program
//! exclusivity in force every emission has at most one candidate cause.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    EventId, HandoffEvent, InputEvent, OperationId, OperationRequest, ProgramId, SensorId,
    Timestamp, WidgetId,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("event {0} was already recorded")]
    DuplicateEvent(EventId),
    #[error("handoff {0} cannot be traced to a live input event")]
    UnattributableHandoff(EventId),
    #[error(
        "handoff {event} leaves program {program}, which is not processing anything for its root"
    )]
    BrokenChain { event: EventId, program: ProgramId },
    #[error("handoff {0} would close a cycle between programs")]
    CyclicHandoff(EventId),
    #[error("event {event} is not later than the event that caused it")]
    NonMonotonic { event: EventId },
    #[error("event {0} has no attributable input event")]
    NoAttributableInput(EventId),
    #[error("event {event} is attributable to {} different input events", candidates.len())]
    AmbiguousAttribution {
        event: EventId,
        candidates: Vec<EventId>,
    },
    #[error("event {event} arrived after the window of input {root} closed")]
    ExpiredRoot { event: EventId, root: EventId },
    #[error("no recorded request with id {0}")]
    UnknownRequest(EventId),
    #[error("no live graph rooted at {0}")]
    UnknownRoot(EventId),
}

/// Vertex of a delegation graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Vertex {
    Input(EventId),
    Program(ProgramId),
    Sensor(SensorId),
}

/// The three edge kinds a delegation graph can contain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Edge {
    InputDelivery { input: EventId, program: ProgramId },
    Handoff(HandoffEvent),
    RequestDelivery(OperationRequest),
}

impl Edge {
    pub fn endpoints(&self) -> (Vertex, Vertex) {
        match self {
            Edge::InputDelivery { input, program } => {
                (Vertex::Input(*input), Vertex::Program(*program))
            }
            Edge::Handoff(h) => (Vertex::Program(h.from), Vertex::Program(h.to)),
            Edge::RequestDelivery(r) => (Vertex::Program(r.program), Vertex::Sensor(r.sensor)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
enum NodeEvent {
    Input(InputEvent),
    Handoff(HandoffEvent),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Node {
    event: NodeEvent,
    program: ProgramId,
    cause: Option<usize>,
}

impl Node {
    fn t(&self) -> Timestamp {
        match &self.event {
            NodeEvent::Input(i) => i.t,
            NodeEvent::Handoff(h) => h.t,
        }
    }
}

/// One rooted delegation graph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DelegationGraph {
    root: InputEvent,
    deadline: Timestamp,
    repeats: Vec<EventId>,
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    requests: Vec<(OperationRequest, usize)>,
}

impl DelegationGraph {
    fn new(root: InputEvent, window_ms: u64) -> Self {
        let deadline = root.t.after(window_ms);
        let node = Node {
            event: NodeEvent::Input(root.clone()),
            program: root.program,
            cause: None,
        };
        let edge = Edge::InputDelivery {
            input: root.id,
            program: root.program,
        };
        Self {
            root,
            deadline,
            repeats: Vec::new(),
            nodes: vec![node],
            edges: vec![edge],
            requests: Vec::new(),
        }
    }

    pub fn root(&self) -> &InputEvent {
        &self.root
    }

    /// Last instant (inclusive) at which events may still join this graph.
    pub fn deadline(&self) -> Timestamp {
        self.deadline
    }

    pub fn is_live(&self, t: Timestamp) -> bool {
        t <= self.deadline
    }

    pub fn repeats(&self) -> &[EventId] {
        &self.repeats
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn vertices(&self) -> BTreeSet<Vertex> {
        self.edges
            .iter()
            .flat_map(|e| {
                let (a, b) = e.endpoints();
                [a, b]
            })
            .collect()
    }

    pub fn requests(&self) -> impl Iterator<Item = &OperationRequest> {
        self.requests.iter().map(|(r, _)| r)
    }

    /// Every delegation path ending in one of this graph's requests.
    pub fn paths(&self) -> Vec<DelegationPath> {
        self.requests
            .iter()
            .map(|(r, cause)| self.path_to(r, *cause))
            .collect()
    }

    fn path_to(&self, request: &OperationRequest, cause: usize) -> DelegationPath {
        let mut handoffs = Vec::new();
        let mut cursor = Some(cause);
        while let Some(idx) = cursor {
            let node = &self.nodes[idx];
            if let NodeEvent::Handoff(h) = &node.event {
                handoffs.push(h.clone());
            }
            cursor = node.cause;
        }
        handoffs.reverse();
        DelegationPath {
            input: self.root.clone(),
            handoffs,
            request: request.clone(),
        }
    }

    fn chain_programs(&self, node: usize) -> Vec<ProgramId> {
        let mut out = Vec::new();
        let mut cursor = Some(node);
        while let Some(idx) = cursor {
            out.push(self.nodes[idx].program);
            cursor = self.nodes[idx].cause;
        }
        out.reverse();
        out
    }

    /// True when `to` can already reach `from` over handoff edges, i.e. adding
    /// `from -> to` would close a cycle between programs.
    fn would_cycle(&self, from: ProgramId, to: ProgramId) -> bool {
        if from == to {
            return true;
        }
        let mut stack = vec![to];
        let mut seen = HashSet::new();
        while let Some(p) = stack.pop() {
            if p == from {
                return true;
            }
            if seen.insert(p) {
                stack.extend(self.edges.iter().filter_map(|e| match e {
                    Edge::Handoff(h) if h.from == p => Some(h.to),
                    _ => None,
                }));
            }
        }
        false
    }

    fn assert_edge_kinds(&self) {
        // the only InputDelivery is the root's; checked as each edge lands
        debug_assert!(
            self.edges.len() == 1 || !matches!(self.edges.last(), Some(Edge::InputDelivery { .. }))
        );
    }
}

/// Chain from one input event through zero or more handoffs to one request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DelegationPath {
    pub input: InputEvent,
    pub handoffs: Vec<HandoffEvent>,
    pub request: OperationRequest,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PathError {
    #[error("chain is not contiguous at hop {0}")]
    Discontiguous(usize),
    #[error("timestamps do not strictly increase at hop {0}")]
    NonMonotonic(usize),
}

impl DelegationPath {
    /// Programs from the input's receiver to the requester.
    pub fn programs(&self) -> Vec<ProgramId> {
        let mut out = Vec::with_capacity(self.handoffs.len() + 1);
        out.push(self.input.program);
        out.extend(self.handoffs.iter().map(|h| h.to));
        out
    }

    pub fn edge_count(&self) -> usize {
        self.handoffs.len() + 2
    }

    pub fn event_ids(&self) -> Vec<EventId> {
        let mut ids = vec![self.input.id];
        ids.extend(self.handoffs.iter().map(|h| h.id));
        ids.push(self.request.id);
        ids
    }

    pub fn validate(&self) -> Result<(), PathError> {
        let mut holder = self.input.program;
        let mut t = self.input.t;
        for (i, h) in self.handoffs.iter().enumerate() {
            if h.from != holder {
                return Err(PathError::Discontiguous(i));
            }
            if h.t <= t {
                return Err(PathError::NonMonotonic(i));
            }
            holder = h.to;
            t = h.t;
        }
        let last = self.handoffs.len();
        if self.request.program != holder {
            return Err(PathError::Discontiguous(last));
        }
        if self.request.t <= t {
            return Err(PathError::NonMonotonic(last));
        }
        Ok(())
    }

    pub fn path_key(&self) -> PathKey {
        PathKey {
            widget: self.input.widget,
            programs: self.programs(),
            op: self.request.op,
            sensor: self.request.sensor,
        }
    }

    pub fn input_key(&self) -> InputKey {
        InputKey {
            widget: self.input.widget,
            program: self.input.program,
        }
    }
}

/// Timestamp-free identity of a delegation path.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PathKey {
    pub widget: WidgetId,
    pub programs: Vec<ProgramId>,
    pub op: OperationId,
    pub sensor: SensorId,
}

impl PathKey {
    pub fn input_key(&self) -> InputKey {
        InputKey {
            widget: self.widget,
            program: self.programs[0],
        }
    }

    pub fn handoff_count(&self) -> usize {
        self.programs.len() - 1
    }
}

/// Identity of an input event for caching: which widget, delivered to whom.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct InputKey {
    pub widget: WidgetId,
    pub program: ProgramId,
}

/// Where an emission made by a program came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Attribution {
    pub root: EventId,
    node: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ExpiryStats {
    pub sealed: usize,
    pub live: usize,
}

/// Owns every live graph and the archive of sealed ones.
#[derive(Debug, Default)]
pub struct GraphStore {
    window_ms: u64,
    live: BTreeMap<EventId, DelegationGraph>,
    sealed: BTreeMap<EventId, Arc<DelegationGraph>>,
    seen: HashSet<EventId>,
    /// Delivered events still being processed, per receiving program.
    active: HashMap<ProgramId, Vec<(EventId, usize, EventId)>>,
    staged: HashMap<EventId, Attribution>,
    requests: HashMap<EventId, EventId>,
    unattributed: Vec<HandoffEvent>,
    evicted: usize,
}

impl GraphStore {
    pub fn new(window_ms: u64) -> Self {
        Self {
            window_ms,
            ..Self::default()
        }
    }

    pub fn window_ms(&self) -> u64 {
        self.window_ms
    }

    fn claim(&mut self, id: EventId) -> Result<(), GraphError> {
        if self.seen.insert(id) {
            Ok(())
        } else {
            Err(GraphError::DuplicateEvent(id))
        }
    }

    /// Starts a graph rooted at a freshly delivered input event.
    pub fn record_input(&mut self, input: &InputEvent) -> Result<EventId, GraphError> {
        self.claim(input.id)?;
        let graph = DelegationGraph::new(input.clone(), self.window_ms);
        graph.assert_edge_kinds();
        self.active
            .entry(input.program)
            .or_default()
            .push((input.id, 0, input.id));
        self.live.insert(input.id, graph);
        Ok(input.id)
    }

    /// Folds a repeated input (same widget, same receiver) into an existing
    /// root and stretches that root's window to cover it.
    pub fn record_repeat(&mut self, input: &InputEvent, root: EventId) -> Result<(), GraphError> {
        let window = self.window_ms;
        let graph = self
            .live
            .get_mut(&root)
            .filter(|g| g.is_live(input.t))
            .ok_or(GraphError::ExpiredRoot {
                event: input.id,
                root,
            })?;
        if !self.seen.insert(input.id) {
            return Err(GraphError::DuplicateEvent(input.id));
        }
        graph.repeats.push(input.id);
        graph.deadline = graph.deadline.max(input.t.after(window));
        Ok(())
    }

    fn graph(&self, root: EventId) -> Option<&DelegationGraph> {
        self.live
            .get(&root)
            .or_else(|| self.sealed.get(&root).map(Arc::as_ref))
    }

    /// Finds the single live root whose processing `program` is engaged in at `t`.
    pub fn attribute(
        &self,
        program: ProgramId,
        t: Timestamp,
        event: EventId,
    ) -> Result<Attribution, GraphError> {
        let entries = self.active.get(&program).map(Vec::as_slice).unwrap_or(&[]);
        let mut live = Vec::new();
        let mut expired = None;
        for &(root, node, _) in entries {
            match self.live.get(&root) {
                Some(g) if g.is_live(t) => live.push(Attribution { root, node }),
                _ => expired = Some(root),
            }
        }
        match live.len() {
            1 => Ok(live[0]),
            0 => Err(match expired {
                Some(root) => GraphError::ExpiredRoot { event, root },
                None => GraphError::NoAttributableInput(event),
            }),
            _ => {
                let mut candidates: Vec<_> = live.iter().map(|a| a.root).collect();
                candidates.sort();
                Err(GraphError::AmbiguousAttribution { event, candidates })
            }
        }
    }

    /// Remembers which node a handoff was emitted from, for use on delivery.
    pub fn stage_handoff(&mut self, handoff: EventId, attribution: Attribution) {
        self.staged.insert(handoff, attribution);
    }

    /// Attaches a delivered handoff. `now` is the delivery instant.
    pub fn record_handoff(
        &mut self,
        handoff: &HandoffEvent,
        now: Timestamp,
    ) -> Result<EventId, GraphError> {
        let staged = self.staged.remove(&handoff.id);
        let unattributable = GraphError::UnattributableHandoff(handoff.id);
        let Some(root) = handoff.provenance else {
            self.seen.insert(handoff.id);
            self.unattributed.push(handoff.clone());
            return Err(unattributable);
        };
        if self.seen.contains(&handoff.id) {
            return Err(GraphError::DuplicateEvent(handoff.id));
        }
        let live = self.live.get(&root).is_some_and(|g| g.is_live(now));
        if !live {
            self.seen.insert(handoff.id);
            self.unattributed.push(handoff.clone());
            return Err(unattributable);
        }
        let cause = match staged {
            Some(a) if a.root == root => a.node,
            _ => self
                .active
                .get(&handoff.from)
                .and_then(|v| v.iter().find(|(r, _, _)| *r == root))
                .map(|&(_, node, _)| node)
                .ok_or(GraphError::BrokenChain {
                    event: handoff.id,
                    program: handoff.from,
                })?,
        };
        let graph = self.live.get_mut(&root).expect("checked live");
        if graph.nodes[cause].program != handoff.from {
            return Err(GraphError::BrokenChain {
                event: handoff.id,
                program: handoff.from,
            });
        }
        if handoff.t <= graph.nodes[cause].t() {
            return Err(GraphError::NonMonotonic { event: handoff.id });
        }
        if graph.would_cycle(handoff.from, handoff.to) {
            return Err(GraphError::CyclicHandoff(handoff.id));
        }
        self.seen.insert(handoff.id);
        graph.nodes.push(Node {
            event: NodeEvent::Handoff(handoff.clone()),
            program: handoff.to,
            cause: Some(cause),
        });
        graph.edges.push(Edge::Handoff(handoff.clone()));
        graph.assert_edge_kinds();
        let node = graph.nodes.len() - 1;
        self.active
            .entry(handoff.to)
            .or_default()
            .push((root, node, handoff.id));
        Ok(root)
    }

    /// Attaches an operation request to the graph its requester is working for.
    pub fn record_request(&mut self, request: &OperationRequest) -> Result<EventId, GraphError> {
        if self.seen.contains(&request.id) {
            return Err(GraphError::DuplicateEvent(request.id));
        }
        let attribution = self.attribute(request.program, request.t, request.id)?;
        let graph = self
            .live
            .get_mut(&attribution.root)
            .expect("attribution only returns live roots");
        if request.t <= graph.nodes[attribution.node].t() {
            return Err(GraphError::NonMonotonic { event: request.id });
        }
        self.seen.insert(request.id);
        graph.requests.push((request.clone(), attribution.node));
        graph.edges.push(Edge::RequestDelivery(request.clone()));
        graph.assert_edge_kinds();
        self.requests.insert(request.id, attribution.root);
        Ok(attribution.root)
    }

    /// Backward traversal from a recorded request to its root input.
    pub fn compute_path(&self, request: &OperationRequest) -> Result<DelegationPath, GraphError> {
        let root = self
            .requests
            .get(&request.id)
            .ok_or(GraphError::UnknownRequest(request.id))?;
        let graph = self.graph(*root).ok_or(GraphError::UnknownRoot(*root))?;
        let (req, cause) = graph
            .requests
            .iter()
            .find(|(r, _)| r.id == request.id)
            .ok_or(GraphError::UnknownRequest(request.id))?;
        Ok(graph.path_to(req, *cause))
    }

    /// Marks a delivered event as fully processed by its receiver.
    pub fn release(&mut self, program: ProgramId, event: EventId) -> bool {
        let Some(entries) = self.active.get_mut(&program) else {
            return false;
        };
        let before = entries.len();
        entries.retain(|&(_, _, ev)| ev != event);
        before != entries.len()
    }

    /// Programs on the chain that led to `event` being delivered.
    pub fn chain_of(&self, program: ProgramId, event: EventId) -> Option<Vec<ProgramId>> {
        let &(root, node, _) = self
            .active
            .get(&program)?
            .iter()
            .find(|&&(_, _, ev)| ev == event)?;
        Some(self.graph(root)?.chain_programs(node))
    }

    /// Seals every live graph whose window closed before `now`.
    pub fn expire(&mut self, now: Timestamp) -> ExpiryStats {
        let due: Vec<EventId> = self
            .live
            .iter()
            .filter(|(_, g)| !g.is_live(now))
            .map(|(id, _)| *id)
            .collect();
        for root in &due {
            self.seal(*root);
        }
        ExpiryStats {
            sealed: due.len(),
            live: self.live.len(),
        }
    }

    /// Seals one graph if its window has closed by `now`.
    pub fn expire_graph(&mut self, root: EventId, now: Timestamp) -> ExpiryStats {
        let due = self.live.get(&root).is_some_and(|g| !g.is_live(now));
        if due {
            self.seal(root);
        }
        ExpiryStats {
            sealed: usize::from(due),
            live: self.live.len(),
        }
    }

    fn seal(&mut self, root: EventId) {
        if let Some(graph) = self.live.remove(&root) {
            self.sealed.insert(root, Arc::new(graph));
        }
    }

    /// Drops the sealed archive, returning how many graphs were evicted.
    pub fn evict_sealed(&mut self) -> usize {
        let n = self.sealed.len();
        self.sealed.clear();
        self.evicted += n;
        n
    }

    pub fn live_graph(&self, root: EventId) -> Option<&DelegationGraph> {
        self.live.get(&root)
    }

    pub fn sealed_graph(&self, root: EventId) -> Option<Arc<DelegationGraph>> {
        self.sealed.get(&root).cloned()
    }

    pub fn sealed_graphs(&self) -> impl Iterator<Item = &Arc<DelegationGraph>> {
        self.sealed.values()
    }

    pub fn live_count(&self) -> usize {
        self.live.len()
    }

    pub fn sealed_count(&self) -> usize {
        self.sealed.len()
    }

    pub fn evicted_count(&self) -> usize {
        self.evicted
    }

    pub fn unattributed(&self) -> &[HandoffEvent] {
        &self.unattributed
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const W: u64 = 150;

    fn input(id: u64, widget: u32, program: u32, t: u64) -> InputEvent {
        InputEvent {
            id: EventId(id),
            widget: WidgetId(widget),
            program: ProgramId(program),
            t: Timestamp(t),
        }
    }

    fn handoff(id: u64, from: u32, to: u32, t: u64, prov: Option<u64>) -> HandoffEvent {
        HandoffEvent {
            id: EventId(id),
            from: ProgramId(from),
            to: ProgramId(to),
            t: Timestamp(t),
            label: None,
            provenance: prov.map(EventId),
        }
    }

    fn request(id: u64, program: u32, op: u16, sensor: u16, t: u64) -> OperationRequest {
        OperationRequest {
            id: EventId(id),
            program: ProgramId(program),
            op: OperationId(op),
            sensor: SensorId(sensor),
            t: Timestamp(t),
        }
    }

    #[test]
    fn input_starts_a_two_vertex_graph() {
        let mut store = GraphStore::new(W);
        let root = store.record_input(&input(1, 0, 0, 0)).unwrap();
        let g = store.live_graph(root).unwrap();
        assert_eq!(g.vertices().len(), 2);
        assert_eq!(g.edges().len(), 1);
        assert_eq!(
            store.record_input(&input(1, 0, 0, 0)),
            Err(GraphError::DuplicateEvent(EventId(1)))
        );
    }

    #[test]
    fn ten_inputs_make_ten_graphs() {
        let mut store = GraphStore::new(W);
        for i in 0..10 {
            store.record_input(&input(i, 0, i as u32, 0)).unwrap();
        }
        assert_eq!(store.live_count(), 10);
    }

    #[test]
    fn task_a_shape() {
        // voice command to the assistant, handed to screen capture, which captures
        let mut store = GraphStore::new(W);
        store.record_input(&input(1, 0, 0, 0)).unwrap();
        store
            .record_handoff(&handoff(2, 0, 1, 5, Some(1)), Timestamp(5))
            .unwrap();
        let r = request(3, 1, 0, 0, 9);
        store.record_request(&r).unwrap();
        let path = store.compute_path(&r).unwrap();
        assert_eq!(path.programs(), vec![ProgramId(0), ProgramId(1)]);
        assert_eq!(path.edge_count(), 3);
        path.validate().unwrap();
        let g = store.live_graph(EventId(1)).unwrap();
        let kinds: Vec<_> = g
            .edges()
            .iter()
            .map(|e| match e {
                Edge::InputDelivery { .. } => 'i',
                Edge::Handoff(_) => 'h',
                Edge::RequestDelivery(_) => 'r',
            })
            .collect();
        assert_eq!(kinds, vec!['i', 'h', 'r']);
    }

    #[test]
    fn direct_request_has_no_handoffs() {
        let mut store = GraphStore::new(W);
        store.record_input(&input(1, 0, 0, 0)).unwrap();
        let r = request(2, 0, 0, 0, 3);
        store.record_request(&r).unwrap();
        let path = store.compute_path(&r).unwrap();
        assert!(path.handoffs.is_empty());
        assert_eq!(path.edge_count(), 2);
    }

    #[test]
    fn chain_of_ten_handoffs() {
        let mut store = GraphStore::new(W);
        store.record_input(&input(1, 0, 0, 0)).unwrap();
        let mut expected = vec![EventId(1)];
        for k in 0..10u32 {
            let h = handoff(10 + k as u64, k, k + 1, 1 + k as u64, Some(1));
            store.record_handoff(&h, h.t).unwrap();
            store.release(
                ProgramId(k),
                if k == 0 {
                    EventId(1)
                } else {
                    EventId(9 + k as u64)
                },
            );
            expected.push(h.id);
        }
        let r = request(99, 10, 0, 0, 20);
        store.record_request(&r).unwrap();
        expected.push(r.id);
        let path = store.compute_path(&r).unwrap();
        assert_eq!(path.edge_count(), 12);
        assert_eq!(path.event_ids(), expected);
        path.validate().unwrap();
    }

    #[test]
    fn handoff_without_live_root_is_unattributable() {
        let mut store = GraphStore::new(W);
        store.record_input(&input(1, 0, 0, 0)).unwrap();
        let late = handoff(2, 0, 1, 151, Some(1));
        assert_eq!(
            store.record_handoff(&late, Timestamp(151)),
            Err(GraphError::UnattributableHandoff(EventId(2)))
        );
        let orphan = handoff(3, 0, 1, 10, None);
        assert_eq!(
            store.record_handoff(&orphan, Timestamp(10)),
            Err(GraphError::UnattributableHandoff(EventId(3)))
        );
        assert_eq!(store.unattributed().len(), 2);
    }

    #[test]
    fn handoff_from_uninvolved_program_breaks_chain() {
        let mut store = GraphStore::new(W);
        store.record_input(&input(1, 0, 0, 0)).unwrap();
        let h = handoff(2, 5, 1, 4, Some(1));
        assert!(matches!(
            store.record_handoff(&h, Timestamp(4)),
            Err(GraphError::BrokenChain { .. })
        ));
    }

    #[test]
    fn request_from_unreached_program_is_denied() {
        let mut store = GraphStore::new(W);
        store.record_input(&input(1, 0, 0, 0)).unwrap();
        let r = request(2, 7, 0, 0, 5);
        assert_eq!(
            store.record_request(&r),
            Err(GraphError::NoAttributableInput(EventId(2)))
        );
        assert_eq!(
            store.compute_path(&r),
            Err(GraphError::UnknownRequest(EventId(2)))
        );
    }

    #[test]
    fn concurrent_roots_at_one_program_are_ambiguous() {
        // nothing serializes delivery here, so program 0 holds two inputs at once
        let mut store = GraphStore::new(W);
        store.record_input(&input(1, 0, 0, 0)).unwrap();
        store.record_input(&input(2, 1, 0, 3)).unwrap();
        let r = request(3, 0, 0, 0, 5);
        assert_eq!(
            store.record_request(&r),
            Err(GraphError::AmbiguousAttribution {
                event: EventId(3),
                candidates: vec![EventId(1), EventId(2)]
            })
        );
        // once the first is released the request is unambiguous
        assert!(store.release(ProgramId(0), EventId(1)));
        let r = request(4, 0, 0, 0, 6);
        assert_eq!(store.record_request(&r), Ok(EventId(2)));
    }

    #[test]
    fn released_program_is_no_longer_attributable() {
        let mut store = GraphStore::new(W);
        store.record_input(&input(1, 0, 0, 0)).unwrap();
        store.release(ProgramId(0), EventId(1));
        assert_eq!(
            store.record_request(&request(2, 0, 0, 0, 5)),
            Err(GraphError::NoAttributableInput(EventId(2)))
        );
    }

    #[test]
    fn request_after_window_reports_expiry() {
        let mut store = GraphStore::new(W);
        store.record_input(&input(1, 0, 0, 0)).unwrap();
        assert!(store.record_request(&request(2, 0, 0, 0, 150)).is_ok());
        assert_eq!(
            store.record_request(&request(3, 0, 0, 0, 151)),
            Err(GraphError::ExpiredRoot {
                event: EventId(3),
                root: EventId(1)
            })
        );
    }

    #[test]
    fn window_is_closed_at_both_ends() {
        let mut store = GraphStore::new(W);
        store.record_input(&input(1, 0, 0, 0)).unwrap();
        assert_eq!(store.expire_graph(EventId(1), Timestamp(150)).sealed, 0);
        assert_eq!(store.expire_graph(EventId(1), Timestamp(151)).sealed, 1);
        assert!(store.sealed_graph(EventId(1)).is_some());
    }

    #[test]
    fn expiring_a_thousand_roots() {
        let mut store = GraphStore::new(W);
        for i in 0..1000u64 {
            store.record_input(&input(i, 0, i as u32, i)).unwrap();
        }
        let stats = store.expire(Timestamp(1000 + W));
        assert_eq!(
            stats,
            ExpiryStats {
                sealed: 1000,
                live: 0
            }
        );
        assert_eq!(store.evict_sealed(), 1000);
        assert_eq!(store.evicted_count(), 1000);
    }

    #[test]
    fn sealed_paths_survive_for_audit() {
        let mut store = GraphStore::new(W);
        store.record_input(&input(1, 0, 0, 0)).unwrap();
        let r = request(2, 0, 0, 0, 10);
        store.record_request(&r).unwrap();
        store.expire(Timestamp(500));
        assert_eq!(store.live_count(), 0);
        assert_eq!(store.compute_path(&r).unwrap().request.id, EventId(2));
    }

    #[test]
    fn repeat_extends_the_window() {
        let mut store = GraphStore::new(W);
        store.record_input(&input(1, 0, 0, 0)).unwrap();
        store
            .record_repeat(&input(2, 0, 0, 100), EventId(1))
            .unwrap();
        assert_eq!(
            store.live_graph(EventId(1)).unwrap().deadline(),
            Timestamp(250)
        );
        assert!(store.record_request(&request(3, 0, 0, 0, 200)).is_ok());
    }

    #[test]
    fn cycles_between_programs_are_rejected() {
        let mut store = GraphStore::new(W);
        store.record_input(&input(1, 0, 0, 0)).unwrap();
        store
            .record_handoff(&handoff(2, 0, 1, 2, Some(1)), Timestamp(2))
            .unwrap();
        assert_eq!(
            store.record_handoff(&handoff(3, 1, 0, 4, Some(1)), Timestamp(4)),
            Err(GraphError::CyclicHandoff(EventId(3)))
        );
    }

    #[test]
    fn several_leaves_share_one_root() {
        let mut store = GraphStore::new(W);
        store.record_input(&input(1, 0, 0, 0)).unwrap();
        store
            .record_handoff(&handoff(2, 0, 1, 2, Some(1)), Timestamp(2))
            .unwrap();
        for (i, (op, s)) in [(0u16, 0u16), (1, 1), (2, 2)].into_iter().enumerate() {
            store
                .record_request(&request(10 + i as u64, 1, op, s, 5 + i as u64))
                .unwrap();
        }
        let g = store.live_graph(EventId(1)).unwrap();
        let paths = g.paths();
        assert_eq!(paths.len(), 3);
        let keys: BTreeSet<_> = paths.iter().map(DelegationPath::path_key).collect();
        assert_eq!(keys.len(), 3);
        let inputs: BTreeSet<_> = paths.iter().map(DelegationPath::input_key).collect();
        assert_eq!(inputs.len(), 1);
    }

    #[test]
    fn path_key_ignores_time_and_ids() {
        let build = |base: u64, id_base: u64| DelegationPath {
            input: input(id_base, 3, 0, base),
            handoffs: vec![handoff(id_base + 1, 0, 1, base + 5, Some(id_base))],
            request: request(id_base + 2, 1, 2, 2, base + 9),
        };
        let a = build(0, 1);
        let b = build(5000, 77);
        assert_eq!(a.path_key(), b.path_key());
        let json = serde_json::to_string(&a.path_key()).unwrap();
        let back: PathKey = serde_json::from_str(&json).unwrap();
        assert_eq!(back, a.path_key());
        assert_eq!(a.path_key().input_key(), a.input_key());
    }

    #[test]
    fn validate_catches_broken_paths() {
        let mut p = DelegationPath {
            input: input(1, 0, 0, 0),
            handoffs: vec![handoff(2, 0, 1, 5, Some(1))],
            request: request(3, 1, 0, 0, 9),
        };
        assert!(p.validate().is_ok());
        p.request.t = Timestamp(5);
        assert_eq!(p.validate(), Err(PathError::NonMonotonic(1)));
        p.request.t = Timestamp(9);
        p.request.program = ProgramId(4);
        assert_eq!(p.validate(), Err(PathError::Discontiguous(1)));
    }
}
