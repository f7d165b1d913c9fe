use serde::{Deserialize, Serialize};

use super::{Operation, ProcessId, RegisterId, Response, Section, Value};

/// What happened in one event: a register operation, a crash, or a pure
/// section transition emitted by the program.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "args", rename_all = "snake_case")]
pub enum EventOp {
    Read,
    Fas(Value),
    Fai,
    Cas { expected: Value, new: Value },
    Crash,
    EnterCs,
    LeaveCs,
    Complete,
}

impl EventOp {
    pub fn from_operation(op: &Operation) -> Self {
        match op {
            Operation::Read => EventOp::Read,
            Operation::Fas(v) => EventOp::Fas(v.clone()),
            Operation::Fai => EventOp::Fai,
            Operation::Cas { expected, new } => EventOp::Cas {
                expected: expected.clone(),
                new: new.clone(),
            },
        }
    }

    /// The register operation, if this event is one.
    pub fn operation(&self) -> Option<Operation> {
        match self {
            EventOp::Read => Some(Operation::Read),
            EventOp::Fas(v) => Some(Operation::Fas(v.clone())),
            EventOp::Fai => Some(Operation::Fai),
            EventOp::Cas { expected, new } => Some(Operation::Cas {
                expected: expected.clone(),
                new: new.clone(),
            }),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Event {
    pub pid: ProcessId,
    pub op: EventOp,
    pub reg: Option<RegisterId>,
    pub rmr: bool,
    pub response: Option<Response>,
    pub section_after: Section,
}

impl Event {
    pub fn is_access(&self) -> bool {
        self.reg.is_some()
    }

    pub fn is_crash(&self) -> bool {
        self.op == EventOp::Crash
    }
}

/// `E(C, σ)`: the events produced by executing a schedule.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Trace(Vec<Event>);

impl Trace {
    pub fn new() -> Self {
        Trace(Vec::new())
    }

    pub fn from_events(events: Vec<Event>) -> Self {
        Trace(events)
    }

    pub fn events(&self) -> &[Event] {
        &self.0
    }

    pub fn push(&mut self, e: Event) {
        self.0.push(e);
    }

    pub fn append(&mut self, mut other: Trace) {
        self.0.append(&mut other.0);
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// The schedule that produced this trace.
    pub fn schedule(&self) -> super::Schedule {
        self.0
            .iter()
            .map(|e| super::Step {
                pid: e.pid,
                crash: e.is_crash(),
            })
            .collect()
    }
}

/// Number of events of `pid` flagged as RMRs.
pub fn rmr_count(trace: &Trace, pid: ProcessId) -> usize {
    trace.events().iter().filter(|e| e.pid == pid && e.rmr).count()
}
