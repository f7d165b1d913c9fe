//! Shared registers, schedules and executions under the CC and DSM cost
//! models.
//!
//! Everything here is deterministic: a [`Schedule`] executed from the same
//! [`Configuration`] always produces the same final configuration and the
//! same [`Trace`].

mod config;
mod exec;
mod trace;

pub use config::{CanonicalConfig, Configuration, LocalState, ProcessState};
pub use exec::{apply_register_op, ModelError, System, SystemOptions};
pub use trace::{rmr_count, Event, EventOp, Trace};

use std::fmt;

use serde::{Deserialize, Serialize};

/// A process identifier in `1..=n`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProcessId(u32);

impl ProcessId {
    pub fn new(id: u32) -> Self {
        assert!(id >= 1, "process ids start at 1");
        ProcessId(id)
    }

    pub fn get(self) -> u32 {
        self.0
    }

    /// Zero-based index (`id - 1`).
    pub fn index(self) -> usize {
        self.0 as usize - 1
    }

    pub fn from_index(index: usize) -> Self {
        ProcessId(index as u32 + 1)
    }
}

impl fmt::Display for ProcessId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RegisterId(pub u32);

impl fmt::Display for RegisterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "R{}", self.0)
    }
}

/// Declaration of one shared register.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegisterSpec {
    pub id: RegisterId,
    pub name: String,
    /// DSM segment the register lives in, if any.
    pub owner: Option<ProcessId>,
    pub initial: Value,
}

impl RegisterSpec {
    pub fn new(id: u32, name: impl Into<String>, owner: Option<ProcessId>, initial: Value) -> Self {
        RegisterSpec {
            id: RegisterId(id),
            name: name.into(),
            owner,
            initial,
        }
    }
}

/// Register contents. FAI only changes `Int` values.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Value {
    Null,
    Int(i64),
    Sym(String),
    Tuple(Vec<Value>),
}

impl Value {
    pub fn sym(name: &str) -> Self {
        Value::Sym(name.to_owned())
    }

    pub fn pid(p: ProcessId) -> Self {
        Value::Int(p.get() as i64)
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int(x) => Some(*x),
            _ => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Null => write!(f, "⊥"),
            Value::Int(x) => write!(f, "{x}"),
            Value::Sym(s) => write!(f, "{s}"),
            Value::Tuple(items) => {
                write!(f, "(")?;
                for (i, v) in items.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{v}")?;
                }
                write!(f, ")")
            }
        }
    }
}

/// The four primitive register operations. A plain write is a FAS whose
/// response is ignored.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "args", rename_all = "snake_case")]
pub enum Operation {
    Read,
    Fas(Value),
    Fai,
    Cas { expected: Value, new: Value },
}

impl Operation {
    pub fn kind(&self) -> OpKind {
        match self {
            Operation::Read => OpKind::Read,
            Operation::Fas(_) => OpKind::Fas,
            Operation::Fai => OpKind::Fai,
            Operation::Cas { .. } => OpKind::Cas,
        }
    }

    pub fn is_read(&self) -> bool {
        matches!(self, Operation::Read)
    }
}

/// Operation type; the declaration order is the tie-break order used when
/// picking a plurality type.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Read,
    Fas,
    Fai,
    Cas,
}

impl OpKind {
    pub const ALL: [OpKind; 4] = [OpKind::Read, OpKind::Fas, OpKind::Fai, OpKind::Cas];
}

/// What a register operation returns: CAS answers with a boolean, the
/// others with a value.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Response {
    Bool(bool),
    Value(Value),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryModel {
    Cc,
    Dsm,
}

impl fmt::Display for MemoryModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MemoryModel::Cc => write!(f, "cc"),
            MemoryModel::Dsm => write!(f, "dsm"),
        }
    }
}

/// Harness-visible section label of a process.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Section {
    Remainder,
    Entry,
    Cs,
    Exit,
    Recover,
}

/// One schedule letter: a normal step `p` or a crash step `p̂`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Step {
    pub pid: ProcessId,
    pub crash: bool,
}

impl Step {
    pub fn normal(pid: ProcessId) -> Self {
        Step { pid, crash: false }
    }

    pub fn crash(pid: ProcessId) -> Self {
        Step { pid, crash: true }
    }
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.crash {
            write!(f, "^{}", self.pid.get())
        } else {
            write!(f, "{}", self.pid.get())
        }
    }
}

/// A finite sequence of steps.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Schedule(Vec<Step>);

impl Schedule {
    pub fn new() -> Self {
        Schedule(Vec::new())
    }

    pub fn from_steps(steps: Vec<Step>) -> Self {
        Schedule(steps)
    }

    /// A schedule of normal steps by the given processes, in order.
    pub fn of(pids: impl IntoIterator<Item = ProcessId>) -> Self {
        Schedule(pids.into_iter().map(Step::normal).collect())
    }

    pub fn steps(&self) -> &[Step] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn push(&mut self, step: Step) {
        self.0.push(step);
    }

    pub fn extend_from(&mut self, other: &Schedule) {
        self.0.extend_from_slice(&other.0);
    }

    /// `self ∘ other`.
    pub fn concat(&self, other: &Schedule) -> Schedule {
        let mut out = self.clone();
        out.extend_from(other);
        out
    }

    /// The set `P(σ)` of processes with steps in the schedule.
    pub fn participants(&self) -> crate::ProcessSet {
        self.0.iter().map(|s| s.pid).collect()
    }
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, s) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, " ")?;
            }
            write!(f, "{s}")?;
        }
        write!(f, "]")
    }
}

impl FromIterator<Step> for Schedule {
    fn from_iter<I: IntoIterator<Item = Step>>(iter: I) -> Self {
        Schedule(iter.into_iter().collect())
    }
}
