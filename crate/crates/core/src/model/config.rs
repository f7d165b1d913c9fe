use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{ProcessId, RegisterId, Section, Value};
use crate::ProcessSet;

/// Program-private local variables of one process.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LocalState {
    pub pc: u32,
    pub vars: Vec<Value>,
}

impl LocalState {
    pub fn at(pc: u32) -> Self {
        LocalState { pc, vars: Vec::new() }
    }

    pub fn with_vars(pc: u32, vars: Vec<Value>) -> Self {
        LocalState { pc, vars }
    }

    pub fn var(&self, i: usize) -> &Value {
        self.vars.get(i).unwrap_or(&Value::Null)
    }
}

/// Per-process part of a configuration.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ProcessState {
    pub local: LocalState,
    pub section: Section,
    pub crashes: u32,
    /// Whether the process has ever carried the CS label.
    pub ever_cs: bool,
    /// Whether the current CS visit has incurred an RMR yet.
    pub cs_rmr: bool,
    /// Total RMRs incurred so far.
    pub rmrs: u64,
}

/// Full system snapshot.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Configuration {
    pub(crate) values: Vec<Value>,
    pub(crate) procs: Vec<ProcessState>,
    pub(crate) cache: Vec<BTreeSet<RegisterId>>,
    pub(crate) last_accessor: Vec<Option<ProcessId>>,
    pub(crate) touched: Vec<ProcessSet>,
    pub(crate) finished: ProcessSet,
}

/// The part of a configuration that decides future behaviour; used to
/// memoize state-space exploration. Counters and access history are
/// dropped.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CanonicalConfig {
    values: Vec<Value>,
    procs: Vec<(LocalState, Section, u32, bool)>,
    cache: Vec<BTreeSet<RegisterId>>,
    finished: ProcessSet,
}

impl Configuration {
    pub fn n(&self) -> usize {
        self.procs.len()
    }

    /// `val_R`.
    pub fn value(&self, reg: RegisterId) -> &Value {
        &self.values[reg.0 as usize]
    }

    pub fn values(&self) -> &[Value] {
        &self.values
    }

    pub fn process(&self, pid: ProcessId) -> &ProcessState {
        &self.procs[pid.index()]
    }

    pub fn section(&self, pid: ProcessId) -> Section {
        self.procs[pid.index()].section
    }

    /// `state_p`: the comparable state of a process (local variables,
    /// section label and whether it has finished).
    pub fn state_of(&self, pid: ProcessId) -> (&LocalState, Section, bool) {
        let p = &self.procs[pid.index()];
        (&p.local, p.section, self.finished.contains(pid))
    }

    /// `last_R`.
    pub fn last_accessor(&self, reg: RegisterId) -> Option<ProcessId> {
        self.last_accessor[reg.0 as usize]
    }

    /// Processes that have performed any operation on `reg`.
    pub fn touched_by(&self, reg: RegisterId) -> ProcessSet {
        self.touched[reg.0 as usize]
    }

    /// `F`.
    pub fn finished(&self) -> ProcessSet {
        self.finished
    }

    pub fn valid_cache(&self, pid: ProcessId) -> &BTreeSet<RegisterId> {
        &self.cache[pid.index()]
    }

    pub fn crash_count(&self, pid: ProcessId) -> u32 {
        self.procs[pid.index()].crashes
    }

    pub fn rmr_total(&self, pid: ProcessId) -> u64 {
        self.procs[pid.index()].rmrs
    }

    pub fn register_count(&self) -> usize {
        self.values.len()
    }

    /// Processes currently labelled CS.
    pub fn cs_occupants(&self) -> ProcessSet {
        self.procs
            .iter()
            .enumerate()
            .filter(|(_, p)| p.section == Section::Cs)
            .map(|(i, _)| ProcessId::from_index(i))
            .collect()
    }

    pub fn canonical(&self) -> CanonicalConfig {
        CanonicalConfig {
            values: self.values.clone(),
            procs: self
                .procs
                .iter()
                .map(|p| (p.local.clone(), p.section, p.crashes, p.cs_rmr))
                .collect(),
            cache: self.cache.clone(),
            finished: self.finished,
        }
    }
}
