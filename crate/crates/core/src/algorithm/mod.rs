//! Algorithms as deterministic per-process state machines.
//!
//! A [`Program`] says what a process is about to do given its local state,
//! and how the local state changes once the harness has executed that
//! action. Section labels are harness-visible: programs emit `EnterCs`,
//! `LeaveCs` and `CompleteSuperPassage` explicitly.

mod samples;
mod scripted;

pub use samples::{BrokenLock, CasOwnerLock, CountingCasLock, DsmLocalSpinLock, FasQueueLock, TtasLock};
pub use scripted::{MemOp, ScriptedProgram};

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::model::{EventOp, LocalState, Operation, ProcessId, RegisterId, RegisterSpec, Response, Trace};

/// What a process does on its next normal step.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PendingAction {
    MemOp { op: Operation, reg: RegisterId },
    EnterCs,
    LeaveCs,
    CompleteSuperPassage,
}

impl PendingAction {
    pub fn mem(op: Operation, reg: RegisterId) -> Self {
        PendingAction::MemOp { op, reg }
    }

    pub fn register(&self) -> Option<RegisterId> {
        match self {
            PendingAction::MemOp { reg, .. } => Some(*reg),
            _ => None,
        }
    }

    pub fn operation(&self) -> Option<&Operation> {
        match self {
            PendingAction::MemOp { op, .. } => Some(op),
            _ => None,
        }
    }
}

impl fmt::Display for PendingAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PendingAction::MemOp { op, reg } => write!(f, "{op:?} on {reg}"),
            PendingAction::EnterCs => write!(f, "EnterCS"),
            PendingAction::LeaveCs => write!(f, "LeaveCS"),
            PendingAction::CompleteSuperPassage => write!(f, "CompleteSuperPassage"),
        }
    }
}

/// A per-process program. Implementations must be pure: the same
/// `(pid, state, response)` always yields the same result.
pub trait Program: Send + Sync {
    fn name(&self) -> &str;

    /// Registers used by an `n`-process instance. Ids must be `0..m`.
    fn layout(&self, n: usize) -> Vec<RegisterSpec>;

    fn initial_state(&self, pid: ProcessId) -> LocalState;

    /// State a process resumes from after a crash.
    fn recover_state(&self, pid: ProcessId) -> LocalState;

    fn action(&self, pid: ProcessId, state: &LocalState) -> Result<PendingAction, String>;

    /// State after the pending action has executed. `response` is `Some`
    /// exactly for register operations.
    fn advance(&self, pid: ProcessId, state: &LocalState, response: Option<&Response>) -> Result<LocalState, String>;
}

type Factory = fn() -> Arc<dyn Program>;

fn catalog() -> BTreeMap<&'static str, (Factory, &'static str)> {
    let mut m: BTreeMap<&'static str, (Factory, &'static str)> = BTreeMap::new();
    m.insert(
        "cas-owner-lock",
        (
            || Arc::new(CasOwnerLock),
            "CAS(⊥→pid) acquisition with read spin; Recover resumes the CS if it holds the lock",
        ),
    );
    m.insert(
        "fas-queue-lock",
        (
            || Arc::new(FasQueueLock),
            "CLH-style FAS queue lock, restart on recover (crash-fragile)",
        ),
    );
    m.insert(
        "dsm-local-spin-lock",
        (
            || Arc::new(DsmLocalSpinLock),
            "MCS-style lock spinning on owned registers, handed off via FAS",
        ),
    );
    m.insert(
        "ttas-lock",
        (
            || Arc::new(TtasLock),
            "test-and-test-and-set lock: read the lock, then CAS it",
        ),
    );
    m.insert(
        "counting-cas-lock",
        (
            || Arc::new(CountingCasLock),
            "FAI on one of two arrival counters, then cas-owner-lock",
        ),
    );
    m.insert(
        "broken-lock",
        (
            || Arc::new(BrokenLock),
            "deliberately unsafe: each process CASes its own slot instead of the shared lock",
        ),
    );
    m
}

/// Names of every catalogued program, sorted.
pub fn algorithm_names() -> Vec<&'static str> {
    catalog().keys().copied().collect()
}

/// `(name, description)` pairs, sorted by name.
pub fn describe_algorithms() -> Vec<(&'static str, &'static str)> {
    catalog().into_iter().map(|(k, (_, d))| (k, d)).collect()
}

pub fn by_name(name: &str) -> Option<Arc<dyn Program>> {
    catalog().get(name).map(|(f, _)| f())
}

/// Trace-level view of the three standing assumptions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssumptionReport {
    /// Every completed CS visit contains an RMR by the occupant.
    pub a1_ok: bool,
    /// Largest number of RMRs seen in one passage.
    pub a2_max: u64,
    pub a2_budget: u64,
    pub a2_ok: bool,
    /// No process starts a second super-passage.
    pub a3_ok: bool,
}

impl AssumptionReport {
    pub fn merge(&self, other: &AssumptionReport) -> AssumptionReport {
        let a2_max = self.a2_max.max(other.a2_max);
        let a2_budget = self.a2_budget.min(other.a2_budget);
        AssumptionReport {
            a1_ok: self.a1_ok && other.a1_ok,
            a2_max,
            a2_budget,
            a2_ok: a2_max <= a2_budget,
            a3_ok: self.a3_ok && other.a3_ok,
        }
    }
}

#[derive(Default)]
struct PassageTally {
    rmrs: u64,
    in_cs: bool,
    cs_rmr: bool,
    completed: bool,
}

/// Checks the assumptions on a trace that starts from the initial
/// configuration. `budget` is the per-passage RMR allowance.
pub fn check_assumptions(trace: &Trace, n: usize, budget: u64) -> AssumptionReport {
    let mut tally: Vec<PassageTally> = (0..n).map(|_| PassageTally::default()).collect();
    let mut report = AssumptionReport {
        a1_ok: true,
        a2_max: 0,
        a2_budget: budget,
        a2_ok: true,
        a3_ok: true,
    };
    for e in trace.events() {
        let Some(t) = tally.get_mut(e.pid.index()) else {
            continue;
        };
        match &e.op {
            EventOp::Crash => {
                t.rmrs = 0;
                t.in_cs = false;
                t.cs_rmr = false;
                continue;
            }
            EventOp::EnterCs => {
                t.in_cs = true;
                t.cs_rmr = false;
            }
            EventOp::LeaveCs => {
                if t.in_cs && !t.cs_rmr {
                    report.a1_ok = false;
                }
                t.in_cs = false;
            }
            EventOp::Complete => {
                t.completed = true;
                t.rmrs = 0;
                continue;
            }
            _ => {
                if t.completed {
                    report.a3_ok = false;
                }
                if e.rmr {
                    t.rmrs += 1;
                    if t.in_cs {
                        t.cs_rmr = true;
                    }
                }
            }
        }
        report.a2_max = report.a2_max.max(t.rmrs);
    }
    report.a2_ok = report.a2_max <= budget;
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{MemoryModel, Schedule, Section, System};

    fn p(i: u32) -> ProcessId {
        ProcessId::new(i)
    }

    #[test]
    fn catalog_has_the_required_samples() {
        let names = algorithm_names();
        for want in ["cas-owner-lock", "fas-queue-lock", "dsm-local-spin-lock"] {
            assert!(names.contains(&want), "{want} missing");
            assert_eq!(by_name(want).unwrap().name(), want);
        }
        assert!(by_name("nope").is_none());
    }

    #[test]
    fn empty_trace_satisfies_everything() {
        let r = check_assumptions(&Trace::new(), 3, 2);
        assert!(r.a1_ok && r.a2_ok && r.a3_ok);
        assert_eq!(r.a2_max, 0);
    }

    #[test]
    fn cs_without_rmr_fails_a1() {
        // A process that enters and leaves the CS touching only a cached register.
        let prog = ScriptedProgram::new(
            "cs-no-rmr",
            1,
            vec![vec![
                MemOp::Op(Operation::Read, RegisterId(0)),
                MemOp::EnterCs,
                MemOp::Op(Operation::Read, RegisterId(0)),
                MemOp::LeaveCs,
                MemOp::Complete,
            ]],
        );
        let sys = System::new(Arc::new(prog), 1, MemoryModel::Cc).unwrap();
        let (c, t) = sys.run(&Schedule::of([p(1); 5])).unwrap();
        assert!(c.finished().contains(p(1)));
        let r = check_assumptions(&t, 1, 1);
        assert!(!r.a1_ok);
        assert!(r.a3_ok);
    }

    #[test]
    fn cas_lock_solo_run_satisfies_a1_and_a3() {
        let sys = System::new(by_name("cas-owner-lock").unwrap(), 2, MemoryModel::Cc).unwrap();
        let sched = Schedule::of([p(1), p(1), p(1), p(1), p(1), p(1), p(2), p(2), p(2), p(2), p(2), p(2)]);
        let (c, t) = sys.run(&sched).unwrap();
        assert_eq!(c.finished().len(), 2);
        assert_eq!(c.section(p(1)), Section::Remainder);
        let r = check_assumptions(&t, 2, 1);
        assert!(r.a1_ok && r.a3_ok);
        // CAS, FAS(cs), FAS(lock): three RMRs in one passage.
        assert_eq!(r.a2_max, 3);
        assert!(!r.a2_ok);
    }

    #[test]
    fn crash_starts_a_new_passage() {
        let sys = System::new(by_name("cas-owner-lock").unwrap(), 1, MemoryModel::Dsm).unwrap();
        let mut sched = Schedule::of([p(1), p(1)]);
        sched.push(crate::model::Step::crash(p(1)));
        let (_, t) = sys.run(&sched).unwrap();
        let r = check_assumptions(&t, 1, 5);
        assert_eq!(r.a2_max, 1);
    }
}
