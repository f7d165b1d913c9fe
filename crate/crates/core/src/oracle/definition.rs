//! A second, deliberately naive reading of the compliance invariants. It
//! materialises every entry, derives F, crash counts, CS visits, access
//! history and RMRs from raw traces, and compares entries pairwise.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::recount_rmr;
use crate::compliance::{Invariant, ScheduleArray, Verdict};
use crate::model::{Configuration, EventOp, MemoryModel, ProcessId, RegisterId, Schedule, System, Trace};
use crate::ProcessSet;

/// Largest array this oracle accepts.
pub const MAX_DEFINITION_ENTRIES: u128 = 512;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Pass,
    Fail,
    Skipped,
}

impl From<&Verdict> for Outcome {
    fn from(v: &Verdict) -> Self {
        match v {
            Verdict::Pass => Outcome::Pass,
            Verdict::Fail { .. } => Outcome::Fail,
            Verdict::Skipped { .. } => Outcome::Skipped,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DefinitionVerdict {
    pub outcomes: BTreeMap<Invariant, Outcome>,
    pub compliant: bool,
}

struct Run {
    s: ProcessSet,
    config: Configuration,
    trace: Trace,
}

impl Run {
    fn finished(&self) -> BTreeSet<ProcessId> {
        self.trace
            .events()
            .iter()
            .filter(|e| e.op == EventOp::Complete)
            .map(|e| e.pid)
            .collect()
    }

    fn crashes(&self, p: ProcessId) -> usize {
        self.trace
            .events()
            .iter()
            .filter(|e| e.pid == p && e.op == EventOp::Crash)
            .count()
    }

    fn entered_cs(&self, p: ProcessId) -> bool {
        self.trace
            .events()
            .iter()
            .any(|e| e.pid == p && e.op == EventOp::EnterCs)
    }

    fn last(&self, r: RegisterId) -> Option<ProcessId> {
        self.trace
            .events()
            .iter()
            .rev()
            .find(|e| e.reg == Some(r))
            .map(|e| e.pid)
    }

    fn accessors(&self, r: RegisterId) -> BTreeSet<ProcessId> {
        self.trace
            .events()
            .iter()
            .filter(|e| e.reg == Some(r))
            .map(|e| e.pid)
            .collect()
    }
}

/// Checks `array` against the invariants by brute force. Returns `None`
/// when the array has more than [`MAX_DEFINITION_ENTRIES`] entries.
pub fn compliance_by_definition(sys: &System, array: &ScheduleArray) -> Option<DefinitionVerdict> {
    let explicit = array.to_explicit(MAX_DEFINITION_ENTRIES)?;
    let entries: Vec<(ProcessSet, Schedule)> = explicit.keys().map(|k| (k, explicit.get(k).unwrap())).collect();
    let i = array.round() as u64;
    let model = sys.model();
    let owners: BTreeMap<RegisterId, ProcessId> = sys
        .registers()
        .iter()
        .filter_map(|r| r.owner.map(|o| (r.id, o)))
        .collect();
    let crash_clears = sys.options().crash_clears_cache;
    let regs: Vec<RegisterId> = sys.registers().iter().map(|r| r.id).collect();

    let mut failed: BTreeSet<Invariant> = BTreeSet::new();
    let mut runs = Vec::new();
    for (s, sched) in &entries {
        if sched.steps().iter().any(|st| !s.contains(st.pid)) {
            failed.insert(Invariant::I1);
        }
        match sys.run(sched) {
            Ok((config, trace)) => runs.push(Run { s: *s, config, trace }),
            Err(_) => {
                failed.insert(Invariant::I1);
            }
        }
    }
    for r in &runs {
        let f = r.finished();
        for p in sys.pids() {
            let c = r.crashes(p);
            if c > 1 || (c == 1 && !f.contains(&p)) {
                failed.insert(Invariant::I6);
            }
            if r.entered_cs(p) && !f.contains(&p) {
                failed.insert(Invariant::I7);
            }
        }
    }

    // I2: the keys form exactly [F(A[U]), U] for U the union of all keys.
    let keys: BTreeSet<ProcessSet> = entries.iter().map(|(s, _)| *s).collect();
    let union = keys.iter().fold(ProcessSet::EMPTY, |a, b| a.union(b));
    let top = runs.iter().find(|r| r.s == union);
    let smax_ok = top.and_then(|t| {
        let f: ProcessSet = t.finished().into_iter().collect();
        let members = union.to_vec();
        if members.len() > 9 {
            return None;
        }
        let mut want = BTreeSet::new();
        for m in 0u32..1 << members.len() {
            let s: ProcessSet = (0..members.len())
                .filter(|b| m >> b & 1 == 1)
                .map(|b| members[b])
                .collect();
            if f.is_subset(&s) {
                want.insert(s);
            }
        }
        (want == keys).then_some((t, f))
    });

    if let Some((top, f)) = smax_ok {
        let active = union.difference(&f);
        for r in &runs {
            let rf: ProcessSet = r.finished().into_iter().collect();
            if rf != f {
                failed.insert(Invariant::I4);
            }
            for p in r.s.iter() {
                if r.config.state_of(p) != top.config.state_of(p) {
                    failed.insert(Invariant::I3);
                }
            }
            let rmrs = recount_rmr(&r.trace, model, &owners, crash_clears);
            for p in r.s.difference(&rf).iter() {
                if rmrs.get(&p).copied().unwrap_or(0) < i {
                    failed.insert(Invariant::I10);
                }
            }
            if model == MemoryModel::Dsm {
                for reg in &regs {
                    if let Some(o) = owners.get(reg).filter(|o| active.contains(**o)) {
                        if r.accessors(*reg).iter().any(|q| q != o) {
                            failed.insert(Invariant::I8);
                        }
                    }
                }
            }
        }
        for reg in &regs {
            let w = top.last(*reg);
            let mut others = BTreeSet::new();
            for r in &runs {
                let v = r.config.value(*reg);
                if w.is_some_and(|w| r.s.contains(w)) {
                    if v != top.config.value(*reg) {
                        failed.insert(Invariant::I5);
                    }
                } else {
                    others.insert(v.clone());
                }
            }
            if others.len() > 1 {
                failed.insert(Invariant::I5);
            }
        }
        if model == MemoryModel::Cc {
            for p in active.iter() {
                let caches: BTreeSet<_> = runs
                    .iter()
                    .filter(|r| r.s.contains(p))
                    .map(|r| r.config.valid_cache(p))
                    .collect();
                if caches.len() > 1 {
                    failed.insert(Invariant::I9);
                }
            }
        }
    } else {
        failed.insert(Invariant::I2);
    }

    let mut outcomes = BTreeMap::new();
    for inv in Invariant::ALL {
        let o = if failed.contains(&inv) {
            Outcome::Fail
        } else if (inv == Invariant::I8 && model != MemoryModel::Dsm)
            || (inv == Invariant::I9 && model != MemoryModel::Cc)
            || (smax_ok.is_none() && !matches!(inv, Invariant::I1 | Invariant::I6 | Invariant::I7))
        {
            Outcome::Skipped
        } else {
            Outcome::Pass
        };
        outcomes.insert(inv, o);
    }
    let compliant = smax_ok.is_some() && !outcomes.values().any(|o| *o == Outcome::Fail);
    Some(DefinitionVerdict { outcomes, compliant })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algorithm::by_name;
    use crate::compliance::{check_compliance, CheckOptions};
    use crate::model::Step;

    fn sys(n: usize) -> System {
        System::new(by_name("cas-owner-lock").unwrap(), n, MemoryModel::Cc).unwrap()
    }

    #[test]
    fn base_row_passes_and_agrees() {
        let s = sys(3);
        let a = ScheduleArray::base_row(3);
        let d = compliance_by_definition(&s, &a).unwrap();
        assert!(d.compliant);
        let c = check_compliance(&s, &a, &CheckOptions::default()).unwrap();
        let mapped: BTreeMap<_, _> = c.verdicts.iter().map(|(k, v)| (*k, Outcome::from(v))).collect();
        assert_eq!(mapped, d.outcomes);
    }

    #[test]
    fn single_entry_is_self_consistent() {
        let s = sys(2);
        let p1 = ProcessId::new(1);
        let mut e = BTreeMap::new();
        e.insert(ProcessSet::EMPTY, Schedule::new());
        let a = ScheduleArray::explicit(2, 0, e.clone());
        assert!(compliance_by_definition(&s, &a).unwrap().compliant);
        // A step by a process outside the key breaks I1.
        e.insert(ProcessSet::EMPTY, Schedule::from_steps(vec![Step::normal(p1)]));
        let a = ScheduleArray::explicit(2, 0, e);
        let d = compliance_by_definition(&s, &a).unwrap();
        assert_eq!(d.outcomes[&Invariant::I1], Outcome::Fail);
    }

    #[test]
    fn too_large_arrays_are_refused() {
        let s = System::new(by_name("cas-owner-lock").unwrap(), 10, MemoryModel::Cc).unwrap();
        assert!(compliance_by_definition(&s, &ScheduleArray::base_row(10)).is_none());
    }
}
