use std::collections::{BTreeMap, BTreeSet};

use crate::model::{EventOp, MemoryModel, ProcessId, RegisterId, Trace};

/// Recounts RMRs per process from the raw events of a trace that starts at
/// the initial configuration, ignoring the recorded `rmr` flags.
///
/// `owners` maps each owned register to its owner. `crash_clears_cache`
/// mirrors the simulator option of the same name.
pub fn recount_rmr(
    trace: &Trace,
    model: MemoryModel,
    owners: &BTreeMap<RegisterId, ProcessId>,
    crash_clears_cache: bool,
) -> BTreeMap<ProcessId, u64> {
    let mut counts: BTreeMap<ProcessId, u64> = BTreeMap::new();
    let mut cache: BTreeMap<ProcessId, BTreeSet<RegisterId>> = BTreeMap::new();
    let mut done: BTreeSet<ProcessId> = BTreeSet::new();
    for e in trace.events() {
        match (&e.op, e.reg) {
            (EventOp::Crash, _) => {
                if crash_clears_cache && !done.contains(&e.pid) {
                    cache.remove(&e.pid);
                }
            }
            (EventOp::Complete, _) => {
                done.insert(e.pid);
            }
            (op, Some(r)) => {
                let remote = match model {
                    MemoryModel::Dsm => owners.get(&r) != Some(&e.pid),
                    MemoryModel::Cc if *op == EventOp::Read => cache.entry(e.pid).or_default().insert(r),
                    MemoryModel::Cc => {
                        for c in cache.values_mut() {
                            c.remove(&r);
                        }
                        true
                    }
                };
                if remote {
                    *counts.entry(e.pid).or_insert(0) += 1;
                }
            }
            _ => {}
        }
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Event, Response, Section, Value};

    fn ev(pid: u32, op: EventOp, reg: Option<u32>) -> Event {
        Event {
            pid: ProcessId::new(pid),
            op,
            reg: reg.map(RegisterId),
            rmr: false,
            response: Some(Response::Value(Value::Null)),
            section_after: Section::Entry,
        }
    }

    #[test]
    fn cc_invalidation_forces_a_second_miss() {
        let t = Trace::from_events(vec![
            ev(1, EventOp::Read, Some(0)),
            ev(1, EventOp::Read, Some(0)),
            ev(2, EventOp::Fas(Value::Int(1)), Some(0)),
            ev(1, EventOp::Read, Some(0)),
        ]);
        let c = recount_rmr(&t, MemoryModel::Cc, &BTreeMap::new(), true);
        assert_eq!(c[&ProcessId::new(1)], 2);
        assert_eq!(c[&ProcessId::new(2)], 1);
    }

    #[test]
    fn dsm_owned_accesses_are_free() {
        let owners: BTreeMap<_, _> = [(RegisterId(0), ProcessId::new(1)), (RegisterId(1), ProcessId::new(2))].into();
        let t = Trace::from_events(vec![
            ev(1, EventOp::Read, Some(0)),
            ev(1, EventOp::Fai, Some(0)),
            ev(2, EventOp::Fas(Value::Null), Some(1)),
        ]);
        assert!(recount_rmr(&t, MemoryModel::Dsm, &owners, true).is_empty());
    }

    #[test]
    fn crash_drops_the_cache() {
        let t = Trace::from_events(vec![
            ev(1, EventOp::Read, Some(0)),
            ev(1, EventOp::Crash, None),
            ev(1, EventOp::Read, Some(0)),
        ]);
        let owners = BTreeMap::new();
        assert_eq!(recount_rmr(&t, MemoryModel::Cc, &owners, true)[&ProcessId::new(1)], 2);
        assert_eq!(recount_rmr(&t, MemoryModel::Cc, &owners, false)[&ProcessId::new(1)], 1);
    }
}
