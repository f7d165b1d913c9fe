use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::algorithm::PendingAction;
use crate::model::{Configuration, OpKind, Operation, ProcessId, RegisterId, System};
use crate::ProcessSet;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoisedOp {
    pub op: Operation,
    pub reg: RegisterId,
}

impl PoisedOp {
    pub fn kind(&self) -> OpKind {
        self.op.kind()
    }
}

/// Who is about to do what, and the access history the phases consult.
/// Kept free of [`ProcessSet`] so synthetic snapshots can exceed the
/// simulator's process limit.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PoisedSnapshot {
    pub poised: BTreeMap<ProcessId, PoisedOp>,
    pub owners: BTreeMap<RegisterId, ProcessId>,
    pub last: BTreeMap<RegisterId, ProcessId>,
    pub touched: BTreeMap<RegisterId, BTreeSet<ProcessId>>,
}

impl PoisedSnapshot {
    /// Reads the pending operations of `active` at `config`. `Err` names a
    /// process whose next step is not a register operation.
    pub fn capture(sys: &System, config: &Configuration, active: ProcessSet) -> Result<Self, (ProcessId, String)> {
        let mut poised = BTreeMap::new();
        for p in active.iter() {
            match sys.pending(config, p) {
                Ok(PendingAction::MemOp { op, reg }) => {
                    poised.insert(p, PoisedOp { op, reg });
                }
                Ok(other) => return Err((p, format!("poised on {other}, not a register operation"))),
                Err(e) => return Err((p, e.to_string())),
            }
        }
        let mut owners = BTreeMap::new();
        let mut last = BTreeMap::new();
        let mut touched = BTreeMap::new();
        for spec in sys.registers() {
            let r = spec.id;
            if let Some(o) = spec.owner {
                owners.insert(r, o);
            }
            if let Some(w) = config.last_accessor(r) {
                last.insert(r, w);
            }
            let t = config.touched_by(r);
            if !t.is_empty() {
                touched.insert(r, t.iter().collect());
            }
        }
        Ok(PoisedSnapshot {
            poised,
            owners,
            last,
            touched,
        })
    }

    pub fn target(&self, p: ProcessId) -> RegisterId {
        self.poised[&p].reg
    }

    /// `B_R` for every register someone is poised on.
    pub fn by_register(&self) -> BTreeMap<RegisterId, Vec<ProcessId>> {
        let mut b: BTreeMap<RegisterId, Vec<ProcessId>> = BTreeMap::new();
        for (p, op) in &self.poised {
            b.entry(op.reg).or_default().push(*p);
        }
        b
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Low,
    High,
    Terminated,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Decision {
    pub b: BTreeMap<RegisterId, Vec<ProcessId>>,
    pub h: BTreeSet<ProcessId>,
    pub l: BTreeSet<ProcessId>,
    pub branch: Branch,
}

/// Splits the poised processes into high-contention `H` (registers with at
/// least `k` suitors) and the rest `L`.
pub fn decide(snap: &PoisedSnapshot, k: usize) -> Decision {
    let b = snap.by_register();
    let h: BTreeSet<ProcessId> = b.values().filter(|v| v.len() >= k).flatten().copied().collect();
    let l: BTreeSet<ProcessId> = snap.poised.keys().filter(|p| !h.contains(p)).copied().collect();
    let branch = if l.len() >= h.len() { Branch::Low } else { Branch::High };
    Decision { b, h, l, branch }
}
