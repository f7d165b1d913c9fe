//! Sample locks. Every one of them performs a FAS on the unowned `cs`
//! register while in the critical section.

use super::{PendingAction, Program};
use crate::model::{LocalState, Operation, ProcessId, RegisterId, RegisterSpec, Response, Value};

fn value(resp: Option<&Response>) -> Result<&Value, String> {
    match resp {
        Some(Response::Value(v)) => Ok(v),
        other => Err(format!("expected a value response, got {other:?}")),
    }
}

fn flag(resp: Option<&Response>) -> Result<bool, String> {
    match resp {
        Some(Response::Bool(b)) => Ok(*b),
        other => Err(format!("expected a CAS response, got {other:?}")),
    }
}

fn bad_pc(pc: u32) -> String {
    format!("no action at pc {pc}")
}

fn mem(op: Operation, reg: RegisterId) -> Result<PendingAction, String> {
    Ok(PendingAction::mem(op, reg))
}

fn me(pid: ProcessId) -> Value {
    Value::pid(pid)
}

fn pid_of(v: &Value) -> Result<ProcessId, String> {
    match v {
        Value::Int(x) if *x >= 1 => Ok(ProcessId::new(*x as u32)),
        other => Err(format!("{other} is not a process id")),
    }
}

/// Test-and-set style lock on a single register.
///
/// ```text
/// 0: CAS(lock, ⊥, me) -> 2 on success, else 1
/// 1: read lock        -> 0 if ⊥, else 1
/// 2: EnterCS   3: FAS(cs, me)   4: LeaveCS   5: FAS(lock, ⊥)   6: Complete
/// 8 (recover): read lock -> 2 if it holds me, else 0
/// ```
#[derive(Clone, Copy, Debug, Default)]
pub struct CasOwnerLock;

impl CasOwnerLock {
    pub const LOCK: RegisterId = RegisterId(0);
    pub const CS: RegisterId = RegisterId(1);
}

impl Program for CasOwnerLock {
    fn name(&self) -> &str {
        "cas-owner-lock"
    }

    fn layout(&self, _n: usize) -> Vec<RegisterSpec> {
        vec![
            RegisterSpec::new(0, "lock", None, Value::Null),
            RegisterSpec::new(1, "cs", None, Value::Int(0)),
        ]
    }

    fn initial_state(&self, _pid: ProcessId) -> LocalState {
        LocalState::at(0)
    }

    fn recover_state(&self, _pid: ProcessId) -> LocalState {
        LocalState::at(8)
    }

    fn action(&self, pid: ProcessId, s: &LocalState) -> Result<PendingAction, String> {
        match s.pc {
            0 => mem(
                Operation::Cas {
                    expected: Value::Null,
                    new: me(pid),
                },
                Self::LOCK,
            ),
            1 | 8 => mem(Operation::Read, Self::LOCK),
            2 => Ok(PendingAction::EnterCs),
            3 => mem(Operation::Fas(me(pid)), Self::CS),
            4 => Ok(PendingAction::LeaveCs),
            5 => mem(Operation::Fas(Value::Null), Self::LOCK),
            6 => Ok(PendingAction::CompleteSuperPassage),
            pc => Err(bad_pc(pc)),
        }
    }

    fn advance(&self, pid: ProcessId, s: &LocalState, r: Option<&Response>) -> Result<LocalState, String> {
        let next = match s.pc {
            0 => {
                if flag(r)? {
                    2
                } else {
                    1
                }
            }
            1 => {
                if *value(r)? == Value::Null {
                    0
                } else {
                    1
                }
            }
            8 => {
                if *value(r)? == me(pid) {
                    2
                } else {
                    0
                }
            }
            pc @ 2..=6 => pc + 1,
            pc => return Err(bad_pc(pc)),
        };
        Ok(LocalState::at(next))
    }
}

/// Read the lock until it looks free, then CAS it.
#[derive(Clone, Copy, Debug, Default)]
pub struct TtasLock;

impl Program for TtasLock {
    fn name(&self) -> &str {
        "ttas-lock"
    }

    fn layout(&self, n: usize) -> Vec<RegisterSpec> {
        CasOwnerLock.layout(n)
    }

    fn initial_state(&self, _pid: ProcessId) -> LocalState {
        LocalState::at(0)
    }

    fn recover_state(&self, _pid: ProcessId) -> LocalState {
        LocalState::at(8)
    }

    fn action(&self, pid: ProcessId, s: &LocalState) -> Result<PendingAction, String> {
        match s.pc {
            0 | 8 => mem(Operation::Read, CasOwnerLock::LOCK),
            1 => mem(
                Operation::Cas {
                    expected: Value::Null,
                    new: me(pid),
                },
                CasOwnerLock::LOCK,
            ),
            2..=6 => CasOwnerLock.action(pid, s),
            pc => Err(bad_pc(pc)),
        }
    }

    fn advance(&self, pid: ProcessId, s: &LocalState, r: Option<&Response>) -> Result<LocalState, String> {
        let next = match s.pc {
            0 => {
                if *value(r)? == Value::Null {
                    1
                } else {
                    0
                }
            }
            1 => {
                if flag(r)? {
                    2
                } else {
                    0
                }
            }
            8 => {
                if *value(r)? == me(pid) {
                    2
                } else {
                    0
                }
            }
            pc @ 2..=6 => pc + 1,
            pc => return Err(bad_pc(pc)),
        };
        Ok(LocalState::at(next))
    }
}

/// Announces arrival with a FAI on one of two counters (by pid parity),
/// then runs the [`CasOwnerLock`] protocol. Recovery skips the counter.
#[derive(Clone, Copy, Debug, Default)]
pub struct CountingCasLock;

impl CountingCasLock {
    fn counter(pid: ProcessId) -> RegisterId {
        RegisterId(2 + pid.get() % 2)
    }
}

impl Program for CountingCasLock {
    fn name(&self) -> &str {
        "counting-cas-lock"
    }

    fn layout(&self, n: usize) -> Vec<RegisterSpec> {
        let mut regs = CasOwnerLock.layout(n);
        regs.push(RegisterSpec::new(2, "arrivals0", None, Value::Int(0)));
        regs.push(RegisterSpec::new(3, "arrivals1", None, Value::Int(0)));
        regs
    }

    fn initial_state(&self, _pid: ProcessId) -> LocalState {
        LocalState::at(0)
    }

    fn recover_state(&self, _pid: ProcessId) -> LocalState {
        LocalState::at(9)
    }

    // pc 1..=7 and 9 map onto the CAS lock's 0..=6 and 8.
    fn action(&self, pid: ProcessId, s: &LocalState) -> Result<PendingAction, String> {
        match s.pc {
            0 => mem(Operation::Fai, Self::counter(pid)),
            pc @ (1..=7 | 9) => CasOwnerLock.action(pid, &LocalState::at(pc - 1)),
            pc => Err(bad_pc(pc)),
        }
    }

    fn advance(&self, pid: ProcessId, s: &LocalState, r: Option<&Response>) -> Result<LocalState, String> {
        match s.pc {
            0 => {
                value(r)?;
                Ok(LocalState::at(1))
            }
            pc @ (1..=7 | 9) => {
                let inner = CasOwnerLock.advance(pid, &LocalState::at(pc - 1), r)?;
                Ok(LocalState::at(inner.pc + 1))
            }
            pc => Err(bad_pc(pc)),
        }
    }
}

/// CLH-style queue lock. `flag[p]` lives in `p`'s segment; a waiter spins
/// on its predecessor's flag. Recovery restarts the entry section, so a
/// crash of a queued process can wedge the queue.
///
/// ```text
/// 0: FAS(flag[me], 1)   1: pred := FAS(tail, me) -> 3 if ⊥, else 2
/// 2: read flag[pred] -> 3 if 0, else 2
/// 3: EnterCS   4: FAS(cs, me)   5: LeaveCS   6: FAS(flag[me], 0)   7: Complete
/// ```
#[derive(Clone, Copy, Debug, Default)]
pub struct FasQueueLock;

impl FasQueueLock {
    pub const TAIL: RegisterId = RegisterId(0);
    pub const CS: RegisterId = RegisterId(1);

    pub fn flag(pid: ProcessId) -> RegisterId {
        RegisterId(2 + pid.index() as u32)
    }
}

impl Program for FasQueueLock {
    fn name(&self) -> &str {
        "fas-queue-lock"
    }

    fn layout(&self, n: usize) -> Vec<RegisterSpec> {
        let mut regs = vec![
            RegisterSpec::new(0, "tail", None, Value::Null),
            RegisterSpec::new(1, "cs", None, Value::Int(0)),
        ];
        for i in 0..n {
            let p = ProcessId::from_index(i);
            regs.push(RegisterSpec::new(
                Self::flag(p).0,
                format!("flag[{}]", p.get()),
                Some(p),
                Value::Int(0),
            ));
        }
        regs
    }

    fn initial_state(&self, _pid: ProcessId) -> LocalState {
        LocalState::at(0)
    }

    fn recover_state(&self, _pid: ProcessId) -> LocalState {
        LocalState::at(0)
    }

    fn action(&self, pid: ProcessId, s: &LocalState) -> Result<PendingAction, String> {
        match s.pc {
            0 => mem(Operation::Fas(Value::Int(1)), Self::flag(pid)),
            1 => mem(Operation::Fas(me(pid)), Self::TAIL),
            2 => mem(Operation::Read, Self::flag(pid_of(s.var(0))?)),
            3 => Ok(PendingAction::EnterCs),
            4 => mem(Operation::Fas(me(pid)), Self::CS),
            5 => Ok(PendingAction::LeaveCs),
            6 => mem(Operation::Fas(Value::Int(0)), Self::flag(pid)),
            7 => Ok(PendingAction::CompleteSuperPassage),
            pc => Err(bad_pc(pc)),
        }
    }

    fn advance(&self, _pid: ProcessId, s: &LocalState, r: Option<&Response>) -> Result<LocalState, String> {
        Ok(match s.pc {
            1 => {
                let pred = value(r)?;
                if *pred == Value::Null {
                    LocalState::at(3)
                } else {
                    LocalState::with_vars(2, vec![pred.clone()])
                }
            }
            2 => {
                if *value(r)? == Value::Int(0) {
                    LocalState::at(3)
                } else {
                    s.clone()
                }
            }
            pc @ (0 | 3..=7) => LocalState::at(pc + 1),
            pc => return Err(bad_pc(pc)),
        })
    }
}

/// MCS-style lock for DSM: every process owns `status`, `next` and
/// `locked`, and waits by spinning on its own `locked`.
///
/// ```text
/// 0: FAS(status, trying)  1: FAS(next[me], ⊥)  2: FAS(locked[me], 1)
/// 3: pred := FAS(tail, me) -> 6 if ⊥, else 4
/// 4: FAS(next[pred], me)  5: read locked[me] -> 6 if 0, else 5
/// 6: FAS(status, in_cs)   7: EnterCS  8: FAS(cs, me)  9: LeaveCS
/// 10: FAS(status, exiting)
/// 11: CAS(tail, me, ⊥) -> 14 on success, else 12
/// 12: succ := read next[me] -> 12 while ⊥, else 13
/// 13: FAS(locked[succ], 0)  14: FAS(status, done)  15: Complete
/// 20 (recover): read status; in_cs -> 7, exiting -> 11, done -> 15, else 0
/// ```
#[derive(Clone, Copy, Debug, Default)]
pub struct DsmLocalSpinLock;

impl DsmLocalSpinLock {
    pub const TAIL: RegisterId = RegisterId(0);
    pub const CS: RegisterId = RegisterId(1);

    fn base(pid: ProcessId) -> u32 {
        2 + 3 * pid.index() as u32
    }

    pub fn status(pid: ProcessId) -> RegisterId {
        RegisterId(Self::base(pid))
    }

    pub fn next(pid: ProcessId) -> RegisterId {
        RegisterId(Self::base(pid) + 1)
    }

    pub fn locked(pid: ProcessId) -> RegisterId {
        RegisterId(Self::base(pid) + 2)
    }
}

impl Program for DsmLocalSpinLock {
    fn name(&self) -> &str {
        "dsm-local-spin-lock"
    }

    fn layout(&self, n: usize) -> Vec<RegisterSpec> {
        let mut regs = vec![
            RegisterSpec::new(0, "tail", None, Value::Null),
            RegisterSpec::new(1, "cs", None, Value::Int(0)),
        ];
        for i in 0..n {
            let p = ProcessId::from_index(i);
            let id = p.get();
            regs.push(RegisterSpec::new(
                Self::status(p).0,
                format!("status[{id}]"),
                Some(p),
                Value::sym("idle"),
            ));
            regs.push(RegisterSpec::new(
                Self::next(p).0,
                format!("next[{id}]"),
                Some(p),
                Value::Null,
            ));
            regs.push(RegisterSpec::new(
                Self::locked(p).0,
                format!("locked[{id}]"),
                Some(p),
                Value::Int(0),
            ));
        }
        regs
    }

    fn initial_state(&self, _pid: ProcessId) -> LocalState {
        LocalState::at(0)
    }

    fn recover_state(&self, _pid: ProcessId) -> LocalState {
        LocalState::at(20)
    }

    fn action(&self, pid: ProcessId, s: &LocalState) -> Result<PendingAction, String> {
        match s.pc {
            0 => mem(Operation::Fas(Value::sym("trying")), Self::status(pid)),
            1 => mem(Operation::Fas(Value::Null), Self::next(pid)),
            2 => mem(Operation::Fas(Value::Int(1)), Self::locked(pid)),
            3 => mem(Operation::Fas(me(pid)), Self::TAIL),
            4 => mem(Operation::Fas(me(pid)), Self::next(pid_of(s.var(0))?)),
            5 => mem(Operation::Read, Self::locked(pid)),
            6 => mem(Operation::Fas(Value::sym("in_cs")), Self::status(pid)),
            7 => Ok(PendingAction::EnterCs),
            8 => mem(Operation::Fas(me(pid)), Self::CS),
            9 => Ok(PendingAction::LeaveCs),
            10 => mem(Operation::Fas(Value::sym("exiting")), Self::status(pid)),
            11 => mem(
                Operation::Cas {
                    expected: me(pid),
                    new: Value::Null,
                },
                Self::TAIL,
            ),
            12 => mem(Operation::Read, Self::next(pid)),
            13 => mem(Operation::Fas(Value::Int(0)), Self::locked(pid_of(s.var(0))?)),
            14 => mem(Operation::Fas(Value::sym("done")), Self::status(pid)),
            15 => Ok(PendingAction::CompleteSuperPassage),
            20 => mem(Operation::Read, Self::status(pid)),
            pc => Err(bad_pc(pc)),
        }
    }

    fn advance(&self, _pid: ProcessId, s: &LocalState, r: Option<&Response>) -> Result<LocalState, String> {
        Ok(match s.pc {
            3 => {
                let pred = value(r)?;
                if *pred == Value::Null {
                    LocalState::at(6)
                } else {
                    LocalState::with_vars(4, vec![pred.clone()])
                }
            }
            4 => LocalState::at(5),
            5 => {
                if *value(r)? == Value::Int(0) {
                    LocalState::at(6)
                } else {
                    s.clone()
                }
            }
            11 => {
                if flag(r)? {
                    LocalState::at(14)
                } else {
                    LocalState::at(12)
                }
            }
            12 => {
                let succ = value(r)?;
                if *succ == Value::Null {
                    s.clone()
                } else {
                    LocalState::with_vars(13, vec![succ.clone()])
                }
            }
            13 => LocalState::at(14),
            20 => match value(r)? {
                Value::Sym(x) if x == "in_cs" => LocalState::at(7),
                Value::Sym(x) if x == "exiting" => LocalState::at(11),
                Value::Sym(x) if x == "done" => LocalState::at(15),
                _ => LocalState::at(0),
            },
            pc @ (0..=2 | 6..=10 | 14 | 15) => LocalState::at(pc + 1),
            pc => return Err(bad_pc(pc)),
        })
    }
}

/// A lock that does not exclude anyone: each process CASes a slot of its
/// own instead of a shared lock word, so every CAS succeeds.
#[derive(Clone, Copy, Debug, Default)]
pub struct BrokenLock;

impl BrokenLock {
    pub const CS: RegisterId = RegisterId(0);

    pub fn slot(pid: ProcessId) -> RegisterId {
        RegisterId(1 + pid.index() as u32)
    }
}

impl Program for BrokenLock {
    fn name(&self) -> &str {
        "broken-lock"
    }

    fn layout(&self, n: usize) -> Vec<RegisterSpec> {
        let mut regs = vec![RegisterSpec::new(0, "cs", None, Value::Int(0))];
        for i in 0..n {
            let p = ProcessId::from_index(i);
            regs.push(RegisterSpec::new(
                Self::slot(p).0,
                format!("lock[{}]", p.get()),
                None,
                Value::Null,
            ));
        }
        regs
    }

    fn initial_state(&self, _pid: ProcessId) -> LocalState {
        LocalState::at(0)
    }

    fn recover_state(&self, _pid: ProcessId) -> LocalState {
        LocalState::at(8)
    }

    fn action(&self, pid: ProcessId, s: &LocalState) -> Result<PendingAction, String> {
        let slot = Self::slot(pid);
        match s.pc {
            0 => mem(
                Operation::Cas {
                    expected: Value::Null,
                    new: me(pid),
                },
                slot,
            ),
            1 | 8 => mem(Operation::Read, slot),
            2 => Ok(PendingAction::EnterCs),
            3 => mem(Operation::Fas(me(pid)), Self::CS),
            4 => Ok(PendingAction::LeaveCs),
            5 => mem(Operation::Fas(Value::Null), slot),
            6 => Ok(PendingAction::CompleteSuperPassage),
            pc => Err(bad_pc(pc)),
        }
    }

    fn advance(&self, pid: ProcessId, s: &LocalState, r: Option<&Response>) -> Result<LocalState, String> {
        CasOwnerLock.advance(pid, s, r)
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::model::{MemoryModel, Schedule, Section, Step, System};

    fn p(i: u32) -> ProcessId {
        ProcessId::new(i)
    }

    fn solo(prog: Arc<dyn Program>, n: usize, model: MemoryModel, pid: ProcessId, max: usize) -> usize {
        let sys = System::new(prog, n, model).unwrap();
        let mut c = sys.initial_config();
        for i in 0..max {
            if c.finished().contains(pid) {
                return i;
            }
            sys.step(&mut c, Step::normal(pid)).unwrap();
        }
        panic!("{pid} did not finish alone within {max} steps");
    }

    #[test]
    fn every_sample_finishes_solo() {
        for prog in [
            Arc::new(CasOwnerLock) as Arc<dyn Program>,
            Arc::new(TtasLock),
            Arc::new(CountingCasLock),
            Arc::new(FasQueueLock),
            Arc::new(DsmLocalSpinLock),
            Arc::new(BrokenLock),
        ] {
            for model in [MemoryModel::Cc, MemoryModel::Dsm] {
                let steps = solo(prog.clone(), 3, model, p(2), 50);
                assert!(steps > 3, "{}", prog.name());
            }
        }
    }

    #[test]
    fn fresh_cas_lock_process_is_poised_on_cas() {
        let sys = System::new(Arc::new(CasOwnerLock), 2, MemoryModel::Cc).unwrap();
        let c = sys.initial_config();
        assert_eq!(
            sys.pending(&c, p(1)).unwrap(),
            PendingAction::mem(
                Operation::Cas {
                    expected: Value::Null,
                    new: Value::Int(1)
                },
                CasOwnerLock::LOCK
            )
        );
    }

    #[test]
    fn cas_lock_holder_resumes_cs_after_crash() {
        let sys = System::new(Arc::new(CasOwnerLock), 2, MemoryModel::Cc).unwrap();
        let sched = Schedule::from_steps(vec![Step::normal(p(1)), Step::normal(p(1)), Step::crash(p(1))]);
        let (c, _) = sys.run(&sched).unwrap();
        assert_eq!(c.section(p(1)), Section::Recover);
        assert_eq!(
            sys.pending(&c, p(1)).unwrap(),
            PendingAction::mem(Operation::Read, CasOwnerLock::LOCK)
        );
        let (c, _) = sys.execute(&c, &Schedule::of([p(1), p(1)])).unwrap();
        assert_eq!(c.section(p(1)), Section::Cs);
    }

    #[test]
    fn dsm_spin_lock_prefix_is_local() {
        let sys = System::new(Arc::new(DsmLocalSpinLock), 3, MemoryModel::Dsm).unwrap();
        let mut c = sys.initial_config();
        let mut local = 0;
        while !sys.next_step_rmr(&c, p(2)).unwrap() {
            sys.step(&mut c, Step::normal(p(2))).unwrap();
            local += 1;
        }
        assert_eq!(local, 3);
    }

    #[test]
    fn dsm_spin_lock_hands_off() {
        let sys = System::new(Arc::new(DsmLocalSpinLock), 2, MemoryModel::Dsm).unwrap();
        let mut sched = Schedule::of([p(1); 6]); // p1 through its entry, into CS
        sched.extend_from(&Schedule::of([p(2); 6])); // p2 enqueues and starts spinning
        let (c, _) = sys.run(&sched).unwrap();
        assert_eq!(c.section(p(1)), Section::Cs);
        assert_eq!(c.section(p(2)), Section::Entry);
        let mut c = c;
        for _ in 0..12 {
            if !c.finished().contains(p(1)) {
                sys.step(&mut c, Step::normal(p(1))).unwrap();
            }
        }
        assert!(c.finished().contains(p(1)));
        for _ in 0..4 {
            sys.step(&mut c, Step::normal(p(2))).unwrap();
        }
        assert_eq!(c.section(p(2)), Section::Cs);
    }

    #[test]
    fn broken_lock_lets_two_in() {
        let sys = System::new(Arc::new(BrokenLock), 2, MemoryModel::Cc).unwrap();
        let (c, _) = sys.run(&Schedule::of([p(1), p(2), p(1), p(2)])).unwrap();
        assert_eq!(c.cs_occupants().len(), 2);
    }
}
