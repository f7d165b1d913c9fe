#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use rme_core::algorithm::{by_name, MemOp, Program, ScriptedProgram};
use rme_core::compliance::ScheduleArray;
use rme_core::model::{
    MemoryModel, Operation, ProcessId, RegisterId, RegisterSpec, Schedule, Step, System, Trace, Value,
};
use rme_core::ProcessSet;

pub const LOCKS: [&str; 5] = [
    "cas-owner-lock",
    "fas-queue-lock",
    "dsm-local-spin-lock",
    "ttas-lock",
    "counting-cas-lock",
];

pub fn pid(i: u32) -> ProcessId {
    ProcessId::new(i)
}

fn random_value(rng: &mut ChaCha8Rng) -> Value {
    match rng.gen_range(0..4) {
        0 => Value::Null,
        1 => Value::sym("s"),
        _ => Value::Int(rng.gen_range(-1..3)),
    }
}

/// A scripted program over a few registers, some owned, that mixes every
/// operation kind with section transitions.
pub fn random_scripted(rng: &mut ChaCha8Rng, n: usize) -> Arc<dyn Program> {
    let regs = rng.gen_range(1..=3u32);
    let layout = (0..regs)
        .map(|r| {
            let owner = rng.gen_bool(0.5).then(|| pid(rng.gen_range(1..=n as u32)));
            RegisterSpec::new(r, format!("r{r}"), owner, random_value(rng))
        })
        .collect();
    let scripts = (0..rng.gen_range(1..=2))
        .map(|_| {
            let mut s: Vec<MemOp> = (0..rng.gen_range(1..5))
                .map(|_| {
                    let r = RegisterId(rng.gen_range(0..regs));
                    let op = match rng.gen_range(0..4) {
                        0 => Operation::Read,
                        1 => Operation::Fas(random_value(rng)),
                        2 => Operation::Fai,
                        _ => Operation::Cas {
                            expected: random_value(rng),
                            new: random_value(rng),
                        },
                    };
                    MemOp::Op(op, r)
                })
                .collect();
            if rng.gen_bool(0.5) {
                let at = rng.gen_range(0..=s.len());
                s.insert(at, MemOp::EnterCs);
                s.insert(at + 1, MemOp::Op(Operation::Fai, RegisterId(0)));
                s.insert(at + 2, MemOp::LeaveCs);
                if rng.gen_bool(0.5) {
                    s.push(MemOp::Complete);
                }
            }
            s
        })
        .collect();
    Arc::new(ScriptedProgram::with_layout("random", layout, scripts))
}

pub fn random_system(rng: &mut ChaCha8Rng, max_n: usize) -> System {
    let n = rng.gen_range(1..=max_n);
    let model = if rng.gen_bool(0.5) {
        MemoryModel::Cc
    } else {
        MemoryModel::Dsm
    };
    let prog = if rng.gen_bool(0.4) {
        random_scripted(rng, n)
    } else {
        by_name(LOCKS.choose(rng).unwrap()).unwrap()
    };
    System::new(prog, n, model).unwrap()
}

/// A random valid schedule of up to `len` steps with at most `crashes`
/// crashes per process, stopping at the first program fault.
pub fn random_run(rng: &mut ChaCha8Rng, sys: &System, len: usize, crashes: u32) -> (Schedule, Trace) {
    let mut c = sys.initial_config();
    let mut sched = Schedule::new();
    let mut trace = Trace::new();
    for _ in 0..len {
        let live: Vec<ProcessId> = sys.pids().filter(|p| !c.finished().contains(*p)).collect();
        let Some(&p) = live.choose(rng) else { break };
        let step = if c.crash_count(p) < crashes && rng.gen_bool(0.15) {
            Step::crash(p)
        } else {
            Step::normal(p)
        };
        match sys.step(&mut c, step) {
            Ok(e) => {
                trace.push(e);
                sched.push(step);
            }
            Err(_) => break,
        }
    }
    (sched, trace)
}

fn restrict(s: &Schedule, to: ProcessSet) -> Schedule {
    Schedule::from_steps(s.steps().iter().copied().filter(|st| to.contains(st.pid)).collect())
}

/// A small array built by restricting one global schedule to each subset
/// of an interval, then damaged by up to two random mutations.
pub fn random_array(rng: &mut ChaCha8Rng) -> (System, ScheduleArray) {
    let sys = random_system(rng, 3);
    let n = sys.n();
    let all = ProcessSet::full(n);
    let len = rng.gen_range(0..12);
    let (global, _) = random_run(rng, &sys, len, 1);
    let smax: ProcessSet = all.iter().filter(|_| rng.gen_bool(0.8)).collect();
    let floor: ProcessSet = smax.iter().filter(|_| rng.gen_bool(0.3)).collect();
    let mut entries = BTreeMap::new();
    for s in ProcessSet::interval(floor, smax.difference(&floor)) {
        entries.insert(s, restrict(&global, s));
    }
    let round = rng.gen_range(0..=2);
    for _ in 0..rng.gen_range(0..=2) {
        let keys: Vec<ProcessSet> = entries.keys().copied().collect();
        let Some(&k) = keys.choose(rng) else { break };
        let p = pid(rng.gen_range(1..=n as u32));
        match rng.gen_range(0..6) {
            0 => {
                entries.remove(&k);
            }
            1 => {
                let extra: ProcessSet = all.iter().filter(|_| rng.gen_bool(0.5)).collect();
                entries.insert(extra, restrict(&global, extra));
            }
            2 => {
                let mut steps = entries[&k].steps().to_vec();
                if !steps.is_empty() {
                    steps.remove(rng.gen_range(0..steps.len()));
                }
                entries.insert(k, Schedule::from_steps(steps));
            }
            3 => {
                let mut s = entries[&k].clone();
                s.push(Step::crash(p));
                entries.insert(k, s);
            }
            4 => {
                let mut s = entries[&k].clone();
                s.push(Step::normal(p));
                entries.insert(k, s);
            }
            _ => {
                let mut steps = entries[&k].steps().to_vec();
                steps.shuffle(rng);
                entries.insert(k, Schedule::from_steps(steps));
            }
        }
    }
    (sys, ScheduleArray::explicit(n, round, entries))
}
