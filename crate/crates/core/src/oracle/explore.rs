use std::collections::{HashMap, HashSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{CanonicalConfig, Configuration, EventOp, MemoryModel, ModelError, Schedule, Step, System, Trace};

pub const SAFETY_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExplorationBounds {
    pub max_depth: usize,
    pub max_crashes_per_process: u32,
    /// Crash-free round-robin steps a state gets to show progress.
    pub fairness_window: usize,
    pub node_cap: usize,
}

impl Default for ExplorationBounds {
    fn default() -> Self {
        ExplorationBounds {
            max_depth: 60,
            max_crashes_per_process: 1,
            fairness_window: 64,
            node_cap: 2_000_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum PropertyVerdict {
    Pass,
    Fail { schedule: Schedule, trace: Trace },
}

impl PropertyVerdict {
    pub fn is_pass(&self) -> bool {
        matches!(self, PropertyVerdict::Pass)
    }
}

/// A reachable state from which crash-free round-robin scheduling made no
/// progress (no CS entry, no completed super-passage) within the window.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stall {
    pub depth: usize,
    pub schedule: Schedule,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SafetyReport {
    pub schema_version: u32,
    pub algorithm: String,
    pub n: usize,
    pub model: MemoryModel,
    pub bounds: ExplorationBounds,
    pub states_explored: usize,
    pub transitions: usize,
    /// Unfinished states left unexpanded because they sit at `max_depth`.
    pub depth_bound_hits: usize,
    pub mutual_exclusion: PropertyVerdict,
    pub a1: PropertyVerdict,
    /// Advisory; at most the first 16 are listed.
    pub stalls: Vec<Stall>,
    pub stall_count: usize,
}

impl SafetyReport {
    pub fn safe(&self) -> bool {
        self.mutual_exclusion.is_pass() && self.a1.is_pass()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("STATE_SPACE_OVERFLOW: more than {cap} states")]
    StateSpaceOverflow { cap: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

const MAX_LISTED_STALLS: usize = 16;

struct Node {
    parent: usize,
    step: Option<Step>,
    depth: usize,
}

fn path(nodes: &[Node], mut at: usize) -> Schedule {
    let mut steps = Vec::new();
    while let Some(s) = nodes[at].step {
        steps.push(s);
        at = nodes[at].parent;
    }
    steps.reverse();
    Schedule::from_steps(steps)
}

fn progresses(sys: &System, c: &Configuration, window: usize) -> bool {
    let mut c = c.clone();
    let mut left = window;
    loop {
        let live: Vec<_> = sys.pids().filter(|p| !c.finished().contains(*p)).collect();
        if live.is_empty() {
            return true;
        }
        for p in live {
            if left == 0 {
                return false;
            }
            left -= 1;
            match sys.step(&mut c, Step::normal(p)) {
                Ok(e) if matches!(e.op, EventOp::EnterCs | EventOp::Complete) => return true,
                Ok(_) => {}
                // A faulting program is not stuck in the liveness sense.
                Err(_) => return true,
            }
        }
    }
}

/// Breadth-first search over every schedule of at most `max_depth` steps
/// with at most `max_crashes_per_process` crashes each, memoized on the
/// canonical configuration.
pub fn explore(sys: &System, bounds: ExplorationBounds) -> Result<SafetyReport, OracleError> {
    explore_states(sys, bounds).map(|(r, _)| r)
}

/// [`explore`], also returning the set of visited configurations.
pub fn explore_states(
    sys: &System,
    bounds: ExplorationBounds,
) -> Result<(SafetyReport, HashSet<CanonicalConfig>), OracleError> {
    let c0 = sys.initial_config();
    let mut nodes = vec![Node {
        parent: 0,
        step: None,
        depth: 0,
    }];
    let mut seen: HashMap<CanonicalConfig, usize> = HashMap::new();
    seen.insert(c0.canonical(), 0);
    let mut queue = VecDeque::from([(0usize, c0)]);
    let mut report = SafetyReport {
        schema_version: SAFETY_SCHEMA_VERSION,
        algorithm: sys.program().name().to_string(),
        n: sys.n(),
        model: sys.model(),
        bounds,
        states_explored: 0,
        transitions: 0,
        depth_bound_hits: 0,
        mutual_exclusion: PropertyVerdict::Pass,
        a1: PropertyVerdict::Pass,
        stalls: Vec::new(),
        stall_count: 0,
    };
    let fail = |nodes: &[Node], at: usize, step: Step| -> Result<PropertyVerdict, OracleError> {
        let mut sched = path(nodes, at);
        sched.push(step);
        let (_, trace) = sys.run(&sched)?;
        Ok(PropertyVerdict::Fail { schedule: sched, trace })
    };

    while let Some((id, c)) = queue.pop_front() {
        report.states_explored += 1;
        let depth = nodes[id].depth;
        let live: Vec<_> = sys.pids().filter(|p| !c.finished().contains(*p)).collect();
        if live.is_empty() {
            continue;
        }
        if bounds.fairness_window > 0 && !progresses(sys, &c, bounds.fairness_window) {
            report.stall_count += 1;
            if report.stalls.len() < MAX_LISTED_STALLS {
                report.stalls.push(Stall {
                    depth,
                    schedule: path(&nodes, id),
                });
            }
        }
        if depth >= bounds.max_depth {
            report.depth_bound_hits += 1;
            continue;
        }
        for p in live {
            let mut steps = vec![Step::normal(p)];
            if c.crash_count(p) < bounds.max_crashes_per_process {
                steps.push(Step::crash(p));
            }
            for step in steps {
                let mut next = c.clone();
                let had_rmr = c.process(p).cs_rmr;
                let e = sys.step(&mut next, step)?;
                report.transitions += 1;
                if next.cs_occupants().len() > 1 && report.mutual_exclusion.is_pass() {
                    report.mutual_exclusion = fail(&nodes, id, step)?;
                }
                if e.op == EventOp::LeaveCs && !had_rmr && report.a1.is_pass() {
                    report.a1 = fail(&nodes, id, step)?;
                }
                let key = next.canonical();
                if seen.contains_key(&key) {
                    continue;
                }
                if seen.len() >= bounds.node_cap {
                    return Err(OracleError::StateSpaceOverflow { cap: bounds.node_cap });
                }
                nodes.push(Node {
                    parent: id,
                    step: Some(step),
                    depth: depth + 1,
                });
                seen.insert(key, nodes.len() - 1);
                queue.push_back((nodes.len() - 1, next));
            }
        }
    }
    Ok((report, seen.into_keys().collect()))
}
