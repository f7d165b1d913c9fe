//! The round-by-round adversary. Each round extends the previous schedule
//! array with a setup phase and then a low- or high-contention phase, so that
//! every surviving process pays one more RMR.

pub mod bounds;
pub mod high;
pub mod low;
mod phases;
pub mod poised;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bounds::BoundCheck;
pub use high::{AlphaPair, BetaCase, FilterChain, Group, Quotas, FAITHFUL_K};
pub use low::{ConflictGraph, Edge, EdgeTag};
pub use poised::{decide, Branch, Decision, PoisedOp, PoisedSnapshot};

use crate::algorithm::{self, AssumptionReport};
use crate::compliance::{check_compliance, CheckOptions, Invariant, ScheduleArray, SubstituteLayer};
use crate::model::{MemoryModel, ModelError, OpKind, ProcessId, RegisterId, System, Trace, Value};
use crate::{ProcessSet, MAX_PROCESSES};

pub const RUN_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TieBreak {
    SmallestId,
    Seeded { seed: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerifyPolicy {
    EachRound,
    Final,
    Off,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdversaryConfig {
    pub algorithm: String,
    pub n: usize,
    pub model: MemoryModel,
    pub k: usize,
    pub max_rounds: u32,
    /// Stop once fewer than this many processes are active.
    pub min_active: usize,
    /// Steps allowed for one solo run or one completion.
    pub step_budget: usize,
    /// RMRs allowed per passage before the bounds stop being asserted.
    pub a2_budget: u64,
    pub tie_break: TieBreak,
    pub verify: VerifyPolicy,
    pub check: CheckOptions,
}

/// `⌈log₂ n⌉^d`.
pub fn default_k(n: usize, d: u32) -> usize {
    (crate::ceil_log2(n) as usize).saturating_pow(d)
}

impl AdversaryConfig {
    pub fn new(algorithm: impl Into<String>, n: usize, model: MemoryModel) -> Self {
        let k = default_k(n, 1);
        AdversaryConfig {
            algorithm: algorithm.into(),
            n,
            model,
            k,
            max_rounds: 64,
            min_active: k.saturating_pow(3),
            step_budget: 10_000,
            a2_budget: crate::ceil_log2(n) as u64,
            tie_break: TieBreak::SmallestId,
            verify: VerifyPolicy::EachRound,
            check: CheckOptions::default(),
        }
    }

    /// Sets `k` and resets `min_active` to `k³`.
    pub fn with_k(mut self, k: usize) -> Self {
        self.k = k;
        self.min_active = k.saturating_pow(3);
        self
    }

    pub fn with_min_active(mut self, m: usize) -> Self {
        self.min_active = m;
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n == 0 || self.n > MAX_PROCESSES {
            return Err(ConfigError::BadN(self.n));
        }
        if self.k == 0 {
            return Err(ConfigError::BadK);
        }
        if self.min_active == 0 {
            return Err(ConfigError::BadMinActive);
        }
        if algorithm::by_name(&self.algorithm).is_none() {
            return Err(ConfigError::UnknownAlgorithm(self.algorithm.clone()));
        }
        Ok(())
    }

    pub fn system(&self) -> Result<System, ConfigError> {
        self.validate()?;
        let prog = algorithm::by_name(&self.algorithm).expect("validated");
        Ok(System::new(prog, self.n, self.model)?)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("unknown algorithm {0:?}")]
    UnknownAlgorithm(String),
    #[error("n = {0} outside 1..={MAX_PROCESSES}")]
    BadN(usize),
    #[error("k must be at least 1")]
    BadK,
    #[error("min_active must be at least 1")]
    BadMinActive,
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ErrorCode {
    SetupBudgetExceeded,
    MutualExclusionViolation,
    SetupLemmaViolation,
    LowLemmaViolation,
    HighLemmaViolation,
    CompletionStall,
    ModelError,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Error)]
#[error("{code:?} in round {round}: {message}")]
pub struct AdversaryError {
    pub code: ErrorCode,
    pub round: u32,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subset: Option<ProcessSet>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub process: Option<ProcessId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<Trace>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sizes {
    pub sigma_setup: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub evicted_setup: Option<ProcessId>,
    pub active_after_setup: usize,
    pub h: usize,
    pub l: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub edges: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub i: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub evicted_low: Option<ProcessId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h1: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h2: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h3: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h4: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h5: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h6: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub groups: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s_alpha: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s_beta: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LowDetail {
    pub l: Vec<ProcessId>,
    pub edges_by_tag: BTreeMap<EdgeTag, usize>,
    pub independent: Vec<ProcessId>,
    pub s_i: ProcessSet,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupReport {
    pub reg: RegisterId,
    pub members: Vec<ProcessId>,
    pub g_prime: Vec<ProcessId>,
    pub alpha: AlphaPair,
    pub beta1: Option<ProcessId>,
    pub case: BetaCase,
    pub v_j: Value,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HighDetail {
    pub opt_h: OpKind,
    pub quotas: Quotas,
    pub groups: Vec<GroupReport>,
    pub s_alpha: ProcessSet,
    pub s_beta: ProcessSet,
    pub d: Vec<ProcessId>,
    pub r_f: Vec<RegisterId>,
    pub sigma_f_len: usize,
    pub alpha_beta_indistinguishable: bool,
    pub exactly_group_regs_accessed: bool,
    pub f_growth: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComplianceSummary {
    pub compliant: bool,
    pub exhaustive: bool,
    pub subsets_checked: usize,
    pub failures: Vec<Invariant>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: u32,
    pub branch: Branch,
    /// The high branch was chosen but produced no usable group.
    pub fallback: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub n_prev: usize,
    pub n_i: usize,
    pub ratio: Option<f64>,
    pub smax: ProcessSet,
    pub f: ProcessSet,
    pub sizes: Sizes,
    pub bounds: Vec<BoundCheck>,
    pub assumptions: AssumptionReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub low: Option<LowDetail>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub high: Option<HighDetail>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub compliance: Option<ComplianceSummary>,
}

/// What the last completed row guarantees about its survivors.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinalWitness {
    pub round: u32,
    pub smax: ProcessSet,
    pub f: ProcessSet,
    pub active_pids: Vec<ProcessId>,
    pub rmr_counts: BTreeMap<ProcessId, u64>,
    pub crash_counts: BTreeMap<ProcessId, u32>,
    pub entered_cs: Vec<ProcessId>,
    pub rounds_completed: u32,
    /// Every active process has at least `round` RMRs, never crashed and
    /// never entered the CS.
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub config: AdversaryConfig,
    pub rounds: Vec<RoundReport>,
    pub termination: String,
    pub final_witness: Option<FinalWitness>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<AdversaryError>,
}

impl RunReport {
    pub fn rounds_completed(&self) -> u32 {
        self.rounds.iter().filter(|r| r.branch != Branch::Terminated).count() as u32
    }

    /// `i,n_i,branch,ratio`, one line per completed round.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("i,n_i,branch,ratio\n");
        for r in self.rounds.iter().filter(|r| r.branch != Branch::Terminated) {
            let branch = match r.branch {
                Branch::Low => "low",
                Branch::High => "high",
                Branch::Terminated => "terminated",
            };
            let ratio = r.ratio.map(|x| format!("{x:.6}")).unwrap_or_default();
            out.push_str(&format!("{},{},{},{}\n", r.round, r.n_i, branch, ratio));
        }
        out
    }
}

/// Enough of a high round to re-run its checks independently.
#[derive(Clone, Debug)]
pub struct HighArtifacts {
    pub round: u32,
    pub f: ProcessSet,
    pub s_alpha: ProcessSet,
    pub s_b: ProcessSet,
    pub regs: Vec<RegisterId>,
    pub high_b: ScheduleArray,
    pub layer: SubstituteLayer,
}

pub struct RunOutcome {
    pub report: RunReport,
    /// `rows[i]` is the array after round `i`; `rows[0]` is the base row.
    pub rows: Vec<ScheduleArray>,
    pub high: Vec<HighArtifacts>,
    pub system: System,
}

fn summarize(sys: &System, row: &ScheduleArray, opts: &CheckOptions) -> ComplianceSummary {
    match check_compliance(sys, row, opts) {
        Ok(r) => ComplianceSummary {
            compliant: r.compliant,
            exhaustive: r.exhaustive,
            subsets_checked: r.subsets_checked,
            failures: r.failures(),
            warnings: r.warnings,
        },
        Err(e) => ComplianceSummary {
            compliant: false,
            exhaustive: false,
            subsets_checked: 0,
            failures: Vec::new(),
            warnings: vec![e.to_string()],
        },
    }
}

/// Evaluates the survivor guarantee on `row`.
pub fn final_witness(sys: &System, row: &ScheduleArray) -> Result<FinalWitness, ModelError> {
    let (f, smax) = row.bounds().unwrap_or((ProcessSet::EMPTY, ProcessSet::EMPTY));
    let sched = row.get(smax).unwrap_or_default();
    let (c, _) = sys.run(&sched)?;
    let active = smax.difference(&f);
    let i = row.round();
    let mut w = FinalWitness {
        round: i,
        smax,
        f,
        active_pids: active.to_vec(),
        rmr_counts: BTreeMap::new(),
        crash_counts: BTreeMap::new(),
        entered_cs: Vec::new(),
        rounds_completed: i,
        holds: true,
    };
    for p in active.iter() {
        let st = c.process(p);
        w.rmr_counts.insert(p, c.rmr_total(p));
        w.crash_counts.insert(p, c.crash_count(p));
        if st.ever_cs {
            w.entered_cs.push(p);
        }
        if c.rmr_total(p) < i as u64 || c.crash_count(p) > 0 || st.ever_cs {
            w.holds = false;
        }
    }
    Ok(w)
}

/// Runs the adversary until a termination condition or an error. Errors in a
/// round end the run but keep everything built before it.
pub fn run(cfg: &AdversaryConfig) -> Result<RunOutcome, ConfigError> {
    let sys = cfg.system()?;
    let mut rows = vec![ScheduleArray::base_row(cfg.n)];
    let mut rounds = Vec::new();
    let mut high = Vec::new();
    let mut error = None;
    let mut termination = format!("reached max_rounds = {}", cfg.max_rounds);
    let mut prev_ok = true;

    for i in 1..=cfg.max_rounds {
        let prev = rows.last().unwrap();
        let (f, smax) = prev.bounds().expect("adversary rows are intervals");
        let active = smax.difference(&f).len();
        if !prev_ok {
            termination = format!("row {} is not compliant", i - 1);
            break;
        }
        if active < cfg.min_active {
            termination = format!("{active} active processes, below min_active = {}", cfg.min_active);
            break;
        }
        let rng = match cfg.tie_break {
            TieBreak::SmallestId => None,
            TieBreak::Seeded { seed } => Some(ChaCha8Rng::seed_from_u64(
                seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
            )),
        };
        let r = phases::Round {
            sys: &sys,
            cfg,
            round: i,
            rng,
        };
        match r.run(prev) {
            Ok(phases::RoundResult::Done {
                array,
                mut report,
                high: h,
            }) => {
                if cfg.verify == VerifyPolicy::EachRound {
                    let s = summarize(&sys, &array, &cfg.check);
                    prev_ok = s.compliant;
                    report.compliance = Some(s);
                }
                log::info!(
                    "round {i}: {:?}, {} -> {} active",
                    report.branch,
                    report.n_prev,
                    report.n_i
                );
                rounds.push(*report);
                high.extend(h.map(|b| *b));
                rows.push(array);
            }
            Ok(phases::RoundResult::Terminated(report)) => {
                termination = report.note.clone().unwrap_or_else(|| "terminated".into());
                rounds.push(*report);
                break;
            }
            Err(e) => {
                log::warn!("round {i} failed: {e}");
                termination = format!("error in round {i}");
                error = Some(e);
                break;
            }
        }
    }
    let last = rows.last().unwrap();
    if cfg.verify == VerifyPolicy::Final && rows.len() > 1 {
        let s = summarize(&sys, last, &cfg.check);
        if let Some(r) = rounds.iter_mut().rev().find(|r| r.branch != Branch::Terminated) {
            r.compliance = Some(s);
        }
    }
    let fw = final_witness(&sys, last).ok();
    Ok(RunOutcome {
        report: RunReport {
            schema_version: RUN_SCHEMA_VERSION,
            config: cfg.clone(),
            rounds,
            termination,
            final_witness: fw,
            error,
        },
        rows,
        high,
        system: sys,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(alg: &str, n: usize, k: usize, model: MemoryModel) -> AdversaryConfig {
        AdversaryConfig::new(alg, n, model).with_k(k).with_min_active(1)
    }

    #[test]
    fn default_k_and_min_active() {
        let c = AdversaryConfig::new("cas-owner-lock", 100, MemoryModel::Cc);
        assert_eq!((c.k, c.min_active), (7, 343));
        assert_eq!(default_k(100, 2), 49);
    }

    #[test]
    fn validation() {
        assert!(matches!(
            cfg("nope", 4, 1, MemoryModel::Cc).validate(),
            Err(ConfigError::UnknownAlgorithm(_))
        ));
        assert!(matches!(
            cfg("cas-owner-lock", 0, 1, MemoryModel::Cc).validate(),
            Err(ConfigError::BadN(0))
        ));
        assert!(matches!(
            cfg("cas-owner-lock", 4, 0, MemoryModel::Cc).validate(),
            Err(ConfigError::BadK)
        ));
    }

    #[test]
    fn rows_stay_compliant_and_survivors_pay() {
        for model in [MemoryModel::Cc, MemoryModel::Dsm] {
            let out = run(&cfg("cas-owner-lock", 8, 1, model)).unwrap();
            assert!(out.report.error.is_none(), "{:?}", out.report.error);
            for r in &out.report.rounds {
                if let Some(c) = &r.compliance {
                    assert!(c.compliant, "round {} {:?}", r.round, c.failures);
                }
            }
            assert!(out.report.final_witness.unwrap().holds);
        }
    }

    #[test]
    fn csv_has_one_line_per_round() {
        let out = run(&cfg("cas-owner-lock", 8, 1, MemoryModel::Cc)).unwrap();
        let csv = out.report.to_csv();
        assert_eq!(csv.lines().count(), 1 + out.report.rounds_completed() as usize);
    }
}
