use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use rme_core::adversary::{self, AdversaryConfig, ErrorCode, TieBreak, VerifyPolicy};
use rme_core::algorithm;
use rme_core::compliance::{check_compliance, CheckMode, CheckOptions, ScheduleArray};
use rme_core::model::{MemoryModel, System};
use rme_core::oracle::{explore, ExplorationBounds, OracleError};

const EXIT_OK: u8 = 0;
const EXIT_FAIL: u8 = 1;
const EXIT_SAFETY: u8 = 2;
const EXIT_LEMMA: u8 = 3;
const EXIT_BUDGET: u8 = 4;
const EXIT_USAGE: u8 = 64;
const EXIT_PARSE: u8 = 65;
const EXIT_IO: u8 = 74;

/// Rows with more entries than this are not written by `run --save-rows`.
const SAVE_CAP: u128 = 1 << 16;

#[derive(Parser)]
#[command(
    name = "rme",
    version,
    about = "Recoverable mutual exclusion simulator and adversary"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the adversary round by round and report on every round.
    Run(RunArgs),
    /// Check a saved schedule array for compliance at its round index.
    Check(CheckArgs),
    /// Exhaustively explore a lock's interleavings at tiny n.
    Explore(ExploreArgs),
    /// List the built-in algorithms.
    ListAlgorithms {
        #[arg(long)]
        json: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Cc,
    Dsm,
}

impl From<ModelArg> for MemoryModel {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Cc => MemoryModel::Cc,
            ModelArg::Dsm => MemoryModel::Dsm,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum VerifyArg {
    EachRound,
    Final,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Exhaustive,
    Sampled,
}

#[derive(Args)]
struct CheckFlags {
    /// How compliance checks visit entries.
    #[arg(long, value_enum, default_value = "exhaustive")]
    verify_mode: ModeArg,
    /// Random subsets drawn in sampled mode.
    #[arg(long, default_value_t = 64)]
    sample_size: usize,
    /// Entries above which an exhaustive check degrades to sampling.
    #[arg(long, default_value_t = 1 << 16)]
    max_subsets: u64,
}

impl CheckFlags {
    fn options(&self, seed: u64) -> CheckOptions {
        CheckOptions {
            mode: match self.verify_mode {
                ModeArg::Exhaustive => CheckMode::Exhaustive,
                ModeArg::Sampled => CheckMode::Sampled,
            },
            max_subsets: self.max_subsets,
            samples: self.sample_size,
            seed,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    algorithm: String,
    #[arg(long, value_enum, default_value = "cc")]
    model: ModelArg,
    /// Contention threshold; defaults to ceil(log2 n).
    #[arg(long, conflicts_with = "d")]
    k: Option<usize>,
    /// Sets k = ceil(log2 n)^d.
    #[arg(long)]
    d: Option<u32>,
    #[arg(long, default_value_t = 64)]
    max_rounds: u32,
    /// Stop once fewer processes are active; defaults to k^3.
    #[arg(long)]
    min_active: Option<usize>,
    #[arg(long, default_value_t = 10_000)]
    step_budget: usize,
    #[arg(long, value_enum, default_value = "each-round")]
    verify: VerifyArg,
    #[command(flatten)]
    check: CheckFlags,
    /// Enables seeded random tie-breaks.
    #[arg(long)]
    seed: Option<u64>,
    /// Run report path; stdout if absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-round CSV (i, n_i, branch, ratio).
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Directory to write every row as an array file.
    #[arg(long)]
    save_rows: Option<PathBuf>,
    /// Where a counterexample trace goes; defaults next to --out, else
    /// ./counterexample.trace.json.
    #[arg(long)]
    trace_out: Option<PathBuf>,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long)]
    array: PathBuf,
    /// Overrides the algorithm recorded in the file.
    #[arg(long)]
    algorithm: Option<String>,
    /// Overrides the model recorded in the file.
    #[arg(long, value_enum)]
    model: Option<ModelArg>,
    #[command(flatten)]
    check: CheckFlags,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExploreArgs {
    #[arg(long)]
    n: usize,
    #[arg(long, default_value = "cas-owner-lock")]
    algorithm: String,
    #[arg(long, value_enum, default_value = "cc")]
    model: ModelArg,
    #[arg(long, default_value_t = 60)]
    depth: usize,
    #[arg(long, default_value_t = 1)]
    max_crashes: u32,
    /// Crash-free round-robin steps a state gets to make progress; 0 disables.
    #[arg(long, default_value_t = 64)]
    fairness_window: usize,
    #[arg(long, default_value_t = 2_000_000)]
    node_cap: usize,
    /// Allow n > 4.
    #[arg(long)]
    force: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

struct Failure {
    exit: u8,
    code: &'static str,
    message: String,
    extra: Value,
}

impl Failure {
    fn new(exit: u8, code: &'static str, message: impl Into<String>) -> Self {
        Failure {
            exit,
            code,
            message: message.into(),
            extra: Value::Null,
        }
    }

    fn usage(message: impl Into<String>) -> Self {
        Failure::new(EXIT_USAGE, "USAGE", message)
    }

    fn with(mut self, extra: Value) -> Self {
        self.extra = extra;
        self
    }
}

fn emit_error(f: &Failure) {
    let mut obj = json!({
        "code": f.code,
        "message": f.message,
        "exit_code": f.exit,
    });
    if let (Value::Object(dst), Value::Object(src)) = (&mut obj, &f.extra) {
        dst.extend(src.clone());
    }
    let line = serde_json::to_string(&json!({ "error": obj })).expect("error object serializes");
    let _ = writeln!(std::io::stderr(), "{line}");
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("reports serialize");
    s.push('\n');
    s
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::new(EXIT_IO, "IO", format!("{}: {e}", path.display())))
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => write_file(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn known_algorithm(name: &str) -> Result<(), Failure> {
    if algorithm::by_name(name).is_some() {
        Ok(())
    } else {
        Err(Failure::usage(format!(
            "unknown algorithm {name:?}; known: {}",
            algorithm::algorithm_names().join(", ")
        )))
    }
}

fn cmd_run(a: RunArgs) -> Result<u8, Failure> {
    known_algorithm(&a.algorithm)?;
    if a.n == 0 || a.n > rme_core::MAX_PROCESSES {
        return Err(Failure::usage(format!(
            "--n must be in 1..={}",
            rme_core::MAX_PROCESSES
        )));
    }
    let mut cfg = AdversaryConfig::new(&a.algorithm, a.n, a.model.into());
    if let Some(k) = a.k {
        cfg = cfg.with_k(k);
    } else if let Some(d) = a.d {
        cfg = cfg.with_k(adversary::default_k(a.n, d));
    }
    if let Some(m) = a.min_active {
        cfg = cfg.with_min_active(m);
    }
    cfg.max_rounds = a.max_rounds;
    cfg.step_budget = a.step_budget;
    cfg.verify = match a.verify {
        VerifyArg::EachRound => VerifyPolicy::EachRound,
        VerifyArg::Final => VerifyPolicy::Final,
        VerifyArg::Off => VerifyPolicy::Off,
    };
    cfg.tie_break = a.seed.map_or(TieBreak::SmallestId, |seed| TieBreak::Seeded { seed });
    cfg.check = a.check.options(a.seed.unwrap_or(0));
    cfg.validate().map_err(|e| Failure::usage(e.to_string()))?;

    let outcome = adversary::run(&cfg).map_err(|e| Failure::usage(e.to_string()))?;
    let report = &outcome.report;
    emit(a.out.as_deref(), &to_json(report))?;
    if let Some(p) = &a.csv {
        write_file(p, &report.to_csv())?;
    }
    if let Some(dir) = &a.save_rows {
        fs::create_dir_all(dir).map_err(|e| Failure::new(EXIT_IO, "IO", format!("{}: {e}", dir.display())))?;
        for (i, row) in outcome.rows.iter().enumerate() {
            match row.to_file(SAVE_CAP) {
                Some(mut f) => {
                    f.algorithm = Some(cfg.algorithm.clone());
                    f.model = Some(cfg.model);
                    write_file(&dir.join(format!("row-{i}.json")), &to_json(&f))?;
                }
                None => log::warn!("row {i} has more than {SAVE_CAP} entries; not saved"),
            }
        }
    }

    if let Some(e) = &report.error {
        let (exit, code) = match e.code {
            ErrorCode::MutualExclusionViolation => (EXIT_SAFETY, "MUTUAL_EXCLUSION_VIOLATION"),
            ErrorCode::SetupLemmaViolation => (EXIT_LEMMA, "SETUP_LEMMA_VIOLATION"),
            ErrorCode::LowLemmaViolation => (EXIT_LEMMA, "LOW_LEMMA_VIOLATION"),
            ErrorCode::HighLemmaViolation => (EXIT_LEMMA, "HIGH_LEMMA_VIOLATION"),
            ErrorCode::SetupBudgetExceeded => (EXIT_BUDGET, "SETUP_BUDGET_EXCEEDED"),
            ErrorCode::CompletionStall => (EXIT_BUDGET, "COMPLETION_STALL"),
            ErrorCode::ModelError => (EXIT_FAIL, "MODEL_ERROR"),
        };
        let mut extra = json!({ "round": e.round });
        if let Some(s) = e.subset {
            extra["subset"] = json!(s);
        }
        if let Some(t) = &e.trace {
            let path = a.trace_out.clone().unwrap_or_else(|| match &a.out {
                Some(o) => o.with_extension("trace.json"),
                None => PathBuf::from("counterexample.trace.json"),
            });
            write_file(&path, &to_json(t))?;
            extra["trace_path"] = json!(path.display().to_string());
        }
        return Err(Failure::new(exit, code, e.message.clone()).with(extra));
    }
    let noncompliant: Vec<u32> = report
        .rounds
        .iter()
        .filter(|r| r.compliance.as_ref().is_some_and(|c| !c.compliant))
        .map(|r| r.round)
        .collect();
    if !noncompliant.is_empty() {
        return Err(Failure::new(
            EXIT_FAIL,
            "NOT_COMPLIANT",
            format!("rounds {noncompliant:?} are not compliant"),
        )
        .with(json!({ "rounds": noncompliant })));
    }
    Ok(EXIT_OK)
}

fn cmd_check(a: CheckArgs) -> Result<u8, Failure> {
    let text =
        fs::read_to_string(&a.array).map_err(|e| Failure::new(EXIT_IO, "IO", format!("{}: {e}", a.array.display())))?;
    let (array, file) =
        ScheduleArray::from_json(&text).map_err(|e| Failure::new(EXIT_PARSE, "PARSE_ERROR", e.to_string()))?;
    let alg = a
        .algorithm
        .or(file.algorithm)
        .ok_or_else(|| Failure::usage("the array file names no algorithm; pass --algorithm"))?;
    known_algorithm(&alg)?;
    let model = a
        .model
        .map(MemoryModel::from)
        .or(file.model)
        .ok_or_else(|| Failure::usage("the array file names no model; pass --model"))?;
    let sys =
        System::new(algorithm::by_name(&alg).unwrap(), array.n(), model).map_err(|e| Failure::usage(e.to_string()))?;
    let report = check_compliance(&sys, &array, &a.check.options(a.seed)).map_err(|e| Failure::usage(e.to_string()))?;
    emit(a.out.as_deref(), &to_json(&report))?;
    if report.compliant {
        Ok(EXIT_OK)
    } else {
        let failed: Vec<String> = report.failures().iter().map(|i| format!("{i:?}")).collect();
        let witnesses: Vec<Value> = report
            .verdicts
            .iter()
            .filter(|(_, v)| v.is_fail())
            .map(|(k, v)| json!({ "invariant": k, "verdict": v }))
            .collect();
        Err(Failure::new(
            EXIT_FAIL,
            "NOT_COMPLIANT",
            format!("failed invariants: {}", failed.join(", ")),
        )
        .with(json!({ "failures": witnesses })))
    }
}

fn cmd_explore(a: ExploreArgs) -> Result<u8, Failure> {
    known_algorithm(&a.algorithm)?;
    if a.n == 0 {
        return Err(Failure::usage("--n must be at least 1"));
    }
    if a.n > 4 && !a.force {
        return Err(Failure::usage(format!(
            "--n {} is above 4; pass --force to explore anyway",
            a.n
        )));
    }
    let sys = System::new(algorithm::by_name(&a.algorithm).unwrap(), a.n, a.model.into())
        .map_err(|e| Failure::usage(e.to_string()))?;
    let bounds = ExplorationBounds {
        max_depth: a.depth,
        max_crashes_per_process: a.max_crashes,
        fairness_window: a.fairness_window,
        node_cap: a.node_cap,
    };
    let report = explore(&sys, bounds).map_err(|e| match e {
        OracleError::StateSpaceOverflow { .. } => Failure::new(EXIT_BUDGET, "STATE_SPACE_OVERFLOW", e.to_string()),
        OracleError::Model(m) => Failure::new(EXIT_FAIL, "MODEL_ERROR", m.to_string()),
    })?;
    emit(a.out.as_deref(), &to_json(&report))?;
    if report.safe() {
        return Ok(EXIT_OK);
    }
    let which = if report.mutual_exclusion.is_pass() {
        "A1_VIOLATION"
    } else {
        "MUTUAL_EXCLUSION_VIOLATION"
    };
    let verdict = if report.mutual_exclusion.is_pass() {
        &report.a1
    } else {
        &report.mutual_exclusion
    };
    Err(Failure::new(EXIT_FAIL, which, "exploration found a safety violation")
        .with(json!({ "counterexample": verdict })))
}

fn cmd_list(as_json: bool) -> u8 {
    let list = algorithm::describe_algorithms();
    if as_json {
        let v: Vec<Value> = list
            .iter()
            .map(|(n, d)| json!({ "name": n, "description": d }))
            .collect();
        print!("{}", to_json(&v));
    } else {
        for (n, d) in list {
            println!("{n:<22} {d}");
        }
    }
    EXIT_OK
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("off")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            emit_error(&Failure::usage(e.kind().to_string()).with(json!({ "detail": e.to_string() })));
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let result = match cli.cmd {
        Cmd::Run(a) => cmd_run(a),
        Cmd::Check(a) => cmd_check(a),
        Cmd::Explore(a) => cmd_explore(a),
        Cmd::ListAlgorithms { json } => Ok(cmd_list(json)),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            emit_error(&f);
            ExitCode::from(f.exit)
        }
    }
}
