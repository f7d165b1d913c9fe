use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ScheduleArray;
use crate::model::{Configuration, MemoryModel, ProcessId, RegisterId, System, Value};
use crate::ProcessSet;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Invariant {
    I1,
    I2,
    I3,
    I4,
    I5,
    I6,
    I7,
    I8,
    I9,
    I10,
}

impl Invariant {
    pub const ALL: [Invariant; 10] = [
        Invariant::I1,
        Invariant::I2,
        Invariant::I3,
        Invariant::I4,
        Invariant::I5,
        Invariant::I6,
        Invariant::I7,
        Invariant::I8,
        Invariant::I9,
        Invariant::I10,
    ];

    pub fn describe(self) -> &'static str {
        match self {
            Invariant::I1 => "only members of S take steps in A[S]",
            Invariant::I2 => "non-bottom entries form the interval [F, Smax]",
            Invariant::I3 => "an active process is in the same state in every entry containing it",
            Invariant::I4 => "every entry finishes the same processes",
            Invariant::I5 => "register values agree according to the last accessor in A[Smax]",
            Invariant::I6 => "at most one crash per process, none for unfinished processes",
            Invariant::I7 => "unfinished processes never enter the CS",
            Invariant::I8 => "registers owned by active processes are touched only by their owner",
            Invariant::I9 => "an active process holds the same cache in every entry containing it",
            Invariant::I10 => "every active process has incurred at least i RMRs",
        }
    }
}

impl fmt::Display for Invariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Witness {
    pub subsets: Vec<ProcessSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub process: Option<ProcessId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub register: Option<RegisterId>,
    pub explanation: String,
}

impl Witness {
    fn new(subsets: Vec<ProcessSet>, explanation: impl Into<String>) -> Self {
        Witness {
            subsets,
            process: None,
            register: None,
            explanation: explanation.into(),
        }
    }

    fn process(mut self, p: ProcessId) -> Self {
        self.process = Some(p);
        self
    }

    fn register(mut self, r: RegisterId) -> Self {
        self.register = Some(r);
        self
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail { witness: Witness },
    Skipped { reason: String },
}

impl Verdict {
    pub fn is_fail(&self) -> bool {
        matches!(self, Verdict::Fail { .. })
    }

    pub fn is_pass(&self) -> bool {
        matches!(self, Verdict::Pass)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckMode {
    /// Every entry, degrading to sampling above `max_subsets`.
    Exhaustive,
    Sampled,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckOptions {
    pub mode: CheckMode,
    pub max_subsets: u64,
    /// Random subsets drawn on top of the fixed ones in sampled mode.
    pub samples: usize,
    pub seed: u64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions {
            mode: CheckMode::Exhaustive,
            max_subsets: 1 << 16,
            samples: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Error)]
pub enum CheckError {
    #[error("array is for n = {array} but the system has n = {system}")]
    SizeMismatch { array: usize, system: usize },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComplianceReport {
    pub schema_version: u32,
    pub n: usize,
    pub i: u32,
    pub model: MemoryModel,
    pub exhaustive: bool,
    pub subsets_checked: usize,
    pub smax: Option<ProcessSet>,
    pub f: Option<ProcessSet>,
    pub verdicts: BTreeMap<Invariant, Verdict>,
    pub compliant: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl ComplianceReport {
    pub fn verdict(&self, inv: Invariant) -> &Verdict {
        &self.verdicts[&inv]
    }

    pub fn failures(&self) -> Vec<Invariant> {
        self.verdicts
            .iter()
            .filter(|(_, v)| v.is_fail())
            .map(|(k, _)| *k)
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SmaxInfo {
    pub smax: ProcessSet,
    pub f: ProcessSet,
}

/// The subsets a check visits: every key of `[floor, smax]`, or, when that is
/// too many, `smax`, `floor`, each `floor ∪ {p}` and `samples` random members.
pub fn subsets_to_visit(floor: ProcessSet, smax: ProcessSet, opts: &CheckOptions) -> (Vec<ProcessSet>, bool) {
    let free = smax.difference(&floor);
    let size = if free.len() >= 128 {
        u128::MAX
    } else {
        1u128 << free.len()
    };
    let exhaustive = opts.mode == CheckMode::Exhaustive && size <= opts.max_subsets as u128;
    if exhaustive {
        return (ProcessSet::interval(floor, free).collect(), true);
    }
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    let mut add = |s: ProcessSet| {
        if seen.insert(s) {
            out.push(s);
        }
    };
    add(smax);
    add(floor);
    for p in free.iter() {
        add(floor.with(p));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let members = free.to_vec();
    for _ in 0..opts.samples {
        let mut s = floor;
        for &p in &members {
            if rng.gen_bool(0.5) {
                s.insert(p);
            }
        }
        add(s);
    }
    (out, false)
}

/// Locates `S_max` and `F = F(A[S_max])`, checking that the keys are exactly
/// the interval `[F, S_max]`. An `Err` is the I2 witness.
pub fn find_smax(sys: &System, array: &ScheduleArray) -> Result<SmaxInfo, Witness> {
    if array.is_empty() {
        return Err(Witness::new(vec![], "NO_UNIQUE_SMAX: every entry is bottom"));
    }
    let smax = array.key_union();
    let Some(sched) = array.get(smax) else {
        return Err(Witness::new(
            vec![smax],
            "NO_UNIQUE_SMAX: the union of all non-bottom keys is itself bottom",
        ));
    };
    let f = match sys.run(&sched) {
        Ok((c, _)) => c.finished(),
        Err(e) => {
            return Err(Witness::new(
                vec![smax],
                format!("NO_UNIQUE_SMAX: A[Smax] does not execute: {e}"),
            ))
        }
    };
    if !f.is_subset(&smax) {
        return Err(Witness::new(
            vec![smax],
            format!("NO_UNIQUE_SMAX: F(A[Smax]) = {f} is not inside Smax"),
        ));
    }
    match array.bounds() {
        Some((floor, _)) if floor != f => {
            return Err(Witness::new(
                vec![floor, smax],
                format!("NO_UNIQUE_SMAX: entries start at {floor} but F(A[Smax]) = {f}"),
            ))
        }
        Some(_) => {}
        None => {
            if let Some(bad) = array.keys().find(|k| !f.is_subset(k)) {
                return Err(Witness::new(
                    vec![bad, smax],
                    format!("NO_UNIQUE_SMAX: entry {bad} does not contain F = {f}"),
                ));
            }
            let free = smax.difference(&f).len();
            let want = if free >= 128 { u128::MAX } else { 1u128 << free };
            if array.entry_count() != want {
                let missing = if free < 64 {
                    ProcessSet::interval(f, smax.difference(&f)).find(|s| !array.contains(*s))
                } else {
                    None
                };
                let mut w = Witness::new(
                    missing.into_iter().chain([smax]).collect(),
                    format!(
                        "NO_UNIQUE_SMAX: {} entries present but [F, Smax] has 2^{free}",
                        array.entry_count()
                    ),
                );
                if let Some(m) = missing {
                    w.explanation.push_str(&format!("; {m} is bottom"));
                }
                return Err(w);
            }
        }
    }
    Ok(SmaxInfo { smax, f })
}

struct Tally {
    verdicts: BTreeMap<Invariant, Verdict>,
}

impl Tally {
    fn new() -> Self {
        Tally {
            verdicts: BTreeMap::new(),
        }
    }

    fn fail(&mut self, inv: Invariant, w: Witness) {
        self.verdicts.entry(inv).or_insert(Verdict::Fail { witness: w });
    }
}

/// Checks the ten compliance invariants of `array` at its round index.
pub fn check_compliance(
    sys: &System,
    array: &ScheduleArray,
    opts: &CheckOptions,
) -> Result<ComplianceReport, CheckError> {
    if array.n() != sys.n() {
        return Err(CheckError::SizeMismatch {
            array: array.n(),
            system: sys.n(),
        });
    }
    let i = array.round() as u64;
    let mut tally = Tally::new();
    let found = find_smax(sys, array);
    let (subsets, exhaustive) = match (&found, array.bounds()) {
        (_, Some((floor, smax))) => subsets_to_visit(floor, smax, opts),
        (Ok(info), None) => {
            let (mut subs, ex) = subsets_to_visit(info.f, info.smax, opts);
            if ex {
                subs = array.keys().collect();
            }
            (subs, ex)
        }
        // No interval to sample from: walk the stored keys.
        (Err(_), None) => (array.keys().collect(), true),
    };
    if let Err(w) = &found {
        tally.fail(Invariant::I2, w.clone());
    }

    let reference = found.as_ref().ok().and_then(|info| {
        let sched = array.get(info.smax)?;
        sys.run(&sched).ok().map(|(c, _)| (*info, c))
    });
    let mut y: BTreeMap<RegisterId, (Value, ProcessSet)> = BTreeMap::new();

    for &s in &subsets {
        let Some(sched) = array.get(s) else {
            continue;
        };
        let outside = sched.participants().difference(&s);
        if let Some(p) = outside.first() {
            tally.fail(
                Invariant::I1,
                Witness::new(vec![s], format!("{p} takes a step in A[{s}]")).process(p),
            );
        }
        let config = match sys.run(&sched) {
            Ok((c, _)) => c,
            Err(e) => {
                tally.fail(
                    Invariant::I1,
                    Witness::new(vec![s], format!("A[{s}] does not execute: {e}")),
                );
                continue;
            }
        };
        check_local(sys, s, &config, &mut tally);
        if let Some((info, rc)) = &reference {
            check_against_smax(sys, s, &config, *info, rc, i, &mut y, &mut tally);
        }
    }

    let mut verdicts = BTreeMap::new();
    for inv in Invariant::ALL {
        let v = if let Some(v) = tally.verdicts.remove(&inv) {
            v
        } else if inv == Invariant::I8 && sys.model() != MemoryModel::Dsm {
            Verdict::Skipped {
                reason: "DSM only".into(),
            }
        } else if inv == Invariant::I9 && sys.model() != MemoryModel::Cc {
            Verdict::Skipped {
                reason: "CC only".into(),
            }
        } else if reference.is_none() && !matches!(inv, Invariant::I1 | Invariant::I6 | Invariant::I7) {
            Verdict::Skipped {
                reason: "no unique Smax".into(),
            }
        } else {
            Verdict::Pass
        };
        verdicts.insert(inv, v);
    }
    let compliant = verdicts.values().all(|v| !v.is_fail()) && reference.is_some();
    let mut warnings = Vec::new();
    if !exhaustive {
        if opts.mode == CheckMode::Exhaustive {
            warnings.push(format!(
                "more than {} entries: exhaustive check degraded to sampling",
                opts.max_subsets
            ));
        }
        warnings.push(format!("sampled check: {} subsets visited", subsets.len()));
    }
    Ok(ComplianceReport {
        schema_version: REPORT_SCHEMA_VERSION,
        n: sys.n(),
        i: array.round(),
        model: sys.model(),
        exhaustive,
        subsets_checked: subsets.len(),
        smax: found.as_ref().ok().map(|x| x.smax),
        f: found.as_ref().ok().map(|x| x.f),
        verdicts,
        compliant,
        warnings,
    })
}

/// I6 and I7 need nothing but the entry itself.
fn check_local(sys: &System, s: ProcessSet, c: &Configuration, tally: &mut Tally) {
    let f = c.finished();
    for p in sys.pids() {
        let crashes = c.crash_count(p);
        if crashes > 1 {
            tally.fail(
                Invariant::I6,
                Witness::new(vec![s], format!("{p} crashes {crashes} times in E(A[{s}])")).process(p),
            );
        }
        if crashes > 0 && !f.contains(p) {
            tally.fail(
                Invariant::I6,
                Witness::new(vec![s], format!("{p} crashes in E(A[{s}]) but is not finished")).process(p),
            );
        }
        if c.process(p).ever_cs && !f.contains(p) {
            tally.fail(
                Invariant::I7,
                Witness::new(vec![s], format!("{p} enters the CS in E(A[{s}]) but is not finished")).process(p),
            );
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn check_against_smax(
    sys: &System,
    s: ProcessSet,
    c: &Configuration,
    info: SmaxInfo,
    rc: &Configuration,
    i: u64,
    y: &mut BTreeMap<RegisterId, (Value, ProcessSet)>,
    tally: &mut Tally,
) {
    let smax = info.smax;
    let active = smax.difference(&info.f);
    let f = c.finished();
    if f != info.f {
        tally.fail(
            Invariant::I4,
            Witness::new(vec![s, smax], format!("F(A[{s}]) = {f} but F(A[Smax]) = {}", info.f)),
        );
    }
    for p in s.intersection(&smax).iter() {
        if c.state_of(p) != rc.state_of(p) {
            tally.fail(
                Invariant::I3,
                Witness::new(vec![s, smax], format!("{p} is in a different state than in A[Smax]")).process(p),
            );
        }
    }
    for r in 0..c.register_count() {
        let r = RegisterId(r as u32);
        let w = rc.last_accessor(r);
        let val = c.value(r);
        match w {
            Some(w) if s.contains(w) => {
                if val != rc.value(r) {
                    tally.fail(
                        Invariant::I5,
                        Witness::new(
                            vec![s, smax],
                            format!(
                                "{r} = {val:?} but A[Smax] has {:?} and last accessor {w} is in S",
                                rc.value(r)
                            ),
                        )
                        .register(r),
                    );
                }
            }
            _ => {
                match y.get(&r) {
                    None => {
                        y.insert(r, (val.clone(), s));
                    }
                    Some((yv, ys)) if yv != val => {
                        tally.fail(
                        Invariant::I5,
                        Witness::new(
                            vec![*ys, s],
                            format!("{r} holds {yv:?} in A[{ys}] and {val:?} in A[{s}]; neither contains its last accessor"),
                        )
                        .register(r),
                    );
                    }
                    Some(_) => {}
                }
            }
        }
        if sys.model() == MemoryModel::Dsm {
            if let Some(o) = sys.owner(r).filter(|o| active.contains(*o)) {
                let others = c.touched_by(r).without(o);
                if let Some(q) = others.first() {
                    tally.fail(
                        Invariant::I8,
                        Witness::new(vec![s], format!("{q} accesses {r}, owned by active {o}"))
                            .process(q)
                            .register(r),
                    );
                }
            }
        }
    }
    for p in s.intersection(&active).iter() {
        if sys.model() == MemoryModel::Cc && c.valid_cache(p) != rc.valid_cache(p) {
            tally.fail(
                Invariant::I9,
                Witness::new(
                    vec![s, smax],
                    format!("{p} holds a different set of cached registers than in A[Smax]"),
                )
                .process(p),
            );
        }
    }
    for p in s.difference(&f).iter() {
        let rmrs = c.rmr_total(p);
        if rmrs < i {
            tally.fail(
                Invariant::I10,
                Witness::new(vec![s], format!("{p} has {rmrs} RMRs in E(A[{s}]), fewer than {i}")).process(p),
            );
        }
    }
}
