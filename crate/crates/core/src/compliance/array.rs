use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{MemoryModel, ProcessId, Schedule, Step};
use crate::ProcessSet;

/// One appended segment of an interval-backed array. The schedule of entry
/// `S` is the concatenation of every layer's fragment for `S`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Layer {
    /// `σ_S`: the solo runs of the members of `S`, smallest id first.
    Setup { solo: BTreeMap<ProcessId, Schedule> },
    /// One normal step by each member of `S ∩ members`, smallest id first.
    OneStep { members: ProcessSet },
    /// `σ'_S ∘ σ_F`.
    Substitute(SubstituteLayer),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubstituteLayer {
    pub groups: Vec<GroupFragment>,
    pub sigma_f: Schedule,
}

/// `α[j]`, and `β[j]` together with the process whose presence selects it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupFragment {
    pub alpha: Schedule,
    pub beta1: Option<ProcessId>,
    pub beta: Schedule,
}

impl SubstituteLayer {
    /// `σ'_S` without the `σ_F` tail.
    pub fn substituted(&self, s: ProcessSet) -> Schedule {
        let mut out = Schedule::new();
        for g in &self.groups {
            match g.beta1 {
                Some(b) if s.contains(b) => out.extend_from(&g.beta),
                _ => out.extend_from(&g.alpha),
            }
        }
        out
    }

    /// `σ_α`.
    pub fn alphas(&self) -> Schedule {
        let mut out = Schedule::new();
        for g in &self.groups {
            out.extend_from(&g.alpha);
        }
        out
    }
}

impl Layer {
    fn append_fragment(&self, s: ProcessSet, out: &mut Schedule) {
        match self {
            Layer::Setup { solo } => {
                for p in s.iter() {
                    if let Some(sigma) = solo.get(&p) {
                        out.extend_from(sigma);
                    }
                }
            }
            Layer::OneStep { members } => {
                for p in s.intersection(members).iter() {
                    out.push(Step::normal(p));
                }
            }
            Layer::Substitute(sub) => {
                out.extend_from(&sub.substituted(s));
                out.extend_from(&sub.sigma_f);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Repr {
    Explicit(BTreeMap<ProcessSet, Schedule>),
    /// Every `S` with `floor ⊆ S ⊆ smax` is present; nothing else is.
    Interval {
        floor: ProcessSet,
        smax: ProcessSet,
        layers: Arc<Vec<Layer>>,
    },
}

/// An array `A[0..2ⁿ−1]` of schedules, absent entries standing for ⊥.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScheduleArray {
    n: usize,
    round: u32,
    repr: Repr,
}

#[derive(Debug, Error)]
pub enum ArrayError {
    #[error("invalid array JSON: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("subset mask {mask} names a process above n = {n}")]
    MaskOutOfRange { mask: ProcessSet, n: usize },
    #[error("subset mask {0} appears twice")]
    DuplicateEntry(ProcessSet),
    #[error("step by p{pid} is outside 1..={n}")]
    StepOutOfRange { pid: u32, n: usize },
    #[error("n = {0} is outside 1..={max}", max = crate::MAX_PROCESSES)]
    BadN(usize),
}

impl ScheduleArray {
    /// Every entry the empty schedule: the interval `[∅, 𝒫]`.
    pub fn base_row(n: usize) -> Self {
        Self::interval(n, 0, ProcessSet::EMPTY, ProcessSet::full(n), Vec::new())
    }

    pub fn interval(n: usize, round: u32, floor: ProcessSet, smax: ProcessSet, layers: Vec<Layer>) -> Self {
        assert!(floor.is_subset(&smax), "floor must be inside smax");
        ScheduleArray {
            n,
            round,
            repr: Repr::Interval {
                floor,
                smax,
                layers: Arc::new(layers),
            },
        }
    }

    pub fn explicit(n: usize, round: u32, entries: BTreeMap<ProcessSet, Schedule>) -> Self {
        ScheduleArray {
            n,
            round,
            repr: Repr::Explicit(entries),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// The round index `i` the array claims to be compliant at.
    pub fn round(&self) -> u32 {
        self.round
    }

    pub fn with_round(mut self, round: u32) -> Self {
        self.round = round;
        self
    }

    pub fn is_explicit(&self) -> bool {
        matches!(self.repr, Repr::Explicit(_))
    }

    /// `(floor, smax)` for interval-backed arrays.
    pub fn bounds(&self) -> Option<(ProcessSet, ProcessSet)> {
        match &self.repr {
            Repr::Interval { floor, smax, .. } => Some((*floor, *smax)),
            Repr::Explicit(_) => None,
        }
    }

    pub fn layers(&self) -> &[Layer] {
        match &self.repr {
            Repr::Interval { layers, .. } => layers,
            Repr::Explicit(_) => &[],
        }
    }

    pub fn is_empty(&self) -> bool {
        match &self.repr {
            Repr::Explicit(m) => m.is_empty(),
            Repr::Interval { .. } => false,
        }
    }

    /// Number of non-⊥ entries as a power of two, when it is one.
    pub fn entry_count_log2(&self) -> Option<usize> {
        match &self.repr {
            Repr::Interval { floor, smax, .. } => Some(smax.difference(floor).len()),
            Repr::Explicit(m) => {
                let c = m.len();
                c.is_power_of_two().then(|| c.trailing_zeros() as usize)
            }
        }
    }

    /// Number of non-⊥ entries, saturating at `u128::MAX`.
    pub fn entry_count(&self) -> u128 {
        match &self.repr {
            Repr::Explicit(m) => m.len() as u128,
            Repr::Interval { floor, smax, .. } => {
                let k = smax.difference(floor).len();
                if k >= 128 {
                    u128::MAX
                } else {
                    1u128 << k
                }
            }
        }
    }

    pub fn contains(&self, s: ProcessSet) -> bool {
        match &self.repr {
            Repr::Explicit(m) => m.contains_key(&s),
            Repr::Interval { floor, smax, .. } => floor.is_subset(&s) && s.is_subset(smax),
        }
    }

    /// `A[S]`, or `None` for ⊥.
    pub fn get(&self, s: ProcessSet) -> Option<Schedule> {
        match &self.repr {
            Repr::Explicit(m) => m.get(&s).cloned(),
            Repr::Interval { layers, .. } => {
                if !self.contains(s) {
                    return None;
                }
                let mut out = Schedule::new();
                for l in layers.iter() {
                    l.append_fragment(s, &mut out);
                }
                Some(out)
            }
        }
    }

    /// Union of all keys (the only candidate for `S_max`).
    pub fn key_union(&self) -> ProcessSet {
        match &self.repr {
            Repr::Explicit(m) => m.keys().fold(ProcessSet::EMPTY, |a, k| a.union(k)),
            Repr::Interval { smax, .. } => *smax,
        }
    }

    /// All keys, if there are fewer than 2⁶³ of them.
    pub fn keys(&self) -> Box<dyn Iterator<Item = ProcessSet> + '_> {
        match &self.repr {
            Repr::Explicit(m) => Box::new(m.keys().copied()),
            Repr::Interval { floor, smax, .. } => Box::new(ProcessSet::interval(*floor, smax.difference(floor))),
        }
    }

    /// Restricts an interval array to `[floor, smax]`, which must lie inside
    /// the current interval. Explicit arrays keep the entries that fit.
    pub fn restrict(&self, floor: ProcessSet, smax: ProcessSet) -> ScheduleArray {
        let repr = match &self.repr {
            Repr::Explicit(m) => Repr::Explicit(
                m.iter()
                    .filter(|(k, _)| floor.is_subset(k) && k.is_subset(&smax))
                    .map(|(k, v)| (*k, v.clone()))
                    .collect(),
            ),
            Repr::Interval {
                floor: f0,
                smax: s0,
                layers,
            } => {
                assert!(
                    f0.is_subset(&floor) && smax.is_subset(s0),
                    "restriction must shrink the interval"
                );
                Repr::Interval {
                    floor,
                    smax,
                    layers: layers.clone(),
                }
            }
        };
        ScheduleArray {
            n: self.n,
            round: self.round,
            repr,
        }
    }

    /// Appends a layer to every entry. Only interval arrays grow layers.
    pub fn push_layer(&self, layer: Layer) -> ScheduleArray {
        match &self.repr {
            Repr::Interval { floor, smax, layers } => {
                let mut l = (**layers).clone();
                l.push(layer);
                ScheduleArray::interval(self.n, self.round, *floor, *smax, l)
            }
            Repr::Explicit(m) => {
                let entries = m
                    .iter()
                    .map(|(k, v)| {
                        let mut s = v.clone();
                        layer.append_fragment(*k, &mut s);
                        (*k, s)
                    })
                    .collect();
                ScheduleArray::explicit(self.n, self.round, entries)
            }
        }
    }

    /// Materialises every entry. `None` if there are more than `cap`.
    pub fn to_explicit(&self, cap: u128) -> Option<ScheduleArray> {
        if self.entry_count() > cap {
            return None;
        }
        let entries = self.keys().map(|k| (k, self.get(k).unwrap_or_default())).collect();
        Some(ScheduleArray::explicit(self.n, self.round, entries))
    }

    /// Explicit entries, for mutation.
    pub fn entries_mut(&mut self) -> Option<&mut BTreeMap<ProcessSet, Schedule>> {
        match &mut self.repr {
            Repr::Explicit(m) => Some(m),
            Repr::Interval { .. } => None,
        }
    }

    pub fn to_file(&self, cap: u128) -> Option<ArrayFile> {
        let explicit = self.to_explicit(cap)?;
        let Repr::Explicit(m) = &explicit.repr else {
            unreachable!()
        };
        Some(ArrayFile {
            schema_version: ARRAY_SCHEMA_VERSION,
            n: self.n,
            i: self.round,
            smax: self.key_union(),
            algorithm: None,
            model: None,
            entries: m
                .iter()
                .map(|(k, v)| ArrayEntry {
                    subset_mask: *k,
                    schedule: v.clone(),
                })
                .collect(),
        })
    }

    pub fn from_file(file: &ArrayFile) -> Result<ScheduleArray, ArrayError> {
        let n = file.n;
        if n == 0 || n > crate::MAX_PROCESSES {
            return Err(ArrayError::BadN(n));
        }
        let all = ProcessSet::full(n);
        let mut entries = BTreeMap::new();
        for e in &file.entries {
            if !e.subset_mask.is_subset(&all) {
                return Err(ArrayError::MaskOutOfRange { mask: e.subset_mask, n });
            }
            if let Some(bad) = e.schedule.steps().iter().find(|s| s.pid.index() >= n) {
                return Err(ArrayError::StepOutOfRange { pid: bad.pid.get(), n });
            }
            if entries.insert(e.subset_mask, e.schedule.clone()).is_some() {
                return Err(ArrayError::DuplicateEntry(e.subset_mask));
            }
        }
        Ok(ScheduleArray::explicit(n, file.i, entries))
    }

    pub fn from_json(text: &str) -> Result<(ScheduleArray, ArrayFile), ArrayError> {
        let file: ArrayFile = serde_json::from_str(text)?;
        let a = Self::from_file(&file)?;
        Ok((a, file))
    }
}

pub const ARRAY_SCHEMA_VERSION: u32 = 1;

/// On-disk form of a schedule array.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayFile {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    pub n: usize,
    pub i: u32,
    pub smax: ProcessSet,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub algorithm: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<MemoryModel>,
    pub entries: Vec<ArrayEntry>,
}

fn default_schema() -> u32 {
    ARRAY_SCHEMA_VERSION
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub subset_mask: ProcessSet,
    pub schedule: Schedule,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(i: u32) -> ProcessId {
        ProcessId::new(i)
    }

    #[test]
    fn base_row_has_every_subset() {
        let a = ScheduleArray::base_row(3);
        assert_eq!(a.entry_count(), 8);
        assert_eq!(a.keys().count(), 8);
        assert_eq!(a.get(ProcessSet::from_u64(0b101)), Some(Schedule::new()));
        assert_eq!(ScheduleArray::base_row(1).entry_count(), 2);
    }

    #[test]
    fn layers_compose_per_subset() {
        let mut solo = BTreeMap::new();
        solo.insert(p(1), Schedule::of([p(1), p(1)]));
        solo.insert(p(3), Schedule::of([p(3)]));
        let a = ScheduleArray::base_row(3)
            .push_layer(Layer::Setup { solo })
            .push_layer(Layer::OneStep {
                members: ProcessSet::from_pids([p(2), p(3)]),
            });
        let s = ProcessSet::from_pids([p(1), p(3)]);
        assert_eq!(a.get(s).unwrap(), Schedule::of([p(1), p(1), p(3), p(3)]));
        assert_eq!(a.get(ProcessSet::from_pids([p(2)])).unwrap(), Schedule::of([p(2)]));
    }

    #[test]
    fn substitution_picks_beta_when_present() {
        let layer = SubstituteLayer {
            groups: vec![GroupFragment {
                alpha: Schedule::of([p(1), p(2)]),
                beta1: Some(p(3)),
                beta: Schedule::of([p(1), p(3), p(2)]),
            }],
            sigma_f: Schedule::from_steps(vec![Step::crash(p(1)), Step::crash(p(2))]),
        };
        let with = ProcessSet::from_pids([p(1), p(2), p(3)]);
        assert_eq!(layer.substituted(with), Schedule::of([p(1), p(3), p(2)]));
        assert_eq!(layer.substituted(with.without(p(3))), layer.alphas());
    }

    #[test]
    fn json_round_trip() {
        let a = ScheduleArray::base_row(2).with_round(0);
        let f = a.to_file(1 << 10).unwrap();
        let text = serde_json::to_string(&f).unwrap();
        let (b, _) = ScheduleArray::from_json(&text).unwrap();
        assert_eq!(b.keys().collect::<Vec<_>>(), a.keys().collect::<Vec<_>>());
        assert!(b.is_explicit());
    }

    #[test]
    fn bad_files_are_rejected() {
        assert!(matches!(
            ScheduleArray::from_json("{\"n\": 2, \"i\": 0, \"smax\": 3, \"entries\": ["),
            Err(ArrayError::Parse(_))
        ));
        let text = r#"{"n": 2, "i": 0, "smax": 4, "entries": [{"subset_mask": 4, "schedule": []}]}"#;
        assert!(matches!(
            ScheduleArray::from_json(text),
            Err(ArrayError::MaskOutOfRange { .. })
        ));
    }
}
