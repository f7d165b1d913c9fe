//! Fixed-width bitmask over process ids, used both as a plain set and as the
//! subset key of a schedule array (bit `p - 1` set iff `p` is a member).

use std::fmt;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::model::ProcessId;

const WORDS: usize = 4;

/// Largest process count a [`ProcessSet`] can represent.
pub const MAX_PROCESSES: usize = WORDS * 64;

#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ProcessSet([u64; WORDS]);

/// Subset key of a schedule array.
pub type SubsetKey = ProcessSet;

impl ProcessSet {
    pub const EMPTY: ProcessSet = ProcessSet([0; WORDS]);

    pub fn full(n: usize) -> Self {
        assert!(n <= MAX_PROCESSES, "at most {MAX_PROCESSES} processes supported");
        let mut s = Self::EMPTY;
        for p in 1..=n {
            s.insert(ProcessId::new(p as u32));
        }
        s
    }

    pub fn from_pids<I: IntoIterator<Item = ProcessId>>(pids: I) -> Self {
        let mut s = Self::EMPTY;
        for p in pids {
            s.insert(p);
        }
        s
    }

    /// Builds a set from the low 64 bits of a mask.
    pub fn from_u64(mask: u64) -> Self {
        let mut words = [0; WORDS];
        words[0] = mask;
        ProcessSet(words)
    }

    /// The mask as a `u64`, if no process above 64 is a member.
    pub fn as_u64(&self) -> Option<u64> {
        if self.0[1..].iter().all(|w| *w == 0) {
            Some(self.0[0])
        } else {
            None
        }
    }

    fn slot(p: ProcessId) -> (usize, u64) {
        let bit = p.index();
        assert!(bit < MAX_PROCESSES, "process id {p} out of range");
        (bit / 64, 1u64 << (bit % 64))
    }

    pub fn contains(&self, p: ProcessId) -> bool {
        let (w, b) = Self::slot(p);
        self.0[w] & b != 0
    }

    pub fn insert(&mut self, p: ProcessId) {
        let (w, b) = Self::slot(p);
        self.0[w] |= b;
    }

    pub fn remove(&mut self, p: ProcessId) {
        let (w, b) = Self::slot(p);
        self.0[w] &= !b;
    }

    pub fn with(mut self, p: ProcessId) -> Self {
        self.insert(p);
        self
    }

    pub fn without(mut self, p: ProcessId) -> Self {
        self.remove(p);
        self
    }

    pub fn union(&self, other: &Self) -> Self {
        let mut out = *self;
        for (a, b) in out.0.iter_mut().zip(other.0) {
            *a |= b;
        }
        out
    }

    pub fn intersection(&self, other: &Self) -> Self {
        let mut out = *self;
        for (a, b) in out.0.iter_mut().zip(other.0) {
            *a &= b;
        }
        out
    }

    pub fn difference(&self, other: &Self) -> Self {
        let mut out = *self;
        for (a, b) in out.0.iter_mut().zip(other.0) {
            *a &= !b;
        }
        out
    }

    pub fn is_subset(&self, other: &Self) -> bool {
        self.0.iter().zip(other.0).all(|(a, b)| a & !b == 0)
    }

    pub fn is_empty(&self) -> bool {
        self.0.iter().all(|w| *w == 0)
    }

    pub fn len(&self) -> usize {
        self.0.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Members in ascending id order.
    pub fn iter(&self) -> impl Iterator<Item = ProcessId> + '_ {
        self.0.iter().enumerate().flat_map(|(w, word)| {
            let mut bits = *word;
            std::iter::from_fn(move || {
                if bits == 0 {
                    return None;
                }
                let tz = bits.trailing_zeros();
                bits &= bits - 1;
                Some(ProcessId::new((w * 64 + tz as usize + 1) as u32))
            })
        })
    }

    pub fn to_vec(&self) -> Vec<ProcessId> {
        self.iter().collect()
    }

    pub fn first(&self) -> Option<ProcessId> {
        self.iter().next()
    }

    /// Every set `floor ∪ T` with `T ⊆ free`, in ascending order of the
    /// selector bits. `free` must be disjoint from `floor`.
    pub fn interval(floor: ProcessSet, free: ProcessSet) -> IntervalIter {
        let members = free.to_vec();
        assert!(members.len() < 64, "interval too large to enumerate");
        IntervalIter {
            floor,
            members,
            next: 0,
        }
    }

    fn to_hex(self) -> String {
        let mut s = String::from("0x");
        let mut started = false;
        for w in self.0.iter().rev() {
            if started {
                s.push_str(&format!("{w:016x}"));
            } else if *w != 0 {
                s.push_str(&format!("{w:x}"));
                started = true;
            }
        }
        if !started {
            s.push('0');
        }
        s
    }

    fn from_hex(text: &str) -> Result<Self, String> {
        let digits = text
            .strip_prefix("0x")
            .ok_or_else(|| format!("mask string {text:?} must start with 0x"))?;
        if digits.is_empty() || digits.len() > WORDS * 16 {
            return Err(format!("mask string {text:?} has bad length"));
        }
        let mut words = [0u64; WORDS];
        let bytes = digits.as_bytes();
        for (i, chunk) in bytes.rchunks(16).enumerate() {
            let part = std::str::from_utf8(chunk).map_err(|e| e.to_string())?;
            words[i] = u64::from_str_radix(part, 16).map_err(|e| e.to_string())?;
        }
        Ok(ProcessSet(words))
    }
}

pub struct IntervalIter {
    floor: ProcessSet,
    members: Vec<ProcessId>,
    next: u64,
}

impl Iterator for IntervalIter {
    type Item = ProcessSet;

    fn next(&mut self) -> Option<ProcessSet> {
        if self.next >> self.members.len() != 0 {
            return None;
        }
        let mut s = self.floor;
        for (i, p) in self.members.iter().enumerate() {
            if self.next & (1 << i) != 0 {
                s.insert(*p);
            }
        }
        self.next += 1;
        Some(s)
    }
}

impl FromIterator<ProcessId> for ProcessSet {
    fn from_iter<I: IntoIterator<Item = ProcessId>>(iter: I) -> Self {
        Self::from_pids(iter)
    }
}

impl fmt::Debug for ProcessSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter().map(|p| p.get())).finish()
    }
}

impl fmt::Display for ProcessSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, p) in self.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{}", p.get())?;
        }
        write!(f, "}}")
    }
}

// Masks that fit in 64 bits serialize as plain integers; wider ones as a
// hex string. Both forms are accepted on input.
impl Serialize for ProcessSet {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self.as_u64() {
            Some(m) => serializer.serialize_u64(m),
            None => serializer.serialize_str(&self.to_hex()),
        }
    }
}

impl<'de> Deserialize<'de> for ProcessSet {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct MaskVisitor;

        impl Visitor<'_> for MaskVisitor {
            type Value = ProcessSet;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a non-negative integer or 0x-prefixed hex mask")
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<ProcessSet, E> {
                Ok(ProcessSet::from_u64(v))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<ProcessSet, E> {
                u64::try_from(v)
                    .map(ProcessSet::from_u64)
                    .map_err(|_| E::custom("negative subset mask"))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<ProcessSet, E> {
                ProcessSet::from_hex(v).map_err(E::custom)
            }
        }

        deserializer.deserialize_any(MaskVisitor)
    }
}
