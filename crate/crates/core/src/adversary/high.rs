//! Group bookkeeping for the high-contention branch. Everything here is a
//! pure function of a [`PoisedSnapshot`], so it also runs on synthetic
//! snapshots far beyond the simulator's process limit.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::PoisedSnapshot;
use crate::model::{OpKind, ProcessId, RegisterId, Value};

/// Group sizes at each filter, floored with a minimum so small `k` still
/// yields something to look at.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Quotas {
    pub q1: usize,
    pub q3: usize,
    pub q5: usize,
    pub q_beta: usize,
}

impl Quotas {
    pub fn for_k(k: usize) -> Self {
        Quotas {
            q1: k.max(1),
            q3: (k / 4).max(1),
            q5: (k / 32).max(1),
            q_beta: k.div_ceil(160).max(3),
        }
    }
}

/// `k` from which every quota is exact (no flooring to a minimum).
pub const FAITHFUL_K: usize = 160 * 32;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Group {
    pub reg: RegisterId,
    pub members: Vec<ProcessId>,
}

fn total(groups: &[Group]) -> usize {
    groups.iter().map(|g| g.members.len()).sum()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterChain {
    pub quotas: Quotas,
    pub h1: Vec<Group>,
    pub h2: Vec<Group>,
    pub h3: Vec<Group>,
    pub h4: Vec<Group>,
    pub h5: Vec<Group>,
    pub opt: Option<OpKind>,
}

impl FilterChain {
    pub fn sizes(&self) -> [usize; 5] {
        [
            total(&self.h1),
            total(&self.h2),
            total(&self.h3),
            total(&self.h4),
            total(&self.h5),
        ]
    }

    pub fn h5_members(&self) -> BTreeSet<ProcessId> {
        self.h5.iter().flat_map(|g| g.members.iter().copied()).collect()
    }

    /// No group can supply two alpha processes.
    pub fn is_degenerate(&self) -> bool {
        self.h5.is_empty()
    }
}

fn shrink(groups: Vec<Group>, quota: usize, min: usize) -> Vec<Group> {
    groups
        .into_iter()
        .filter(|g| g.members.len() >= quota.max(min))
        .map(|mut g| {
            g.members.truncate(quota.max(min));
            g
        })
        .collect()
}

/// Runs `H → H₁ → … → H₅`. Groups are ordered by register and then by
/// their smallest member; members within a group ascend by id.
pub fn filter_chain(snap: &PoisedSnapshot, h: &BTreeSet<ProcessId>, k: usize) -> FilterChain {
    let quotas = Quotas::for_k(k);
    let mut b: BTreeMap<RegisterId, Vec<ProcessId>> = BTreeMap::new();
    for p in h {
        b.entry(snap.target(*p)).or_default().push(*p);
    }
    let mut h1 = Vec::new();
    for (reg, ps) in &b {
        if ps.len() < quotas.q1 {
            continue;
        }
        for chunk in ps.chunks_exact(quotas.q1) {
            h1.push(Group {
                reg: *reg,
                members: chunk.to_vec(),
            });
        }
    }

    let targeted: BTreeSet<RegisterId> = h1.iter().map(|g| g.reg).collect();
    let mut spoiled: BTreeSet<ProcessId> = BTreeSet::new();
    for r in &targeted {
        spoiled.extend(snap.owners.get(r));
        spoiled.extend(snap.last.get(r));
    }
    let h2: Vec<Group> = h1
        .iter()
        .map(|g| Group {
            reg: g.reg,
            members: g.members.iter().filter(|p| !spoiled.contains(p)).copied().collect(),
        })
        .filter(|g| !g.members.is_empty())
        .collect();

    let h3 = shrink(h2.clone(), quotas.q3, 1);

    let mut counts: BTreeMap<OpKind, usize> = BTreeMap::new();
    for p in h3.iter().flat_map(|g| &g.members) {
        *counts.entry(snap.poised[p].kind()).or_insert(0) += 1;
    }
    // Strict `>` keeps the earliest kind on ties.
    let opt = counts
        .iter()
        .fold(None, |best: Option<(OpKind, usize)>, (kind, c)| match best {
            Some((_, bc)) if bc >= *c => best,
            _ => Some((*kind, *c)),
        });
    let opt = opt.map(|(kind, _)| kind);
    let h4: Vec<Group> = h3
        .iter()
        .map(|g| Group {
            reg: g.reg,
            members: g
                .members
                .iter()
                .filter(|p| Some(snap.poised[p].kind()) == opt)
                .copied()
                .collect(),
        })
        .filter(|g| !g.members.is_empty())
        .collect();

    // Two alpha processes per group are the least a group can offer.
    let h5 = shrink(h4.clone(), quotas.q5, 2);

    FilterChain {
        quotas,
        h1,
        h2,
        h3,
        h4,
        h5,
        opt,
    }
}

/// `D`: members of `H₅ \ S_α` that own, or last touched, a register the
/// alpha completions access.
pub fn compute_d(
    owners: &BTreeMap<RegisterId, ProcessId>,
    last: &BTreeMap<RegisterId, ProcessId>,
    h5: &BTreeSet<ProcessId>,
    s_alpha: &BTreeSet<ProcessId>,
    r_f: &BTreeSet<RegisterId>,
) -> BTreeSet<ProcessId> {
    let mut d = BTreeSet::new();
    for r in r_f {
        for p in [owners.get(r), last.get(r)].into_iter().flatten() {
            if h5.contains(p) && !s_alpha.contains(p) {
                d.insert(*p);
            }
        }
    }
    d
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlphaPair {
    pub a1: ProcessId,
    pub a2: ProcessId,
}

/// `G'[j] = G[j] \ D` and `β₁[j]`, chosen when `|G'[j]| ≥ q_β`.
pub fn choose_betas(
    groups: &[Group],
    alphas: &[AlphaPair],
    d: &BTreeSet<ProcessId>,
    q_beta: usize,
    mut rng: Option<&mut ChaCha8Rng>,
) -> (Vec<Vec<ProcessId>>, Vec<Option<ProcessId>>) {
    let mut g_prime = Vec::new();
    let mut betas = Vec::new();
    for (g, a) in groups.iter().zip(alphas) {
        let gp: Vec<ProcessId> = g.members.iter().filter(|p| !d.contains(p)).copied().collect();
        let pool: Vec<ProcessId> = gp.iter().filter(|p| **p != a.a1 && **p != a.a2).copied().collect();
        let beta = if gp.len() >= q_beta && !pool.is_empty() {
            Some(match rng.as_deref_mut() {
                Some(r) => pool[r.gen_range(0..pool.len())],
                None => pool[0],
            })
        } else {
            None
        };
        g_prime.push(gp);
        betas.push(beta);
    }
    (g_prime, betas)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaCase {
    /// No beta: `α₁ ∘ α₂`.
    AlphaOnly,
    /// `β₁ ∘ α₂`.
    Fai,
    /// `β₁ ∘ α₁ ∘ α₂`.
    CasMismatch,
    /// `α₁ ∘ β₁ ∘ α₂`.
    Middle,
}

pub fn beta_case(opt: OpKind, beta1: Option<ProcessId>, v_beta: Option<&Value>, v_j: &Value) -> BetaCase {
    match (beta1, opt) {
        (None, _) => BetaCase::AlphaOnly,
        (Some(_), OpKind::Fai) => BetaCase::Fai,
        (Some(_), OpKind::Cas) if v_beta.is_some_and(|v| v != v_j) => BetaCase::CasMismatch,
        _ => BetaCase::Middle,
    }
}

pub fn beta_order(case: BetaCase, a: AlphaPair, beta1: Option<ProcessId>) -> Vec<ProcessId> {
    match (case, beta1) {
        (BetaCase::Fai, Some(b)) => vec![b, a.a2],
        (BetaCase::CasMismatch, Some(b)) => vec![b, a.a1, a.a2],
        (BetaCase::Middle, Some(b)) => vec![a.a1, b, a.a2],
        _ => vec![a.a1, a.a2],
    }
}

#[cfg(test)]
mod tests {
    use super::super::poised::tests::{p, snap};
    use super::*;

    fn set(ids: &[u32]) -> BTreeSet<ProcessId> {
        ids.iter().map(|i| p(*i)).collect()
    }

    #[test]
    fn quota_floors() {
        assert_eq!(
            Quotas::for_k(1),
            Quotas {
                q1: 1,
                q3: 1,
                q5: 1,
                q_beta: 3
            }
        );
        assert_eq!(
            Quotas::for_k(96),
            Quotas {
                q1: 96,
                q3: 24,
                q5: 3,
                q_beta: 3
            }
        );
        assert_eq!(
            Quotas::for_k(FAITHFUL_K),
            Quotas {
                q1: 5120,
                q3: 1280,
                q5: 160,
                q_beta: 32
            }
        );
    }

    #[test]
    fn clean_split_into_two_fai_groups() {
        let mut ops: Vec<(u32, OpKind, u32)> = (1..=64).map(|i| (i, OpKind::Fai, 0)).collect();
        ops.extend((65..=128).map(|i| (i, OpKind::Fai, 1)));
        let s = snap(&ops);
        let h = s.poised.keys().copied().collect();
        let c = filter_chain(&s, &h, 64);
        assert_eq!(c.h5.len(), 2);
        assert_eq!(c.opt, Some(OpKind::Fai));
        assert_eq!(c.sizes(), [128, 128, 32, 32, 4]);
        assert_eq!(c.h5[0].members, vec![p(1), p(2)]);
    }

    #[test]
    fn big_register_yields_several_groups_and_drops_leftovers() {
        let ops: Vec<(u32, OpKind, u32)> = (1..=10).map(|i| (i, OpKind::Fas, 0)).collect();
        let s = snap(&ops);
        let c = filter_chain(&s, &s.poised.keys().copied().collect(), 4);
        assert_eq!(c.h1.len(), 2);
        assert_eq!(c.sizes()[0], 8);
    }

    #[test]
    fn owner_and_last_accessor_of_a_target_are_removed() {
        let ops: Vec<(u32, OpKind, u32)> = (1..=8).map(|i| (i, OpKind::Fai, 0)).collect();
        let mut s = snap(&ops);
        s.owners.insert(RegisterId(0), p(2));
        s.last.insert(RegisterId(0), p(5));
        let c = filter_chain(&s, &s.poised.keys().copied().collect(), 8);
        assert_eq!(c.h2[0].members, vec![p(1), p(3), p(4), p(6), p(7), p(8)]);
    }

    #[test]
    fn plurality_and_ties() {
        // Two CAS groups against one read group, two survivors each in H3.
        let kinds = [OpKind::Cas, OpKind::Read, OpKind::Cas];
        let ops: Vec<(u32, OpKind, u32)> = (0..24u32).map(|i| (i + 1, kinds[(i / 8) as usize], i / 8)).collect();
        let s = snap(&ops);
        let c = filter_chain(&s, &s.poised.keys().copied().collect(), 8);
        assert_eq!(c.opt, Some(OpKind::Cas));
        assert_eq!(c.sizes()[2..4], [6, 4]);
        let tie: Vec<(u32, OpKind, u32)> = vec![
            (1, OpKind::Cas, 0),
            (2, OpKind::Cas, 0),
            (3, OpKind::Fas, 1),
            (4, OpKind::Fas, 1),
        ];
        let s = snap(&tie);
        let c = filter_chain(&s, &s.poised.keys().copied().collect(), 2);
        assert_eq!(c.opt, Some(OpKind::Fas));
    }

    #[test]
    fn singleton_groups_are_degenerate() {
        let s = snap(&[(1, OpKind::Cas, 0), (2, OpKind::Cas, 1)]);
        let c = filter_chain(&s, &s.poised.keys().copied().collect(), 1);
        assert_eq!(c.h1.len(), 2);
        assert!(c.is_degenerate());
    }

    #[test]
    fn d_collects_owners_and_last_accessors() {
        let owners = [(RegisterId(3), p(4))].into_iter().collect();
        let last = [(RegisterId(5), p(6)), (RegisterId(7), p(1))].into_iter().collect();
        let h5 = set(&[1, 2, 4, 6, 9]);
        let r_f = [RegisterId(3), RegisterId(5), RegisterId(7)].into_iter().collect();
        assert_eq!(compute_d(&owners, &last, &h5, &set(&[1, 2]), &r_f), set(&[4, 6]));
        assert!(compute_d(&owners, &last, &h5, &set(&[1, 2]), &BTreeSet::new()).is_empty());
    }

    #[test]
    fn beta_cases() {
        let a = AlphaPair { a1: p(1), a2: p(2) };
        let b = Some(p(3));
        let v0 = Value::Int(0);
        assert_eq!(beta_order(beta_case(OpKind::Fai, b, None, &v0), a, b), vec![p(3), p(2)]);
        let c = beta_case(OpKind::Cas, b, Some(&Value::Int(1)), &v0);
        assert_eq!(beta_order(c, a, b), vec![p(3), p(1), p(2)]);
        let c = beta_case(OpKind::Cas, b, Some(&v0), &v0);
        assert_eq!(beta_order(c, a, b), vec![p(1), p(3), p(2)]);
        assert_eq!(
            beta_order(beta_case(OpKind::Fas, b, None, &v0), a, b),
            vec![p(1), p(3), p(2)]
        );
        assert_eq!(
            beta_order(beta_case(OpKind::Fas, None, None, &v0), a, None),
            vec![p(1), p(2)]
        );
    }

    #[test]
    fn beta_needs_quota_and_a_third_member() {
        let groups = vec![
            Group {
                reg: RegisterId(0),
                members: vec![p(1), p(2), p(3)],
            },
            Group {
                reg: RegisterId(1),
                members: vec![p(4), p(5), p(6)],
            },
        ];
        let alphas = [AlphaPair { a1: p(1), a2: p(2) }, AlphaPair { a1: p(4), a2: p(5) }];
        let (gp, betas) = choose_betas(&groups, &alphas, &set(&[6]), 3, None);
        assert_eq!(betas, vec![Some(p(3)), None]);
        assert_eq!(gp[1], vec![p(4), p(5)]);
    }
}
