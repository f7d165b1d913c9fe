use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::high::{beta_case, beta_order, choose_betas, compute_d, filter_chain, AlphaPair, Group, FAITHFUL_K};
use super::low::{build_conflict_graph, independent_set};
use super::poised::{decide, Branch, PoisedSnapshot};
use super::{
    bounds, AdversaryConfig, AdversaryError, ErrorCode, GroupReport, HighArtifacts, HighDetail, LowDetail, RoundReport,
    Sizes,
};
use crate::algorithm::{check_assumptions, AssumptionReport};
use crate::compliance::{subsets_to_visit, GroupFragment, Layer, ScheduleArray, SubstituteLayer};
use crate::model::{
    Configuration, EventOp, MemoryModel, ModelError, Operation, ProcessId, RegisterId, Response, Schedule, Step,
    System, Trace, Value,
};
use crate::ProcessSet;

pub(super) enum RoundResult {
    Done {
        array: ScheduleArray,
        report: Box<RoundReport>,
        high: Option<Box<HighArtifacts>>,
    },
    /// The round could not start: nobody left after the setup phase.
    Terminated(Box<RoundReport>),
}

pub(super) struct Round<'a> {
    pub sys: &'a System,
    pub cfg: &'a AdversaryConfig,
    pub round: u32,
    pub rng: Option<ChaCha8Rng>,
}

fn to_set(ps: &BTreeSet<ProcessId>) -> ProcessSet {
    ProcessSet::from_pids(ps.iter().copied())
}

fn accessed(trace: &Trace) -> BTreeSet<RegisterId> {
    trace.events().iter().filter_map(|e| e.reg).collect()
}

fn rmrs_by(trace: &Trace, p: ProcessId) -> usize {
    trace.events().iter().filter(|e| e.pid == p && e.rmr).count()
}

fn left_cs(trace: &Trace, who: ProcessSet) -> Option<ProcessId> {
    trace
        .events()
        .iter()
        .find(|e| e.op == EventOp::LeaveCs && who.contains(e.pid))
        .map(|e| e.pid)
}

type Signature = Vec<(ProcessId, EventOp, Option<RegisterId>, Option<Response>)>;

fn signature(trace: &Trace) -> Signature {
    trace
        .events()
        .iter()
        .map(|e| (e.pid, e.op.clone(), e.reg, e.response.clone()))
        .collect()
}

struct Setup {
    array: ScheduleArray,
    evicted: Option<ProcessId>,
    sigma_total: usize,
}

impl Round<'_> {
    fn err(&self, code: ErrorCode, message: impl Into<String>) -> AdversaryError {
        AdversaryError {
            code,
            round: self.round,
            message: message.into(),
            subset: None,
            process: None,
            trace: None,
        }
    }

    fn lemma(&self, code: ErrorCode, name: &str, s: ProcessSet, p: Option<ProcessId>, what: String) -> AdversaryError {
        AdversaryError {
            subset: Some(s),
            process: p,
            ..self.err(code, format!("{name} fails for S = {s}: {what}"))
        }
    }

    fn model(&self, e: ModelError) -> AdversaryError {
        self.err(ErrorCode::ModelError, e.to_string())
    }

    fn exec(&self, a: &ScheduleArray, s: ProcessSet) -> Result<(Configuration, Trace), AdversaryError> {
        let sched = a
            .get(s)
            .ok_or_else(|| self.err(ErrorCode::ModelError, format!("entry {s} is bottom")))?;
        self.sys.run(&sched).map_err(|e| self.model(e))
    }

    fn cont(&self, c: &Configuration, sched: &Schedule) -> Result<(Configuration, Trace), AdversaryError> {
        self.sys.execute(c, sched).map_err(|e| self.model(e))
    }

    fn visit(&self, floor: ProcessSet, smax: ProcessSet) -> Vec<ProcessSet> {
        subsets_to_visit(floor, smax, &self.cfg.check).0
    }

    fn pick(&mut self, pool: &[ProcessId]) -> ProcessId {
        match self.rng.as_mut() {
            Some(r) => pool[r.gen_range(0..pool.len())],
            None => pool[0],
        }
    }

    /// The longest run of RMR-free solo steps of `p` from `c`.
    fn solo(&self, c: &Configuration, p: ProcessId) -> Result<Schedule, AdversaryError> {
        let mut c = c.clone();
        let mut sched = Schedule::new();
        loop {
            if c.finished().contains(p) || self.sys.next_step_rmr(&c, p).map_err(|e| self.model(e))? {
                return Ok(sched);
            }
            if sched.len() >= self.cfg.step_budget {
                return Err(AdversaryError {
                    process: Some(p),
                    ..self.err(
                        ErrorCode::SetupBudgetExceeded,
                        format!("{p} takes more than {} steps without an RMR", self.cfg.step_budget),
                    )
                });
            }
            self.sys.step(&mut c, Step::normal(p)).map_err(|e| self.model(e))?;
            sched.push(Step::normal(p));
        }
    }

    /// Removes the single active CS occupant of `A[S_max]`, if any.
    fn cs_eviction(&self, a: ScheduleArray) -> Result<(ScheduleArray, Option<ProcessId>), AdversaryError> {
        let (floor, smax) = a.bounds().expect("interval array");
        let (c, trace) = self.exec(&a, smax)?;
        let occ = c.cs_occupants().intersection(&smax.difference(&floor));
        match occ.len() {
            0 => Ok((a, None)),
            1 => {
                let p = occ.first().unwrap();
                Ok((a.restrict(floor, smax.without(p)), Some(p)))
            }
            _ => Err(AdversaryError {
                subset: Some(smax),
                trace: Some(trace),
                ..self.err(
                    ErrorCode::MutualExclusionViolation,
                    format!("{occ} are in the critical section together"),
                )
            }),
        }
    }

    fn setup(&mut self, prev: &ScheduleArray) -> Result<Setup, AdversaryError> {
        const E: ErrorCode = ErrorCode::SetupLemmaViolation;
        let (f, smax) = prev.bounds().expect("interval array");
        let active = smax.difference(&f);
        let mut solo = BTreeMap::new();
        let mut end_state = BTreeMap::new();
        let mut own_values: BTreeMap<ProcessId, Vec<(RegisterId, Value)>> = BTreeMap::new();
        for p in active.iter() {
            let (c, _) = self.exec(prev, f.with(p))?;
            let sigma = self.solo(&c, p)?;
            let (c_end, _) = self.cont(&c, &sigma)?;
            end_state.insert(p, c_end.process(p).clone());
            let owned = self
                .sys
                .registers()
                .iter()
                .filter(|r| r.owner == Some(p))
                .map(|r| (r.id, c_end.value(r.id).clone()))
                .collect();
            own_values.insert(p, owned);
            solo.insert(p, sigma);
        }
        let sigma_total = solo.values().map(Schedule::len).sum();
        let layer = Layer::Setup { solo: solo.clone() };
        let dsm = self.sys.model() == MemoryModel::Dsm;

        for s in self.visit(f, smax) {
            let (c_s, _) = self.exec(prev, s)?;
            let mut sigma_s = Schedule::new();
            for p in s.iter() {
                if let Some(x) = solo.get(&p) {
                    sigma_s.extend_from(x);
                }
            }
            let (c_end, tr) = self.cont(&c_s, &sigma_s)?;
            for e in tr.events() {
                if e.rmr {
                    return Err(self.lemma(E, "S1", s, Some(e.pid), "an RMR in the appended segment".into()));
                }
                if let Some(r) = e.reg {
                    if dsm && self.sys.owner(r) != Some(e.pid) {
                        return Err(self.lemma(E, "S6", s, Some(e.pid), format!("{r} accessed by a non-owner")));
                    }
                    if !dsm && e.op != EventOp::Read {
                        return Err(self.lemma(E, "S8", s, Some(e.pid), format!("non-read on {r}")));
                    }
                }
            }
            if !dsm && tr.events().iter().any(|e| e.op == EventOp::Read && e.rmr) {
                return Err(self.lemma(E, "S9", s, None, "a read without a cache copy".into()));
            }
            for p in s.intersection(&active).iter() {
                let st = c_end.process(p);
                let want = &end_state[&p];
                if (&st.local, st.section) != (&want.local, want.section) {
                    return Err(self.lemma(E, "S2", s, Some(p), "state differs from the solo run".into()));
                }
                if !self.sys.next_step_rmr(&c_end, p).map_err(|e| self.model(e))? {
                    return Err(self.lemma(E, "S3", s, Some(p), "next step is not an RMR".into()));
                }
                if dsm {
                    for (r, v) in &own_values[&p] {
                        if c_end.value(*r) != v {
                            return Err(self.lemma(
                                E,
                                "S7",
                                s,
                                Some(p),
                                format!("owned {r} differs from the solo run"),
                            ));
                        }
                    }
                }
            }
            if let Some(p) = left_cs(&tr, active) {
                return Err(self.lemma(E, "S4", s, Some(p), "left the critical section".into()));
            }
            if c_end.finished() != c_s.finished() {
                return Err(self.lemma(E, "S5", s, None, "the finished set changed".into()));
            }
        }
        let (array, evicted) = self.cs_eviction(prev.push_layer(layer))?;
        Ok(Setup {
            array,
            evicted,
            sigma_total,
        })
    }

    pub fn run(mut self, prev: &ScheduleArray) -> Result<RoundResult, AdversaryError> {
        let n = self.sys.n();
        let k = self.cfg.k;
        let (f_old, smax_old) = prev.bounds().expect("interval array");
        let n_prev = smax_old.difference(&f_old).len();
        let setup = self.setup(prev)?;
        let (f, smax) = setup.array.bounds().unwrap();
        let active = smax.difference(&f);
        let (c, trace) = self.exec(&setup.array, smax)?;
        let a2 = check_assumptions(&trace, n, self.cfg.a2_budget);

        let mut report = RoundReport {
            round: self.round,
            branch: Branch::Terminated,
            fallback: false,
            note: None,
            n_prev,
            n_i: 0,
            ratio: None,
            smax,
            f,
            sizes: Sizes {
                sigma_setup: setup.sigma_total,
                evicted_setup: setup.evicted,
                active_after_setup: active.len(),
                ..Sizes::default()
            },
            bounds: Vec::new(),
            assumptions: a2.clone(),
            low: None,
            high: None,
            compliance: None,
        };
        if active.is_empty() {
            report.note = Some("no active process left after the setup phase".into());
            return Ok(RoundResult::Terminated(Box::new(report)));
        }

        let snap = PoisedSnapshot::capture(self.sys, &c, active).map_err(|(p, why)| AdversaryError {
            process: Some(p),
            subset: Some(smax),
            ..self.err(ErrorCode::SetupLemmaViolation, format!("S3 fails for {p}: {why}"))
        })?;
        let decision = decide(&snap, k);
        report.sizes.h = decision.h.len();
        report.sizes.l = decision.l.len();

        let mut low_set = decision.l.clone();
        if decision.branch == Branch::High {
            let chain = filter_chain(&snap, &decision.h, k);
            let [h1, h2, h3, h4, h5] = chain.sizes();
            report.sizes.h1 = Some(h1);
            report.sizes.h2 = Some(h2);
            report.sizes.h3 = Some(h3);
            report.sizes.h4 = Some(h4);
            report.sizes.h5 = Some(h5);
            if chain.is_degenerate() {
                report.fallback = true;
                if low_set.is_empty() {
                    low_set = active.iter().collect();
                    report.note = Some(
                        "no group survives the high filters and L is empty: low branch over all active processes"
                            .into(),
                    );
                } else {
                    report.note = Some("no group survives the high filters: low branch over L".into());
                }
            } else {
                let (array, high) = self.high(&setup.array, &decision.h, chain, &a2, &mut report)?;
                report.branch = Branch::High;
                return Ok(self.finish(array, report, Some(Box::new(high))));
            }
        }
        let array = self.low(&setup.array, &snap, &low_set, &a2, &mut report)?;
        report.branch = Branch::Low;
        Ok(self.finish(array, report, None))
    }

    fn finish(&self, array: ScheduleArray, mut report: RoundReport, high: Option<Box<HighArtifacts>>) -> RoundResult {
        let array = array.with_round(self.round);
        let (f, smax) = array.bounds().unwrap();
        report.smax = smax;
        report.f = f;
        report.n_i = smax.difference(&f).len();
        report.ratio = (report.n_prev > 0).then(|| report.n_i as f64 / report.n_prev as f64);
        RoundResult::Done {
            array,
            report: Box::new(report),
            high,
        }
    }

    fn low(
        &mut self,
        setup_b: &ScheduleArray,
        snap: &PoisedSnapshot,
        l: &BTreeSet<ProcessId>,
        a2: &AssumptionReport,
        report: &mut RoundReport,
    ) -> Result<ScheduleArray, AdversaryError> {
        const E: ErrorCode = ErrorCode::LowLemmaViolation;
        let (n, k) = (self.sys.n(), self.cfg.k);
        let graph = build_conflict_graph(snap, l);
        let indep = independent_set(&graph, self.rng.as_mut());
        let (f, _) = setup_b.bounds().unwrap();
        let i_set = to_set(&indep);
        let s_i = f.union(&i_set);
        let low_a = setup_b.restrict(f, s_i);
        let low_b = low_a.push_layer(Layer::OneStep { members: i_set });
        let step_of = |s: ProcessSet| Schedule::of(s.intersection(&i_set).iter());

        let (c_ref, _) = self.exec(&low_a, s_i)?;
        let (c_ref_end, tr_ref) = self.cont(&c_ref, &step_of(s_i))?;
        let touched_by_ref: BTreeMap<ProcessId, RegisterId> = tr_ref
            .events()
            .iter()
            .filter_map(|e| e.reg.map(|r| (e.pid, r)))
            .collect();
        let mut y: BTreeMap<RegisterId, Value> = BTreeMap::new();
        let cc = self.sys.model() == MemoryModel::Cc;

        for s in self.visit(f, s_i) {
            let (c_s, tr_pre) = self.exec(&low_a, s)?;
            let (c_end, tr) = self.cont(&c_s, &step_of(s))?;
            let mut by_reg: BTreeMap<RegisterId, ProcessId> = BTreeMap::new();
            for e in tr.events() {
                let Some(r) = e.reg else { continue };
                let p = e.pid;
                if !i_set.contains(p) || by_reg.insert(r, p).is_some_and(|q| q != p) {
                    return Err(self.lemma(E, "L1", s, Some(p), format!("{r} accessed by two processes")));
                }
                let others = i_set.without(p);
                if self.sys.owner(r).is_some_and(|o| others.contains(o)) {
                    return Err(self.lemma(E, "L2", s, Some(p), format!("{r} is owned by another member of I")));
                }
                if !c_s.touched_by(r).intersection(&others).is_empty() {
                    return Err(self.lemma(E, "L3", s, Some(p), format!("{r} was touched by another member of I")));
                }
                if cc && !e.op.operation().is_some_and(|o| o.is_read()) {
                    if let Some(q) = others.iter().find(|q| c_s.valid_cache(*q).contains(&r)) {
                        return Err(self.lemma(
                            E,
                            "L4",
                            s,
                            Some(p),
                            format!("invalidates the copy of {r} held by {q}"),
                        ));
                    }
                }
                if c_end.value(r) != c_ref_end.value(r) {
                    return Err(self.lemma(E, "L6", s, Some(p), format!("{r} ends with a different value")));
                }
            }
            for (p, r) in &touched_by_ref {
                let v = c_s.value(*r);
                if s.contains(*p) {
                    if v != c_ref.value(*r) {
                        return Err(self.lemma(E, "L5", s, Some(*p), format!("{r} differs from A[S_I]")));
                    }
                } else if let Some(w) = y.get(r) {
                    if w != v {
                        return Err(self.lemma(E, "L5", s, Some(*p), format!("{r} has no common value y_R")));
                    }
                } else {
                    y.insert(*r, v.clone());
                }
            }
            for p in s.iter() {
                if c_end.state_of(p) != c_ref_end.state_of(p) {
                    return Err(self.lemma(E, "L7", s, Some(p), "state differs from A[S_I]".into()));
                }
            }
            for p in s.intersection(&i_set).iter() {
                let r = rmrs_by(&tr, p);
                if r != 1 {
                    return Err(self.lemma(E, "L8", s, Some(p), format!("{r} RMRs instead of one")));
                }
            }
            let live = s.difference(&f);
            if let Some(p) = left_cs(&tr_pre, live).or(left_cs(&tr, live)) {
                return Err(self.lemma(E, "L9", s, Some(p), "left the critical section".into()));
            }
            if c_end.finished() != c_s.finished() {
                return Err(self.lemma(E, "L10", s, None, "the finished set changed".into()));
            }
        }
        let (low_c, evicted) = self.cs_eviction(low_b)?;

        let asserted = a2.a2_ok && !report.fallback;
        report
            .bounds
            .push(bounds::edge_bound(graph.edges.len(), k, l.len(), n, asserted));
        report
            .bounds
            .push(bounds::isize_bound(indep.len(), l.len(), k, n, asserted));
        report.sizes.i = Some(indep.len());
        report.sizes.edges = Some(graph.edges.len());
        report.sizes.evicted_low = evicted;
        report.low = Some(LowDetail {
            l: l.iter().copied().collect(),
            edges_by_tag: graph.count_by_tag(),
            independent: indep.iter().copied().collect(),
            s_i,
        });
        for b in &report.bounds {
            if b.asserted && !b.holds {
                return Err(self.err(E, format!("{} fails: {} vs {}", b.name, b.lhs, b.rhs)));
            }
        }
        Ok(low_c)
    }

    #[allow(clippy::too_many_lines)]
    fn high(
        &mut self,
        setup_b: &ScheduleArray,
        h: &BTreeSet<ProcessId>,
        chain: super::high::FilterChain,
        a2_setup: &AssumptionReport,
        report: &mut RoundReport,
    ) -> Result<(ScheduleArray, HighArtifacts), AdversaryError> {
        const E: ErrorCode = ErrorCode::HighLemmaViolation;
        let (n, k) = (self.sys.n(), self.cfg.k);
        let opt = chain.opt.expect("non-degenerate chain has an operation type");
        let groups: Vec<Group> = chain.h5.clone();
        let regs: Vec<RegisterId> = groups.iter().map(|g| g.reg).collect();
        let reg_set: BTreeSet<RegisterId> = regs.iter().copied().collect();
        let h5 = chain.h5_members();
        let (f, _) = setup_b.bounds().unwrap();
        let s_h = f.union(&to_set(&h5));
        let high_a = setup_b.restrict(f, s_h);
        let (c_h, _) = self.exec(&high_a, s_h)?;
        let poised_h = PoisedSnapshot::capture(self.sys, &c_h, to_set(&h5)).map_err(|(p, why)| AdversaryError {
            process: Some(p),
            ..self.err(E, format!("group member {p} lost its target: {why}"))
        })?;

        // Alphas, and the value chain v_j they induce.
        let mut c_run = c_h.clone();
        let mut alphas = Vec::new();
        let mut v = Vec::new();
        for g in &groups {
            let v_j = c_run.value(g.reg).clone();
            let eligible: Vec<ProcessId> = if opt == crate::model::OpKind::Cas {
                g.members
                    .iter()
                    .filter(|p| {
                        matches!(&poised_h.poised[*p].op,
                            Operation::Cas { expected, new } if *expected == v_j && *new != v_j)
                    })
                    .copied()
                    .collect()
            } else {
                Vec::new()
            };
            let a1 = if eligible.is_empty() {
                self.pick(&g.members)
            } else {
                self.pick(&eligible)
            };
            let rest: Vec<ProcessId> = g.members.iter().filter(|p| **p != a1).copied().collect();
            let a2 = self.pick(&rest);
            c_run = self.cont(&c_run, &Schedule::of([a1, a2]))?.0;
            alphas.push(AlphaPair { a1, a2 });
            v.push(v_j);
        }
        let sigma_alpha = Schedule::of(alphas.iter().flat_map(|a| [a.a1, a.a2]));
        let s_alpha_b: BTreeSet<ProcessId> = alphas.iter().flat_map(|a| [a.a1, a.a2]).collect();
        let s_alpha = to_set(&s_alpha_b);

        // σ_F: crash every alpha, then drive them round-robin to completion.
        let s_f = f.union(&s_alpha);
        let (c_f0, tr_f0) = self.exec(&high_a, s_f)?;
        let (c_f, tr_alpha) = self.cont(&c_f0, &sigma_alpha)?;
        let mut sigma_f = Schedule::from_steps(s_alpha.iter().map(Step::crash).collect());
        let mut c_run = self.cont(&c_f, &sigma_f)?.0;
        let mut tail = Trace::new();
        let mut steps = 0usize;
        while !s_alpha.is_subset(&c_run.finished()) {
            for p in s_alpha.difference(&c_run.finished()).iter() {
                if steps >= self.cfg.step_budget {
                    return Err(AdversaryError {
                        subset: Some(s_f),
                        trace: Some(tail),
                        ..self.err(
                            ErrorCode::CompletionStall,
                            format!(
                                "alphas {s_alpha} do not all finish within {} steps",
                                self.cfg.step_budget
                            ),
                        )
                    });
                }
                let e = self.sys.step(&mut c_run, Step::normal(p)).map_err(|e| self.model(e))?;
                tail.push(e);
                sigma_f.push(Step::normal(p));
                steps += 1;
            }
        }
        let r_f = accessed(&tail);
        let reference = signature(&tail);
        let mut full = tr_f0;
        full.append(tr_alpha);
        let a2 = a2_setup.merge(&check_assumptions(
            &{
                let mut t = full;
                t.append(self.cont(&c_f, &sigma_f)?.1);
                t
            },
            n,
            self.cfg.a2_budget,
        ));
        report.assumptions = a2.clone();

        // D, G', betas.
        let owners: BTreeMap<RegisterId, ProcessId> = self
            .sys
            .registers()
            .iter()
            .filter_map(|r| r.owner.map(|o| (r.id, o)))
            .collect();
        let last: BTreeMap<RegisterId, ProcessId> = self
            .sys
            .registers()
            .iter()
            .filter_map(|r| c_h.last_accessor(r.id).map(|w| (r.id, w)))
            .collect();
        let d = compute_d(&owners, &last, &h5, &s_alpha_b, &r_f);
        let (g_prime, betas) = choose_betas(&groups, &alphas, &d, chain.quotas.q_beta, self.rng.as_mut());
        let mut fragments = Vec::new();
        let mut group_reports = Vec::new();
        for (j, g) in groups.iter().enumerate() {
            let b1 = betas[j];
            let v_beta = b1.and_then(|b| match &poised_h.poised[&b].op {
                Operation::Cas { expected, .. } => Some(expected.clone()),
                _ => None,
            });
            let case = beta_case(opt, b1, v_beta.as_ref(), &v[j]);
            let alpha = Schedule::of([alphas[j].a1, alphas[j].a2]);
            let beta = Schedule::of(beta_order(case, alphas[j], b1));
            group_reports.push(GroupReport {
                reg: g.reg,
                members: g.members.clone(),
                g_prime: g_prime[j].clone(),
                alpha: alphas[j],
                beta1: b1,
                case,
                v_j: v[j].clone(),
            });
            fragments.push(GroupFragment { alpha, beta1: b1, beta });
        }
        let s_beta_b: BTreeSet<ProcessId> = s_alpha_b
            .iter()
            .copied()
            .chain(betas.iter().flatten().copied())
            .collect();
        let s_beta = to_set(&s_beta_b);
        let s_b = f.union(&s_beta);
        let high_b = high_a.restrict(f, s_b);
        let layer = SubstituteLayer {
            groups: fragments,
            sigma_f: sigma_f.clone(),
        };
        let floor_c = f.union(&s_alpha);
        let high_c = high_b
            .restrict(floor_c, s_b)
            .push_layer(Layer::Substitute(layer.clone()));

        // Lemma checks over [F ∪ S_α, S_B].
        let cc = self.sys.model() == MemoryModel::Cc;
        let (c_b, _) = self.exec(&high_b, s_b)?;
        let (c_b_end, _) = self.cont(&c_b, &layer.substituted(s_b))?;
        let live_b = s_b.difference(&f);
        for s in self.visit(floor_c, s_b) {
            let (c_s, tr_pre) = self.exec(&high_b, s)?;
            let sub = layer.substituted(s);
            let (c_end, tr) = self.cont(&c_s, &sub)?;
            let (_, tr_a) = self.cont(&c_s, &sigma_alpha)?;
            if accessed(&tr) != reg_set || accessed(&tr_a) != reg_set {
                return Err(self.lemma(
                    E,
                    "ExactlyGroupRegsAccessed",
                    s,
                    None,
                    "accessed registers differ from R[0..h-1]".into(),
                ));
            }
            let (mut c1, mut c2) = (c_s.clone(), c_s.clone());
            for (j, frag) in layer.groups.iter().enumerate() {
                let mine = match frag.beta1 {
                    Some(b) if s.contains(b) => &frag.beta,
                    _ => &frag.alpha,
                };
                self.sys.execute_in_place(&mut c1, mine).map_err(|e| self.model(e))?;
                self.sys
                    .execute_in_place(&mut c2, &frag.alpha)
                    .map_err(|e| self.model(e))?;
                if c1.values() != c2.values() {
                    return Err(self.lemma(
                        E,
                        "AlphaBetaIndistinguishable",
                        s,
                        frag.beta1,
                        format!("register values differ after group {j}"),
                    ));
                }
            }
            for e in tr.events() {
                if let Some(o) = e.reg.and_then(|r| self.sys.owner(r)) {
                    if live_b.contains(o) {
                        return Err(self.lemma(
                            E,
                            "H1",
                            s,
                            Some(e.pid),
                            format!("touches a register owned by active {o}"),
                        ));
                    }
                }
            }
            for r in &regs {
                if c_s.value(*r) != c_b.value(*r) {
                    return Err(self.lemma(E, "H2", s, None, format!("{r} differs from A[S_B] before substitution")));
                }
                if c_end.value(*r) != c_b_end.value(*r) {
                    return Err(self.lemma(E, "H4", s, None, format!("{r} differs from A[S_B] after substitution")));
                }
            }
            for p in s.difference(&f).iter() {
                if cc && c_end.valid_cache(p) != c_b_end.valid_cache(p) {
                    return Err(self.lemma(E, "H3", s, Some(p), "cache differs from A[S_B]".into()));
                }
            }
            for p in s.difference(&s_alpha).iter() {
                if c_end.state_of(p) != c_b_end.state_of(p) {
                    return Err(self.lemma(E, "H5", s, Some(p), "state differs from A[S_B]".into()));
                }
            }
            // A FAI substitution drops α₁, so only those who step must pay.
            let stepped = sub.participants();
            for p in s.intersection(&s_beta).iter() {
                let r = rmrs_by(&tr, p);
                let must = stepped.contains(p) || !s_alpha.contains(p);
                if (must && r != 1) || (!must && r != 0) {
                    return Err(self.lemma(E, "H6", s, Some(p), format!("{r} RMRs instead of one")));
                }
            }
            let live = s.difference(&f);
            if let Some(p) = left_cs(&tr_pre, live).or(left_cs(&tr, live)) {
                return Err(self.lemma(E, "H7", s, Some(p), "left the critical section".into()));
            }
            if c_end.finished() != c_s.finished() {
                return Err(self.lemma(E, "H8", s, None, "the finished set changed".into()));
            }
            let (c_fin, tr_f) = self.cont(&c_end, &sigma_f)?;
            let tail_s = Trace::from_events(tr_f.events()[s_alpha.len()..].to_vec());
            if signature(&tail_s) != reference {
                return Err(self.lemma(E, "sigmaFApplicable", s, None, "sigma_F behaves differently".into()));
            }
            if c_fin.finished() != c_s.finished().union(&s_alpha) {
                return Err(self.lemma(E, "sigmaFApplicable", s, None, "alphas do not all finish".into()));
            }
        }
        let (c_c, _) = self.exec(&high_c, s_b)?;
        let f_growth = c_c.finished() == c_b.finished().union(&s_alpha);
        if !f_growth {
            return Err(self.lemma(
                E,
                "HighCInvars",
                s_b,
                None,
                "F(highC[S_B]) != F(highB[S_B]) + S_alpha".into(),
            ));
        }

        let faithful = k >= FAITHFUL_K;
        let x = s_beta.difference(&s_alpha).len();
        report
            .bounds
            .push(bounds::h1_bound(chain.sizes()[0], h.len(), faithful));
        report.bounds.push(bounds::d_bound(d.len(), s_alpha.len(), n, a2.a2_ok));
        report.bounds.push(bounds::beta_bound(x, h.len(), k, faithful));
        report.sizes.h6 = Some(h5.len() - d.len());
        report.sizes.s_alpha = Some(s_alpha.len());
        report.sizes.s_beta = Some(s_beta.len());
        report.sizes.d = Some(d.len());
        report.sizes.groups = Some(groups.len());
        report.high = Some(HighDetail {
            opt_h: opt,
            quotas: chain.quotas,
            groups: group_reports,
            s_alpha,
            s_beta,
            d: d.iter().copied().collect(),
            r_f: r_f.iter().copied().collect(),
            sigma_f_len: sigma_f.len(),
            alpha_beta_indistinguishable: true,
            exactly_group_regs_accessed: true,
            f_growth,
        });
        for b in &report.bounds {
            if b.asserted && !b.holds {
                return Err(self.err(E, format!("{} fails: {} vs {}", b.name, b.lhs, b.rhs)));
            }
        }
        let art = HighArtifacts {
            round: self.round,
            f,
            s_alpha,
            s_b,
            regs,
            high_b,
            layer,
        };
        Ok((high_c, art))
    }
}
