//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the test fails if any of them does.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;
use rme_core::adversary::{
    bounds, decide, high, run, AdversaryConfig, Branch, PoisedOp, PoisedSnapshot, RunOutcome, TieBreak,
};
use rme_core::algorithm::{by_name, MemOp, ScriptedProgram};
use rme_core::compliance::{check_compliance, CheckMode, CheckOptions, Invariant};
use rme_core::model::{
    rmr_count, MemoryModel, Operation, ProcessId, RegisterId, RegisterSpec, Response, Schedule, System, Value,
};
use rme_core::oracle::{compliance_by_definition, explore, recount_rmr, ExplorationBounds, Outcome};
use rme_core::ProcessSet;

type Check = Result<(), String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Check + 'a>);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Check {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn adversary(alg: &str, n: usize, k: usize, model: MemoryModel) -> RunOutcome {
    let cfg = AdversaryConfig::new(alg, n, model).with_k(k).with_min_active(1);
    run(&cfg).expect("valid config")
}

/// Runs that reach both branches, shared by the bound and replay criteria.
fn demo_runs() -> Vec<(String, RunOutcome)> {
    let mut out = Vec::new();
    for n in [6, 8, 12] {
        for model in [MemoryModel::Cc, MemoryModel::Dsm] {
            out.push((
                format!("cas-owner-lock n={n} {model:?}"),
                adversary("cas-owner-lock", n, 1, model),
            ));
        }
    }
    for model in [MemoryModel::Cc, MemoryModel::Dsm] {
        out.push((
            format!("cas-owner-lock n=100 k=96 {model:?}"),
            adversary("cas-owner-lock", 100, 96, model),
        ));
    }
    out.push((
        "counting-cas-lock n=200 k=96 Cc".into(),
        adversary("counting-cas-lock", 200, 96, MemoryModel::Cc),
    ));
    out
}

fn owners(sys: &System) -> BTreeMap<RegisterId, ProcessId> {
    sys.registers()
        .iter()
        .filter_map(|r| r.owner.map(|o| (r.id, o)))
        .collect()
}

fn round_compliance() -> Check {
    for n in [6, 8, 12] {
        for model in [MemoryModel::Cc, MemoryModel::Dsm] {
            let t = Instant::now();
            let out = adversary("cas-owner-lock", n, 1, model);
            ensure(out.report.error.is_none(), || {
                format!("n={n} {model:?}: {:?}", out.report.error)
            })?;
            ensure(out.report.rounds_completed() >= 1, || {
                format!("n={n} {model:?}: no round completed")
            })?;
            for (i, row) in out.rows.iter().enumerate() {
                ensure(row.round() as usize == i, || {
                    format!("row {i} has round {}", row.round())
                })?;
                let rep = check_compliance(&out.system, row, &CheckOptions::default()).map_err(|e| e.to_string())?;
                ensure(rep.exhaustive, || format!("n={n} {model:?} row {i}: not exhaustive"))?;
                ensure(rep.compliant, || {
                    format!("n={n} {model:?} row {i}: fails {:?}", rep.failures())
                })?;
            }
            ensure(t.elapsed() < Duration::from_secs(60), || {
                format!("n={n} {model:?}: took {:?}", t.elapsed())
            })?;
        }
    }
    Ok(())
}

fn rmr_forcing(runs: &[(String, RunOutcome)]) -> Check {
    for (name, out) in runs {
        let row = out.rows.last().unwrap();
        let i = row.round() as u64;
        let (f, smax) = row.bounds().unwrap();
        let sched = row.get(smax).unwrap();
        let (c, trace) = out.system.run(&sched).map_err(|e| e.to_string())?;
        let counts = recount_rmr(
            &trace,
            out.system.model(),
            &owners(&out.system),
            out.system.options().crash_clears_cache,
        );
        let mut entered = BTreeSet::new();
        for e in trace.events() {
            if e.section_after == rme_core::model::Section::Cs {
                entered.insert(e.pid);
            }
        }
        for p in smax.difference(&f).iter() {
            let r = counts.get(&p).copied().unwrap_or(0);
            ensure(r >= i, || format!("{name}: {p} has {r} RMRs in row {i}"))?;
            ensure(
                c.crash_count(p) == 0 && !trace.events().iter().any(|e| e.pid == p && e.is_crash()),
                || format!("{name}: {p} crashed"),
            )?;
            ensure(!entered.contains(&p) && !c.process(p).ever_cs, || {
                format!("{name}: {p} entered the CS")
            })?;
        }
        let w = out.report.final_witness.as_ref().ok_or("no final witness")?;
        ensure(w.holds, || format!("{name}: reported witness does not hold"))?;
    }
    Ok(())
}

fn low_bounds(runs: &[(String, RunOutcome)]) -> Check {
    let mut seen = 0;
    for (name, out) in runs {
        let cfg = &out.report.config;
        for r in out
            .report
            .rounds
            .iter()
            .filter(|r| r.branch == Branch::Low && r.assumptions.a2_ok)
        {
            let low = r
                .low
                .as_ref()
                .ok_or_else(|| format!("{name}: round {} lacks detail", r.round))?;
            let edges: usize = low.edges_by_tag.values().sum();
            ensure(
                Some(edges) == r.sizes.edges && Some(low.independent.len()) == r.sizes.i,
                || format!("{name}: round {} sizes disagree with detail", r.round),
            )?;
            let e = bounds::edge_bound(edges, cfg.k, low.l.len(), cfg.n, true);
            let s = bounds::isize_bound(low.independent.len(), low.l.len(), cfg.k, cfg.n, true);
            ensure(e.holds, || {
                format!("{name}: round {} {} ({} vs {})", r.round, e.name, e.lhs, e.rhs)
            })?;
            ensure(s.holds, || {
                format!("{name}: round {} {} ({} vs {})", r.round, s.name, s.lhs, s.rhs)
            })?;
            seen += 1;
        }
    }
    ensure(seen > 0, || "no Low round with A2 to check".into())
}

/// `|H|` processes on four hot registers with `k = 5120`, past every quota
/// floor, plus a quieter low side.
fn faithful_fixture() -> Check {
    let k = high::FAITHFUL_K;
    let n = 1usize << 16;
    let mut snap = PoisedSnapshot::default();
    let mut id = 1u32;
    for reg in 0..4u32 {
        for _ in 0..k {
            snap.poised.insert(
                ProcessId::new(id),
                PoisedOp {
                    op: Operation::Fai,
                    reg: RegisterId(reg),
                },
            );
            id += 1;
        }
    }
    for j in 0..1000u32 {
        snap.poised.insert(
            ProcessId::new(id),
            PoisedOp {
                op: Operation::Read,
                reg: RegisterId(10 + j % 50),
            },
        );
        id += 1;
    }
    // A few spoilers: register 0 was last touched by one of its suitors, and
    // register 1 is owned by one.
    snap.last.insert(RegisterId(0), ProcessId::new(1));
    snap.owners.insert(RegisterId(1), ProcessId::new(k as u32 + 1));

    let d = decide(&snap, k);
    ensure(d.branch == Branch::High, || "fixture should go high".into())?;
    let chain = high::filter_chain(&snap, &d.h, k);
    ensure(
        chain.h5.len() == 4 && chain.opt == Some(rme_core::model::OpKind::Fai),
        || format!("unexpected chain: {} groups, opt {:?}", chain.h5.len(), chain.opt),
    )?;
    let h1 = bounds::h1_bound(chain.sizes()[0], d.h.len(), true);
    ensure(h1.holds, || format!("{}: {} vs {}", h1.name, h1.lhs, h1.rhs))?;

    let alphas: Vec<high::AlphaPair> = chain
        .h5
        .iter()
        .map(|g| high::AlphaPair {
            a1: g.members[0],
            a2: g.members[1],
        })
        .collect();
    let s_alpha: BTreeSet<ProcessId> = alphas.iter().flat_map(|a| [a.a1, a.a2]).collect();
    let h5 = chain.h5_members();
    // The alpha completions touch the group registers and two more whose
    // last accessors are H5 members.
    let mut last = snap.last.clone();
    let extra: Vec<ProcessId> = chain.h5.iter().map(|g| g.members[5]).take(2).collect();
    last.insert(RegisterId(100), extra[0]);
    last.insert(RegisterId(101), extra[1]);
    let r_f: BTreeSet<RegisterId> = chain
        .h5
        .iter()
        .map(|g| g.reg)
        .chain([RegisterId(100), RegisterId(101)])
        .collect();
    let dset = high::compute_d(&snap.owners, &last, &h5, &s_alpha, &r_f);
    ensure(dset.len() == 2, || format!("|D| = {}", dset.len()))?;
    let db = bounds::d_bound(dset.len(), s_alpha.len(), n, true);
    ensure(db.holds, || format!("{}: {} vs {}", db.name, db.lhs, db.rhs))?;

    let (_, betas) = high::choose_betas(&chain.h5, &alphas, &dset, chain.quotas.q_beta, None);
    let s_beta: BTreeSet<ProcessId> = s_alpha.iter().copied().chain(betas.iter().flatten().copied()).collect();
    let x = s_beta.difference(&s_alpha).count();
    let bb = bounds::beta_bound(x, d.h.len(), k, true);
    ensure(bb.holds, || format!("{}: {} vs {}", bb.name, bb.lhs, bb.rhs))
}

fn high_bounds(runs: &[(String, RunOutcome)]) -> Check {
    let mut seen = 0;
    for (name, out) in runs {
        for r in out
            .report
            .rounds
            .iter()
            .filter(|r| r.branch == Branch::High && r.assumptions.a2_ok)
        {
            let h = r
                .high
                .as_ref()
                .ok_or_else(|| format!("{name}: round {} lacks detail", r.round))?;
            let b = bounds::d_bound(h.d.len(), h.s_alpha.len(), out.report.config.n, true);
            ensure(b.holds, || {
                format!("{name}: round {} {} ({} vs {})", r.round, b.name, b.lhs, b.rhs)
            })?;
            seen += 1;
        }
    }
    ensure(seen > 0, || "no High round with A2 to check".into())?;
    faithful_fixture()
}

fn high_artifacts(runs: &[(String, RunOutcome)]) -> Check {
    ensure(runs.iter().any(|(_, o)| !o.high.is_empty()), || {
        "no High round was produced".into()
    })
}

fn substitution_invisibility(runs: &[(String, RunOutcome)]) -> Check {
    high_artifacts(runs)?;
    for (name, out) in runs {
        let sys = &out.system;
        for art in &out.high {
            let floor = art.f.union(&art.s_alpha);
            for s in ProcessSet::interval(floor, art.s_b.difference(&floor)) {
                let (c_s, _) = sys.run(&art.high_b.get(s).unwrap()).map_err(|e| e.to_string())?;
                let (mut sub, mut alpha) = (c_s.clone(), c_s);
                for (j, g) in art.layer.groups.iter().enumerate() {
                    let mine = match g.beta1 {
                        Some(b) if s.contains(b) => &g.beta,
                        _ => &g.alpha,
                    };
                    sys.execute_in_place(&mut sub, mine).map_err(|e| e.to_string())?;
                    sys.execute_in_place(&mut alpha, &g.alpha).map_err(|e| e.to_string())?;
                    ensure(sub.values() == alpha.values(), || {
                        format!("{name}: round {} S={s} values differ after group {j}", art.round)
                    })?;
                }
            }
        }
    }
    Ok(())
}

fn f_growth(runs: &[(String, RunOutcome)]) -> Check {
    high_artifacts(runs)?;
    for (name, out) in runs {
        for art in &out.high {
            let row = &out.rows[art.round as usize];
            let (c, _) = out.system.run(&row.get(art.s_b).unwrap()).map_err(|e| e.to_string())?;
            let (b, _) = out
                .system
                .run(&art.high_b.get(art.s_b).unwrap())
                .map_err(|e| e.to_string())?;
            ensure(c.finished() == b.finished().union(&art.s_alpha), || {
                format!(
                    "{name}: round {} F = {} but F(highB) + S_alpha = {}",
                    art.round,
                    c.finished(),
                    b.finished().union(&art.s_alpha)
                )
            })?;
        }
    }
    Ok(())
}

fn oracle_equivalence() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE);
    for case in 0..100 {
        let (sys, array) = random_array(&mut rng);
        let def = compliance_by_definition(&sys, &array).ok_or("array too large for the definition")?;
        let rep = check_compliance(&sys, &array, &CheckOptions::default()).map_err(|e| e.to_string())?;
        let mine: BTreeMap<Invariant, Outcome> = rep.verdicts.iter().map(|(k, v)| (*k, Outcome::from(v))).collect();
        ensure(mine == def.outcomes && rep.compliant == def.compliant, || {
            format!("array {case}: checker {mine:?} vs definition {:?}", def.outcomes)
        })?;
    }
    for case in 0..1000 {
        let sys = random_system(&mut rng, 4);
        let len = rng.gen_range(0..50);
        let (_, trace) = random_run(&mut rng, &sys, len, 2);
        let counts = recount_rmr(&trace, sys.model(), &owners(&sys), sys.options().crash_clears_cache);
        for p in sys.pids() {
            let a = counts.get(&p).copied().unwrap_or(0) as usize;
            ensure(a == rmr_count(&trace, p), || {
                format!("trace {case}: {p} recount {a} vs {}", rmr_count(&trace, p))
            })?;
        }
    }
    Ok(())
}

fn safety() -> Check {
    let t = Instant::now();
    for (n, depth) in [(2, 60), (3, 80)] {
        for model in [MemoryModel::Cc, MemoryModel::Dsm] {
            let sys = System::new(by_name("cas-owner-lock").unwrap(), n, model).map_err(|e| e.to_string())?;
            let bounds = ExplorationBounds {
                max_depth: depth,
                max_crashes_per_process: 1,
                ..Default::default()
            };
            let r = explore(&sys, bounds).map_err(|e| e.to_string())?;
            ensure(r.mutual_exclusion.is_pass(), || {
                format!("n={n} {model:?}: mutual exclusion fails")
            })?;
            ensure(r.a1.is_pass(), || format!("n={n} {model:?}: A1 fails"))?;
        }
    }
    ensure(t.elapsed() < Duration::from_secs(120), || {
        format!("took {:?}", t.elapsed())
    })
}

fn scripted(model: MemoryModel, layout: Vec<RegisterSpec>, scripts: Vec<Vec<MemOp>>, n: usize) -> System {
    System::new(Arc::new(ScriptedProgram::with_layout("t", layout, scripts)), n, model).unwrap()
}

fn semantics() -> Check {
    let r0 = RegisterId(0);
    let reg = |v: Value, owner: Option<ProcessId>| vec![RegisterSpec::new(0, "x", owner, v)];
    let responses =
        |sys: &System, sched: Schedule| -> Result<(Vec<Response>, rme_core::model::Configuration), String> {
            let (c, t) = sys.run(&sched).map_err(|e| e.to_string())?;
            Ok((t.events().iter().map(|e| e.response.clone().unwrap()).collect(), c))
        };

    let fai = vec![vec![MemOp::Op(Operation::Fai, r0)]];
    let (resp, c) = responses(
        &scripted(MemoryModel::Cc, reg(Value::Int(5), None), fai.clone(), 1),
        Schedule::of([pid(1)]),
    )?;
    ensure(
        resp == [Response::Value(Value::Int(5))] && c.value(r0) == &Value::Int(6),
        || "FAI on Int".into(),
    )?;
    let (resp, c) = responses(
        &scripted(MemoryModel::Cc, reg(Value::sym("s"), None), fai, 1),
        Schedule::of([pid(1)]),
    )?;
    ensure(
        resp == [Response::Value(Value::sym("s"))] && c.value(r0) == &Value::sym("s"),
        || "FAI on a non-integer must leave the value alone".into(),
    )?;

    let ops = vec![vec![
        MemOp::Op(Operation::Fas(Value::Int(3)), r0),
        MemOp::Op(
            Operation::Cas {
                expected: Value::Int(3),
                new: Value::Int(4),
            },
            r0,
        ),
        MemOp::Op(
            Operation::Cas {
                expected: Value::Int(3),
                new: Value::Int(9),
            },
            r0,
        ),
        MemOp::Op(Operation::Read, r0),
    ]];
    let (resp, c) = responses(
        &scripted(MemoryModel::Cc, reg(Value::Null, None), ops, 1),
        Schedule::of([pid(1); 4]),
    )?;
    ensure(
        resp == [
            Response::Value(Value::Null),
            Response::Bool(true),
            Response::Bool(false),
            Response::Value(Value::Int(4)),
        ] && c.value(r0) == &Value::Int(4),
        || format!("FAS/CAS/Read responses {resp:?}"),
    )?;

    let cc = scripted(
        MemoryModel::Cc,
        reg(Value::Int(0), None),
        vec![
            vec![MemOp::Op(Operation::Read, r0)],
            vec![MemOp::Op(Operation::Read, r0), MemOp::Op(Operation::Fai, r0)],
        ],
        2,
    );
    let (c, t) = cc
        .run(&Schedule::of([pid(1), pid(1), pid(2), pid(2), pid(1)]))
        .map_err(|e| e.to_string())?;
    let flags: Vec<bool> = t.events().iter().map(|e| e.rmr).collect();
    ensure(flags == [true, false, true, true, true], || {
        format!("CC RMR flags {flags:?}")
    })?;
    ensure(
        c.valid_cache(pid(1)).contains(&r0) && !c.valid_cache(pid(2)).contains(&r0),
        || "CC caches".into(),
    )?;

    let dsm = scripted(
        MemoryModel::Dsm,
        reg(Value::Int(0), Some(pid(1))),
        vec![vec![
            MemOp::Op(Operation::Fas(Value::Int(1)), r0),
            MemOp::Op(Operation::Read, r0),
        ]],
        2,
    );
    let (_, t) = dsm
        .run(&Schedule::of([pid(1), pid(1), pid(2), pid(2)]))
        .map_err(|e| e.to_string())?;
    let flags: Vec<bool> = t.events().iter().map(|e| e.rmr).collect();
    ensure(flags == [false, false, true, true], || {
        format!("DSM RMR flags {flags:?}")
    })?;
    ensure(rmr_count(&t, pid(1)) == 0, || "owner paid for local accesses".into())
}

fn determinism() -> Check {
    let configs = [
        AdversaryConfig::new("cas-owner-lock", 12, MemoryModel::Dsm)
            .with_k(1)
            .with_min_active(1),
        AdversaryConfig::new("cas-owner-lock", 100, MemoryModel::Cc)
            .with_k(96)
            .with_min_active(1),
        AdversaryConfig {
            tie_break: TieBreak::Seeded { seed: 7 },
            ..AdversaryConfig::new("counting-cas-lock", 40, MemoryModel::Cc)
                .with_k(8)
                .with_min_active(1)
        },
    ];
    for cfg in configs {
        let a = serde_json::to_vec(&run(&cfg).unwrap().report).map_err(|e| e.to_string())?;
        let b = serde_json::to_vec(&run(&cfg).unwrap().report).map_err(|e| e.to_string())?;
        ensure(a == b, || format!("{} n={} differs between runs", cfg.algorithm, cfg.n))?;
    }
    let sys = System::new(by_name("ttas-lock").unwrap(), 3, MemoryModel::Cc).unwrap();
    let sampled = CheckOptions {
        mode: CheckMode::Sampled,
        samples: 8,
        seed: 3,
        ..CheckOptions::default()
    };
    let row = adversary("ttas-lock", 3, 1, MemoryModel::Cc).rows.pop().unwrap();
    let a = serde_json::to_vec(&check_compliance(&sys, &row, &sampled).unwrap()).unwrap();
    let b = serde_json::to_vec(&check_compliance(&sys, &row, &sampled).unwrap()).unwrap();
    ensure(a == b, || "sampled compliance reports differ".into())
}

/// Written to the raw stderr handle so the lines survive output capture.
fn report(line: String) {
    let _ = writeln!(std::io::stderr(), "{line}");
}

#[test]
fn acceptance() {
    let runs = demo_runs();
    let criteria: Vec<Criterion> = vec![
        ("round compliance", Box::new(round_compliance)),
        ("RMR forcing", Box::new(|| rmr_forcing(&runs))),
        ("low-branch bounds", Box::new(|| low_bounds(&runs))),
        ("high-branch bounds", Box::new(|| high_bounds(&runs))),
        (
            "substitution invisibility",
            Box::new(|| substitution_invisibility(&runs)),
        ),
        ("F-growth on high rounds", Box::new(|| f_growth(&runs))),
        ("oracle equivalence", Box::new(oracle_equivalence)),
        ("safety of cas-owner-lock", Box::new(safety)),
        ("operation semantics", Box::new(semantics)),
        ("determinism", Box::new(determinism)),
    ];
    let mut failed = Vec::new();
    for (name, check) in &criteria {
        let t = Instant::now();
        let outcome = match catch_unwind(AssertUnwindSafe(check)) {
            Ok(r) => r,
            Err(p) => Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into())),
        };
        match outcome {
            Ok(()) => report(format!("[PASS] {name} ({:.2?})", t.elapsed())),
            Err(e) => {
                report(format!("[FAIL] {name}: {e}"));
                failed.push(*name);
            }
        }
    }
    assert!(failed.is_empty(), "failed: {failed:?}");
}
