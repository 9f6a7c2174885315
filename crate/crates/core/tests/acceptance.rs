//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

mod common;

use std::panic::{self, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::*;
use markovprune::fixtures::{self, ALL};
use markovprune::sweep::{replication_seed, run_sweep, SweepSpec, Variant};
use markovprune::{
    d_separated, fill_coefficients, fit, implied_independencies, parse, parse_bytes, project, reduce, serialize,
    simulate, target_metrics, true_effect, ModelFile, NodeIdx, PathModel, ReduceOptions, TargetEffect,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

const GRAPHS: u64 = 500;

fn golden_reductions() -> Outcome {
    let cases: [(&str, &str, &str, &[&str]); 6] = [
        ("EX1", fixtures::EX1, "Y ~ X + C\n", &["C -> Y", "X -> Y"]),
        ("EX2 total", fixtures::EX2_TOTAL, "Y ~ X + K\n", &["K -> Y", "X -> Y"]),
        ("EX2 mediation", fixtures::EX2_MEDIATION, "M ~ X\nY ~ M + K\n", &["K -> Y", "M -> Y", "X -> M"]),
        ("EX3 total", fixtures::EX3_TOTAL, "M ~ C + S\n", &["C -> M", "S -> M"]),
        ("EX3 mediation", fixtures::EX3_MEDIATION, "H ~ C\nM ~ C + H + S\n", &["C -> H", "C -> M", "H -> M", "S -> M"]),
        ("EX4", fixtures::EX4, "R ~ S + C\n", &["C -> R", "S -> R"]),
    ];
    let mut failures = Vec::new();
    for (name, src, plan, edges) in cases {
        let r = reduce(&fixtures::load(src), &ReduceOptions::default()).unwrap();
        let g = &r.graph;
        let mut got: Vec<String> = g
            .directed_edges()
            .map(|(a, b)| format!("{} -> {}", g.name(a), g.name(b)))
            .collect();
        got.sort();
        if r.plan() != plan || got != edges || g.has_bidirected_edges() {
            failures.push(format!("{name}: plan {:?}, edges {got:?}", r.plan()));
        }
    }
    outcome(failures.is_empty(), if failures.is_empty() { "6 fixtures exact".into() } else { failures.join("; ") })
}

fn separation_oracle() -> Outcome {
    let (queries, mismatches) = (0..GRAPHS)
        .into_par_iter()
        .map(|seed| {
            let g = random_admg(seed);
            let obs: Vec<NodeIdx> = g.observed_nodes().iter().collect();
            let (mut q, mut bad) = (0usize, 0usize);
            for x in 0..g.node_count() {
                for y in 0..g.node_count() {
                    if x == y {
                        continue;
                    }
                    let paths = all_paths(&g, x, y);
                    let pool: Vec<NodeIdx> = obs.iter().copied().filter(|&v| v != x && v != y).collect();
                    for z in subsets_up_to(&pool, 3) {
                        q += 1;
                        let fast = d_separated(&g, &set(&[x]), &set(&[y]), &set(&z)).unwrap();
                        if fast != brute_separated(&g, &paths, &z) {
                            bad += 1;
                        }
                    }
                }
            }
            (q, bad)
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    outcome(mismatches == 0, format!("{queries} queries on {GRAPHS} graphs, {mismatches} disagreements"))
}

fn projection_soundness() -> Outcome {
    let (queries, mismatches) = (0..GRAPHS)
        .into_par_iter()
        .map(|seed| {
            let g = random_admg(seed);
            let obs: Vec<NodeIdx> = g.observed_nodes().iter().collect();
            // Project out the latents, and additionally a random observed node.
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut keeps = vec![obs.clone()];
            if obs.len() > 2 {
                let drop = obs[rng.random_range(0..obs.len())];
                keeps.push(obs.iter().copied().filter(|&v| v != drop).collect());
            }
            let (mut q, mut bad) = (0usize, 0usize);
            for keep in keeps {
                let p = project(&g, &set(&keep)).unwrap();
                for i in 0..keep.len() {
                    for j in 0..keep.len() {
                        if i == j {
                            continue;
                        }
                        let pool: Vec<usize> = (0..keep.len()).filter(|&k| k != i && k != j).collect();
                        for zp in subsets_up_to(&pool, 3) {
                            let z: Vec<NodeIdx> = zp.iter().map(|&k| keep[k]).collect();
                            q += 1;
                            let before = d_separated(&g, &set(&[keep[i]]), &set(&[keep[j]]), &set(&z)).unwrap();
                            let after = d_separated(&p, &set(&[i]), &set(&[j]), &set(&zp)).unwrap();
                            if before != after {
                                bad += 1;
                            }
                        }
                    }
                }
            }
            (q, bad)
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    outcome(mismatches == 0, format!("{queries} queries, {mismatches} disagreements"))
}

fn unbiasedness() -> Outcome {
    let (n, reps) = (20_000, 200);
    let mut details = Vec::new();
    let mut pass = true;
    for (name, src) in ALL {
        let m = fixtures::load(src);
        let target = &m.targets[0];
        let reduced = reduce(&m, &ReduceOptions::default()).unwrap();
        let pm = PathModel::new(reduced.graph).unwrap();
        let seed = 2024;
        let a = fill_coefficients(&m, seed);
        let truth = true_effect(&m.graph, &a, target).unwrap();
        let mean = (0..reps)
            .into_par_iter()
            .map(|rep| {
                let d = simulate(&m.graph, &a, n, replication_seed(seed, n, rep)).unwrap();
                let f = fit(&pm, &d).unwrap();
                target_metrics(&f, target, truth).unwrap().estimate
            })
            .sum::<f64>()
            / reps as f64;
        let bias = (mean - truth).abs();
        pass &= bias < 0.01;
        details.push(format!("{name} |bias| {bias:.4}"));
    }
    outcome(pass, details.join(", "))
}

fn ex2_replication() -> Outcome {
    let grid = vec![50, 100, 200];
    let spec = SweepSpec::new(fixtures::load(fixtures::EX2_TOTAL), grid.clone(), 100, 2024);
    let s = run_sweep(&spec).unwrap();
    let mean = |n, v, m: &str| s.row(n, v, m).unwrap().mean;
    let mut failures = Vec::new();
    let mut summary = Vec::new();
    for &n in &grid {
        let (cr, cf) = (mean(n, Variant::Reduced, "chi2"), mean(n, Variant::Full, "chi2"));
        let (rr, rf) = (mean(n, Variant::Reduced, "rmsea"), mean(n, Variant::Full, "rmsea"));
        let (pr, pf) = (mean(n, Variant::Reduced, "pvalue"), mean(n, Variant::Full, "pvalue"));
        summary.push(format!(
            "n={n}: chi2 {cr:.2}/{cf:.2} rmsea {rr:.4}/{rf:.4} p {pr:.2e}/{pf:.2e}"
        ));
        let holds = cr <= cf;
        if !holds {
            failures.push(format!("(a) n={n}"));
        }
        let holds = rr <= rf;
        if !holds {
            failures.push(format!("(b) n={n}"));
        }
        let holds = pr >= pf;
        if !holds {
            failures.push(format!("(c) n={n}"));
        }
    }
    let (mr, mf) = (mean(50, Variant::Reduced, "mae"), mean(50, Variant::Full, "mae"));
    summary.push(format!("n=50 mae {mr:.4}/{mf:.4}"));
    let holds = mr >= mf;
    if !holds {
        failures.push("(d) n=50".into());
    }
    let mut detail = format!("reduced/full {}", summary.join("; "));
    if !failures.is_empty() {
        detail = format!("failed {}; {detail}", failures.join(", "));
    }
    outcome(failures.is_empty(), detail)
}

fn calibration() -> Outcome {
    let (n, reps) = (500, 500);
    let m = fixtures::load(fixtures::EX1);
    let a = fill_coefficients(&m, 77);
    let pm = PathModel::new(m.graph.clone()).unwrap();
    let rejections = (0..reps)
        .into_par_iter()
        .filter(|&rep| {
            let d = simulate(&m.graph, &a, n, replication_seed(77, n, rep)).unwrap();
            fit(&pm, &d).unwrap().chi2_pvalue.unwrap() < 0.05
        })
        .count();
    let rate = rejections as f64 / reps as f64;

    // Null effect: X has no effect on Y once X -> M is zero.
    let null = parse(&format!("{}\ncoef X -> M = 0", fixtures::EX1)).unwrap();
    let a0 = fill_coefficients(&null, 78);
    let target = &null.targets[0];
    let reduced = PathModel::new(reduce(&null, &ReduceOptions::default()).unwrap().graph).unwrap();
    let mut pvalues: Vec<f64> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let d = simulate(&null.graph, &a0, n, replication_seed(78, n, rep)).unwrap();
            target_metrics(&fit(&reduced, &d).unwrap(), target, 0.0).unwrap().p_value
        })
        .collect();
    pvalues.sort_by(f64::total_cmp);
    let k = pvalues.len() as f64;
    let ks = pvalues
        .iter()
        .enumerate()
        .map(|(i, &p)| (p - i as f64 / k).abs().max(((i + 1) as f64 / k - p).abs()))
        .fold(0.0, f64::max);
    let pass = (0.03..=0.07).contains(&rate) && ks < 0.1;
    outcome(pass, format!("rejection rate {rate:.3}, null p-value KS distance {ks:.3}"))
}

fn faithfulness() -> Outcome {
    let n = 50_000;
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for (i, (_, src)) in ALL.iter().enumerate() {
        let m = fixtures::load(src);
        let a = fill_coefficients(&m, 31 + i as u64);
        let d = simulate(&m.graph, &a, n, 131 + i as u64).unwrap();
        for s in implied_independencies(&m.graph, 3) {
            let g = &m.graph;
            let x = g.name(s.left.iter().next().unwrap());
            let y = g.name(s.right.iter().next().unwrap());
            let r = d.partial_correlation(x, y, &g.set_names(&s.given)).unwrap();
            worst = worst.max(r.abs());
            count += 1;
        }
    }
    outcome(worst < 0.02, format!("{count} statements, max |partial r| {worst:.4}"))
}

fn dsl_round_trip() -> Outcome {
    let mut failures = 0;
    for seed in 0..1000u64 {
        let g = random_admg(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = ModelFile::from_graph(g.clone());
        for (a, b) in g.directed_edges() {
            if rng.random_bool(0.5) {
                m.coefficients.insert((g.id(a).clone(), g.id(b).clone()), rng.random_range(-2.0..2.0));
            }
        }
        for v in 0..g.node_count() {
            if rng.random_bool(0.3) {
                m.noise_sd.insert(g.id(v).clone(), rng.random_range(0.05..3.0));
            }
        }
        let obs: Vec<NodeIdx> = g.observed_nodes().iter().collect();
        if obs.len() >= 2 {
            m.targets.push(TargetEffect::total(g.name(obs[0]), g.name(obs[1])).unwrap());
        }
        let text = serialize(&m);
        if parse(&text).ok().as_ref() != Some(&m) {
            failures += 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let crashes = (0..20_000)
        .filter(|_| {
            let len = rng.random_range(0..120);
            let bytes: Vec<u8> = (0..len).map(|_| rng.random()).collect();
            panic::catch_unwind(|| {
                let _ = parse_bytes(&bytes);
            })
            .is_err()
        })
        .count();
    outcome(
        failures == 0 && crashes == 0,
        format!("1000 models, {failures} round-trip failures; 20000 fuzz inputs, {crashes} panics"),
    )
}

type Criterion = (&'static str, Duration, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 8] = [
        ("golden reductions", Duration::from_secs(1), golden_reductions),
        ("d-separation oracle", Duration::from_secs(120), separation_oracle),
        ("projection soundness", Duration::from_secs(120), projection_soundness),
        ("unbiasedness of reduction", Duration::from_secs(180), unbiasedness),
        ("EX2 full vs reduced", Duration::from_secs(180), ex2_replication),
        ("calibration", Duration::from_secs(180), calibration),
        ("Markov faithfulness", Duration::from_secs(60), faithfulness),
        ("DSL round-trip and fuzz", Duration::from_secs(60), dsl_round_trip),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, budget, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(run))
            .unwrap_or_else(|e| outcome(false, format!("panicked: {:?}", e.downcast_ref::<String>())));
        let elapsed = start.elapsed();
        let in_time = elapsed <= *budget;
        let pass = result.pass && in_time;
        failed += usize::from(!pass);
        println!(
            "criterion {}: {} {name} ({}; {:.1}s of {}s)",
            i + 1,
            if pass { "PASS" } else { "FAIL" },
            result.detail,
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
    }
    println!("acceptance: {} of 8 criteria passed", 8 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
