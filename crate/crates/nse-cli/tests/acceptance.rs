// SPDX-License-Identifier: MIT OR Apache-2.0

//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::time::{Duration, Instant};

use nse_cli::checkpoint::{load_checkpoint, save_checkpoint};
use nse_cli::format::{decode_csv, decode_nsm1, decode_nsp1, encode_csv, encode_nsm1, encode_nsp1};
use nse_editor::{
    rank_one_edit, record_edit, sequential_edit, EditError, EditRequest, SequentialEditState,
    DEFAULT_TAU,
};
use nse_metrics::{ablation_compare, EditMode, EditScenario, ScenarioConfig};
use nse_nullspace::{
    build_projector, quadratic_form, shared_nullspace_check, CovarianceAccumulator, NullProjector,
    DEFAULT_CUTOFF,
};
use nse_tensor::{frob_norm, norm2, Matrix};
use nse_toymodel::{init_planner, PlannerConfig, ToyPlanner};
use nse_tracing::{
    gradient_norm, localize, rank_layers, LocalizationCase, RankWeights, TraceConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

// Tolerances and limits, pinned here.
const C1_IDEMPOTENT: f64 = 1e-10;
const C1_SYMMETRIC: f64 = 1e-12;
const C1_TRACE: f64 = 1e-9;
const C1_LEAK: f64 = 1e-9;
const C1_LIMIT: Duration = Duration::from_secs(10);
const C2_REL: f64 = 1e-10;
const C2_NULL: f64 = 1e-10;
const C2_LIMIT: Duration = Duration::from_secs(5);
const C3_FIT: f64 = 1e-8;
const C3_LEAK: f64 = 1e-8;
const C3_LIMIT: Duration = Duration::from_secs(10);
const C4_DIFF: f64 = 1e-6;
const C4_LIMIT: Duration = Duration::from_secs(60);
const C5_RATE: f64 = 0.9;
const C5_LIMIT: Duration = Duration::from_secs(120);
const C6_DRIFT: f64 = 0.01;
const C6_KL: f64 = 1e-3;
const C6_LIMIT: Duration = Duration::from_secs(120);
const C7_RATIO: f64 = 10.0;
const C7_RATE: f64 = 0.9;
const C8_REL: f64 = 1e-4;

struct Verdict {
    pass: bool,
    detail: String,
    limit: Option<Duration>,
}

fn verdict(pass: bool, detail: String, limit: Option<Duration>) -> Verdict {
    Verdict {
        pass,
        detail,
        limit,
    }
}

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

fn gvec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// `d × n` with rank `min(rank, d, n)`.
fn low_rank(d: usize, n: usize, rank: usize, rng: &mut ChaCha8Rng) -> Matrix {
    gaussian(d, rank, rng)
        .matmul(&gaussian(rank, n, rng))
        .unwrap()
}

fn projector(k0: &Matrix) -> NullProjector {
    build_projector(
        &CovarianceAccumulator::from_keys(k0).unwrap(),
        DEFAULT_CUTOFF,
    )
    .unwrap()
}

fn criterion_1() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = [0.0f64; 4];
    let mut fails = 0;
    for i in 0..50 {
        let d = rng.random_range(1..=64);
        let n = rng.random_range(1..=256);
        // Two in three instances are exactly rank-deficient.
        let deficient = i % 3 != 2 && d > 1;
        let k0 = if deficient {
            low_rank(d, n, rng.random_range(1..d), &mut rng)
        } else {
            gaussian(d, n, &mut rng)
        };
        let proj = projector(&k0);
        let p = proj.p();
        let df = d as f64;
        let idem = frob_norm(&p.matmul(p).unwrap().sub(p).unwrap()) / df;
        let sym = frob_norm(&p.sub(&p.transpose()).unwrap()) / df;
        let tr = (p.trace() - proj.null_rank() as f64).abs();
        let leak = if deficient {
            frob_norm(&p.matmul(&k0).unwrap()) / frob_norm(&k0)
        } else {
            0.0
        };
        for (w, v) in worst.iter_mut().zip([idem, sym, tr, leak]) {
            *w = w.max(v);
        }
        if idem > C1_IDEMPOTENT || sym > C1_SYMMETRIC || tr > C1_TRACE || leak > C1_LEAK {
            fails += 1;
        }
    }
    verdict(
        fails == 0,
        format!(
            "50 instances, {fails} failing; worst ‖P²−P‖/d {:.1e}, ‖P−Pᵀ‖/d {:.1e}, trace err {:.1e}, leak {:.1e}",
            worst[0], worst[1], worst[2], worst[3]
        ),
        Some(C1_LIMIT),
    )
}

fn criterion_2() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst_rel = 0.0f64;
    let mut mismatches = 0;
    for i in 0..100 {
        let d = rng.random_range(2..=32);
        let n = rng.random_range(1..=64);
        let rank = rng.random_range(1..d);
        let k0 = low_rank(d, n, rank, &mut rng);
        let acc = CovarianceAccumulator::from_keys(&k0).unwrap();

        // Identity on a generic probe.
        let x = gvec(d, &mut rng);
        let lhs = norm2(&k0.tr_matvec(&x).unwrap()).powi(2);
        let rhs = quadratic_form(&acc, &x).unwrap();
        let rel = (lhs - rhs).abs() / lhs.max(rhs);
        worst_rel = worst_rel.max(rel);
        if rel > C2_REL {
            mismatches += 1;
        }

        // Membership: a null probe vanishes against both K0 and Σ; the generic
        // probe vanishes against neither.
        let proj = projector(&k0);
        let probe = if i % 2 == 0 && proj.null_rank() > 0 {
            proj.u_null()
                .matvec(&gvec(proj.null_rank(), &mut rng))
                .unwrap()
        } else {
            x.clone()
        };
        let in_null = i % 2 == 0 && proj.null_rank() > 0;
        let r = shared_nullspace_check(&acc, &k0, &probe).unwrap();
        let a = r.lhs_residual / (norm2(&probe) * frob_norm(&k0)) <= C2_NULL;
        let b = r.rhs_residual / (norm2(&probe) * frob_norm(acc.gram())) <= C2_NULL;
        if a != b || a != in_null {
            mismatches += 1;
        }
    }
    verdict(
        mismatches == 0,
        format!(
            "100 pairs, {mismatches} mismatches; worst identity error {worst_rel:.1e} relative"
        ),
        Some(C2_LIMIT),
    )
}

fn criterion_3() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut fails = 0;
    let (mut worst_fit, mut worst_leak) = (0.0f64, 0.0f64);
    let mut degenerate_ok = 0;
    for _ in 0..50 {
        let d = rng.random_range(4..=32);
        let d_out = rng.random_range(2..=16);
        let k0 = low_rank(
            d,
            rng.random_range(d..=3 * d),
            rng.random_range(1..d),
            &mut rng,
        );
        let proj = projector(&k0);
        let w = gaussian(d_out, d, &mut rng);
        let k = gvec(d, &mut rng);
        let v = gvec(d_out, &mut rng);
        let res = rank_one_edit(
            &w,
            &EditRequest::new(k.clone(), v.clone()).unwrap(),
            &proj,
            DEFAULT_TAU,
        )
        .unwrap();
        let fitted = w.add(&res.delta).unwrap().matvec(&k).unwrap();
        let err: Vec<f64> = fitted.iter().zip(&v).map(|(a, b)| a - b).collect();
        let fit = norm2(&err) / norm2(&v).max(1.0);
        let leak =
            frob_norm(&res.delta.matmul(&k0).unwrap()) / (frob_norm(&res.delta) * frob_norm(&k0));
        worst_fit = worst_fit.max(fit);
        worst_leak = worst_leak.max(leak);
        if fit > C3_FIT || leak > C3_LEAK {
            fails += 1;
        }

        // A key with ‖P·k‖/‖k‖ at most half of tau must be refused.
        let inside = proj
            .u_dom()
            .matvec(&gvec(proj.u_dom().cols(), &mut rng))
            .unwrap();
        let null = proj
            .u_null()
            .matvec(&gvec(proj.null_rank(), &mut rng))
            .unwrap();
        let target = DEFAULT_TAU * 10f64.powf(rng.random_range(-3.0..-0.3));
        let s = target * norm2(&inside) / norm2(&null);
        let kd: Vec<f64> = inside.iter().zip(&null).map(|(a, b)| a + s * b).collect();
        let ratio = norm2(&proj.apply(&kd).unwrap()) / norm2(&kd);
        let out = rank_one_edit(&w, &EditRequest::new(kd, v).unwrap(), &proj, DEFAULT_TAU);
        if ratio <= DEFAULT_TAU && matches!(out, Err(EditError::DegenerateKey { .. })) {
            degenerate_ok += 1;
        } else {
            fails += 1;
        }
    }
    verdict(
        fails == 0,
        format!(
            "50 instances, {fails} failing; worst fit {worst_fit:.1e}, worst leakage {worst_leak:.1e}, \
             DegenerateKey raised {degenerate_ok}/50"
        ),
        Some(C3_LIMIT),
    )
}

/// Gradient descent on `J(Δ) = ‖(W+Δ)K1 − V1‖² + ‖Δ‖² + ‖Δ·Kp‖²` over
/// `Δ = Z·P`, stopped when the gradient vanishes.
fn minimize_numerically(w: &Matrix, k1: &Matrix, v1: &Matrix, kp: &Matrix, p: &Matrix) -> Matrix {
    let s = k1.gram().add(&kp.gram()).unwrap();
    let step = 1.0 / (2.0 * (frob_norm(&s) + 1.0));
    let mut z = Matrix::zeros(w.rows(), w.cols());
    for _ in 0..5_000_000 {
        let x = z.matmul(p).unwrap();
        let fit = w.add(&x).unwrap().matmul(k1).unwrap().sub(v1).unwrap();
        let g = fit
            .matmul(&k1.transpose())
            .unwrap()
            .add(&x)
            .unwrap()
            .add(&x.matmul(kp).unwrap().matmul(&kp.transpose()).unwrap())
            .unwrap()
            .matmul(p)
            .unwrap()
            .scale(2.0);
        if frob_norm(&g) <= 1e-11 {
            return x;
        }
        z = z.sub(&g.scale(step)).unwrap();
    }
    z.matmul(p).unwrap()
}

fn criterion_4() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut worst = 0.0f64;
    let mut fails = 0;
    for _ in 0..20 {
        let d = rng.random_range(2..=8);
        let b = rng.random_range(1..=3);
        let m = rng.random_range(0..=3);
        let d_out = rng.random_range(1..=4);
        let k0 = low_rank(
            d,
            rng.random_range(1..=2 * d),
            rng.random_range(1..d),
            &mut rng,
        );
        let proj = projector(&k0);
        let w = gaussian(d_out, d, &mut rng);
        let k1 = gaussian(d, b, &mut rng);
        let v1 = gaussian(d_out, b, &mut rng);
        let kp = gaussian(d, m, &mut rng);
        let state = record_edit(&SequentialEditState::new(d), &kp).unwrap();
        let closed = sequential_edit(&w, &k1, &v1, &state, &proj).unwrap();
        let numeric = minimize_numerically(&w, &k1, &v1, &kp, proj.p());
        let diff = frob_norm(&closed.delta.sub(&numeric).unwrap());
        worst = worst.max(diff);
        if diff > C4_DIFF {
            fails += 1;
        }
    }
    verdict(
        fails == 0,
        format!("20 instances, {fails} failing; worst ‖Δ_cf − Δ_num‖_F {worst:.1e}"),
        Some(C4_LIMIT),
    )
}

fn criterion_5() -> Verdict {
    let (mut ie_hits, mut rank_hits) = (0, 0);
    let mut misses = Vec::new();
    for seed in 1..=20u64 {
        let case = LocalizationCase::build(seed).unwrap();
        let profile = localize(&case, &TraceConfig::default()).unwrap();
        let ie = profile.argmax_impact().unwrap();
        let top = rank_layers(&profile, RankWeights::default()).unwrap()[0];
        ie_hits += usize::from(ie == case.layer);
        rank_hits += usize::from(top == case.layer);
        if top != case.layer {
            misses.push(format!("{seed}:{}→{top}", case.layer));
        }
    }
    let pass = ie_hits as f64 / 20.0 >= C5_RATE && rank_hits as f64 / 20.0 >= C5_RATE;
    verdict(
        pass,
        format!(
            "argmax impact {ie_hits}/20, combined rank top-1 {rank_hits}/20 (need ≥ 18 each); rank misses {}",
            misses.join(" ")
        ),
        Some(C5_LIMIT),
    )
}

fn criterion_6() -> Verdict {
    let cfg = ScenarioConfig::default();
    let (mut succeeded, mut drift_ok, mut kl_sum, mut worst_drift) = (0, 0, 0.0, 0.0f64);
    for seed in 1..=20u64 {
        let r = EditScenario::build(seed, &cfg)
            .unwrap()
            .run(EditMode::Constrained)
            .unwrap()
            .report;
        succeeded += usize::from(r.edit_succeeded);
        drift_ok += usize::from(r.preserved_argmax_drift <= C6_DRIFT);
        worst_drift = worst_drift.max(r.preserved_argmax_drift);
        kl_sum += r.preserved_kl_mean;
    }
    let kl = kl_sum / 20.0;
    verdict(
        succeeded == 20 && drift_ok == 20 && kl <= C6_KL,
        format!("succeeded {succeeded}/20, drift ≤ 1% in {drift_ok}/20 (worst {worst_drift:.4}), mean KL {kl:.2e}"),
        Some(C6_LIMIT),
    )
}

fn criterion_7() -> Verdict {
    let cfg = ScenarioConfig::default();
    // 7/8·d_hidden preserved prompts (plus at most one base of overshoot)
    // keep K0 rank-deficient.
    let overshoot = cfg.base_len_max;
    assert!(cfg.preserved_target() + overshoot < cfg.d_hidden);
    let s = ablation_compare(1, 20, &cfg).unwrap();
    let ratio = s.ratio_at_least(C7_RATIO);
    let drift = s.naive_drift_not_lower();
    let min_ratio = s.ratios().into_iter().fold(f64::INFINITY, f64::min);
    verdict(
        ratio >= C7_RATE && drift >= C7_RATE,
        format!(
            "residual ratio ≥ 10× in {:.0}% of pairs (min {min_ratio:.1}×), naive drift ≥ constrained in {:.0}%",
            100.0 * ratio,
            100.0 * drift
        ),
        None,
    )
}

fn criterion_8() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut worst = 0.0f64;
    for seed in 1..=10u64 {
        let cfg = PlannerConfig {
            d_model: rng.random_range(4..=16),
            d_hidden: rng.random_range(4..=24),
            vocab: rng.random_range(4..=20),
            layers: 1,
            seed,
            ..PlannerConfig::default()
        };
        let m = init_planner(&cfg).unwrap();
        let len = rng.random_range(1..=6);
        let prompt: Vec<usize> = (0..len).map(|_| rng.random_range(0..cfg.vocab)).collect();
        let target = rng.random_range(0..cfg.vocab);
        let t = m.forward(&prompt).unwrap();
        let mut resid = t.probs.clone();
        resid[target] -= 1.0;
        let analytic = norm2(&m.unembed().tr_matvec(&resid).unwrap()) * norm2(t.final_key(0));
        let fd = gradient_norm(&m, &prompt, target, 0).unwrap();
        worst = worst.max((fd - analytic).abs() / analytic);
    }
    verdict(
        worst <= C8_REL,
        format!("10 cases, worst relative error {worst:.1e}"),
        None,
    )
}

fn same_bits(a: &Matrix, b: &Matrix) -> bool {
    a.shape() == b.shape()
        && a.data()
            .iter()
            .zip(b.data())
            .all(|(x, y)| x.to_bits() == y.to_bits())
}

fn random_matrix(rng: &mut ChaCha8Rng) -> Matrix {
    let rows = rng.random_range(0..=12);
    let cols = rng.random_range(0..=12);
    Matrix::from_fn(rows, cols, |_, _| {
        // Mix ordinary values with raw finite bit patterns.
        let raw = f64::from_bits(rng.random::<u64>());
        if raw.is_finite() && rng.random_bool(0.5) {
            raw
        } else {
            StandardNormal.sample(rng)
        }
    })
}

fn models_equal(a: &ToyPlanner, b: &ToyPlanner) -> bool {
    a.config() == b.config()
        && same_bits(a.embed(), b.embed())
        && same_bits(a.unembed(), b.unembed())
        && a.blocks()
            .iter()
            .zip(b.blocks())
            .all(|(x, y)| same_bits(x.w1(), y.w1()) && same_bits(x.w2(), y.w2()))
}

fn criterion_9() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let mut failures = Vec::new();
    let tmp = tempfile::tempdir().unwrap();
    for i in 0..20 {
        let m = random_matrix(&mut rng);
        if !same_bits(&decode_nsm1(&encode_nsm1(&m)).unwrap(), &m) {
            failures.push(format!("nsm1#{i}"));
        }
        if !same_bits(&decode_csv(&encode_csv(&m)).unwrap(), &m) {
            failures.push(format!("csv#{i}"));
        }

        let d = rng.random_range(1..=24);
        let k0 = low_rank(
            d,
            rng.random_range(1..=48),
            rng.random_range(1..=d),
            &mut rng,
        );
        let proj = projector(&k0);
        let back = decode_nsp1(&encode_nsp1(&proj)).unwrap();
        let p_err = frob_norm(&back.p().sub(proj.p()).unwrap());
        let exact = back
            .eigenvalues()
            .iter()
            .zip(proj.eigenvalues())
            .all(|(a, b)| a.to_bits() == b.to_bits())
            && same_bits(back.u_null(), proj.u_null())
            && back.cutoff().to_bits() == proj.cutoff().to_bits();
        if !exact || p_err > 1e-12 {
            failures.push(format!("nsp1#{i}"));
        }

        let cfg = PlannerConfig {
            d_model: rng.random_range(1..=8),
            d_hidden: rng.random_range(1..=8),
            vocab: rng.random_range(4..=12),
            layers: rng.random_range(1..=4),
            seed: rng.random(),
            ..PlannerConfig::default()
        };
        let model = init_planner(&cfg).unwrap();
        let dir = tmp.path().join(format!("ckpt{i}"));
        save_checkpoint(&dir, &model).unwrap();
        if !models_equal(&load_checkpoint(&dir).unwrap(), &model) {
            failures.push(format!("checkpoint#{i}"));
        }
    }
    let out = Command::new(env!("CARGO_BIN_EXE_nse"))
        .arg("demo")
        .output()
        .expect("run nse demo");
    let demo_ok = out.status.code() == Some(0);
    verdict(
        failures.is_empty() && demo_ok,
        format!(
            "20 artifacts per format, {} failures {:?}; demo exit code {:?}",
            failures.len(),
            failures,
            out.status.code()
        ),
        None,
    )
}

fn main() {
    let criteria: [(u32, &str, fn() -> Verdict); 9] = [
        (1, "projector laws", criterion_1),
        (2, "quadratic identity and null membership", criterion_2),
        (3, "rank-one exactness and constraint", criterion_3),
        (
            4,
            "sequential closed form vs numerical minimizer",
            criterion_4,
        ),
        (5, "causal-tracing localization", criterion_5),
        (6, "end-to-end correction", criterion_6),
        (7, "null-space ablation", criterion_7),
        (8, "finite-difference gradient", criterion_8),
        (9, "format round-trips and demo", criterion_9),
    ];
    let mut failed = 0;
    for (n, name, f) in criteria {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f));
        let took = start.elapsed();
        let (pass, detail) = match result {
            Ok(v) => {
                let in_time = v.limit.map_or(true, |l| took < l);
                let limit = v
                    .limit
                    .map_or(String::new(), |l| format!(" (limit {} s)", l.as_secs()));
                (
                    v.pass && in_time,
                    format!("{}; {:.2} s{limit}", v.detail, took.as_secs_f64()),
                )
            }
            Err(_) => (false, format!("panicked after {:.2} s", took.as_secs_f64())),
        };
        failed += usize::from(!pass);
        println!(
            "criterion {n} [{name}]: {} {detail}",
            if pass { "PASS" } else { "FAIL" }
        );
    }
    if failed > 0 {
        println!("{failed} of 9 criteria failed");
        std::process::exit(1);
    }
    println!("all 9 criteria passed");
}
