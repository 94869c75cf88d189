//! Acceptance criteria. Runs with its own harness so every criterion prints a
//! PASS/FAIL line; exits nonzero if any fails.

use std::time::Instant;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ef21lab::algorithms::{self, step_ef21, Ef21State};
use ef21lab::datasets::{self, LibsvmDataset, SynthConfig};
use ef21lab::linalg::DenseMatrix;
use ef21lab::problem::{ClientObjective, LocalLoss};
use ef21lab::smoothness::{self, SmoothnessReport};
use ef21lab::verify::random_sparse_quadratic;
use ef21lab::{G0Init, GammaRule, Method, Problem, RunConfig, RunFailure, TopK, Trace, X0Init};

type Outcome = Result<String, String>;
type Criterion = (u32, &'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 11] = [
        (1, "Top-K contraction", c1_topk),
        (2, "sqrt(beta/theta) closed form", c2_identity),
        (3, "L_plus chain against eigensolver", c3_lplus_chain),
        (4, "aggregation inequality along EF21 runs", c4_aggregation),
        (5, "convergence certificate on the synthetic instance", c5_certificate),
        (6, "homogeneous clients need no scaling", c6_homogeneous),
        (7, "separable problem splits into single-node runs", c7_separable),
        (8, "xi nonincreasing in alpha", c8_xi),
        (9, "new vs standard stepsize at c/n = 0.05 and 0.9", c9_stepsize_comparison),
        (10, "adaptive stepsize on the LIBSVM fixture", c10_adaptive),
        (11, "stepsize identities", c11_stepsize_identities),
    ];
    let filter: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, check) in criteria {
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {id}: {name} ({detail}; {secs:.1}s)"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {id}: {name} ({detail}; {secs:.1}s)");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn unwrap_run(r: Result<Trace, RunFailure<f64>>) -> Result<Trace, String> {
    match r {
        Ok(t) => Ok(t),
        Err(RunFailure::Invalid(e)) => Err(e.to_string()),
        Err(RunFailure::Diverged { reason, .. }) => Err(format!("diverged: {reason}")),
    }
}

// Top-K by sorting, ties to the lower index.
fn topk_oracle(x: &[f64], k: usize) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[b].abs().partial_cmp(&x[a].abs()).unwrap().then(a.cmp(&b)));
    let mut out = vec![0.0; x.len()];
    for &j in idx.iter().take(k) {
        out[j] = x[j];
    }
    out
}

fn c1_topk() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut checks, mut violations, mut mismatches) = (0u64, 0u64, 0u64);
    for _ in 0..10_000 {
        let d = rng.random_range(1..=8);
        // some coordinates outside the active set
        let x: Vec<f64> = (0..d).map(|_| if rng.random_bool(0.2) { 0.0 } else { rng.random_range(-5.0..5.0) }).collect();
        let s = x.iter().filter(|v| **v != 0.0).count();
        for k in 1..=d {
            let c = TopK::new(k).map_err(err)?.compress(&x).map_err(err)?;
            if c != topk_oracle(&x, k) {
                mismatches += 1;
            }
            checks += 1;
            if s == 0 {
                violations += u64::from(norm_sq(&c) != 0.0);
                continue;
            }
            let alpha = k.min(s) as f64 / s as f64;
            if dist_sq(&c, &x) > (1.0 - alpha) * norm_sq(&x) * (1.0 + 1e-12) {
                violations += 1;
            }
        }
    }
    // equal magnitudes leave exactly a (1 − K/d) share behind
    let mut worst_gap = 0.0f64;
    for d in 1..=8 {
        let mag = rng.random_range(0.1..3.0);
        let x: Vec<f64> = (0..d).map(|_| if rng.random_bool(0.5) { mag } else { -mag }).collect();
        for k in 1..=d {
            let c = TopK::new(k).map_err(err)?.compress(&x).map_err(err)?;
            let rhs = (1.0 - k as f64 / d as f64) * norm_sq(&x);
            worst_gap = worst_gap.max((dist_sq(&c, &x) - rhs).abs() / norm_sq(&x));
        }
    }
    ensure(
        violations == 0 && mismatches == 0 && worst_gap <= 1e-12,
        format!("{checks} compressions, {violations} violations, {mismatches} oracle mismatches, equality gap {worst_gap:e}"),
    )
}

fn c2_identity() -> Outcome {
    let mut worst = 0.0f64;
    for i in 1..=999 {
        let alpha = i as f64 / 1000.0;
        // cancellation-free θ = α/(1 + sqrt(1−α))
        let root = (1.0 - alpha).sqrt();
        let theta = alpha / (1.0 + root);
        let beta = (1.0 - alpha) / theta;
        let direct = (beta / theta).sqrt();
        let closed = smoothness::sqrt_beta_over_theta(alpha).map_err(err)?;
        worst = worst.max((closed - direct).abs() / direct.abs().max(f64::MIN_POSITIVE));
        let (t, b) = smoothness::theta_beta(alpha).map_err(err)?;
        worst = worst.max(((b / t).sqrt() - direct).abs() / direct.abs().max(f64::MIN_POSITIVE));
    }
    ensure(worst <= 1e-12, format!("999 grid points, max relative error {worst:e}"))
}

/// `(2/m) AᵀA` embedded in `d × d`.
fn dense_hessian(d: usize, coords: &[usize], a: &DenseMatrix<f64>) -> DMatrix<f64> {
    let m = a.rows() as f64;
    let mut h = DMatrix::zeros(d, d);
    for (p, &jp) in coords.iter().enumerate() {
        for (q, &jq) in coords.iter().enumerate() {
            let s: f64 = (0..a.rows()).map(|r| a.row(r)[p] * a.row(r)[q]).sum();
            h[(jp, jq)] = 2.0 * s / m;
        }
    }
    h
}

fn lambda_max(m: DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m).eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn c3_lplus_chain() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut worst_oracle, mut chain_failures) = (0.0f64, 0);
    for _ in 0..100 {
        let n = rng.random_range(1..=20);
        let d = rng.random_range(1..=30);
        let density = rng.random_range(0.05..1.0);
        let p = random_sparse_quadratic(&mut rng, n, d, density).map_err(err)?;
        let mut sum_sq = DMatrix::zeros(d, d);
        let mut l_i = Vec::new();
        for c in &p.clients {
            let LocalLoss::LeastSquares { a, .. } = c.loss() else { return Err("expected least squares".into()) };
            let h = dense_hessian(d, c.active_coords(), a);
            l_i.push(lambda_max(h.clone()));
            sum_sq += &h * &h;
        }
        let exact = (lambda_max(sum_sq / n as f64).max(0.0)).sqrt();
        let l_max = l_i.iter().copied().fold(0.0, f64::max);
        let l_tilde = (l_i.iter().map(|l| l * l).sum::<f64>() / n as f64).sqrt();
        let col = (0..d)
            .map(|j| (0..n).filter(|&i| p.pattern.is_active(i, j)).map(|i| l_i[i] * l_i[i]).sum::<f64>())
            .fold(0.0, f64::max);
        let col = (col / n as f64).sqrt();
        let min_bound = ((p.pattern.c() as f64 / n as f64).sqrt() * l_max).min(l_tilde);

        let rep = SmoothnessReport::analyze(&p).map_err(err)?;
        let lib_exact = rep.l_plus_exact.ok_or("no exact L_plus")?;
        let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-300);
        worst_oracle = worst_oracle.max(rel(lib_exact, exact)).max(rel(rep.l_plus_bound_col, col)).max(rel(rep.l_plus_bound_min, min_bound));
        let le = |a: f64, b: f64| a <= b * (1.0 + 1e-8);
        if !(le(exact, col) && le(col, min_bound)) {
            chain_failures += 1;
        }
    }
    ensure(
        chain_failures == 0 && worst_oracle <= 1e-8,
        format!("100 instances, {chain_failures} chain failures, max relative gap to oracle {worst_oracle:e}"),
    )
}

fn fixture() -> Result<LibsvmDataset<f64>, String> {
    datasets::parse_libsvm(include_str!("../fixtures/synthetic.libsvm")).map_err(err)
}

fn synth(n: usize, d: usize, c_over_n: f64, seed: u64) -> Result<Problem, String> {
    datasets::generate(&SynthConfig { n, d, m: 6, c_over_n, seed, ..SynthConfig::default() }).map_err(err)
}

fn c4_aggregation() -> Outcome {
    let mut problems = vec![synth(20, 40, 0.1, 11)?, synth(20, 40, 0.5, 12)?, synth(10, 30, 1.0, 13)?];
    let base = synth(20, 40, 0.2, 14)?;
    let lam = datasets::synth::default_regularizer_weight(&base);
    problems.push(datasets::add_nonconvex_regularizer(base, lam).map_err(err)?);
    problems.push(datasets::partition_even(&fixture()?, 30, 4).map_err(err)?);

    let (mut checks, mut violations, mut worst) = (0u64, 0u64, f64::NEG_INFINITY);
    for p in &problems {
        let (n, d) = (p.n(), p.d());
        let c = p.pattern.c() as f64;
        let rep = SmoothnessReport::analyze(p).map_err(err)?;
        for k in [1, 3] {
            let alpha = algorithms::min_alpha(p, k).map_err(err)?;
            let gamma = smoothness::stepsize_theorem1(rep.l, rep.l_plus_best(), p.pattern.c(), n, alpha).map_err(err)?.gamma;
            let x0: Vec<f64> = {
                let mut rng = ChaCha8Rng::seed_from_u64(k as u64);
                (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()
            };
            let spec = TopK::new(k).map_err(err)?;
            let mut st = Ef21State::new(p, x0, G0Init::Zero).map_err(err)?;
            for t in 0..=1000 {
                if t > 0 {
                    step_ef21(&mut st, p, &spec, gamma).map_err(err)?;
                }
                let x = &st.it.x;
                let grads: Vec<Vec<f64>> = p.clients.iter().map(|cl| cl.gradient(x)).collect();
                let grad_f: Vec<f64> = (0..d).map(|j| grads.iter().map(|g| g[j]).sum::<f64>() / n as f64).collect();
                let g_mean: Vec<f64> = (0..d).map(|j| st.g_i.iter().map(|g| g[j]).sum::<f64>() / n as f64).collect();
                let big_g = st.g_i.iter().zip(&grads).map(|(a, b)| dist_sq(a, b)).sum::<f64>() / n as f64;
                let excess = dist_sq(&g_mean, &grad_f) - c / n as f64 * big_g;
                worst = worst.max(excess);
                checks += 1;
                if excess > 1e-12 {
                    violations += 1;
                }
            }
        }
    }
    ensure(violations == 0, format!("{checks} steps over {} runs, {violations} violations, worst excess {worst:e}", problems.len() * 2))
}

fn c5_certificate() -> Outcome {
    let cfg = SynthConfig { n: 100, d: 500, m: 12, c_over_n: 0.05, v: 0.1, p: 2.0, seed: 0, ..SynthConfig::default() };
    let p: Problem = datasets::generate(&cfg).map_err(err)?;
    let run_cfg = RunConfig { iterations: 10_000, gamma_rule: GammaRule::TheoreticalNew, ..RunConfig::default() };
    let trace = unwrap_run(algorithms::run(&run_cfg, &p))?;
    let k = &trace.meta.constants;
    let rep = &trace.meta.smoothness;
    let alpha = algorithms::min_alpha(&p, 1).map_err(err)?;
    let expect = smoothness::stepsize_theorem1(rep.l, rep.l_plus_bound_min, p.pattern.c(), p.n(), alpha).map_err(err)?;
    if k.gamma != expect.gamma {
        return Err(format!("run used gamma {} instead of {}", k.gamma, expect.gamma));
    }
    let (gamma, theta, c_n) = (k.gamma, expect.theta, p.pattern.c() as f64 / p.n() as f64);
    let f_star = p.f_star_hint.ok_or("no f* for the synthetic instance")?;

    let recs = &trace.records;
    let psi: Vec<f64> = recs.iter().map(|r| r.f - f_star + gamma * c_n / (2.0 * theta) * r.g_err.unwrap_or(f64::NAN)).collect();
    let psi_gap = recs.iter().zip(&psi).map(|(r, q)| (r.psi.unwrap_or(f64::NAN) - q).abs() / q.abs().max(1.0)).fold(0.0, f64::max);
    let mut violations = 0;
    for t in 0..recs.len() - 1 {
        let scale = psi[t].abs().max(psi[t + 1].abs()).max(recs[t].f.abs()).max(recs[t + 1].f.abs());
        if psi[t + 1] > psi[t] - 0.5 * gamma * recs[t].grad_norm_sq + 1e-9 * scale {
            violations += 1;
        }
    }
    let t_count = recs.len() - 1;
    let avg = recs[..t_count].iter().map(|r| r.grad_norm_sq).sum::<f64>() / t_count as f64;
    let bound = 2.0 * (recs[0].f - f_star) / (gamma * t_count as f64) + c_n * recs[0].g_err.unwrap_or(f64::NAN) / (theta * t_count as f64);
    let lib = ef21lab::metrics::theorem1_certificate(&trace, k).map_err(err)?;
    ensure(
        t_count == 10_000 && violations == 0 && avg <= bound && lib.holds() && psi_gap <= 1e-12,
        format!("T = {t_count}, gamma = {gamma:.4e}, {violations} descent violations, average {avg:.4e} <= bound {bound:.4e}, Psi recompute gap {psi_gap:e}"),
    )
}

fn c6_homogeneous() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (d, m) = (6, 8);
    let rows: Vec<Vec<f64>> = (0..m).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let a = DenseMatrix::from_rows(&rows).map_err(err)?;
    let b: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
    let x0: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let make = |n: usize| -> Result<Problem, String> {
        let clients = (0..n).map(|i| ClientObjective::least_squares(i, d, (0..d).collect(), a.clone(), b.clone())).collect::<Result<Vec<_>, _>>().map_err(err)?;
        Problem::new(clients, "homogeneous").map_err(err)
    };
    let one = make(1)?;
    let rep = SmoothnessReport::analyze(&one).map_err(err)?;
    let alpha = algorithms::min_alpha(&one, 2).map_err(err)?;
    // one stepsize for all n, taken from the n = 1 constants
    let gamma = smoothness::stepsize_theorem1(rep.l, rep.l_plus_best(), 1, 1, alpha).map_err(err)?.gamma;
    let cfg = RunConfig {
        iterations: 100,
        k: 2,
        gamma_rule: GammaRule::Explicit(gamma),
        g0: G0Init::Zero,
        x0: X0Init::Point(x0),
        record_iterates: true,
        ..RunConfig::default()
    };
    let reference = unwrap_run(algorithms::run(&cfg, &one))?;
    let mut worst = 0.0f64;
    for n in [4, 16] {
        let run = unwrap_run(algorithms::run(&cfg, &make(n)?))?;
        if run.iterates.len() != 101 {
            return Err(format!("expected 101 iterates, got {}", run.iterates.len()));
        }
        for (xa, xb) in reference.iterates.iter().zip(&run.iterates) {
            worst = xa.iter().zip(xb).map(|(p, q)| (p - q).abs()).fold(worst, f64::max);
        }
    }
    ensure(worst <= 1e-12, format!("n in {{1, 4, 16}}, 100 iterations, max coordinate gap {worst:e}"))
}

fn c7_separable() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (n, block, m) = (5, 4, 6);
    let d = n * block;
    let mut blocks = Vec::new();
    let mut clients = Vec::new();
    for i in 0..n {
        let rows: Vec<Vec<f64>> = (0..m).map(|_| (0..block).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let a = DenseMatrix::from_rows(&rows).map_err(err)?;
        let b: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        clients.push(ClientObjective::least_squares(i, d, (i * block..(i + 1) * block).collect(), a.clone(), b.clone()).map_err(err)?);
        blocks.push((a, b));
    }
    let joint = Problem::new(clients, "blocks").map_err(err)?;
    if joint.pattern.c() != 1 {
        return Err(format!("block problem has c = {}", joint.pattern.c()));
    }
    let x0: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let cfg = RunConfig { iterations: 500, k: 1, x0: X0Init::Point(x0.clone()), record_iterates: true, ..RunConfig::default() };
    let joint_run = unwrap_run(algorithms::run(&cfg, &joint))?;
    let gamma = joint_run.meta.constants.gamma;
    let mut worst = 0.0f64;
    for (i, (a, b)) in blocks.into_iter().enumerate() {
        let single = Problem::new(vec![ClientObjective::least_squares(0, block, (0..block).collect(), a, b).map_err(err)?], "block").map_err(err)?;
        // f = (1/n) Σ f_i: each block sees stepsize γ/n on its own f_i
        let single_cfg = RunConfig {
            gamma_rule: GammaRule::Explicit(gamma / n as f64),
            x0: X0Init::Point(x0[i * block..(i + 1) * block].to_vec()),
            ..cfg.clone()
        };
        let run = unwrap_run(algorithms::run(&single_cfg, &single))?;
        for (xj, xs) in joint_run.iterates.iter().zip(&run.iterates) {
            worst = xj[i * block..(i + 1) * block].iter().zip(xs).map(|(p, q)| (p - q).abs()).fold(worst, f64::max);
        }
    }
    ensure(worst <= 1e-12, format!("{n} blocks of {block}, 500 iterations, max coordinate gap {worst:e}"))
}

fn c8_xi() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut violations, mut formula_gap) = (0, 0.0f64);
    for _ in 0..50 {
        let lt: f64 = rng.random_range(0.01..100.0);
        let l = lt * rng.random_range(0.0..=1.0);
        let mut prev = f64::INFINITY;
        for i in 1..=1000 {
            let alpha = i as f64 / 1000.0;
            let v = smoothness::xi_complexity(alpha, l, lt);
            let oracle = alpha * l + lt * (1.0 + (1.0 - alpha).sqrt() - alpha);
            formula_gap = formula_gap.max((v - oracle).abs() / oracle.abs().max(1.0));
            if v > prev + 1e-12 * prev.abs().max(1.0) {
                violations += 1;
            }
            prev = v;
        }
    }
    ensure(violations == 0 && formula_gap <= 1e-12, format!("50 pairs x 1000 points, {violations} increases, formula gap {formula_gap:e}"))
}

fn first_hit(trace: &Trace, target: f64) -> Option<usize> {
    trace.first_hit(target).map(|r| r.t)
}

fn c9_stepsize_comparison() -> Outcome {
    let start = Instant::now();
    let target = 1e-4;
    let mut hits = Vec::new();
    for (c_over_n, iterations) in [(0.05, 8_000), (0.9, 25_000)] {
        let cfg = SynthConfig { n: 500, d: 100, m: 12, c_over_n, v: 0.1, p: 2.0, seed: 0, ..SynthConfig::default() };
        let p: Problem = datasets::generate(&cfg).map_err(err)?;
        let rep = SmoothnessReport::analyze(&p).map_err(err)?;
        let mut pair = Vec::new();
        for rule in [GammaRule::TheoreticalNew, GammaRule::TheoreticalStandard] {
            let rc = RunConfig { iterations, gamma_rule: rule, checks: false, ..RunConfig::default() };
            let t = unwrap_run(algorithms::run_with_report(&rc, &p, &rep))?;
            pair.push(first_hit(&t, target));
        }
        hits.push((c_over_n, pair[0], pair[1]));
    }
    let secs = start.elapsed().as_secs_f64();
    let show = |h: Option<usize>| h.map_or_else(|| "not reached".to_string(), |v| v.to_string());
    let detail = hits.iter().map(|(c, a, b)| format!("c/n = {c}: new {} vs standard {}", show(*a), show(*b))).collect::<Vec<_>>().join(", ");
    let sparse_ok = match hits[0] {
        (_, Some(new), std) => std.is_none_or(|s| s >= 2 * new),
        _ => false,
    };
    let dense_ok = match hits[1] {
        (_, Some(a), Some(b)) => (a as f64 - b as f64).abs() <= 0.1 * a.max(b) as f64,
        _ => false,
    };
    ensure(sparse_ok && dense_ok && secs <= 120.0, format!("{detail}, {secs:.0}s"))
}

fn c10_adaptive() -> Outcome {
    let p = datasets::partition_even(&fixture()?, 300, 0).map_err(err)?;
    let rep = SmoothnessReport::analyze(&p).map_err(err)?;
    let base = RunConfig { iterations: 5_000, g0: G0Init::Zero, x0: X0Init::Uniform, ..RunConfig::default() };
    let standard = unwrap_run(algorithms::run_with_report(&RunConfig { gamma_rule: GammaRule::TheoreticalStandard, ..base.clone() }, &p, &rep))?;
    let adaptive = unwrap_run(algorithms::run_with_report(
        &RunConfig { method: Method::Ef21Adaptive, gamma_rule: GammaRule::Adaptive, ..base },
        &p,
        &rep,
    ))?;
    let n = p.n() as f64;
    let alpha = algorithms::min_alpha(&p, 1).map_err(err)?;
    let gamma_std = smoothness::standard_stepsize_ef21(rep.l, rep.l_tilde, alpha).map_err(err)?;
    let mut c_bad = 0;
    let mut gamma_bad = 0;
    for r in &adaptive.records {
        let c_t = r.c_t.ok_or("adaptive trace lacks c_t")?;
        c_bad += usize::from(!(0.0..=n).contains(&c_t));
        gamma_bad += usize::from(r.gamma < gamma_std);
    }
    let lo = standard.records.iter().map(|r| r.grad_norm_sq).fold(f64::INFINITY, f64::min);
    let hi = standard.records[0].grad_norm_sq;
    let mut late = 0;
    let targets = 200;
    for i in 0..=targets {
        let target = hi * (lo / hi).powf(i as f64 / targets as f64);
        let s = first_hit(&standard, target).ok_or("standard misses its own minimum")?;
        match first_hit(&adaptive, target) {
            Some(a) if a <= s => {}
            _ => late += 1,
        }
    }
    ensure(
        c_bad == 0 && gamma_bad == 0 && late == 0,
        format!("n = {}, {c_bad} c_t out of range, {gamma_bad} steps below gamma_std = {gamma_std:.4e}, {late} of {} targets reached later", p.n(), targets + 1),
    )
}

fn c11_stepsize_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut worst, mut unit_alpha_bad) = (0.0f64, 0);
    for _ in 0..1000 {
        let l_tilde = rng.random_range(0.01..100.0);
        let l = l_tilde * rng.random_range(0.01..=1.0);
        let n = rng.random_range(1..=1000);
        let alpha: f64 = rng.random_range(0.001..=1.0);
        let new = smoothness::stepsize_theorem1(l, l_tilde, n, n, alpha).map_err(err)?.gamma;
        let std = smoothness::standard_stepsize_ef21(l, l_tilde, alpha).map_err(err)?;
        worst = worst.max((new - std).abs() / std);
        let c = rng.random_range(1..=n);
        let new1 = smoothness::stepsize_theorem1(l, rng.random_range(0.0..=l_tilde), c, n, 1.0).map_err(err)?.gamma;
        let std1 = smoothness::standard_stepsize_ef21(l, l_tilde, 1.0).map_err(err)?;
        unit_alpha_bad += usize::from(new1 != 1.0 / l || std1 != 1.0 / l);
    }
    ensure(worst <= 1e-15 && unit_alpha_bad == 0, format!("1000 draws, max relative gap {worst:e}, {unit_alpha_bad} alpha = 1 mismatches"))
}
