//! Inequality batteries run by `ef21lab verify`.
//!
//! Each battery exercises one family of claims on seeded random inputs or on
//! small built-in problems and reports how many checks ran and whether all
//! passed.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::algorithms::{self, G0Init, GammaRule, Method, RunConfig, X0Init};
use crate::compress::{alpha_for, contraction_factor, TopK};
use crate::datasets::{self, SynthConfig};
use crate::error::{Error, Result};
use crate::kv::{Fields, Section};
use crate::linalg::DenseMatrix;
use crate::metrics::{self, CheckStat, RunTrace};
use crate::problem::{ClientObjective, DistributedProblem};
use crate::smoothness::{self, SmoothnessReport};

const FIXTURE: &str = include_str!("../fixtures/synthetic.libsvm");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Battery {
    /// Top-K contraction on active subspaces.
    TopK,
    /// `sqrt(β/θ)` closed form and stepsize identities.
    Identity,
    /// `L₊(exact) ≤ col bound ≤ min bound`, and monotonicity in sparsity.
    Lemma2,
    /// Aggregation inequality `‖g − ∇f‖² ≤ (c/n) G`.
    Lemma5,
    /// Estimator-error recursion.
    Recursion,
    /// Lyapunov descent and the averaged-gradient certificate.
    Lyapunov,
    /// `ξ(α)` nonincreasing.
    Xi,
    /// Identical clients give `n`-independent trajectories.
    Homogeneous,
    /// `c = 1` block problems split into independent runs.
    Separable,
    /// Estimators stay on their clients' active coordinates.
    Subspace,
}

impl Battery {
    pub const ALL: [Battery; 10] = [
        Battery::TopK,
        Battery::Identity,
        Battery::Lemma2,
        Battery::Lemma5,
        Battery::Recursion,
        Battery::Lyapunov,
        Battery::Xi,
        Battery::Homogeneous,
        Battery::Separable,
        Battery::Subspace,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Battery::TopK => "topk",
            Battery::Identity => "identity",
            Battery::Lemma2 => "lemma2",
            Battery::Lemma5 => "lemma5",
            Battery::Recursion => "recursion",
            Battery::Lyapunov => "lyapunov",
            Battery::Xi => "xi",
            Battery::Homogeneous => "homogeneous",
            Battery::Separable => "separable",
            Battery::Subspace => "subspace",
        }
    }
}

impl fmt::Display for Battery {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Battery {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Battery::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown verify scope '{s}'")))
    }
}

/// Parses `all` or a comma-separated list of battery names.
pub fn parse_scope(s: &str) -> Result<Vec<Battery>> {
    if s == "all" {
        return Ok(Battery::ALL.to_vec());
    }
    s.split(',').map(|p| p.trim().parse()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyConfig {
    pub seed: u64,
    /// EF21 rounds per trajectory battery.
    pub iterations: usize,
    /// Random instances for the `L₊` bound battery.
    pub instances: usize,
    /// Multiplies every EF21 stepsize; anything above 1 is a deliberate fault.
    pub gamma_scale: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self { seed: 0, iterations: 1000, instances: 100, gamma_scale: 1.0 }
    }
}

impl VerifyConfig {
    pub fn from_section(section: Section) -> Result<Self> {
        let mut cfg = Self::default();
        let mut f = Fields::new(section);
        f.take_into("seed", &mut cfg.seed)?;
        f.take_into("iterations", &mut cfg.iterations)?;
        f.take_into("instances", &mut cfg.instances)?;
        f.take_into("gamma_scale", &mut cfg.gamma_scale)?;
        f.ignore(&["scope"]);
        f.finish()?;
        if !(cfg.gamma_scale > 0.0) {
            return Err(Error::Config("gamma_scale must be positive".into()));
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatteryResult {
    pub battery: Battery,
    pub checks: u64,
    pub failures: u64,
    pub detail: String,
}

impl BatteryResult {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Runs the selected batteries in order.
pub fn run_batteries(scope: &[Battery], config: &VerifyConfig) -> Result<Vec<BatteryResult>> {
    scope.iter().map(|&b| run_battery(b, config)).collect()
}

pub fn run_battery(battery: Battery, config: &VerifyConfig) -> Result<BatteryResult> {
    log::info!("verify: {battery}");
    let (checks, failures, detail) = match battery {
        Battery::TopK => topk(config)?,
        Battery::Identity => identity()?,
        Battery::Lemma2 => lemma2(config)?,
        Battery::Xi => xi(config),
        Battery::Lemma5 => trajectory_battery(config, |t| vec![&t.meta.checks.aggregation])?,
        Battery::Recursion => trajectory_battery(config, |t| vec![&t.meta.checks.recursion])?,
        Battery::Subspace => trajectory_battery(config, |t| vec![&t.meta.checks.subspace])?,
        Battery::Lyapunov => lyapunov(config)?,
        Battery::Homogeneous => homogeneous(config)?,
        Battery::Separable => separable(config)?,
    };
    Ok(BatteryResult { battery, checks, failures, detail })
}

type Tally = (u64, u64, String);

fn topk(config: &VerifyConfig) -> Result<Tally> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (mut checks, mut failures) = (0, 0);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..10_000 {
        let d = rng.random_range(1..=8);
        let mut x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        for v in x.iter_mut() {
            if rng.random_bool(0.3) {
                *v = 0.0;
            }
        }
        let s = x.iter().filter(|v| **v != 0.0).count().max(1);
        for k in 1..=d {
            let spec = TopK::new(k)?;
            let factor = contraction_factor(&spec, &x, s)?;
            let bound = 1.0 - alpha_for::<f64>(k, s)?;
            checks += 1;
            worst = worst.max(factor - bound);
            if factor > bound + 1e-15 {
                failures += 1;
            }
        }
    }
    // equal magnitudes attain the bound
    for s in 1..=8usize {
        let x: Vec<f64> = (0..s).map(|j| if j % 2 == 0 { 1.0 } else { -1.0 }).collect();
        for k in 1..=s {
            let factor = contraction_factor(&TopK::new(k)?, &x, s)?;
            checks += 1;
            if (factor - (1.0 - alpha_for::<f64>(k, s)?)).abs() > 1e-15 {
                failures += 1;
            }
        }
    }
    Ok((checks, failures, format!("max factor − bound = {worst:e}")))
}

fn identity() -> Result<Tally> {
    let (mut checks, mut failures) = (0, 0);
    let mut worst: f64 = 0.0;
    for i in 1..=999 {
        let alpha = i as f64 / 1000.0;
        let (theta, beta) = smoothness::theta_beta(alpha)?;
        let direct = (beta / theta).sqrt();
        let closed = smoothness::sqrt_beta_over_theta(alpha)?;
        let rel = (direct - closed).abs() / closed;
        worst = worst.max(rel);
        checks += 1;
        if rel > 1e-12 {
            failures += 1;
        }
    }
    let (theta, beta) = smoothness::theta_beta(1.0)?;
    checks += 1;
    if theta != 1.0 || beta != 0.0 {
        failures += 1;
    }
    for &(l, lt, alpha) in &[(1.0f64, 1.0f64, 0.75f64), (0.3, 2.0, 0.1), (5.0, 5.5, 0.01), (2.0, 3.0, 1.0)] {
        let std = smoothness::standard_stepsize_ef21(l, lt, alpha)?;
        for n in [1usize, 7, 100] {
            let new = smoothness::stepsize_theorem1(l, lt, n, n, alpha)?.gamma;
            checks += 1;
            if (new - std).abs() > 1e-15 * std {
                failures += 1;
            }
        }
        if alpha == 1.0 {
            checks += 1;
            if std != 1.0 / l || smoothness::stepsize_theorem1(l, lt, 1, 3, 1.0)?.gamma != 1.0 / l {
                failures += 1;
            }
        }
    }
    Ok((checks, failures, format!("max relative error of sqrt(beta/theta) = {worst:e}")))
}

/// Random least-squares problem on a random pattern; every client gets at
/// least one coordinate.
pub fn random_sparse_quadratic(rng: &mut impl Rng, n: usize, d: usize, density: f64) -> Result<DistributedProblem<f64>> {
    let clients = (0..n)
        .map(|i| {
            let mut coords: Vec<usize> = (0..d).filter(|_| rng.random_bool(density)).collect();
            if coords.is_empty() {
                coords.push(rng.random_range(0..d));
            }
            let m = rng.random_range(1..=6);
            let rows: Vec<Vec<f64>> =
                (0..m).map(|_| (0..coords.len()).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let b = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
            ClientObjective::least_squares(i, d, coords, DenseMatrix::from_rows(&rows)?, b)
        })
        .collect::<Result<Vec<_>>>()?;
    DistributedProblem::new(clients, format!("random(n={n},d={d})"))
}

fn lemma2(config: &VerifyConfig) -> Result<Tally> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x1e33a2);
    let (mut checks, mut failures) = (0, 0);
    for _ in 0..config.instances {
        let n = rng.random_range(1..=20);
        let d = rng.random_range(1..=30);
        let density = rng.random_range(0.05..1.0);
        let p = random_sparse_quadratic(&mut rng, n, d, density)?;
        let rep = SmoothnessReport::analyze(&p)?;
        let exact = rep.l_plus_exact.expect("least squares");
        let rel = |a: f64, b: f64| a <= b * (1.0 + 1e-8) + 1e-300;
        checks += 2;
        failures += u64::from(!rel(exact, rep.l_plus_bound_col)) + u64::from(!rel(rep.l_plus_bound_col, rep.l_plus_bound_min));
        // dropping an active entry never raises the column bound
        let l_i = p.client_smoothness();
        let mut rows: Vec<Vec<usize>> = (0..n).map(|i| p.pattern.active_coords(i).to_vec()).collect();
        if let Some(i) = (0..n).find(|&i| rows[i].len() > 1) {
            rows[i].pop();
            let sparser = crate::problem::SparsityPattern::from_rows(d, rows)?;
            let (col, _) = smoothness::l_plus_bounds(&l_i, &sparser)?;
            checks += 1;
            failures += u64::from(col > rep.l_plus_bound_col);
        }
    }
    Ok((checks, failures, format!("{} random instances", config.instances)))
}

fn xi(config: &VerifyConfig) -> Tally {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5151);
    let (mut checks, mut failures) = (0, 0);
    for _ in 0..50 {
        let lt: f64 = rng.random_range(0.01..100.0);
        let l = lt * rng.random_range(0.0..=1.0);
        let mut prev = f64::INFINITY;
        for i in 1..=1000 {
            let v = smoothness::xi_complexity(i as f64 / 1000.0, l, lt);
            checks += 1;
            if v > prev + 1e-12 * prev.abs().max(1.0) {
                failures += 1;
            }
            prev = v;
        }
    }
    (checks, failures, "50 (L, L̃) pairs on a 1000-point grid".into())
}

fn synth(n: usize, d: usize, c_over_n: f64, seed: u64) -> Result<DistributedProblem<f64>> {
    let cfg = SynthConfig { n, d, m: 6, c_over_n, v: 0.1, seed, ..SynthConfig::default() };
    datasets::generate(&cfg)
}

/// Small problems covering quadratics, the regularized nonconvex variant and
/// logistic regression on the bundled LIBSVM fixture.
fn trajectory_problems(config: &VerifyConfig) -> Result<Vec<DistributedProblem<f64>>> {
    let mut out = Vec::new();
    for (i, c) in [0.1, 0.5, 1.0].into_iter().enumerate() {
        out.push(synth(20, 40, c, config.seed + i as u64)?);
    }
    let base = synth(20, 40, 0.2, config.seed + 7)?;
    let lam = datasets::synth::default_regularizer_weight(&base);
    out.push(datasets::add_nonconvex_regularizer(base, lam)?);
    let ds = datasets::parse_libsvm::<f64>(FIXTURE)?;
    out.push(datasets::partition_even(&ds, 30, config.seed)?);
    Ok(out)
}

fn trajectory_runs(config: &VerifyConfig, methods: &[Method]) -> Result<Vec<RunTrace<f64>>> {
    let mut traces = Vec::new();
    for p in trajectory_problems(config)? {
        let report = SmoothnessReport::analyze(&p)?;
        for &method in methods {
            for k in [1, 3] {
                for g0 in [G0Init::Zero, G0Init::ExactGradient] {
                    let rule = match method {
                        Method::Ef21Adaptive => vec![GammaRule::Adaptive],
                        _ => vec![GammaRule::TheoreticalNew, GammaRule::TheoreticalStandard],
                    };
                    for gamma_rule in rule {
                        let rc = RunConfig {
                            method,
                            iterations: config.iterations,
                            gamma_rule,
                            k,
                            g0,
                            x0: X0Init::Uniform,
                            seed: config.seed,
                            gamma_scale: config.gamma_scale,
                            ..RunConfig::default()
                        };
                        match algorithms::run_with_report(&rc, &p, &report) {
                            Ok(t) => traces.push(t),
                            Err(algorithms::RunFailure::Diverged { trace, .. }) => traces.push(*trace),
                            Err(algorithms::RunFailure::Invalid(e)) => return Err(e),
                        }
                    }
                }
            }
        }
    }
    Ok(traces)
}

fn sum_stats<'a>(stats: impl Iterator<Item = &'a CheckStat>) -> (u64, u64, f64) {
    stats.fold((0, 0, f64::NEG_INFINITY), |(c, f, w), s| {
        (c + s.checked, f + s.violations, w.max(s.worst_excess.unwrap_or(f64::NEG_INFINITY)))
    })
}

fn trajectory_battery(config: &VerifyConfig, pick: impl Fn(&RunTrace<f64>) -> Vec<&CheckStat>) -> Result<Tally> {
    let traces = trajectory_runs(config, &[Method::Ef21, Method::Ef21Adaptive])?;
    let (checks, failures, worst) = sum_stats(traces.iter().flat_map(pick));
    let halted = traces.iter().filter(|t| t.meta.halted.is_some()).count() as u64;
    Ok((checks + traces.len() as u64, failures + halted, format!("{} runs, worst excess {worst:e}, {halted} halted", traces.len())))
}

fn lyapunov(config: &VerifyConfig) -> Result<Tally> {
    let traces = trajectory_runs(config, &[Method::Ef21])?;
    let (mut checks, mut failures, worst) = sum_stats(traces.iter().map(|t| &t.meta.checks.lyapunov));
    let mut min_margin = f64::INFINITY;
    for t in &traces {
        checks += 1;
        if t.meta.halted.is_some() {
            failures += 1;
            continue;
        }
        let cert = metrics::theorem1_certificate(t, &t.meta.constants)?;
        min_margin = min_margin.min(cert.margin);
        if !cert.holds() {
            failures += 1;
        }
    }
    Ok((checks, failures, format!("{} runs, worst descent excess {worst:e}, smallest certificate margin {min_margin:e}", traces.len())))
}

/// `n` copies of one least-squares client on all `d` coordinates.
pub fn homogeneous_problem(n: usize, a: &DenseMatrix<f64>, b: &[f64]) -> Result<DistributedProblem<f64>> {
    let d = a.cols();
    let clients = (0..n)
        .map(|i| ClientObjective::least_squares(i, d, (0..d).collect(), a.clone(), b.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    DistributedProblem::new(clients, format!("homogeneous(n={n})"))
}

fn homogeneous(config: &VerifyConfig) -> Result<Tally> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x4040);
    let (d, m) = (6, 8);
    let rows: Vec<Vec<f64>> = (0..m).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let a = DenseMatrix::from_rows(&rows)?;
    let b: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
    let x0: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let base = RunConfig {
        iterations: 100,
        k: 2,
        g0: G0Init::Zero,
        x0: X0Init::Point(x0.clone()),
        record_iterates: true,
        gamma_scale: config.gamma_scale,
        ..RunConfig::default()
    };
    let reference = algorithms::run(&base, &homogeneous_problem(1, &a, &b)?).map_err(|e| Error::Verification(e.to_string()))?;
    // L is re-estimated per problem; share the stepsize so only the method differs
    let pinned = RunConfig { gamma_rule: GammaRule::Explicit(reference.meta.constants.gamma), gamma_scale: 1.0, ..base };
    let mut runs = vec![reference];
    for n in [4, 16] {
        let p = homogeneous_problem(n, &a, &b)?;
        runs.push(algorithms::run(&pinned, &p).map_err(|e| Error::Verification(e.to_string()))?);
    }
    let (mut checks, mut failures, mut worst) = (0, 0, 0.0f64);
    for other in &runs[1..] {
        for (xa, xb) in runs[0].iterates.iter().zip(&other.iterates) {
            let diff = xa.iter().zip(xb).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
            worst = worst.max(diff);
            checks += 1;
            if diff > 1e-12 {
                failures += 1;
            }
        }
    }
    Ok((checks, failures, format!("n ∈ {{1, 4, 16}}, max coordinate gap {worst:e}")))
}

/// `c = 1` problem: client `i` owns coordinates `[i·block, (i+1)·block)`.
pub fn block_problem(rng: &mut impl Rng, n: usize, block: usize, m: usize) -> Result<DistributedProblem<f64>> {
    let d = n * block;
    let clients = (0..n)
        .map(|i| {
            let rows: Vec<Vec<f64>> = (0..m).map(|_| (0..block).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let b = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
            ClientObjective::least_squares(i, d, (i * block..(i + 1) * block).collect(), DenseMatrix::from_rows(&rows)?, b)
        })
        .collect::<Result<Vec<_>>>()?;
    DistributedProblem::new(clients, format!("blocks(n={n},block={block})"))
}

/// Client `i` of a block problem as a single-node problem on its own block.
pub fn block_as_single(problem: &DistributedProblem<f64>, i: usize) -> Result<DistributedProblem<f64>> {
    let c = &problem.clients[i];
    let s = c.active_coords().len();
    match c.loss() {
        crate::problem::LocalLoss::LeastSquares { a, b } => {
            let single = ClientObjective::least_squares(0, s, (0..s).collect(), a.clone(), b.clone())?;
            DistributedProblem::new(vec![single], format!("block {i}"))
        }
        crate::problem::LocalLoss::Logistic { .. } => Err(Error::InvalidParameter("block split expects least squares".into())),
    }
}

fn separable(config: &VerifyConfig) -> Result<Tally> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5e9a);
    let (n, block) = (5, 4);
    let p = block_problem(&mut rng, n, block, 6)?;
    let x0: Vec<f64> = (0..n * block).map(|_| rng.random_range(-1.0..1.0)).collect();
    let k = 1;
    let joint_cfg = RunConfig {
        iterations: 500,
        k,
        x0: X0Init::Point(x0.clone()),
        record_iterates: true,
        gamma_scale: config.gamma_scale,
        ..RunConfig::default()
    };
    let joint = algorithms::run(&joint_cfg, &p).map_err(|e| Error::Verification(e.to_string()))?;
    let gamma = joint.meta.constants.gamma;
    let (mut checks, mut failures, mut worst) = (0, 0, 0.0f64);
    for i in 0..n {
        // f = (1/n) Σ f_i, so block i moves like a single node on f_i with stepsize γ/n
        let single = block_as_single(&p, i)?;
        let cfg = RunConfig {
            gamma_rule: GammaRule::Explicit(gamma / n as f64),
            gamma_scale: 1.0,
            x0: X0Init::Point(x0[i * block..(i + 1) * block].to_vec()),
            ..joint_cfg.clone()
        };
        let run = algorithms::run(&cfg, &single).map_err(|e| Error::Verification(e.to_string()))?;
        for (xj, xs) in joint.iterates.iter().zip(&run.iterates) {
            let diff = xj[i * block..(i + 1) * block].iter().zip(xs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            worst = worst.max(diff);
            checks += 1;
            if diff > 1e-12 {
                failures += 1;
            }
        }
    }
    Ok((checks, failures, format!("{n} blocks of {block}, max coordinate gap {worst:e}")))
}
