//! DGD, DCGD, EF14, EF21 and EF21 with adaptive stepsize, plus the run
//! driver that records a [`RunTrace`].
//!
//! Every method keeps the current iterate together with the local values and
//! gradients evaluated there, so each round costs one pass over the clients.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::compress::{alpha_for, TopK};
use crate::error::{Error, Result};
use crate::kv::{self, Fields, Section};
use crate::linalg;
use crate::metrics::{self, CheckSummary, RunConstants, RunTrace, TraceMeta, TraceRecord};
use crate::problem::{mean_scalar, DistributedProblem};
use crate::scalar::Scalar;
use crate::smoothness::{self, SmoothnessReport};

/// Iterates with a larger norm are treated as divergent.
pub const DIVERGENCE_NORM: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Dgd,
    Dcgd,
    Ef14,
    Ef21,
    Ef21Adaptive,
}

impl Method {
    pub fn is_ef21(self) -> bool {
        matches!(self, Method::Ef21 | Method::Ef21Adaptive)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Dgd => "dgd",
            Method::Dcgd => "dcgd",
            Method::Ef14 => "ef14",
            Method::Ef21 => "ef21",
            Method::Ef21Adaptive => "ef21-adaptive",
        })
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "dgd" => Method::Dgd,
            "dcgd" => Method::Dcgd,
            "ef14" => Method::Ef14,
            "ef21" => Method::Ef21,
            "ef21-adaptive" | "ef21_adaptive" => Method::Ef21Adaptive,
            _ => return Err(Error::Config(format!("unknown method '{s}'"))),
        })
    }
}

/// How the stepsize is chosen. For DGD, DCGD and EF14 both theoretical
/// rules resolve to `1/L`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GammaRule<T> {
    /// `1/(L + L̃ sqrt(β/θ))`
    TheoreticalStandard,
    /// `1/(L + L₊ sqrt(βc/(θn)))`
    TheoreticalNew,
    /// Recomputed every round from the realized `c^t`.
    Adaptive,
    Explicit(T),
}

impl<T: Scalar> fmt::Display for GammaRule<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GammaRule::TheoreticalStandard => f.write_str("theoretical-standard"),
            GammaRule::TheoreticalNew => f.write_str("theoretical-new"),
            GammaRule::Adaptive => f.write_str("adaptive"),
            GammaRule::Explicit(g) => write!(f, "{g}"),
        }
    }
}

impl<T: Scalar> FromStr for GammaRule<T> {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "theoretical-standard" | "standard" => GammaRule::TheoreticalStandard,
            "theoretical-new" | "new" => GammaRule::TheoreticalNew,
            "adaptive" => GammaRule::Adaptive,
            other => {
                let g: f64 = other.parse().map_err(|_| Error::Config(format!("unknown stepsize rule '{s}'")))?;
                GammaRule::Explicit(T::lit(g))
            }
        })
    }
}

/// Which `L₊` the theoretical-new stepsize uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LPlusSource {
    /// Exact value (least-squares problems only).
    Exact,
    /// `sqrt(max_j Σ_{i∈I_j} L_i²/n)`
    Col,
    /// `min{sqrt(c max L_i²/n), L̃}`
    Min,
}

impl fmt::Display for LPlusSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LPlusSource::Exact => "exact",
            LPlusSource::Col => "col",
            LPlusSource::Min => "min",
        })
    }
}

impl FromStr for LPlusSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "exact" => LPlusSource::Exact,
            "col" => LPlusSource::Col,
            "min" => LPlusSource::Min,
            _ => return Err(Error::Config(format!("unknown L_plus source '{s}'"))),
        })
    }
}

/// Initial estimators `g_i^0` for EF21.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum G0Init {
    Zero,
    ExactGradient,
}

impl fmt::Display for G0Init {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            G0Init::Zero => "g0-zero",
            G0Init::ExactGradient => "g0-exact",
        })
    }
}

impl FromStr for G0Init {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "g0-zero" | "zero" => G0Init::Zero,
            "g0-exact" | "g0-exact-gradient" | "exact" => G0Init::ExactGradient,
            _ => return Err(Error::Config(format!("unknown estimator init '{s}'"))),
        })
    }
}

/// Starting point `x^0`.
#[derive(Debug, Clone, PartialEq)]
pub enum X0Init<T> {
    Zero,
    /// `U[−1/sqrt(d), 1/sqrt(d)]` per coordinate, drawn from the run seed.
    Uniform,
    Point(Vec<T>),
}

impl<T: Scalar> X0Init<T> {
    pub fn materialize(&self, d: usize, seed: u64) -> Result<Vec<T>> {
        match self {
            X0Init::Zero => Ok(vec![T::zero(); d]),
            X0Init::Uniform => {
                let bound = (1.0 / d as f64).sqrt();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                Ok((0..d).map(|_| T::lit(rng.random_range(-bound..=bound))).collect())
            }
            X0Init::Point(p) if p.len() == d => Ok(p.clone()),
            X0Init::Point(p) => Err(Error::DimensionMismatch { expected: d, found: p.len() }),
        }
    }

    fn label(&self) -> &'static str {
        match self {
            X0Init::Zero => "zero",
            X0Init::Uniform => "uniform",
            X0Init::Point(_) => "point",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig<T> {
    pub method: Method,
    /// Number of rounds `T`.
    pub iterations: usize,
    pub gamma_rule: GammaRule<T>,
    pub k: usize,
    pub seed: u64,
    pub g0: G0Init,
    pub x0: X0Init<T>,
    pub l_plus: LPlusSource,
    /// Record inline inequality checks.
    pub checks: bool,
    pub record_iterates: bool,
    /// Feed this value to the adaptive rule instead of the realized `c^t`.
    pub forced_c_t: Option<T>,
    /// Multiplies the resolved stepsize; only useful for fault injection.
    pub gamma_scale: T,
}

impl<T: Scalar> Default for RunConfig<T> {
    fn default() -> Self {
        Self {
            method: Method::Ef21,
            iterations: 1000,
            gamma_rule: GammaRule::TheoreticalNew,
            k: 1,
            seed: 0,
            g0: G0Init::ExactGradient,
            x0: X0Init::Zero,
            l_plus: LPlusSource::Min,
            checks: true,
            record_iterates: false,
            forced_c_t: None,
            gamma_scale: T::one(),
        }
    }
}

impl<T: Scalar> RunConfig<T> {
    pub fn validate(&self, d: usize) -> Result<()> {
        TopK::new(self.k)?.check_dim(d)?;
        if let GammaRule::Explicit(g) = self.gamma_rule {
            if !(g > T::zero() && g.is_finite()) {
                return Err(Error::InvalidParameter(format!("explicit stepsize must be positive, got {g}")));
            }
        }
        if !(self.gamma_scale > T::zero() && self.gamma_scale.is_finite()) {
            return Err(Error::InvalidParameter(format!("gamma_scale must be positive, got {}", self.gamma_scale)));
        }
        let adaptive_rule = self.gamma_rule == GammaRule::Adaptive;
        if adaptive_rule != (self.method == Method::Ef21Adaptive) {
            return Err(Error::InvalidParameter("the adaptive stepsize rule goes with method ef21-adaptive only".into()));
        }
        Ok(())
    }

    /// Overrides fields from a config section; unknown keys are an error.
    pub fn from_section(section: Section) -> Result<Self> {
        let mut cfg = Self::default();
        let mut f = Fields::new(section);
        f.take_into("method", &mut cfg.method)?;
        f.take_into("iterations", &mut cfg.iterations)?;
        f.take_into("k", &mut cfg.k)?;
        f.take_into("seed", &mut cfg.seed)?;
        f.take_into("g0", &mut cfg.g0)?;
        f.take_into("l_plus", &mut cfg.l_plus)?;
        f.take_into("checks", &mut cfg.checks)?;
        f.take_into("record_iterates", &mut cfg.record_iterates)?;
        match f.take_str("gamma") {
            Some(g) => cfg.gamma_rule = g.parse()?,
            None if cfg.method == Method::Ef21Adaptive => cfg.gamma_rule = GammaRule::Adaptive,
            None => {}
        }
        if let Some(x0) = f.take_str("x0") {
            cfg.x0 = match x0.as_str() {
                "zero" => X0Init::Zero,
                "uniform" => X0Init::Uniform,
                _ => return Err(Error::Config(format!("unknown x0 '{x0}' (zero | uniform)"))),
            };
        }
        if let Some(c) = f.take::<f64>("forced_c_t")? {
            cfg.forced_c_t = Some(T::lit(c));
        }
        if let Some(s) = f.take::<f64>("gamma_scale")? {
            cfg.gamma_scale = T::lit(s);
        }
        f.finish()?;
        Ok(cfg)
    }

    pub fn to_section(&self) -> Section {
        let mut s: Section = [
            ("method", self.method.to_string()),
            ("iterations", self.iterations.to_string()),
            ("gamma", self.gamma_rule.to_string()),
            ("k", self.k.to_string()),
            ("seed", self.seed.to_string()),
            ("g0", self.g0.to_string()),
            ("x0", self.x0.label().to_string()),
            ("l_plus", self.l_plus.to_string()),
            ("checks", self.checks.to_string()),
            ("record_iterates", self.record_iterates.to_string()),
            ("gamma_scale", self.gamma_scale.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        if let Some(c) = self.forced_c_t {
            s.insert("forced_c_t".into(), c.to_string());
        }
        s
    }

    /// SHA-256 of the rendered configuration.
    pub fn hash(&self) -> String {
        metrics::sha256_hex(kv::render("run", &self.to_section()).as_bytes())
    }
}

/// The iterate and the local values and gradients evaluated there.
#[derive(Debug, Clone, PartialEq)]
pub struct Iterate<T> {
    pub x: Vec<T>,
    pub local_values: Vec<T>,
    pub local_grads: Vec<Vec<T>>,
    pub t: usize,
}

impl<T: Scalar> Iterate<T> {
    pub fn new(problem: &DistributedProblem<T>, x: Vec<T>) -> Result<Self> {
        if x.len() != problem.d() {
            return Err(Error::DimensionMismatch { expected: problem.d(), found: x.len() });
        }
        let mut it = Self { x, local_values: Vec::new(), local_grads: vec![vec![T::zero(); problem.d()]; problem.n()], t: 0 };
        it.evaluate(problem)?;
        Ok(it)
    }

    fn evaluate(&mut self, problem: &DistributedProblem<T>) -> Result<()> {
        self.local_values = problem.local_values_and_gradients(&self.x, &mut self.local_grads);
        if self.local_values.iter().any(|v| !v.is_finite()) || self.local_grads.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Diverged(format!("non-finite loss or gradient at t = {}", self.t)));
        }
        Ok(())
    }

    /// `x ← x − scale·dir`, then re-evaluates the clients.
    fn advance(&mut self, problem: &DistributedProblem<T>, scale: T, dir: &[T]) -> Result<()> {
        linalg::axpy(-scale, dir, &mut self.x);
        self.t += 1;
        if self.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged(format!("non-finite iterate at t = {}", self.t)));
        }
        let norm = linalg::norm_sq(&self.x).as_f64().sqrt();
        if norm > DIVERGENCE_NORM {
            return Err(Error::Diverged(format!("‖x‖ = {norm:e} exceeds {DIVERGENCE_NORM:e} at t = {}", self.t)));
        }
        self.evaluate(problem)
    }

    pub fn value(&self) -> T {
        mean_scalar(&self.local_values)
    }

    pub fn gradient(&self) -> Vec<T> {
        let mut g = vec![T::zero(); self.x.len()];
        linalg::mean_of(&self.local_grads, &mut g);
        g
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ef21State<T> {
    pub it: Iterate<T>,
    /// Client estimators `g_i`.
    pub g_i: Vec<Vec<T>>,
    /// `g = (1/n) Σ g_i`
    pub g: Vec<T>,
}

impl<T: Scalar> Ef21State<T> {
    pub fn new(problem: &DistributedProblem<T>, x0: Vec<T>, init: G0Init) -> Result<Self> {
        let it = Iterate::new(problem, x0)?;
        let g_i = match init {
            G0Init::Zero => vec![vec![T::zero(); problem.d()]; problem.n()],
            G0Init::ExactGradient => it.local_grads.clone(),
        };
        let mut g = vec![T::zero(); problem.d()];
        linalg::mean_of(&g_i, &mut g);
        Ok(Self { it, g_i, g })
    }

    /// Starts from given estimators.
    pub fn with_estimators(problem: &DistributedProblem<T>, x0: Vec<T>, g_i: Vec<Vec<T>>) -> Result<Self> {
        let it = Iterate::new(problem, x0)?;
        if g_i.len() != problem.n() || g_i.iter().any(|g| g.len() != problem.d()) {
            return Err(Error::DimensionMismatch { expected: problem.n(), found: g_i.len() });
        }
        let mut g = vec![T::zero(); problem.d()];
        linalg::mean_of(&g_i, &mut g);
        Ok(Self { it, g_i, g })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ef14State<T> {
    pub it: Iterate<T>,
    /// Error memories `e_i`, zero at start.
    pub e_i: Vec<Vec<T>>,
    v_i: Vec<Vec<T>>,
}

impl<T: Scalar> Ef14State<T> {
    pub fn new(problem: &DistributedProblem<T>, x0: Vec<T>) -> Result<Self> {
        let it = Iterate::new(problem, x0)?;
        let zeros = vec![vec![T::zero(); problem.d()]; problem.n()];
        Ok(Self { it, e_i: zeros.clone(), v_i: zeros })
    }

    /// Messages `v_i` sent in the last round.
    pub fn last_messages(&self) -> &[Vec<T>] {
        &self.v_i
    }
}

fn check_gamma<T: Scalar>(gamma: T) -> Result<()> {
    if !(gamma > T::zero() && gamma.is_finite()) {
        return Err(Error::InvalidParameter(format!("stepsize must be positive, got {gamma}")));
    }
    Ok(())
}

/// `x ← x − (γ/n) Σ ∇f_i(x)`
pub fn step_dgd<T: Scalar>(state: &mut Iterate<T>, problem: &DistributedProblem<T>, gamma: T) -> Result<()> {
    check_gamma(gamma)?;
    let g = state.gradient();
    state.advance(problem, gamma, &g)
}

/// `x ← x − (γ/n) Σ C(∇f_i(x))`
pub fn step_dcgd<T: Scalar>(state: &mut Iterate<T>, problem: &DistributedProblem<T>, spec: &TopK, gamma: T) -> Result<()> {
    check_gamma(gamma)?;
    spec.check_dim(problem.d())?;
    let compressed: Vec<Vec<T>> = state
        .local_grads
        .par_iter()
        .map(|g| {
            let mut out = vec![T::zero(); g.len()];
            spec.compress_into(g, &mut out);
            out
        })
        .collect();
    let mut dir = vec![T::zero(); problem.d()];
    linalg::mean_of(&compressed, &mut dir);
    state.advance(problem, gamma, &dir)
}

/// `v_i = C(e_i + γ∇f_i(x))`, `x ← x − (1/n) Σ v_i`, `e_i ← e_i + γ∇f_i(x) − v_i`.
pub fn step_ef14<T: Scalar>(state: &mut Ef14State<T>, problem: &DistributedProblem<T>, spec: &TopK, gamma: T) -> Result<()> {
    check_gamma(gamma)?;
    spec.check_dim(problem.d())?;
    state
        .e_i
        .par_iter_mut()
        .zip(state.v_i.par_iter_mut())
        .zip(state.it.local_grads.par_iter())
        .for_each(|((e, v), g)| {
            // e becomes e + γ∇f_i, v its compression, then e keeps the residual
            e.iter_mut().zip(g).for_each(|(ei, gi)| *ei += gamma * *gi);
            spec.compress_into(e, v);
            e.iter_mut().zip(v.iter()).for_each(|(ei, vi)| *ei -= *vi);
        });
    let mut dir = vec![T::zero(); problem.d()];
    linalg::mean_of(&state.v_i, &mut dir);
    state.it.advance(problem, T::one(), &dir)
}

/// `x ← x − γg`; then `g_i ← g_i + C(∇f_i(x_new) − g_i)` and `g = mean g_i`.
pub fn step_ef21<T: Scalar>(state: &mut Ef21State<T>, problem: &DistributedProblem<T>, spec: &TopK, gamma: T) -> Result<()> {
    check_gamma(gamma)?;
    spec.check_dim(problem.d())?;
    state.it.advance(problem, gamma, &state.g)?;
    let d = problem.d();
    state.g_i.par_iter_mut().zip(state.it.local_grads.par_iter()).for_each_init(
        || (vec![T::zero(); d], vec![T::zero(); d]),
        |(diff, comp), (gi, grad)| {
            diff.iter_mut().zip(grad).zip(gi.iter()).for_each(|((o, a), b)| *o = *a - *b);
            spec.compress_into(diff, comp);
            gi.iter_mut().zip(comp.iter()).for_each(|(o, c)| *o += *c);
        },
    );
    linalg::mean_of(&state.g_i, &mut state.g);
    Ok(())
}

/// Uplink bits of one round as `(floats only, floats + indices)`.
pub fn round_bits(method: Method, n: usize, d: usize, k: usize) -> (u64, u64) {
    let (n, d, k) = (n as u64, d as u64, k as u64);
    match method {
        Method::Dgd => (n * d * 32, n * d * 32),
        _ => {
            let index_bits = u64::from(usize::BITS - (d as usize).saturating_sub(1).leading_zeros());
            (n * k * 32, n * k * (32 + index_bits))
        }
    }
}

/// `min_i min(K, |J_i|)/|J_i|`
pub fn min_alpha<T: Scalar>(problem: &DistributedProblem<T>, k: usize) -> Result<T> {
    let mut alpha = T::one();
    for i in 0..problem.n() {
        alpha = alpha.min(alpha_for(k, problem.pattern.active_coords(i).len())?);
    }
    Ok(alpha)
}

/// Resolves every constant a run needs, including its fixed stepsize (for
/// adaptive runs: the standard EF21 stepsize, as a reference).
pub fn derive_constants<T: Scalar>(
    config: &RunConfig<T>,
    problem: &DistributedProblem<T>,
    report: &SmoothnessReport<T>,
) -> Result<RunConstants<T>> {
    let n = problem.n();
    let c = problem.pattern.c();
    let alpha = min_alpha(problem, config.k)?;
    let (theta, beta) = smoothness::theta_beta(alpha)?;
    let l_plus_step = match config.l_plus {
        LPlusSource::Exact => report
            .l_plus_exact
            .ok_or_else(|| Error::InvalidParameter("exact L_plus is only available for least-squares problems".into()))?,
        LPlusSource::Col => report.l_plus_bound_col,
        LPlusSource::Min => report.l_plus_bound_min,
    };
    let gamma = match (config.gamma_rule, config.method.is_ef21()) {
        (GammaRule::Explicit(g), _) => g,
        (_, false) => {
            if !(report.l > T::zero()) {
                return Err(Error::InvalidParameter(format!("L must be positive, got {}", report.l)));
            }
            T::one() / report.l
        }
        (GammaRule::TheoreticalNew, true) => smoothness::stepsize_theorem1(report.l, l_plus_step, c, n, alpha)?.gamma,
        (GammaRule::TheoreticalStandard | GammaRule::Adaptive, true) => {
            smoothness::standard_stepsize_ef21(report.l, report.l_tilde, alpha)?
        }
    } * config.gamma_scale;
    Ok(RunConstants {
        n,
        d: problem.d(),
        c,
        r: problem.pattern.r(),
        k: config.k,
        alpha,
        theta,
        beta,
        l: report.l,
        l_tilde: report.l_tilde,
        l_plus_step,
        l_plus_check: report.l_plus_best(),
        f_star: problem.f_star_hint.unwrap_or_else(T::zero),
        gamma,
    })
}

/// A run that could not finish.
#[derive(Debug)]
pub enum RunFailure<T> {
    Invalid(Error),
    /// Divergence; `trace` holds every record up to the last finite state.
    Diverged { reason: String, trace: Box<RunTrace<T>> },
}

impl<T> fmt::Display for RunFailure<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunFailure::Invalid(e) => write!(f, "{e}"),
            RunFailure::Diverged { reason, .. } => write!(f, "run diverged: {reason}"),
        }
    }
}

impl<T: fmt::Debug> std::error::Error for RunFailure<T> {}

impl<T> From<Error> for RunFailure<T> {
    fn from(e: Error) -> Self {
        RunFailure::Invalid(e)
    }
}

enum Engine<T> {
    Plain(Iterate<T>),
    Ef14(Ef14State<T>),
    Ef21(Ef21State<T>),
}

impl<T: Scalar> Engine<T> {
    fn iterate(&self) -> &Iterate<T> {
        match self {
            Engine::Plain(it) => it,
            Engine::Ef14(s) => &s.it,
            Engine::Ef21(s) => &s.it,
        }
    }
}

/// Quantities of the previous record needed by the recursion and descent checks.
struct Prev<T> {
    x: Vec<T>,
    f: T,
    g_err: T,
    psi: T,
    grad_sq: T,
    gamma: T,
}

/// Runs `config` on `problem`, computing the smoothness report first.
pub fn run<T: Scalar>(config: &RunConfig<T>, problem: &DistributedProblem<T>) -> Result<RunTrace<T>, RunFailure<T>> {
    let report = SmoothnessReport::analyze(problem)?;
    run_with_report(config, problem, &report)
}

/// Runs `config` on `problem` with a precomputed smoothness report.
pub fn run_with_report<T: Scalar>(
    config: &RunConfig<T>,
    problem: &DistributedProblem<T>,
    report: &SmoothnessReport<T>,
) -> Result<RunTrace<T>, RunFailure<T>> {
    config.validate(problem.d())?;
    let constants = derive_constants(config, problem, report)?;
    let spec = TopK::new(config.k)?;
    let (n, d) = (problem.n(), problem.d());
    let x0 = config.x0.materialize(d, config.seed)?;
    let mut engine = match config.method {
        Method::Dgd | Method::Dcgd => Engine::Plain(Iterate::new(problem, x0)?),
        Method::Ef14 => Engine::Ef14(Ef14State::new(problem, x0)?),
        Method::Ef21 | Method::Ef21Adaptive => Engine::Ef21(Ef21State::new(problem, x0, config.g0)?),
    };
    let meta = TraceMeta {
        method: config.method.to_string(),
        gamma_rule: config.gamma_rule.to_string(),
        init: config.g0.to_string(),
        iterations: config.iterations,
        seed: config.seed,
        config_hash: config.hash(),
        problem_hash: metrics::problem_hash(problem)?,
        problem_label: problem.label.clone(),
        constants: constants.clone(),
        smoothness: report.clone(),
        halted: None,
        checks: CheckSummary::default(),
    };
    let mut trace = RunTrace { meta, records: Vec::with_capacity(config.iterations + 1), iterates: Vec::new() };
    let (round_float, round_indexed) = round_bits(config.method, n, d, config.k);
    let nn = T::from_count(n);
    let c_over_n = T::from_count(constants.c) / nn;
    let lp2 = constants.l_plus_check * constants.l_plus_check;
    let mut prev: Option<Prev<T>> = None;
    let mut halted = None;

    for t in 0..=config.iterations {
        let it = engine.iterate();
        let f = it.value();
        let grad = it.gradient();
        let grad_sq = linalg::norm_sq(&grad);
        let (bits_float, bits_indexed) = (round_float * t as u64, round_indexed * t as u64);
        let mut rec = TraceRecord { t, f, grad_norm_sq: grad_sq, g_err: None, psi: None, gamma: constants.gamma, c_t: None, bits_float, bits_indexed };

        if let Engine::Ef21(state) = &engine {
            let g_err = mean_scalar(
                &state.g_i.iter().zip(&it.local_grads).map(|(g, h)| linalg::dist_sq(g, h)).collect::<Vec<_>>(),
            );
            let agg = linalg::dist_sq(&state.g, &grad);
            let c_t = match smoothness::adaptive_c_from_errors(agg, g_err, n) {
                Ok(c) => c,
                Err(_) => nn,
            };
            if config.method == Method::Ef21Adaptive {
                let c_used = config.forced_c_t.unwrap_or(c_t);
                let (gamma_t, _) = smoothness::adaptive_stepsize(c_used, report.l, &report.l_i, n, constants.alpha)?;
                rec.gamma = gamma_t * config.gamma_scale;
            }
            let psi = metrics::lyapunov(f, constants.f_star, rec.gamma, constants.c, constants.theta, n, g_err);
            rec.g_err = Some(g_err);
            rec.c_t = Some(c_t);
            rec.psi = Some(psi);

            if config.checks {
                let checks = &mut trace.meta.checks;
                checks.aggregation.record(t, agg.as_f64(), (c_over_n * g_err).as_f64(), metrics::ABS_TOL);
                let outside = (0..n).filter(|&i| !problem.pattern.lies_in_active(i, &state.g_i[i])).count();
                checks.subspace.record(t, outside as f64, 0.0, 0.0);
                if let Some(p) = &prev {
                    let step_sq = linalg::dist_sq(&it.x, &p.x);
                    let rhs = (T::one() - constants.theta) * p.g_err + constants.beta * lp2 * step_sq;
                    let scale = g_err.abs().max(rhs.abs()).as_f64();
                    checks.recursion.record(t, g_err.as_f64(), rhs.as_f64(), metrics::REL_TOL * scale);
                    if config.method == Method::Ef21 {
                        let rhs = p.psi - p.gamma / T::lit(2.0) * p.grad_sq;
                        let scale = [psi, p.psi, f, p.f].iter().map(|v| v.abs().as_f64()).fold(0.0, f64::max);
                        checks.lyapunov.record(t, psi.as_f64(), rhs.as_f64(), metrics::REL_TOL * scale);
                    }
                }
                prev = Some(Prev { x: it.x.clone(), f, g_err, psi, grad_sq, gamma: rec.gamma });
            }
        }
        if config.record_iterates {
            trace.iterates.push(it.x.clone());
        }
        let gamma = rec.gamma;
        trace.records.push(rec);
        if t == config.iterations {
            break;
        }
        let stepped = match &mut engine {
            Engine::Plain(it) if config.method == Method::Dgd => step_dgd(it, problem, gamma),
            Engine::Plain(it) => step_dcgd(it, problem, &spec, gamma),
            Engine::Ef14(s) => step_ef14(s, problem, &spec, gamma),
            Engine::Ef21(s) => step_ef21(s, problem, &spec, gamma),
        };
        match stepped {
            Ok(()) => {}
            Err(Error::Diverged(reason)) => {
                halted = Some(reason);
                break;
            }
            Err(e) => return Err(e.into()),
        }
    }

    if problem.f_star_hint.is_none() {
        // no known lower bound: shift Ψ by the best value seen
        let best = trace.records.iter().map(|r| r.f).fold(T::infinity(), T::min);
        for r in &mut trace.records {
            r.psi = r.psi.map(|p| p - best);
        }
        trace.meta.constants.f_star = best;
    }
    match halted {
        None => Ok(trace),
        Some(reason) => {
            log::warn!("{} halted: {reason}", config.method);
            trace.meta.halted = Some(reason.clone());
            Err(RunFailure::Diverged { reason, trace: Box::new(trace) })
        }
    }
}
