//! Synthetic sparse least-squares problems with controlled `c/n` and spectrum.
//!
//! A column-wise random 0/1 matrix `S` fixes which clients see which
//! features (exactly `c` clients per feature). Client `i` then gets
//! `A_i ∈ ℝ^{m×|J_i|}` whose Hessian `(2/m)A_iᵀA_i` has a prescribed spectrum,
//! and `b_i = A_i x_sol + noise`.
//!
//! The spectrum is interpolated eigenvalue-by-eigenvalue by `v`:
//! `v = 0` gives every client a uniform spectrum topping out at `L_c`;
//! `v = 1` gives client 0 a single eigenvalue `peak` and every other client a
//! zero matrix.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kv::{Fields, Section};
use crate::linalg::{self, DenseMatrix};
use crate::problem::{ClientObjective, DistributedProblem, SparsityPattern};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n: usize,
    pub d: usize,
    pub m: usize,
    pub c_over_n: f64,
    pub v: f64,
    /// Noise scale; `b_i` gets `U[−1, 1]·p` added per entry.
    pub p: f64,
    pub l_c: f64,
    pub spectrum_lo: f64,
    pub spectrum_hi: f64,
    /// Single eigenvalue of client 0 at `v = 1`.
    pub peak: f64,
    pub seed: u64,
    pub attempts: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n: 100,
            d: 500,
            m: 12,
            c_over_n: 0.05,
            v: 0.1,
            p: 2.0,
            l_c: 20.0,
            spectrum_lo: 1.0,
            spectrum_hi: 20.0,
            peak: 10.0,
            seed: 0,
            attempts: 5,
        }
    }
}

impl SynthConfig {
    /// `round(c_over_n · n)`, validated to lie in `[1, n]`.
    pub fn c(&self) -> Result<usize> {
        if !(self.c_over_n > 0.0 && self.c_over_n <= 1.0) {
            return Err(Error::InvalidParameter(format!("c_over_n must lie in (0, 1], got {}", self.c_over_n)));
        }
        let c = (self.c_over_n * self.n as f64).round() as usize;
        if c == 0 {
            return Err(Error::InvalidParameter(format!("c_over_n = {} rounds to c = 0 for n = {}", self.c_over_n, self.n)));
        }
        Ok(c.min(self.n))
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.d == 0 || self.m == 0 {
            return Err(Error::InvalidParameter("n, d and m must be at least 1".into()));
        }
        self.c()?;
        if !(0.0..=1.0).contains(&self.v) {
            return Err(Error::InvalidParameter(format!("v must lie in [0, 1], got {}", self.v)));
        }
        if !(self.p >= 0.0) || !(self.l_c >= 0.0) || !(self.peak >= 0.0) {
            return Err(Error::InvalidParameter("p, l_c and peak must be non-negative".into()));
        }
        if !(self.spectrum_lo >= 0.0 && self.spectrum_hi > 0.0 && self.spectrum_lo <= self.spectrum_hi) {
            return Err(Error::InvalidParameter("spectrum range must satisfy 0 <= lo <= hi, hi > 0".into()));
        }
        if self.attempts == 0 {
            return Err(Error::InvalidParameter("attempts must be at least 1".into()));
        }
        Ok(())
    }

    /// Overrides fields from a config section; unknown keys are an error.
    pub fn from_section(section: Section) -> Result<Self> {
        let mut cfg = Self::default();
        let mut f = Fields::new(section);
        f.take_into("n", &mut cfg.n)?;
        f.take_into("d", &mut cfg.d)?;
        f.take_into("m", &mut cfg.m)?;
        f.take_into("c_over_n", &mut cfg.c_over_n)?;
        f.take_into("v", &mut cfg.v)?;
        f.take_into("p", &mut cfg.p)?;
        f.take_into("l_c", &mut cfg.l_c)?;
        f.take_into("spectrum_lo", &mut cfg.spectrum_lo)?;
        f.take_into("spectrum_hi", &mut cfg.spectrum_hi)?;
        f.take_into("peak", &mut cfg.peak)?;
        f.take_into("seed", &mut cfg.seed)?;
        f.take_into("attempts", &mut cfg.attempts)?;
        f.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_section(&self) -> Section {
        [
            ("n", self.n.to_string()),
            ("d", self.d.to_string()),
            ("m", self.m.to_string()),
            ("c_over_n", self.c_over_n.to_string()),
            ("v", self.v.to_string()),
            ("p", self.p.to_string()),
            ("l_c", self.l_c.to_string()),
            ("spectrum_lo", self.spectrum_lo.to_string()),
            ("spectrum_hi", self.spectrum_hi.to_string()),
            ("peak", self.peak.to_string()),
            ("seed", self.seed.to_string()),
            ("attempts", self.attempts.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

/// Draws `S` column by column, `c` ones per column at uniformly random rows.
/// Redraws when some client ends up with no feature; fails after
/// `config.attempts` draws.
pub fn generate_sparsity_matrix<R: Rng>(config: &SynthConfig, rng: &mut R) -> Result<SparsityPattern> {
    config.validate()?;
    let c = config.c()?;
    for attempt in 0..config.attempts {
        let mut rows = vec![Vec::new(); config.n];
        for j in 0..config.d {
            for i in sample(rng, config.n, c) {
                rows[i].push(j);
            }
        }
        if rows.iter().all(|r| !r.is_empty()) {
            return SparsityPattern::from_rows(config.d, rows);
        }
        log::debug!("sparsity draw {} left a client without features", attempt + 1);
    }
    Err(Error::GenerationFailed { attempts: config.attempts })
}

/// Target Hessian spectrum (descending, length `r`) for the client at
/// position `rank`.
pub fn target_spectrum(config: &SynthConfig, rank: usize, r: usize) -> Vec<f64> {
    let mut uniform = linalg::linspace(config.spectrum_lo, config.spectrum_hi, r);
    uniform.reverse();
    let scale = config.l_c / config.spectrum_hi;
    uniform.iter_mut().for_each(|u| *u *= scale);
    let mut degenerate = vec![0.0; r];
    if rank == 0 {
        degenerate[0] = config.peak;
    }
    uniform.iter().zip(&degenerate).map(|(u, e)| (1.0 - config.v) * u + config.v * e).collect()
}

/// Builds client `rank` on the coordinates `coords`, with `b_i` planted from
/// `x_solution`.
pub fn generate_client_quadratic<T: Scalar, R: Rng>(
    config: &SynthConfig,
    coords: &[usize],
    rank: usize,
    x_solution: &[T],
    rng: &mut R,
) -> Result<ClientObjective<T>> {
    let s = coords.len();
    if s == 0 {
        return Err(Error::EmptyActiveSet { client: rank });
    }
    let m = config.m;
    let r = m.min(s);
    let spectrum = target_spectrum(config, rank, r);
    let u: DenseMatrix<T> = linalg::random_orthonormal(rng, m, r);
    let v: DenseMatrix<T> = linalg::random_orthonormal(rng, s, r);
    let mut a = DenseMatrix::<T>::zeros(m, s);
    for (k, lam) in spectrum.iter().enumerate() {
        let sigma = T::lit((m as f64 * lam / 2.0).sqrt());
        for row in 0..m {
            let ur = u[(row, k)] * sigma;
            for col in 0..s {
                a[(row, col)] += ur * v[(col, k)];
            }
        }
    }
    let xj: Vec<T> = coords.iter().map(|&j| x_solution[j]).collect();
    let mut b = vec![T::zero(); m];
    a.matvec(&xj, &mut b);
    for bi in b.iter_mut() {
        *bi += T::lit(rng.random_range(-1.0..=1.0) * config.p);
    }
    ClientObjective::least_squares(rank, config.d, coords.to_vec(), a, b)
}

/// Full generator: pattern, clients, planted solution and `f*` (minimum of
/// the quadratic by conjugate gradients on the normal equations).
pub fn generate<T: Scalar>(config: &SynthConfig) -> Result<DistributedProblem<T>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let pattern = generate_sparsity_matrix(config, &mut rng)?;
    let x_solution: Vec<T> = (0..config.d).map(|_| T::lit(rng.random_range(-1.0..=1.0))).collect();
    let clients = (0..config.n)
        .map(|i| generate_client_quadratic(config, pattern.active_coords(i), i, &x_solution, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let label = format!(
        "synth(n={},d={},m={},c/n={},v={},p={},seed={})",
        config.n, config.d, config.m, config.c_over_n, config.v, config.p, config.seed
    );
    let mut problem = DistributedProblem::new(clients, label)?;
    let x_min = quadratic_minimizer(&problem)?;
    problem.f_star_hint = Some(problem.value(&x_min)?);
    problem.solution = Some(x_solution);
    Ok(problem)
}

/// Minimizer of an unregularized least-squares problem (minimum-norm when the
/// Hessian is singular).
pub fn quadratic_minimizer<T: Scalar>(problem: &DistributedProblem<T>) -> Result<Vec<T>> {
    if problem.quadratic_data().is_none() {
        return Err(Error::InvalidParameter("problem is not a pure least-squares instance".into()));
    }
    let d = problem.d();
    let zero = vec![T::zero(); d];
    let g0 = problem.full_gradient(&zero)?;
    let rhs: Vec<T> = g0.iter().map(|v| -*v).collect();
    // for a quadratic, H v = ∇f(v) − ∇f(0)
    let x = linalg::conjugate_gradient(
        d,
        |v: &[T], out: &mut [T]| {
            let g = problem.full_gradient(v).expect("dimension checked");
            for ((o, gi), g0i) in out.iter_mut().zip(&g).zip(&g0) {
                *o = *gi - *g0i;
            }
        },
        &rhs,
        1e-13,
        20 * d,
    );
    Ok(x)
}

/// Adds `λ Σ_{j∈J_i} x_j²/(x_j²+1)` to every client and recomputes `L`.
/// The data losses are non-negative and so is the regularizer, so `f* ≥ 0`
/// becomes the lower bound used for `Ψ`.
pub fn add_nonconvex_regularizer<T: Scalar>(problem: DistributedProblem<T>, lambda: T) -> Result<DistributedProblem<T>> {
    if lambda < T::zero() {
        return Err(Error::InvalidParameter(format!("regularizer weight must be non-negative, got {lambda}")));
    }
    let label = format!("{}+reg({lambda})", problem.label);
    let solution = problem.solution;
    let clients = problem.clients.into_iter().map(|c| c.with_regularizer(lambda)).collect();
    let mut out = DistributedProblem::new(clients, label)?;
    out.f_star_hint = Some(T::zero());
    out.solution = solution;
    Ok(out)
}

/// `3 · max_i L_i`
pub fn default_regularizer_weight<T: Scalar>(problem: &DistributedProblem<T>) -> T {
    T::lit(3.0) * problem.client_smoothness().into_iter().fold(T::zero(), T::max)
}
