//! Smoothness constants and stepsize rules.
//!
//! Covers `L`, `L_i`, the quadratic mean `L̃`, the average-smoothness
//! constant `L₊` (exact for least squares, plus the two sparsity-aware upper
//! bounds), the contraction-derived `θ` and `β`, the fixed stepsizes of the
//! standard and the sparsity-refined EF21 analyses, the communication
//! objective `ξ(α)`, and the adaptive `c^t` / `γ^t` rules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, DenseMatrix};
use crate::problem::{DistributedProblem, SparsityPattern};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SmoothnessReport<T> {
    #[serde(rename = "L")]
    pub l: T,
    #[serde(rename = "L_i")]
    pub l_i: Vec<T>,
    #[serde(rename = "L_tilde")]
    pub l_tilde: T,
    #[serde(rename = "L_plus_exact")]
    pub l_plus_exact: Option<T>,
    #[serde(rename = "L_plus_bound_col")]
    pub l_plus_bound_col: T,
    #[serde(rename = "L_plus_bound_min")]
    pub l_plus_bound_min: T,
}

impl<T: Scalar> SmoothnessReport<T> {
    /// Computes every constant of `problem`. The exact `L₊` is only available
    /// when every client is an unregularized least-squares loss.
    pub fn analyze(problem: &DistributedProblem<T>) -> Result<Self> {
        let l_i = problem.client_smoothness();
        let (col, min) = l_plus_bounds(&l_i, &problem.pattern)?;
        let exact = match problem.quadratic_data() {
            Some(data) => Some(exact_l_plus_quadratic(&data, problem.d())?),
            None => None,
        };
        Ok(Self { l: problem.smoothness, l_tilde: l_tilde(&l_i), l_i, l_plus_exact: exact, l_plus_bound_col: col, l_plus_bound_min: min })
    }

    /// Tightest valid `L₊` available.
    pub fn l_plus_best(&self) -> T {
        self.l_plus_exact.unwrap_or(self.l_plus_bound_col)
    }

    pub fn max_l_i(&self) -> T {
        max_of(&self.l_i)
    }
}

fn max_of<T: Scalar>(v: &[T]) -> T {
    v.iter().copied().fold(T::zero(), T::max)
}

/// `L̃ = sqrt((1/n) Σ L_i²)`
pub fn l_tilde<T: Scalar>(l_i: &[T]) -> T {
    let mut acc = T::zero();
    for l in l_i {
        acc += *l * *l;
    }
    (acc / T::from_count(l_i.len())).sqrt()
}

/// Sparsity-aware upper bounds on `L₊`:
/// `col = sqrt(max_j Σ_{i∈I_j} L_i² / n)` and
/// `min = min{ sqrt(c·max_i L_i²/n), L̃ }`, with `col ≤ min`.
pub fn l_plus_bounds<T: Scalar>(l_i: &[T], pattern: &SparsityPattern) -> Result<(T, T)> {
    if l_i.len() != pattern.n() {
        return Err(Error::DimensionMismatch { expected: pattern.n(), found: l_i.len() });
    }
    if l_i.iter().any(|l| *l < T::zero() || !l.is_finite()) {
        return Err(Error::InvalidParameter("smoothness constants must be finite and non-negative".into()));
    }
    let n = T::from_count(pattern.n());
    let mut col_sums = vec![T::zero(); pattern.d()];
    for (i, l) in l_i.iter().enumerate() {
        let sq = *l * *l;
        for &j in pattern.active_coords(i) {
            col_sums[j] += sq;
        }
    }
    let col = (max_of(&col_sums) / n).sqrt();
    let max_sq = max_of(l_i).powi(2);
    let by_c = (T::from_count(pattern.c()) * max_sq / n).sqrt();
    Ok((col, by_c.min(l_tilde(l_i))))
}

/// Exact `L₊` for least-squares clients `f_i = (1/m_i)‖A_i x_{J_i} − b_i‖²`:
/// the square root of `(1/n) λ_max(Σ H_i²)` with `H_i = (2/m_i) A_iᵀA_i`,
/// i.e. `(4/(m²n)) λ_max(Σ (A_iᵀA_i)²)` when all `m_i = m`.
pub fn exact_l_plus_quadratic<T: Scalar>(clients: &[(&DenseMatrix<T>, &[usize])], d: usize) -> Result<T> {
    if clients.is_empty() {
        return Err(Error::NoClients);
    }
    for (a, coords) in clients {
        if a.cols() != coords.len() {
            return Err(Error::DimensionMismatch { expected: coords.len(), found: a.cols() });
        }
        if coords.iter().any(|&j| j >= d) {
            return Err(Error::DimensionMismatch { expected: d, found: coords.iter().max().map_or(0, |j| j + 1) });
        }
    }
    let n = T::from_count(clients.len());
    let top = linalg::power_iteration(
        d,
        |v: &[T], out: &mut [T]| {
            out.iter_mut().for_each(|o| *o = T::zero());
            for (a, coords) in clients {
                let scale = T::lit(2.0) / T::from_count(a.rows());
                let mut w: Vec<T> = coords.iter().map(|&j| v[j]).collect();
                let mut av = vec![T::zero(); a.rows()];
                // apply H twice
                for _ in 0..2 {
                    a.matvec(&w, &mut av);
                    a.matvec_t(&av, &mut w);
                    w.iter_mut().for_each(|x| *x *= scale);
                }
                for (k, &j) in coords.iter().enumerate() {
                    out[j] += w[k];
                }
            }
        },
        0x5_EED1,
        linalg::POWER_ITER_TOL,
        linalg::POWER_ITER_CAP,
    )?;
    Ok((top / n).sqrt())
}

/// Contraction-derived constants plus the chosen stepsize.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct StepsizeParams<T> {
    pub alpha: T,
    /// `1 − sqrt(1 − α)`
    pub theta: T,
    /// `(1 − α)/(1 − sqrt(1 − α))`
    pub beta: T,
    pub gamma: T,
}

fn check_alpha<T: Scalar>(alpha: T) -> Result<()> {
    if !(alpha > T::zero() && alpha <= T::one()) {
        return Err(Error::InvalidParameter(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    Ok(())
}

/// `(θ, β)` for a contraction parameter `α ∈ (0, 1]`.
pub fn theta_beta<T: Scalar>(alpha: T) -> Result<(T, T)> {
    check_alpha(alpha)?;
    let root = (T::one() - alpha).sqrt();
    let theta = T::one() - root;
    Ok((theta, (T::one() - alpha) / theta))
}

/// `sqrt(β/θ)` evaluated through the closed form `(sqrt(1−α) + 1 − α)/α`.
pub fn sqrt_beta_over_theta<T: Scalar>(alpha: T) -> Result<T> {
    check_alpha(alpha)?;
    let one_minus = T::one() - alpha;
    Ok((one_minus.sqrt() + one_minus) / alpha)
}

/// Largest stepsize of the sparsity-refined analysis:
/// `γ = 1/(L + L₊ sqrt(βc/(θn)))`.
pub fn stepsize_theorem1<T: Scalar>(l: T, l_plus: T, c: usize, n: usize, alpha: T) -> Result<StepsizeParams<T>> {
    if !(l > T::zero()) {
        return Err(Error::InvalidParameter(format!("L must be positive, got {l}")));
    }
    if l_plus < T::zero() {
        return Err(Error::InvalidParameter(format!("L_plus must be non-negative, got {l_plus}")));
    }
    if c == 0 || c > n {
        return Err(Error::InvalidParameter(format!("c must satisfy 1 <= c <= n, got c={c}, n={n}")));
    }
    let (theta, beta) = theta_beta(alpha)?;
    let ratio = (T::from_count(c) / T::from_count(n)).sqrt();
    let gamma = T::one() / (l + l_plus * ratio * sqrt_beta_over_theta(alpha)?);
    Ok(StepsizeParams { alpha, theta, beta, gamma })
}

/// Stepsize of the standard EF21 analysis: `1/(L + L̃ sqrt(β/θ))`.
pub fn standard_stepsize_ef21<T: Scalar>(l: T, l_tilde: T, alpha: T) -> Result<T> {
    if !(l > T::zero()) {
        return Err(Error::InvalidParameter(format!("L must be positive, got {l}")));
    }
    Ok(T::one() / (l + l_tilde * sqrt_beta_over_theta(alpha)?))
}

/// `ξ(α) = (L + L̃((1 + sqrt(1−α))/α − 1))·α`, the per-client communication
/// cost of the standard EF21 bound as a function of the contraction level.
pub fn xi_complexity<T: Scalar>(alpha: T, l: T, l_tilde: T) -> T {
    let root = (T::one() - alpha).sqrt();
    (l + l_tilde * ((T::one() + root) / alpha - T::one())) * alpha
}

/// `c^t = n ‖g^t − ∇f(x^t)‖² / G^t`, clamped to `[0, n]`; zero when both the
/// numerator and `G^t` vanish.
pub fn adaptive_c_t<T: Scalar>(g_agg: &[T], grad_f: &[T], g_t: T, n: usize) -> Result<T> {
    if g_agg.len() != grad_f.len() {
        return Err(Error::DimensionMismatch { expected: grad_f.len(), found: g_agg.len() });
    }
    if g_t < T::zero() {
        return Err(Error::InvalidParameter(format!("G^t must be non-negative, got {g_t}")));
    }
    let err = linalg::dist_sq(g_agg, grad_f);
    adaptive_c_from_errors(err, g_t, n)
}

/// [`adaptive_c_t`] from the already computed `‖g^t − ∇f(x^t)‖²`.
pub fn adaptive_c_from_errors<T: Scalar>(agg_err: T, g_t: T, n: usize) -> Result<T> {
    let nn = T::from_count(n);
    if g_t.is_zero() {
        if agg_err.is_zero() {
            return Ok(T::zero());
        }
        return Err(Error::Verification(format!("G^t = 0 but aggregate error is {agg_err:e}")));
    }
    Ok((nn * agg_err / g_t).max(T::zero()).min(nn))
}

/// Adaptive stepsize: `L₊^t = min{ sqrt(c^t max L_i²/n), L̃ }` and
/// `γ^t = 1/(L + L₊^t sqrt(c^t/n) sqrt(β/θ))`. Returns `(γ^t, L₊^t)`.
pub fn adaptive_stepsize<T: Scalar>(c_t: T, l: T, l_i: &[T], n: usize, alpha: T) -> Result<(T, T)> {
    let nn = T::from_count(n);
    if !(c_t >= T::zero() && c_t <= nn) {
        return Err(Error::InvalidParameter(format!("c^t must lie in [0, n], got {c_t}")));
    }
    let frac = c_t / nn;
    let max_sq = max_of(l_i).powi(2);
    let lt = l_tilde(l_i);
    // at c^t = n the min is L̃ exactly; skip the sqrt so rounding cannot pick the other branch
    let l_plus_t = if c_t >= nn { lt } else { (frac * max_sq).sqrt().min(lt) };
    let gamma = T::one() / (l + l_plus_t * frac.sqrt() * sqrt_beta_over_theta(alpha)?);
    Ok((gamma, l_plus_t))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn identity_matrix_l_plus() {
        // one row: H = 2, so L₊ = 2
        let one = DenseMatrix::<f64>::identity(1);
        let lp = exact_l_plus_quadratic(&[(&one, &[0usize][..])], 1).unwrap();
        assert!(close(lp, 2.0, 1e-9));
        // I_3 has m = 3 rows: H = (2/3) I
        let eye = DenseMatrix::<f64>::identity(3);
        let coords = [0usize, 1, 2];
        let lp = exact_l_plus_quadratic(&[(&eye, &coords[..])], 3).unwrap();
        assert!(close(lp, 2.0 / 3.0, 1e-9));
    }

    #[test]
    fn zero_matrices_give_zero() {
        let z = DenseMatrix::<f64>::zeros(2, 2);
        let coords = [0usize, 1];
        let lp = exact_l_plus_quadratic(&[(&z, &coords[..]), (&z, &coords[..])], 2).unwrap();
        assert_eq!(lp, 0.0);
    }

    #[test]
    fn column_bound_examples() {
        // n=2, L=(3,4), I_1={1}, I_2={1,2}
        let p = SparsityPattern::from_rows(2, vec![vec![0, 1], vec![1]]).unwrap();
        let (col, min) = l_plus_bounds(&[3.0, 4.0], &p).unwrap();
        assert!(close(col, 12.5f64.sqrt(), 1e-15));
        assert!(col <= min);
        // c=1, equal L_i = 5: col = 5/sqrt(n)
        let sep = SparsityPattern::from_rows(3, vec![vec![0], vec![1], vec![2]]).unwrap();
        let (col, _) = l_plus_bounds(&[5.0, 5.0, 5.0], &sep).unwrap();
        assert!(close(col, 5.0 / 3f64.sqrt(), 1e-15));
        // dense, equal L_i: col = L̃
        let dense = SparsityPattern::from_rows(2, vec![vec![0, 1]; 4]).unwrap();
        let (col, min) = l_plus_bounds(&[2.0; 4], &dense).unwrap();
        assert!(close(col, 2.0, 1e-15));
        assert!(close(min, 2.0, 1e-15));
        assert!(l_plus_bounds(&[1.0], &dense).is_err());
    }

    #[test]
    fn alpha_one_recovers_gd_stepsize() {
        let p = stepsize_theorem1(2.0, 5.0, 3, 7, 1.0).unwrap();
        assert_eq!(p.theta, 1.0);
        assert_eq!(p.beta, 0.0);
        assert_eq!(p.gamma, 0.5);
        assert_eq!(standard_stepsize_ef21(2.0, 5.0, 1.0).unwrap(), 0.5);
    }

    #[test]
    fn three_quarters_alpha() {
        // θ = β = 1/2, sqrt(β/θ) = 1
        let (theta, beta) = theta_beta(0.75).unwrap();
        assert!(close(theta, 0.5, 1e-15) && close(beta, 0.5, 1e-15));
        let p = stepsize_theorem1(1.0, 2.0, 1, 4, 0.75).unwrap();
        assert!(close(p.gamma, 1.0 / (1.0 + 2.0 * 0.5), 1e-15));
        assert!(close(standard_stepsize_ef21(1.0, 1.0, 0.75).unwrap(), 0.5, 1e-15));
    }

    #[test]
    fn dense_case_matches_standard() {
        let a = stepsize_theorem1(1.3, 4.1, 9, 9, 0.1).unwrap().gamma;
        let b = standard_stepsize_ef21(1.3, 4.1, 0.1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn stepsize_rejects_bad_alpha() {
        assert!(stepsize_theorem1(1.0, 1.0, 1, 1, 0.0).is_err());
        assert!(stepsize_theorem1(1.0, 1.0, 1, 1, 1.5).is_err());
        assert!(stepsize_theorem1(1.0, 1.0, 3, 2, 0.5).is_err());
    }

    #[test]
    fn xi_examples() {
        assert!(close(xi_complexity(1.0, 3.0, 5.0), 3.0, 1e-15));
        // L = L̃ = 1 at α = 3/4: (1 + ((1 + 1/2)/(3/4) − 1))·3/4 = 2·3/4
        assert!(close(xi_complexity(0.75, 1.0, 1.0), 1.5, 1e-15));
    }

    #[test]
    fn adaptive_c_examples() {
        assert_eq!(adaptive_c_t(&[1.0, 2.0], &[1.0, 2.0], 0.0, 3).unwrap(), 0.0);
        assert!(adaptive_c_t(&[1.0, 2.0], &[1.0, 3.0], 0.0, 3).is_err());
        // n=1: numerator equals G
        assert_eq!(adaptive_c_t(&[1.0, 5.0], &[4.0, 1.0], 25.0, 1).unwrap(), 1.0);
        // two orthogonal errors of unit norm: ‖(u1+u2)/2‖² = 1/2, G = 1
        assert!(close(adaptive_c_t(&[0.5, 0.5], &[0.0, 0.0], 1.0, 2).unwrap(), 1.0, 1e-15));
    }

    #[test]
    fn adaptive_stepsize_limits() {
        let l_i = [3.0, 1.0, 2.0];
        let (g0, _) = adaptive_stepsize(0.0, 2.0, &l_i, 3, 0.2).unwrap();
        assert_eq!(g0, 0.5);
        let (gn, lp) = adaptive_stepsize(3.0, 2.0, &l_i, 3, 0.2).unwrap();
        assert_eq!(lp, l_tilde(&l_i));
        assert_eq!(gn, standard_stepsize_ef21(2.0, l_tilde(&l_i), 0.2).unwrap());
        assert!(adaptive_stepsize(3.5, 2.0, &l_i, 3, 0.2).is_err());
    }

    #[test]
    fn report_json_field_names() {
        let r = SmoothnessReport { l: 1.0, l_i: vec![1.0], l_tilde: 1.0, l_plus_exact: None, l_plus_bound_col: 1.0, l_plus_bound_min: 1.0 };
        let s = serde_json::to_string(&r).unwrap();
        for key in ["\"L\"", "\"L_i\"", "\"L_tilde\"", "\"L_plus_exact\"", "\"L_plus_bound_col\"", "\"L_plus_bound_min\""] {
            assert!(s.contains(key), "{s}");
        }
    }
}
