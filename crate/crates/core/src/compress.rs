//! Greedy Top-K sparsification.
//!
//! Keeps the `K` largest-magnitude coordinates and zeroes the rest. Ties in
//! magnitude go to the lower index, so the operator is deterministic and
//! idempotent. Magnitudes are compared exactly, with no tolerance.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dist_sq, norm_sq};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopK {
    k: usize,
}

impl TopK {
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidParameter("Top-K level must be at least 1".into()));
        }
        Ok(Self { k })
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.k
    }

    /// Fails when `K > d`.
    pub fn check_dim(&self, d: usize) -> Result<()> {
        if self.k > d {
            return Err(Error::InvalidParameter(format!("Top-K level {} exceeds dimension {d}", self.k)));
        }
        Ok(())
    }

    pub fn compress<T: Scalar>(&self, x: &[T]) -> Result<Vec<T>> {
        self.check_dim(x.len())?;
        let mut out = vec![T::zero(); x.len()];
        self.compress_into(x, &mut out);
        Ok(out)
    }

    /// Writes `Top-K(x)` into `out`. Requires `K ≤ x.len()`.
    pub fn compress_into<T: Scalar>(&self, x: &[T], out: &mut [T]) {
        debug_assert!(self.k <= x.len());
        out.iter_mut().for_each(|o| *o = T::zero());
        if self.k == 1 {
            let mut best = 0;
            for (j, v) in x.iter().enumerate().skip(1) {
                if v.abs() > x[best].abs() {
                    best = j;
                }
            }
            out[best] = x[best];
            return;
        }
        if self.k >= x.len() {
            out.copy_from_slice(x);
            return;
        }
        let mut order: Vec<usize> = (0..x.len()).collect();
        order.select_nth_unstable_by(self.k - 1, |&a, &b| by_magnitude(x, a, b));
        for &j in &order[..self.k] {
            out[j] = x[j];
        }
    }

    /// Applies the operator to `v` in place, using `scratch` (len `d`).
    pub fn compress_in_place<T: Scalar>(&self, v: &mut [T], scratch: &mut [T]) {
        self.compress_into(v, scratch);
        v.copy_from_slice(scratch);
    }

    /// `α = min(K, s)/s` for an active set of size `s`.
    pub fn alpha_for<T: Scalar>(&self, s: usize) -> Result<T> {
        alpha_for(self.k, s)
    }
}

// larger magnitude first, then lower index
#[inline]
fn by_magnitude<T: Scalar>(x: &[T], a: usize, b: usize) -> Ordering {
    x[b].abs().partial_cmp(&x[a].abs()).unwrap_or(Ordering::Equal).then(a.cmp(&b))
}

/// Free-function form of [`TopK::compress`].
pub fn topk_compress<T: Scalar>(spec: &TopK, x: &[T]) -> Result<Vec<T>> {
    spec.compress(x)
}

/// `min(K, s)/s`, the contraction parameter of Top-K on an active subspace of
/// dimension `s`.
pub fn alpha_for<T: Scalar>(k: usize, s: usize) -> Result<T> {
    if s == 0 {
        return Err(Error::InvalidParameter("active set size must be at least 1".into()));
    }
    Ok(T::from_count(k.min(s)) / T::from_count(s))
}

/// Realized contraction `‖C(x) − x‖² / ‖x‖²` (zero for `x = 0`), where `x`
/// lives on an active subspace of size `active_size`. Bounded by
/// `1 − min(K, s)/s`.
pub fn contraction_factor<T: Scalar>(spec: &TopK, x: &[T], active_size: usize) -> Result<T> {
    debug_assert!(x.iter().filter(|v| !v.is_zero()).count() <= active_size);
    let nx = norm_sq(x);
    if nx.is_zero() {
        return Ok(T::zero());
    }
    let cx = spec.compress(x)?;
    Ok(dist_sq(&cx, x) / nx)
}
