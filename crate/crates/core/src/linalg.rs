//! Small dense linear algebra: vector kernels, a row-major matrix, power
//! iteration for the top eigenvalue of a symmetric PSD operator, and
//! conjugate gradients for PSD systems.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::Error;
use crate::scalar::Scalar;

/// Iteration cap for [`power_iteration`].
pub const POWER_ITER_CAP: usize = 100_000;
/// Relative Rayleigh-quotient tolerance for [`power_iteration`].
pub const POWER_ITER_TOL: f64 = 1e-10;

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = T::zero();
    for (x, y) in a.iter().zip(b) {
        acc += *x * *y;
    }
    acc
}

#[inline]
pub fn norm_sq<T: Scalar>(a: &[T]) -> T {
    dot(a, a)
}

/// `‖a − b‖²`
#[inline]
pub fn dist_sq<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = T::zero();
    for (x, y) in a.iter().zip(b) {
        let d = *x - *y;
        acc += d * d;
    }
    acc
}

/// `y += a·x`
#[inline]
pub fn axpy<T: Scalar>(a: T, x: &[T], y: &mut [T]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * *xi;
    }
}

/// Mean of equally sized vectors, summed in slice order and divided by the count.
pub fn mean_of<T: Scalar, V: AsRef<[T]>>(vectors: &[V], out: &mut [T]) {
    out.iter_mut().for_each(|v| *v = T::zero());
    for v in vectors {
        for (o, x) in out.iter_mut().zip(v.as_ref()) {
            *o += *x;
        }
    }
    let n = T::from_count(vectors.len());
    out.iter_mut().for_each(|v| *v /= n);
}

/// `n` evenly spaced points from `lo` to `hi`, inclusive. A single point is `hi`.
pub fn linspace<T: Scalar>(lo: T, hi: T, n: usize) -> Vec<T> {
    match n {
        0 => Vec::new(),
        1 => vec![hi],
        _ => {
            let step = (hi - lo) / T::from_count(n - 1);
            (0..n)
                .map(|k| if k == n - 1 { hi } else { lo + step * T::from_count(k) })
                .collect()
        }
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> DenseMatrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self, Error> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::DimensionMismatch { expected: cols, found: rows.iter().map(Vec::len).find(|&l| l != cols).unwrap_or(0) });
        }
        Ok(Self { rows: rows.len(), cols, data: rows.iter().flatten().copied().collect() })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<T>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    /// `out = M·x`
    pub fn matvec(&self, x: &[T], out: &mut [T]) {
        debug_assert_eq!(x.len(), self.cols);
        for (i, o) in out.iter_mut().enumerate().take(self.rows) {
            *o = dot(self.row(i), x);
        }
    }

    /// `out = Mᵀ·y`
    pub fn matvec_t(&self, y: &[T], out: &mut [T]) {
        debug_assert_eq!(y.len(), self.rows);
        out.iter_mut().for_each(|v| *v = T::zero());
        for (i, yi) in y.iter().enumerate() {
            axpy(*yi, self.row(i), out);
        }
    }

    pub fn scale(&mut self, s: T) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    /// `self · other`
    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows);
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(j, i)] = self[(i, j)];
            }
        }
        out
    }
}

impl<T> std::ops::Index<(usize, usize)> for DenseMatrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for DenseMatrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

// Serialized as nested arrays, one inner array per row.
impl<T: Scalar> Serialize for DenseMatrix<T> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_rows().serialize(s)
    }
}

impl<'de, T: Scalar> Deserialize<'de> for DenseMatrix<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let rows = Vec::<Vec<T>>::deserialize(d)?;
        DenseMatrix::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

/// Largest eigenvalue of the symmetric PSD operator `apply` on `ℝ^dim`.
///
/// Starts from a seeded random unit vector and stops once the Rayleigh
/// quotient changes by at most `tol` relative. A zero operator yields 0.
pub fn power_iteration<T, F>(dim: usize, mut apply: F, seed: u64, tol: f64, max_iter: usize) -> Result<T, Error>
where
    T: Scalar,
    F: FnMut(&[T], &mut [T]),
{
    if dim == 0 {
        return Ok(T::zero());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<T> = (0..dim).map(|_| T::lit(rng.sample::<f64, _>(StandardNormal))).collect();
    let nv = norm_sq(&v).sqrt();
    v.iter_mut().for_each(|x| *x /= nv);
    let mut w = vec![T::zero(); dim];
    let tol = T::lit(tol);
    let mut prev = T::neg_infinity();
    for _ in 0..max_iter {
        apply(&v, &mut w);
        let rayleigh = dot(&v, &w);
        let nw = norm_sq(&w).sqrt();
        if nw == T::zero() {
            return Ok(T::zero());
        }
        if !nw.is_finite() {
            return Err(Error::NonFinite("power iteration"));
        }
        if (rayleigh - prev).abs() <= tol * rayleigh.abs() {
            return Ok(rayleigh.max(T::zero()));
        }
        prev = rayleigh;
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = *wi / nw;
        }
    }
    Err(Error::NoConvergence { what: "power iteration", iterations: max_iter })
}

/// Solves `H x = h` for a symmetric PSD operator with `h` in its range.
/// Starting from zero keeps iterates in the range, so singular `H` yields the
/// minimum-norm solution.
pub fn conjugate_gradient<T, F>(dim: usize, mut apply: F, rhs: &[T], rel_tol: f64, max_iter: usize) -> Vec<T>
where
    T: Scalar,
    F: FnMut(&[T], &mut [T]),
{
    let mut x = vec![T::zero(); dim];
    let mut r = rhs.to_vec();
    let mut p = r.clone();
    let mut hp = vec![T::zero(); dim];
    let mut rr = norm_sq(&r);
    let stop = T::lit(rel_tol) * T::lit(rel_tol) * rr;
    for _ in 0..max_iter {
        if rr <= stop || rr == T::zero() {
            break;
        }
        apply(&p, &mut hp);
        let php = dot(&p, &hp);
        if php <= T::zero() {
            break;
        }
        let step = rr / php;
        axpy(step, &p, &mut x);
        axpy(-step, &hp, &mut r);
        let rr_next = norm_sq(&r);
        let ratio = rr_next / rr;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = *ri + ratio * *pi;
        }
        rr = rr_next;
    }
    x
}

/// `rows × cols` matrix (cols ≤ rows) with orthonormal columns, from
/// Gram–Schmidt on a Gaussian matrix drawn from `rng`.
pub fn random_orthonormal<T: Scalar, R: Rng>(rng: &mut R, rows: usize, cols: usize) -> DenseMatrix<T> {
    assert!(cols <= rows, "cannot fit {cols} orthonormal columns in dimension {rows}");
    loop {
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(cols);
        let mut ok = true;
        for _ in 0..cols {
            let mut v: Vec<f64> = (0..rows).map(|_| rng.sample(StandardNormal)).collect();
            // two passes of modified Gram-Schmidt
            for _ in 0..2 {
                for q in &basis {
                    let proj: f64 = q.iter().zip(&v).map(|(a, b)| a * b).sum();
                    v.iter_mut().zip(q).for_each(|(vi, qi)| *vi -= proj * qi);
                }
            }
            let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if nv < 1e-8 {
                ok = false;
                break;
            }
            v.iter_mut().for_each(|a| *a /= nv);
            basis.push(v);
        }
        if ok {
            let mut m = DenseMatrix::zeros(rows, cols);
            for (j, q) in basis.iter().enumerate() {
                for (i, val) in q.iter().enumerate() {
                    m[(i, j)] = T::lit(*val);
                }
            }
            return m;
        }
    }
}
