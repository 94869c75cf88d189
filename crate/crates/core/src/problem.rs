//! Distributed objective `f = (1/n) Σ f_i`, the client × feature sparsity
//! pattern, and active-subspace arithmetic.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, DenseMatrix};
use crate::scalar::Scalar;

/// Boolean client × feature activity matrix. Entry `(i, j)` is active iff
/// `f_i` depends on `x_j`; the inactive entries form the set `Z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PatternRepr", into = "PatternRepr")]
pub struct SparsityPattern {
    d: usize,
    rows: Vec<Vec<usize>>,
    active: Vec<bool>,
    col_counts: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct PatternRepr {
    d: usize,
    rows: Vec<Vec<usize>>,
}

impl TryFrom<PatternRepr> for SparsityPattern {
    type Error = Error;
    fn try_from(r: PatternRepr) -> Result<Self> {
        SparsityPattern::from_rows(r.d, r.rows)
    }
}

impl From<SparsityPattern> for PatternRepr {
    fn from(p: SparsityPattern) -> Self {
        PatternRepr { d: p.d, rows: p.rows }
    }
}

impl SparsityPattern {
    /// Builds the pattern from each client's active coordinate set `J_i`.
    ///
    /// Rows must be non-empty. Columns nobody owns are allowed (the variable
    /// simply never moves) and are reported by [`Self::unused_columns`].
    pub fn from_rows(d: usize, rows: Vec<Vec<usize>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::NoClients);
        }
        if d == 0 {
            return Err(Error::InvalidParameter("dimension must be at least 1".into()));
        }
        let n = rows.len();
        let mut active = vec![false; n * d];
        let mut col_counts = vec![0usize; d];
        let mut clean = Vec::with_capacity(n);
        for (i, row) in rows.into_iter().enumerate() {
            let mut row = row;
            row.sort_unstable();
            row.dedup();
            if row.is_empty() {
                return Err(Error::EmptyActiveSet { client: i });
            }
            if let Some(&j) = row.last().filter(|&&j| j >= d) {
                return Err(Error::DimensionMismatch { expected: d, found: j + 1 });
            }
            for &j in &row {
                active[i * d + j] = true;
                col_counts[j] += 1;
            }
            clean.push(row);
        }
        Ok(Self { d, rows: clean, active, col_counts })
    }

    /// Builds a pattern from a dense boolean matrix, row per client.
    pub fn from_mask(mask: &[Vec<bool>]) -> Result<Self> {
        let d = mask.first().map_or(0, Vec::len);
        let rows = mask
            .iter()
            .map(|r| {
                if r.len() != d {
                    return Err(Error::DimensionMismatch { expected: d, found: r.len() });
                }
                Ok(r.iter().enumerate().filter(|(_, &b)| b).map(|(j, _)| j).collect())
            })
            .collect::<Result<Vec<Vec<usize>>>>()?;
        Self::from_rows(d, rows)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.rows.len()
    }

    #[inline]
    pub fn d(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn is_active(&self, i: usize, j: usize) -> bool {
        self.active[i * self.d + j]
    }

    /// `J_i`, sorted ascending.
    #[inline]
    pub fn active_coords(&self, i: usize) -> &[usize] {
        &self.rows[i]
    }

    /// `I_j`: clients whose loss depends on `x_j`.
    pub fn clients_of(&self, j: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.is_active(i, j)).collect()
    }

    /// `|I_j|` for every column.
    #[inline]
    pub fn column_counts(&self) -> &[usize] {
        &self.col_counts
    }

    /// Maximum number of clients sharing any feature.
    pub fn c(&self) -> usize {
        self.col_counts.iter().copied().max().unwrap_or(0)
    }

    /// Maximum number of features owned by any client.
    pub fn r(&self) -> usize {
        self.rows.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// `|Z|`, the number of inactive (client, feature) pairs.
    pub fn zero_count(&self) -> usize {
        self.n() * self.d - self.nnz()
    }

    /// `Σ_i |J_i|`
    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn unused_columns(&self) -> Vec<usize> {
        (0..self.d).filter(|&j| self.col_counts[j] == 0).collect()
    }

    /// Zeroes every coordinate of `v` outside `J_i`.
    pub fn project_active_in_place<T: Scalar>(&self, i: usize, v: &mut [T]) {
        let row = &self.active[i * self.d..(i + 1) * self.d];
        for (x, &on) in v.iter_mut().zip(row) {
            if !on {
                *x = T::zero();
            }
        }
    }

    pub fn project_active<T: Scalar>(&self, i: usize, v: &[T]) -> Vec<T> {
        let mut out = v.to_vec();
        self.project_active_in_place(i, &mut out);
        out
    }

    /// True iff `v` has zeros outside `J_i`.
    pub fn lies_in_active(&self, i: usize, v: &[impl Scalar]) -> bool {
        let row = &self.active[i * self.d..(i + 1) * self.d];
        v.iter().zip(row).all(|(x, &on)| on || x.is_zero())
    }
}

/// Builds the sparsity pattern declared by a list of client objectives.
pub fn build_pattern<T: Scalar>(objectives: &[ClientObjective<T>]) -> Result<SparsityPattern> {
    let first = objectives.first().ok_or(Error::NoClients)?;
    let d = first.dim();
    for o in objectives {
        if o.dim() != d {
            return Err(Error::DimensionMismatch { expected: d, found: o.dim() });
        }
    }
    SparsityPattern::from_rows(d, objectives.iter().map(|o| o.active_coords().to_vec()).collect())
}

/// One labelled sparse example; indices are 0-based global coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SparseRow<T> {
    pub label: T,
    pub idx: Vec<usize>,
    pub val: Vec<T>,
}

impl<T: Scalar> SparseRow<T> {
    #[inline]
    pub fn dot(&self, x: &[T]) -> T {
        let mut acc = T::zero();
        for (&j, &v) in self.idx.iter().zip(&self.val) {
            acc += v * x[j];
        }
        acc
    }
}

/// Data term of a local loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", rename_all = "snake_case", tag = "kind")]
pub enum LocalLoss<T> {
    /// `(1/m) ‖A x_J − b‖²` with `A ∈ ℝ^{m×|J|}` acting on the active coordinates.
    LeastSquares { a: DenseMatrix<T>, b: Vec<T> },
    /// `(1/N_i) Σ log(1 + exp(−y aᵀx))`
    Logistic { rows: Vec<SparseRow<T>> },
}

/// Differentiable local loss `f_i` with its active set and smoothness constant.
///
/// Gradients are dense `d`-vectors with exact zeros outside `J_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ClientObjective<T> {
    pub index: usize,
    dim: usize,
    coords: Vec<usize>,
    loss: LocalLoss<T>,
    /// Weight of `λ Σ_{j∈J_i} x_j²/(x_j²+1)`; zero when absent.
    reg_lambda: T,
    smoothness: T,
}

const CLIENT_SEED: u64 = 0x5EED_C11E;

impl<T: Scalar> ClientObjective<T> {
    /// Least-squares client on coordinates `coords` (sorted, distinct) of `ℝ^dim`.
    pub fn least_squares(index: usize, dim: usize, coords: Vec<usize>, a: DenseMatrix<T>, b: Vec<T>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::EmptyActiveSet { client: index });
        }
        if a.cols() != coords.len() {
            return Err(Error::DimensionMismatch { expected: coords.len(), found: a.cols() });
        }
        if a.rows() != b.len() || a.rows() == 0 {
            return Err(Error::DimensionMismatch { expected: a.rows(), found: b.len() });
        }
        check_coords(dim, &coords)?;
        Self::finish(index, dim, coords, LocalLoss::LeastSquares { a, b })
    }

    /// Logistic client; its active set is the union of the rows' supports.
    pub fn logistic(index: usize, dim: usize, rows: Vec<SparseRow<T>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyActiveSet { client: index });
        }
        let mut coords: Vec<usize> = rows
            .iter()
            .flat_map(|r| r.idx.iter().zip(&r.val).filter(|(_, v)| !v.is_zero()).map(|(j, _)| *j))
            .collect();
        coords.sort_unstable();
        coords.dedup();
        if coords.is_empty() {
            return Err(Error::EmptyActiveSet { client: index });
        }
        check_coords(dim, &coords)?;
        Self::finish(index, dim, coords, LocalLoss::Logistic { rows })
    }

    fn finish(index: usize, dim: usize, coords: Vec<usize>, loss: LocalLoss<T>) -> Result<Self> {
        let mut c = Self { index, dim, coords, loss, reg_lambda: T::zero(), smoothness: T::zero() };
        c.smoothness = c.compute_smoothness()?;
        Ok(c)
    }

    /// Adds `λ Σ_{j∈J_i} x_j²/(x_j²+1)`; the smoothness constant grows by `2λ`.
    pub fn with_regularizer(mut self, lambda: T) -> Self {
        self.reg_lambda += lambda;
        self.smoothness += T::lit(2.0) * lambda;
        self
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn active_coords(&self) -> &[usize] {
        &self.coords
    }

    #[inline]
    pub fn loss(&self) -> &LocalLoss<T> {
        &self.loss
    }

    #[inline]
    pub fn reg_lambda(&self) -> T {
        self.reg_lambda
    }

    /// `L_i`
    #[inline]
    pub fn smoothness(&self) -> T {
        self.smoothness
    }

    /// Largest eigenvalue of [`Self::curvature_apply`] restricted to `J_i`.
    fn compute_smoothness(&self) -> Result<T> {
        let s = self.coords.len();
        let mut full_in = vec![T::zero(); self.dim];
        let mut full_out = vec![T::zero(); self.dim];
        let top = linalg::power_iteration(
            s,
            |v: &[T], out: &mut [T]| {
                for (k, &j) in self.coords.iter().enumerate() {
                    full_in[j] = v[k];
                }
                self.curvature_apply(&full_in, &mut full_out);
                for (k, &j) in self.coords.iter().enumerate() {
                    out[k] = full_out[j];
                }
            },
            CLIENT_SEED ^ self.index as u64,
            linalg::POWER_ITER_TOL,
            linalg::POWER_ITER_CAP,
        )?;
        Ok(top + T::lit(2.0) * self.reg_lambda)
    }

    /// Writes `B_i v` into `out` (dense `d`-vectors), where `B_i` is the data
    /// term's Hessian for least squares, or the `(1/(4N_i)) Σ a aᵀ` bound for
    /// logistic loss. Excludes the regularizer.
    pub fn curvature_apply(&self, v: &[T], out: &mut [T]) {
        out.iter_mut().for_each(|o| *o = T::zero());
        match &self.loss {
            LocalLoss::LeastSquares { a, .. } => {
                let m = a.rows();
                let vj: Vec<T> = self.coords.iter().map(|&j| v[j]).collect();
                let mut av = vec![T::zero(); m];
                a.matvec(&vj, &mut av);
                let mut atav = vec![T::zero(); self.coords.len()];
                a.matvec_t(&av, &mut atav);
                let scale = T::lit(2.0) / T::from_count(m);
                for (k, &j) in self.coords.iter().enumerate() {
                    out[j] = scale * atav[k];
                }
            }
            LocalLoss::Logistic { rows } => {
                let scale = T::one() / (T::lit(4.0) * T::from_count(rows.len()));
                for r in rows {
                    let s = r.dot(v) * scale;
                    for (&j, &a) in r.idx.iter().zip(&r.val) {
                        out[j] += s * a;
                    }
                }
            }
        }
    }

    pub fn value(&self, x: &[T]) -> T {
        self.data_value(x) + self.reg_value(x)
    }

    fn data_value(&self, x: &[T]) -> T {
        match &self.loss {
            LocalLoss::LeastSquares { a, b } => {
                let r = self.residual(a, b, x);
                linalg::norm_sq(&r) / T::from_count(a.rows())
            }
            LocalLoss::Logistic { rows } => {
                let total: T = rows.iter().map(|r| softplus(-r.label * r.dot(x))).sum();
                total / T::from_count(rows.len())
            }
        }
    }

    fn reg_value(&self, x: &[T]) -> T {
        if self.reg_lambda.is_zero() {
            return T::zero();
        }
        let s: T = self.coords.iter().map(|&j| {
            let q = x[j] * x[j];
            q / (q + T::one())
        }).sum();
        self.reg_lambda * s
    }

    fn residual(&self, a: &DenseMatrix<T>, b: &[T], x: &[T]) -> Vec<T> {
        let xj: Vec<T> = self.coords.iter().map(|&j| x[j]).collect();
        let mut r = vec![T::zero(); a.rows()];
        a.matvec(&xj, &mut r);
        r.iter_mut().zip(b).for_each(|(ri, bi)| *ri -= *bi);
        r
    }

    /// Writes `∇f_i(x)` into `out` and returns `f_i(x)`.
    pub fn value_and_gradient(&self, x: &[T], out: &mut [T]) -> T {
        debug_assert_eq!(out.len(), self.dim);
        out.iter_mut().for_each(|o| *o = T::zero());
        let value = match &self.loss {
            LocalLoss::LeastSquares { a, b } => {
                let m = a.rows();
                let r = self.residual(a, b, x);
                let mut g = vec![T::zero(); self.coords.len()];
                a.matvec_t(&r, &mut g);
                let scale = T::lit(2.0) / T::from_count(m);
                for (k, &j) in self.coords.iter().enumerate() {
                    out[j] = scale * g[k];
                }
                linalg::norm_sq(&r) / T::from_count(m)
            }
            LocalLoss::Logistic { rows } => {
                let inv = T::one() / T::from_count(rows.len());
                let mut total = T::zero();
                for row in rows {
                    let z = -row.label * row.dot(x);
                    total += softplus(z);
                    let w = -row.label * sigmoid(z) * inv;
                    for (&j, &a) in row.idx.iter().zip(&row.val) {
                        out[j] += w * a;
                    }
                }
                total * inv
            }
        };
        if self.reg_lambda.is_zero() {
            return value;
        }
        let two = T::lit(2.0);
        for &j in &self.coords {
            let q = x[j] * x[j] + T::one();
            out[j] += self.reg_lambda * two * x[j] / (q * q);
        }
        value + self.reg_value(x)
    }

    pub fn gradient(&self, x: &[T]) -> Vec<T> {
        let mut g = vec![T::zero(); self.dim];
        self.value_and_gradient(x, &mut g);
        g
    }
}

fn check_coords(dim: usize, coords: &[usize]) -> Result<()> {
    if coords.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter("active coordinates must be strictly increasing".into()));
    }
    match coords.last() {
        Some(&j) if j >= dim => Err(Error::DimensionMismatch { expected: dim, found: j + 1 }),
        _ => Ok(()),
    }
}

/// `log(1 + e^z)` without overflow.
#[inline]
fn softplus<T: Scalar>(z: T) -> T {
    z.max(T::zero()) + (-z.abs()).exp().ln_1p()
}

#[inline]
fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// `min f = (1/n) Σ f_i` over `ℝ^d`, with the sparsity pattern and the
/// smoothness constant `L` of `f`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct DistributedProblem<T> {
    pub clients: Vec<ClientObjective<T>>,
    pub pattern: SparsityPattern,
    /// `L`
    pub smoothness: T,
    /// Known lower bound (or optimal value) of `f`.
    pub f_star_hint: Option<T>,
    /// Planted solution, when the generator has one.
    pub solution: Option<Vec<T>>,
    pub label: String,
}

impl<T: Scalar> DistributedProblem<T> {
    pub fn new(clients: Vec<ClientObjective<T>>, label: impl Into<String>) -> Result<Self> {
        let pattern = build_pattern(&clients)?;
        let mut p = Self { clients, pattern, smoothness: T::zero(), f_star_hint: None, solution: None, label: label.into() };
        p.smoothness = p.compute_smoothness()?;
        Ok(p)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.clients.len()
    }

    #[inline]
    pub fn d(&self) -> usize {
        self.pattern.d()
    }

    /// `L_i` for every client, in client order.
    pub fn client_smoothness(&self) -> Vec<T> {
        self.clients.iter().map(ClientObjective::smoothness).collect()
    }

    /// Top eigenvalue of `(1/n) Σ (B_i + 2λ_i I_{J_i})`, a valid `L` for `f`.
    pub fn compute_smoothness(&self) -> Result<T> {
        let d = self.d();
        let n = T::from_count(self.n());
        let mut tmp = vec![T::zero(); d];
        linalg::power_iteration(
            d,
            |v: &[T], out: &mut [T]| {
                out.iter_mut().for_each(|o| *o = T::zero());
                for c in &self.clients {
                    c.curvature_apply(v, &mut tmp);
                    let reg2 = T::lit(2.0) * c.reg_lambda();
                    if !reg2.is_zero() {
                        for &j in c.active_coords() {
                            tmp[j] += reg2 * v[j];
                        }
                    }
                    out.iter_mut().zip(&tmp).for_each(|(o, t)| *o += *t);
                }
                out.iter_mut().for_each(|o| *o /= n);
            },
            0x5_EEDF,
            linalg::POWER_ITER_TOL,
            linalg::POWER_ITER_CAP,
        )
    }

    fn check_dim(&self, x: &[T]) -> Result<()> {
        if x.len() != self.d() {
            return Err(Error::DimensionMismatch { expected: self.d(), found: x.len() });
        }
        Ok(())
    }

    pub fn value(&self, x: &[T]) -> Result<T> {
        self.check_dim(x)?;
        let vals: Vec<T> = self.clients.par_iter().map(|c| c.value(x)).collect();
        Ok(mean_scalar(&vals))
    }

    /// `∇f(x) = (1/n) Σ ∇f_i(x)`, reduced in client-index order.
    pub fn full_gradient(&self, x: &[T]) -> Result<Vec<T>> {
        self.check_dim(x)?;
        let mut grads = vec![vec![T::zero(); self.d()]; self.n()];
        self.local_values_and_gradients(x, &mut grads);
        let mut out = vec![T::zero(); self.d()];
        linalg::mean_of(&grads, &mut out);
        Ok(out)
    }

    /// Evaluates every client in parallel, writing `∇f_i(x)` into `grads[i]`
    /// and returning the `f_i(x)` in client order.
    pub fn local_values_and_gradients(&self, x: &[T], grads: &mut [Vec<T>]) -> Vec<T> {
        self.clients
            .par_iter()
            .zip(grads.par_iter_mut())
            .map(|(c, g)| c.value_and_gradient(x, g))
            .collect()
    }

    pub fn project_active(&self, i: usize, v: &[T]) -> Vec<T> {
        self.pattern.project_active(i, v)
    }

    /// Clients whose loss is pure least squares (no regularizer), as
    /// `(A_i, J_i)`; `None` if any client is of another kind.
    pub fn quadratic_data(&self) -> Option<Vec<(&DenseMatrix<T>, &[usize])>> {
        self.clients
            .iter()
            .map(|c| match c.loss() {
                LocalLoss::LeastSquares { a, .. } if c.reg_lambda().is_zero() => Some((a, c.active_coords())),
                _ => None,
            })
            .collect()
    }
}

/// Mean of scalars summed in index order.
pub fn mean_scalar<T: Scalar>(v: &[T]) -> T {
    let mut acc = T::zero();
    for x in v {
        acc += *x;
    }
    acc / T::from_count(v.len())
}

/// Free-function form of [`DistributedProblem::full_gradient`].
pub fn full_gradient<T: Scalar>(problem: &DistributedProblem<T>, x: &[T]) -> Result<Vec<T>> {
    problem.full_gradient(x)
}
