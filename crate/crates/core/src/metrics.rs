//! Per-iteration diagnostics, trace serialization, and run-level checks.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg;
use crate::problem::DistributedProblem;
use crate::scalar::Scalar;
use crate::smoothness::SmoothnessReport;

/// Header of the trace CSV.
pub const CSV_HEADER: &str = "t,f,grad_norm_sq,G,Psi,gamma,c_t,bits_float,bits_indexed";

/// Absolute slack for exact identities.
pub const ABS_TOL: f64 = 1e-12;
/// Relative slack for inequalities over accumulated floating-point sums.
pub const REL_TOL: f64 = 1e-9;

/// One row of a trace, describing the state at iteration `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TraceRecord<T> {
    pub t: usize,
    pub f: T,
    pub grad_norm_sq: T,
    /// Mean estimator error `G^t` (EF21 family only).
    #[serde(rename = "G")]
    pub g_err: Option<T>,
    #[serde(rename = "Psi")]
    pub psi: Option<T>,
    /// Stepsize used to leave iteration `t`.
    pub gamma: T,
    /// Realized `c^t = n‖g^t − ∇f(x^t)‖²/G^t` (EF21 family only).
    pub c_t: Option<T>,
    /// Cumulative uplink bits counting 32 per transmitted float.
    pub bits_float: u64,
    /// Cumulative uplink bits including `⌈log₂ d⌉` per sparse index.
    pub bits_indexed: u64,
}

/// Tally of one inline inequality check.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckStat {
    pub checked: u64,
    pub violations: u64,
    /// Largest `lhs − rhs − slack` seen; non-positive when every check passed.
    pub worst_excess: Option<f64>,
    pub first_violation: Option<usize>,
}

impl CheckStat {
    pub fn record(&mut self, t: usize, lhs: f64, rhs: f64, slack: f64) -> bool {
        self.checked += 1;
        let excess = lhs - rhs - slack;
        self.worst_excess = Some(self.worst_excess.map_or(excess, |w| w.max(excess)));
        let ok = excess <= 0.0;
        if !ok {
            self.violations += 1;
            self.first_violation.get_or_insert(t);
        }
        ok
    }

    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Inline lemma checks gathered while running an EF21-family method.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckSummary {
    /// `‖g^t − ∇f(x^t)‖² ≤ (c/n) G^t`
    pub aggregation: CheckStat,
    /// every `g_i^t` vanishes outside `J_i`
    pub subspace: CheckStat,
    /// `G^{t+1} ≤ (1−θ) G^t + β L₊² ‖x^{t+1} − x^t‖²`
    pub recursion: CheckStat,
    /// `Ψ^{t+1} ≤ Ψ^t − (γ/2)‖∇f(x^t)‖²`
    pub lyapunov: CheckStat,
}

impl CheckSummary {
    pub fn passed(&self) -> bool {
        self.aggregation.passed() && self.subspace.passed() && self.recursion.passed() && self.lyapunov.passed()
    }
}

/// Constants a run was configured with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct RunConstants<T> {
    pub n: usize,
    pub d: usize,
    pub c: usize,
    pub r: usize,
    pub k: usize,
    pub alpha: T,
    pub theta: T,
    pub beta: T,
    #[serde(rename = "L")]
    pub l: T,
    #[serde(rename = "L_tilde")]
    pub l_tilde: T,
    /// `L₊` used by the theoretical-new stepsize.
    #[serde(rename = "L_plus_step")]
    pub l_plus_step: T,
    /// Tightest valid `L₊` known; used by the recursion check.
    #[serde(rename = "L_plus_check")]
    pub l_plus_check: T,
    pub f_star: T,
    /// Fixed stepsize, or the standard EF21 stepsize for adaptive runs.
    pub gamma: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TraceMeta<T> {
    pub method: String,
    pub gamma_rule: String,
    pub init: String,
    pub iterations: usize,
    pub seed: u64,
    pub config_hash: String,
    pub problem_hash: String,
    pub problem_label: String,
    pub constants: RunConstants<T>,
    pub smoothness: SmoothnessReport<T>,
    pub halted: Option<String>,
    pub checks: CheckSummary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace<T> {
    pub meta: TraceMeta<T>,
    pub records: Vec<TraceRecord<T>>,
    /// `x^t` for each record, when requested.
    pub iterates: Vec<Vec<T>>,
}

impl<T: Scalar> RunTrace<T> {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_csv(&self.records, w)
    }

    /// Writes `<stem>.csv` and `<stem>.json` into `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.write_csv(std::fs::File::create(dir.join(format!("{stem}.csv")))?)?;
        let json = serde_json::to_string_pretty(&self.meta)?;
        std::fs::write(dir.join(format!("{stem}.json")), json + "\n")?;
        Ok(())
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let records = read_csv(std::fs::File::open(dir.join(format!("{stem}.csv")))?)?;
        let meta = serde_json::from_str(&std::fs::read_to_string(dir.join(format!("{stem}.json")))?)?;
        Ok(Self { meta, records, iterates: Vec::new() })
    }

    /// First iteration whose squared gradient norm is at most `target`.
    pub fn first_hit(&self, target: T) -> Option<&TraceRecord<T>> {
        self.records.iter().find(|r| r.grad_norm_sq <= target)
    }
}

pub fn write_csv<T: Scalar, W: Write>(records: &[TraceRecord<T>], w: W) -> Result<()> {
    let mut wr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    wr.write_record(CSV_HEADER.split(','))?;
    for r in records {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_csv<T: Scalar, R: Read>(r: R) -> Result<Vec<TraceRecord<T>>> {
    let mut rd = csv::Reader::from_reader(r);
    let header = rd.headers()?.iter().collect::<Vec<_>>().join(",");
    if header != CSV_HEADER {
        return Err(Error::Config(format!("unexpected trace header '{header}'")));
    }
    rd.deserialize().map(|r| r.map_err(Error::from)).collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// SHA-256 of the problem's JSON form.
pub fn problem_hash<T: Scalar>(problem: &DistributedProblem<T>) -> Result<String> {
    Ok(sha256_hex(&serde_json::to_vec(problem)?))
}

/// `Ψ = f − f* + (γc)/(2θn)·G`
pub fn lyapunov<T: Scalar>(f: T, f_star: T, gamma: T, c: usize, theta: T, n: usize, g_err: T) -> T {
    f - f_star + gamma * T::from_count(c) / (T::lit(2.0) * theta * T::from_count(n)) * g_err
}

/// Estimator errors of an EF21-family state.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientError<T> {
    /// `G = (1/n) Σ G_i`
    pub mean: T,
    /// `G_i = ‖g_i − ∇f_i(x)‖²`
    pub per_client: Vec<T>,
    /// `‖g − ∇f(x)‖²`
    pub aggregate: T,
}

/// Computes `G^t`, every `G_i^t` and `‖g^t − ∇f(x^t)‖²` from the estimators
/// and the true local gradients, and checks the aggregation inequality
/// `‖g − ∇f‖² ≤ (c/n) G + 1e−12`.
pub fn gradient_error<T: Scalar>(estimators: &[Vec<T>], local_grads: &[Vec<T>], c: usize) -> Result<GradientError<T>> {
    let n = estimators.len();
    if n == 0 || local_grads.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: local_grads.len() });
    }
    let per_client: Vec<T> = estimators.iter().zip(local_grads).map(|(g, h)| linalg::dist_sq(g, h)).collect();
    let mean = crate::problem::mean_scalar(&per_client);
    let d = estimators[0].len();
    let mut g = vec![T::zero(); d];
    let mut h = vec![T::zero(); d];
    linalg::mean_of(estimators, &mut g);
    linalg::mean_of(local_grads, &mut h);
    let aggregate = linalg::dist_sq(&g, &h);
    let bound = T::from_count(c) / T::from_count(n) * mean;
    if aggregate > bound + T::lit(ABS_TOL) {
        return Err(Error::Verification(format!(
            "aggregation inequality violated: ‖g − ∇f‖² = {aggregate:e} > (c/n)G = {bound:e} (c = {c}, n = {n})"
        )));
    }
    Ok(GradientError { mean, per_client, aggregate })
}

/// Outcome of checking the convergence certificate on a completed run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    /// `(1/T) Σ_{t<T} ‖∇f(x^t)‖²`
    pub average_grad_sq: f64,
    /// `2(f⁰ − f*)/(γT) + (c/n) G⁰/(θT)`
    pub bound: f64,
    /// `bound − average_grad_sq`
    pub margin: f64,
    pub descent_checked: usize,
    pub descent_violations: usize,
    /// Smallest `Ψ^t − (γ/2)‖∇f(x^t)‖² − Ψ^{t+1}` over the run.
    pub worst_descent_margin: f64,
}

impl Certificate {
    pub fn holds(&self) -> bool {
        self.margin >= 0.0 && self.descent_violations == 0
    }
}

/// Checks the averaged-gradient bound and per-step Lyapunov descent on a
/// fixed-stepsize EF21 trace using the recorded `Ψ` column.
pub fn theorem1_certificate<T: Scalar>(trace: &RunTrace<T>, constants: &RunConstants<T>) -> Result<Certificate> {
    let recs = &trace.records;
    if recs.len() < 2 {
        return Err(Error::InvalidParameter("certificate needs at least one completed iteration".into()));
    }
    let t_count = recs.len() - 1;
    let g0 = recs[0].g_err.ok_or_else(|| Error::InvalidParameter("trace has no estimator error column".into()))?;
    let gamma = constants.gamma.as_f64();
    let theta = constants.theta.as_f64();
    let c_over_n = constants.c as f64 / constants.n as f64;
    let avg = recs[..t_count].iter().map(|r| r.grad_norm_sq.as_f64()).sum::<f64>() / t_count as f64;
    let bound = 2.0 * (recs[0].f.as_f64() - constants.f_star.as_f64()) / (gamma * t_count as f64) + c_over_n * g0.as_f64() / (theta * t_count as f64);
    let mut violations = 0;
    let mut worst = f64::INFINITY;
    for w in recs.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let psi_a = a.psi.ok_or_else(|| Error::InvalidParameter("trace has no Psi column".into()))?.as_f64();
        let psi_b = b.psi.ok_or_else(|| Error::InvalidParameter("trace has no Psi column".into()))?.as_f64();
        let rhs = psi_a - 0.5 * gamma * a.grad_norm_sq.as_f64();
        let scale = psi_a.abs().max(psi_b.abs()).max(a.f.as_f64().abs()).max(b.f.as_f64().abs());
        let margin = rhs - psi_b;
        worst = worst.min(margin);
        if margin + REL_TOL * scale < 0.0 {
            violations += 1;
        }
    }
    Ok(Certificate {
        average_grad_sq: avg,
        bound,
        margin: bound - avg,
        descent_checked: t_count,
        descent_violations: violations,
        worst_descent_margin: worst,
    })
}

/// One trace's row in a comparison table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub label: String,
    pub target: f64,
    pub iterations: Option<usize>,
    pub bits_float: Option<u64>,
    pub bits_indexed: Option<u64>,
    /// Fewest iterations among the compared traces (ties share the flag).
    pub winner: bool,
}

/// For each target accuracy, the first iteration (and bits) at which each
/// trace reaches `‖∇f‖² ≤ target`. Traces must come from the same problem.
pub fn compare_runs<T: Scalar>(traces: &[(&str, &RunTrace<T>)], targets: &[T]) -> Result<Vec<ComparisonRow>> {
    if traces.len() < 2 {
        return Err(Error::InvalidParameter("comparison needs at least two traces".into()));
    }
    let reference = &traces[0].1.meta.problem_hash;
    for (_, tr) in &traces[1..] {
        if &tr.meta.problem_hash != reference {
            return Err(Error::ProblemMismatch(reference.clone(), tr.meta.problem_hash.clone()));
        }
    }
    let mut rows = Vec::new();
    for &target in targets {
        let hits: Vec<Option<&TraceRecord<T>>> = traces.iter().map(|(_, tr)| tr.first_hit(target)).collect();
        let best = hits.iter().filter_map(|h| h.map(|r| r.t)).min();
        for ((label, _), hit) in traces.iter().zip(&hits) {
            rows.push(ComparisonRow {
                label: (*label).to_string(),
                target: target.as_f64(),
                iterations: hit.map(|r| r.t),
                bits_float: hit.map(|r| r.bits_float),
                bits_indexed: hit.map(|r| r.bits_indexed),
                winner: best.is_some() && hit.map(|r| r.t) == best,
            });
        }
    }
    Ok(rows)
}
