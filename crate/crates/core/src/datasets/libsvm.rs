//! LIBSVM text format (`<label> <idx>:<val> ...`, 1-based indices) and an
//! even random split into logistic-regression clients.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::problem::{ClientObjective, DistributedProblem, SparseRow};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct LibsvmDataset<T> {
    /// Labels are `±1`; indices are 0-based and strictly increasing.
    pub rows: Vec<SparseRow<T>>,
    /// Largest feature index seen (1-based), i.e. the feature count.
    pub d: usize,
}

impl<T> LibsvmDataset<T> {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Parses LIBSVM text. `#` starts a comment; blank lines are skipped.
/// Labels `≤ 0` map to `−1`, positive labels to `+1`. A repeated index keeps
/// the last value.
pub fn parse_libsvm<T: Scalar>(text: &str) -> Result<LibsvmDataset<T>> {
    let mut rows = Vec::new();
    let mut d = 0;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("");
        let err = |column: usize, message: String| Error::Parse { line: lineno + 1, column: column + 1, message };
        let mut tokens = tokens_with_offsets(line);
        let Some((col, label_tok)) = tokens.next() else { continue };
        let label: f64 = label_tok.parse().map_err(|_| err(col, format!("invalid label '{label_tok}'")))?;
        let mut entries: Vec<(usize, T)> = Vec::new();
        for (col, tok) in tokens {
            let (i, v) = tok.split_once(':').ok_or_else(|| err(col, format!("expected idx:val, got '{tok}'")))?;
            let idx: usize = i.parse().map_err(|_| err(col, format!("invalid index '{i}'")))?;
            if idx == 0 {
                return Err(err(col, "feature indices start at 1".into()));
            }
            let val: f64 = v.parse().map_err(|_| err(col + i.len() + 1, format!("invalid value '{v}'")))?;
            if !val.is_finite() {
                return Err(err(col + i.len() + 1, format!("non-finite value '{v}'")));
            }
            entries.push((idx - 1, T::lit(val)));
            d = d.max(idx);
        }
        let before = entries.len();
        // stable sort keeps file order among duplicates, so the last one wins
        entries.sort_by_key(|e| e.0);
        let mut dedup: Vec<(usize, T)> = Vec::with_capacity(entries.len());
        for e in entries {
            match dedup.last_mut() {
                Some(last) if last.0 == e.0 => *last = e,
                _ => dedup.push(e),
            }
        }
        if dedup.len() != before {
            log::warn!("line {}: duplicate feature indices, keeping the last value", lineno + 1);
        }
        rows.push(SparseRow {
            label: if label > 0.0 { T::one() } else { -T::one() },
            idx: dedup.iter().map(|e| e.0).collect(),
            val: dedup.iter().map(|e| e.1).collect(),
        });
    }
    Ok(LibsvmDataset { rows, d })
}

fn tokens_with_offsets(line: &str) -> impl Iterator<Item = (usize, &str)> {
    line.split_ascii_whitespace().map(move |t| (t.as_ptr() as usize - line.as_ptr() as usize, t))
}

/// Shuffles rows with `seed` and gives each of `n` clients `⌊N/n⌋` of them;
/// the remainder is dropped. Client `i` minimizes the mean logistic loss of
/// its rows. `f* ≥ 0` is used as the lower bound.
pub fn partition_even<T: Scalar>(dataset: &LibsvmDataset<T>, n: usize, seed: u64) -> Result<DistributedProblem<T>> {
    if n == 0 {
        return Err(Error::NoClients);
    }
    let rows = dataset.len();
    if rows < n {
        return Err(Error::NotEnoughData { rows, clients: n });
    }
    let per = rows / n;
    let mut order: Vec<usize> = (0..rows).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    if !rows.is_multiple_of(n) {
        log::info!("dropping {} of {rows} rows to split evenly over {n} clients", rows % n);
    }
    let clients = order
        .chunks_exact(per)
        .take(n)
        .enumerate()
        .map(|(i, chunk)| ClientObjective::logistic(i, dataset.d, chunk.iter().map(|&r| dataset.rows[r].clone()).collect()))
        .collect::<Result<Vec<_>>>()?;
    let mut problem = DistributedProblem::new(clients, format!("libsvm(N={rows},d={},n={n},seed={seed})", dataset.d))?;
    problem.f_star_hint = Some(T::zero());
    Ok(problem)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_basic_line() {
        let ds = parse_libsvm::<f64>("+1 3:0.5 7:1.2\n").unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.d, 7);
        assert_eq!(ds.rows[0], SparseRow { label: 1.0, idx: vec![2, 6], val: vec![0.5, 1.2] });
    }

    #[test]
    fn sign_convention() {
        let ds = parse_libsvm::<f64>("0 1:1\n-1 1:1\n2 1:1\n").unwrap();
        let labels: Vec<f64> = ds.rows.iter().map(|r| r.label).collect();
        assert_eq!(labels, vec![-1.0, -1.0, 1.0]);
    }

    #[test]
    fn blanks_comments_duplicates() {
        let ds = parse_libsvm::<f64>("# header\n\n1 4:1 2:3 4:5 # tail\n   \n").unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.rows[0].idx, vec![1, 3]);
        assert_eq!(ds.rows[0].val, vec![3.0, 5.0]);
    }

    #[test]
    fn errors_carry_position() {
        match parse_libsvm::<f64>("1 1:1\n1 2:x\n") {
            Err(Error::Parse { line, column, .. }) => assert_eq!((line, column), (2, 5)),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse_libsvm::<f64>("1 0:1"), Err(Error::Parse { column: 3, .. })));
        assert!(matches!(parse_libsvm::<f64>("abc 1:1"), Err(Error::Parse { column: 1, .. })));
        assert!(matches!(parse_libsvm::<f64>("1 3"), Err(Error::Parse { .. })));
    }

    #[test]
    fn empty_input_cannot_be_split() {
        let ds = parse_libsvm::<f64>("").unwrap();
        assert!(ds.is_empty());
        assert!(matches!(partition_even(&ds, 1, 0), Err(Error::NotEnoughData { rows: 0, clients: 1 })));
    }

    #[test]
    fn floor_split() {
        let text: String = (0..10).map(|i| format!("{} {}:1 5:0.5\n", if i % 2 == 0 { 1 } else { 0 }, i % 4 + 1)).collect();
        let ds = parse_libsvm::<f64>(&text).unwrap();
        let p = partition_even(&ds, 3, 1).unwrap();
        assert_eq!(p.n(), 3);
        for c in &p.clients {
            match c.loss() {
                crate::problem::LocalLoss::Logistic { rows } => assert_eq!(rows.len(), 3),
                _ => unreachable!(),
            }
        }
        let single = partition_even(&ds, 1, 1).unwrap();
        assert_eq!(single.n(), 1);
    }
}
