//! Label-to-node assignments for a fixed-width output head.
//!
//! A task with `N` numeric labels on a head of `O` nodes gets `J = ⌊O/N⌋`
//! disjoint index vectors `s_1..s_J`; entry `i` of `s_j` is the (1-based)
//! output node that speaks for numeric label `i + 1` under assignment `j`.
//! Training sums the cross-entropy of every assignment; inference ensembles
//! the `J` extracted logit vectors.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{softmax_cross_entropy, softmax_rows, Matrix};

/// Uniformly random ordering of `1..=n`.
pub fn random_permutation<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut p: Vec<usize> = (1..=n).collect();
    p.shuffle(rng);
    p
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AssignmentSet {
    width: usize,
    cardinality: usize,
    vectors: Vec<Vec<usize>>,
}

impl AssignmentSet {
    /// One random permutation of the `width` nodes, chopped into `⌊width/n⌋` blocks of `n`.
    pub fn generate<R: Rng + ?Sized>(width: usize, n: usize, rng: &mut R) -> Result<Self> {
        check_sizes(width, n)?;
        let perm = random_permutation(width, rng);
        let j = width / n;
        let vectors = perm[..j * n].chunks(n).map(<[usize]>::to_vec).collect();
        Ok(Self {
            width,
            cardinality: n,
            vectors,
        })
    }

    /// Builds a set from explicit vectors, checking every invariant.
    pub fn from_vectors(width: usize, n: usize, vectors: Vec<Vec<usize>>) -> Result<Self> {
        let set = Self {
            width,
            cardinality: n,
            vectors,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        check_sizes(self.width, self.cardinality)?;
        let j = self.width / self.cardinality;
        if self.vectors.len() != j {
            return Err(Error::Domain(format!(
                "expected {j} assignments for O={} N={}, got {}",
                self.width,
                self.cardinality,
                self.vectors.len()
            )));
        }
        let mut used = vec![false; self.width + 1];
        for (k, s) in self.vectors.iter().enumerate() {
            if s.len() != self.cardinality {
                return Err(Error::Domain(format!(
                    "assignment {} has {} entries, expected {}",
                    k + 1,
                    s.len(),
                    self.cardinality
                )));
            }
            for &node in s {
                if node == 0 || node > self.width {
                    return Err(Error::Domain(format!(
                        "node {node} outside 1..={}",
                        self.width
                    )));
                }
                if std::mem::replace(&mut used[node], true) {
                    return Err(Error::Domain(format!("node {node} assigned twice")));
                }
            }
        }
        Ok(())
    }

    /// Output width `O`.
    pub fn width(&self) -> usize {
        self.width
    }

    /// Task cardinality `N`.
    pub fn cardinality(&self) -> usize {
        self.cardinality
    }

    /// Number of assignments `J`.
    pub fn count(&self) -> usize {
        self.vectors.len()
    }

    pub fn vectors(&self) -> &[Vec<usize>] {
        &self.vectors
    }

    /// Nodes that no assignment uses, ascending.
    pub fn unassigned(&self) -> Vec<usize> {
        let mut used = vec![false; self.width + 1];
        for &node in self.vectors.iter().flatten() {
            used[node] = true;
        }
        (1..=self.width).filter(|&n| !used[n]).collect()
    }

    /// Reorders label positions inside every vector: entry `i` of the result is
    /// entry `perm[i]` (1-based) of the original.
    pub fn relabeled(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.cardinality {
            return Err(Error::dim("AssignmentSet::relabeled", self.cardinality, perm.len()));
        }
        let vectors = self
            .vectors
            .iter()
            .map(|s| perm.iter().map(|&p| s[p - 1]).collect())
            .collect();
        Self::from_vectors(self.width, self.cardinality, vectors)
    }
}

fn check_sizes(width: usize, n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::Domain("task cardinality must be >= 1".into()));
    }
    if n > width {
        return Err(Error::Domain(format!(
            "task cardinality {n} exceeds output width {width}"
        )));
    }
    Ok(())
}

/// `O N J ; s1 ; s2 ; ...` with 1-based, space-separated entries.
impl fmt::Display for AssignmentSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.width, self.cardinality, self.vectors.len())?;
        for s in &self.vectors {
            f.write_str(" ;")?;
            for node in s {
                write!(f, " {node}")?;
            }
        }
        Ok(())
    }
}

impl FromStr for AssignmentSet {
    type Err = Error;

    fn from_str(line: &str) -> Result<Self> {
        let bad = |what: &str| Error::Validation(format!("assignment line {line:?}: {what}"));
        let mut parts = line.split(';');
        let head: Vec<usize> = parts
            .next()
            .unwrap_or("")
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| bad("non-numeric header")))
            .collect::<Result<_>>()?;
        let [width, n, j] = head[..] else {
            return Err(bad("header must be `O N J`"));
        };
        let vectors: Vec<Vec<usize>> = parts
            .map(|p| {
                p.split_whitespace()
                    .map(|t| t.parse().map_err(|_| bad("non-numeric node")))
                    .collect()
            })
            .collect::<Result<_>>()?;
        if vectors.len() != j {
            return Err(bad("vector count disagrees with J"));
        }
        Self::from_vectors(width, n, vectors)
    }
}

/// `out[i] = v[s[i]]` with 1-based `s`.
pub fn extract(s: &[usize], v: &[f64]) -> Result<Vec<f64>> {
    s.iter()
        .map(|&i| {
            i.checked_sub(1)
                .and_then(|k| v.get(k).copied())
                .ok_or_else(|| Error::Domain(format!("index {i} outside 1..={}", v.len())))
        })
        .collect()
}

/// Applies [`extract`] to every row of `logits`.
pub fn extract_rows(s: &[usize], logits: &Matrix) -> Result<Matrix> {
    let mut out = Matrix::zeros(logits.rows(), s.len());
    for r in 0..logits.rows() {
        let row = extract(s, logits.row(r))?;
        out.row_mut(r).copy_from_slice(&row);
    }
    Ok(out)
}

fn check_logits(aset: &AssignmentSet, logits: &Matrix) -> Result<()> {
    if logits.cols() != aset.width() {
        return Err(Error::dim("assignment logits", aset.width(), logits.cols()));
    }
    Ok(())
}

/// Sum over assignments of the soft-target cross-entropy on the extracted
/// logits, and its gradient on the full `B×O` logit matrix. Columns of
/// unassigned nodes get exactly zero gradient.
pub fn any_way_loss(aset: &AssignmentSet, logits: &Matrix, targets: &Matrix) -> Result<(f64, Matrix)> {
    check_logits(aset, logits)?;
    if targets.shape() != (logits.rows(), aset.cardinality()) {
        return Err(Error::dim(
            "any_way_loss targets",
            format!("({}, {})", logits.rows(), aset.cardinality()),
            format!("{:?}", targets.shape()),
        ));
    }
    let mut loss = 0.0;
    let mut dlogits = Matrix::zeros(logits.rows(), logits.cols());
    for s in aset.vectors() {
        let sub = extract_rows(s, logits)?;
        let (l, d) = softmax_cross_entropy(&sub, targets)?;
        loss += l;
        for r in 0..logits.rows() {
            let src = d.row(r);
            let dst = dlogits.row_mut(r);
            for (&node, &g) in s.iter().zip(src) {
                dst[node - 1] = g;
            }
        }
    }
    Ok((loss, dlogits))
}

/// How per-assignment logit vectors are combined at inference.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnsembleMethod {
    /// Sum of raw logits.
    Original,
    /// Sum of per-assignment softmax outputs.
    Softmax,
    /// Elementwise maximum across assignments.
    Max,
}

impl EnsembleMethod {
    pub const ALL: [EnsembleMethod; 3] = [Self::Original, Self::Softmax, Self::Max];

    pub fn name(self) -> &'static str {
        match self {
            Self::Original => "original",
            Self::Softmax => "softmax",
            Self::Max => "max",
        }
    }
}

impl fmt::Display for EnsembleMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnsembleMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "original" => Ok(Self::Original),
            "softmax" => Ok(Self::Softmax),
            "max" => Ok(Self::Max),
            other => Err(Error::Config(format!(
                "unknown ensemble method {other:?} (expected original, softmax or max)"
            ))),
        }
    }
}

/// Combines the `J` extracted logit blocks into one `B×N` score matrix.
pub fn ensembled_logit(aset: &AssignmentSet, logits: &Matrix, method: EnsembleMethod) -> Result<Matrix> {
    check_logits(aset, logits)?;
    let mut acc: Option<Matrix> = None;
    for s in aset.vectors() {
        let mut part = extract_rows(s, logits)?;
        if method == EnsembleMethod::Softmax {
            part = softmax_rows(&part);
        }
        acc = Some(match acc {
            None => part,
            Some(mut a) => {
                match method {
                    EnsembleMethod::Original | EnsembleMethod::Softmax => a.add_assign(&part)?,
                    EnsembleMethod::Max => {
                        for (x, &y) in a.data_mut().iter_mut().zip(part.data()) {
                            *x = x.max(y);
                        }
                    }
                }
                a
            }
        });
    }
    Ok(acc.expect("validated sets have J >= 1"))
}

/// 1-based argmax per row; ties go to the lowest label.
pub fn predict(scores: &Matrix) -> Vec<usize> {
    scores
        .iter_rows()
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best + 1
        })
        .collect()
}

/// Fraction of rows where `predicted == labels`.
pub fn accuracy(predicted: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = predicted.iter().zip(labels).filter(|(p, l)| p == l).count();
    hits as f64 / labels.len() as f64
}
