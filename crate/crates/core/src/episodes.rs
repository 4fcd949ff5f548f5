//! Mother datasets and episodic task sampling.
//!
//! An episode picks `N` semantic classes from the mother dataset, hands them
//! the numeric labels `1..=N` in random order and splits `K + Q` examples per
//! class into a support and a query set. Numeric labels and semantic class ids
//! are 1-based throughout the public API.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::Matrix;

#[derive(Clone, Debug, PartialEq)]
pub struct SemanticClass {
    pub name: String,
    /// One example per row.
    pub examples: Matrix,
}

/// Pool of semantic classes that episodes are drawn from.
#[derive(Clone, Debug, PartialEq)]
pub struct MotherDataset {
    feature_dim: usize,
    classes: Vec<SemanticClass>,
}

impl MotherDataset {
    pub fn new(feature_dim: usize, classes: Vec<SemanticClass>) -> Result<Self> {
        for c in &classes {
            if c.examples.rows() > 0 && c.examples.cols() != feature_dim {
                return Err(Error::dim(
                    "MotherDataset::new",
                    format!("{feature_dim}-dimensional examples"),
                    format!("{} in class {:?}", c.examples.cols(), c.name),
                ));
            }
        }
        Ok(Self {
            feature_dim,
            classes,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    pub fn classes(&self) -> &[SemanticClass] {
        &self.classes
    }

    /// Class by 1-based semantic id.
    pub fn class(&self, id: usize) -> Option<&SemanticClass> {
        id.checked_sub(1).and_then(|i| self.classes.get(i))
    }

    pub fn total_examples(&self) -> usize {
        self.classes.iter().map(|c| c.examples.rows()).sum()
    }

    /// Splits into the first `first` classes and the rest. Semantic ids restart at 1 in each part.
    pub fn split(&self, first: usize) -> Result<(MotherDataset, MotherDataset)> {
        if first > self.classes.len() {
            return Err(Error::Config(format!(
                "cannot split {} classes at {first}",
                self.classes.len()
            )));
        }
        let (a, b) = self.classes.split_at(first);
        Ok((
            MotherDataset::new(self.feature_dim, a.to_vec())?,
            MotherDataset::new(self.feature_dim, b.to_vec())?,
        ))
    }
}

/// How episodes choose their cardinality and size.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeSpec {
    pub cardinality_pool: Vec<usize>,
    pub shots: usize,
    pub queries: usize,
    /// Fixed-way mode: every episode has exactly this many classes.
    pub fixed_n: Option<usize>,
}

impl Default for EpisodeSpec {
    fn default() -> Self {
        Self {
            cardinality_pool: vec![3, 5, 7, 9],
            shots: 5,
            queries: 15,
            fixed_n: None,
        }
    }
}

impl EpisodeSpec {
    pub fn fixed(n: usize, shots: usize, queries: usize) -> Self {
        Self {
            cardinality_pool: vec![n],
            shots,
            queries,
            fixed_n: Some(n),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.shots == 0 || self.queries == 0 {
            return Err(Error::Config(format!(
                "shots and queries must be >= 1 (got K={}, Q={})",
                self.shots, self.queries
            )));
        }
        if self.fixed_n.is_none() && self.cardinality_pool.is_empty() {
            return Err(Error::Config("cardinality pool is empty".into()));
        }
        if self.fixed_n == Some(0) || self.cardinality_pool.contains(&0) {
            return Err(Error::Config("task cardinality must be >= 1".into()));
        }
        Ok(())
    }

    /// Largest cardinality any episode can have.
    pub fn max_cardinality(&self) -> usize {
        self.fixed_n
            .unwrap_or_else(|| self.cardinality_pool.iter().copied().max().unwrap_or(0))
    }

    /// Binds the spec to a model of output width `width`.
    pub fn check_width(&self, width: usize) -> Result<()> {
        self.validate()?;
        let max = self.max_cardinality();
        if max > width {
            return Err(Error::Config(format!(
                "task cardinality {max} exceeds output width {width}"
            )));
        }
        Ok(())
    }

    /// Cardinalities a validation pass should cover.
    pub fn cardinalities(&self) -> Vec<usize> {
        match self.fixed_n {
            Some(n) => vec![n],
            None => {
                let mut p = self.cardinality_pool.clone();
                p.sort_unstable();
                p.dedup();
                p
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSet {
    pub x: Matrix,
    /// Numeric labels, 1-based.
    pub labels: Vec<usize>,
    /// `(semantic id, row within that class)` for every row of `x`.
    pub sources: Vec<(usize, usize)>,
}

impl LabeledSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// One few-shot episode.
#[derive(Clone, Debug, PartialEq)]
pub struct Task {
    pub n: usize,
    pub support: LabeledSet,
    pub query: LabeledSet,
    /// `numeric_to_semantic[label - 1]` is the semantic id behind numeric `label`.
    pub numeric_to_semantic: Vec<usize>,
}

impl Task {
    pub fn semantic_of(&self, label: usize) -> usize {
        self.numeric_to_semantic[label - 1]
    }

    /// Semantic id of every row in a labeled set of this task.
    pub fn semantic_labels(&self, set: &LabeledSet) -> Vec<usize> {
        set.labels.iter().map(|&l| self.semantic_of(l)).collect()
    }
}

pub fn sample_cardinality<R: Rng + ?Sized>(spec: &EpisodeSpec, rng: &mut R) -> Result<usize> {
    if let Some(n) = spec.fixed_n {
        return Ok(n);
    }
    if let [n] = spec.cardinality_pool[..] {
        return Ok(n);
    }
    spec.cardinality_pool
        .choose(rng)
        .copied()
        .ok_or_else(|| Error::Config("cardinality pool is empty".into()))
}

pub fn sample_task<R: Rng + ?Sized>(
    ds: &MotherDataset,
    n: usize,
    shots: usize,
    queries: usize,
    rng: &mut R,
) -> Result<Task> {
    if n == 0 {
        return Err(Error::Sampling("cannot sample a task with zero classes".into()));
    }
    let m = ds.class_count();
    if m < n {
        return Err(Error::Sampling(format!(
            "dataset has {m} classes, task needs {n}"
        )));
    }
    let per_class = shots + queries;

    // A uniformly ordered sample without replacement: position i gets label i+1.
    let mut ids: Vec<usize> = (1..=m).collect();
    let (chosen, _) = ids.partial_shuffle(rng, n);
    let chosen = chosen.to_vec();

    for &id in &chosen {
        let c = ds.class(id).expect("id in range");
        if c.examples.rows() < per_class {
            return Err(Error::Sampling(format!(
                "class {id} ({:?}) has {} examples, episode needs {per_class}",
                c.name,
                c.examples.rows()
            )));
        }
    }

    let d = ds.feature_dim();
    let mut s_rows = Vec::with_capacity(n * shots * d);
    let mut q_rows = Vec::with_capacity(n * queries * d);
    let mut s_labels = Vec::with_capacity(n * shots);
    let mut q_labels = Vec::with_capacity(n * queries);
    let mut s_src = Vec::with_capacity(n * shots);
    let mut q_src = Vec::with_capacity(n * queries);

    for (pos, &id) in chosen.iter().enumerate() {
        let label = pos + 1;
        let examples = &ds.class(id).unwrap().examples;
        let mut rows: Vec<usize> = (0..examples.rows()).collect();
        let (picked, _) = rows.partial_shuffle(rng, per_class);
        for (i, &r) in picked.iter().enumerate() {
            if i < shots {
                s_rows.extend_from_slice(examples.row(r));
                s_labels.push(label);
                s_src.push((id, r));
            } else {
                q_rows.extend_from_slice(examples.row(r));
                q_labels.push(label);
                q_src.push((id, r));
            }
        }
    }

    Ok(Task {
        n,
        support: LabeledSet {
            x: Matrix::from_vec(n * shots, d, s_rows)?,
            labels: s_labels,
            sources: s_src,
        },
        query: LabeledSet {
            x: Matrix::from_vec(n * queries, d, q_rows)?,
            labels: q_labels,
            sources: q_src,
        },
        numeric_to_semantic: chosen,
    })
}

/// Independent tasks for one meta-batch; each draws its own cardinality.
pub fn batch_tasks<R: Rng + ?Sized>(
    ds: &MotherDataset,
    spec: &EpisodeSpec,
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<Task>> {
    (0..batch_size)
        .map(|_| {
            let n = sample_cardinality(spec, rng)?;
            sample_task(ds, n, spec.shots, spec.queries, rng)
        })
        .collect()
}
