//! Semantic-class supervision for gradient-based models: an auxiliary
//! `C`-way head on encoder features, its weighted contribution to the total
//! loss, and mixup across the classes of an episode.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Beta, Distribution};

use crate::episodes::Task;
use crate::error::{Error, Result};
use crate::nn::{softmax_cross_entropy, GradientSet, LinearHead, Matrix};

/// Numeric labels handed to mixed samples.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MixLabelMode {
    /// All mixed samples of an episode share one extra label `N + 1`.
    Shared,
    /// Every distinct unordered class pair gets its own extra label.
    PerPair,
}

impl fmt::Display for MixLabelMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Shared => "shared",
            Self::PerPair => "per-pair",
        })
    }
}

impl FromStr for MixLabelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "shared" => Ok(Self::Shared),
            "per-pair" => Ok(Self::PerPair),
            other => Err(Error::Config(format!(
                "unknown mixup label mode {other:?} (expected shared or per-pair)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SemanticConfig {
    /// Semantic class count `C` of the training split.
    pub classes: usize,
    /// Weight of the semantic loss in the total loss.
    pub lambda: f64,
    pub mixup: bool,
    pub beta_alpha: f64,
    /// Mixed samples per episode; `None` means one per shot.
    pub mix_count: Option<usize>,
    pub mix_labels: MixLabelMode,
    /// Whether the semantic loss reaches the encoder at the outer step.
    /// It never does inside the inner loop.
    pub encoder_gradient: bool,
}

impl SemanticConfig {
    pub fn new(classes: usize, lambda: f64) -> Self {
        Self {
            classes,
            lambda,
            mixup: false,
            beta_alpha: 0.5,
            mix_count: None,
            mix_labels: MixLabelMode::Shared,
            encoder_gradient: true,
        }
    }

    /// λ used with MAML: 0.1 for 1-shot, 0.5 otherwise.
    pub fn maml_lambda(shots: usize) -> f64 {
        if shots <= 1 {
            0.1
        } else {
            0.5
        }
    }

    /// λ used with ProtoNet: 0.01 for 1-shot, 0.1 otherwise.
    pub fn proto_lambda(shots: usize) -> f64 {
        if shots <= 1 {
            0.01
        } else {
            0.1
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.classes == 0 {
            return Err(Error::Config("semantic class count must be >= 1".into()));
        }
        if !(self.beta_alpha > 0.0) {
            return Err(Error::Config(format!(
                "mixup beta parameter must be > 0, got {}",
                self.beta_alpha
            )));
        }
        Ok(())
    }
}

pub struct SemanticLoss {
    pub loss: f64,
    /// `[dW, db]` of the semantic head.
    pub head_grads: GradientSet,
    /// Gradient with respect to the input features. Callers that treat the
    /// features as detached simply drop it.
    pub dfeatures: Matrix,
}

/// Soft-target cross-entropy of the semantic head.
pub fn semantic_loss(head: &LinearHead, features: &Matrix, targets: &Matrix) -> Result<SemanticLoss> {
    let logits = head.logits(features)?;
    let (loss, dlogits) = softmax_cross_entropy(&logits, targets)?;
    let (head_grads, dfeatures) = head.backward(features, &dlogits)?;
    Ok(SemanticLoss {
        loss,
        head_grads,
        dfeatures,
    })
}

/// `L_total = L_original + λ·L_semantic`
pub fn combine_losses(original: f64, semantic: f64, lambda: f64) -> f64 {
    if lambda == 0.0 {
        return original;
    }
    original + lambda * semantic
}

/// Mixing ratio `m ~ Beta(α, α)`. For α = ½ this is the arcsine law, sampled
/// exactly as `sin²(π·u/2)`.
pub fn sample_mix_ratio<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> Result<f64> {
    if alpha == 0.5 {
        let u: f64 = rng.random();
        let s = (std::f64::consts::FRAC_PI_2 * u).sin();
        return Ok(s * s);
    }
    let beta = Beta::new(alpha, alpha)
        .map_err(|e| Error::Config(format!("invalid mixup beta parameter {alpha}: {e}")))?;
    Ok(beta.sample(rng))
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixedBatch {
    /// Blended rows `m·x_a + (1−m)·x_b`.
    pub inputs: Matrix,
    /// Rows on the probability simplex over `C` semantic classes.
    pub semantic_targets: Matrix,
    pub numeric_labels: Vec<usize>,
    pub mix_ratios: Vec<f64>,
    /// Support row indices `(a, b)` each blend came from.
    pub sources: Vec<(usize, usize)>,
    /// Task cardinality once the extra labels are counted.
    pub cardinality: usize,
}

/// Blends support rows of two different numeric classes.
///
/// Returns `Ok(None)` (and logs a notice) when the task has fewer than two
/// classes.
pub fn mixup_batch<R: Rng + ?Sized>(
    task: &Task,
    semantic_classes: usize,
    count: usize,
    beta_alpha: f64,
    mode: MixLabelMode,
    rng: &mut R,
) -> Result<Option<MixedBatch>> {
    if task.n < 2 {
        log::info!("mixup skipped: task has {} class(es)", task.n);
        return Ok(None);
    }
    if let Some(&bad) = task.numeric_to_semantic.iter().find(|&&s| s > semantic_classes) {
        return Err(Error::Config(format!(
            "semantic class {bad} exceeds semantic head width {semantic_classes}"
        )));
    }
    let mut rows_of: Vec<Vec<usize>> = vec![Vec::new(); task.n];
    for (r, &l) in task.support.labels.iter().enumerate() {
        rows_of[l - 1].push(r);
    }

    let d = task.support.x.cols();
    let mut inputs = Matrix::zeros(count, d);
    let mut semantic_targets = Matrix::zeros(count, semantic_classes);
    let mut numeric_labels = Vec::with_capacity(count);
    let mut mix_ratios = Vec::with_capacity(count);
    let mut sources = Vec::with_capacity(count);
    let mut pair_labels: HashMap<(usize, usize), usize> = HashMap::new();

    for i in 0..count {
        let a = rng.random_range(0..task.n);
        let mut b = rng.random_range(0..task.n - 1);
        if b >= a {
            b += 1;
        }
        let ra = rows_of[a][rng.random_range(0..rows_of[a].len())];
        let rb = rows_of[b][rng.random_range(0..rows_of[b].len())];
        let m = sample_mix_ratio(beta_alpha, rng)?;

        let xa = task.support.x.row(ra);
        let xb = task.support.x.row(rb);
        for ((o, &va), &vb) in inputs.row_mut(i).iter_mut().zip(xa).zip(xb) {
            *o = m * va + (1.0 - m) * vb;
        }
        let (sa, sb) = (task.numeric_to_semantic[a], task.numeric_to_semantic[b]);
        semantic_targets.set(i, sa - 1, m);
        semantic_targets.set(i, sb - 1, 1.0 - m);

        let label = match mode {
            MixLabelMode::Shared => task.n + 1,
            MixLabelMode::PerPair => {
                let key = (a.min(b), a.max(b));
                let next = task.n + pair_labels.len() + 1;
                *pair_labels.entry(key).or_insert(next)
            }
        };
        numeric_labels.push(label);
        mix_ratios.push(m);
        sources.push((ra, rb));
    }

    let cardinality = match mode {
        MixLabelMode::Shared => task.n + 1,
        MixLabelMode::PerPair => task.n + pair_labels.len(),
    };
    Ok(Some(MixedBatch {
        inputs,
        semantic_targets,
        numeric_labels,
        mix_ratios,
        sources,
        cardinality,
    }))
}
