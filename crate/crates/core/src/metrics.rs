//! Accuracy summaries, training curves and the start-up stall rule.

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub n: usize,
    pub episodes: usize,
    pub mean: f64,
    /// Sample standard deviation of per-episode accuracy.
    pub std: f64,
    /// Half-width of the normal 95% interval on the mean.
    pub ci95: f64,
    pub per_episode: Vec<f64>,
}

impl EvalSummary {
    pub fn from_accuracies(n: usize, per_episode: Vec<f64>) -> Self {
        let (mean, std) = mean_std(&per_episode);
        let ci95 = if per_episode.is_empty() {
            0.0
        } else {
            1.96 * std / (per_episode.len() as f64).sqrt()
        };
        Self {
            n,
            episodes: per_episode.len(),
            mean,
            std,
            ci95,
            per_episode,
        }
    }

    pub fn chance(&self) -> f64 {
        1.0 / self.n as f64
    }
}

/// Mean and sample (n − 1) standard deviation. Empty input gives zeros.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Pooled standard deviation of two equally sized groups.
pub fn pooled_std(a: &[f64], b: &[f64]) -> f64 {
    let (_, sa) = mean_std(a);
    let (_, sb) = mean_std(b);
    ((sa * sa + sb * sb) / 2.0).sqrt()
}

/// One validation checkpoint of a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    /// Mean outer loss since the previous checkpoint.
    pub train_loss: f64,
    /// `(N, accuracy)` for every validated cardinality, ascending in `N`.
    pub val_acc: Vec<(usize, f64)>,
    pub val_acc_sum: f64,
}

impl CurvePoint {
    /// Summed chance level over the validated cardinalities.
    pub fn chance_sum(&self) -> f64 {
        self.val_acc.iter().map(|&(n, _)| 1.0 / n as f64).sum()
    }
}

/// True when the last `window` accuracies all sit within `eps` of `chance`.
///
/// Applied to a prefix of a curve this tells whether training was stalled at
/// that checkpoint. Windows shorter than two are treated as two.
pub fn stall_detect(curve: &[(usize, f64)], window: usize, eps: f64, chance: f64) -> bool {
    let window = window.max(2);
    if curve.len() < window {
        return false;
    }
    curve[curve.len() - window..]
        .iter()
        .all(|&(_, acc)| (acc - chance).abs() <= eps)
}
