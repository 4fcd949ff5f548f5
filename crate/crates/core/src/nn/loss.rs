use crate::error::{Error, Result};
use crate::nn::Matrix;

/// Tolerance on a target row's total probability mass.
pub const TARGET_SUM_TOLERANCE: f64 = 1e-9;

/// Sums a slice in a canonical (sorted) order so the result depends only on
/// the multiset of values, never on their positions.
pub(crate) fn order_free_sum(values: &mut [f64]) -> f64 {
    values.sort_unstable_by(f64::total_cmp);
    values.iter().sum()
}

/// Log-sum-exp with max subtraction. Returns `(max, ln Σ exp(z − max))`.
fn stable_lse(row: &[f64], scratch: &mut Vec<f64>) -> (f64, f64) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    scratch.clear();
    scratch.extend(row.iter().map(|&z| (z - max).exp()));
    (max, order_free_sum(scratch).ln())
}

/// Row-wise softmax, stabilized by max subtraction.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(logits.rows(), logits.cols());
    let mut scratch = Vec::with_capacity(logits.cols());
    for r in 0..logits.rows() {
        let row = logits.row(r);
        let (max, lse) = stable_lse(row, &mut scratch);
        for (o, &z) in out.row_mut(r).iter_mut().zip(row) {
            *o = (z - max - lse).exp();
        }
    }
    out
}

pub fn softmax_vec(v: &[f64]) -> Vec<f64> {
    let m = Matrix::from_vec(1, v.len(), v.to_vec()).expect("single row");
    softmax_rows(&m).into_vec()
}

/// Checks that every row is a probability distribution.
pub fn validate_targets(targets: &Matrix) -> Result<()> {
    for (r, row) in targets.iter_rows().enumerate() {
        if let Some(bad) = row.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::Validation(format!(
                "target row {r} has invalid entry {bad}"
            )));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > TARGET_SUM_TOLERANCE {
            return Err(Error::Validation(format!(
                "target row {r} sums to {sum}, not 1"
            )));
        }
    }
    Ok(())
}

/// One-hot rows for 1-based labels over `classes` columns.
pub fn one_hot(labels: &[usize], classes: usize) -> Result<Matrix> {
    let mut m = Matrix::zeros(labels.len(), classes);
    for (r, &l) in labels.iter().enumerate() {
        if l == 0 || l > classes {
            return Err(Error::Domain(format!(
                "label {l} outside 1..={classes}"
            )));
        }
        m.set(r, l - 1, 1.0);
    }
    Ok(m)
}

/// Mean soft-target cross-entropy and its gradient with respect to the logits.
///
/// `loss = mean_b −Σ_k t_bk · log softmax(z_b)_k`, `dlogits = (softmax − t) / B`.
/// Per-row reductions are order-free, so permuting the columns of both
/// `logits` and `targets` leaves the loss bit-identical.
pub fn softmax_cross_entropy(logits: &Matrix, targets: &Matrix) -> Result<(f64, Matrix)> {
    if logits.shape() != targets.shape() {
        return Err(Error::dim(
            "softmax_cross_entropy",
            format!("targets {:?}", logits.shape()),
            format!("{:?}", targets.shape()),
        ));
    }
    validate_targets(targets)?;
    let batch = logits.rows();
    if batch == 0 {
        return Ok((0.0, Matrix::zeros(0, logits.cols())));
    }
    let inv_b = 1.0 / batch as f64;
    let mut dlogits = Matrix::zeros(batch, logits.cols());
    let mut scratch = Vec::with_capacity(logits.cols());
    let mut terms = Vec::with_capacity(logits.cols());
    let mut total = 0.0;
    for r in 0..batch {
        let z = logits.row(r);
        let t = targets.row(r);
        let (max, lse) = stable_lse(z, &mut scratch);
        terms.clear();
        for ((d, &zk), &tk) in dlogits.row_mut(r).iter_mut().zip(z).zip(t) {
            let log_p = zk - max - lse;
            *d = (log_p.exp() - tk) * inv_b;
            if tk != 0.0 {
                terms.push(-tk * log_p);
            }
        }
        total += order_free_sum(&mut terms);
    }
    Ok((total * inv_b, dlogits))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_one_hot_target() {
        let logits = Matrix::zeros(1, 4);
        let t = one_hot(&[2], 4).unwrap();
        let (loss, _) = softmax_cross_entropy(&logits, &t).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-12);
        assert!((loss - 1.386294).abs() < 1e-6);
    }

    #[test]
    fn half_half_target() {
        // oracle: −0.5·ln σ(1) − 0.5·ln σ(−1) with σ the logistic function
        let s1 = 1.0 / (1.0 + (-1.0f64).exp());
        let s2 = 1.0 - s1;
        let oracle = -0.5 * s1.ln() - 0.5 * s2.ln();
        let logits = Matrix::from_rows(&[[1.0, 0.0]]).unwrap();
        let t = Matrix::from_rows(&[[0.5, 0.5]]).unwrap();
        let (loss, _) = softmax_cross_entropy(&logits, &t).unwrap();
        assert!((loss - oracle).abs() < 1e-14);
        assert!((loss - 0.813262).abs() < 1e-6);
    }

    #[test]
    fn saturated_target() {
        let logits = Matrix::from_rows(&[[50.0, 0.0, 0.0]]).unwrap();
        let t = one_hot(&[1], 3).unwrap();
        let (loss, _) = softmax_cross_entropy(&logits, &t).unwrap();
        assert!(loss < 1e-10);
        assert!(loss >= 0.0);
    }

    #[test]
    fn rejects_non_distribution_targets() {
        let logits = Matrix::zeros(1, 2);
        let t = Matrix::from_rows(&[[0.5, 0.6]]).unwrap();
        assert!(matches!(
            softmax_cross_entropy(&logits, &t),
            Err(Error::Validation(_))
        ));
        let t = Matrix::from_rows(&[[1.5, -0.5]]).unwrap();
        assert!(softmax_cross_entropy(&logits, &t).is_err());
    }

    #[test]
    fn gradient_is_softmax_minus_target_over_batch() {
        let logits = Matrix::from_rows(&[[0.3, -1.2, 2.0], [1.0, 1.0, 1.0]]).unwrap();
        let t = one_hot(&[3, 1], 3).unwrap();
        let (_, d) = softmax_cross_entropy(&logits, &t).unwrap();
        let p = softmax_rows(&logits);
        for r in 0..2 {
            for c in 0..3 {
                let want = (p.get(r, c) - t.get(r, c)) / 2.0;
                assert!((d.get(r, c) - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn softmax_rows_sum_to_one_for_large_logits() {
        let logits = Matrix::from_rows(&[[1e3, -1e3, 999.5, 0.0], [-1e3, -1e3, -1e3, -999.0]]).unwrap();
        let p = softmax_rows(&logits);
        for row in p.iter_rows() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|v| v.is_finite()));
        }
    }
}
