use crate::error::{Error, Result};

/// Anything that exposes its trainable state as an ordered list of flat `f64` buffers.
///
/// Block order is the declaration order used by gradients, SGD and checkpoints.
pub trait Parameters {
    fn param_blocks(&self) -> Vec<&[f64]>;
    fn param_blocks_mut(&mut self) -> Vec<&mut [f64]>;

    /// Human-readable block names, parallel to [`Parameters::param_blocks`].
    fn block_names(&self) -> Vec<String> {
        (0..self.param_blocks().len()).map(|i| format!("block{i}")).collect()
    }

    fn param_count(&self) -> usize {
        self.param_blocks().iter().map(|b| b.len()).sum()
    }
}

impl Parameters for Vec<f64> {
    fn param_blocks(&self) -> Vec<&[f64]> {
        vec![self.as_slice()]
    }

    fn param_blocks_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.as_mut_slice()]
    }
}

/// One gradient buffer per parameter buffer, shape-matched to its owner.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet {
    pub blocks: Vec<Vec<f64>>,
}

impl GradientSet {
    pub fn new(blocks: Vec<Vec<f64>>) -> Self {
        Self { blocks }
    }

    pub fn zeros_like<P: Parameters + ?Sized>(params: &P) -> Self {
        Self {
            blocks: params.param_blocks().iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn concat(mut self, other: GradientSet) -> Self {
        self.blocks.extend(other.blocks);
        self
    }

    pub fn check_matches<P: Parameters + ?Sized>(&self, params: &P) -> Result<()> {
        let owner = params.param_blocks();
        if owner.len() != self.blocks.len() {
            return Err(Error::dim("GradientSet", owner.len(), self.blocks.len()));
        }
        for (i, (p, g)) in owner.iter().zip(&self.blocks).enumerate() {
            if p.len() != g.len() {
                return Err(Error::dim(
                    "GradientSet",
                    format!("block {i} with {} entries", p.len()),
                    g.len(),
                ));
            }
        }
        Ok(())
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, other: &GradientSet, scale: f64) -> Result<()> {
        if self.blocks.len() != other.blocks.len() {
            return Err(Error::dim("GradientSet::add_scaled", self.blocks.len(), other.blocks.len()));
        }
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            if a.len() != b.len() {
                return Err(Error::dim("GradientSet::add_scaled", a.len(), b.len()));
            }
            for (x, &y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        for b in &mut self.blocks {
            b.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.blocks.iter().flatten().all(|v| v.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.blocks.iter().flatten().all(|&v| v == 0.0)
    }

    /// Largest per-coordinate relative error against `other`, per block.
    pub fn max_relative_errors(&self, other: &GradientSet) -> Vec<f64> {
        self.blocks
            .iter()
            .zip(&other.blocks)
            .map(|(a, b)| {
                a.iter()
                    .zip(b)
                    .map(|(&x, &y)| relative_error(x, y))
                    .fold(0.0, f64::max)
            })
            .collect()
    }
}

/// Denominator floor for [`relative_error`]; coordinates whose gradient is
/// below this are compared in absolute terms.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

pub fn relative_error(a: f64, b: f64) -> f64 {
    let diff = (a - b).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / a.abs().max(b.abs()).max(RELATIVE_ERROR_FLOOR)
}

/// Plain SGD: `θ ← θ − lr·g`.
pub fn sgd_step<P: Parameters + ?Sized>(params: &mut P, grads: &GradientSet, lr: f64) -> Result<()> {
    if !(lr >= 0.0) {
        return Err(Error::Validation(format!("learning rate must be >= 0, got {lr}")));
    }
    grads.check_matches(params)?;
    if lr == 0.0 {
        return Ok(());
    }
    for (p, g) in params.param_blocks_mut().into_iter().zip(&grads.blocks) {
        for (w, &d) in p.iter_mut().zip(g) {
            *w -= lr * d;
        }
    }
    Ok(())
}

/// Central-difference gradient `(f(θ+ε) − f(θ−ε)) / 2ε`, one coordinate at a time.
pub fn finite_diff_grad<P, F>(mut loss_fn: F, params: &P, eps: f64) -> GradientSet
where
    P: Parameters + Clone,
    F: FnMut(&P) -> f64,
{
    let mut probe = params.clone();
    let shapes: Vec<usize> = params.param_blocks().iter().map(|b| b.len()).collect();
    let mut blocks = Vec::with_capacity(shapes.len());
    for (bi, &len) in shapes.iter().enumerate() {
        let mut g = vec![0.0; len];
        for (i, gi) in g.iter_mut().enumerate() {
            let orig = probe.param_blocks()[bi][i];
            probe.param_blocks_mut()[bi][i] = orig + eps;
            let plus = loss_fn(&probe);
            probe.param_blocks_mut()[bi][i] = orig - eps;
            let minus = loss_fn(&probe);
            probe.param_blocks_mut()[bi][i] = orig;
            *gi = (plus - minus) / (2.0 * eps);
        }
        blocks.push(g);
    }
    GradientSet { blocks }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finite_diff_square() {
        let g = finite_diff_grad(|p: &Vec<f64>| p[0] * p[0], &vec![3.0], 1e-5);
        assert!((g.blocks[0][0] - 6.0).abs() < 1e-6);
    }

    #[test]
    fn finite_diff_sine() {
        let g = finite_diff_grad(|p: &Vec<f64>| p[0].sin(), &vec![0.0], 1e-5);
        assert!((g.blocks[0][0] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn sgd_basic_update() {
        let mut p = vec![1.0];
        sgd_step(&mut p, &GradientSet::new(vec![vec![0.5]]), 0.1).unwrap();
        assert!((p[0] - 0.95).abs() < 1e-15);
    }

    #[test]
    fn sgd_zero_lr_is_identity() {
        let mut p = vec![1.0, -2.5, 3.25];
        let before = p.clone();
        sgd_step(&mut p, &GradientSet::new(vec![vec![9.0, 9.0, 9.0]]), 0.0).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn sgd_two_half_steps_on_quadratic() {
        // f(θ) = θ²/2 has gradient θ; two steps at 0.5 from 1 give 0.5 then 0.25
        let mut p = vec![1.0];
        for _ in 0..2 {
            let g = GradientSet::new(vec![vec![p[0]]]);
            sgd_step(&mut p, &g, 0.5).unwrap();
        }
        assert_eq!(p[0], 0.25);
    }

    #[test]
    fn sgd_rejects_shape_mismatch_and_negative_lr() {
        let mut p = vec![1.0, 2.0];
        assert!(matches!(
            sgd_step(&mut p, &GradientSet::new(vec![vec![1.0]]), 0.1),
            Err(Error::Dimension { .. })
        ));
        assert!(sgd_step(&mut p, &GradientSet::new(vec![vec![1.0, 1.0]]), -1.0).is_err());
    }
}
