//! Dense network substrate: matrices, a tanh MLP encoder, linear heads,
//! soft-target cross-entropy, a hand-written reverse pass, SGD and a
//! central-difference gradient oracle.

mod grad;
mod layers;
mod loss;
mod matrix;

pub use grad::{
    finite_diff_grad, relative_error, sgd_step, GradientSet, Parameters, RELATIVE_ERROR_FLOOR,
};
pub use layers::{EncoderCache, LinearHead, MlpEncoder};
pub use loss::{
    one_hot, softmax_cross_entropy, softmax_rows, softmax_vec, validate_targets,
    TARGET_SUM_TOLERANCE,
};
pub use matrix::Matrix;


use crate::error::Result;

/// Everything the reverse pass of `encoder → head` needs.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    pub encoder: EncoderCache,
    pub features: Matrix,
}

pub fn forward(encoder: &MlpEncoder, head: &LinearHead, x: &Matrix) -> Result<(Matrix, ForwardCache)> {
    let (features, cache) = encoder.forward(x)?;
    let logits = head.logits(&features)?;
    Ok((
        logits,
        ForwardCache {
            encoder: cache,
            features,
        },
    ))
}

/// Gradients of the loss for encoder + head, encoder blocks first.
pub fn backward(
    encoder: &MlpEncoder,
    head: &LinearHead,
    dlogits: &Matrix,
    cache: &ForwardCache,
) -> Result<GradientSet> {
    if cache.encoder.output() != &cache.features {
        return Err(crate::Error::Usage("forward cache features are inconsistent".into()));
    }
    let (head_grads, dfeatures) = head.backward(&cache.features, dlogits)?;
    let (enc_grads, _) = encoder.backward(&cache.encoder, &dfeatures)?;
    Ok(enc_grads.concat(head_grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[derive(Clone)]
    struct Net {
        encoder: MlpEncoder,
        head: LinearHead,
    }

    impl Parameters for Net {
        fn param_blocks(&self) -> Vec<&[f64]> {
            let mut b = self.encoder.param_blocks();
            b.extend(self.head.param_blocks());
            b
        }
        fn param_blocks_mut(&mut self) -> Vec<&mut [f64]> {
            let mut b = self.encoder.param_blocks_mut();
            b.extend(self.head.param_blocks_mut());
            b
        }
    }

    fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap()
    }

    fn random_targets(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        let mut t = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let raw: Vec<f64> = (0..cols).map(|_| rng.random_range(0.0..1.0)).collect();
            let s: f64 = raw.iter().sum();
            for (c, v) in raw.into_iter().enumerate() {
                t.set(r, c, v / s);
            }
        }
        t
    }

    fn net_loss(net: &Net, x: &Matrix, t: &Matrix) -> f64 {
        let (logits, _) = forward(&net.encoder, &net.head, x).unwrap();
        softmax_cross_entropy(&logits, t).unwrap().0
    }

    fn analytic(net: &Net, x: &Matrix, t: &Matrix) -> GradientSet {
        let (logits, cache) = forward(&net.encoder, &net.head, x).unwrap();
        let (_, d) = softmax_cross_entropy(&logits, t).unwrap();
        backward(&net.encoder, &net.head, &d, &cache).unwrap()
    }

    #[test]
    fn zero_parameters_give_zero_features() {
        let enc = MlpEncoder::zeros(&[3, 4, 5], false).unwrap();
        let x = Matrix::from_rows(&[[1.0, -2.0, 3.0], [0.5, 0.5, 0.5]]).unwrap();
        let f = enc.features(&x).unwrap();
        assert_eq!(f, Matrix::zeros(2, 5));
    }

    #[test]
    fn identity_single_layer_passes_input_through() {
        let enc = MlpEncoder::from_parts(vec![Matrix::identity(3)], vec![vec![0.0; 3]], false).unwrap();
        let x = Matrix::from_rows(&[[1.0, -2.0, 3.0], [0.25, 7.0, -0.5]]).unwrap();
        assert_eq!(enc.features(&x).unwrap(), x);
    }

    #[test]
    fn two_layer_forward_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let enc = MlpEncoder::new(&[3, 6, 5], false, &mut rng).unwrap();
        let mut enc_b = enc.clone();
        // non-zero biases so they are exercised
        for b in enc_b.param_blocks_mut().into_iter().skip(1).step_by(2) {
            b.iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
        }
        let x = random_matrix(4, 3, &mut rng);
        let got = enc_b.features(&x).unwrap();

        let (w1, b1) = (&enc_b.weights()[0], &enc_b.biases()[0]);
        let (w2, b2) = (&enc_b.weights()[1], &enc_b.biases()[1]);
        for i in 0..4 {
            let mut h = [0.0; 6];
            for j in 0..6 {
                let mut s = b1[j];
                for k in 0..3 {
                    s += x.get(i, k) * w1.get(k, j);
                }
                h[j] = s.tanh();
            }
            for j in 0..5 {
                let mut s = b2[j];
                for k in 0..6 {
                    s += h[k] * w2.get(k, j);
                }
                assert!((got.get(i, j) - s).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn forward_rejects_wrong_input_width() {
        let enc = MlpEncoder::zeros(&[3, 4], false).unwrap();
        assert!(matches!(
            enc.forward(&Matrix::zeros(2, 4)),
            Err(crate::Error::Dimension { .. })
        ));
    }

    #[test]
    fn forward_is_bit_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let enc = MlpEncoder::new(&[4, 8, 8], true, &mut rng).unwrap();
        let x = random_matrix(7, 4, &mut rng);
        assert_eq!(enc.features(&x).unwrap(), enc.features(&x).unwrap());
    }

    #[test]
    fn head_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let zero_w = LinearHead::from_parts(Matrix::zeros(3, 2), vec![0.5, -1.0]).unwrap();
        let f = random_matrix(4, 3, &mut rng);
        let z = zero_w.logits(&f).unwrap();
        for row in z.iter_rows() {
            assert_eq!(row, &[0.5, -1.0]);
        }

        let head = LinearHead::from_parts(random_matrix(3, 2, &mut rng), vec![0.1, 0.2]).unwrap();
        let e1 = Matrix::from_rows(&[[0.0, 1.0, 0.0]]).unwrap();
        let z = head.logits(&e1).unwrap();
        assert_eq!(z.row(0), &[head.weight().get(1, 0) + 0.1, head.weight().get(1, 1) + 0.2]);

        let z = head.logits(&f).unwrap();
        for i in 0..4 {
            for j in 0..2 {
                let mut s = head.bias()[j];
                for k in 0..3 {
                    s += f.get(i, k) * head.weight().get(k, j);
                }
                assert!((z.get(i, j) - s).abs() < 1e-14);
            }
        }
        assert!(head.logits(&Matrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn zero_dlogits_give_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let enc = MlpEncoder::new(&[3, 4], true, &mut rng).unwrap();
        let head = LinearHead::new(4, 3, &mut rng).unwrap();
        let x = random_matrix(2, 3, &mut rng);
        let (_, cache) = forward(&enc, &head, &x).unwrap();
        let g = backward(&enc, &head, &Matrix::zeros(2, 3), &cache).unwrap();
        assert!(g.is_zero());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let net = Net {
            encoder: MlpEncoder::new(&[3, 5, 4], false, &mut rng).unwrap(),
            head: LinearHead::new(4, 3, &mut rng).unwrap(),
        };
        let x = random_matrix(2, 3, &mut rng);
        let t = random_targets(2, 3, &mut rng);
        let a = analytic(&net, &x, &t);
        let n = finite_diff_grad(|p: &Net| net_loss(p, &x, &t), &net, 1e-5);
        for err in a.max_relative_errors(&n) {
            assert!(err < 1e-5, "relative error {err}");
        }
    }

    #[test]
    fn single_linear_layer_outer_product() {
        // identity encoder, one sample: dW = x ⊗ (softmax − t), db = softmax − t
        let enc = MlpEncoder::from_parts(vec![Matrix::identity(3)], vec![vec![0.0; 3]], false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let head = LinearHead::from_parts(random_matrix(3, 4, &mut rng), vec![0.0; 4]).unwrap();
        let x = Matrix::from_rows(&[[0.3, -1.0, 2.0]]).unwrap();
        let t = one_hot(&[2], 4).unwrap();
        let (logits, cache) = forward(&enc, &head, &x).unwrap();
        let (_, d) = softmax_cross_entropy(&logits, &t).unwrap();
        let g = backward(&enc, &head, &d, &cache).unwrap();
        let p = softmax_rows(&logits);
        let dw = &g.blocks[2];
        for k in 0..3 {
            for c in 0..4 {
                let want = x.get(0, k) * (p.get(0, c) - t.get(0, c));
                assert!((dw[k * 4 + c] - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn stale_cache_is_a_usage_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let enc_a = MlpEncoder::new(&[3, 4], false, &mut rng).unwrap();
        let enc_b = MlpEncoder::new(&[3, 5], false, &mut rng).unwrap();
        let (_, cache) = enc_a.forward(&Matrix::zeros(2, 3)).unwrap();
        assert!(matches!(
            enc_b.backward(&cache, &Matrix::zeros(2, 5)),
            Err(crate::Error::Usage(_))
        ));
        assert!(matches!(
            enc_a.backward(&cache, &Matrix::zeros(3, 4)),
            Err(crate::Error::Usage(_))
        ));
    }

    #[test]
    fn fifty_random_nets_pass_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for trial in 0..50 {
            let depth = rng.random_range(1..=3);
            let mut dims = vec![rng.random_range(1..=8)];
            for _ in 0..depth {
                dims.push(rng.random_range(1..=8));
            }
            let classes = rng.random_range(2..=8);
            let batch = rng.random_range(1..=5);
            let net = Net {
                encoder: MlpEncoder::new(&dims, rng.random_bool(0.5), &mut rng).unwrap(),
                head: LinearHead::new(*dims.last().unwrap(), classes, &mut rng).unwrap(),
            };
            let x = random_matrix(batch, dims[0], &mut rng);
            let t = random_targets(batch, classes, &mut rng);
            let a = analytic(&net, &x, &t);
            let n = finite_diff_grad(|p: &Net| net_loss(p, &x, &t), &net, 1e-5);
            let worst = a.max_relative_errors(&n).into_iter().fold(0.0, f64::max);
            assert!(worst < 1e-4, "trial {trial} dims {dims:?}: {worst}");
        }
    }
}
