use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{GradientSet, Matrix, Parameters};

/// Weights drawn uniform(−1/√fan_in, +1/√fan_in).
fn init_weight<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Matrix {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    Matrix::from_vec(fan_in, fan_out, data).expect("sized above")
}

/// Tanh multilayer perceptron mapping `d`-dimensional inputs to `F` features.
///
/// Hidden layers always use tanh; the last layer is linear unless
/// `final_activation` is set.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpEncoder {
    layer_dims: Vec<usize>,
    weights: Vec<Matrix>,
    biases: Vec<Vec<f64>>,
    final_activation: bool,
}

/// Activations recorded by [`MlpEncoder::forward`].
#[derive(Clone, Debug)]
pub struct EncoderCache {
    layer_dims: Vec<usize>,
    /// `inputs[l]` is what layer `l` consumed; `inputs[L]` is the encoder output.
    inputs: Vec<Matrix>,
}

impl EncoderCache {
    pub fn output(&self) -> &Matrix {
        self.inputs.last().expect("cache holds at least the input")
    }
}

impl MlpEncoder {
    pub fn new<R: Rng + ?Sized>(layer_dims: &[usize], final_activation: bool, rng: &mut R) -> Result<Self> {
        Self::check_dims(layer_dims)?;
        let weights = layer_dims
            .windows(2)
            .map(|w| init_weight(w[0], w[1], rng))
            .collect();
        let biases = layer_dims[1..].iter().map(|&n| vec![0.0; n]).collect();
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            weights,
            biases,
            final_activation,
        })
    }

    pub fn zeros(layer_dims: &[usize], final_activation: bool) -> Result<Self> {
        Self::check_dims(layer_dims)?;
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            weights: layer_dims.windows(2).map(|w| Matrix::zeros(w[0], w[1])).collect(),
            biases: layer_dims[1..].iter().map(|&n| vec![0.0; n]).collect(),
            final_activation,
        })
    }

    pub fn from_parts(weights: Vec<Matrix>, biases: Vec<Vec<f64>>, final_activation: bool) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::dim("MlpEncoder::from_parts", "one bias per weight", biases.len()));
        }
        let mut layer_dims = vec![weights[0].rows()];
        for (l, (w, b)) in weights.iter().zip(&biases).enumerate() {
            if w.rows() != *layer_dims.last().unwrap() {
                return Err(Error::dim(
                    "MlpEncoder::from_parts",
                    format!("layer {l} input {}", layer_dims.last().unwrap()),
                    w.rows(),
                ));
            }
            if b.len() != w.cols() {
                return Err(Error::dim("MlpEncoder::from_parts", w.cols(), b.len()));
            }
            layer_dims.push(w.cols());
        }
        Ok(Self {
            layer_dims,
            weights,
            biases,
            final_activation,
        })
    }

    fn check_dims(layer_dims: &[usize]) -> Result<()> {
        if layer_dims.len() < 2 || layer_dims.contains(&0) {
            return Err(Error::Config(format!(
                "encoder needs at least two positive layer widths, got {layer_dims:?}"
            )));
        }
        Ok(())
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn feature_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn final_activation(&self) -> bool {
        self.final_activation
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    fn activated(&self, layer: usize) -> bool {
        layer + 1 < self.weights.len() || self.final_activation
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, EncoderCache)> {
        if x.cols() != self.input_dim() {
            return Err(Error::dim("forward_encoder", self.input_dim(), x.cols()));
        }
        let mut inputs = Vec::with_capacity(self.weights.len() + 1);
        inputs.push(x.clone());
        for l in 0..self.weights.len() {
            let mut z = inputs[l].matmul(&self.weights[l])?;
            z.add_row_broadcast(&self.biases[l])?;
            if self.activated(l) {
                z.data_mut().iter_mut().for_each(|v| *v = v.tanh());
            }
            inputs.push(z);
        }
        let out = inputs.last().unwrap().clone();
        Ok((
            out,
            EncoderCache {
                layer_dims: self.layer_dims.clone(),
                inputs,
            },
        ))
    }

    /// Forward pass without keeping a cache.
    pub fn features(&self, x: &Matrix) -> Result<Matrix> {
        self.forward(x).map(|(f, _)| f)
    }

    /// Reverse pass. Returns parameter gradients (in block order) and the
    /// gradient with respect to the encoder input.
    pub fn backward(&self, cache: &EncoderCache, dfeatures: &Matrix) -> Result<(GradientSet, Matrix)> {
        if cache.layer_dims != self.layer_dims || cache.inputs.len() != self.weights.len() + 1 {
            return Err(Error::Usage(
                "encoder cache does not come from a forward pass of this encoder".into(),
            ));
        }
        let out = cache.output();
        if dfeatures.shape() != out.shape() {
            return Err(Error::Usage(format!(
                "feature gradient {:?} does not match cached forward output {:?}",
                dfeatures.shape(),
                out.shape()
            )));
        }
        let layers = self.weights.len();
        let mut w_grads = vec![Matrix::zeros(0, 0); layers];
        let mut b_grads = vec![Vec::new(); layers];
        let mut delta = dfeatures.clone();
        for l in (0..layers).rev() {
            if self.activated(l) {
                let a = &cache.inputs[l + 1];
                for (d, &av) in delta.data_mut().iter_mut().zip(a.data()) {
                    *d *= 1.0 - av * av;
                }
            }
            w_grads[l] = cache.inputs[l].matmul_tn(&delta)?;
            b_grads[l] = delta.column_sums();
            delta = delta.matmul_nt(&self.weights[l])?;
        }
        let mut blocks = Vec::with_capacity(2 * layers);
        for (w, b) in w_grads.into_iter().zip(b_grads) {
            blocks.push(w.into_vec());
            blocks.push(b);
        }
        Ok((GradientSet::new(blocks), delta))
    }
}

impl Parameters for MlpEncoder {
    fn param_blocks(&self) -> Vec<&[f64]> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w.data(), b.as_slice()])
            .collect()
    }

    fn param_blocks_mut(&mut self) -> Vec<&mut [f64]> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w.data_mut(), b.as_mut_slice()])
            .collect()
    }

    fn block_names(&self) -> Vec<String> {
        (0..self.weights.len())
            .flat_map(|l| [format!("encoder.w{l}"), format!("encoder.b{l}")])
            .collect()
    }
}

/// Affine map from encoder features to `out_dim` logits.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearHead {
    weight: Matrix,
    bias: Vec<f64>,
}

impl LinearHead {
    pub fn new<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::Config(format!(
                "linear head needs positive widths, got {in_dim}x{out_dim}"
            )));
        }
        Ok(Self {
            weight: init_weight(in_dim, out_dim, rng),
            bias: vec![0.0; out_dim],
        })
    }

    pub fn from_parts(weight: Matrix, bias: Vec<f64>) -> Result<Self> {
        if weight.cols() == 0 || bias.len() != weight.cols() {
            return Err(Error::dim("LinearHead::from_parts", weight.cols(), bias.len()));
        }
        Ok(Self { weight, bias })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn weight(&self) -> &Matrix {
        &self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    /// `features · W + b`
    pub fn logits(&self, features: &Matrix) -> Result<Matrix> {
        if features.cols() != self.in_dim() {
            return Err(Error::dim("head_logits", self.in_dim(), features.cols()));
        }
        let mut z = features.matmul(&self.weight)?;
        z.add_row_broadcast(&self.bias)?;
        Ok(z)
    }

    /// Gradients `[dW, db]` and the gradient flowing back into the features.
    pub fn backward(&self, features: &Matrix, dlogits: &Matrix) -> Result<(GradientSet, Matrix)> {
        if features.rows() != dlogits.rows() || dlogits.cols() != self.out_dim() {
            return Err(Error::dim(
                "LinearHead::backward",
                format!("({}, {})", features.rows(), self.out_dim()),
                format!("{:?}", dlogits.shape()),
            ));
        }
        let dw = features.matmul_tn(dlogits)?;
        let db = dlogits.column_sums();
        let dfeatures = dlogits.matmul_nt(&self.weight)?;
        Ok((GradientSet::new(vec![dw.into_vec(), db]), dfeatures))
    }
}

impl Parameters for LinearHead {
    fn param_blocks(&self) -> Vec<&[f64]> {
        vec![self.weight.data(), &self.bias]
    }

    fn param_blocks_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.weight.data_mut(), &mut self.bias]
    }

    fn block_names(&self) -> Vec<String> {
        vec!["head.w".into(), "head.b".into()]
    }
}
