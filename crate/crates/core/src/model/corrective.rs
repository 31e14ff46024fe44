//! Trainable corrective mappings from a C-dimensional code to per-vertex
//! offsets: one affine layer, or affine layers interleaved with ReLU.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_finite, check_len, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Linear,
    #[serde(rename = "onenl")]
    OneNl,
    #[serde(rename = "twonl")]
    TwoNl,
}

impl Variant {
    pub fn layer_count(self) -> usize {
        match self {
            Variant::Linear => 1,
            Variant::OneNl => 2,
            Variant::TwoNl => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Linear => "linear",
            Variant::OneNl => "onenl",
            Variant::TwoNl => "twonl",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "linear" => Ok(Variant::Linear),
            "onenl" => Ok(Variant::OneNl),
            "twonl" => Ok(Variant::TwoNl),
            other => Err(Error::InvalidInput(format!("unknown corrective variant '{other}'"))),
        }
    }
}

/// `x -> weights * x + bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineLayer {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl AffineLayer {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        AffineLayer {
            weights: DMatrix::zeros(out_dim, in_dim),
            bias: DVector::zeros(out_dim),
        }
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.weights * x + &self.bias
    }
}

/// Gradient with the same shape as an [`AffineLayer`].
pub type LayerGrad = AffineLayer;

#[derive(Debug, Clone, PartialEq)]
pub struct CorrectiveMap {
    pub variant: Variant,
    pub layers: Vec<AffineLayer>,
}

/// Intermediate values of a forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Input fed to each layer (the code itself for layer 0).
    inputs: Vec<DVector<f64>>,
    pub output: DVector<f64>,
}

impl ForwardTrace {
    /// Which hidden units are active (positive pre-activation), layer by layer.
    pub fn activation_pattern(&self) -> Vec<bool> {
        self.inputs[1..].iter().flat_map(|x| x.iter().map(|&v| v > 0.0)).collect()
    }
}

fn relu(x: DVector<f64>) -> DVector<f64> {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

impl CorrectiveMap {
    /// Randomly initialised map: weights uniform in `[-scale, scale]`, output
    /// bias zero. Hidden layers get a small positive bias so the ReLUs start
    /// active for an all-zero code.
    pub fn random<R: Rng>(
        variant: Variant,
        input_dim: usize,
        hidden_dim: usize,
        output_dim: usize,
        scale: f64,
        rng: &mut R,
    ) -> Self {
        let mut dims = vec![input_dim];
        dims.extend(std::iter::repeat_n(hidden_dim, variant.layer_count() - 1));
        dims.push(output_dim);
        let last = variant.layer_count() - 1;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(l, d)| {
                let weights = DMatrix::from_fn(d[1], d[0], |_, _| rng.random_range(-scale..=scale));
                let bias = if l == last {
                    DVector::zeros(d[1])
                } else {
                    DVector::from_element(d[1], HIDDEN_BIAS_INIT)
                };
                AffineLayer { weights, bias }
            })
            .collect();
        CorrectiveMap { variant, layers }
    }

    /// A linear map with zero-dimensional input: always outputs zeros.
    pub fn disabled(output_dim: usize) -> Self {
        CorrectiveMap {
            variant: Variant::Linear,
            layers: vec![AffineLayer::zeros(output_dim, 0)],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weights.nrows())
    }

    /// A map with `C = 0` has nothing to learn and contributes no offset.
    pub fn is_disabled(&self) -> bool {
        self.input_dim() == 0
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(AffineLayer::param_count).sum()
    }

    pub fn validate(&self) -> Result<()> {
        check_len("corrective layer count", self.variant.layer_count(), self.layers.len())?;
        for (l, layer) in self.layers.iter().enumerate() {
            check_len("corrective bias length", layer.weights.nrows(), layer.bias.len())?;
            if l > 0 {
                check_len(
                    "corrective layer chaining",
                    self.layers[l - 1].weights.nrows(),
                    layer.weights.ncols(),
                )?;
            }
            check_finite("corrective weights", layer.weights.as_slice())?;
            check_finite("corrective bias", layer.bias.as_slice())?;
        }
        Ok(())
    }

    pub fn eval(&self, delta: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.forward(delta)?.output)
    }

    pub fn forward(&self, delta: &DVector<f64>) -> Result<ForwardTrace> {
        check_len("corrective code", self.input_dim(), delta.len())?;
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut x = delta.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let y = layer.apply(&x);
            inputs.push(x);
            x = if l == last { y } else { relu(y) };
        }
        Ok(ForwardTrace { inputs, output: x })
    }

    /// Backpropagates `grad_out` (dE/d output). Returns dE/d code and, when
    /// `want_params`, dE/d layer parameters. ReLU has derivative 0 at 0.
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        grad_out: &DVector<f64>,
        want_params: bool,
    ) -> (DVector<f64>, Option<Vec<LayerGrad>>) {
        let mut grads: Vec<LayerGrad> = Vec::new();
        let mut g = grad_out.clone();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input = &trace.inputs[l];
            if want_params {
                grads.push(AffineLayer {
                    weights: &g * input.transpose(),
                    bias: g.clone(),
                });
            }
            let mut g_in = layer.weights.transpose() * &g;
            if l > 0 {
                // input to layer l is relu(pre-activation); relu'(z) = [z > 0] = [relu(z) > 0]
                g_in.zip_apply(input, |gi, a| {
                    if a <= 0.0 {
                        *gi = 0.0
                    }
                });
            }
            g = g_in;
        }
        grads.reverse();
        (g, want_params.then_some(grads))
    }

    /// Parameters flattened layer by layer: weights (column-major) then bias.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        flatten_layers(&self.layers, &mut out);
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        check_len("corrective parameters", self.param_count(), flat.len())?;
        let mut at = 0;
        for layer in &mut self.layers {
            let w = layer.weights.len();
            layer.weights.as_mut_slice().copy_from_slice(&flat[at..at + w]);
            at += w;
            let b = layer.bias.len();
            layer.bias.as_mut_slice().copy_from_slice(&flat[at..at + b]);
            at += b;
        }
        Ok(())
    }
}

/// Initial bias of hidden (pre-ReLU) layers.
pub const HIDDEN_BIAS_INIT: f64 = 0.01;

pub fn flatten_layers(layers: &[AffineLayer], out: &mut Vec<f64>) {
    for layer in layers {
        out.extend_from_slice(layer.weights.as_slice());
        out.extend_from_slice(layer.bias.as_slice());
    }
}
