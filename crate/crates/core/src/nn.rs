//! Fixed-topology multilayer perceptron used as the generator.
//!
//! Hidden layers use ReLU, the output layer uses a sigmoid, so every output lies
//! in the open unit hypercube. Gradients are computed by hand against an
//! externally supplied output gradient (the MMD gradient with respect to the
//! generated sample), and parameters are updated with Adam.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::par;
use crate::seed::{self, SeedTree};
use crate::{Error, Matrix, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpArchitecture {
    pub input_dim: usize,
    pub hidden_sizes: Vec<usize>,
    pub output_dim: usize,
}

impl MlpArchitecture {
    pub fn new(input_dim: usize, hidden_sizes: Vec<usize>, output_dim: usize) -> Result<Self> {
        let arch = Self {
            input_dim,
            hidden_sizes,
            output_dim,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_sizes.is_empty() {
            return Err(Error::invalid("at least one hidden layer is required"));
        }
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_sizes.contains(&0) {
            return Err(Error::invalid("all layer sizes must be positive"));
        }
        Ok(())
    }

    /// `(in, out)` for every dense layer, input to output.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_sizes.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_sizes);
        dims.push(self.output_dim);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn num_params(&self) -> usize {
        self.layer_shapes().iter().map(|(i, o)| (i + 1) * o).sum()
    }
}

/// One affine layer; `weight` is `[out x in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Array2::zeros((output, input)),
            bias: Array1::zeros(output),
        }
    }
}

/// Gradients and Adam moments share the parameter layout.
pub type Gradient = Vec<Dense>;

/// Row block used by [`MlpModel::predict`].
pub const PREDICT_BLOCK: usize = 2048;

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    arch: MlpArchitecture,
    layers: Vec<Dense>,
}

/// Activations cached by [`MlpModel::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    /// `inputs[l]` is the input of layer `l` (post-activation of layer `l - 1`).
    inputs: Vec<Matrix>,
    output: Matrix,
}

impl Tape {
    pub fn output(&self) -> &Matrix {
        &self.output
    }

    pub fn into_output(self) -> Matrix {
        self.output
    }
}

impl MlpModel {
    /// Uniform initialization on `(-1/sqrt(d_in), 1/sqrt(d_in))` per layer.
    pub fn init(arch: MlpArchitecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = SeedTree::new(seed).rng(seed::INIT, 0);
        let layers = arch
            .layer_shapes()
            .into_iter()
            .map(|(input, output)| {
                let bound = 1.0 / (input as f64).sqrt();
                let mut draw = || loop {
                    let v = rng.random_range(-bound..bound);
                    if v != -bound {
                        break v;
                    }
                };
                let weight = Array2::from_shape_simple_fn((output, input), &mut draw);
                let bias = Array1::from_shape_simple_fn(output, &mut draw);
                Dense { weight, bias }
            })
            .collect();
        Ok(Self { arch, layers })
    }

    pub fn zeros(arch: MlpArchitecture) -> Result<Self> {
        arch.validate()?;
        let layers = arch
            .layer_shapes()
            .into_iter()
            .map(|(i, o)| Dense::zeros(i, o))
            .collect();
        Ok(Self { arch, layers })
    }

    /// Rebuilds a model from parameters flattened layer by layer as
    /// (weight row-major, then bias).
    pub fn from_flat(arch: MlpArchitecture, params: &[f64]) -> Result<Self> {
        arch.validate()?;
        if params.len() != arch.num_params() {
            return Err(Error::mismatch(arch.num_params(), params.len(), "flat parameter count"));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NumericFailure("non-finite parameter".into()));
        }
        let mut offset = 0;
        let mut layers = Vec::new();
        for (input, output) in arch.layer_shapes() {
            let w = params[offset..offset + input * output].to_vec();
            offset += input * output;
            let b = params[offset..offset + output].to_vec();
            offset += output;
            layers.push(Dense {
                weight: Array2::from_shape_vec((output, input), w).expect("shape checked"),
                bias: Array1::from_vec(b),
            });
        }
        Ok(Self { arch, layers })
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.arch.num_params());
        for layer in &self.layers {
            out.extend(layer.weight.iter().copied());
            out.extend(layer.bias.iter().copied());
        }
        out
    }

    pub fn architecture(&self) -> &MlpArchitecture {
        &self.arch
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.arch.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.arch.output_dim
    }

    pub fn zero_gradient(&self) -> Gradient {
        self.layers
            .iter()
            .map(|l| Dense::zeros(l.weight.ncols(), l.weight.nrows()))
            .collect()
    }

    /// Evaluates the network rowwise on `z` (`[n x input_dim]`).
    pub fn forward(&self, z: ArrayView2<'_, f64>) -> Result<(Matrix, Tape)> {
        if z.ncols() != self.arch.input_dim {
            return Err(Error::mismatch(self.arch.input_dim, z.ncols(), "forward input columns"));
        }
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut act = z.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut pre = act.dot(&layer.weight.t());
            pre += &layer.bias;
            if l == last {
                pre.mapv_inplace(sigmoid);
            } else {
                pre.mapv_inplace(|v| v.max(0.0));
            }
            inputs.push(std::mem::replace(&mut act, pre));
        }
        let tape = Tape {
            inputs,
            output: act.clone(),
        };
        Ok((act, tape))
    }

    /// Output only, without keeping a tape. Large inputs are evaluated in
    /// row blocks of [`PREDICT_BLOCK`] to bound the size of hidden activations.
    pub fn predict(&self, z: ArrayView2<'_, f64>) -> Result<Matrix> {
        if z.ncols() != self.arch.input_dim {
            return Err(Error::mismatch(self.arch.input_dim, z.ncols(), "predict input columns"));
        }
        let n = z.nrows();
        if n <= PREDICT_BLOCK {
            return Ok(self.evaluate(z));
        }
        let blocks = par::map_chunks(n, PREDICT_BLOCK, |s, e| self.evaluate(z.slice(s![s..e, ..])));
        let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
        Ok(ndarray::concatenate(Axis(0), &views).expect("blocks share columns"))
    }

    fn evaluate(&self, z: ArrayView2<'_, f64>) -> Matrix {
        let last = self.layers.len() - 1;
        let mut act = z.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut pre = act.dot(&layer.weight.t());
            pre += &layer.bias;
            if l == last {
                pre.mapv_inplace(sigmoid);
            } else {
                pre.mapv_inplace(|v| v.max(0.0));
            }
            act = pre;
        }
        act
    }

    /// Parameter gradient of a loss `L` given `dL/dY` for the tape's forward pass.
    ///
    /// The ReLU derivative at exactly 0 is taken as 0.
    pub fn backward(&self, tape: &Tape, d_output: ArrayView2<'_, f64>) -> Result<Gradient> {
        if tape.inputs.len() != self.layers.len()
            || tape.output.ncols() != self.arch.output_dim
            || tape.inputs[0].ncols() != self.arch.input_dim
        {
            return Err(Error::invalid("tape does not match model architecture"));
        }
        if d_output.dim() != tape.output.dim() {
            return Err(Error::mismatch(
                tape.output.nrows(),
                d_output.nrows(),
                "backward output gradient rows",
            ));
        }
        // delta at the output pre-activation: dY * y (1 - y)
        let mut delta = &d_output * &tape.output.mapv(|y| y * (1.0 - y));
        let mut grads: Vec<Dense> = Vec::with_capacity(self.layers.len());
        for l in (0..self.layers.len()).rev() {
            let input = &tape.inputs[l];
            let weight = delta.t().dot(input);
            let bias = delta.sum_axis(Axis(0));
            if l > 0 {
                let mut next = delta.dot(&self.layers[l].weight);
                // input of layer l is relu(pre_{l-1}); relu'(pre) = 1 iff output > 0
                next.zip_mut_with(input, |d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
                delta = next;
            }
            grads.push(Dense { weight, bias });
        }
        grads.reverse();
        Ok(grads)
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Gradient,
    v: Gradient,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(model: &MlpModel) -> Self {
        Self {
            m: model.zero_gradient(),
            v: model.zero_gradient(),
            step: 0,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update of `model` with learning rate `lr`.
    ///
    /// A gradient with any non-finite entry is rejected before anything is
    /// modified.
    pub fn step(&mut self, model: &mut MlpModel, grad: &Gradient, lr: f64) -> Result<()> {
        if grad.len() != model.layers.len()
            || grad
                .iter()
                .zip(&model.layers)
                .any(|(g, l)| g.weight.dim() != l.weight.dim() || g.bias.len() != l.bias.len())
        {
            return Err(Error::invalid("gradient shape does not match model"));
        }
        if grad
            .iter()
            .any(|g| g.weight.iter().chain(g.bias.iter()).any(|v| !v.is_finite()))
        {
            return Err(Error::NumericFailure("non-finite gradient entry".into()));
        }
        if !(lr > 0.0) {
            return Err(Error::invalid(format!("learning rate must be positive, got {lr}")));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        };
        for (((layer, g), m), v) in model
            .layers
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            ndarray::Zip::from(&mut layer.weight)
                .and(&g.weight)
                .and(&mut m.weight)
                .and(&mut v.weight)
                .for_each(|p, &g, m, v| update(p, g, m, v));
            ndarray::Zip::from(&mut layer.bias)
                .and(&g.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .for_each(|p, &g, m, v| update(p, g, m, v));
        }
        Ok(())
    }
}
