//! Fully connected autoencoders trained by minibatch reverse-mode gradients.
//!
//! Each layer computes `y = act(x W + b)` on row-vector batches, with `W`
//! stored as `in x out`. The code is the output of the layer marked by
//! `code_layer`; layers before and including it form the encoder.

use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::optim::{init_rng, split_indices, train_loop, Parameters, TrainConfig, TrainHistory};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Identity,
}

impl Activation {
    pub fn name(&self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Identity => "identity",
        }
    }

    #[inline]
    pub fn apply(&self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => sigmoid(z),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation output `y`.
    #[inline]
    pub fn derivative_from_output(&self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Identity => 1.0,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            "identity" | "linear" => Ok(Activation::Identity),
            other => Err(Error::InvalidParams(format!("unknown activation '{other}'"))),
        }
    }
}

#[inline]
pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn input_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut y = x.dot(&self.weights) + &self.bias;
        let act = self.activation;
        if act != Activation::Identity {
            y.mapv_inplace(|z| act.apply(z));
        }
        y
    }
}

/// Layer widths `[input, ..., code, ..., output]` with one activation per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct AEArchitecture {
    pub dims: Vec<usize>,
    /// Position of the code width inside `dims` (at least 1, before the last entry).
    pub code_index: usize,
    pub activations: Vec<Activation>,
}

impl AEArchitecture {
    /// `input -> hidden... -> code -> hidden(reversed)... -> input`.
    ///
    /// Hidden layers and the code use `hidden_act`; the reconstruction uses `output_act`.
    pub fn symmetric(
        input: usize,
        hidden: &[usize],
        code: usize,
        hidden_act: Activation,
        output_act: Activation,
    ) -> Self {
        let mut dims = vec![input];
        dims.extend_from_slice(hidden);
        dims.push(code);
        dims.extend(hidden.iter().rev());
        dims.push(input);
        let n_layers = dims.len() - 1;
        let mut activations = vec![hidden_act; n_layers];
        activations[n_layers - 1] = output_act;
        AEArchitecture {
            dims,
            code_index: hidden.len() + 1,
            activations,
        }
    }

    /// Symmetric architecture with `n_hidden` geometrically spaced widths per side.
    pub fn geometric(
        input: usize,
        code: usize,
        n_hidden: usize,
        hidden_act: Activation,
        output_act: Activation,
    ) -> Self {
        Self::symmetric(
            input,
            &geometric_hidden_widths(input, code, n_hidden),
            code,
            hidden_act,
            output_act,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.len() < 3 {
            return Err(Error::InvalidParams(
                "autoencoder needs at least input, code and output widths".into(),
            ));
        }
        if self.code_index == 0 || self.code_index >= self.dims.len() - 1 {
            return Err(Error::InvalidParams(format!(
                "code index {} must be an interior position of {:?}",
                self.code_index, self.dims
            )));
        }
        if self.dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidParams(format!("zero width in {:?}", self.dims)));
        }
        if self.dims[0] != *self.dims.last().unwrap() {
            return Err(Error::dim(
                "autoencoder output width",
                self.dims[0],
                *self.dims.last().unwrap(),
            ));
        }
        if self.activations.len() != self.dims.len() - 1 {
            return Err(Error::dim(
                "autoencoder activations",
                self.dims.len() - 1,
                self.activations.len(),
            ));
        }
        Ok(())
    }
}

/// Widths strictly between `input` and `code`, evenly spaced in log scale.
pub fn geometric_hidden_widths(input: usize, code: usize, n_hidden: usize) -> Vec<usize> {
    let ratio = code as f64 / input as f64;
    (1..=n_hidden)
        .map(|i| {
            let w = input as f64 * ratio.powf(i as f64 / (n_hidden + 1) as f64);
            (w.round() as usize).max(1)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AEModel {
    pub layers: Vec<DenseLayer>,
    /// Index of the layer whose output is the code.
    pub code_layer: usize,
}

/// Gradient set laid out like [`AEModel`]: one `(dW, db)` pair per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct AEGradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Parameters for AEModel {
    fn param_slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| {
                [
                    l.weights.as_slice().expect("standard layout"),
                    l.bias.as_slice().expect("standard layout"),
                ]
            })
            .collect()
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                [
                    l.weights.as_slice_mut().expect("standard layout"),
                    l.bias.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect()
    }
}

impl Parameters for AEGradients {
    fn param_slices(&self) -> Vec<&[f64]> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| {
                [
                    w.as_slice().expect("standard layout"),
                    b.as_slice().expect("standard layout"),
                ]
            })
            .collect()
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| {
                [
                    w.as_slice_mut().expect("standard layout"),
                    b.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect()
    }
}

impl AEModel {
    pub fn new(layers: Vec<DenseLayer>, code_layer: usize) -> Result<Self> {
        if layers.len() < 2 || code_layer + 1 >= layers.len() {
            return Err(Error::InvalidParams(format!(
                "code layer {code_layer} must leave at least one decoder layer out of {}",
                layers.len()
            )));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::dim("autoencoder layer chain", pair[0].output_dim(), i));
            }
        }
        for l in &layers {
            if l.bias.len() != l.output_dim() {
                return Err(Error::dim("autoencoder bias", l.output_dim(), l.bias.len()));
            }
        }
        let (input, output) = (layers[0].input_dim(), layers.last().unwrap().output_dim());
        if input != output {
            return Err(Error::dim("autoencoder output width", input, output));
        }
        Ok(AEModel { layers, code_layer })
    }

    /// Glorot-uniform weights in `+-sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn init(arch: &AEArchitecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = init_rng(seed);
        let layers = arch
            .dims
            .windows(2)
            .zip(&arch.activations)
            .map(|(w, &activation)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                DenseLayer {
                    weights: Array2::from_shape_fn((fan_in, fan_out), |_| {
                        rng.gen_range(-limit..=limit)
                    }),
                    bias: Array1::zeros(fan_out),
                    activation,
                }
            })
            .collect();
        AEModel::new(layers, arch.code_index - 1)
    }

    pub fn architecture(&self) -> AEArchitecture {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.layers.iter().map(|l| l.output_dim()));
        AEArchitecture {
            dims,
            code_index: self.code_layer + 1,
            activations: self.layers.iter().map(|l| l.activation).collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn code_dim(&self) -> usize {
        self.layers[self.code_layer].output_dim()
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::dim("autoencoder input", self.input_dim(), x.ncols()));
        }
        Ok(())
    }

    pub fn encode(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let mut a = x.to_owned();
        for layer in &self.layers[..=self.code_layer] {
            a = layer.forward(a.view());
        }
        Ok(a)
    }

    pub fn decode(&self, code: ArrayView2<f64>) -> Result<Array2<f64>> {
        if code.ncols() != self.code_dim() {
            return Err(Error::dim("autoencoder code", self.code_dim(), code.ncols()));
        }
        let mut a = code.to_owned();
        for layer in &self.layers[self.code_layer + 1..] {
            a = layer.forward(a.view());
        }
        Ok(a)
    }

    pub fn reconstruct(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.decode(self.encode(x)?.view())
    }

    /// Mean squared reconstruction error over all elements, evaluated in row chunks.
    pub fn reconstruction_mse(&self, x: ArrayView2<f64>) -> Result<f64> {
        self.check_input(&x)?;
        let mut total = 0.0;
        for chunk in x.axis_chunks_iter(Axis(0), 256) {
            let recon = self.reconstruct(chunk)?;
            total += (&recon - &chunk).mapv(|d| d * d).sum();
        }
        Ok(total / x.len() as f64)
    }

    /// Activations of every layer, input first.
    fn forward_all(&self, x: ArrayView2<f64>) -> Vec<Array2<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_owned());
        for layer in &self.layers {
            let next = layer.forward(acts.last().unwrap().view());
            acts.push(next);
        }
        acts
    }

    fn zero_gradients(&self) -> AEGradients {
        AEGradients {
            weights: self.layers.iter().map(|l| Array2::zeros(l.weights.raw_dim())).collect(),
            biases: self.layers.iter().map(|l| Array1::zeros(l.bias.len())).collect(),
        }
    }
}

/// Single-sample forward pass returning `(code, reconstruction)`.
pub fn ae_forward(model: &AEModel, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let row = ArrayView2::from_shape((1, x.len()), x).expect("one row");
    let code = model.encode(row)?;
    let recon = model.decode(code.view())?;
    Ok((code.into_raw_vec_and_offset().0, recon.into_raw_vec_and_offset().0))
}

/// Loss and exact gradients of the reconstruction MSE (mean over batch rows and features).
pub fn ae_gradients(model: &AEModel, batch: ArrayView2<f64>) -> Result<(f64, AEGradients)> {
    model.check_input(&batch)?;
    if batch.nrows() == 0 {
        return Err(Error::InvalidParams("empty batch".into()));
    }
    let acts = model.forward_all(batch);
    let output = acts.last().unwrap();
    let diff = output - &batch;
    let scale = 1.0 / batch.len() as f64;
    let loss = diff.mapv(|d| d * d).sum() * scale;

    let mut grads = model.zero_gradients();
    // dL/dy for the current layer output.
    let mut upstream = diff * (2.0 * scale);
    for (l, layer) in model.layers.iter().enumerate().rev() {
        let y = &acts[l + 1];
        let act = layer.activation;
        let delta = if act == Activation::Identity {
            upstream
        } else {
            let mut d = upstream;
            d.zip_mut_with(y, |g, &yv| *g *= act.derivative_from_output(yv));
            d
        };
        grads.weights[l] = acts[l].t().dot(&delta);
        grads.biases[l] = delta.sum_axis(Axis(0));
        if l > 0 {
            upstream = delta.dot(&layer.weights.t());
        } else {
            break;
        }
    }
    Ok((loss, grads))
}

/// Minibatch training with a seeded train/validation split and early stopping.
///
/// Returns the parameters from the epoch with the best validation MSE.
pub fn ae_train(
    data: ArrayView2<f64>,
    arch: &AEArchitecture,
    config: &TrainConfig,
) -> Result<(AEModel, TrainHistory)> {
    config.validate()?;
    arch.validate()?;
    if data.ncols() != arch.dims[0] {
        return Err(Error::dim("training data width", arch.dims[0], data.ncols()));
    }
    if data.nrows() < 2 * config.batch_size {
        return Err(Error::InvalidParams(format!(
            "need at least {} rows for batch size {}, got {}",
            2 * config.batch_size,
            config.batch_size,
            data.nrows()
        )));
    }
    let (train_idx, val_idx) = split_indices(data.nrows(), config.validation_fraction, config.seed)?;
    let train = data.select(Axis(0), &train_idx);
    let val = data.select(Axis(0), &val_idx);

    let model = AEModel::init(arch, config.seed)?;
    train_loop(
        model,
        config,
        train.nrows(),
        |m, rows| ae_gradients(m, train.select(Axis(0), rows).view()),
        |m| m.reconstruction_mse(val.view()),
    )
}

/// Encoder half applied to row slices of a large matrix, chunk by chunk.
pub fn encode_rows(model: &AEModel, data: ArrayView2<f64>) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((data.nrows(), model.code_dim()));
    for (i, chunk) in data.axis_chunks_iter(Axis(0), 512).enumerate() {
        let code = model.encode(chunk)?;
        out.slice_mut(s![i * 512..i * 512 + chunk.nrows(), ..]).assign(&code);
    }
    Ok(out)
}
