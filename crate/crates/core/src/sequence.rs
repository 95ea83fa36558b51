//! Stacked LSTM/GRU forecasters over latent trajectories.
//!
//! Inputs at each step are the latent code followed by the three static
//! simulation parameters `(x0, M, kappa)`. After consuming `context_len`
//! frames the top hidden state is mapped to the next latent frame; longer
//! horizons feed each prediction back as the next input with the statics
//! re-appended. Gradients flow through that feedback path.
//!
//! All cells use row-vector batches: gate pre-activations are
//! `x W + h U + b`, with the gate blocks laid out side by side in the
//! columns of `W`, `U` and `b` (`[i, f, g, o]` for LSTM, `[z, r, n]` for GRU).

use std::fmt;
use std::str::FromStr;

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;

use crate::error::{Error, Result};
use crate::optim::{init_rng, split_indices, train_loop, Parameters, TrainConfig, TrainHistory};
use crate::reduce::autoencoder::sigmoid;

/// Static simulation parameters appended to every input row.
pub const N_STATIC: usize = 3;

/// Initial bias of the LSTM forget gate.
pub const FORGET_BIAS: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CellKind {
    #[default]
    Lstm,
    Gru,
}

impl CellKind {
    pub fn name(&self) -> &'static str {
        match self {
            CellKind::Lstm => "lstm",
            CellKind::Gru => "gru",
        }
    }

    pub fn gate_blocks(&self) -> usize {
        match self {
            CellKind::Lstm => 4,
            CellKind::Gru => 3,
        }
    }
}

impl fmt::Display for CellKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CellKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lstm" => Ok(CellKind::Lstm),
            "gru" => Ok(CellKind::Gru),
            other => Err(Error::InvalidParams(format!("unknown cell kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StridePolicy {
    #[default]
    All,
    EvenIndices,
}

impl StridePolicy {
    pub fn name(&self) -> &'static str {
        match self {
            StridePolicy::All => "all",
            StridePolicy::EvenIndices => "even_indices",
        }
    }
}

impl fmt::Display for StridePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StridePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(StridePolicy::All),
            "even_indices" | "even" => Ok(StridePolicy::EvenIndices),
            other => Err(Error::InvalidParams(format!("unknown stride policy '{other}'"))),
        }
    }
}

/// One trajectory: `T x (latent + 3)` features plus the static parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SeqSample {
    features: Array2<f64>,
    params: [f64; N_STATIC],
}

impl SeqSample {
    /// Builds the feature matrix by appending `params` to every latent row.
    pub fn new(latent: ArrayView2<f64>, params: [f64; N_STATIC]) -> Result<Self> {
        let (t, l) = latent.dim();
        let statics = Array2::from_shape_fn((t, N_STATIC), |(_, j)| params[j]);
        let features = concatenate![Axis(1), latent, statics];
        if l == 0 {
            return Err(Error::InvalidParams("latent dimension must be at least 1".into()));
        }
        Self::from_features(features, params)
    }

    pub fn from_features(features: Array2<f64>, params: [f64; N_STATIC]) -> Result<Self> {
        let (t, f) = features.dim();
        if t < 2 {
            return Err(Error::InvalidParams(format!("sequence needs T >= 2, got {t}")));
        }
        if f <= N_STATIC {
            return Err(Error::dim("sequence feature width", N_STATIC + 1, f));
        }
        if features.iter().chain(&params).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("non-finite sequence feature".into()));
        }
        let tail = features.slice(s![.., f - N_STATIC..]);
        if tail.rows().into_iter().any(|r| r.iter().zip(&params).any(|(a, b)| a != b)) {
            return Err(Error::InvalidParams(
                "trailing feature columns must repeat the static parameters".into(),
            ));
        }
        Ok(SeqSample { features, params })
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn latent_dim(&self) -> usize {
        self.features.ncols() - N_STATIC
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn latent(&self) -> ArrayView2<'_, f64> {
        self.features.slice(s![.., ..self.latent_dim()])
    }

    pub fn params(&self) -> [f64; N_STATIC] {
        self.params
    }
}

/// Keeps every frame, or frames `0, 2, 4, ...`.
pub fn subsample_sequence(sample: &SeqSample, policy: StridePolicy) -> Result<SeqSample> {
    match policy {
        StridePolicy::All => Ok(sample.clone()),
        StridePolicy::EvenIndices => SeqSample::from_features(
            sample.features.slice(s![..;2, ..]).to_owned(),
            sample.params,
        ),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RolloutSpec {
    /// Frames consumed before the first prediction.
    pub context_len: usize,
    /// Frames predicted, `k`.
    pub horizon: usize,
    pub stride_policy: StridePolicy,
}

impl RolloutSpec {
    pub fn new(context_len: usize, horizon: usize, stride_policy: StridePolicy) -> Result<Self> {
        if context_len == 0 || horizon == 0 {
            return Err(Error::InvalidParams(format!(
                "context ({context_len}) and horizon ({horizon}) must both be at least 1"
            )));
        }
        Ok(RolloutSpec {
            context_len,
            horizon,
            stride_policy,
        })
    }

    /// Predicts the last `horizon` frames of sequences that have `raw_len`
    /// frames before the stride policy is applied.
    pub fn tail(raw_len: usize, horizon: usize, stride_policy: StridePolicy) -> Result<Self> {
        let len = strided_len(raw_len, stride_policy);
        if horizon >= len {
            return Err(Error::InvalidParams(format!(
                "horizon {horizon} leaves no context in a sequence of {len} frames"
            )));
        }
        Self::new(len - horizon, horizon, stride_policy)
    }

    /// Same rollout on sequences that are already strided.
    pub fn unstrided(&self) -> Self {
        RolloutSpec {
            stride_policy: StridePolicy::All,
            ..*self
        }
    }

    /// Steps the recurrent stack takes: context plus fed-back predictions.
    pub fn steps(&self) -> usize {
        self.context_len + self.horizon - 1
    }

    pub fn check(&self, sample_len: usize) -> Result<()> {
        if self.context_len == 0 || self.horizon == 0 {
            return Err(Error::InvalidParams("context and horizon must be at least 1".into()));
        }
        if self.context_len + self.horizon > sample_len {
            return Err(Error::dim(
                "sequence length for rollout",
                self.context_len + self.horizon,
                sample_len,
            ));
        }
        Ok(())
    }
}

pub fn strided_len(len: usize, policy: StridePolicy) -> usize {
    match policy {
        StridePolicy::All => len,
        StridePolicy::EvenIndices => len.div_ceil(2),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentLayer {
    pub kind: CellKind,
    /// `input x (blocks * hidden)`
    pub w: Array2<f64>,
    /// `hidden x (blocks * hidden)`
    pub u: Array2<f64>,
    pub b: Array1<f64>,
}

impl RecurrentLayer {
    pub fn input_dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn hidden_size(&self) -> usize {
        self.u.nrows()
    }

    fn validate(&self) -> Result<()> {
        let width = self.kind.gate_blocks() * self.hidden_size();
        for (what, found) in [
            ("recurrent input weights", self.w.ncols()),
            ("recurrent hidden weights", self.u.ncols()),
            ("recurrent bias", self.b.len()),
        ] {
            if found != width {
                return Err(Error::dim(what, width, found));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeqModelSpec {
    pub cell_kind: CellKind,
    pub hidden_size: usize,
    pub n_layers: usize,
    /// Predict `last latent + head(h)` instead of `head(h)`.
    pub residual: bool,
    /// Also feed each step's change from the previous latent, divided by
    /// the head scale.
    pub velocity_input: bool,
}

impl Default for SeqModelSpec {
    fn default() -> Self {
        SeqModelSpec {
            cell_kind: CellKind::Lstm,
            hidden_size: 500,
            n_layers: 2,
            residual: true,
            velocity_input: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeqModel {
    pub cell_kind: CellKind,
    pub layers: Vec<RecurrentLayer>,
    /// `hidden x latent`
    pub head_w: Array2<f64>,
    pub head_b: Array1<f64>,
    /// Fixed per-feature multiplier on the head output, not trained. Ones
    /// unless set from data; residual training sets it to the typical
    /// one-step increment so the head works at unit scale.
    pub head_scale: Array1<f64>,
    pub residual: bool,
    pub velocity_input: bool,
}

/// Gradient set laid out like [`SeqModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct SeqGradients {
    pub w: Vec<Array2<f64>>,
    pub u: Vec<Array2<f64>>,
    pub b: Vec<Array1<f64>>,
    pub head_w: Array2<f64>,
    pub head_b: Array1<f64>,
}

fn slice_of<D: ndarray::Dimension>(a: &ndarray::Array<f64, D>) -> &[f64] {
    a.as_slice().expect("standard layout")
}

fn slice_of_mut<D: ndarray::Dimension>(a: &mut ndarray::Array<f64, D>) -> &mut [f64] {
    a.as_slice_mut().expect("standard layout")
}

impl Parameters for SeqModel {
    fn param_slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for l in &self.layers {
            out.extend([slice_of(&l.w), slice_of(&l.u), slice_of(&l.b)]);
        }
        out.extend([slice_of(&self.head_w), slice_of(&self.head_b)]);
        out
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in &mut self.layers {
            out.push(slice_of_mut(&mut l.w));
            out.push(slice_of_mut(&mut l.u));
            out.push(slice_of_mut(&mut l.b));
        }
        out.push(slice_of_mut(&mut self.head_w));
        out.push(slice_of_mut(&mut self.head_b));
        out
    }
}

impl Parameters for SeqGradients {
    fn param_slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for i in 0..self.w.len() {
            out.extend([slice_of(&self.w[i]), slice_of(&self.u[i]), slice_of(&self.b[i])]);
        }
        out.extend([slice_of(&self.head_w), slice_of(&self.head_b)]);
        out
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for ((w, u), b) in self.w.iter_mut().zip(&mut self.u).zip(&mut self.b) {
            out.push(slice_of_mut(w));
            out.push(slice_of_mut(u));
            out.push(slice_of_mut(b));
        }
        out.push(slice_of_mut(&mut self.head_w));
        out.push(slice_of_mut(&mut self.head_b));
        out
    }
}

impl SeqModel {
    pub fn new(
        cell_kind: CellKind,
        layers: Vec<RecurrentLayer>,
        head_w: Array2<f64>,
        head_b: Array1<f64>,
        residual: bool,
        velocity_input: bool,
    ) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidParams("sequence model needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.kind != cell_kind {
                return Err(Error::InvalidParams(format!("layer {i} is not a {cell_kind} layer")));
            }
            l.validate()?;
            if i > 0 && l.input_dim() != layers[i - 1].hidden_size() {
                return Err(Error::dim(
                    "recurrent layer chain",
                    layers[i - 1].hidden_size(),
                    l.input_dim(),
                ));
            }
        }
        let top = layers.last().unwrap().hidden_size();
        if head_w.nrows() != top {
            return Err(Error::dim("output head rows", top, head_w.nrows()));
        }
        if head_b.len() != head_w.ncols() {
            return Err(Error::dim("output head bias", head_w.ncols(), head_b.len()));
        }
        let width = head_w.ncols() * if velocity_input { 2 } else { 1 } + N_STATIC;
        if layers[0].input_dim() != width {
            return Err(Error::dim("sequence input width", width, layers[0].input_dim()));
        }
        let head_scale = Array1::ones(head_b.len());
        Ok(SeqModel {
            cell_kind,
            layers,
            head_w,
            head_b,
            head_scale,
            residual,
            velocity_input,
        })
    }

    /// Uniform `+-1/sqrt(hidden)` recurrent weights, forget bias
    /// [`FORGET_BIAS`], Glorot-uniform head.
    pub fn init(spec: &SeqModelSpec, latent_dim: usize, seed: u64) -> Result<Self> {
        if spec.hidden_size == 0 || spec.n_layers == 0 || latent_dim == 0 {
            return Err(Error::InvalidParams(format!(
                "hidden size, layer count and latent width must be positive: {spec:?}, {latent_dim}"
            )));
        }
        let mut rng = init_rng(seed);
        let h = spec.hidden_size;
        let width = spec.cell_kind.gate_blocks() * h;
        let bound = 1.0 / (h as f64).sqrt();
        let mut layers = Vec::with_capacity(spec.n_layers);
        for i in 0..spec.n_layers {
            let input = match (i, spec.velocity_input) {
                (0, false) => latent_dim + N_STATIC,
                (0, true) => 2 * latent_dim + N_STATIC,
                _ => h,
            };
            let w = Array2::from_shape_fn((input, width), |_| rng.gen_range(-bound..=bound));
            let u = Array2::from_shape_fn((h, width), |_| rng.gen_range(-bound..=bound));
            let mut b = Array1::zeros(width);
            if spec.cell_kind == CellKind::Lstm {
                b.slice_mut(s![h..2 * h]).fill(FORGET_BIAS);
            }
            layers.push(RecurrentLayer {
                kind: spec.cell_kind,
                w,
                u,
                b,
            });
        }
        let limit = (6.0 / (h + latent_dim) as f64).sqrt();
        let head_w = Array2::from_shape_fn((h, latent_dim), |_| rng.gen_range(-limit..=limit));
        Self::new(
            spec.cell_kind,
            layers,
            head_w,
            Array1::zeros(latent_dim),
            spec.residual,
            spec.velocity_input,
        )
    }

    /// Replaces the head multiplier; entries must be finite and positive.
    pub fn with_head_scale(mut self, scale: Array1<f64>) -> Result<Self> {
        if scale.len() != self.latent_dim() {
            return Err(Error::dim("head scale", self.latent_dim(), scale.len()));
        }
        if !scale.iter().all(|v| v.is_finite() && *v > 0.0) {
            return Err(Error::InvalidParams("head scale must be finite and positive".into()));
        }
        self.head_scale = scale;
        Ok(self)
    }

    pub fn spec(&self) -> SeqModelSpec {
        SeqModelSpec {
            cell_kind: self.cell_kind,
            hidden_size: self.hidden_size(),
            n_layers: self.layers.len(),
            residual: self.residual,
            velocity_input: self.velocity_input,
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.layers[0].hidden_size()
    }

    pub fn latent_dim(&self) -> usize {
        self.head_w.ncols()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    fn zero_gradients(&self) -> SeqGradients {
        SeqGradients {
            w: self.layers.iter().map(|l| Array2::zeros(l.w.raw_dim())).collect(),
            u: self.layers.iter().map(|l| Array2::zeros(l.u.raw_dim())).collect(),
            b: self.layers.iter().map(|l| Array1::zeros(l.b.len())).collect(),
            head_w: Array2::zeros(self.head_w.raw_dim()),
            head_b: Array1::zeros(self.head_b.len()),
        }
    }
}

/// Everything a cell needs to run backwards for one step of one layer.
struct CellCache {
    x: Array2<f64>,
    h_prev: Array2<f64>,
    /// LSTM `[i, f, g, o]` or GRU `[z, r, n]`, after their nonlinearities.
    gates: Array2<f64>,
    /// LSTM only.
    c_prev: Option<Array2<f64>>,
    /// LSTM only: `tanh(c)`.
    tanh_c: Option<Array2<f64>>,
}

fn lstm_step(
    layer: &RecurrentLayer,
    x: &Array2<f64>,
    h: &Array2<f64>,
    c: &Array2<f64>,
) -> (Array2<f64>, Array2<f64>, Array2<f64>, Array2<f64>) {
    let hs = layer.hidden_size();
    let mut gates = x.dot(&layer.w) + h.dot(&layer.u) + &layer.b;
    for mut row in gates.rows_mut() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = if (2 * hs..3 * hs).contains(&j) {
                v.tanh()
            } else {
                sigmoid(*v)
            };
        }
    }
    let i = gates.slice(s![.., ..hs]);
    let f = gates.slice(s![.., hs..2 * hs]);
    let g = gates.slice(s![.., 2 * hs..3 * hs]);
    let o = gates.slice(s![.., 3 * hs..]);
    let c_new = &f * c + &i * &g;
    let tanh_c = c_new.mapv(f64::tanh);
    let h_new = &o * &tanh_c;
    (gates, c_new, tanh_c, h_new)
}

fn gru_step(layer: &RecurrentLayer, x: &Array2<f64>, h: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let hs = layer.hidden_size();
    let mut gates = x.dot(&layer.w) + &layer.b;
    let recurrent_zr = h.dot(&layer.u.slice(s![.., ..2 * hs]));
    {
        let mut zr = gates.slice_mut(s![.., ..2 * hs]);
        zr += &recurrent_zr;
        zr.mapv_inplace(sigmoid);
    }
    let rh = &gates.slice(s![.., hs..2 * hs]) * h;
    {
        let mut n = gates.slice_mut(s![.., 2 * hs..]);
        n += &rh.dot(&layer.u.slice(s![.., 2 * hs..]));
        n.mapv_inplace(f64::tanh);
    }
    let z = gates.slice(s![.., ..hs]);
    let n = gates.slice(s![.., 2 * hs..]);
    let mut h_new = h.clone();
    Zip::from(&mut h_new)
        .and(&z)
        .and(&n)
        .for_each(|hv, &zv, &nv| *hv = (1.0 - zv) * *hv + zv * nv);
    (gates, h_new)
}

fn as_row(v: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((1, v.len()), v.to_vec()).expect("one row")
}

fn check_cell(layer: &RecurrentLayer, kind: CellKind, x: &[f64], h: &[f64]) -> Result<()> {
    if layer.kind != kind {
        return Err(Error::InvalidParams(format!("expected a {kind} layer")));
    }
    layer.validate()?;
    if x.len() != layer.input_dim() {
        return Err(Error::dim("cell input", layer.input_dim(), x.len()));
    }
    if h.len() != layer.hidden_size() {
        return Err(Error::dim("cell hidden state", layer.hidden_size(), h.len()));
    }
    Ok(())
}

/// One LSTM step: returns `(h, c)`.
pub fn lstm_cell(
    layer: &RecurrentLayer,
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_cell(layer, CellKind::Lstm, x, h_prev)?;
    if c_prev.len() != layer.hidden_size() {
        return Err(Error::dim("cell state", layer.hidden_size(), c_prev.len()));
    }
    let (_, c, _, h) = lstm_step(layer, &as_row(x), &as_row(h_prev), &as_row(c_prev));
    Ok((h.into_raw_vec_and_offset().0, c.into_raw_vec_and_offset().0))
}

/// One GRU step.
pub fn gru_cell(layer: &RecurrentLayer, x: &[f64], h_prev: &[f64]) -> Result<Vec<f64>> {
    check_cell(layer, CellKind::Gru, x, h_prev)?;
    let (_, h) = gru_step(layer, &as_row(x), &as_row(h_prev));
    Ok(h.into_raw_vec_and_offset().0)
}

/// Forward trace of a batched rollout.
struct Rollout {
    /// `k` predictions, each `batch x latent`.
    predictions: Vec<Array2<f64>>,
    /// `[step][layer]`, only when recorded for backprop.
    caches: Vec<Vec<CellCache>>,
    /// Top-layer hidden state per step.
    top: Vec<Array2<f64>>,
}

fn check_batch(model: &SeqModel, batch: &[&SeqSample], spec: &RolloutSpec) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::InvalidParams("empty sequence batch".into()));
    }
    for s in batch {
        if s.latent_dim() != model.latent_dim() {
            return Err(Error::dim("sequence latent width", model.latent_dim(), s.latent_dim()));
        }
        spec.check(s.len())?;
    }
    Ok(())
}

/// Runs the context and the autoregressive tail for already strided samples.
fn rollout(model: &SeqModel, batch: &[&SeqSample], spec: &RolloutSpec, record: bool) -> Rollout {
    let bsz = batch.len();
    let hs = model.hidden_size();
    let latent = model.latent_dim();
    let statics = Array2::from_shape_fn((bsz, N_STATIC), |(b, j)| batch[b].params[j]);
    let mut h: Vec<Array2<f64>> = vec![Array2::zeros((bsz, hs)); model.layers.len()];
    let mut c: Vec<Array2<f64>> = vec![Array2::zeros((bsz, hs)); model.layers.len()];
    let mut out = Rollout {
        predictions: Vec::with_capacity(spec.horizon),
        caches: Vec::new(),
        top: Vec::new(),
    };

    // Latent fed at `step`: data inside the context, then the previous
    // prediction.
    let data = |step: usize| Array2::from_shape_fn((bsz, latent), |(b, j)| batch[b].features[[step, j]]);
    let mut prev_in: Option<Array2<f64>> = None;
    for step in 0..spec.steps() {
        let lat_in = if step < spec.context_len {
            data(step)
        } else {
            out.predictions.last().unwrap().clone()
        };
        let mut x = if model.velocity_input {
            let vel = match &prev_in {
                Some(p) => (&lat_in - p) / &model.head_scale,
                None => Array2::zeros((bsz, latent)),
            };
            concatenate![Axis(1), lat_in.view(), vel.view(), statics.view()]
        } else {
            concatenate![Axis(1), lat_in.view(), statics.view()]
        };
        let mut step_cache = Vec::new();
        for (l, layer) in model.layers.iter().enumerate() {
            let (gates, c_new, tanh_c, h_new) = match layer.kind {
                CellKind::Lstm => {
                    let (g, cn, tc, hn) = lstm_step(layer, &x, &h[l], &c[l]);
                    (g, Some(cn), Some(tc), hn)
                }
                CellKind::Gru => {
                    let (g, hn) = gru_step(layer, &x, &h[l]);
                    (g, None, None, hn)
                }
            };
            let h_prev = std::mem::replace(&mut h[l], h_new);
            let c_prev = c_new.map(|cn| std::mem::replace(&mut c[l], cn));
            if record {
                step_cache.push(CellCache {
                    x: x.clone(),
                    h_prev,
                    gates,
                    c_prev,
                    tanh_c,
                });
            }
            x = h[l].clone();
        }
        if step + 1 >= spec.context_len {
            let mut pred = (x.dot(&model.head_w) + &model.head_b) * &model.head_scale;
            if model.residual {
                pred += &lat_in;
            }
            out.predictions.push(pred);
        }
        prev_in = Some(lat_in);
        if record {
            out.caches.push(step_cache);
            out.top.push(x);
        }
    }
    out
}

fn targets(batch: &[&SeqSample], spec: &RolloutSpec, j: usize) -> Array2<f64> {
    let frame = spec.context_len + j;
    let latent = batch[0].latent_dim();
    Array2::from_shape_fn((batch.len(), latent), |(b, f)| batch[b].features[[frame, f]])
}

fn prepare(samples: &[&SeqSample], policy: StridePolicy) -> Result<Vec<SeqSample>> {
    samples.iter().map(|s| subsample_sequence(s, policy)).collect()
}

/// Predicted latent frames `[k x latent]` for one sample.
pub fn seq_forward(model: &SeqModel, sample: &SeqSample, spec: &RolloutSpec) -> Result<Array2<f64>> {
    let prepared = subsample_sequence(sample, spec.stride_policy)?;
    check_batch(model, &[&prepared], spec)?;
    let r = rollout(model, &[&prepared], spec, false);
    let views: Vec<_> = r.predictions.iter().map(|p| p.view()).collect();
    Ok(concatenate(Axis(0), &views).expect("equal widths"))
}

/// Per-horizon-index latent MSE averaged over samples, `[k]`.
pub fn horizon_mse(model: &SeqModel, samples: &[SeqSample], spec: &RolloutSpec) -> Result<Vec<f64>> {
    let refs: Vec<&SeqSample> = samples.iter().collect();
    let prepared = prepare(&refs, spec.stride_policy)?;
    let refs: Vec<&SeqSample> = prepared.iter().collect();
    check_batch(model, &refs, spec)?;
    let r = rollout(model, &refs, spec, false);
    Ok(r.predictions
        .iter()
        .enumerate()
        .map(|(j, p)| {
            let t = targets(&refs, spec, j);
            (p - &t).mapv(|d| d * d).mean().unwrap_or(0.0)
        })
        .collect())
}

/// Mean squared error over every predicted frame, sample and latent feature.
pub fn seq_loss(model: &SeqModel, samples: &[SeqSample], spec: &RolloutSpec) -> Result<f64> {
    let per = horizon_mse(model, samples, spec)?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

/// Loss and exact gradients through the full rollout, for strided samples.
fn bptt_prepared(
    model: &SeqModel,
    batch: &[&SeqSample],
    spec: &RolloutSpec,
) -> (f64, SeqGradients) {
    let bsz = batch.len();
    let latent = model.latent_dim();
    let hs = model.hidden_size();
    let n_layers = model.layers.len();
    let trace = rollout(model, batch, spec, true);
    let scale = 1.0 / (bsz * spec.horizon * latent) as f64;

    let mut loss = 0.0;
    let mut d_pred: Vec<Array2<f64>> = Vec::with_capacity(spec.horizon);
    for (j, p) in trace.predictions.iter().enumerate() {
        let diff = p - &targets(batch, spec, j);
        loss += diff.mapv(|d| d * d).sum();
        d_pred.push(diff * (2.0 * scale));
    }
    loss *= scale;

    let mut grads = model.zero_gradients();
    let mut dh_next: Vec<Array2<f64>> = vec![Array2::zeros((bsz, hs)); n_layers];
    let mut dc_next: Vec<Array2<f64>> = vec![Array2::zeros((bsz, hs)); n_layers];

    for step in (0..spec.steps()).rev() {
        let mut dx = Array2::<f64>::zeros((bsz, hs));
        let mut d_latent_in = Array2::<f64>::zeros((bsz, latent));
        if step + 1 >= spec.context_len {
            let j = step + 1 - spec.context_len;
            let dp = &d_pred[j];
            let dhead = dp * &model.head_scale;
            grads.head_w += &trace.top[step].t().dot(&dhead);
            grads.head_b += &dhead.sum_axis(Axis(0));
            dx = dhead.dot(&model.head_w.t());
            if model.residual {
                d_latent_in += dp;
            }
        }
        for l in (0..n_layers).rev() {
            let layer = &model.layers[l];
            let cache = &trace.caches[step][l];
            let dh = &dx + &dh_next[l];
            let (da, dh_prev) = match layer.kind {
                CellKind::Lstm => {
                    let g = &cache.gates;
                    let i = g.slice(s![.., ..hs]);
                    let f = g.slice(s![.., hs..2 * hs]);
                    let gg = g.slice(s![.., 2 * hs..3 * hs]);
                    let o = g.slice(s![.., 3 * hs..]);
                    let tanh_c = cache.tanh_c.as_ref().unwrap();
                    let c_prev = cache.c_prev.as_ref().unwrap();
                    let mut dc = dc_next[l].clone();
                    Zip::from(&mut dc)
                        .and(&dh)
                        .and(&o)
                        .and(tanh_c)
                        .for_each(|dc, &dh, &o, &tc| *dc += dh * o * (1.0 - tc * tc));
                    let mut da = Array2::<f64>::zeros((bsz, 4 * hs));
                    Zip::from(da.slice_mut(s![.., ..hs]))
                        .and(&dc)
                        .and(&gg)
                        .and(&i)
                        .for_each(|d, &dc, &gv, &iv| *d = dc * gv * iv * (1.0 - iv));
                    Zip::from(da.slice_mut(s![.., hs..2 * hs]))
                        .and(&dc)
                        .and(c_prev)
                        .and(&f)
                        .for_each(|d, &dc, &cp, &fv| *d = dc * cp * fv * (1.0 - fv));
                    Zip::from(da.slice_mut(s![.., 2 * hs..3 * hs]))
                        .and(&dc)
                        .and(&i)
                        .and(&gg)
                        .for_each(|d, &dc, &iv, &gv| *d = dc * iv * (1.0 - gv * gv));
                    Zip::from(da.slice_mut(s![.., 3 * hs..]))
                        .and(&dh)
                        .and(tanh_c)
                        .and(&o)
                        .for_each(|d, &dh, &tc, &ov| *d = dh * tc * ov * (1.0 - ov));
                    dc_next[l] = &dc * &f;
                    let dh_prev = da.dot(&layer.u.t());
                    grads.u[l] += &cache.h_prev.t().dot(&da);
                    (da, dh_prev)
                }
                CellKind::Gru => {
                    let g = &cache.gates;
                    let z = g.slice(s![.., ..hs]);
                    let r = g.slice(s![.., hs..2 * hs]);
                    let n = g.slice(s![.., 2 * hs..]);
                    let h_prev = &cache.h_prev;
                    let mut da = Array2::<f64>::zeros((bsz, 3 * hs));
                    // Candidate block.
                    Zip::from(da.slice_mut(s![.., 2 * hs..]))
                        .and(&dh)
                        .and(&z)
                        .and(&n)
                        .for_each(|d, &dh, &zv, &nv| *d = dh * zv * (1.0 - nv * nv));
                    let da_n = da.slice(s![.., 2 * hs..]).to_owned();
                    let u_n = layer.u.slice(s![.., 2 * hs..]);
                    let d_rh = da_n.dot(&u_n.t());
                    let rh = &r * h_prev;
                    grads.u[l].slice_mut(s![.., 2 * hs..]).scaled_add(1.0, &rh.t().dot(&da_n));
                    Zip::from(da.slice_mut(s![.., ..hs]))
                        .and(&dh)
                        .and(&n)
                        .and(h_prev)
                        .for_each(|d, &dh, &nv, &hp| *d = dh * (nv - hp));
                    Zip::from(da.slice_mut(s![.., ..hs]))
                        .and(&z)
                        .for_each(|d, &zv| *d *= zv * (1.0 - zv));
                    Zip::from(da.slice_mut(s![.., hs..2 * hs]))
                        .and(&d_rh)
                        .and(h_prev)
                        .and(&r)
                        .for_each(|d, &drh, &hp, &rv| *d = drh * hp * rv * (1.0 - rv));
                    let da_zr = da.slice(s![.., ..2 * hs]);
                    let u_zr = layer.u.slice(s![.., ..2 * hs]);
                    grads.u[l].slice_mut(s![.., ..2 * hs]).scaled_add(1.0, &h_prev.t().dot(&da_zr));
                    let mut dh_prev = da_zr.dot(&u_zr.t());
                    Zip::from(&mut dh_prev)
                        .and(&dh)
                        .and(&z)
                        .and(&d_rh)
                        .and(&r)
                        .for_each(|dp, &dh, &zv, &drh, &rv| *dp += dh * (1.0 - zv) + drh * rv);
                    (da, dh_prev)
                }
            };
            grads.w[l] += &cache.x.t().dot(&da);
            grads.b[l] += &da.sum_axis(Axis(0));
            dh_next[l] = dh_prev;
            dx = da.dot(&layer.w.t());
        }
        // dx now holds the gradient of this step's network input.
        if step >= spec.context_len {
            d_latent_in += &dx.slice(s![.., ..latent]);
            // The input at this step is the previous prediction, and the one
            // before it enters through the velocity.
            let j = step - spec.context_len;
            if model.velocity_input {
                let dv = &dx.slice(s![.., latent..2 * latent]) / &model.head_scale;
                d_latent_in += &dv;
                if j > 0 {
                    d_pred[j - 1] -= &dv;
                }
            }
            d_pred[j] += &d_latent_in;
        }
    }
    (loss, grads)
}

/// Mean latent MSE over all `k` predicted frames and its exact gradients.
pub fn bptt_gradients(
    model: &SeqModel,
    batch: &[SeqSample],
    spec: &RolloutSpec,
) -> Result<(f64, SeqGradients)> {
    let refs: Vec<&SeqSample> = batch.iter().collect();
    let prepared = prepare(&refs, spec.stride_policy)?;
    let refs: Vec<&SeqSample> = prepared.iter().collect();
    check_batch(model, &refs, spec)?;
    Ok(bptt_prepared(model, &refs, spec))
}

/// Seeded split over samples, minibatch training, early stopping.
pub fn seq_train(
    dataset: &[SeqSample],
    model_spec: &SeqModelSpec,
    config: &TrainConfig,
    spec: &RolloutSpec,
) -> Result<(SeqModel, TrainHistory)> {
    config.validate()?;
    if dataset.len() < 2 {
        return Err(Error::InvalidParams(format!(
            "sequence training needs at least 2 samples, got {}",
            dataset.len()
        )));
    }
    let (train_idx, val_idx) = split_indices(dataset.len(), config.validation_fraction, config.seed)?;
    let train: Vec<SeqSample> = train_idx.iter().map(|&i| dataset[i].clone()).collect();
    let val: Vec<SeqSample> = val_idx.iter().map(|&i| dataset[i].clone()).collect();
    seq_train_split(&train, &val, model_spec, config, spec)
}

/// Like [`seq_train`] with the train/validation split supplied by the caller.
pub fn seq_train_split(
    train: &[SeqSample],
    validation: &[SeqSample],
    model_spec: &SeqModelSpec,
    config: &TrainConfig,
    spec: &RolloutSpec,
) -> Result<(SeqModel, TrainHistory)> {
    config.validate()?;
    if train.is_empty() || validation.is_empty() {
        return Err(Error::InvalidParams(
            "sequence training needs non-empty train and validation sets".into(),
        ));
    }
    let refs: Vec<&SeqSample> = train.iter().collect();
    let train = prepare(&refs, spec.stride_policy)?;
    let refs: Vec<&SeqSample> = validation.iter().collect();
    let val = prepare(&refs, spec.stride_policy)?;
    let mut model = SeqModel::init(model_spec, train[0].latent_dim(), config.seed)?;
    if model.residual || model.velocity_input {
        model = model.with_head_scale(increment_scale(&train))?;
    }
    let train: Vec<&SeqSample> = train.iter().collect();
    let val: Vec<&SeqSample> = val.iter().collect();
    check_batch(&model, &train, spec)?;
    check_batch(&model, &val, spec)?;

    train_loop(
        model,
        config,
        train.len(),
        |m, rows| {
            let batch: Vec<&SeqSample> = rows.iter().map(|&i| train[i]).collect();
            Ok(bptt_prepared(m, &batch, spec))
        },
        |m| Ok(prepared_loss(m, &val, spec)),
    )
}

/// Root-mean-square one-step change of each latent feature over strided
/// samples. Features that never change get 1.
pub fn increment_scale(samples: &[SeqSample]) -> Array1<f64> {
    let latent = samples[0].latent_dim();
    let mut acc = Array1::<f64>::zeros(latent);
    let mut n = 0usize;
    for s in samples {
        let f = s.features.slice(s![.., ..latent]);
        for t in 1..f.nrows() {
            let d = &f.row(t) - &f.row(t - 1);
            acc += &d.mapv(|v| v * v);
            n += 1;
        }
    }
    acc.mapv(|v| {
        let rms = (v / n.max(1) as f64).sqrt();
        if rms > 0.0 && rms.is_finite() {
            rms
        } else {
            1.0
        }
    })
}

/// Every run of `context_len + horizon` consecutive frames after the stride
/// policy, oldest first. Windows are already strided: roll them out with
/// [`RolloutSpec::unstrided`].
pub fn rollout_windows(sample: &SeqSample, spec: &RolloutSpec) -> Result<Vec<SeqSample>> {
    let prepared = subsample_sequence(sample, spec.stride_policy)?;
    spec.check(prepared.len())?;
    let width = spec.context_len + spec.horizon;
    (0..=prepared.len() - width)
        .map(|start| {
            SeqSample::from_features(
                prepared.features.slice(s![start..start + width, ..]).to_owned(),
                prepared.params,
            )
        })
        .collect()
}

/// The last of [`rollout_windows`]: context and targets end with the sequence.
pub fn tail_window(sample: &SeqSample, spec: &RolloutSpec) -> Result<SeqSample> {
    let prepared = subsample_sequence(sample, spec.stride_policy)?;
    spec.check(prepared.len())?;
    let start = prepared.len() - spec.context_len - spec.horizon;
    SeqSample::from_features(prepared.features.slice(s![start.., ..]).to_owned(), prepared.params)
}

fn prepared_loss(model: &SeqModel, batch: &[&SeqSample], spec: &RolloutSpec) -> f64 {
    let r = rollout(model, batch, spec, false);
    let total: f64 = r
        .predictions
        .iter()
        .enumerate()
        .map(|(j, p)| (p - &targets(batch, spec, j)).mapv(|d| d * d).sum())
        .sum();
    total / (batch.len() * spec.horizon * model.latent_dim()) as f64
}

/// Latent rows of `sample` at the frames the rollout predicts, `[k x latent]`.
pub fn rollout_targets(sample: &SeqSample, spec: &RolloutSpec) -> Result<Array2<f64>> {
    let prepared = subsample_sequence(sample, spec.stride_policy)?;
    spec.check(prepared.len())?;
    Ok(prepared
        .latent()
        .slice(s![spec.context_len..spec.context_len + spec.horizon, ..])
        .to_owned())
}

/// Latent row of the last context frame.
pub fn last_context_frame(sample: &SeqSample, spec: &RolloutSpec) -> Result<Array1<f64>> {
    let prepared = subsample_sequence(sample, spec.stride_policy)?;
    spec.check(prepared.len())?;
    Ok(prepared.latent().row(spec.context_len - 1).to_owned())
}
