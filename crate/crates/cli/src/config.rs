//! `key = value` run configuration.
//!
//! Every tunable has a documented key with a default. Files may set any
//! subset; `--set key=value` flags are applied afterwards. Unknown keys are
//! rejected.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use spinodal::optim::{OptimizerKind, TrainConfig};
use spinodal::phasefield::{PFParams, ParamRange, PotentialForm, SweepSpec};
use spinodal::reduce::{AEArchitecture, Activation, ScalerKind};
use spinodal::sequence::{CellKind, SeqModelSpec, StridePolicy};
use spinodal::spectral::GridSpec;

use crate::error::{CliError, Result};

/// `(key, default, description)`
pub const KEYS: &[(&str, &str, &str)] = &[
    ("grid.nx", "128", "grid points along x (even)"),
    ("grid.ny", "128", "grid points along y (even)"),
    ("grid.dx", "1", "grid spacing along x"),
    ("grid.dy", "1", "grid spacing along y"),
    ("sim.dt", "0.01", "time step"),
    ("sim.steps", "20000", "time steps per simulation"),
    ("sim.stride", "200", "steps between stored frames"),
    ("sim.noise", "0.05", "initial uniform noise amplitude"),
    ("sim.barrier", "1", "double-well barrier height A"),
    ("sim.potential", "standard_double_well", "standard_double_well | as_written"),
    ("sweep.samples", "100", "number of simulations"),
    ("sweep.seed", "0", "base seed; sample i uses mix_seed(seed, i)"),
    ("sweep.x0_min", "0.25", "lower bound of the mean concentration"),
    ("sweep.x0_max", "0.75", "upper bound of the mean concentration"),
    ("sweep.mobility_min", "0.8", "lower bound of the mobility"),
    ("sweep.mobility_max", "2.2", "upper bound of the mobility"),
    ("sweep.kappa_min", "0.25", "lower bound of the gradient coefficient"),
    ("sweep.kappa_max", "0.75", "upper bound of the gradient coefficient"),
    ("frames.channels", "1", "1 = scalar frames, 3 = replicated RGB vectors"),
    ("ae1.code", "750", "stage-1 code width"),
    ("ae1.hidden_layers", "0", "hidden layers per side of the stage-1 code"),
    ("ae1.hidden_activation", "relu", "relu | tanh | sigmoid | identity"),
    ("ae1.output_activation", "sigmoid", "relu | tanh | sigmoid | identity"),
    ("ae1.max_rows", "0", "train on at most this many evenly spaced frames (0 = all)"),
    ("ae2.code", "250", "stage-2 code width"),
    ("ae2.hidden_layers", "1", "hidden layers per side, geometric widths"),
    ("ae2.hidden_activation", "relu", "relu | tanh | sigmoid | identity"),
    ("ae2.output_activation", "identity", "relu | tanh | sigmoid | identity"),
    ("ae2.max_rows", "0", "train on at most this many evenly spaced rows (0 = all)"),
    ("pca.components", "250", "retained principal components"),
    ("pca.scaler", "minmax", "minmax | zscore, applied before PCA"),
    ("seq.cell", "lstm", "lstm | gru"),
    ("seq.hidden", "500", "units per recurrent layer"),
    ("seq.layers", "2", "stacked recurrent layers"),
    ("seq.residual", "true", "predict last latent plus a learned increment"),
    ("seq.velocity_input", "false", "also feed the scaled change from the previous latent"),
    ("seq.horizon", "5", "predicted frames k"),
    ("seq.context_len", "0", "frames consumed before predicting (0 = T - k)"),
    ("seq.stride", "even_indices", "all | even_indices, applied before windowing"),
    ("seq.windows", "false", "train on every window of context_len + k frames, not only the last"),
    ("seq.horizon_sweep", "", "comma-separated extra horizons to train and report"),
    ("decode.clamp", "true", "clamp decoded images to [0, 1]"),
];

/// Training keys shared by the `ae1`, `ae2` and `seq` namespaces.
const TRAIN_KEYS: &[(&str, &str, &str)] = &[
    ("optimizer", "adam", "adam | sgd_momentum"),
    ("learning_rate", "0.001", "optimizer step size"),
    ("momentum", "0.9", "momentum for sgd_momentum"),
    ("weight_decay", "0", "decoupled per-step parameter shrinkage, scaled by learning_rate"),
    ("batch_size", "32", "minibatch size"),
    ("max_epochs", "200", "epoch limit"),
    ("patience", "10", "epochs without improvement before stopping"),
    ("min_delta", "0.00001", "smallest validation improvement that counts"),
    ("validation_fraction", "0.1", "share of rows or samples held out"),
    ("seed", "0", "split, shuffle and initialization seed"),
];

const TRAIN_NAMESPACES: &[&str] = &["ae1", "ae2", "seq"];

/// All documented keys with defaults, in display order.
pub fn documented_keys() -> Vec<(String, String, String)> {
    let mut out: Vec<(String, String, String)> = KEYS
        .iter()
        .map(|(k, d, h)| (k.to_string(), d.to_string(), h.to_string()))
        .collect();
    for ns in TRAIN_NAMESPACES {
        for (k, d, h) in TRAIN_KEYS {
            let default = match (*ns, *k) {
                ("seq", "batch_size") => "16",
                _ => d,
            };
            out.push((format!("{ns}.{k}"), default.to_string(), h.to_string()));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            values: documented_keys().into_iter().map(|(k, d, _)| (k, d)).collect(),
        }
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.trim().to_string();
                Ok(())
            }
            None => Err(CliError::Config(format!("unknown key '{key}'"))),
        }
    }

    /// Applies a `key=value` assignment.
    pub fn assign(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("expected key=value, got '{assignment}'")))?;
        self.set(k.trim(), v)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.merge_text(text)?;
        Ok(cfg)
    }

    pub fn merge_text(&mut self, text: &str) -> Result<()> {
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            self.assign(line)
                .map_err(|e| CliError::Config(format!("line {}: {e}", no + 1)))?;
        }
        Ok(())
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut cfg = RunConfig::default();
        if let Some(p) = path {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            cfg.merge_text(&text)?;
        }
        for o in overrides {
            cfg.assign(o)?;
        }
        Ok(cfg)
    }

    /// Every key, one `key = value` line each, sorted.
    pub fn emit(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn raw(&self, key: &str) -> Result<&str> {
        self.values
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| CliError::Config(format!("unknown key '{key}'")))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.raw(key)?;
        raw.parse()
            .map_err(|_| CliError::Config(format!("cannot parse {key} = '{raw}'")))
    }

    pub fn get_parsed<T>(&self, key: &str) -> Result<T>
    where
        T: FromStr<Err = spinodal::Error>,
    {
        let raw = self.raw(key)?;
        raw.parse().map_err(|e| CliError::Config(format!("{key}: {e}")))
    }

    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::new(
            self.get("grid.nx")?,
            self.get("grid.ny")?,
            self.get("grid.dx")?,
            self.get("grid.dy")?,
        )
        .map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn numerics(&self) -> Result<PFParams> {
        let potential: PotentialForm = self.get_parsed("sim.potential")?;
        Ok(PFParams {
            dt: self.get("sim.dt")?,
            n_steps: self.get("sim.steps")?,
            snapshot_stride: self.get("sim.stride")?,
            noise_amp: self.get("sim.noise")?,
            barrier_a: self.get("sim.barrier")?,
            potential_form: potential,
            ..PFParams::default()
        })
    }

    pub fn sweep(&self) -> Result<SweepSpec> {
        let range = |lo: &str, hi: &str| -> Result<ParamRange> {
            Ok(ParamRange::new(self.get(lo)?, self.get(hi)?))
        };
        let sweep = SweepSpec {
            n_samples: self.get("sweep.samples")?,
            x0: range("sweep.x0_min", "sweep.x0_max")?,
            mobility: range("sweep.mobility_min", "sweep.mobility_max")?,
            kappa: range("sweep.kappa_min", "sweep.kappa_max")?,
            base_seed: self.get("sweep.seed")?,
            grid: self.grid()?,
            numerics: self.numerics()?,
        };
        sweep.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(sweep)
    }

    pub fn channels(&self) -> Result<usize> {
        let c: usize = self.get("frames.channels")?;
        if c != 1 && c != 3 {
            return Err(CliError::Config(format!("frames.channels must be 1 or 3, got {c}")));
        }
        Ok(c)
    }

    pub fn train_config(&self, ns: &str) -> Result<TrainConfig> {
        let key = |k: &str| format!("{ns}.{k}");
        let optimizer: OptimizerKind = self.get_parsed(&key("optimizer"))?;
        let cfg = TrainConfig {
            optimizer,
            learning_rate: self.get(&key("learning_rate"))?,
            momentum: self.get(&key("momentum"))?,
            weight_decay: self.get(&key("weight_decay"))?,
            batch_size: self.get(&key("batch_size"))?,
            max_epochs: self.get(&key("max_epochs"))?,
            patience: self.get(&key("patience"))?,
            min_delta: self.get(&key("min_delta"))?,
            validation_fraction: self.get(&key("validation_fraction"))?,
            seed: self.get(&key("seed"))?,
        };
        cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    /// Autoencoder layout for namespace `ae1` or `ae2` over `input` features.
    pub fn ae_architecture(&self, ns: &str, input: usize) -> Result<AEArchitecture> {
        let key = |k: &str| format!("{ns}.{k}");
        let hidden: Activation = self.get_parsed(&key("hidden_activation"))?;
        let output: Activation = self.get_parsed(&key("output_activation"))?;
        let code: usize = self.get(&key("code"))?;
        let n_hidden: usize = self.get(&key("hidden_layers"))?;
        if code == 0 || code >= input {
            return Err(CliError::Config(format!(
                "{ns}.code must lie in [1, {}), got {code}",
                input
            )));
        }
        Ok(AEArchitecture::geometric(input, code, n_hidden, hidden, output))
    }

    pub fn scaler(&self) -> Result<ScalerKind> {
        self.get_parsed("pca.scaler")
    }

    pub fn seq_model_spec(&self) -> Result<SeqModelSpec> {
        let cell: CellKind = self.get_parsed("seq.cell")?;
        Ok(SeqModelSpec {
            cell_kind: cell,
            hidden_size: self.get("seq.hidden")?,
            n_layers: self.get("seq.layers")?,
            residual: self.get("seq.residual")?,
            velocity_input: self.get("seq.velocity_input")?,
        })
    }

    pub fn stride_policy(&self) -> Result<StridePolicy> {
        self.get_parsed("seq.stride")
    }

    pub fn horizon_sweep(&self) -> Result<Vec<usize>> {
        self.raw("seq.horizon_sweep")?
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|_| CliError::Config(format!("bad horizon '{s}' in seq.horizon_sweep")))
            })
            .collect()
    }
}
