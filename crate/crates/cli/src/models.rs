//! Model directories: a `model.txt` header plus one container per tensor.
//!
//! Parameters are stored as `f64` containers so a reloaded model computes
//! exactly what the trained one did.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2};
use spinodal::optim::Parameters;
use spinodal::reduce::{AEArchitecture, AEModel, Activation, PCAModel, ScalerKind, ScalerModel, SecondStage};
use spinodal::sequence::{CellKind, RolloutSpec, SeqModel, SeqModelSpec, StridePolicy};

use crate::container::{self, DType, Tensor};
use crate::error::{CliError, Result};

pub const MODEL_HEADER: &str = "# spinodal model v1";
pub const HEADER_FILE: &str = "model.txt";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelHeader {
    pub entries: Vec<(String, String)>,
}

impl ModelHeader {
    pub fn new(kind: &str) -> Self {
        ModelHeader {
            entries: vec![("kind".into(), kind.into())],
        }
    }

    pub fn push(&mut self, key: &str, value: impl ToString) {
        self.entries.push((key.into(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| CliError::Format(format!("model header lacks '{key}'")))
    }

    pub fn get_opt(&self, key: &str) -> Option<&str> {
        self.get(key).ok()
    }

    pub fn parse_value<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.get(key)?;
        raw.parse()
            .map_err(|_| CliError::Format(format!("model header: bad {key} '{raw}'")))
    }

    pub fn list<T: std::str::FromStr>(&self, key: &str) -> Result<Vec<T>> {
        self.get(key)?
            .split(',')
            .map(|s| {
                s.parse()
                    .map_err(|_| CliError::Format(format!("model header: bad {key} entry '{s}'")))
            })
            .collect()
    }

    pub fn kind(&self) -> Result<&str> {
        self.get("kind")
    }

    pub fn emit(&self) -> String {
        let mut out = format!("{MODEL_HEADER}\n");
        for (k, v) in &self.entries {
            writeln!(out, "{k}={v}").unwrap();
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(MODEL_HEADER) {
            return Err(CliError::Format("missing model header".into()));
        }
        let entries = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                l.split_once('=')
                    .map(|(k, v)| (k.to_string(), v.to_string()))
                    .ok_or_else(|| CliError::Format(format!("model header line '{l}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ModelHeader { entries })
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_header(dir: &Path, header: &ModelHeader) -> Result<()> {
    container::write_atomic(&dir.join(HEADER_FILE), header.emit().as_bytes())
}

pub fn read_header(dir: &Path) -> Result<ModelHeader> {
    let path = dir.join(HEADER_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    ModelHeader::parse(&text)
}

fn write_tensor(dir: &Path, name: &str, dims: Vec<usize>, data: Vec<f64>) -> Result<()> {
    container::write(&dir.join(format!("{name}.pfds")), &Tensor::new(dims, data)?, DType::F64)
}

fn read_tensor(dir: &Path, name: &str, dims: &[usize]) -> Result<Vec<f64>> {
    let t = container::read(&dir.join(format!("{name}.pfds")))?;
    if t.dims != dims {
        return Err(CliError::Shape(format!(
            "{name}: expected dims {dims:?}, found {:?}",
            t.dims
        )));
    }
    Ok(t.data)
}

fn join<T: ToString>(items: impl IntoIterator<Item = T>) -> String {
    items.into_iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

/// Frame geometry an autoencoder was trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameShape {
    pub nx: usize,
    pub ny: usize,
    pub channels: usize,
}

pub fn save_autoencoder(dir: &Path, model: &AEModel, frame: Option<FrameShape>) -> Result<()> {
    create_dir(dir)?;
    let arch = model.architecture();
    let mut h = ModelHeader::new("autoencoder");
    h.push("dims", join(&arch.dims));
    h.push("code_index", arch.code_index);
    h.push("activations", join(arch.activations.iter().map(|a| a.name())));
    if let Some(f) = frame {
        h.push("frame", format!("{},{},{}", f.nx, f.ny, f.channels));
    }
    write_tensor(dir, "params", vec![model.param_count()], model.flat_params())?;
    write_header(dir, &h)
}

pub fn load_autoencoder(dir: &Path) -> Result<(AEModel, Option<FrameShape>)> {
    let h = read_header(dir)?;
    expect_kind(&h, "autoencoder", dir)?;
    let activations = h
        .get("activations")?
        .split(',')
        .map(|s| s.parse::<Activation>().map_err(|e| CliError::Format(e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    let arch = AEArchitecture {
        dims: h.list("dims")?,
        code_index: h.parse_value("code_index")?,
        activations,
    };
    let mut model = AEModel::init(&arch, 0).map_err(|e| CliError::Format(e.to_string()))?;
    let params = read_tensor(dir, "params", &[model.param_count()])?;
    model.set_flat_params(&params)?;
    let frame = match h.get_opt("frame") {
        Some(_) => {
            let v: Vec<usize> = h.list("frame")?;
            if v.len() != 3 {
                return Err(CliError::Format("frame must be nx,ny,channels".into()));
            }
            Some(FrameShape {
                nx: v[0],
                ny: v[1],
                channels: v[2],
            })
        }
        None => None,
    };
    Ok((model, frame))
}

pub fn save_pca(dir: &Path, scaler: &ScalerModel, pca: &PCAModel) -> Result<()> {
    create_dir(dir)?;
    let (k, m) = pca.components.dim();
    let mut h = ModelHeader::new("pca");
    h.push("features", m);
    h.push("components", k);
    h.push("scaler", scaler.kind.name());
    h.push("rank_deficient", pca.rank_deficient);
    write_tensor(dir, "mean", vec![m], pca.mean.to_vec())?;
    write_tensor(dir, "components", vec![k, m], pca.components.iter().copied().collect())?;
    write_tensor(dir, "eigenvalues", vec![m], pca.eigenvalues.to_vec())?;
    write_tensor(dir, "scaler_offset", vec![m], scaler.offset.clone())?;
    write_tensor(dir, "scaler_spread", vec![m], scaler.spread.clone())?;
    write_header(dir, &h)
}

pub fn load_pca(dir: &Path) -> Result<(ScalerModel, PCAModel)> {
    let h = read_header(dir)?;
    expect_kind(&h, "pca", dir)?;
    let m: usize = h.parse_value("features")?;
    let k: usize = h.parse_value("components")?;
    let kind: ScalerKind = h
        .get("scaler")?
        .parse()
        .map_err(|e: spinodal::Error| CliError::Format(e.to_string()))?;
    let eigenvalues = Array1::from(read_tensor(dir, "eigenvalues", &[m])?);
    let spread = read_tensor(dir, "scaler_spread", &[m])?;
    let scaler = ScalerModel {
        kind,
        offset: read_tensor(dir, "scaler_offset", &[m])?,
        zero_spread: spread.iter().map(|&s| !(s > 0.0)).collect(),
        spread,
    };
    let pca = PCAModel {
        mean: Array1::from(read_tensor(dir, "mean", &[m])?),
        components: Array2::from_shape_vec((k, m), read_tensor(dir, "components", &[k, m])?)
            .expect("dims checked"),
        total_variance: eigenvalues.sum(),
        eigenvalues,
        rank_deficient: h.parse_value("rank_deficient")?,
    };
    Ok((scaler, pca))
}

/// Loads a stage-2 model of either kind.
pub fn load_second_stage(dir: &Path) -> Result<SecondStage> {
    match read_header(dir)?.kind()? {
        "pca" => {
            let (scaler, pca) = load_pca(dir)?;
            Ok(SecondStage::Pca { scaler, pca })
        }
        "autoencoder" => Ok(SecondStage::Autoencoder(load_autoencoder(dir)?.0)),
        other => Err(CliError::Format(format!(
            "{}: '{other}' cannot act as a second stage",
            dir.display()
        ))),
    }
}

pub fn save_sequence(dir: &Path, model: &SeqModel, rollout: &RolloutSpec) -> Result<()> {
    create_dir(dir)?;
    let mut h = ModelHeader::new("sequence");
    h.push("cell", model.cell_kind.name());
    h.push("hidden", model.hidden_size());
    h.push("layers", model.layers.len());
    h.push("latent", model.latent_dim());
    h.push("residual", model.residual);
    h.push("velocity_input", model.velocity_input);
    h.push("context_len", rollout.context_len);
    h.push("horizon", rollout.horizon);
    h.push("stride", rollout.stride_policy.name());
    write_tensor(dir, "params", vec![model.param_count()], model.flat_params())?;
    write_tensor(dir, "head_scale", vec![model.latent_dim()], model.head_scale.to_vec())?;
    write_header(dir, &h)
}

pub fn load_sequence(dir: &Path) -> Result<(SeqModel, RolloutSpec)> {
    let h = read_header(dir)?;
    expect_kind(&h, "sequence", dir)?;
    let fmt_err = |e: spinodal::Error| CliError::Format(e.to_string());
    let cell: CellKind = h.get("cell")?.parse().map_err(fmt_err)?;
    let stride: StridePolicy = h.get("stride")?.parse().map_err(fmt_err)?;
    let spec = SeqModelSpec {
        cell_kind: cell,
        hidden_size: h.parse_value("hidden")?,
        n_layers: h.parse_value("layers")?,
        residual: h.parse_value("residual")?,
        velocity_input: h.parse_value("velocity_input")?,
    };
    let mut model = SeqModel::init(&spec, h.parse_value("latent")?, 0).map_err(fmt_err)?;
    let params = read_tensor(dir, "params", &[model.param_count()])?;
    model.set_flat_params(&params)?;
    let scale = read_tensor(dir, "head_scale", &[model.latent_dim()])?;
    let model = model.with_head_scale(scale.into()).map_err(fmt_err)?;
    let rollout = RolloutSpec::new(h.parse_value("context_len")?, h.parse_value("horizon")?, stride)
        .map_err(fmt_err)?;
    Ok((model, rollout))
}

fn expect_kind(h: &ModelHeader, kind: &str, dir: &Path) -> Result<()> {
    let found = h.kind()?;
    if found != kind {
        return Err(CliError::Format(format!(
            "{}: expected a {kind} model, found {found}",
            dir.display()
        )));
    }
    Ok(())
}
