//! Error measures, explained-variance tables, the persistence baseline and
//! the plain-text evaluation report.

use std::fmt::Write as _;

use ndarray::{Array2, ArrayBase, Axis, Data, Dimension};

use crate::error::{Error, Result};
use crate::reduce::PCAModel;
use crate::sequence::{last_context_frame, RolloutSpec, SeqSample};

/// Mean of squared elementwise differences over every element.
pub fn mse<S1, S2, D>(a: &ArrayBase<S1, D>, b: &ArrayBase<S2, D>) -> Result<f64>
where
    S1: Data<Elem = f64>,
    S2: Data<Elem = f64>,
    D: Dimension,
{
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(a.shape().to_vec(), b.shape().to_vec()));
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / a.len() as f64)
}

/// Slice form of [`mse`].
pub fn mse_slices(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(vec![a.len()], vec![b.len()]));
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64)
}

/// `(component count, cumulative explained ratio)` for every retained component.
pub fn explained_variance_table(model: &PCAModel) -> Vec<(usize, f64)> {
    let mut acc = 0.0;
    model
        .explained_variance_ratio()
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            acc += r;
            (i + 1, acc.min(1.0))
        })
        .collect()
}

/// Repeats the last context frame for every predicted step, `[k x latent]`.
pub fn persistence_baseline(sample: &SeqSample, spec: &RolloutSpec) -> Result<Array2<f64>> {
    let last = last_context_frame(sample, spec)?;
    Ok(last
        .insert_axis(Axis(0))
        .broadcast((spec.horizon, sample.latent_dim()))
        .expect("row broadcast")
        .to_owned())
}

pub const REPORT_HEADER: &str = "# spinodal eval report v1";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StageMse {
    pub stage: String,
    pub train: Option<f64>,
    pub validation: Option<f64>,
}

/// Input and final code widths of a reduction chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Reduction {
    pub input_dim: usize,
    pub code_dim: usize,
}

impl Reduction {
    /// `code / input`, in `(0, 1]` for a reducing chain.
    pub fn fraction(&self) -> f64 {
        self.code_dim as f64 / self.input_dim as f64
    }

    /// `1/N` with `N = floor(input / code)`.
    pub fn label(&self) -> String {
        format!("1/{}", self.input_dim / self.code_dim)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub stages: Vec<String>,
    pub stage_mse: Vec<StageMse>,
    /// `(component count, cumulative ratio)`.
    pub explained_variance: Vec<(usize, f64)>,
    pub reduction: Option<Reduction>,
    /// `(horizon, validation loss)`.
    pub horizon_loss: Vec<(usize, f64)>,
    /// Further named measurements.
    pub values: Vec<(String, f64)>,
    /// Wall-clock seconds per phase.
    pub timings: Vec<(String, f64)>,
}

fn check_name(name: &str) -> Result<()> {
    if name.is_empty() || name.chars().any(|c| c.is_whitespace() || "=.[]#".contains(c)) {
        return Err(Error::InvalidParams(format!("invalid report name '{name}'")));
    }
    Ok(())
}

fn check_finite(what: &str, v: f64) -> Result<()> {
    if !v.is_finite() {
        return Err(Error::InvalidParams(format!("{what} is not finite: {v}")));
    }
    Ok(())
}

impl EvalReport {
    pub fn validate(&self) -> Result<()> {
        for s in &self.stages {
            check_name(s)?;
        }
        for m in &self.stage_mse {
            check_name(&m.stage)?;
            for v in m.train.iter().chain(&m.validation) {
                check_finite("stage mse", *v)?;
            }
        }
        let mut prev = 0.0;
        let mut prev_count = 0;
        for &(count, ratio) in &self.explained_variance {
            if !(0.0..=1.0).contains(&ratio) {
                return Err(Error::InvalidParams(format!(
                    "explained variance ratio {ratio} outside [0,1]"
                )));
            }
            if ratio < prev || count <= prev_count {
                return Err(Error::InvalidParams(
                    "explained variance table must be increasing in count and non-decreasing in ratio"
                        .into(),
                ));
            }
            prev = ratio;
            prev_count = count;
        }
        if let Some(r) = self.reduction {
            if r.code_dim == 0 || r.code_dim > r.input_dim {
                return Err(Error::InvalidParams(format!(
                    "reduction {} -> {} is not a reduction",
                    r.input_dim, r.code_dim
                )));
            }
        }
        for (_, v) in &self.horizon_loss {
            check_finite("horizon loss", *v)?;
        }
        for (k, v) in self.values.iter().chain(&self.timings) {
            check_name(k)?;
            check_finite(k, *v)?;
        }
        Ok(())
    }

    /// Line-oriented `key=value` sections. Floats use the shortest
    /// representation that parses back to the same value.
    pub fn emit(&self) -> Result<String> {
        self.validate()?;
        let mut out = String::new();
        let w = &mut out;
        writeln!(w, "{REPORT_HEADER}").unwrap();
        writeln!(w, "[stages]").unwrap();
        writeln!(w, "names={}", self.stages.join(",")).unwrap();
        writeln!(w, "[mse]").unwrap();
        for m in &self.stage_mse {
            if let Some(v) = m.train {
                writeln!(w, "{}.train={v:?}", m.stage).unwrap();
            }
            if let Some(v) = m.validation {
                writeln!(w, "{}.validation={v:?}", m.stage).unwrap();
            }
            if m.train.is_none() && m.validation.is_none() {
                writeln!(w, "{}.none=", m.stage).unwrap();
            }
        }
        writeln!(w, "[explained_variance]").unwrap();
        for (k, r) in &self.explained_variance {
            writeln!(w, "{k}={r:?}").unwrap();
        }
        writeln!(w, "[reduction]").unwrap();
        if let Some(r) = self.reduction {
            writeln!(w, "input_dim={}", r.input_dim).unwrap();
            writeln!(w, "code_dim={}", r.code_dim).unwrap();
            writeln!(w, "fraction={:?}", r.fraction()).unwrap();
            writeln!(w, "label={}", r.label()).unwrap();
        }
        writeln!(w, "[horizon_loss]").unwrap();
        for (k, v) in &self.horizon_loss {
            writeln!(w, "{k}={v:?}").unwrap();
        }
        writeln!(w, "[values]").unwrap();
        for (k, v) in &self.values {
            writeln!(w, "{k}={v:?}").unwrap();
        }
        writeln!(w, "[timings]").unwrap();
        for (k, v) in &self.timings {
            writeln!(w, "{k}={v:?}").unwrap();
        }
        Ok(out)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: &str| {
            Error::InvalidParams(format!("report line {}: {msg}", line + 1))
        };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h == REPORT_HEADER => {}
            _ => return Err(bad(0, "missing report header")),
        }
        let mut report = EvalReport::default();
        let mut section = String::new();
        let mut input_dim = None;
        let mut code_dim = None;
        for (no, line) in lines {
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.to_string();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| bad(no, "expected key=value"))?;
            let float = || value.parse::<f64>().map_err(|_| bad(no, "bad number"));
            let count = || key.parse::<usize>().map_err(|_| bad(no, "bad count"));
            match section.as_str() {
                "stages" if key == "names" => {
                    report.stages = value
                        .split(',')
                        .filter(|s| !s.is_empty())
                        .map(str::to_string)
                        .collect();
                }
                "mse" => {
                    let (stage, split) = key.rsplit_once('.').ok_or_else(|| bad(no, "bad mse key"))?;
                    if report.stage_mse.last().map(|m| m.stage.as_str()) != Some(stage) {
                        report.stage_mse.push(StageMse {
                            stage: stage.to_string(),
                            ..StageMse::default()
                        });
                    }
                    let entry = report.stage_mse.last_mut().unwrap();
                    match split {
                        "train" => entry.train = Some(float()?),
                        "validation" => entry.validation = Some(float()?),
                        "none" => {}
                        _ => return Err(bad(no, "unknown mse split")),
                    }
                }
                "explained_variance" => report.explained_variance.push((count()?, float()?)),
                "reduction" => match key {
                    "input_dim" => input_dim = Some(value.parse().map_err(|_| bad(no, "bad dim"))?),
                    "code_dim" => code_dim = Some(value.parse().map_err(|_| bad(no, "bad dim"))?),
                    "fraction" | "label" => {}
                    _ => return Err(bad(no, "unknown reduction key")),
                },
                "horizon_loss" => report.horizon_loss.push((count()?, float()?)),
                "values" => report.values.push((key.to_string(), float()?)),
                "timings" => report.timings.push((key.to_string(), float()?)),
                _ => return Err(bad(no, "unexpected entry")),
            }
        }
        report.reduction = match (input_dim, code_dim) {
            (Some(input_dim), Some(code_dim)) => Some(Reduction {
                input_dim,
                code_dim,
            }),
            (None, None) => None,
            _ => return Err(Error::InvalidParams("incomplete reduction section".into())),
        };
        report.validate()?;
        Ok(report)
    }

    pub fn value(&self, key: &str) -> Option<f64> {
        self.values.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
    }
}
