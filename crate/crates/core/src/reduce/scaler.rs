use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScalerKind {
    /// `(x - min) / (max - min)`
    #[default]
    MinMax,
    /// `(x - mean) / std`, population standard deviation.
    ZScore,
}

impl ScalerKind {
    pub fn name(&self) -> &'static str {
        match self {
            ScalerKind::MinMax => "minmax",
            ScalerKind::ZScore => "zscore",
        }
    }
}

impl fmt::Display for ScalerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScalerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "minmax" => Ok(ScalerKind::MinMax),
            "zscore" => Ok(ScalerKind::ZScore),
            other => Err(Error::InvalidParams(format!("unknown scaler '{other}'"))),
        }
    }
}

/// Per-feature affine scaling `(x - offset) / spread`.
///
/// `offset` is the minimum (minmax) or mean (zscore); `spread` is the range
/// or standard deviation. Features with zero spread are flagged and left
/// untouched in both directions.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalerModel {
    pub kind: ScalerKind,
    pub offset: Vec<f64>,
    pub spread: Vec<f64>,
    pub zero_spread: Vec<bool>,
}

pub fn fit_scaler(data: ArrayView2<f64>, kind: ScalerKind) -> Result<ScalerModel> {
    let (n, m) = data.dim();
    if n == 0 {
        return Err(Error::InvalidParams("cannot fit a scaler on zero rows".into()));
    }
    let mut offset = Vec::with_capacity(m);
    let mut spread = Vec::with_capacity(m);
    for col in data.axis_iter(Axis(1)) {
        match kind {
            ScalerKind::MinMax => {
                let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                offset.push(lo);
                spread.push(hi - lo);
            }
            ScalerKind::ZScore => {
                let mean = col.sum() / n as f64;
                let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
                offset.push(mean);
                spread.push(var.sqrt());
            }
        }
    }
    let zero_spread: Vec<bool> = spread.iter().map(|&s| !(s > 0.0)).collect();
    let flagged = zero_spread.iter().filter(|&&z| z).count();
    if flagged > 0 {
        log::warn!("{flagged} of {m} features have zero spread and pass through unscaled");
    }
    Ok(ScalerModel {
        kind,
        offset,
        spread,
        zero_spread,
    })
}

impl ScalerModel {
    pub fn n_features(&self) -> usize {
        self.offset.len()
    }

    fn check(&self, data: &ArrayView2<f64>) -> Result<()> {
        if data.ncols() != self.n_features() {
            return Err(Error::dim("scaler input", self.n_features(), data.ncols()));
        }
        Ok(())
    }

    pub fn apply(&self, data: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(&data)?;
        let mut out = data.to_owned();
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                if !self.zero_spread[j] {
                    *v = (*v - self.offset[j]) / self.spread[j];
                }
            }
        }
        Ok(out)
    }

    pub fn invert(&self, data: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(&data)?;
        let mut out = data.to_owned();
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                if !self.zero_spread[j] {
                    *v = *v * self.spread[j] + self.offset[j];
                }
            }
        }
        Ok(out)
    }
}
