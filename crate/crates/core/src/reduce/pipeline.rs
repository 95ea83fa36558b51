//! Two-stage reduction: a stage-1 autoencoder followed by either a second
//! autoencoder or a scaler + PCA pair acting on the stage-1 codes.

use ndarray::{Array2, ArrayView2, Axis};

use super::autoencoder::AEModel;
use super::pca::PCAModel;
use super::scaler::ScalerModel;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum SecondStage {
    Autoencoder(AEModel),
    Pca { scaler: ScalerModel, pca: PCAModel },
}

impl SecondStage {
    pub fn input_dim(&self) -> usize {
        match self {
            SecondStage::Autoencoder(ae) => ae.input_dim(),
            SecondStage::Pca { pca, .. } => pca.n_features(),
        }
    }

    pub fn code_dim(&self) -> usize {
        match self {
            SecondStage::Autoencoder(ae) => ae.code_dim(),
            SecondStage::Pca { pca, .. } => pca.n_components(),
        }
    }

    pub fn encode(&self, codes: ArrayView2<f64>) -> Result<Array2<f64>> {
        match self {
            SecondStage::Autoencoder(ae) => ae.encode(codes),
            SecondStage::Pca { scaler, pca } => pca.transform(scaler.apply(codes)?.view()),
        }
    }

    pub fn decode(&self, latent: ArrayView2<f64>) -> Result<Array2<f64>> {
        match self {
            SecondStage::Autoencoder(ae) => ae.decode(latent),
            SecondStage::Pca { scaler, pca } => scaler.invert(pca.inverse(latent)?.view()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReductionPipeline {
    pub stage1: AEModel,
    pub stage2: SecondStage,
}

/// Reconstruction errors attributed to each stage, all measured in input space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageResiduals {
    /// `mse(x, D1(E1(x)))`
    pub stage1_mse: f64,
    /// `mse(D1(E1(x)), D1(D2(E2(E1(x)))))`
    pub stage2_mse: f64,
    /// `mse(x, decode(encode(x)))`
    pub end_to_end_mse: f64,
}

impl StageResiduals {
    pub fn sum(&self) -> f64 {
        self.stage1_mse + self.stage2_mse
    }
}

pub fn compose_pipeline(stage1: AEModel, stage2: SecondStage) -> Result<ReductionPipeline> {
    if stage1.code_dim() != stage2.input_dim() {
        return Err(Error::dim(
            "stage-2 input width",
            stage1.code_dim(),
            stage2.input_dim(),
        ));
    }
    Ok(ReductionPipeline { stage1, stage2 })
}

const CHUNK: usize = 256;

fn mse_sum(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl ReductionPipeline {
    pub fn input_dim(&self) -> usize {
        self.stage1.input_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.stage2.code_dim()
    }

    pub fn reduction_ratio(&self) -> f64 {
        self.input_dim() as f64 / self.latent_dim() as f64
    }

    pub fn encode(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((x.nrows(), self.latent_dim()));
        for (chunk, mut dst) in x
            .axis_chunks_iter(Axis(0), CHUNK)
            .zip(out.axis_chunks_iter_mut(Axis(0), CHUNK))
        {
            let h = self.stage1.encode(chunk)?;
            dst.assign(&self.stage2.encode(h.view())?);
        }
        Ok(out)
    }

    /// Raw decoder output, without clamping.
    pub fn decode(&self, latent: ArrayView2<f64>) -> Result<Array2<f64>> {
        if latent.ncols() != self.latent_dim() {
            return Err(Error::dim("pipeline latent", self.latent_dim(), latent.ncols()));
        }
        let mut out = Array2::zeros((latent.nrows(), self.input_dim()));
        for (chunk, mut dst) in latent
            .axis_chunks_iter(Axis(0), CHUNK)
            .zip(out.axis_chunks_iter_mut(Axis(0), CHUNK))
        {
            let h = self.stage2.decode(chunk)?;
            dst.assign(&self.stage1.decode(h.view())?);
        }
        Ok(out)
    }

    /// Decoded images clamped to `[0, 1]`.
    pub fn decode_images(&self, latent: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut out = self.decode(latent)?;
        denoise(&mut out);
        Ok(out)
    }

    pub fn stage_residuals(&self, x: ArrayView2<f64>) -> Result<StageResiduals> {
        if x.ncols() != self.input_dim() {
            return Err(Error::dim("pipeline input", self.input_dim(), x.ncols()));
        }
        if x.nrows() == 0 {
            return Err(Error::InvalidParams("no rows to measure residuals on".into()));
        }
        let (mut s1, mut s2, mut e2e) = (0.0, 0.0, 0.0);
        for chunk in x.axis_chunks_iter(Axis(0), CHUNK) {
            let h = self.stage1.encode(chunk)?;
            let direct = self.stage1.decode(h.view())?;
            let h_back = self.stage2.decode(self.stage2.encode(h.view())?.view())?;
            let full = self.stage1.decode(h_back.view())?;
            let chunk = chunk.to_owned();
            s1 += mse_sum(&chunk, &direct);
            s2 += mse_sum(&direct, &full);
            e2e += mse_sum(&chunk, &full);
        }
        let n = x.len() as f64;
        Ok(StageResiduals {
            stage1_mse: s1 / n,
            stage2_mse: s2 / n,
            end_to_end_mse: e2e / n,
        })
    }
}

/// Clamps reconstructions into the valid concentration range `[0, 1]`.
pub fn denoise(images: &mut Array2<f64>) {
    images.mapv_inplace(|v| v.clamp(0.0, 1.0));
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reduce::autoencoder::{AEArchitecture, Activation};
    use crate::reduce::pca::pca_fit;
    use crate::reduce::scaler::{fit_scaler, ScalerKind};

    fn stage1() -> AEModel {
        let arch = AEArchitecture::symmetric(12, &[], 5, Activation::Tanh, Activation::Sigmoid);
        AEModel::init(&arch, 9).unwrap()
    }

    fn data() -> Array2<f64> {
        Array2::from_shape_fn((30, 12), |(i, j)| {
            0.5 + 0.4 * ((i * 7 + j * 3) as f64 * 0.31).sin()
        })
    }

    #[test]
    fn full_rank_pca_is_lossless() {
        let s1 = stage1();
        let x = data();
        let codes = s1.encode(x.view()).unwrap();
        let scaler = fit_scaler(codes.view(), ScalerKind::MinMax).unwrap();
        let pca = pca_fit(scaler.apply(codes.view()).unwrap().view(), 5).unwrap();
        let p = compose_pipeline(s1.clone(), SecondStage::Pca { scaler, pca }).unwrap();
        let via = p.decode(p.encode(x.view()).unwrap().view()).unwrap();
        let direct = s1.reconstruct(x.view()).unwrap();
        assert!(via.iter().zip(&direct).all(|(a, b)| (a - b).abs() < 1e-6));
        let r = p.stage_residuals(x.view()).unwrap();
        assert!(r.stage2_mse < 1e-12);
        assert!((r.end_to_end_mse - r.stage1_mse).abs() < 1e-10);
    }

    #[test]
    fn ratio_and_dimension_check() {
        let s1 = stage1();
        let arch2 = AEArchitecture::symmetric(5, &[], 2, Activation::Relu, Activation::Identity);
        let s2 = AEModel::init(&arch2, 1).unwrap();
        let p = compose_pipeline(s1.clone(), SecondStage::Autoencoder(s2)).unwrap();
        assert_eq!(p.reduction_ratio(), 6.0);
        let wrong = AEArchitecture::symmetric(4, &[], 2, Activation::Relu, Activation::Identity);
        let s2 = AEModel::init(&wrong, 1).unwrap();
        assert!(matches!(
            compose_pipeline(s1, SecondStage::Autoencoder(s2)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn decode_images_clamps() {
        let mut a = ndarray::array![[-0.2, 0.5, 1.3]];
        denoise(&mut a);
        assert_eq!(a, ndarray::array![[0.0, 0.5, 1.0]]);
    }
}
