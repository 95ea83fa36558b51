//! Frame flattening, feature scaling, PCA and dense autoencoders, plus their
//! composition into two-stage reduction pipelines (AE then AE, or AE then PCA).

pub mod autoencoder;
pub mod flatten;
pub mod pca;
pub mod pipeline;
pub mod scaler;

pub use crate::optim::{OptimizerKind, TrainConfig, TrainHistory};
pub use autoencoder::{
    ae_forward, ae_gradients, ae_train, encode_rows, AEArchitecture, AEGradients, AEModel,
    Activation, DenseLayer,
};
pub use flatten::{flatten_frame, frames_to_matrix, unflatten_frame};
pub use pca::{pca_fit, PCAModel};
pub use pipeline::{compose_pipeline, denoise, ReductionPipeline, SecondStage, StageResiduals};
pub use scaler::{fit_scaler, ScalerKind, ScalerModel};
