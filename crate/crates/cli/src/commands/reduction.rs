//! Frame and code reduction commands: `train-ae`, `encode`, `fit-pca`,
//! `transform`, `decode` and `evaluate`.

use std::path::Path;

use ndarray::Axis;
use spinodal::metrics::{explained_variance_table, mse, EvalReport, Reduction, StageMse};
use spinodal::optim::TrainHistory;
use spinodal::reduce::{
    ae_train, compose_pipeline, denoise, encode_rows, fit_scaler, pca_fit, AEModel, ReductionPipeline,
    SecondStage,
};

use super::{
    collapse_channels, expand_channels, read_finite, report_path, spread_indices, write_report, Clock,
    Context, Sequences,
};
use crate::container::{DType, StreamWriter, Tensor};
use crate::error::{CliError, Result};
use crate::models::{self, FrameShape};

fn frame_shape(frames: &Sequences, channels: usize) -> FrameShape {
    FrameShape {
        nx: frames.tensor.dims[3],
        ny: frames.tensor.dims[2],
        channels,
    }
}

fn check_frames(frames: &Sequences, shape: FrameShape) -> Result<()> {
    if frames.tensor.dims[2..] != [shape.ny, shape.nx] {
        return Err(CliError::Shape(format!(
            "frames are {:?}, model expects [{}, {}]",
            &frames.tensor.dims[2..],
            shape.ny,
            shape.nx
        )));
    }
    Ok(())
}

fn stage1_frame(dir: &Path) -> Result<(AEModel, FrameShape)> {
    let (model, frame) = models::load_autoencoder(dir)?;
    let frame = frame.ok_or_else(|| {
        CliError::Format(format!("{} is not a stage-1 model (no frame shape)", dir.display()))
    })?;
    Ok((model, frame))
}

fn load_pipeline(stage1: &Path, stage2: &Path) -> Result<(ReductionPipeline, FrameShape)> {
    let (ae1, frame) = stage1_frame(stage1)?;
    let second = models::load_second_stage(stage2)?;
    Ok((compose_pipeline(ae1, second)?, frame))
}

fn history_stage(name: &str, h: &TrainHistory) -> StageMse {
    StageMse {
        stage: name.into(),
        train: h.best().map(|e| e.train_loss),
        validation: Some(h.best_validation_loss),
    }
}

fn history_values(h: &TrainHistory, rows: usize) -> Vec<(String, f64)> {
    vec![
        ("rows".into(), rows as f64),
        ("epochs".into(), h.epochs.len() as f64),
        ("best_epoch".into(), h.best_epoch as f64),
        ("stopped_early".into(), if h.stopped_early { 1.0 } else { 0.0 }),
    ]
}

/// Trains the stage-1 autoencoder on frames `[S,T,ny,nx]` (`stage = 1`) or
/// the stage-2 autoencoder on codes `[S,T,C]` (`stage = 2`).
pub fn train_ae(ctx: &Context, stage: u8, data: &Path, out: &Path) -> Result<TrainHistory> {
    let mut clock = Clock::new(ctx.timings);
    let cfg = &ctx.config;
    let (ns, rank, channels) = match stage {
        1 => ("ae1", 4, cfg.channels()?),
        2 => ("ae2", 3, 1),
        s => return Err(CliError::Config(format!("stage must be 1 or 2, got {s}"))),
    };
    let seqs = Sequences::new(read_finite(data)?, rank, "training data")?;
    let all = seqs.rows();
    let picked = spread_indices(all.nrows(), cfg.get(&format!("{ns}.max_rows"))?);
    let rows = expand_channels(all.select(Axis(0), &picked).view(), channels);
    let arch = cfg.ae_architecture(ns, rows.ncols())?;
    let train_cfg = cfg.train_config(ns)?;
    clock.lap("load");

    log::info!("training {ns} {:?} on {} rows", arch.dims, rows.nrows());
    let (model, history) = ae_train(rows.view(), &arch, &train_cfg)?;
    clock.lap("train");

    let frame = (stage == 1).then(|| frame_shape(&seqs, channels));
    models::save_autoencoder(out, &model, frame)?;
    let report = EvalReport {
        stages: vec![ns.into()],
        stage_mse: vec![history_stage(ns, &history)],
        reduction: Some(Reduction {
            input_dim: model.input_dim(),
            code_dim: model.code_dim(),
        }),
        values: history_values(&history, rows.nrows()),
        timings: clock.into_timings(),
        ..EvalReport::default()
    };
    write_report(&report_path(out, true), &report)?;
    Ok(history)
}

/// Stage-1 codes of every frame, `[S,T,code]`.
pub fn encode(ctx: &Context, model_dir: &Path, data: &Path, out: &Path) -> Result<Vec<usize>> {
    let mut clock = Clock::new(ctx.timings);
    let (model, frame) = stage1_frame(model_dir)?;
    let frames = Sequences::new(read_finite(data)?, 4, "frames")?;
    check_frames(&frames, frame)?;
    let dims = vec![frames.n_samples, frames.steps, model.code_dim()];
    let mut writer = StreamWriter::create(out, &dims, DType::F32)?;
    for s in 0..frames.n_samples {
        let rows = expand_channels(frames.sample(s), frame.channels);
        let codes = encode_rows(&model, rows.view())?;
        writer.append(codes.as_slice().expect("standard layout"))?;
    }
    writer.finish()?;
    clock.lap("encode");
    let report = EvalReport {
        stages: vec!["encode".into()],
        reduction: Some(Reduction {
            input_dim: model.input_dim(),
            code_dim: model.code_dim(),
        }),
        timings: clock.into_timings(),
        ..EvalReport::default()
    };
    write_report(&report_path(out, false), &report)?;
    Ok(dims)
}

/// Scaler + PCA on code rows `[S,T,C]`.
pub fn fit_pca(ctx: &Context, data: &Path, out: &Path) -> Result<EvalReport> {
    let mut clock = Clock::new(ctx.timings);
    let cfg = &ctx.config;
    let codes = Sequences::new(read_finite(data)?, 3, "codes")?;
    let k: usize = cfg.get("pca.components")?;
    if k == 0 || k > codes.width {
        return Err(CliError::Config(format!(
            "pca.components must lie in [1, {}], got {k}",
            codes.width
        )));
    }
    let scaler = fit_scaler(codes.rows(), cfg.scaler()?)?;
    let scaled = scaler.apply(codes.rows())?;
    let pca = pca_fit(scaled.view(), k)?;
    clock.lap("fit");
    models::save_pca(out, &scaler, &pca)?;

    let table = explained_variance_table(&pca);
    let at_k = table.last().map(|&(_, r)| r).unwrap_or(0.0);
    let report = EvalReport {
        stages: vec!["pca".into()],
        explained_variance: table,
        reduction: Some(Reduction {
            input_dim: codes.width,
            code_dim: k,
        }),
        values: vec![
            ("rows".into(), scaled.nrows() as f64),
            ("explained_variance_at_k".into(), at_k),
            ("rank_deficient".into(), if pca.rank_deficient { 1.0 } else { 0.0 }),
        ],
        timings: clock.into_timings(),
        ..EvalReport::default()
    };
    write_report(&report_path(out, true), &report)?;
    Ok(report)
}

/// Stage-2 latents `[S,T,L]` of stage-1 codes, through PCA or an autoencoder.
pub fn transform(ctx: &Context, model_dir: &Path, data: &Path, out: &Path) -> Result<Vec<usize>> {
    let mut clock = Clock::new(ctx.timings);
    let stage2 = models::load_second_stage(model_dir)?;
    let codes = Sequences::new(read_finite(data)?, 3, "codes")?;
    if codes.width != stage2.input_dim() {
        return Err(CliError::Shape(format!(
            "codes have width {}, model expects {}",
            codes.width,
            stage2.input_dim()
        )));
    }
    let dims = vec![codes.n_samples, codes.steps, stage2.code_dim()];
    let mut writer = StreamWriter::create(out, &dims, DType::F32)?;
    for s in 0..codes.n_samples {
        let latent = stage2.encode(codes.sample(s))?;
        writer.append(latent.as_slice().expect("standard layout"))?;
    }
    writer.finish()?;
    clock.lap("transform");
    let report = EvalReport {
        stages: vec![stage_name(&stage2).into()],
        reduction: Some(Reduction {
            input_dim: stage2.input_dim(),
            code_dim: stage2.code_dim(),
        }),
        timings: clock.into_timings(),
        ..EvalReport::default()
    };
    write_report(&report_path(out, false), &report)?;
    Ok(dims)
}

fn stage_name(stage2: &SecondStage) -> &'static str {
    match stage2 {
        SecondStage::Autoencoder(_) => "ae2",
        SecondStage::Pca { .. } => "pca",
    }
}

/// Images `[S,K,ny,nx]` from latent frames `[S,K,L]` through both decoders.
pub fn decode(ctx: &Context, stage1: &Path, stage2: &Path, latent: &Path, out: &Path) -> Result<Vec<usize>> {
    let mut clock = Clock::new(ctx.timings);
    let clamp: bool = ctx.config.get("decode.clamp")?;
    let (pipeline, frame) = load_pipeline(stage1, stage2)?;
    let lat = Sequences::new(read_finite(latent)?, 3, "latent frames")?;
    if lat.width != pipeline.latent_dim() {
        return Err(CliError::Shape(format!(
            "latent width {}, pipeline expects {}",
            lat.width,
            pipeline.latent_dim()
        )));
    }
    let dims = vec![lat.n_samples, lat.steps, frame.ny, frame.nx];
    let mut writer = StreamWriter::create(out, &dims, DType::F32)?;
    for s in 0..lat.n_samples {
        let mut images = pipeline.decode(lat.sample(s))?;
        if clamp {
            denoise(&mut images);
        }
        let images = collapse_channels(images.view(), frame.channels);
        writer.append(images.as_slice().expect("standard layout"))?;
    }
    writer.finish()?;
    clock.lap("decode");
    let report = EvalReport {
        stages: vec!["ae1".into(), stage_name(&pipeline.stage2).into(), "decode".into()],
        reduction: Some(Reduction {
            input_dim: pipeline.input_dim(),
            code_dim: pipeline.latent_dim(),
        }),
        timings: clock.into_timings(),
        ..EvalReport::default()
    };
    write_report(&report_path(out, false), &report)?;
    Ok(dims)
}

/// Reconstruction error of the composed pipeline on frames `[S,T,ny,nx]`:
/// per-stage residuals, end-to-end MSE and, when `per_frame` is given, an
/// `f64` container `[S,T]` of per-frame MSE. Decoder output is not clamped.
pub fn evaluate(
    ctx: &Context,
    stage1: &Path,
    stage2: &Path,
    data: &Path,
    out: &Path,
    per_frame: Option<&Path>,
) -> Result<EvalReport> {
    let mut clock = Clock::new(ctx.timings);
    let (pipeline, frame) = load_pipeline(stage1, stage2)?;
    let frames = Sequences::new(read_finite(data)?, 4, "frames")?;
    check_frames(&frames, frame)?;

    let mut frame_mse = Vec::with_capacity(frames.n_samples * frames.steps);
    let mut residuals = Vec::with_capacity(frames.n_samples);
    for s in 0..frames.n_samples {
        let x = expand_channels(frames.sample(s), frame.channels);
        let recon = pipeline.decode(pipeline.encode(x.view())?.view())?;
        for (a, b) in x.outer_iter().zip(recon.outer_iter()) {
            frame_mse.push(mse(&a, &b)?);
        }
        residuals.push(pipeline.stage_residuals(x.view())?);
    }
    clock.lap("evaluate");

    // Every sample has the same number of elements, so the overall mean is
    // the mean of the per-sample means.
    let n = residuals.len() as f64;
    let stage1_mse = residuals.iter().map(|r| r.stage1_mse).sum::<f64>() / n;
    let stage2_mse = residuals.iter().map(|r| r.stage2_mse).sum::<f64>() / n;
    let end_to_end = residuals.iter().map(|r| r.end_to_end_mse).sum::<f64>() / n;
    let residual_sum = stage1_mse + stage2_mse;
    let mean_frame = frame_mse.iter().sum::<f64>() / frame_mse.len() as f64;
    if !end_to_end.is_finite() || !mean_frame.is_finite() {
        return Err(CliError::Numerical("reconstruction error is not finite".into()));
    }

    if let Some(path) = per_frame {
        let t = Tensor::new(vec![frames.n_samples, frames.steps], frame_mse)?;
        crate::container::write(path, &t, DType::F64)?;
    }
    let s2 = stage_name(&pipeline.stage2);
    let report = EvalReport {
        stages: vec!["ae1".into(), s2.into()],
        stage_mse: vec![
            StageMse {
                stage: "ae1".into(),
                train: None,
                validation: Some(stage1_mse),
            },
            StageMse {
                stage: s2.into(),
                train: None,
                validation: Some(stage2_mse),
            },
        ],
        reduction: Some(Reduction {
            input_dim: pipeline.input_dim(),
            code_dim: pipeline.latent_dim(),
        }),
        values: vec![
            ("frames".into(), (frames.n_samples * frames.steps) as f64),
            ("stage1_mse".into(), stage1_mse),
            ("stage2_mse".into(), stage2_mse),
            ("end_to_end_mse".into(), end_to_end),
            ("residual_sum".into(), residual_sum),
            ("residual_gap".into(), (end_to_end - residual_sum).abs() / residual_sum.max(f64::MIN_POSITIVE)),
            ("mean_frame_mse".into(), mean_frame),
        ],
        timings: clock.into_timings(),
        ..EvalReport::default()
    };
    write_report(out, &report)?;
    Ok(report)
}
