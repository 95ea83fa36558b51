//! Latent forecasting commands: `train-seq` and `predict`.

use std::path::Path;

use spinodal::metrics::{mse, persistence_baseline, EvalReport, StageMse};
use spinodal::optim::{split_indices, TrainHistory};
use spinodal::sequence::{
    horizon_mse, rollout_targets, rollout_windows, seq_forward, seq_train_split, strided_len, tail_window,
    RolloutSpec, SeqModel, SeqSample,
};

use super::{read_finite, report_path, write_report, Clock, Context, Sequences};
use crate::container::{DType, StreamWriter};
use crate::error::{CliError, Result};
use crate::manifest::Manifest;
use crate::models;

/// Latent sequences `[S,T,L]` paired with the static parameters of the
/// successful manifest records, in row order.
pub fn load_sequences(latent: &Path, manifest: &Path) -> Result<Vec<SeqSample>> {
    let lat = Sequences::new(read_finite(latent)?, 3, "latent sequences")?;
    let text = std::fs::read_to_string(manifest).map_err(|e| CliError::io(manifest, e))?;
    let manifest = Manifest::parse(&text)?;
    let ok = manifest.ok_records();
    if ok.len() != lat.n_samples {
        return Err(CliError::Shape(format!(
            "manifest lists {} successful samples, latent container holds {}",
            ok.len(),
            lat.n_samples
        )));
    }
    ok.iter()
        .enumerate()
        .map(|(s, r)| Ok(SeqSample::new(lat.sample(s), r.params())?))
        .collect()
}

/// Mean MSE of model rollouts and of the persistence baseline over windows
/// that are already strided.
fn compare_with_baseline(model: &SeqModel, windows: &[SeqSample], spec: &RolloutSpec) -> Result<(f64, f64)> {
    let (mut m, mut b) = (0.0, 0.0);
    for w in windows {
        let target = rollout_targets(w, spec)?;
        m += mse(&seq_forward(model, w, spec)?, &target)?;
        b += mse(&persistence_baseline(w, spec)?, &target)?;
    }
    let n = windows.len() as f64;
    Ok((m / n, b / n))
}

fn tails(samples: &[SeqSample], idx: &[usize], spec: &RolloutSpec) -> Result<Vec<SeqSample>> {
    Ok(idx
        .iter()
        .map(|&i| tail_window(&samples[i], spec))
        .collect::<spinodal::Result<_>>()?)
}

fn all_windows(samples: &[SeqSample], idx: &[usize], spec: &RolloutSpec) -> Result<Vec<SeqSample>> {
    let mut out = Vec::new();
    for &i in idx {
        out.extend(rollout_windows(&samples[i], spec)?);
    }
    Ok(out)
}

/// Trains the forecaster at `seq.horizon`, then once per extra horizon in
/// `seq.horizon_sweep`, and reports the best validation loss at each
/// horizon.
///
/// Every horizon predicts the last `k` usable frames of a sequence from the
/// `context_len` frames before them (all earlier frames when
/// `seq.context_len = 0`). Validation samples are held out whole. With
/// `seq.windows` every sample contributes all of its windows of
/// `context_len + k` frames instead of only the last one, on both sides of
/// the split.
pub fn train_seq(ctx: &Context, latent: &Path, manifest: &Path, out: &Path) -> Result<EvalReport> {
    let mut clock = Clock::new(ctx.timings);
    let cfg = &ctx.config;
    let samples = load_sequences(latent, manifest)?;
    let model_spec = cfg.seq_model_spec()?;
    let train_cfg = cfg.train_config("seq")?;
    let policy = cfg.stride_policy()?;
    let windows: bool = cfg.get("seq.windows")?;
    let horizon: usize = cfg.get("seq.horizon")?;
    let mut horizons = cfg.horizon_sweep()?;
    horizons.push(horizon);
    horizons.sort_unstable();
    horizons.dedup();

    let fixed_context: usize = cfg.get("seq.context_len")?;
    let spec_for = |k: usize| -> Result<RolloutSpec> {
        let spec = if fixed_context == 0 {
            RolloutSpec::tail(samples[0].len(), k, policy)?
        } else {
            RolloutSpec::new(fixed_context, k, policy)?
        };
        spec.check(strided_len(samples[0].len(), policy))?;
        Ok(spec)
    };
    let (train_idx, val_idx) = split_indices(samples.len(), train_cfg.validation_fraction, train_cfg.seed)?;
    clock.lap("load");

    let fit = |spec: &RolloutSpec| -> Result<(SeqModel, TrainHistory, Vec<SeqSample>)> {
        let (train, val) = if windows {
            (all_windows(&samples, &train_idx, spec)?, all_windows(&samples, &val_idx, spec)?)
        } else {
            (tails(&samples, &train_idx, spec)?, tails(&samples, &val_idx, spec)?)
        };
        log::info!(
            "training {} {}x{} on {} windows, context {} horizon {}",
            model_spec.cell_kind.name(),
            model_spec.n_layers,
            model_spec.hidden_size,
            train.len(),
            spec.context_len,
            spec.horizon
        );
        let (model, history) = seq_train_split(&train, &val, &model_spec, &train_cfg, &spec.unstrided())?;
        Ok((model, history, val))
    };
    let spec = spec_for(horizon)?;
    let (model, history, val) = fit(&spec)?;
    clock.lap("train");
    models::save_sequence(out, &model, &spec)?;

    let flat = spec.unstrided();
    let (model_mse, baseline_mse) = compare_with_baseline(&model, &val, &flat)?;
    let per_step = horizon_mse(&model, &val, &flat)?;

    let mut horizon_loss = Vec::with_capacity(horizons.len());
    for &k in &horizons {
        let loss = if k == horizon {
            history.best_validation_loss
        } else {
            fit(&spec_for(k)?)?.1.best_validation_loss
        };
        horizon_loss.push((k, loss));
    }
    clock.lap("horizon_sweep");

    let mut values = vec![
        ("context_len".into(), spec.context_len as f64),
        ("horizon".into(), horizon as f64),
        ("train_samples".into(), train_idx.len() as f64),
        ("validation_samples".into(), val_idx.len() as f64),
        ("validation_windows".into(), val.len() as f64),
        ("epochs".into(), history.epochs.len() as f64),
        ("best_epoch".into(), history.best_epoch as f64),
        ("model_validation_mse".into(), model_mse),
        ("baseline_validation_mse".into(), baseline_mse),
    ];
    for (j, v) in per_step.iter().enumerate() {
        values.push((format!("model_validation_mse_step{}", j + 1), *v));
    }
    let report = EvalReport {
        stages: vec!["seq".into()],
        stage_mse: vec![StageMse {
            stage: "seq".into(),
            train: history.best().map(|e| e.train_loss),
            validation: Some(history.best_validation_loss),
        }],
        horizon_loss,
        values,
        timings: clock.into_timings(),
        ..EvalReport::default()
    };
    write_report(&report_path(out, true), &report)?;
    Ok(report)
}

/// Rolls the saved forecaster over the tail window of every sample:
/// `[S,k,L]` predictions of each sequence's last `k` usable frames.
pub fn predict(ctx: &Context, model_dir: &Path, latent: &Path, manifest: &Path, out: &Path) -> Result<Vec<usize>> {
    let mut clock = Clock::new(ctx.timings);
    let (model, spec) = models::load_sequence(model_dir)?;
    let samples = load_sequences(latent, manifest)?;
    if samples[0].latent_dim() != model.latent_dim() {
        return Err(CliError::Shape(format!(
            "latent width {}, model expects {}",
            samples[0].latent_dim(),
            model.latent_dim()
        )));
    }
    let dims = vec![samples.len(), spec.horizon, model.latent_dim()];
    let mut writer = StreamWriter::create(out, &dims, DType::F32)?;
    let all: Vec<usize> = (0..samples.len()).collect();
    let windows = tails(&samples, &all, &spec)?;
    let flat = spec.unstrided();
    for w in &windows {
        let pred = seq_forward(&model, w, &flat)?;
        writer.append(pred.as_slice().expect("standard layout"))?;
    }
    writer.finish()?;
    clock.lap("predict");

    let (model_mse, baseline_mse) = compare_with_baseline(&model, &windows, &flat)?;
    let report = EvalReport {
        stages: vec!["predict".into()],
        values: vec![
            ("samples".into(), samples.len() as f64),
            ("horizon".into(), spec.horizon as f64),
            ("model_mse".into(), model_mse),
            ("baseline_mse".into(), baseline_mse),
        ],
        timings: clock.into_timings(),
        ..EvalReport::default()
    };
    write_report(&report_path(out, false), &report)?;
    Ok(dims)
}
