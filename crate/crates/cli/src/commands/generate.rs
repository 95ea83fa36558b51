//! `generate`: parameter sweep, one simulation per sample.
//!
//! Each finished sample lands in `samples/` as its own container (or a
//! `.failed` note), so an interrupted run resumes by skipping those ids.
//! The dataset container is then streamed together from the sample files,
//! which makes a resumed run byte-identical to a fresh one.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use spinodal::metrics::EvalReport;
use spinodal::phasefield::{sample_params, simulate, SweepSpec};

use super::{report_path, write_report, Clock, Context};
use crate::container::{self, DType, StreamWriter, Tensor};
use crate::error::{CliError, Result};
use crate::manifest::{sweep_settings, Manifest, ManifestRecord};

pub const SAMPLES_DIR: &str = "samples";
pub const FRAMES_FILE: &str = "frames.pfds";
pub const MANIFEST_FILE: &str = "manifest.txt";
const SETTINGS_FILE: &str = "sweep.txt";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenerateSummary {
    pub total: usize,
    pub failed: usize,
    /// Dims of the dataset container.
    pub dims: Vec<usize>,
    /// Samples simulated by this invocation; the rest were resumed.
    pub simulated: usize,
}

fn sample_file(dir: &Path, id: usize) -> PathBuf {
    dir.join(format!("{id:06}.pfds"))
}

fn failure_file(dir: &Path, id: usize) -> PathBuf {
    dir.join(format!("{id:06}.failed"))
}

fn check_power_of_two(sweep: &SweepSpec) -> Result<()> {
    for (axis, n) in [("nx", sweep.grid.nx), ("ny", sweep.grid.ny)] {
        if !n.is_power_of_two() || n < 2 {
            return Err(CliError::Config(format!(
                "grid.{axis} must be a power of two, got {n}"
            )));
        }
    }
    Ok(())
}

/// Settings text for the resume check. The sample count is left out so a
/// sweep can be extended in place.
fn settings_text(sweep: &SweepSpec) -> String {
    sweep_settings(sweep)
        .into_iter()
        .filter(|(k, _)| k != "samples")
        .map(|(k, v)| format!("{k}={v}\n"))
        .collect()
}

fn check_resume(dir: &Path, sweep: &SweepSpec) -> Result<()> {
    let path = dir.join(SETTINGS_FILE);
    let wanted = settings_text(sweep);
    match std::fs::read_to_string(&path) {
        Ok(found) if found == wanted => Ok(()),
        Ok(_) => Err(CliError::Config(format!(
            "{} holds samples from different sweep settings",
            dir.display()
        ))),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            container::write_atomic(&path, wanted.as_bytes())
        }
        Err(e) => Err(CliError::io(&path, e)),
    }
}

fn run_sample(dir: &Path, sweep: &SweepSpec, id: usize) -> Result<()> {
    let params = sample_params(sweep, id);
    match simulate(&params, &sweep.grid) {
        Ok(traj) => {
            let (nx, ny) = (sweep.grid.nx, sweep.grid.ny);
            let mut data = Vec::with_capacity(traj.frames.len() * nx * ny);
            for f in &traj.frames {
                data.extend_from_slice(f.values());
            }
            let t = Tensor::new(vec![traj.frames.len(), ny, nx], data)?;
            container::write(&sample_file(dir, id), &t, DType::F32)
        }
        Err(e) => {
            log::warn!("sample {id} failed: {e}");
            container::write_atomic(&failure_file(dir, id), e.to_string().as_bytes())
        }
    }
}

/// Runs the sweep into `out`, resuming any samples already there.
/// `jobs = 0` uses every logical core.
pub fn generate(ctx: &Context, out: &Path, jobs: usize) -> Result<GenerateSummary> {
    let mut clock = Clock::new(ctx.timings);
    let sweep = ctx.config.sweep()?;
    check_power_of_two(&sweep)?;
    let dir = out.join(SAMPLES_DIR);
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    check_resume(&dir, &sweep)?;

    let pending: Vec<usize> = (0..sweep.n_samples)
        .filter(|&i| !sample_file(&dir, i).exists() && !failure_file(&dir, i).exists())
        .collect();
    log::info!(
        "{} of {} samples to simulate on {} workers",
        pending.len(),
        sweep.n_samples,
        if jobs == 0 { rayon::current_num_threads() } else { jobs }
    );
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Config(format!("worker pool: {e}")))?
        .install(|| pending.par_iter().try_for_each(|&i| run_sample(&dir, &sweep, i)))?;
    clock.lap("simulate");

    let n_frames = sweep.numerics.n_frames();
    let (nx, ny) = (sweep.grid.nx, sweep.grid.ny);
    let mut records = Vec::with_capacity(sweep.n_samples);
    for id in 0..sweep.n_samples {
        let params = sample_params(&sweep, id);
        let failure = if sample_file(&dir, id).exists() {
            None
        } else {
            let path = failure_file(&dir, id);
            let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
            Some(text.replace('\n', " "))
        };
        records.push(ManifestRecord {
            sample_id: id,
            x0: params.x0,
            mobility: params.mobility,
            kappa: params.kappa,
            seed: params.seed,
            failure,
        });
    }
    let n_ok = records.iter().filter(|r| r.is_ok()).count();
    let dims = vec![n_ok, n_frames, ny, nx];
    let mut writer = StreamWriter::create(&out.join(FRAMES_FILE), &dims, DType::F32)?;
    for r in records.iter().filter(|r| r.is_ok()) {
        let t = container::read(&sample_file(&dir, r.sample_id))?;
        if t.dims != dims[1..] {
            return Err(CliError::Shape(format!(
                "sample {} has dims {:?}, expected {:?}",
                r.sample_id,
                t.dims,
                &dims[1..]
            )));
        }
        writer.append(&t.data)?;
    }
    writer.finish()?;

    let manifest = Manifest {
        settings: sweep_settings(&sweep),
        records,
    };
    container::write_atomic(&out.join(MANIFEST_FILE), manifest.emit().as_bytes())?;
    clock.lap("assemble");

    let failed = sweep.n_samples - n_ok;
    let report = EvalReport {
        stages: vec!["generate".into()],
        values: vec![
            ("samples".into(), sweep.n_samples as f64),
            ("ok".into(), n_ok as f64),
            ("failed".into(), failed as f64),
            ("frames_per_sample".into(), n_frames as f64),
        ],
        timings: clock.into_timings(),
        ..EvalReport::default()
    };
    write_report(&report_path(out, true), &report)?;

    Ok(GenerateSummary {
        total: sweep.n_samples,
        failed,
        dims,
        simulated: pending.len(),
    })
}
