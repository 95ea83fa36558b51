//! Command implementations. Each reads containers, writes containers or
//! model directories, and leaves an [`EvalReport`] next to its output.

mod generate;
mod images;
mod reduction;
mod sequence;

use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use spinodal::metrics::EvalReport;

use crate::config::RunConfig;
use crate::container::{self, Tensor};
use crate::error::{CliError, Result};

pub use generate::{generate, GenerateSummary, FRAMES_FILE, MANIFEST_FILE, SAMPLES_DIR};
pub use images::{render, show_config};
pub use reduction::{decode, encode, evaluate, fit_pca, train_ae, transform};
pub use sequence::{load_sequences, predict, train_seq};

/// Settings shared by every command.
#[derive(Debug, Clone, Default)]
pub struct Context {
    pub config: RunConfig,
    /// Record wall-clock phases in reports. Off by default so reruns are
    /// byte-identical.
    pub timings: bool,
}

/// Collects phase durations for a report.
pub(crate) struct Clock {
    enabled: bool,
    start: Instant,
    phases: Vec<(String, f64)>,
}

impl Clock {
    pub(crate) fn new(enabled: bool) -> Self {
        Clock {
            enabled,
            start: Instant::now(),
            phases: Vec::new(),
        }
    }

    pub(crate) fn lap(&mut self, phase: &str) {
        let now = Instant::now();
        if self.enabled {
            self.phases
                .push((phase.to_string(), (now - self.start).as_secs_f64()));
        }
        self.start = now;
    }

    pub(crate) fn into_timings(self) -> Vec<(String, f64)> {
        self.phases
    }
}

/// Report location for an output: `report.txt` inside a directory output,
/// otherwise `<stem>.report.txt` beside a file output.
pub fn report_path(out: &Path, is_dir: bool) -> PathBuf {
    if is_dir {
        return out.join("report.txt");
    }
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    out.with_file_name(format!("{stem}.report.txt"))
}

pub(crate) fn write_report(path: &Path, report: &EvalReport) -> Result<()> {
    let text = report
        .emit()
        .map_err(|e| CliError::Numerical(format!("report: {e}")))?;
    container::write_atomic(path, text.as_bytes())
}

pub fn read_report(path: &Path) -> Result<EvalReport> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    EvalReport::parse(&text).map_err(|e| CliError::Format(e.to_string()))
}

/// Reads a container and rejects non-finite values.
pub(crate) fn read_finite(path: &Path) -> Result<Tensor> {
    let t = container::read(path)?;
    t.check_finite(&path.display().to_string())?;
    Ok(t)
}

/// Sample-major stack `[S, T, ...]` viewed as `S` matrices of `T` rows.
#[derive(Debug)]
pub(crate) struct Sequences {
    pub tensor: Tensor,
    pub n_samples: usize,
    pub steps: usize,
    pub width: usize,
}

impl Sequences {
    /// `rank` 3 holds code rows, `rank` 4 holds `ny x nx` frames.
    pub(crate) fn new(tensor: Tensor, rank: usize, what: &str) -> Result<Self> {
        if tensor.rank() != rank {
            return Err(CliError::Shape(format!(
                "{what}: expected a rank-{rank} container, found dims {:?}",
                tensor.dims
            )));
        }
        let n_samples = tensor.dims[0];
        let steps = tensor.dims[1];
        let width = tensor.dims[2..].iter().product();
        if n_samples == 0 || steps == 0 || width == 0 {
            return Err(CliError::Shape(format!("{what}: empty dims {:?}", tensor.dims)));
        }
        Ok(Sequences {
            tensor,
            n_samples,
            steps,
            width,
        })
    }

    pub(crate) fn sample(&self, s: usize) -> ArrayView2<'_, f64> {
        let len = self.steps * self.width;
        ArrayView2::from_shape((self.steps, self.width), &self.tensor.data[s * len..(s + 1) * len])
            .expect("slice sized from dims")
    }

    pub(crate) fn rows(&self) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((self.n_samples * self.steps, self.width), &self.tensor.data)
            .expect("slice sized from dims")
    }
}

/// Repeats every value `channels` times along each row.
pub(crate) fn expand_channels(rows: ArrayView2<f64>, channels: usize) -> Array2<f64> {
    if channels == 1 {
        return rows.to_owned();
    }
    let (n, w) = rows.dim();
    Array2::from_shape_fn((n, w * channels), |(i, j)| rows[[i, j / channels]])
}

/// Averages replicated channels back into one value per pixel.
pub(crate) fn collapse_channels(rows: ArrayView2<f64>, channels: usize) -> Array2<f64> {
    if channels == 1 {
        return rows.to_owned();
    }
    let (n, w) = rows.dim();
    Array2::from_shape_fn((n, w / channels), |(i, j)| {
        let px = rows.slice(ndarray::s![i, j * channels..(j + 1) * channels]);
        if px.iter().all(|&c| c == px[0]) {
            px[0]
        } else {
            px.sum() / channels as f64
        }
    })
}

/// `count` evenly spaced indices out of `n`; all of them when `count` is 0
/// or at least `n`.
pub fn spread_indices(n: usize, count: usize) -> Vec<usize> {
    if count == 0 || count >= n {
        return (0..n).collect();
    }
    (0..count).map(|i| i * n / count).collect()
}
