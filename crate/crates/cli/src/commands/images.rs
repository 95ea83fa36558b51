//! `render` and `show-config`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::read_finite;
use crate::config::{documented_keys, RunConfig};
use crate::container;
use crate::error::{CliError, Result};
use crate::render;

/// Writes one PGM (`channels = 1`) or PPM (`channels = 3`) per frame of a
/// `[ny,nx]`, `[T,ny,nx]` or `[S,T,ny,nx]` container. `sample` restricts a
/// rank-4 input to one sample. Returns the written paths in order.
pub fn render(data: &Path, out_dir: &Path, channels: usize, sample: Option<usize>) -> Result<Vec<PathBuf>> {
    let t = read_finite(data)?;
    if !(2..=4).contains(&t.rank()) {
        return Err(CliError::Shape(format!(
            "render takes rank 2 to 4 frame containers, found dims {:?}",
            t.dims
        )));
    }
    let ext = match channels {
        1 => "pgm",
        3 => "ppm",
        c => return Err(CliError::Config(format!("render channels must be 1 or 3, got {c}"))),
    };
    let (ny, nx) = (t.dims[t.rank() - 2], t.dims[t.rank() - 1]);
    let (n_samples, steps) = match t.rank() {
        2 => (1, 1),
        3 => (1, t.dims[0]),
        _ => (t.dims[0], t.dims[1]),
    };
    let samples: Vec<usize> = match sample {
        Some(s) if t.rank() == 4 && s < n_samples => vec![s],
        Some(s) => {
            return Err(CliError::Shape(format!(
                "sample {s} not in container with dims {:?}",
                t.dims
            )))
        }
        None => (0..n_samples).collect(),
    };
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;

    let frame = ny * nx;
    let mut written = Vec::new();
    for s in samples {
        for step in 0..steps {
            let name = match t.rank() {
                2 => format!("frame.{ext}"),
                3 => format!("t{step:04}.{ext}"),
                _ => format!("s{s:04}_t{step:04}.{ext}"),
            };
            let offset = (s * steps + step) * frame;
            let bytes = render::render(&t.data[offset..offset + frame], nx, ny, channels)?;
            let path = out_dir.join(name);
            container::write_atomic(&path, &bytes)?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Every documented key with its effective value and description.
pub fn show_config(config: &RunConfig) -> Result<String> {
    let mut out = String::new();
    for (key, default, help) in documented_keys() {
        let value = config.raw(&key)?;
        let note = if value == default {
            String::new()
        } else {
            format!(" (default {default})")
        };
        writeln!(out, "{key} = {value}    # {help}{note}").unwrap();
    }
    Ok(out)
}
