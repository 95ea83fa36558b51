use ndarray::Array2;

use crate::error::{Error, Result};
use crate::spectral::{Field2D, GridSpec};

fn check_channels(channels: usize) -> Result<()> {
    if channels == 1 || channels == 3 {
        Ok(())
    } else {
        Err(Error::InvalidParams(format!(
            "channels must be 1 or 3, got {channels}"
        )))
    }
}

/// Row-major flatten. With three channels every pixel is repeated three
/// times in a row (`v0 v0 v0 v1 v1 v1 ...`), matching an interleaved RGB image.
pub fn flatten_frame(frame: &Field2D, channels: usize) -> Result<Vec<f64>> {
    check_channels(channels)?;
    let mut out = Vec::with_capacity(frame.values().len() * channels);
    for &v in frame.values() {
        out.extend(std::iter::repeat(v).take(channels));
    }
    Ok(out)
}

/// Inverse of [`flatten_frame`]; channels are averaged back into one plane.
pub fn unflatten_frame(flat: &[f64], grid: &GridSpec, channels: usize) -> Result<Field2D> {
    check_channels(channels)?;
    let expected = grid.len() * channels;
    if flat.len() != expected {
        return Err(Error::dim("flattened frame", expected, flat.len()));
    }
    let values = if channels == 1 {
        flat.to_vec()
    } else {
        flat.chunks_exact(channels)
            .map(|px| {
                // Replicated pixels come back bit-exact; mixed ones are averaged.
                if px.iter().all(|&c| c == px[0]) {
                    px[0]
                } else {
                    px.iter().sum::<f64>() / channels as f64
                }
            })
            .collect()
    };
    Field2D::new(*grid, values)
}

/// Stacks flattened frames as matrix rows.
pub fn frames_to_matrix<'a>(
    frames: impl IntoIterator<Item = &'a Field2D>,
    channels: usize,
) -> Result<Array2<f64>> {
    let mut data = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for frame in frames {
        let flat = flatten_frame(frame, channels)?;
        match width {
            None => width = Some(flat.len()),
            Some(w) if w != flat.len() => return Err(Error::dim("frame matrix row", w, flat.len())),
            _ => {}
        }
        data.extend(flat);
        rows += 1;
    }
    let width = width.unwrap_or(0);
    Ok(Array2::from_shape_vec((rows, width), data).expect("row widths checked"))
}
