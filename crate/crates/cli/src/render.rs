//! Binary PGM (P5) and PPM (P6) output of concentration frames.

use crate::error::{CliError, Result};

/// `floor(255 * clamp(x, 0, 1) + 0.5)`: round half up.
pub fn quantize(x: f64) -> u8 {
    let v = if x.is_nan() { 0.0 } else { x.clamp(0.0, 1.0) };
    (255.0 * v + 0.5).floor() as u8
}

fn check(values: &[f64], width: usize, height: usize) -> Result<()> {
    if values.len() != width * height || width == 0 || height == 0 {
        return Err(CliError::Shape(format!(
            "{width}x{height} image needs {} values, got {}",
            width * height,
            values.len()
        )));
    }
    Ok(())
}

/// Row-major grayscale image, maxval 255.
pub fn pgm(values: &[f64], width: usize, height: usize) -> Result<Vec<u8>> {
    check(values, width, height)?;
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(values.iter().map(|&v| quantize(v)));
    Ok(out)
}

/// Row-major RGB image with the scalar value replicated into every channel.
pub fn ppm(values: &[f64], width: usize, height: usize) -> Result<Vec<u8>> {
    check(values, width, height)?;
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    for &v in values {
        let q = quantize(v);
        out.extend_from_slice(&[q, q, q]);
    }
    Ok(out)
}

/// Image in PGM (one channel) or PPM (three channels) form.
pub fn render(values: &[f64], width: usize, height: usize, channels: usize) -> Result<Vec<u8>> {
    match channels {
        1 => pgm(values, width, height),
        3 => ppm(values, width, height),
        c => Err(CliError::Config(format!("render channels must be 1 or 3, got {c}"))),
    }
}
