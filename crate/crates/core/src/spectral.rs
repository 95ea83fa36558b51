//! Periodic-grid 2D discrete Fourier transforms and wavenumber tables.
//!
//! Convention: the forward transform is unnormalized,
//! `S(p,q) = sum_{m,n} X(m,n) exp(-2 pi i (p m / nx + q n / ny))`, and the
//! inverse divides by `nx * ny`. Arrays are row-major with `x` (index `m`,
//! length `nx`) varying fastest, so element `(m, n)` lives at `n * nx + m`.

use std::f64::consts::PI;
use std::sync::Arc;

use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Largest imaginary residue tolerated when mapping a spectrum back to a real field.
pub const MAX_IMAGINARY_RESIDUE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub dy: f64,
}

impl GridSpec {
    pub fn new(nx: usize, ny: usize, dx: f64, dy: f64) -> Result<Self> {
        let grid = GridSpec { nx, ny, dx, dy };
        grid.validate()?;
        Ok(grid)
    }

    /// Unit-spacing square grid.
    pub fn square(n: usize) -> Result<Self> {
        Self::new(n, n, 1.0, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx < 2 || self.ny < 2 {
            return Err(Error::InvalidGrid(format!(
                "need at least 2 points per axis, got {}x{}",
                self.nx, self.ny
            )));
        }
        if self.nx % 2 != 0 || self.ny % 2 != 0 {
            return Err(Error::InvalidGrid(format!(
                "grid sizes must be even, got {}x{}",
                self.nx, self.ny
            )));
        }
        if !(self.dx > 0.0 && self.dy > 0.0 && self.dx.is_finite() && self.dy.is_finite()) {
            return Err(Error::InvalidGrid(format!(
                "spacing must be positive, got dx={} dy={}",
                self.dx, self.dy
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, m: usize, n: usize) -> usize {
        n * self.nx + m
    }
}

/// Real scalar field on a periodic grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Field2D {
    grid: GridSpec,
    values: Vec<f64>,
}

impl Field2D {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::dim("Field2D values", grid.len(), values.len()));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "field value at index {pos} is not finite"
            )));
        }
        Ok(Field2D { grid, values })
    }

    pub fn constant(grid: GridSpec, value: f64) -> Self {
        Field2D {
            grid,
            values: vec![value; grid.len()],
        }
    }

    pub fn from_fn(grid: GridSpec, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for n in 0..grid.ny {
            for m in 0..grid.nx {
                values.push(f(m, n));
            }
        }
        Field2D { grid, values }
    }

    /// Caller guarantees the length matches; finiteness is not checked.
    pub(crate) fn from_raw(grid: GridSpec, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Field2D { grid, values }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn at(&self, m: usize, n: usize) -> f64 {
        self.values[self.grid.index(m, n)]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum2D {
    grid: GridSpec,
    values: Vec<Complex64>,
}

impl Spectrum2D {
    pub fn new(grid: GridSpec, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::dim("Spectrum2D values", grid.len(), values.len()));
        }
        Ok(Spectrum2D { grid, values })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn at(&self, p: usize, q: usize) -> Complex64 {
        self.values[self.grid.index(p, q)]
    }

    /// Largest violation of `S(p,q) == conj(S(-p,-q))`, relative to the largest magnitude.
    pub fn conjugate_asymmetry(&self) -> f64 {
        let GridSpec { nx, ny, .. } = self.grid;
        let scale = self.values.iter().fold(0.0_f64, |a, c| a.max(c.norm()));
        if scale == 0.0 {
            return 0.0;
        }
        let mut worst = 0.0_f64;
        for q in 0..ny {
            for p in 0..nx {
                let a = self.values[q * nx + p];
                let b = self.values[((ny - q) % ny) * nx + (nx - p) % nx];
                worst = worst.max((a - b.conj()).norm());
            }
        }
        worst / scale
    }
}

/// Squared and quartic wavenumber magnitudes per Fourier mode, in the same layout as the field.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveTable {
    pub grid: GridSpec,
    pub k2: Vec<f64>,
    pub k4: Vec<f64>,
}

/// Signed frequency index for position `i` of an `n`-point transform.
fn signed_frequency(i: usize, n: usize) -> f64 {
    if i <= n / 2 {
        i as f64
    } else {
        i as f64 - n as f64
    }
}

pub fn wavenumber(i: usize, n: usize, spacing: f64) -> f64 {
    2.0 * PI * signed_frequency(i, n) / (n as f64 * spacing)
}

pub fn wave_table(grid: &GridSpec) -> WaveTable {
    let kx: Vec<f64> = (0..grid.nx).map(|i| wavenumber(i, grid.nx, grid.dx)).collect();
    let ky: Vec<f64> = (0..grid.ny).map(|j| wavenumber(j, grid.ny, grid.dy)).collect();
    let mut k2 = Vec::with_capacity(grid.len());
    for ky_j in &ky {
        for kx_i in &kx {
            k2.push(kx_i * kx_i + ky_j * ky_j);
        }
    }
    let k4 = k2.iter().map(|k| k * k).collect();
    WaveTable { grid: *grid, k2, k4 }
}

/// Reusable plan for full complex 2D transforms on one grid.
///
/// Rows (length `nx`) are transformed in place; columns go through a
/// transposed scratch buffer so both passes run over contiguous memory.
pub struct Fft2Plan {
    grid: GridSpec,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
    transposed: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl Fft2Plan {
    pub fn new(grid: GridSpec) -> Self {
        let mut planner = FftPlanner::new();
        let row_fwd = planner.plan_fft_forward(grid.nx);
        let row_inv = planner.plan_fft_inverse(grid.nx);
        let col_fwd = planner.plan_fft_forward(grid.ny);
        let col_inv = planner.plan_fft_inverse(grid.ny);
        let scratch_len = [&row_fwd, &row_inv, &col_fwd, &col_inv]
            .iter()
            .map(|f| f.get_inplace_scratch_len())
            .max()
            .unwrap_or(0);
        Fft2Plan {
            grid,
            row_fwd,
            row_inv,
            col_fwd,
            col_inv,
            transposed: vec![Complex64::default(); grid.len()],
            scratch: vec![Complex64::default(); scratch_len],
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// Unnormalized forward transform in place.
    pub fn forward(&mut self, data: &mut [Complex64]) {
        self.run(data, true);
    }

    /// Unnormalized inverse transform in place (no `1/(nx*ny)` factor).
    pub fn inverse_unnormalized(&mut self, data: &mut [Complex64]) {
        self.run(data, false);
    }

    fn run(&mut self, data: &mut [Complex64], forward: bool) {
        let GridSpec { nx, ny, .. } = self.grid;
        assert_eq!(data.len(), nx * ny, "buffer does not match plan grid");
        let (row, col) = if forward {
            (&self.row_fwd, &self.col_fwd)
        } else {
            (&self.row_inv, &self.col_inv)
        };
        row.process_with_scratch(data, &mut self.scratch);
        for n in 0..ny {
            for m in 0..nx {
                self.transposed[m * ny + n] = data[n * nx + m];
            }
        }
        col.process_with_scratch(&mut self.transposed, &mut self.scratch);
        for m in 0..nx {
            for n in 0..ny {
                data[n * nx + m] = self.transposed[m * ny + n];
            }
        }
    }
}

/// Real-input 2D transform over the non-redundant half spectrum.
///
/// Half spectra hold modes `p in 0..=nx/2` for every `q`, stored column-major:
/// mode `(p, q)` lives at `p * ny + q`. The redundant half follows from
/// conjugate symmetry, so real fields stay real by construction.
pub struct RealFft2Plan {
    grid: GridSpec,
    half: usize,
    row_fwd: Arc<dyn RealToComplex<f64>>,
    row_inv: Arc<dyn ComplexToReal<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
    row_real: Vec<f64>,
    row_half: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl RealFft2Plan {
    pub fn new(grid: GridSpec) -> Self {
        let mut real_planner = RealFftPlanner::<f64>::new();
        let row_fwd = real_planner.plan_fft_forward(grid.nx);
        let row_inv = real_planner.plan_fft_inverse(grid.nx);
        let mut planner = FftPlanner::new();
        let col_fwd = planner.plan_fft_forward(grid.ny);
        let col_inv = planner.plan_fft_inverse(grid.ny);
        let scratch_len = [
            row_fwd.get_scratch_len(),
            row_inv.get_scratch_len(),
            col_fwd.get_inplace_scratch_len(),
            col_inv.get_inplace_scratch_len(),
        ]
        .into_iter()
        .max()
        .unwrap_or(0);
        let half = grid.nx / 2 + 1;
        RealFft2Plan {
            grid,
            half,
            row_fwd,
            row_inv,
            col_fwd,
            col_inv,
            row_real: vec![0.0; grid.nx],
            row_half: vec![Complex64::default(); half],
            scratch: vec![Complex64::default(); scratch_len],
        }
    }

    /// Number of stored modes, `(nx/2 + 1) * ny`.
    pub fn half_len(&self) -> usize {
        self.half * self.grid.ny
    }

    /// Full-layout table values gathered into half-spectrum order.
    pub fn to_half_layout(&self, full: &[f64]) -> Vec<f64> {
        let GridSpec { nx, ny, .. } = self.grid;
        let mut out = Vec::with_capacity(self.half_len());
        for p in 0..self.half {
            for q in 0..ny {
                out.push(full[q * nx + p]);
            }
        }
        out
    }

    /// Unnormalized forward transform of a real field into half layout.
    pub fn forward(&mut self, input: &[f64], out: &mut [Complex64]) {
        let GridSpec { nx, ny, .. } = self.grid;
        assert_eq!(input.len(), nx * ny);
        assert_eq!(out.len(), self.half_len());
        for q in 0..ny {
            self.row_real.copy_from_slice(&input[q * nx..(q + 1) * nx]);
            self.row_fwd
                .process_with_scratch(&mut self.row_real, &mut self.row_half, &mut self.scratch)
                .expect("row buffers sized by plan");
            for p in 0..self.half {
                out[p * ny + q] = self.row_half[p];
            }
        }
        self.col_fwd.process_with_scratch(out, &mut self.scratch);
    }

    /// Unnormalized inverse transform. `spectrum` is consumed as workspace.
    ///
    /// Returns the largest imaginary part that had to be dropped from the
    /// self-conjugate modes, divided by `nx * ny`.
    pub fn inverse_unnormalized(&mut self, spectrum: &mut [Complex64], out: &mut [f64]) -> f64 {
        let GridSpec { nx, ny, .. } = self.grid;
        assert_eq!(spectrum.len(), self.half_len());
        assert_eq!(out.len(), nx * ny);
        self.col_inv.process_with_scratch(spectrum, &mut self.scratch);
        let nyquist = nx / 2;
        let mut residue = 0.0_f64;
        for q in 0..ny {
            for p in 0..self.half {
                self.row_half[p] = spectrum[p * ny + q];
            }
            for p in [0, nyquist] {
                residue = residue.max(self.row_half[p].im.abs());
                self.row_half[p].im = 0.0;
            }
            self.row_inv
                .process_with_scratch(
                    &mut self.row_half,
                    &mut out[q * nx..(q + 1) * nx],
                    &mut self.scratch,
                )
                .expect("self-conjugate modes were zeroed");
        }
        residue / (nx * ny) as f64
    }
}

pub fn dft2_forward(field: &Field2D) -> Spectrum2D {
    let grid = *field.grid();
    let mut data: Vec<Complex64> = field
        .values()
        .iter()
        .map(|&v| Complex64::new(v, 0.0))
        .collect();
    Fft2Plan::new(grid).forward(&mut data);
    Spectrum2D { grid, values: data }
}

/// Normalized inverse transform. Returns the real part together with the
/// largest discarded imaginary component.
pub fn dft2_inverse(spec: &Spectrum2D) -> Result<(Field2D, f64)> {
    let grid = *spec.grid();
    let mut data = spec.values().to_vec();
    Fft2Plan::new(grid).inverse_unnormalized(&mut data);
    let norm = 1.0 / grid.len() as f64;
    real_part(grid, &data, norm)
}

/// Scales `data` by `norm`, checks the imaginary residue, and keeps the real part.
pub(crate) fn real_part(grid: GridSpec, data: &[Complex64], norm: f64) -> Result<(Field2D, f64)> {
    let mut residue = 0.0_f64;
    let mut values = Vec::with_capacity(data.len());
    for c in data {
        residue = residue.max((c.im * norm).abs());
        values.push(c.re * norm);
    }
    if !(residue <= MAX_IMAGINARY_RESIDUE) {
        return Err(Error::ImaginaryResidueTooLarge { residue });
    }
    Ok((Field2D::from_raw(grid, values), residue))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(grid: GridSpec, seed: u64) -> Field2D {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Field2D::from_fn(grid, |_, _| rng.gen_range(-1.0..1.0))
    }

    /// Direct O(N^4) evaluation of the forward sum.
    fn brute_forward(field: &Field2D) -> Vec<Complex64> {
        let GridSpec { nx, ny, .. } = *field.grid();
        let mut out = vec![Complex64::default(); nx * ny];
        for q in 0..ny {
            for p in 0..nx {
                let mut acc = Complex64::default();
                for n in 0..ny {
                    for m in 0..nx {
                        let phase = -2.0
                            * PI
                            * ((p * m) as f64 / nx as f64 + (q * n) as f64 / ny as f64);
                        acc += field.at(m, n) * Complex64::from_polar(1.0, phase);
                    }
                }
                out[q * nx + p] = acc;
            }
        }
        out
    }

    #[test]
    fn wave_table_two_by_two() {
        let wt = wave_table(&GridSpec::square(2).unwrap());
        let pi2 = PI * PI;
        let expected = [0.0, pi2, pi2, 2.0 * pi2];
        for (k, e) in wt.k2.iter().zip(expected) {
            assert!((k - e).abs() < 1e-12, "{k} vs {e}");
        }
        for (k2, k4) in wt.k2.iter().zip(&wt.k4) {
            assert_eq!(k2 * k2, *k4);
        }
    }

    #[test]
    fn wavenumber_quarter_grid() {
        let kx = wavenumber(1, 4, 1.0);
        assert!((kx - PI / 2.0).abs() < 1e-15);
        assert!((kx * kx - PI * PI / 4.0).abs() < 1e-15);
    }

    #[test]
    fn wave_table_dc_is_zero_and_nonnegative() {
        let grid = GridSpec::new(8, 6, 0.5, 2.0).unwrap();
        let wt = wave_table(&grid);
        assert_eq!(wt.k2[0], 0.0);
        assert!(wt.k2.iter().all(|&k| k >= 0.0));
    }

    #[test]
    fn rejects_odd_and_tiny_grids() {
        assert!(GridSpec::new(3, 4, 1.0, 1.0).is_err());
        assert!(GridSpec::new(0, 4, 1.0, 1.0).is_err());
        assert!(GridSpec::new(4, 4, 0.0, 1.0).is_err());
    }

    #[test]
    fn constant_field_has_only_dc() {
        let grid = GridSpec::square(4).unwrap();
        let s = dft2_forward(&Field2D::constant(grid, 0.3));
        assert!((s.at(0, 0).re - 16.0 * 0.3).abs() < 1e-12);
        for (i, v) in s.values().iter().enumerate().skip(1) {
            assert!(v.norm() < 1e-12, "mode {i}: {v}");
        }
    }

    #[test]
    fn dc_only_spectrum_inverts_to_constant() {
        let grid = GridSpec::square(4).unwrap();
        let mut values = vec![Complex64::default(); 16];
        values[0] = Complex64::new(16.0 * 0.7, 0.0);
        let (f, residue) = dft2_inverse(&Spectrum2D::new(grid, values).unwrap()).unwrap();
        assert_eq!(residue, 0.0);
        assert!(f.values().iter().all(|v| (v - 0.7).abs() < 1e-14));
    }

    #[test]
    fn forward_matches_brute_force_8x8() {
        let grid = GridSpec::square(8).unwrap();
        let f = random_field(grid, 7);
        let fast = dft2_forward(&f);
        for (a, b) in fast.values().iter().zip(brute_forward(&f)) {
            assert!((a - b).norm() < 1e-9);
        }
        assert!(fast.conjugate_asymmetry() < 1e-10);
    }

    #[test]
    fn round_trip_rectangular() {
        let grid = GridSpec::new(6, 10, 1.0, 1.0).unwrap();
        let f = random_field(grid, 11);
        let (back, _) = dft2_inverse(&dft2_forward(&f)).unwrap();
        for (a, b) in f.values().iter().zip(back.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn real_plan_agrees_with_full_transform() {
        let grid = GridSpec::new(8, 6, 1.0, 1.0).unwrap();
        let f = random_field(grid, 3);
        let full = dft2_forward(&f);
        let mut plan = RealFft2Plan::new(grid);
        let mut half = vec![Complex64::default(); plan.half_len()];
        plan.forward(f.values(), &mut half);
        for p in 0..=4 {
            for q in 0..6 {
                assert!((half[p * 6 + q] - full.at(p, q)).norm() < 1e-12);
            }
        }
        let mut back = vec![0.0; grid.len()];
        let residue = plan.inverse_unnormalized(&mut half, &mut back);
        assert!(residue < 1e-14);
        for (a, b) in f.values().iter().zip(&back) {
            assert!((a - b / 48.0).abs() < 1e-12);
        }
    }

    #[test]
    fn corrupted_spectrum_is_rejected() {
        let grid = GridSpec::square(4).unwrap();
        let mut values = vec![Complex64::default(); 16];
        values[1] = Complex64::new(1.0, 0.0);
        let err = dft2_inverse(&Spectrum2D::new(grid, values).unwrap()).unwrap_err();
        assert!(matches!(err, Error::ImaginaryResidueTooLarge { .. }));
    }
}
