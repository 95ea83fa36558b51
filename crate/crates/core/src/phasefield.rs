//! Cahn-Hilliard spinodal decomposition on a periodic grid.
//!
//! The concentration `X` evolves as `dX/dt = M lap(g'(X) - kappa lap X)`.
//! Time stepping is the first-order semi-implicit Fourier scheme: the stiff
//! `kappa lap^2` term is implicit and the bulk chemical potential explicit,
//!
//! ```text
//! X^{n+1}_k = (X^n_k - dt M |k|^2 g'(X^n)_k) / (1 + dt M kappa |k|^4)
//! ```
//!
//! The DC mode has `|k|^2 = 0`, so the mean concentration is conserved exactly
//! in spectral space.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::spectral::{
    wave_table, Field2D, GridSpec, RealFft2Plan, WaveTable, MAX_IMAGINARY_RESIDUE,
};

/// Concentrations escaping `[-BLOWUP_LIMIT, BLOWUP_LIMIT]` are treated as divergence.
pub const BLOWUP_LIMIT: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PotentialForm {
    /// `g(X) = A X^2 (1 - X)^2`, wells at 0 and 1.
    #[default]
    StandardDoubleWell,
    /// `g(X) = A X^2 (1 - X^2)`, the polynomial exactly as printed.
    AsWritten,
}

impl PotentialForm {
    pub fn name(&self) -> &'static str {
        match self {
            PotentialForm::StandardDoubleWell => "standard_double_well",
            PotentialForm::AsWritten => "as_written",
        }
    }
}

impl fmt::Display for PotentialForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PotentialForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard_double_well" => Ok(PotentialForm::StandardDoubleWell),
            "as_written" => Ok(PotentialForm::AsWritten),
            other => Err(Error::InvalidParams(format!("unknown potential form '{other}'"))),
        }
    }
}

#[inline]
pub fn bulk_potential(x: f64, a: f64, form: PotentialForm) -> f64 {
    match form {
        PotentialForm::StandardDoubleWell => a * x * x * (1.0 - x) * (1.0 - x),
        PotentialForm::AsWritten => a * x * x * (1.0 - x * x),
    }
}

#[inline]
pub fn bulk_potential_derivative(x: f64, a: f64, form: PotentialForm) -> f64 {
    match form {
        PotentialForm::StandardDoubleWell => 2.0 * a * x * (1.0 - x) * (1.0 - 2.0 * x),
        PotentialForm::AsWritten => 2.0 * a * x - 4.0 * a * x * x * x,
    }
}

/// Physics and numerics of one simulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PFParams {
    pub x0: f64,
    pub mobility: f64,
    pub kappa: f64,
    pub barrier_a: f64,
    pub dt: f64,
    pub n_steps: usize,
    pub snapshot_stride: usize,
    pub noise_amp: f64,
    pub seed: u64,
    pub potential_form: PotentialForm,
}

impl Default for PFParams {
    fn default() -> Self {
        PFParams {
            x0: 0.5,
            mobility: 1.0,
            kappa: 0.5,
            barrier_a: 1.0,
            dt: 0.01,
            n_steps: 20_000,
            snapshot_stride: 200,
            noise_amp: 0.05,
            seed: 0,
            potential_form: PotentialForm::StandardDoubleWell,
        }
    }
}

impl PFParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParams(msg));
        if !(self.x0 > 0.0 && self.x0 < 1.0) {
            return bad(format!("x0 must lie in (0,1), got {}", self.x0));
        }
        if !(self.mobility > 0.0 && self.mobility.is_finite()) {
            return bad(format!("mobility must be positive, got {}", self.mobility));
        }
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return bad(format!("kappa must be positive, got {}", self.kappa));
        }
        if !self.barrier_a.is_finite() {
            return bad(format!("barrier A must be finite, got {}", self.barrier_a));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if self.n_steps == 0 {
            return bad("n_steps must be at least 1".into());
        }
        if self.snapshot_stride == 0 || self.n_steps % self.snapshot_stride != 0 {
            return bad(format!(
                "snapshot stride {} must be positive and divide n_steps {}",
                self.snapshot_stride, self.n_steps
            ));
        }
        if !(self.noise_amp >= 0.0)
            || self.x0 - self.noise_amp <= 0.0
            || self.x0 + self.noise_amp >= 1.0
        {
            return bad(format!(
                "x0 +/- noise_amp must stay inside (0,1), got {} +/- {}",
                self.x0, self.noise_amp
            ));
        }
        Ok(())
    }

    pub fn n_frames(&self) -> usize {
        self.n_steps / self.snapshot_stride
    }
}

/// Uniform noise around `x0`, shifted so the field mean is `x0`.
pub fn init_field(grid: &GridSpec, x0: f64, noise_amp: f64, seed: u64) -> Field2D {
    if noise_amp == 0.0 {
        return Field2D::constant(*grid, x0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noise: Vec<f64> = (0..grid.len())
        .map(|_| rng.gen_range(-noise_amp..=noise_amp))
        .collect();
    let shift = noise.iter().sum::<f64>() / noise.len() as f64;
    for u in &mut noise {
        *u = x0 + (*u - shift);
    }
    Field2D::from_raw(*grid, noise)
}

/// Semi-implicit spectral integrator holding the spectral state between steps.
///
/// The state is kept as a half spectrum (see [`RealFft2Plan`]); each step costs
/// one forward transform of `g'(X)` and one inverse transform of the update.
pub struct CahnHilliardSolver {
    params: PFParams,
    plan: RealFft2Plan,
    k2_dt_m: Vec<f64>,
    inv_denominator: Vec<f64>,
    spectrum: Vec<Complex64>,
    work: Vec<Complex64>,
    potential: Vec<f64>,
    field: Vec<f64>,
    grid: GridSpec,
    steps_taken: usize,
}

impl CahnHilliardSolver {
    pub fn new(field: Field2D, params: &PFParams) -> Result<Self> {
        let wt = wave_table(field.grid());
        Self::with_wave_table(field, params, &wt)
    }

    pub fn with_wave_table(field: Field2D, params: &PFParams, wt: &WaveTable) -> Result<Self> {
        let grid = *field.grid();
        if wt.grid != grid {
            return Err(Error::InvalidGrid(
                "wave table was built for a different grid".into(),
            ));
        }
        let mut plan = RealFft2Plan::new(grid);
        let mut spectrum = vec![Complex64::default(); plan.half_len()];
        plan.forward(field.values(), &mut spectrum);
        let dt_m = params.dt * params.mobility;
        let k2_dt_m = plan
            .to_half_layout(&wt.k2)
            .into_iter()
            .map(|k2| dt_m * k2)
            .collect();
        let inv_denominator = plan
            .to_half_layout(&wt.k4)
            .into_iter()
            .map(|k4| 1.0 / (1.0 + dt_m * params.kappa * k4))
            .collect();
        Ok(CahnHilliardSolver {
            params: *params,
            k2_dt_m,
            inv_denominator,
            work: vec![Complex64::default(); spectrum.len()],
            spectrum,
            plan,
            potential: vec![0.0; grid.len()],
            field: field.into_values(),
            grid,
            steps_taken: 0,
        })
    }

    /// Copy of the current concentration field.
    pub fn field(&self) -> Field2D {
        Field2D::from_raw(self.grid, self.field.clone())
    }

    pub fn values(&self) -> &[f64] {
        &self.field
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn steps_taken(&self) -> usize {
        self.steps_taken
    }

    pub fn step(&mut self) -> Result<()> {
        let step = self.steps_taken + 1;
        let PFParams {
            barrier_a,
            potential_form,
            ..
        } = self.params;
        for (g, &x) in self.potential.iter_mut().zip(&self.field) {
            *g = bulk_potential_derivative(x, barrier_a, potential_form);
        }
        self.plan.forward(&self.potential, &mut self.work);
        for i in 0..self.spectrum.len() {
            self.spectrum[i] =
                (self.spectrum[i] - self.work[i] * self.k2_dt_m[i]) * self.inv_denominator[i];
        }
        self.work.copy_from_slice(&self.spectrum);
        let residue = self
            .plan
            .inverse_unnormalized(&mut self.work, &mut self.potential);
        if !(residue <= MAX_IMAGINARY_RESIDUE) {
            return Err(Error::NumericalBlowup {
                step,
                detail: format!("imaginary residue {residue:e}"),
            });
        }
        let norm = 1.0 / self.grid.len() as f64;
        for v in &mut self.potential {
            *v *= norm;
            if !v.is_finite() || v.abs() > BLOWUP_LIMIT {
                return Err(Error::NumericalBlowup {
                    step,
                    detail: format!("concentration reached {v}"),
                });
            }
        }
        std::mem::swap(&mut self.field, &mut self.potential);
        self.steps_taken = step;
        Ok(())
    }
}

/// One semi-implicit step starting from a real-space field.
pub fn step_semi_implicit(field: &Field2D, params: &PFParams, wt: &WaveTable) -> Result<Field2D> {
    let mut solver = CahnHilliardSolver::with_wave_table(field.clone(), params, wt)?;
    solver.step()?;
    Ok(solver.field())
}

/// Discrete total free energy with central-difference gradients under periodic wrap.
pub fn free_energy(field: &Field2D, params: &PFParams) -> f64 {
    let GridSpec { nx, ny, dx, dy } = *field.grid();
    let v = field.values();
    let mut total = 0.0;
    for n in 0..ny {
        let up = ((n + 1) % ny) * nx;
        let down = ((n + ny - 1) % ny) * nx;
        let row = n * nx;
        for m in 0..nx {
            let right = (m + 1) % nx;
            let left = (m + nx - 1) % nx;
            let gx = (v[row + right] - v[row + left]) / (2.0 * dx);
            let gy = (v[up + m] - v[down + m]) / (2.0 * dy);
            total += bulk_potential(v[row + m], params.barrier_a, params.potential_form)
                + 0.5 * params.kappa * (gx * gx + gy * gy);
        }
    }
    total * dx * dy
}

/// Free energy with the gradient term taken from the Fourier interpolant,
/// `sum_k |k|^2 |X_k|^2 / (nx ny)`.
///
/// This is the discretization the spectral solver actually dissipates; the
/// central-difference form of [`free_energy`] cannot see Nyquist-scale
/// roughness and may briefly rise while such roughness is being smoothed.
pub fn spectral_free_energy(field: &Field2D, params: &PFParams) -> f64 {
    let grid = *field.grid();
    let wt = wave_table(&grid);
    let spectrum = crate::spectral::dft2_forward(field);
    let gradient_sq: f64 = spectrum
        .values()
        .iter()
        .zip(&wt.k2)
        .map(|(c, k2)| c.norm_sqr() * k2)
        .sum::<f64>()
        / grid.len() as f64;
    let bulk: f64 = field
        .values()
        .iter()
        .map(|&x| bulk_potential(x, params.barrier_a, params.potential_form))
        .sum();
    (bulk + 0.5 * params.kappa * gradient_sq) * grid.dx * grid.dy
}

/// Stored frames of one simulation, taken after every `snapshot_stride` steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub params: PFParams,
    pub frames: Vec<Field2D>,
}

impl Trajectory {
    pub fn grid(&self) -> Option<&GridSpec> {
        self.frames.first().map(|f| f.grid())
    }
}

pub fn simulate(params: &PFParams, grid: &GridSpec) -> Result<Trajectory> {
    params.validate()?;
    grid.validate()?;
    let init = init_field(grid, params.x0, params.noise_amp, params.seed);
    let mut solver = CahnHilliardSolver::new(init, params)?;
    let mut frames = Vec::with_capacity(params.n_frames());
    for step in 1..=params.n_steps {
        solver.step()?;
        if step % params.snapshot_stride == 0 {
            frames.push(solver.field());
        }
    }
    Ok(Trajectory {
        params: *params,
        frames,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamRange {
    pub min: f64,
    pub max: f64,
}

impl ParamRange {
    pub fn new(min: f64, max: f64) -> Self {
        ParamRange { min, max }
    }

    pub fn point(v: f64) -> Self {
        ParamRange { min: v, max: v }
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        let u: f64 = rng.gen();
        self.min + (self.max - self.min) * u
    }
}

/// A batch of simulations with parameters drawn uniformly from ranges.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub n_samples: usize,
    pub x0: ParamRange,
    pub mobility: ParamRange,
    pub kappa: ParamRange,
    pub base_seed: u64,
    pub grid: GridSpec,
    /// Shared numerics; `x0`, `mobility`, `kappa` and `seed` are overwritten per sample.
    pub numerics: PFParams,
}

impl SweepSpec {
    /// Default sweep ranges for x0, mobility and kappa.
    pub fn reference_ranges(n_samples: usize, grid: GridSpec, numerics: PFParams) -> Self {
        SweepSpec {
            n_samples,
            x0: ParamRange::new(0.25, 0.75),
            mobility: ParamRange::new(0.8, 2.2),
            kappa: ParamRange::new(0.25, 0.75),
            base_seed: 0,
            grid,
            numerics,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::InvalidParams("sweep needs at least one sample".into()));
        }
        self.grid.validate()?;
        for (name, r) in [("x0", self.x0), ("mobility", self.mobility), ("kappa", self.kappa)] {
            if !(r.min <= r.max) {
                return Err(Error::InvalidParams(format!(
                    "{name} range [{}, {}] is empty",
                    r.min, r.max
                )));
            }
        }
        // Both range corners must produce valid parameter sets.
        for x0 in [self.x0.min, self.x0.max] {
            for mobility in [self.mobility.min, self.mobility.max] {
                for kappa in [self.kappa.min, self.kappa.max] {
                    PFParams {
                        x0,
                        mobility,
                        kappa,
                        ..self.numerics
                    }
                    .validate()?;
                }
            }
        }
        Ok(())
    }
}

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-sample stream seed: `splitmix64(base_seed ^ splitmix64(sample_index))`.
pub fn mix_seed(base_seed: u64, sample_index: u64) -> u64 {
    splitmix64(base_seed ^ splitmix64(sample_index))
}

/// Parameters of sample `index`, drawn from its own stream in the order x0, M, kappa, noise seed.
pub fn sample_params(sweep: &SweepSpec, index: usize) -> PFParams {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(sweep.base_seed, index as u64));
    let x0 = sweep.x0.sample(&mut rng);
    let mobility = sweep.mobility.sample(&mut rng);
    let kappa = sweep.kappa.sample(&mut rng);
    let seed = rng.gen();
    PFParams {
        x0,
        mobility,
        kappa,
        seed,
        ..sweep.numerics
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SampleStatus {
    Ok,
    Failed(String),
}

impl SampleStatus {
    pub fn is_ok(&self) -> bool {
        matches!(self, SampleStatus::Ok)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub sample_id: usize,
    pub params: PFParams,
    pub status: SampleStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<SampleRecord>,
    /// `None` for failed samples; indexed by sample id.
    pub trajectories: Vec<Option<Trajectory>>,
}

/// Runs one simulation per sample on a pool of `jobs` workers (0 = rayon default).
///
/// Failures are recorded per sample and do not stop the batch. Output is in
/// sample order whatever the scheduling.
pub fn generate_dataset(sweep: &SweepSpec, jobs: usize) -> Result<Dataset> {
    sweep.validate()?;
    let run = || {
        (0..sweep.n_samples)
            .into_par_iter()
            .map(|i| {
                let params = sample_params(sweep, i);
                let outcome = simulate(&params, &sweep.grid);
                (i, params, outcome)
            })
            .collect::<Vec<_>>()
    };
    let results = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidParams(format!("worker pool: {e}")))?
        .install(run);

    let mut records = Vec::with_capacity(results.len());
    let mut trajectories = Vec::with_capacity(results.len());
    for (sample_id, params, outcome) in results {
        match outcome {
            Ok(t) => {
                records.push(SampleRecord {
                    sample_id,
                    params,
                    status: SampleStatus::Ok,
                });
                trajectories.push(Some(t));
            }
            Err(e) => {
                log::warn!("sample {sample_id} failed: {e}");
                records.push(SampleRecord {
                    sample_id,
                    params,
                    status: SampleStatus::Failed(e.to_string()),
                });
                trajectories.push(None);
            }
        }
    }
    Ok(Dataset {
        records,
        trajectories,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn double_well_stationary_points() {
        for x in [0.0, 0.5, 1.0] {
            for a in [0.3, 1.0, 7.0] {
                assert_eq!(
                    bulk_potential_derivative(x, a, PotentialForm::StandardDoubleWell),
                    0.0
                );
            }
        }
        let d = bulk_potential_derivative(0.25, 1.0, PotentialForm::StandardDoubleWell);
        assert!((d - 0.1875).abs() < 1e-15);
        let x = 0.5_f64.sqrt();
        assert!(bulk_potential_derivative(x, 1.0, PotentialForm::AsWritten).abs() < 1e-15);
    }

    #[test]
    fn derivative_matches_potential_slope() {
        for form in [PotentialForm::StandardDoubleWell, PotentialForm::AsWritten] {
            for &x in &[-0.2, 0.1, 0.37, 0.8, 1.3] {
                let h = 1e-6;
                let fd = (bulk_potential(x + h, 1.3, form) - bulk_potential(x - h, 1.3, form))
                    / (2.0 * h);
                assert!((fd - bulk_potential_derivative(x, 1.3, form)).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn init_field_mean_and_determinism() {
        let grid = GridSpec::square(16).unwrap();
        let a = init_field(&grid, 0.4, 0.05, 99);
        let b = init_field(&grid, 0.4, 0.05, 99);
        assert_eq!(a, b);
        assert!((a.mean() - 0.4).abs() < 1e-14);
        assert!(a.values().iter().any(|&v| v != 0.4));
        let flat = init_field(&grid, 0.4, 0.0, 99);
        assert!(flat.values().iter().all(|&v| v == 0.4));
    }

    #[test]
    fn uniform_half_is_a_fixed_point() {
        let grid = GridSpec::square(8).unwrap();
        let params = PFParams::default();
        let f = Field2D::constant(grid, 0.5);
        let next = step_semi_implicit(&f, &params, &wave_table(&grid)).unwrap();
        for v in next.values() {
            assert!((v - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn free_energy_of_uniform_fields() {
        let grid = GridSpec::square(16).unwrap();
        let params = PFParams::default();
        let g = free_energy(&Field2D::constant(grid, 0.5), &params);
        assert!((g - 16.0).abs() < 1e-12);
        assert_eq!(free_energy(&Field2D::constant(grid, 0.0), &params), 0.0);
        assert_eq!(free_energy(&Field2D::constant(grid, 1.0), &params), 0.0);
    }

    #[test]
    fn blowup_is_reported_with_step() {
        let grid = GridSpec::square(16).unwrap();
        let params = PFParams {
            dt: 50.0,
            mobility: 2.0,
            kappa: 0.01,
            barrier_a: 50.0,
            n_steps: 400,
            snapshot_stride: 400,
            noise_amp: 0.2,
            ..PFParams::default()
        };
        match simulate(&params, &grid) {
            Err(Error::NumericalBlowup { step, .. }) => assert!(step >= 1 && step <= 400),
            other => panic!("expected blowup, got {other:?}"),
        }
    }

    #[test]
    fn simulate_frame_count() {
        let grid = GridSpec::square(8).unwrap();
        let params = PFParams {
            n_steps: 60,
            snapshot_stride: 20,
            ..PFParams::default()
        };
        let t = simulate(&params, &grid).unwrap();
        assert_eq!(t.frames.len(), 3);
    }

    #[test]
    fn invalid_params_rejected() {
        let base = PFParams::default();
        for p in [
            PFParams { x0: 1.0, ..base },
            PFParams { mobility: 0.0, ..base },
            PFParams { kappa: -1.0, ..base },
            PFParams { snapshot_stride: 7, ..base },
            PFParams { noise_amp: 0.6, ..base },
        ] {
            assert!(p.validate().is_err(), "{p:?}");
        }
    }

    #[test]
    fn degenerate_sweep_reproduces_point() {
        let grid = GridSpec::square(8).unwrap();
        let numerics = PFParams {
            n_steps: 10,
            snapshot_stride: 5,
            ..PFParams::default()
        };
        let sweep = SweepSpec {
            n_samples: 1,
            x0: ParamRange::point(0.4),
            mobility: ParamRange::point(1.1),
            kappa: ParamRange::point(0.3),
            base_seed: 5,
            grid,
            numerics,
        };
        let ds = generate_dataset(&sweep, 1).unwrap();
        let p = ds.records[0].params;
        assert_eq!((p.x0, p.mobility, p.kappa), (0.4, 1.1, 0.3));
    }
}
