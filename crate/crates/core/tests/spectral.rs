mod oracles;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spinodal::spectral::{dft2_forward, dft2_inverse, wave_table, Field2D, GridSpec, Spectrum2D};

fn random_field(nx: usize, ny: usize, seed: u64) -> Field2D {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = GridSpec::new(nx, ny, 1.0, 1.0).unwrap();
    Field2D::from_fn(grid, |_, _| rng.gen_range(-1.0..1.0))
}

#[test]
fn forward_matches_brute_force_sums() {
    for (nx, ny, seed) in [(8, 8, 1), (12, 12, 2), (8, 6, 3), (16, 4, 4)] {
        let f = random_field(nx, ny, seed);
        let fast = dft2_forward(&f);
        let slow = oracles::brute_dft2(f.values(), nx, ny);
        let err = fast
            .values()
            .iter()
            .zip(&slow)
            .map(|(c, (re, im))| (c.re - re).abs().max((c.im - im).abs()))
            .fold(0.0, f64::max);
        assert!(err < 1e-9, "{nx}x{ny}: {err:e}");
    }
}

#[test]
fn inverse_matches_brute_force_sums() {
    for (n, seed) in [(8, 5), (12, 6)] {
        let f = random_field(n, n, seed);
        let spectrum = dft2_forward(&f);
        let pairs: Vec<(f64, f64)> = spectrum.values().iter().map(|c| (c.re, c.im)).collect();
        let (slow, slow_residue) = oracles::brute_idft2(&pairs, n, n);
        let (fast, residue) = dft2_inverse(&spectrum).unwrap();
        assert!(slow_residue < 1e-9 && residue < 1e-9);
        let err = fast.values().iter().zip(&slow).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-9, "{n}x{n}: {err:e}");
    }
}

#[test]
fn dc_only_spectrum_is_constant_field() {
    let grid = GridSpec::square(4).unwrap();
    let mut values = vec![rustfft_zero(); 16];
    values[0].re = 16.0 * 0.37;
    let (f, _) = dft2_inverse(&Spectrum2D::new(grid, values).unwrap()).unwrap();
    assert!(f.values().iter().all(|v| (v - 0.37).abs() < 1e-15));
}

fn rustfft_zero() -> realfft::num_complex::Complex64 {
    realfft::num_complex::Complex64::new(0.0, 0.0)
}

#[test]
fn wave_table_two_by_two() {
    let wt = wave_table(&GridSpec::square(2).unwrap());
    let pi2 = std::f64::consts::PI.powi(2);
    let expect = [0.0, pi2, pi2, 2.0 * pi2];
    for (k, e) in wt.k2.iter().zip(expect) {
        assert!((k - e).abs() < 1e-12);
    }
    assert!(wt.k4.iter().zip(&wt.k2).all(|(k4, k2)| (k4 - k2 * k2).abs() < 1e-9));
}

fn even_dim() -> impl Strategy<Value = usize> {
    (1usize..=8).prop_map(|h| 2 * h)
}

fn field_strategy() -> impl Strategy<Value = Field2D> {
    (even_dim(), even_dim()).prop_flat_map(|(nx, ny)| {
        prop::collection::vec(-100.0f64..100.0, nx * ny).prop_map(move |v| {
            Field2D::new(GridSpec::new(nx, ny, 1.0, 1.0).unwrap(), v).unwrap()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn round_trip_recovers_field(f in field_strategy()) {
        let (back, residue) = dft2_inverse(&dft2_forward(&f)).unwrap();
        let tol = 1e-10 * (1.0 + f.max_abs());
        prop_assert!(residue < 1e-8);
        for (a, b) in back.values().iter().zip(f.values()) {
            prop_assert!((a - b).abs() < tol);
        }
    }

    #[test]
    fn parseval_holds(f in field_strategy()) {
        let spatial: f64 = f.values().iter().map(|v| v * v).sum();
        let spectral: f64 = dft2_forward(&f).values().iter().map(|c| c.norm_sqr()).sum::<f64>()
            / f.values().len() as f64;
        prop_assert!((spatial - spectral).abs() <= 1e-8 * spatial.max(1e-300));
    }

    #[test]
    fn transform_is_linear(
        f in field_strategy(),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
        seed in any::<u64>(),
    ) {
        let grid = *f.grid();
        let g = random_field(grid.nx, grid.ny, seed);
        let combo = Field2D::new(
            grid,
            f.values().iter().zip(g.values()).map(|(x, y)| a * x + b * y).collect(),
        ).unwrap();
        let (sf, sg, sc) = (dft2_forward(&f), dft2_forward(&g), dft2_forward(&combo));
        let scale = sc.values().iter().map(|c| c.norm()).fold(1.0, f64::max);
        for ((x, y), z) in sf.values().iter().zip(sg.values()).zip(sc.values()) {
            prop_assert!((x * a + y * b - z).norm() <= 1e-10 * scale);
        }
    }
}
