//! Independent reference computations shared by the integration and
//! acceptance tests. Nothing here calls into the library's numerics.

#![allow(dead_code)]

use std::f64::consts::PI;

/// Direct `O(N^4)` forward DFT of a real row-major field; `(re, im)` pairs.
pub fn brute_dft2(values: &[f64], nx: usize, ny: usize) -> Vec<(f64, f64)> {
    let mut out = vec![(0.0, 0.0); nx * ny];
    for q in 0..ny {
        for p in 0..nx {
            let (mut re, mut im) = (0.0, 0.0);
            for n in 0..ny {
                for m in 0..nx {
                    let phase = -2.0 * PI * ((p * m) as f64 / nx as f64 + (q * n) as f64 / ny as f64);
                    let v = values[n * nx + m];
                    re += v * phase.cos();
                    im += v * phase.sin();
                }
            }
            out[q * nx + p] = (re, im);
        }
    }
    out
}

/// Direct normalized inverse DFT; returns (real part, max |imaginary part|).
pub fn brute_idft2(spec: &[(f64, f64)], nx: usize, ny: usize) -> (Vec<f64>, f64) {
    let norm = (nx * ny) as f64;
    let mut out = vec![0.0; nx * ny];
    let mut residue: f64 = 0.0;
    for n in 0..ny {
        for m in 0..nx {
            let (mut re, mut im) = (0.0, 0.0);
            for q in 0..ny {
                for p in 0..nx {
                    let phase = 2.0 * PI * ((p * m) as f64 / nx as f64 + (q * n) as f64 / ny as f64);
                    let (a, b) = spec[q * nx + p];
                    re += a * phase.cos() - b * phase.sin();
                    im += a * phase.sin() + b * phase.cos();
                }
            }
            out[n * nx + m] = re / norm;
            residue = residue.max((im / norm).abs());
        }
    }
    (out, residue)
}

/// Cyclic Jacobi eigensolver for a symmetric matrix.
///
/// Returns eigenvalues sorted descending and the matching unit eigenvectors.
pub fn jacobi_eigen(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut a: Vec<Vec<f64>> = a.to_vec();
    let mut v = vec![vec![0.0; n]; n];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        let scale: f64 = (0..n).map(|i| a[i][i] * a[i][i]).sum::<f64>().max(1e-300);
        if off <= 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j][j].partial_cmp(&a[i][i]).unwrap());
    let values = order.iter().map(|&i| a[i][i]).collect();
    let vectors = order.iter().map(|&i| (0..n).map(|k| v[k][i]).collect()).collect();
    (values, vectors)
}

/// Sample covariance with `1/(n-1)`, by explicit loops.
pub fn covariance(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = rows.len();
    let m = rows[0].len();
    let mut mean = vec![0.0; m];
    for r in rows {
        for j in 0..m {
            mean[j] += r[j];
        }
    }
    for v in &mut mean {
        *v /= n as f64;
    }
    let mut cov = vec![vec![0.0; m]; m];
    for r in rows {
        for i in 0..m {
            for j in 0..m {
                cov[i][j] += (r[i] - mean[i]) * (r[j] - mean[j]);
            }
        }
    }
    for row in &mut cov {
        for v in row {
            *v /= (n - 1) as f64;
        }
    }
    (mean, cov)
}

/// `g(X) = A X^2 (1-X)^2` and its derivative.
pub fn double_well(x: f64, a: f64) -> f64 {
    a * x * x * (1.0 - x) * (1.0 - x)
}

pub fn double_well_prime(x: f64, a: f64) -> f64 {
    2.0 * a * x * (1.0 - x) * (1.0 - 2.0 * x)
}

/// Five-point periodic Laplacian on a unit-spaced row-major grid.
pub fn laplacian(v: &[f64], nx: usize, ny: usize) -> Vec<f64> {
    let mut out = vec![0.0; nx * ny];
    for n in 0..ny {
        for m in 0..nx {
            let at = |mm: usize, nn: usize| v[nn * nx + mm];
            out[n * nx + m] = at((m + 1) % nx, n) + at((m + nx - 1) % nx, n) + at(m, (n + 1) % ny)
                + at(m, (n + ny - 1) % ny)
                - 4.0 * at(m, n);
        }
    }
    out
}

/// Explicit Euler Cahn-Hilliard with the standard double well.
pub fn explicit_cahn_hilliard(
    init: &[f64],
    nx: usize,
    ny: usize,
    mobility: f64,
    kappa: f64,
    a: f64,
    dt: f64,
    steps: usize,
) -> Vec<f64> {
    let mut x = init.to_vec();
    for _ in 0..steps {
        let lap = laplacian(&x, nx, ny);
        let mu: Vec<f64> = x
            .iter()
            .zip(&lap)
            .map(|(&xv, &l)| double_well_prime(xv, a) - kappa * l)
            .collect();
        let lap_mu = laplacian(&mu, nx, ny);
        for (xv, l) in x.iter_mut().zip(&lap_mu) {
            *xv += dt * mobility * l;
        }
    }
    x
}

/// Free energy by a plain double loop, central differences, periodic wrap.
pub fn free_energy_loop(v: &[f64], nx: usize, ny: usize, kappa: f64, a: f64) -> f64 {
    let mut g = 0.0;
    for n in 0..ny {
        for m in 0..nx {
            let at = |mm: usize, nn: usize| v[nn * nx + mm];
            let gx = (at((m + 1) % nx, n) - at((m + nx - 1) % nx, n)) / 2.0;
            let gy = (at(m, (n + 1) % ny) - at(m, (n + ny - 1) % ny)) / 2.0;
            g += double_well(at(m, n), a) + 0.5 * kappa * (gx * gx + gy * gy);
        }
    }
    g
}

/// Central finite-difference gradient of `f` at `x`.
pub fn central_gradient(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], eps: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + eps;
            let up = f(&probe);
            probe[i] = x[i] - eps;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * eps)
        })
        .collect()
}

/// Largest relative error, with magnitudes below `floor` compared absolutely.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Mean squared difference by explicit loop.
pub fn mse_loop(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - b[i]) * (a[i] - b[i]);
    }
    s / a.len() as f64
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}
