//! Gauss–Hermite quadrature.

use std::f64::consts::PI;

/// Nodes and weights for ∫ e^{-x²} f(x) dx with `n` points.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let pim4 = PI.powf(-0.25);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    let nf = n as f64;
    let mut z = 0.0f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            // orthonormal Hermite recurrence
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// E[f(Z)] for Z ~ N(mean, sd²) by `n`-point Gauss–Hermite.
pub fn normal_expectation(n: usize, mean: f64, sd: f64, f: impl Fn(f64) -> f64) -> f64 {
    let (x, w) = gauss_hermite(n);
    let s2 = std::f64::consts::SQRT_2 * sd;
    x.iter().zip(&w).map(|(&xi, &wi)| wi * f(mean + s2 * xi)).sum::<f64>() / PI.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_sum_to_sqrt_pi() {
        for n in [1, 2, 5, 20, 64, 100] {
            let (_, w) = gauss_hermite(n);
            assert!((w.iter().sum::<f64>() - PI.sqrt()).abs() < 1e-12, "n = {n}");
        }
    }

    #[test]
    fn normal_moments() {
        assert!((normal_expectation(64, 0.0, 2.0, |z| z * z) - 4.0).abs() < 1e-12);
        assert!((normal_expectation(64, 1.0, 1.0, |z| z.powi(4)) - 10.0).abs() < 1e-11);
        // lognormal mean
        let s = 0.3f64;
        assert!((normal_expectation(64, 0.0, s, f64::exp) - (s * s / 2.0).exp()).abs() < 1e-14);
    }
}
