#![allow(dead_code)]

use mcem::models::BloodModel;
use mcem::Theta;

/// Root of the blood-type observed score, computed independently in extended precision.
pub const MLE: (f64, f64) = (0.2986091289478045, 0.12798168773835952);

pub fn mle(model: &BloodModel) -> Theta {
    model.theta(MLE.0, MLE.1)
}

pub fn seeds(n: u64) -> Vec<u64> {
    (1..=n).collect()
}

pub fn within(theta: &Theta, target: (f64, f64), tol: f64) -> bool {
    (theta.values[0] - target.0).abs() < tol && (theta.values[1] - target.1).abs() < tol
}

pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Central-difference negative Hessian of a scalar function.
pub fn neg_hessian(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<Vec<f64>> {
    let p = x.len();
    let at = |i: usize, si: f64, j: usize, sj: f64| {
        let mut v = x.to_vec();
        v[i] += si * h;
        v[j] += sj * h;
        f(&v)
    };
    let mut out = vec![vec![0.0; p]; p];
    for i in 0..p {
        for j in 0..p {
            let d =
                (at(i, 1.0, j, 1.0) - at(i, 1.0, j, -1.0) - at(i, -1.0, j, 1.0) + at(i, -1.0, j, -1.0)) / (4.0 * h * h);
            out[i][j] = -d;
        }
    }
    out
}
