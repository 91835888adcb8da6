//! Scalar numerics: normal distribution functions, log-sum-exp, binomial pmf.

use statrs::function::gamma::ln_gamma;

pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x - LN_SQRT_2PI).exp()
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Upper tail `1 - Φ(x)`, accurate far into the tail.
pub fn normal_sf(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

/// `ln(1 - Φ(x))` without underflow for large `x`.
pub fn ln_normal_sf(x: f64) -> f64 {
    if x < 30.0 {
        normal_sf(x).ln()
    } else {
        // Mills-ratio asymptotic series.
        let x2 = x * x;
        let series = 1.0 - 1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2);
        -0.5 * x2 - LN_SQRT_2PI - x.ln() + series.ln()
    }
}

/// Inverse mills ratio `φ(a) / (1 - Φ(a))`, the mean of a standard normal truncated below at `a`.
pub fn inverse_mills(a: f64) -> f64 {
    (-0.5 * a * a - LN_SQRT_2PI - ln_normal_sf(a)).exp()
}

const ACKLAM_A: [f64; 6] = [
    -3.969_683_028_665_376e1,
    2.209_460_984_245_205e2,
    -2.759_285_104_469_687e2,
    1.383_577_518_672_69e2,
    -3.066_479_806_614_716e1,
    2.506_628_277_459_239,
];
const ACKLAM_B: [f64; 5] = [
    -5.447_609_879_822_406e1,
    1.615_858_368_580_409e2,
    -1.556_989_798_598_866e2,
    6.680_131_188_771_972e1,
    -1.328_068_155_288_572e1,
];
const ACKLAM_C: [f64; 6] = [
    -7.784_894_002_430_293e-3,
    -3.223_964_580_411_365e-1,
    -2.400_758_277_161_838,
    -2.549_732_539_343_734,
    4.374_664_141_464_968,
    2.938_163_982_698_783,
];
const ACKLAM_D: [f64; 4] =
    [7.784_695_709_041_462e-3, 3.224_671_290_700_398e-1, 2.445_134_137_142_996, 3.754_408_661_907_416];

/// Standard normal quantile.
///
/// Acklam's rational approximation (relative error below 1.2e-9) followed by
/// one Halley correction against `erfc`, which brings it to working precision.
pub fn normal_quantile(p: f64) -> f64 {
    if !(0.0..=1.0).contains(&p) {
        return f64::NAN;
    }
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }
    if p > 0.5 {
        return -normal_quantile(1.0 - p);
    }
    const P_LOW: f64 = 0.02425;
    let x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((ACKLAM_C[0] * q + ACKLAM_C[1]) * q + ACKLAM_C[2]) * q + ACKLAM_C[3]) * q + ACKLAM_C[4]) * q + ACKLAM_C[5])
            / ((((ACKLAM_D[0] * q + ACKLAM_D[1]) * q + ACKLAM_D[2]) * q + ACKLAM_D[3]) * q + 1.0)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((ACKLAM_A[0] * r + ACKLAM_A[1]) * r + ACKLAM_A[2]) * r + ACKLAM_A[3]) * r + ACKLAM_A[4]) * r + ACKLAM_A[5])
            * q
            / (((((ACKLAM_B[0] * r + ACKLAM_B[1]) * r + ACKLAM_B[2]) * r + ACKLAM_B[3]) * r + ACKLAM_B[4]) * r + 1.0)
    };
    let e = normal_cdf(x) - p;
    let u = e * (2.0 * std::f64::consts::PI).sqrt() * (0.5 * x * x).exp();
    x - u / (1.0 + 0.5 * x * u)
}

/// Two-sided Wald multiplier: `Φ⁻¹((1 + level) / 2)`.
pub fn wald_z(level: f64) -> f64 {
    normal_quantile(0.5 * (1.0 + level))
}

/// Raw moments `E[Z^k | Z > a]`, `k = 0..=kmax`, of a standard normal truncated below at `a`.
pub fn truncated_normal_moments(a: f64, kmax: usize) -> Vec<f64> {
    let lambda = inverse_mills(a);
    let mut m = Vec::with_capacity(kmax + 1);
    m.push(1.0);
    if kmax >= 1 {
        m.push(lambda);
    }
    for k in 2..=kmax {
        // E[Z^k] = (k-1) E[Z^{k-2}] + a^{k-1} λ
        let v = (k as f64 - 1.0) * m[k - 2] + a.powi(k as i32 - 1) * lambda;
        m.push(v);
    }
    m
}

pub fn log_sum_exp(values: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.into_iter().collect();
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub fn ln_choose(n: u64, k: u64) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// Binomial log-pmf, `-inf` outside the support.
pub fn ln_binomial_pmf(k: u64, n: u64, prob: f64) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    let mut out = ln_choose(n, k);
    if k > 0 {
        out += k as f64 * prob.ln();
    }
    if n > k {
        out += (n - k) as f64 * (1.0 - prob).ln();
    }
    out
}

/// Mean and (population) variance of a weighted set of values.
pub fn weighted_mean_var(values: &[f64], weights: &[f64]) -> (f64, f64) {
    let mean: f64 = values.iter().zip(weights).map(|(v, w)| v * w).sum();
    let var: f64 = values.iter().zip(weights).map(|(v, w)| w * (v - mean) * (v - mean)).sum();
    (mean, var)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_inverts_cdf() {
        for &p in &[1e-15, 1e-10, 1e-4, 0.01, 0.02425, 0.1, 0.3, 0.5, 0.7, 0.975, 0.999_999] {
            let x = normal_quantile(p);
            let back = normal_cdf(x);
            assert!(((back - p) / p).abs() < 1e-9, "p={p} x={x} back={back}");
        }
        assert!((normal_quantile(0.975) - 1.959_963_984_540_054).abs() < 1e-9);
        assert!((wald_z(0.8) - 1.281_551_565_544_600_4).abs() < 1e-9);
    }

    #[test]
    fn mills_ratio_matches_closed_form() {
        // φ(1)/(1-Φ(1)) evaluated independently.
        assert!((inverse_mills(1.0) - 1.525_135_276_160_981).abs() < 1e-12);
        // Far tail: λ(a) ~ a + 1/a.
        let a = 40.0;
        assert!((inverse_mills(a) - (a + 1.0 / a - 2.0 / a.powi(3))).abs() < 1e-5);
    }

    #[test]
    fn truncated_moments_far_below_are_normal_moments() {
        let m = truncated_normal_moments(-40.0, 4);
        assert!((m[1]).abs() < 1e-12);
        assert!((m[2] - 1.0).abs() < 1e-12);
        assert!((m[4] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn truncated_moments_match_quadrature() {
        let a = 0.7;
        let m = truncated_normal_moments(a, 4);
        // trapezoid on [a, a+15]
        let n = 200_000;
        let h = 15.0 / n as f64;
        let mut acc = [0.0; 5];
        for i in 0..=n {
            let z = a + i as f64 * h;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 } * normal_pdf(z) * h;
            for (k, slot) in acc.iter_mut().enumerate() {
                *slot += w * z.powi(k as i32);
            }
        }
        for k in 0..=4 {
            assert!((acc[k] / acc[0] - m[k]).abs() < 1e-7, "k={k}");
        }
    }

    #[test]
    fn lse_is_stable() {
        let v = log_sum_exp([1000.0, 1000.0]);
        assert!((v - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp([f64::NEG_INFINITY]), f64::NEG_INFINITY);
    }

    #[test]
    fn binomial_pmf_sums_to_one() {
        let s: f64 = (0..=16).map(|k| ln_binomial_pmf(k, 16, 0.3).exp()).sum();
        assert!((s - 1.0).abs() < 1e-12);
        assert_eq!(ln_binomial_pmf(17, 16, 0.3), f64::NEG_INFINITY);
    }
}
