//! Chaos coefficients of `δ(x − B_s)`, their Fourier transforms, multiple
//! integrals of indicator tensors on sampled paths, and the Stroock
//! pairing check.
//!
//! With `h̃_n = He_n/√(n!)` orthonormal under `N(0,1)` and `R = R(s)`,
//!
//! ```text
//! a_n^x(R) = R^{-n/2} p_R(x) H_n(x/√R)
//! I_n(1_{[0,s]}^{⊗n}) = n! R^{n/2} H_n(B_s/√R)
//! a_n^x I_n = p_R(x) h̃_n(x/√R) h̃_n(B_s/√R)
//! ```

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma_lr;

use crate::error::{domain, Result};
use crate::gaussian::{variance_fn, PathEnsemble, TimePoint};
use crate::hermite::{hermite_weighted_ln, ln_factorial, normalized_weighted_all, orthonormal_all, HermiteOrder};
use crate::quadrature::GaussLegendreRule;
use crate::rng;

fn check_variance(variance: f64) -> Result<()> {
    if !(variance > 0.0) || !variance.is_finite() {
        return domain(format!(
            "variance must be positive (start time integrals away from s = 0), got {variance}"
        ));
    }
    Ok(())
}

/// `a_n^x(R) = R^{-n/2} p_R(x) H_n(x/√R)`, evaluated in log space.
pub fn delta_coefficient(n: HermiteOrder, x: f64, variance: f64) -> Result<f64> {
    check_variance(variance)?;
    let (sign, ln_abs) = hermite_weighted_ln(n, x / variance.sqrt())?;
    let nf = n.get() as f64;
    let ln = -0.5 * nf * variance.ln() - 0.5 * (2.0 * PI * variance).ln() + ln_abs;
    Ok(sign * ln.exp())
}

/// `e^{-x²R/2} (−i)^n x^n / n!`
pub fn fourier_coefficient(n: HermiteOrder, x: f64, variance: f64) -> Result<Complex64> {
    if !(variance >= 0.0) {
        return domain(format!("variance must be non-negative, got {variance}"));
    }
    let n = n.get();
    let magnitude = if x == 0.0 {
        if n == 0 {
            1.0
        } else {
            0.0
        }
    } else {
        (n as f64 * x.abs().ln() - ln_factorial(n) - 0.5 * x * x * variance).exp()
    };
    let sign = if x < 0.0 && n % 2 == 1 { -1.0 } else { 1.0 };
    let phase = match n % 4 {
        0 => Complex64::new(1.0, 0.0),
        1 => Complex64::new(0.0, -1.0),
        2 => Complex64::new(-1.0, 0.0),
        _ => Complex64::new(0.0, 1.0),
    };
    Ok(phase * (sign * magnitude))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChaosCoefficientSet {
    pub x: f64,
    pub variance: f64,
    pub max_order: usize,
    pub coeffs: Vec<f64>,
}

impl ChaosCoefficientSet {
    pub fn new(x: f64, variance: f64, max_order: usize) -> Result<Self> {
        check_variance(variance)?;
        let table = normalized_weighted_all(max_order, x / variance.sqrt());
        let base = -0.5 * (2.0 * PI * variance).ln();
        let coeffs = table
            .iter()
            .enumerate()
            .map(|(n, h)| {
                if *h == 0.0 {
                    return 0.0;
                }
                let ln = base - 0.5 * n as f64 * variance.ln() - 0.5 * ln_factorial(n) + h.abs().ln();
                h.signum() * ln.exp()
            })
            .collect();
        Ok(Self { x, variance, max_order, coeffs })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourierChaosCoefficientSet {
    pub x: f64,
    pub variance: f64,
    pub max_order: usize,
    pub coeffs: Vec<Complex64>,
}

impl FourierChaosCoefficientSet {
    pub fn new(x: f64, variance: f64, max_order: usize) -> Result<Self> {
        let coeffs = (0..=max_order)
            .map(|n| fourier_coefficient(HermiteOrder::with_ceiling(n, usize::MAX)?, x, variance))
            .collect::<Result<_>>()?;
        Ok(Self { x, variance, max_order, coeffs })
    }

    /// Upper bound on `Σ_{n > max_order} |coeffs[n]|`.
    pub fn tail_bound(&self) -> f64 {
        fourier_tail_bound(self.x, self.variance, self.max_order)
    }
}

/// `Σ_{n > n_max} |x|^n/n! · e^{-x²R/2} = e^{|x| − x²R/2} P(Poisson(|x|) > n_max)`
pub fn fourier_tail_bound(x: f64, variance: f64, n_max: usize) -> f64 {
    let ax = x.abs();
    if ax == 0.0 {
        return 0.0;
    }
    (ax - 0.5 * x * x * variance).exp() * gamma_lr(n_max as f64 + 1.0, ax)
}

/// Smallest order whose Fourier-coefficient tail is below `tol`.
pub fn auto_order(x: f64, variance: f64, tol: f64, ceiling: usize) -> Result<usize> {
    (0..=ceiling)
        .find(|&n| fourier_tail_bound(x, variance, n) < tol)
        .ok_or(crate::Error::Capacity { order: ceiling + 1, ceiling })
}

/// `I_n(1_{[0,s]}^{⊗n})` given `B_s` and `R(s)`: `R^{n/2} He_n(B_s/√R)`.
pub fn multiple_integral_indicator(n: usize, b: f64, variance: f64) -> f64 {
    match n {
        0 => return 1.0,
        1 => return b,
        _ if variance == 0.0 => return 0.0,
        _ => {}
    }
    let z = b / variance.sqrt();
    let h = orthonormal_all(n, z)[n];
    let ln = 0.5 * n as f64 * variance.ln() + 0.5 * ln_factorial(n);
    h * ln.exp()
}

pub fn multiple_integral_on_path(
    n: HermiteOrder,
    s: &TimePoint,
    ensemble: &PathEnsemble,
    path: usize,
    component: usize,
) -> Result<f64> {
    let g = ensemble.grid_index(s)?;
    let r = variance_fn(&ensemble.spec, component, s)?;
    Ok(multiple_integral_indicator(n.get(), ensemble.value(path, component, g), r))
}

/// Per-order terms `a_n^x I_n` of the delta series for a given `B_s`.
pub fn delta_series_terms(x: f64, b: f64, variance: f64, n_max: usize) -> Result<Vec<f64>> {
    check_variance(variance)?;
    let sd = variance.sqrt();
    // p_R(x) h̃_n(x/√R) = (2πR)^{-1/2} ĥ_n(x/√R), bounded in n
    let hx = normalized_weighted_all(n_max, x / sd);
    let hb = orthonormal_all(n_max, b / sd);
    let norm = (2.0 * PI * variance).sqrt().recip();
    Ok(hx.iter().zip(&hb).map(|(a, b)| norm * a * b).collect())
}

pub fn delta_series_eval(
    x: f64,
    s: &TimePoint,
    ensemble: &PathEnsemble,
    path: usize,
    component: usize,
    n_max: usize,
) -> Result<f64> {
    let g = ensemble.grid_index(s)?;
    let r = variance_fn(&ensemble.spec, component, s)?;
    Ok(delta_series_terms(x, ensemble.value(path, component, g), r, n_max)?.iter().sum())
}

/// Test functions whose Gaussian pairings have independent quadrature oracles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestFunction {
    /// Normal density with the given mean and standard deviation.
    GaussianBump { center: f64, width: f64 },
    /// `(Σ c_k y^k) · bump` with `y` the bump's own coordinate.
    PolyBump { coeffs: Vec<f64>, center: f64, width: f64 },
}

impl TestFunction {
    pub fn standard_gaussian() -> Self {
        Self::GaussianBump { center: 0.0, width: 1.0 }
    }

    fn center_width(&self) -> (f64, f64) {
        match self {
            Self::GaussianBump { center, width } | Self::PolyBump { center, width, .. } => (*center, *width),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let (c, w) = self.center_width();
        let y = (x - c) / w;
        let bump = (-0.5 * y * y).exp() / (w * (2.0 * PI).sqrt());
        match self {
            Self::GaussianBump { .. } => bump,
            Self::PolyBump { coeffs, .. } => coeffs.iter().rev().fold(0.0, |acc, c| acc * y + c) * bump,
        }
    }

    /// Effective support, truncated at ten widths.
    pub fn support(&self) -> (f64, f64) {
        let (c, w) = self.center_width();
        (c - 10.0 * w, c + 10.0 * w)
    }
}

/// Chaos coefficients `b_n = ∫ φ(x) p_{σ²}(x) h̃_n(x/σ) dx` of `φ(σZ)`.
pub fn pairing_coefficients(phi: &TestFunction, sigma: f64, n_max: usize) -> Vec<f64> {
    let (lo, hi) = phi.support();
    let (lo, hi) = (lo.max(-40.0 * sigma), hi.min(40.0 * sigma));
    let rule = GaussLegendreRule::new(20);
    let panels = 200;
    let h = (hi - lo) / panels as f64;
    let norm = (2.0 * PI).sqrt().recip() / sigma;
    let mut out = vec![0.0; n_max + 1];
    for k in 0..panels {
        let a = lo + h * k as f64;
        for (x, w) in rule.mapped(a, a + h) {
            let f = phi.eval(x) * norm * w;
            for (o, v) in out.iter_mut().zip(normalized_weighted_all(n_max, x / sigma)) {
                *o += f * v;
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairingReport {
    pub n_max: usize,
    pub n_paths: usize,
    pub seed: u64,
    pub gap_estimate: f64,
    pub gap_stderr: f64,
    pub per_order_contributions: Vec<f64>,
    /// `∫φ(x) f_trunc(x) dx`, the mean of the truncated expansion
    pub pairing_mean: f64,
    /// Monte Carlo mean of `φ(W(h))`
    pub sample_mean: f64,
    pub insufficient_samples: bool,
}

/// Minimum sample count for a gap estimate the report will vouch for.
pub const MIN_PAIRING_PATHS: usize = 1000;

/// L²(Ω) distance between `∏ φ_k(W_k)` and its chaos truncation at order
/// `n_max` per component, with `W_k ~ N(0, variance)` independent.
pub fn stroock_pairing_test(
    phis: &[TestFunction],
    variance: f64,
    n_max: usize,
    n_paths: usize,
    seed: u64,
) -> Result<PairingReport> {
    check_variance(variance)?;
    if phis.is_empty() {
        return domain("at least one test function is required");
    }
    let sigma = variance.sqrt();
    let coeffs: Vec<Vec<f64>> = phis.iter().map(|phi| pairing_coefficients(phi, sigma, n_max)).collect();

    // per-order energy of the tensorized expansion
    let mut energy = vec![1.0];
    for b in &coeffs {
        let mut next = vec![0.0; energy.len() + n_max];
        for (i, e) in energy.iter().enumerate() {
            for (j, c) in b.iter().enumerate() {
                next[i + j] += e * c * c;
            }
        }
        energy = next;
    }

    let samples: Vec<(f64, f64)> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut exact = 1.0;
            let mut trunc = 1.0;
            for (k, (phi, b)) in phis.iter().zip(&coeffs).enumerate() {
                let z = rng::normal(&mut rng::stream(seed, k, p as u64));
                exact *= phi.eval(sigma * z);
                trunc *= orthonormal_all(n_max, z).iter().zip(b).map(|(h, c)| h * c).sum::<f64>();
            }
            ((exact - trunc).powi(2), exact)
        })
        .collect();
    let n = n_paths.max(1) as f64;
    let mean_sq = samples.iter().map(|s| s.0).sum::<f64>() / n;
    let var_sq = samples.iter().map(|s| (s.0 - mean_sq).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let gap = mean_sq.sqrt();
    let gap_stderr = if gap > 0.0 { (var_sq / n).sqrt() / (2.0 * gap) } else { 0.0 };
    Ok(PairingReport {
        n_max,
        n_paths,
        seed,
        gap_estimate: gap,
        gap_stderr,
        per_order_contributions: energy,
        pairing_mean: coeffs.iter().map(|b| b[0]).product(),
        sample_mean: samples.iter().map(|s| s.1).sum::<f64>() / n,
        insufficient_samples: n_paths < MIN_PAIRING_PATHS,
    })
}
