//! Hermite polynomials in the `1/n!` normalization
//!
//! `H_n(x) = ((-1)^n / n!) e^{x²/2} (d/dx)^n e^{-x²/2}`, i.e. the monic
//! probabilists' polynomial `He_n` divided by `n!`. Everything downstream
//! (chaos coefficients, multiple integrals, Watanabe terms) assumes this
//! convention, so it is fixed here once.
//!
//! High orders are evaluated through the *normalized weighted* sequence
//! `ĥ_n(y) = √(n!) H_n(y) e^{-y²/2}`, which is bounded uniformly in `n`
//! and satisfies `ĥ_{n+1} = (y ĥ_n − √n ĥ_{n−1}) / √(n+1)`.

use std::f64::consts::PI;

use statrs::function::gamma::ln_gamma;

use crate::error::{domain, Error, Result};

/// Default ceiling on chaos orders; bounds precomputed tables.
pub const DEFAULT_ORDER_CEILING: usize = 2000;

/// Rescale the running pair once magnitudes leave `[1/BIG, BIG]`.
const BIG: f64 = 1e150;

/// Chaos order `n`, checked against a table ceiling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct HermiteOrder(usize);

impl HermiteOrder {
    pub fn new(n: usize) -> Result<Self> {
        Self::with_ceiling(n, DEFAULT_ORDER_CEILING)
    }

    pub fn with_ceiling(n: usize, ceiling: usize) -> Result<Self> {
        if n > ceiling {
            return Err(Error::Capacity { order: n, ceiling });
        }
        Ok(Self(n))
    }

    pub fn get(self) -> usize {
        self.0
    }
}

/// Variance and dimension of the product kernel `p_s^d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussKernelParams {
    variance: f64,
    dimension: usize,
}

impl GaussKernelParams {
    pub fn new(variance: f64, dimension: usize) -> Result<Self> {
        if !(variance > 0.0) || !variance.is_finite() {
            return domain(format!("kernel variance must be positive, got {variance}"));
        }
        if dimension == 0 {
            return domain("kernel dimension must be at least 1");
        }
        Ok(Self { variance, dimension })
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }
}

/// Runs a three-term recurrence with a separate log-scale so neither
/// overflow nor underflow of intermediate terms is possible.
/// `step(k, cur, prev)` returns the term of order `k + 1`.
/// Returns `(value, ln_scale)` with the true term equal to `value·e^{ln_scale}`.
fn scaled_recurrence(
    n: usize,
    first: f64,
    second: f64,
    mut ln_scale: f64,
    step: impl Fn(usize, f64, f64) -> f64,
) -> (f64, f64) {
    if n == 0 {
        return (first, ln_scale);
    }
    let (mut prev, mut cur) = (first, second);
    for k in 1..n {
        let next = step(k, cur, prev);
        prev = cur;
        cur = next;
        let m = cur.abs().max(prev.abs());
        if m > BIG || (m < 1.0 / BIG && m > 0.0) {
            let ln_m = m.ln();
            prev /= m;
            cur /= m;
            ln_scale += ln_m;
        }
    }
    (cur, ln_scale)
}

fn check_finite(x: f64) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        domain(format!("Hermite argument must be finite, got {x}"))
    }
}

/// `H_n(x)` in the `1/n!` normalization, via `(n+1)H_{n+1} = x H_n − H_{n−1}`.
pub fn hermite_eval(n: HermiteOrder, x: f64) -> Result<f64> {
    check_finite(x)?;
    let (v, s) = scaled_recurrence(n.get(), 1.0, x, 0.0, |k, cur, prev| {
        (x * cur - prev) / (k as f64 + 1.0)
    });
    Ok(v * s.exp())
}

/// `H_n(y) e^{-y²/2}`, never forming the raw polynomial.
pub fn hermite_weighted(n: HermiteOrder, y: f64) -> Result<f64> {
    let (sign, ln_abs) = hermite_weighted_ln(n, y)?;
    Ok(sign * ln_abs.exp())
}

/// Sign and natural log of `|H_n(y) e^{-y²/2}|`. The log is `-∞` at zeros.
pub fn hermite_weighted_ln(n: HermiteOrder, y: f64) -> Result<(f64, f64)> {
    check_finite(y)?;
    let (v, s) = scaled_recurrence(n.get(), 1.0, y, -0.5 * y * y, |k, cur, prev| {
        let k = k as f64;
        (y * cur - k.sqrt() * prev) / (k + 1.0).sqrt()
    });
    let ln_abs = v.abs().ln() + s - 0.5 * ln_factorial(n.get());
    Ok((if v < 0.0 { -1.0 } else { 1.0 }, ln_abs))
}

/// Normalized weighted Hermite functions `ĥ_k(y) = √(k!) H_k(y) e^{-y²/2}`
/// for every `k ≤ n_max` in one sweep. Values are bounded by about 1.
pub fn normalized_weighted_all(n_max: usize, y: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n_max + 1);
    normalized_weighted_into(n_max, y, &mut out);
    out
}

/// Same as [`normalized_weighted_all`], reusing the caller's buffer.
pub fn normalized_weighted_into(n_max: usize, y: f64, out: &mut Vec<f64>) {
    out.clear();
    let half_sq = 0.5 * y * y;
    // e^{-y²/2} underflows past |y|≈38; the sequence can only grow from
    // there by a polynomial factor, so carrying the scale is only needed
    // for the start value.
    if half_sq > 700.0 {
        let mut ln_scale = -half_sq;
        let (mut prev, mut cur) = (1.0, y);
        out.push(0.0);
        if n_max >= 1 {
            out.push((y.abs().ln() + ln_scale).exp() * y.signum());
        }
        for k in 1..n_max {
            let kf = k as f64;
            let next = (y * cur - kf.sqrt() * prev) / (kf + 1.0).sqrt();
            prev = cur;
            cur = next;
            let m = cur.abs().max(prev.abs());
            if m > BIG {
                prev /= m;
                cur /= m;
                ln_scale += m.ln();
            }
            out.push(cur * ln_scale.exp());
        }
        return;
    }
    let w = (-half_sq).exp();
    out.push(w);
    if n_max == 0 {
        return;
    }
    out.push(y * w);
    for k in 1..n_max {
        let kf = k as f64;
        let next = (y * out[k] - kf.sqrt() * out[k - 1]) / (kf + 1.0).sqrt();
        out.push(next);
    }
}

/// Orthonormal (under `N(0,1)`) Hermite values `He_k(z)/√(k!)` for all `k ≤ n_max`.
pub fn orthonormal_all(n_max: usize, z: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n_max + 1);
    out.push(1.0);
    if n_max == 0 {
        return out;
    }
    out.push(z);
    for k in 1..n_max {
        let kf = k as f64;
        let next = (z * out[k] - kf.sqrt() * out[k - 1]) / (kf + 1.0).sqrt();
        out.push(next);
    }
    out
}

pub fn ln_factorial(n: usize) -> f64 {
    ln_gamma(n as f64 + 1.0)
}

/// `ln c_n` with `c_n = 2^{n/2}·(2/(n!π))·Γ((n+1)/2)`.
pub fn ln_cn_bound(n: HermiteOrder) -> f64 {
    let nf = n.get() as f64;
    0.5 * nf * 2f64.ln() + (2.0 / PI).ln() - ln_factorial(n.get()) + ln_gamma(0.5 * (nf + 1.0))
}

/// Uniform bound `c_n ≥ sup_y |H_n(y) e^{-y²/2}|`.
pub fn cn_bound(n: HermiteOrder) -> f64 {
    ln_cn_bound(n).exp()
}

/// Product Gaussian kernel `∏ (2π s)^{-1/2} exp(-x_i²/(2s))`.
pub fn gauss_kernel(params: &GaussKernelParams, x: &[f64]) -> Result<f64> {
    if x.len() != params.dimension {
        return domain(format!(
            "point has {} coordinates, kernel dimension is {}",
            x.len(),
            params.dimension
        ));
    }
    let s = params.variance;
    let sq: f64 = x.iter().map(|xi| xi * xi).sum();
    Ok((2.0 * PI * s).powf(-0.5 * params.dimension as f64) * (-sq / (2.0 * s)).exp())
}

/// One-dimensional `p_s(x)` used as a test oracle.
#[cfg(test)]
#[inline]
pub(crate) fn p(s: f64, x: f64) -> f64 {
    (-x * x / (2.0 * s)).exp() / (2.0 * PI * s).sqrt()
}
