//! Watanabe-space norms `Σ (k+1)^β ‖J_k F‖²` of the local time density and
//! the current, with power-law classification of the term sequence.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::gaussian::fbm_covariance;
use crate::hermite::{ln_cn_bound, ln_factorial, normalized_weighted_all, HermiteOrder};
use crate::quadrature::{integrate_singular_rect, GaussLegendreRule, QuadratureScheme, Rect};

pub const DEFAULT_SERIES_ORDER: usize = 2000;
/// Required margin of the fitted exponent away from −1.
pub const SLOPE_MARGIN: f64 = 0.02;
pub const MIN_R_SQUARED: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SeriesVerdict {
    Convergent,
    Divergent,
    Inconclusive,
}

/// Least-squares fit of `ln t_n` against `ln n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n_lo: usize,
    pub n_hi: usize,
}

pub fn fit_power_law(points: &[(f64, f64)]) -> Option<(f64, f64, f64)> {
    let pts: Vec<(f64, f64)> =
        points.iter().filter(|(n, t)| *n > 0.0 && *t > 0.0).map(|(n, t)| (n.ln(), t.ln())).collect();
    if pts.len() < 3 {
        return None;
    }
    let m = pts.len() as f64;
    let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / m, pts.iter().map(|p| p.1).sum::<f64>() / m);
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some((slope, my - slope * mx, r2))
}

/// Fit over orders `[n_max/10, n_max]` on adjacent-pair averages, which
/// cancels the parity oscillation of Hermite values.
pub fn fit_last_decade(terms: &[f64]) -> Option<PowerFit> {
    if terms.len() < 21 {
        return None;
    }
    let n_hi = terms.len() - 1;
    let n_lo = (n_hi / 10).max(1);
    let points: Vec<(f64, f64)> = (n_lo..n_hi).map(|n| (n as f64 + 0.5, 0.5 * (terms[n] + terms[n + 1]))).collect();
    fit_power_law(&points).map(|(slope, intercept, r_squared)| PowerFit { slope, intercept, r_squared, n_lo, n_hi })
}

pub fn classify_fit(fit: Option<&PowerFit>) -> SeriesVerdict {
    match fit {
        Some(f) if f.r_squared > MIN_R_SQUARED && f.slope < -1.0 - SLOPE_MARGIN => SeriesVerdict::Convergent,
        Some(f) if f.r_squared > MIN_R_SQUARED && f.slope > -1.0 + SLOPE_MARGIN => SeriesVerdict::Divergent,
        _ => SeriesVerdict::Inconclusive,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WatanabeSeries {
    /// Exponent as passed by the caller.
    pub alpha: f64,
    /// Weight exponent actually applied: term `n` carries `(n + offset + 1)^β`.
    pub beta: f64,
    /// Chaos order of term `n` minus `n`.
    pub order_offset: usize,
    pub terms: Vec<f64>,
    pub partial_sums: Vec<f64>,
    pub classification: SeriesVerdict,
    pub fitted_decay_exponent: Option<f64>,
    pub fit: Option<PowerFit>,
}

impl WatanabeSeries {
    /// Weights `(n + offset + 1)^β` applied to unweighted chaos norms.
    pub fn from_chaos_norms(alpha: f64, beta: f64, order_offset: usize, norms: &[f64]) -> Self {
        let terms: Vec<f64> = norms
            .iter()
            .enumerate()
            .map(|(n, v)| ((n + order_offset + 1) as f64).powf(beta) * v.max(0.0))
            .collect();
        let partial_sums = terms
            .iter()
            .scan(0.0, |acc, t| {
                *acc += t;
                Some(*acc)
            })
            .collect();
        let fit = fit_last_decade(&terms);
        Self {
            alpha,
            beta,
            order_offset,
            classification: classify_fit(fit.as_ref()),
            fitted_decay_exponent: fit.map(|f| f.slope),
            fit,
            terms,
            partial_sums,
        }
    }

    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        out.write_all(b"n,t_n,partial_sum\n")?;
        for (n, (t, s)) in self.terms.iter().zip(&self.partial_sums).enumerate() {
            writeln!(out, "{n},{t:e},{s:e}")?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(&mut f)?;
        f.flush()?;
        Ok(())
    }
}

fn check_order(n_max: usize) -> Result<()> {
    HermiteOrder::new(n_max)?;
    if n_max < 20 {
        return domain(format!("series classification needs at least 20 orders, got {n_max}"));
    }
    Ok(())
}

/// `n!·a_n(s)²·s^n = p_s(x)² He_n(y)²/n!` with `y = x/√s`, for all `n`.
fn delta_chaos_norms(x: f64, s: f64, n_max: usize) -> Vec<f64> {
    let y = x / s.sqrt();
    normalized_weighted_all(n_max, y).into_iter().map(|h| h * h / (2.0 * PI * s)).collect()
}

/// Norm of `δ(x − B_s)` in the space of order `−α`: weights `(n+1)^{−α}`.
/// Convergent iff `α > 1/2`.
pub fn watanabe_delta_norm(x: f64, s: f64, alpha: f64, n_max: usize) -> Result<WatanabeSeries> {
    if !(s > 0.0) {
        return domain(format!("time must be positive, got {s}"));
    }
    check_order(n_max)?;
    Ok(WatanabeSeries::from_chaos_norms(alpha, -alpha, 0, &delta_chaos_norms(x, s, n_max)))
}

/// Chaos norms of `∫_a^T δ(x − B_s) dB_s`: order `n+1` carries
/// `∫_a^T p_s(x)² He_n(x/√s)²/n! ds`.
pub fn current_bm_chaos_norms(x: f64, a: f64, horizon: f64, n_max: usize) -> Vec<f64> {
    // s = u^{-2} makes the Hermite phase linear in u
    let (u_lo, u_hi) = (horizon.powf(-0.5), a.powf(-0.5));
    let phase = (2.0 * n_max as f64).sqrt() * x.abs() * (u_hi - u_lo);
    let panels = phase.ceil() as usize + 8;
    let rule = GaussLegendreRule::new(16);
    let h = (u_hi - u_lo) / panels as f64;
    let per_panel: Vec<Vec<f64>> = (0..panels)
        .into_par_iter()
        .map(|p| {
            let mut acc = vec![0.0; n_max + 1];
            let lo = u_lo + h * p as f64;
            for (u, w) in rule.mapped(lo, lo + h) {
                let s = u.powi(-2);
                let jac = 2.0 * u.powi(-3);
                for (a, v) in acc.iter_mut().zip(delta_chaos_norms(x, s, n_max)) {
                    *a += w * jac * v;
                }
            }
            acc
        })
        .collect();
    // fixed summation order keeps results independent of the worker count
    let mut total = vec![0.0; n_max + 1];
    for acc in per_panel {
        total.iter_mut().zip(acc).for_each(|(t, a)| *t += a);
    }
    total
}

/// `Σ (n+2)^α ‖J_{n+1} ξ(x)‖²` for a Brownian driver, time integral over
/// `[a, T]`. Convergent iff `α < −1/2`.
pub fn watanabe_current_bm(x: f64, a: f64, horizon: f64, alpha: f64, n_max: usize) -> Result<WatanabeSeries> {
    if !(a > 0.0) {
        return domain(format!(
            "lower time limit must be positive (the integrand is singular at s = 0), got {a}"
        ));
    }
    if !(horizon > a) {
        return domain("horizon must exceed the lower time limit");
    }
    check_order(n_max)?;
    Ok(WatanabeSeries::from_chaos_norms(alpha, alpha, 1, &current_bm_chaos_norms(x, a, horizon, n_max)))
}

/// `R(1, z)` from `z` and `1 − z`, with a series near `z = 0`.
fn cov_one(hurst: f64, z: f64, one_minus_z: f64) -> f64 {
    let h2 = 2.0 * hurst;
    if z < 1e-4 {
        0.5 * z.powf(h2) + hurst * z - 0.5 * hurst * (h2 - 1.0) * z * z
    } else {
        0.5 * (1.0 + z.powf(h2) - one_minus_z.powf(h2))
    }
}

/// `∫_0^1 f(t, 1−t) dt` on panels graded geometrically toward both ends;
/// the innermost pieces are closed with `t^γ` power tails.
fn graded_unit(gamma_lo: f64, gamma_hi: f64, f: impl Fn(f64, f64) -> f64) -> f64 {
    const DEPTH: i32 = 60;
    let rule = GaussLegendreRule::new(16);
    let mut total = 0.0;
    for k in 0..DEPTH {
        let (a, b) = (0.5 * 0.5f64.powi(k + 1), 0.5 * 0.5f64.powi(k));
        for (t, w) in rule.mapped(a, b) {
            total += w * (f(t, 1.0 - t) + f(1.0 - t, t));
        }
    }
    let eps = 0.5 * 0.5f64.powi(DEPTH);
    total += eps * f(eps, 1.0 - eps) / (gamma_lo + 1.0);
    total += eps * f(1.0 - eps, eps) / (gamma_hi + 1.0);
    total
}

fn check_hurst(hurst: f64) -> Result<()> {
    if !(hurst > 0.5 && hurst < 1.0) {
        return domain(format!("Hurst index must lie in (1/2, 1), got {hurst}"));
    }
    Ok(())
}

/// `∫_0^1 R(1,z)^n z^{−Hn} (1−z)^{2H−2} z^{−H} dz`, through `w = (1−z)^{2H−1}`.
pub fn edd_integral(hurst: f64, n: usize, _scheme: &QuadratureScheme) -> Result<f64> {
    check_hurst(hurst)?;
    if n < 1 {
        return domain("order must be at least 1");
    }
    let p = 1.0 / (2.0 * hurst - 1.0);
    let nf = n as f64;
    let gamma_hi = nf * (1.0 - hurst) - hurst;
    let v = graded_unit(0.0, gamma_hi, |w, one_minus_w| {
        // z = 1 − w^p, evaluated without cancellation at both ends
        let ln_w = if w < 0.5 { w.ln() } else { (-one_minus_w).ln_1p() };
        let (z, omz) = (-(p * ln_w).exp_m1(), (p * ln_w).exp());
        if z <= 0.0 {
            return 0.0;
        }
        let ln = nf * cov_one(hurst, z, omz).ln() - hurst * (nf + 1.0) * z.ln();
        ln.exp()
    });
    Ok(p * v)
}

/// `∬_{[0,T]²} R(u,v)^{n−1} (uv)^{−Hn} du dv = 2T^{2−2H}/(2−2H)·∫_0^1 R(1,z)^{n−1} z^{−Hn} dz`.
pub fn offdiag_integral(hurst: f64, n: usize, horizon: f64) -> Result<f64> {
    check_hurst(hurst)?;
    if n < 1 {
        return domain("order must be at least 1");
    }
    let nf = n as f64;
    let gamma_lo = (nf - 1.0) * (1.0 - hurst) - hurst;
    let v = graded_unit(gamma_lo, 0.0, |z, omz| {
        let ln = (nf - 1.0) * cov_one(hurst, z, omz).ln() - hurst * nf * z.ln();
        ln.exp()
    });
    Ok(2.0 * horizon.powf(2.0 - 2.0 * hurst) / (2.0 - 2.0 * hurst) * v)
}

/// `ln(n!·c_n²)`, the uniform bound on `n!·(H_n(y) e^{−y²/2})²`.
pub fn ln_factorial_cn_sq(n: usize) -> f64 {
    ln_factorial(n) + 2.0 * ln_cn_bound(HermiteOrder::with_ceiling(n, usize::MAX).expect("unbounded ceiling"))
}

/// Diagonal part of the order-`(n+1)` norm for a fractional driver,
/// `H(2H−1)/(n+1)·∬ a_n(u) a_n(v) R(u,v)^n |u−v|^{2H−2} du dv`, by quadrature.
pub fn watanabe_current_fbm_a(n: usize, hurst: f64, x: f64, horizon: f64, scheme: &QuadratureScheme) -> Result<f64> {
    Ok((fbm_a_scaled(n, hurst, x, horizon, scheme)? - ln_factorial(n + 1)).exp())
}

/// `ln((n+1)!·A(n))`, avoiding the factorial underflow.
pub fn fbm_a_scaled(n: usize, hurst: f64, x: f64, horizon: f64, scheme: &QuadratureScheme) -> Result<f64> {
    check_hurst(hurst)?;
    HermiteOrder::new(n)?;
    if !(horizon > 0.0) {
        return domain("horizon must be positive");
    }
    let nf = n as f64;
    // n!·a_n(u)a_n(v)R^n = (uv)^{−H} ĥ_n(y_u) ĥ_n(y_v) ρ^n / 2π
    let f = |u: f64, v: f64| {
        let (su, sv) = (u.powf(hurst), v.powf(hurst));
        let rho = (fbm_covariance(hurst, u, v) / (su * sv)).min(1.0);
        let hu = *normalized_weighted_all(n, x / su).last().unwrap();
        let hv = *normalized_weighted_all(n, x / sv).last().unwrap();
        hu * hv * rho.powf(nf) / (2.0 * PI * su * sv)
    };
    let v = integrate_singular_rect(Rect::square(0.0, horizon), 2.0 * hurst - 2.0, &f, scheme);
    Ok((hurst * (2.0 * hurst - 1.0) * v).ln())
}

/// Off-diagonal part bounded through `|H_n e^{−y²/2}| ≤ c_n`:
/// `n/(n+1)·c_n²·∬ R^{n−1}(uv)^{−Hn}`. Zero at `n = 0`. Independent of `x`.
pub fn watanabe_current_fbm_b(n: usize, hurst: f64, _x: f64, horizon: f64, _scheme: &QuadratureScheme) -> Result<f64> {
    check_hurst(hurst)?;
    if n == 0 {
        return Ok(0.0);
    }
    let l = offdiag_integral(hurst, n, horizon)?;
    let nf = n as f64;
    Ok(nf / (nf + 1.0) * (2.0 * ln_cn_bound(HermiteOrder::new(n)?)).exp() * l)
}

/// Majorant of `(n+1)!(A(n) + B(n))`: the off-diagonal bound plus the
/// diagonal envelope `H(2H−1)·n!c_n²·edd(n)`.
pub fn fbm_majorant_norm(n: usize, hurst: f64, horizon: f64, scheme: &QuadratureScheme) -> Result<f64> {
    let ln_fc = ln_factorial_cn_sq(n);
    let b = if n == 0 { 0.0 } else { n as f64 * offdiag_integral(hurst, n, horizon)? };
    let a = hurst * (2.0 * hurst - 1.0) * edd_integral(hurst, n.max(1), scheme)?;
    Ok(ln_fc.exp() * (a + b))
}

/// `Σ (n+2)^α (n+1)!(A(n) + B(n))` through the majorant; Convergent iff
/// `−α > 3/2 − 1/(2H)`.
pub fn watanabe_current_fbm(_x: f64, hurst: f64, horizon: f64, alpha: f64, n_max: usize) -> Result<WatanabeSeries> {
    check_hurst(hurst)?;
    check_order(n_max)?;
    let scheme = QuadratureScheme::default();
    let norms: Vec<f64> =
        (0..=n_max).into_par_iter().map(|n| fbm_majorant_norm(n, hurst, horizon, &scheme)).collect::<Result<_>>()?;
    Ok(WatanabeSeries::from_chaos_norms(alpha, alpha, 1, &norms))
}

pub fn fbm_alpha_threshold(hurst: f64) -> f64 {
    1.5 - 1.0 / (2.0 * hurst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::SingularityPolicy;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    /// Double-exponential quadrature on `(0, 1)`, tolerant of endpoint singularities.
    fn tanh_sinh(f: impl Fn(f64, f64) -> f64) -> f64 {
        let h = 1.0 / 64.0;
        let mut total = 0.0;
        for k in -256..=256 {
            let t = k as f64 * h;
            let s = 0.5 * PI * t.sinh();
            // z = (1 + tanh s)/2, 1 − z = (1 − tanh s)/2 computed from e^{-2|s|}
            let e = (-2.0 * s.abs()).exp();
            let small = e / (1.0 + e);
            let (z, omz) = if s >= 0.0 { (1.0 - small, small) } else { (small, 1.0 - small) };
            let dz = 0.5 * PI * t.cosh() * 2.0 * small * (1.0 - small);
            if z > 0.0 && omz > 0.0 {
                total += h * dz * f(z, omz);
            }
        }
        total
    }

    fn slope_over(f: impl Fn(usize) -> f64, ns: impl Iterator<Item = usize>) -> f64 {
        let pts: Vec<(f64, f64)> = ns.map(|n| (n as f64, f(n))).collect();
        fit_power_law(&pts).unwrap().0
    }

    #[test]
    fn delta_norm_threshold() {
        assert_eq!(watanabe_delta_norm(1.0, 1.0, 0.6, 2000).unwrap().classification, SeriesVerdict::Convergent);
        assert_eq!(watanabe_delta_norm(1.0, 1.0, 0.4, 2000).unwrap().classification, SeriesVerdict::Divergent);
        assert!(watanabe_delta_norm(1.0, 0.0, 0.6, 100).is_err());
    }

    #[test]
    fn delta_norm_odd_terms_vanish_at_origin() {
        let w = watanabe_delta_norm(0.0, 1.0, 0.6, 50).unwrap();
        for n in (1..=50).step_by(2) {
            assert_eq!(w.terms[n], 0.0);
        }
        assert!(w.terms[2] > 0.0);
    }

    #[test]
    fn delta_norm_terms_match_coefficients() {
        // n!·a_n² s^n from the chaos coefficients directly
        let (x, s, alpha) = (0.8f64, 1.7f64, 0.6f64);
        let w = watanabe_delta_norm(x, s, alpha, 30).unwrap();
        for n in 0..=30 {
            let a = crate::chaos::delta_coefficient(HermiteOrder::new(n).unwrap(), x, s).unwrap();
            let direct = ((n + 1) as f64).powf(-alpha) * (ln_factorial(n).exp()) * a * a * s.powi(n as i32);
            assert_relative_eq!(w.terms[n], direct, max_relative = 1e-9, epsilon = 1e-300);
        }
    }

    #[test]
    fn sign_convention_wrapper_matches_canonical() {
        let (x, s) = (1.0, 1.0);
        for alpha in [0.3, 0.6, 1.2] {
            let w = watanabe_delta_norm(x, s, alpha, 100).unwrap();
            let canon = WatanabeSeries::from_chaos_norms(alpha, -alpha, 0, &delta_chaos_norms(x, s, 100));
            assert_eq!(w.terms, canon.terms);
            assert_eq!(w.beta, -alpha);
        }
    }

    #[test]
    fn delta_classification_monotone_in_alpha() {
        let mut seen_convergent = false;
        for k in 0..12 {
            let alpha = 0.1 * k as f64;
            let v = watanabe_delta_norm(1.0, 1.0, alpha, 1000).unwrap().classification;
            assert!(!(seen_convergent && v == SeriesVerdict::Divergent), "alpha={alpha}");
            seen_convergent |= v == SeriesVerdict::Convergent;
        }
        assert!(seen_convergent);
    }

    #[test]
    fn brownian_current_threshold() {
        let c = watanabe_current_bm(1.0, 0.1, 1.0, -0.6, 2000).unwrap();
        assert_eq!(c.classification, SeriesVerdict::Convergent);
        let d = watanabe_current_bm(1.0, 0.1, 1.0, -0.3, 2000).unwrap();
        assert_eq!(d.classification, SeriesVerdict::Divergent);
        assert!(watanabe_current_bm(1.0, 0.0, 1.0, -0.6, 100).is_err());
    }

    #[test]
    fn brownian_current_terms_scale_like_inverse_root() {
        let alpha = -0.6;
        let c = watanabe_current_bm(1.0, 0.1, 1.0, alpha, 2000).unwrap();
        let unweighted = |n: usize| c.terms[n] * ((n + 2) as f64).powf(-alpha);
        let slope = slope_over(unweighted, 200..=2000);
        assert!((slope + 0.5).abs() <= 0.02, "slope {slope}");
        // adjacent-pair averages remove the parity oscillation
        let scaled: Vec<f64> =
            (200..2000).map(|n| 0.5 * (unweighted(n) + unweighted(n + 1)) * (n as f64 + 0.5).sqrt()).collect();
        let (lo, hi) = scaled.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        assert!(hi / lo < 1.1, "spread {}", hi / lo);
    }

    #[test]
    fn brownian_current_zeroth_norm_matches_closed_form() {
        // ∫_a^T p_s(x)² ds = ∫ e^{-x²/s}/(2πs) ds
        let (x, a, t) = (1.0f64, 0.1f64, 1.0f64);
        let rule = GaussLegendreRule::new(20);
        let oracle = rule.composite(a, t, 20, |s| (-x * x / s).exp() / (2.0 * PI * s));
        let norms = current_bm_chaos_norms(x, a, t, 30);
        assert_relative_eq!(norms[0], oracle, max_relative = 1e-10);
    }

    #[test]
    fn stirling_decay_of_cn() {
        let slope = slope_over(|n| ln_factorial_cn_sq(n).exp(), 100..=1000);
        assert!((slope + 0.5).abs() <= 0.02, "slope {slope}");
        let s: Vec<f64> = (200..=400).map(|n| ln_factorial_cn_sq(n).exp() * (n as f64).sqrt()).collect();
        let (lo, hi) = s.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        assert!(hi / lo - 1.0 < 0.01);
    }

    #[test]
    fn edd_matches_double_exponential_oracle() {
        let h = 0.75f64;
        let v = edd_integral(h, 1, &QuadratureScheme::default()).unwrap();
        let oracle = tanh_sinh(|z, omz| cov_one(h, z, omz) * z.powf(-2.0 * h) * omz.powf(2.0 * h - 2.0));
        assert!(v > 0.0 && v.is_finite());
        assert_relative_eq!(v, oracle, max_relative = 1e-8);
    }

    #[test]
    fn edd_non_increasing_in_order() {
        for h in [0.6, 0.75, 0.9] {
            let vals: Vec<f64> = (2..=300).map(|n| edd_integral(h, n, &QuadratureScheme::default()).unwrap()).collect();
            assert!(vals.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)), "H={h}");
        }
    }

    #[test]
    fn edd_decays_at_laplace_rate() {
        // near z = 1 the base is 1 − ε^{2H}/2, against the (1−z)^{2H−2} weight
        for h in [0.6, 0.75, 0.9] {
            let slope = slope_over(|n| edd_integral(h, n, &QuadratureScheme::default()).unwrap(), (1000..=10000).step_by(100));
            let expected = 1.0 / (2.0 * h) - 1.0;
            assert!((slope - expected).abs() < 0.05, "H={h}: {slope} vs {expected}");
        }
    }

    #[test]
    fn offdiag_first_order_closed_form() {
        let (h, t) = (0.7f64, 1.6f64);
        let v = offdiag_integral(h, 1, t).unwrap();
        assert_relative_eq!(v, (t.powf(1.0 - h) / (1.0 - h)).powi(2), max_relative = 1e-10);
    }

    #[test]
    fn offdiag_matches_double_exponential_oracle() {
        let (h, n) = (0.75f64, 7usize);
        let oracle = 2.0 / (2.0 - 2.0 * h)
            * tanh_sinh(|z, omz| (cov_one(h, z, omz).ln() * (n as f64 - 1.0) - h * n as f64 * z.ln()).exp());
        assert_relative_eq!(offdiag_integral(h, n, 1.0).unwrap(), oracle, max_relative = 1e-8);
    }

    #[test]
    fn offdiag_decay_exponent() {
        for (h, lo, hi, step) in [(0.6, 20, 200, 1), (0.75, 20, 200, 1), (0.9, 200, 2000, 10)] {
            let slope = slope_over(|n| offdiag_integral(h, n, 1.0).unwrap(), (lo..=hi).step_by(step));
            assert!((slope + 1.0 / (2.0 * h)).abs() <= 0.1, "H={h}: {slope}");
        }
    }

    #[test]
    fn diagonal_term_positive_and_rule_independent() {
        let s = QuadratureScheme::default();
        let g = s.with_policy(SingularityPolicy::GradedMesh);
        for n in [0, 1, 3] {
            let a = watanabe_current_fbm_a(n, 0.75, 1.0, 1.0, &s).unwrap();
            let b = watanabe_current_fbm_a(n, 0.75, 1.0, 1.0, &g).unwrap();
            assert!(a > 0.0);
            assert_relative_eq!(a, b, max_relative = 1e-5);
        }
        let near_half = watanabe_current_fbm_a(0, 0.501, 1.0, 1.0, &s).unwrap();
        assert!(near_half.is_finite() && near_half > 0.0);
    }

    #[test]
    fn off_diagonal_bound_nonnegative() {
        let s = QuadratureScheme::default();
        assert_eq!(watanabe_current_fbm_b(0, 0.75, 1.0, 1.0, &s).unwrap(), 0.0);
        for n in 1..60 {
            assert!(watanabe_current_fbm_b(n, 0.75, 1.0, 1.0, &s).unwrap() >= 0.0);
        }
    }

    #[test]
    fn fractional_current_threshold() {
        assert_eq!(watanabe_current_fbm(1.0, 0.75, 1.0, -0.95, 2000).unwrap().classification, SeriesVerdict::Convergent);
        assert_eq!(watanabe_current_fbm(1.0, 0.75, 1.0, -0.7, 2000).unwrap().classification, SeriesVerdict::Divergent);
    }

    #[test]
    fn fractional_threshold_formula_limits() {
        assert!((fbm_alpha_threshold(0.501) - 0.5).abs() < 0.01);
        assert_relative_eq!(fbm_alpha_threshold(0.75), 5.0 / 6.0, epsilon = 1e-15);
        assert!((fbm_alpha_threshold(0.999_999) - 1.0).abs() < 1e-5);
    }

    #[test]
    fn csv_layout() {
        let w = watanabe_delta_norm(1.0, 1.0, 0.6, 20).unwrap();
        let mut buf = Vec::new();
        w.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("n,t_n,partial_sum\n"));
        assert_eq!(text.lines().count(), 22);
        assert!(!text.contains('\r'));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn terms_nonnegative_and_sums_monotone(x in -3.0f64..3.0, s in 0.1f64..4.0, alpha in -1.0f64..2.0) {
            let w = watanabe_delta_norm(x, s, alpha, 200).unwrap();
            prop_assert!(w.terms.iter().all(|t| *t >= 0.0));
            prop_assert!(w.partial_sums.windows(2).all(|p| p[1] >= p[0]));
        }
    }
}
