//! The registered experiments.

use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde_json::json;

use super::{cell, Check, Experiment, ExperimentConfig, ExperimentKind, Outcome, ScanPoint, Side, Table};
use crate::chaos::{stroock_pairing_test, TestFunction};
use crate::currents::{
    classify_trace, fbm_a_term_with, fbm_b_term_with, fbm_multidim_ck_with, fbm_multidim_dk_with,
    fbm_multidim_threshold, fbm_a_threshold, sobolev_norm_bm, tail_exponent, xi_hat_mc, xi_hat_second_moment_series,
    Ladder, RegularityClassification, Verdict,
};
use crate::error::{Error, Result};
use crate::gaussian::{CovarianceSpec, DriverKind};
use crate::quadrature::QuadratureScheme;
use crate::watanabe::{
    current_bm_chaos_norms, edd_integral, fbm_alpha_threshold, fbm_majorant_norm, fit_power_law, offdiag_integral,
    ln_factorial_cn_sq, SeriesVerdict, WatanabeSeries,
};

static EXPERIMENTS: [&dyn Experiment; 10] = [
    &Prop1Series,
    &Prop1Mc,
    &Prop2,
    &Prop3,
    &Prop4,
    &Prop5,
    &Prop6,
    &Stroock,
    &EddScaling,
    &StirlingCn,
];

pub fn registry() -> &'static [&'static dyn Experiment] {
    &EXPERIMENTS
}

fn fill<T>(slot: &mut Option<T>, v: T) {
    if slot.is_none() {
        *slot = Some(v);
    }
}

fn tol(cfg: &mut ExperimentConfig, key: &str, v: f64) {
    cfg.tolerances.entry(key.to_string()).or_insert(v);
}

fn sweep(cfg: &mut ExperimentConfig, v: &[f64]) {
    fill(&mut cfg.sweep, v.to_vec());
}

fn sweep_values(cfg: &ExperimentConfig) -> &[f64] {
    cfg.sweep.as_deref().unwrap_or_default()
}

/// `lo, lo + step, …` up to `hi`, rounded to suppress float drift in labels.
fn grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).round() as usize;
    (0..=n).map(|i| ((lo + step * i as f64) * 1e9).round() / 1e9).collect()
}

fn driver_or(cfg: &mut ExperimentConfig, make: impl FnOnce() -> Result<CovarianceSpec>) -> Result<()> {
    if cfg.driver.is_none() {
        cfg.driver = Some(make()?);
    }
    Ok(())
}

fn require_kind(cfg: &ExperimentConfig, kind: DriverKind) -> Result<()> {
    if cfg.driver().kind != kind {
        return Err(Error::Capability(format!(
            "{} needs a {kind:?} driver, configured driver is {:?}",
            cfg.experiment,
            cfg.driver().kind
        )));
    }
    Ok(())
}

fn ladder(cfg: &ExperimentConfig) -> Ladder {
    Ladder { levels: cfg.params.ladder_levels.unwrap_or(Ladder::default().levels), ..Ladder::default() }
}

fn verdict_name(v: Verdict) -> &'static str {
    match v {
        Verdict::Finite => "Finite",
        Verdict::Divergent => "Divergent",
        Verdict::Inconclusive => "Inconclusive",
    }
}

fn series_name(v: SeriesVerdict) -> &'static str {
    match v {
        SeriesVerdict::Convergent => "Convergent",
        SeriesVerdict::Divergent => "Divergent",
        SeriesVerdict::Inconclusive => "Inconclusive",
    }
}

/// Inconclusive traces fall on the side given by the sign of their tail exponent.
fn regularity_side(verdict: Verdict, tail: Option<f64>) -> Side {
    match verdict {
        Verdict::Finite => Side::Regular,
        Verdict::Divergent => Side::Irregular,
        Verdict::Inconclusive if tail.is_some_and(|t| t > 0.0) => Side::Regular,
        Verdict::Inconclusive => Side::Irregular,
    }
}

fn series_side(s: &WatanabeSeries) -> Side {
    match s.classification {
        SeriesVerdict::Convergent => Side::Regular,
        SeriesVerdict::Divergent => Side::Irregular,
        SeriesVerdict::Inconclusive if s.fitted_decay_exponent.is_some_and(|e| e < -1.0) => Side::Regular,
        SeriesVerdict::Inconclusive => Side::Irregular,
    }
}

/// Both terms must be regular for the sum to be.
fn combined_point(exponent: f64, parts: &[&RegularityClassification]) -> ScanPoint {
    let sides: Vec<Side> = parts.iter().map(|c| regularity_side(c.verdict, c.tail_exponent)).collect();
    let side = if sides.iter().all(|s| *s == Side::Regular) { Side::Regular } else { Side::Irregular };
    ScanPoint {
        exponent,
        side,
        verdict: parts.iter().map(|c| verdict_name(c.verdict)).collect::<Vec<_>>().join("+"),
        diagnostic: parts.iter().filter_map(|c| c.tail_exponent).reduce(f64::min),
    }
}

fn expected_regularity(regular: bool) -> &'static str {
    if regular {
        "Finite"
    } else {
        "Divergent"
    }
}

fn trace_rows(table: &mut Table, prefix: &[String], c: &RegularityClassification) {
    for (k, v) in &c.refinement_trace {
        let mut row = prefix.to_vec();
        row.extend([cell(k), cell(v)]);
        table.push(row);
    }
}

fn verdict_row(table: &mut Table, prefix: &[String], c: &RegularityClassification) {
    let mut row = prefix.to_vec();
    row.extend([
        verdict_name(c.verdict).to_string(),
        c.tail_exponent.map(cell).unwrap_or_default(),
        c.refinement_trace.last().map(|p| cell(p.1)).unwrap_or_default(),
        cell(c.threshold_formula),
    ]);
    table.push(row);
}

fn series_table(file: String, s: &WatanabeSeries) -> Table {
    let mut t = Table::new(file, &["n", "t_n", "partial_sum"]);
    for (n, (v, p)) in s.terms.iter().zip(&s.partial_sums).enumerate() {
        t.push(vec![cell(n), cell(v), cell(p)]);
    }
    t
}

/// Slope of `ln f(n)` against `ln n` over an inclusive range.
fn fitted_slope(lo: usize, hi: usize, f: impl Fn(usize) -> Result<f64> + Sync) -> Result<(f64, Vec<(usize, f64)>)> {
    let vals: Vec<(usize, f64)> = (lo..=hi).into_par_iter().map(|n| f(n).map(|v| (n, v))).collect::<Result<_>>()?;
    let pts: Vec<(f64, f64)> = vals.iter().map(|&(n, v)| (n as f64, v)).collect();
    let (slope, _, _) = fit_power_law(&pts).ok_or_else(|| Error::Domain("too few positive values to fit".into()))?;
    Ok((slope, vals))
}

struct Prop1Series;

impl Experiment for Prop1Series {
    fn kind(&self) -> ExperimentKind {
        ExperimentKind::Prop1Series
    }

    fn resolve(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        driver_or(cfg, || CovarianceSpec::brownian(1, 1, 1.0))?;
        fill(&mut cfg.params.x, vec![0.5, 1.0, 2.0]);
        fill(&mut cfg.params.horizons, vec![1.0, 2.0]);
        tol(cfg, "abs", if cfg.driver.as_ref().is_some_and(|d| d.time_dim > 1) { 1e-6 } else { 1e-8 });
        Ok(())
    }

    fn verify(&self, cfg: &ExperimentConfig) -> Result<Outcome> {
        require_kind(cfg, DriverKind::BrownianSheet)?;
        let n = cfg.driver().time_dim;
        let mut out = Outcome::default();
        let mut table =
            Table::new("prop1_series.csv", &["x", "horizon", "time_dim", "n_max", "estimate", "tail_bound", "abs_error"]);
        for &t in cfg.params.horizons.as_ref().unwrap() {
            for &x in cfg.params.x.as_ref().unwrap() {
                let r = xi_hat_second_moment_series(x, t, n, cfg.params.n_max)?;
                let exact = t.powi(n as i32);
                out.checks.push(Check::within(format!("series x={x} T={t}"), r.estimate, exact, cfg.tolerance("abs")));
                table.push(vec![
                    cell(x),
                    cell(t),
                    cell(n),
                    cell(r.truncation.n_max.unwrap_or(0)),
                    cell(r.estimate),
                    cell(r.tail_bound.unwrap_or(0.0)),
                    cell((r.estimate - exact).abs()),
                ]);
                out.results.push(json!({ "horizon": t, "report": r }));
            }
        }
        out.tables.push(table);
        Ok(out)
    }
}

struct Prop1Mc;

impl Experiment for Prop1Mc {
    fn kind(&self) -> ExperimentKind {
        ExperimentKind::Prop1MC
    }

    fn resolve(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        driver_or(cfg, || CovarianceSpec::brownian(1, 1, 1.0))?;
        fill(&mut cfg.params.x, vec![1.0]);
        fill(&mut cfg.params.n_paths, 20_000);
        fill(&mut cfg.params.n_steps, 2_000);
        tol(cfg, "stderr_multiple", 3.0);
        tol(cfg, "rel", 0.02);
        Ok(())
    }

    fn verify(&self, cfg: &ExperimentConfig) -> Result<Outcome> {
        let spec = cfg.driver();
        let seed = cfg.seed.expect("resolved");
        let (n_paths, n_steps) = (cfg.params.n_paths.unwrap(), cfg.params.n_steps.unwrap());
        let mut out = Outcome::default();
        let mut table = Table::new("prop1_mc.csv", &["x", "horizon", "n_paths", "n_steps", "estimate", "stderr"]);
        for &x in cfg.params.x.as_ref().unwrap() {
            let r = xi_hat_mc(spec, x, n_steps, n_paths, seed)?;
            let exact = spec.horizon;
            out.checks.push(Check::within(
                format!("mc x={x} within {} SE", cfg.tolerance("stderr_multiple")),
                r.estimate,
                exact,
                cfg.tolerance("stderr_multiple") * r.stderr,
            ));
            out.checks.push(Check::below(format!("mc x={x} relative error"), (r.estimate - exact).abs() / exact, cfg.tolerance("rel")));
            table.push(vec![cell(x), cell(exact), cell(n_paths), cell(n_steps), cell(r.estimate), cell(r.stderr)]);
            out.results.push(serde_json::to_value(&r)?);
        }
        out.rng_stream_ids.push(format!("seed={seed} component=0 paths=0..{n_paths}"));
        out.tables.push(table);
        Ok(out)
    }
}

struct Prop2;

impl Prop2 {
    fn point(cfg: &ExperimentConfig, r: f64) -> Result<(RegularityClassification, Verdict, Option<f64>)> {
        let d = cfg.driver();
        let c = sobolev_norm_bm(r, d.space_dim, d.time_dim, d.horizon)?;
        let trace: Vec<f64> = c.refinement_trace.iter().map(|p| p.1).collect();
        Ok((c, classify_trace(&trace), tail_exponent(&trace)))
    }
}

impl Experiment for Prop2 {
    fn kind(&self) -> ExperimentKind {
        ExperimentKind::Prop2
    }

    fn resolve(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        driver_or(cfg, || CovarianceSpec::brownian(2, 2, 1.0))?;
        fill(&mut cfg.params.x, vec![2.0]);
        sweep(cfg, &[0.8, 1.2]);
        fill(&mut cfg.params.scan_grid, grid(0.1, 2.0, 0.1));
        tol(cfg, "abs", 1e-6);
        tol(cfg, "scan_abs", 0.05);
        Ok(())
    }

    fn verify(&self, cfg: &ExperimentConfig) -> Result<Outcome> {
        require_kind(cfg, DriverKind::BrownianSheet)?;
        let d = cfg.driver();
        let mut out = Outcome::default();
        let mut series = Table::new("prop2_series.csv", &["component", "x", "estimate", "tail_bound"]);
        for k in 0..d.space_dim {
            for &x in cfg.params.x.as_ref().unwrap() {
                let r = xi_hat_second_moment_series(x, d.horizon, d.time_dim, cfg.params.n_max)?;
                out.checks.push(Check::within(
                    format!("component {k} series x={x}"),
                    r.estimate,
                    d.horizon.powi(d.time_dim as i32),
                    cfg.tolerance("abs"),
                ));
                series.push(vec![cell(k), cell(x), cell(r.estimate), cell(r.tail_bound.unwrap_or(0.0))]);
                out.results.push(json!({ "component": k, "report": r }));
            }
        }
        let mut verdicts = Table::new("prop2_verdicts.csv", &["r", "verdict", "tail_exponent", "last_value", "threshold"]);
        let mut traces = Table::new("prop2_traces.csv", &["r", "level", "value"]);
        for &r in sweep_values(cfg) {
            let (c, _, _) = Prop2::point(cfg, r)?;
            let expected = expected_regularity(2.0 * r > d.space_dim as f64);
            out.checks.push(Check::label(format!("sobolev r={r}"), verdict_name(c.verdict), expected));
            verdict_row(&mut verdicts, &[cell(r)], &c);
            trace_rows(&mut traces, &[cell(r)], &c);
            out.results.push(serde_json::to_value(&c)?);
        }
        out.tables.extend([series, verdicts, traces]);
        Ok(out)
    }

    fn scan_setup(&self, cfg: &ExperimentConfig) -> Result<(String, f64)> {
        Ok(("r".into(), cfg.driver().space_dim as f64 / 2.0))
    }

    fn scan_point(&self, cfg: &ExperimentConfig, r: f64) -> Result<ScanPoint> {
        // the radial-truncation trace alone, not the closed-form rule
        let (_, verdict, tail) = Prop2::point(cfg, r)?;
        Ok(ScanPoint { exponent: r, side: regularity_side(verdict, tail), verdict: verdict_name(verdict).into(), diagnostic: tail })
    }
}

fn fbm_hurst(cfg: &ExperimentConfig) -> Result<f64> {
    require_kind(cfg, DriverKind::FbmSheet)?;
    cfg.driver().hurst_of(0)
}

struct Prop3;

impl Prop3 {
    fn terms(cfg: &ExperimentConfig, r: f64) -> Result<(RegularityClassification, RegularityClassification)> {
        let h = fbm_hurst(cfg)?;
        let (t, scheme, l) = (cfg.driver().horizon, QuadratureScheme::default(), ladder(cfg));
        Ok((fbm_a_term_with(h, r, t, &scheme, &l)?, fbm_b_term_with(h, r, t, &scheme, &l)?))
    }
}

impl Experiment for Prop3 {
    fn kind(&self) -> ExperimentKind {
        ExperimentKind::Prop3
    }

    fn resolve(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        driver_or(cfg, || CovarianceSpec::fbm(vec![0.75], 1, 1.0))?;
        sweep(cfg, &[0.05, 0.3]);
        fill(&mut cfg.params.ladder_levels, Ladder::default().levels);
        fill(&mut cfg.params.scan_grid, grid(0.05, 1.0, 0.05));
        tol(cfg, "scan_abs", 0.05);
        Ok(())
    }

    fn verify(&self, cfg: &ExperimentConfig) -> Result<Outcome> {
        let h = fbm_hurst(cfg)?;
        let rc = fbm_a_threshold(h);
        let mut out = Outcome::default();
        let mut verdicts =
            Table::new("prop3_verdicts.csv", &["hurst", "r", "term", "verdict", "tail_exponent", "last_value", "threshold"]);
        let mut traces = Table::new("prop3_traces.csv", &["hurst", "r", "term", "level", "value"]);
        for &r in sweep_values(cfg) {
            let (a, b) = Prop3::terms(cfg, r)?;
            let expected = expected_regularity(r > rc);
            for (name, c) in [("A", &a), ("B", &b)] {
                out.checks.push(Check::label(format!("H={h} r={r} term {name}"), verdict_name(c.verdict), expected));
                let prefix = [cell(h), cell(r), name.to_string()];
                verdict_row(&mut verdicts, &prefix, c);
                trace_rows(&mut traces, &prefix, c);
            }
            out.results.push(json!({ "hurst": h, "r": r, "A": a, "B": b }));
        }
        out.tables.extend([verdicts, traces]);
        Ok(out)
    }

    fn scan_setup(&self, cfg: &ExperimentConfig) -> Result<(String, f64)> {
        Ok(("r".into(), fbm_a_threshold(fbm_hurst(cfg)?)))
    }

    fn scan_point(&self, cfg: &ExperimentConfig, r: f64) -> Result<ScanPoint> {
        let (a, b) = Prop3::terms(cfg, r)?;
        Ok(combined_point(r, &[&a, &b]))
    }
}

struct Prop4;

impl Prop4 {
    fn terms(cfg: &ExperimentConfig, r: f64, d: usize) -> Result<(RegularityClassification, RegularityClassification)> {
        let h = fbm_hurst(cfg)?;
        let spec = cfg.driver();
        let (scheme, l) = (QuadratureScheme::default(), ladder(cfg));
        Ok((
            fbm_multidim_ck_with(h, r, d, spec.time_dim, spec.horizon, &scheme, &l)?,
            fbm_multidim_dk_with(h, r, d, spec.horizon, &scheme, &l)?,
        ))
    }
}

impl Experiment for Prop4 {
    fn kind(&self) -> ExperimentKind {
        ExperimentKind::Prop4
    }

    fn resolve(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        driver_or(cfg, || CovarianceSpec::fbm(vec![0.75, 0.75], 1, 1.0))?;
        sweep(cfg, &[0.5, 0.8]);
        fill(&mut cfg.params.ladder_levels, Ladder::default().levels);
        fill(&mut cfg.params.scan_grid, grid(0.55, 2.0, 0.05));
        tol(cfg, "scan_abs", 0.05);
        Ok(())
    }

    fn verify(&self, cfg: &ExperimentConfig) -> Result<Outcome> {
        let h = fbm_hurst(cfg)?;
        let spec = cfg.driver();
        let d = spec.space_dim;
        let rc = fbm_multidim_threshold(h, d);
        let mut out = Outcome::default();
        let mut verdicts = Table::new(
            "prop4_verdicts.csv",
            &["hurst", "d", "r", "term", "verdict", "tail_exponent", "last_value", "threshold"],
        );
        let mut traces = Table::new("prop4_traces.csv", &["hurst", "d", "r", "term", "level", "value"]);
        for &r in sweep_values(cfg) {
            let (c, dk) = Prop4::terms(cfg, r, d)?;
            let expected = expected_regularity(r > rc);
            for (name, t) in [("C", &c), ("D", &dk)] {
                out.checks.push(Check::label(format!("H={h} d={d} r={r} term {name}"), verdict_name(t.verdict), expected));
                let prefix = [cell(h), cell(d), cell(r), name.to_string()];
                verdict_row(&mut verdicts, &prefix, t);
                trace_rows(&mut traces, &prefix, t);
            }
            out.results.push(json!({ "hurst": h, "d": d, "r": r, "C": c, "D": dk }));
            if spec.time_dim == 1 {
                // one space dimension must reproduce the A/B verdicts
                let (c1, d1) = Prop4::terms(cfg, r, 1)?;
                let (a, b) = Prop3::terms(cfg, r)?;
                out.checks.push(Check::label(format!("d=1 C vs A at r={r}"), verdict_name(c1.verdict), verdict_name(a.verdict)));
                out.checks.push(Check::label(format!("d=1 D vs B at r={r}"), verdict_name(d1.verdict), verdict_name(b.verdict)));
                for (name, t) in [("C", &c1), ("D", &d1)] {
                    verdict_row(&mut verdicts, &[cell(h), cell(1), cell(r), name.to_string()], t);
                }
            }
        }
        out.tables.extend([verdicts, traces]);
        Ok(out)
    }

    fn scan_setup(&self, cfg: &ExperimentConfig) -> Result<(String, f64)> {
        Ok(("r".into(), fbm_multidim_threshold(fbm_hurst(cfg)?, cfg.driver().space_dim)))
    }

    fn scan_point(&self, cfg: &ExperimentConfig, r: f64) -> Result<ScanPoint> {
        let (c, d) = Prop4::terms(cfg, r, cfg.driver().space_dim)?;
        Ok(combined_point(r, &[&c, &d]))
    }
}

fn series_point(alpha: f64, s: &WatanabeSeries) -> ScanPoint {
    ScanPoint {
        exponent: -alpha,
        side: series_side(s),
        verdict: series_name(s.classification).into(),
        diagnostic: s.fitted_decay_exponent,
    }
}

fn alpha_label(alpha: f64) -> String {
    format!("{alpha}").replace('-', "m")
}

struct Prop5;

impl Prop5 {
    fn norms(cfg: &ExperimentConfig) -> Vec<f64> {
        let p = &cfg.params;
        current_bm_chaos_norms(p.x.as_ref().unwrap()[0], p.lower_limit.unwrap(), cfg.driver().horizon, p.n_max.unwrap())
    }
}

impl Experiment for Prop5 {
    fn kind(&self) -> ExperimentKind {
        ExperimentKind::Prop5
    }

    fn resolve(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        driver_or(cfg, || CovarianceSpec::brownian(1, 1, 1.0))?;
        let t = cfg.driver.as_ref().unwrap().horizon;
        fill(&mut cfg.params.x, vec![1.0]);
        fill(&mut cfg.params.lower_limit, 0.1 * t);
        fill(&mut cfg.params.n_max, crate::watanabe::DEFAULT_SERIES_ORDER);
        sweep(cfg, &[-0.6, -0.3]);
        fill(&mut cfg.params.scan_grid, grid(0.1, 1.0, 0.05));
        tol(cfg, "scan_abs", 0.05);
        let a = cfg.params.lower_limit.unwrap();
        if !(a > 0.0 && a < t) {
            return Err(Error::Config {
                path: "params.lower_limit".into(),
                message: format!("must lie in (0, T) to avoid the singularity at s = 0, got {a}"),
            });
        }
        Ok(())
    }

    fn verify(&self, cfg: &ExperimentConfig) -> Result<Outcome> {
        require_kind(cfg, DriverKind::BrownianSheet)?;
        let norms = Prop5::norms(cfg);
        let mut out = Outcome::default();
        for &alpha in sweep_values(cfg) {
            let s = WatanabeSeries::from_chaos_norms(alpha, alpha, 1, &norms);
            let expected = if alpha < -0.5 { "Convergent" } else { "Divergent" };
            out.checks.push(Check::label(format!("alpha={alpha}"), series_name(s.classification), expected));
            out.tables.push(series_table(format!("prop5_alpha_{}.csv", alpha_label(alpha)), &s));
            out.results.push(serde_json::to_value(&s)?);
        }
        Ok(out)
    }

    fn scan_setup(&self, _cfg: &ExperimentConfig) -> Result<(String, f64)> {
        Ok(("-alpha".into(), 0.5))
    }

    fn scan_point(&self, cfg: &ExperimentConfig, e: f64) -> Result<ScanPoint> {
        let s = WatanabeSeries::from_chaos_norms(-e, -e, 1, &Prop5::norms(cfg));
        Ok(series_point(-e, &s))
    }
}

type NormKey = (u64, u64, usize);

/// Majorant norms are independent of α, so scans compute them once.
static FBM_NORMS: Mutex<Option<(NormKey, Arc<Vec<f64>>)>> = Mutex::new(None);

fn fbm_norms(hurst: f64, horizon: f64, n_max: usize) -> Result<Arc<Vec<f64>>> {
    let key = (hurst.to_bits(), horizon.to_bits(), n_max);
    let mut slot = FBM_NORMS.lock().unwrap_or_else(|e| e.into_inner());
    if let Some((k, v)) = slot.as_ref() {
        if *k == key {
            return Ok(v.clone());
        }
    }
    let scheme = QuadratureScheme::default();
    let norms: Vec<f64> =
        (0..=n_max).into_par_iter().map(|n| fbm_majorant_norm(n, hurst, horizon, &scheme)).collect::<Result<_>>()?;
    let norms = Arc::new(norms);
    *slot = Some((key, norms.clone()));
    Ok(norms)
}

struct Prop6;

impl Prop6 {
    fn series(cfg: &ExperimentConfig, alpha: f64) -> Result<WatanabeSeries> {
        let h = fbm_hurst(cfg)?;
        let norms = fbm_norms(h, cfg.driver().horizon, cfg.params.n_max.unwrap())?;
        Ok(WatanabeSeries::from_chaos_norms(alpha, alpha, 1, &norms))
    }
}

impl Experiment for Prop6 {
    fn kind(&self) -> ExperimentKind {
        ExperimentKind::Prop6
    }

    fn resolve(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        driver_or(cfg, || CovarianceSpec::fbm(vec![0.75], 1, 1.0))?;
        fill(&mut cfg.params.x, vec![1.0]);
        fill(&mut cfg.params.n_max, crate::watanabe::DEFAULT_SERIES_ORDER);
        sweep(cfg, &[-0.95, -0.7]);
        fill(&mut cfg.params.scan_grid, grid(0.5, 1.2, 0.05));
        tol(cfg, "scan_abs", 0.05);
        Ok(())
    }

    fn verify(&self, cfg: &ExperimentConfig) -> Result<Outcome> {
        let threshold = fbm_alpha_threshold(fbm_hurst(cfg)?);
        let mut out = Outcome::default();
        for &alpha in sweep_values(cfg) {
            let s = Prop6::series(cfg, alpha)?;
            let expected = if -alpha > threshold { "Convergent" } else { "Divergent" };
            out.checks.push(Check::label(format!("alpha={alpha}"), series_name(s.classification), expected));
            out.tables.push(series_table(format!("prop6_alpha_{}.csv", alpha_label(alpha)), &s));
            out.results.push(serde_json::to_value(&s)?);
        }
        Ok(out)
    }

    fn scan_setup(&self, cfg: &ExperimentConfig) -> Result<(String, f64)> {
        Ok(("-alpha".into(), fbm_alpha_threshold(fbm_hurst(cfg)?)))
    }

    fn scan_point(&self, cfg: &ExperimentConfig, e: f64) -> Result<ScanPoint> {
        Ok(series_point(-e, &Prop6::series(cfg, -e)?))
    }
}

struct Stroock;

impl Experiment for Stroock {
    fn kind(&self) -> ExperimentKind {
        ExperimentKind::Stroock
    }

    fn resolve(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        driver_or(cfg, || CovarianceSpec::brownian(1, 1, 1.0))?;
        fill(&mut cfg.params.n_paths, 100_000);
        fill(&mut cfg.params.n_max_list, vec![5, 10, 20]);
        tol(cfg, "gap", 1e-2);
        tol(cfg, "stderr_multiple", 2.0);
        Ok(())
    }

    fn verify(&self, cfg: &ExperimentConfig) -> Result<Outcome> {
        // W(h) with |h|² = T for h the indicator of [0, T]
        let variance = cfg.driver().horizon;
        let seed = cfg.seed.expect("resolved");
        let n_paths = cfg.params.n_paths.unwrap();
        let phi = [TestFunction::standard_gaussian()];
        let mut out = Outcome::default();
        let mut table = Table::new("stroock.csv", &["n_max", "gap", "gap_stderr", "pairing_mean", "sample_mean"]);
        let reports = cfg
            .params
            .n_max_list
            .as_ref()
            .unwrap()
            .iter()
            .map(|&n| stroock_pairing_test(&phi, variance, n, n_paths, seed))
            .collect::<Result<Vec<_>>>()?;
        for r in &reports {
            table.push(vec![cell(r.n_max), cell(r.gap_estimate), cell(r.gap_stderr), cell(r.pairing_mean), cell(r.sample_mean)]);
            out.results.push(serde_json::to_value(r)?);
        }
        if let Some(last) = reports.last() {
            out.checks.push(Check::below(format!("gap at n_max={}", last.n_max), last.gap_estimate, cfg.tolerance("gap")));
        }
        for w in reports.windows(2) {
            let se = (w[0].gap_stderr.powi(2) + w[1].gap_stderr.powi(2)).sqrt();
            out.checks.push(Check::below(
                format!("gap decreases from n_max={} to {}", w[0].n_max, w[1].n_max),
                w[1].gap_estimate,
                w[0].gap_estimate + cfg.tolerance("stderr_multiple") * se,
            ));
        }
        out.rng_stream_ids.push(format!("seed={seed} component=0 paths=0..{n_paths}"));
        out.tables.push(table);
        Ok(out)
    }
}

struct EddScaling;

impl Experiment for EddScaling {
    fn kind(&self) -> ExperimentKind {
        ExperimentKind::EddScaling
    }

    fn resolve(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        driver_or(cfg, || CovarianceSpec::fbm(vec![0.75], 1, 1.0))?;
        fill(&mut cfg.params.hurst_values, vec![0.6, 0.75, 0.9]);
        fill(&mut cfg.params.order_range, (20, 200));
        tol(cfg, "slope_abs", 0.1);
        Ok(())
    }

    fn verify(&self, cfg: &ExperimentConfig) -> Result<Outcome> {
        let (lo, hi) = cfg.params.order_range.unwrap();
        let scheme = QuadratureScheme::default();
        let mut out = Outcome::default();
        let mut table = Table::new("edd.csv", &["hurst", "n", "edd", "offdiag"]);
        for &h in cfg.params.hurst_values.as_ref().unwrap() {
            let (slope, edd) = fitted_slope(lo, hi, |n| edd_integral(h, n, &scheme))?;
            let (l_slope, offdiag) = fitted_slope(lo, hi, |n| offdiag_integral(h, n, 1.0))?;
            out.checks.push(Check::within(format!("edd decay H={h}"), slope, -1.0 / (2.0 * h), cfg.tolerance("slope_abs")));
            for ((n, e), (_, l)) in edd.iter().zip(&offdiag) {
                table.push(vec![cell(h), cell(n), cell(e), cell(l)]);
            }
            out.results.push(json!({
                "hurst": h,
                "edd_slope": slope,
                "offdiag_slope": l_slope,
                "claimed_slope": -1.0 / (2.0 * h),
                "laplace_slope": 1.0 / (2.0 * h) - 1.0,
            }));
        }
        out.tables.push(table);
        Ok(out)
    }
}

struct StirlingCn;

impl Experiment for StirlingCn {
    fn kind(&self) -> ExperimentKind {
        ExperimentKind::StirlingCn
    }

    fn resolve(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        driver_or(cfg, || CovarianceSpec::brownian(1, 1, 1.0))?;
        fill(&mut cfg.params.order_range, (100, 1000));
        tol(cfg, "slope_abs", 0.02);
        tol(cfg, "drift", 0.01);
        Ok(())
    }

    fn verify(&self, cfg: &ExperimentConfig) -> Result<Outcome> {
        let (lo, hi) = cfg.params.order_range.unwrap();
        let (slope, vals) = fitted_slope(lo, hi, |n| Ok(ln_factorial_cn_sq(n).exp()))?;
        let scaled: Vec<f64> = (200..=400).map(|n| ln_factorial_cn_sq(n).exp() * (n as f64).sqrt()).collect();
        let (min, max) = scaled.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        let mut out = Outcome::default();
        out.checks.push(Check::within("n! c_n^2 decay", slope, -0.5, cfg.tolerance("slope_abs")));
        out.checks.push(Check::below("sqrt(n) n! c_n^2 drift on [200, 400]", max / min - 1.0, cfg.tolerance("drift")));
        let mut table = Table::new("stirling_cn.csv", &["n", "factorial_cn_sq", "sqrt_n_scaled"]);
        for (n, v) in vals {
            table.push(vec![cell(n), cell(v), cell(v * (n as f64).sqrt())]);
        }
        out.results.push(json!({ "slope": slope, "drift": max / min - 1.0 }));
        out.tables.push(table);
        Ok(out)
    }
}
