//! Covariances of Brownian and fractional Brownian sheets, the fBm
//! Hilbert-space inner product, and seeded path sampling.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::quadrature::{integrate_singular_rect, QuadratureScheme, Rect};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DriverKind {
    BrownianSheet,
    FbmSheet,
}

/// The driving Gaussian field: `d` independent components indexed by `[0, T]^N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovarianceSpec {
    pub kind: DriverKind,
    pub time_dim: usize,
    pub space_dim: usize,
    #[serde(default)]
    pub hurst: Vec<f64>,
    pub horizon: f64,
}

impl CovarianceSpec {
    pub fn brownian(time_dim: usize, space_dim: usize, horizon: f64) -> Result<Self> {
        Self {
            kind: DriverKind::BrownianSheet,
            time_dim,
            space_dim,
            hurst: Vec::new(),
            horizon,
        }
        .validated()
    }

    pub fn fbm(hurst: Vec<f64>, time_dim: usize, horizon: f64) -> Result<Self> {
        Self {
            kind: DriverKind::FbmSheet,
            time_dim,
            space_dim: hurst.len(),
            hurst,
            horizon,
        }
        .validated()
    }

    pub fn validated(self) -> Result<Self> {
        if self.time_dim == 0 || self.space_dim == 0 {
            return domain("time and space dimensions must be at least 1");
        }
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return domain(format!("horizon must be positive, got {}", self.horizon));
        }
        if self.kind == DriverKind::FbmSheet {
            if self.hurst.len() != self.space_dim {
                return domain(format!(
                    "expected {} Hurst indices, got {}",
                    self.space_dim,
                    self.hurst.len()
                ));
            }
            if let Some(h) = self.hurst.iter().find(|h| !(**h > 0.5 && **h < 1.0)) {
                return domain(format!("Hurst index must lie in (1/2, 1), got {h}"));
            }
        }
        Ok(self)
    }

    fn check_component(&self, component: usize) -> Result<()> {
        if component >= self.space_dim {
            return Err(Error::Index { component, dim: self.space_dim });
        }
        Ok(())
    }

    /// Hurst index of a component; `1/2` for Brownian sheets.
    pub fn hurst_of(&self, component: usize) -> Result<f64> {
        self.check_component(component)?;
        Ok(match self.kind {
            DriverKind::BrownianSheet => 0.5,
            DriverKind::FbmSheet => self.hurst[component],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimePoint {
    pub coords: Vec<f64>,
}

impl TimePoint {
    pub fn new(coords: Vec<f64>, horizon: f64) -> Result<Self> {
        if let Some(c) = coords.iter().find(|c| !(**c >= 0.0 && **c <= horizon)) {
            return domain(format!("time coordinate {c} outside [0, {horizon}]"));
        }
        Ok(Self { coords })
    }

    pub fn scalar(t: f64) -> Self {
        Self { coords: vec![t] }
    }

    /// `s_1 ⋯ s_N`
    pub fn volume(&self) -> f64 {
        self.coords.iter().product()
    }

    pub fn touches_origin(&self) -> bool {
        self.coords.contains(&0.0)
    }
}

/// `½(t^{2H} + s^{2H} − |t − s|^{2H})`
pub fn fbm_covariance(hurst: f64, t: f64, s: f64) -> f64 {
    let h2 = 2.0 * hurst;
    0.5 * (t.powf(h2) + s.powf(h2) - (t - s).abs().powf(h2))
}

fn check_point(spec: &CovarianceSpec, p: &TimePoint) -> Result<()> {
    if p.coords.len() != spec.time_dim {
        return domain(format!(
            "time point has {} coordinates, driver has {}",
            p.coords.len(),
            spec.time_dim
        ));
    }
    Ok(())
}

pub fn covariance(spec: &CovarianceSpec, component: usize, s: &TimePoint, t: &TimePoint) -> Result<f64> {
    let h = spec.hurst_of(component)?;
    check_point(spec, s)?;
    check_point(spec, t)?;
    let pairs = s.coords.iter().zip(&t.coords);
    Ok(match spec.kind {
        DriverKind::BrownianSheet => pairs.map(|(a, b)| a.min(*b)).product(),
        DriverKind::FbmSheet => pairs.map(|(a, b)| fbm_covariance(h, *a, *b)).product(),
    })
}

/// `R(s) = E B_s²`
pub fn variance_fn(spec: &CovarianceSpec, component: usize, s: &TimePoint) -> Result<f64> {
    let h = spec.hurst_of(component)?;
    check_point(spec, s)?;
    let vol = s.volume();
    Ok(match spec.kind {
        DriverKind::BrownianSheet => vol,
        DriverKind::FbmSheet => vol.powf(2.0 * h),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Interpolation {
    /// `values[i]` on `[knots[i], knots[i+1])`
    Constant,
    /// `values[i]` at `knots[i]`, linear in between
    Linear,
}

/// A function on an interval given by values on a knot grid; zero outside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    knots: Vec<f64>,
    values: Vec<f64>,
    interpolation: Interpolation,
}

impl GridFunction {
    pub fn new(knots: Vec<f64>, values: Vec<f64>, interpolation: Interpolation) -> Result<Self> {
        if knots.len() < 2 || knots.windows(2).any(|w| !(w[1] > w[0])) {
            return domain("grid knots must be strictly increasing with at least two entries");
        }
        let expected = match interpolation {
            Interpolation::Constant => knots.len() - 1,
            Interpolation::Linear => knots.len(),
        };
        if values.len() != expected {
            return domain(format!("expected {expected} grid values, got {}", values.len()));
        }
        Ok(Self { knots, values, interpolation })
    }

    pub fn indicator(a: f64, b: f64) -> Result<Self> {
        Self::new(vec![a, b], vec![1.0], Interpolation::Constant)
    }

    pub fn zero(a: f64, b: f64) -> Result<Self> {
        Self::new(vec![a, b], vec![0.0], Interpolation::Constant)
    }

    /// Samples `f` at `cells + 1` equally spaced knots, linear in between.
    pub fn from_fn(a: f64, b: f64, cells: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        let cells = cells.max(1);
        let knots: Vec<f64> = (0..=cells).map(|i| a + (b - a) * i as f64 / cells as f64).collect();
        let values = knots.iter().map(|&t| f(t)).collect();
        Self::new(knots, values, Interpolation::Linear)
    }

    pub fn cells(&self) -> usize {
        self.knots.len() - 1
    }

    fn cell(&self, i: usize) -> (f64, f64) {
        (self.knots[i], self.knots[i + 1])
    }

    /// Value inside cell `i`, with `t` assumed in that cell.
    fn eval_in_cell(&self, i: usize, t: f64) -> f64 {
        match self.interpolation {
            Interpolation::Constant => self.values[i],
            Interpolation::Linear => {
                let (a, b) = self.cell(i);
                let lam = ((t - a) / (b - a)).clamp(0.0, 1.0);
                self.values[i] * (1.0 - lam) + self.values[i + 1] * lam
            }
        }
    }

    fn cell_is_zero(&self, i: usize) -> bool {
        match self.interpolation {
            Interpolation::Constant => self.values[i] == 0.0,
            Interpolation::Linear => self.values[i] == 0.0 && self.values[i + 1] == 0.0,
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        let n = self.cells();
        if t < self.knots[0] || t > self.knots[n] {
            return 0.0;
        }
        let i = self.knots.partition_point(|k| *k <= t).saturating_sub(1).min(n - 1);
        self.eval_in_cell(i, t)
    }
}

/// `H(2H−1) ∬ f(u) g(v) |u − v|^{2H−2} du dv`
pub fn hh_inner(f: &GridFunction, g: &GridFunction, hurst: f64, scheme: &QuadratureScheme) -> Result<f64> {
    if !(hurst > 0.5 && hurst < 1.0) {
        return domain(format!("Hurst index must lie in (1/2, 1), got {hurst}"));
    }
    let beta = 2.0 * hurst - 2.0;
    let cells: Vec<(usize, usize)> = (0..f.cells())
        .flat_map(|i| (0..g.cells()).map(move |j| (i, j)))
        .filter(|&(i, j)| !f.cell_is_zero(i) && !g.cell_is_zero(j))
        .collect();
    let parts: Vec<f64> = cells
        .par_iter()
        .map(|&(i, j)| {
            let rect = Rect { u: f.cell(i), v: g.cell(j) };
            let kernel = |u: f64, v: f64| f.eval_in_cell(i, u) * g.eval_in_cell(j, v);
            integrate_singular_rect(rect, beta, &kernel, scheme)
        })
        .collect();
    let total: f64 = parts.iter().sum();
    Ok(hurst * (2.0 * hurst - 1.0) * total)
}

/// Inner product of separable functions `∏ f_i(u_i)` on `[0,T]^N` under the
/// product kernel: the product of one-dimensional inner products.
pub fn hh_inner_separable(
    fs: &[GridFunction],
    gs: &[GridFunction],
    hurst: f64,
    scheme: &QuadratureScheme,
) -> Result<f64> {
    if fs.len() != gs.len() || fs.is_empty() {
        return domain("separable factors must be non-empty and of equal count");
    }
    fs.iter()
        .zip(gs)
        .map(|(f, g)| hh_inner(f, g, hurst, scheme))
        .product()
}

/// Seeded realizations on a grid. Values are laid out `[path][component][grid]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    pub spec: CovarianceSpec,
    pub grid: Vec<TimePoint>,
    pub n_paths: usize,
    pub seed: u64,
    values: Vec<f64>,
}

#[derive(Serialize)]
struct EnsembleSidecar<'a> {
    spec: &'a CovarianceSpec,
    seed: u64,
    n_paths: usize,
    grid: &'a [TimePoint],
    rng: &'static str,
}

impl PathEnsemble {
    pub fn value(&self, path: usize, component: usize, grid_index: usize) -> f64 {
        let g = self.grid.len();
        self.values[(path * self.spec.space_dim + component) * g + grid_index]
    }

    pub fn path(&self, path: usize, component: usize) -> &[f64] {
        let g = self.grid.len();
        let start = (path * self.spec.space_dim + component) * g;
        &self.values[start..start + g]
    }

    /// Index of `s` in the grid; no interpolation.
    pub fn grid_index(&self, s: &TimePoint) -> Result<usize> {
        self.grid
            .iter()
            .position(|p| {
                p.coords.len() == s.coords.len()
                    && p.coords.iter().zip(&s.coords).all(|(a, b)| (a - b).abs() <= 1e-12 * (1.0 + b.abs()))
            })
            .ok_or_else(|| Error::OffGrid(s.coords.clone()))
    }

    pub fn write_csv(&self, out: &mut impl Write) -> Result<()> {
        writeln!(out, "path,component,grid_index,value")?;
        for p in 0..self.n_paths {
            for k in 0..self.spec.space_dim {
                for (g, v) in self.path(p, k).iter().enumerate() {
                    writeln!(out, "{p},{k},{g},{v:e}")?;
                }
            }
        }
        Ok(())
    }

    pub fn sidecar_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&EnsembleSidecar {
            spec: &self.spec,
            seed: self.seed,
            n_paths: self.n_paths,
            grid: &self.grid,
            rng: "chacha8, stream = component << 40 | path",
        })?)
    }

    /// Writes `<stem>.csv` and `<stem>.json` into `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut csv = std::io::BufWriter::new(std::fs::File::create(dir.join(format!("{stem}.csv")))?);
        self.write_csv(&mut csv)?;
        csv.flush()?;
        std::fs::write(dir.join(format!("{stem}.json")), self.sidecar_json()?)?;
        Ok(())
    }
}

/// Lower Cholesky factor, row-major. Fails at the first non-positive pivot.
fn cholesky(a: &[f64], n: usize) -> std::result::Result<Vec<f64>, (usize, f64)> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(s > 0.0) {
                    return Err((i + 1, s));
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Ok(l)
}

/// Cholesky with diagonal jitter escalating up to `1e-12·trace`.
pub fn cholesky_with_jitter(a: &[f64], n: usize) -> Result<Vec<f64>> {
    let trace: f64 = (0..n).map(|i| a[i * n + i]).sum();
    let mut last = match cholesky(a, n) {
        Ok(l) => return Ok(l),
        Err(e) => e,
    };
    let mut jittered = a.to_vec();
    let mut applied = 0.0;
    for rel in [1e-16, 1e-15, 1e-14, 1e-13, 1e-12] {
        let jitter = rel * trace;
        for i in 0..n {
            jittered[i * n + i] = a[i * n + i] + jitter;
        }
        applied = jitter;
        match cholesky(&jittered, n) {
            Ok(l) => return Ok(l),
            Err(e) => last = e,
        }
    }
    Err(Error::Conditioning { minor: last.0, pivot: last.1, jitter: applied })
}

/// Draws `n_paths` independent realizations of every component on `grid`.
/// Grid points touching the origin carry exactly zero.
pub fn sample_paths(spec: &CovarianceSpec, grid: &[TimePoint], n_paths: usize, seed: u64) -> Result<PathEnsemble> {
    for p in grid {
        check_point(spec, p)?;
        TimePoint::new(p.coords.clone(), spec.horizon)?;
    }
    let g = grid.len();
    let d = spec.space_dim;
    let live: Vec<usize> = (0..g).filter(|&i| !grid[i].touches_origin()).collect();
    let m = live.len();
    let mut factors = Vec::with_capacity(d);
    for k in 0..d {
        let mut cov = vec![0.0; m * m];
        for (a, &i) in live.iter().enumerate() {
            for (b, &j) in live.iter().enumerate().take(a + 1) {
                let c = covariance(spec, k, &grid[i], &grid[j])?;
                cov[a * m + b] = c;
                cov[b * m + a] = c;
            }
        }
        factors.push(cholesky_with_jitter(&cov, m)?);
    }
    let mut values = vec![0.0; n_paths * d * g];
    values.par_chunks_mut(d * g).enumerate().for_each(|(p, chunk)| {
        let mut z = vec![0.0; m];
        for (k, l) in factors.iter().enumerate() {
            let mut r = rng::stream(seed, k, p as u64);
            rng::fill_normals(&mut r, &mut z);
            let row = &mut chunk[k * g..(k + 1) * g];
            for (a, &i) in live.iter().enumerate() {
                row[i] = (0..=a).map(|b| l[a * m + b] * z[b]).sum();
            }
        }
    });
    Ok(PathEnsemble {
        spec: spec.clone(),
        grid: grid.to_vec(),
        n_paths,
        seed,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::SingularityPolicy;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn tp(c: &[f64]) -> TimePoint {
        TimePoint { coords: c.to_vec() }
    }

    #[test]
    fn covariance_examples() {
        let bs = CovarianceSpec::brownian(2, 1, 2.0).unwrap();
        assert_eq!(covariance(&bs, 0, &tp(&[1.0, 2.0]), &tp(&[2.0, 1.0])).unwrap(), 1.0);
        let f = CovarianceSpec::fbm(vec![0.75], 1, 1.0).unwrap();
        assert_relative_eq!(covariance(&f, 0, &tp(&[1.0]), &tp(&[1.0])).unwrap(), 1.0);
        assert_relative_eq!(covariance(&f, 0, &tp(&[0.5]), &tp(&[1.0])).unwrap(), 0.5, epsilon = 1e-15);
        assert!(matches!(
            covariance(&f, 1, &tp(&[0.5]), &tp(&[1.0])),
            Err(Error::Index { component: 1, dim: 1 })
        ));
    }

    #[test]
    fn variance_examples() {
        let bs = CovarianceSpec::brownian(2, 1, 1.0).unwrap();
        assert_relative_eq!(variance_fn(&bs, 0, &tp(&[0.5, 0.5])).unwrap(), 0.25);
        assert_eq!(variance_fn(&bs, 0, &tp(&[0.0, 0.5])).unwrap(), 0.0);
        let f = CovarianceSpec::fbm(vec![0.75], 1, 1.0).unwrap();
        assert_relative_eq!(variance_fn(&f, 0, &tp(&[0.25])).unwrap(), 0.125, epsilon = 1e-15);
        assert_eq!(variance_fn(&f, 0, &tp(&[0.0])).unwrap(), 0.0);
    }

    #[test]
    fn spec_validation() {
        assert!(CovarianceSpec::fbm(vec![0.5], 1, 1.0).is_err());
        assert!(CovarianceSpec::fbm(vec![1.0], 1, 1.0).is_err());
        assert!(CovarianceSpec::brownian(0, 1, 1.0).is_err());
        assert!(CovarianceSpec::brownian(1, 1, 0.0).is_err());
        assert!(TimePoint::new(vec![1.5], 1.0).is_err());
    }

    #[test]
    fn hh_inner_of_unit_indicators() {
        let s = QuadratureScheme::default();
        let one = GridFunction::indicator(0.0, 1.0).unwrap();
        for h in [0.7, 0.9] {
            assert_relative_eq!(hh_inner(&one, &one, h, &s).unwrap(), 1.0, epsilon = 1e-6);
        }
        let zero = GridFunction::zero(0.0, 1.0).unwrap();
        assert_eq!(hh_inner(&zero, &one, 0.7, &s).unwrap(), 0.0);
        assert!(hh_inner(&one, &one, 0.5, &s).is_err());
    }

    #[test]
    fn hh_inner_reproduces_covariance() {
        let s = QuadratureScheme::default();
        for h in [0.6, 0.75, 0.9] {
            for (t, u) in [(1.0, 1.0), (1.0, 0.5), (0.7, 0.3)] {
                let f = GridFunction::indicator(0.0, t).unwrap();
                let g = GridFunction::indicator(0.0, u).unwrap();
                let v = hh_inner(&f, &g, h, &s).unwrap();
                assert!((v - fbm_covariance(h, t, u)).abs() < 1e-5, "H={h} t={t} s={u} v={v}");
            }
        }
    }

    #[test]
    fn hh_inner_smooth_functions_stable_under_refinement() {
        let f = GridFunction::from_fn(0.0, 1.0, 8, |t| (3.0 * t).sin()).unwrap();
        let g = GridFunction::from_fn(0.0, 1.0, 8, |t| 1.0 + t * t).unwrap();
        let s = QuadratureScheme::default();
        let a = hh_inner(&f, &g, 0.7, &s).unwrap();
        let b = hh_inner(&f, &g, 0.7, &s.refined()).unwrap();
        assert!((a - b).abs() < 1e-3 * b.abs());
    }

    #[test]
    fn graded_mesh_error_decreases_under_refinement() {
        let one = GridFunction::indicator(0.0, 1.0).unwrap();
        let mut s = QuadratureScheme { panel_count: 2, ..Default::default() }
            .with_policy(SingularityPolicy::GradedMesh);
        let mut errs = Vec::new();
        for _ in 0..4 {
            errs.push((hh_inner(&one, &one, 0.75, &s).unwrap() - 1.0).abs());
            s = s.refined();
        }
        for w in errs.windows(2) {
            assert!(w[1] <= 0.5 * w[0] || w[1] < 1e-11, "{errs:?}");
        }
    }

    #[test]
    fn grid_function_eval() {
        let f = GridFunction::from_fn(0.0, 1.0, 4, |t| 2.0 * t).unwrap();
        assert_relative_eq!(f.eval(0.3), 0.6, epsilon = 1e-14);
        assert_eq!(f.eval(1.5), 0.0);
        let ind = GridFunction::indicator(0.2, 0.4).unwrap();
        assert_eq!(ind.eval(0.3), 1.0);
        assert_eq!(ind.eval(0.1), 0.0);
    }

    #[test]
    fn sampled_variances() {
        let bm = CovarianceSpec::brownian(1, 1, 1.0).unwrap();
        let grid = vec![tp(&[0.5]), tp(&[1.0])];
        let n = 200_000;
        let e = sample_paths(&bm, &grid, n, 11).unwrap();
        let check = |e: &PathEnsemble, gi: usize| {
            let m2: f64 = (0..n).map(|p| e.value(p, 0, gi).powi(2)).sum::<f64>() / n as f64;
            let m4: f64 = (0..n).map(|p| e.value(p, 0, gi).powi(4)).sum::<f64>() / n as f64;
            let se = ((m4 - m2 * m2) / n as f64).sqrt();
            (m2, se)
        };
        let (v, se) = check(&e, 1);
        assert!((v - 1.0).abs() < 3.0 * se, "{v} ± {se}");
        let f = CovarianceSpec::fbm(vec![0.75], 1, 1.0).unwrap();
        let e = sample_paths(&f, &[tp(&[1.0])], n, 12).unwrap();
        let (v, se) = check(&e, 0);
        assert!((v - 1.0).abs() < 3.0 * se, "{v} ± {se}");
    }

    #[test]
    fn origin_is_zero_and_seeds_reproduce() {
        let spec = CovarianceSpec::fbm(vec![0.6, 0.8], 2, 1.0).unwrap();
        let grid = vec![tp(&[0.0, 0.5]), tp(&[0.5, 0.5]), tp(&[1.0, 1.0])];
        let a = sample_paths(&spec, &grid, 50, 3).unwrap();
        let b = sample_paths(&spec, &grid, 50, 3).unwrap();
        assert_eq!(a, b);
        for p in 0..50 {
            assert_eq!(a.value(p, 1, 0), 0.0);
        }
        let mut csv = Vec::new();
        a.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("path,component,grid_index,value\n"));
        assert_eq!(text.lines().count(), 1 + 50 * 2 * 3);
        assert!(matches!(a.grid_index(&tp(&[0.3, 0.3])), Err(Error::OffGrid(_))));
    }

    #[test]
    fn conditioning_error_names_minor() {
        // indefinite: second leading minor is negative
        let a = [1.0, 1.0, 1.0, 0.5];
        match cholesky_with_jitter(&a, 2) {
            Err(Error::Conditioning { minor, .. }) => assert_eq!(minor, 2),
            other => panic!("{other:?}"),
        }
    }

    proptest! {
        #[test]
        fn covariance_is_symmetric(
            s in proptest::collection::vec(0.0..1.0f64, 2),
            t in proptest::collection::vec(0.0..1.0f64, 2),
            h in 0.51..0.99f64,
        ) {
            let spec = CovarianceSpec::fbm(vec![h], 2, 1.0).unwrap();
            let (s, t) = (tp(&s), tp(&t));
            prop_assert_eq!(covariance(&spec, 0, &s, &t).unwrap(), covariance(&spec, 0, &t, &s).unwrap());
            prop_assert!(covariance(&spec, 0, &s, &s).unwrap() >= 0.0);
            let bs = CovarianceSpec::brownian(2, 1, 1.0).unwrap();
            prop_assert_eq!(covariance(&bs, 0, &s, &t).unwrap(), covariance(&bs, 0, &t, &s).unwrap());
        }

        #[test]
        fn random_grids_factorize(
            pts in proptest::collection::vec(0.001..1.0f64, 1..200),
            h in 0.51..0.99f64,
        ) {
            let grid: Vec<TimePoint> = pts.iter().map(|t| tp(&[*t])).collect();
            for spec in [CovarianceSpec::fbm(vec![h], 1, 1.0).unwrap(), CovarianceSpec::brownian(1, 1, 1.0).unwrap()] {
                // duplicates make the matrix exactly singular; they are legitimate grid input only once
                let mut uniq = grid.clone();
                uniq.sort_by(|a, b| a.coords[0].partial_cmp(&b.coords[0]).unwrap());
                uniq.dedup_by(|a, b| (a.coords[0] - b.coords[0]).abs() < 1e-3);
                prop_assert!(sample_paths(&spec, &uniq, 1, 0).is_ok());
            }
        }
    }
}
