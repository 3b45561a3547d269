//! Experiment registry, configuration, threshold scans and report output.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::gaussian::{sample_paths, CovarianceSpec, PathEnsemble, TimePoint};

mod experiments;

pub use experiments::registry;

pub const SCHEMA_VERSION: u32 = 1;
pub const REPORT_FILE: &str = "report.json";
/// Bracket width at which bisection stops.
pub const BISECTION_WIDTH: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ExperimentKind {
    Prop1Series,
    Prop1MC,
    Prop2,
    Prop3,
    Prop4,
    Prop5,
    Prop6,
    Stroock,
    EddScaling,
    StirlingCn,
}

impl ExperimentKind {
    pub const ALL: [Self; 10] = [
        Self::Prop1Series,
        Self::Prop1MC,
        Self::Prop2,
        Self::Prop3,
        Self::Prop4,
        Self::Prop5,
        Self::Prop6,
        Self::Stroock,
        Self::EddScaling,
        Self::StirlingCn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Prop1Series => "Prop1Series",
            Self::Prop1MC => "Prop1MC",
            Self::Prop2 => "Prop2",
            Self::Prop3 => "Prop3",
            Self::Prop4 => "Prop4",
            Self::Prop5 => "Prop5",
            Self::Prop6 => "Prop6",
            Self::Stroock => "Stroock",
            Self::EddScaling => "EddScaling",
            Self::StirlingCn => "StirlingCn",
        }
    }

    pub fn uses_monte_carlo(self) -> bool {
        matches!(self, Self::Prop1MC | Self::Stroock)
    }

    pub fn is_threshold(self) -> bool {
        matches!(self, Self::Prop2 | Self::Prop3 | Self::Prop4 | Self::Prop5 | Self::Prop6)
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|k| k.name().eq_ignore_ascii_case(s)).ok_or_else(|| Error::Config {
            path: "experiment".into(),
            message: format!(
                "unknown experiment `{s}`; expected one of {}",
                Self::ALL.map(|k| k.name()).join(", ")
            ),
        })
    }
}

/// Experiment-specific knobs. Unset fields take the experiment's defaults,
/// which are echoed into the report.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    /// Spatial frequencies or evaluation points.
    pub x: Option<Vec<f64>>,
    /// Horizons swept by the exact-series check.
    pub horizons: Option<Vec<f64>>,
    pub n_max: Option<usize>,
    /// Truncation orders compared by the pairing check.
    pub n_max_list: Option<Vec<usize>>,
    pub n_paths: Option<usize>,
    pub n_steps: Option<usize>,
    /// Lower time limit of the Brownian current.
    pub lower_limit: Option<f64>,
    /// ε-ladder levels.
    pub ladder_levels: Option<usize>,
    pub hurst_values: Option<Vec<f64>>,
    /// Inclusive order range of decay fits.
    pub order_range: Option<(usize, usize)>,
    /// Exponent grid of `scan`.
    pub scan_grid: Option<Vec<f64>>,
    pub bisect: Option<bool>,
    /// Grid points per time axis for `paths`.
    pub grid_points: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub driver: Option<CovarianceSpec>,
    /// Exponent values checked by `verify`; unset takes the defaults, empty is an error.
    pub sweep: Option<Vec<f64>>,
    #[serde(default)]
    pub tolerances: BTreeMap<String, f64>,
    pub seed: Option<u64>,
    pub output_path: Option<String>,
    #[serde(default)]
    pub params: Params,
}

impl ExperimentConfig {
    pub fn new(experiment: ExperimentKind) -> Self {
        Self {
            experiment,
            driver: None,
            sweep: None,
            tolerances: BTreeMap::new(),
            seed: None,
            output_path: None,
            params: Params::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config {
            path: e.span().map(|s| format!("bytes {}..{}", s.start, s.end)).unwrap_or_else(|| "<document>".into()),
            message: e.message().to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config { path: path.display().to_string(), message: e.to_string() })?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config { path: p, message } => {
                Error::Config { path: format!("{}: {p}", path.display()), message }
            }
            other => other,
        })
    }

    pub fn tolerance(&self, key: &str) -> f64 {
        self.tolerances.get(key).copied().unwrap_or(f64::NAN)
    }

    pub fn driver(&self) -> &CovarianceSpec {
        self.driver.as_ref().expect("resolved configs carry a driver")
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.output_path.as_deref().unwrap_or("out"))
    }
}

/// One pass/fail comparison against a declared tolerance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub target: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn within(name: impl Into<String>, value: f64, target: f64, tolerance: f64) -> Self {
        let passed = (value - target).abs() <= tolerance;
        Self {
            name: name.into(),
            value,
            target,
            tolerance,
            passed,
            detail: format!("|{value} - {target}| <= {tolerance}"),
        }
    }

    pub fn below(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Self {
            name: name.into(),
            value,
            target: bound,
            tolerance: 0.0,
            passed: value < bound,
            detail: format!("{value} < {bound}"),
        }
    }

    pub fn label(name: impl Into<String>, got: &str, expected: &str) -> Self {
        Self {
            name: name.into(),
            value: f64::from(u8::from(got == expected)),
            target: 1.0,
            tolerance: 0.0,
            passed: got == expected,
            detail: format!("expected {expected}, got {got}"),
        }
    }
}

/// A CSV artifact: header row plus string cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub file: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(file: impl Into<String>, header: &[&str]) -> Self {
        Self { file: file.into(), header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_path(dir.join(&self.file))
            .map_err(csv_error)?;
        w.write_record(&self.header).map_err(csv_error)?;
        for r in &self.rows {
            w.write_record(r).map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

/// Format helper for table cells.
pub fn cell(v: impl fmt::Display) -> String {
    v.to_string()
}

/// Results of one experiment execution.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub results: Vec<Value>,
    pub checks: Vec<Check>,
    pub tables: Vec<Table>,
    pub rng_stream_ids: Vec<String>,
}

/// Which side of a threshold a scan point fell on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    /// Divergent / not in the space.
    Irregular,
    /// Finite / convergent.
    Regular,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    pub exponent: f64,
    pub side: Side,
    /// Raw verdict before Inconclusive points were resolved.
    pub verdict: String,
    /// Tail exponent or fitted slope used to resolve Inconclusive points.
    pub diagnostic: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    /// Name of the scanned exponent; regularity increases with it.
    pub variable: String,
    pub points: Vec<ScanPoint>,
    pub bisection: Vec<ScanPoint>,
    pub bracket: (f64, f64),
    pub estimate: f64,
    pub formula: f64,
}

/// Grid points, bisection points and the final bracket.
pub type ScanTrace = (Vec<ScanPoint>, Vec<ScanPoint>, (f64, f64));

/// Midpoint of the last (irregular, regular) pair along an increasing
/// grid, optionally bisected down to [`BISECTION_WIDTH`].
pub fn bracket_scan(
    grid: &[f64],
    refine: bool,
    eval: &(dyn Fn(f64) -> Result<ScanPoint> + Sync),
) -> Result<ScanTrace> {
    if grid.len() < 2 {
        return Err(Error::Scan("scan grid needs at least two exponents".into()));
    }
    let mut sorted = grid.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let points: Vec<ScanPoint> = sorted.par_iter().map(|&e| eval(e)).collect::<Result<_>>()?;
    let last_irregular = points.iter().rposition(|p| p.side == Side::Irregular);
    let (Some(i), true) = (last_irregular, points.iter().any(|p| p.side == Side::Regular)) else {
        return Err(Error::Scan(format!(
            "grid [{}, {}] lies on one side of the threshold; widen it",
            sorted[0],
            sorted[sorted.len() - 1]
        )));
    };
    let Some(j) = points.iter().skip(i + 1).position(|p| p.side == Side::Regular).map(|k| k + i + 1) else {
        return Err(Error::Scan(format!(
            "no regular point above the last irregular one at {}; widen the grid upward",
            points[i].exponent
        )));
    };
    let (mut lo, mut hi) = (points[i].exponent, points[j].exponent);
    let mut bisection = Vec::new();
    while refine && hi - lo > BISECTION_WIDTH {
        let mid = 0.5 * (lo + hi);
        let p = eval(mid)?;
        match p.side {
            Side::Irregular => lo = mid,
            Side::Regular => hi = mid,
        }
        bisection.push(p);
    }
    Ok((points, bisection, (lo, hi)))
}

/// Behaviour every registered experiment provides.
pub trait Experiment: Sync {
    fn kind(&self) -> ExperimentKind;

    /// Fill every unset field with this experiment's defaults.
    fn resolve(&self, cfg: &mut ExperimentConfig) -> Result<()>;

    fn verify(&self, cfg: &ExperimentConfig) -> Result<Outcome>;

    /// Scan variable name, closed-form threshold and default grid.
    fn scan_setup(&self, _cfg: &ExperimentConfig) -> Result<(String, f64)> {
        Err(Error::Capability(format!("{} has no threshold to scan", self.kind())))
    }

    fn scan_point(&self, _cfg: &ExperimentConfig, _exponent: f64) -> Result<ScanPoint> {
        Err(Error::Capability(format!("{} has no threshold to scan", self.kind())))
    }
}

pub fn experiment(kind: ExperimentKind) -> &'static dyn Experiment {
    *registry().iter().find(|e| e.kind() == kind).expect("every experiment kind is registered")
}

/// Apply defaults and validate the schema invariants.
pub fn resolve(mut cfg: ExperimentConfig) -> Result<ExperimentConfig> {
    experiment(cfg.experiment).resolve(&mut cfg)?;
    if cfg.output_path.is_none() {
        cfg.output_path = Some("out".into());
    }
    let driver = cfg.driver.take().ok_or_else(|| Error::Config { path: "driver".into(), message: "missing".into() })?;
    cfg.driver = Some(driver.validated().map_err(|e| Error::Config { path: "driver".into(), message: e.to_string() })?);
    if cfg.experiment.is_threshold() && cfg.sweep.as_ref().is_none_or(|s| s.is_empty()) {
        return Err(Error::Config { path: "sweep".into(), message: "threshold experiments need a non-empty sweep".into() });
    }
    if cfg.experiment.uses_monte_carlo() && cfg.seed.is_none() {
        return Err(Error::Config {
            path: "seed".into(),
            message: format!("{} draws random samples; set `seed` or pass --seed", cfg.experiment),
        });
    }
    Ok(cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub artifact_version: String,
    pub command: String,
    pub experiment: ExperimentKind,
    /// Resolved configuration, defaults included.
    pub config: ExperimentConfig,
    pub results: Vec<Value>,
    pub checks: Vec<Check>,
    pub scan: Option<ScanResult>,
    pub passed: bool,
    pub wall_time_s: f64,
    pub rng_stream_ids: Vec<String>,
    pub artifacts: Vec<String>,
}

impl RunReport {
    pub fn load(dir: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(dir.join(REPORT_FILE))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn summary(&self) -> String {
        let mut s = format!("{} {}: {}\n", self.command, self.experiment, if self.passed { "PASS" } else { "FAIL" });
        for c in &self.checks {
            s.push_str(&format!("  [{}] {} ({})\n", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail));
        }
        if let Some(scan) = &self.scan {
            s.push_str(&format!(
                "  scan {}: bracket [{}, {}], estimate {}, closed form {}\n",
                scan.variable, scan.bracket.0, scan.bracket.1, scan.estimate, scan.formula
            ));
        }
        s
    }
}

fn finish(
    command: &str,
    cfg: ExperimentConfig,
    outcome: Outcome,
    scan: Option<ScanResult>,
    started: Instant,
) -> Result<RunReport> {
    let dir = cfg.out_dir();
    std::fs::create_dir_all(&dir)?;
    for t in &outcome.tables {
        t.write(&dir)?;
    }
    let report = RunReport {
        schema_version: SCHEMA_VERSION,
        artifact_version: env!("CARGO_PKG_VERSION").to_string(),
        command: command.into(),
        experiment: cfg.experiment,
        passed: outcome.checks.iter().all(|c| c.passed),
        config: cfg,
        results: outcome.results,
        checks: outcome.checks,
        scan,
        wall_time_s: started.elapsed().as_secs_f64(),
        rng_stream_ids: outcome.rng_stream_ids,
        artifacts: outcome.tables.iter().map(|t| t.file.clone()).collect(),
    };
    std::fs::write(dir.join(REPORT_FILE), serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

/// Execute an experiment's checks and write `report.json` plus CSV tables.
pub fn run(cfg: ExperimentConfig) -> Result<RunReport> {
    let started = Instant::now();
    let cfg = resolve(cfg)?;
    let outcome = experiment(cfg.experiment).verify(&cfg)?;
    finish("verify", cfg, outcome, None, started)
}

/// Estimate the critical exponent of a threshold experiment.
pub fn threshold_scan(cfg: &ExperimentConfig, refine: bool) -> Result<ScanResult> {
    let exp = experiment(cfg.experiment);
    let (variable, formula) = exp.scan_setup(cfg)?;
    let grid = cfg.params.scan_grid.clone().unwrap_or_default();
    let (points, bisection, bracket) = bracket_scan(&grid, refine, &|e| exp.scan_point(cfg, e))?;
    Ok(ScanResult { variable, points, bisection, bracket, estimate: 0.5 * (bracket.0 + bracket.1), formula })
}

/// `scan` command: threshold scan plus its tolerance check and CSV table.
pub fn run_scan(cfg: ExperimentConfig) -> Result<RunReport> {
    let started = Instant::now();
    let cfg = resolve(cfg)?;
    let refine = cfg.params.bisect.unwrap_or(true);
    let scan = threshold_scan(&cfg, refine)?;
    let mut table = Table::new(
        format!("{}_scan.csv", cfg.experiment.name().to_lowercase()),
        &["stage", "exponent", "side", "verdict", "diagnostic"],
    );
    for (stage, pts) in [("grid", &scan.points), ("bisection", &scan.bisection)] {
        for p in pts {
            table.push(vec![
                stage.into(),
                cell(p.exponent),
                cell(format!("{:?}", p.side)),
                p.verdict.clone(),
                p.diagnostic.map(cell).unwrap_or_default(),
            ]);
        }
    }
    let check = Check::within(
        format!("{} critical {}", cfg.experiment, scan.variable),
        scan.estimate,
        scan.formula,
        cfg.tolerance("scan_abs"),
    );
    let outcome = Outcome {
        results: vec![json!({ "scan": scan })],
        checks: vec![check],
        tables: vec![table],
        rng_stream_ids: Vec::new(),
    };
    finish("scan", cfg, outcome, Some(scan), started)
}

/// Sample driver paths on a uniform grid and save CSV plus JSON sidecar.
pub fn run_paths(cfg: ExperimentConfig) -> Result<PathEnsemble> {
    let mut cfg = cfg;
    if cfg.driver.is_none() {
        cfg.driver = Some(CovarianceSpec::brownian(1, 1, 1.0)?);
    }
    let spec = cfg.driver.clone().unwrap().validated()?;
    let seed = cfg.seed.ok_or_else(|| Error::Config { path: "seed".into(), message: "path sampling needs a seed".into() })?;
    // a dense sheet grid makes the covariance factorization cubic in its size
    let per_axis = cfg.params.grid_points.unwrap_or(if spec.time_dim == 1 { 100 } else { 30 });
    let n_paths = cfg.params.n_paths.unwrap_or(10);
    let grid = product_grid(spec.time_dim, per_axis, spec.horizon)?;
    let ensemble = sample_paths(&spec, &grid, n_paths, seed)?;
    let dir = cfg.out_dir();
    std::fs::create_dir_all(&dir)?;
    ensemble.save(&dir, "paths")?;
    Ok(ensemble)
}

/// `{T·i/m : 0 ≤ i ≤ m}^N`, first coordinate varying fastest.
pub fn product_grid(time_dim: usize, per_axis: usize, horizon: f64) -> Result<Vec<TimePoint>> {
    if per_axis == 0 {
        return Err(Error::Config { path: "params.grid_points".into(), message: "must be at least 1".into() });
    }
    let m = per_axis + 1;
    (0..m.pow(time_dim as u32))
        .map(|mut idx| {
            let coords = (0..time_dim)
                .map(|_| {
                    let i = idx % m;
                    idx /= m;
                    horizon * i as f64 / per_axis as f64
                })
                .collect();
            TimePoint::new(coords, horizon)
        })
        .collect()
}
