//! Run configuration, result tables and the evaluators of the verification
//! criteria behind the command-line runner.
//!
//! A [`RunConfig`] is read from a small `key = value` text format with optional
//! `[section]` headers (zero dependencies, `#` comments, unknown keys rejected)
//! and can be overridden key by key. Every suite returns plain [`Table`]s and
//! [`Criterion`] verdicts; rendering to CSV/JSON happens in the front end. All
//! sampling is quasi-random (Halton) with a seed-derived Cranley–Patterson
//! shift, and every reduction is order-stable, so identical configurations
//! produce identical numbers.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;

use nalgebra::Vector3;
use rand::Rng;
use serde::Serialize;

use crate::energy::{c_region_parts, energy_gap_table, vanishing_scale, EnergyRow, HFunction};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::fit::fit_power_law;
use crate::geometry::{cart_to_cyl, CartesianPoint, GradeEdge, RegionId};
use crate::kernels::{area_energy_residual, determinant, fd_jacobian_adaptive};
use crate::lemma_suite::{self, LemmaCheck};
use crate::limit_map::{FanPiece, LimitMap};
use crate::maps::AxisymmetricMap;
use crate::quadrature::{integrate_1d, QuadSpec};
use crate::recovery_map::{RecoveryMap, RecoveryParams};
use crate::sampling::{ball_meridian_sample, halton, rng, shell_meridian_sample};
use crate::topology::{
    bubble_oracle, calibrate_orientation, delta_field, det_pairing, dipole_atoms, in_bubble, inv_check,
    signed_preimage_degree, singular_mass, standard_test_functions, surface_dictionary, surface_pairing, Ball, Grid,
    ProfileCurve, BUBBLE_CENTER, BUBBLE_RADIUS, CURVE_RESOLUTION,
};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Output file formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
}

impl OutputFormat {
    pub fn tag(self) -> &'static str {
        match self {
            OutputFormat::Csv => "csv",
            OutputFormat::Json => "json",
        }
    }
}

/// Validated run configuration shared by every command.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// ε grid (strictly decreasing) for energy tables and the lemma ledger.
    pub eps: Vec<f64>,
    /// γ values for energy tables.
    pub gamma: Vec<f64>,
    /// γ values for the lemma ledger.
    pub lemma_gamma: Vec<f64>,
    /// ε of the single-map probes (incompressibility, INV, pairings of u_ε).
    pub probe_eps: f64,
    /// Volumetric penalty, in the syntax of [`HFunction::parse`].
    pub h_function: String,
    pub tol_abs: f64,
    pub tol_rel: f64,
    /// Output directory.
    pub out: String,
    pub formats: Vec<OutputFormat>,
    /// Seed of the quasi-random shifts.
    pub seed: u64,
    /// Regions of the energy table.
    pub regions: Vec<RegionId>,
    /// Balls of the degree suite.
    pub balls: Vec<Ball>,
    /// Samples per region for pointwise checks.
    pub samples: usize,
    /// Grid points per axis of the lemma ledger.
    pub density: usize,
}

impl Default for RunConfig {
    fn default() -> RunConfig {
        RunConfig {
            eps: vec![1e-1, 1e-2, 1e-3],
            gamma: vec![1.0 / 3.0],
            lemma_gamma: vec![0.25, 1.0 / 3.0],
            probe_eps: 0.05,
            h_function: "default".into(),
            tol_abs: 1e-10,
            tol_rel: 1e-8,
            out: "dipole-out".into(),
            formats: vec![OutputFormat::Csv, OutputFormat::Json],
            seed: 0,
            regions: vec![RegionId::CEps, RegionId::APrimeEps, RegionId::EPrimeEps],
            balls: vec![Ball::at_pole(0.3), Ball::at_origin(0.3)],
            samples: 10_000,
            density: lemma_suite::DEFAULT_DENSITY,
        }
    }
}

/// Recognized keys, grouped by section.
pub const CONFIG_KEYS: [(&str, &[&str]); 5] = [
    ("run", &["eps", "gamma", "lemma_gamma", "probe_eps", "h_function", "seed", "samples", "density"]),
    ("quadrature", &["tol_abs", "tol_rel"]),
    ("energy", &["regions"]),
    ("topology", &["ball"]),
    ("output", &["out", "format"]),
];

/// One `key = value` entry of a configuration text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigEntry {
    pub section: Option<String>,
    pub key: String,
    pub value: String,
    pub line: usize,
}

/// Splits a configuration text into entries; checks sections and keys but not values.
pub fn parse_config_text(text: &str) -> Result<Vec<ConfigEntry>> {
    let mut section: Option<String> = None;
    let mut out = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let s = raw.split('#').next().unwrap_or("").trim();
        if s.is_empty() {
            continue;
        }
        if let Some(rest) = s.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| Error::Config(format!("line {line}: malformed section header '{s}'")))?
                .trim();
            if !CONFIG_KEYS.iter().any(|(sec, _)| *sec == name) {
                return Err(Error::Config(format!("line {line}: unknown section [{name}]")));
            }
            section = Some(name.to_string());
            continue;
        }
        let (key, value) =
            s.split_once('=').ok_or_else(|| Error::Config(format!("line {line}: expected 'key = value', found '{s}'")))?;
        let key = key.trim().replace('-', "_");
        let known = match &section {
            Some(sec) => CONFIG_KEYS.iter().any(|(name, keys)| name == sec && keys.contains(&key.as_str())),
            None => CONFIG_KEYS.iter().any(|(_, keys)| keys.contains(&key.as_str())),
        };
        if !known {
            let place = section.as_deref().map(|s| format!(" in [{s}]")).unwrap_or_default();
            return Err(Error::Config(format!("line {line}: unknown key '{key}'{place}")));
        }
        out.push(ConfigEntry { section: section.clone(), key, value: value.trim().to_string(), line });
    }
    Ok(out)
}

/// Parses a real number; `p/q` fractions are accepted.
pub fn parse_number(s: &str) -> Result<f64> {
    let t = s.trim();
    let v = match t.split_once('/') {
        Some((a, b)) => {
            let (a, b) = (parse_number(a)?, parse_number(b)?);
            a / b
        }
        None => t.parse::<f64>().map_err(|_| Error::Config(format!("'{t}' is not a number")))?,
    };
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Config(format!("'{t}' is not a finite number")))
    }
}

fn parse_list<T>(s: &str, item: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    let items: Vec<&str> = s.split(',').map(str::trim).filter(|x| !x.is_empty()).collect();
    if items.is_empty() {
        return Err(Error::Config("empty list".into()));
    }
    items.into_iter().map(item).collect()
}

fn parse_count(s: &str) -> Result<usize> {
    s.trim().parse::<usize>().map_err(|_| Error::Config(format!("'{s}' is not a non-negative integer")))
}

impl RunConfig {
    /// Defaults overridden by a configuration text.
    pub fn from_text(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    /// Applies every entry of a configuration text.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for e in parse_config_text(text)? {
            self.set(&e.key, &e.value).map_err(|err| Error::Config(format!("line {}: {}", e.line, strip_prefix(err))))?;
        }
        Ok(())
    }

    /// Sets one key (the command-line override path uses the same entry point).
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('-', "_");
        let ctx = |e: Error| Error::Config(format!("{key}: {}", strip_prefix(e)));
        match key.as_str() {
            "eps" => self.eps = parse_list(value, parse_number).map_err(ctx)?,
            "gamma" => self.gamma = parse_list(value, parse_number).map_err(ctx)?,
            "lemma_gamma" => self.lemma_gamma = parse_list(value, parse_number).map_err(ctx)?,
            "probe_eps" => self.probe_eps = parse_number(value).map_err(ctx)?,
            "h_function" => {
                HFunction::parse(value.trim()).map_err(ctx)?;
                self.h_function = value.trim().to_string();
            }
            "tol_abs" => self.tol_abs = parse_number(value).map_err(ctx)?,
            "tol_rel" => self.tol_rel = parse_number(value).map_err(ctx)?,
            "out" => {
                if value.trim().is_empty() {
                    return Err(ctx(Error::Config("empty output directory".into())));
                }
                self.out = value.trim().to_string();
            }
            "format" => {
                let mut f = parse_list(value, |s| match s.to_ascii_lowercase().as_str() {
                    "csv" => Ok(OutputFormat::Csv),
                    "json" => Ok(OutputFormat::Json),
                    other => Err(Error::Config(format!("unknown format '{other}' (csv, json)"))),
                })
                .map_err(ctx)?;
                f.sort();
                f.dedup();
                self.formats = f;
            }
            "seed" => self.seed = value.trim().parse().map_err(|_| ctx(Error::Config(format!("'{value}' is not a seed"))))?,
            "samples" => self.samples = parse_count(value).map_err(ctx)?,
            "density" => self.density = parse_count(value).map_err(ctx)?,
            "regions" => {
                self.regions = if value.trim() == "all" {
                    RegionId::RECOVERY.to_vec()
                } else {
                    parse_list(value, |s| RegionId::parse(s).ok_or_else(|| Error::Config(format!("unknown region '{s}'"))))
                        .map_err(ctx)?
                }
            }
            "ball" => self.balls = value.split(';').map(|b| Ball::parse(b.trim())).collect::<Result<_>>().map_err(ctx)?,
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    /// Checks cross-field constraints.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.eps.windows(2).any(|w| w[1] >= w[0]) {
            return bad("eps must be strictly decreasing".into());
        }
        for &g in self.gamma.iter().chain(&self.lemma_gamma) {
            for &e in self.eps.iter().chain(std::iter::once(&self.probe_eps)) {
                RecoveryParams::new(e, g).map_err(|err| Error::Config(strip_prefix(err)))?;
            }
        }
        if !(self.tol_abs > 0.0 && self.tol_rel > 0.0) {
            return bad("tolerances must be positive".into());
        }
        if self.formats.is_empty() {
            return bad("no output format".into());
        }
        if self.samples < 100 {
            return bad(format!("samples = {} is below 100", self.samples));
        }
        if self.density < 4 {
            return bad(format!("density = {} is below 4", self.density));
        }
        for r in &self.regions {
            if !r.is_recovery() {
                return bad(format!("{r} is not a recovery region"));
            }
        }
        self.quad_spec().validate()
    }

    /// Quadrature specification from the tolerances.
    pub fn quad_spec(&self) -> QuadSpec {
        QuadSpec::default().with_tol(self.tol_abs, self.tol_rel)
    }

    /// The volumetric penalty.
    pub fn h(&self) -> Result<HFunction> {
        HFunction::parse(&self.h_function)
    }

    /// Canonical `key = value` pairs in section order (used to echo the configuration).
    pub fn entries(&self) -> Vec<(String, String)> {
        let list = |v: &[f64]| v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(",");
        let mut out = vec![
            ("eps".to_string(), list(&self.eps)),
            ("gamma".into(), list(&self.gamma)),
            ("lemma_gamma".into(), list(&self.lemma_gamma)),
            ("probe_eps".into(), format!("{}", self.probe_eps)),
            ("h_function".into(), self.h_function.clone()),
            ("seed".into(), self.seed.to_string()),
            ("samples".into(), self.samples.to_string()),
            ("density".into(), self.density.to_string()),
            ("tol_abs".into(), format!("{}", self.tol_abs)),
            ("tol_rel".into(), format!("{}", self.tol_rel)),
            ("regions".into(), self.regions.iter().map(|r| r.tag()).collect::<Vec<_>>().join(",")),
        ];
        let balls: Vec<String> = self.balls.iter().map(|b| format!("{},{}", b.center_x3, b.radius)).collect();
        out.push(("ball".into(), balls.join(";")));
        out.push(("out".into(), self.out.clone()));
        out.push(("format".into(), self.formats.iter().map(|f| f.tag()).collect::<Vec<_>>().join(",")));
        out
    }

    /// The configuration as a sectioned text that [`RunConfig::from_text`] reads back.
    pub fn to_text(&self) -> String {
        let entries: BTreeMap<String, String> = self.entries().into_iter().collect();
        let mut s = String::new();
        for (section, keys) in CONFIG_KEYS {
            s.push_str(&format!("[{section}]\n"));
            for k in keys {
                s.push_str(&format!("{k} = {}\n", entries[*k]));
            }
        }
        s
    }
}

fn strip_prefix(e: Error) -> String {
    match e {
        Error::Config(m) => m,
        other => other.to_string(),
    }
}

// ---------------------------------------------------------------------------
// Results
// ---------------------------------------------------------------------------

/// A table cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
    Bool(bool),
}

impl fmt::Display for Cell {
    /// Shortest round-trip text, identical on every platform.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Int(v) => write!(f, "{v}"),
            Cell::Float(v) => write!(f, "{v:?}"),
            Cell::Text(v) => write!(f, "{v}"),
            Cell::Bool(v) => write!(f, "{v}"),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Cell {
        Cell::Float(v)
    }
}
impl From<usize> for Cell {
    fn from(v: usize) -> Cell {
        Cell::Int(v as i64)
    }
}
impl From<i32> for Cell {
    fn from(v: i32) -> Cell {
        Cell::Int(v as i64)
    }
}
impl From<bool> for Cell {
    fn from(v: bool) -> Cell {
        Cell::Bool(v)
    }
}
impl From<&str> for Cell {
    fn from(v: &str) -> Cell {
        Cell::Text(v.to_string())
    }
}
impl From<String> for Cell {
    fn from(v: String) -> Cell {
        Cell::Text(v)
    }
}

/// A named table with a header row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Table {
        Table { name: name.to_string(), columns: columns.iter().map(|c| c.to_string()).collect(), rows: vec![] }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }
}

/// Verdict on one verification criterion.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Criterion {
    pub id: u32,
    pub title: String,
    pub passed: bool,
    /// Measured quantities (sorted by name).
    pub metrics: BTreeMap<String, f64>,
    /// One-line explanation of the verdict.
    pub detail: String,
}

impl Criterion {
    fn new(id: u32, title: &str) -> Criterion {
        Criterion { id, title: title.to_string(), passed: true, metrics: BTreeMap::new(), detail: String::new() }
    }

    fn metric(&mut self, name: &str, v: f64) {
        self.metrics.insert(name.to_string(), v);
    }

    /// Records a sub-condition; the criterion passes only if all do.
    fn require(&mut self, ok: bool, what: String) {
        if !self.detail.is_empty() {
            self.detail.push_str("; ");
        }
        self.detail.push_str(if ok { "ok: " } else { "FAILED: " });
        self.detail.push_str(&what);
        self.passed &= ok;
    }
}

/// Tables and verdicts of one suite.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SuiteOutput {
    pub tables: Vec<Table>,
    pub criteria: Vec<Criterion>,
}

impl SuiteOutput {
    pub fn passed(&self) -> bool {
        self.criteria.iter().all(|c| c.passed)
    }

    fn extend(&mut self, other: SuiteOutput) {
        self.tables.extend(other.tables);
        self.criteria.extend(other.criteria);
    }

    /// The verdicts as a table.
    pub fn criteria_table(&self) -> Table {
        let mut t = Table::new("criteria", &["id", "title", "passed", "metrics", "detail"]);
        for c in &self.criteria {
            let m: Vec<String> = c.metrics.iter().map(|(k, v)| format!("{k}={v:?}")).collect();
            t.push(vec![Cell::Int(c.id as i64), c.title.as_str().into(), c.passed.into(), m.join(" ").into(), c.detail.as_str().into()]);
        }
        t
    }
}

// ---------------------------------------------------------------------------
// Sampling helpers
// ---------------------------------------------------------------------------

/// Seed-dependent shift of the Halton sequence.
fn shift(seed: u64) -> [f64; 3] {
    let mut g = rng(seed);
    [g.random::<f64>(), g.random::<f64>(), g.random::<f64>()]
}

/// k-th shifted Halton point in [0, 1)³.
fn shifted_halton(k: usize, s: &[f64; 3]) -> [f64; 3] {
    let u = halton::<3>(k as u64);
    [(u[0] + s[0]).fract(), (u[1] + s[1]).fract(), (u[2] + s[2]).fract()]
}

/// Point of an incompressible region of u_ε from a point of [0, 1)³ (volume-uniform on the meridian).
fn recovery_region_point(region: RegionId, eps: f64, u: [f64; 3]) -> CartesianPoint {
    let (r, x3) = match region {
        RegionId::CEps => (eps * u[0].max(1e-12).sqrt(), u[1].clamp(1e-9, 1.0 - 1e-9)),
        RegionId::APrimeEps => {
            let (r, z) = ball_meridian_sample([u[0], u[1]], 0.0, eps);
            (r, -z.abs().max(1e-9 * eps))
        }
        _ => {
            let (r, z) = ball_meridian_sample([u[0], u[1]], 1.0, eps);
            (r, 1.0 + (z - 1.0).abs().max(1e-9 * eps))
        }
    };
    let t = 2.0 * PI * u[2];
    Vector3::new(r * t.cos(), r * t.sin(), x3)
}

fn worst<I: IntoIterator<Item = f64>>(it: I) -> f64 {
    it.into_iter().fold(0.0, |a: f64, b| if b.is_nan() { f64::INFINITY } else { a.max(b) })
}

// ---------------------------------------------------------------------------
// Suites
// ---------------------------------------------------------------------------

/// Unit determinant of u_ε on c_ε, a′_ε, e′_ε (analytic and finite-difference), and
/// the closed-form determinants of the limit map in regions a and b against finite differences.
pub fn incompressibility(cfg: &RunConfig) -> Result<SuiteOutput> {
    let eps = cfg.probe_eps;
    let gamma = cfg.gamma[0];
    let map = RecoveryMap::from_eps(eps, gamma)?;
    let s = shift(cfg.seed);
    let mut table = Table::new(
        "incompressibility",
        &["eps", "gamma", "region", "samples", "max_det_error_analytic", "fd_compared", "max_det_error_fd"],
    );
    let mut c1 = Criterion::new(1, "det Du_eps = 1 on c_eps, a'_eps, e'_eps");
    for region in [RegionId::CEps, RegionId::APrimeEps, RegionId::EPrimeEps] {
        let rows = Exec::default().map_range(cfg.samples, |k| {
            let p = recovery_region_point(region, eps, shifted_halton(k, &s));
            let analytic = match map.eval(&p) {
                Ok(j) => (determinant(&j.grad) - 1.0).abs(),
                Err(_) => f64::NAN,
            };
            let c = cart_to_cyl(&p);
            let fd = if c.r < 1e-4 * eps {
                None
            } else {
                let tag = |q: &CartesianPoint| -> Result<(CartesianPoint, (RegionId, u8))> {
                    let cq = cart_to_cyl(q);
                    let (jet, piece) = map.profile_piece(cq.r, cq.x3)?;
                    Ok((jet.value(cq.theta), (jet.region, piece)))
                };
                // Step relative to the local length scale min(r, ε²): the core of c_ε is
                // smooth along x₃ and tolerates a coarser step than the caps.
                let rel = if region == RegionId::CEps { 1e-2 } else { 1e-3 };
                let h = rel * c.r.min(eps * eps);
                fd_jacobian_adaptive(tag, &p, h, true).ok().map(|j| (determinant(&j) - 1.0).abs())
            };
            (analytic, fd)
        });
        let a = worst(rows.iter().map(|r| r.0));
        let fds: Vec<f64> = rows.iter().filter_map(|r| r.1).collect();
        let f = worst(fds.iter().copied());
        table.push(vec![eps.into(), gamma.into(), region.tag().into(), cfg.samples.into(), a.into(), fds.len().into(), f.into()]);
        c1.metric(&format!("{}_analytic", region.tag()), a);
        c1.metric(&format!("{}_fd", region.tag()), f);
        c1.require(a <= 1e-8, format!("{}: analytic max |det - 1| = {a:.3e} <= 1e-8", region.tag()));
        c1.require(f <= 1e-4 && fds.len() * 2 >= cfg.samples, format!("{}: FD max |det - 1| = {f:.3e} <= 1e-4 over {} points", region.tag(), fds.len()));
    }
    let mut out = SuiteOutput { tables: vec![table], criteria: vec![c1] };
    out.extend(closed_form_jacobians(cfg)?);
    Ok(out)
}

/// Closed-form determinants of the limit map in regions a and b against finite differences.
pub fn closed_form_jacobians(cfg: &RunConfig) -> Result<SuiteOutput> {
    let limit = LimitMap::default();
    let s = shift(cfg.seed.wrapping_add(1));
    let n = 1000;
    let mut table = Table::new("closed_form_jacobians", &["region", "samples", "compared", "max_relative_error"]);
    let mut c = Criterion::new(4, "closed-form determinants of regions a and b match finite differences");
    for (region, lo, hi) in [(RegionId::A, 0.02, 0.98), (RegionId::B, 1.02, 2.95)] {
        let errs = Exec::default().map_range(n, |k| {
            let u = shifted_halton(k, &s);
            let (r, z) = shell_meridian_sample([u[0], u[1]], 0.0, lo, hi);
            let t = 2.0 * PI * u[2];
            let p = Vector3::new(r * t.cos(), r * t.sin(), -z.abs().max(1e-6));
            let closed = limit.limit_det(&p).ok()?;
            let tag = |q: &CartesianPoint| -> Result<(CartesianPoint, (RegionId, FanPiece))> {
                let cq = cart_to_cyl(q);
                let jet = limit.profile(cq.r, cq.x3)?;
                Ok((jet.value(cq.theta), (jet.region, FanPiece::Strip)))
            };
            let fd = fd_jacobian_adaptive(tag, &p, 1e-5 * r.max(1e-3), true).ok()?;
            Some((determinant(&fd) - closed).abs() / closed.abs())
        });
        let ok: Vec<f64> = errs.iter().flatten().copied().collect();
        let w = worst(ok.iter().copied());
        table.push(vec![region.tag().into(), n.into(), ok.len().into(), w.into()]);
        c.metric(&format!("{}_max_relative_error", region.tag()), w);
        c.require(w <= 1e-5 && ok.len() * 10 >= n * 9, format!("region {}: max relative error {w:.3e} <= 1e-5 over {} points", region.tag(), ok.len()));
    }
    Ok(SuiteOutput { tables: vec![table], criteria: vec![c] })
}

/// Whether |x − target| strictly decreases along the sequence.
fn approaches(values: &[f64], target: f64) -> bool {
    values.windows(2).all(|w| (w[1] - target).abs() < (w[0] - target).abs())
}

/// Region energies of u_ε per ε and γ, the 2π concentration on c_ε and the vanishing of a′_ε ∪ e′_ε.
pub fn energy_table(cfg: &RunConfig) -> Result<SuiteOutput> {
    let h = cfg.h()?;
    let spec = cfg.quad_spec();
    let limit = LimitMap::default();
    let mut out = SuiteOutput::default();
    let mut table = Table::new(
        "energy",
        &["eps", "gamma", "region", "dirichlet", "dirichlet_err", "h_energy", "h_err", "expected", "deviation", "h_expected", "h_deviation"],
    );
    let mut parts_table = Table::new("c_eps_parts", &["eps", "gamma", "part_i", "part_ii", "part_iii", "total", "bound_iii"]);
    for &gamma in &cfg.gamma {
        let rows: Vec<EnergyRow> = energy_gap_table(&cfg.eps, gamma, &limit, &cfg.regions, &h, &spec)?;
        for r in &rows {
            table.push(vec![
                r.eps.into(),
                r.gamma.into(),
                r.region.tag().into(),
                r.dirichlet.into(),
                r.dirichlet_err.into(),
                r.h_energy.into(),
                r.h_err.into(),
                r.expected.into(),
                r.deviation.into(),
                r.h_expected.into(),
                r.h_deviation.into(),
            ]);
        }
        let of = |region: RegionId| -> Vec<&EnergyRow> { rows.iter().filter(|r| r.region == region).collect() };
        let c_rows = of(RegionId::CEps);
        if !c_rows.is_empty() {
            let mut c = Criterion::new(2, &format!("c_eps Dirichlet energy concentrates to 2 pi (gamma = {gamma})"));
            let values: Vec<f64> = c_rows.iter().map(|r| r.dirichlet).collect();
            let last = *c_rows.last().unwrap();
            let rel = (last.dirichlet - 2.0 * PI).abs() / (2.0 * PI);
            for r in &c_rows {
                c.metric(&format!("dirichlet_eps_{:e}", r.eps), r.dirichlet);
            }
            c.metric("relative_deviation_smallest_eps", rel);
            c.require(approaches(&values, 2.0 * PI), "|E - 2 pi| decreases along the eps grid".into());
            c.require(rel <= 0.15, format!("relative deviation at eps = {:e} is {rel:.3} <= 0.15", last.eps));
            let params = RecoveryParams::new(last.eps, gamma)?;
            let parts = c_region_parts(&params, &spec)?;
            let (i, ii, iii) = (parts.part_i.value, parts.part_ii.value, parts.part_iii.value);
            let bound = last.eps.powf(4.0 * (1.0 - gamma));
            parts_table.push(vec![last.eps.into(), gamma.into(), i.into(), ii.into(), iii.into(), parts.total().into(), bound.into()]);
            c.metric("part_i", i);
            c.metric("part_ii", ii);
            c.metric("part_iii", iii);
            c.require((i - 0.5).abs() <= 0.1, format!("I = {i:.4} within 0.1 of 1/2"));
            c.require((ii - 0.5).abs() <= 0.1, format!("II = {ii:.4} within 0.1 of 1/2"));
            c.require(iii <= bound + 1e-6, format!("III = {iii:.3e} <= eps^(4(1-gamma)) + 1e-6"));
            out.criteria.push(c);
        }
        let (a, e) = (of(RegionId::APrimeEps), of(RegionId::EPrimeEps));
        if !a.is_empty() && a.len() == e.len() {
            let mut c = Criterion::new(3, &format!("energies of a'_eps and e'_eps vanish like eps|ln eps|^2 (gamma = {gamma})"));
            let totals: Vec<f64> = a.iter().zip(&e).map(|(x, y)| x.dirichlet + x.h_energy + y.dirichlet + y.h_energy).collect();
            let scales: Vec<f64> = a.iter().map(|r| vanishing_scale(r.eps)).collect();
            for (r, t) in a.iter().zip(&totals) {
                c.metric(&format!("energy_eps_{:e}", r.eps), *t);
            }
            c.require(totals.windows(2).all(|w| w[1] < w[0]), "energies decrease along the eps grid".into());
            match fit_power_law(&scales, &totals) {
                Some(f) => {
                    c.metric("fitted_exponent", f.exponent);
                    c.require(f.exponent >= 0.8, format!("fitted exponent {:.3} >= 0.8 against eps|ln eps|^2", f.exponent));
                }
                None => c.require(false, "exponent fit needs at least two eps values".into()),
            }
            out.criteria.push(c);
        }
    }
    out.tables.push(table);
    if !parts_table.rows.is_empty() {
        out.tables.push(parts_table);
    }
    Ok(out)
}

/// The lemma ledger and the stereographic energy identity.
pub fn lemmas(cfg: &RunConfig) -> Result<SuiteOutput> {
    let h = cfg.h()?;
    let spec = cfg.quad_spec();
    let checks: Vec<LemmaCheck> = lemma_suite::run_registry(&cfg.eps, &cfg.lemma_gamma, cfg.density, &h, &spec)?;
    let mut table = Table::new(
        "lemmas",
        &["id", "gamma", "eps", "samples", "worst_margin", "worst_at", "fits", "passed", "statement", "notes"],
    );
    for c in &checks {
        let fits: Vec<String> = c
            .fits
            .iter()
            .map(|f| {
                let q = f.fitted_exponent.map(|q| format!("{q:.4}")).unwrap_or_else(|| "n/a".into());
                format!("{} [claimed {}, fitted {q}, {}]", f.claim, f.claimed_exponent, if f.passed { "ok" } else { "FAIL" })
            })
            .collect();
        let eps: Vec<String> = c.eps.iter().map(|e| format!("{e:e}")).collect();
        table.push(vec![
            c.id.as_str().into(),
            c.gamma.into(),
            eps.join(",").into(),
            c.samples.into(),
            c.worst_margin.into(),
            c.worst_at.as_str().into(),
            fits.join(" | ").into(),
            c.passed.into(),
            c.statement.as_str().into(),
            c.notes.join(" | ").into(),
        ]);
    }
    let mut c6 = Criterion::new(6, "auxiliary-estimate ledger passes");
    let failed: Vec<String> = checks.iter().filter(|c| !c.passed).map(|c| format!("{} (gamma = {:.4})", c.id, c.gamma)).collect();
    c6.metric("checks", checks.len() as f64);
    c6.metric("failed", failed.len() as f64);
    c6.metric("worst_margin", checks.iter().map(|c| c.worst_margin).fold(f64::INFINITY, f64::min));
    c6.require(checks.iter().all(|c| c.worst_margin >= -lemma_suite::MARGIN_SLACK), "no inequality violation beyond 1e-12".into());
    c6.require(failed.is_empty(), if failed.is_empty() { "all checks pass".into() } else { format!("failing: {}", failed.join(", ")) });

    let mut c5 = Criterion::new(5, "stereographic energy: |S - 1/2| <= 5 eps^2 |ln eps| and closed form to 1e-10");
    let tight = spec.with_tol(1e-14, 1e-13);
    for &eps in &cfg.eps {
        let p = RecoveryParams::new(eps, cfg.lemma_gamma[0])?;
        let v = lemma_suite::stereo_energy(&p, &tight)?;
        let closed = lemma_suite::stereo_energy_closed_form(eps);
        c5.metric(&format!("value_eps_{eps:e}"), v);
        c5.require((v - 0.5).abs() <= 5.0 * eps * eps * eps.ln().abs(), format!("eps = {eps:e}: |S - 1/2| = {:.3e}", (v - 0.5).abs()));
        c5.require((v - closed).abs() <= 1e-10, format!("eps = {eps:e}: |S - closed form| = {:.1e}", (v - closed).abs()));
    }
    Ok(SuiteOutput { tables: vec![table], criteria: vec![c5, c6] })
}

/// Distributional determinant of the limit map against the dipole atoms.
pub fn det_pairing_suite(cfg: &RunConfig) -> Result<SuiteOutput> {
    let limit = LimitMap::default();
    let spec = pairing_spec(cfg);
    let mut table = Table::new("det_pairing", &["test_function", "pairing", "oracle", "deviation", "c1_norm", "quad_error"]);
    let mut c = Criterion::new(7, "Det Du pairing = regular part + pi/6 (delta_P - delta_O)");
    for phi in standard_test_functions() {
        let r = det_pairing(&limit, &phi, &dipole_atoms(), 1, &spec)?;
        table.push(vec![r.test_fn.as_str().into(), r.value.into(), r.oracle.into(), r.deviation.into(), r.norm.into(), r.quad_error.into()]);
        c.metric(&format!("{}_relative_deviation", r.test_fn), r.deviation.abs() / r.norm);
        c.require(r.deviation.abs() <= 1e-3 * r.norm, format!("{}: |deviation| = {:.2e} <= 1e-3 |phi|_C1", r.test_fn, r.deviation.abs()));
    }
    Ok(SuiteOutput { tables: vec![table], criteria: vec![c] })
}

/// Pairings are evaluated at tolerances no tighter than 10⁻⁷.
fn pairing_spec(cfg: &RunConfig) -> QuadSpec {
    QuadSpec::default().with_tol(cfg.tol_abs.max(1e-7), cfg.tol_rel.max(1e-7))
}

/// Degree probes in the deformed meridian half-plane.
fn degree_probe(k: usize, s: &[f64; 3]) -> [f64; 2] {
    let u = shifted_halton(k, s);
    [1.5 * u[0], -0.6 + 2.2 * u[1]]
}

/// Degree fields, Δ fields, INV and the singular mass.
pub fn degree(cfg: &RunConfig) -> Result<SuiteOutput> {
    let limit = LimitMap::default();
    let s = shift(cfg.seed.wrapping_add(2));
    let mut out = SuiteOutput::default();

    // Winding degree against the signed-preimage oracle.
    let mut agreement = Table::new("degree_agreement", &["ball", "valid_probes", "agreeing"]);
    let mut grid_table = Table::new("degree_grid", &["ball", "y_s", "y_z", "degree"]);
    let mut histogram = Table::new("degree_histogram", &["ball", "degree", "count"]);
    let mut c8 = Criterion::new(8, "degree fields: winding = preimage count; Delta_P = +1, Delta_O = -1 in the bubble");
    for ball in &cfg.balls {
        let label = format!("{},{}", ball.center_x3, ball.radius);
        let curve = ProfileCurve::new(&limit, ball, CURVE_RESOLUTION)?;
        let probes: Vec<[f64; 2]> = (0..1000).map(|k| degree_probe(k, &s)).collect();
        let res = Exec::default().map(&probes, |y| match (curve.degree(*y), signed_preimage_degree(&limit, ball, *y)) {
            (Ok(d), Some(o)) => Some(d == o),
            _ => None,
        });
        let valid: Vec<bool> = res.into_iter().flatten().take(100).collect();
        let agree = valid.iter().filter(|v| **v).count();
        agreement.push(vec![label.as_str().into(), valid.len().into(), agree.into()]);
        c8.metric(&format!("agree_{label}"), agree as f64);
        c8.require(valid.len() == 100 && agree >= 95, format!("ball {label}: {agree} of {} valid probes agree", valid.len()));

        let grid = Grid::around_bubble(2e-2);
        let (ns, nz) = grid.shape();
        let nodes: Vec<[f64; 2]> = (0..=nz).flat_map(|j| (0..=ns).map(move |i| (i, j))).map(|(i, j)| grid.node(i, j)).collect();
        let degs = Exec::default().map(&nodes, |y| curve.degree(*y).ok());
        let mut hist: BTreeMap<i32, usize> = BTreeMap::new();
        for (y, d) in nodes.iter().zip(&degs) {
            grid_table.push(vec![label.as_str().into(), y[0].into(), y[1].into(), d.map(Cell::from).unwrap_or_else(|| "".into())]);
            if let Some(d) = d {
                *hist.entry(*d).or_default() += 1;
            }
        }
        for (d, n) in hist {
            histogram.push(vec![label.as_str().into(), d.into(), n.into()]);
        }
    }

    // Δ fields at r = 0.1.
    let grid = Grid::around_bubble(1e-2);
    let fp = delta_field(&limit, &Ball::at_pole(0.1), &grid)?;
    let fo = delta_field(&limit, &Ball::at_origin(0.1), &grid)?;
    let (mut inside, mut ok_p, mut ok_o, mut total, mut zero_sum) = (0usize, 0usize, 0usize, 0usize, 0usize);
    for j in 0..=fp.nz {
        for i in 0..=fp.ns {
            let y = grid.node(i, j);
            let (Some(a), Some(b)) = (fp.get(i, j), fo.get(i, j)) else { continue };
            total += 1;
            zero_sum += (a + b == 0) as usize;
            let on_gamma = (y[0].hypot(y[1] - BUBBLE_CENTER) - BUBBLE_RADIUS).abs() < 1e-9;
            if in_bubble(y[0], y[1]) && !on_gamma {
                inside += 1;
                ok_p += (a == 1) as usize;
                ok_o += (b == -1) as usize;
            }
        }
    }
    let frac = |a: usize, b: usize| a as f64 / b.max(1) as f64;
    c8.metric("delta_p_plus_one_fraction", frac(ok_p, inside));
    c8.metric("delta_o_minus_one_fraction", frac(ok_o, inside));
    c8.metric("delta_sum_zero_fraction", frac(zero_sum, total));
    c8.require(frac(ok_p, inside) >= 0.95, format!("Delta_P = +1 on {ok_p} of {inside} bubble probes"));
    c8.require(frac(ok_o, inside) >= 0.95, format!("Delta_O = -1 on {ok_o} of {inside} bubble probes"));
    c8.require(frac(zero_sum, total) >= 0.95, format!("Delta_P + Delta_O = 0 on {zero_sum} of {total} probes"));
    out.criteria.push(c8);

    // INV.
    let mut inv_table = Table::new(
        "inv",
        &["map", "ball", "interior_samples", "exterior_samples", "interior_violations", "exterior_violations", "skipped", "violation_fraction"],
    );
    let mut c9 = Criterion::new(9, "INV holds for u_eps and fails for the limit map");
    let rec = RecoveryMap::from_eps(cfg.probe_eps, cfg.gamma[0])?;
    let ball = Ball::at_origin(0.3);
    for (name, map) in [(format!("recovery eps={}", cfg.probe_eps), &rec as &dyn AxisymmetricMap), ("limit".to_string(), &limit)] {
        // Probes whose image lies too close to the image curve are skipped; draw
        // enough to keep `samples` decided ones.
        let mut n = cfg.samples;
        let mut r = inv_check(map, &ball, n)?;
        while r.interior_samples + r.exterior_samples < cfg.samples && n < 8 * cfg.samples {
            n += n / 4;
            r = inv_check(map, &ball, n)?;
        }
        inv_table.push(vec![
            name.as_str().into(),
            "0,0.3".into(),
            r.interior_samples.into(),
            r.exterior_samples.into(),
            r.interior_violations.into(),
            r.exterior_violations.into(),
            r.skipped.into(),
            r.violation_fraction().into(),
        ]);
        if name == "limit" {
            c9.metric("limit_violation_fraction", r.violation_fraction());
            c9.require(r.violation_fraction() > 0.0, format!("limit map: violation fraction {:.4} > 0", r.violation_fraction()));
        } else {
            c9.metric("recovery_violations", r.violations() as f64);
            let decided = r.interior_samples + r.exterior_samples;
            c9.require(r.violations() == 0 && decided >= cfg.samples, format!("u_eps: {} violations over {decided} samples", r.violations()));
        }
    }
    out.criteria.push(c9);

    // Singular mass.
    let mut mass_table = Table::new("singular_mass", &["radius", "mass"]);
    let m = singular_mass(&limit, &[0.4, 0.2, 0.1], &grid)?;
    for (r, v) in &m.per_radius {
        mass_table.push(vec![(*r).into(), (*v).into()]);
    }
    mass_table.push(vec![0.0.into(), m.extrapolated.into()]);
    let mut c10 = Criterion::new(10, "singular mass of the inverse = pi");
    c10.metric("extrapolated", m.extrapolated);
    c10.require((m.extrapolated - PI).abs() <= 0.02 * PI, format!("extrapolated mass {:.5} within 2% of pi", m.extrapolated));
    out.criteria.push(c10);

    out.tables.extend([agreement, grid_table, histogram, inv_table, mass_table]);
    Ok(out)
}

/// ∫ over the disk {r < ε} × {x₃} of the area–energy residual and of ½|Du|² (weights r dr).
pub fn cross_section_residual(map: &RecoveryMap, x3: f64, spec: &QuadSpec) -> Result<(f64, f64)> {
    let eps = map.params.eps;
    let grading = [GradeEdge { at: 0.0, min_cell: 1e-4 * eps * eps }];
    let integrand = |which: u8| {
        move |r: f64| {
            if r == 0.0 {
                return 0.0;
            }
            match map.profile(r, x3) {
                Ok(j) => {
                    let g = j.grad(0.0);
                    r * if which == 0 { area_energy_residual(&g) } else { 0.5 * g.norm_squared() }
                }
                Err(_) => f64::NAN,
            }
        }
    };
    let res = integrate_1d(integrand(0), 0.0, eps, &[eps * eps], &grading, spec)?.value;
    let en = integrate_1d(integrand(1), 0.0, eps, &[eps * eps], &grading, spec)?.value;
    Ok((res, en))
}

/// Area–energy inequality and the surface-energy pairing.
pub fn surface(cfg: &RunConfig) -> Result<SuiteOutput> {
    let limit = LimitMap::default();
    let rec = RecoveryMap::from_eps(cfg.probe_eps, cfg.gamma[0])?;
    let s = shift(cfg.seed.wrapping_add(3));
    let mut out = SuiteOutput::default();

    // Pointwise inequality at 10⁵ jets (half per map, volume-uniform in B(0,3)).
    let mut c11 = Criterion::new(11, "area-energy inequality; asymptotic equality on c_eps cross-sections");
    let mut ae = Table::new("area_energy", &["map", "samples", "min_scaled_residual"]);
    let n = 50_000;
    for (name, map) in [("limit", &limit as &dyn AxisymmetricMap), ("recovery", &rec)] {
        let vals = Exec::default().map_range(n, |k| {
            let u = shifted_halton(k, &s);
            let (r, z) = ball_meridian_sample([u[0], u[1]], 0.0, 2.999);
            let t = 2.0 * PI * u[2];
            let p = Vector3::new(r * t.cos(), r * t.sin(), z);
            map.eval(&p).ok().map(|j| area_energy_residual(&j.grad) / (1.0 + 0.5 * j.grad.norm_squared()))
        });
        let ok: Vec<f64> = vals.into_iter().flatten().collect();
        let min = ok.iter().copied().fold(f64::INFINITY, f64::min);
        ae.push(vec![name.into(), ok.len().into(), min.into()]);
        c11.metric(&format!("{name}_min_scaled_residual"), min);
        c11.require(min >= -1e-9 && ok.len() * 100 >= n * 99, format!("{name}: min residual/scale {min:.2e} >= -1e-9 over {} jets", ok.len()));
    }
    // Asymptotic equality: cross-section ratio ∫res / ∫|Du|² at the smallest ε of the grid.
    let mut cs = Table::new("cross_section_conformality", &["eps", "gamma", "x3", "residual", "dirichlet", "ratio"]);
    let spec = cfg.quad_spec().with_tol(1e-14, 1e-8);
    let gamma = cfg.gamma[0];
    let mut last = Vec::new();
    for &eps in &cfg.eps {
        let map = RecoveryMap::from_eps(eps, gamma)?;
        last.clear();
        for x3 in [0.25, 0.5, 0.75] {
            let (res, half) = cross_section_residual(&map, x3, &spec)?;
            let ratio = res / (2.0 * half);
            cs.push(vec![eps.into(), gamma.into(), x3.into(), res.into(), (2.0 * half).into(), ratio.into()]);
            last.push(ratio);
        }
    }
    let r = worst(last.iter().copied());
    let e_min = *cfg.eps.last().unwrap();
    c11.metric("cross_section_ratio_smallest_eps", r);
    c11.require(r <= 1e-3, format!("eps = {e_min:e}: cross-section residual / |Du|^2 = {r:.3e} <= 1e-3"));
    out.criteria.push(c11);

    // Surface energy.
    let spec = pairing_spec(cfg);
    let mut c12 = Criterion::new(12, "surface energy E_u(f) matches the bubble oracle; dictionary supremum >= 0.9 * 2 pi");
    let mut st = Table::new("surface_pairing", &["field", "pairing", "oracle", "deviation", "sup_norm"]);
    let dict = surface_dictionary();
    let sign = calibrate_orientation(&limit, &dict[0], &spec)?;
    let rows = Exec::default().map(&dict, |f| -> Result<_> {
        let oracle = sign * bubble_oracle(f, &spec)?;
        surface_pairing(&limit, f, oracle, &spec)
    });
    let mut sup: f64 = 0.0;
    for (k, r) in rows.into_iter().enumerate() {
        let r = r?;
        st.push(vec![r.test_fn.as_str().into(), r.value.into(), r.oracle.into(), r.deviation.into(), r.norm.into()]);
        // The dictionary is closed under f ↦ −f, so its supremum is max |E_u(f)| / ‖f‖_∞.
        sup = sup.max(r.value.abs() / r.norm);
        if k < 3 {
            c12.metric(&format!("{}_relative_deviation", r.test_fn), r.deviation.abs() / r.oracle.abs());
            c12.require(r.deviation.abs() <= 0.01 * r.oracle.abs(), format!("{}: deviation {:.2e} within 1%", r.test_fn, r.deviation.abs()));
        }
    }
    c12.metric("dictionary_supremum", sup);
    c12.require(sup >= 0.9 * 2.0 * PI, format!("supremum {sup:.5} >= 0.9 * 2 pi"));
    out.criteria.push(c12);
    out.tables.extend([ae, cs, st]);
    Ok(out)
}

/// Every suite plus an in-process determinism probe.
pub fn report(cfg: &RunConfig) -> Result<SuiteOutput> {
    let mut out = SuiteOutput::default();
    let mut energy_cfg = cfg.clone();
    energy_cfg.regions = vec![RegionId::CEps, RegionId::APrimeEps, RegionId::EPrimeEps];
    out.extend(incompressibility(cfg)?);
    out.extend(energy_table(&energy_cfg)?);
    out.extend(lemmas(cfg)?);
    out.extend(det_pairing_suite(cfg)?);
    out.extend(degree(cfg)?);
    out.extend(surface(cfg)?);

    let mut c13 = Criterion::new(13, "identical configuration and seed reproduce identical results");
    let a = incompressibility(cfg)?;
    let b = incompressibility(cfg)?;
    let same = format!("{a:?}") == format!("{b:?}");
    c13.require(same, "incompressibility suite re-run in process is bit-identical (the file-level check compares two runs of the binary)".into());
    out.criteria.push(c13);
    out.criteria.sort_by_key(|c| c.id);
    Ok(out)
}

/// Version strings embedded in JSON outputs.
pub fn versions() -> BTreeMap<String, String> {
    let mut v = BTreeMap::new();
    v.insert("dipole-lab".to_string(), env!("CARGO_PKG_VERSION").to_string());
    v.insert("output-format".to_string(), "1".to_string());
    v
}
