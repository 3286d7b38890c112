//! `dipole` — command-line runner for the verification suites of the harmonic
//! dipole and its incompressible recovery sequence.
//!
//! Every subcommand evaluates one suite of `dipole_lab::report`, writes its
//! tables as RFC-4180 CSV files (one per table, header row first) and/or one
//! JSON document `{config, results[], versions}` into the output directory,
//! and prints one PASS/FAIL line per criterion.
//!
//! Exit codes: 0 — all criteria pass; 2 — a numerical failure (failed criterion
//! or a numerical error); 3 — configuration error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use dipole_lab::report::{self, Cell, OutputFormat, RunConfig, SuiteOutput, Table};
use dipole_lab::Error;
use serde_json::{json, Map, Value};

#[derive(Parser, Debug)]
#[command(name = "dipole", version, about = "Verification suites for the harmonic dipole and its incompressible recovery sequence")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Region energies of u_ε, the 2π concentration and the vanishing regions.
    EnergyTable,
    /// The auxiliary-estimate ledger and the stereographic energy identity.
    Lemmas,
    /// Unit determinant of u_ε and the closed-form limit Jacobians.
    Incompressibility,
    /// Degree and Δ fields, INV and the singular mass.
    Degree,
    /// Distributional determinant against the dipole atoms.
    DetPairing,
    /// Area–energy inequality and the surface-energy pairing.
    Surface,
    /// Every suite plus the determinism probe.
    Report,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::EnergyTable => "energy-table",
            Command::Lemmas => "lemmas",
            Command::Incompressibility => "incompressibility",
            Command::Degree => "degree",
            Command::DetPairing => "det-pairing",
            Command::Surface => "surface",
            Command::Report => "report",
        }
    }

    fn run(self, cfg: &RunConfig) -> dipole_lab::Result<SuiteOutput> {
        match self {
            Command::EnergyTable => report::energy_table(cfg),
            Command::Lemmas => report::lemmas(cfg),
            Command::Incompressibility => report::incompressibility(cfg),
            Command::Degree => report::degree(cfg),
            Command::DetPairing => report::det_pairing_suite(cfg),
            Command::Surface => report::surface(cfg),
            Command::Report => report::report(cfg),
        }
    }
}

/// Command-line overrides; each maps onto the configuration key of the same name.
#[derive(Args, Debug, Default)]
struct Overrides {
    /// Configuration file (`key = value` lines, optional `[section]` headers).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Strictly decreasing ε grid, e.g. `0.1,0.01,0.001`.
    #[arg(long, global = true)]
    eps: Option<String>,
    /// γ values, e.g. `1/3`.
    #[arg(long, global = true)]
    gamma: Option<String>,
    /// γ values of the lemma ledger.
    #[arg(long, global = true)]
    lemma_gamma: Option<String>,
    /// ε of the single-map probes.
    #[arg(long, global = true)]
    probe_eps: Option<String>,
    /// Volumetric penalty: `default`, `power:a,b` or `custom:a,b,c`.
    #[arg(long, global = true)]
    h_function: Option<String>,
    /// Absolute quadrature tolerance.
    #[arg(long, global = true)]
    tol_abs: Option<String>,
    /// Relative quadrature tolerance.
    #[arg(long, global = true)]
    tol_rel: Option<String>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<String>,
    /// Output formats: `csv`, `json` or `csv,json`.
    #[arg(long, global = true)]
    format: Option<String>,
    /// Seed of the quasi-random shifts.
    #[arg(long, global = true)]
    seed: Option<String>,
    /// Regions of the energy table (tags such as `c_eps,a_prime_eps`, or `all`).
    #[arg(long, global = true)]
    regions: Option<String>,
    /// Balls of the degree suite, e.g. `P,0.3;O,0.3` (repeatable).
    #[arg(long, global = true)]
    ball: Vec<String>,
    /// Samples per region for pointwise checks.
    #[arg(long, global = true)]
    samples: Option<String>,
    /// Grid points per axis of the lemma ledger.
    #[arg(long, global = true)]
    density: Option<String>,
}

impl Overrides {
    fn pairs(&self) -> Vec<(&'static str, String)> {
        let mut v = Vec::new();
        let mut add = |k: &'static str, o: &Option<String>| {
            if let Some(s) = o {
                v.push((k, s.clone()));
            }
        };
        add("eps", &self.eps);
        add("gamma", &self.gamma);
        add("lemma_gamma", &self.lemma_gamma);
        add("probe_eps", &self.probe_eps);
        add("h_function", &self.h_function);
        add("tol_abs", &self.tol_abs);
        add("tol_rel", &self.tol_rel);
        add("out", &self.out);
        add("format", &self.format);
        add("seed", &self.seed);
        add("regions", &self.regions);
        add("samples", &self.samples);
        add("density", &self.density);
        if !self.ball.is_empty() {
            v.push(("ball", self.ball.join(";")));
        }
        v
    }
}

/// Failures, by exit code.
enum Failure {
    Config(String),
    Numerical(String),
}

fn build_config(o: &Overrides) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &o.config {
        let text = fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
        cfg.apply_text(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    }
    for (k, v) in o.pairs() {
        cfg.set(k, &v).map_err(|e| Failure::Config(format!("--{}: {e}", k.replace('_', "-"))))?;
    }
    cfg.validate().map_err(|e| Failure::Config(e.to_string()))?;
    Ok(cfg)
}

fn cell_json(c: &Cell) -> Value {
    match c {
        Cell::Int(v) => json!(v),
        // Non-finite values become null.
        Cell::Float(v) => json!(v),
        Cell::Text(v) => json!(v),
        Cell::Bool(v) => json!(v),
    }
}

fn table_json(t: &Table) -> Value {
    let rows: Vec<Value> = t
        .rows
        .iter()
        .map(|r| Value::Object(t.columns.iter().cloned().zip(r.iter().map(cell_json)).collect::<Map<_, _>>()))
        .collect();
    json!({ "kind": "table", "name": t.name, "columns": t.columns, "rows": rows })
}

/// The JSON document `{config, results[], versions}`. The output directory is not
/// echoed, so runs differing only in `--out` produce identical documents.
fn document(command: Command, cfg: &RunConfig, out: &SuiteOutput) -> Value {
    let config: Map<String, Value> =
        cfg.entries().into_iter().filter(|(k, _)| k != "out").map(|(k, v)| (k, Value::String(v))).collect();
    let mut results: Vec<Value> = out
        .criteria
        .iter()
        .map(|c| {
            json!({
                "kind": "criterion",
                "id": c.id,
                "title": c.title,
                "passed": c.passed,
                "metrics": c.metrics,
                "detail": c.detail,
            })
        })
        .collect();
    results.extend(out.tables.iter().map(table_json));
    json!({
        "command": command.name(),
        "config": config,
        "results": results,
        "versions": report::versions(),
    })
}

fn write_csv(path: &Path, t: &Table) -> anyhow::Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_path(path)?;
    w.write_record(&t.columns)?;
    for r in &t.rows {
        w.write_record(r.iter().map(|c| c.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

fn write_outputs(command: Command, cfg: &RunConfig, out: &SuiteOutput) -> anyhow::Result<Vec<PathBuf>> {
    let dir = PathBuf::from(&cfg.out);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut written = Vec::new();
    let stem = command.name().replace('-', "_");
    for f in &cfg.formats {
        match f {
            OutputFormat::Csv => {
                let mut tables = out.tables.clone();
                tables.push(out.criteria_table());
                for t in &tables {
                    let file = if t.name.starts_with(&stem) { t.name.clone() } else { format!("{stem}_{}", t.name) };
                    let path = dir.join(format!("{file}.csv"));
                    write_csv(&path, t).with_context(|| format!("writing {}", path.display()))?;
                    written.push(path);
                }
            }
            OutputFormat::Json => {
                let path = dir.join(format!("{stem}.json"));
                let mut text = serde_json::to_string_pretty(&document(command, cfg, out))?;
                text.push('\n');
                fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
                written.push(path);
            }
        }
    }
    Ok(written)
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let cfg = build_config(&cli.overrides)?;
    let out = cli.command.run(&cfg).map_err(|e| match e {
        Error::Config(_) | Error::HypothesisViolated(_) => Failure::Config(e.to_string()),
        other => Failure::Numerical(other.to_string()),
    })?;
    let files = write_outputs(cli.command, &cfg, &out).map_err(|e| Failure::Config(format!("{e:#}")))?;
    for c in &out.criteria {
        println!("[{}] criterion {:>2}: {} — {}", if c.passed { "PASS" } else { "FAIL" }, c.id, c.title, c.detail);
    }
    for f in files {
        println!("wrote {}", f.display());
    }
    if out.passed() {
        Ok(())
    } else {
        let failed: Vec<String> = out.criteria.iter().filter(|c| !c.passed).map(|c| c.id.to_string()).collect();
        Err(Failure::Numerical(format!("failed criteria: {}", failed.join(", "))))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 3 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("configuration error: {m}");
            ExitCode::from(3)
        }
        Err(Failure::Numerical(m)) => {
            eprintln!("numerical failure: {m}");
            ExitCode::from(2)
        }
    }
}
