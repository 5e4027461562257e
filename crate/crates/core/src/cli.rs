//! The `sps` command line.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::evolution::{evolve, perturb, EnsembleState};
use crate::io::{read_csv, read_json, write_csv, write_json, Header};
use crate::stability::{audit_series, StabilityReport};
use crate::steady_state::{solve_steady, SteadyState};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;
pub const EXIT_AUDIT: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "sps", version, about = "Steady states and stability audits for the mixed-state Schrödinger-Poisson system")]
pub struct Cli {
    /// TOML configuration file; defaults apply when omitted
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for randomized perturbations (overrides perturb.seed)
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (overrides output.dir)
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve for the steady state and write steady_state.json, V0.csv, density.csv, spectrum.csv
    Steady,
    /// Propagate the (perturbed) steady ensemble and write trace.csv
    Evolve {
        /// steady_state.json to start from (default: <out>/steady_state.json)
        #[arg(long)]
        steady: Option<PathBuf>,
    },
    /// Audit the stability bound along a trace and write stability_report.json, margins.csv
    Stability {
        /// steady_state.json the trace was started from (default: <out>/steady_state.json)
        #[arg(long)]
        steady: Option<PathBuf>,
        /// trace.csv to audit (default: <out>/trace.csv)
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Tabulate f, F and F* for the configured equation of state into eos.csv
    EosTable,
    /// Run the built-in invariant suites
    Selfcheck,
}

/// Exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Quadrature { .. }
        | Error::Eigen(_)
        | Error::Truncation { .. }
        | Error::NonConvergence { .. }
        | Error::Numerical(_) => EXIT_NUMERICAL,
        _ => EXIT_CONFIG,
    }
}

#[derive(Serialize, Deserialize)]
struct SteadyDocument {
    header: Header,
    #[serde(rename = "K")]
    k: usize,
    #[serde(flatten)]
    steady: SteadyState,
}

#[derive(Serialize)]
struct ReportDocument<'a> {
    header: &'a Header,
    #[serde(flatten)]
    report: &'a StabilityReport,
}

struct Context {
    cfg: RunConfig,
    header: Header,
    out: PathBuf,
}

impl Context {
    fn new(cli: &Cli) -> Result<Self> {
        let mut cfg = RunConfig::load(cli.config.as_deref())?;
        if let Some(seed) = cli.seed {
            cfg.perturb.seed = seed;
        }
        if let Some(out) = &cli.out {
            cfg.output.dir = out.to_string_lossy().into_owned();
        }
        let out = PathBuf::from(&cfg.output.dir);
        fs::create_dir_all(&out)?;
        let header = Header::new(cfg.hash(), cfg.perturb.seed);
        Ok(Self { cfg, header, out })
    }

    fn path(&self, explicit: &Option<PathBuf>, name: &str) -> PathBuf {
        explicit.clone().unwrap_or_else(|| self.out.join(name))
    }
}

fn steady_meta(s: &SteadyState) -> serde_json::Value {
    json!({
        "grid": s.grid,
        "eos": s.eos,
        "total_charge": s.total_charge,
        "sigma0": s.sigma0,
    })
}

fn run_steady(ctx: &Context) -> Result<i32> {
    let grid = ctx.cfg.grid_spec()?;
    let eos = ctx.cfg.eos()?;
    let opts = ctx.cfg.solver_options()?;
    let s = solve_steady(&eos, ctx.cfg.solver.total_charge, &grid, &opts)?;
    let meta = steady_meta(&s);
    let nodes = grid.nodes();
    let v_rows: Vec<Vec<f64>> = nodes.iter().zip(&s.potential).map(|(x, v)| vec![*x, *v]).collect();
    let n_rows: Vec<Vec<f64>> = nodes.iter().zip(&s.density).map(|(x, n)| vec![*x, *n]).collect();
    let spec_rows: Vec<Vec<f64>> = s
        .spectral
        .mu
        .iter()
        .zip(&s.lambda0)
        .enumerate()
        .map(|(i, (m, l))| vec![(i + 1) as f64, *m, *l])
        .collect();
    write_csv(&ctx.out.join("V0.csv"), &ctx.header, Some(&meta), &["x", "V0"], &v_rows)?;
    write_csv(&ctx.out.join("density.csv"), &ctx.header, Some(&meta), &["x", "n"], &n_rows)?;
    write_csv(&ctx.out.join("spectrum.csv"), &ctx.header, Some(&meta), &["k", "mu", "lambda"], &spec_rows)?;
    let c = &s.certificates;
    println!(
        "steady: {} iterations, sigma0 = {:.12e}, poisson residual {:.2e}, charge residual {:.2e}, |Phi - H_C| = {:.2e}",
        c.iterations,
        s.sigma0,
        c.poisson_residual_inf,
        c.charge_residual,
        (c.phi_value - c.hc_value).abs()
    );
    let doc = SteadyDocument { header: ctx.header.clone(), k: s.lambda0.len(), steady: s };
    write_json(&ctx.out.join("steady_state.json"), &doc)?;
    Ok(EXIT_OK)
}

fn load_steady(path: &Path) -> Result<SteadyState> {
    let doc: SteadyDocument = read_json(path)?;
    Ok(doc.steady)
}

fn run_evolve(ctx: &Context, steady_path: &Path) -> Result<i32> {
    let s = load_steady(steady_path)?;
    let grid = s.grid;
    let base = EnsembleState::from_steady(&s, ctx.cfg.evolution.buffer)?;
    let kind = ctx.cfg.perturb_kind()?;
    let initial = perturb(&base, &grid, kind, ctx.cfg.perturb.eps, ctx.cfg.perturb.seed)?;
    let (trace, _) = evolve(&initial, &grid, &s.eos, &ctx.cfg.evolution_options(), Some(&s.potential))?;
    let rows: Vec<Vec<f64>> = trace
        .samples
        .iter()
        .map(|p| vec![p.t, p.mass_dev, p.energy, p.energy_casimir, p.dist.unwrap_or(f64::NAN)])
        .collect();
    let (dh, dhc) = trace.drifts();
    let meta = json!({
        "grid": grid,
        "eos": s.eos,
        "total_charge": trace.total_charge,
        "sigma0": s.sigma0,
        "perturb": {"kind": ctx.cfg.perturb.kind, "eps": ctx.cfg.perturb.eps, "seed": ctx.cfg.perturb.seed},
        "dt": ctx.cfg.evolution.dt,
        "max_step_mass_change": trace.max_step_mass_change,
        "max_orthonormality_defect": trace.max_orthonormality_defect,
        "orthonormal": trace.orthonormal,
    });
    write_csv(&ctx.out.join("trace.csv"), &ctx.header, Some(&meta), &["t", "mass_dev", "H", "H_C", "dist"], &rows)?;
    println!(
        "evolve: {} samples, H drift {dh:.2e}, H_C drift {dhc:.2e}, max step mass change {:.2e}",
        trace.samples.len(),
        trace.max_step_mass_change
    );
    if !trace.orthonormal {
        eprintln!(
            "warning: orthonormality defect {:.2e} exceeds tolerance",
            trace.max_orthonormality_defect
        );
    }
    Ok(EXIT_OK)
}

fn run_stability(ctx: &Context, steady_path: &Path, trace_path: &Path) -> Result<i32> {
    let s = load_steady(steady_path)?;
    let table = read_csv(trace_path)?;
    let meta = table.meta.clone().ok_or_else(|| Error::Config("trace.csv lacks its meta line".into()))?;
    if meta["grid"] != json!(s.grid) || meta["eos"] != json!(s.eos) {
        return Err(Error::Domain("trace and steady state disagree on grid or equation of state".into()));
    }
    let charge = meta["total_charge"]
        .as_f64()
        .ok_or_else(|| Error::Config("trace meta lacks total_charge".into()))?;
    let times = table.column("t")?;
    let hc = table.column("H_C")?;
    let dist = table.column("dist")?;
    if dist.iter().any(|d| d.is_nan()) {
        return Err(Error::Config("trace.csv has no distance column values".into()));
    }
    let report = audit_series(&s, &times, &hc, &dist, charge, ctx.cfg.stability.tol)?;
    write_json(&ctx.out.join("stability_report.json"), &ReportDocument { header: &ctx.header, report: &report })?;
    let rows: Vec<Vec<f64>> = times.iter().zip(&dist).map(|(t, d)| vec![*t, *d, report.bound - d]).collect();
    write_csv(
        &ctx.out.join("margins.csv"),
        &ctx.header,
        Some(&json!({"bound": report.bound, "tol": report.tol})),
        &["t", "dist", "margin"],
        &rows,
    )?;
    println!(
        "stability: B = {:.6e}, margin = {:.6e}, H_C drift {:.2e}, {} violations -> {}",
        report.bound,
        report.margin,
        report.hc_drift,
        report.violations.len(),
        if report.pass { "pass" } else { "FAIL" }
    );
    Ok(if report.pass { EXIT_OK } else { EXIT_AUDIT })
}

fn run_eos_table(ctx: &Context) -> Result<i32> {
    let eos = ctx.cfg.eos()?;
    let rows = (0..=160)
        .map(|i| {
            let s = -4.0 + 0.1 * i as f64;
            let f = eos.f(s)?;
            Ok(vec![s, f, eos.tail_integral(s)?, f, eos.conjugate(-f)?])
        })
        .collect::<Result<Vec<_>>>()?;
    let meta = json!({"eos": eos});
    write_csv(&ctx.out.join("eos.csv"), &ctx.header, Some(&meta), &["s", "f", "F", "lambda", "Fstar"], &rows)?;
    println!("eos-table: {} rows for {}", rows.len(), eos.describe());
    Ok(EXIT_OK)
}

fn run_selfcheck(ctx: &Context) -> i32 {
    let results = crate::selfcheck::run_all(ctx.cfg.perturb.seed);
    let mut ok = true;
    for r in &results {
        println!("{} {}: {}", if r.pass { "PASS" } else { "FAIL" }, r.name, r.detail);
        ok &= r.pass;
    }
    if ok {
        EXIT_OK
    } else {
        EXIT_AUDIT
    }
}

fn dispatch(cli: &Cli) -> Result<i32> {
    let ctx = Context::new(cli)?;
    match &cli.command {
        Command::Steady => run_steady(&ctx),
        Command::Evolve { steady } => run_evolve(&ctx, &ctx.path(steady, "steady_state.json")),
        Command::Stability { steady, trace } => {
            run_stability(&ctx, &ctx.path(steady, "steady_state.json"), &ctx.path(trace, "trace.csv"))
        }
        Command::EosTable => run_eos_table(&ctx),
        Command::Selfcheck => Ok(run_selfcheck(&ctx)),
    }
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
