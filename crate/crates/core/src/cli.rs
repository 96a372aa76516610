//! `broken-drift` command line interface.
//!
//! Exit codes: 0 success (and verified), 1 verification failure or Monte
//! Carlo disagreement, 2 usage error, 3 numerical failure.
//!
//! CSV output uses a header row, `\n` line endings and 17 significant
//! digits (`{:.16e}`), so every number round-trips exactly.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::exec::{configure_threads, Execution};
use crate::gfuncs::{g_minus, g_minus_local_min, g_plus};
use crate::mc::{estimate_stopped_value, McConfig, McEstimate, DEFAULT_PATHS, DEFAULT_SEED, DEFAULT_STEP};
use crate::model::{make_model, DiscountedModel, ModelParams};
use crate::solver::{Regime, Solver, StoppingRegion, Tolerances};
use crate::value::{build_value, reward, verify, ValueFunction, VerificationReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Environment variable capping Monte Carlo threads (0 = automatic).
pub const THREADS_ENV: &str = "BROKEN_DRIFT_THREADS";

#[derive(Debug, Parser)]
#[command(name = "broken-drift", version, about = "Optimal stopping of Brownian motion with broken drift")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve and verify one parameter set.
    Solve(SolveArgs),
    /// Stopping boundaries over a range of discount rates (CSV).
    Sweep(SweepArgs),
    /// psi, phi, G-, G+, V and g on an x grid (CSV plus a gnuplot script).
    Plotdata(PlotArgs),
    /// Monte Carlo estimate against the analytic value.
    Mc(McArgs),
}

#[derive(Debug, Args, Clone, Copy)]
struct ModelArgs {
    #[arg(long, allow_negative_numbers = true)]
    mu1: f64,
    /// Drift on x >= 0 (ignored with --classical).
    #[arg(long, allow_negative_numbers = true)]
    mu2: Option<f64>,
    /// Equal drift mu1 on both half-lines (closed-form test case).
    #[cfg(feature = "classical")]
    #[arg(long)]
    classical: bool,
}

#[derive(Debug, Args, Clone, Copy)]
struct TolArgs {
    /// Relative bracket width for thresholds.
    #[arg(long, default_value_t = Tolerances::default().root)]
    tol_root: f64,
    /// Relative monotonicity tolerance for the excessivity check.
    #[arg(long, default_value_t = Tolerances::default().verify)]
    tol_verify: f64,
}

impl TolArgs {
    fn tolerances(&self) -> Result<Tolerances, Failure> {
        for (name, v) in [("--tol-root", self.tol_root), ("--tol-verify", self.tol_verify)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(usage(format!("{name} must be a finite nonnegative number, got {v}")));
            }
        }
        Ok(Tolerances { root: self.tol_root, verify: self.tol_verify, ..Tolerances::default() })
    }
}

#[derive(Debug, Args)]
struct SolveArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, allow_negative_numbers = true)]
    r: f64,
    #[arg(long, conflicts_with = "csv")]
    json: bool,
    #[arg(long)]
    csv: bool,
    #[command(flatten)]
    tol: TolArgs,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, allow_negative_numbers = true)]
    r_min: f64,
    #[arg(long, allow_negative_numbers = true)]
    r_max: f64,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    tol: TolArgs,
}

#[derive(Debug, Args)]
struct PlotArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, allow_negative_numbers = true)]
    r: f64,
    #[arg(long, allow_negative_numbers = true)]
    x_min: f64,
    #[arg(long, allow_negative_numbers = true)]
    x_max: f64,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct McArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, allow_negative_numbers = true)]
    r: f64,
    #[arg(long, allow_negative_numbers = true)]
    x0: f64,
    #[arg(long, default_value_t = DEFAULT_PATHS)]
    paths: usize,
    #[arg(long, default_value_t = DEFAULT_STEP)]
    dt: f64,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Truncation time (default 50 / r).
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    antithetic: bool,
}

/// Command failure with the exit code it maps to.
#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if e.is_numerical() || matches!(e, Error::Range { .. }) {
            EXIT_NUMERICAL
        } else {
            EXIT_USAGE
        };
        Failure { code, message: e.to_string() }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure { code: EXIT_NUMERICAL, message: format!("{}: {e}", path.display()) }
}

fn usage(message: String) -> Failure {
    Failure { code: EXIT_USAGE, message }
}

/// Formats a float with 17 significant digits; NaN/inf become empty fields.
pub fn csv_float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        String::new()
    }
}

fn csv_opt(x: Option<f64>) -> String {
    x.map(csv_float).unwrap_or_default()
}

/// A parsed model, possibly the equal-drift test case.
#[derive(Debug, Clone, Copy)]
struct Setup {
    params: ModelParams,
    classical: bool,
}

impl ModelArgs {
    fn setup(&self) -> Result<Setup, Failure> {
        #[cfg(feature = "classical")]
        if self.classical {
            return Ok(Setup { params: ModelParams::equal_drift(self.mu1)?, classical: true });
        }
        let mu2 = self.mu2.ok_or_else(|| usage("--mu2 is required".into()))?;
        Ok(Setup { params: ModelParams::new(self.mu1, mu2)?, classical: false })
    }
}

impl Setup {
    fn regime(&self, solver: &Solver, r: f64) -> Result<Option<Regime>, Failure> {
        if self.classical {
            make_model(self.params, r)?;
            return Ok(None);
        }
        Ok(Some(solver.classify_regime(&self.params, r)?))
    }

    fn region(&self, solver: &Solver, r: f64, regime: Option<Regime>) -> Result<StoppingRegion, Failure> {
        Ok(match regime {
            None => StoppingRegion::OneSided { c: solver.solve_one_sided(&make_model(self.params, r)?)? },
            Some(regime) => solver.region_for(&self.params, r, regime)?,
        })
    }

    fn r0(&self, solver: &Solver) -> Result<Option<crate::solver::CriticalRate>, Failure> {
        if self.classical || !self.params.wide_gap() {
            return Ok(None);
        }
        Ok(Some(solver.find_r0(&self.params)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationSummary {
    pub pass: bool,
    pub excessive: bool,
    pub majorant: bool,
    pub smooth_fit: bool,
    pub i_violation: f64,
    pub d_violation: f64,
    pub min_gap: f64,
    pub min_gap_at: f64,
    pub max_smooth_fit_residual: f64,
    pub far_end_value_gap: Option<f64>,
    pub far_end_slope_gap: Option<f64>,
    pub grid_points: usize,
}

impl From<&VerificationReport> for VerificationSummary {
    fn from(rep: &VerificationReport) -> Self {
        Self {
            pass: rep.pass,
            excessive: rep.excessive.pass,
            majorant: rep.majorant.pass,
            smooth_fit: rep.smooth_fit.iter().all(|s| s.pass),
            i_violation: rep.excessive.i_violation,
            d_violation: rep.excessive.d_violation,
            min_gap: rep.majorant.min_gap,
            min_gap_at: rep.majorant.argmin,
            max_smooth_fit_residual: rep.smooth_fit.iter().map(|s| s.residual).fold(0.0, f64::max),
            far_end_value_gap: rep.far_end_mismatch.map(|m| m.0),
            far_end_slope_gap: rep.far_end_mismatch.map(|m| m.1),
            grid_points: rep.grid_points,
        }
    }
}

/// Output record of `solve`; field names are part of the JSON schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub mu1: f64,
    pub mu2: f64,
    pub r: f64,
    /// Regime tag, or `Classical` for the equal-drift test case.
    pub regime: String,
    pub region: StoppingRegion,
    pub r0: Option<f64>,
    pub r0_bracket: Option<(f64, f64)>,
    pub tangent_point: Option<f64>,
    /// `G-` at `x0 = (mu2 - r) / r` in the bubble regime (expected positive).
    pub g_minus_local_min: Option<f64>,
    pub verification: VerificationSummary,
    pub version: String,
    pub tolerances: Tolerances,
}

impl SolveResult {
    pub const CSV_HEADER: &'static str = "mu1,mu2,r,regime,kind,c,c1,c2,c3,r0,pass,excessive,majorant,smooth_fit,i_violation,d_violation,min_gap,max_smooth_fit_residual,version";

    pub fn csv_row(&self) -> String {
        let (kind, c, c1, c2, c3) = match self.region {
            StoppingRegion::OneSided { c } => ("one_sided", Some(c), None, None, None),
            StoppingRegion::Bubble { c1, c2, c3 } => ("bubble", None, Some(c1), Some(c2), Some(c3)),
        };
        let v = &self.verification;
        [
            csv_float(self.mu1),
            csv_float(self.mu2),
            csv_float(self.r),
            self.regime.clone(),
            kind.to_string(),
            csv_opt(c),
            csv_opt(c1),
            csv_opt(c2),
            csv_opt(c3),
            csv_opt(self.r0),
            v.pass.to_string(),
            v.excessive.to_string(),
            v.majorant.to_string(),
            v.smooth_fit.to_string(),
            csv_float(v.i_violation),
            csv_float(v.d_violation),
            csv_float(v.min_gap),
            csv_float(v.max_smooth_fit_residual),
            self.version.clone(),
        ]
        .join(",")
    }
}

fn validate_rate(r: f64) -> Result<(), Failure> {
    if r.is_finite() && r > 0.0 {
        Ok(())
    } else {
        Err(usage(format!("--r must be a positive number, got {r}")))
    }
}

fn solve_with(setup: Setup, r: f64, tol: Tolerances) -> Result<(SolveResult, ValueFunction), Failure> {
    let solver = Solver::new(tol);
    let regime = setup.regime(&solver, r)?;
    let region = setup.region(&solver, r, regime)?;
    let vf = build_value(&make_model(setup.params, r)?, region)?;
    let report = verify(&vf, &tol);
    let critical = setup.r0(&solver)?;
    let record = SolveResult {
        mu1: setup.params.mu1(),
        mu2: setup.params.mu2(),
        r,
        regime: regime.map_or("Classical".to_string(), |g| g.as_str().to_string()),
        region,
        r0: critical.map(|c| c.r0),
        r0_bracket: critical.map(|c| c.bracket),
        tangent_point: critical.map(|c| c.tangent_point),
        g_minus_local_min: match region {
            StoppingRegion::Bubble { .. } => g_minus_local_min(vf.model()).map(|(_, g)| g),
            StoppingRegion::OneSided { .. } => None,
        },
        verification: VerificationSummary::from(&report),
        version: env!("CARGO_PKG_VERSION").to_string(),
        tolerances: tol,
    };
    Ok((record, vf))
}

/// Solves and verifies one parameter set, as the `solve` command does.
pub fn solve_record(params: ModelParams, r: f64, tol: Tolerances) -> Result<SolveResult, Error> {
    let setup = Setup { params, classical: params.mu1() == params.mu2() };
    solve_with(setup, r, tol).map(|(record, _)| record).map_err(|f| Error::NoConvergence(f.message))
}

fn cmd_solve(args: &SolveArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    validate_rate(args.r)?;
    let (record, _) = solve_with(args.model.setup()?, args.r, args.tol.tolerances()?)?;
    let text = if args.csv {
        format!("{}\n{}\n", SolveResult::CSV_HEADER, record.csv_row())
    } else {
        format!("{}\n", serde_json::to_string(&record).expect("record serializes"))
    };
    out.write_all(text.as_bytes()).map_err(|e| io_failure(Path::new("<stdout>"), e))?;
    Ok(if record.verification.pass { EXIT_OK } else { EXIT_VERIFY })
}

pub const SWEEP_HEADER: &str = "r,regime,c1,c2,c3,r0";

fn cmd_sweep(args: &SweepArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    if !(args.r_min > 0.0 && args.r_min < args.r_max && args.r_max.is_finite()) {
        return Err(usage(format!("need 0 < r-min < r-max, got [{}, {}]", args.r_min, args.r_max)));
    }
    if args.n < 2 {
        return Err(usage(format!("--n must be at least 2, got {}", args.n)));
    }
    let setup = args.model.setup()?;
    let solver = Solver::new(args.tol.tolerances()?);
    let critical = setup.r0(&solver)?;

    let mut rates: Vec<f64> = (0..args.n)
        .map(|i| {
            if i + 1 == args.n {
                args.r_max
            } else {
                args.r_min + (args.r_max - args.r_min) * i as f64 / (args.n - 1) as f64
            }
        })
        .collect();
    let inside = |r: f64| r > args.r_min && r < args.r_max;
    if let Some(c) = critical {
        rates.extend([c.r0, setup.params.mu2()].into_iter().filter(|&r| inside(r)));
    }
    rates.sort_by(f64::total_cmp);
    rates.dedup();

    let rows: Vec<Result<String, Failure>> = Execution::default().map_slice(&rates, |&r| {
        let regime = setup.regime(&solver, r)?;
        let region = setup.region(&solver, r, regime)?;
        let (c1, c2, c3) = match region {
            StoppingRegion::OneSided { c } => (Some(c), None, None),
            StoppingRegion::Bubble { c1, c2, c3 } => (Some(c1), Some(c2), Some(c3)),
        };
        Ok(format!(
            "{},{},{},{},{},{}",
            csv_float(r),
            regime.map_or("Classical", |g| g.as_str()),
            csv_opt(c1),
            csv_opt(c2),
            csv_opt(c3),
            csv_opt(critical.map(|c| c.r0)),
        ))
    });
    let mut text = String::from(SWEEP_HEADER);
    text.push('\n');
    for row in rows {
        text.push_str(&row?);
        text.push('\n');
    }
    emit(&text, args.out.as_deref(), out)?;
    Ok(EXIT_OK)
}

fn emit(text: &str, path: Option<&Path>, out: &mut dyn Write) -> Result<(), Failure> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| io_failure(p, e)),
        None => out.write_all(text.as_bytes()).map_err(|e| io_failure(Path::new("<stdout>"), e)),
    }
}

pub const PLOT_HEADER: &str = "x,psi,phi,G_minus,G_plus,V,g";

fn gnuplot_script(data: &Path, model: &DiscountedModel) -> String {
    let file = data.display();
    format!(
        "# broken-drift plot data: mu1 = {}, mu2 = {}, r = {}\n\
         set datafile separator ','\n\
         set key autotitle columnhead\n\
         set multiplot layout 2,2\n\
         plot '{file}' using 1:2 with lines\n\
         plot '{file}' using 1:3 with lines\n\
         plot '{file}' using 1:4 with lines, '{file}' using 1:5 with lines\n\
         plot '{file}' using 1:6 with lines, '{file}' using 1:7 with lines\n\
         unset multiplot\n",
        model.mu1(),
        model.mu2(),
        model.r()
    )
}

fn cmd_plotdata(args: &PlotArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    validate_rate(args.r)?;
    if args.x_min.is_nan() || args.x_max.is_nan() || args.x_min >= args.x_max || args.n < 2 {
        return Err(usage("need x-min < x-max and n >= 2".into()));
    }
    let setup = args.model.setup()?;
    let model = make_model(setup.params, args.r)?;
    model.ensure_in_window(args.x_min)?;
    model.ensure_in_window(args.x_max)?;
    let solver = Solver::new(Tolerances::default());
    // V is optional: the curves of psi, phi and G are useful on their own.
    let vf = setup
        .regime(&solver, args.r)
        .and_then(|regime| setup.region(&solver, args.r, regime))
        .ok()
        .and_then(|region| build_value(&model, region).ok());

    let mut text = String::from(PLOT_HEADER);
    text.push('\n');
    for i in 0..args.n {
        let x = if i + 1 == args.n {
            args.x_max
        } else {
            args.x_min + (args.x_max - args.x_min) * i as f64 / (args.n - 1) as f64
        };
        let row = [
            csv_float(x),
            csv_float(model.psi(x)),
            csv_float(model.phi(x)),
            csv_float(g_minus(&model, x)),
            csv_float(g_plus(&model, x)),
            csv_opt(vf.as_ref().map(|v| v.eval(x))),
            csv_float(reward(x)),
        ];
        text.push_str(&row.join(","));
        text.push('\n');
    }
    fs::write(&args.out, &text).map_err(|e| io_failure(&args.out, e))?;
    let script = args.out.with_extension("gp");
    fs::write(&script, gnuplot_script(&args.out, &model)).map_err(|e| io_failure(&script, e))?;
    writeln!(
        out,
        "{}",
        serde_json::json!({ "data": args.out.display().to_string(), "script": script.display().to_string() })
    )
    .map_err(|e| io_failure(Path::new("<stdout>"), e))?;
    Ok(EXIT_OK)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub mu1: f64,
    pub mu2: f64,
    pub r: f64,
    pub x0: f64,
    pub regime: String,
    pub region: StoppingRegion,
    pub estimate: McEstimate,
    pub analytic: f64,
    /// `(mean - analytic) / stderr`; null when undefined.
    pub z: Option<f64>,
}

fn z_score(mean: f64, analytic: f64, stderr: f64) -> Option<f64> {
    let diff = mean - analytic;
    if stderr > 0.0 {
        Some(diff / stderr)
    } else if diff.abs() <= 1e-12 * analytic.abs().max(1.0) {
        Some(0.0)
    } else {
        None
    }
}

fn cmd_mc(args: &McArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    validate_rate(args.r)?;
    let setup = args.model.setup()?;
    let solver = Solver::new(Tolerances::default());
    let regime = setup.regime(&solver, args.r)?;
    let region = setup.region(&solver, args.r, regime)?;
    let vf = build_value(&make_model(setup.params, args.r)?, region)?;

    let cfg = McConfig {
        step: args.dt,
        paths: args.paths,
        horizon: args.horizon.unwrap_or(50.0 / args.r),
        seed: args.seed,
        antithetic: args.antithetic,
        execution: Execution::default(),
    };
    let estimate = estimate_stopped_value(&setup.params, args.r, &region, args.x0, &cfg)?;
    let analytic = vf.eval(args.x0);
    let z = z_score(estimate.mean, analytic, estimate.stderr);
    let report = McReport {
        mu1: setup.params.mu1(),
        mu2: setup.params.mu2(),
        r: args.r,
        x0: args.x0,
        regime: regime.map_or("Classical".to_string(), |g| g.as_str().to_string()),
        region,
        estimate,
        analytic,
        z,
    };
    writeln!(out, "{}", serde_json::to_string(&report).expect("report serializes"))
        .map_err(|e| io_failure(Path::new("<stdout>"), e))?;
    Ok(match z {
        Some(z) if z.abs() <= 4.0 => EXIT_OK,
        _ => EXIT_VERIFY,
    })
}

fn thread_cap() -> usize {
    std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse().ok()).unwrap_or(0)
}

/// Runs the CLI on `args` (including the program name) and returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { err.write_all(text.as_bytes()) } else { out.write_all(text.as_bytes()) };
            return code;
        }
    };
    configure_threads(thread_cap());
    let result = match &cli.command {
        Command::Solve(a) => cmd_solve(a, out),
        Command::Sweep(a) => cmd_sweep(a, out),
        Command::Plotdata(a) => cmd_plotdata(a, out),
        Command::Mc(a) => cmd_mc(a, out),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}
