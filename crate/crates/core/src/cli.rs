//! Command-line front end.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::benchmarks::{fixture_di, fixture_di_sweep, fixture_quad, run_benchmark, BenchmarkFixture, BenchmarkRow, SWEEP_HORIZONS};
use crate::error::{Error, Result};
use crate::inversion::LinearFunctionalLaw;
use crate::problem::{verify_feasibility, ProblemSpec};
use crate::problem_file::{DistributionSpec, ProblemFile, SolverOverrides};
use crate::program::build_dc;
use crate::pwa::{sandwich, Piece, SandwichOptions};
use crate::solve::{build_options, solve, Method, Solution};
use crate::validation::{estimate_satisfaction, simulate_batch};

/// Exit code for usage, IO and schema errors.
pub const EXIT_ERROR: i32 = 1;
/// Exit code for infeasible or unconverged solves and failed validation.
pub const EXIT_INFEASIBLE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "ccsynth", version, about = "Chance-constrained open-loop control synthesis")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize an open-loop input for a problem file.
    Solve(SolveArgs),
    /// Monte Carlo check of a solution against its problem file.
    Validate(ValidateArgs),
    /// Run a shipped benchmark end to end.
    Benchmark(BenchmarkArgs),
    /// Tabulate the CDF of a weighted sum of independent scalars.
    Cdf(CdfArgs),
    /// Emit the PWA underapproximation of a log-CDF as CSV.
    PwaDump(PwaArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct ProblemOverrides {
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub quad_abs_tol: Option<f64>,
    #[arg(long)]
    pub quad_rel_tol: Option<f64>,
    #[arg(long)]
    pub quad_max_panels: Option<usize>,
    #[arg(long)]
    pub qp_eps: Option<f64>,
    #[arg(long)]
    pub qp_max_iter: Option<usize>,
    #[arg(long)]
    pub ccp_tau0: Option<f64>,
    #[arg(long)]
    pub ccp_tau_max: Option<f64>,
    #[arg(long)]
    pub ccp_gamma: Option<f64>,
    #[arg(long)]
    pub ccp_eps_dc: Option<f64>,
    #[arg(long)]
    pub ccp_eps_viol: Option<f64>,
    #[arg(long)]
    pub ccp_max_iter: Option<usize>,
}

impl ProblemOverrides {
    pub fn apply(&self, file: &mut ProblemFile) {
        let s = &mut file.solver;
        macro_rules! set {
            ($src:expr, $dst:expr) => {
                if let Some(v) = $src {
                    $dst = v;
                }
            };
        }
        set!(self.delta, file.delta);
        set!(self.horizon, file.horizon);
        set!(self.eta, file.eta);
        set!(self.epsilon, file.epsilon);
        set!(self.quad_abs_tol, s.quadrature.abs_tol);
        set!(self.quad_rel_tol, s.quadrature.rel_tol);
        set!(self.quad_max_panels, s.quadrature.max_panels);
        if let Some(e) = self.qp_eps {
            s.qp.eps_abs = e;
            s.qp.eps_rel = e;
        }
        set!(self.qp_max_iter, s.qp.max_iter);
        set!(self.ccp_tau0, s.ccp.tau0);
        set!(self.ccp_tau_max, s.ccp.tau_max);
        set!(self.ccp_gamma, s.ccp.gamma);
        set!(self.ccp_eps_dc, s.ccp.eps_dc);
        set!(self.ccp_eps_viol, s.ccp.eps_viol);
        set!(self.ccp_max_iter, s.ccp.max_iter);
    }
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// Problem file (JSON).
    pub problem: PathBuf,
    #[arg(long, value_enum, default_value_t = Method::Dc)]
    pub method: Method,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Write the CCP trace as trace.csv.
    #[arg(long)]
    pub trace: bool,
    /// Write the assembled DC program as program.json.
    #[arg(long)]
    pub dump_program: bool,
    #[command(flatten)]
    pub overrides: ProblemOverrides,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    pub problem: PathBuf,
    /// Solution JSON written by `solve`.
    pub solution: PathBuf,
    #[arg(long, default_value_t = 100_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Also write up to this many sampled trajectories as samples.csv.
    #[arg(long, default_value_t = 0)]
    pub dump_limit: usize,
    #[command(flatten)]
    pub overrides: ProblemOverrides,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BenchmarkName {
    Di,
    Quad,
    DiSweep,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    #[arg(value_enum)]
    pub name: BenchmarkName,
    #[arg(long, value_enum, default_value_t = Method::Dc)]
    pub method: Method,
    #[arg(long, default_value_t = 100_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: ProblemOverrides,
}

/// Weighted sum of independent scalar laws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LawFile {
    pub terms: Vec<LawTerm>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LawTerm {
    pub weight: f64,
    pub law: DistributionSpec,
}

impl LawFile {
    pub fn build(&self) -> Result<LinearFunctionalLaw> {
        let terms = self.terms.iter().map(|t| Ok((t.weight, t.law.to_distribution()?))).collect::<Result<Vec<_>>>()?;
        LinearFunctionalLaw::from_terms(terms)
    }
}

#[derive(Debug, Args)]
pub struct LawArgs {
    /// Law as inline JSON or a path to a JSON file, e.g.
    /// {"terms":[{"weight":1,"law":{"type":"exponential","scale":0.5}}]}
    #[arg(long)]
    pub law: String,
    #[arg(long)]
    pub quad_abs_tol: Option<f64>,
    #[arg(long)]
    pub quad_rel_tol: Option<f64>,
    #[arg(long)]
    pub quad_max_panels: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CdfArgs {
    #[command(flatten)]
    pub law: LawArgs,
    /// Grid start; defaults to mean - 6 stddev.
    #[arg(long)]
    pub lo: Option<f64>,
    /// Grid end; defaults to mean + 6 stddev.
    #[arg(long)]
    pub hi: Option<f64>,
    #[arg(long, default_value_t = 200)]
    pub points: usize,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PwaArgs {
    #[command(flatten)]
    pub law: LawArgs,
    #[arg(long, default_value_t = 0.1)]
    pub eta: f64,
    /// Lower end of the domain as a probability level.
    #[arg(long, default_value_t = 1e-3)]
    pub epsilon: f64,
    /// Upper end of the domain; defaults to the 1 - 1e-9 quantile.
    #[arg(long)]
    pub hi: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli),
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                EXIT_ERROR
            } else {
                0
            }
        }
    }
}

pub fn run(cli: Cli) -> i32 {
    configure_threads();
    let res = match cli.command {
        Command::Solve(a) => cmd_solve(&a),
        Command::Validate(a) => cmd_validate(&a),
        Command::Benchmark(a) => cmd_benchmark(&a),
        Command::Cdf(a) => cmd_cdf(&a),
        Command::PwaDump(a) => cmd_pwa_dump(&a),
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::RowInfeasible { .. } | Error::DegenerateRow { .. } => EXIT_INFEASIBLE,
                _ => EXIT_ERROR,
            }
        }
    }
}

fn configure_threads() {
    if let Some(n) = std::env::var("CC_SYNTH_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        // a pool may already exist when called twice in one process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

fn read_problem(path: &Path, overrides: &ProblemOverrides) -> Result<(ProblemFile, ProblemSpec, SolverOverrides)> {
    let mut file = ProblemFile::from_json(&fs::read_to_string(path)?)?;
    overrides.apply(&mut file);
    let spec = file.build()?;
    let solver = file.solver;
    Ok((file, spec, solver))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn status_code(solution: &Solution) -> i32 {
    if solution.status.is_success() {
        0
    } else {
        EXIT_INFEASIBLE
    }
}

/// Mean state per step under `u`, one row per step.
pub fn mean_trajectory_csv(spec: &ProblemSpec, u: &DVector<f64>) -> Result<String> {
    let mean = spec.state_mean(u)?;
    let (n, m) = (spec.system.n, spec.system.m);
    let mut out = String::from("step");
    (0..n).for_each(|i| out.push_str(&format!(",x{i}")));
    (0..m).for_each(|j| out.push_str(&format!(",u{j}")));
    out.push('\n');
    for k in 0..spec.system.horizon {
        out.push_str(&(k + 1).to_string());
        (0..n).for_each(|i| out.push_str(&format!(",{}", mean[k * n + i])));
        (0..m).for_each(|j| out.push_str(&format!(",{}", u[k * m + j])));
        out.push('\n');
    }
    Ok(out)
}

pub fn trace_csv(solution: &Solution) -> String {
    let mut out = String::from("iteration,objective,slack,tau\n");
    for t in &solution.trace {
        out.push_str(&format!("{},{},{},{}\n", t.iteration, t.objective, t.slack, t.tau));
    }
    out
}

pub fn cmd_solve(args: &SolveArgs) -> Result<i32> {
    let (_, spec, solver) = read_problem(&args.problem, &args.overrides)?;
    fs::create_dir_all(&args.out)?;
    if args.dump_program {
        let dc = build_dc_any(&spec, &solver)?;
        write_json(&args.out.join("program.json"), &dc.dump_json())?;
    }
    let solution = solve(&spec, args.method, &solver)?;
    write_json(&args.out.join("solution.json"), &solution)?;
    if solution.status.is_success() {
        let u = solution.u_vector();
        fs::write(args.out.join("mean_trajectory.csv"), mean_trajectory_csv(&spec, &u)?)?;
        let feas = verify_feasibility(&spec, &u, &solver.quadrature)?;
        write_json(&args.out.join("feasibility.json"), &feas)?;
    }
    if args.trace {
        fs::write(args.out.join("trace.csv"), trace_csv(&solution))?;
    }
    println!(
        "status {:?}  objective {}  total risk {}  time {:.3}s",
        solution.status,
        fmt_opt(solution.objective),
        fmt_opt(solution.total_risk),
        solution.timings.total_s
    );
    Ok(status_code(&solution))
}

fn build_dc_any(spec: &ProblemSpec, solver: &SolverOverrides) -> Result<crate::program::DcProgram> {
    let opts = build_options(solver);
    match spec.initial_state {
        crate::problem::InitialState::Fixed(_) => build_dc(spec, &opts),
        crate::problem::InitialState::Random(_) => crate::program::build_dc_random_x0(spec, &opts),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.6}"))
}

/// Lower end of the satisfaction interval needed by `validate`.
pub fn validation_threshold(delta: f64) -> f64 {
    1.0 - delta - 0.01
}

pub fn cmd_validate(args: &ValidateArgs) -> Result<i32> {
    let (_, spec, _) = read_problem(&args.problem, &args.overrides)?;
    let solution: Solution = serde_json::from_str(&fs::read_to_string(&args.solution)?)?;
    if !solution.status.is_success() {
        eprintln!("solution has status {:?}; nothing to validate", solution.status);
        return Ok(EXIT_INFEASIBLE);
    }
    let u = solution.u_vector();
    let report = estimate_satisfaction(&spec, &u, args.samples, args.seed)?;
    fs::create_dir_all(&args.out)?;
    write_json(&args.out.join("mc_report.json"), &report)?;
    if args.dump_limit > 0 {
        let n = args.dump_limit.min(args.samples);
        let batch = simulate_batch(&spec.system, &spec.initial_state, &u, &spec.disturbance, n, args.seed)?;
        let mut csv = String::from("sample,step,state,value\n");
        let nx = spec.system.n;
        for (s, x) in batch.iter().enumerate() {
            for (k, v) in x.iter().enumerate() {
                csv.push_str(&format!("{s},{},{},{v}\n", k / nx + 1, k % nx));
            }
        }
        fs::write(args.out.join("samples.csv"), csv)?;
    }
    println!(
        "satisfaction {:.5}  ci95 [{:.5}, {:.5}]  empirical cost {:.4} +- {:.4}",
        report.satisfaction, report.satisfaction_ci95.0, report.satisfaction_ci95.1, report.empirical_cost, report.cost_stderr
    );
    Ok(if report.satisfaction_ci95.0 >= validation_threshold(spec.delta) { 0 } else { EXIT_INFEASIBLE })
}

fn run_fixture(
    fixture: &BenchmarkFixture,
    args: &BenchmarkArgs,
    overrides: &ProblemOverrides,
    dir: &Path,
) -> Result<(BenchmarkRow, i32)> {
    let mut fixture = fixture.clone();
    overrides.apply(&mut fixture.problem);
    let run = run_benchmark(&fixture, args.method, args.samples, args.seed)?;
    fs::create_dir_all(dir)?;
    fs::write(dir.join("problem.json"), fixture.problem.canonical() + "\n")?;
    write_json(&dir.join("solution.json"), &run.solution)?;
    fs::write(dir.join("trace.csv"), trace_csv(&run.solution))?;
    if let Some(f) = &run.feasibility {
        write_json(&dir.join("feasibility.json"), f)?;
        fs::write(dir.join("mean_trajectory.csv"), mean_trajectory_csv(&run.spec, &run.solution.u_vector())?)?;
    }
    if let Some(mc) = &run.mc {
        write_json(&dir.join("mc_report.json"), mc)?;
    }
    Ok((run.row, status_code(&run.solution)))
}

pub fn cmd_benchmark(args: &BenchmarkArgs) -> Result<i32> {
    let (rows, code) = match args.name {
        BenchmarkName::Di | BenchmarkName::Quad => {
            let (fixture, dir) = match args.name {
                BenchmarkName::Di => (fixture_di(), "di"),
                _ => (fixture_quad(), "quad"),
            };
            let (row, code) = run_fixture(&fixture, args, &args.overrides, &args.out.join(dir))?;
            (vec![row], code)
        }
        BenchmarkName::DiSweep => {
            let mut rows = Vec::new();
            let mut code = 0;
            for n in SWEEP_HORIZONS {
                let fixture = fixture_di_sweep(n);
                let overrides = ProblemOverrides { horizon: None, ..args.overrides.clone() };
                let (row, c) = run_fixture(&fixture, args, &overrides, &args.out.join(format!("di_sweep/n{n}")))?;
                code = code.max(c);
                rows.push(row);
            }
            (rows, code)
        }
    };
    let mut csv = String::from(BenchmarkRow::CSV_HEADER);
    csv.push('\n');
    println!("{}", BenchmarkRow::CSV_HEADER);
    for row in &rows {
        println!("{}", row.to_csv());
        csv.push_str(&row.to_csv());
        csv.push('\n');
    }
    fs::write(args.out.join(format!("{}.csv", bench_file(args.name))), csv)?;
    Ok(code)
}

fn bench_file(name: BenchmarkName) -> &'static str {
    match name {
        BenchmarkName::Di => "di",
        BenchmarkName::Quad => "quad",
        BenchmarkName::DiSweep => "di_sweep",
    }
}

fn load_law(args: &LawArgs) -> Result<(LinearFunctionalLaw, crate::quadrature::QuadratureConfig)> {
    let text = if args.law.trim_start().starts_with('{') { args.law.clone() } else { fs::read_to_string(&args.law)? };
    let de = &mut serde_json::Deserializer::from_str(&text);
    let file: LawFile = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::Schema { path, reason: e.into_inner().to_string() }
    })?;
    let mut quad = crate::quadrature::QuadratureConfig::default();
    if let Some(v) = args.quad_abs_tol {
        quad.abs_tol = v;
    }
    if let Some(v) = args.quad_rel_tol {
        quad.rel_tol = v;
    }
    if let Some(v) = args.quad_max_panels {
        quad.max_panels = v;
    }
    Ok((file.build()?, quad))
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

/// `(s, cdf(s))` rows over an evenly spaced grid.
pub fn cdf_table(law: &LinearFunctionalLaw, lo: f64, hi: f64, points: usize, quad: &crate::quadrature::QuadratureConfig) -> Result<Vec<(f64, f64)>> {
    if points < 2 || !(lo < hi) {
        return Err(Error::Value("grid needs lo < hi and at least 2 points".into()));
    }
    (0..points)
        .map(|k| {
            let s = lo + (hi - lo) * k as f64 / (points - 1) as f64;
            Ok((s, law.cdf(s, quad)?))
        })
        .collect()
}

pub fn cmd_cdf(args: &CdfArgs) -> Result<i32> {
    let (law, quad) = load_law(&args.law)?;
    let lo = args.lo.unwrap_or(law.mean() - 6.0 * law.stddev());
    let hi = args.hi.unwrap_or(law.mean() + 6.0 * law.stddev());
    let mut csv = String::from("s,cdf\n");
    for (s, p) in cdf_table(&law, lo, hi, args.points, &quad)? {
        csv.push_str(&format!("{s},{p}\n"));
    }
    emit(&args.out, &csv)?;
    Ok(0)
}

pub fn cmd_pwa_dump(args: &PwaArgs) -> Result<i32> {
    let (law, quad) = load_law(&args.law)?;
    if law.is_degenerate() {
        return Err(Error::Value("a degenerate law has no log-CDF to approximate".into()));
    }
    let tol = 1e-10 * law.stddev();
    let lo = law.inverse_cdf(args.epsilon, &quad, tol)?;
    let hi = match args.hi {
        Some(h) => h,
        None => law.inverse_cdf(1.0 - 1e-9, &quad, tol)?,
    };
    let opts = SandwichOptions { concavity_tol: 1e-6, ..SandwichOptions::default() };
    let mut pwa = sandwich(|x| law.log_cdf_and_grad(x, &quad), lo, hi, args.eta, &opts)?;
    let top = law.cdf(hi, &quad)?.ln();
    pwa.push_piece(Piece { slope: 0.0, intercept: top, left: hi, right: f64::INFINITY });
    emit(&args.out, &pwa.to_csv())?;
    Ok(0)
}
