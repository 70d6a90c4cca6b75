//! Experiment driver: solve, uniqueness, monotonicity, property checks,
//! and geometry validation, all from a TOML run configuration.
//!
//! Exit codes are a stable contract:
//!   0 success, 2 config error, 3 cone failure, 4 Newton failure,
//!   5 continuation underflow, 6 property failure.

use clap::{Parser, Subcommand};
use fuyau_core::checks::{self, CheckOptions, Mutation};
use fuyau_core::config::RunConfig;
use fuyau_core::continuation::{
    initial_solution, newton_solve_at_t, run_continuation, run_continuation_from, trace_csv,
    ContinuationOutcome, ContinuationTrace,
};
use fuyau_core::field::{integrate, ScalarField};
use fuyau_core::geometry::{NormKind, ProblemData};
use fuyau_core::monitors::full_report;
use fuyau_core::CoreError;
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_OK: u8 = 0;
const EXIT_CONFIG: u8 = 2;
const EXIT_CONE: u8 = 3;
const EXIT_NEWTON: u8 = 4;
const EXIT_UNDERFLOW: u8 = 5;
const EXIT_PROPERTY: u8 = 6;

#[derive(Parser)]
#[command(
    name = "fuyau-lab",
    about = "Numerical laboratory for a fully nonlinear sigma_2 equation on flat complex tori"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the continuation path to t = 1 and write phi, trace, and report.
    Solve(CommonArgs),
    /// Solve twice from distinct initializations (alpha < 0) and compare.
    Uniqueness(CommonArgs),
    /// Solve for a strictly increasing list of A values and check ordering.
    Monotonicity(CommonArgs),
    /// Run the property suite and print a pass/fail table.
    Check {
        #[command(flatten)]
        common: CommonArgs,
        /// Self-test switch: deliberately break one assembly sign to verify
        /// the suite catches it (the run then exits nonzero by design).
        #[arg(long, value_parser = ["f-torsion-sign"])]
        mutate: Option<String>,
    },
    /// Build the configured Hermitian structure and report its invariants.
    ValidateGeometry(CommonArgs),
}

#[derive(clap::Args)]
struct CommonArgs {
    /// Path to the TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (defaults to the config's `out` or the current dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed override for all randomized probes.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match &cli.command {
        Command::Solve(args) => run(args, "solve", cmd_solve),
        Command::Uniqueness(args) => run(args, "uniqueness", cmd_uniqueness),
        Command::Monotonicity(args) => run(args, "monotonicity", cmd_monotonicity),
        Command::Check { common, mutate } => {
            let mutate = mutate.clone();
            run(common, "check", move |ctx| cmd_check(ctx, mutate.as_deref()))
        }
        Command::ValidateGeometry(args) => run(args, "validate-geometry", cmd_validate_geometry),
    };
    ExitCode::from(code)
}

struct Ctx {
    cfg: RunConfig,
    out_dir: PathBuf,
    seed: u64,
}

fn run<F>(args: &CommonArgs, kind: &str, body: F) -> u8
where
    F: FnOnce(&Ctx) -> Result<u8, CoreError>,
{
    let text = match std::fs::read_to_string(&args.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read config {}: {e}", args.config.display());
            return EXIT_CONFIG;
        }
    };
    let cfg: RunConfig = match toml::from_str(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: invalid config: {e}");
            return EXIT_CONFIG;
        }
    };
    if let Some(declared) = &cfg.kind {
        if declared != kind {
            eprintln!("error: config declares kind {declared:?} but subcommand is {kind:?}");
            return EXIT_CONFIG;
        }
    }
    let out_dir = args
        .out
        .clone()
        .or_else(|| cfg.out.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    if let Err(e) = std::fs::create_dir_all(&out_dir) {
        eprintln!("error: cannot create output dir {}: {e}", out_dir.display());
        return EXIT_CONFIG;
    }
    let seed = args.seed.unwrap_or(cfg.seed);
    let ctx = Ctx { cfg, out_dir, seed };
    match body(&ctx) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}

fn exit_code_for(e: &CoreError) -> u8 {
    match e {
        CoreError::ConeViolation { .. } | CoreError::MetricNotPositive { .. } => EXIT_CONE,
        CoreError::NewtonFailure(_)
        | CoreError::LineSearchStagnation { .. }
        | CoreError::KrylovStagnation { .. } => EXIT_NEWTON,
        CoreError::StepUnderflow { .. } => EXIT_UNDERFLOW,
        CoreError::NonConstantRatio { .. }
        | CoreError::AmbiguousKernel(_)
        | CoreError::KernelNotPositive { .. } => EXIT_PROPERTY,
        _ => EXIT_CONFIG,
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), CoreError> {
    std::fs::write(path, text)?;
    Ok(())
}

fn dump_phi(path: &Path, name: &str, phi: &ScalarField) -> Result<(), CoreError> {
    let mut f = std::fs::File::create(path)?;
    fuyau_core::io::dump_scalar(&mut f, name, phi)
}

#[derive(Serialize)]
struct SolveReport<'a> {
    scenario: &'a str,
    n: usize,
    #[serde(rename = "N")]
    points: usize,
    alpha: f64,
    #[serde(rename = "A")]
    a_norm: f64,
    norm: &'a str,
    seed: u64,
    completed: bool,
    outcome: String,
    steps: usize,
    monitors: Vec<fuyau_core::monitors::MonitorReport>,
}

fn write_solve_artifacts(
    ctx: &Ctx,
    data: &ProblemData,
    trace: &ContinuationTrace,
    prefix: &str,
) -> Result<(), CoreError> {
    let csv = trace_csv(trace);
    write_text(&ctx.out_dir.join(format!("{prefix}trace.csv")), &csv)?;
    let final_state = trace.final_state();
    dump_phi(
        &ctx.out_dir.join(format!("{prefix}phi.fyfd")),
        "phi",
        &final_state.phi,
    )?;
    let outcome = match &trace.outcome {
        ContinuationOutcome::Completed => "completed".to_string(),
        ContinuationOutcome::StepUnderflow { at_t, dt, last_error } => {
            format!("step underflow at t = {at_t} (dt = {dt:.3e}): {last_error}")
        }
    };
    let report = SolveReport {
        scenario: &ctx.cfg.scenario,
        n: ctx.cfg.n,
        points: ctx.cfg.points,
        alpha: ctx.cfg.alpha,
        a_norm: data.a_norm,
        norm: &ctx.cfg.norm,
        seed: ctx.seed,
        completed: trace.completed(),
        outcome,
        steps: trace.steps.len(),
        monitors: trace.steps.iter().map(|s| s.monitor.clone()).collect(),
    };
    write_text(
        &ctx.out_dir.join(format!("{prefix}report.json")),
        &serde_json::to_string_pretty(&report).expect("report serializes"),
    )?;
    Ok(())
}

fn cmd_solve(ctx: &Ctx) -> Result<u8, CoreError> {
    let data = ctx.cfg.build_problem()?;
    let trace = run_continuation(&data, &ctx.cfg.continuation_options())?;
    write_solve_artifacts(ctx, &data, &trace, "")?;
    match &trace.outcome {
        ContinuationOutcome::Completed => {
            let fin = trace.final_state();
            println!(
                "solve: completed, {} steps, final residual {:.3e}, margins ({:.3e}, {:.3e})",
                trace.steps.len(),
                fin.residual_sup,
                fin.cone_margins.0,
                fin.cone_margins.1
            );
            Ok(EXIT_OK)
        }
        ContinuationOutcome::StepUnderflow { at_t, dt, last_error } => {
            eprintln!(
                "solve: step underflow at t = {at_t} (dt = {dt:.3e}); last good state written; {last_error}"
            );
            Ok(EXIT_UNDERFLOW)
        }
    }
}

#[derive(Serialize)]
struct UniquenessReport {
    sup_difference: f64,
    tolerance: f64,
    passed: bool,
    backward_t0_defect: Option<f64>,
    norm: String,
}

fn cmd_uniqueness(ctx: &Ctx) -> Result<u8, CoreError> {
    if ctx.cfg.alpha >= 0.0 {
        eprintln!("error: the uniqueness experiment requires alpha < 0");
        return Ok(EXIT_CONFIG);
    }
    // L^n normalization unless the trace flag selects the weaker L1 case
    let norm = if ctx.cfg.experiment.trace_rho_nonneg {
        NormKind::L1
    } else {
        NormKind::Ln
    };
    let data = ctx.cfg.build_problem_with_a(ctx.cfg.a_norm, norm)?;
    let opts = ctx.cfg.continuation_options();

    // path A: standard continuation
    let trace_a = run_continuation(&data, &opts)?;
    if !trace_a.completed() {
        return Err(CoreError::NewtonFailure(
            "first solve did not reach t = 1".into(),
        ));
    }
    let phi_a = trace_a.final_state().phi.clone();

    // path B: direct damped Newton at t = 1 from a perturbed start
    let grid = data.grid();
    let mut phi_b0 = initial_solution(&data)?;
    let pert = ScalarField::from_fn(grid, |i| 0.05 * grid.coords(i)[1].sin());
    phi_b0.add_scaled(&pert, 1.0);
    let phi_b0 = fuyau_core::continuation::renormalize(&phi_b0, data.a_norm, data.norm, &data);
    let state_b = newton_solve_at_t(&phi_b0, 1.0, &data, &opts.newton)?;
    let phi_b = state_b.phi;

    let diff = fuyau_core::exec::max_indexed(grid.num_points(), |i| {
        (phi_a.data[i] - phi_b.data[i]).abs()
    });

    // optional backward path 1 -> 0, checked against the closed-form state
    let backward_t0_defect = if ctx.cfg.experiment.backward {
        let start = trace_a.steps.last().unwrap().state.clone();
        let back = run_continuation_from(&data, start, 0.0, &opts)?;
        if !back.completed() {
            None
        } else {
            let phi0 = initial_solution(&data)?;
            let phi_back = &back.final_state().phi;
            Some(fuyau_core::exec::max_indexed(grid.num_points(), |i| {
                (phi_back.data[i] - phi0.data[i]).abs()
            }))
        }
    } else {
        None
    };

    dump_phi(&ctx.out_dir.join("phi_a.fyfd"), "phi_a", &phi_a)?;
    dump_phi(&ctx.out_dir.join("phi_b.fyfd"), "phi_b", &phi_b)?;
    let report = UniquenessReport {
        sup_difference: diff,
        tolerance: 1e-7,
        passed: diff <= 1e-7,
        backward_t0_defect,
        norm: ctx.cfg.norm.clone(),
    };
    write_text(
        &ctx.out_dir.join("report.json"),
        &serde_json::to_string_pretty(&report).expect("report serializes"),
    )?;
    println!(
        "uniqueness: sup |phi_a - phi_b| = {diff:.3e} (tolerance 1e-7){}",
        match backward_t0_defect {
            Some(d) => format!(", backward t=0 defect {d:.3e}"),
            None => String::new(),
        }
    );
    Ok(if report.passed { EXIT_OK } else { EXIT_PROPERTY })
}

#[derive(Serialize)]
struct MonotonicityReport {
    a_values: Vec<f64>,
    min_gaps: Vec<f64>,
    log_ratios: Vec<f64>,
    passed: bool,
    norm: String,
}

fn cmd_monotonicity(ctx: &Ctx) -> Result<u8, CoreError> {
    if ctx.cfg.alpha >= 0.0 {
        eprintln!("error: the monotonicity experiment requires alpha < 0");
        return Ok(EXIT_CONFIG);
    }
    let a_list = if ctx.cfg.experiment.a_list.is_empty() {
        vec![ctx.cfg.a_norm, 2.0 * ctx.cfg.a_norm]
    } else {
        ctx.cfg.experiment.a_list.clone()
    };
    if a_list.len() < 2 || a_list.windows(2).any(|w| w[0] >= w[1]) {
        eprintln!("error: monotonicity needs a strictly increasing a_list");
        return Ok(EXIT_CONFIG);
    }
    let norm = if ctx.cfg.experiment.trace_rho_nonneg {
        NormKind::L1
    } else {
        NormKind::Ln
    };
    let opts = ctx.cfg.continuation_options();
    let mut solutions = Vec::new();
    for &a in &a_list {
        let data = ctx.cfg.build_problem_with_a(a, norm)?;
        let trace = run_continuation(&data, &opts)?;
        if !trace.completed() {
            return Err(CoreError::NewtonFailure(format!(
                "solve at A = {a} did not reach t = 1"
            )));
        }
        let phi = trace.final_state().phi.clone();
        dump_phi(
            &ctx.out_dir.join(format!("phi_A{a}.fyfd")),
            &format!("phi_A{a}"),
            &phi,
        )?;
        solutions.push(phi);
    }
    let grid = solutions[0].grid;
    let mut min_gaps = Vec::new();
    let mut log_ratios = Vec::new();
    for w in solutions.windows(2) {
        let gap = fuyau_core::exec::min_indexed(grid.num_points(), |i| {
            w[0].data[i] - w[1].data[i]
        });
        min_gaps.push(gap);
    }
    for w in a_list.windows(2) {
        log_ratios.push((w[1] / w[0]).ln());
    }
    let passed = min_gaps.iter().all(|&g| g > 0.0);
    let report = MonotonicityReport {
        a_values: a_list.clone(),
        min_gaps: min_gaps.clone(),
        log_ratios,
        passed,
        norm: ctx.cfg.norm.clone(),
    };
    write_text(
        &ctx.out_dir.join("report.json"),
        &serde_json::to_string_pretty(&report).expect("report serializes"),
    )?;
    for (i, g) in min_gaps.iter().enumerate() {
        println!(
            "monotonicity: A = {} vs {}: min gap {:.6e} (reference log ratio {:.6})",
            a_list[i],
            a_list[i + 1],
            g,
            (a_list[i + 1] / a_list[i]).ln()
        );
    }
    Ok(if passed { EXIT_OK } else { EXIT_PROPERTY })
}

fn cmd_check(ctx: &Ctx, mutate: Option<&str>) -> Result<u8, CoreError> {
    let mutate = match mutate {
        Some("f-torsion-sign") => Some(Mutation::FTorsionSign),
        Some(other) => {
            eprintln!("error: unknown mutation {other:?}");
            return Ok(EXIT_CONFIG);
        }
        None => None,
    };
    let mut opts = CheckOptions {
        seed: ctx.seed,
        mutate,
        ..Default::default()
    };
    match ctx.cfg.n {
        2 => opts.n2_points = ctx.cfg.points,
        3 => opts.n3_points = ctx.cfg.points,
        _ => {}
    }
    let rows = checks::run_all(&opts);
    print!("{}", checks::render_table(&rows));
    let passed = checks::all_passed(&rows);
    write_text(
        &ctx.out_dir.join("check_report.json"),
        &serde_json::to_string_pretty(
            &rows
                .iter()
                .map(|r| {
                    serde_json::json!({
                        "name": r.name,
                        "passed": r.passed,
                        "measured": r.measured,
                        "threshold": r.threshold,
                        "detail": r.detail,
                    })
                })
                .collect::<Vec<_>>(),
        )
        .expect("rows serialize"),
    )?;
    Ok(if passed { EXIT_OK } else { EXIT_PROPERTY })
}

#[derive(Serialize)]
struct GeometryReport {
    n: usize,
    #[serde(rename = "N")]
    points: usize,
    kaehler: bool,
    astheno_defect: f64,
    volume: f64,
    sup_d_omega: f64,
    monitors_at_trivial_state: fuyau_core::monitors::MonitorReport,
}

fn cmd_validate_geometry(ctx: &Ctx) -> Result<u8, CoreError> {
    let data = ctx.cfg.build_problem()?;
    let s = data.structure.as_ref();
    let one = ScalarField::constant(s.grid, 1.0);
    let volume = integrate(&one, s);
    let phi0 = initial_solution(&data)?;
    let report = GeometryReport {
        n: ctx.cfg.n,
        points: ctx.cfg.points,
        kaehler: s.kaehler,
        astheno_defect: s.astheno_defect,
        volume,
        sup_d_omega: s.d_omega.sup_norm(&s.grid),
        monitors_at_trivial_state: full_report(&phi0, &data, 0.0, f64::NAN),
    };
    write_text(
        &ctx.out_dir.join("geometry.json"),
        &serde_json::to_string_pretty(&report).expect("report serializes"),
    )?;
    println!(
        "geometry: kaehler = {}, astheno defect = {:.3e}, volume = {:.12}",
        report.kaehler, report.astheno_defect, report.volume
    );
    Ok(EXIT_OK)
}
