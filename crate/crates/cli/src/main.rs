//! Batch front end: scenario files in, solver/verification reports out.
//!
//! Commands:
//!   solve    - solve the Riccati system for a scenario, emit solution report
//!   verify   - full battery: residuals, simulation, deviations, values
//!   residual - evaluate a candidate solution file against the equations
//!   simulate - run the equilibrium particle system, emit a CSV trace
//!
//! Exit codes: 0 success, 1 verification failure, 2 solver failure,
//! 3 no ergodic branch, 4 config error.

mod report;
mod scenario;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use ergame_core::hamiltonian::{master_residual, CostParams, Player};
use ergame_core::measures::{MeasureHandle, SymMat2, Vec2};
use ergame_core::riccati::{
    ergodic_branch_filter, ex2_residual, inf_norm, invariant_gaussian, value_function,
    RiccatiError, RiccatiSolution,
};
use ergame_core::simulate::{
    deviation_trace, ergodic_cost, feedback_from_solution, finite_horizon_value,
    simulate_particles, DeviationSpec, SimError,
};
use scenario::{OutputFormat, Scenario};

#[derive(Parser)]
#[command(name = "ergame", version, about = "Ergodic mean-field LQ game solver and verifier")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve the Riccati system and report the equilibrium objects.
    Solve(CommonArgs),
    /// Solve, then run the full verification battery.
    Verify(CommonArgs),
    /// Evaluate a candidate solution file against the equations.
    Residual {
        #[command(flatten)]
        common: CommonArgs,
        /// Candidate solution (TOML, or a JSON report with a `solution` key).
        solution_file: PathBuf,
    },
    /// Simulate the equilibrium particle system and write the trace.
    Simulate(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Scenario file (TOML).
    #[arg(long)]
    scenario: PathBuf,
    /// Output path (defaults to the scenario's output.path, else stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output format override.
    #[arg(long, value_enum)]
    format: Option<OutputFormat>,
    /// Seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Evaluate the Master residual across a grid of gamma values.
    #[arg(long)]
    gamma_sweep: bool,
    /// Branch override for the closed-form solvers: ++, +-, -+ or --.
    #[arg(long)]
    branch: Option<String>,
}

/// Error carrying the process exit code.
struct CliError {
    code: u8,
    msg: String,
}

impl CliError {
    fn config(msg: impl Into<String>) -> Self {
        CliError { code: 4, msg: msg.into() }
    }
}

impl From<RiccatiError> for CliError {
    fn from(e: RiccatiError) -> Self {
        let code = match e {
            RiccatiError::EmptyResult => 3,
            _ => 2,
        };
        CliError { code, msg: e.to_string() }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Solve(a) => cmd_solve(a),
        Cmd::Verify(a) => cmd_verify(a),
        Cmd::Residual { common, solution_file } => cmd_residual(common, solution_file),
        Cmd::Simulate(a) => cmd_simulate(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {}", e.msg);
            ExitCode::from(e.code)
        }
    }
}

fn load_scenario(args: &CommonArgs) -> Result<Scenario, CliError> {
    let mut sc = Scenario::load(&args.scenario).map_err(CliError::config)?;
    if let Some(seed) = args.seed {
        sc.sim.seed = seed;
    }
    if let Some(b) = &args.branch {
        sc.model.branch = Some(scenario::parse_branch(b).map_err(CliError::config)?);
    }
    if let Some(f) = args.format {
        sc.output.format = f;
    }
    if let Some(p) = &args.out {
        sc.output.path = Some(p.clone());
    }
    Ok(sc)
}

fn write_output(sc: &Scenario, text: &str) -> Result<(), CliError> {
    match &sc.output.path {
        Some(p) => std::fs::write(p, text)
            .map_err(|e| CliError::config(format!("cannot write {}: {e}", p.display()))),
        None => {
            if text.ends_with('\n') {
                print!("{text}");
            } else {
                println!("{text}");
            }
            Ok(())
        }
    }
}

fn solve_scenario(sc: &Scenario) -> Result<(RiccatiSolution, CostParams), CliError> {
    let sol = sc.solve()?;
    let params = sc.params();
    // The accepted solution must sit on an ergodic branch.
    ergodic_branch_filter(&[sol], sc.model.r1, sc.model.r2)?;
    Ok((sol, params))
}

fn cmd_solve(args: &CommonArgs) -> Result<u8, CliError> {
    let sc = load_scenario(args)?;
    if sc.output.format == OutputFormat::Csv {
        return Err(CliError::config("csv output is only available for `simulate`"));
    }
    let (sol, params) = solve_scenario(&sc)?;
    let rep = report::solve_report(&sc, &sol, &params);
    write_output(&sc, &serde_json::to_string_pretty(&rep).unwrap())?;
    Ok(0)
}

fn cmd_verify(args: &CommonArgs) -> Result<u8, CliError> {
    let sc = load_scenario(args)?;
    if sc.output.format == OutputFormat::Csv {
        return Err(CliError::config("csv output is only available for `simulate`"));
    }
    let (sol, params) = solve_scenario(&sc)?;
    let (r1, r2) = (sc.model.r1, sc.model.r2);
    let law = feedback_from_solution(&sol, r1, r2);
    let mut verdicts: Vec<report::Verdict> = Vec::new();

    // 1. Riccati residual, re-evaluated.
    let res = ex2_residual(&sol, &params);
    verdicts.push(report::Verdict::new("riccati_residual", inf_norm(&res), 1e-9));

    // 2. Master residual at pseudo-random Gaussians.
    let worst = worst_master_residual(&sol, &params, sc.sim.seed, 20);
    verdicts.push(report::Verdict::new("master_residual", worst, 1e-9));

    // 3. Optional gamma sweep: the residual is gamma-independent.
    let mut sweep = None;
    if args.gamma_sweep {
        match params {
            CostParams::Ex1Gamma { r1, r2, .. } => {
                let vals: Vec<f64> = [0.0, 0.25, 0.5, 0.75, 1.0]
                    .iter()
                    .map(|&g| {
                        let p = CostParams::Ex1Gamma { gamma: g, r1, r2 };
                        worst_master_residual(&sol, &p, sc.sim.seed, 20)
                    })
                    .collect();
                let spread =
                    vals.iter().cloned().fold(f64::MIN, f64::max) - vals.iter().cloned().fold(f64::MAX, f64::min);
                verdicts.push(report::Verdict::new("gamma_sweep_spread", spread, 1e-12));
                sweep = Some(vals);
            }
            _ => return Err(CliError::config("--gamma-sweep requires an ex1 scenario")),
        }
    }

    // 4. Equilibrium simulation: ergodic cost and invariant measure.
    let cfg = sc.sim_config();
    let mut ergodic = serde_json::Value::Null;
    match simulate_particles(&law, &cfg, &params) {
        Ok(trace) => {
            let (e1, e2) = ergodic_cost(&trace);
            let rel = ((e1 - sol.c[0]) / sol.c[0]).abs().max(((e2 - sol.c[1]) / sol.c[1]).abs());
            verdicts.push(report::Verdict::new("ergodic_cost_rel_err", rel, 0.05));
            let pi = invariant_gaussian(&sol, r1, r2)?;
            let tail = &trace.tail_cloud_stats;
            let mean_err = (tail.mean - pi.mean).norm();
            verdicts.push(report::Verdict::new("invariant_mean_abs_err", mean_err, 0.05));
            let cov_err = cov_rel_err(tail.cov, pi.cov);
            verdicts.push(report::Verdict::new("invariant_cov_rel_err", cov_err, 0.10));
            ergodic = report::ergodic_section(&[e1, e2], &sol.c, pi, tail);
        }
        Err(SimError::Diverged { t }) => {
            verdicts.push(report::Verdict::fail("equilibrium_diverged", t, f64::INFINITY));
        }
        Err(e) => return Err(CliError::config(e.to_string())),
    }

    // 5. Nash deviations: scaling the deviator's own gain must not pay.
    let scalings = [0.5, 0.8, 1.2, 1.5];
    let mut nash_rows = Vec::new();
    let mut nash_pass = true;
    for player in [Player::One, Player::Two] {
        for &s in &scalings {
            let mut dev_law = law;
            dev_law.g = scale_own_row(law.g, player, s);
            let dev = DeviationSpec { player, law: dev_law };
            let cost = match deviation_trace(&sol, &params, &dev, &cfg) {
                Ok(tr) => {
                    let (d1, d2) = ergodic_cost(&tr);
                    [d1, d2][player.index()]
                }
                // A destabilizing deviation pays infinitely much.
                Err(SimError::Diverged { .. }) => f64::INFINITY,
                Err(e) => return Err(CliError::config(e.to_string())),
            };
            let c_eq = sol.c[player.index()];
            let slack = 0.02 * c_eq.abs();
            let lower_ok = cost >= c_eq - slack;
            let strict_ok = if s == 0.5 || s == 1.5 { cost > c_eq + 0.005 * c_eq.abs() } else { true };
            nash_pass &= lower_ok && strict_ok;
            nash_rows.push(report::DeviationRow {
                player: player.index() + 1,
                scale: s,
                cost,
                excess: cost - c_eq,
                pass: lower_ok && strict_ok,
            });
        }
    }
    verdicts.push(report::Verdict::boolean("nash_deviations", nash_pass));

    // 6. Value-function identity from the scenario's initial law.
    let (v1, v2) = value_function(&sol, r1, r2, &cfg.init)?;
    let mut vcfg = cfg.clone();
    vcfg.burn_in = 0.0;
    vcfg.t_final = vcfg.t_final.min(50.0);
    let values = match simulate_particles(&law, &vcfg, &params) {
        Ok(tr) => {
            let (s1, s2) = finite_horizon_value(&tr, sol.c[0], sol.c[1]);
            let err = (s1 - v1).abs().max((s2 - v2).abs());
            // The time integral of the empirical cost rate carries Monte
            // Carlo noise of order sqrt(T / N); budget for it explicitly.
            let sampling = 2.0 * (vcfg.t_final / vcfg.n_particles as f64).sqrt();
            let tol = 0.1 * v1.abs().max(v2.abs()).max(1.5) + sampling;
            verdicts.push(report::Verdict::new("value_identity_abs_err", err, tol));
            report::values_section(&[v1, v2], &[s1, s2])
        }
        Err(e) => {
            verdicts.push(report::Verdict::fail("value_run_failed", f64::NAN, 0.0));
            let _ = e;
            serde_json::Value::Null
        }
    };

    let all_pass = verdicts.iter().all(|v| v.pass);
    let rep = report::verify_report(
        &sc, &sol, &params, &verdicts, ergodic, nash_rows, values, sweep,
    );
    write_output(&sc, &serde_json::to_string_pretty(&rep).unwrap())?;
    Ok(if all_pass { 0 } else { 1 })
}

fn cmd_residual(args: &CommonArgs, solution_file: &PathBuf) -> Result<u8, CliError> {
    let sc = load_scenario(args)?;
    let params = sc.params();
    let sol = scenario::load_solution(solution_file).map_err(CliError::config)?;
    let res = ex2_residual(&sol, &params);
    let v1 = sol.poly_value(Player::One);
    let v2 = sol.poly_value(Player::Two);
    let mut masters = Vec::new();
    for mu in probe_measures(sc.sim.seed, 5) {
        let (m1, m2) = master_residual(&v1, &v2, sol.c[0], sol.c[1], &params, &mu);
        masters.push((mu, m1, m2));
    }
    let rep = report::residual_report(&sc, &sol, &res, &masters);
    write_output(&sc, &serde_json::to_string_pretty(&rep).unwrap())?;
    Ok(0)
}

fn cmd_simulate(args: &CommonArgs) -> Result<u8, CliError> {
    let sc = load_scenario(args)?;
    let (sol, params) = solve_scenario(&sc)?;
    let law = feedback_from_solution(&sol, sc.model.r1, sc.model.r2);
    let cfg = sc.sim_config();
    let trace = simulate_particles(&law, &cfg, &params).map_err(|e| match e {
        SimError::Diverged { .. } => CliError { code: 1, msg: e.to_string() },
        SimError::BadConfig(_) => CliError::config(e.to_string()),
    })?;
    match sc.output.format {
        OutputFormat::Csv => write_output(&sc, &report::trace_csv(&trace)),
        OutputFormat::Json => {
            let rep = report::trace_json(&sc, &trace);
            write_output(&sc, &serde_json::to_string_pretty(&rep).unwrap())
        }
    }?;
    Ok(0)
}

fn scale_own_row(g: ergame_core::measures::Mat2, player: Player, s: f64) -> ergame_core::measures::Mat2 {
    let mut out = g;
    match player {
        Player::One => {
            out.a11 *= s;
            out.a12 *= s;
        }
        Player::Two => {
            out.a21 *= s;
            out.a22 *= s;
        }
    }
    out
}

fn cov_rel_err(got: SymMat2, want: SymMat2) -> f64 {
    // Zero reference entries are judged against the geometric-mean scale.
    let scale12 = (want.a11 * want.a22).abs().sqrt().max(want.a12.abs());
    [
        (got.a11 - want.a11).abs() / want.a11.abs(),
        (got.a22 - want.a22).abs() / want.a22.abs(),
        (got.a12 - want.a12).abs() / scale12,
    ]
    .into_iter()
    .fold(0.0, f64::max)
}

/// Deterministic Gaussian probe measures derived from the seed.
fn probe_measures(seed: u64, n: usize) -> Vec<MeasureHandle> {
    let mut state = seed ^ 0x6A09_E667_F3BC_C909;
    let mut next = move || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (state >> 11) as f64 / (1u64 << 53) as f64
    };
    (0..n)
        .map(|_| {
            let mean = Vec2::new(4.0 * next() - 2.0, 4.0 * next() - 2.0);
            let l1 = 0.1 + 2.9 * next();
            let l2 = 0.1 + 2.9 * next();
            let th = std::f64::consts::PI * next();
            let (c, s) = (th.cos(), th.sin());
            let cov = SymMat2::new(
                l1 * c * c + l2 * s * s,
                l1 * s * s + l2 * c * c,
                (l1 - l2) * c * s,
            );
            MeasureHandle::gaussian(mean, cov)
        })
        .collect()
}

fn worst_master_residual(
    sol: &RiccatiSolution,
    params: &CostParams,
    seed: u64,
    n: usize,
) -> f64 {
    let v1 = sol.poly_value(Player::One);
    let v2 = sol.poly_value(Player::Two);
    probe_measures(seed, n)
        .iter()
        .map(|mu| {
            let (a, b) = master_residual(&v1, &v2, sol.c[0], sol.c[1], params, mu);
            a.abs().max(b.abs())
        })
        .fold(0.0, f64::max)
}
