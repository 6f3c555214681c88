//! JSON report assembly and CSV trace formatting.

use serde::Serialize;
use serde_json::{json, Value};

use ergame_core::hamiltonian::CostParams;
use ergame_core::measures::{GaussianMeasure, Mat2, MeasureHandle, SymMat2, Vec2};
use ergame_core::riccati::{
    gain_matrices, invariant_gaussian, mean_dynamics_matrix, stability_margin, RiccatiSolution,
};
use ergame_core::simulate::SimTrace;

use crate::scenario::{Scenario, SolutionData};

/// One checked quantity: value, tolerance it was judged against, verdict.
#[derive(Debug, Serialize)]
pub struct Verdict {
    pub name: &'static str,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Verdict {
    pub fn new(name: &'static str, value: f64, tolerance: f64) -> Verdict {
        Verdict { name, value, tolerance, pass: value.is_finite() && value.abs() <= tolerance }
    }

    pub fn fail(name: &'static str, value: f64, tolerance: f64) -> Verdict {
        Verdict { name, value, tolerance, pass: false }
    }

    pub fn boolean(name: &'static str, pass: bool) -> Verdict {
        Verdict { name, value: if pass { 0.0 } else { 1.0 }, tolerance: 0.0, pass }
    }
}

#[derive(Debug, Serialize)]
pub struct DeviationRow {
    pub player: usize,
    pub scale: f64,
    pub cost: f64,
    pub excess: f64,
    pub pass: bool,
}

fn vec2_json(v: Vec2) -> Value {
    json!([v.x, v.y])
}

fn sym_json(m: SymMat2) -> Value {
    json!({ "a11": m.a11, "a22": m.a22, "a12": m.a12 })
}

fn mat_json(m: Mat2) -> Value {
    json!([[m.a11, m.a12], [m.a21, m.a22]])
}

fn gaussian_json(g: &GaussianMeasure) -> Value {
    json!({ "mean": vec2_json(g.mean), "cov": sym_json(g.cov) })
}

fn scenario_section(sc: &Scenario, params: &CostParams) -> Value {
    let mut model = json!({
        "kind": sc.model.kind,
        "r1": sc.model.r1,
        "r2": sc.model.r2,
    });
    match params {
        CostParams::Ex1Gamma { gamma, .. } => {
            model["gamma"] = json!(gamma);
        }
        CostParams::Ex2Eta { eta1, eta2, .. } => {
            model["eta1"] = vec2_json(*eta1);
            model["eta2"] = vec2_json(*eta2);
        }
    }
    json!({
        "model": model,
        "sim": {
            "n_particles": sc.sim.n_particles,
            "dt": sc.sim.dt,
            "t_final": sc.sim.t_final,
            "burn_in": sc.sim.burn_in,
            "seed": sc.sim.seed,
        },
    })
}

fn stability_section(sc: &Scenario, sol: &RiccatiSolution, r1: f64, r2: f64) -> Value {
    let st = stability_margin(sol, r1, r2);
    let md = mean_dynamics_matrix(sol, r1, r2);
    let mut out = json!({
        "lambda_min": st.lambda_min,
        "mean_gain_norm": st.mean_gain_norm,
        "eps_star": st.eps_star,
        "margin": st.margin,
        "holds": st.holds,
        "mean_dynamics": {
            "matrix": mat_json(md.matrix),
            "eig_real_parts": [md.eig_real_parts.0, md.eig_real_parts.1],
            "stable": md.stable,
        },
    });
    // Published reference tables for the mean-penalty example with
    // eta1 = (1, -0.15), eta2 = (0.2, 1.2), r2 = 1.5 quote
    // lambda_min = 0.7453559925 = 1/sqrt(1.8) and |R| = 0.4674876586. Those
    // figures belong to the r1 = 1.8 root of the system, so flag them when
    // this configuration is solved at r1 = 1, and flag the match when the
    // reported triple reproduces them.
    let reference_etas = sc.model.kind == "mean-penalty"
        && sc.model.eta1 == Some([1.0, -0.15])
        && sc.model.eta2 == Some([0.2, 1.2])
        && r2 == 1.5;
    if reference_etas && r1 == 1.0 {
        out["note"] = json!(
            "published reference tables for this configuration quote \
             lambda_min = 0.7453559925 and |R| = 0.4674876586; those values \
             correspond to the r1 = 1.8 root, not the r1 = 1 root reported here"
        );
    } else if (st.lambda_min - 0.7453559925).abs() < 1e-7
        && (st.mean_gain_norm - 0.4674876586).abs() < 1e-7
    {
        out["note"] = json!(
            "this triple matches the commonly quoted reference values; they \
             correspond to the r1 = 1.8 root of the mean-penalty example"
        );
    }
    out
}

pub fn solve_report(sc: &Scenario, sol: &RiccatiSolution, params: &CostParams) -> Value {
    let (r1, r2) = (sc.model.r1, sc.model.r2);
    let g = gain_matrices(sol, r1, r2);
    let invariant = invariant_gaussian(sol, r1, r2)
        .map(|pi| gaussian_json(&pi))
        .unwrap_or(Value::Null);
    json!({
        "scenario": scenario_section(sc, params),
        "solution": solution_section(sol),
        "gains": {
            "state": mat_json(g.state),
            "mean": mat_json(g.mean),
            "constant": vec2_json(g.constant),
        },
        "stability": stability_section(sc, sol, r1, r2),
        "invariant_measure": invariant,
    })
}

fn solution_section(sol: &RiccatiSolution) -> Value {
    serde_json::to_value(SolutionData::from_solution(sol)).unwrap()
}

pub fn ergodic_section(
    simulated: &[f64; 2],
    analytic: &[f64; 2],
    pi: GaussianMeasure,
    tail: &GaussianMeasure,
) -> Value {
    json!({
        "simulated_cost": simulated,
        "analytic_cost": analytic,
        "invariant_measure": gaussian_json(&pi),
        "tail_moments": gaussian_json(tail),
    })
}

pub fn values_section(analytic: &[f64; 2], simulated: &[f64; 2]) -> Value {
    json!({ "analytic": analytic, "simulated": simulated })
}

#[allow(clippy::too_many_arguments)]
pub fn verify_report(
    sc: &Scenario,
    sol: &RiccatiSolution,
    params: &CostParams,
    verdicts: &[Verdict],
    ergodic: Value,
    nash: Vec<DeviationRow>,
    values: Value,
    gamma_sweep: Option<Vec<f64>>,
) -> Value {
    let mut rep = solve_report(sc, sol, params);
    rep["ergodic"] = ergodic;
    rep["nash"] = serde_json::to_value(nash).unwrap();
    rep["values"] = values;
    if let Some(vals) = gamma_sweep {
        rep["gamma_sweep"] = json!(vals);
    }
    rep["pass"] = json!(verdicts.iter().all(|v| v.pass));
    rep["verdicts"] = serde_json::to_value(verdicts).unwrap();
    rep
}

pub fn residual_report(
    sc: &Scenario,
    sol: &RiccatiSolution,
    residual: &[f64; 16],
    masters: &[(MeasureHandle, f64, f64)],
) -> Value {
    let params = sc.params();
    let norm = residual.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    let master_rows: Vec<Value> = masters
        .iter()
        .map(|(mu, m1, m2)| {
            let probe = match mu {
                MeasureHandle::Gaussian(g) => gaussian_json(g),
                MeasureHandle::Empirical(e) => json!({ "n_particles": e.len() }),
            };
            json!({ "measure": probe, "residual": [m1, m2] })
        })
        .collect();
    json!({
        "scenario": scenario_section(sc, &params),
        "solution": solution_section(sol),
        "riccati_residual": residual.to_vec(),
        "riccati_residual_norm": norm,
        "master_residuals": master_rows,
    })
}

pub fn trace_json(sc: &Scenario, trace: &SimTrace) -> Value {
    let params = sc.params();
    json!({
        "scenario": scenario_section(sc, &params),
        "trace": {
            "t": trace.times,
            "mean": trace.mean_path.iter().map(|m| vec2_json(*m)).collect::<Vec<_>>(),
            "second_moment": trace.second_moment_path.iter().map(|s| sym_json(*s)).collect::<Vec<_>>(),
            "cost_rates": trace.cost_rates,
            "cost_accum": trace.cost_accum,
            "tail_moments": gaussian_json(&trace.tail_cloud_stats),
        },
    })
}

/// Columns: time, empirical mean, empirical second moment, and the running
/// time-average of each player's cost (rate at t = 0).
pub fn trace_csv(trace: &SimTrace) -> String {
    let mut out = String::from("t,m1,m2,s11,s22,s12,cost1_avg,cost2_avg\n");
    for k in 0..trace.times.len() {
        let t = trace.times[k];
        let m = trace.mean_path[k];
        let s = trace.second_moment_path[k];
        let avg = |i: usize| {
            if t > 0.0 {
                trace.cost_accum[i][k] / t
            } else {
                trace.cost_rates[i][0]
            }
        };
        out.push_str(&format!(
            "{t:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
            m.x,
            m.y,
            s.a11,
            s.a22,
            s.a12,
            avg(0),
            avg(1),
        ));
    }
    out
}
