//! Scenario files (TOML) and candidate-solution files.

use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use ergame_core::hamiltonian::CostParams;
use ergame_core::measures::{MeasureHandle, SymMat2, Vec2};
use ergame_core::riccati::{
    solve_ex1, solve_ex2_diagonal, solve_ex2_newton, BranchSpec, RiccatiError, RiccatiSolution,
};
use ergame_core::simulate::SimConfig;

pub const SOLVE_TOL: f64 = 1e-10;
pub const SOLVE_MAX_ITER: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Json,
    Csv,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub model: Model,
    pub sim: Sim,
    #[serde(default)]
    pub output: Output,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Model {
    /// "decoupled" (gamma interpolation) or "mean-penalty".
    pub kind: String,
    pub r1: f64,
    pub r2: f64,
    pub gamma: Option<f64>,
    pub eta1: Option<[f64; 2]>,
    pub eta2: Option<[f64; 2]>,
    #[serde(default, deserialize_with = "de_branch")]
    pub branch: Option<BranchSpec>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sim {
    pub n_particles: usize,
    pub dt: f64,
    pub t_final: f64,
    pub burn_in: f64,
    pub seed: u64,
    pub init_mean: Option<[f64; 2]>,
    /// Covariance entries [s11, s22, s12].
    pub init_cov: Option<[f64; 3]>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Output {
    #[serde(default = "default_format")]
    pub format: OutputFormat,
    pub path: Option<PathBuf>,
}

fn default_format() -> OutputFormat {
    OutputFormat::Json
}

impl Default for OutputFormat {
    fn default() -> Self {
        OutputFormat::Json
    }
}

pub fn parse_branch(s: &str) -> Result<BranchSpec, String> {
    match s {
        "++" => Ok(BranchSpec::PP),
        "+-" => Ok(BranchSpec::PM),
        "-+" => Ok(BranchSpec::MP),
        "--" => Ok(BranchSpec::MM),
        other => Err(format!("unknown branch {other:?}; expected ++, +-, -+ or --")),
    }
}

pub fn branch_string(b: BranchSpec) -> &'static str {
    let p = |s: i8| s > 0;
    match (p(b.sign1), p(b.sign2)) {
        (true, true) => "++",
        (true, false) => "+-",
        (false, true) => "-+",
        (false, false) => "--",
    }
}

fn de_branch<'de, D>(de: D) -> Result<Option<BranchSpec>, D::Error>
where
    D: serde::Deserializer<'de>,
{
    let raw: Option<String> = Option::deserialize(de)?;
    raw.map(|s| parse_branch(&s).map_err(serde::de::Error::custom)).transpose()
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Scenario, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        let sc: Scenario =
            toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        sc.params().validate().map_err(|e| e.to_string())?;
        match sc.model.kind.as_str() {
            "decoupled" => {
                if sc.model.eta1.is_some() || sc.model.eta2.is_some() {
                    return Err("eta1/eta2 are only valid for kind = \"mean-penalty\"".into());
                }
            }
            "mean-penalty" => {
                if sc.model.gamma.is_some() {
                    return Err("gamma is only valid for kind = \"decoupled\"".into());
                }
                if sc.model.eta1.is_none() || sc.model.eta2.is_none() {
                    return Err("kind = \"mean-penalty\" requires eta1 and eta2".into());
                }
            }
            other => return Err(format!("unknown model kind {other:?}")),
        }
        if let Some(c) = sc.sim.init_cov {
            let cov = SymMat2::new(c[0], c[1], c[2]);
            if !cov.is_psd() {
                return Err("sim.init_cov is not positive semidefinite".into());
            }
        }
        Ok(sc)
    }

    pub fn params(&self) -> CostParams {
        match self.model.kind.as_str() {
            "decoupled" => CostParams::Ex1Gamma {
                gamma: self.model.gamma.unwrap_or(0.0),
                r1: self.model.r1,
                r2: self.model.r2,
            },
            _ => CostParams::Ex2Eta {
                r1: self.model.r1,
                r2: self.model.r2,
                eta1: vec2(self.model.eta1.unwrap_or([0.0; 2])),
                eta2: vec2(self.model.eta2.unwrap_or([0.0; 2])),
            },
        }
    }

    /// Solves the Riccati system for this scenario's cost model. The branch,
    /// when given, selects the closed-form root where one applies and seeds
    /// Newton otherwise.
    pub fn solve(&self) -> Result<RiccatiSolution, RiccatiError> {
        let branch = self.model.branch.unwrap_or(BranchSpec::PP);
        let params = self.params();
        match &params {
            CostParams::Ex1Gamma { r1, r2, .. } => Ok(solve_ex1(*r1, *r2, branch)),
            CostParams::Ex2Eta { r1, r2, .. } => {
                match solve_ex2_diagonal(&params, branch) {
                    Ok(sol) => Ok(sol),
                    Err(RiccatiError::NotDiagonalPenalty) => {
                        let seed = solve_ex1(*r1, *r2, branch);
                        solve_ex2_newton(&params, Some(&seed), SOLVE_TOL, SOLVE_MAX_ITER)
                    }
                    Err(e) => Err(e),
                }
            }
        }
    }

    pub fn sim_config(&self) -> SimConfig {
        let mean = vec2(self.sim.init_mean.unwrap_or([0.0; 2]));
        let cov = self
            .sim
            .init_cov
            .map(|c| SymMat2::new(c[0], c[1], c[2]))
            .unwrap_or(SymMat2::IDENTITY);
        SimConfig {
            n_particles: self.sim.n_particles,
            dt: self.sim.dt,
            t_final: self.sim.t_final,
            burn_in: self.sim.burn_in,
            seed: self.sim.seed,
            init: MeasureHandle::gaussian(mean, cov),
        }
    }
}

fn vec2(a: [f64; 2]) -> Vec2 {
    Vec2::new(a[0], a[1])
}

/// Serialized form of a solution. Symmetric matrices are [a11, a22, a12].
#[derive(Debug, Serialize, Deserialize)]
pub struct SolutionData {
    pub q1_mat: [f64; 3],
    pub q2_mat: [f64; 3],
    pub r1_mat: [f64; 3],
    pub r2_mat: [f64; 3],
    pub q1_vec: [f64; 2],
    pub q2_vec: [f64; 2],
    pub c: [f64; 2],
    #[serde(default)]
    pub branch: Option<String>,
    #[serde(default)]
    pub residual_norm: Option<f64>,
}

impl SolutionData {
    pub fn from_solution(sol: &RiccatiSolution) -> SolutionData {
        let sym = |m: SymMat2| [m.a11, m.a22, m.a12];
        SolutionData {
            q1_mat: sym(sol.q_mat[0]),
            q2_mat: sym(sol.q_mat[1]),
            r1_mat: sym(sol.r_mat[0]),
            r2_mat: sym(sol.r_mat[1]),
            q1_vec: [sol.q_vec[0].x, sol.q_vec[0].y],
            q2_vec: [sol.q_vec[1].x, sol.q_vec[1].y],
            c: sol.c,
            branch: Some(branch_string(sol.branch).to_string()),
            residual_norm: Some(sol.residual_norm),
        }
    }

    pub fn to_solution(&self) -> Result<RiccatiSolution, String> {
        let sym = |a: [f64; 3]| SymMat2::new(a[0], a[1], a[2]);
        let branch = match &self.branch {
            Some(s) => parse_branch(s)?,
            None => BranchSpec::PP,
        };
        Ok(RiccatiSolution {
            q_mat: [sym(self.q1_mat), sym(self.q2_mat)],
            r_mat: [sym(self.r1_mat), sym(self.r2_mat)],
            q_vec: [vec2(self.q1_vec), vec2(self.q2_vec)],
            c: self.c,
            branch,
            residual_norm: self.residual_norm.unwrap_or(f64::NAN),
        })
    }
}

/// Reads a candidate solution from a TOML file (bare fields or under
/// [solution]) or from a JSON report with a top-level "solution" key.
pub fn load_solution(path: &Path) -> Result<RiccatiSolution, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let data: SolutionData = if let Ok(v) = serde_json::from_str::<serde_json::Value>(&text) {
        let inner = v.get("solution").cloned().unwrap_or(v);
        serde_json::from_value(inner).map_err(|e| format!("{}: {e}", path.display()))?
    } else {
        let v: toml::Value =
            toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        let inner = v.get("solution").cloned().unwrap_or(v);
        inner.try_into().map_err(|e| format!("{}: {e}", path.display()))?
    };
    data.to_solution()
}
