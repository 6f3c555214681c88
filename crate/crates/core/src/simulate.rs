//! Interacting-particle simulation of the closed-loop mean-field dynamics:
//! Euler-Maruyama stepping with a synchronous empirical mean, ergodic-cost
//! estimation, Nash-deviation runs, and admissibility diagnostics.
//!
//! Noise is counter-based: each (seed, particle, step) triple is hashed into
//! a Gaussian pair, so traces are bitwise identical for any thread count.

use crate::hamiltonian::{CostParams, Player};
use crate::measures::{
    EmpiricalMeasure, GaussianMeasure, Mat2, MeasureHandle, SymMat2, Vec2,
};
use crate::riccati::{gain_matrices, RiccatiSolution};
use rayon::prelude::*;

/// Affine feedback α(μ, x) = −(G x + L m(μ) + k).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeedbackLaw {
    pub g: Mat2,
    pub l: Mat2,
    pub k: Vec2,
}

impl FeedbackLaw {
    pub const ZERO: FeedbackLaw = FeedbackLaw { g: Mat2::ZERO, l: Mat2::ZERO, k: Vec2::ZERO };

    pub fn control(&self, mean: Vec2, x: Vec2) -> Vec2 {
        -(self.g.mul_vec(x) + self.l.mul_vec(mean) + self.k)
    }

    /// Row i taken from `rows[i]`: each player applies their own law to
    /// their own coordinate.
    fn from_rows(rows: [&FeedbackLaw; 2]) -> FeedbackLaw {
        let pick = |m: fn(&FeedbackLaw) -> Mat2| {
            let r0 = m(rows[0]).row(0);
            let r1 = m(rows[1]).row(1);
            Mat2::new(r0.x, r0.y, r1.x, r1.y)
        };
        FeedbackLaw {
            g: pick(|l| l.g),
            l: pick(|l| l.l),
            k: Vec2::new(rows[0].k.x, rows[1].k.y),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub n_particles: usize,
    pub dt: f64,
    pub t_final: f64,
    pub burn_in: f64,
    pub seed: u64,
    pub init: MeasureHandle,
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.n_particles < 2 {
            return Err(SimError::BadConfig("need at least 2 particles".into()));
        }
        if !(self.dt > 0.0 && self.dt <= 0.05) {
            return Err(SimError::BadConfig("dt must lie in (0, 0.05]".into()));
        }
        if !(self.t_final > 0.0) {
            return Err(SimError::BadConfig("t_final must be positive".into()));
        }
        if !(0.0..self.t_final).contains(&self.burn_in) {
            return Err(SimError::BadConfig("burn_in must lie in [0, t_final)".into()));
        }
        Ok(())
    }

    fn n_steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SimError {
    #[error("particle coordinate exceeded 1e6 at t = {t}")]
    Diverged { t: f64 },
    #[error("invalid simulation config: {0}")]
    BadConfig(String),
}

/// Per-step moment and cost record of one particle run.
#[derive(Debug, Clone)]
pub struct SimTrace {
    pub times: Vec<f64>,
    pub mean_path: Vec<Vec2>,
    pub second_moment_path: Vec<SymMat2>,
    /// Instantaneous per-player cost rate at each grid point.
    pub cost_rates: [Vec<f64>; 2],
    /// Left-endpoint running integral of the cost rate.
    pub cost_accum: [Vec<f64>; 2],
    pub final_cloud: EmpiricalMeasure,
    /// Gaussian matched to the time-averaged post-burn-in moments.
    pub tail_cloud_stats: GaussianMeasure,
    pub dt: f64,
    pub burn_in: f64,
}

/// Which player deviates, and the replacement law applied to their row.
#[derive(Debug, Clone, Copy)]
pub struct DeviationSpec {
    pub player: Player,
    pub law: FeedbackLaw,
}

pub fn feedback_from_solution(sol: &RiccatiSolution, r1: f64, r2: f64) -> FeedbackLaw {
    let g = gain_matrices(sol, r1, r2);
    FeedbackLaw { g: g.state, l: g.mean, k: g.constant }
}

const DIVERGE_LIMIT: f64 = 1e6;
const BLOCK: usize = 1024;
// Stream tag separating initial-condition draws from path noise.
const INIT_STREAM: u64 = u64::MAX;

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn counter_hash(seed: u64, particle: u64, step: u64) -> u64 {
    let a = mix64(seed ^ 0x9E37_79B9_7F4A_7C15);
    let b = mix64(a ^ particle.wrapping_mul(0xD1B5_4A32_D192_ED03));
    mix64(b ^ step.wrapping_mul(0xA9B4_1593_68E5_2C23))
}

fn unit_open(h: u64) -> f64 {
    ((h >> 11) as f64 + 0.5) / (1u64 << 53) as f64
}

/// Standard Gaussian pair for one (particle, step) slot via Box-Muller.
fn gauss_pair(seed: u64, particle: u64, step: u64) -> (f64, f64) {
    let u1 = unit_open(counter_hash(seed, particle, step.wrapping_mul(2)));
    let u2 = unit_open(counter_hash(seed, particle, step.wrapping_mul(2).wrapping_add(1)));
    let r = (-2.0 * u1.ln()).sqrt();
    let th = 2.0 * std::f64::consts::PI * u2;
    (r * th.cos(), r * th.sin())
}

fn sample_initial(init: &MeasureHandle, n: usize, seed: u64) -> Vec<Vec2> {
    match init {
        MeasureHandle::Gaussian(g) => {
            let root = g.cov.sqrt_psd();
            (0..n)
                .map(|p| {
                    let (z1, z2) = gauss_pair(seed, p as u64, INIT_STREAM);
                    g.mean + root.mul_vec(Vec2::new(z1, z2))
                })
                .collect()
        }
        MeasureHandle::Empirical(e) => {
            let pts = e.particles();
            (0..n)
                .map(|p| {
                    let h = counter_hash(seed, p as u64, INIT_STREAM - 1);
                    pts[(h % pts.len() as u64) as usize]
                })
                .collect()
        }
    }
}

/// Deterministic fixed-shape reduction of first and second moment sums.
fn moment_sums(particles: &[Vec2]) -> (Vec2, SymMat2) {
    let blocks: Vec<(Vec2, SymMat2)> = particles
        .par_chunks(BLOCK)
        .map(|chunk| {
            let mut s = Vec2::ZERO;
            let mut m = SymMat2::ZERO;
            for &x in chunk {
                s = s + x;
                m = m.add(SymMat2::new(x.x * x.x, x.y * x.y, x.x * x.y));
            }
            (s, m)
        })
        .collect();
    blocks
        .into_iter()
        .fold((Vec2::ZERO, SymMat2::ZERO), |(s, m), (bs, bm)| (s + bs, m.add(bm)))
}

/// Exact per-player cost rate of the particle system at the current moments:
/// the running cost is quadratic, so the particle average reduces to the
/// empirical mean and second moment.
fn cost_rate(params: &CostParams, law: &FeedbackLaw, mean: Vec2, second: SymMat2) -> [f64; 2] {
    let c = law.l.mul_vec(mean) + law.k;
    let gm2gt = law.g.mul_mat(second.to_mat()).mul_mat(law.g.transpose());
    let gm = law.g.mul_vec(mean);
    let mut out = [0.0; 2];
    for player in [Player::One, Player::Two] {
        let i = player.index();
        let alpha_sq = [gm2gt.a11, gm2gt.a22][i]
            + 2.0 * gm.component(i) * c.component(i)
            + c.component(i) * c.component(i);
        out[i] = params.state_cost_from_moments(player, mean, second.trace())
            + params.r(player) * alpha_sq;
    }
    out
}

fn run(
    law: &FeedbackLaw,
    cfg: &SimConfig,
    params: &CostParams,
) -> Result<SimTrace, SimError> {
    cfg.validate()?;
    let n = cfg.n_particles;
    let n_steps = cfg.n_steps();
    let sqrt_dt = cfg.dt.sqrt();
    let mut particles = sample_initial(&cfg.init, n, cfg.seed);

    let mut times = Vec::with_capacity(n_steps + 1);
    let mut mean_path = Vec::with_capacity(n_steps + 1);
    let mut second_path = Vec::with_capacity(n_steps + 1);
    let mut rates = [Vec::with_capacity(n_steps + 1), Vec::with_capacity(n_steps + 1)];
    let mut accum = [Vec::with_capacity(n_steps + 1), Vec::with_capacity(n_steps + 1)];
    let mut running = [0.0; 2];

    for step in 0..=n_steps {
        let t = step as f64 * cfg.dt;
        let (sum, sum2) = moment_sums(&particles);
        let mean = sum * (1.0 / n as f64);
        let second = sum2.scale(1.0 / n as f64);
        let rate = cost_rate(params, law, mean, second);
        times.push(t);
        mean_path.push(mean);
        second_path.push(second);
        for i in 0..2 {
            rates[i].push(rate[i]);
            accum[i].push(running[i]);
        }
        if step == n_steps {
            break;
        }
        for i in 0..2 {
            running[i] += rate[i] * cfg.dt;
        }

        let seed = cfg.seed;
        let dt = cfg.dt;
        let diverged = particles
            .par_chunks_mut(BLOCK)
            .enumerate()
            .map(|(b, chunk)| {
                let mut bad = false;
                for (j, x) in chunk.iter_mut().enumerate() {
                    let p = (b * BLOCK + j) as u64;
                    let alpha = law.control(mean, *x);
                    let (z1, z2) = gauss_pair(seed, p, step as u64);
                    *x = *x + alpha * dt + Vec2::new(z1, z2) * sqrt_dt;
                    if x.x.abs() > DIVERGE_LIMIT || x.y.abs() > DIVERGE_LIMIT {
                        bad = true;
                    }
                }
                bad
            })
            .reduce(|| false, |a, b| a || b);
        if diverged {
            return Err(SimError::Diverged { t: t + cfg.dt });
        }
    }

    // Time-averaged moments over the post-burn-in window.
    let first_tail = (cfg.burn_in / cfg.dt).round() as usize;
    let tail_len = (n_steps + 1 - first_tail) as f64;
    let mut tm = Vec2::ZERO;
    let mut ts = SymMat2::ZERO;
    for k in first_tail..=n_steps {
        tm = tm + mean_path[k];
        ts = ts.add(second_path[k]);
    }
    tm = tm * (1.0 / tail_len);
    ts = ts.scale(1.0 / tail_len);
    let tail_cov = ts.sub(crate::measures::symmetrize(tm.outer(tm)));
    let tail_cloud_stats = GaussianMeasure::new(tm, tail_cov);

    Ok(SimTrace {
        times,
        mean_path,
        second_moment_path: second_path,
        cost_rates: rates,
        cost_accum: accum,
        final_cloud: EmpiricalMeasure::new(particles),
        tail_cloud_stats,
        dt: cfg.dt,
        burn_in: cfg.burn_in,
    })
}

/// Euler-Maruyama run of the closed loop under one feedback law for both
/// players. The empirical mean for each step is computed once, before any
/// particle moves.
pub fn simulate_particles(
    law: &FeedbackLaw,
    cfg: &SimConfig,
    params: &CostParams,
) -> Result<SimTrace, SimError> {
    run(law, cfg, params)
}

/// Long-run average cost over the post-burn-in window.
pub fn ergodic_cost(trace: &SimTrace) -> (f64, f64) {
    let last = trace.times.len() - 1;
    let first = (trace.burn_in / trace.dt).round() as usize;
    let span = trace.times[last] - trace.times[first];
    (
        (trace.cost_accum[0][last] - trace.cost_accum[0][first]) / span,
        (trace.cost_accum[1][last] - trace.cost_accum[1][first]) / span,
    )
}

/// ∫₀^T (cost rate − cᵢ) dt, trapezoidal on the trace grid. The trace must
/// start from the target initial law with no burn-in truncation.
pub fn finite_horizon_value(trace: &SimTrace, c1: f64, c2: f64) -> (f64, f64) {
    let c = [c1, c2];
    let mut out = [0.0; 2];
    for i in 0..2 {
        let r = &trace.cost_rates[i];
        let mut acc = 0.0;
        for k in 0..r.len() - 1 {
            acc += 0.5 * ((r[k] - c[i]) + (r[k + 1] - c[i])) * trace.dt;
        }
        out[i] = acc;
    }
    (out[0], out[1])
}

/// Exact solution of dm/dt = −M m − q with M = Qg + Rg, via the closed-form
/// 2x2 matrix exponential.
pub fn mean_path_analytic(
    sol: &RiccatiSolution,
    r1: f64,
    r2: f64,
    m0: Vec2,
    times: &[f64],
) -> Vec<Vec2> {
    let g = gain_matrices(sol, r1, r2);
    let m = g.state.add(g.mean);
    let q = g.constant;
    // Fixed point −M⁻¹ q; a zero q needs no inverse.
    let m_inf = if q == Vec2::ZERO {
        Vec2::ZERO
    } else {
        m.inverse().expect("mean dynamics matrix is singular with nonzero constant gain")
            .mul_vec(q)
            * -1.0
    };
    times.iter().map(|&t| expm_neg(m, t).mul_vec(m0 - m_inf) + m_inf).collect()
}

/// e^{−At} for a 2x2 matrix, by splitting A into its trace part and a
/// traceless remainder B with B² = δI.
fn expm_neg(a: Mat2, t: f64) -> Mat2 {
    let half_tr = 0.5 * a.trace();
    let b = a.add(Mat2::IDENTITY.scale(-half_tr));
    let delta = 0.25 * a.trace() * a.trace() - a.det();
    // cosh(s√δ) and sinh(s√δ)/√δ, valid for either sign of δ.
    let s = -t;
    let (ch, shc) = if delta > 1e-12 {
        let w = delta.sqrt();
        ((w * s).cosh(), (w * s).sinh() / w)
    } else if delta < -1e-12 {
        let w = (-delta).sqrt();
        ((w * s).cos(), (w * s).sin() / w)
    } else {
        // Degenerate eigenvalues: series in δs² up to machine precision.
        let x = delta * s * s;
        (1.0 + x / 2.0 + x * x / 24.0, s * (1.0 + x / 6.0 + x * x / 120.0))
    };
    Mat2::IDENTITY.scale(ch).add(b.scale(shc)).scale((-half_tr * t).exp())
}

/// Simulates the coupled system where the deviating player's row follows
/// `dev.law` and the opponent keeps the equilibrium feedback.
pub fn deviation_trace(
    sol: &RiccatiSolution,
    params: &CostParams,
    dev: &DeviationSpec,
    cfg: &SimConfig,
) -> Result<SimTrace, SimError> {
    let r1 = params.r(Player::One);
    let r2 = params.r(Player::Two);
    let eq = feedback_from_solution(sol, r1, r2);
    let rows = match dev.player {
        Player::One => [&dev.law, &eq],
        Player::Two => [&eq, &dev.law],
    };
    run(&FeedbackLaw::from_rows(rows), cfg, params)
}

/// Admissibility demonstration: the plain contraction α = −Cx.
pub fn stabilizing_baseline(
    c: f64,
    cfg: &SimConfig,
    params: &CostParams,
) -> Result<SimTrace, SimError> {
    if c <= 0.0 {
        return Err(SimError::BadConfig("baseline gain must be positive".into()));
    }
    let law = FeedbackLaw { g: Mat2::IDENTITY.scale(c), l: Mat2::ZERO, k: Vec2::ZERO };
    run(&law, cfg, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::riccati::{solve_ex1, solve_ex2_diagonal, BranchSpec};

    fn approx(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} != {b} (tol {tol})");
    }

    fn ex2_params(r1: f64, r2: f64) -> CostParams {
        CostParams::Ex2Eta { r1, r2, eta1: Vec2::ZERO, eta2: Vec2::ZERO }
    }

    fn small_cfg(seed: u64) -> SimConfig {
        SimConfig {
            n_particles: 512,
            dt: 0.01,
            t_final: 5.0,
            burn_in: 1.0,
            seed,
            init: MeasureHandle::dirac(Vec2::new(1.0, 1.0)),
        }
    }

    #[test]
    fn feedback_from_solution_examples() {
        let s = solve_ex1(1.0, 1.0, BranchSpec::PP);
        let law = feedback_from_solution(&s, 1.0, 1.0);
        assert_eq!(law.g, Mat2::IDENTITY);
        let a = law.control(Vec2::ZERO, Vec2::new(2.0, -3.0));
        assert_eq!(a, Vec2::new(-2.0, 3.0));

        let p = CostParams::Ex2Eta {
            r1: 1.0,
            r2: 1.0,
            eta1: Vec2::new(1.0, 0.0),
            eta2: Vec2::new(0.0, 1.0),
        };
        let sd = solve_ex2_diagonal(&p, BranchSpec::PP).unwrap();
        let law = feedback_from_solution(&sd, 1.0, 1.0);
        // alpha_1 = -(x1 + (sqrt2 - 1) m1)
        let a = law.control(Vec2::new(1.0, 0.0), Vec2::new(1.0, 0.0));
        approx(a.x, -(1.0 + (2.0_f64.sqrt() - 1.0)), 1e-12);
    }

    #[test]
    fn config_validation() {
        let mut cfg = small_cfg(1);
        cfg.dt = 0.1;
        assert!(matches!(cfg.validate(), Err(SimError::BadConfig(_))));
        cfg.dt = 0.01;
        cfg.burn_in = 5.0;
        assert!(matches!(cfg.validate(), Err(SimError::BadConfig(_))));
        cfg.burn_in = 0.0;
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn bitwise_determinism() {
        let s = solve_ex1(1.0, 1.0, BranchSpec::PP);
        let law = feedback_from_solution(&s, 1.0, 1.0);
        let p = ex2_params(1.0, 1.0);
        let a = simulate_particles(&law, &small_cfg(7), &p).unwrap();
        let b = simulate_particles(&law, &small_cfg(7), &p).unwrap();
        assert_eq!(a.mean_path, b.mean_path);
        assert_eq!(a.second_moment_path, b.second_moment_path);
        assert_eq!(a.cost_accum[0], b.cost_accum[0]);
        assert_eq!(a.final_cloud, b.final_cloud);

        // Deviating with the equilibrium law is the same program path.
        let dev = DeviationSpec { player: Player::One, law };
        let c = deviation_trace(&s, &p, &dev, &small_cfg(7)).unwrap();
        assert_eq!(a.mean_path, c.mean_path);
        assert_eq!(a.second_moment_path, c.second_moment_path);
    }

    #[test]
    fn noise_marginals_are_standard() {
        // Sample moments of the counter-based Gaussian stream.
        let n = 200_000;
        let (mut s1, mut s2, mut sq, mut cross) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..n {
            let (z1, z2) = gauss_pair(42, i as u64, i as u64 / 7);
            s1 += z1;
            s2 += z2;
            sq += z1 * z1 + z2 * z2;
            cross += z1 * z2;
        }
        let nf = n as f64;
        assert!((s1 / nf).abs() < 0.01);
        assert!((s2 / nf).abs() < 0.01);
        approx(sq / (2.0 * nf), 1.0, 0.01);
        assert!((cross / nf).abs() < 0.01);
    }

    #[test]
    fn ou_mean_decay_oracle() {
        let law = FeedbackLaw { g: Mat2::IDENTITY, l: Mat2::ZERO, k: Vec2::ZERO };
        let p = ex2_params(1.0, 1.0);
        let cfg = SimConfig {
            n_particles: 4096,
            dt: 0.005,
            t_final: 3.0,
            burn_in: 0.0,
            seed: 11,
            init: MeasureHandle::dirac(Vec2::new(1.0, 1.0)),
        };
        let tr = simulate_particles(&law, &cfg, &p).unwrap();
        for (k, &t) in tr.times.iter().enumerate() {
            let want = (-t).exp();
            assert!((tr.mean_path[k].x - want).abs() < 0.05, "t={t}");
            assert!((tr.mean_path[k].y - want).abs() < 0.05, "t={t}");
        }
    }

    #[test]
    fn negative_branch_diverges() {
        let s = solve_ex1(1.0, 1.0, BranchSpec::MM);
        let law = feedback_from_solution(&s, 1.0, 1.0);
        let p = ex2_params(1.0, 1.0);
        let cfg = SimConfig {
            n_particles: 512,
            dt: 0.01,
            t_final: 50.0,
            burn_in: 0.0,
            seed: 3,
            init: MeasureHandle::dirac(Vec2::new(1.0, 1.0)),
        };
        match simulate_particles(&law, &cfg, &p) {
            Err(SimError::Diverged { t }) => assert!(t < 50.0),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn cost_accum_monotone_and_ergodic_cost_sane() {
        let s = solve_ex1(1.0, 1.0, BranchSpec::PP);
        let law = feedback_from_solution(&s, 1.0, 1.0);
        let p = ex2_params(1.0, 1.0);
        let cfg = SimConfig {
            n_particles: 2048,
            dt: 0.01,
            t_final: 60.0,
            burn_in: 20.0,
            seed: 5,
            init: MeasureHandle::Gaussian(GaussianMeasure::standard()),
        };
        let tr = simulate_particles(&law, &cfg, &p).unwrap();
        for i in 0..2 {
            for w in tr.cost_accum[i].windows(2) {
                assert!(w[1] >= w[0]);
            }
        }
        let (c1, c2) = ergodic_cost(&tr);
        approx(c1, 1.5, 0.1);
        approx(c2, 1.5, 0.1);
    }

    #[test]
    fn zero_law_has_zero_control_cost() {
        // With alpha = 0 the cost rate reduces to the state part.
        let p = ex2_params(1.0, 1.0);
        let cfg = small_cfg(9);
        let tr = simulate_particles(&FeedbackLaw::ZERO, &cfg, &p).unwrap();
        for k in 0..tr.times.len() {
            let want = tr.second_moment_path[k].trace();
            approx(tr.cost_rates[0][k], want, 1e-12);
        }
    }

    #[test]
    fn mean_path_analytic_examples() {
        let s = solve_ex1(1.0, 1.0, BranchSpec::PP);
        let times: Vec<f64> = (0..50).map(|k| k as f64 * 0.1).collect();
        let path = mean_path_analytic(&s, 1.0, 1.0, Vec2::new(1.0, 1.0), &times);
        for (k, &t) in times.iter().enumerate() {
            approx(path[k].x, (-t).exp(), 1e-12);
            approx(path[k].y, (-t).exp(), 1e-12);
        }

        let p = CostParams::Ex2Eta {
            r1: 1.0,
            r2: 1.0,
            eta1: Vec2::new(1.0, 0.0),
            eta2: Vec2::new(0.0, 1.0),
        };
        let sd = solve_ex2_diagonal(&p, BranchSpec::PP).unwrap();
        let path = mean_path_analytic(&sd, 1.0, 1.0, Vec2::new(1.0, 0.0), &times);
        for (k, &t) in times.iter().enumerate() {
            approx(path[k].x, (-2.0_f64.sqrt() * t).exp(), 1e-12);
            approx(path[k].y, 0.0, 1e-12);
        }

        // Constant at the fixed point.
        let mut synth = solve_ex1(1.0, 1.0, BranchSpec::PP);
        synth.q_vec[0] = Vec2::new(2.0, 0.0);
        let path = mean_path_analytic(&synth, 1.0, 1.0, Vec2::new(-1.0, 0.0), &times);
        for v in path {
            approx(v.x, -1.0, 1e-12);
            approx(v.y, 0.0, 1e-12);
        }
    }

    #[test]
    fn expm_handles_complex_and_defective_spectra() {
        // Rotation plus decay: A = [[1, 2], [-2, 1]], e^{-At} known in
        // closed form e^{-t} R(2t).
        let a = Mat2::new(1.0, 2.0, -2.0, 1.0);
        let t = 0.7;
        let e = expm_neg(a, t);
        let decay = (-t).exp();
        approx(e.a11, decay * (2.0 * t).cos(), 1e-12);
        approx(e.a12, -decay * (2.0 * t).sin(), 1e-12);
        // Defective: A = [[1, 1], [0, 1]], e^{-At} = e^{-t} [[1, -t], [0, 1]].
        let d = expm_neg(Mat2::new(1.0, 1.0, 0.0, 1.0), t);
        approx(d.a11, decay, 1e-12);
        approx(d.a12, -t * decay, 1e-10);
        approx(d.a21, 0.0, 1e-12);
    }

    #[test]
    fn stabilizing_baseline_tail_variance() {
        let p = ex2_params(1.0, 1.0);
        let cfg = SimConfig {
            n_particles: 4096,
            dt: 0.01,
            t_final: 40.0,
            burn_in: 15.0,
            seed: 21,
            init: MeasureHandle::dirac(Vec2::new(10.0, 10.0)),
        };
        let tr = stabilizing_baseline(1.0, &cfg, &p).unwrap();
        approx(tr.tail_cloud_stats.cov.a11, 0.5, 0.05);
        approx(tr.tail_cloud_stats.cov.a22, 0.5, 0.05);
        assert!(tr.tail_cloud_stats.mean.norm() < 0.1);
        assert!(stabilizing_baseline(0.0, &cfg, &p).is_err());
    }

    #[test]
    fn finite_horizon_value_stationary_start_near_zero() {
        let s = solve_ex1(1.0, 1.0, BranchSpec::PP);
        let law = feedback_from_solution(&s, 1.0, 1.0);
        let p = ex2_params(1.0, 1.0);
        let pi = crate::riccati::invariant_gaussian(&s, 1.0, 1.0).unwrap();
        let cfg = SimConfig {
            n_particles: 8192,
            dt: 0.01,
            t_final: 20.0,
            burn_in: 0.0,
            seed: 13,
            init: MeasureHandle::Gaussian(pi),
        };
        let tr = simulate_particles(&law, &cfg, &p).unwrap();
        let (v1, v2) = finite_horizon_value(&tr, s.c[0], s.c[1]);
        assert!(v1.abs() < 0.5, "v1 = {v1}");
        assert!(v2.abs() < 0.5, "v2 = {v2}");
    }
}
