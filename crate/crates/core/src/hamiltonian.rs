//! Running costs, reduced and full Hamiltonians, optimal pointwise controls,
//! and the coupled Master-equation residual evaluator.
//!
//! Two cost models are supported:
//! * `Ex1Gamma`: γ[μ]_I + (1−γ)|x|² + rᵢ aᵢ² (linear cost in measure),
//! * `Ex2Eta`:  |x|² + rᵢ aᵢ² + [μ]_{ηᵢ}²   (quadratic cost in measure).

use crate::measures::{mean_vec, quad_moment, second_moment, MeasureHandle, SymMat2, Vec2};
use crate::mvcalculus::PolyValue;

/// Player index, 1 or 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Player {
    One,
    Two,
}

impl Player {
    pub fn index(self) -> usize {
        match self {
            Player::One => 0,
            Player::Two => 1,
        }
    }

    pub fn other(self) -> Player {
        match self {
            Player::One => Player::Two,
            Player::Two => Player::One,
        }
    }

    /// The coordinate direction this player controls.
    pub fn axis(self) -> Vec2 {
        match self {
            Player::One => Vec2::E1,
            Player::Two => Vec2::E2,
        }
    }
}

/// Cost-model parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CostParams {
    /// γ-interpolated state cost; the measure dependence is linear.
    Ex1Gamma { gamma: f64, r1: f64, r2: f64 },
    /// Mean-penalty cost [μ]_{ηᵢ}²; the measure dependence is quadratic.
    Ex2Eta { r1: f64, r2: f64, eta1: Vec2, eta2: Vec2 },
}

impl CostParams {
    pub fn r(&self, player: Player) -> f64 {
        let (r1, r2) = match self {
            CostParams::Ex1Gamma { r1, r2, .. } => (*r1, *r2),
            CostParams::Ex2Eta { r1, r2, .. } => (*r1, *r2),
        };
        match player {
            Player::One => r1,
            Player::Two => r2,
        }
    }

    pub fn validate(&self) -> Result<(), CostParamError> {
        match self {
            CostParams::Ex1Gamma { gamma, r1, r2 } => {
                if !(*r1 > 0.0 && *r2 > 0.0) {
                    return Err(CostParamError::NonPositivePenalty);
                }
                if !(0.0..=1.0).contains(gamma) {
                    return Err(CostParamError::GammaOutOfRange(*gamma));
                }
            }
            CostParams::Ex2Eta { r1, r2, .. } => {
                if !(*r1 > 0.0 && *r2 > 0.0) {
                    return Err(CostParamError::NonPositivePenalty);
                }
            }
        }
        Ok(())
    }

    /// The control-free part F(μ, x) of the running cost.
    pub fn state_cost(&self, player: Player, mu: &MeasureHandle, x: Vec2) -> f64 {
        match self {
            CostParams::Ex1Gamma { gamma, .. } => {
                let mu_i2 = quad_moment(mu, SymMat2::IDENTITY);
                gamma * mu_i2 + (1.0 - gamma) * x.norm_sq()
            }
            CostParams::Ex2Eta { eta1, eta2, .. } => {
                let eta = match player {
                    Player::One => *eta1,
                    Player::Two => *eta2,
                };
                let mean_pen = mean_vec(mu).dot(eta);
                x.norm_sq() + mean_pen * mean_pen
            }
        }
    }

    /// Expectation of the control-free part under μ, using exact moments:
    /// ∫ F(μ, x) μ(dx).
    pub(crate) fn state_cost_integrated(&self, player: Player, mu: &MeasureHandle) -> f64 {
        self.state_cost_from_moments(player, mean_vec(mu), second_moment(mu).trace())
    }

    /// Same expectation expressed through the mean and the second-moment
    /// trace, for callers that track moments directly.
    pub(crate) fn state_cost_from_moments(
        &self,
        player: Player,
        mean: Vec2,
        second_trace: f64,
    ) -> f64 {
        match self {
            CostParams::Ex1Gamma { gamma, .. } => {
                // γ[μ]_I + (1−γ)∫|x|²dμ; both terms equal Tr(E[xxᵀ]), kept
                // separate so the γ-invariance is exercised, not assumed.
                gamma * second_trace + (1.0 - gamma) * second_trace
            }
            CostParams::Ex2Eta { eta1, eta2, .. } => {
                let eta = match player {
                    Player::One => *eta1,
                    Player::Two => *eta2,
                };
                let mean_pen = mean.dot(eta);
                second_trace + mean_pen * mean_pen
            }
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CostParamError {
    #[error("control penalties r1, r2 must be positive")]
    NonPositivePenalty,
    #[error("gamma must lie in [0, 1], got {0}")]
    GammaOutOfRange(f64),
}

/// ℓᵢ(μ, x, aᵢ) = F(μ, x) + rᵢ aᵢ².
pub fn running_cost(player: Player, p: &CostParams, mu: &MeasureHandle, x: Vec2, a_i: f64) -> f64 {
    p.state_cost(player, mu, x) + p.r(player) * a_i * a_i
}

/// Reduced Hamiltonian Hᵢ(μ, x, p) = inf_a { p·a + ℓᵢ } = F(μ, x) − p²/(4rᵢ).
pub fn hamiltonian_reduced(
    player: Player,
    p: &CostParams,
    mu: &MeasureHandle,
    x: Vec2,
    pval: f64,
) -> f64 {
    p.state_cost(player, mu, x) - pval * pval / (4.0 * p.r(player))
}

/// The minimizer of a ↦ p·a + rᵢ a²: a* = −p/(2rᵢ).
pub fn argmin_control(player: Player, p: &CostParams, pval: f64) -> f64 {
    -pval / (2.0 * p.r(player))
}

/// Full Hamiltonian 𝓗ᵢ(μ, x, p, Q, a) = p·b + ½Tr(Q σσᵀ) + ℓᵢ(μ, x, aᵢ),
/// specialized to b(μ, x, a) = a and σ = I.
pub fn full_hamiltonian(
    player: Player,
    p: &CostParams,
    mu: &MeasureHandle,
    x: Vec2,
    pvec: Vec2,
    qmat: SymMat2,
    a: Vec2,
) -> f64 {
    let a_i = a.component(player.index());
    pvec.dot(a) + 0.5 * qmat.trace() + running_cost(player, p, mu, x, a_i)
}

/// The affine x-map of the Lions derivative of a PolyValue at μ:
/// ∂_μ v(μ, x) = 2Q x + (2R m + q).
#[derive(Debug, Clone, Copy)]
struct AffineGrad {
    lin: SymMat2, // coefficient of x (2Q)
    cst: Vec2,    // constant part (2R m + q)
}

impl AffineGrad {
    fn of(v: &PolyValue, mean: Vec2) -> Self {
        AffineGrad {
            lin: v.q_mat.scale(2.0),
            cst: v.r_mat.mul_vec(mean) * 2.0 + v.q_vec,
        }
    }

    /// Scalar affine form e_kᵀ ∂_μ v = aᵀx + β.
    fn component(&self, axis: Vec2) -> (Vec2, f64) {
        (self.lin.mul_vec(axis), self.cst.dot(axis))
    }
}

/// E[(aᵀx + β)(cᵀx + δ)] from the measure's mean m and second moment M.
fn expect_affine_product(a: Vec2, beta: f64, c: Vec2, delta: f64, mean: Vec2, sec: SymMat2) -> f64 {
    a.dot(sec.mul_vec(c)) + beta * c.dot(mean) + delta * a.dot(mean) + beta * delta
}

/// Residuals (LHS₁ − c₁, LHS₂ − c₂) of the coupled Master equations at μ.
///
/// Each LHS is
/// ∫ [ F_i(μ,x) − (∂_{x_i} δv_i/δμ)²/(4rᵢ) + Tr(Q_i)
///     − (1/(2r_j)) ∂_{x_j} δv_i/δμ · ∂_{x_j} δv_j/δμ ] μ(dx),
/// with j the opponent; the opponent's control is the equilibrium feedback
/// derived from v_j. Gaussian measures are integrated analytically (every
/// integrand is at most quadratic in x); empirical measures by particle
/// average.
pub fn master_residual(
    v1: &PolyValue,
    v2: &PolyValue,
    c1: f64,
    c2: f64,
    p: &CostParams,
    mu: &MeasureHandle,
) -> (f64, f64) {
    let lhs1 = master_lhs(Player::One, v1, v2, p, mu);
    let lhs2 = master_lhs(Player::Two, v2, v1, p, mu);
    (lhs1 - c1, lhs2 - c2)
}

fn master_lhs(
    player: Player,
    v_own: &PolyValue,
    v_opp: &PolyValue,
    p: &CostParams,
    mu: &MeasureHandle,
) -> f64 {
    let opp = player.other();
    let r_own = p.r(player);
    let r_opp = p.r(opp);
    match mu {
        MeasureHandle::Gaussian(_) => {
            let mean = mean_vec(mu);
            let sec = second_moment(mu);
            let g_own = AffineGrad::of(v_own, mean);
            let g_opp = AffineGrad::of(v_opp, mean);
            let (a_ii, b_ii) = g_own.component(player.axis());
            let (a_ij, b_ij) = g_own.component(opp.axis());
            let (a_jj, b_jj) = g_opp.component(opp.axis());

            let own_sq = expect_affine_product(a_ii, b_ii, a_ii, b_ii, mean, sec);
            let cross = expect_affine_product(a_ij, b_ij, a_jj, b_jj, mean, sec);
            p.state_cost_integrated(player, mu) - own_sq / (4.0 * r_own)
                + v_own.q_mat.trace()
                - cross / (2.0 * r_opp)
        }
        MeasureHandle::Empirical(e) => {
            let n = e.len() as f64;
            let mean = mean_vec(mu);
            let g_own = AffineGrad::of(v_own, mean);
            let g_opp = AffineGrad::of(v_opp, mean);
            let (a_ii, b_ii) = g_own.component(player.axis());
            let (a_ij, b_ij) = g_own.component(opp.axis());
            let (a_jj, b_jj) = g_opp.component(opp.axis());
            let mut acc = 0.0;
            for &x in e.particles() {
                let d_ii = a_ii.dot(x) + b_ii;
                let d_ij = a_ij.dot(x) + b_ij;
                let d_jj = a_jj.dot(x) + b_jj;
                acc += p.state_cost(player, mu, x) - d_ii * d_ii / (4.0 * r_own)
                    + v_own.q_mat.trace()
                    - d_ij * d_jj / (2.0 * r_opp);
            }
            acc / n
        }
    }
}
