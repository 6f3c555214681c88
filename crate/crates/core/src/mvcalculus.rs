//! Flat-derivative calculus for quadratic-in-measure value functionals,
//! with a finite-difference oracle and the chain-rule rate evaluator.

use crate::measures::{
    lin_moment, mean_vec, quad_moment, second_moment, MeasureHandle, SymMat2, Vec2,
};

/// A quadratic-in-measure value functional
/// v(μ) = [μ]_Q + m(μ)ᵀ R m(μ) + [μ]_q.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolyValue {
    pub q_mat: SymMat2,
    pub r_mat: SymMat2,
    pub q_vec: Vec2,
}

impl PolyValue {
    pub const fn new(q_mat: SymMat2, r_mat: SymMat2, q_vec: Vec2) -> Self {
        PolyValue { q_mat, r_mat, q_vec }
    }

    pub const ZERO: PolyValue = PolyValue {
        q_mat: SymMat2::ZERO,
        r_mat: SymMat2::ZERO,
        q_vec: Vec2::ZERO,
    };

    /// Purely quadratic functional [μ]_Q.
    pub const fn quadratic(q_mat: SymMat2) -> Self {
        PolyValue { q_mat, r_mat: SymMat2::ZERO, q_vec: Vec2::ZERO }
    }
}

/// Moments of a measure, sufficient to evaluate any PolyValue.
#[derive(Debug, Clone, Copy)]
struct Moments {
    mean: Vec2,
    second: SymMat2,
}

impl Moments {
    fn of(mu: &MeasureHandle) -> Self {
        Moments { mean: mean_vec(mu), second: second_moment(mu) }
    }

    fn eval(&self, v: &PolyValue) -> f64 {
        v.q_mat.trace_product(self.second)
            + v.r_mat.quad_form(self.mean)
            + self.mean.dot(v.q_vec)
    }

    /// Moments of the mixture (1−h)μ + h δ_x; moments combine affinely.
    fn mix_with_dirac(&self, x: Vec2, h: f64) -> Moments {
        let w = 1.0 - h;
        Moments {
            mean: self.mean * w + x * h,
            second: self.second.scale(w).add(
                SymMat2::new(x.x * x.x, x.y * x.y, x.x * x.y).scale(h),
            ),
        }
    }
}

/// v(μ) = [μ]_Q + m(μ)ᵀ R m(μ) + [μ]_q.
pub fn eval_value(v: &PolyValue, mu: &MeasureHandle) -> f64 {
    quad_moment(mu, v.q_mat) + v.r_mat.quad_form(mean_vec(mu)) + lin_moment(mu, v.q_vec)
}

/// The flat derivative δv/δμ(μ, x) = xᵀQx + (2 m(μ)ᵀR + qᵀ)x − C, normalized
/// so that ∫ (δv/δμ)(μ, x) μ(dx) = 0.
pub fn flat_derivative(v: &PolyValue, mu: &MeasureHandle, x: Vec2) -> f64 {
    let m = mean_vec(mu);
    let lin = v.r_mat.mul_vec(m) * 2.0 + v.q_vec;
    let c = quad_moment(mu, v.q_mat) + 2.0 * v.r_mat.quad_form(m) + m.dot(v.q_vec);
    v.q_mat.quad_form(x) + lin.dot(x) - c
}

/// Spatial gradient of the flat derivative: 2Qx + 2R m(μ) + q.
/// This is the Lions derivative ∂_μ v(μ, x).
pub fn grad_x_flat(v: &PolyValue, mu: &MeasureHandle, x: Vec2) -> Vec2 {
    v.q_mat.mul_vec(x) * 2.0 + v.r_mat.mul_vec(mean_vec(mu)) * 2.0 + v.q_vec
}

/// Spatial Hessian of the flat derivative: 2Q, independent of μ and x.
pub fn hess_x_flat(v: &PolyValue) -> SymMat2 {
    v.q_mat.scale(2.0)
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CalculusError {
    #[error("mixture step h must lie in (0, 0.5], got {0}")]
    BadStep(f64),
}

/// Difference-quotient surrogate for the flat derivative:
/// (v((1−h)μ + hδ_x) − v(μ)) / h, with the mixture realized exactly at the
/// moment level. Converges to flat_derivative with O(h) error.
pub fn fd_flat_derivative(
    v: &PolyValue,
    mu: &MeasureHandle,
    x: Vec2,
    h: f64,
) -> Result<f64, CalculusError> {
    if !(h > 0.0 && h <= 0.5) {
        return Err(CalculusError::BadStep(h));
    }
    let base = Moments::of(mu);
    let mixed = base.mix_with_dirac(x, h);
    Ok((mixed.eval(v) - base.eval(v)) / h)
}

/// The instantaneous rate d/dt v(μ_t) predicted by the chain rule:
/// ∫ [ ∂_μ v(μ,x)·drift(μ,x) + ½ Tr(D_xx δv/δμ · σσᵀ) ] μ(dx),
/// with σ = `diffusion` constant in x.
///
/// Empirical measures are integrated by particle average. Gaussian measures
/// require an affine drift, which is probed at {0, e₁, e₂} and integrated
/// analytically.
pub fn chain_rule_rhs<F>(v: &PolyValue, mu: &MeasureHandle, drift: F, diffusion: SymMat2) -> f64
where
    F: Fn(&MeasureHandle, Vec2) -> Vec2,
{
    let sigma_sq = diffusion.to_mat().mul_mat(diffusion.to_mat().transpose());
    // ½ Tr(2Q σσᵀ) = Tr(Q σσᵀ); σσᵀ is symmetric.
    let ito_term = v.q_mat.trace_product(crate::measures::symmetrize(sigma_sq));

    match mu {
        MeasureHandle::Empirical(e) => {
            let n = e.len() as f64;
            let drift_term: f64 = e
                .particles()
                .iter()
                .map(|p| grad_x_flat(v, mu, *p).dot(drift(mu, *p)))
                .sum::<f64>()
                / n;
            drift_term + ito_term
        }
        MeasureHandle::Gaussian(g) => {
            // Recover the affine map drift(μ, x) = A x + b from three probes.
            let b = drift(mu, Vec2::ZERO);
            let col1 = drift(mu, Vec2::E1) - b;
            let col2 = drift(mu, Vec2::E2) - b;
            let a = crate::measures::Mat2::new(col1.x, col2.x, col1.y, col2.y);
            // E[(2Qx + c)·(Ax + b)] with c = 2R m + q and M = E[xxᵀ].
            let m = g.mean;
            let mm = g.second_moment();
            let c = v.r_mat.mul_vec(m) * 2.0 + v.q_vec;
            // E[xᵀ(2Q)ᵀ A x] = Tr((2Q A)ᵀ... ) = Tr(2 Q A M) since Q symmetric.
            let qa = v.q_mat.to_mat().mul_mat(a).scale(2.0);
            let tr_qam = qa.mul_mat(mm.to_mat()).trace();
            let drift_term = tr_qam + (v.q_mat.mul_vec(b) * 2.0).dot(m) + a.transpose().mul_vec(c).dot(m) + c.dot(b);
            drift_term + ito_term
        }
    }
}
