//! Moment functionals, Gaussian and empirical measure representations, and
//! Wasserstein-2 utilities for probability measures on the plane.

use std::fmt;

/// Eigenvalues of covariance matrices below this threshold are clamped to
/// zero before taking square roots, so point masses do not produce NaN.
pub const COV_EIG_CLAMP: f64 = 1e-12;

/// A point in the plane; also used for controls, linear-moment weights and
/// unit vectors.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };
    pub const E1: Vec2 = Vec2 { x: 1.0, y: 0.0 };
    pub const E2: Vec2 = Vec2 { x: 0.0, y: 1.0 };
    /// The all-ones vector.
    pub const ONES: Vec2 = Vec2 { x: 1.0, y: 1.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn component(self, i: usize) -> f64 {
        match i {
            0 => self.x,
            1 => self.y,
            _ => panic!("Vec2 component index out of range: {i}"),
        }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    /// Outer product x yᵀ as a general 2×2 matrix.
    pub fn outer(self, other: Vec2) -> Mat2 {
        Mat2::new(
            self.x * other.x,
            self.x * other.y,
            self.y * other.x,
            self.y * other.y,
        )
    }
}

impl std::ops::Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl std::ops::Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl std::ops::Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

impl std::ops::Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

impl fmt::Display for Vec2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

/// A symmetric 2×2 matrix with the off-diagonal entry stored once.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SymMat2 {
    pub a11: f64,
    pub a22: f64,
    pub a12: f64,
}

impl SymMat2 {
    pub const ZERO: SymMat2 = SymMat2 { a11: 0.0, a22: 0.0, a12: 0.0 };
    pub const IDENTITY: SymMat2 = SymMat2 { a11: 1.0, a22: 1.0, a12: 0.0 };

    pub const fn new(a11: f64, a22: f64, a12: f64) -> Self {
        SymMat2 { a11, a22, a12 }
    }

    pub const fn diag(a11: f64, a22: f64) -> Self {
        SymMat2 { a11, a22, a12: 0.0 }
    }

    pub fn trace(self) -> f64 {
        self.a11 + self.a22
    }

    pub fn det(self) -> f64 {
        self.a11 * self.a22 - self.a12 * self.a12
    }

    /// Eigenvalues in ascending order; always real for a symmetric matrix.
    pub fn eigenvalues(self) -> (f64, f64) {
        let half_tr = 0.5 * self.trace();
        let disc = (0.5 * (self.a11 - self.a22)).powi(2) + self.a12 * self.a12;
        let root = disc.max(0.0).sqrt();
        (half_tr - root, half_tr + root)
    }

    pub fn lambda_min(self) -> f64 {
        self.eigenvalues().0
    }

    pub fn quad_form(self, v: Vec2) -> f64 {
        self.a11 * v.x * v.x + self.a22 * v.y * v.y + 2.0 * self.a12 * v.x * v.y
    }

    pub fn mul_vec(self, v: Vec2) -> Vec2 {
        Vec2::new(self.a11 * v.x + self.a12 * v.y, self.a12 * v.x + self.a22 * v.y)
    }

    pub fn to_mat(self) -> Mat2 {
        Mat2::new(self.a11, self.a12, self.a12, self.a22)
    }

    /// Tr(self · other) for symmetric matrices.
    pub fn trace_product(self, other: SymMat2) -> f64 {
        self.a11 * other.a11 + self.a22 * other.a22 + 2.0 * self.a12 * other.a12
    }

    /// Whether both eigenvalues are ≥ −COV_EIG_CLAMP.
    pub fn is_psd(self) -> bool {
        self.lambda_min() >= -COV_EIG_CLAMP
    }

    /// Symmetric square root via the closed-form 2×2 trace/determinant
    /// identity, with eigenvalues below COV_EIG_CLAMP clamped to zero.
    pub fn sqrt_psd(self) -> SymMat2 {
        let (lo, hi) = self.eigenvalues();
        let lo = if lo < COV_EIG_CLAMP { 0.0 } else { lo };
        let hi = if hi < COV_EIG_CLAMP { 0.0 } else { hi };
        if hi == 0.0 {
            return SymMat2::ZERO;
        }
        let s = lo.sqrt() + hi.sqrt();
        // sqrt(M) = (M + sqrt(det) I) / (sqrt(l1) + sqrt(l2)); reconstruct M
        // from the clamped eigenvalues first.
        let m = self.clamped(lo, hi);
        let root_det = (lo * hi).sqrt();
        SymMat2::new((m.a11 + root_det) / s, (m.a22 + root_det) / s, m.a12 / s)
    }

    /// Reassemble the matrix from clamped eigenvalues, keeping eigenvectors.
    fn clamped(self, lo: f64, hi: f64) -> SymMat2 {
        let (olo, ohi) = self.eigenvalues();
        if olo == lo && ohi == hi {
            return self;
        }
        if (ohi - olo).abs() < 1e-300 {
            return SymMat2::diag(hi, hi);
        }
        // Spectral projector onto the top eigenvector: P = (M - olo I)/(ohi - olo).
        let denom = ohi - olo;
        let p = SymMat2::new(
            (self.a11 - olo) / denom,
            (self.a22 - olo) / denom,
            self.a12 / denom,
        );
        SymMat2::new(
            lo + (hi - lo) * p.a11,
            lo + (hi - lo) * p.a22,
            (hi - lo) * p.a12,
        )
    }

    pub fn scale(self, s: f64) -> SymMat2 {
        SymMat2::new(self.a11 * s, self.a22 * s, self.a12 * s)
    }

    pub fn add(self, o: SymMat2) -> SymMat2 {
        SymMat2::new(self.a11 + o.a11, self.a22 + o.a22, self.a12 + o.a12)
    }

    pub fn sub(self, o: SymMat2) -> SymMat2 {
        SymMat2::new(self.a11 - o.a11, self.a22 - o.a22, self.a12 - o.a12)
    }
}

/// A general (not necessarily symmetric) 2×2 matrix, row-major.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Mat2 {
    pub a11: f64,
    pub a12: f64,
    pub a21: f64,
    pub a22: f64,
}

impl Mat2 {
    pub const ZERO: Mat2 = Mat2 { a11: 0.0, a12: 0.0, a21: 0.0, a22: 0.0 };
    pub const IDENTITY: Mat2 = Mat2 { a11: 1.0, a12: 0.0, a21: 0.0, a22: 1.0 };

    pub const fn new(a11: f64, a12: f64, a21: f64, a22: f64) -> Self {
        Mat2 { a11, a12, a21, a22 }
    }

    pub const fn diag(a11: f64, a22: f64) -> Self {
        Mat2 { a11, a12: 0.0, a21: 0.0, a22 }
    }

    pub fn trace(self) -> f64 {
        self.a11 + self.a22
    }

    pub fn det(self) -> f64 {
        self.a11 * self.a22 - self.a12 * self.a21
    }

    pub fn transpose(self) -> Mat2 {
        Mat2::new(self.a11, self.a21, self.a12, self.a22)
    }

    pub fn mul_vec(self, v: Vec2) -> Vec2 {
        Vec2::new(self.a11 * v.x + self.a12 * v.y, self.a21 * v.x + self.a22 * v.y)
    }

    pub fn mul_mat(self, o: Mat2) -> Mat2 {
        Mat2::new(
            self.a11 * o.a11 + self.a12 * o.a21,
            self.a11 * o.a12 + self.a12 * o.a22,
            self.a21 * o.a11 + self.a22 * o.a21,
            self.a21 * o.a12 + self.a22 * o.a22,
        )
    }

    pub fn add(self, o: Mat2) -> Mat2 {
        Mat2::new(self.a11 + o.a11, self.a12 + o.a12, self.a21 + o.a21, self.a22 + o.a22)
    }

    pub fn scale(self, s: f64) -> Mat2 {
        Mat2::new(self.a11 * s, self.a12 * s, self.a21 * s, self.a22 * s)
    }

    pub fn row(self, i: usize) -> Vec2 {
        match i {
            0 => Vec2::new(self.a11, self.a12),
            1 => Vec2::new(self.a21, self.a22),
            _ => panic!("Mat2 row index out of range: {i}"),
        }
    }

    pub fn col(self, j: usize) -> Vec2 {
        match j {
            0 => Vec2::new(self.a11, self.a21),
            1 => Vec2::new(self.a12, self.a22),
            _ => panic!("Mat2 column index out of range: {j}"),
        }
    }

    pub fn inverse(self) -> Option<Mat2> {
        let d = self.det();
        if d == 0.0 || !d.is_finite() {
            return None;
        }
        Some(Mat2::new(self.a22 / d, -self.a12 / d, -self.a21 / d, self.a11 / d))
    }

    /// Operator (spectral) norm: largest singular value.
    pub fn op_norm(self) -> f64 {
        // Largest eigenvalue of AᵀA.
        let g = self.transpose().mul_mat(self);
        let sym = SymMat2::new(g.a11, g.a22, 0.5 * (g.a12 + g.a21));
        sym.eigenvalues().1.max(0.0).sqrt()
    }

    /// Real parts of the eigenvalues.
    pub fn eig_real_parts(self) -> (f64, f64) {
        let half_tr = 0.5 * self.trace();
        let disc = half_tr * half_tr - self.det();
        if disc >= 0.0 {
            let r = disc.sqrt();
            (half_tr - r, half_tr + r)
        } else {
            (half_tr, half_tr)
        }
    }
}

/// (A + Aᵀ)/2; preserves the quadratic form xᵀAx.
pub fn symmetrize(a: Mat2) -> SymMat2 {
    SymMat2::new(a.a11, a.a22, 0.5 * (a.a12 + a.a21))
}

/// A Gaussian measure on the plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianMeasure {
    pub mean: Vec2,
    pub cov: SymMat2,
}

impl GaussianMeasure {
    pub fn new(mean: Vec2, cov: SymMat2) -> Self {
        debug_assert!(mean.is_finite());
        debug_assert!(cov.is_psd(), "covariance must be PSD: {cov:?}");
        GaussianMeasure { mean, cov }
    }

    pub fn standard() -> Self {
        GaussianMeasure { mean: Vec2::ZERO, cov: SymMat2::IDENTITY }
    }

    /// A point mass represented as a zero-covariance Gaussian.
    pub fn dirac(at: Vec2) -> Self {
        GaussianMeasure { mean: at, cov: SymMat2::ZERO }
    }

    /// ∫ x xᵀ dμ = Σ + m mᵀ.
    pub fn second_moment(&self) -> SymMat2 {
        SymMat2::new(
            self.cov.a11 + self.mean.x * self.mean.x,
            self.cov.a22 + self.mean.y * self.mean.y,
            self.cov.a12 + self.mean.x * self.mean.y,
        )
    }
}

/// An empirical measure: the uniform distribution on N ≥ 1 particles.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    particles: Vec<Vec2>,
}

impl EmpiricalMeasure {
    pub fn new(particles: Vec<Vec2>) -> Self {
        assert!(!particles.is_empty(), "empirical measure needs at least one particle");
        debug_assert!(particles.iter().all(|p| p.is_finite()));
        EmpiricalMeasure { particles }
    }

    pub fn particles(&self) -> &[Vec2] {
        &self.particles
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn mean(&self) -> Vec2 {
        let n = self.particles.len() as f64;
        let mut s = Vec2::ZERO;
        for p in &self.particles {
            s = s + *p;
        }
        s * (1.0 / n)
    }

    pub fn second_moment(&self) -> SymMat2 {
        let n = self.particles.len() as f64;
        let (mut s11, mut s22, mut s12) = (0.0, 0.0, 0.0);
        for p in &self.particles {
            s11 += p.x * p.x;
            s22 += p.y * p.y;
            s12 += p.x * p.y;
        }
        SymMat2::new(s11 / n, s22 / n, s12 / n)
    }
}

/// A probability measure on the plane, either Gaussian or an N-particle cloud.
#[derive(Debug, Clone, PartialEq)]
pub enum MeasureHandle {
    Gaussian(GaussianMeasure),
    Empirical(EmpiricalMeasure),
}

impl MeasureHandle {
    pub fn gaussian(mean: Vec2, cov: SymMat2) -> Self {
        MeasureHandle::Gaussian(GaussianMeasure::new(mean, cov))
    }

    pub fn empirical(particles: Vec<Vec2>) -> Self {
        MeasureHandle::Empirical(EmpiricalMeasure::new(particles))
    }

    /// A Dirac mass at `at`, as a single-particle cloud.
    pub fn dirac(at: Vec2) -> Self {
        MeasureHandle::empirical(vec![at])
    }
}

/// [μ]_Q = ∫ xᵀQx μ(dx).
pub fn quad_moment(mu: &MeasureHandle, q: SymMat2) -> f64 {
    match mu {
        MeasureHandle::Gaussian(g) => q.trace_product(g.cov) + q.quad_form(g.mean),
        MeasureHandle::Empirical(e) => {
            let n = e.len() as f64;
            e.particles().iter().map(|p| q.quad_form(*p)).sum::<f64>() / n
        }
    }
}

/// [μ]_q = ∫ xᵀq μ(dx) = m(μ)·q.
pub fn lin_moment(mu: &MeasureHandle, q: Vec2) -> f64 {
    mean_vec(mu).dot(q)
}

/// The mean vector ∫ x μ(dx).
pub fn mean_vec(mu: &MeasureHandle) -> Vec2 {
    match mu {
        MeasureHandle::Gaussian(g) => g.mean,
        MeasureHandle::Empirical(e) => e.mean(),
    }
}

/// ∫ x xᵀ μ(dx); satisfies quad_moment(μ, Q) = Tr(Q · second_moment(μ)).
pub fn second_moment(mu: &MeasureHandle) -> SymMat2 {
    match mu {
        MeasureHandle::Gaussian(g) => g.second_moment(),
        MeasureHandle::Empirical(e) => e.second_moment(),
    }
}

/// Closed-form 2-Wasserstein distance between Gaussians:
/// sqrt(|m₁−m₂|² + Tr(Σ₁) + Tr(Σ₂) − 2 Tr((Σ₂^{1/2} Σ₁ Σ₂^{1/2})^{1/2})).
///
/// For 2×2 PSD matrices the cross term reduces to
/// sqrt(Tr(Σ₁Σ₂) + 2 sqrt(det Σ₁ det Σ₂)).
pub fn w2_gaussian(mu: &GaussianMeasure, nu: &GaussianMeasure) -> f64 {
    let dm = (mu.mean - nu.mean).norm_sq();
    let s1 = clamp_psd(mu.cov);
    let s2 = clamp_psd(nu.cov);
    let tr_prod = s1.trace_product(s2);
    let cross_sq = (tr_prod + 2.0 * (s1.det().max(0.0) * s2.det().max(0.0)).sqrt()).max(0.0);
    let bures_sq = (s1.trace() + s2.trace() - 2.0 * cross_sq.sqrt()).max(0.0);
    (dm + bures_sq).sqrt()
}

fn clamp_psd(s: SymMat2) -> SymMat2 {
    let (lo, hi) = s.eigenvalues();
    let clo = if lo < COV_EIG_CLAMP { 0.0 } else { lo };
    let chi = if hi < COV_EIG_CLAMP { 0.0 } else { hi };
    if clo == lo && chi == hi {
        s
    } else {
        s.clamped(clo, chi)
    }
}

/// Errors from measure-level operations.
#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MeasureError {
    #[error("sample covariance needs at least 2 particles, got {0}")]
    TooFewParticles(usize),
    #[error("tail fraction must lie in (0, 1], got {0}")]
    BadTailFraction(f64),
}

/// Moment-matched Gaussian estimate from the trailing `tail_fraction` of the
/// particle list: sample mean and unbiased sample covariance.
pub fn gaussian_from_empirical(
    mu: &EmpiricalMeasure,
    tail_fraction: f64,
) -> Result<GaussianMeasure, MeasureError> {
    if !(tail_fraction > 0.0 && tail_fraction <= 1.0) {
        return Err(MeasureError::BadTailFraction(tail_fraction));
    }
    let n_total = mu.len();
    let take = ((n_total as f64) * tail_fraction).ceil() as usize;
    let take = take.clamp(1, n_total);
    let tail = &mu.particles()[n_total - take..];
    if tail.len() < 2 {
        return Err(MeasureError::TooFewParticles(tail.len()));
    }
    let n = tail.len() as f64;
    let mut mean = Vec2::ZERO;
    for p in tail {
        mean = mean + *p;
    }
    mean = mean * (1.0 / n);
    let (mut c11, mut c22, mut c12) = (0.0, 0.0, 0.0);
    for p in tail {
        let d = *p - mean;
        c11 += d.x * d.x;
        c22 += d.y * d.y;
        c12 += d.x * d.y;
    }
    let denom = n - 1.0;
    Ok(GaussianMeasure {
        mean,
        cov: SymMat2::new(c11 / denom, c22 / denom, c12 / denom),
    })
}
