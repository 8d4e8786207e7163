//! Fixed-size 2-vectors and 2×2 matrices for phase-space algebra.

use core::ops::{Add, AddAssign, Mul, Neg, Sub};

/// Phase-space vector `(Q, P)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec2 {
    pub q: f64,
    pub p: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { q: 0.0, p: 0.0 };

    pub const fn new(q: f64, p: f64) -> Self {
        Vec2 { q, p }
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.q * other.q + self.p * other.p
    }

    pub fn scale(self, s: f64) -> Vec2 {
        Vec2::new(self.q * s, self.p * s)
    }

    pub fn is_finite(self) -> bool {
        self.q.is_finite() && self.p.is_finite()
    }

    /// Outer product `a bᵀ`.
    pub fn outer(self, other: Vec2) -> Mat2 {
        Mat2::new(
            self.q * other.q,
            self.q * other.p,
            self.p * other.q,
            self.p * other.p,
        )
    }

    pub fn max_abs_diff(self, other: Vec2) -> f64 {
        libm::fmax(libm::fabs(self.q - other.q), libm::fabs(self.p - other.p))
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.q + rhs.q, self.p + rhs.p)
    }
}

impl AddAssign for Vec2 {
    fn add_assign(&mut self, rhs: Vec2) {
        self.q += rhs.q;
        self.p += rhs.p;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.q - rhs.q, self.p - rhs.p)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.q, -self.p)
    }
}

/// Row-major 2×2 matrix `[[xx, xy], [yx, yy]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat2 {
    pub xx: f64,
    pub xy: f64,
    pub yx: f64,
    pub yy: f64,
}

impl Default for Mat2 {
    fn default() -> Self {
        Mat2::ZERO
    }
}

impl Mat2 {
    pub const ZERO: Mat2 = Mat2::new(0.0, 0.0, 0.0, 0.0);
    pub const IDENTITY: Mat2 = Mat2::new(1.0, 0.0, 0.0, 1.0);

    pub const fn new(xx: f64, xy: f64, yx: f64, yy: f64) -> Self {
        Mat2 { xx, xy, yx, yy }
    }

    pub const fn diag(a: f64, b: f64) -> Self {
        Mat2::new(a, 0.0, 0.0, b)
    }

    pub const fn symmetric(xx: f64, xy: f64, yy: f64) -> Self {
        Mat2::new(xx, xy, xy, yy)
    }

    pub fn scaled_identity(s: f64) -> Self {
        Mat2::diag(s, s)
    }

    pub fn transpose(&self) -> Mat2 {
        Mat2::new(self.xx, self.yx, self.xy, self.yy)
    }

    pub fn det(&self) -> f64 {
        self.xx * self.yy - self.xy * self.yx
    }

    pub fn trace(&self) -> f64 {
        self.xx + self.yy
    }

    pub fn scale(&self, s: f64) -> Mat2 {
        Mat2::new(self.xx * s, self.xy * s, self.yx * s, self.yy * s)
    }

    pub fn mul_vec(&self, v: Vec2) -> Vec2 {
        Vec2::new(self.xx * v.q + self.xy * v.p, self.yx * v.q + self.yy * v.p)
    }

    pub fn inverse(&self) -> Option<Mat2> {
        let det = self.det();
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        let inv = 1.0 / det;
        Some(Mat2::new(
            self.yy * inv,
            -self.xy * inv,
            -self.yx * inv,
            self.xx * inv,
        ))
    }

    /// `M V Mᵀ`, symmetrized.
    pub fn congruence(&self, v: &Mat2) -> Mat2 {
        (*self * *v * self.transpose()).symmetrized()
    }

    pub fn symmetrized(&self) -> Mat2 {
        let off = 0.5 * (self.xy + self.yx);
        Mat2::new(self.xx, off, off, self.yy)
    }

    pub fn is_finite(&self) -> bool {
        self.xx.is_finite() && self.xy.is_finite() && self.yx.is_finite() && self.yy.is_finite()
    }

    /// Sylvester criterion for a symmetric matrix.
    pub fn is_positive_definite(&self) -> bool {
        self.is_finite() && self.xx > 0.0 && self.det() > 0.0
    }

    pub fn max_abs(&self) -> f64 {
        libm::fmax(
            libm::fmax(libm::fabs(self.xx), libm::fabs(self.xy)),
            libm::fmax(libm::fabs(self.yx), libm::fabs(self.yy)),
        )
    }

    pub fn max_abs_diff(&self, other: &Mat2) -> f64 {
        (*self - *other).max_abs()
    }

    /// Lower Cholesky factor of a symmetric positive semi-definite matrix.
    ///
    /// Rank-deficient inputs (zero leading entry) are handled; tiny negative
    /// Schur complements caused by rounding are flushed to zero.
    pub fn cholesky_lower(&self) -> Option<Mat2> {
        if !self.is_finite() || self.xx < 0.0 || self.yy < 0.0 {
            return None;
        }
        if self.xx == 0.0 {
            if self.xy != 0.0 {
                return None;
            }
            return Some(Mat2::new(0.0, 0.0, 0.0, libm::sqrt(self.yy)));
        }
        let l11 = libm::sqrt(self.xx);
        let l21 = self.xy / l11;
        let schur = self.yy - l21 * l21;
        if schur < -1e-12 * self.yy.max(self.xx) {
            return None;
        }
        Some(Mat2::new(l11, 0.0, l21, libm::sqrt(schur.max(0.0))))
    }

    /// Eigenvalues of a symmetric matrix, largest first.
    pub fn symmetric_eigenvalues(&self) -> (f64, f64) {
        let mean = 0.5 * self.trace();
        let half_diff = 0.5 * (self.xx - self.yy);
        let radius = libm::hypot(half_diff, 0.5 * (self.xy + self.yx));
        (mean + radius, mean - radius)
    }
}

impl Add for Mat2 {
    type Output = Mat2;
    fn add(self, r: Mat2) -> Mat2 {
        Mat2::new(self.xx + r.xx, self.xy + r.xy, self.yx + r.yx, self.yy + r.yy)
    }
}

impl AddAssign for Mat2 {
    fn add_assign(&mut self, r: Mat2) {
        *self = *self + r;
    }
}

impl Sub for Mat2 {
    type Output = Mat2;
    fn sub(self, r: Mat2) -> Mat2 {
        Mat2::new(self.xx - r.xx, self.xy - r.xy, self.yx - r.yx, self.yy - r.yy)
    }
}

impl Neg for Mat2 {
    type Output = Mat2;
    fn neg(self) -> Mat2 {
        self.scale(-1.0)
    }
}

impl Mul for Mat2 {
    type Output = Mat2;
    fn mul(self, r: Mat2) -> Mat2 {
        Mat2::new(
            self.xx * r.xx + self.xy * r.yx,
            self.xx * r.xy + self.xy * r.yy,
            self.yx * r.xx + self.yy * r.yx,
            self.yx * r.xy + self.yy * r.yy,
        )
    }
}

impl Mul<Vec2> for Mat2 {
    type Output = Vec2;
    fn mul(self, v: Vec2) -> Vec2 {
        self.mul_vec(v)
    }
}

/// `exp(A t)` for a real 2×2 matrix in closed form.
///
/// Writes `A = s I + M` with `s = tr(A)/2`; since `M² = δ² I` the series
/// collapses to `e^{st} (c(t) I + g(t) M)` with hyperbolic or circular
/// `c`, `g` depending on the sign of `δ²`.
pub fn expm(a: &Mat2, t: f64) -> Mat2 {
    let s = 0.5 * a.trace();
    let m = *a - Mat2::scaled_identity(s);
    let delta_sq = s * s - a.det();
    let x = delta_sq * t * t;
    let (c, g) = if libm::fabs(x) < 1e-8 {
        (
            1.0 + x / 2.0 + x * x / 24.0,
            t * (1.0 + x / 6.0 + x * x / 120.0),
        )
    } else if delta_sq > 0.0 {
        let d = libm::sqrt(delta_sq);
        (libm::cosh(d * t), libm::sinh(d * t) / d)
    } else {
        let w = libm::sqrt(-delta_sq);
        (libm::cos(w * t), libm::sin(w * t) / w)
    };
    (Mat2::scaled_identity(c) + m.scale(g)).scale(libm::exp(s * t))
}

const GAUSS_LEGENDRE_8: [(f64, f64); 4] = [
    (0.183_434_642_495_649_8, 0.362_683_783_378_362),
    (0.525_532_409_916_329, 0.313_706_645_877_887_3),
    (0.796_666_477_413_626_7, 0.222_381_034_453_374_5),
    (0.960_289_856_497_536_3, 0.101_228_536_290_376_3),
];

/// Process-noise covariance `∫₀ᵗ e^{As} D e^{Aᵀs} ds` accumulated over one
/// step of a linear SDE with constant drift `A` and diffusion `D`.
///
/// The integrand is entire and the step is a small fraction of a period, so
/// 8-point Gauss–Legendre reaches machine precision.
pub fn integrated_noise(a: &Mat2, d: &Mat2, t: f64) -> Mat2 {
    let half = 0.5 * t;
    let mut acc = Mat2::ZERO;
    for &(node, weight) in GAUSS_LEGENDRE_8.iter() {
        for s in [half * (1.0 - node), half * (1.0 + node)] {
            let phi = expm(a, s);
            acc += phi.congruence(d).scale(weight);
        }
    }
    acc.scale(half).symmetrized()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn taylor_expm(a: &Mat2, t: f64) -> Mat2 {
        let at = a.scale(t);
        let mut term = Mat2::IDENTITY;
        let mut sum = Mat2::IDENTITY;
        for k in 1..60 {
            term = (term * at).scale(1.0 / k as f64);
            sum += term;
        }
        sum
    }

    #[test]
    fn expm_matches_taylor_series_in_all_regimes() {
        let cases = [
            Mat2::new(0.0, 2.0, -0.5, 0.0),   // elliptic
            Mat2::new(0.0, 1.0, -1.0, -0.3),  // damped
            Mat2::new(0.2, 1.0, 3.0, -0.1),   // hyperbolic
            Mat2::new(0.0, 1.0, 0.0, 0.0),    // nilpotent
            Mat2::new(-0.7, 0.0, 0.0, -0.7),  // scalar
        ];
        for a in cases {
            let exact = expm(&a, 0.9);
            let series = taylor_expm(&a, 0.9);
            assert!(exact.max_abs_diff(&series) < 1e-13, "{a:?}");
        }
    }

    #[test]
    fn integrated_noise_matches_closed_form_for_undamped_oscillator() {
        // A = [[0, w], [-w, 0]], D = diag(0, d):
        // Qd = d/2 [[t - sin(2wt)/(2w), (1 - cos(2wt))/(2w)], [.., t + sin(2wt)/(2w)]]
        let w = 3.0;
        let d = 0.8;
        let t = 0.05;
        let a = Mat2::new(0.0, w, -w, 0.0);
        let q = integrated_noise(&a, &Mat2::diag(0.0, d), t);
        let s2 = libm::sin(2.0 * w * t) / (2.0 * w);
        let c2 = (1.0 - libm::cos(2.0 * w * t)) / (2.0 * w);
        assert_relative_eq!(q.xx, 0.5 * d * (t - s2), max_relative = 1e-10);
        assert_relative_eq!(q.xy, 0.5 * d * c2, max_relative = 1e-12);
        assert_relative_eq!(q.yy, 0.5 * d * (t + s2), max_relative = 1e-12);
    }

    #[test]
    fn cholesky_handles_rank_deficient_input() {
        let l = Mat2::diag(0.0, 4.0).cholesky_lower().unwrap();
        assert_eq!(l, Mat2::new(0.0, 0.0, 0.0, 2.0));
        let v = Mat2::symmetric(4.0, 1.0, 3.0);
        let l = v.cholesky_lower().unwrap();
        assert!((l * l.transpose()).max_abs_diff(&v) < 1e-14);
        assert!(Mat2::symmetric(1.0, 2.0, 1.0).cholesky_lower().is_none());
    }

    #[test]
    fn symmetric_eigenvalues_of_diagonal() {
        assert_eq!(Mat2::diag(2.0, 5.0).symmetric_eigenvalues(), (5.0, 2.0));
    }
}
