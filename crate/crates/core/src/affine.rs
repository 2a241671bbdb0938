//! The affine group `G2 = R^2 x| GL2(R)` and the Iwasawa chart of `GL2(R)`.
//!
//! An element `[x, A]` acts on the plane by `z -> x + A z`, so the product is
//! `[x, A][y, B] = [x + A y, A B]` and the inverse is `[-A^-1 x, A^-1]`.
//!
//! Every invertible `A` factors uniquely as `A = M C` with
//!
//! ```text
//! M = | s  -t |   (similitude, s^2 + t^2 > 0)     C = | 1  0 |   (v != 0)
//!     | t   s |                                       | u  v |
//! ```
//!
//! and `(s, t, u, v)` is the chart used by every quadrature in this crate.
//! Multiplying out gives `a = s - u t`, `b = -t v`, `c = t + u s`, `d = s v`.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;

use crate::error::{Error, Result};

/// Matrices with `|det|` at or below this value are treated as singular.
pub const DET_EPSILON: f64 = 1e-9;

/// Relative Frobenius tolerance for factorization round trips.
pub const RECONSTRUCT_TOL: f64 = 1e-10;

/// A 2x2 real matrix stored row-major as `[[a, b], [c, d]]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mat2 {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl Mat2 {
    pub const IDENTITY: Mat2 = Mat2 { a: 1.0, b: 0.0, c: 0.0, d: 1.0 };

    pub const fn new(a: f64, b: f64, c: f64, d: f64) -> Self {
        Mat2 { a, b, c, d }
    }

    pub fn identity() -> Self {
        Self::IDENTITY
    }

    pub fn diag(x: f64, y: f64) -> Self {
        Mat2::new(x, 0.0, 0.0, y)
    }

    pub fn scalar(k: f64) -> Self {
        Mat2::diag(k, k)
    }

    /// Counter-clockwise rotation `R_theta = [[cos, -sin], [sin, cos]]`.
    pub fn rotation(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Mat2::new(c, -s, s, c)
    }

    pub fn from_rows(rows: [[f64; 2]; 2]) -> Self {
        Mat2::new(rows[0][0], rows[0][1], rows[1][0], rows[1][1])
    }

    pub fn rows(&self) -> [[f64; 2]; 2] {
        [[self.a, self.b], [self.c, self.d]]
    }

    pub fn det(&self) -> f64 {
        self.a * self.d - self.b * self.c
    }

    pub fn is_finite(&self) -> bool {
        self.a.is_finite() && self.b.is_finite() && self.c.is_finite() && self.d.is_finite()
    }

    /// Fails with [`Error::SingularMatrix`] when `|det| <= DET_EPSILON`.
    pub fn check_invertible(&self) -> Result<f64> {
        let det = self.det();
        if !det.is_finite() || det.abs() <= DET_EPSILON {
            return Err(Error::SingularMatrix { det });
        }
        Ok(det)
    }

    pub fn inverse(&self) -> Result<Mat2> {
        let det = self.check_invertible()?;
        Ok(Mat2::new(self.d / det, -self.b / det, -self.c / det, self.a / det))
    }

    pub fn transpose(&self) -> Mat2 {
        Mat2::new(self.a, self.c, self.b, self.d)
    }

    pub fn mul(&self, o: &Mat2) -> Mat2 {
        Mat2::new(
            self.a * o.a + self.b * o.c,
            self.a * o.b + self.b * o.d,
            self.c * o.a + self.d * o.c,
            self.c * o.b + self.d * o.d,
        )
    }

    pub fn mul_vec(&self, z: [f64; 2]) -> [f64; 2] {
        [self.a * z[0] + self.b * z[1], self.c * z[0] + self.d * z[1]]
    }

    pub fn add(&self, o: &Mat2) -> Mat2 {
        Mat2::new(self.a + o.a, self.b + o.b, self.c + o.c, self.d + o.d)
    }

    pub fn sub(&self, o: &Mat2) -> Mat2 {
        Mat2::new(self.a - o.a, self.b - o.b, self.c - o.c, self.d - o.d)
    }

    pub fn scale(&self, k: f64) -> Mat2 {
        Mat2::new(self.a * k, self.b * k, self.c * k, self.d * k)
    }

    pub fn frobenius(&self) -> f64 {
        self.frobenius_sq().sqrt()
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.a * self.a + self.b * self.b + self.c * self.c + self.d * self.d
    }

    pub fn max_abs(&self) -> f64 {
        self.a.abs().max(self.b.abs()).max(self.c.abs()).max(self.d.abs())
    }

    /// `||self - other||_F / max(||other||_F, 1e-300)`.
    pub fn rel_diff(&self, other: &Mat2) -> f64 {
        self.sub(other).frobenius() / other.frobenius().max(1e-300)
    }

    /// Largest singular value.
    pub fn spectral_norm(&self) -> f64 {
        let f2 = self.frobenius_sq();
        let det = self.det();
        let disc = (f2 * f2 - 4.0 * det * det).max(0.0).sqrt();
        ((f2 + disc) / 2.0).sqrt()
    }
}

impl fmt::Display for Mat2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[[{}, {}], [{}, {}]]", self.a, self.b, self.c, self.d)
    }
}

/// An element `[x, A]` of the affine group.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineElement {
    x: [f64; 2],
    a: Mat2,
}

impl AffineElement {
    pub fn new(x: [f64; 2], a: Mat2) -> Result<Self> {
        a.check_invertible()?;
        if !(x[0].is_finite() && x[1].is_finite()) {
            return Err(Error::InvalidChartPoint(format!("non-finite translation {x:?}")));
        }
        Ok(AffineElement { x, a })
    }

    pub fn identity() -> Self {
        AffineElement { x: [0.0, 0.0], a: Mat2::IDENTITY }
    }

    pub fn translation(x: [f64; 2]) -> Self {
        AffineElement { x, a: Mat2::IDENTITY }
    }

    pub fn linear(a: Mat2) -> Result<Self> {
        Self::new([0.0, 0.0], a)
    }

    pub fn x(&self) -> [f64; 2] {
        self.x
    }

    pub fn matrix(&self) -> Mat2 {
        self.a
    }

    /// `self * other`, i.e. first apply `other`, then `self`.
    pub fn compose(&self, other: &AffineElement) -> AffineElement {
        let ay = self.a.mul_vec(other.x);
        AffineElement { x: [self.x[0] + ay[0], self.x[1] + ay[1]], a: self.a.mul(&other.a) }
    }

    pub fn invert(&self) -> Result<AffineElement> {
        let inv = self.a.inverse()?;
        let t = inv.mul_vec(self.x);
        Ok(AffineElement { x: [-t[0], -t[1]], a: inv })
    }

    pub fn apply(&self, z: [f64; 2]) -> [f64; 2] {
        let az = self.a.mul_vec(z);
        [self.x[0] + az[0], self.x[1] + az[1]]
    }

    /// Max-abs distance over the six parameters.
    pub fn max_abs_diff(&self, other: &AffineElement) -> f64 {
        let dx = (self.x[0] - other.x[0]).abs().max((self.x[1] - other.x[1]).abs());
        dx.max(self.a.sub(&other.a).max_abs())
    }
}

impl fmt::Display for AffineElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[({}, {}), {}]", self.x[0], self.x[1], self.a)
    }
}

/// Branch of the `v = sign * e^w` substitution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sign {
    Positive,
    Negative,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Positive => 1.0,
            Sign::Negative => -1.0,
        }
    }

    pub fn of(x: f64) -> Sign {
        if x < 0.0 {
            Sign::Negative
        } else {
            Sign::Positive
        }
    }

    pub fn index(self) -> usize {
        match self {
            Sign::Positive => 0,
            Sign::Negative => 1,
        }
    }
}

/// The `(s, t, u, v)` factors of `A = M C`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IwasawaFactors {
    pub s: f64,
    pub t: f64,
    pub u: f64,
    pub v: f64,
}

impl IwasawaFactors {
    pub fn new(s: f64, t: f64, u: f64, v: f64) -> Result<Self> {
        let f = IwasawaFactors { s, t, u, v };
        f.validate()?;
        Ok(f)
    }

    fn validate(&self) -> Result<()> {
        let finite = self.s.is_finite() && self.t.is_finite() && self.u.is_finite() && self.v.is_finite();
        if !finite {
            return Err(Error::InvalidChartPoint(format!("non-finite factors {self:?}")));
        }
        if self.s * self.s + self.t * self.t <= 0.0 {
            return Err(Error::InvalidChartPoint("s^2 + t^2 must be positive".into()));
        }
        if self.v == 0.0 {
            return Err(Error::InvalidChartPoint("v must be nonzero".into()));
        }
        Ok(())
    }

    /// The similitude factor `[[s, -t], [t, s]]`.
    pub fn similitude(&self) -> Mat2 {
        Mat2::new(self.s, -self.t, self.t, self.s)
    }

    /// The stabilizer factor `[[1, 0], [u, v]]`.
    pub fn stabilizer(&self) -> Mat2 {
        Mat2::new(1.0, 0.0, self.u, self.v)
    }

    pub fn reconstruct(&self) -> Mat2 {
        Mat2::new(self.s - self.u * self.t, -self.t * self.v, self.t + self.u * self.s, self.s * self.v)
    }

    pub fn to_log_polar(&self) -> ChartPoint {
        ChartPoint {
            rho: 0.5 * (self.s * self.s + self.t * self.t).ln(),
            theta: self.t.atan2(self.s),
            u: self.u,
            w: self.v.abs().ln(),
            sign: Sign::of(self.v),
        }
    }

    pub fn max_abs_diff(&self, o: &IwasawaFactors) -> f64 {
        (self.s - o.s)
            .abs()
            .max((self.t - o.t).abs())
            .max((self.u - o.u).abs())
            .max((self.v - o.v).abs())
    }
}

/// Log-polar coordinates of the Iwasawa chart: `s + i t = e^rho e^{i theta}`
/// and `v = sign * e^w`. Under this substitution the Haar measure of `GL2`
/// becomes `d rho d theta du dw` on each sign branch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChartPoint {
    pub rho: f64,
    pub theta: f64,
    pub u: f64,
    pub w: f64,
    pub sign: Sign,
}

impl ChartPoint {
    pub fn factors(&self) -> IwasawaFactors {
        let r = self.rho.exp();
        let (sin, cos) = self.theta.sin_cos();
        IwasawaFactors { s: r * cos, t: r * sin, u: self.u, v: self.sign.value() * self.w.exp() }
    }

    pub fn matrix(&self) -> Mat2 {
        self.factors().reconstruct()
    }

    /// `det A = (s^2 + t^2) v`.
    pub fn det(&self) -> f64 {
        self.sign.value() * (2.0 * self.rho + self.w).exp()
    }
}

/// Iwasawa factorization `A = M C`.
pub fn iwasawa(a: &Mat2) -> Result<IwasawaFactors> {
    let det = a.check_invertible()?;
    let n = a.b * a.b + a.d * a.d;
    Ok(IwasawaFactors {
        s: a.d * det / n,
        t: -a.b * det / n,
        u: (a.c * a.d + a.a * a.b) / det,
        v: n / det,
    })
}

/// Inverse of [`iwasawa`]: the matrix `M C` for the chart point `(s, t, u, v)`.
pub fn from_chart(s: f64, t: f64, u: f64, v: f64) -> Result<Mat2> {
    Ok(IwasawaFactors::new(s, t, u, v)?.reconstruct())
}

/// Wraps an angle into `[lo, lo + 2 pi)`.
pub fn wrap_angle(theta: f64, lo: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut t = (theta - lo).rem_euclid(two_pi) + lo;
    if t >= lo + two_pi {
        t -= two_pi;
    }
    t
}
