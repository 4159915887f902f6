//! Scalar abstraction shared by the plain and forward-differentiated
//! evaluation paths of the fitting objective.
//!
//! The objective (forward kinematics, projection, pose normalization and
//! mixture log-likelihood) is written once over [`Real`] and instantiated
//! with `f64` for evaluation and with [`Dual`] for exact gradients.

use std::ops::{Add, Div, Mul, Neg, Sub};

/// Number of free parameters in the single-view fit: 3 root rotation angles,
/// 2 root translation components (depth is pinned) and 2 angles for each of
/// the 17 non-root chain joints.
pub const N_FREE_PARAMS: usize = 39;

pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn cst(x: f64) -> Self;
    /// The underlying value (discards derivatives).
    fn val(self) -> f64;
    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
}

impl Real for f64 {
    #[inline]
    fn cst(x: f64) -> Self {
        x
    }
    #[inline]
    fn val(self) -> f64 {
        self
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn ln(self) -> Self {
        f64::ln(self)
    }
    #[inline]
    fn sin(self) -> Self {
        f64::sin(self)
    }
    #[inline]
    fn cos(self) -> Self {
        f64::cos(self)
    }
}

/// Forward-mode dual number carrying the value and all partial derivatives
/// with respect to the [`N_FREE_PARAMS`] fit parameters at once.
#[derive(Clone, Copy, Debug)]
pub struct Dual {
    pub v: f64,
    pub d: [f64; N_FREE_PARAMS],
}

impl Dual {
    /// The i-th independent variable: value `x`, unit derivative in slot `i`.
    pub fn var(x: f64, i: usize) -> Self {
        let mut d = [0.0; N_FREE_PARAMS];
        d[i] = 1.0;
        Dual { v: x, d }
    }

    fn map(self, v: f64, dv: f64) -> Self {
        let mut d = self.d;
        for x in &mut d {
            *x *= dv;
        }
        Dual { v, d }
    }
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, rhs: Dual) -> Dual {
        let mut d = self.d;
        for (x, y) in d.iter_mut().zip(rhs.d.iter()) {
            *x += y;
        }
        Dual {
            v: self.v + rhs.v,
            d,
        }
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, rhs: Dual) -> Dual {
        let mut d = self.d;
        for (x, y) in d.iter_mut().zip(rhs.d.iter()) {
            *x -= y;
        }
        Dual {
            v: self.v - rhs.v,
            d,
        }
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, rhs: Dual) -> Dual {
        let mut d = [0.0; N_FREE_PARAMS];
        for i in 0..N_FREE_PARAMS {
            d[i] = self.d[i] * rhs.v + rhs.d[i] * self.v;
        }
        Dual {
            v: self.v * rhs.v,
            d,
        }
    }
}

impl Div for Dual {
    type Output = Dual;
    fn div(self, rhs: Dual) -> Dual {
        let inv = 1.0 / rhs.v;
        let mut d = [0.0; N_FREE_PARAMS];
        for i in 0..N_FREE_PARAMS {
            d[i] = (self.d[i] - self.v * inv * rhs.d[i]) * inv;
        }
        Dual {
            v: self.v * inv,
            d,
        }
    }
}

impl Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        let mut d = self.d;
        for x in &mut d {
            *x = -*x;
        }
        Dual { v: -self.v, d }
    }
}

impl Real for Dual {
    fn cst(x: f64) -> Self {
        Dual {
            v: x,
            d: [0.0; N_FREE_PARAMS],
        }
    }
    fn val(self) -> f64 {
        self.v
    }
    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        self.map(s, 0.5 / s)
    }
    fn exp(self) -> Self {
        let e = self.v.exp();
        self.map(e, e)
    }
    fn ln(self) -> Self {
        self.map(self.v.ln(), 1.0 / self.v)
    }
    fn sin(self) -> Self {
        self.map(self.v.sin(), self.v.cos())
    }
    fn cos(self) -> Self {
        self.map(self.v.cos(), -self.v.sin())
    }
}

/// Minimal fixed-size vector and matrix helpers over a generic scalar.
pub mod vec3 {
    use super::Real;

    pub type V3<T> = [T; 3];
    pub type M3<T> = [[T; 3]; 3];

    #[inline]
    pub fn from_f64<T: Real>(a: &[f64; 3]) -> V3<T> {
        [T::cst(a[0]), T::cst(a[1]), T::cst(a[2])]
    }

    #[inline]
    pub fn add<T: Real>(a: &V3<T>, b: &V3<T>) -> V3<T> {
        [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
    }

    #[inline]
    pub fn sub<T: Real>(a: &V3<T>, b: &V3<T>) -> V3<T> {
        [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
    }

    #[inline]
    pub fn scale<T: Real>(a: &V3<T>, s: T) -> V3<T> {
        [a[0] * s, a[1] * s, a[2] * s]
    }

    #[inline]
    pub fn dot<T: Real>(a: &V3<T>, b: &V3<T>) -> T {
        a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
    }

    #[inline]
    pub fn cross<T: Real>(a: &V3<T>, b: &V3<T>) -> V3<T> {
        [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]
    }

    #[inline]
    pub fn norm<T: Real>(a: &V3<T>) -> T {
        dot(a, a).sqrt()
    }

    #[inline]
    pub fn mat_vec<T: Real>(m: &M3<T>, v: &V3<T>) -> V3<T> {
        [dot(&m[0], v), dot(&m[1], v), dot(&m[2], v)]
    }

    #[inline]
    pub fn mat_mul<T: Real>(a: &M3<T>, b: &M3<T>) -> M3<T> {
        let mut out = [[T::cst(0.0); 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
            }
        }
        out
    }

    /// Rodrigues rotation about a unit axis.
    pub fn axis_angle<T: Real>(axis: &V3<T>, angle: T) -> M3<T> {
        let c = angle.cos();
        let s = angle.sin();
        let t = T::cst(1.0) - c;
        let [x, y, z] = *axis;
        [
            [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
            [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
            [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
        ]
    }

    /// Rotation composed as Rz(c) * Ry(b) * Rx(a) from angles `[a, b, c]`.
    pub fn euler_xyz<T: Real>(angles: &V3<T>) -> M3<T> {
        let (sa, ca) = (angles[0].sin(), angles[0].cos());
        let (sb, cb) = (angles[1].sin(), angles[1].cos());
        let (sc, cc) = (angles[2].sin(), angles[2].cos());
        let zero = T::cst(0.0);
        let one = T::cst(1.0);
        let rx = [[one, zero, zero], [zero, ca, -sa], [zero, sa, ca]];
        let ry = [[cb, zero, sb], [zero, one, zero], [-sb, zero, cb]];
        let rz = [[cc, -sc, zero], [sc, cc, zero], [zero, zero, one]];
        mat_mul(&rz, &mat_mul(&ry, &rx))
    }
}
