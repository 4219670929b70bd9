//! Scalar abstraction, forward-mode dual numbers, and small generic
//! vector/quaternion helpers.
//!
//! The dynamics, camera, and cost kernels are written once over the [`Scalar`]
//! trait and instantiated with `f64` for plain evaluation or with [`Dual`] for
//! forward-mode derivatives. This keeps value and gradient paths in the same
//! code, so a gradient can only be wrong if the value is.

use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

/// Differentiable scalar: `f64` or a dual number.
pub trait Scalar:
    Copy
    + std::fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
{
    fn from_f64(x: f64) -> Self;
    /// Value part (drops derivative information).
    fn value(self) -> f64;
    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn tanh(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn atan2(self, other: Self) -> Self;
    fn acos(self) -> Self;
    fn abs(self) -> Self;
    fn powi(self, n: i32) -> Self;
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(x: f64) -> Self {
        x
    }
    #[inline]
    fn value(self) -> f64 {
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
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    #[inline]
    fn sin(self) -> Self {
        f64::sin(self)
    }
    #[inline]
    fn cos(self) -> Self {
        f64::cos(self)
    }
    #[inline]
    fn atan2(self, other: Self) -> Self {
        f64::atan2(self, other)
    }
    #[inline]
    fn acos(self) -> Self {
        f64::acos(self.clamp(-1.0, 1.0))
    }
    #[inline]
    fn abs(self) -> Self {
        f64::abs(self)
    }
    #[inline]
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
}

/// Forward-mode dual number carrying `N` derivative directions.
#[derive(Clone, Copy, Debug)]
pub struct Dual<const N: usize> {
    pub re: f64,
    pub eps: [f64; N],
}

impl<const N: usize> Dual<N> {
    pub const fn constant(re: f64) -> Self {
        Self { re, eps: [0.0; N] }
    }

    /// Variable seeded with a unit derivative in direction `k`.
    pub fn var(re: f64, k: usize) -> Self {
        let mut eps = [0.0; N];
        eps[k] = 1.0;
        Self { re, eps }
    }

    /// Apply a scalar function with value `f` and derivative `dfdx` at `self.re`.
    #[inline]
    fn chain(self, f: f64, dfdx: f64) -> Self {
        let mut eps = self.eps;
        for e in &mut eps {
            *e *= dfdx;
        }
        Self { re: f, eps }
    }
}

impl<const N: usize> Add for Dual<N> {
    type Output = Self;
    #[inline]
    fn add(self, rhs: Self) -> Self {
        let mut eps = self.eps;
        for (e, r) in eps.iter_mut().zip(rhs.eps.iter()) {
            *e += r;
        }
        Self { re: self.re + rhs.re, eps }
    }
}

impl<const N: usize> Sub for Dual<N> {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: Self) -> Self {
        let mut eps = self.eps;
        for (e, r) in eps.iter_mut().zip(rhs.eps.iter()) {
            *e -= r;
        }
        Self { re: self.re - rhs.re, eps }
    }
}

impl<const N: usize> Mul for Dual<N> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        let mut eps = [0.0; N];
        for i in 0..N {
            eps[i] = self.eps[i] * rhs.re + rhs.eps[i] * self.re;
        }
        Self { re: self.re * rhs.re, eps }
    }
}

impl<const N: usize> Div for Dual<N> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: Self) -> Self {
        let inv = 1.0 / rhs.re;
        let re = self.re * inv;
        let mut eps = [0.0; N];
        for i in 0..N {
            eps[i] = (self.eps[i] - re * rhs.eps[i]) * inv;
        }
        Self { re, eps }
    }
}

impl<const N: usize> Neg for Dual<N> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        let mut eps = self.eps;
        for e in &mut eps {
            *e = -*e;
        }
        Self { re: -self.re, eps }
    }
}

impl<const N: usize> AddAssign for Dual<N> {
    #[inline]
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl<const N: usize> SubAssign for Dual<N> {
    #[inline]
    fn sub_assign(&mut self, rhs: Self) {
        *self = *self - rhs;
    }
}

impl<const N: usize> MulAssign for Dual<N> {
    #[inline]
    fn mul_assign(&mut self, rhs: Self) {
        *self = *self * rhs;
    }
}

impl<const N: usize> Scalar for Dual<N> {
    fn from_f64(x: f64) -> Self {
        Self::constant(x)
    }
    fn value(self) -> f64 {
        self.re
    }
    fn sqrt(self) -> Self {
        let s = self.re.sqrt();
        self.chain(s, 0.5 / s)
    }
    fn exp(self) -> Self {
        let e = self.re.exp();
        self.chain(e, e)
    }
    fn ln(self) -> Self {
        self.chain(self.re.ln(), 1.0 / self.re)
    }
    fn tanh(self) -> Self {
        let t = self.re.tanh();
        self.chain(t, 1.0 - t * t)
    }
    fn sin(self) -> Self {
        self.chain(self.re.sin(), self.re.cos())
    }
    fn cos(self) -> Self {
        self.chain(self.re.cos(), -self.re.sin())
    }
    fn atan2(self, other: Self) -> Self {
        // d atan2(y, x) = (x dy - y dx) / (x^2 + y^2)
        let (y, x) = (self, other);
        let denom = x.re * x.re + y.re * y.re;
        let re = y.re.atan2(x.re);
        let mut eps = [0.0; N];
        for i in 0..N {
            eps[i] = (x.re * y.eps[i] - y.re * x.eps[i]) / denom;
        }
        Self { re, eps }
    }
    fn acos(self) -> Self {
        let c = self.re.clamp(-1.0, 1.0);
        let d = -1.0 / (1.0 - c * c).max(1e-24).sqrt();
        self.chain(c.acos(), d)
    }
    fn abs(self) -> Self {
        if self.re >= 0.0 {
            self
        } else {
            -self
        }
    }
    fn powi(self, n: i32) -> Self {
        self.chain(self.re.powi(n), f64::from(n) * self.re.powi(n - 1))
    }
}

/// 3-vector over a generic scalar.
#[derive(Clone, Copy, Debug)]
pub struct V3<T>(pub [T; 3]);

impl<T: Scalar> V3<T> {
    pub fn new(x: T, y: T, z: T) -> Self {
        Self([x, y, z])
    }

    pub fn zeros() -> Self {
        Self([T::from_f64(0.0); 3])
    }

    pub fn from_f64s(v: &[f64; 3]) -> Self {
        Self([T::from_f64(v[0]), T::from_f64(v[1]), T::from_f64(v[2])])
    }

    pub fn from_na(v: &nalgebra::Vector3<f64>) -> Self {
        Self([T::from_f64(v.x), T::from_f64(v.y), T::from_f64(v.z)])
    }

    pub fn dot(&self, o: &Self) -> T {
        self.0[0] * o.0[0] + self.0[1] * o.0[1] + self.0[2] * o.0[2]
    }

    pub fn cross(&self, o: &Self) -> Self {
        Self([
            self.0[1] * o.0[2] - self.0[2] * o.0[1],
            self.0[2] * o.0[0] - self.0[0] * o.0[2],
            self.0[0] * o.0[1] - self.0[1] * o.0[0],
        ])
    }

    pub fn norm_squared(&self) -> T {
        self.dot(self)
    }

    pub fn norm(&self) -> T {
        self.norm_squared().sqrt()
    }

    pub fn scale(&self, s: T) -> Self {
        Self([self.0[0] * s, self.0[1] * s, self.0[2] * s])
    }

    pub fn normalized(&self) -> Self {
        let n = self.norm();
        Self([self.0[0] / n, self.0[1] / n, self.0[2] / n])
    }

    pub fn value(&self) -> nalgebra::Vector3<f64> {
        nalgebra::Vector3::new(self.0[0].value(), self.0[1].value(), self.0[2].value())
    }
}

impl<T: Scalar> Add for V3<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self([self.0[0] + o.0[0], self.0[1] + o.0[1], self.0[2] + o.0[2]])
    }
}

impl<T: Scalar> Sub for V3<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self([self.0[0] - o.0[0], self.0[1] - o.0[1], self.0[2] - o.0[2]])
    }
}

impl<T: Scalar> Neg for V3<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Self([-self.0[0], -self.0[1], -self.0[2]])
    }
}

/// 3x3 matrix over a generic scalar, row-major.
#[derive(Clone, Copy, Debug)]
pub struct M3<T>(pub [[T; 3]; 3]);

impl<T: Scalar> M3<T> {
    pub fn zeros() -> Self {
        Self([[T::from_f64(0.0); 3]; 3])
    }

    pub fn identity() -> Self {
        let mut m = Self::zeros();
        for i in 0..3 {
            m.0[i][i] = T::from_f64(1.0);
        }
        m
    }

    pub fn scaled_identity(s: T) -> Self {
        let mut m = Self::zeros();
        for i in 0..3 {
            m.0[i][i] = s;
        }
        m
    }

    /// Outer product `a b^T`.
    pub fn outer(a: &V3<T>, b: &V3<T>) -> Self {
        let mut m = Self::zeros();
        for i in 0..3 {
            for j in 0..3 {
                m.0[i][j] = a.0[i] * b.0[j];
            }
        }
        m
    }

    pub fn mul_vec(&self, v: &V3<T>) -> V3<T> {
        V3([
            self.0[0][0] * v.0[0] + self.0[0][1] * v.0[1] + self.0[0][2] * v.0[2],
            self.0[1][0] * v.0[0] + self.0[1][1] * v.0[1] + self.0[1][2] * v.0[2],
            self.0[2][0] * v.0[0] + self.0[2][1] * v.0[1] + self.0[2][2] * v.0[2],
        ])
    }

    pub fn transpose(&self) -> Self {
        let mut m = Self::zeros();
        for i in 0..3 {
            for j in 0..3 {
                m.0[i][j] = self.0[j][i];
            }
        }
        m
    }

    pub fn scale(&self, s: T) -> Self {
        let mut m = *self;
        for row in &mut m.0 {
            for e in row {
                *e *= s;
            }
        }
        m
    }

    pub fn det(&self) -> T {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn value(&self) -> nalgebra::Matrix3<f64> {
        nalgebra::Matrix3::from_fn(|i, j| self.0[i][j].value())
    }
}

impl<T: Scalar> Add for M3<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        let mut m = self;
        for i in 0..3 {
            for j in 0..3 {
                m.0[i][j] += o.0[i][j];
            }
        }
        m
    }
}

impl<T: Scalar> Sub for M3<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        let mut m = self;
        for i in 0..3 {
            for j in 0..3 {
                m.0[i][j] -= o.0[i][j];
            }
        }
        m
    }
}

/// Quaternion over a generic scalar, stored scalar-last `[x, y, z, w]`.
///
/// Products follow the Hamilton convention, matching `nalgebra`.
#[derive(Clone, Copy, Debug)]
pub struct Quat<T>(pub [T; 4]);

impl<T: Scalar> Quat<T> {
    pub fn identity() -> Self {
        let z = T::from_f64(0.0);
        Self([z, z, z, T::from_f64(1.0)])
    }

    pub fn from_na(q: &nalgebra::UnitQuaternion<f64>) -> Self {
        let c = q.quaternion();
        Self([
            T::from_f64(c.i),
            T::from_f64(c.j),
            T::from_f64(c.k),
            T::from_f64(c.w),
        ])
    }

    pub fn vec(&self) -> V3<T> {
        V3([self.0[0], self.0[1], self.0[2]])
    }

    pub fn w(&self) -> T {
        self.0[3]
    }

    /// Hamilton product `self * rhs`.
    pub fn mul_quat(&self, rhs: &Self) -> Self {
        let (v1, w1) = (self.vec(), self.w());
        let (v2, w2) = (rhs.vec(), rhs.w());
        let v = v1.scale(w2) + v2.scale(w1) + v1.cross(&v2);
        let w = w1 * w2 - v1.dot(&v2);
        Self([v.0[0], v.0[1], v.0[2], w])
    }

    pub fn conjugate(&self) -> Self {
        Self([-self.0[0], -self.0[1], -self.0[2], self.0[3]])
    }

    pub fn norm_squared(&self) -> T {
        self.0[0] * self.0[0] + self.0[1] * self.0[1] + self.0[2] * self.0[2] + self.0[3] * self.0[3]
    }

    pub fn normalized(&self) -> Self {
        let n = self.norm_squared().sqrt();
        Self([self.0[0] / n, self.0[1] / n, self.0[2] / n, self.0[3] / n])
    }

    /// Rotate a vector by this (unit) quaternion: `q v q^-1`.
    pub fn rotate(&self, v: &V3<T>) -> V3<T> {
        let qv = self.vec();
        let t = qv.cross(v).scale(T::from_f64(2.0));
        *v + t.scale(self.w()) + qv.cross(&t)
    }

    /// Rotate by the inverse quaternion: `q^-1 v q`.
    pub fn rotate_inv(&self, v: &V3<T>) -> V3<T> {
        self.conjugate().rotate(v)
    }

    pub fn value(&self) -> nalgebra::UnitQuaternion<f64> {
        nalgebra::UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
            self.0[3].value(),
            self.0[0].value(),
            self.0[1].value(),
            self.0[2].value(),
        ))
    }
}

/// Eigenvalues of a symmetric 3x3 matrix, ascending. Closed-form trigonometric
/// method; good to ~1e-12 relative for well-scaled inputs.
pub fn sym_eigenvalues_3x3(m: &nalgebra::Matrix3<f64>) -> [f64; 3] {
    let p1 = m[(0, 1)].powi(2) + m[(0, 2)].powi(2) + m[(1, 2)].powi(2);
    let q = (m[(0, 0)] + m[(1, 1)] + m[(2, 2)]) / 3.0;
    let p2 = (m[(0, 0)] - q).powi(2) + (m[(1, 1)] - q).powi(2) + (m[(2, 2)] - q).powi(2) + 2.0 * p1;
    if p2 <= 0.0 {
        return [q, q, q];
    }
    let p = (p2 / 6.0).sqrt();
    let mut b = *m;
    for i in 0..3 {
        b[(i, i)] -= q;
    }
    b /= p;
    let r = (b.determinant() / 2.0).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    let e1 = q + 2.0 * p * phi.cos();
    let e3 = q + 2.0 * p * (phi + 2.0 * std::f64::consts::FRAC_PI_3 * 2.0).cos();
    let e2 = 3.0 * q - e1 - e3;
    let mut out = [e3, e2, e1];
    out.sort_by(|a, b| a.partial_cmp(b).unwrap());
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn dual_arithmetic_matches_known_derivatives() {
        // f(x, y) = x * y + sin(x) / y at (1.2, 0.7)
        let x = Dual::<2>::var(1.2, 0);
        let y = Dual::<2>::var(0.7, 1);
        let f = x * y + x.sin() / y;
        assert_relative_eq!(f.re, 1.2 * 0.7 + 1.2f64.sin() / 0.7, epsilon = 1e-14);
        assert_relative_eq!(f.eps[0], 0.7 + 1.2f64.cos() / 0.7, epsilon = 1e-14);
        assert_relative_eq!(f.eps[1], 1.2 - 1.2f64.sin() / 0.7f64.powi(2), epsilon = 1e-14);
    }

    #[test]
    fn dual_atan2_matches_finite_differences() {
        let h = 1e-7;
        for &(y0, x0) in &[(0.3, 1.1), (-0.8, 0.4), (0.5, -0.9)] {
            let y = Dual::<2>::var(y0, 0);
            let x = Dual::<2>::var(x0, 1);
            let f = y.atan2(x);
            let fd_y = ((y0 + h).atan2(x0) - (y0 - h).atan2(x0)) / (2.0 * h);
            let fd_x = (y0.atan2(x0 + h) - y0.atan2(x0 - h)) / (2.0 * h);
            assert_relative_eq!(f.eps[0], fd_y, epsilon = 1e-6);
            assert_relative_eq!(f.eps[1], fd_x, epsilon = 1e-6);
        }
    }

    #[test]
    fn quat_rotate_matches_nalgebra() {
        let q = nalgebra::UnitQuaternion::from_euler_angles(0.3, -0.4, 1.2);
        let v = nalgebra::Vector3::new(0.5, -1.0, 2.0);
        let qg = Quat::<f64>::from_na(&q);
        let vg = V3::<f64>::from_na(&v);
        let r = qg.rotate(&vg).value();
        assert_relative_eq!(r, q * v, epsilon = 1e-14);
        let ri = qg.rotate_inv(&vg).value();
        assert_relative_eq!(ri, q.inverse() * v, epsilon = 1e-14);
    }

    #[test]
    fn quat_product_composes_rotations() {
        let qa = nalgebra::UnitQuaternion::from_euler_angles(0.1, 0.2, 0.3);
        let qb = nalgebra::UnitQuaternion::from_euler_angles(-0.5, 0.4, 0.9);
        let g = Quat::<f64>::from_na(&qa).mul_quat(&Quat::<f64>::from_na(&qb));
        let expect = qa * qb;
        let v = nalgebra::Vector3::new(1.0, 2.0, 3.0);
        assert_relative_eq!(g.value() * v, expect * v, epsilon = 1e-13);
    }

    #[test]
    fn sym_eigenvalues_match_nalgebra() {
        let a = nalgebra::Matrix3::new(4.0, 1.0, -0.5, 1.0, 3.0, 0.2, -0.5, 0.2, 1.5);
        let mine = sym_eigenvalues_3x3(&a);
        let mut theirs: Vec<f64> = a.symmetric_eigen().eigenvalues.iter().copied().collect();
        theirs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (m, t) in mine.iter().zip(theirs.iter()) {
            assert_relative_eq!(m, t, epsilon = 1e-10);
        }
    }
}
