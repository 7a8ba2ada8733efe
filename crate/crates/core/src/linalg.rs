//! Small fixed-size vector/matrix types used throughout the crate.
//!
//! Everything here is `Copy`, stack allocated and generic over [`Real`].

use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub, SubAssign};

use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Vec3<T>(pub [T; 3]);

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Mat3<T>(pub [[T; 3]; 3]);

/// Quaternion stored as `(w, x, y, z)`.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Quat<T>(pub [T; 4]);

impl<T: Real> Vec3<T> {
    #[inline]
    pub fn new(x: T, y: T, z: T) -> Self {
        Vec3([x, y, z])
    }

    #[inline]
    pub fn zeros() -> Self {
        Vec3([T::zero(); 3])
    }

    #[inline]
    pub fn from_f64(v: [f64; 3]) -> Self {
        Vec3([T::c(v[0]), T::c(v[1]), T::c(v[2])])
    }

    #[inline]
    pub fn to_f64(self) -> [f64; 3] {
        [self.0[0].to_f(), self.0[1].to_f(), self.0[2].to_f()]
    }

    #[inline]
    pub fn cast<U: Real>(self) -> Vec3<U> {
        Vec3::from_f64(self.to_f64())
    }

    #[inline]
    pub fn x(&self) -> T {
        self.0[0]
    }
    #[inline]
    pub fn y(&self) -> T {
        self.0[1]
    }
    #[inline]
    pub fn z(&self) -> T {
        self.0[2]
    }

    #[inline]
    pub fn dot(&self, o: &Self) -> T {
        self.0[0] * o.0[0] + self.0[1] * o.0[1] + self.0[2] * o.0[2]
    }

    #[inline]
    pub fn cross(&self, o: &Self) -> Self {
        let [a, b, c] = self.0;
        let [d, e, f] = o.0;
        Vec3([b * f - c * e, c * d - a * f, a * e - b * d])
    }

    #[inline]
    pub fn norm_squared(&self) -> T {
        self.dot(self)
    }

    #[inline]
    pub fn norm(&self) -> T {
        self.norm_squared().sqrt()
    }

    pub fn normalized(&self) -> Self {
        *self * (T::one() / self.norm())
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> T {
        self.0.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    /// Skew-symmetric matrix `[v]ₓ` with `[v]ₓ w = v × w`.
    pub fn skew(&self) -> Mat3<T> {
        let z = T::zero();
        let [a, b, c] = self.0;
        Mat3([[z, -c, b], [c, z, -a], [-b, a, z]])
    }
}

impl<T> Index<usize> for Vec3<T> {
    type Output = T;
    #[inline]
    fn index(&self, i: usize) -> &T {
        &self.0[i]
    }
}

impl<T> IndexMut<usize> for Vec3<T> {
    #[inline]
    fn index_mut(&mut self, i: usize) -> &mut T {
        &mut self.0[i]
    }
}

impl<T: Real> Add for Vec3<T> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Vec3([self.0[0] + o.0[0], self.0[1] + o.0[1], self.0[2] + o.0[2]])
    }
}

impl<T: Real> AddAssign for Vec3<T> {
    #[inline]
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<T: Real> Sub for Vec3<T> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Vec3([self.0[0] - o.0[0], self.0[1] - o.0[1], self.0[2] - o.0[2]])
    }
}

impl<T: Real> SubAssign for Vec3<T> {
    #[inline]
    fn sub_assign(&mut self, o: Self) {
        *self = *self - o;
    }
}

impl<T: Real> Mul<T> for Vec3<T> {
    type Output = Self;
    #[inline]
    fn mul(self, s: T) -> Self {
        Vec3([self.0[0] * s, self.0[1] * s, self.0[2] * s])
    }
}

impl<T: Real> Neg for Vec3<T> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Vec3([-self.0[0], -self.0[1], -self.0[2]])
    }
}

impl<T: Real> Mat3<T> {
    pub fn identity() -> Self {
        let (o, z) = (T::one(), T::zero());
        Mat3([[o, z, z], [z, o, z], [z, z, o]])
    }

    pub fn zeros() -> Self {
        Mat3([[T::zero(); 3]; 3])
    }

    pub fn diag(d: Vec3<T>) -> Self {
        let z = T::zero();
        Mat3([[d[0], z, z], [z, d[1], z], [z, z, d[2]]])
    }

    pub fn from_f64(m: [[f64; 3]; 3]) -> Self {
        let mut out = Self::zeros();
        for r in 0..3 {
            for c in 0..3 {
                out.0[r][c] = T::c(m[r][c]);
            }
        }
        out
    }

    pub fn to_f64(&self) -> [[f64; 3]; 3] {
        let mut out = [[0.0; 3]; 3];
        for r in 0..3 {
            for c in 0..3 {
                out[r][c] = self.0[r][c].to_f();
            }
        }
        out
    }

    pub fn cast<U: Real>(&self) -> Mat3<U> {
        Mat3::from_f64(self.to_f64())
    }

    #[inline]
    pub fn transpose(&self) -> Self {
        let m = &self.0;
        Mat3([[m[0][0], m[1][0], m[2][0]], [m[0][1], m[1][1], m[2][1]], [m[0][2], m[1][2], m[2][2]]])
    }

    #[inline]
    pub fn trace(&self) -> T {
        self.0[0][0] + self.0[1][1] + self.0[2][2]
    }

    pub fn determinant(&self) -> T {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    #[inline]
    pub fn mul_vec(&self, v: &Vec3<T>) -> Vec3<T> {
        let m = &self.0;
        Vec3([
            m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
        ])
    }

    #[inline]
    pub fn mul_mat(&self, o: &Self) -> Self {
        let mut out = Self::zeros();
        for r in 0..3 {
            for c in 0..3 {
                out.0[r][c] = self.0[r][0] * o.0[0][c] + self.0[r][1] * o.0[1][c] + self.0[r][2] * o.0[2][c];
            }
        }
        out
    }

    pub fn scale(&self, s: T) -> Self {
        let mut out = *self;
        out.0.iter_mut().flatten().for_each(|v| *v *= s);
        out
    }

    pub fn add(&self, o: &Self) -> Self {
        let mut out = *self;
        for r in 0..3 {
            for c in 0..3 {
                out.0[r][c] += o.0[r][c];
            }
        }
        out
    }

    pub fn sub(&self, o: &Self) -> Self {
        self.add(&o.scale(-T::one()))
    }

    pub fn max_abs(&self) -> T {
        self.0.iter().flatten().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|v| v.is_finite())
    }

    /// `‖RᵀR − I‖∞` (max-abs entry).
    pub fn orthonormality_error(&self) -> T {
        self.transpose().mul_mat(self).sub(&Self::identity()).max_abs()
    }

    /// The vector `s` with `tr([ω]ₓ M) = ω · s` for every `ω`.
    #[inline]
    pub fn skew_trace_dual(&self) -> Vec3<T> {
        let m = &self.0;
        Vec3([m[1][2] - m[2][1], m[2][0] - m[0][2], m[0][1] - m[1][0]])
    }

    /// Rodrigues formula: `exp([ω]ₓ)`.
    pub fn exp_so3(omega: &Vec3<T>) -> Self {
        let theta2 = omega.norm_squared();
        let k = omega.skew();
        let k2 = k.mul_mat(&k);
        let (a, b) = if theta2 < T::c(1e-16) {
            // Taylor expansion of sinθ/θ and (1−cosθ)/θ².
            (T::one() - theta2 / T::c(6.0), T::half() - theta2 / T::c(24.0))
        } else {
            let theta = theta2.sqrt();
            (theta.sin() / theta, (T::one() - theta.cos()) / theta2)
        };
        Self::identity().add(&k.scale(a)).add(&k2.scale(b))
    }

    /// Inverse of [`Mat3::exp_so3`]; returns the axis-angle vector with angle in `[0, π]`.
    pub fn log_so3(&self) -> Vec3<T> {
        let q = Quat::from_rotation(self);
        q.to_axis_angle()
    }

    /// Rotation about the z axis.
    pub fn rot_z(angle: T) -> Self {
        let (s, c) = angle.sin_cos();
        let (o, z) = (T::one(), T::zero());
        Mat3([[c, -s, z], [s, c, z], [z, z, o]])
    }

    pub fn rot_x(angle: T) -> Self {
        let (s, c) = angle.sin_cos();
        let (o, z) = (T::one(), T::zero());
        Mat3([[o, z, z], [z, c, -s], [z, s, c]])
    }

    pub fn rot_y(angle: T) -> Self {
        let (s, c) = angle.sin_cos();
        let (o, z) = (T::one(), T::zero());
        Mat3([[c, z, s], [z, o, z], [-s, z, c]])
    }
}

impl<T: Real> Mul for Mat3<T> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        self.mul_mat(&o)
    }
}

impl<T: Real> Mul<Vec3<T>> for Mat3<T> {
    type Output = Vec3<T>;
    #[inline]
    fn mul(self, v: Vec3<T>) -> Vec3<T> {
        self.mul_vec(&v)
    }
}

impl<T: Real> Quat<T> {
    pub fn identity() -> Self {
        Quat([T::one(), T::zero(), T::zero(), T::zero()])
    }

    pub fn new(w: T, x: T, y: T, z: T) -> Self {
        Quat([w, x, y, z])
    }

    pub fn norm(&self) -> T {
        self.0.iter().map(|v| *v * *v).sum::<T>().sqrt()
    }

    pub fn normalized(&self) -> Self {
        let n = self.norm();
        Quat(self.0.map(|v| v / n))
    }

    pub fn dot(&self, o: &Self) -> T {
        (0..4).map(|i| self.0[i] * o.0[i]).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn from_axis_angle(axis: &Vec3<T>, angle: T) -> Self {
        let a = axis.normalized();
        let (s, c) = (angle * T::half()).sin_cos();
        Quat([c, a[0] * s, a[1] * s, a[2] * s])
    }

    /// Axis-angle vector; the sign of `w` is canonicalized so the angle is in `[0, π]`.
    pub fn to_axis_angle(&self) -> Vec3<T> {
        let q = if self.0[0] < T::zero() { Quat(self.0.map(|v| -v)) } else { *self };
        let v = Vec3([q.0[1], q.0[2], q.0[3]]);
        let s = v.norm();
        if s < T::c(1e-12) {
            return v * T::two();
        }
        let angle = T::two() * s.atan2(q.0[0]);
        v * (angle / s)
    }

    /// Rotation matrix of the quaternion (assumed unit).
    pub fn to_rotation(&self) -> Mat3<T> {
        let [w, x, y, z] = self.0;
        let two = T::two();
        let one = T::one();
        Mat3([
            [one - two * (y * y + z * z), two * (x * y - w * z), two * (x * z + w * y)],
            [two * (x * y + w * z), one - two * (x * x + z * z), two * (y * z - w * x)],
            [two * (x * z - w * y), two * (y * z + w * x), one - two * (x * x + y * y)],
        ])
    }

    /// Shepperd's method; result has `w ≥ 0`.
    pub fn from_rotation(m: &Mat3<T>) -> Self {
        let r = &m.0;
        let tr = m.trace();
        let one = T::one();
        let quarter = T::c(0.25);
        let q = if tr > T::zero() {
            let s = (tr + one).sqrt() * T::two();
            Quat([quarter * s, (r[2][1] - r[1][2]) / s, (r[0][2] - r[2][0]) / s, (r[1][0] - r[0][1]) / s])
        } else if r[0][0] > r[1][1] && r[0][0] > r[2][2] {
            let s = (one + r[0][0] - r[1][1] - r[2][2]).sqrt() * T::two();
            Quat([(r[2][1] - r[1][2]) / s, quarter * s, (r[0][1] + r[1][0]) / s, (r[0][2] + r[2][0]) / s])
        } else if r[1][1] > r[2][2] {
            let s = (one + r[1][1] - r[0][0] - r[2][2]).sqrt() * T::two();
            Quat([(r[0][2] - r[2][0]) / s, (r[0][1] + r[1][0]) / s, quarter * s, (r[1][2] + r[2][1]) / s])
        } else {
            let s = (one + r[2][2] - r[0][0] - r[1][1]).sqrt() * T::two();
            Quat([(r[1][0] - r[0][1]) / s, (r[0][2] + r[2][0]) / s, (r[1][2] + r[2][1]) / s, quarter * s])
        };
        let q = q.normalized();
        if q.0[0] < T::zero() {
            Quat(q.0.map(|v| -v))
        } else {
            q
        }
    }

    /// Gradient of a loss w.r.t. the raw (unnormalized) quaternion, given the
    /// gradient w.r.t. the rotation matrix built from its normalized version.
    pub fn rotation_grad_to_quat(&self, g: &Mat3<T>) -> [T; 4] {
        let n = self.norm();
        let q = Quat(self.0.map(|v| v / n));
        let [w, x, y, z] = q.0;
        let g = &g.0;
        let two = T::two();
        let dw = two * (-z * g[0][1] + y * g[0][2] + z * g[1][0] - x * g[1][2] - y * g[2][0] + x * g[2][1]);
        let dx = two
            * (y * g[0][1] + z * g[0][2] + y * g[1][0] - two * x * g[1][1] - w * g[1][2] + z * g[2][0] + w * g[2][1]
                - two * x * g[2][2]);
        let dy = two
            * (-two * y * g[0][0] + x * g[0][1] + w * g[0][2] + x * g[1][0] + z * g[1][2] - w * g[2][0] + z * g[2][1]
                - two * y * g[2][2]);
        let dz = two
            * (-two * z * g[0][0] - w * g[0][1] + x * g[0][2] + w * g[1][0] - two * z * g[1][1]
                + y * g[1][2]
                + x * g[2][0]
                + y * g[2][1]);
        let gn = [dw, dx, dy, dz];
        // Project out the radial component of the normalization.
        let radial: T = (0..4).map(|i| gn[i] * q.0[i]).sum();
        [0, 1, 2, 3].map(|i| (gn[i] - q.0[i] * radial) / n)
    }
}

/// Symmetric 2×2 matrix `[[a, b], [b, c]]`.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Sym2<T> {
    pub a: T,
    pub b: T,
    pub c: T,
}

impl<T: Real> Sym2<T> {
    pub fn det(&self) -> T {
        self.a * self.c - self.b * self.b
    }

    pub fn inverse(&self) -> Option<Self> {
        let d = self.det();
        if !(d > T::zero()) {
            return None;
        }
        let inv = T::one() / d;
        Some(Sym2 { a: self.c * inv, b: -self.b * inv, c: self.a * inv })
    }
}
