//! Pinhole cameras, rigid poses and the relative-pose machinery.
//!
//! Extrinsics are world-to-camera: `x_cam = R · x_world + t`. Camera axes follow
//! the usual vision convention (x right, y down, z forward).
//!
//! The relative pose from view `j` to view `i` maps camera-`j` coordinates into
//! camera-`i` coordinates, `T_{i←j} = T_i · T_j⁻¹`. It is unchanged when the world
//! frame is moved (`T_k → T_k · G⁻¹` for every view), which is the gauge freedom of
//! pose estimation.

use crate::error::{Error, Result};
use crate::linalg::{Mat3, Quat, Vec3};
use crate::scalar::Real;

pub const DEFAULT_NEAR_PLANE: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Intrinsics<T> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    pub width: usize,
    pub height: usize,
}

impl<T: Real> Intrinsics<T> {
    pub fn new(fx: T, fy: T, cx: T, cy: T, width: usize, height: usize) -> Result<Self> {
        let k = Intrinsics { fx, fy, cx, cy, width, height };
        k.validate()?;
        Ok(k)
    }

    /// Centered principal point and equal focal lengths.
    pub fn centered(focal: T, width: usize, height: usize) -> Self {
        Intrinsics { fx: focal, fy: focal, cx: T::c(width as f64 * 0.5), cy: T::c(height as f64 * 0.5), width, height }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy].iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidIntrinsics("non-finite entry".into()));
        }
        if !(self.fx > T::zero() && self.fy > T::zero()) {
            return Err(Error::InvalidIntrinsics(format!("focal lengths must be positive ({}, {})", self.fx, self.fy)));
        }
        let (w, h) = (T::c(self.width as f64), T::c(self.height as f64));
        if self.cx < T::zero() || self.cx >= w || self.cy < T::zero() || self.cy >= h {
            return Err(Error::InvalidIntrinsics(format!(
                "principal point ({}, {}) outside {}x{}",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    /// `(fx/W, fy/H, cx/W, cy/H)`.
    pub fn normalized(&self) -> [T; 4] {
        let (w, h) = (T::c(self.width as f64), T::c(self.height as f64));
        [self.fx / w, self.fy / h, self.cx / w, self.cy / h]
    }

    pub fn cast<U: Real>(&self) -> Intrinsics<U> {
        Intrinsics {
            fx: U::c(self.fx.to_f()),
            fy: U::c(self.fy.to_f()),
            cx: U::c(self.cx.to_f()),
            cy: U::c(self.cy.to_f()),
            width: self.width,
            height: self.height,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraPose<T> {
    /// World-to-camera rotation.
    pub rotation: Mat3<T>,
    /// World-to-camera translation.
    pub translation: Vec3<T>,
    pub intrinsics: Intrinsics<T>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RelativePose<T> {
    pub rotation: Mat3<T>,
    pub translation: Vec3<T>,
}

/// Result of projecting a world point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PointProjection<T> {
    Visible {
        u: T,
        v: T,
        depth: T,
    },
    /// Camera-space depth is at or below the near plane.
    BehindCamera {
        depth: T,
    },
}

impl<T: Real> PointProjection<T> {
    pub fn visible(&self) -> Option<(T, T, T)> {
        match *self {
            PointProjection::Visible { u, v, depth } => Some((u, v, depth)),
            PointProjection::BehindCamera { .. } => None,
        }
    }
}

pub(crate) fn check_rotation<T: Real>(r: &Mat3<T>) -> Result<()> {
    let err = r.orthonormality_error().to_f();
    if !(err < T::ORTHO_TOL) || !(r.determinant().to_f() > 0.0) {
        return Err(Error::NonOrthonormalRotation(err));
    }
    Ok(())
}

impl<T: Real> CameraPose<T> {
    pub fn new(rotation: Mat3<T>, translation: Vec3<T>, intrinsics: Intrinsics<T>) -> Result<Self> {
        let p = CameraPose { rotation, translation, intrinsics };
        p.validate()?;
        Ok(p)
    }

    pub fn identity(intrinsics: Intrinsics<T>) -> Self {
        CameraPose { rotation: Mat3::identity(), translation: Vec3::zeros(), intrinsics }
    }

    /// Camera at `eye` looking at `target`; `up` is a world-space hint for image "up".
    pub fn look_at(eye: Vec3<T>, target: Vec3<T>, up: Vec3<T>, intrinsics: Intrinsics<T>) -> Result<Self> {
        let forward = (target - eye).normalized();
        let right = forward.cross(&up);
        if !(right.norm() > T::c(1e-9)) {
            return Err(Error::InvalidConfig("look_at: up is parallel to the viewing direction".into()));
        }
        let right = right.normalized();
        let down = forward.cross(&right);
        let rotation = Mat3([right.0, down.0, forward.0]);
        let translation = -(rotation * eye);
        CameraPose::new(rotation, translation, intrinsics)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.rotation.is_finite() || !self.translation.is_finite() {
            return Err(Error::NonOrthonormalRotation(f64::NAN));
        }
        check_rotation(&self.rotation)?;
        self.intrinsics.validate()
    }

    /// Camera center in world coordinates, `−Rᵀt`.
    pub fn center(&self) -> Vec3<T> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn to_world(&self, p_cam: &Vec3<T>) -> Vec3<T> {
        self.rotation.transpose() * (*p_cam - self.translation)
    }

    pub fn to_camera(&self, p_world: &Vec3<T>) -> Vec3<T> {
        self.rotation * *p_world + self.translation
    }

    /// Moves the world frame by the rigid transform `x' = G_R x + G_t`.
    ///
    /// Physical camera placement is unchanged: `T → T · G⁻¹`.
    pub fn change_world(&self, g_rot: &Mat3<T>, g_trans: &Vec3<T>) -> Self {
        let rotation = self.rotation * g_rot.transpose();
        let translation = self.translation - rotation * *g_trans;
        CameraPose { rotation, translation, intrinsics: self.intrinsics }
    }

    /// Turns the camera by `exp([ω]ₓ)` about its own centre, then adds `dt` to
    /// the translation: `R ← E·R`, `t ← E·t + dt`.
    pub fn retract(&self, omega: &Vec3<T>, dt: &Vec3<T>) -> Self {
        let e = Mat3::exp_so3(omega);
        CameraPose { rotation: e * self.rotation, translation: e * self.translation + *dt, intrinsics: self.intrinsics }
    }

    /// Projects the rotation back onto SO(3) through a quaternion round-trip.
    pub fn reorthonormalized(&self) -> Self {
        CameraPose { rotation: Quat::from_rotation(&self.rotation).to_rotation(), ..*self }
    }

    pub fn cast<U: Real>(&self) -> CameraPose<U> {
        CameraPose {
            rotation: self.rotation.cast(),
            translation: self.translation.cast(),
            intrinsics: self.intrinsics.cast(),
        }
    }
}

impl<T: Real> RelativePose<T> {
    pub fn identity() -> Self {
        RelativePose { rotation: Mat3::identity(), translation: Vec3::zeros() }
    }

    /// Applies `T_{i←j}` on top of view `j`'s extrinsics, giving view `i`'s.
    pub fn compose_onto(&self, pose_j: &CameraPose<T>) -> CameraPose<T> {
        CameraPose {
            rotation: self.rotation * pose_j.rotation,
            translation: self.rotation * pose_j.translation + self.translation,
            intrinsics: pose_j.intrinsics,
        }
    }
}

/// `(Rᵀ, −Rᵀt)` with the same intrinsics.
pub fn invert_pose<T: Real>(pose: &CameraPose<T>) -> Result<CameraPose<T>> {
    check_rotation(&pose.rotation)?;
    let rt = pose.rotation.transpose();
    Ok(CameraPose { rotation: rt, translation: -(rt * pose.translation), intrinsics: pose.intrinsics })
}

/// Relative pose `T_{i←j} = T_i · T_j⁻¹` (camera `j` frame into camera `i` frame).
pub fn relative_pose<T: Real>(pose_i: &CameraPose<T>, pose_j: &CameraPose<T>) -> Result<RelativePose<T>> {
    check_rotation(&pose_i.rotation)?;
    check_rotation(&pose_j.rotation)?;
    Ok(relative_unchecked(pose_i, pose_j))
}

#[inline]
pub(crate) fn relative_unchecked<T: Real>(pose_i: &CameraPose<T>, pose_j: &CameraPose<T>) -> RelativePose<T> {
    let rotation = pose_i.rotation * pose_j.rotation.transpose();
    let translation = pose_i.translation - rotation * pose_j.translation;
    RelativePose { rotation, translation }
}

/// Geodesic distance `arccos((tr(R₁ᵀR₂) − 1)/2)` in radians, argument clamped to `[−1, 1]`.
pub fn rotation_geodesic_angle<T: Real>(r1: &Mat3<T>, r2: &Mat3<T>) -> Result<T> {
    check_rotation(r1)?;
    check_rotation(r2)?;
    Ok(geodesic_unchecked(r1, r2))
}

#[inline]
/// Evaluated as `atan2(sin θ, cos θ)`, which equals the clamped arccos on
/// rotations but keeps full precision near 0 and π.
pub(crate) fn geodesic_unchecked<T: Real>(r1: &Mat3<T>, r2: &Mat3<T>) -> T {
    let m = r1.transpose().mul_mat(r2);
    let cos = ((m.trace() - T::one()) * T::half()).max(-T::one()).min(T::one());
    let a = m.0;
    let sin = Vec3::new(a[2][1] - a[1][2], a[0][2] - a[2][0], a[1][0] - a[0][1]).norm() * T::half();
    sin.atan2(cos)
}

/// Divides every translation by the largest translation norm; returns that norm as the scale.
pub fn normalize_scene_scale<T: Real>(poses: &[CameraPose<T>]) -> Result<(Vec<CameraPose<T>>, T)> {
    if poses.is_empty() {
        return Err(Error::InvalidConfig("normalize_scene_scale needs at least one pose".into()));
    }
    let scale = poses.iter().map(|p| p.translation.norm()).fold(T::zero(), T::max);
    if !(scale >= T::c(1e-12)) {
        return Err(Error::DegenerateScale);
    }
    let out = poses.iter().map(|p| CameraPose { translation: p.translation * (T::one() / scale), ..*p }).collect();
    Ok((out, scale))
}

/// Pinhole projection with the default near plane.
pub fn project_point<T: Real>(point: &Vec3<T>, pose: &CameraPose<T>) -> PointProjection<T> {
    project_point_near(point, pose, T::c(DEFAULT_NEAR_PLANE))
}

pub fn project_point_near<T: Real>(point: &Vec3<T>, pose: &CameraPose<T>, near: T) -> PointProjection<T> {
    let p = pose.to_camera(point);
    let depth = p.z();
    if depth <= near {
        return PointProjection::BehindCamera { depth };
    }
    let k = &pose.intrinsics;
    PointProjection::Visible { u: k.fx * p.x() / depth + k.cx, v: k.fy * p.y() / depth + k.cy, depth }
}
