//! Pinhole cameras, rays, and camera placement.
//!
//! World space is z-up; characters stand on the origin with their front
//! facing +x. Camera space follows the x-right, y-down, z-forward
//! convention, so a pose's rotation columns are (right, down, forward).
//!
//! Image coordinates are continuous: pixel `(u, v)` covers
//! `[u, u+1) × [v, v+1)` and its centre is `(u + 0.5, v + 0.5)`.

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

const ORTHO_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub focal_px: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    /// Recorded for format parity; must be zero.
    pub distortion: f64,
    /// Half-extent of the origin-centred scene cube, in world units.
    pub aabb_scale: f64,
}

impl Intrinsics {
    /// Square-pixel intrinsics with the principal point at the image centre.
    pub fn from_fov(width: u32, height: u32, fov_x_deg: f64, aabb_scale: f64) -> Self {
        let focal_px = 0.5 * width as f64 / (0.5 * fov_x_deg.to_radians()).tan();
        Self {
            focal_px,
            cx: 0.5 * width as f64,
            cy: 0.5 * height as f64,
            width,
            height,
            distortion: 0.0,
            aabb_scale,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.focal_px.is_finite()
            && self.focal_px > 0.0
            && self.cx >= 0.0
            && self.cx < self.width as f64
            && self.cy >= 0.0
            && self.cy < self.height as f64
            && self.aabb_scale.is_finite()
            && self.aabb_scale > 0.0;
        if !ok {
            return Err(Error::Geometry(format!("invalid intrinsics {self:?}")));
        }
        if self.distortion != 0.0 {
            return Err(Error::Unsupported(format!(
                "lens distortion {} (only 0 is supported)",
                self.distortion
            )));
        }
        Ok(())
    }

    /// Same field of view and principal-point offset at `factor`× the pixel
    /// count per axis.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            focal_px: self.focal_px * factor,
            cx: self.cx * factor,
            cy: self.cy * factor,
            width: (self.width as f64 * factor).round() as u32,
            height: (self.height as f64 * factor).round() as u32,
            ..self.clone()
        }
    }
}

/// Rigid camera-to-world transform.
#[derive(Clone, Debug, PartialEq)]
pub struct Pose {
    c2w: Matrix4<f64>,
}

impl Pose {
    pub fn new(c2w: Matrix4<f64>) -> Result<Self> {
        let r: Matrix3<f64> = c2w.fixed_view::<3, 3>(0, 0).into_owned();
        let err = (r.transpose() * r - Matrix3::identity()).amax();
        if !(err < ORTHO_TOL) {
            return Err(Error::Geometry(format!(
                "rotation block is not orthonormal (max |RᵀR - I| = {err:e})"
            )));
        }
        let last = c2w.row(3);
        if last[0] != 0.0 || last[1] != 0.0 || last[2] != 0.0 || last[3] != 1.0 {
            return Err(Error::Geometry(format!(
                "last row must be (0, 0, 0, 1), got {last:?}"
            )));
        }
        if c2w.iter().any(|x| !x.is_finite()) {
            return Err(Error::Geometry("non-finite pose".into()));
        }
        Ok(Self { c2w })
    }

    pub fn from_rows(rows: [[f64; 4]; 4]) -> Result<Self> {
        Self::new(Matrix4::from_fn(|i, j| rows[i][j]))
    }

    pub fn rows(&self) -> [[f64; 4]; 4] {
        let mut out = [[0.0; 4]; 4];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, x) in row.iter_mut().enumerate() {
                *x = self.c2w[(i, j)];
            }
        }
        out
    }

    /// Camera at `origin` looking at `target`, rolled so that image "up"
    /// points towards world +z (or +x when looking straight along z).
    pub fn look_at(origin: Vec3, target: Vec3) -> Result<Self> {
        let forward = (target - origin)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::Geometry("look_at: origin equals target".into()))?;
        let right = forward
            .cross(&Vec3::z())
            .try_normalize(1e-6)
            .unwrap_or_else(|| forward.cross(&Vec3::x()).normalize());
        let down = forward.cross(&right);
        let mut c2w = Matrix4::identity();
        for i in 0..3 {
            c2w[(i, 0)] = right[i];
            c2w[(i, 1)] = down[i];
            c2w[(i, 2)] = forward[i];
            c2w[(i, 3)] = origin[i];
        }
        Self::new(c2w)
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.c2w
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.c2w.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn origin(&self) -> Vec3 {
        Vec3::new(self.c2w[(0, 3)], self.c2w[(1, 3)], self.c2w[(2, 3)])
    }

    /// Unit optical axis in world space.
    pub fn forward(&self) -> Vec3 {
        Vec3::new(self.c2w[(0, 2)], self.c2w[(1, 2)], self.c2w[(2, 2)])
    }

    /// Composition `self ∘ other` (apply `other` first).
    pub fn compose(&self, other: &Pose) -> Result<Pose> {
        Pose::new(self.c2w * other.c2w)
    }

    /// Azimuth of the camera origin around the z axis, in degrees [0, 360).
    pub fn azimuth_deg(&self) -> f64 {
        let o = self.origin();
        o.y.atan2(o.x).to_degrees().rem_euclid(360.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
    pub t_near: f64,
    pub t_far: f64,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }

    /// Restrict the ray to the cube `[-half, half]³`; `None` on a miss.
    pub fn clip_to_aabb(&self, half: f64) -> Option<Ray> {
        let (mut t0, mut t1) = (self.t_near, self.t_far);
        for a in 0..3 {
            let inv = 1.0 / self.direction[a];
            let mut ta = (-half - self.origin[a]) * inv;
            let mut tb = (half - self.origin[a]) * inv;
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            // NaN from 0 * inf (origin on a slab boundary) keeps the old bound.
            if ta > t0 {
                t0 = ta;
            }
            if tb < t1 {
                t1 = tb;
            }
        }
        (t0 < t1 && t1 > 0.0).then(|| Ray {
            t_near: t0.max(self.t_near),
            t_far: t1,
            ..*self
        })
    }
}

/// Smallest positive near bound for generated rays.
pub const MIN_T_NEAR: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    pub intrinsics: Intrinsics,
    pub pose: Pose,
}

impl Camera {
    pub fn new(intrinsics: Intrinsics, pose: Pose) -> Result<Self> {
        intrinsics.validate()?;
        Ok(Self { intrinsics, pose })
    }

    pub fn width(&self) -> u32 {
        self.intrinsics.width
    }

    pub fn height(&self) -> u32 {
        self.intrinsics.height
    }

    /// Unit world-space direction through continuous image point `(x, y)`.
    pub fn direction_through(&self, x: f64, y: f64) -> Vec3 {
        let k = &self.intrinsics;
        let d_cam = Vec3::new((x - k.cx) / k.focal_px, (y - k.cy) / k.focal_px, 1.0);
        (self.pose.rotation() * d_cam).normalize()
    }

    /// Ray through the centre of pixel `(u, v)`. The range is
    /// `[MIN_T_NEAR, ∞)`; use [`Ray::clip_to_aabb`] to bound it.
    pub fn pixel_to_ray(&self, u: f64, v: f64) -> Result<Ray> {
        let (w, h) = (self.width(), self.height());
        if !(u >= 0.0 && u < w as f64 && v >= 0.0 && v < h as f64) {
            return Err(Error::PixelBounds {
                u,
                v,
                width: w,
                height: h,
            });
        }
        Ok(Ray {
            origin: self.pose.origin(),
            direction: self.direction_through(u + 0.5, v + 0.5),
            t_near: MIN_T_NEAR,
            t_far: f64::INFINITY,
        })
    }

    /// Continuous image coordinates and depth along the optical axis.
    pub fn project_point(&self, x: &Vec3) -> Result<(f64, f64, f64)> {
        let p = self.pose.rotation().transpose() * (x - self.pose.origin());
        if !(p.z > 0.0) {
            return Err(Error::BehindCamera(p.z));
        }
        let k = &self.intrinsics;
        Ok((
            k.focal_px * p.x / p.z + k.cx,
            k.focal_px * p.y / p.z + k.cy,
            p.z,
        ))
    }
}

/// Golden-angle spiral over the upper hemisphere; every camera looks at
/// the origin.
pub fn fibonacci_hemisphere(n: usize, radius: f64) -> Vec<Pose> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            let o = Vec3::new(r * phi.cos(), r * phi.sin(), z) * radius;
            Pose::look_at(o, Vec3::zeros()).expect("lattice origin is off the target")
        })
        .collect()
}

/// Camera on a sphere around the origin at the given azimuth (from +x
/// towards +y) and elevation above the equator, looking at the origin.
pub fn orbit_pose(azimuth_deg: f64, elevation_deg: f64, radius: f64) -> Pose {
    let (az, el) = (azimuth_deg.to_radians(), elevation_deg.to_radians());
    let o = Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin()) * radius;
    Pose::look_at(o, Vec3::zeros()).expect("orbit radius must be positive")
}

/// Great-circle distance between two points on a sphere of `radius`.
pub fn great_circle(a: &Vec3, b: &Vec3, radius: f64) -> f64 {
    let c = (a.dot(b) / (a.norm() * b.norm())).clamp(-1.0, 1.0);
    radius * c.acos()
}
