use serde::{Deserialize, Serialize};

use crate::math::{Ray, Vec3};
use crate::{Error, Result};

/// Pinhole camera. Pixel (0, 0) is the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Camera {
    pub position: Vec3,
    pub look_at: Vec3,
    pub up: Vec3,
    /// Vertical field of view in radians.
    pub fov_y: f64,
    pub width: usize,
    pub height: usize,
}

impl Default for Camera {
    fn default() -> Self {
        Camera {
            position: Vec3::new(0.5, -1.3, 0.9),
            look_at: Vec3::splat(0.5),
            up: Vec3::new(0.0, 0.0, 1.0),
            fov_y: 0.75,
            width: 64,
            height: 64,
        }
    }
}

impl Camera {
    pub fn validate(&self) -> Result<()> {
        if !(self.fov_y > 0.0 && self.fov_y < std::f64::consts::PI) {
            return Err(Error::input(format!("fov {} outside (0, pi)", self.fov_y)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::input("image dimensions must be positive"));
        }
        let forward = self.look_at - self.position;
        if !(self.position.is_finite() && forward.is_finite() && self.up.is_finite()) {
            return Err(Error::input("camera vectors must be finite"));
        }
        if forward.length() == 0.0 || forward.cross(self.up).length() < 1e-12 {
            return Err(Error::input(
                "camera look direction is degenerate or parallel to up",
            ));
        }
        Ok(())
    }

    /// Ray through `(px + jx, py + jy)` with jitter in [0, 1).
    pub fn ray(&self, px: usize, py: usize, jx: f64, jy: f64) -> Ray {
        let forward = (self.look_at - self.position).normalize();
        let right = forward.cross(self.up).normalize();
        let up = right.cross(forward);
        let tan = (0.5 * self.fov_y).tan();
        let aspect = self.width as f64 / self.height as f64;
        let sx = (2.0 * (px as f64 + jx) / self.width as f64 - 1.0) * tan * aspect;
        let sy = (1.0 - 2.0 * (py as f64 + jy) / self.height as f64) * tan;
        Ray::new(self.position, (forward + right * sx + up * sy).normalize())
    }
}
