//! Henyey-Greenstein phase function.
//!
//! Angles are measured between the incoming and outgoing *travel*
//! directions, so `g > 0` favours forward scattering. Working values of `g`
//! are clamped to `|g| <= 0.999`; at `|g| = 1` the density collapses to a
//! delta and is no longer a usable pdf.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::math::Vec3;
use crate::{Error, Result};

pub const MAX_ABS_G: f64 = 0.999;

const INV_FOUR_PI: f64 = 1.0 / (4.0 * PI);

/// Anisotropy coefficient in [-1, 1].
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PhaseCoefficient(f64);

impl PhaseCoefficient {
    pub fn new(g: f64) -> Result<Self> {
        if !(-1.0..=1.0).contains(&g) {
            return Err(Error::input(format!(
                "phase coefficient {g} outside [-1, 1]"
            )));
        }
        Ok(PhaseCoefficient(g))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// The clamped value actually used for evaluation and sampling.
    pub fn working(self) -> f64 {
        self.0.clamp(-MAX_ABS_G, MAX_ABS_G)
    }
}

/// Henyey-Greenstein density per steradian.
#[inline]
pub fn hg_eval(g: f64, cos_theta: f64) -> f64 {
    let g = g.clamp(-MAX_ABS_G, MAX_ABS_G);
    let denom = 1.0 + g * g - 2.0 * g * cos_theta;
    INV_FOUR_PI * (1.0 - g * g) / (denom * denom.sqrt())
}

/// Inverse CDF of the scattering cosine.
#[inline]
pub fn hg_sample_cos(g: f64, u: f64) -> f64 {
    let g = g.clamp(-MAX_ABS_G, MAX_ABS_G);
    let cos_theta = if g.abs() < 1e-3 {
        2.0 * u - 1.0
    } else {
        let s = (1.0 - g * g) / (1.0 - g + 2.0 * g * u);
        (1.0 + g * g - s * s) / (2.0 * g)
    };
    cos_theta.clamp(-1.0, 1.0)
}

/// Samples an outgoing travel direction for light arriving along `w_in`.
pub fn hg_sample(g: f64, w_in: Vec3, u1: f64, u2: f64) -> Vec3 {
    let cos_theta = hg_sample_cos(g, u1);
    let sin_theta = (1.0 - cos_theta * cos_theta).max(0.0).sqrt();
    let phi = 2.0 * PI * u2;
    let (t, s) = w_in.orthonormal_basis();
    let d = t * (sin_theta * phi.cos()) + s * (sin_theta * phi.sin()) + w_in * cos_theta;
    // One renormalization keeps |d| within 1e-15 of unity.
    d / d.length()
}
