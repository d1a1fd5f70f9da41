//! The heterogeneous participating medium: a normalized scalar grid over the
//! unit cube, a piecewise-linear transfer function that classifies scalars
//! into rgba, and Woodcock (delta) tracking through the resulting extinction
//! field.
//!
//! Extinction is `density_scale * alpha(tf(scalar(x)))`. The transfer
//! function's alpha therefore controls both how much the medium attenuates and,
//! together with rgb, how much energy survives a scattering event
//! (`alpha * rgb`).

mod io;
pub mod synth;
mod tracking;

pub use io::{read_transfer_function, read_volume, write_transfer_function, write_volume};

use crate::math::{Aabb, Rgb, Vec3};
use crate::{Error, Result};

/// Default extinction per unit length for a fully opaque (alpha = 1) sample.
pub const DEFAULT_DENSITY_SCALE: f64 = 100.0;

/// Scalar field sampled at voxel centers of the unit cube, x-fastest layout.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeGrid {
    dims: [usize; 3],
    data: Vec<f32>,
}

impl VolumeGrid {
    pub fn new(dims: [usize; 3], data: Vec<f32>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::input(format!(
                "volume dims must be positive, got {dims:?}"
            )));
        }
        let len = dims[0] * dims[1] * dims[2];
        if data.len() != len {
            return Err(Error::input(format!(
                "volume data has {} values, dims {:?} need {len}",
                data.len(),
                dims
            )));
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::input(format!("volume value {bad} outside [0,1]")));
        }
        Ok(VolumeGrid { dims, data })
    }

    pub fn constant(dims: [usize; 3], value: f32) -> Result<Self> {
        Self::new(dims, vec![value; dims[0] * dims[1] * dims[2]])
    }

    /// Builds a grid by evaluating `f` at every voxel center.
    pub fn from_fn(dims: [usize; 3], f: impl Fn(Vec3) -> f32) -> Result<Self> {
        let mut data = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    data.push(f(Self::center_of(dims, [i, j, k])));
                }
            }
        }
        Self::new(dims, data)
    }

    fn center_of(dims: [usize; 3], idx: [usize; 3]) -> Vec3 {
        Vec3::new(
            (idx[0] as f64 + 0.5) / dims[0] as f64,
            (idx[1] as f64 + 0.5) / dims[1] as f64,
            (idx[2] as f64 + 0.5) / dims[2] as f64,
        )
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn world_box(&self) -> Aabb {
        Aabb::UNIT
    }

    pub fn voxel_center(&self, idx: [usize; 3]) -> Vec3 {
        Self::center_of(self.dims, idx)
    }

    /// Edge length of one voxel along each axis.
    pub fn voxel_size(&self) -> Vec3 {
        Vec3::new(
            1.0 / self.dims[0] as f64,
            1.0 / self.dims[1] as f64,
            1.0 / self.dims[2] as f64,
        )
    }

    #[inline]
    pub fn voxel(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[i + self.dims[0] * (j + self.dims[1] * k)] as f64
    }

    pub fn value_range(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v as f64), hi.max(v as f64))
            })
    }

    /// Trilinear reconstruction between voxel centers. Queries outside the
    /// unit cube clamp to the boundary voxels.
    pub fn sample(&self, p: Vec3) -> f64 {
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for axis in 0..3 {
            let n = self.dims[axis];
            if n == 1 {
                continue;
            }
            let u = (p[axis] * n as f64 - 0.5).clamp(0.0, (n - 1) as f64);
            let i = (u.floor() as usize).min(n - 2);
            base[axis] = i;
            frac[axis] = u - i as f64;
        }
        let step = |axis: usize| usize::from(self.dims[axis] > 1);
        let [i, j, k] = base;
        let (di, dj, dk) = (step(0), step(1), step(2));
        let [fx, fy, fz] = frac;

        let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
        let c00 = lerp(self.voxel(i, j, k), self.voxel(i + di, j, k), fx);
        let c10 = lerp(self.voxel(i, j + dj, k), self.voxel(i + di, j + dj, k), fx);
        let c01 = lerp(self.voxel(i, j, k + dk), self.voxel(i + di, j, k + dk), fx);
        let c11 = lerp(
            self.voxel(i, j + dj, k + dk),
            self.voxel(i + di, j + dj, k + dk),
            fx,
        );
        lerp(lerp(c00, c10, fy), lerp(c01, c11, fy), fz)
    }
}

/// Piecewise-linear scalar -> rgba classification.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferFunction {
    points: Vec<(f64, [f64; 4])>,
}

impl TransferFunction {
    pub fn new(points: Vec<(f64, [f64; 4])>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::input(
                "transfer function needs at least two control points",
            ));
        }
        if points[0].0 != 0.0 || points[points.len() - 1].0 != 1.0 {
            return Err(Error::input(
                "transfer function control points must start at 0 and end at 1",
            ));
        }
        if points.windows(2).any(|w| !(w[0].0 < w[1].0)) {
            return Err(Error::input(
                "transfer function scalar positions must be strictly increasing",
            ));
        }
        for (s, rgba) in &points {
            if rgba.iter().any(|c| !(0.0..=1.0).contains(c)) {
                return Err(Error::input(format!(
                    "transfer function rgba at {s} has a channel outside [0,1]"
                )));
            }
        }
        Ok(TransferFunction { points })
    }

    /// Constant classification over the whole scalar range.
    pub fn constant(rgba: [f64; 4]) -> Result<Self> {
        Self::new(vec![(0.0, rgba), (1.0, rgba)])
    }

    /// Linear ramp from `lo` at scalar 0 to `hi` at scalar 1.
    pub fn ramp(lo: [f64; 4], hi: [f64; 4]) -> Result<Self> {
        Self::new(vec![(0.0, lo), (1.0, hi)])
    }

    pub fn points(&self) -> &[(f64, [f64; 4])] {
        &self.points
    }

    pub fn eval(&self, s: f64) -> [f64; 4] {
        let s = s.clamp(0.0, 1.0);
        let idx = self.points.partition_point(|(p, _)| *p <= s);
        if idx == 0 {
            return self.points[0].1;
        }
        if idx >= self.points.len() {
            return self.points[self.points.len() - 1].1;
        }
        let (s0, c0) = self.points[idx - 1];
        let (s1, c1) = self.points[idx];
        let t = (s - s0) / (s1 - s0);
        std::array::from_fn(|c| c0[c] + (c1[c] - c0[c]) * t)
    }

    /// Largest alpha attained for scalars in `[lo, hi]`.
    pub fn max_alpha_in(&self, lo: f64, hi: f64) -> f64 {
        let inner = self
            .points
            .iter()
            .filter(|(s, _)| *s >= lo && *s <= hi)
            .map(|(_, c)| c[3]);
        inner
            .chain([self.eval(lo)[3], self.eval(hi)[3]])
            .fold(0.0, f64::max)
    }
}

/// A real collision produced by delta tracking.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interaction {
    pub position: Vec3,
    pub scalar: f64,
    pub rgba: [f64; 4],
}

impl Interaction {
    /// Per-channel fraction of energy that survives scattering here.
    pub fn albedo(&self) -> Rgb {
        let a = self.rgba[3];
        Rgb::new(a * self.rgba[0], a * self.rgba[1], a * self.rgba[2])
    }

    /// Scalar scattering probability used by the composition stage.
    pub fn scattering_probability(&self) -> f64 {
        self.rgba[3] * (self.rgba[0] + self.rgba[1] + self.rgba[2]) / 3.0
    }
}

/// Grid + transfer function + extinction scale, with a precomputed majorant.
#[derive(Debug, Clone)]
pub struct Medium {
    pub grid: VolumeGrid,
    pub tf: TransferFunction,
    density_scale: f64,
    sigma_max: f64,
}

impl Medium {
    pub fn new(grid: VolumeGrid, tf: TransferFunction, density_scale: f64) -> Result<Self> {
        if !(density_scale.is_finite() && density_scale >= 0.0) {
            return Err(Error::input(format!(
                "density scale {density_scale} must be finite and >= 0"
            )));
        }
        let (lo, hi) = grid.value_range();
        let sigma_max = density_scale * tf.max_alpha_in(lo, hi);
        Ok(Medium {
            grid,
            tf,
            density_scale,
            sigma_max,
        })
    }

    /// Overrides the majorant; it must bound the extinction everywhere.
    pub fn with_majorant(mut self, sigma_max: f64) -> Result<Self> {
        if !(sigma_max.is_finite() && sigma_max > 0.0) {
            return Err(Error::input(format!(
                "majorant {sigma_max} must be finite and > 0"
            )));
        }
        if sigma_max < self.sigma_max {
            return Err(Error::input(format!(
                "majorant {sigma_max} is below the attained extinction {}",
                self.sigma_max
            )));
        }
        self.sigma_max = sigma_max;
        Ok(self)
    }

    pub fn density_scale(&self) -> f64 {
        self.density_scale
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigma_max
    }

    pub fn world_box(&self) -> Aabb {
        self.grid.world_box()
    }

    pub fn classify(&self, p: Vec3) -> (f64, [f64; 4]) {
        let s = self.grid.sample(p);
        (s, self.tf.eval(s))
    }

    pub fn extinction(&self, p: Vec3) -> f64 {
        self.density_scale * self.classify(p).1[3]
    }
}
