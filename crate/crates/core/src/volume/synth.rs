//! Deterministic procedural volumes used in tests, benchmarks and examples.

use serde::{Deserialize, Serialize};

use super::VolumeGrid;
use crate::math::Vec3;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Synthetic {
    /// Horizontal slab `|z - center| <= thickness / 2`.
    Slab {
        center: f64,
        thickness: f64,
    },
    Sphere {
        center: [f64; 3],
        radius: f64,
    },
    /// Band-limited turbulence-like noise; `seed` selects the pattern.
    Vortices {
        seed: u64,
        octaves: u32,
    },
}

impl Synthetic {
    pub fn default_slab() -> Self {
        Synthetic::Slab {
            center: 0.5,
            thickness: 0.3,
        }
    }

    pub fn default_sphere() -> Self {
        Synthetic::Sphere {
            center: [0.5; 3],
            radius: 0.25,
        }
    }

    pub fn default_vortices() -> Self {
        Synthetic::Vortices {
            seed: 1,
            octaves: 4,
        }
    }

    pub fn generate(&self, dims: [usize; 3]) -> Result<VolumeGrid> {
        match *self {
            Synthetic::Slab { center, thickness } => VolumeGrid::from_fn(dims, |p| {
                f32::from(u8::from((p.z - center).abs() <= thickness * 0.5))
            }),
            Synthetic::Sphere { center, radius } => {
                let c = Vec3::new(center[0], center[1], center[2]);
                VolumeGrid::from_fn(dims, |p| f32::from(u8::from((p - c).length() <= radius)))
            }
            Synthetic::Vortices { seed, octaves } => {
                VolumeGrid::from_fn(dims, |p| vortices(p, seed, octaves) as f32)
            }
        }
    }
}

fn lattice_hash(seed: u64, x: i64, y: i64, z: i64) -> f64 {
    let mut h = seed ^ 0x2545_f491_4f6c_dd1d;
    for c in [x, y, z] {
        h ^= c as u64;
        h = h.wrapping_mul(0x9e37_79b9_7f4a_7c15);
        h ^= h >> 29;
    }
    h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h ^= h >> 32;
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn value_noise(p: Vec3, seed: u64) -> f64 {
    let cell = [p.x.floor(), p.y.floor(), p.z.floor()];
    let f = [p.x - cell[0], p.y - cell[1], p.z - cell[2]];
    let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
    let w = [smooth(f[0]), smooth(f[1]), smooth(f[2])];
    let mut acc = 0.0;
    for corner in 0..8 {
        let o = [corner & 1, (corner >> 1) & 1, (corner >> 2) & 1];
        let mut weight = 1.0;
        for axis in 0..3 {
            weight *= if o[axis] == 1 { w[axis] } else { 1.0 - w[axis] };
        }
        let v = lattice_hash(
            seed,
            cell[0] as i64 + o[0] as i64,
            cell[1] as i64 + o[1] as i64,
            cell[2] as i64 + o[2] as i64,
        );
        acc += weight * v;
    }
    acc
}

/// Ridged fBm: thin sheets and tubes that read like a turbulent flow.
fn vortices(p: Vec3, seed: u64, octaves: u32) -> f64 {
    let mut freq = 4.0;
    let mut amp = 0.5;
    let mut sum = 0.0;
    let mut norm = 0.0;
    for o in 0..octaves.max(1) {
        let n = value_noise(p * freq, seed.wrapping_add(o as u64));
        sum += amp * (1.0 - (2.0 * n - 1.0).abs());
        norm += amp;
        freq *= 2.0;
        amp *= 0.5;
    }
    let ridge = sum / norm;
    // Sharpen, then fade out towards the cube faces.
    let core = ((ridge - 0.55) / 0.45).clamp(0.0, 1.0);
    let edge = [p.x, p.y, p.z]
        .iter()
        .map(|&c| (c.min(1.0 - c) * 10.0).clamp(0.0, 1.0))
        .product::<f64>();
    (core * core * edge).clamp(0.0, 1.0)
}
