//! Multiresolution hash encoding.
//!
//! Level `l` has resolution `floor(base * growth^l)` cells per axis and
//! `res + 1` vertices. Its table holds `min(2^table_size_log2, (res+1)^d)`
//! entries: coarse levels that fit are indexed densely, finer ones through
//! the spatial hash `x*1 ^ y*2654435761 ^ z*805459861` (wrapping `u32`)
//! modulo the table size.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const PRIMES: [u32; 3] = [1, 2_654_435_761, 805_459_861];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HashGridConfig {
    pub levels: u32,
    pub features_per_level: u32,
    pub base_resolution: u32,
    pub growth_factor: f64,
    pub table_size_log2: u32,
}

impl Default for HashGridConfig {
    fn default() -> Self {
        HashGridConfig {
            levels: 8,
            features_per_level: 4,
            base_resolution: 4,
            growth_factor: 2.0,
            table_size_log2: 15,
        }
    }
}

impl HashGridConfig {
    /// 16 levels x 8 features, table 2^19, base 16.
    pub fn full_scale() -> Self {
        HashGridConfig {
            levels: 16,
            features_per_level: 8,
            base_resolution: 16,
            growth_factor: 2.0,
            table_size_log2: 19,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.features_per_level == 0 || self.base_resolution == 0 {
            return Err(Error::config("hash grid counts must be positive"));
        }
        if !(self.growth_factor > 1.0 && self.growth_factor.is_finite()) {
            return Err(Error::config(format!(
                "growth factor {} must be > 1",
                self.growth_factor
            )));
        }
        if !(1..=30).contains(&self.table_size_log2) {
            return Err(Error::config("table_size_log2 must be in 1..=30"));
        }
        Ok(())
    }

    pub fn output_dim(&self) -> usize {
        (self.levels * self.features_per_level) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Level {
    pub resolution: u32,
    /// Entries in this level's table.
    pub size: usize,
    /// First entry of this level within the grid's tables.
    pub offset: usize,
    pub dense: bool,
}

/// Geometry of one hash grid; the feature tables themselves live in the
/// field's flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct HashGrid {
    pub config: HashGridConfig,
    pub dim: usize,
    pub levels: Vec<Level>,
    pub entries: usize,
}

impl HashGrid {
    pub fn new(config: HashGridConfig, dim: usize) -> Result<Self> {
        config.validate()?;
        assert!(dim == 2 || dim == 3);
        let table = 1usize << config.table_size_log2;
        let mut levels = Vec::with_capacity(config.levels as usize);
        let mut offset = 0;
        for l in 0..config.levels {
            let res = (config.base_resolution as f64 * config.growth_factor.powi(l as i32)).floor();
            if res > u32::MAX as f64 / 2.0 {
                return Err(Error::config("hash grid resolution overflows"));
            }
            let res = res as u32;
            let dense_size = (res as u128 + 1).pow(dim as u32);
            let (size, dense) = if dense_size <= table as u128 {
                (dense_size as usize, true)
            } else {
                (table, false)
            };
            levels.push(Level {
                resolution: res,
                size,
                offset,
                dense,
            });
            offset += size;
        }
        Ok(HashGrid {
            config,
            dim,
            levels,
            entries: offset,
        })
    }

    pub fn features(&self) -> usize {
        self.config.features_per_level as usize
    }

    /// Number of trainable scalars.
    pub fn param_count(&self) -> usize {
        self.entries * self.features()
    }

    pub fn corners_per_level(&self) -> usize {
        1 << self.dim
    }

    /// Calls `visit(level, entry, weight)` for every interpolation corner of
    /// `x` (coordinates in [0,1]); `entry` indexes the grid's tables.
    #[inline]
    pub fn for_each_corner(&self, x: &[f64], mut visit: impl FnMut(usize, usize, f64)) {
        let d = self.dim;
        for (l, level) in self.levels.iter().enumerate() {
            let res = level.resolution;
            let mut cell = [0u32; 3];
            let mut frac = [0.0f64; 3];
            for a in 0..d {
                let s = x[a].clamp(0.0, 1.0) * res as f64;
                let c = (s.floor() as u32).min(res - 1);
                cell[a] = c;
                frac[a] = s - c as f64;
            }
            for corner in 0..(1usize << d) {
                let mut w = 1.0;
                let mut v = [0u32; 3];
                for a in 0..d {
                    let bit = (corner >> a) & 1;
                    v[a] = cell[a] + bit as u32;
                    w *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
                }
                let idx = if level.dense {
                    let stride = res as usize + 1;
                    let mut i = 0usize;
                    for a in (0..d).rev() {
                        i = i * stride + v[a] as usize;
                    }
                    i
                } else {
                    let mut h = 0u32;
                    for a in 0..d {
                        h ^= v[a].wrapping_mul(PRIMES[a]);
                    }
                    h as usize & (level.size - 1)
                };
                visit(l, level.offset + idx, w);
            }
        }
    }

    /// Interpolated features of `x`, level-major.
    pub fn encode(&self, table: &[f64], x: &[f64], out: &mut [f64]) {
        let f = self.features();
        out[..self.config.levels as usize * f].fill(0.0);
        self.for_each_corner(x, |l, entry, w| {
            let src = &table[entry * f..entry * f + f];
            for (o, s) in out[l * f..l * f + f].iter_mut().zip(src) {
                *o += w * s;
            }
        });
    }
}
