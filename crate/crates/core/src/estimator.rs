//! KNN radiance estimate and the logarithmic target encoding.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::math::{Rgb, Vec3};
use crate::phase::hg_eval;
use crate::photon::Photon;
use crate::photon_map::{KnnQuery, KnnScratch, Neighbor, PhotonMap};
use crate::{Error, Result};

/// Below this farthest-neighbor distance the sphere volume is treated as
/// degenerate and the estimate is zero.
pub const MIN_RADIUS: f64 = 1e-6;

/// Sum of phase-weighted photon powers over the volume of the sphere that
/// encloses them. `neighbors` must be sorted by ascending distance.
pub fn estimate_radiance(neighbors: &[(Photon, f64)], omega: Vec3, g: f64) -> Rgb {
    let Some(&(_, r)) = neighbors.last() else {
        return Rgb::BLACK;
    };
    if r < MIN_RADIUS {
        return Rgb::BLACK;
    }
    let mut sum = Rgb::BLACK;
    for (photon, _) in neighbors {
        sum += photon.power() * hg_eval(g, omega.dot(photon.direction()));
    }
    sum / (4.0 / 3.0 * PI * r * r * r)
}

impl PhotonMap {
    /// KNN query plus estimate without materializing photon copies.
    pub fn radiance(
        &self,
        q: &KnnQuery,
        omega: Vec3,
        scratch: &mut KnnScratch,
        neighbors: &mut Vec<Neighbor>,
    ) -> Rgb {
        self.knn_into(q, scratch, neighbors);
        let Some(last) = neighbors.last() else {
            return Rgb::BLACK;
        };
        let r = last.distance;
        if r < MIN_RADIUS {
            return Rgb::BLACK;
        }
        let g = self.phase_set().get(q.phase);
        let mut sum = Rgb::BLACK;
        for n in neighbors.iter() {
            let p = self.photon(n.id);
            sum += p.power() * hg_eval(g, omega.dot(p.direction()));
        }
        sum / (4.0 / 3.0 * PI * r * r * r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncodingConfig {
    /// Number of decades of radiance below 1 that the encoding resolves.
    pub psi: u32,
}

impl Default for EncodingConfig {
    fn default() -> Self {
        EncodingConfig { psi: 5 }
    }
}

impl EncodingConfig {
    pub fn new(psi: u32) -> Result<Self> {
        let cfg = EncodingConfig { psi };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.psi == 0 {
            return Err(Error::config("psi must be positive"));
        }
        Ok(())
    }

    /// Values outside 4..=6 work but were not found useful in practice.
    pub fn is_recommended(&self) -> bool {
        (4..=6).contains(&self.psi)
    }

    fn threshold(&self) -> f64 {
        10f64.powi(-(self.psi as i32))
    }
}

/// Per-channel `-log10(L) / psi`, 1 below the precision threshold and 0 for
/// `L >= 1`. The result always lies in [0, 1].
pub fn encode_log(l: Rgb, cfg: &EncodingConfig) -> Result<Rgb> {
    if !l.is_finite() || l.0.iter().any(|&c| c < 0.0) {
        return Err(Error::input(format!("cannot encode radiance {:?}", l.0)));
    }
    Ok(encode_unchecked(l, cfg))
}

#[inline]
pub(crate) fn encode_unchecked(l: Rgb, cfg: &EncodingConfig) -> Rgb {
    let psi = cfg.psi as f64;
    let threshold = cfg.threshold();
    l.map(|c| {
        if c >= 1.0 {
            0.0
        } else if c > threshold {
            -c.log10() / psi
        } else {
            1.0
        }
    })
}

/// Inverse of [`encode_log`]: `10^(-L' psi)` with `L'` clamped to [0, 1].
pub fn decode_log(lp: Rgb, cfg: &EncodingConfig) -> Rgb {
    let psi = cfg.psi as f64;
    lp.map(|c| 10f64.powf(-c.clamp(0.0, 1.0) * psi))
}

/// Number of channels that [`encode_log`] clamps because they exceed 1.
pub fn clamped_channels(l: Rgb) -> usize {
    l.0.iter().filter(|&&c| c > 1.0).count()
}
