//! Multi-phase photon tracing.
//!
//! Photons leave point lights, random-walk through the medium by delta
//! tracking, and are tagged with a phase coefficient drawn from a small
//! discrete set. Every interaction after the first deposits a record, so the
//! resulting map holds only indirect light.
//!
//! Deposited power is the photon's share of the emitted flux
//! (`intensity * cone solid angle / photons emitted for that light and
//! phase`), times the path throughput, divided by the extinction at the
//! deposit. The last factor turns collision density into a radiance-scale
//! quantity, so a KNN estimate over these records is directly comparable to
//! the renderer's direct lighting.

use std::f64::consts::PI;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::math::{Aabb, Ray, Rgb, Vec3};
use crate::phase::hg_sample;
use crate::rng::{self, uniform, Rng};
use crate::volume::Medium;
use crate::{Error, Result};

/// A deposited photon, stored exactly as it is laid out on disk.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Photon {
    pub position: [f32; 3],
    /// Travel direction after the scattering event that deposited it.
    pub direction: [f32; 3],
    pub power: [f32; 3],
    /// Index into the map's phase set.
    pub phase: u8,
}

impl Photon {
    pub fn position(&self) -> Vec3 {
        Vec3::from_f32(self.position)
    }

    pub fn direction(&self) -> Vec3 {
        Vec3::from_f32(self.direction)
    }

    pub fn power(&self) -> Rgb {
        Rgb::from_f32(self.power)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LightSource {
    pub position: Vec3,
    /// Radiant intensity per rgb channel.
    pub intensity: Rgb,
}

impl LightSource {
    pub fn validate(&self) -> Result<()> {
        if !self.position.is_finite() {
            return Err(Error::config("light position must be finite"));
        }
        if !self.intensity.is_finite() || self.intensity.0.iter().any(|&c| c < 0.0) {
            return Err(Error::config("light intensity must be finite and >= 0"));
        }
        Ok(())
    }
}

/// The discrete set of phase coefficients a map is traced with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct PhaseSet(Vec<f64>);

impl PhaseSet {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::config("phase set must not be empty"));
        }
        if values.len() > u8::MAX as usize {
            return Err(Error::config("phase set has more than 255 entries"));
        }
        for (i, g) in values.iter().enumerate() {
            if !(-1.0..=1.0).contains(g) {
                return Err(Error::config(format!(
                    "phase coefficient {g} outside [-1, 1]"
                )));
            }
            if values[..i].contains(g) {
                return Err(Error::config(format!("phase coefficient {g} listed twice")));
            }
        }
        Ok(PhaseSet(values))
    }

    /// `{-0.75, 0, 0.75}`.
    pub fn standard() -> Self {
        PhaseSet(vec![-0.75, 0.0, 0.75])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, tag: u8) -> f64 {
        self.0[tag as usize]
    }

    /// Exact (bitwise) lookup of a coefficient's tag.
    pub fn index_of(&self, g: f64) -> Option<u8> {
        self.0
            .iter()
            .position(|v| v.to_bits() == g.to_bits())
            .map(|i| i as u8)
    }
}

impl TryFrom<Vec<f64>> for PhaseSet {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        PhaseSet::new(v)
    }
}

impl From<PhaseSet> for Vec<f64> {
    fn from(p: PhaseSet) -> Vec<f64> {
        p.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RussianRoulette {
    /// Roulette applies once a path has had this many interactions.
    pub start_bounce: u32,
    pub min_survival: f64,
    pub max_survival: f64,
}

impl Default for RussianRoulette {
    fn default() -> Self {
        RussianRoulette {
            start_bounce: 3,
            min_survival: 0.05,
            max_survival: 0.95,
        }
    }
}

impl RussianRoulette {
    /// Survival probability for a path with the given throughput.
    pub fn survival(&self, throughput: Rgb) -> f64 {
        throughput
            .max_channel()
            .clamp(self.min_survival, self.max_survival)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TraceConfig {
    pub n_total: usize,
    pub phase_set: PhaseSet,
    pub max_bounces: u32,
    pub roulette: RussianRoulette,
    pub seed: u64,
}

impl Default for TraceConfig {
    fn default() -> Self {
        TraceConfig {
            n_total: 200_000,
            phase_set: PhaseSet::standard(),
            max_bounces: 16,
            roulette: RussianRoulette::default(),
            seed: 0,
        }
    }
}

impl TraceConfig {
    pub fn validate(&self) -> Result<()> {
        PhaseSet::new(self.phase_set.values().to_vec())?;
        if self.max_bounces == 0 {
            return Err(Error::config("max_bounces must be positive"));
        }
        let rr = &self.roulette;
        if !(0.0 < rr.min_survival && rr.min_survival <= rr.max_survival && rr.max_survival <= 1.0)
        {
            return Err(Error::config(
                "roulette survival bounds must satisfy 0 < min <= max <= 1",
            ));
        }
        Ok(())
    }
}

/// Cone around the direction from a light to the world box's bounding sphere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmissionCone {
    pub axis: Vec3,
    pub cos_max: f64,
}

impl EmissionCone {
    pub fn toward(light: Vec3, world_box: &Aabb) -> Self {
        let to_center = world_box.center() - light;
        let d = to_center.length();
        let r = world_box.bounding_radius();
        if d <= r {
            // Inside the bounding sphere: the whole sphere of directions.
            return EmissionCone {
                axis: Vec3::new(0.0, 0.0, 1.0),
                cos_max: -1.0,
            };
        }
        EmissionCone {
            axis: to_center / d,
            cos_max: (1.0 - (r / d) * (r / d)).sqrt(),
        }
    }

    pub fn half_angle(&self) -> f64 {
        self.cos_max.acos()
    }

    pub fn solid_angle(&self) -> f64 {
        2.0 * PI * (1.0 - self.cos_max)
    }

    pub fn sample(&self, u1: f64, u2: f64) -> Vec3 {
        let cos_theta = 1.0 - u1 * (1.0 - self.cos_max);
        let sin_theta = (1.0 - cos_theta * cos_theta).max(0.0).sqrt();
        let phi = 2.0 * PI * u2;
        let (t, s) = self.axis.orthonormal_basis();
        let d = t * (sin_theta * phi.cos()) + s * (sin_theta * phi.sin()) + self.axis * cos_theta;
        d / d.length()
    }
}

/// Uniform direction over the cone subtended by the world box's bounding
/// sphere (or the full sphere when the light sits inside it).
pub fn emit_direction(light: &LightSource, world_box: &Aabb, rng: &mut Rng) -> Vec3 {
    EmissionCone::toward(light.position, world_box).sample(uniform(rng), uniform(rng))
}

/// Output of a trace: the deposits plus bookkeeping about what was emitted.
#[derive(Debug, Clone, PartialEq)]
pub struct PhotonTrace {
    pub photons: Vec<Photon>,
    pub phase_set: PhaseSet,
    /// Photons emitted per `[light][phase]`.
    pub emitted: Vec<Vec<usize>>,
}

impl PhotonTrace {
    pub fn emitted_per_phase(&self) -> Vec<usize> {
        (0..self.phase_set.len())
            .map(|p| self.emitted.iter().map(|per_light| per_light[p]).sum())
            .collect()
    }
}

const TRACE_CHUNK: usize = 2048;

/// Photons in group `group` when `n_total` photons are dealt round-robin over
/// `n_groups` groups.
fn group_count(n_total: usize, n_groups: usize, group: usize) -> usize {
    n_total / n_groups + usize::from(group < n_total % n_groups)
}

pub fn trace_photons(
    medium: &Medium,
    lights: &[LightSource],
    cfg: &TraceConfig,
) -> Result<PhotonTrace> {
    cfg.validate()?;
    if lights.is_empty() {
        return Err(Error::config("photon tracing needs at least one light"));
    }
    for light in lights {
        light.validate()?;
    }
    let n_phases = cfg.phase_set.len();
    let n_groups = lights.len() * n_phases;
    let world_box = medium.world_box();

    // Per-group emitted power share.
    let shares: Vec<Rgb> = (0..n_groups)
        .map(|group| {
            let light = &lights[group / n_phases];
            let count = group_count(cfg.n_total, n_groups, group);
            let cone = EmissionCone::toward(light.position, &world_box);
            if count == 0 {
                Rgb::BLACK
            } else {
                light.intensity * (cone.solid_angle() / count as f64)
            }
        })
        .collect();

    let seed = rng::derive_seed(cfg.seed, "trace");
    let chunks: Vec<Vec<Photon>> = (0..cfg.n_total.div_ceil(TRACE_CHUNK))
        .into_par_iter()
        .map(|chunk| {
            let start = chunk * TRACE_CHUNK;
            let end = (start + TRACE_CHUNK).min(cfg.n_total);
            let mut out = Vec::new();
            for index in start..end {
                let group = index % n_groups;
                let light = &lights[group / n_phases];
                let tag = (group % n_phases) as u8;
                let mut rng = rng::stream(seed, index as u64);
                trace_one(
                    medium,
                    light,
                    shares[group],
                    &cfg.phase_set,
                    tag,
                    cfg,
                    &mut rng,
                    &mut out,
                );
            }
            out
        })
        .collect();

    let emitted = (0..lights.len())
        .map(|l| {
            (0..n_phases)
                .map(|p| group_count(cfg.n_total, n_groups, l * n_phases + p))
                .collect()
        })
        .collect();

    Ok(PhotonTrace {
        photons: chunks.concat(),
        phase_set: cfg.phase_set.clone(),
        emitted,
    })
}

#[allow(clippy::too_many_arguments)]
fn trace_one(
    medium: &Medium,
    light: &LightSource,
    share: Rgb,
    phases: &PhaseSet,
    tag: u8,
    cfg: &TraceConfig,
    rng: &mut Rng,
    out: &mut Vec<Photon>,
) {
    let g = phases.get(tag);
    let direction = emit_direction(light, &medium.world_box(), rng);
    let mut ray = Ray::new(light.position, direction);
    let mut throughput = Rgb::splat(1.0);
    let mut bounces = 0;
    while bounces < cfg.max_bounces {
        let Some(hit) = medium.delta_track_unchecked(&ray, rng) else {
            break;
        };
        let scattered = hg_sample(g, ray.direction, uniform(rng), uniform(rng));
        throughput *= hit.albedo();
        if bounces >= 1 {
            let extinction = medium.density_scale() * hit.rgba[3];
            out.push(Photon {
                position: hit.position.to_f32(),
                direction: scattered.to_f32(),
                power: (share * throughput / extinction).to_f32(),
                phase: tag,
            });
        }
        bounces += 1;
        if throughput.max_channel() <= 0.0 {
            break;
        }
        if bounces >= cfg.roulette.start_bounce {
            let q = cfg.roulette.survival(throughput);
            if uniform(rng) >= q {
                break;
            }
            throughput = throughput / q;
        }
        ray = Ray::new(hit.position, scattered);
    }
}

const MAGIC: &[u8; 8] = b"PFPHOTON";
const VERSION: u32 = 1;
const RECORD_BYTES: usize = 37;

/// Writes a photon map file.
///
/// Layout (little-endian): magic `PFPHOTON`, version `u32`, photon count
/// `u64`, phase count `u32`, the phase values as `f64`, then one 37-byte
/// record per photon: position `3 x f32`, direction `3 x f32`, power
/// `3 x f32`, phase index `u8`.
pub fn write_photons(path: &Path, photons: &[Photon], phases: &PhaseSet) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut write = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
    write(MAGIC)?;
    write(&VERSION.to_le_bytes())?;
    write(&(photons.len() as u64).to_le_bytes())?;
    write(&(phases.len() as u32).to_le_bytes())?;
    for g in phases.values() {
        write(&g.to_le_bytes())?;
    }
    let mut record = [0u8; RECORD_BYTES];
    for p in photons {
        let fields = p.position.iter().chain(&p.direction).chain(&p.power);
        for (i, v) in fields.enumerate() {
            record[i * 4..i * 4 + 4].copy_from_slice(&v.to_le_bytes());
        }
        record[36] = p.phase;
        write(&record)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_photons(path: &Path) -> Result<(Vec<Photon>, PhaseSet)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |detail: &str| Error::format("photon map", format!("{}: {detail}", path.display()));
    let mut cursor = Cursor {
        bytes: &bytes,
        pos: 0,
    };
    if cursor.take(8).ok_or_else(|| bad("truncated header"))? != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = cursor.u32().ok_or_else(|| bad("truncated header"))?;
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let count = cursor.u64().ok_or_else(|| bad("truncated header"))? as usize;
    let n_phases = cursor.u32().ok_or_else(|| bad("truncated header"))? as usize;
    let mut values = Vec::with_capacity(n_phases);
    for _ in 0..n_phases {
        values.push(cursor.f64().ok_or_else(|| bad("truncated phase table"))?);
    }
    let phases = PhaseSet::new(values)?;
    let body = &bytes[cursor.pos..];
    if body.len() != count * RECORD_BYTES {
        return Err(bad(&format!(
            "expected {count} records, found {} bytes",
            body.len()
        )));
    }
    let f = |r: &[u8], i: usize| {
        f32::from_le_bytes([r[i * 4], r[i * 4 + 1], r[i * 4 + 2], r[i * 4 + 3]])
    };
    let photons = body
        .chunks_exact(RECORD_BYTES)
        .map(|r| {
            let phase = r[36];
            if phase as usize >= n_phases {
                return Err(bad(&format!("phase index {phase} out of range")));
            }
            Ok(Photon {
                position: [f(r, 0), f(r, 1), f(r, 2)],
                direction: [f(r, 3), f(r, 4), f(r, 5)],
                power: [f(r, 6), f(r, 7), f(r, 8)],
                phase,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((photons, phases))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.bytes.get(self.pos..self.pos + n)?;
        self.pos += n;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8)
            .map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn f64(&mut self) -> Option<f64> {
        self.take(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
    }
}
