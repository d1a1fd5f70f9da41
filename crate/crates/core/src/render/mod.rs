//! Render backends.
//!
//! All backends split the image into 8x8 tiles rendered in parallel, each
//! with its own random stream `(seed, tile)`, so images do not depend on the
//! thread count. Within a tile the work is organized as passes over flat
//! sample buffers.

mod camera;
mod first_hit;
mod march;
mod path;

use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::imaging::Image;
use crate::math::{Rgb, Vec3};
use crate::phase::{hg_eval, PhaseCoefficient};
use crate::photon::LightSource;
use crate::rng::Rng;
use crate::volume::{Medium, TransferFunction, VolumeGrid};
use crate::{Error, Result};

pub use camera::Camera;
pub use first_hit::{render_direct, render_neural, render_photon_map};
pub use march::render_ray_march;
pub use path::render_path_traced;

pub const TILE: usize = 8;

#[derive(Debug, Clone)]
pub struct Scene {
    pub medium: Medium,
    pub lights: Vec<LightSource>,
    pub background: Rgb,
}

impl Scene {
    pub fn new(
        grid: VolumeGrid,
        tf: TransferFunction,
        lights: Vec<LightSource>,
        density_scale: f64,
        background: Rgb,
    ) -> Result<Self> {
        for l in &lights {
            l.validate()?;
        }
        if !(background.is_finite() && background.0.iter().all(|&c| c >= 0.0)) {
            return Err(Error::input("background radiance must be finite and >= 0"));
        }
        Ok(Scene {
            medium: Medium::new(grid, tf, density_scale)?,
            lights,
            background,
        })
    }

    fn require_lights(&self) -> Result<()> {
        if self.lights.is_empty() {
            return Err(Error::config("lit backends need at least one light"));
        }
        Ok(())
    }

    /// Single-scattered light from every light source at an interaction,
    /// without the albedo. `d` is the camera-side travel direction.
    fn direct(&self, x: Vec3, d: Vec3, g: f64, rng: &mut Rng) -> Rgb {
        let mut sum = Rgb::BLACK;
        for light in &self.lights {
            let to_x = x - light.position;
            let dist2 = to_x.length_squared();
            if dist2 == 0.0 {
                continue;
            }
            let w_light = to_x / dist2.sqrt();
            let tr = self.medium.ratio_transmittance(x, light.position, rng);
            if tr > 0.0 {
                sum += light.intensity * (hg_eval(g, w_light.dot(-d)) * tr / dist2);
            }
        }
        sum
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderSettings {
    pub spp: usize,
    /// Path length cap for the path tracer; the single-query backends ignore it.
    pub max_bounces: u32,
    /// Scene-level phase coefficient.
    pub g: f64,
    pub k_neighbors: usize,
    pub r_max: f64,
    /// Ray-marching step in world units.
    pub step_size: f64,
    pub seed: u64,
}

impl Default for RenderSettings {
    fn default() -> Self {
        RenderSettings {
            spp: 16,
            max_bounces: 16,
            g: 0.0,
            k_neighbors: 256,
            r_max: 0.1,
            step_size: 1.0 / 256.0,
            seed: 0,
        }
    }
}

impl RenderSettings {
    pub fn validate(&self) -> Result<()> {
        if self.spp == 0 {
            return Err(Error::input("spp must be positive"));
        }
        if self.max_bounces == 0 {
            return Err(Error::input("max_bounces must be positive"));
        }
        PhaseCoefficient::new(self.g)?;
        if self.k_neighbors == 0 || !(self.r_max > 0.0 && self.r_max.is_finite()) {
            return Err(Error::input("k_neighbors and r_max must be positive"));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::input("step_size must be positive"));
        }
        Ok(())
    }
}

/// Per-sample inputs of the composition stage for one pixel.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ComposeInputs {
    pub l_d: Vec<Rgb>,
    pub l_i: Vec<Rgb>,
    pub sigma_s: Vec<f64>,
    pub w_d: Vec<f64>,
    pub w_i: Vec<f64>,
    /// Samples that left the volume without interacting.
    pub missed: usize,
    pub background: Rgb,
    pub spp: usize,
}

impl ComposeInputs {
    pub fn validate(&self) -> Result<()> {
        let n = self.l_d.len();
        if [
            self.l_i.len(),
            self.sigma_s.len(),
            self.w_d.len(),
            self.w_i.len(),
        ]
        .iter()
        .any(|&m| m != n)
        {
            return Err(Error::input("composition buffers differ in length"));
        }
        if self.spp == 0 || n + self.missed != self.spp {
            return Err(Error::input(
                "interacting + missed samples must equal spp > 0",
            ));
        }
        let unit = |w: &f64| (0.0..=1.0).contains(w);
        if !self.w_d.iter().all(unit) || !self.w_i.iter().all(unit) {
            return Err(Error::input("MIS weights must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[inline]
fn sample_value(w_d: f64, l_d: Rgb, w_i: f64, sigma_s: f64, l_i: Rgb) -> Rgb {
    l_d * w_d + l_i * (w_i * sigma_s)
}

/// `(1/spp) * sum_k (w_d L_d + w_i sigma_s L_i)`, with missed samples
/// contributing the background.
pub fn compose(inputs: &ComposeInputs) -> Result<Rgb> {
    inputs.validate()?;
    let mut sum = inputs.background * inputs.missed as f64;
    for k in 0..inputs.l_d.len() {
        sum += sample_value(
            inputs.w_d[k],
            inputs.l_d[k],
            inputs.w_i[k],
            inputs.sigma_s[k],
            inputs.l_i[k],
        );
    }
    Ok(sum / inputs.spp as f64)
}

/// Summed per-tile time in each stage.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RenderStats {
    pub ray_generation: Duration,
    pub volume_sampling: Duration,
    pub compaction: Duration,
    /// Field inference, KNN estimation, or path continuation past the first
    /// interaction, depending on the backend.
    pub indirect: Duration,
    pub direct: Duration,
    pub composition: Duration,
    pub wall: Duration,
    pub interactions: usize,
}

impl RenderStats {
    fn add(&mut self, o: &RenderStats) {
        self.ray_generation += o.ray_generation;
        self.volume_sampling += o.volume_sampling;
        self.compaction += o.compaction;
        self.indirect += o.indirect;
        self.direct += o.direct;
        self.composition += o.composition;
        self.interactions += o.interactions;
    }
}

/// Accumulated radiance per pixel, row-major from the top-left.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameBuffer {
    pub width: usize,
    pub height: usize,
    pub sum: Vec<Rgb>,
    pub samples: Vec<u32>,
    pub stats: RenderStats,
}

impl FrameBuffer {
    pub fn new(width: usize, height: usize) -> Self {
        FrameBuffer {
            width,
            height,
            sum: vec![Rgb::BLACK; width * height],
            samples: vec![0; width * height],
            stats: RenderStats::default(),
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> Rgb {
        let i = y * self.width + x;
        match self.samples[i] {
            0 => Rgb::BLACK,
            n => self.sum[i] / n as f64,
        }
    }

    pub fn to_image(&self) -> Image {
        let mut img = Image::new(self.width, self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                img.set(x, y, self.pixel(x, y));
            }
        }
        img
    }
}

struct TileOutput {
    x0: usize,
    y0: usize,
    w: usize,
    sum: Vec<Rgb>,
    samples: Vec<u32>,
    stats: RenderStats,
}

#[derive(Debug, Clone, Copy)]
struct Tile {
    index: usize,
    x0: usize,
    y0: usize,
    w: usize,
    h: usize,
}

fn tiles(width: usize, height: usize) -> Vec<Tile> {
    let tx = width.div_ceil(TILE);
    let ty = height.div_ceil(TILE);
    (0..tx * ty)
        .map(|index| {
            let x0 = (index % tx) * TILE;
            let y0 = (index / tx) * TILE;
            Tile {
                index,
                x0,
                y0,
                w: TILE.min(width - x0),
                h: TILE.min(height - y0),
            }
        })
        .collect()
}

fn render_tiles<F>(camera: &Camera, f: F) -> FrameBuffer
where
    F: Fn(&Tile) -> TileOutput + Sync + Send,
{
    let start = std::time::Instant::now();
    let outputs: Vec<TileOutput> = tiles(camera.width, camera.height)
        .par_iter()
        .map(f)
        .collect();
    let mut fb = FrameBuffer::new(camera.width, camera.height);
    for t in outputs {
        for (i, (s, n)) in t.sum.iter().zip(&t.samples).enumerate() {
            let p = (t.y0 + i / t.w) * camera.width + t.x0 + i % t.w;
            fb.sum[p] = *s;
            fb.samples[p] = *n;
        }
        fb.stats.add(&t.stats);
    }
    fb.stats.wall = start.elapsed();
    fb
}
