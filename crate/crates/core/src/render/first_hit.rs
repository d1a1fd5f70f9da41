//! Single-query backends: delta-tracked first interactions, NEE for the
//! direct term, and one indirect lookup per interaction from either the
//! trained field or the photon map.

use std::time::Instant;

use super::{
    render_tiles, sample_value, Camera, RenderSettings, RenderStats, Scene, Tile, TileOutput,
};
use crate::estimator::EncodingConfig;
use crate::field::{FieldQuery, PhotonField};
use crate::math::{Rgb, Vec3};
use crate::photon_map::{KnnQuery, KnnScratch, PhotonMap};
use crate::rng::{self, uniform};
use crate::{Error, Result};

enum Indirect<'a> {
    Field(&'a PhotonField, EncodingConfig),
    Map(&'a PhotonMap, u8),
    Zero,
}

/// A compacted interaction.
struct Sample {
    pixel: usize,
    position: Vec3,
    direction: Vec3,
    albedo: Rgb,
    sigma_s: f64,
}

pub fn render_neural(
    scene: &Scene,
    field: &PhotonField,
    cfg: &EncodingConfig,
    camera: &Camera,
    settings: &RenderSettings,
) -> Result<super::FrameBuffer> {
    cfg.validate()?;
    if field.meta.encoding != *cfg {
        return Err(Error::config(format!(
            "field was trained with psi = {}, render requested psi = {}",
            field.meta.encoding.psi, cfg.psi
        )));
    }
    if field.meta.steps_trained == 0 {
        return Err(Error::config("field has not been trained"));
    }
    render(scene, camera, settings, Indirect::Field(field, *cfg))
}

pub fn render_photon_map(
    scene: &Scene,
    map: &PhotonMap,
    camera: &Camera,
    settings: &RenderSettings,
) -> Result<super::FrameBuffer> {
    let Some(tag) = map.phase_set().index_of(settings.g) else {
        return Err(Error::config(format!(
            "g = {} is not in the map's phase set {:?}",
            settings.g,
            map.phase_set().values()
        )));
    };
    render(scene, camera, settings, Indirect::Map(map, tag))
}

/// Same first interactions and direct light as the other single-query
/// backends with the indirect term set to zero.
pub fn render_direct(
    scene: &Scene,
    camera: &Camera,
    settings: &RenderSettings,
) -> Result<super::FrameBuffer> {
    render(scene, camera, settings, Indirect::Zero)
}

fn render(
    scene: &Scene,
    camera: &Camera,
    settings: &RenderSettings,
    indirect: Indirect,
) -> Result<super::FrameBuffer> {
    settings.validate()?;
    camera.validate()?;
    scene.require_lights()?;
    let seed = rng::derive_seed(settings.seed, "render");
    Ok(render_tiles(camera, |t| {
        render_tile(scene, camera, settings, &indirect, seed, t)
    }))
}

fn render_tile(
    scene: &Scene,
    camera: &Camera,
    settings: &RenderSettings,
    indirect: &Indirect,
    seed: u64,
    tile: &Tile,
) -> TileOutput {
    let mut rng = rng::stream(seed, tile.index as u64);
    let mut stats = RenderStats::default();
    let n_pixels = tile.w * tile.h;
    let spp = settings.spp;

    let t = Instant::now();
    let mut rays = Vec::with_capacity(n_pixels * spp);
    for p in 0..n_pixels {
        let (px, py) = (tile.x0 + p % tile.w, tile.y0 + p / tile.w);
        for _ in 0..spp {
            let (jx, jy) = (uniform(&mut rng), uniform(&mut rng));
            rays.push(camera.ray(px, py, jx, jy));
        }
    }
    stats.ray_generation = t.elapsed();

    let t = Instant::now();
    let hits: Vec<_> = rays
        .iter()
        .map(|ray| scene.medium.delta_track_unchecked(ray, &mut rng))
        .collect();
    stats.volume_sampling = t.elapsed();

    let t = Instant::now();
    let mut missed = vec![0u32; n_pixels];
    let mut samples = Vec::with_capacity(hits.len());
    for (i, hit) in hits.iter().enumerate() {
        match hit {
            Some(h) => samples.push(Sample {
                pixel: i / spp,
                position: h.position,
                direction: rays[i].direction,
                albedo: h.albedo(),
                sigma_s: h.scattering_probability(),
            }),
            None => missed[i / spp] += 1,
        }
    }
    stats.compaction = t.elapsed();
    stats.interactions = samples.len();

    let t = Instant::now();
    let l_i: Vec<Rgb> = match *indirect {
        Indirect::Field(field, cfg) => {
            let queries: Vec<FieldQuery> = samples
                .iter()
                .map(|s| FieldQuery::new(s.position, -s.direction, settings.g))
                .collect();
            field.infer_batch(&queries, &cfg)
        }
        Indirect::Map(map, tag) => {
            let mut scratch = KnnScratch::default();
            let mut neighbors = Vec::new();
            samples
                .iter()
                .map(|s| {
                    let q = KnnQuery {
                        position: s.position,
                        phase: tag,
                        k: settings.k_neighbors,
                        r_max: settings.r_max,
                    };
                    map.radiance(&q, -s.direction, &mut scratch, &mut neighbors)
                })
                .collect()
        }
        Indirect::Zero => vec![Rgb::BLACK; samples.len()],
    };
    stats.indirect = t.elapsed();

    let t = Instant::now();
    let l_d: Vec<Rgb> = samples
        .iter()
        .map(|s| s.albedo * scene.direct(s.position, s.direction, settings.g, &mut rng))
        .collect();
    stats.direct = t.elapsed();

    // Point lights cannot be hit by phase sampling, so the balance heuristic
    // gives NEE full weight; the indirect term covers disjoint paths.
    let t = Instant::now();
    let mut sum: Vec<Rgb> = missed
        .iter()
        .map(|&m| scene.background * m as f64)
        .collect();
    for (k, s) in samples.iter().enumerate() {
        sum[s.pixel] += sample_value(1.0, l_d[k], 1.0, s.sigma_s, l_i[k]);
    }
    stats.composition = t.elapsed();

    TileOutput {
        x0: tile.x0,
        y0: tile.y0,
        w: tile.w,
        sum,
        samples: vec![spp as u32; n_pixels],
        stats,
    }
}
