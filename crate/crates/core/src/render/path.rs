//! Reference volumetric path tracer with next-event estimation at every
//! interaction. Paths advance one bounce per pass over a compacted buffer.

use std::time::Instant;

use super::{
    render_tiles, Camera, FrameBuffer, RenderSettings, RenderStats, Scene, Tile, TileOutput,
};
use crate::math::{Ray, Rgb};
use crate::phase::hg_sample;
use crate::photon::RussianRoulette;
use crate::rng::{self, uniform};
use crate::Result;

struct PathState {
    pixel: usize,
    ray: Ray,
    throughput: Rgb,
}

pub fn render_path_traced(
    scene: &Scene,
    camera: &Camera,
    settings: &RenderSettings,
) -> Result<FrameBuffer> {
    settings.validate()?;
    camera.validate()?;
    scene.require_lights()?;
    let seed = rng::derive_seed(settings.seed, "render-path");
    let roulette = RussianRoulette::default();
    Ok(render_tiles(camera, |t| {
        render_tile(scene, camera, settings, &roulette, seed, t)
    }))
}

fn render_tile(
    scene: &Scene,
    camera: &Camera,
    settings: &RenderSettings,
    roulette: &RussianRoulette,
    seed: u64,
    tile: &Tile,
) -> TileOutput {
    let mut rng = rng::stream(seed, tile.index as u64);
    let mut stats = RenderStats::default();
    let n_pixels = tile.w * tile.h;
    let g = settings.g;

    let t = Instant::now();
    let mut paths = Vec::with_capacity(n_pixels * settings.spp);
    for p in 0..n_pixels {
        let (px, py) = (tile.x0 + p % tile.w, tile.y0 + p / tile.w);
        for _ in 0..settings.spp {
            let (jx, jy) = (uniform(&mut rng), uniform(&mut rng));
            paths.push(PathState {
                pixel: p,
                ray: camera.ray(px, py, jx, jy),
                throughput: Rgb::splat(1.0),
            });
        }
    }
    stats.ray_generation = t.elapsed();

    let mut sum = vec![Rgb::BLACK; n_pixels];
    for bounce in 1..=settings.max_bounces {
        if paths.is_empty() {
            break;
        }
        let t = Instant::now();
        for path in paths.iter_mut() {
            let Some(hit) = scene.medium.delta_track_unchecked(&path.ray, &mut rng) else {
                if bounce == 1 {
                    sum[path.pixel] += scene.background;
                }
                path.throughput = Rgb::BLACK;
                continue;
            };
            if bounce == 1 {
                stats.interactions += 1;
            }
            let d = path.ray.direction;
            path.throughput *= hit.albedo();
            sum[path.pixel] += path.throughput * scene.direct(hit.position, d, g, &mut rng);
            if bounce >= roulette.start_bounce {
                let q = roulette.survival(path.throughput);
                if uniform(&mut rng) >= q {
                    path.throughput = Rgb::BLACK;
                    continue;
                }
                path.throughput = path.throughput / q;
            }
            path.ray = Ray::new(
                hit.position,
                hg_sample(g, d, uniform(&mut rng), uniform(&mut rng)),
            );
        }
        let elapsed = t.elapsed();
        let t = Instant::now();
        paths.retain(|p| p.throughput.max_channel() > 0.0);
        stats.compaction += t.elapsed();
        if bounce == 1 {
            stats.direct += elapsed;
        } else {
            stats.indirect += elapsed;
        }
    }

    TileOutput {
        x0: tile.x0,
        y0: tile.y0,
        w: tile.w,
        sum,
        samples: vec![settings.spp as u32; n_pixels],
        stats,
    }
}
