//! Emission-absorption ray marcher with fixed-step shadows toward the first
//! light. Deterministic: samples sit at step midpoints.

use super::{
    render_tiles, Camera, FrameBuffer, RenderSettings, RenderStats, Scene, Tile, TileOutput,
};
use crate::math::{Rgb, Vec3};
use crate::volume::Medium;
use crate::Result;

/// Primary marching stops once the remaining transmittance drops below this.
const MIN_TRANSMITTANCE: f64 = 1e-6;

pub fn render_ray_march(
    scene: &Scene,
    camera: &Camera,
    settings: &RenderSettings,
) -> Result<FrameBuffer> {
    settings.validate()?;
    camera.validate()?;
    Ok(render_tiles(camera, |t| {
        render_tile(scene, camera, settings.step_size, t)
    }))
}

/// Fixed-step transmittance from `x` toward `light`, starting one step away
/// from `x` so a sample does not shadow itself.
fn shadow(medium: &Medium, x: Vec3, light: Vec3, h: f64) -> f64 {
    let to_light = light - x;
    let dist = to_light.length();
    if dist == 0.0 {
        return 1.0;
    }
    let dir = to_light / dist;
    let mut tau = 0.0;
    let mut s = h;
    while s < dist {
        let p = x + dir * s;
        if !medium.world_box().contains(p) {
            break;
        }
        tau += medium.extinction(p) * h;
        s += h;
    }
    (-tau).exp()
}

fn render_tile(scene: &Scene, camera: &Camera, h: f64, tile: &Tile) -> TileOutput {
    let n_pixels = tile.w * tile.h;
    let medium = &scene.medium;
    let light = scene.lights.first().map(|l| l.position);
    let mut sum = vec![Rgb::BLACK; n_pixels];
    for (p, out) in sum.iter_mut().enumerate() {
        let (px, py) = (tile.x0 + p % tile.w, tile.y0 + p / tile.w);
        let ray = camera.ray(px, py, 0.5, 0.5);
        let mut color = Rgb::BLACK;
        let mut tr = 1.0;
        if let Some((t0, t1)) = medium.world_box().clip(&ray) {
            let mut t = t0 + 0.5 * h;
            while t < t1 && tr > MIN_TRANSMITTANCE {
                let x = ray.at(t);
                let (_, rgba) = medium.classify(x);
                let alpha = 1.0 - (-medium.density_scale() * rgba[3] * h).exp();
                if alpha > 0.0 {
                    let vis = light.map_or(1.0, |l| shadow(medium, x, l, h));
                    color += Rgb::new(rgba[0], rgba[1], rgba[2]) * (tr * alpha * vis);
                    tr *= 1.0 - alpha;
                }
                t += h;
            }
        }
        *out = color + scene.background * tr;
    }
    TileOutput {
        x0: tile.x0,
        y0: tile.y0,
        w: tile.w,
        sum,
        samples: vec![1; n_pixels],
        stats: RenderStats::default(),
    }
}
