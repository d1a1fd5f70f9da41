mod common;

use std::f64::consts::PI;

use common::{per_pixel_variance, tiny_config};
use photonfield::experiment::{run_trace, run_train};
use photonfield::render::render_direct;
use photonfield::volume::synth::Synthetic;
use photonfield::{
    mse, render_neural, render_path_traced, render_photon_map, render_ray_march, trace_photons,
    Camera, EncodingConfig, LightSource, PhaseSet, PhotonMap, RenderSettings, Rgb, Scene,
    TraceConfig, TransferFunction, Vec3, VolumeGrid,
};

fn light(p: Vec3, i: f64) -> LightSource {
    LightSource {
        position: p,
        intensity: Rgb::splat(i),
    }
}

fn cam(n: usize) -> Camera {
    Camera {
        width: n,
        height: n,
        ..Default::default()
    }
}

fn homogeneous(rgba: [f64; 4], density: f64, lights: Vec<LightSource>, bg: Rgb) -> Scene {
    let grid = VolumeGrid::constant([4, 4, 4], 1.0).unwrap();
    Scene::new(
        grid,
        TransferFunction::constant(rgba).unwrap(),
        lights,
        density,
        bg,
    )
    .unwrap()
}

#[test]
fn transparent_volume_renders_background_on_every_backend() {
    let bg = Rgb::new(0.2, 0.4, 0.6);
    let scene = homogeneous(
        [1.0, 1.0, 1.0, 0.0],
        100.0,
        vec![light(Vec3::new(0.5, 0.5, 2.0), 1.0)],
        bg,
    );
    let cfg = tiny_config(1);
    let lit = cfg.scene().unwrap();
    let trace = run_trace(&cfg, &lit).unwrap();
    let map = PhotonMap::build(trace.photons, trace.phase_set);
    let (field, _, _) = run_train(&cfg, &map).unwrap();
    let s = RenderSettings {
        spp: 3,
        ..Default::default()
    };
    let c = cam(12);
    let expect = bg.to_f32();
    let images = [
        render_neural(&scene, &field, &EncodingConfig::default(), &c, &s).unwrap(),
        render_photon_map(&scene, &map, &c, &s).unwrap(),
        render_path_traced(&scene, &c, &s).unwrap(),
        render_ray_march(&scene, &c, &s).unwrap(),
    ];
    for fb in images {
        assert!(fb.to_image().data.iter().all(|p| *p == expect));
    }
}

#[test]
fn invalid_settings_are_rejected() {
    let scene = homogeneous(
        [1.0; 4],
        1.0,
        vec![light(Vec3::splat(2.0), 1.0)],
        Rgb::BLACK,
    );
    let s = RenderSettings {
        spp: 0,
        ..Default::default()
    };
    assert!(render_path_traced(&scene, &cam(4), &s).is_err());
    let map = PhotonMap::build(Vec::new(), PhaseSet::standard());
    let s = RenderSettings {
        g: 0.3,
        ..Default::default()
    };
    assert!(render_photon_map(&scene, &map, &cam(4), &s).is_err());
    let dark = homogeneous([1.0; 4], 1.0, Vec::new(), Rgb::BLACK);
    assert!(render_path_traced(&dark, &cam(4), &RenderSettings::default()).is_err());
}

/// Independent single-scatter quadrature for a homogeneous unit cube: pixel
/// area on a sub-pixel grid, midpoint rule along each ray.
fn single_scatter_mean_luminance(
    scene_rgb: [f64; 3],
    sigma: f64,
    l: &LightSource,
    g: f64,
    c: &Camera,
) -> f64 {
    let exit = |o: Vec3, d: Vec3| -> Option<(f64, f64)> {
        let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
        for a in 0..3 {
            let (oa, da) = (o[a], d[a]);
            if da.abs() < 1e-15 {
                if !(0.0..=1.0).contains(&oa) {
                    return None;
                }
                continue;
            }
            let (mut lo, mut hi) = ((0.0 - oa) / da, (1.0 - oa) / da);
            if lo > hi {
                std::mem::swap(&mut lo, &mut hi);
            }
            t0 = t0.max(lo);
            t1 = t1.min(hi);
        }
        (t1 > t0).then_some((t0, t1))
    };
    let hg = |cos: f64| (1.0 - g * g) / (4.0 * PI * (1.0 + g * g - 2.0 * g * cos).powf(1.5));
    let sub = 12;
    let steps = 1500;
    let lum = 0.2126 * scene_rgb[0] + 0.7152 * scene_rgb[1] + 0.0722 * scene_rgb[2];
    let mut total = 0.0;
    for py in 0..c.height {
        for px in 0..c.width {
            for sy in 0..sub {
                for sx in 0..sub {
                    let ray = c.ray(
                        px,
                        py,
                        (sx as f64 + 0.5) / sub as f64,
                        (sy as f64 + 0.5) / sub as f64,
                    );
                    let Some((t0, t1)) = exit(ray.origin, ray.direction) else {
                        continue;
                    };
                    let h = (t1 - t0) / steps as f64;
                    let mut acc = 0.0;
                    for k in 0..steps {
                        let t = t0 + (k as f64 + 0.5) * h;
                        let x = ray.origin + ray.direction * t;
                        let to_light = l.position - x;
                        let dist = to_light.length();
                        let wl = -(to_light / dist);
                        let (_, out) = exit(x, to_light / dist).unwrap();
                        let tr = (-sigma * out.min(dist)).exp();
                        let pdf = sigma * (-sigma * (t - t0)).exp();
                        acc += pdf * hg(wl.dot(-ray.direction)) * l.intensity[0] * tr
                            / (dist * dist)
                            * h;
                    }
                    total += acc * lum;
                }
            }
        }
    }
    total / (c.width * c.height * sub * sub) as f64
}

#[test]
fn single_scatter_matches_quadrature() {
    let rgb = [0.9, 0.8, 0.7];
    let sigma = 2.0;
    let l = light(Vec3::new(0.5, 1.8, 1.6), 3.0);
    let scene = homogeneous([rgb[0], rgb[1], rgb[2], 1.0], sigma, vec![l], Rgb::BLACK);
    let c = Camera {
        position: Vec3::new(0.5, -1.5, 0.5),
        look_at: Vec3::splat(0.5),
        fov_y: 0.5,
        width: 8,
        height: 8,
        ..Default::default()
    };
    let s = RenderSettings {
        spp: 10_000,
        max_bounces: 1,
        g: 0.3,
        seed: 4,
        ..Default::default()
    };
    let got = render_path_traced(&scene, &c, &s)
        .unwrap()
        .to_image()
        .mean_luminance();
    let expect = single_scatter_mean_luminance(rgb, sigma, &l, 0.3, &c);
    assert!(((got - expect) / expect).abs() < 0.03, "{got} vs {expect}");
}

fn default_scene() -> Scene {
    tiny_config(0).scene().unwrap()
}

#[test]
fn more_samples_means_less_variance() {
    let scene = default_scene();
    let c = cam(16);
    let render = |spp, seed| {
        let s = RenderSettings {
            spp,
            seed,
            ..Default::default()
        };
        render_path_traced(&scene, &c, &s).unwrap().to_image()
    };
    let low: Vec<_> = (0..6).map(|k| render(1, k)).collect();
    let high: Vec<_> = (0..6).map(|k| render(64, 100 + k)).collect();
    assert!(per_pixel_variance(&low) > per_pixel_variance(&high));
}

#[test]
fn indirect_backends_add_to_the_shared_direct_term() {
    let cfg = tiny_config(3);
    let scene = cfg.scene().unwrap();
    let trace = run_trace(&cfg, &scene).unwrap();
    let map = PhotonMap::build(trace.photons, trace.phase_set);
    let (field, _, _) = run_train(&cfg, &map).unwrap();
    let s = RenderSettings {
        spp: 2,
        k_neighbors: 32,
        ..Default::default()
    };
    let c = cam(16);
    let direct = render_direct(&scene, &c, &s).unwrap();
    let empty = PhotonMap::build(Vec::new(), PhaseSet::standard());
    assert_eq!(
        render_photon_map(&scene, &empty, &c, &s).unwrap().sum,
        direct.sum
    );
    let neural = render_neural(&scene, &field, &EncodingConfig::default(), &c, &s).unwrap();
    let pm = render_photon_map(&scene, &map, &c, &s).unwrap();
    assert_eq!(neural.stats.interactions, direct.stats.interactions);
    for fb in [&neural, &pm] {
        for (a, d) in fb.sum.iter().zip(&direct.sum) {
            for ch in 0..3 {
                assert!(a[ch] >= d[ch]);
            }
        }
    }
}

#[test]
fn neural_render_rejects_incompatible_fields() {
    let cfg = tiny_config(4);
    let scene = cfg.scene().unwrap();
    let trace = run_trace(&cfg, &scene).unwrap();
    let map = PhotonMap::build(trace.photons, trace.phase_set);
    let fresh = photonfield::experiment::new_field(&cfg, &map).unwrap();
    let s = RenderSettings::default();
    assert!(render_neural(&scene, &fresh, &EncodingConfig::default(), &cam(8), &s).is_err());
    let (field, _, _) = run_train(&cfg, &map).unwrap();
    assert!(render_neural(
        &scene,
        &field,
        &EncodingConfig::new(4).unwrap(),
        &cam(8),
        &s
    )
    .is_err());
}

#[test]
fn opaque_sphere_pixels_differ_from_background() {
    let mut cfg = tiny_config(5);
    cfg.scene.synthetic = Synthetic::default_sphere();
    cfg.scene.dims = [32; 3];
    cfg.scene.density_scale = 500.0;
    cfg.scene.background = [0.3, 0.3, 0.3];
    let scene = cfg.scene().unwrap();
    let trace = run_trace(&cfg, &scene).unwrap();
    let map = PhotonMap::build(trace.photons, trace.phase_set);
    let (field, _, _) = run_train(&cfg, &map).unwrap();
    let c = Camera {
        position: Vec3::new(0.5, -1.0, 0.5),
        look_at: Vec3::splat(0.5),
        fov_y: 0.6,
        width: 24,
        height: 24,
        ..Default::default()
    };
    let s = RenderSettings {
        spp: 4,
        ..Default::default()
    };
    let img = render_neural(&scene, &field, &EncodingConfig::default(), &c, &s)
        .unwrap()
        .to_image();
    let bg = [0.3f32; 3];
    let (mut covered, mut differ) = (0, 0);
    for y in 0..24 {
        for x in 0..24 {
            // Pixels whose whole footprint sees the sphere core.
            let corners = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)];
            let inside = corners.iter().all(|&(jx, jy)| {
                let r = c.ray(x, y, jx, jy);
                let to_c = Vec3::splat(0.5) - r.origin;
                let t = to_c.dot(r.direction);
                (to_c - r.direction * t).length() < 0.2
            });
            if inside {
                covered += 1;
                differ += usize::from(img.data[y * 24 + x] != bg);
            }
        }
    }
    assert!(covered > 50);
    assert!(differ as f64 >= 0.99 * covered as f64, "{differ}/{covered}");
}

#[test]
fn ray_march_opaque_face_shows_transfer_function_color() {
    let rgb = [0.8, 0.5, 0.25];
    let eye = Vec3::new(0.5, 0.5, -1.0);
    let scene = homogeneous(
        [rgb[0], rgb[1], rgb[2], 1.0],
        1e6,
        vec![light(eye, 1.0)],
        Rgb::new(1.0, 0.0, 0.0),
    );
    let c = Camera {
        position: eye,
        look_at: Vec3::splat(0.5),
        up: Vec3::new(0.0, 1.0, 0.0),
        fov_y: 0.3,
        width: 4,
        height: 4,
    };
    let s = RenderSettings {
        step_size: 0.01,
        ..Default::default()
    };
    let img = render_ray_march(&scene, &c, &s).unwrap().to_image();
    for p in &img.data {
        assert_eq!(*p, Rgb::new(rgb[0], rgb[1], rgb[2]).to_f32());
    }
}

#[test]
fn ray_march_converges_with_step_size() {
    let mut cfg = tiny_config(6);
    cfg.scene.synthetic = Synthetic::default_vortices();
    cfg.scene.dims = [24; 3];
    let scene = cfg.scene().unwrap();
    let c = cam(16);
    let at = |h: f64| {
        let s = RenderSettings {
            step_size: h,
            ..Default::default()
        };
        render_ray_march(&scene, &c, &s).unwrap().to_image()
    };
    let (a, b, d) = (at(0.02), at(0.01), at(0.08));
    assert!(mse(&a, &b).unwrap() < mse(&a, &d).unwrap());
}

#[test]
fn renders_are_identical_across_thread_counts() {
    let scene = default_scene();
    let s = RenderSettings {
        spp: 2,
        seed: 77,
        ..Default::default()
    };
    let run = |threads| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| render_path_traced(&scene, &cam(20), &s).unwrap().sum)
    };
    let one = run(1);
    assert_eq!(run(4), one);
    assert_eq!(run(7), one);
}

#[test]
fn more_photons_bring_the_photon_map_render_closer_to_a_dense_reference() {
    let scene = default_scene();
    let c = cam(16);
    let s = RenderSettings {
        spp: 2,
        k_neighbors: 64,
        r_max: 0.1,
        ..Default::default()
    };
    let render = |n, seed| {
        let cfg = TraceConfig {
            n_total: n,
            seed,
            ..Default::default()
        };
        let t = trace_photons(&scene.medium, &scene.lights, &cfg).unwrap();
        render_photon_map(&scene, &PhotonMap::build(t.photons, t.phase_set), &c, &s)
            .unwrap()
            .to_image()
    };
    let reference = render(1_000_000, 1000);
    let mut wins = 0;
    for seed in 0..3 {
        let coarse = mse(&render(10_000, seed), &reference).unwrap();
        let fine = mse(&render(100_000, seed), &reference).unwrap();
        wins += usize::from(fine < coarse);
    }
    assert!(wins >= 2);
}
