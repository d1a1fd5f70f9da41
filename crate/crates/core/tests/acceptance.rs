//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. `ACCEPTANCE_ONLY=5,9` runs a subset.

mod common;

use std::f64::consts::PI;
use std::time::Instant;

use common::{
    brute_force_knn, gradient_check, per_pixel_variance, random_field_state, random_photons,
    random_queries, tiny_config,
};
use photonfield::experiment::{compare, run_pipeline, run_render, run_trace, run_train, Backend};
use photonfield::field::AdamState;
use photonfield::imaging::sidecar_path;
use photonfield::phase::hg_sample_cos;
use photonfield::rng::{stream, uniform};
use photonfield::trainer::{make_batch, train, KnnSchedule};
use photonfield::{
    decode_log, encode_log, estimate_radiance, hg_eval, hg_sample, ssim, write_image,
    EncodingConfig, ExperimentConfig, FieldConfig, FieldMeta, Image, ImageFormat, KnnQuery,
    MlpConfig, PhaseSet, Photon, PhotonField, PhotonMap, Rgb, Scene, TrainReport, Vec3,
};
use statrs::distribution::{ChiSquared, ContinuousCDF};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// Default experiment, traced and trained once; criteria 6, 7, 8 and 10 share it.
struct Trained {
    cfg: ExperimentConfig,
    scene: Scene,
    map: PhotonMap,
    field: PhotonField,
    report: TrainReport,
    seconds: f64,
}

fn trained() -> &'static Trained {
    static CELL: std::sync::OnceLock<Trained> = std::sync::OnceLock::new();
    CELL.get_or_init(|| {
        let t = Instant::now();
        let cfg = ExperimentConfig::default();
        let scene = cfg.scene().unwrap();
        let trace = run_trace(&cfg, &scene).unwrap();
        let map = PhotonMap::build(trace.photons, trace.phase_set);
        let (field, _, report) = run_train(&cfg, &map).unwrap();
        Trained {
            cfg,
            scene,
            map,
            field,
            report,
            seconds: t.elapsed().as_secs_f64(),
        }
    })
}

fn phase_correctness() -> Outcome {
    let gs = [-0.9, -0.6, -0.3, 0.0, 0.2, 0.5, 0.75, 0.9];
    let mut worst_norm: f64 = 0.0;
    let mut worst_p: f64 = 1.0;
    for (i, &g) in gs.iter().enumerate() {
        let n = 200_000;
        let h = 2.0 / n as f64;
        let s = (0..n)
            .map(|k| hg_eval(g, -1.0 + (k as f64 + 0.5) * h))
            .sum::<f64>()
            * h
            * 2.0
            * PI;
        worst_norm = worst_norm.max((s - 1.0).abs());

        // 40 equiprobable bins from the sampler's own inverse CDF, counted
        // from full direction samples.
        let bins = 40;
        let edges: Vec<f64> = (0..=bins)
            .map(|b| {
                if b == bins {
                    1.0
                } else {
                    hg_sample_cos(g, b as f64 / bins as f64)
                }
            })
            .collect();
        let mut counts = vec![0usize; bins];
        let mut rng = stream(500 + i as u64, 0);
        let w_in = Vec3::new(0.2, 0.7, -0.3).normalize();
        let samples = 100_000;
        for _ in 0..samples {
            let c = hg_sample(g, w_in, uniform(&mut rng), uniform(&mut rng)).dot(w_in);
            let b = edges.partition_point(|&e| e <= c).clamp(1, bins) - 1;
            counts[b] += 1;
        }
        // Bin probabilities from the density itself, so the test does not
        // trust the inverse CDF.
        let mut stat = 0.0;
        for b in 0..bins {
            let (lo, hi) = (edges[b], edges[b + 1]);
            let m = 2000;
            let w = (hi - lo) / m as f64;
            let p = (0..m)
                .map(|k| hg_eval(g, lo + (k as f64 + 0.5) * w))
                .sum::<f64>()
                * w
                * 2.0
                * PI;
            let e = p * samples as f64;
            stat += (counts[b] as f64 - e).powi(2) / e;
        }
        let p = 1.0 - ChiSquared::new((bins - 1) as f64).unwrap().cdf(stat);
        worst_p = worst_p.min(p);
    }
    outcome(
        worst_norm < 1e-4 && worst_p > 0.01,
        format!("max |norm - 1| = {worst_norm:.2e}, min chi-square p = {worst_p:.3}"),
    )
}

fn knn_equivalence() -> Outcome {
    let photons = random_photons(10_000, 3, 77);
    let map = PhotonMap::build(photons.clone(), PhaseSet::standard());
    let mut rng = stream(78, 0);
    let mut checked = 0;
    let mut mismatches = 0;
    for _ in 0..1000 {
        let p = Vec3::new(uniform(&mut rng), uniform(&mut rng), uniform(&mut rng)) * 1.2
            - Vec3::splat(0.1);
        let tag = ((uniform(&mut rng) * 3.0) as u8).min(2);
        for k in [1, 16, 256] {
            for r in [0.02, 0.1, 0.5] {
                let got: Vec<(u32, f64)> = map
                    .knn_phase(&KnnQuery::new(p, tag, k, r).unwrap())
                    .into_iter()
                    .map(|n| (n.id, n.distance))
                    .collect();
                checked += 1;
                mismatches += usize::from(got != brute_force_knn(&photons, p, tag, k, r));
            }
        }
    }
    outcome(
        mismatches == 0,
        format!("{checked} queries, {mismatches} mismatches"),
    )
}

fn estimator_and_codec() -> Outcome {
    let z = Vec3::new(0.0, 0.0, 1.0);
    let ph = Photon {
        position: [0.0; 3],
        direction: z.to_f32(),
        power: [2.0, 1.0, 0.5],
        phase: 0,
    };
    let l = estimate_radiance(&[(ph, 0.2)], z, 0.5);
    let expect = 0.75 / (4.0 * PI * 0.125) / (4.0 / 3.0 * PI * 0.008);
    let hand = (0..3)
        .map(|c| (l[c] - [2.0, 1.0, 0.5][c] * expect).abs())
        .fold(0.0, f64::max);

    let cfg = EncodingConfig::default();
    let mut rng = stream(90, 0);
    let mut worst_rt: f64 = 0.0;
    for _ in 0..100_000 {
        let v = 10f64.powf(-(cfg.psi as f64) * (0.999_999 * uniform(&mut rng)) - 1e-6);
        let back = decode_log(encode_log(Rgb::splat(v), &cfg).unwrap(), &cfg)[0];
        worst_rt = worst_rt.max(((back - v) / v).abs());
    }

    let mut outside = 0;
    let draws = 1_000_000;
    for i in 0..draws {
        let cfg = EncodingConfig::new(1 + (i % 8) as u32).unwrap();
        let mut c = [0.0; 3];
        for v in &mut c {
            let u = uniform(&mut rng);
            *v = match (u * 4.0) as u32 {
                0 => 0.0,
                1 => 10f64.powf(uniform(&mut rng) * 600.0 - 300.0),
                2 => uniform(&mut rng) * 1e6,
                _ => uniform(&mut rng),
            };
        }
        let e = encode_log(Rgb::new(c[0], c[1], c[2]), &cfg).unwrap();
        outside += usize::from(!e.0.iter().all(|v| (0.0..=1.0).contains(v)));
    }
    outcome(
        hand < 1e-9 && worst_rt < 1e-12 && outside == 0,
        format!("hand case err {hand:.1e}, round trip rel err {worst_rt:.1e}, {outside}/{draws} encodes outside [0,1]"),
    )
}

fn gradient_oracle() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut skipped = 0;
    for s in 0..3 {
        let field = random_field_state(1000 + s);
        let q = random_queries(8, &PhaseSet::standard(), 2000 + s);
        let mut rng = stream(3000 + s, 0);
        let t: Vec<[f64; 3]> = (0..8)
            .map(|_| [uniform(&mut rng), uniform(&mut rng), uniform(&mut rng)])
            .collect();
        let c = gradient_check(&field, &q, &t, 64, 4000 + s);
        worst = worst.max(c.worst_relative_error);
        checked += c.checked;
        skipped += c.skipped_kinks;
    }
    outcome(
        worst < 1e-3 && checked == 192,
        format!("{checked} parameters over 3 states, worst rel err {worst:.2e} ({skipped} kink draws redrawn)"),
    )
}

fn overfit() -> Outcome {
    let cfg = ExperimentConfig::default();
    let trace = run_trace(&cfg, &cfg.scene().unwrap()).unwrap();
    let map = PhotonMap::build(trace.photons, trace.phase_set);
    let tc = cfg.train.clone();
    let batch = make_batch(&map, &tc, 0).unwrap();
    let fc = FieldConfig {
        mlp: MlpConfig {
            hidden_layers: 3,
            width: 64,
        },
        ..Default::default()
    };
    let meta = FieldMeta {
        phase_set: map.phase_set().clone(),
        encoding: tc.encoding,
        steps_trained: 0,
    };
    let mut field = PhotonField::new(fc, meta, 17).unwrap();
    let max_steps = 2000;
    let mut adam = AdamState::new(tc.adam, field.param_count(), max_steps).unwrap();
    let mut loss = f64::INFINITY;
    let mut steps = 0;
    while steps < max_steps && loss >= 1e-3 {
        loss = field
            .train_step(&batch.queries, &batch.targets, &mut adam)
            .unwrap();
        steps += 1;
    }
    // Loss of the final parameters, not the pre-update value of the last step.
    let after = field.loss(&batch.queries, &batch.targets);
    outcome(
        after < 1e-3,
        format!("rMSE {after:.2e} after {steps} steps on a fixed 1024 batch"),
    )
}

fn staggered_schedule() -> Outcome {
    let t = trained();
    let mut cfg = t.cfg.train.clone();
    cfg.schedule = KnnSchedule::constant(0.1).unwrap();
    let mut field = photonfield::experiment::new_field(&t.cfg, &t.map).unwrap();
    let (naive, _) = train(&mut field, &t.map, &cfg).unwrap();
    let (ls, ln) = (t.report.final_loss(0.05), naive.final_loss(0.05));
    let (ks, kn) = (t.report.knn_cpu.as_secs_f64(), naive.knn_cpu.as_secs_f64());
    let rel = (ls - ln).abs() / ln;
    outcome(
        rel <= 0.15 && ks < kn,
        format!(
            "final loss staggered {ls:.4e} vs naive {ln:.4e} ({:.1}%), knn time {ks:.1} s vs {kn:.1} s, speedup {:.2}x (desk target 1.2x)",
            100.0 * rel,
            kn / ks
        ),
    )
}

fn reconstruction() -> Outcome {
    let t = trained();
    let neural = run_render(&t.cfg, &t.scene, Backend::Neural, Some(&t.field), None)
        .unwrap()
        .to_image();
    let pm = run_render(&t.cfg, &t.scene, Backend::PhotonMap, None, Some(&t.map))
        .unwrap()
        .to_image();
    let c = compare(&neural, &pm).unwrap();
    outcome(
        c.ssim >= 0.85,
        format!(
            "SSIM {:.4}, mean rSE {:.3e}, MSE {:.3e} ({}x{}, {} spp, {} photons, training {:.0} s)",
            c.ssim,
            c.mean_rse,
            c.mse,
            neural.width,
            neural.height,
            t.cfg.render.settings.spp,
            t.map.len(),
            t.seconds
        ),
    )
}

fn renders(t: &Trained, backend: Backend, spp: usize, seeds: std::ops::Range<u64>) -> Vec<Image> {
    seeds
        .map(|s| {
            let mut cfg = t.cfg.clone();
            cfg.render.settings.spp = spp;
            cfg.render.settings.seed = s;
            run_render(&cfg, &t.scene, backend, Some(&t.field), None)
                .unwrap()
                .to_image()
        })
        .collect()
}

fn noise_ordering() -> Outcome {
    let t = trained();
    let neural = per_pixel_variance(&renders(t, Backend::Neural, 1, 0..16));
    let pt1 = per_pixel_variance(&renders(t, Backend::PathTraced, 1, 100..116));
    let pt4 = per_pixel_variance(&renders(t, Backend::PathTraced, 4, 200..216));
    outcome(
        neural < pt1 && neural <= pt4,
        format!("mean luminance variance: neural 1 spp {neural:.3e}, path 1 spp {pt1:.3e}, path 4 spp {pt4:.3e}"),
    )
}

fn cost_scaling() -> Outcome {
    let t = trained();
    // Denser, brighter medium so paths run long enough for the bounce cap
    // to matter.
    let mut cfg = t.cfg.clone();
    cfg.scene.density_scale = 60.0;
    cfg.scene.transfer_function = vec![[0.0, 1.0, 1.0, 1.0, 0.0], [1.0, 0.99, 0.99, 0.99, 1.0]];
    let scene = cfg.scene().unwrap();
    let caps = [2u32, 4, 8, 16];
    // Rounds sweep all settings in turn so slow drifts in machine load hit
    // every setting alike; the minimum over rounds drops scheduler noise.
    let repeats = 7;
    let mut neural = vec![f64::INFINITY; caps.len()];
    let mut indirect = vec![f64::INFINITY; caps.len()];
    for _ in 0..repeats {
        // Each backend runs as its own block after one untimed render, so no
        // timed render inherits the cache and heap state of the other.
        run_render(&cfg, &scene, Backend::Neural, Some(&t.field), None).unwrap();
        for (i, &mb) in caps.iter().enumerate() {
            cfg.render.settings.max_bounces = mb;
            let fb = run_render(&cfg, &scene, Backend::Neural, Some(&t.field), None).unwrap();
            neural[i] = neural[i].min(fb.stats.wall.as_secs_f64());
        }
        run_render(&cfg, &scene, Backend::PathTraced, None, None).unwrap();
        for (i, &mb) in caps.iter().enumerate() {
            cfg.render.settings.max_bounces = mb;
            let fb = run_render(&cfg, &scene, Backend::PathTraced, None, None).unwrap();
            indirect[i] = indirect[i].min(fb.stats.indirect.as_secs_f64());
        }
    }
    let mean = neural.iter().sum::<f64>() / neural.len() as f64;
    let invariant = neural.iter().all(|n| (n - mean).abs() <= 0.1 * mean);
    let increasing = indirect.windows(2).all(|w| w[1] > w[0]);
    let ms = |v: &[f64]| {
        v.iter()
            .map(|s| format!("{:.0}", s * 1e3))
            .collect::<Vec<_>>()
            .join("/")
    };
    outcome(
        invariant && increasing,
        format!(
            "max_bounces 2/4/8/16: neural wall {} ms, path indirect {} ms (min of {repeats})",
            ms(&neural),
            ms(&indirect)
        ),
    )
}

fn phase_generalization() -> Outcome {
    let t = trained();
    let mut unseen_cfg = t.cfg.clone();
    unseen_cfg.trace.phase_set = PhaseSet::new(vec![-0.35, 0.35]).unwrap();
    let trace = run_trace(&unseen_cfg, &t.scene).unwrap();
    let unseen_map = PhotonMap::build(trace.photons, trace.phase_set);
    let score = |g: f64, map: &PhotonMap| {
        let mut cfg = t.cfg.clone();
        cfg.render.settings.g = g;
        let n = run_render(&cfg, &t.scene, Backend::Neural, Some(&t.field), None)
            .unwrap()
            .to_image();
        let b = run_render(&cfg, &t.scene, Backend::PhotonMap, None, Some(map))
            .unwrap()
            .to_image();
        ssim(&n, &b).unwrap()
    };
    let seen: Vec<f64> = t
        .map
        .phase_set()
        .values()
        .iter()
        .map(|&g| score(g, &t.map))
        .collect();
    let unseen: Vec<f64> = [-0.35, 0.35]
        .iter()
        .map(|&g| score(g, &unseen_map))
        .collect();
    let mean_seen = seen.iter().sum::<f64>() / seen.len() as f64;
    let worst_drop = unseen
        .iter()
        .map(|s| mean_seen - s)
        .fold(f64::NEG_INFINITY, f64::max);
    outcome(
        worst_drop <= 0.1,
        format!(
            "SSIM at g -0.75/0/0.75: {:.4}/{:.4}/{:.4} (mean {mean_seen:.4}); at -0.35/0.35: {:.4}/{:.4}; worst drop {worst_drop:.4}",
            seen[0], seen[1], seen[2], unseen[0], unseen[1]
        ),
    )
}

// Metrics of the tiny golden run, as recorded in tests/pipeline.rs.
const GOLDEN: [f64; 4] = [
    46.94963684621251,
    0.08419078043530291,
    4.348823546744075,
    0.3441204017293959,
];

fn determinism() -> Outcome {
    let cfg = tiny_config(2024);
    let dir = tempfile::tempdir().unwrap();
    let mut sidecars = Vec::new();
    let mut metrics_ok = true;
    for threads in [1, 4, 8] {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        let out = pool.install(|| run_pipeline(&cfg).unwrap());
        let r = &out.report;
        let got = [
            r.final_loss,
            r.comparison.mse,
            r.comparison.mean_rse,
            r.comparison.ssim,
        ];
        metrics_ok &= got
            .iter()
            .zip(GOLDEN)
            .all(|(a, b)| a.to_bits() == b.to_bits());
        let mut bytes = Vec::new();
        for (name, img) in [("neural", &out.neural), ("baseline", &out.baseline)] {
            let path = dir.path().join(format!("{name}-{threads}.ppm"));
            write_image(img, &path, ImageFormat::Ppm, true).unwrap();
            bytes.push(std::fs::read(sidecar_path(&path)).unwrap());
        }
        sidecars.push(bytes);
    }
    let same = sidecars.iter().all(|s| *s == sidecars[0]);
    outcome(
        metrics_ok && same,
        format!(
            "threads 1/4/8: golden metrics bitwise {}, float sidecars identical {}",
            if metrics_ok { "yes" } else { "no" },
            if same { "yes" } else { "no" }
        ),
    )
}

type Criterion = (u32, &'static str, f64, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 11] = [
        (1, "phase correctness", 10.0, phase_correctness),
        (2, "knn oracle equivalence", 30.0, knn_equivalence),
        (3, "estimator and codec", f64::INFINITY, estimator_and_codec),
        (4, "gradient oracle", 60.0, gradient_oracle),
        (5, "overfit capacity", 120.0, overfit),
        (6, "staggered schedule", 900.0, staggered_schedule),
        (7, "reconstruction fidelity", 1200.0, reconstruction),
        (8, "noise ordering", 600.0, noise_ordering),
        (9, "cost scaling", 600.0, cost_scaling),
        (10, "phase generalization", 1800.0, phase_generalization),
        (11, "end-to-end determinism", f64::INFINITY, determinism),
    ];
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|v| v.trim().parse().ok()).collect());
    let mut failed = 0;
    for (id, name, limit, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        // Criteria that reuse the shared training are charged for it in full.
        let shared = if (6..=10).contains(&id) {
            trained().seconds
        } else {
            0.0
        };
        let start = Instant::now();
        let o = run();
        let charged = start.elapsed().as_secs_f64() + shared;
        let in_time = charged < limit;
        let pass = o.pass && in_time;
        failed += usize::from(!pass);
        let budget = if limit.is_finite() {
            format!(" / limit {limit:.0} s")
        } else {
            String::new()
        };
        println!(
            "{} {id:>2} {name}: {}; {charged:.1} s{budget}{}",
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            if in_time { "" } else { " (over time limit)" }
        );
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
