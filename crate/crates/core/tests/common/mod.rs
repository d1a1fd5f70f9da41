//! Independent oracles shared by the integration tests and the acceptance
//! harness.

#![allow(dead_code)]

use photonfield::experiment::ExperimentConfig;
use photonfield::field::{FieldQuery, PhotonField};
use photonfield::rng::{stream, uniform, Rng};
use photonfield::{FieldMeta, PhaseSet, Photon, Vec3};

/// Brute-force KNN: every photon with the tag within `r_max`, sorted by
/// (squared distance, id), truncated to `k`.
pub fn brute_force_knn(
    photons: &[Photon],
    p: Vec3,
    tag: u8,
    k: usize,
    r_max: f64,
) -> Vec<(u32, f64)> {
    let mut all: Vec<(f64, u32)> = photons
        .iter()
        .enumerate()
        .filter(|(_, ph)| ph.phase == tag)
        .map(|(i, ph)| {
            let q = ph.position();
            let (dx, dy, dz) = (q.x - p.x, q.y - p.y, q.z - p.z);
            (dx * dx + dy * dy + dz * dz, i as u32)
        })
        .filter(|&(d2, _)| d2 <= r_max * r_max)
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    all.truncate(k);
    all.into_iter().map(|(d2, id)| (id, d2.sqrt())).collect()
}

/// Uniform photons in the unit cube, some sharing positions so ties occur.
pub fn random_photons(n: usize, n_phases: u8, seed: u64) -> Vec<Photon> {
    let mut rng = stream(seed, 0);
    let mut out: Vec<Photon> = Vec::with_capacity(n);
    for i in 0..n {
        let position = if i > 0 && uniform(&mut rng) < 0.05 {
            out[(uniform(&mut rng) * i as f64) as usize].position
        } else {
            [
                uniform(&mut rng) as f32,
                uniform(&mut rng) as f32,
                uniform(&mut rng) as f32,
            ]
        };
        out.push(Photon {
            position,
            direction: Vec3::uniform_sphere(uniform(&mut rng), uniform(&mut rng)).to_f32(),
            power: [uniform(&mut rng) as f32; 3],
            phase: (uniform(&mut rng) * n_phases as f64) as u8 % n_phases,
        });
    }
    out
}

pub fn random_unit_point(rng: &mut Rng) -> Vec3 {
    Vec3::new(uniform(rng), uniform(rng), uniform(rng))
}

pub fn random_queries(n: usize, phases: &PhaseSet, seed: u64) -> Vec<FieldQuery> {
    let mut rng = stream(seed, 1);
    (0..n)
        .map(|_| {
            let x = random_unit_point(&mut rng);
            let w = Vec3::uniform_sphere(uniform(&mut rng), uniform(&mut rng));
            let g = phases
                .get(((uniform(&mut rng) * phases.len() as f64) as usize % phases.len()) as u8);
            FieldQuery::new(x, w, g)
        })
        .collect()
}

/// Default-size field with hash tables spread over +-0.1 so that every
/// parameter group carries gradient.
pub fn random_field_state(seed: u64) -> PhotonField {
    let meta = FieldMeta {
        phase_set: PhaseSet::standard(),
        encoding: Default::default(),
        steps_trained: 0,
    };
    let mut field = PhotonField::new(Default::default(), meta, seed).unwrap();
    let emb = field.param_ranges()[1].end;
    let mut rng = stream(seed, 99);
    for p in &mut field.params_mut()[..emb] {
        *p = (2.0 * uniform(&mut rng) - 1.0) * 0.1;
    }
    field
}

pub struct GradientCheck {
    pub checked: usize,
    pub skipped_kinks: usize,
    pub worst_relative_error: f64,
}

/// Central differences of the rMSE (denominator held at the unperturbed
/// predictions) for `n` parameters drawn from those with nonzero analytic
/// gradient, an equal share from each parameter group. Draws whose
/// perturbation flips a ReLU are replaced.
pub fn gradient_check(
    field: &PhotonField,
    queries: &[FieldQuery],
    targets: &[[f64; 3]],
    n: usize,
    seed: u64,
) -> GradientCheck {
    let (_, grad) = field.loss_and_gradient(queries, targets).unwrap();
    let reference = field.forward(queries);
    let mask = field.relu_mask(queries);
    let mut rng = stream(seed, 7);
    let groups = field.param_ranges();
    let mut probe = field.clone();
    let mut result = GradientCheck {
        checked: 0,
        skipped_kinks: 0,
        worst_relative_error: 0.0,
    };
    for (gi, range) in groups.iter().enumerate() {
        let candidates: Vec<usize> = range.clone().filter(|&i| grad[i] != 0.0).collect();
        assert!(
            !candidates.is_empty(),
            "parameter group {gi} has no gradient"
        );
        let want = n / groups.len() + usize::from(gi < n % groups.len());
        let mut got = 0;
        let mut attempts = 0;
        while got < want {
            attempts += 1;
            assert!(attempts < 100 * want, "too many kinks in group {gi}");
            let i = candidates[(uniform(&mut rng) * candidates.len() as f64) as usize];
            let p0 = field.params()[i];
            let h = 1e-5 * p0.abs().max(1.0);
            probe.params_mut()[i] = p0 + h;
            let kink_plus = probe.relu_mask(queries) != mask;
            let lp = probe.loss_with_denominator(queries, targets, &reference);
            probe.params_mut()[i] = p0 - h;
            let kink_minus = probe.relu_mask(queries) != mask;
            let lm = probe.loss_with_denominator(queries, targets, &reference);
            probe.params_mut()[i] = p0;
            if kink_plus || kink_minus {
                result.skipped_kinks += 1;
                continue;
            }
            let numeric = (lp - lm) / (2.0 * h);
            let analytic = grad[i];
            let rel = (numeric - analytic).abs() / analytic.abs().max(numeric.abs());
            result.worst_relative_error = result.worst_relative_error.max(rel);
            result.checked += 1;
            got += 1;
        }
    }
    result
}

/// A small, fast configuration for pipeline tests.
pub fn tiny_config(seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.scene.dims = [16; 3];
    cfg.trace.n_total = 6_000;
    cfg.train.total_steps = 20;
    cfg.train.batch_size = 128;
    cfg.train.k_neighbors = 32;
    cfg.field.position.levels = 4;
    cfg.field.position.table_size_log2 = 12;
    cfg.field.direction.levels = 3;
    cfg.field.direction.table_size_log2 = 10;
    cfg.field.mlp.hidden_layers = 2;
    cfg.field.mlp.width = 16;
    cfg.render.camera.width = 16;
    cfg.render.camera.height = 16;
    cfg.render.settings.spp = 2;
    cfg.render.settings.k_neighbors = 32;
    cfg.set_seed(seed);
    cfg
}

/// Mean over pixels of the sample variance of luminance across images.
pub fn per_pixel_variance(images: &[photonfield::Image]) -> f64 {
    let n = images.len() as f64;
    let lum: Vec<Vec<f64>> = images.iter().map(|i| i.luminance()).collect();
    let np = lum[0].len();
    (0..np)
        .map(|p| {
            let m = lum.iter().map(|l| l[p]).sum::<f64>() / n;
            lum.iter().map(|l| (l[p] - m).powi(2)).sum::<f64>() / (n - 1.0)
        })
        .sum::<f64>()
        / np as f64
}
