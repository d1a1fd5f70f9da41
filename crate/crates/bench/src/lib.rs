//! Shared fixtures for the benchmarks in `benches/`.

use photonfield::experiment::ExperimentConfig;
use photonfield::field::{FieldMeta, PhotonField};
use photonfield::render::Scene;
use photonfield::{trace_photons, Camera, EncodingConfig, PhotonMap, TraceConfig};

/// The default slab scene at a reduced photon count.
pub fn slab_scene() -> Scene {
    ExperimentConfig::default()
        .scene()
        .expect("default scene builds")
}

pub fn slab_map(photons: usize) -> PhotonMap {
    let scene = slab_scene();
    let cfg = TraceConfig {
        n_total: photons,
        seed: 1,
        ..Default::default()
    };
    let trace = trace_photons(&scene.medium, &scene.lights, &cfg).expect("trace");
    PhotonMap::build(trace.photons, trace.phase_set)
}

/// Untrained default-size field marked as trained so it can be rendered.
pub fn field_for(map: &PhotonMap) -> PhotonField {
    let meta = FieldMeta {
        phase_set: map.phase_set().clone(),
        encoding: EncodingConfig::default(),
        steps_trained: 1,
    };
    PhotonField::new(Default::default(), meta, 1).expect("field")
}

pub fn small_camera() -> Camera {
    Camera {
        width: 32,
        height: 32,
        ..Default::default()
    }
}
