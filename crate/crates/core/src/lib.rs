//! Neural photon fields for volumetric global illumination on the CPU.
//!
//! The pipeline traces multi-phase photon maps through a heterogeneous
//! medium, trains a compact hash-grid field on KNN radiance targets, and
//! renders by combining delta-tracked direct light with one field query per
//! camera sample.

mod error;

pub mod estimator;
pub mod experiment;
pub mod field;
pub mod imaging;
pub mod math;
pub mod phase;
pub mod photon;
pub mod photon_map;
pub mod render;
pub mod rng;
pub mod trainer;
pub mod volume;

pub use error::{Error, Result};
pub use estimator::{decode_log, encode_log, estimate_radiance, EncodingConfig};
pub use experiment::{Backend, ExperimentConfig};
pub use field::{
    AdamConfig, AdamState, FieldConfig, FieldMeta, FieldQuery, HashGridConfig, MlpConfig,
    PhotonField,
};
pub use imaging::{mse, read_image, ssim, write_image, Image, ImageFormat};
pub use math::{Aabb, Ray, Rgb, Vec3};
pub use phase::{hg_eval, hg_sample, PhaseCoefficient};
pub use photon::{trace_photons, LightSource, PhaseSet, Photon, PhotonTrace, TraceConfig};
pub use photon_map::{KnnQuery, Neighbor, PhotonMap};
pub use render::{
    compose, render_neural, render_path_traced, render_photon_map, render_ray_march, Camera,
    ComposeInputs, FrameBuffer, RenderSettings, Scene,
};
pub use trainer::{make_batch, schedule_radius, train, KnnSchedule, TrainConfig, TrainReport};
pub use volume::{Medium, TransferFunction, VolumeGrid};
