//! Experiment configuration and the pipeline stages the CLI drives.
//!
//! Every stage takes its randomness from the single top-level seed through
//! named sub-streams, so any stage can be re-run alone and reproduce the
//! same artifacts.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::field::{AdamState, FieldConfig, FieldMeta, PhotonField};
use crate::imaging::{self, Image, ImageFormat};
use crate::math::{Rgb, Vec3};
use crate::photon::{trace_photons, LightSource, PhotonTrace, TraceConfig};
use crate::photon_map::PhotonMap;
use crate::render::{self, Camera, FrameBuffer, RenderSettings, Scene};
use crate::trainer::{self, TrainConfig, TrainReport};
use crate::volume::synth::Synthetic;
use crate::volume::{read_transfer_function, read_volume, TransferFunction};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    /// Raw volume file; when absent the synthetic generator is used.
    pub volume: Option<PathBuf>,
    pub synthetic: Synthetic,
    pub dims: [usize; 3],
    /// Transfer-function file; when absent `transfer_function` is used.
    pub transfer_function_path: Option<PathBuf>,
    /// Control points `[scalar, r, g, b, a]`.
    pub transfer_function: Vec<[f64; 5]>,
    pub lights: Vec<LightSource>,
    pub density_scale: f64,
    pub background: [f64; 3],
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            volume: None,
            synthetic: Synthetic::default_slab(),
            dims: [64; 3],
            transfer_function_path: None,
            transfer_function: vec![[0.0, 1.0, 1.0, 1.0, 0.0], [1.0, 0.95, 0.9, 0.85, 1.0]],
            lights: vec![LightSource {
                position: Vec3::new(0.5, 0.3, 1.4),
                intensity: Rgb::splat(4.0),
            }],
            density_scale: 20.0,
            background: [0.0; 3],
        }
    }
}

impl SceneConfig {
    pub fn build(&self) -> Result<Scene> {
        let grid = match &self.volume {
            Some(path) => read_volume(path)?,
            None => self.synthetic.generate(self.dims)?,
        };
        let tf = match &self.transfer_function_path {
            Some(path) => read_transfer_function(path)?,
            None => TransferFunction::new(
                self.transfer_function
                    .iter()
                    .map(|p| (p[0], [p[1], p[2], p[3], p[4]]))
                    .collect(),
            )?,
        };
        let [r, g, b] = self.background;
        Scene::new(
            grid,
            tf,
            self.lights.clone(),
            self.density_scale,
            Rgb::new(r, g, b),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    Neural,
    PhotonMap,
    PathTraced,
    RayMarch,
}

impl Backend {
    pub const ALL: [Backend; 4] = [
        Backend::Neural,
        Backend::PhotonMap,
        Backend::PathTraced,
        Backend::RayMarch,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Backend::Neural => "neural",
            Backend::PhotonMap => "photon-map",
            Backend::PathTraced => "path-traced",
            Backend::RayMarch => "ray-march",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    pub backends: Vec<Backend>,
    pub camera: Camera,
    pub settings: RenderSettings,
    pub format: ImageFormat,
    pub gamma: bool,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            backends: vec![Backend::Neural, Backend::PhotonMap],
            camera: Camera::default(),
            settings: RenderSettings::default(),
            format: ImageFormat::Ppm,
            gamma: true,
        }
    }
}

/// Everything one run needs. Section-level `seed` fields are overwritten by
/// the top-level seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub scene: SceneConfig,
    pub trace: TraceConfig,
    pub train: TrainConfig,
    pub field: FieldConfig,
    pub render: RenderConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            out_dir: PathBuf::from("out"),
            scene: SceneConfig::default(),
            trace: TraceConfig::default(),
            train: TrainConfig {
                total_steps: 1500,
                batch_size: 1024,
                ..Default::default()
            },
            field: FieldConfig::default(),
            render: RenderConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses TOML; relative paths are resolved against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::format("experiment config", e.to_string()))?;
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        cfg.scene.volume.as_mut().map(resolve);
        cfg.scene.transfer_function_path.as_mut().map(resolve);
        resolve(&mut cfg.out_dir);
        cfg.set_seed(cfg.seed);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        ExperimentConfig::from_toml(&text, base)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.trace.seed = seed;
        self.train.seed = seed;
        self.render.settings.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        for path in self
            .scene
            .volume
            .iter()
            .chain(&self.scene.transfer_function_path)
        {
            if !path.exists() {
                return Err(Error::config(format!("{} does not exist", path.display())));
            }
        }
        if self.scene.lights.is_empty() {
            return Err(Error::config("the scene needs at least one light"));
        }
        for l in &self.scene.lights {
            l.validate()?;
        }
        if self.scene.volume.is_none() && self.scene.dims.contains(&0) {
            return Err(Error::config("volume dims must be positive"));
        }
        if !(self.scene.density_scale >= 0.0 && self.scene.density_scale.is_finite()) {
            return Err(Error::config("density_scale must be finite and >= 0"));
        }
        self.trace.validate()?;
        self.train.validate()?;
        self.field.validate()?;
        self.render.camera.validate()?;
        self.render.settings.validate()
    }

    pub fn scene(&self) -> Result<Scene> {
        self.scene.build()
    }
}

pub fn run_trace(cfg: &ExperimentConfig, scene: &Scene) -> Result<PhotonTrace> {
    trace_photons(&scene.medium, &scene.lights, &cfg.trace)
}

pub fn new_field(cfg: &ExperimentConfig, map: &PhotonMap) -> Result<PhotonField> {
    let meta = FieldMeta {
        phase_set: map.phase_set().clone(),
        encoding: cfg.train.encoding,
        steps_trained: 0,
    };
    PhotonField::new(cfg.field, meta, cfg.seed)
}

pub fn run_train(
    cfg: &ExperimentConfig,
    map: &PhotonMap,
) -> Result<(PhotonField, AdamState, TrainReport)> {
    let mut field = new_field(cfg, map)?;
    let (report, adam) = trainer::train(&mut field, map, &cfg.train)?;
    Ok((field, adam, report))
}

/// Renders with one backend; `field` and `map` are needed only by the
/// backends that use them.
pub fn run_render(
    cfg: &ExperimentConfig,
    scene: &Scene,
    backend: Backend,
    field: Option<&PhotonField>,
    map: Option<&PhotonMap>,
) -> Result<FrameBuffer> {
    let (cam, s) = (&cfg.render.camera, &cfg.render.settings);
    match backend {
        Backend::Neural => {
            let field =
                field.ok_or_else(|| Error::config("the neural backend needs a trained field"))?;
            render::render_neural(scene, field, &cfg.train.encoding, cam, s)
        }
        Backend::PhotonMap => {
            let map =
                map.ok_or_else(|| Error::config("the photon-map backend needs a photon map"))?;
            render::render_photon_map(scene, map, cam, s)
        }
        Backend::PathTraced => render::render_path_traced(scene, cam, s),
        Backend::RayMarch => render::render_ray_march(scene, cam, s),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub mse: f64,
    pub mean_rse: f64,
    pub ssim: f64,
}

/// `b` is the reference for the relative error.
pub fn compare(a: &Image, b: &Image) -> Result<CompareReport> {
    Ok(CompareReport {
        mse: imaging::mse(a, b)?,
        mean_rse: imaging::mean_rse(a, b)?,
        ssim: imaging::ssim(a, b)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub seed: u64,
    pub photons: usize,
    pub final_loss: f64,
    /// Neural render against the photon-map render.
    pub comparison: CompareReport,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub report: PipelineReport,
    pub neural: Image,
    pub baseline: Image,
    pub field: PhotonField,
}

/// Trace, train, and render neural + photon-map images of the same scene.
pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<PipelineOutput> {
    let scene = cfg.scene()?;
    let trace = run_trace(cfg, &scene)?;
    let map = PhotonMap::build(trace.photons, trace.phase_set);
    let (field, _, report) = run_train(cfg, &map)?;
    let neural = run_render(cfg, &scene, Backend::Neural, Some(&field), None)?.to_image();
    let baseline = run_render(cfg, &scene, Backend::PhotonMap, None, Some(&map))?.to_image();
    Ok(PipelineOutput {
        report: PipelineReport {
            seed: cfg.seed,
            photons: map.len(),
            final_loss: report.final_loss(0.05),
            comparison: compare(&neural, &baseline)?,
        },
        neural,
        baseline,
        field,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendTiming {
    pub backend: Backend,
    pub seconds: f64,
    pub indirect_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub photons: usize,
    pub trace_seconds: f64,
    pub build_seconds: f64,
    pub knn_seconds: f64,
    pub knn_cpu_seconds: f64,
    pub optimizer_seconds: f64,
    pub final_loss: f64,
    pub render: Vec<BackendTiming>,
}

pub fn run_bench(cfg: &ExperimentConfig) -> Result<BenchReport> {
    let scene = cfg.scene()?;
    let t = Instant::now();
    let trace = run_trace(cfg, &scene)?;
    let trace_seconds = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let map = PhotonMap::build(trace.photons, trace.phase_set);
    let build_seconds = t.elapsed().as_secs_f64();
    let (field, _, train) = run_train(cfg, &map)?;
    let mut render = Vec::new();
    for backend in Backend::ALL {
        let fb = run_render(cfg, &scene, backend, Some(&field), Some(&map))?;
        render.push(BackendTiming {
            backend,
            seconds: fb.stats.wall.as_secs_f64(),
            indirect_seconds: fb.stats.indirect.as_secs_f64(),
        });
    }
    Ok(BenchReport {
        photons: map.len(),
        trace_seconds,
        build_seconds,
        knn_seconds: train.knn_wall.as_secs_f64(),
        knn_cpu_seconds: train.knn_cpu.as_secs_f64(),
        optimizer_seconds: train.step_wall.as_secs_f64(),
        final_loss: train.final_loss(0.05),
        render,
    })
}
