//! Quasi-online training: every step draws a fresh batch of uniform queries,
//! computes KNN radiance targets at the scheduled radius, and takes one
//! optimizer step.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::estimator::{encode_unchecked, EncodingConfig};
use crate::field::{AdamConfig, AdamState, FieldQuery, PhotonField};
use crate::math::Vec3;
use crate::photon_map::{KnnQuery, KnnScratch, PhotonMap};
use crate::rng::{self, uniform};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    /// Training progress (step / total) at which this segment ends.
    pub end: f64,
    pub radius: f64,
}

/// Piecewise-constant KNN radius over training progress.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Segment>", into = "Vec<Segment>")]
pub struct KnnSchedule(Vec<Segment>);

impl KnnSchedule {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        let Some(last) = segments.last() else {
            return Err(Error::config("KNN schedule needs at least one segment"));
        };
        if last.end != 1.0 {
            return Err(Error::config("the last schedule segment must end at 1.0"));
        }
        for s in &segments {
            if !(s.end > 0.0 && s.end <= 1.0) || !(s.radius > 0.0 && s.radius.is_finite()) {
                return Err(Error::config(format!("invalid schedule segment {s:?}")));
            }
        }
        for w in segments.windows(2) {
            if w[1].end <= w[0].end || w[1].radius <= w[0].radius {
                return Err(Error::config(
                    "schedule ends and radii must be strictly increasing",
                ));
            }
        }
        Ok(KnnSchedule(segments))
    }

    pub fn constant(radius: f64) -> Result<Self> {
        KnnSchedule::new(vec![Segment { end: 1.0, radius }])
    }

    /// Four segments at 36/63/90/100 % of training.
    pub fn staggered(radii: [f64; 4]) -> Result<Self> {
        let ends = [0.36, 0.63, 0.90, 1.0];
        KnnSchedule::new(
            ends.iter()
                .zip(radii)
                .map(|(&end, radius)| Segment { end, radius })
                .collect(),
        )
    }

    /// Radii used for million-photon maps in dataset units.
    pub fn million_photons() -> Self {
        KnnSchedule::staggered([0.25, 0.5, 2.5, 5.0]).unwrap()
    }

    pub fn segments(&self) -> &[Segment] {
        &self.0
    }

    pub fn final_radius(&self) -> f64 {
        self.0.last().unwrap().radius
    }
}

impl Default for KnnSchedule {
    /// Unit-cube radii for maps of a few 10^5 photons.
    fn default() -> Self {
        KnnSchedule::staggered([0.05, 0.07, 0.085, 0.1]).unwrap()
    }
}

impl TryFrom<Vec<Segment>> for KnnSchedule {
    type Error = Error;
    fn try_from(v: Vec<Segment>) -> Result<Self> {
        KnnSchedule::new(v)
    }
}

impl From<KnnSchedule> for Vec<Segment> {
    fn from(s: KnnSchedule) -> Self {
        s.0
    }
}

/// Radius of the first segment whose end is at or past `(step + 1) / total`.
pub fn schedule_radius(s: &KnnSchedule, step: usize, total: usize) -> f64 {
    let progress = (step + 1) as f64 / total.max(1) as f64;
    s.0.iter()
        .find(|seg| seg.end >= progress)
        .unwrap_or_else(|| s.0.last().unwrap())
        .radius
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub total_steps: usize,
    pub batch_size: usize,
    pub k_neighbors: usize,
    pub schedule: KnnSchedule,
    pub encoding: EncodingConfig,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            total_steps: 3000,
            batch_size: 1 << 12,
            k_neighbors: 256,
            schedule: KnnSchedule::default(),
            encoding: EncodingConfig::default(),
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.total_steps == 0 || self.batch_size == 0 || self.k_neighbors == 0 {
            return Err(Error::config(
                "total_steps, batch_size and k_neighbors must be positive",
            ));
        }
        self.encoding.validate()?;
        self.adam.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub queries: Vec<FieldQuery>,
    /// Log-encoded targets, each channel in [0, 1].
    pub targets: Vec<[f64; 3]>,
    /// Queries that found exactly `k_neighbors` photons.
    pub saturated: usize,
    /// Sum over chunks of the time spent in KNN + estimation.
    pub cpu_time: Duration,
}

const BATCH_CHUNK: usize = 256;

/// Uniform positions, uniform directions, phases uniform over the map's set;
/// targets are encoded KNN estimates at the scheduled radius.
/// Queries, targets, saturated count and CPU time of one batch chunk.
type ChunkOut = (Vec<FieldQuery>, Vec<[f64; 3]>, usize, Duration);

pub fn make_batch(map: &PhotonMap, cfg: &TrainConfig, step: usize) -> Result<Batch> {
    cfg.validate()?;
    let radius = schedule_radius(&cfg.schedule, step, cfg.total_steps);
    let seed = rng::derive_seed(cfg.seed, "train-batch");
    let n_phases = map.phase_set().len();
    let chunks: Vec<ChunkOut> = (0..cfg.batch_size.div_ceil(BATCH_CHUNK))
        .into_par_iter()
        .map(|c| {
            let start = Instant::now();
            let lo = c * BATCH_CHUNK;
            let hi = (lo + BATCH_CHUNK).min(cfg.batch_size);
            let mut scratch = KnnScratch::default();
            let mut neighbors = Vec::new();
            let mut queries = Vec::with_capacity(hi - lo);
            let mut targets = Vec::with_capacity(hi - lo);
            let mut saturated = 0;
            for i in lo..hi {
                let mut r = rng::stream2(seed, step as u64, i as u64);
                let x = Vec3::new(uniform(&mut r), uniform(&mut r), uniform(&mut r));
                let omega = Vec3::uniform_sphere(uniform(&mut r), uniform(&mut r));
                let tag = ((uniform(&mut r) * n_phases as f64) as usize).min(n_phases - 1) as u8;
                let g = map.phase_set().get(tag);
                let q = KnnQuery {
                    position: x,
                    phase: tag,
                    k: cfg.k_neighbors,
                    r_max: radius,
                };
                let l = map.radiance(&q, omega, &mut scratch, &mut neighbors);
                saturated += usize::from(neighbors.len() == cfg.k_neighbors);
                queries.push(FieldQuery::new(x, omega, g));
                targets.push(encode_unchecked(l, &cfg.encoding).0);
            }
            (queries, targets, saturated, start.elapsed())
        })
        .collect();
    let mut batch = Batch {
        queries: Vec::with_capacity(cfg.batch_size),
        targets: Vec::with_capacity(cfg.batch_size),
        saturated: 0,
        cpu_time: Duration::ZERO,
    };
    for (q, t, s, d) in chunks {
        batch.queries.extend(q);
        batch.targets.extend(t);
        batch.saturated += s;
        batch.cpu_time += d;
    }
    Ok(batch)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub radius: f64,
    pub learning_rate: f64,
    /// Cumulative wall-clock seconds spent generating batches.
    pub knn_seconds: f64,
    pub saturated_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub records: Vec<StepRecord>,
    pub knn_wall: Duration,
    pub knn_cpu: Duration,
    pub step_wall: Duration,
}

impl TrainReport {
    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }

    /// Mean loss over the last `fraction` of the steps (at least one step).
    pub fn final_loss(&self, fraction: f64) -> f64 {
        let n = ((self.records.len() as f64 * fraction).ceil() as usize)
            .clamp(1, self.records.len().max(1));
        let tail = &self.records[self.records.len() - n..];
        tail.iter().map(|r| r.loss).sum::<f64>() / n as f64
    }
}

/// Trains `field` on `map` with a fresh optimizer.
pub fn train(
    field: &mut PhotonField,
    map: &PhotonMap,
    cfg: &TrainConfig,
) -> Result<(TrainReport, AdamState)> {
    let mut adam = AdamState::new(cfg.adam, field.param_count(), cfg.total_steps as u64)?;
    let report = train_with(field, &mut adam, map, cfg)?;
    Ok((report, adam))
}

/// Continues training from `adam.step` up to `cfg.total_steps`.
pub fn train_with(
    field: &mut PhotonField,
    adam: &mut AdamState,
    map: &PhotonMap,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    train_until(field, adam, map, cfg, cfg.total_steps)
}

/// Like [`train_with`] but stops before step `end`; the schedule still
/// spans `cfg.total_steps`, so a run can be split and resumed exactly.
pub fn train_until(
    field: &mut PhotonField,
    adam: &mut AdamState,
    map: &PhotonMap,
    cfg: &TrainConfig,
    end: usize,
) -> Result<TrainReport> {
    cfg.validate()?;
    if adam.total_steps != cfg.total_steps as u64 {
        return Err(Error::config(
            "optimizer state was created for a different step count",
        ));
    }
    if field.meta.phase_set != *map.phase_set() {
        return Err(Error::config(format!(
            "field phase set {:?} differs from the map's {:?}",
            field.meta.phase_set.values(),
            map.phase_set().values()
        )));
    }
    if field.meta.encoding != cfg.encoding {
        return Err(Error::config(
            "field encoding differs from the training configuration",
        ));
    }
    let mut report = TrainReport {
        records: Vec::with_capacity(cfg.total_steps),
        knn_wall: Duration::ZERO,
        knn_cpu: Duration::ZERO,
        step_wall: Duration::ZERO,
    };
    for step in adam.step as usize..end.min(cfg.total_steps) {
        let t0 = Instant::now();
        let batch = make_batch(map, cfg, step)?;
        report.knn_wall += t0.elapsed();
        report.knn_cpu += batch.cpu_time;
        let lr = adam.learning_rate();
        let t1 = Instant::now();
        let loss = field.train_step(&batch.queries, &batch.targets, adam)?;
        report.step_wall += t1.elapsed();
        report.records.push(StepRecord {
            step,
            loss,
            radius: schedule_radius(&cfg.schedule, step, cfg.total_steps),
            learning_rate: lr,
            knn_seconds: report.knn_wall.as_secs_f64(),
            saturated_fraction: batch.saturated as f64 / cfg.batch_size as f64,
        });
    }
    Ok(report)
}

/// `step,loss,radius,lr,knn_time` per line.
pub fn write_training_log(path: &Path, records: &[StepRecord]) -> Result<()> {
    let mut out = String::from("step,loss,radius,lr,knn_time\n");
    for r in records {
        let _ = writeln!(
            out,
            "{},{:e},{},{:e},{:.6}",
            r.step, r.loss, r.radius, r.learning_rate, r.knn_seconds
        );
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::photon::PhaseSet;

    #[test]
    fn million_photon_schedule_lookups() {
        let s = KnnSchedule::million_photons();
        assert_eq!(schedule_radius(&s, 0, 3000), 0.25);
        assert_eq!(schedule_radius(&s, 2950, 3000), 5.0);
        assert_eq!(schedule_radius(&s, 1079, 3000), 0.25);
        assert_eq!(schedule_radius(&s, 1080, 3000), 0.5);
        assert_eq!(schedule_radius(&s, 2999, 3000), 5.0);
    }

    #[test]
    fn schedule_validation() {
        assert!(KnnSchedule::new(vec![]).is_err());
        assert!(KnnSchedule::staggered([0.1, 0.1, 0.2, 0.3]).is_err());
        assert!(KnnSchedule::new(vec![Segment {
            end: 0.9,
            radius: 1.0
        }])
        .is_err());
        assert!(KnnSchedule::constant(0.0).is_err());
    }

    #[test]
    fn schedule_round_trips_through_toml() {
        #[derive(Serialize, Deserialize)]
        struct Wrap {
            s: KnnSchedule,
        }
        let text = toml::to_string(&Wrap {
            s: KnnSchedule::million_photons(),
        })
        .unwrap();
        let back: Wrap = toml::from_str(&text).unwrap();
        assert_eq!(back.s, KnnSchedule::million_photons());
    }

    #[test]
    fn empty_map_targets_are_one() {
        let map = PhotonMap::build(Vec::new(), PhaseSet::standard());
        let cfg = TrainConfig {
            batch_size: 100,
            ..Default::default()
        };
        let batch = make_batch(&map, &cfg, 0).unwrap();
        assert_eq!(batch.queries.len(), 100);
        assert!(batch.targets.iter().all(|t| *t == [1.0; 3]));
    }

    #[test]
    fn batches_are_reproducible() {
        let map = PhotonMap::build(Vec::new(), PhaseSet::standard());
        let cfg = TrainConfig {
            batch_size: 300,
            ..Default::default()
        };
        let a = make_batch(&map, &cfg, 5).unwrap();
        let b = make_batch(&map, &cfg, 5).unwrap();
        assert_eq!(a.queries, b.queries);
        let c = make_batch(&map, &cfg, 6).unwrap();
        assert_ne!(a.queries, c.queries);
    }
}
