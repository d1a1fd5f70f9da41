//! Field checkpoints.
//!
//! Little-endian layout:
//!
//! ```text
//! magic "PFFIELD\0", version u32
//! position grid: levels u32, features u32, base u32, growth f64, table_log2 u32
//! direction grid: same
//! mlp: hidden_layers u32, width u32
//! psi u32, phase count u32, phases f64[], steps_trained u64
//! adam: lr, beta1, beta2, epsilon, decay, decay_start f64; interval u32;
//!       total_steps u64, step u64
//! parameter count u64, params f64[], m f64[], v f64[]
//! ```

use std::fs;
use std::path::Path;

use super::{
    AdamConfig, AdamState, FieldConfig, FieldMeta, HashGridConfig, MlpConfig, PhotonField,
};
use crate::estimator::EncodingConfig;
use crate::photon::PhaseSet;
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"PFFIELD\0";
const VERSION: u32 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn grid(&mut self, g: &HashGridConfig) {
        self.u32(g.levels);
        self.u32(g.features_per_level);
        self.u32(g.base_resolution);
        self.f64(g.growth_factor);
        self.u32(g.table_size_log2);
    }
}

struct Reader<'a>(&'a [u8]);

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        if self.0.len() < N {
            return Err(Error::format("field checkpoint", "unexpected end of file"));
        }
        let (head, rest) = self.0.split_at(N);
        self.0 = rest;
        Ok(head.try_into().unwrap())
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        if self.0.len() / 8 < n {
            return Err(Error::format("field checkpoint", "unexpected end of file"));
        }
        (0..n).map(|_| self.f64()).collect()
    }
    fn grid(&mut self) -> Result<HashGridConfig> {
        Ok(HashGridConfig {
            levels: self.u32()?,
            features_per_level: self.u32()?,
            base_resolution: self.u32()?,
            growth_factor: self.f64()?,
            table_size_log2: self.u32()?,
        })
    }
}

pub fn save_checkpoint(path: &Path, field: &PhotonField, adam: &AdamState) -> Result<()> {
    if adam.m.len() != field.param_count() {
        return Err(Error::input("optimizer state does not match the field"));
    }
    let mut w = Writer(Vec::with_capacity(24 * field.param_count() + 256));
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION);
    let cfg = field.config();
    w.grid(&cfg.position);
    w.grid(&cfg.direction);
    w.u32(cfg.mlp.hidden_layers);
    w.u32(cfg.mlp.width);
    w.u32(field.meta.encoding.psi);
    let phases = field.meta.phase_set.values();
    w.u32(phases.len() as u32);
    for &g in phases {
        w.f64(g);
    }
    w.u64(field.meta.steps_trained);
    let a = &adam.config;
    for v in [
        a.learning_rate,
        a.beta1,
        a.beta2,
        a.epsilon,
        a.decay,
        a.decay_start,
    ] {
        w.f64(v);
    }
    w.u32(a.decay_interval);
    w.u64(adam.total_steps);
    w.u64(adam.step);
    w.u64(field.param_count() as u64);
    for vec in [field.params(), &adam.m, &adam.v] {
        for &v in vec {
            w.f64(v);
        }
    }
    fs::write(path, w.0).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(PhotonField, AdamState)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader(&bytes);
    if &r.take::<8>()? != MAGIC {
        return Err(Error::format("field checkpoint", "bad magic"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::format(
            "field checkpoint",
            format!("unsupported version {version}"),
        ));
    }
    let position = r.grid()?;
    let direction = r.grid()?;
    let mlp = MlpConfig {
        hidden_layers: r.u32()?,
        width: r.u32()?,
    };
    let encoding = EncodingConfig { psi: r.u32()? };
    let n_phases = r.u32()? as usize;
    if n_phases > 255 {
        return Err(Error::format("field checkpoint", "too many phases"));
    }
    let phases = r.f64s(n_phases)?;
    let phase_set =
        PhaseSet::new(phases).map_err(|e| Error::format("field checkpoint", e.to_string()))?;
    let steps_trained = r.u64()?;
    let config = AdamConfig {
        learning_rate: r.f64()?,
        beta1: r.f64()?,
        beta2: r.f64()?,
        epsilon: r.f64()?,
        decay: r.f64()?,
        decay_start: r.f64()?,
        decay_interval: r.u32()?,
    };
    let total_steps = r.u64()?;
    let step = r.u64()?;
    let n = r.u64()? as usize;
    let params = r.f64s(n)?;
    let m = r.f64s(n)?;
    let v = r.f64s(n)?;
    if !r.0.is_empty() {
        return Err(Error::format("field checkpoint", "trailing bytes"));
    }
    let field_config = FieldConfig {
        position,
        direction,
        mlp,
    };
    let meta = FieldMeta {
        phase_set,
        encoding,
        steps_trained,
    };
    let field = PhotonField::from_parts(field_config, meta, params)?;
    let mut adam = AdamState::new(config, n, total_steps)?;
    adam.step = step;
    adam.m = m;
    adam.v = v;
    Ok((field, adam))
}
