//! Volume and transfer-function files.
//!
//! A volume is a header-less little-endian binary32 array (x fastest) plus a
//! `.meta` text file next to it:
//!
//! ```text
//! dims_x = 64
//! dims_y = 64
//! dims_z = 64
//! value_min = 0      # optional, rescales raw values to [0,1]
//! value_max = 1      # optional
//! ```
//!
//! A transfer function is one `scalar r g b a` line per control point; `#`
//! starts a comment.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{TransferFunction, VolumeGrid};
use crate::{Error, Result};

fn meta_path(raw: &Path) -> PathBuf {
    raw.with_extension("meta")
}

/// Writes `<path>` (raw binary32) and `<path>.meta`.
pub fn write_volume(grid: &VolumeGrid, path: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(grid.data().len() * 4);
    for v in grid.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let [x, y, z] = grid.dims();
    let meta = format!("dims_x = {x}\ndims_y = {y}\ndims_z = {z}\nvalue_min = 0\nvalue_max = 1\n");
    let meta_file = meta_path(path);
    fs::write(&meta_file, meta).map_err(|e| Error::io(meta_file, e))
}

/// Reads a raw volume and its `.meta` sidecar, normalizing to [0,1] when a
/// value range is given.
pub fn read_volume(path: &Path) -> Result<VolumeGrid> {
    let meta_file = meta_path(path);
    let meta = fs::read_to_string(&meta_file).map_err(|e| Error::io(&meta_file, e))?;
    let mut dims = [None; 3];
    let mut range = (None, None);
    for line in meta.lines() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .or_else(|| line.split_once(char::is_whitespace))
            .ok_or_else(|| {
                Error::format("volume metadata", format!("cannot parse line `{line}`"))
            })?;
        let value = value.trim();
        let bad = || {
            Error::format(
                "volume metadata",
                format!("bad value for {}: `{value}`", key.trim()),
            )
        };
        match key.trim() {
            "dims_x" => dims[0] = Some(value.parse::<usize>().map_err(|_| bad())?),
            "dims_y" => dims[1] = Some(value.parse::<usize>().map_err(|_| bad())?),
            "dims_z" => dims[2] = Some(value.parse::<usize>().map_err(|_| bad())?),
            "value_min" => range.0 = Some(value.parse::<f64>().map_err(|_| bad())?),
            "value_max" => range.1 = Some(value.parse::<f64>().map_err(|_| bad())?),
            other => {
                return Err(Error::format(
                    "volume metadata",
                    format!("unknown key `{other}`"),
                ));
            }
        }
    }
    let dims = match dims {
        [Some(x), Some(y), Some(z)] => [x, y, z],
        _ => {
            return Err(Error::format(
                "volume metadata",
                "dims_x, dims_y and dims_z are required",
            ))
        }
    };

    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let expected = dims[0] * dims[1] * dims[2] * 4;
    if bytes.len() != expected {
        return Err(Error::format(
            "volume data",
            format!(
                "{} has {} bytes, dims {dims:?} need {expected}",
                path.display(),
                bytes.len()
            ),
        ));
    }
    let raw = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
    let data: Vec<f32> = match range {
        (Some(lo), Some(hi)) if hi > lo && (lo != 0.0 || hi != 1.0) => raw
            .map(|v| (((v as f64 - lo) / (hi - lo)).clamp(0.0, 1.0)) as f32)
            .collect(),
        (Some(lo), Some(hi)) if hi <= lo => {
            return Err(Error::format(
                "volume metadata",
                format!("value_max {hi} <= value_min {lo}"),
            ));
        }
        _ => raw.collect(),
    };
    VolumeGrid::new(dims, data)
}

pub fn write_transfer_function(tf: &TransferFunction, path: &Path) -> Result<()> {
    let mut out = String::from("# scalar r g b a\n");
    for (s, c) in tf.points() {
        let _ = writeln!(out, "{s} {} {} {} {}", c[0], c[1], c[2], c[3]);
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_transfer_function(path: &Path) -> Result<TransferFunction> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut points = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let values: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| {
                Error::format(
                    "transfer function",
                    format!("line {}: `{line}`", lineno + 1),
                )
            })?;
        let [s, r, g, b, a] = values[..] else {
            return Err(Error::format(
                "transfer function",
                format!(
                    "line {}: expected 5 numbers, got {}",
                    lineno + 1,
                    values.len()
                ),
            ));
        };
        points.push((s, [r, g, b, a]));
    }
    TransferFunction::new(points)
}
