//! File formats: ASCII point clouds and meshes, binary checkpoints, run
//! configuration, loss traces and shape collections.

mod checkpoint;
mod cloud;
mod config;
mod mesh;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub use checkpoint::{checkpoint_bytes, load_checkpoint, parse_checkpoint, save_checkpoint, MAGIC, VERSION};
pub use cloud::{load_point_cloud, save_point_cloud};
pub use config::{RunConfig, KEYS};
pub use mesh::{load_mesh, save_mesh};

use crate::error::{Error, Result};
use crate::geometry::ShapeSpec;
use crate::pipeline::TraceRow;

pub const TRACE_HEADER: &str = "iteration,loss,lr";

pub fn trace_csv(trace: &[TraceRow]) -> String {
    let mut s = format!("{TRACE_HEADER}\n");
    for r in trace {
        let _ = writeln!(s, "{},{},{}", r.iteration, r.loss, r.lr);
    }
    s
}

pub fn save_trace(trace: &[TraceRow], path: &Path) -> Result<()> {
    std::fs::write(path, trace_csv(trace))?;
    Ok(())
}

pub fn load_trace(path: &Path) -> Result<Vec<TraceRow>> {
    let text = std::fs::read_to_string(path)?;
    let err = |line: usize, message: &str| Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.to_string(),
    };
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(TRACE_HEADER) {
        return Err(err(1, "expected header `iteration,loss,lr`"));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').map(str::trim).collect();
            if f.len() != 3 {
                return Err(err(i + 2, "expected 3 fields"));
            }
            Ok(TraceRow {
                iteration: f[0].parse().map_err(|_| err(i + 2, "bad iteration"))?,
                loss: f[1].parse().map_err(|_| err(i + 2, "bad loss"))?,
                lr: f[2].parse().map_err(|_| err(i + 2, "bad lr"))?,
            })
        })
        .collect()
}

pub fn save_shape(spec: &ShapeSpec, path: &Path) -> Result<()> {
    std::fs::write(path, spec.to_json()?)?;
    Ok(())
}

pub fn load_shape(path: &Path) -> Result<ShapeSpec> {
    ShapeSpec::from_json(&std::fs::read_to_string(path)?)
}

/// Every `*.json` shape in `dir`, in file-name order.
pub fn load_shapes(dir: &Path) -> Result<Vec<(PathBuf, ShapeSpec)>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let s = load_shape(&p)?;
            Ok((p, s))
        })
        .collect()
}
