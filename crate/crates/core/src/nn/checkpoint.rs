//! Plain-text model checkpoints.
//!
//! Layout, one item per line:
//!
//! ```text
//! MEMSCOPE-MLP v1
//! layers <L>
//! layer <d_in> <d_out>        # repeated L times, each followed by:
//! <d_in*d_out weights, row-major, space separated>
//! <d_out biases, space separated>
//! ```
//!
//! Values use Rust's shortest round-trip float formatting, so a checkpoint
//! reloads bit-exactly.

use std::fmt::Write as _;
use std::path::Path;

use super::matrix::RealMatrix;
use super::model::{DenseLayer, MlpModel};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &str = "MEMSCOPE-MLP v1";

pub fn checkpoint_to_string(model: &MlpModel) -> String {
    let join = |vals: &[f64]| vals.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(" ");
    let mut out = String::new();
    let _ = writeln!(out, "{CHECKPOINT_MAGIC}");
    let _ = writeln!(out, "layers {}", model.layers().len());
    for layer in model.layers() {
        let _ = writeln!(out, "layer {} {}", layer.input_dim(), layer.output_dim());
        let _ = writeln!(out, "{}", join(layer.weights.as_slice()));
        let _ = writeln!(out, "{}", join(&layer.bias));
    }
    out
}

pub fn checkpoint_from_str(text: &str) -> Result<MlpModel> {
    let mut lines = text.lines();
    let mut next = |what: &str| lines.next().ok_or_else(|| Error::Checkpoint(format!("truncated before {what}")));
    if next("magic")?.trim() != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic string".into()));
    }
    let count: usize = next("layer count")?
        .strip_prefix("layers ")
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| Error::Checkpoint("bad layer count line".into()))?;
    let parse_vals = |line: &str, expected: usize| -> Result<Vec<f64>> {
        let vals = line
            .split_whitespace()
            .map(str::parse::<f64>)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Checkpoint(format!("bad value: {e}")))?;
        if vals.len() != expected {
            return Err(Error::Checkpoint(format!("expected {expected} values, found {}", vals.len())));
        }
        Ok(vals)
    };
    let mut layers = Vec::with_capacity(count);
    for i in 0..count {
        let dims: Vec<usize> = next("layer header")?
            .strip_prefix("layer ")
            .map(|s| s.split_whitespace().filter_map(|t| t.parse().ok()).collect())
            .unwrap_or_default();
        let [d_in, d_out] = dims[..] else {
            return Err(Error::Checkpoint(format!("bad header for layer {i}")));
        };
        let weights = parse_vals(next("weights")?, d_in * d_out)?;
        let bias = parse_vals(next("bias")?, d_out)?;
        layers.push(DenseLayer::new(RealMatrix::from_vec(d_in, d_out, weights)?, bias)?);
    }
    MlpModel::from_layers(layers)
}

pub fn write_checkpoint(model: &MlpModel, path: &Path) -> Result<()> {
    std::fs::write(path, checkpoint_to_string(model)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<MlpModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_str(&text)
}
