//! Parameter checkpoints: `params.bin` holds every tensor as little-endian
//! `f64` values back to back; `manifest.txt` has one line per tensor,
//! `<group>/<name> <rows> <cols> <offset>`, with the offset counted in values.

use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use super::{ParamGroup, ParamSet};
use crate::autodiff::Tensor;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io: {0}")]
    Io(#[from] io::Error),
    #[error("manifest line {line}: {msg}")]
    Manifest { line: usize, msg: String },
    #[error("tensor {0} missing from checkpoint")]
    Missing(String),
    #[error("tensor {name} has shape {got:?} in checkpoint, expected {expected:?}")]
    Shape { name: String, expected: (usize, usize), got: (usize, usize) },
}

pub fn save(params: &ParamSet, dir: &Path) -> Result<(), CheckpointError> {
    fs::create_dir_all(dir)?;
    let mut bin = Vec::new();
    let mut manifest = String::new();
    let mut offset = 0;
    for grp in params.groups() {
        for (name, t) in grp.names.iter().zip(&grp.tensors) {
            manifest.push_str(&format!("{}/{} {} {} {}\n", grp.name, name, t.rows, t.cols, offset));
            for v in &t.data {
                bin.extend_from_slice(&v.to_le_bytes());
            }
            offset += t.len();
        }
    }
    fs::write(dir.join("params.bin"), bin)?;
    fs::write(dir.join("manifest.txt"), manifest)?;
    Ok(())
}

/// Loads a checkpoint into `params`, whose layout must match the stored one.
pub fn load(params: &mut ParamSet, dir: &Path) -> Result<(), CheckpointError> {
    let bin = fs::read(dir.join("params.bin"))?;
    let manifest = fs::read_to_string(dir.join("manifest.txt"))?;
    let values: Vec<f64> = bin.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    let mut entries = std::collections::HashMap::new();
    for (i, line) in manifest.lines().enumerate() {
        let bad = |msg: &str| CheckpointError::Manifest { line: i + 1, msg: msg.to_string() };
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 4 {
            return Err(bad("expected 4 fields"));
        }
        let nums: Result<Vec<usize>, _> = parts[1..].iter().map(|p| p.parse::<usize>()).collect();
        let nums = nums.map_err(|_| bad("non-numeric field"))?;
        if nums[2] + nums[0] * nums[1] > values.len() {
            return Err(bad("tensor extends past end of params.bin"));
        }
        entries.insert(parts[0].to_string(), (nums[0], nums[1], nums[2]));
    }
    for grp in params.groups_mut() {
        fill_group(grp, &entries, &values)?;
    }
    Ok(())
}

fn fill_group(
    grp: &mut ParamGroup,
    entries: &std::collections::HashMap<String, (usize, usize, usize)>,
    values: &[f64],
) -> Result<(), CheckpointError> {
    for (name, t) in grp.names.iter().zip(grp.tensors.iter_mut()) {
        let key = format!("{}/{}", grp.name, name);
        let &(rows, cols, off) = entries.get(&key).ok_or_else(|| CheckpointError::Missing(key.clone()))?;
        if (rows, cols) != t.shape() {
            return Err(CheckpointError::Shape { name: key, expected: t.shape(), got: (rows, cols) });
        }
        *t = Tensor::from_vec(rows, cols, values[off..off + rows * cols].to_vec());
    }
    Ok(())
}
