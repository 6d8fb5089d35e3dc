//! Checkpoint format: a text manifest plus raw tensor data.
//!
//! `<stem>.manifest` lists one tensor per line as `name dim0 dim1 ...`;
//! `<stem>.bin` holds the tensors' little-endian 32-bit floats concatenated
//! in manifest order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::model::{ModelParams, ModelSpec};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Write `<stem>.manifest` and `<stem>.bin`.
pub fn save_checkpoint(params: &ModelParams<f32>, stem: &Path) -> Result<()> {
    let mut manifest = String::new();
    let mut bin: Vec<u8> = Vec::new();
    for (name, tensor) in params.named_tensors() {
        manifest.push_str(&name);
        for d in tensor.shape() {
            manifest.push(' ');
            manifest.push_str(&d.to_string());
        }
        manifest.push('\n');
        for &v in tensor.data() {
            bin.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(stem.with_extension("manifest"), manifest)?;
    let mut f = fs::File::create(stem.with_extension("bin"))?;
    f.write_all(&bin)?;
    Ok(())
}

/// Load a checkpoint produced by [`save_checkpoint`]. Tensor names and
/// shapes must match the architecture exactly.
pub fn load_checkpoint(spec: ModelSpec, stem: &Path) -> Result<ModelParams<f32>> {
    let manifest = fs::read_to_string(stem.with_extension("manifest"))?;
    let mut bin = Vec::new();
    fs::File::open(stem.with_extension("bin"))?.read_to_end(&mut bin)?;

    let mut entries: Vec<(String, Vec<usize>)> = Vec::new();
    for (lineno, line) in manifest.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let name = parts
            .next()
            .ok_or_else(|| Error::Checkpoint(format!("manifest line {}: empty", lineno + 1)))?
            .to_string();
        let dims: Vec<usize> = parts
            .map(|p| {
                p.parse::<usize>().map_err(|_| {
                    Error::Checkpoint(format!("manifest line {}: bad dimension {p}", lineno + 1))
                })
            })
            .collect::<Result<_>>()?;
        entries.push((name, dims));
    }

    // Template parameters give the expected names/shapes in order.
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let mut params = ModelParams::<f32>::init(spec, &mut rng);
    let expected = params.named_tensors();
    if entries.len() != expected.len() {
        return Err(Error::Checkpoint(format!(
            "manifest lists {} tensors, architecture has {}",
            entries.len(),
            expected.len()
        )));
    }
    for ((name, dims), (want_name, want_tensor)) in entries.iter().zip(&expected) {
        if name != want_name || dims != want_tensor.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor {name} {dims:?} does not match architecture entry {want_name} {:?}",
                want_tensor.shape()
            )));
        }
    }
    let total: usize = entries.iter().map(|(_, d)| d.iter().product::<usize>()).sum();
    if bin.len() != total * 4 {
        return Err(Error::Checkpoint(format!(
            "binary payload holds {} bytes, expected {}",
            bin.len(),
            total * 4
        )));
    }

    let mut offset = 0usize;
    for (_, tensor) in params.named_tensors_mut() {
        let count = tensor.len();
        let mut data = Vec::with_capacity(count);
        for i in 0..count {
            let at = (offset + i) * 4;
            data.push(f32::from_le_bytes([
                bin[at],
                bin[at + 1],
                bin[at + 2],
                bin[at + 3],
            ]));
        }
        *tensor = Tensor::from_vec(tensor.shape().to_vec().as_slice(), data)?;
        offset += count;
    }
    Ok(params)
}

use rand::SeedableRng;
