//! Affine layer stacks, deterministic seeded initialization and the
//! manifest + float32 blob weight file convention.
//!
//! A weight file is a JSON manifest naming the layer shapes plus a sibling
//! raw blob holding, per layer, the row-major weight matrix followed by the
//! bias vector, all little-endian float32.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// y = W x + b with W stored row-major (out_dim x in_dim). Batch-norm style
/// scale/shift is assumed pre-folded into W and b.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl AffineLayer {
    pub fn new(in_dim: usize, out_dim: usize, weight: Vec<f32>, bias: Vec<f32>) -> Result<Self> {
        if weight.len() != in_dim * out_dim || bias.len() != out_dim {
            return Err(Error::Config(format!(
                "affine layer {}x{}: got {} weights, {} biases",
                out_dim,
                in_dim,
                weight.len(),
                bias.len()
            )));
        }
        Ok(AffineLayer {
            in_dim,
            out_dim,
            weight,
            bias,
        })
    }

    pub fn identity(dim: usize) -> Self {
        let mut weight = vec![0.0; dim * dim];
        for i in 0..dim {
            weight[i * dim + i] = 1.0;
        }
        AffineLayer {
            in_dim: dim,
            out_dim: dim,
            weight,
            bias: vec![0.0; dim],
        }
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        AffineLayer {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    pub fn seeded(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let scale = (1.0 / in_dim as f64).sqrt();
        let weight = (0..in_dim * out_dim)
            .map(|_| (rng.gen_range(-scale..scale)) as f32)
            .collect();
        let bias = (0..out_dim)
            .map(|_| (rng.gen_range(-scale..scale)) as f32)
            .collect();
        AffineLayer {
            in_dim,
            out_dim,
            weight,
            bias,
        }
    }

    pub fn apply(&self, input: &[f32], output: &mut [f32]) {
        debug_assert_eq!(input.len(), self.in_dim);
        debug_assert_eq!(output.len(), self.out_dim);
        for (o, out_v) in output.iter_mut().enumerate() {
            let row = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = self.bias[o];
            for (w, x) in row.iter().zip(input) {
                acc += w * x;
            }
            *out_v = acc;
        }
    }

    pub fn apply_vec(&self, input: &[f32]) -> Vec<f32> {
        let mut out = vec![0.0; self.out_dim];
        self.apply(input, &mut out);
        out
    }
}

pub fn relu_in_place(v: &mut [f32]) {
    for x in v.iter_mut() {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// A stack of affine layers with consistent chaining dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpWeights {
    pub layers: Vec<AffineLayer>,
}

impl MlpWeights {
    pub fn new(layers: Vec<AffineLayer>) -> Result<Self> {
        for pair in layers.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::Config(format!(
                    "layer dims do not chain: {} -> {}",
                    pair[0].out_dim, pair[1].in_dim
                )));
            }
        }
        if layers.is_empty() {
            return Err(Error::Config("mlp needs at least one layer".into()));
        }
        Ok(MlpWeights { layers })
    }

    pub fn seeded(dims: &[usize], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = dims
            .windows(2)
            .map(|w| AffineLayer::seeded(w[0], w[1], &mut rng))
            .collect();
        MlpWeights::new(layers)
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim
    }

    /// Affine -> ReLU after every layer, including the last.
    pub fn forward_relu_all(&self, input: &[f32]) -> Vec<f32> {
        let mut cur = input.to_vec();
        for layer in &self.layers {
            let mut next = layer.apply_vec(&cur);
            relu_in_place(&mut next);
            cur = next;
        }
        cur
    }

    /// Affine -> ReLU between layers, plain affine output on the last.
    pub fn forward_relu_hidden(&self, input: &[f32]) -> Vec<f32> {
        let mut cur = input.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut next = layer.apply_vec(&cur);
            if i + 1 < self.layers.len() {
                relu_in_place(&mut next);
            }
            cur = next;
        }
        cur
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerShape {
    out: usize,
    #[serde(rename = "in")]
    in_dim: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: String,
    layers: Vec<LayerShape>,
    blob: String,
}

const MANIFEST_VERSION: &str = "wts_v1";

pub fn save_mlp(path: &Path, mlp: &MlpWeights) -> Result<()> {
    let blob_name = format!(
        "{}.bin",
        path.file_stem().and_then(|s| s.to_str()).unwrap_or("weights")
    );
    let manifest = Manifest {
        version: MANIFEST_VERSION.into(),
        layers: mlp
            .layers
            .iter()
            .map(|l| LayerShape {
                out: l.out_dim,
                in_dim: l.in_dim,
            })
            .collect(),
        blob: blob_name.clone(),
    };
    std::fs::write(path, serde_json::to_vec_pretty(&manifest)?)?;
    let blob_path = path.with_file_name(blob_name);
    let mut w = std::io::BufWriter::new(std::fs::File::create(blob_path)?);
    for layer in &mlp.layers {
        for v in layer.weight.iter().chain(layer.bias.iter()) {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_mlp(path: &Path) -> Result<MlpWeights> {
    let manifest: Manifest = serde_json::from_slice(&std::fs::read(path)?)?;
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::Format(format!(
            "unsupported weight manifest version {}",
            manifest.version
        )));
    }
    let blob_path = path.with_file_name(&manifest.blob);
    let blob = std::fs::read(blob_path)?;
    let expected: usize = manifest
        .layers
        .iter()
        .map(|l| (l.out * l.in_dim + l.out) * 4)
        .sum();
    if blob.len() != expected {
        return Err(Error::Format(format!(
            "weight blob has {} bytes, manifest implies {}",
            blob.len(),
            expected
        )));
    }
    let mut floats = blob
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()));
    let mut layers = Vec::with_capacity(manifest.layers.len());
    for shape in &manifest.layers {
        let weight: Vec<f32> = floats.by_ref().take(shape.out * shape.in_dim).collect();
        let bias: Vec<f32> = floats.by_ref().take(shape.out).collect();
        layers.push(AffineLayer::new(shape.in_dim, shape.out, weight, bias)?);
    }
    MlpWeights::new(layers)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_shape_checked() {
        assert!(AffineLayer::new(2, 3, vec![0.0; 5], vec![0.0; 3]).is_err());
    }

    #[test]
    fn identity_is_identity() {
        let l = AffineLayer::identity(3);
        assert_eq!(l.apply_vec(&[1.0, -2.0, 3.0]), vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn mismatched_chain_rejected() {
        let l1 = AffineLayer::zeros(2, 3);
        let l2 = AffineLayer::zeros(4, 1);
        assert!(MlpWeights::new(vec![l1, l2]).is_err());
    }

    #[test]
    fn seeded_deterministic() {
        let a = MlpWeights::seeded(&[8, 32, 64], 11).unwrap();
        let b = MlpWeights::seeded(&[8, 32, 64], 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("enc.json");
        let mlp = MlpWeights::seeded(&[8, 32, 64], 5).unwrap();
        save_mlp(&path, &mlp).unwrap();
        assert_eq!(load_mlp(&path).unwrap(), mlp);
    }

    #[test]
    fn blob_length_checked() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("enc.json");
        let mlp = MlpWeights::seeded(&[4, 4], 5).unwrap();
        save_mlp(&path, &mlp).unwrap();
        let blob = dir.path().join("enc.bin");
        let mut bytes = std::fs::read(&blob).unwrap();
        bytes.pop();
        std::fs::write(&blob, bytes).unwrap();
        assert!(load_mlp(&path).is_err());
    }
}
