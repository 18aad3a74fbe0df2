//! End-to-end dual-branch forward pipeline: project a scan into both BEV
//! partitionings, run k remap-fusion interaction stages, extract features
//! with the hybrid backbone, fuse the outputs at each point and classify.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::backbone::{argmax_labels, classify_points, BackboneWeights};
use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::grid::{CartesianGridSpec, GridSpec, PolarGridSpec};
use crate::pillar::project_cloud;
use crate::remap::{apply_remap, build_remap_table, fuse_concat_affine, fused_output_features, RemapMode};
use crate::weights::{load_mlp, AffineLayer, MlpWeights};

pub const PIPELINE_SCHEMA: &str = "pipeline_v1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub version: String,
    pub cart: CartesianGridSpec,
    pub polar: PolarGridSpec,
    /// Channel count of both branch feature maps.
    pub channels: usize,
    /// Number of bidirectional remap-fusion interaction stages.
    pub stages: usize,
    pub remap_mode: RemapMode,
    pub n_patches: usize,
    pub c_emb: usize,
    pub n_heads: usize,
    pub n_blocks: usize,
    pub num_classes: usize,
    pub seed: u64,
    /// Optional weight manifests; seeded deterministically when absent.
    pub encoder_weights: Option<PathBuf>,
    pub classifier_weights: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            version: PIPELINE_SCHEMA.into(),
            cart: CartesianGridSpec {
                x_min: -51.2,
                x_max: 51.2,
                y_min: -51.2,
                y_max: 51.2,
                width: 128,
                height: 128,
            },
            polar: PolarGridSpec {
                rho_min: 0.0,
                rho_max: 51.2,
                n_rho: 120,
                n_phi: 180,
                swap_atan2_args: false,
            },
            channels: 16,
            stages: 2,
            remap_mode: RemapMode::Bilinear,
            n_patches: 4,
            c_emb: 32,
            n_heads: 4,
            n_blocks: 2,
            num_classes: 20,
            seed: 0,
            encoder_weights: None,
            classifier_weights: None,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.version != PIPELINE_SCHEMA {
            return Err(Error::Config(format!(
                "unsupported pipeline config version {}",
                self.version
            )));
        }
        self.cart.validate()?;
        self.polar.validate()?;
        for w in [&self.encoder_weights, &self.classifier_weights].into_iter().flatten() {
            if !w.exists() {
                return Err(Error::Config(format!("weight file {} does not exist", w.display())));
            }
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct PipelineOutput {
    pub labels: Vec<u16>,
    pub scores: Vec<f32>,
}

fn stage_err(stage: &str, e: Error) -> Error {
    Error::Config(format!("pipeline stage '{stage}': {e}"))
}

pub fn run_pipeline(cloud: &PointCloud, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    cfg.validate()?;
    let cart = GridSpec::Cartesian(cfg.cart);
    let polar = GridSpec::Polar(cfg.polar);
    let c = cfg.channels;

    // two encoders with identical structure, different parameters
    let (enc_cart, enc_polar) = match &cfg.encoder_weights {
        Some(path) => {
            let w = load_mlp(path)?;
            (w.clone(), w)
        }
        None => (
            MlpWeights::seeded(&[8, 32, c], cfg.seed)?,
            MlpWeights::seeded(&[8, 32, c], cfg.seed + 1)?,
        ),
    };

    let (mut f_cart, _) =
        project_cloud(cloud, &cart, &enc_cart).map_err(|e| stage_err("project-cartesian", e))?;
    let (mut f_polar, _) =
        project_cloud(cloud, &polar, &enc_polar).map_err(|e| stage_err("project-polar", e))?;

    let p2c = build_remap_table(&polar, &cart, cfg.remap_mode)
        .map_err(|e| stage_err("remap-table-p2c", e))?;
    let c2p = build_remap_table(&cart, &polar, cfg.remap_mode)
        .map_err(|e| stage_err("remap-table-c2p", e))?;

    for stage in 0..cfg.stages {
        let mut rng_seed = cfg.seed + 1000 + stage as u64;
        let fuse_cart = seeded_fusion(2 * c, c, rng_seed);
        rng_seed += 500;
        let fuse_polar = seeded_fusion(2 * c, c, rng_seed);
        let polar_in_cart = apply_remap(&p2c, &f_polar).map_err(|e| stage_err("remap-p2c", e))?;
        let cart_in_polar = apply_remap(&c2p, &f_cart).map_err(|e| stage_err("remap-c2p", e))?;
        let new_cart = fuse_concat_affine(&polar_in_cart, &f_cart, &fuse_cart)
            .map_err(|e| stage_err("fuse-cartesian", e))?;
        let new_polar = fuse_concat_affine(&cart_in_polar, &f_polar, &fuse_polar)
            .map_err(|e| stage_err("fuse-polar", e))?;
        f_cart = new_cart;
        f_polar = new_polar;
    }

    if cfg.n_blocks > 0 {
        let bb_cart = BackboneWeights::seeded(
            cfg.cart.height,
            cfg.cart.width,
            c,
            cfg.n_patches,
            cfg.c_emb,
            cfg.n_heads,
            cfg.n_blocks,
            cfg.seed + 2000,
        )
        .map_err(|e| stage_err("backbone-cartesian", e))?;
        let bb_polar = BackboneWeights::seeded(
            cfg.polar.n_rho,
            cfg.polar.n_phi,
            c,
            cfg.n_patches,
            cfg.c_emb,
            cfg.n_heads,
            cfg.n_blocks,
            cfg.seed + 3000,
        )
        .map_err(|e| stage_err("backbone-polar", e))?;
        f_cart = bb_cart.forward(&f_cart).map_err(|e| stage_err("backbone-cartesian", e))?;
        f_polar = bb_polar.forward(&f_polar).map_err(|e| stage_err("backbone-polar", e))?;
    }

    let point_features = fused_output_features(&f_cart, &f_polar, &p2c, &cart, cloud)
        .map_err(|e| stage_err("fused-output", e))?;

    let classifier = match &cfg.classifier_weights {
        Some(path) => load_mlp(path)?,
        None => MlpWeights::seeded(&[2 * c, 64, cfg.num_classes], cfg.seed + 4000)?,
    };
    if classifier.in_dim() != 2 * c {
        return Err(stage_err(
            "classify",
            Error::Config(format!(
                "classifier expects {} inputs, fused features have {}",
                classifier.in_dim(),
                2 * c
            )),
        ));
    }
    let scores =
        classify_points(&point_features, &classifier).map_err(|e| stage_err("classify", e))?;
    let labels = argmax_labels(&scores, classifier.out_dim());
    Ok(PipelineOutput { labels, scores })
}

fn seeded_fusion(in_dim: usize, out_dim: usize, seed: u64) -> AffineLayer {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    AffineLayer::seeded(in_dim, out_dim, &mut rng)
}

/// FNV-1a over arbitrary bytes, used for regression and determinism checks.
pub fn checksum_bytes(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

pub fn checksum_f32(values: &[f32]) -> u64 {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    checksum_bytes(&bytes)
}

pub fn labels_to_bytes(labels: &[u16]) -> Vec<u8> {
    labels.iter().flat_map(|l| l.to_le_bytes()).collect()
}
