//! Forward-only hybrid Transformer-CNN block: patch embedding with sine
//! positional encoding, multi-head self-attention + FFN, bilinear upsampling
//! back to full resolution, additive enhancement and a small two-level
//! convolutional stand-in for the encoder-decoder CNN.
//!
//! In place of layer normalization the blocks carry a per-channel affine
//! (identity by default); no normalization statistics exist in a
//! forward-only artifact.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::feature_map::FeatureMap;
use crate::weights::{relu_in_place, AffineLayer, MlpWeights};

#[derive(Debug, Clone, PartialEq)]
pub struct PatchEmbedding {
    /// Patches per side; H and W must be divisible by it.
    pub n: usize,
    pub c_emb: usize,
    /// (H/n * W/n * C) -> C_emb, the kernel-sized convolution as an affine map.
    pub proj: AffineLayer,
    /// Merge of Concat(embedding, positional encoding): 2*C_emb -> C_emb.
    pub pe_merge: AffineLayer,
    /// When false the positional-encoding input to the merge is all zero.
    pub use_pe: bool,
}

impl PatchEmbedding {
    pub fn seeded(n: usize, c_emb: usize, patch_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PatchEmbedding {
            n,
            c_emb,
            proj: AffineLayer::seeded(patch_dim, c_emb, &mut rng),
            pe_merge: AffineLayer::seeded(2 * c_emb, c_emb, &mut rng),
            use_pe: true,
        }
    }
}

/// Sine positional encoding of a sequence position:
/// channel 2k = sin(pos / 10000^(2k/d)), channel 2k+1 = cos(same).
pub fn sine_positional_encoding(pos: usize, dim: usize) -> Vec<f32> {
    (0..dim)
        .map(|i| {
            let k = (i / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * k / dim as f64);
            if i % 2 == 0 {
                angle.sin() as f32
            } else {
                angle.cos() as f32
            }
        })
        .collect()
}

/// Split `map` into n x n patches, flatten each row-major, project and merge
/// with the positional encoding. Returns a flat n^2 x C_emb sequence.
pub fn embed_patches(map: &FeatureMap, pe: &PatchEmbedding) -> Result<Vec<f32>> {
    if map.height % pe.n != 0 || map.width % pe.n != 0 {
        return Err(Error::Config(format!(
            "map {}x{} not divisible into {}x{} patches",
            map.height, map.width, pe.n, pe.n
        )));
    }
    let ph = map.height / pe.n;
    let pw = map.width / pe.n;
    let patch_dim = ph * pw * map.channels;
    if pe.proj.in_dim != patch_dim {
        return Err(Error::Config(format!(
            "patch projection expects input dim {}, patches have {}",
            pe.proj.in_dim, patch_dim
        )));
    }
    let mut seq = vec![0.0f32; pe.n * pe.n * pe.c_emb];
    let mut patch = vec![0.0f32; patch_dim];
    let mut cat = vec![0.0f32; 2 * pe.c_emb];
    for pr in 0..pe.n {
        for pc in 0..pe.n {
            let pos = pr * pe.n + pc;
            let mut w = 0;
            for lr in 0..ph {
                let row = pr * ph + lr;
                for lc in 0..pw {
                    let cell = map.cell(row, pc * pw + lc);
                    patch[w..w + map.channels].copy_from_slice(cell);
                    w += map.channels;
                }
            }
            let emb = pe.proj.apply_vec(&patch);
            cat[..pe.c_emb].copy_from_slice(&emb);
            if pe.use_pe {
                cat[pe.c_emb..].copy_from_slice(&sine_positional_encoding(pos, pe.c_emb));
            } else {
                cat[pe.c_emb..].fill(0.0);
            }
            pe.pe_merge
                .apply(&cat, &mut seq[pos * pe.c_emb..(pos + 1) * pe.c_emb]);
        }
    }
    Ok(seq)
}

/// Per-channel affine stand-in for pre-norm.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelAffine {
    pub scale: Vec<f32>,
    pub shift: Vec<f32>,
}

impl ChannelAffine {
    pub fn identity(dim: usize) -> Self {
        ChannelAffine {
            scale: vec![1.0; dim],
            shift: vec![0.0; dim],
        }
    }

    fn apply(&self, x: &[f32]) -> Vec<f32> {
        x.iter()
            .zip(self.scale.iter().zip(&self.shift))
            .map(|(v, (s, b))| v * s + b)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionBlockWeights {
    pub c_emb: usize,
    pub n_heads: usize,
    pub wq: AffineLayer,
    pub wk: AffineLayer,
    pub wv: AffineLayer,
    pub wo: AffineLayer,
    pub ffn1: AffineLayer,
    pub ffn2: AffineLayer,
    pub pre_attn: ChannelAffine,
    pub pre_ffn: ChannelAffine,
}

impl AttentionBlockWeights {
    pub fn seeded(c_emb: usize, n_heads: usize, d_ff: usize, seed: u64) -> Result<Self> {
        if c_emb % n_heads != 0 {
            return Err(Error::Config(format!(
                "head count {n_heads} does not divide embedding dim {c_emb}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(AttentionBlockWeights {
            c_emb,
            n_heads,
            wq: AffineLayer::seeded(c_emb, c_emb, &mut rng),
            wk: AffineLayer::seeded(c_emb, c_emb, &mut rng),
            wv: AffineLayer::seeded(c_emb, c_emb, &mut rng),
            wo: AffineLayer::seeded(c_emb, c_emb, &mut rng),
            ffn1: AffineLayer::seeded(c_emb, d_ff, &mut rng),
            ffn2: AffineLayer::seeded(d_ff, c_emb, &mut rng),
            pre_attn: ChannelAffine::identity(c_emb),
            pre_ffn: ChannelAffine::identity(c_emb),
        })
    }

    pub fn head_dim(&self) -> usize {
        self.c_emb / self.n_heads
    }
}

/// Softmax attention row weights for one query against all keys; rows sum to 1.
pub fn softmax_in_place(scores: &mut [f32]) {
    let max = scores.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f32;
    for s in scores.iter_mut() {
        *s = (*s - max).exp();
        sum += *s;
    }
    for s in scores.iter_mut() {
        *s /= sum;
    }
}

/// One transformer block: pre-affine, multi-head scaled dot-product
/// attention with residual, then pre-affine + two-layer FFN with residual.
/// `seq` is a flat T x C_emb sequence.
pub fn mhsa_ffn(seq: &[f32], w: &AttentionBlockWeights) -> Result<Vec<f32>> {
    let c = w.c_emb;
    if seq.len() % c != 0 {
        return Err(Error::Shape(format!(
            "sequence of {} floats is not a multiple of embedding dim {}",
            seq.len(),
            c
        )));
    }
    let t = seq.len() / c;
    let dh = w.head_dim();
    let scale = 1.0 / (dh as f32).sqrt();

    let mut q = vec![0.0f32; t * c];
    let mut k = vec![0.0f32; t * c];
    let mut v = vec![0.0f32; t * c];
    for tok in 0..t {
        let x = w.pre_attn.apply(&seq[tok * c..(tok + 1) * c]);
        w.wq.apply(&x, &mut q[tok * c..(tok + 1) * c]);
        w.wk.apply(&x, &mut k[tok * c..(tok + 1) * c]);
        w.wv.apply(&x, &mut v[tok * c..(tok + 1) * c]);
    }

    let mut attended = vec![0.0f32; t * c];
    let mut scores = vec![0.0f32; t];
    for tok in 0..t {
        for head in 0..w.n_heads {
            let off = head * dh;
            for (j, s) in scores.iter_mut().enumerate() {
                let qv = &q[tok * c + off..tok * c + off + dh];
                let kv = &k[j * c + off..j * c + off + dh];
                *s = qv.iter().zip(kv).map(|(a, b)| a * b).sum::<f32>() * scale;
            }
            softmax_in_place(&mut scores);
            let ctx = &mut attended[tok * c + off..tok * c + off + dh];
            for (j, a) in scores.iter().enumerate() {
                let vv = &v[j * c + off..j * c + off + dh];
                for i in 0..dh {
                    ctx[i] += a * vv[i];
                }
            }
        }
    }

    let mut out = vec![0.0f32; t * c];
    for tok in 0..t {
        let proj = w.wo.apply_vec(&attended[tok * c..(tok + 1) * c]);
        let x = &seq[tok * c..(tok + 1) * c];
        let y: Vec<f32> = x.iter().zip(&proj).map(|(a, b)| a + b).collect();
        let mut hidden = w.ffn1.apply_vec(&w.pre_ffn.apply(&y));
        relu_in_place(&mut hidden);
        let ffn_out = w.ffn2.apply_vec(&hidden);
        for i in 0..c {
            out[tok * c + i] = y[i] + ffn_out[i];
        }
    }
    Ok(out)
}

/// Per-token attention row weights, exposed for invariant checks: for each
/// (token, head) the softmax weights over all keys.
pub fn attention_rows(seq: &[f32], w: &AttentionBlockWeights) -> Result<Vec<Vec<f32>>> {
    let c = w.c_emb;
    if seq.len() % c != 0 {
        return Err(Error::Shape("sequence length mismatch".into()));
    }
    let t = seq.len() / c;
    let dh = w.head_dim();
    let scale = 1.0 / (dh as f32).sqrt();
    let mut q = vec![0.0f32; t * c];
    let mut k = vec![0.0f32; t * c];
    for tok in 0..t {
        let x = w.pre_attn.apply(&seq[tok * c..(tok + 1) * c]);
        w.wq.apply(&x, &mut q[tok * c..(tok + 1) * c]);
        w.wk.apply(&x, &mut k[tok * c..(tok + 1) * c]);
    }
    let mut rows = Vec::with_capacity(t * w.n_heads);
    for tok in 0..t {
        for head in 0..w.n_heads {
            let off = head * dh;
            let mut scores: Vec<f32> = (0..t)
                .map(|j| {
                    q[tok * c + off..tok * c + off + dh]
                        .iter()
                        .zip(&k[j * c + off..j * c + off + dh])
                        .map(|(a, b)| a * b)
                        .sum::<f32>()
                        * scale
                })
                .collect();
            softmax_in_place(&mut scores);
            rows.push(scores);
        }
    }
    Ok(rows)
}

/// Align-corners bilinear upsampling of an n x n x C patch grid to H x W.
pub fn upsample_bilinear(patch_grid: &FeatureMap, height: usize, width: usize) -> Result<FeatureMap> {
    if patch_grid.height > height || patch_grid.width > width {
        return Err(Error::Config("upsample target smaller than input".into()));
    }
    let c = patch_grid.channels;
    let mut out = FeatureMap::zeros(height, width, c);
    let scale = |dst: usize, d_len: usize, s_len: usize| -> f64 {
        if d_len <= 1 || s_len <= 1 {
            0.0
        } else {
            dst as f64 * (s_len - 1) as f64 / (d_len - 1) as f64
        }
    };
    for r in 0..height {
        let sr = scale(r, height, patch_grid.height);
        for cc in 0..width {
            let sc = scale(cc, width, patch_grid.width);
            let dst = out.cell_mut(r, cc);
            crate::interaction::sample_into(patch_grid, sr as f32, sc as f32, dst);
        }
    }
    Ok(out)
}

/// Elementwise additive fusion, with an optional per-cell channel adapter
/// applied to `upsampled` first when channel counts differ.
pub fn enhance(
    map: &FeatureMap,
    upsampled: &FeatureMap,
    adapter: Option<&AffineLayer>,
) -> Result<FeatureMap> {
    let adapted;
    let up = match adapter {
        Some(a) => {
            if a.in_dim != upsampled.channels || a.out_dim != map.channels {
                return Err(Error::Shape("enhance: channel adapter dims mismatch".into()));
            }
            let mut m = FeatureMap::zeros(upsampled.height, upsampled.width, map.channels);
            for cell in 0..upsampled.height * upsampled.width {
                a.apply(
                    &upsampled.data[cell * a.in_dim..(cell + 1) * a.in_dim],
                    &mut m.data[cell * a.out_dim..(cell + 1) * a.out_dim],
                );
            }
            adapted = m;
            &adapted
        }
        None => upsampled,
    };
    if !map.same_dims(up) {
        return Err(Error::Shape("enhance: map dims mismatch after adapter".into()));
    }
    let mut out = map.clone();
    for (o, u) in out.data.iter_mut().zip(&up.data) {
        *o += u;
    }
    Ok(out)
}

/// 2D convolution weights: kernel laid out [c_out][c_in][kh][kw].
#[derive(Debug, Clone, PartialEq)]
pub struct ConvWeights {
    pub c_in: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub kernel: Vec<f32>,
    pub bias: Vec<f32>,
}

impl ConvWeights {
    pub fn new(c_in: usize, c_out: usize, kh: usize, kw: usize, kernel: Vec<f32>, bias: Vec<f32>) -> Result<Self> {
        if kernel.len() != c_out * c_in * kh * kw || bias.len() != c_out {
            return Err(Error::Config("conv weight sizes inconsistent".into()));
        }
        Ok(ConvWeights {
            c_in,
            c_out,
            kh,
            kw,
            kernel,
            bias,
        })
    }

    pub fn seeded(c_in: usize, c_out: usize, kh: usize, kw: usize, rng: &mut ChaCha8Rng) -> Self {
        use rand::Rng;
        let scale = (1.0 / (c_in * kh * kw) as f64).sqrt();
        ConvWeights {
            c_in,
            c_out,
            kh,
            kw,
            kernel: (0..c_out * c_in * kh * kw)
                .map(|_| rng.gen_range(-scale..scale) as f32)
                .collect(),
            bias: (0..c_out).map(|_| rng.gen_range(-scale..scale) as f32).collect(),
        }
    }

    /// Same-size convolution with zero padding at the borders.
    pub fn apply(&self, map: &FeatureMap) -> Result<FeatureMap> {
        if map.channels != self.c_in {
            return Err(Error::Shape(format!(
                "conv expects {} input channels, map has {}",
                self.c_in, map.channels
            )));
        }
        let (h, w) = (map.height, map.width);
        let (oh, ow) = (self.kh as i64 / 2, self.kw as i64 / 2);
        let mut out = FeatureMap::zeros(h, w, self.c_out);
        for r in 0..h as i64 {
            for c in 0..w as i64 {
                let dst = out.cell_mut(r as usize, c as usize);
                for (co, d) in dst.iter_mut().enumerate() {
                    let mut acc = self.bias[co];
                    for kr in 0..self.kh as i64 {
                        let rr = r + kr - oh;
                        if rr < 0 || rr >= h as i64 {
                            continue;
                        }
                        for kc in 0..self.kw as i64 {
                            let ccx = c + kc - ow;
                            if ccx < 0 || ccx >= w as i64 {
                                continue;
                            }
                            let cell = map.cell(rr as usize, ccx as usize);
                            for ci in 0..self.c_in {
                                acc += self.kernel
                                    [((co * self.c_in + ci) * self.kh + kr as usize) * self.kw
                                        + kc as usize]
                                    * cell[ci];
                            }
                        }
                    }
                    *d = acc;
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiniCnnWeights {
    pub conv1: ConvWeights,
    pub conv2: ConvWeights,
    pub conv3: ConvWeights,
}

impl MiniCnnWeights {
    pub fn seeded(c_in: usize, c_mid: usize, c_out: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        MiniCnnWeights {
            conv1: ConvWeights::seeded(c_in, c_mid, 3, 3, &mut rng),
            conv2: ConvWeights::seeded(c_mid, c_mid, 3, 3, &mut rng),
            conv3: ConvWeights::seeded(c_mid, c_out, 1, 1, &mut rng),
        }
    }
}

fn max_pool_2x(map: &FeatureMap) -> FeatureMap {
    let (h, w, c) = (map.height / 2, map.width / 2, map.channels);
    let mut out = FeatureMap::zeros(h, w, c);
    for r in 0..h {
        for cc in 0..w {
            let dst = out.cell_mut(r, cc);
            for (dr, dc) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                let cell = map.cell(2 * r + dr, 2 * cc + dc);
                for i in 0..c {
                    if cell[i] > dst[i] || (dr, dc) == (0, 0) {
                        dst[i] = cell[i];
                    }
                }
            }
        }
    }
    out
}

/// Two-level encoder-decoder stand-in:
/// 3x3 conv -> ReLU -> 2x max pool -> 3x3 conv -> ReLU -> 2x bilinear
/// upsample -> skip add -> 1x1 conv.
pub fn mini_cnn(map: &FeatureMap, w: &MiniCnnWeights) -> Result<FeatureMap> {
    if map.height % 2 != 0 || map.width % 2 != 0 {
        return Err(Error::Config("mini_cnn needs even H and W".into()));
    }
    let mut stage1 = w.conv1.apply(map)?;
    relu_in_place(&mut stage1.data);
    let pooled = max_pool_2x(&stage1);
    let mut stage2 = w.conv2.apply(&pooled)?;
    relu_in_place(&mut stage2.data);
    let up = upsample_bilinear(&stage2, map.height, map.width)?;
    let skip = enhance(&stage1, &up, None)?;
    w.conv3.apply(&skip)
}

/// Per-point classifier scores: affine -> ReLU -> affine to K classes.
pub fn classify_points(point_features: &[f32], weights: &MlpWeights) -> Result<Vec<f32>> {
    let d = weights.in_dim();
    if point_features.len() % d != 0 {
        return Err(Error::Shape(format!(
            "classifier input of {} floats is not a multiple of {}",
            point_features.len(),
            d
        )));
    }
    let k = weights.out_dim();
    let mut out = vec![0.0f32; point_features.len() / d * k];
    for (dst, src) in out.chunks_exact_mut(k).zip(point_features.chunks_exact(d)) {
        dst.copy_from_slice(&weights.forward_relu_hidden(src));
    }
    Ok(out)
}

pub fn argmax_labels(scores: &[f32], k: usize) -> Vec<u16> {
    scores
        .chunks_exact(k)
        .map(|row| {
            row.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i as u16)
                .unwrap_or(0)
        })
        .collect()
}

/// A full per-branch feature extraction block: patch-transformer enhancement
/// followed by the mini CNN, preserving H, W and C.
#[derive(Debug, Clone, PartialEq)]
pub struct BackboneWeights {
    pub patch: PatchEmbedding,
    pub blocks: Vec<AttentionBlockWeights>,
    /// C_emb -> C adapter applied to the upsampled patch grid.
    pub adapter: AffineLayer,
    pub cnn: MiniCnnWeights,
}

impl BackboneWeights {
    pub fn seeded(
        height: usize,
        width: usize,
        channels: usize,
        n: usize,
        c_emb: usize,
        n_heads: usize,
        n_blocks: usize,
        seed: u64,
    ) -> Result<Self> {
        if height % n != 0 || width % n != 0 {
            return Err(Error::Config(format!(
                "{height}x{width} map not divisible into {n}x{n} patches"
            )));
        }
        let patch_dim = (height / n) * (width / n) * channels;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let blocks = (0..n_blocks)
            .map(|i| AttentionBlockWeights::seeded(c_emb, n_heads, 2 * c_emb, seed + i as u64))
            .collect::<Result<Vec<_>>>()?;
        Ok(BackboneWeights {
            patch: PatchEmbedding::seeded(n, c_emb, patch_dim, seed),
            blocks,
            adapter: AffineLayer::seeded(c_emb, channels, &mut rng),
            cnn: MiniCnnWeights::seeded(channels, channels, channels, seed + 100),
        })
    }

    pub fn forward(&self, map: &FeatureMap) -> Result<FeatureMap> {
        let mut seq = embed_patches(map, &self.patch)?;
        for block in &self.blocks {
            seq = mhsa_ffn(&seq, block)?;
        }
        let n = self.patch.n;
        let patch_grid = FeatureMap::from_data(n, n, self.patch.c_emb, seq)?;
        let up = upsample_bilinear(&patch_grid, map.height, map.width)?;
        let enhanced = enhance(map, &up, Some(&self.adapter))?;
        mini_cnn(&enhanced, &self.cnn)
    }
}
