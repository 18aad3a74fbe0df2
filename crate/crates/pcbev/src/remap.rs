//! Precomputed Polar<->Cartesian remap tables, their dense gather
//! application, and the fusion head.
//!
//! A table records, for every destination cell, where in the source grid its
//! center lands: either the single containing source cell (nearest) or the
//! four enclosing source cell centers with bilinear weights. Destination
//! cells whose center falls outside the source bounds are invalid and come
//! out exactly zero after application. Azimuth wraps circularly in bilinear
//! neighbor lookup; radius and Cartesian axes clamp at the border.

use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::feature_map::FeatureMap;
use crate::grid::{cartesian_cell, continuous_coords, polar_cell, GridSpec};
use crate::weights::AffineLayer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RemapMode {
    Nearest,
    Bilinear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RemapTable {
    pub dest_h: usize,
    pub dest_w: usize,
    pub src_h: usize,
    pub src_w: usize,
    pub mode: RemapMode,
    /// Nearest mode: one source flat index per dest cell, -1 when invalid.
    pub nearest: Vec<i32>,
    /// Bilinear mode: four source flat indices and weights per dest cell;
    /// all-zero weights when invalid.
    pub bilinear_idx: Vec<[i32; 4]>,
    pub bilinear_w: Vec<[f32; 4]>,
}

/// Continuous source-grid coordinates of one world point, plus validity
/// under the half-open source bounds.
fn src_coords(src: &GridSpec, x: f64, y: f64) -> Option<(f64, f64)> {
    match src {
        GridSpec::Cartesian(g) => {
            cartesian_cell(g, x, y)?;
            Some((
                (y - g.y_min) / g.cell_h() - 0.5,
                (x - g.x_min) / g.cell_w() - 0.5,
            ))
        }
        GridSpec::Polar(g) => {
            polar_cell(g, x, y)?;
            let rho = x.hypot(y);
            let phi = g.phi_of(x, y);
            Some((
                (rho - g.rho_min) / g.rho_step() - 0.5,
                (phi + std::f64::consts::PI) / g.phi_step() - 0.5,
            ))
        }
    }
}

fn nearest_src_index(src: &GridSpec, x: f64, y: f64) -> i32 {
    let (_, w) = src.dims();
    let cell = match src {
        GridSpec::Cartesian(g) => cartesian_cell(g, x, y),
        GridSpec::Polar(g) => polar_cell(g, x, y),
    };
    match cell {
        Some((r, c)) => (r as usize * w + c as usize) as i32,
        None => -1,
    }
}

pub fn build_remap_table(src: &GridSpec, dest: &GridSpec, mode: RemapMode) -> Result<RemapTable> {
    src.validate()?;
    dest.validate()?;
    match (src, dest) {
        (GridSpec::Cartesian(_), GridSpec::Polar(_)) | (GridSpec::Polar(_), GridSpec::Cartesian(_)) => {}
        _ => {
            return Err(Error::Config(
                "remap requires one Cartesian and one Polar grid".into(),
            ))
        }
    }
    let (dest_h, dest_w) = dest.dims();
    let (src_h, src_w) = src.dims();
    let phi_wraps = matches!(src, GridSpec::Polar(_));

    let mut table = RemapTable {
        dest_h,
        dest_w,
        src_h,
        src_w,
        mode,
        nearest: Vec::new(),
        bilinear_idx: Vec::new(),
        bilinear_w: Vec::new(),
    };

    match mode {
        RemapMode::Nearest => {
            table.nearest = (0..dest_h * dest_w)
                .map(|d| {
                    let (x, y) = dest.cell_center_world(d / dest_w, d % dest_w);
                    nearest_src_index(src, x, y)
                })
                .collect();
        }
        RemapMode::Bilinear => {
            table.bilinear_idx = vec![[0; 4]; dest_h * dest_w];
            table.bilinear_w = vec![[0.0; 4]; dest_h * dest_w];
            for d in 0..dest_h * dest_w {
                let (x, y) = dest.cell_center_world(d / dest_w, d % dest_w);
                let Some((row, col)) = src_coords(src, x, y) else {
                    continue;
                };
                let r0 = row.floor() as i64;
                let c0 = col.floor() as i64;
                let fr = (row - r0 as f64) as f32;
                let fc = (col - c0 as f64) as f32;
                let clamp_r = |r: i64| r.clamp(0, src_h as i64 - 1) as i32;
                let col_idx = |c: i64| -> i32 {
                    if phi_wraps {
                        c.rem_euclid(src_w as i64) as i32
                    } else {
                        c.clamp(0, src_w as i64 - 1) as i32
                    }
                };
                let (rr0, rr1) = (clamp_r(r0), clamp_r(r0 + 1));
                let (cc0, cc1) = (col_idx(c0), col_idx(c0 + 1));
                let flat = |r: i32, c: i32| r * src_w as i32 + c;
                table.bilinear_idx[d] = [
                    flat(rr0, cc0),
                    flat(rr0, cc1),
                    flat(rr1, cc0),
                    flat(rr1, cc1),
                ];
                table.bilinear_w[d] = [
                    (1.0 - fr) * (1.0 - fc),
                    (1.0 - fr) * fc,
                    fr * (1.0 - fc),
                    fr * fc,
                ];
            }
        }
    }
    Ok(table)
}

/// Dense gather: fill every destination cell from the precomputed source
/// indices, traversing dest cells row-major. Invalid cells come out zero.
/// Parallel over destination rows; the result is thread-count independent.
pub fn apply_remap(table: &RemapTable, src: &FeatureMap) -> Result<FeatureMap> {
    if src.height != table.src_h || src.width != table.src_w {
        return Err(Error::Shape(format!(
            "apply_remap: src is {}x{}, table expects {}x{}",
            src.height, src.width, table.src_h, table.src_w
        )));
    }
    let c = src.channels;
    let mut out = FeatureMap::zeros(table.dest_h, table.dest_w, c);
    match table.mode {
        RemapMode::Nearest => {
            out.data
                .par_chunks_mut(table.dest_w * c)
                .enumerate()
                .for_each(|(r, out_row)| {
                    let idx_row = &table.nearest[r * table.dest_w..(r + 1) * table.dest_w];
                    for (dst, &idx) in out_row.chunks_exact_mut(c).zip(idx_row) {
                        if idx >= 0 {
                            let base = idx as usize * c;
                            dst.copy_from_slice(&src.data[base..base + c]);
                        }
                    }
                });
        }
        RemapMode::Bilinear => {
            out.data
                .par_chunks_mut(table.dest_w * c)
                .enumerate()
                .for_each(|(r, out_row)| {
                    let lo = r * table.dest_w;
                    for (d, dst) in out_row.chunks_exact_mut(c).enumerate() {
                        let idx = &table.bilinear_idx[lo + d];
                        let w = &table.bilinear_w[lo + d];
                        for k in 0..4 {
                            if w[k] == 0.0 {
                                continue;
                            }
                            let base = idx[k] as usize * c;
                            let cell = &src.data[base..base + c];
                            for i in 0..c {
                                dst[i] += w[k] * cell[i];
                            }
                        }
                    }
                });
        }
    }
    Ok(out)
}

/// Per-cell affine fusion of two concatenated maps:
/// out = W * concat(a_cell, b_cell) + bias, applied densely at every cell.
pub fn fuse_concat_affine(
    a: &FeatureMap,
    b: &FeatureMap,
    weights: &AffineLayer,
) -> Result<FeatureMap> {
    if !a.same_dims(b) {
        return Err(Error::Shape("fuse_concat_affine: map dims differ".into()));
    }
    if weights.in_dim != a.channels + b.channels {
        return Err(Error::Shape(format!(
            "fusion weights expect {} input channels, maps concat to {}",
            weights.in_dim,
            a.channels + b.channels
        )));
    }
    let c_out = weights.out_dim;
    let mut out = FeatureMap::zeros(a.height, a.width, c_out);
    let ca = a.channels;
    let cb = b.channels;
    out.data
        .par_chunks_mut(c_out)
        .enumerate()
        .for_each(|(cell, dst)| {
            let mut cat = vec![0.0f32; ca + cb];
            cat[..ca].copy_from_slice(&a.data[cell * ca..(cell + 1) * ca]);
            cat[ca..].copy_from_slice(&b.data[cell * cb..(cell + 1) * cb]);
            weights.apply(&cat, dst);
        });
    Ok(out)
}

/// Single-pass output features: remap the polar map into Cartesian space,
/// concatenate with the Cartesian map, then bilinearly sample the combined
/// map once at each point. One 2C row per point; out-of-grid points are zero.
pub fn fused_output_features(
    f_cart: &FeatureMap,
    f_polar: &FeatureMap,
    p2c: &RemapTable,
    cart_grid: &GridSpec,
    cloud: &PointCloud,
) -> Result<Vec<f32>> {
    if p2c.dest_h != f_cart.height || p2c.dest_w != f_cart.width {
        return Err(Error::Shape(
            "fused_output_features: remap table dest dims do not match cartesian map".into(),
        ));
    }
    let remapped = apply_remap(p2c, f_polar)?;
    let combined = f_cart.concat_channels(&remapped)?;
    let coords = continuous_coords(cloud, cart_grid);
    crate::interaction::grid_sample(&combined, &coords)
}

const RMT1_MAGIC: &[u8; 4] = b"RMT1";

impl RemapTable {
    pub fn write_rmt1(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        w.write_all(RMT1_MAGIC)?;
        w.write_all(&[match self.mode {
            RemapMode::Nearest => 0u8,
            RemapMode::Bilinear => 1u8,
        }])?;
        for dim in [self.dest_h, self.dest_w, self.src_h, self.src_w] {
            w.write_all(&(dim as u32).to_le_bytes())?;
        }
        match self.mode {
            RemapMode::Nearest => {
                for idx in &self.nearest {
                    w.write_all(&idx.to_le_bytes())?;
                }
            }
            RemapMode::Bilinear => {
                for d in 0..self.dest_h * self.dest_w {
                    for idx in &self.bilinear_idx[d] {
                        w.write_all(&idx.to_le_bytes())?;
                    }
                    for wt in &self.bilinear_w[d] {
                        w.write_all(&wt.to_le_bytes())?;
                    }
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_rmt1(path: &Path) -> Result<RemapTable> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut head = [0u8; 21];
        r.read_exact(&mut head)?;
        if &head[0..4] != RMT1_MAGIC {
            return Err(Error::Format("bad RMT1 magic".into()));
        }
        let mode = match head[4] {
            0 => RemapMode::Nearest,
            1 => RemapMode::Bilinear,
            m => return Err(Error::Format(format!("unknown remap mode byte {m}"))),
        };
        let dim = |i: usize| u32::from_le_bytes(head[5 + 4 * i..9 + 4 * i].try_into().unwrap()) as usize;
        let (dest_h, dest_w, src_h, src_w) = (dim(0), dim(1), dim(2), dim(3));
        let cells = dest_h * dest_w;
        let mut payload = Vec::new();
        r.read_to_end(&mut payload)?;
        let mut table = RemapTable {
            dest_h,
            dest_w,
            src_h,
            src_w,
            mode,
            nearest: Vec::new(),
            bilinear_idx: Vec::new(),
            bilinear_w: Vec::new(),
        };
        match mode {
            RemapMode::Nearest => {
                if payload.len() != cells * 4 {
                    return Err(Error::Format("RMT1 nearest payload size mismatch".into()));
                }
                table.nearest = payload
                    .chunks_exact(4)
                    .map(|b| i32::from_le_bytes(b.try_into().unwrap()))
                    .collect();
            }
            RemapMode::Bilinear => {
                if payload.len() != cells * 32 {
                    return Err(Error::Format("RMT1 bilinear payload size mismatch".into()));
                }
                table.bilinear_idx = Vec::with_capacity(cells);
                table.bilinear_w = Vec::with_capacity(cells);
                for rec in payload.chunks_exact(32) {
                    let mut idx = [0i32; 4];
                    let mut wt = [0.0f32; 4];
                    for k in 0..4 {
                        idx[k] = i32::from_le_bytes(rec[4 * k..4 * k + 4].try_into().unwrap());
                        wt[k] = f32::from_le_bytes(rec[16 + 4 * k..20 + 4 * k].try_into().unwrap());
                    }
                    table.bilinear_idx.push(idx);
                    table.bilinear_w.push(wt);
                }
            }
        }
        table.check_indices()?;
        Ok(table)
    }

    fn check_indices(&self) -> Result<()> {
        let n_src = (self.src_h * self.src_w) as i32;
        let ok = match self.mode {
            RemapMode::Nearest => self.nearest.iter().all(|&i| i >= -1 && i < n_src),
            RemapMode::Bilinear => self
                .bilinear_idx
                .iter()
                .flatten()
                .all(|&i| i >= 0 && i < n_src),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Format("RMT1 table has out-of-range source indices".into()))
        }
    }
}
