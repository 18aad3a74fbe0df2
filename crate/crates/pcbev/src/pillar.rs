//! Per-point pillar features: decoration, the simplified per-point encoder
//! and the max-reduction scatter into a dense BEV map.

use rayon::prelude::*;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::feature_map::FeatureMap;
use crate::grid::{CellAssignment, GridSpec};
use crate::weights::MlpWeights;

pub const POINT_FEATURE_DIM: usize = 8;

/// Per-point input decoration, one row of `POINT_FEATURE_DIM` floats per
/// valid point, in assignment order:
/// (x, y, z, intensity, rho, phi, x - cell_center_x, y - cell_center_y).
/// Invalid points are skipped entirely.
pub fn point_input_features(
    cloud: &PointCloud,
    assignment: &CellAssignment,
    grid: &GridSpec,
) -> Vec<f32> {
    let mut out = Vec::with_capacity(assignment.valid_count() * POINT_FEATURE_DIM);
    for (k, p) in cloud.points.iter().enumerate() {
        if !assignment.valid[k] {
            continue;
        }
        let (x, y) = (p.x as f64, p.y as f64);
        let rho = x.hypot(y);
        let phi = match grid {
            GridSpec::Polar(g) => g.phi_of(x, y),
            GridSpec::Cartesian(_) => y.atan2(x),
        };
        let (cx, cy) =
            grid.cell_center_world(assignment.rows[k] as usize, assignment.cols[k] as usize);
        out.extend_from_slice(&[
            p.x,
            p.y,
            p.z,
            p.intensity,
            rho as f32,
            phi as f32,
            (x - cx) as f32,
            (y - cy) as f32,
        ]);
    }
    out
}

/// Apply the per-point encoder (affine + ReLU per layer) to a flat batch of
/// feature rows. Returns a flat batch of `weights.out_dim()` rows.
pub fn pillar_encode(features: &[f32], weights: &MlpWeights) -> Result<Vec<f32>> {
    let d_in = weights.in_dim();
    if features.len() % d_in != 0 {
        return Err(Error::Config(format!(
            "feature batch of {} floats is not a multiple of encoder input dim {}",
            features.len(),
            d_in
        )));
    }
    let d_out = weights.out_dim();
    let mut out = vec![0.0f32; features.len() / d_in * d_out];
    out.par_chunks_mut(d_out)
        .zip(features.par_chunks(d_in))
        .for_each(|(dst, src)| {
            dst.copy_from_slice(&weights.forward_relu_all(src));
        });
    Ok(out)
}

/// Channelwise max-scatter of encoded point features into a dense map.
/// Cells with no points are exactly 0; the result does not depend on point
/// order.
pub fn scatter_max(
    encoded: &[f32],
    assignment: &CellAssignment,
    height: usize,
    width: usize,
    channels: usize,
) -> Result<FeatureMap> {
    let n_valid = assignment.valid_count();
    if encoded.len() != n_valid * channels {
        return Err(Error::Shape(format!(
            "scatter_max: {} encoded floats for {} valid points x {} channels",
            encoded.len(),
            n_valid,
            channels
        )));
    }
    let mut map = FeatureMap {
        height,
        width,
        channels,
        data: vec![f32::NEG_INFINITY; height * width * channels],
    };
    let mut row_iter = encoded.chunks_exact(channels);
    for k in 0..assignment.len() {
        if !assignment.valid[k] {
            continue;
        }
        let row = row_iter.next().expect("encoded rows match valid count");
        let cell = map.cell_mut(assignment.rows[k] as usize, assignment.cols[k] as usize);
        for (dst, v) in cell.iter_mut().zip(row) {
            if *v > *dst {
                *dst = *v;
            }
        }
    }
    for v in map.data.iter_mut() {
        if *v == f32::NEG_INFINITY {
            *v = 0.0;
        }
    }
    Ok(map)
}

/// Full projection of a scan into a BEV map: assign, decorate, encode, scatter.
pub fn project_cloud(
    cloud: &PointCloud,
    grid: &GridSpec,
    encoder: &MlpWeights,
) -> Result<(FeatureMap, CellAssignment)> {
    grid.validate()?;
    if encoder.in_dim() != POINT_FEATURE_DIM {
        return Err(Error::Config(format!(
            "pillar encoder expects input dim {}, got {}",
            POINT_FEATURE_DIM,
            encoder.in_dim()
        )));
    }
    let assignment = crate::grid::assign_cells(cloud, grid);
    let features = point_input_features(cloud, &assignment, grid);
    let encoded = pillar_encode(&features, encoder)?;
    let (h, w) = grid.dims();
    let map = scatter_max(&encoded, &assignment, h, w, encoder.out_dim())?;
    Ok((map, assignment))
}
