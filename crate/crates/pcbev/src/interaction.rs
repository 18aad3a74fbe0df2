//! Point-based cross-view interaction: bilinear grid sampling at point
//! locations plus the scatter-back reduction. This is the prior-art path the
//! remap engine replaces, kept both as a correctness oracle and as the rival
//! in the latency benchmark.

use rayon::prelude::*;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::feature_map::FeatureMap;
use crate::grid::{assign_cells, continuous_coords, CellAssignment, ContinuousSampleCoords, GridSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduce {
    Max,
    Mean,
}

/// Bilinear sample of `map` at each continuous coordinate. Returns one
/// C-channel row per coordinate entry; invalid entries are all zero.
/// Coordinates are clamped to [0, H-1] x [0, W-1] before interpolation.
pub fn grid_sample(map: &FeatureMap, coords: &ContinuousSampleCoords) -> Result<Vec<f32>> {
    if coords.height != map.height || coords.width != map.width {
        return Err(Error::Shape(format!(
            "grid_sample: coords are for {}x{}, map is {}x{}",
            coords.height, coords.width, map.height, map.width
        )));
    }
    let c = map.channels;
    let mut out = vec![0.0f32; coords.len() * c];
    out.par_chunks_mut(c).enumerate().for_each(|(k, dst)| {
        if !coords.valid[k] {
            return;
        }
        sample_into(map, coords.rows[k], coords.cols[k], dst);
    });
    Ok(out)
}

#[inline]
pub(crate) fn sample_into(map: &FeatureMap, row: f32, col: f32, dst: &mut [f32]) {
    let h = map.height;
    let w = map.width;
    let r = (row as f64).clamp(0.0, (h - 1) as f64);
    let cc = (col as f64).clamp(0.0, (w - 1) as f64);
    let r0 = r.floor() as usize;
    let c0 = cc.floor() as usize;
    let r1 = (r0 + 1).min(h - 1);
    let c1 = (c0 + 1).min(w - 1);
    let fr = (r - r0 as f64) as f32;
    let fc = (cc - c0 as f64) as f32;
    let w00 = (1.0 - fr) * (1.0 - fc);
    let w01 = (1.0 - fr) * fc;
    let w10 = fr * (1.0 - fc);
    let w11 = fr * fc;
    let a = map.cell(r0, c0);
    let b = map.cell(r0, c1);
    let d = map.cell(r1, c0);
    let e = map.cell(r1, c1);
    for i in 0..dst.len() {
        dst[i] = w00 * a[i] + w01 * b[i] + w10 * d[i] + w11 * e[i];
    }
}

/// Reduce per-point values into a dense map. `values` holds one C-channel row
/// per *valid* assignment entry, in point order. Empty cells are exactly 0 and
/// the result is independent of point order (mean up to float accumulation).
pub fn scatter_back(
    values: &[f32],
    assignment: &CellAssignment,
    height: usize,
    width: usize,
    channels: usize,
    reduce: Reduce,
) -> Result<FeatureMap> {
    let n_valid = assignment.valid_count();
    if values.len() != n_valid * channels {
        return Err(Error::Shape(format!(
            "scatter_back: {} values for {} valid points x {} channels",
            values.len(),
            n_valid,
            channels
        )));
    }
    match reduce {
        Reduce::Max => crate::pillar::scatter_max(values, assignment, height, width, channels),
        Reduce::Mean => {
            let mut sums = vec![0.0f64; height * width * channels];
            let mut counts = vec![0u32; height * width];
            let mut rows = values.chunks_exact(channels);
            for k in 0..assignment.len() {
                if !assignment.valid[k] {
                    continue;
                }
                let row = rows.next().expect("value rows match valid count");
                let cell = assignment.rows[k] as usize * width + assignment.cols[k] as usize;
                counts[cell] += 1;
                for (i, v) in row.iter().enumerate() {
                    sums[cell * channels + i] += *v as f64;
                }
            }
            let mut map = FeatureMap::zeros(height, width, channels);
            for cell in 0..height * width {
                if counts[cell] == 0 {
                    continue;
                }
                let inv = 1.0 / counts[cell] as f64;
                for i in 0..channels {
                    map.data[cell * channels + i] = (sums[cell * channels + i] * inv) as f32;
                }
            }
            Ok(map)
        }
    }
}

/// Parallel scatter-back over per-thread partial maps merged by the
/// reduction. Identical to the single-threaded result for max; mean may
/// differ within float accumulation order.
pub fn scatter_back_parallel(
    values: &[f32],
    assignment: &CellAssignment,
    height: usize,
    width: usize,
    channels: usize,
    reduce: Reduce,
) -> Result<FeatureMap> {
    let n_valid = assignment.valid_count();
    if values.len() != n_valid * channels {
        return Err(Error::Shape("scatter_back: value/assignment length mismatch".into()));
    }
    let threads = rayon::current_num_threads();
    if threads <= 1 || n_valid < 2 * threads {
        return scatter_back(values, assignment, height, width, channels, reduce);
    }

    // compacted (cell, value-row) pairs, chunked across threads
    let cells: Vec<u32> = (0..assignment.len())
        .filter(|&k| assignment.valid[k])
        .map(|k| assignment.rows[k] * width as u32 + assignment.cols[k])
        .collect();
    let chunk = n_valid.div_ceil(threads);

    match reduce {
        Reduce::Max => {
            let partials: Vec<Vec<f32>> = cells
                .par_chunks(chunk)
                .zip(values.par_chunks(chunk * channels))
                .map(|(cell_chunk, value_chunk)| {
                    let mut partial = vec![f32::NEG_INFINITY; height * width * channels];
                    for (cell, row) in cell_chunk.iter().zip(value_chunk.chunks_exact(channels)) {
                        let base = *cell as usize * channels;
                        for (i, v) in row.iter().enumerate() {
                            if *v > partial[base + i] {
                                partial[base + i] = *v;
                            }
                        }
                    }
                    partial
                })
                .collect();
            let mut map = FeatureMap::zeros(height, width, channels);
            map.data
                .par_chunks_mut(width * channels)
                .enumerate()
                .for_each(|(r, out_row)| {
                    let base = r * width * channels;
                    for (i, dst) in out_row.iter_mut().enumerate() {
                        let mut m = f32::NEG_INFINITY;
                        for p in &partials {
                            let v = p[base + i];
                            if v > m {
                                m = v;
                            }
                        }
                        *dst = if m == f32::NEG_INFINITY { 0.0 } else { m };
                    }
                });
            Ok(map)
        }
        Reduce::Mean => {
            let partials: Vec<(Vec<f64>, Vec<u32>)> = cells
                .par_chunks(chunk)
                .zip(values.par_chunks(chunk * channels))
                .map(|(cell_chunk, value_chunk)| {
                    let mut sums = vec![0.0f64; height * width * channels];
                    let mut counts = vec![0u32; height * width];
                    for (cell, row) in cell_chunk.iter().zip(value_chunk.chunks_exact(channels)) {
                        counts[*cell as usize] += 1;
                        let base = *cell as usize * channels;
                        for (i, v) in row.iter().enumerate() {
                            sums[base + i] += *v as f64;
                        }
                    }
                    (sums, counts)
                })
                .collect();
            let mut map = FeatureMap::zeros(height, width, channels);
            map.data
                .par_chunks_mut(channels)
                .enumerate()
                .for_each(|(cell, out_cell)| {
                    let count: u32 = partials.iter().map(|(_, c)| c[cell]).sum();
                    if count == 0 {
                        return;
                    }
                    let inv = 1.0 / count as f64;
                    for (i, dst) in out_cell.iter_mut().enumerate() {
                        let s: f64 = partials.iter().map(|(s, _)| s[cell * channels + i]).sum();
                        *dst = (s * inv) as f32;
                    }
                });
            Ok(map)
        }
    }
}

/// The full point-based interaction: sample the source map at every point,
/// then scatter the sampled features into the destination grid. The output is
/// sparse: cells without points stay exactly 0.
pub fn point_based_interaction(
    f_src: &FeatureMap,
    src_grid: &GridSpec,
    dest_grid: &GridSpec,
    cloud: &PointCloud,
    reduce: Reduce,
) -> Result<FeatureMap> {
    let coords = continuous_coords(cloud, src_grid);
    let sampled = grid_sample(f_src, &coords)?;
    let assignment = assign_cells(cloud, dest_grid);
    let c = f_src.channels;
    // keep only rows for points valid in the destination grid
    let mut compact = Vec::with_capacity(assignment.valid_count() * c);
    for k in 0..assignment.len() {
        if assignment.valid[k] {
            compact.extend_from_slice(&sampled[k * c..(k + 1) * c]);
        }
    }
    let (h, w) = dest_grid.dims();
    scatter_back(&compact, &assignment, h, w, c, reduce)
}

/// Two-pass output fusion: sample each branch independently at every point
/// and concatenate, `Concat(GS(f_cart), GS(f_polar))`. One 2C row per point.
pub fn point_based_output_fusion(
    f_cart: &FeatureMap,
    cart_grid: &GridSpec,
    f_polar: &FeatureMap,
    polar_grid: &GridSpec,
    cloud: &PointCloud,
) -> Result<Vec<f32>> {
    let cart = grid_sample(f_cart, &continuous_coords(cloud, cart_grid))?;
    let polar = grid_sample(f_polar, &continuous_coords(cloud, polar_grid))?;
    let (cc, cp) = (f_cart.channels, f_polar.channels);
    let mut out = vec![0.0f32; cloud.len() * (cc + cp)];
    for k in 0..cloud.len() {
        out[k * (cc + cp)..k * (cc + cp) + cc].copy_from_slice(&cart[k * cc..(k + 1) * cc]);
        out[k * (cc + cp) + cc..(k + 1) * (cc + cp)].copy_from_slice(&polar[k * cp..(k + 1) * cp]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::Point;
    use crate::grid::CartesianGridSpec;

    fn grid(w: usize, h: usize) -> GridSpec {
        GridSpec::Cartesian(CartesianGridSpec {
            x_min: 0.0,
            x_max: w as f64,
            y_min: 0.0,
            y_max: h as f64,
            width: w,
            height: h,
        })
    }

    fn coords_of(pairs: &[(f32, f32)], h: usize, w: usize) -> ContinuousSampleCoords {
        ContinuousSampleCoords {
            rows: pairs.iter().map(|p| p.0).collect(),
            cols: pairs.iter().map(|p| p.1).collect(),
            valid: vec![true; pairs.len()],
            height: h,
            width: w,
        }
    }

    #[test]
    fn sample_at_integer_coords() {
        let map = FeatureMap::from_data(2, 2, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let out = grid_sample(&map, &coords_of(&[(1.0, 0.0)], 2, 2)).unwrap();
        assert_eq!(out, vec![3.0]);
    }

    #[test]
    fn sample_at_midpoint_is_mean() {
        let map = FeatureMap::from_data(2, 2, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let out = grid_sample(&map, &coords_of(&[(0.5, 0.5)], 2, 2)).unwrap();
        assert!((out[0] - 2.5).abs() < 1e-6);
    }

    #[test]
    fn sample_clamps_at_border() {
        let map = FeatureMap::from_data(2, 2, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let out = grid_sample(&map, &coords_of(&[(-0.4, 1.7)], 2, 2)).unwrap();
        assert_eq!(out, vec![2.0]);
    }

    #[test]
    fn sample_invalid_is_zero() {
        let map = FeatureMap::from_data(1, 1, 2, vec![5.0, 6.0]).unwrap();
        let mut c = coords_of(&[(0.0, 0.0)], 1, 1);
        c.valid[0] = false;
        assert_eq!(grid_sample(&map, &c).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn sample_matches_scalar_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let h = 16;
        let w = 13;
        let c = 3;
        let map = FeatureMap::from_data(
            h,
            w,
            c,
            (0..h * w * c).map(|_| rng.gen_range(-1.0f32..1.0)).collect(),
        )
        .unwrap();
        let pairs: Vec<(f32, f32)> = (0..1000)
            .map(|_| {
                (
                    rng.gen_range(0.0f32..(h - 1) as f32),
                    rng.gen_range(0.0f32..(w - 1) as f32),
                )
            })
            .collect();
        let out = grid_sample(&map, &coords_of(&pairs, h, w)).unwrap();
        for (k, &(r, cc)) in pairs.iter().enumerate() {
            let r0 = r.floor() as usize;
            let c0 = cc.floor() as usize;
            let fr = r - r0 as f32;
            let fc = cc - c0 as f32;
            for ch in 0..c {
                let v = |rr: usize, ccx: usize| map.data[(rr * w + ccx) * c + ch];
                let expect = (1.0 - fr) * (1.0 - fc) * v(r0, c0)
                    + (1.0 - fr) * fc * v(r0, c0 + 1)
                    + fr * (1.0 - fc) * v(r0 + 1, c0)
                    + fr * fc * v(r0 + 1, c0 + 1);
                assert!((out[k * c + ch] - expect).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn sample_constant_partition_of_unity() {
        let map = FeatureMap::from_data(4, 4, 1, vec![7.5; 16]).unwrap();
        let pairs: Vec<(f32, f32)> = (0..50)
            .map(|i| (i as f32 * 0.06, (50 - i) as f32 * 0.055))
            .collect();
        let out = grid_sample(&map, &coords_of(&pairs, 4, 4)).unwrap();
        for v in out {
            assert!((v - 7.5).abs() < 1e-6);
        }
    }

    fn two_point_setup() -> (CellAssignment, Vec<f32>) {
        let g = grid(2, 2);
        let cloud = PointCloud {
            points: vec![
                Point {
                    x: 0.5,
                    y: 0.5,
                    z: 0.0,
                    intensity: 0.0,
                },
                Point {
                    x: 0.6,
                    y: 0.6,
                    z: 0.0,
                    intensity: 0.0,
                },
            ],
            labels: None,
        };
        (assign_cells(&cloud, &g), vec![3.0, 5.0])
    }

    #[test]
    fn scatter_back_max() {
        let (a, v) = two_point_setup();
        let m = scatter_back(&v, &a, 2, 2, 1, Reduce::Max).unwrap();
        assert_eq!(m.cell(0, 0), &[5.0]);
    }

    #[test]
    fn scatter_back_mean() {
        let (a, v) = two_point_setup();
        let m = scatter_back(&v, &a, 2, 2, 1, Reduce::Mean).unwrap();
        assert_eq!(m.cell(0, 0), &[4.0]);
        assert_eq!(m.cell(1, 1), &[0.0]);
    }

    #[test]
    fn scatter_back_order_invariant() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        let g = grid(8, 8);
        let points: Vec<Point> = (0..500)
            .map(|_| Point {
                x: rng.gen_range(0.0..8.0),
                y: rng.gen_range(0.0..8.0),
                z: 0.0,
                intensity: 0.0,
            })
            .collect();
        let values: Vec<f32> = (0..500).map(|_| rng.gen_range(-2.0f32..2.0)).collect();
        let cloud = PointCloud {
            points: points.clone(),
            labels: None,
        };
        let a = assign_cells(&cloud, &g);
        let m1 = scatter_back(&values, &a, 8, 8, 1, Reduce::Max).unwrap();
        // reversed point order
        let rev_cloud = PointCloud {
            points: points.into_iter().rev().collect(),
            labels: None,
        };
        let rev_values: Vec<f32> = values.into_iter().rev().collect();
        let a2 = assign_cells(&rev_cloud, &g);
        let m2 = scatter_back(&rev_values, &a2, 8, 8, 1, Reduce::Max).unwrap();
        assert_eq!(m1, m2);
    }

    #[test]
    fn scatter_back_parallel_max_matches_sequential() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        let g = grid(16, 16);
        let cloud = PointCloud {
            points: (0..2000)
                .map(|_| Point {
                    x: rng.gen_range(0.0..16.0),
                    y: rng.gen_range(0.0..16.0),
                    z: 0.0,
                    intensity: 0.0,
                })
                .collect(),
            labels: None,
        };
        let a = assign_cells(&cloud, &g);
        let values: Vec<f32> = (0..2000 * 3).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let seq = scatter_back(&values, &a, 16, 16, 3, Reduce::Max).unwrap();
        let par = scatter_back_parallel(&values, &a, 16, 16, 3, Reduce::Max).unwrap();
        assert_eq!(seq, par);
        let seq_mean = scatter_back(&values, &a, 16, 16, 3, Reduce::Mean).unwrap();
        let par_mean = scatter_back_parallel(&values, &a, 16, 16, 3, Reduce::Mean).unwrap();
        for (a, b) in seq_mean.data.iter().zip(&par_mean.data) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn scatter_max_monotone_under_superset() {
        let g = grid(4, 4);
        let mk = |pts: &[(f32, f32, f32)]| {
            let cloud = PointCloud {
                points: pts
                    .iter()
                    .map(|&(x, y, _)| Point {
                        x,
                        y,
                        z: 0.0,
                        intensity: 0.0,
                    })
                    .collect(),
                labels: None,
            };
            let a = assign_cells(&cloud, &g);
            let v: Vec<f32> = pts.iter().map(|p| p.2).collect();
            scatter_back(&v, &a, 4, 4, 1, Reduce::Max).unwrap()
        };
        let small = mk(&[(0.5, 0.5, 1.0), (2.5, 2.5, -1.0)]);
        let big = mk(&[(0.5, 0.5, 1.0), (2.5, 2.5, -1.0), (0.6, 0.6, 4.0), (3.5, 3.5, 2.0)]);
        for (s, b) in small.data.iter().zip(&big.data) {
            assert!(b >= s);
        }
    }

    #[test]
    fn interaction_constant_field_sparse_support() {
        let cart = grid(8, 8);
        let polar = GridSpec::Polar(crate::grid::PolarGridSpec {
            rho_min: 0.0,
            rho_max: 12.0,
            n_rho: 16,
            n_phi: 32,
            swap_atan2_args: false,
        });
        let f_src = FeatureMap::from_data(16, 32, 1, vec![2.5; 16 * 32]).unwrap();
        let cloud = PointCloud {
            points: vec![
                Point {
                    x: 1.5,
                    y: 1.5,
                    z: 0.0,
                    intensity: 0.0,
                },
                Point {
                    x: 6.2,
                    y: 3.3,
                    z: 0.0,
                    intensity: 0.0,
                },
            ],
            labels: None,
        };
        let out = point_based_interaction(&f_src, &polar, &cart, &cloud, Reduce::Max).unwrap();
        let a = assign_cells(&cloud, &cart);
        let mut nonzero = 0;
        for r in 0..8 {
            for c in 0..8 {
                let v = out.cell(r, c)[0];
                if v != 0.0 {
                    nonzero += 1;
                    assert!((v - 2.5).abs() < 1e-6);
                }
            }
        }
        assert_eq!(nonzero, crate::grid::coverage_stats(&a).occupied_cells);
    }

    #[test]
    fn interaction_empty_cloud_zero_map() {
        let cart = grid(4, 4);
        let f_src = FeatureMap::from_data(4, 4, 2, vec![1.0; 32]).unwrap();
        let out =
            point_based_interaction(&f_src, &cart, &cart, &PointCloud::default(), Reduce::Max)
                .unwrap();
        assert!(out.data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn output_fusion_concat_layout() {
        let cart = grid(2, 2);
        let f_cart = FeatureMap::from_data(2, 2, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let polar = GridSpec::Polar(crate::grid::PolarGridSpec {
            rho_min: 0.0,
            rho_max: 4.0,
            n_rho: 4,
            n_phi: 8,
            swap_atan2_args: false,
        });
        let f_polar = FeatureMap::zeros(4, 8, 2);
        let cloud = PointCloud {
            points: vec![Point {
                x: 0.5,
                y: 1.5,
                z: 0.0,
                intensity: 0.0,
            }],
            labels: None,
        };
        let out = point_based_output_fusion(&f_cart, &cart, &f_polar, &polar, &cloud).unwrap();
        assert_eq!(out.len(), 3);
        // (0.5, 1.5) is the center of cartesian cell (1, 0)
        assert!((out[0] - 3.0).abs() < 1e-6);
        assert_eq!(&out[1..], &[0.0, 0.0]);
    }
}
