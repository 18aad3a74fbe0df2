//! Randomized invariants for binning, remap tables, scatter reductions and
//! the on-disk formats.

use proptest::prelude::*;

use pcbev::cloud::{Point, PointCloud};
use pcbev::feature_map::FeatureMap;
use pcbev::grid::{
    assign_cells, cartesian_cell, polar_cell, CartesianGridSpec, GridSpec, PolarGridSpec,
};
use pcbev::interaction::{scatter_back, Reduce};
use pcbev::remap::{build_remap_table, RemapMode};

fn small_cart() -> CartesianGridSpec {
    CartesianGridSpec {
        x_min: -10.0,
        x_max: 10.0,
        y_min: -10.0,
        y_max: 10.0,
        width: 16,
        height: 16,
    }
}

fn small_polar(n_rho: usize, n_phi: usize) -> PolarGridSpec {
    PolarGridSpec {
        rho_min: 0.0,
        rho_max: 10.0,
        n_rho,
        n_phi,
        swap_atan2_args: false,
    }
}

proptest! {
    // half-open binning: any in-range point lands in bounds and its cell's
    // world interval contains it
    #[test]
    fn cartesian_cell_contains_point(x in -10.0f64..10.0, y in -10.0f64..10.0) {
        let g = small_cart();
        let (row, col) = cartesian_cell(&g, x, y).expect("in-range point must bin");
        prop_assert!(row < 16 && col < 16);
        let step = 20.0 / 16.0;
        let x0 = g.x_min + col as f64 * step;
        let y0 = g.y_min + row as f64 * step;
        prop_assert!(x0 <= x && x < x0 + step + 1e-12);
        prop_assert!(y0 <= y && y < y0 + step + 1e-12);
    }

    // polar binning: rho in range always bins, col within bounds, and the
    // binned rho interval contains the point's radius
    #[test]
    fn polar_cell_bounds(x in -20.0f64..20.0, y in -20.0f64..20.0) {
        let g = small_polar(8, 12);
        let rho = x.hypot(y);
        match polar_cell(&g, x, y) {
            Some((row, col)) => {
                prop_assert!(rho < 10.0);
                prop_assert!(row < 8 && col < 12);
                let step = 10.0 / 8.0;
                prop_assert!(row as f64 * step <= rho && rho < (row + 1) as f64 * step + 1e-12);
            }
            None => prop_assert!(rho >= 10.0),
        }
    }

    // bilinear tables have non-negative weights summing to 1 or exactly 0
    #[test]
    fn bilinear_weights_partition_unity(
        n_rho in 2usize..12,
        n_phi in 3usize..16,
        side in 4usize..20,
    ) {
        let src = GridSpec::Polar(small_polar(n_rho, n_phi));
        let dest = GridSpec::Cartesian(CartesianGridSpec { width: side, height: side, ..small_cart() });
        let table = build_remap_table(&src, &dest, RemapMode::Bilinear).unwrap();
        for cell in 0..side * side {
            let w = table.bilinear_w[cell];
            let sum: f64 = w.iter().map(|&v| v as f64).sum();
            prop_assert!(w.iter().all(|&v| v >= 0.0));
            prop_assert!(sum == 0.0 || (sum - 1.0).abs() <= 1e-6);
            for (&idx, &wt) in table.bilinear_idx[cell].iter().zip(&w) {
                prop_assert!(idx >= -1 && (idx as i64) < (n_rho * n_phi) as i64);
                if wt > 0.0 {
                    prop_assert!(idx >= 0);
                }
            }
        }
    }

    // nearest tables index in range or carry the -1 sentinel
    #[test]
    fn nearest_indices_in_range(n_rho in 2usize..12, n_phi in 3usize..16) {
        let src = GridSpec::Cartesian(small_cart());
        let dest = GridSpec::Polar(small_polar(n_rho, n_phi));
        let table = build_remap_table(&src, &dest, RemapMode::Nearest).unwrap();
        for &idx in &table.nearest {
            prop_assert!(idx >= -1 && (idx as i64) < 256);
        }
    }

    // max scatter is invariant under any permutation of the points
    #[test]
    fn scatter_max_order_invariant(
        pts in prop::collection::vec(((-9.9f32..9.9), (-9.9f32..9.9), (-1.0f32..1.0)), 1..60),
        seed in 0u64..1000,
    ) {
        let g = GridSpec::Cartesian(small_cart());
        let cloud = PointCloud {
            points: pts.iter().map(|&(x, y, v)| Point { x, y, z: v, intensity: 0.0 }).collect(),
            labels: None,
        };
        let assignment = assign_cells(&cloud, &g);
        let values: Vec<f32> = pts.iter().map(|&(_, _, v)| v).collect();
        let a = scatter_back(&values, &assignment, 16, 16, 1, Reduce::Max).unwrap();

        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut order: Vec<usize> = (0..pts.len()).collect();
        order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let shuffled = PointCloud {
            points: order.iter().map(|&i| cloud.points[i]).collect(),
            labels: None,
        };
        let s_assignment = assign_cells(&shuffled, &g);
        let s_values: Vec<f32> = order.iter().map(|&i| values[i]).collect();
        let b = scatter_back(&s_values, &s_assignment, 16, 16, 1, Reduce::Max).unwrap();
        prop_assert_eq!(a.data, b.data);
    }

    // feature map serialization round-trips bit-exactly
    #[test]
    fn bfm1_round_trip(
        h in 1usize..6,
        w in 1usize..6,
        c in 1usize..4,
        seed in 0u64..1000,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let map = FeatureMap::from_data(
            h, w, c,
            (0..h * w * c).map(|_| rng.gen_range(-1e6f32..1e6)).collect(),
        ).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("map.bfm1");
        map.write_bfm1(&path).unwrap();
        let back = FeatureMap::read_bfm1(&path).unwrap();
        prop_assert_eq!(map, back);
    }
}
