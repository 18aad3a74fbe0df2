//! Dual-branch bird's-eye-view feature fusion for LiDAR point clouds.
//!
//! The library projects a scan into a Cartesian and a polar BEV grid,
//! exchanges features between the two partitionings, and compares two
//! interaction mechanisms: precomputed grid-to-grid remap tables and a
//! per-point grid-sample plus scatter-back baseline.

pub mod backbone;
pub mod bench;
pub mod cloud;
pub mod error;
pub mod feature_map;
pub mod grid;
pub mod interaction;
pub mod pillar;
pub mod pipeline;
pub mod remap;
pub mod weights;

pub use error::{Error, Result};
