//! LiDAR scan ingestion: binary scan/label parsing and synthetic scan generation.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f32,
    pub y: f32,
    pub z: f32,
    pub intensity: f32,
}

/// A LiDAR scan: N points with optional per-point semantic labels.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Point>,
    pub labels: Option<Vec<u16>>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Synthetic scan radial profiles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthProfile {
    UniformDisk,
    Ring,
    RadialFalloff,
}

/// Bytes per point record in a scan file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScanStride {
    /// 4 floats per point: x, y, z, intensity (SemanticKITTI).
    Four,
    /// 5 floats per point, 5th ignored (nuScenes).
    Five,
}

impl ScanStride {
    fn bytes(self) -> usize {
        match self {
            ScanStride::Four => 16,
            ScanStride::Five => 20,
        }
    }
}

/// Result of parsing a scan: the cloud plus the number of non-finite points dropped.
#[derive(Debug)]
pub struct ScanReadResult {
    pub cloud: PointCloud,
    pub dropped_nonfinite: usize,
}

pub fn read_scan(path: &Path, stride: ScanStride) -> Result<ScanReadResult> {
    let bytes = std::fs::read(path)?;
    parse_scan(&bytes, stride)
}

pub fn parse_scan(bytes: &[u8], stride: ScanStride) -> Result<ScanReadResult> {
    let record = stride.bytes();
    if bytes.len() % record != 0 {
        return Err(Error::Format(format!(
            "scan size {} is not a multiple of {}",
            bytes.len(),
            record
        )));
    }
    let mut points = Vec::with_capacity(bytes.len() / record);
    let mut dropped = 0usize;
    for rec in bytes.chunks_exact(record) {
        let f = |i: usize| f32::from_le_bytes(rec[4 * i..4 * i + 4].try_into().unwrap());
        let p = Point {
            x: f(0),
            y: f(1),
            z: f(2),
            intensity: f(3),
        };
        if p.x.is_finite() && p.y.is_finite() && p.z.is_finite() && p.intensity.is_finite() {
            points.push(p);
        } else {
            dropped += 1;
        }
    }
    Ok(ScanReadResult {
        cloud: PointCloud {
            points,
            labels: None,
        },
        dropped_nonfinite: dropped,
    })
}

pub fn write_scan(path: &Path, cloud: &PointCloud) -> Result<()> {
    std::fs::write(path, serialize_scan(cloud))?;
    Ok(())
}

pub fn serialize_scan(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(cloud.len() * 16);
    for p in &cloud.points {
        out.extend_from_slice(&p.x.to_le_bytes());
        out.extend_from_slice(&p.y.to_le_bytes());
        out.extend_from_slice(&p.z.to_le_bytes());
        out.extend_from_slice(&p.intensity.to_le_bytes());
    }
    out
}

/// Attach semantic labels to `cloud`. Each record is a little-endian u32 whose
/// lower 16 bits are the semantic class; the upper 16 bits (instance id) are
/// discarded.
pub fn read_labels(path: &Path, cloud: PointCloud) -> Result<PointCloud> {
    let bytes = std::fs::read(path)?;
    parse_labels(&bytes, cloud)
}

pub fn parse_labels(bytes: &[u8], mut cloud: PointCloud) -> Result<PointCloud> {
    if bytes.len() != 4 * cloud.len() {
        return Err(Error::Format(format!(
            "label file has {} bytes, expected {} for {} points",
            bytes.len(),
            4 * cloud.len(),
            cloud.len()
        )));
    }
    let labels = bytes
        .chunks_exact(4)
        .map(|c| (u32::from_le_bytes(c.try_into().unwrap()) & 0xffff) as u16)
        .collect();
    cloud.labels = Some(labels);
    Ok(cloud)
}

pub const SYNTH_RADIUS: f64 = 50.0;

/// Deterministic synthetic scan. Identical (seed, n, profile) always yields a
/// bitwise-identical cloud.
pub fn synth_scan(seed: u64, n_points: usize, profile: SynthProfile) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n_points);
    for _ in 0..n_points {
        let theta: f64 = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
        let u: f64 = rng.gen_range(0.0..1.0);
        let rho = match profile {
            // density uniform over the disk area
            SynthProfile::UniformDisk => SYNTH_RADIUS * u.sqrt(),
            SynthProfile::Ring => 30.0 + 15.0 * u,
            // density falling off as 1/rho
            SynthProfile::RadialFalloff => SYNTH_RADIUS * u,
        };
        let z: f64 = rng.gen_range(-3.0..1.0);
        let intensity: f64 = rng.gen_range(0.0..1.0);
        points.push(Point {
            x: (rho * theta.cos()) as f32,
            y: (rho * theta.sin()) as f32,
            z: z as f32,
            intensity: intensity as f32,
        });
    }
    PointCloud {
        points,
        labels: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_two_point_scan() {
        let mut bytes = Vec::new();
        for v in [1.0f32, 2.0, 0.5, 0.3, -4.0, 0.0, -1.0, 0.9] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let r = parse_scan(&bytes, ScanStride::Four).unwrap();
        assert_eq!(r.cloud.len(), 2);
        assert_eq!(r.dropped_nonfinite, 0);
        assert_eq!(
            r.cloud.points[0],
            Point {
                x: 1.0,
                y: 2.0,
                z: 0.5,
                intensity: 0.3
            }
        );
        assert_eq!(
            r.cloud.points[1],
            Point {
                x: -4.0,
                y: 0.0,
                z: -1.0,
                intensity: 0.9
            }
        );
    }

    #[test]
    fn parse_empty_scan() {
        let r = parse_scan(&[], ScanStride::Four).unwrap();
        assert!(r.cloud.is_empty());
    }

    #[test]
    fn parse_bad_size() {
        assert!(matches!(
            parse_scan(&[0u8; 17], ScanStride::Four),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn parse_stride5() {
        let mut bytes = Vec::new();
        for v in [1.0f32, 2.0, 3.0, 0.5, 99.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let r = parse_scan(&bytes, ScanStride::Five).unwrap();
        assert_eq!(r.cloud.len(), 1);
        assert_eq!(r.cloud.points[0].intensity, 0.5);
    }

    #[test]
    fn nonfinite_points_dropped() {
        let mut bytes = Vec::new();
        for v in [1.0f32, 2.0, 0.5, 0.3, f32::NAN, 0.0, -1.0, 0.9] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let r = parse_scan(&bytes, ScanStride::Four).unwrap();
        assert_eq!(r.cloud.len(), 1);
        assert_eq!(r.dropped_nonfinite, 1);
    }

    #[test]
    fn scan_round_trip() {
        let cloud = synth_scan(3, 57, SynthProfile::UniformDisk);
        let bytes = serialize_scan(&cloud);
        let back = parse_scan(&bytes, ScanStride::Four).unwrap();
        assert_eq!(back.cloud, cloud);
        assert_eq!(serialize_scan(&back.cloud), bytes);
    }

    #[test]
    fn label_masking() {
        let cloud = PointCloud {
            points: vec![Point {
                x: 0.0,
                y: 0.0,
                z: 0.0,
                intensity: 0.0,
            }],
            labels: None,
        };
        let bytes = 0x0003_0028u32.to_le_bytes();
        let cloud = parse_labels(&bytes, cloud).unwrap();
        assert_eq!(cloud.labels.unwrap(), vec![0x0028]);
    }

    #[test]
    fn label_empty_ok() {
        let cloud = parse_labels(&[], PointCloud::default()).unwrap();
        assert_eq!(cloud.labels, Some(vec![]));
    }

    #[test]
    fn label_length_mismatch() {
        let cloud = PointCloud {
            points: vec![
                Point {
                    x: 0.0,
                    y: 0.0,
                    z: 0.0,
                    intensity: 0.0
                };
                2
            ],
            labels: None,
        };
        assert!(matches!(
            parse_labels(&[0u8; 4], cloud),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn synth_deterministic() {
        let a = synth_scan(7, 1000, SynthProfile::UniformDisk);
        let b = synth_scan(7, 1000, SynthProfile::UniformDisk);
        assert_eq!(a, b);
    }

    #[test]
    fn synth_empty() {
        assert!(synth_scan(7, 0, SynthProfile::Ring).is_empty());
    }

    #[test]
    fn synth_stays_in_disk() {
        let cloud = synth_scan(7, 100_000, SynthProfile::UniformDisk);
        for p in &cloud.points {
            let r2 = (p.x as f64).powi(2) + (p.y as f64).powi(2);
            assert!(r2 <= 2500.0 + 1e-3, "point outside disk: r2={r2}");
            assert!(p.z >= -3.0 && p.z <= 1.0);
            assert!(p.intensity >= 0.0 && p.intensity <= 1.0);
        }
    }
}
