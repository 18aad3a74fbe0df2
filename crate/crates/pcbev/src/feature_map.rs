//! Dense H x W x C feature maps and the "BFM1" file format.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Dense row-major feature map; a cell's C channels are contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl FeatureMap {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        FeatureMap {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn from_data(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "feature map data length {} != {}x{}x{}",
                data.len(),
                height,
                width,
                channels
            )));
        }
        Ok(FeatureMap {
            height,
            width,
            channels,
            data,
        })
    }

    /// Build a map by evaluating `f(x, y)` per channel at every cell center.
    pub fn from_fn(
        grid: &crate::grid::GridSpec,
        channels: usize,
        mut f: impl FnMut(f64, f64, usize) -> f32,
    ) -> Self {
        let (h, w) = grid.dims();
        let mut map = FeatureMap::zeros(h, w, channels);
        for r in 0..h {
            for c in 0..w {
                let (x, y) = grid.cell_center_world(r, c);
                for ch in 0..channels {
                    map.data[(r * w + c) * channels + ch] = f(x, y, ch);
                }
            }
        }
        map
    }

    #[inline]
    pub fn cell(&self, row: usize, col: usize) -> &[f32] {
        let base = (row * self.width + col) * self.channels;
        &self.data[base..base + self.channels]
    }

    #[inline]
    pub fn cell_mut(&mut self, row: usize, col: usize) -> &mut [f32] {
        let base = (row * self.width + col) * self.channels;
        &mut self.data[base..base + self.channels]
    }

    pub fn same_dims(&self, other: &FeatureMap) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    /// Channelwise concatenation of two maps with identical H and W.
    pub fn concat_channels(&self, other: &FeatureMap) -> Result<FeatureMap> {
        if self.height != other.height || self.width != other.width {
            return Err(Error::Shape("concat_channels: H/W mismatch".into()));
        }
        let channels = self.channels + other.channels;
        let mut out = FeatureMap::zeros(self.height, self.width, channels);
        for r in 0..self.height {
            for c in 0..self.width {
                let dst = out.cell_mut(r, c);
                dst[..self.channels].copy_from_slice(self.cell(r, c));
                dst[self.channels..].copy_from_slice(other.cell(r, c));
            }
        }
        Ok(out)
    }

    pub fn write_bfm1(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        w.write_all(b"BFM1")?;
        w.write_all(&(self.height as u32).to_le_bytes())?;
        w.write_all(&(self.width as u32).to_le_bytes())?;
        w.write_all(&(self.channels as u32).to_le_bytes())?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_bfm1(path: &Path) -> Result<FeatureMap> {
        let file = std::fs::File::open(path)?;
        let mut r = std::io::BufReader::new(file);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"BFM1" {
            return Err(Error::Format("bad BFM1 magic".into()));
        }
        let mut dims = [0u8; 12];
        r.read_exact(&mut dims)?;
        let h = u32::from_le_bytes(dims[0..4].try_into().unwrap()) as usize;
        let w = u32::from_le_bytes(dims[4..8].try_into().unwrap()) as usize;
        let c = u32::from_le_bytes(dims[8..12].try_into().unwrap()) as usize;
        let mut raw = Vec::new();
        r.read_to_end(&mut raw)?;
        if raw.len() != h * w * c * 4 {
            return Err(Error::Format(format!(
                "BFM1 payload {} bytes, expected {}",
                raw.len(),
                h * w * c * 4
            )));
        }
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        FeatureMap::from_data(h, w, c, data)
    }
}
