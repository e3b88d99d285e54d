use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DepthMap, DepthUnits, Resolution, RgbImage};
use crate::error::{Error, Result};

pub const INDEX_FILE: &str = "index.json";
pub const DATA_FILE: &str = "pairs.bin";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub format_version: u32,
    pub count: usize,
    pub rgb_shape: [usize; 3],
    pub depth_shape: [usize; 2],
    pub far_clip: f64,
    /// Depth cells are stored normalized as `2·d/far − 1`.
    pub depth_normalization: String,
    pub rgb_encoding: String,
    pub seed: u64,
}

/// Matched (RGB, reduced normalized depth) pairs. Images are kept as bytes.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthDataset {
    pub height: usize,
    pub width: usize,
    pub far_clip: f64,
    pub seed: u64,
    rgb: Vec<u8>,
    depth: Vec<f64>,
    depth_rows: usize,
    depth_cols: usize,
}

impl DepthDataset {
    pub fn new(height: usize, width: usize, depth_rows: usize, depth_cols: usize, far_clip: f64, seed: u64) -> Self {
        Self { height, width, far_clip, seed, rgb: Vec::new(), depth: Vec::new(), depth_rows, depth_cols }
    }

    fn image_len(&self) -> usize {
        self.height * self.width * 3
    }

    fn depth_len(&self) -> usize {
        self.depth_rows * self.depth_cols
    }

    pub fn len(&self) -> usize {
        self.depth.len() / self.depth_len()
    }

    pub fn is_empty(&self) -> bool {
        self.depth.is_empty()
    }

    pub fn push(&mut self, image: &RgbImage, depth: &DepthMap) -> Result<()> {
        if image.height != self.height || image.width != self.width {
            return Err(Error::data("image shape does not match dataset"));
        }
        if depth.rows != self.depth_rows || depth.cols != self.depth_cols || depth.units != DepthUnits::Normalized {
            return Err(Error::data("depth map must be reduced and normalized"));
        }
        self.rgb.extend(image.to_bytes());
        self.depth.extend_from_slice(&depth.values);
        Ok(())
    }

    pub fn image(&self, i: usize) -> RgbImage {
        let n = self.image_len();
        RgbImage::from_bytes(self.height, self.width, &self.rgb[i * n..(i + 1) * n]).expect("consistent length")
    }

    /// Image `i` mapped to [−1, 1] without an intermediate [`RgbImage`].
    pub fn network_input(&self, i: usize) -> Vec<f64> {
        let n = self.image_len();
        self.rgb[i * n..(i + 1) * n].iter().map(|&b| 2.0 * (b as f32 / 255.0) as f64 - 1.0).collect()
    }

    pub fn depth(&self, i: usize) -> DepthMap {
        let n = self.depth_len();
        DepthMap {
            rows: self.depth_rows,
            cols: self.depth_cols,
            values: self.depth[i * n..(i + 1) * n].to_vec(),
            resolution: Resolution::Reduced,
            units: DepthUnits::Normalized,
        }
    }

    pub fn index(&self) -> DatasetIndex {
        DatasetIndex {
            format_version: 1,
            count: self.len(),
            rgb_shape: [self.height, self.width, 3],
            depth_shape: [self.depth_rows, self.depth_cols],
            far_clip: self.far_clip,
            depth_normalization: "affine [0, far_clip] -> [-1, 1]".into(),
            rgb_encoding: "u8, value/255".into(),
            seed: self.seed,
        }
    }

    /// Writes `index.json` and `pairs.bin` (per pair: image bytes, then depth
    /// cells as little-endian f64).
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(INDEX_FILE), serde_json::to_vec_pretty(&self.index())?)?;
        let mut w = BufWriter::new(fs::File::create(dir.join(DATA_FILE))?);
        let (ni, nd) = (self.image_len(), self.depth_len());
        for i in 0..self.len() {
            w.write_all(&self.rgb[i * ni..(i + 1) * ni])?;
            for v in &self.depth[i * nd..(i + 1) * nd] {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let index_path = dir.join(INDEX_FILE);
        if !index_path.exists() {
            return Err(Error::MissingArtifact(index_path));
        }
        let index: DatasetIndex = serde_json::from_slice(&fs::read(&index_path)?)?;
        let [h, w, c] = index.rgb_shape;
        if c != 3 {
            return Err(Error::data("rgb images must have 3 channels"));
        }
        let [dr, dc] = index.depth_shape;
        let mut ds = Self::new(h, w, dr, dc, index.far_clip, index.seed);
        let (ni, nd) = (ds.image_len(), ds.depth_len());
        let mut bytes = Vec::new();
        fs::File::open(dir.join(DATA_FILE))?.read_to_end(&mut bytes)?;
        if bytes.len() != index.count * (ni + nd * 8) {
            return Err(Error::data(format!("{} bytes for {} pairs", bytes.len(), index.count)));
        }
        ds.rgb.reserve(index.count * ni);
        ds.depth.reserve(index.count * nd);
        for rec in bytes.chunks_exact(ni + nd * 8) {
            ds.rgb.extend_from_slice(&rec[..ni]);
            ds.depth.extend(rec[ni..].chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())));
        }
        Ok(ds)
    }

    /// Deterministic 90/10 split by index: every tenth pair validates.
    pub fn split_indices(&self) -> (Vec<usize>, Vec<usize>) {
        (0..self.len()).partition(|i| i % 10 != 9)
    }
}
