//! Dataset generation and ingestion: the two-Gaussian toy data and IDX-format
//! image files.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("sigma must be positive, got {0}")]
    BadSigma(f64),
    #[error("n_per_class must be ≥ 1")]
    EmptyClass,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad IDX magic {got:#010x} at offset {offset}, expected {expected:#010x}")]
    BadMagic {
        got: u32,
        expected: u32,
        offset: usize,
    },
    #[error("truncated IDX file at offset {offset}")]
    Truncated { offset: usize },
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

const TOY_MEANS: [[f64; 2]; 2] = [[0.0, 0.0], [10.0, 10.0]];

/// Two well-separated Gaussian blobs in the plane with a stratified 90/10
/// train/test split.
#[derive(Clone, Debug)]
pub struct ToyDataset {
    pub xs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub sigma: f64,
    pub seed: u64,
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
}

/// `n_per_class` samples from each of `N((0,0)ᵀ, σ²I₂)` and
/// `N((10,10)ᵀ, σ²I₂)`, shuffled with labels retained.
pub fn generate_toy(sigma: f64, n_per_class: usize, seed: u64) -> Result<ToyDataset, DataError> {
    if !(sigma > 0.0) {
        return Err(DataError::BadSigma(sigma));
    }
    if n_per_class == 0 {
        return Err(DataError::EmptyClass);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xs = Vec::with_capacity(2 * n_per_class);
    let mut labels = Vec::with_capacity(2 * n_per_class);
    for (class, mean) in TOY_MEANS.iter().enumerate() {
        for _ in 0..n_per_class {
            let e0: f64 = StandardNormal.sample(&mut rng);
            let e1: f64 = StandardNormal.sample(&mut rng);
            xs.push(vec![mean[0] + sigma * e0, mean[1] + sigma * e1]);
            labels.push(class);
        }
    }
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.shuffle(&mut rng);
    let xs: Vec<Vec<f64>> = order.iter().map(|&i| xs[i].clone()).collect();
    let labels: Vec<usize> = order.iter().map(|&i| labels[i]).collect();

    // stratified 90/10 split over the shuffled order
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for class in 0..TOY_MEANS.len() {
        let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        let n_train = (members.len() * 9) / 10;
        train_idx.extend_from_slice(&members[..n_train]);
        test_idx.extend_from_slice(&members[n_train..]);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();

    Ok(ToyDataset {
        xs,
        labels,
        sigma,
        seed,
        train_idx,
        test_idx,
    })
}

impl ToyDataset {
    pub fn train_xs(&self) -> Vec<Vec<f64>> {
        self.train_idx.iter().map(|&i| self.xs[i].clone()).collect()
    }

    pub fn test_xs(&self) -> Vec<Vec<f64>> {
        self.test_idx.iter().map(|&i| self.xs[i].clone()).collect()
    }

    pub fn train_labels(&self) -> Vec<usize> {
        self.train_idx.iter().map(|&i| self.labels[i]).collect()
    }

    pub fn test_labels(&self) -> Vec<usize> {
        self.test_idx.iter().map(|&i| self.labels[i]).collect()
    }

    /// CSV export with header `x1,x2,label`.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<(), DataError> {
        writeln!(out, "x1,x2,label")?;
        for (x, label) in self.xs.iter().zip(&self.labels) {
            writeln!(out, "{},{},{label}", x[0], x[1])?;
        }
        Ok(())
    }
}

fn read_u32_be(bytes: &[u8], offset: usize) -> Result<u32, DataError> {
    let end = offset + 4;
    if end > bytes.len() {
        return Err(DataError::Truncated { offset });
    }
    Ok(u32::from_be_bytes(bytes[offset..end].try_into().expect("4 bytes")))
}

/// Load an IDX image file: pixels scaled to `[0, 1]`, returned row-major per
/// image along with `(height, width)`.
pub fn load_idx_images(path: &Path) -> Result<(Vec<Vec<f64>>, (usize, usize)), DataError> {
    let bytes = std::fs::read(path)?;
    let magic = read_u32_be(&bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(DataError::BadMagic {
            got: magic,
            expected: IDX_IMAGES_MAGIC,
            offset: 0,
        });
    }
    let n = read_u32_be(&bytes, 4)? as usize;
    let h = read_u32_be(&bytes, 8)? as usize;
    let w = read_u32_be(&bytes, 12)? as usize;
    let expected_len = 16 + n * h * w;
    if bytes.len() < expected_len {
        return Err(DataError::Truncated { offset: bytes.len() });
    }
    let mut images = Vec::with_capacity(n);
    for i in 0..n {
        let start = 16 + i * h * w;
        images.push(
            bytes[start..start + h * w]
                .iter()
                .map(|&b| b as f64 / 255.0)
                .collect(),
        );
    }
    Ok((images, (h, w)))
}

/// Load an IDX label file.
pub fn load_idx_labels(path: &Path) -> Result<Vec<usize>, DataError> {
    let bytes = std::fs::read(path)?;
    let magic = read_u32_be(&bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(DataError::BadMagic {
            got: magic,
            expected: IDX_LABELS_MAGIC,
            offset: 0,
        });
    }
    let n = read_u32_be(&bytes, 4)? as usize;
    if bytes.len() < 8 + n {
        return Err(DataError::Truncated { offset: bytes.len() });
    }
    Ok(bytes[8..8 + n].iter().map(|&b| b as usize).collect())
}

/// Write images in IDX format (bytes taken as `round(255·pixel)`).
pub fn write_idx_images(
    path: &Path,
    images: &[Vec<f64>],
    height: usize,
    width: usize,
) -> Result<(), DataError> {
    let mut bytes = Vec::with_capacity(16 + images.len() * height * width);
    bytes.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    bytes.extend_from_slice(&(images.len() as u32).to_be_bytes());
    bytes.extend_from_slice(&(height as u32).to_be_bytes());
    bytes.extend_from_slice(&(width as u32).to_be_bytes());
    for img in images {
        for &p in img {
            bytes.push((p * 255.0).round().clamp(0.0, 255.0) as u8);
        }
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Write labels in IDX format.
pub fn write_idx_labels(path: &Path, labels: &[usize]) -> Result<(), DataError> {
    let mut bytes = Vec::with_capacity(8 + labels.len());
    bytes.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    bytes.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    bytes.extend(labels.iter().map(|&l| l as u8));
    std::fs::write(path, bytes)?;
    Ok(())
}
