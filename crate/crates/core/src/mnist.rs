//! MNIST in the IDX binary format.

use std::path::{Path, PathBuf};

use crate::error::{GconvError, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Images scaled to `[0, 1]`, row-major, one after the other.
#[derive(Debug, Clone, PartialEq)]
pub struct MnistSet {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<f64>,
    pub labels: Vec<u8>,
}

impl MnistSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let n = self.rows * self.cols;
        &self.pixels[i * n..(i + 1) * n]
    }

    /// First `n` samples (or all of them).
    pub fn truncated(mut self, n: usize) -> Self {
        let n = n.min(self.len());
        self.labels.truncate(n);
        self.pixels.truncate(n * self.rows * self.cols);
        self
    }
}

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| GconvError::Truncated(format!("{what} header")))
}

fn check_magic(bytes: &[u8], expected: u32, what: &str) -> Result<()> {
    let found = be_u32(bytes, 0, what)?;
    if found != expected {
        return Err(GconvError::BadMagic { expected, found });
    }
    Ok(())
}

/// Decodes an `idx3-ubyte` image file into `(count, rows, cols, pixels)`.
pub fn parse_images(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<f64>)> {
    check_magic(bytes, IMAGES_MAGIC, "image file")?;
    let count = be_u32(bytes, 4, "image file")? as usize;
    let rows = be_u32(bytes, 8, "image file")? as usize;
    let cols = be_u32(bytes, 12, "image file")? as usize;
    let need = count * rows * cols;
    let body = bytes
        .get(16..16 + need)
        .ok_or_else(|| GconvError::Truncated(format!("image file: need {need} pixel bytes")))?;
    Ok((count, rows, cols, body.iter().map(|&b| f64::from(b) / 255.0).collect()))
}

pub fn parse_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    check_magic(bytes, LABELS_MAGIC, "label file")?;
    let count = be_u32(bytes, 4, "label file")? as usize;
    let body = bytes
        .get(8..8 + count)
        .ok_or_else(|| GconvError::Truncated(format!("label file: need {count} labels")))?;
    if let Some(&bad) = body.iter().find(|&&l| l > 9) {
        return Err(GconvError::InvalidParameter(format!("label {bad} outside 0..=9")));
    }
    Ok(body.to_vec())
}

fn find(dir: &Path, stem: &str) -> Result<PathBuf> {
    // accept both `train-images-idx3-ubyte` and `train-images.idx3-ubyte`
    let dotted = stem.replacen("-idx", ".idx", 1);
    [stem, dotted.as_str()]
        .iter()
        .map(|name| dir.join(name))
        .find(|p| p.is_file())
        .ok_or_else(|| {
            GconvError::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("{stem} not found in {}", dir.display()),
            ))
        })
}

fn load_pair(dir: &Path, images: &str, labels: &str) -> Result<MnistSet> {
    let (count, rows, cols, pixels) = parse_images(&std::fs::read(find(dir, images)?)?)?;
    let labels = parse_labels(&std::fs::read(find(dir, labels)?)?)?;
    if labels.len() != count {
        return Err(GconvError::LengthMismatch {
            what: "labels vs images",
            expected: count,
            actual: labels.len(),
        });
    }
    Ok(MnistSet {
        rows,
        cols,
        pixels,
        labels,
    })
}

/// Loads the `(train, test)` splits from the four standard IDX files.
pub fn load_mnist(dir: &Path) -> Result<(MnistSet, MnistSet)> {
    Ok((
        load_pair(dir, "train-images-idx3-ubyte", "train-labels-idx1-ubyte")?,
        load_pair(dir, "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")?,
    ))
}

/// Resolves the MNIST directory: explicit path, then `GCONV_MNIST_DIR`.
pub fn resolve_dir(explicit: Option<&Path>) -> Option<PathBuf> {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os("GCONV_MNIST_DIR").map(PathBuf::from))
}
