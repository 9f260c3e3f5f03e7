//! Dataset loading (IDX and raw grayscale) and the complementary pixel code.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
    Unspecified,
}

/// Grayscale images with class labels. Pixels are stored row-major in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pixels: Vec<f32>,
    labels: Vec<u8>,
    pub width: usize,
    pub height: usize,
    pub n_classes: usize,
    pub split: Split,
}

impl Dataset {
    /// Builds a dataset from normalized pixels, checking every invariant.
    pub fn new(
        pixels: Vec<f32>,
        labels: Vec<u8>,
        width: usize,
        height: usize,
        n_classes: usize,
    ) -> Result<Dataset> {
        let frame = width * height;
        if frame == 0 || pixels.len() % frame != 0 {
            return Err(Error::ShapeMismatch {
                what: "image pixels",
                expected: frame,
                actual: pixels.len(),
            });
        }
        if pixels.len() / frame != labels.len() {
            return Err(Error::CountMismatch {
                images: pixels.len() / frame,
                labels: labels.len(),
            });
        }
        if let Some((index, &value)) = pixels
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::PixelDomain { index, value });
        }
        if let Some(&l) = labels.iter().find(|&&l| l as usize >= n_classes) {
            return Err(Error::LabelOutOfRange {
                label: l as usize,
                n_classes,
            });
        }
        Ok(Dataset {
            pixels,
            labels,
            width,
            height,
            n_classes,
            split: Split::Unspecified,
        })
    }

    pub fn with_split(mut self, split: Split) -> Dataset {
        self.split = split;
        self
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn image(&self, n: usize) -> &[f32] {
        let f = self.n_pixels();
        &self.pixels[n * f..(n + 1) * f]
    }

    pub fn label(&self, n: usize) -> usize {
        self.labels[n] as usize
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = (&[f32], usize)> + '_ {
        self.pixels
            .chunks_exact(self.n_pixels())
            .zip(self.labels.iter().map(|&l| l as usize))
    }

    /// The first `n` samples (or all of them if fewer exist).
    pub fn take(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            pixels: self.pixels[..n * self.n_pixels()].to_vec(),
            labels: self.labels[..n].to_vec(),
            ..*self
        }
    }

    /// Samples in the given order.
    pub fn select(&self, order: &[usize]) -> Dataset {
        let mut pixels = Vec::with_capacity(order.len() * self.n_pixels());
        for &n in order {
            pixels.extend_from_slice(self.image(n));
        }
        Dataset {
            pixels,
            labels: order.iter().map(|&n| self.labels[n]).collect(),
            ..*self
        }
    }

    /// Count of each label.
    pub fn histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.n_classes];
        for &l in &self.labels {
            h[l as usize] += 1;
        }
        h
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::dataset_io(path, e))
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(bytes[at..at + 4].try_into().unwrap())
}

fn truncated(path: &Path, expected: usize, found: usize) -> Error {
    Error::TruncatedPayload {
        path: path.to_path_buf(),
        expected: expected as u64,
        found: found as u64,
    }
}

fn check_magic(path: &Path, bytes: &[u8], expected: u32, header: usize) -> Result<()> {
    if bytes.len() < 4 {
        return Err(truncated(path, header, bytes.len()));
    }
    let found = be_u32(bytes, 0);
    if found != expected {
        return Err(Error::BadIdxMagic {
            path: path.to_path_buf(),
            expected,
            found,
        });
    }
    if bytes.len() < header {
        return Err(truncated(path, header, bytes.len()));
    }
    Ok(())
}

/// Reads an IDX image file and its matching IDX label file. The number of
/// classes is taken as `max(label) + 1`, at least 10.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let images = read(ip)?;
    let labels = read(lp)?;

    check_magic(ip, &images, IDX_IMAGES_MAGIC, 16)?;
    let n = be_u32(&images, 4) as usize;
    let rows = be_u32(&images, 8) as usize;
    let cols = be_u32(&images, 12) as usize;
    let need = 16 + n * rows * cols;
    if images.len() < need {
        return Err(truncated(ip, need, images.len()));
    }

    check_magic(lp, &labels, IDX_LABELS_MAGIC, 8)?;
    let n_labels = be_u32(&labels, 4) as usize;
    if labels.len() < 8 + n_labels {
        return Err(truncated(lp, 8 + n_labels, labels.len()));
    }
    if n != n_labels {
        return Err(Error::CountMismatch {
            images: n,
            labels: n_labels,
        });
    }

    let pixels = images[16..need].iter().map(|&b| b as f32 / 255.0).collect();
    let labels = labels[8..8 + n].to_vec();
    let n_classes = labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0).max(10);
    Dataset::new(pixels, labels, cols, rows, n_classes)
}

/// Reads headerless row-major 8-bit images plus an `index,label` CSV.
pub fn load_raw_gray(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    width: usize,
    height: usize,
    n_classes: usize,
) -> Result<Dataset> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let images = read(ip)?;
    let frame = width * height;
    if frame == 0 || images.len() % frame != 0 {
        return Err(Error::RawLength {
            len: images.len() as u64,
            frame,
            width,
            height,
        });
    }
    let n = images.len() / frame;

    let text = fs::read_to_string(lp).map_err(|e| Error::dataset_io(lp, e))?;
    let mut labels = vec![None; n];
    let mut count = 0;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let bad = |message: String| Error::BadLabel {
            line: lineno + 1,
            message,
        };
        let (idx, label) = line
            .split_once(',')
            .ok_or_else(|| bad(format!("expected `index,label`, got {line:?}")))?;
        let (idx, label) = (idx.trim(), label.trim());
        let Ok(idx) = idx.parse::<usize>() else {
            // Tolerate a header row.
            if lineno == 0 && idx.parse::<f64>().is_err() && label.parse::<f64>().is_err() {
                continue;
            }
            return Err(bad(format!("non-numeric index {idx:?}")));
        };
        let label: usize = label
            .parse()
            .map_err(|_| bad(format!("non-numeric label {label:?}")))?;
        if label >= n_classes {
            return Err(Error::LabelOutOfRange { label, n_classes });
        }
        if idx >= n {
            return Err(Error::IndexOutOfRange {
                what: "label row",
                index: idx,
                len: n,
            });
        }
        if labels[idx].replace(label as u8).is_some() {
            return Err(bad(format!("duplicate index {idx}")));
        }
        count += 1;
    }
    if count != n {
        return Err(Error::CountMismatch {
            images: n,
            labels: count,
        });
    }
    let labels = labels.into_iter().map(Option::unwrap).collect();
    let pixels = images.iter().map(|&b| b as f32 / 255.0).collect();
    Dataset::new(pixels, labels, width, height, n_classes)
}

/// Maps each pixel `v` to the pair `(1 - v, v)`.
pub fn complementary_encode(image: &[f32]) -> Result<Vec<f32>> {
    let mut out = vec![0.0; image.len() * 2];
    complementary_encode_into(image, &mut out)?;
    Ok(out)
}

pub fn complementary_encode_into(image: &[f32], out: &mut [f32]) -> Result<()> {
    if out.len() != image.len() * 2 {
        return Err(Error::ShapeMismatch {
            what: "encoded input",
            expected: image.len() * 2,
            actual: out.len(),
        });
    }
    for (index, (&v, pair)) in image.iter().zip(out.chunks_exact_mut(2)).enumerate() {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::PixelDomain { index, value: v });
        }
        pair[0] = 1.0 - v;
        pair[1] = v;
    }
    Ok(())
}
