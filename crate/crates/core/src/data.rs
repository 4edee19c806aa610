//! MNIST / CIFAR-10 loaders and dataset utilities.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::Tensor;

const IDX_IMAGES_MAGIC: u32 = 2051;
const IDX_LABELS_MAGIC: u32 = 2049;
const CIFAR_RECORD: usize = 3073;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub pixels: Tensor,
    pub label: usize,
}

/// An ordered collection of same-shaped labeled images.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: String,
    num_classes: usize,
    images: Vec<LabeledImage>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, num_classes: usize, images: Vec<LabeledImage>) -> Result<Self> {
        if let Some(first) = images.first() {
            let shape = first.pixels.shape();
            for (i, img) in images.iter().enumerate() {
                if img.pixels.shape() != shape {
                    return Err(Error::Data(format!(
                        "image {i} has shape {:?}, expected {shape:?}",
                        img.pixels.shape()
                    )));
                }
                if img.label >= num_classes {
                    return Err(Error::Label {
                        label: img.label,
                        classes: num_classes,
                    });
                }
                if !img.pixels.is_unit_range() {
                    return Err(Error::Data(format!("image {i} has pixels outside [0, 1]")));
                }
            }
        }
        Ok(Self {
            name: name.into(),
            num_classes,
            images,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn images(&self) -> &[LabeledImage] {
        &self.images
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn image_shape(&self) -> Option<&[usize]> {
        self.images.first().map(|i| i.pixels.shape())
    }

    /// Items at `indices`, in that order.
    pub fn select(&self, indices: &[usize], name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            num_classes: self.num_classes,
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
        }
    }

    /// Splits off the last `held_out` items, e.g. as a validation set.
    pub fn split_tail(&self, held_out: usize) -> Result<(Self, Self)> {
        if held_out >= self.len() {
            return Err(Error::Size {
                requested: held_out,
                available: self.len(),
            });
        }
        let cut = self.len() - held_out;
        let head = Self {
            name: format!("{}-train", self.name),
            num_classes: self.num_classes,
            images: self.images[..cut].to_vec(),
        };
        let tail = Self {
            name: format!("{}-valid", self.name),
            num_classes: self.num_classes,
            images: self.images[cut..].to_vec(),
        };
        Ok((head, tail))
    }
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::format(path, offset as u64, "truncated header"))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Parses an IDX image/label file pair. Pixels are scaled by 1/255.
pub fn load_mnist_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let img = read(images_path)?;
    let lab = read(labels_path)?;

    let magic = be_u32(&img, 0, images_path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::format(images_path, 0, format!("image magic {magic}, expected 2051")));
    }
    let magic = be_u32(&lab, 0, labels_path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::format(labels_path, 0, format!("label magic {magic}, expected 2049")));
    }
    let count = be_u32(&img, 4, images_path)? as usize;
    let rows = be_u32(&img, 8, images_path)? as usize;
    let cols = be_u32(&img, 12, images_path)? as usize;
    let label_count = be_u32(&lab, 4, labels_path)? as usize;
    if count != label_count {
        return Err(Error::format(
            labels_path,
            4,
            format!("{label_count} labels for {count} images"),
        ));
    }
    if rows == 0 || cols == 0 {
        return Err(Error::format(images_path, 8, "zero image extent"));
    }
    let pixels = rows * cols;
    if img.len() != 16 + count * pixels {
        return Err(Error::format(
            images_path,
            img.len().min(16 + count * pixels) as u64,
            format!("expected {} bytes, found {}", 16 + count * pixels, img.len()),
        ));
    }
    if lab.len() != 8 + count {
        return Err(Error::format(
            labels_path,
            lab.len().min(8 + count) as u64,
            format!("expected {} bytes, found {}", 8 + count, lab.len()),
        ));
    }
    let mut images = Vec::with_capacity(count);
    for i in 0..count {
        let label = lab[8 + i] as usize;
        if label >= 10 {
            return Err(Error::format(labels_path, (8 + i) as u64, format!("label {label} out of range")));
        }
        let raw = &img[16 + i * pixels..16 + (i + 1) * pixels];
        let data = raw.iter().map(|&b| f32::from(b) / 255.0).collect();
        images.push(LabeledImage {
            pixels: Tensor::new(vec![1, rows, cols], data)?,
            label,
        });
    }
    Dataset::new("mnist", 10, images)
}

/// Parses CIFAR-10 binary batches: 1 label byte then R, G, B 32×32 planes.
pub fn load_cifar10(batch_paths: &[PathBuf]) -> Result<Dataset> {
    let mut images = Vec::new();
    for path in batch_paths {
        let bytes = read(path)?;
        if bytes.len() % CIFAR_RECORD != 0 {
            return Err(Error::format(
                path,
                (bytes.len() - bytes.len() % CIFAR_RECORD) as u64,
                format!("length {} is not a multiple of {CIFAR_RECORD}", bytes.len()),
            ));
        }
        for (r, record) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
            let label = record[0] as usize;
            if label >= 10 {
                return Err(Error::format(path, (r * CIFAR_RECORD) as u64, format!("label {label} out of range")));
            }
            let data = record[1..].iter().map(|&b| f32::from(b) / 255.0).collect();
            images.push(LabeledImage {
                pixels: Tensor::new(vec![3, 32, 32], data)?,
                label,
            });
        }
    }
    Dataset::new("cifar10", 10, images)
}

/// `n` distinct indices into `0..len`, in seeded order.
pub fn sample_indices(len: usize, n: usize, seed: u64) -> Result<Vec<usize>> {
    if n > len {
        return Err(Error::Size {
            requested: n,
            available: len,
        });
    }
    let mut idx: Vec<usize> = (0..len).collect();
    let mut rng = seed::rng(seed);
    let (chosen, _) = idx.partial_shuffle(&mut rng, n);
    Ok(chosen.to_vec())
}

pub fn sample_subset(d: &Dataset, n: usize, seed: u64) -> Result<Dataset> {
    let idx = sample_indices(d.len(), n, seed)?;
    Ok(d.select(&idx, format!("{}-subset{n}", d.name)))
}

/// Per-channel population mean and standard deviation, std floored at 1e-6.
pub fn channel_stats(d: &Dataset) -> Result<Vec<(f32, f32)>> {
    let shape = d
        .image_shape()
        .ok_or_else(|| Error::Data("channel statistics of an empty dataset".into()))?;
    let channels = shape[0];
    let plane = shape[1..].iter().product::<usize>();
    let mut sum = vec![0f64; channels];
    let mut sq = vec![0f64; channels];
    for img in d.images() {
        for (c, chunk) in img.pixels.data().chunks(plane).enumerate() {
            for &v in chunk {
                let v = f64::from(v);
                sum[c] += v;
                sq[c] += v * v;
            }
        }
    }
    let n = (d.len() * plane) as f64;
    Ok((0..channels)
        .map(|c| {
            let mean = sum[c] / n;
            let var = (sq[c] / n - mean * mean).max(0.0);
            (mean as f32, (var.sqrt() as f32).max(1e-6))
        })
        .collect())
}
