//! MNIST IDX parsing, pixel normalization, and deterministic batch streams.

use crate::error::{Error, Result};
use byteorder::{BigEndian, ReadBytesExt, WriteBytesExt};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::Read;
use std::path::Path;

pub const IMG_SIDE: usize = 28;
pub const IMG_PIXELS: usize = IMG_SIDE * IMG_SIDE;

const MAGIC_IMAGES: u32 = 0x0000_0803;
const MAGIC_LABELS: u32 = 0x0000_0801;

/// 28x28 grayscale raster with intensities in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub pixels: Vec<f32>,
}

impl Image {
    pub fn new(pixels: Vec<f32>) -> Result<Self> {
        if pixels.len() != IMG_PIXELS {
            return Err(Error::Shape(format!(
                "image must have {IMG_PIXELS} pixels, got {}",
                pixels.len()
            )));
        }
        Ok(Image { pixels })
    }

    pub fn zeros() -> Self {
        Image {
            pixels: vec![0.0; IMG_PIXELS],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.pixels[y * IMG_SIDE + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.pixels[y * IMG_SIDE + x] = v;
    }
}

#[derive(Debug, Clone)]
pub struct LabeledImage {
    pub image: Image,
    pub label: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Ordered, immutable collection of labeled images.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub items: Vec<LabeledImage>,
    pub split: Split,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// First `n` items in original file order; no shuffle before the cut.
    pub fn take_prefix(&self, n: usize) -> Result<Dataset> {
        if n > self.items.len() {
            return Err(Error::Range(format!(
                "prefix {n} exceeds dataset size {}",
                self.items.len()
            )));
        }
        Ok(Dataset {
            items: self.items[..n].to_vec(),
            split: self.split,
        })
    }

    /// Seeded minibatch stream for one epoch: a fresh permutation of all
    /// indices, chunked; the final short batch is included.
    pub fn batches(&self, batch_size: usize, seed: u64) -> Vec<Vec<usize>> {
        assert!(batch_size >= 1, "batch size must be >= 1");
        let mut order: Vec<usize> = (0..self.items.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        order.shuffle(&mut rng);
        order.chunks(batch_size).map(|c| c.to_vec()).collect()
    }
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    r.read_u32::<BigEndian>()
        .map_err(|_| Error::Format(format!("truncated IDX header while reading {what}")))
}

/// Parse an IDX image file: big-endian magic 0x00000803, count, rows=28,
/// cols=28, then raw bytes mapped to [0,1] by v/255.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Vec<Image>> {
    let mut r = bytes;
    let magic = read_u32(&mut r, "magic")?;
    if magic != MAGIC_IMAGES {
        return Err(Error::Format(format!(
            "bad image magic {magic:#010x}, expected {MAGIC_IMAGES:#010x}"
        )));
    }
    let count = read_u32(&mut r, "count")? as usize;
    let rows = read_u32(&mut r, "rows")? as usize;
    let cols = read_u32(&mut r, "cols")? as usize;
    if rows != IMG_SIDE || cols != IMG_SIDE {
        return Err(Error::Format(format!(
            "unsupported image shape {rows}x{cols}, only 28x28 is handled"
        )));
    }
    if r.len() != count * IMG_PIXELS {
        return Err(Error::Format(format!(
            "image payload holds {} bytes, expected {} for {count} images",
            r.len(),
            count * IMG_PIXELS
        )));
    }
    let mut images = Vec::with_capacity(count);
    for i in 0..count {
        let raw = &r[i * IMG_PIXELS..(i + 1) * IMG_PIXELS];
        images.push(Image {
            pixels: raw.iter().map(|&b| b as f32 / 255.0).collect(),
        });
    }
    Ok(images)
}

/// Parse an IDX label file: magic 0x00000801, count, raw bytes in [0,9].
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let mut r = bytes;
    let magic = read_u32(&mut r, "magic")?;
    if magic != MAGIC_LABELS {
        return Err(Error::Format(format!(
            "bad label magic {magic:#010x}, expected {MAGIC_LABELS:#010x}"
        )));
    }
    let count = read_u32(&mut r, "count")? as usize;
    if r.len() != count {
        return Err(Error::Format(format!(
            "label payload holds {} bytes, expected {count}",
            r.len()
        )));
    }
    for (i, &b) in r.iter().enumerate() {
        if b > 9 {
            return Err(Error::Range(format!("label {b} at index {i} exceeds 9")));
        }
    }
    Ok(r.to_vec())
}

/// Serialize images back to IDX bytes (round-trip inverse of parse).
pub fn write_idx_images(images: &[Image]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.len() * IMG_PIXELS);
    out.write_u32::<BigEndian>(MAGIC_IMAGES).unwrap();
    out.write_u32::<BigEndian>(images.len() as u32).unwrap();
    out.write_u32::<BigEndian>(IMG_SIDE as u32).unwrap();
    out.write_u32::<BigEndian>(IMG_SIDE as u32).unwrap();
    for img in images {
        out.extend(img.pixels.iter().map(|&v| (v * 255.0).round() as u8));
    }
    out
}

pub fn write_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.write_u32::<BigEndian>(MAGIC_LABELS).unwrap();
    out.write_u32::<BigEndian>(labels.len() as u32).unwrap();
    out.extend_from_slice(labels);
    out
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Load a split from the four canonical MNIST filenames in `dir`.
pub fn load_split(dir: &Path, split: Split) -> Result<Dataset> {
    let (img_name, lbl_name) = match split {
        Split::Train => ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
        Split::Test => ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
    };
    let images = parse_idx_images(&read_file(&dir.join(img_name))?)?;
    let labels = parse_idx_labels(&read_file(&dir.join(lbl_name))?)?;
    if images.len() != labels.len() {
        return Err(Error::Format(format!(
            "{} images but {} labels in {}",
            images.len(),
            labels.len(),
            dir.display()
        )));
    }
    Ok(Dataset {
        items: images
            .into_iter()
            .zip(labels)
            .map(|(image, label)| LabeledImage { image, label })
            .collect(),
        split,
    })
}
