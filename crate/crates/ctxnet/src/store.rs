//! Checkpoint persistence, PGM raster emission, and CSV metrics.
//!
//! Checkpoint layout (all integers little-endian):
//!   4-byte magic "CTXN" | u32 version | u32 metadata length | UTF-8 metadata
//!   | raw f32 payloads in declared order
//!
//! The metadata is line-oriented `key=value` text; `tensor=` lines declare
//! the payload order and shapes.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"CTXN";
const VERSION: u32 = 1;

/// Serialized parameters of one trained module with shape metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub section: String,
    /// Free-form metadata (seed, hyperparameters, grid layout), order preserved.
    pub meta: Vec<(String, String)>,
    /// Named tensors in payload order.
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn new(section: &str) -> Self {
        Checkpoint {
            section: section.to_string(),
            meta: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.push((key.to_string(), value.to_string()));
        self
    }

    pub fn push_tensor(&mut self, name: &str, t: Tensor<f32>) {
        self.tensors.push((name.to_string(), t));
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor<f32>> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| {
                Error::Format(format!(
                    "checkpoint section '{}' has no tensor '{name}'",
                    self.section
                ))
            })
    }

    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    fn metadata_text(&self) -> String {
        let mut s = format!("section={}\n", self.section);
        for (k, v) in &self.meta {
            s.push_str(&format!("meta.{k}={v}\n"));
        }
        for (name, t) in &self.tensors {
            let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
            s.push_str(&format!("tensor={name}:{}\n", dims.join("x")));
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.write_u32::<LittleEndian>(VERSION).unwrap();
        let meta = self.metadata_text();
        buf.write_u32::<LittleEndian>(meta.len() as u32).unwrap();
        buf.extend_from_slice(meta.as_bytes());
        for (_, t) in &self.tensors {
            for &v in t.data() {
                buf.write_f32::<LittleEndian>(v).unwrap();
            }
        }
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut r = bytes.as_slice();
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| Error::Format("checkpoint shorter than magic".into()))?;
        if &magic != MAGIC {
            return Err(Error::Format(format!(
                "bad checkpoint magic {magic:?} in {}",
                path.display()
            )));
        }
        let version = r
            .read_u32::<LittleEndian>()
            .map_err(|_| Error::Format("truncated checkpoint version".into()))?;
        if version != VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {version}, expected {VERSION}"
            )));
        }
        let meta_len = r
            .read_u32::<LittleEndian>()
            .map_err(|_| Error::Format("truncated metadata length".into()))? as usize;
        if r.len() < meta_len {
            return Err(Error::Format("truncated checkpoint metadata".into()));
        }
        let meta_text = std::str::from_utf8(&r[..meta_len])
            .map_err(|_| Error::Format("checkpoint metadata is not UTF-8".into()))?
            .to_string();
        r = &r[meta_len..];

        let mut section = String::new();
        let mut meta = Vec::new();
        let mut decls: Vec<(String, Vec<usize>)> = Vec::new();
        for line in meta_text.lines() {
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("malformed metadata line '{line}'")))?;
            match key {
                "section" => section = value.to_string(),
                "tensor" => {
                    let (name, dims) = value.split_once(':').ok_or_else(|| {
                        Error::Format(format!("malformed tensor declaration '{value}'"))
                    })?;
                    let shape = dims
                        .split('x')
                        .map(|d| {
                            d.parse::<usize>().map_err(|_| {
                                Error::Format(format!("bad dimension '{d}' in '{value}'"))
                            })
                        })
                        .collect::<Result<Vec<usize>>>()?;
                    decls.push((name.to_string(), shape));
                }
                k => {
                    let k = k.strip_prefix("meta.").unwrap_or(k);
                    meta.push((k.to_string(), value.to_string()));
                }
            }
        }

        let expected: usize = decls.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
        if r.len() != expected * 4 {
            return Err(Error::Shape(format!(
                "checkpoint payload holds {} bytes but declared shapes need {}",
                r.len(),
                expected * 4
            )));
        }
        let mut tensors = Vec::with_capacity(decls.len());
        for (name, shape) in decls {
            let n: usize = shape.iter().product();
            let mut data = vec![0.0f32; n];
            r.read_f32_into::<LittleEndian>(&mut data).unwrap();
            tensors.push((name, Tensor::new(shape, data)?));
        }
        Ok(Checkpoint {
            section,
            meta,
            tensors,
        })
    }
}

/// Load a checkpoint and verify it carries the expected section name.
pub fn load_section(path: &Path, section: &str) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(Error::Dependency(format!(
            "checkpoint for section '{section}' not found at {}",
            path.display()
        )));
    }
    let ck = Checkpoint::load(path)?;
    if ck.section != section {
        return Err(Error::Dependency(format!(
            "{} holds section '{}', expected '{section}'",
            path.display(),
            ck.section
        )));
    }
    Ok(ck)
}

/// 8-bit binary PGM (P5, maxval 255); pixel value = round(v * 255).
pub fn write_pgm(pixels: &[f32], width: usize, height: usize, path: &Path) -> Result<()> {
    if pixels.len() != width * height {
        return Err(Error::Shape(format!(
            "{} pixels for {width}x{height} raster",
            pixels.len()
        )));
    }
    if let Some(bad) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Contract(format!(
            "pixel {bad} outside [0,1]; refusing to quantize"
        )));
    }
    let mut buf = Vec::with_capacity(32 + pixels.len());
    write!(buf, "P5\n{width} {height}\n255\n").unwrap();
    buf.extend(pixels.iter().map(|&v| (v * 255.0).round() as u8));
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Comma-separated metrics with a header row and '.' decimals.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut buf = String::new();
    buf.push_str(&header.join(","));
    buf.push('\n');
    for row in rows {
        buf.push_str(&row.join(","));
        buf.push('\n');
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}
