//! MNIST ingestion from IDX files.
//!
//! Image files carry the big-endian header `2051, count, rows, cols`, label
//! files `2049, count`, each followed by one unsigned byte per pixel/label.
//! Paths ending in `.gz` are decompressed transparently. Nothing is ever
//! downloaded.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nets::derive_seed;

pub const IMAGE_MAGIC: u32 = 2051;
pub const LABEL_MAGIC: u32 = 2049;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    /// `count × rows·cols` bytes, row-major.
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn count(&self) -> usize {
        self.pixels.len() / (self.rows * self.cols).max(1)
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.rows * self.cols;
        &self.pixels[i * n..(i + 1) * n]
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    if path.extension().is_some_and(|e| e == "gz") {
        GzDecoder::new(file)
            .read_to_end(&mut bytes)
            .map_err(|e| Error::io(path, e))?;
    } else {
        file.read_to_end(&mut bytes)
            .map_err(|e| Error::io(path, e))?;
    }
    Ok(bytes)
}

fn header(bytes: &[u8], words: usize, magic: u32) -> Result<Vec<usize>> {
    if bytes.len() < 4 * words {
        return Err(Error::Truncated {
            expected: 4 * words,
            found: bytes.len(),
        });
    }
    let fields: Vec<u32> = bytes[..4 * words]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    if fields[0] != magic {
        return Err(Error::Format(format!(
            "magic {} where {magic} was expected",
            fields[0]
        )));
    }
    Ok(fields[1..].iter().map(|&v| v as usize).collect())
}

fn payload(bytes: &[u8], offset: usize, len: usize) -> Result<&[u8]> {
    let found = bytes.len() - offset;
    if found < len {
        return Err(Error::Truncated {
            expected: len,
            found,
        });
    }
    if found > len {
        return Err(Error::Format(format!(
            "{} trailing bytes after payload",
            found - len
        )));
    }
    Ok(&bytes[offset..])
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    let dims = header(bytes, 4, IMAGE_MAGIC)?;
    let (count, rows, cols) = (dims[0], dims[1], dims[2]);
    let pixels = payload(bytes, 16, count * rows * cols)?.to_vec();
    Ok(IdxImages { rows, cols, pixels })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let count = header(bytes, 2, LABEL_MAGIC)?[0];
    let labels = payload(bytes, 8, count)?.to_vec();
    check_labels(&labels)?;
    Ok(labels)
}

fn check_labels(labels: &[u8]) -> Result<()> {
    match labels.iter().position(|&l| l > 9) {
        Some(index) => Err(Error::LabelRange {
            index,
            value: labels[index],
        }),
        None => Ok(()),
    }
}

pub fn load_idx_images(path: impl AsRef<Path>) -> Result<IdxImages> {
    parse_idx_images(&read_file(path.as_ref())?)
}

pub fn load_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    parse_idx_labels(&read_file(path.as_ref())?)
}

pub fn encode_idx_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for v in [
        IMAGE_MAGIC,
        images.count() as u32,
        images.rows as u32,
        images.cols as u32,
    ] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// `byte / 255`.
pub fn normalize(raw: &[u8]) -> Vec<f64> {
    raw.iter().map(|&b| f64::from(b) / 255.0).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

/// Images in `[0, 1]` with labels in `0..=9`.
#[derive(Debug, Clone, PartialEq)]
pub struct MnistSet {
    pixels: Vec<f64>,
    dim: usize,
    labels: Vec<u8>,
    split: Split,
}

impl MnistSet {
    pub fn new(pixels: Vec<f64>, dim: usize, labels: Vec<u8>, split: Split) -> Result<Self> {
        if dim == 0 || pixels.len() != dim * labels.len() {
            return Err(Error::ShapeMismatch {
                op: "mnist_set",
                left: vec![labels.len(), dim],
                right: vec![pixels.len()],
            });
        }
        if let Some(bad) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Format(format!("pixel value {bad} outside [0, 1]")));
        }
        check_labels(&labels)?;
        Ok(Self {
            pixels,
            dim,
            labels,
            split,
        })
    }

    pub fn from_idx(images: &IdxImages, labels: Vec<u8>, split: Split) -> Result<Self> {
        if images.count() != labels.len() {
            return Err(Error::Format(format!(
                "{} images but {} labels",
                images.count(),
                labels.len()
            )));
        }
        Self::new(
            normalize(&images.pixels),
            images.rows * images.cols,
            labels,
            split,
        )
    }

    pub fn load(images: impl AsRef<Path>, labels: impl AsRef<Path>, split: Split) -> Result<Self> {
        Self::from_idx(&load_idx_images(images)?, load_idx_labels(labels)?, split)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn image(&self, i: usize) -> &[f64] {
        &self.pixels[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Re-quantised IDX bytes (`round(v·255)`); exact for sets loaded from IDX.
    pub fn to_idx(&self, rows: usize, cols: usize) -> Result<(Vec<u8>, Vec<u8>)> {
        if rows * cols != self.dim {
            return Err(Error::ShapeMismatch {
                op: "to_idx",
                left: vec![rows, cols],
                right: vec![self.dim],
            });
        }
        let pixels = self
            .pixels
            .iter()
            .map(|v| (v * 255.0).round() as u8)
            .collect();
        let images = IdxImages { rows, cols, pixels };
        Ok((encode_idx_images(&images), encode_idx_labels(&self.labels)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub indices: Vec<usize>,
}

/// Seeded, restartable stream of example indices.
///
/// With `subset = Some(n)` a one-off seeded shuffle picks the `n` examples
/// that participate; each epoch then visits them in its own seeded order.
/// Batch `i` covers positions `i·batch_size .. (i+1)·batch_size` of the
/// concatenated epochs, so any batch can be regenerated from its index alone.
#[derive(Debug, Clone)]
pub struct BatchStream {
    pool: Vec<usize>,
    batch_size: usize,
    seed: u64,
    next_batch: u64,
    cached_epoch: Option<(u64, Vec<usize>)>,
}

pub fn iterate(
    set: &MnistSet,
    batch_size: usize,
    seed: u64,
    subset: Option<usize>,
) -> Result<BatchStream> {
    if set.is_empty() {
        return Err(Error::EmptySet);
    }
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    let mut pool: Vec<usize> = (0..set.len()).collect();
    if let Some(n) = subset {
        if n == 0 {
            return Err(Error::EmptySet);
        }
        pool.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, u64::MAX)));
        pool.truncate(n);
    }
    Ok(BatchStream {
        pool,
        batch_size,
        seed,
        next_batch: 0,
        cached_epoch: None,
    })
}

impl BatchStream {
    pub fn epoch_len(&self) -> usize {
        self.pool.len()
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    /// Repositions the stream so the next batch returned is `batch`.
    pub fn seek(&mut self, batch: u64) {
        self.next_batch = batch;
    }

    pub fn position(&self) -> u64 {
        self.next_batch
    }

    fn epoch_order(&mut self, epoch: u64) -> &[usize] {
        if self.cached_epoch.as_ref().is_none_or(|(e, _)| *e != epoch) {
            let mut order = self.pool.clone();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
                self.seed, epoch,
            )));
            self.cached_epoch = Some((epoch, order));
        }
        &self.cached_epoch.as_ref().expect("cached").1
    }

    pub fn batch_at(&mut self, batch: u64) -> Batch {
        let n = self.pool.len() as u64;
        let start = batch * self.batch_size as u64;
        let indices = (start..start + self.batch_size as u64)
            .map(|p| self.epoch_order(p / n)[(p % n) as usize])
            .collect();
        Batch { indices }
    }
}

impl Iterator for BatchStream {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        let b = self.batch_at(self.next_batch);
        self.next_batch += 1;
        Some(b)
    }
}
