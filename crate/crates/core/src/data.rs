//! Dataset loaders producing canonical `(N, 3, 32, 32)` images in `[0, 1]`,
//! fixed labeled-fraction subsets, and a synthetic generator.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::stream_rng;
use crate::tensor::Tensor;

pub const SIDE: usize = 32;
pub const CHANNELS: usize = 3;
pub const IMAGE_LEN: usize = CHANNELS * SIDE * SIDE;
pub const NUM_CLASSES: usize = 10;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
const CIFAR_RECORD: usize = 1 + IMAGE_LEN;
const STL_SIDE: usize = 96;
const STL_RECORD: usize = CHANNELS * STL_SIDE * STL_SIDE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
    Unlabeled,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::Unlabeled => "unlabeled",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetName {
    Mnist,
    FashionMnist,
    Cifar10,
    Stl10,
    Synthetic,
}

impl DatasetName {
    pub const PUBLIC: [DatasetName; 4] = [
        DatasetName::Mnist,
        DatasetName::FashionMnist,
        DatasetName::Cifar10,
        DatasetName::Stl10,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DatasetName::Mnist => "mnist",
            DatasetName::FashionMnist => "fashion_mnist",
            DatasetName::Cifar10 => "cifar10",
            DatasetName::Stl10 => "stl10",
            DatasetName::Synthetic => "synthetic",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mnist" => Ok(DatasetName::Mnist),
            "fashion_mnist" => Ok(DatasetName::FashionMnist),
            "cifar10" => Ok(DatasetName::Cifar10),
            "stl10" => Ok(DatasetName::Stl10),
            "synthetic" => Ok(DatasetName::Synthetic),
            _ => Err(Error::Config(format!("unknown dataset `{s}`"))),
        }
    }

    /// Published sample count of a split, `None` where the split does not exist.
    pub fn expected_count(self, split: Split) -> Option<usize> {
        match (self, split) {
            (DatasetName::Mnist | DatasetName::FashionMnist, Split::Train) => Some(60_000),
            (DatasetName::Mnist | DatasetName::FashionMnist, Split::Test) => Some(10_000),
            (DatasetName::Cifar10, Split::Train) => Some(50_000),
            (DatasetName::Cifar10, Split::Test) => Some(10_000),
            (DatasetName::Stl10, Split::Train) => Some(5_000),
            (DatasetName::Stl10, Split::Test) => Some(8_000),
            (DatasetName::Stl10, Split::Unlabeled) => Some(100_000),
            _ => None,
        }
    }
}

impl fmt::Display for DatasetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// An immutable image set; images are stored contiguously, CHW per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub split: Split,
    pub num_classes: usize,
    images: Vec<f32>,
    labels: Option<Vec<u8>>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        split: Split,
        num_classes: usize,
        images: Vec<f32>,
        labels: Option<Vec<u8>>,
    ) -> Result<Self> {
        if !images.len().is_multiple_of(IMAGE_LEN) {
            return Err(Error::dim("dataset", &[images.len()], &[0, CHANNELS, SIDE, SIDE]));
        }
        let n = images.len() / IMAGE_LEN;
        match (&labels, split) {
            (Some(_), Split::Unlabeled) => {
                return Err(Error::Consistency("unlabeled split must not carry labels".into()))
            }
            (None, Split::Train | Split::Test) => {
                return Err(Error::Consistency(format!("{split} split requires labels")))
            }
            (Some(l), _) if l.len() != n => {
                return Err(Error::Consistency(format!("{n} images but {} labels", l.len())))
            }
            (Some(l), _) if l.iter().any(|&y| y as usize >= num_classes) => {
                return Err(Error::Consistency(format!("label outside [0, {num_classes})")))
            }
            _ => {}
        }
        Ok(Dataset {
            name: name.into(),
            split,
            num_classes,
            images,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len() / IMAGE_LEN
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn pixels(&self, i: usize) -> &[f32] {
        &self.images[i * IMAGE_LEN..(i + 1) * IMAGE_LEN]
    }

    pub fn image(&self, i: usize) -> Image {
        Image {
            channels: CHANNELS,
            height: SIDE,
            width: SIDE,
            data: self.pixels(i).to_vec(),
        }
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    pub fn label(&self, i: usize) -> Option<usize> {
        self.labels.as_ref().map(|l| l[i] as usize)
    }

    /// `(B, 3, 32, 32)` tensor of the selected samples.
    pub fn batch(&self, indices: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(indices.len() * IMAGE_LEN);
        for &i in indices {
            data.extend_from_slice(self.pixels(i));
        }
        Tensor::from_vec(data, &[indices.len(), CHANNELS, SIDE, SIDE]).expect("batch shape")
    }

    pub fn batch_labels(&self, indices: &[usize]) -> Result<Vec<usize>> {
        let labels = self
            .labels
            .as_ref()
            .ok_or_else(|| Error::Contract(format!("{} {} split has no labels", self.name, self.split)))?;
        Ok(indices.iter().map(|&i| labels[i] as usize).collect())
    }

    pub fn select(&self, indices: &[usize]) -> Dataset {
        let mut images = Vec::with_capacity(indices.len() * IMAGE_LEN);
        for &i in indices {
            images.extend_from_slice(self.pixels(i));
        }
        Dataset {
            name: self.name.clone(),
            split: self.split,
            num_classes: self.num_classes,
            images,
            labels: self.labels.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect()),
        }
    }

    /// Concatenation with labels dropped, used to pool pretraining images.
    pub fn unlabeled_union(parts: &[&Dataset]) -> Dataset {
        let images = parts.iter().flat_map(|d| d.images.iter().copied()).collect();
        Dataset {
            name: parts.first().map(|d| d.name.clone()).unwrap_or_default(),
            split: Split::Unlabeled,
            num_classes: parts.first().map_or(NUM_CLASSES, |d| d.num_classes),
            images,
            labels: None,
        }
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    if !path.exists() {
        return Err(Error::MissingData(path.to_path_buf()));
    }
    Ok(fs::read(path)?)
}

// ---- IDX ------------------------------------------------------------------

/// A parsed IDX container before any scaling.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub magic: u32,
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format {
            offset,
            message: "header truncated".into(),
        })
}

pub fn parse_idx(bytes: &[u8], expected_magic: u32) -> Result<IdxArray> {
    let magic = be_u32(bytes, 0)?;
    if magic != expected_magic {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad magic {magic:#010x}, expected {expected_magic:#010x}"),
        });
    }
    let ndims = (magic & 0xff) as usize;
    let dims = (0..ndims)
        .map(|i| be_u32(bytes, 4 + 4 * i).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let header = 4 + 4 * ndims;
    let len: usize = dims.iter().product();
    if bytes.len() != header + len {
        return Err(Error::Format {
            offset: bytes.len().min(header + len),
            message: format!("payload is {} bytes, header declares {len}", bytes.len() - header),
        });
    }
    Ok(IdxArray {
        magic,
        dims,
        data: bytes[header..].to_vec(),
    })
}

pub fn encode_idx(dims: &[usize], data: &[u8]) -> Vec<u8> {
    let magic = 0x0800 | dims.len() as u32;
    let mut out = magic.to_be_bytes().to_vec();
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(data);
    out
}

/// Raw `u8` images `(N, rows, cols)` and labels, checked for consistency.
pub fn load_idx_raw(images_path: &Path, labels_path: &Path) -> Result<(IdxArray, IdxArray)> {
    let images = parse_idx(&read_file(images_path)?, IDX_IMAGES_MAGIC)?;
    let labels = parse_idx(&read_file(labels_path)?, IDX_LABELS_MAGIC)?;
    if images.dims[0] != labels.dims[0] {
        return Err(Error::Consistency(format!(
            "{} images but {} labels",
            images.dims[0], labels.dims[0]
        )));
    }
    Ok((images, labels))
}

/// Gray IDX images scaled to `[0, 1]`, replicated to three channels and
/// resized to 32×32.
pub fn load_idx(name: &str, split: Split, images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let (images, labels) = load_idx_raw(images_path, labels_path)?;
    let (rows, cols) = (images.dims[1], images.dims[2]);
    let pixels: Vec<f32> = images
        .data
        .par_chunks(rows * cols)
        .flat_map_iter(|raw| {
            let gray = Image {
                channels: 1,
                height: rows,
                width: cols,
                data: raw.iter().map(|&b| b as f32 / 255.0).collect(),
            };
            gray.resize(SIDE, SIDE).to_rgb().data
        })
        .collect();
    Dataset::new(name, split, NUM_CLASSES, pixels, Some(labels.data))
}

// ---- CIFAR-10 -------------------------------------------------------------

/// Splits a CIFAR-10 binary batch into labels and raw pixel records.
pub fn parse_cifar_batch(bytes: &[u8]) -> Result<(Vec<u8>, Vec<u8>)> {
    if !bytes.len().is_multiple_of(CIFAR_RECORD) {
        return Err(Error::Format {
            offset: bytes.len() - bytes.len() % CIFAR_RECORD,
            message: format!("length {} is not a multiple of {CIFAR_RECORD}", bytes.len()),
        });
    }
    let mut labels = Vec::with_capacity(bytes.len() / CIFAR_RECORD);
    let mut pixels = Vec::with_capacity(bytes.len() / CIFAR_RECORD * IMAGE_LEN);
    for (r, rec) in bytes.chunks(CIFAR_RECORD).enumerate() {
        if rec[0] as usize >= NUM_CLASSES {
            return Err(Error::Format {
                offset: r * CIFAR_RECORD,
                message: format!("label {} out of range", rec[0]),
            });
        }
        labels.push(rec[0]);
        pixels.extend_from_slice(&rec[1..]);
    }
    Ok((labels, pixels))
}

fn cifar_dir(dir: &Path) -> PathBuf {
    let nested = dir.join("cifar-10-batches-bin");
    if nested.is_dir() {
        nested
    } else {
        dir.to_path_buf()
    }
}

pub fn cifar10_files(split: Split) -> Vec<String> {
    match split {
        Split::Train => (1..=5).map(|i| format!("data_batch_{i}.bin")).collect(),
        _ => vec!["test_batch.bin".to_string()],
    }
}

pub fn load_cifar10(dir: &Path, split: Split) -> Result<Dataset> {
    if split == Split::Unlabeled {
        return Err(Error::Config("cifar10 has no unlabeled split".into()));
    }
    let dir = cifar_dir(dir);
    let mut labels = Vec::new();
    let mut raw = Vec::new();
    for file in cifar10_files(split) {
        let (l, p) = parse_cifar_batch(&read_file(&dir.join(file))?)?;
        labels.extend(l);
        raw.extend(p);
    }
    let pixels = raw.par_iter().map(|&b| b as f32 / 255.0).collect();
    Dataset::new("cifar10", split, NUM_CLASSES, pixels, Some(labels))
}

// ---- STL-10 ---------------------------------------------------------------

/// One column-major 96×96×3 record, transposed to row-major and resized.
pub fn decode_stl_record(rec: &[u8]) -> Image {
    let n = STL_SIDE * STL_SIDE;
    let mut data = vec![0.0f32; rec.len()];
    for c in 0..CHANNELS {
        for x in 0..STL_SIDE {
            for y in 0..STL_SIDE {
                data[c * n + y * STL_SIDE + x] = rec[c * n + x * STL_SIDE + y] as f32 / 255.0;
            }
        }
    }
    Image {
        channels: CHANNELS,
        height: STL_SIDE,
        width: STL_SIDE,
        data,
    }
    .resize(SIDE, SIDE)
}

pub fn parse_stl_images(bytes: &[u8]) -> Result<Vec<f32>> {
    if !bytes.len().is_multiple_of(STL_RECORD) {
        return Err(Error::Format {
            offset: bytes.len() - bytes.len() % STL_RECORD,
            message: format!("length {} is not a multiple of {STL_RECORD}", bytes.len()),
        });
    }
    Ok(bytes
        .par_chunks(STL_RECORD)
        .flat_map_iter(|rec| decode_stl_record(rec).data)
        .collect())
}

/// 1-based STL-10 labels shifted to 0-based.
pub fn parse_stl_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    bytes
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            if (1..=NUM_CLASSES as u8).contains(&y) {
                Ok(y - 1)
            } else {
                Err(Error::Format {
                    offset: i,
                    message: format!("label {y} outside 1..=10"),
                })
            }
        })
        .collect()
}

pub fn load_stl10(dir: &Path, split: Split) -> Result<Dataset> {
    let dir = {
        let nested = dir.join("stl10_binary");
        if nested.is_dir() {
            nested
        } else {
            dir.to_path_buf()
        }
    };
    let pixels = parse_stl_images(&read_file(&dir.join(format!("{split}_X.bin")))?)?;
    let labels = match split {
        Split::Unlabeled => None,
        _ => {
            let labels = parse_stl_labels(&read_file(&dir.join(format!("{split}_y.bin")))?)?;
            if labels.len() * IMAGE_LEN != pixels.len() {
                return Err(Error::Format {
                    offset: labels.len(),
                    message: format!("{} labels for {} images", labels.len(), pixels.len() / IMAGE_LEN),
                });
            }
            Some(labels)
        }
    };
    Dataset::new("stl10", split, NUM_CLASSES, pixels, labels)
}

/// Loads a split from `<root>/<dataset>/` using the standard file names.
pub fn load(root: &Path, name: DatasetName, split: Split) -> Result<Dataset> {
    let dir = root.join(name.as_str());
    match name {
        DatasetName::Mnist | DatasetName::FashionMnist => {
            let prefix = match split {
                Split::Train => "train",
                Split::Test => "t10k",
                Split::Unlabeled => return Err(Error::Config(format!("{name} has no unlabeled split"))),
            };
            load_idx(
                name.as_str(),
                split,
                &dir.join(format!("{prefix}-images-idx3-ubyte")),
                &dir.join(format!("{prefix}-labels-idx1-ubyte")),
            )
        }
        DatasetName::Cifar10 => load_cifar10(&dir, split),
        DatasetName::Stl10 => load_stl10(&dir, split),
        DatasetName::Synthetic => Err(Error::Config("synthetic data is generated, not loaded".into())),
    }
}

// ---- labeled-fraction subsets --------------------------------------------

/// A reproducible labeled subset, persisted next to experiment outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetSpec {
    pub dataset: String,
    pub fraction: f64,
    pub seed: u64,
    pub indices: Vec<usize>,
}

impl SubsetSpec {
    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("subset spec serializes")
    }

    pub fn from_text(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("subset spec: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(fs::write(path, self.to_text())?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?)
    }
}

/// Uniform sample without replacement of `round(fraction · len)` indices,
/// sorted ascending, determined by `seed` alone.
pub fn subset_indices(dataset: &str, len: usize, fraction: f64, seed: u64) -> Result<SubsetSpec> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::param(format!("fraction {fraction} not in (0, 1]")));
    }
    let k = (fraction * len as f64).round() as usize;
    if k == 0 {
        return Err(Error::param(format!("fraction {fraction} of {len} samples selects none")));
    }
    let mut indices = rand::seq::index::sample(&mut stream_rng(seed, 0), len, k).into_vec();
    indices.sort_unstable();
    Ok(SubsetSpec {
        dataset: dataset.to_string(),
        fraction,
        seed,
        indices,
    })
}

// ---- synthetic ------------------------------------------------------------

/// Class-conditional images combining two independent factors: stripe
/// orientation (`c mod 2`) and a hue family (`c / 2`, families a tenth of
/// the hue circle apart). Stripe period and phase, hue within the family,
/// saturation, brightness and pixel noise are per-sample nuisances.
pub fn synthetic_dataset(n_per_class: usize, num_classes: usize, seed: u64) -> Result<Dataset> {
    synthetic_split(n_per_class, num_classes, seed, Split::Train)
}

pub fn synthetic_split(n_per_class: usize, num_classes: usize, seed: u64, split: Split) -> Result<Dataset> {
    if n_per_class == 0 || num_classes == 0 || num_classes > u8::MAX as usize {
        return Err(Error::param("synthetic dataset needs n_per_class ≥ 1 and 1..=255 classes"));
    }
    let stream = match split {
        Split::Train => 0,
        Split::Test => 1,
        Split::Unlabeled => 2,
    };
    let mut rng = stream_rng(seed, stream);
    let mut images = Vec::with_capacity(n_per_class * num_classes * IMAGE_LEN);
    let mut labels = Vec::with_capacity(n_per_class * num_classes);
    for i in 0..n_per_class * num_classes {
        let class = i % num_classes;
        images.extend(synthetic_image(class % 2 == 1, class / 2, &mut rng));
        labels.push(class as u8);
    }
    let labels = (split != Split::Unlabeled).then_some(labels);
    Dataset::new("synthetic", split, num_classes, images, labels)
}

const STRIPE_DEPTH: f32 = 0.2;
const HUE_BASE: f32 = 0.55;
const HUE_STEP: f32 = 0.1;
const HUE_JITTER: f32 = 0.02;
const PIXEL_NOISE: f32 = 0.04;

fn synthetic_image(vertical: bool, family: usize, rng: &mut impl Rng) -> Vec<f32> {
    let noise = Normal::new(0.0f32, PIXEL_NOISE).expect("std");
    let period = rng.random_range(3.0..5.0f32);
    let phase = rng.random_range(0.0..std::f32::consts::TAU);
    let hue = (HUE_BASE + HUE_STEP * family as f32 + rng.random_range(-HUE_JITTER..HUE_JITTER)).rem_euclid(1.0);
    let sat = rng.random_range(0.1..0.4f32);
    let value = rng.random_range(0.5..0.8f32);
    let base = hue_rgb(hue);
    let color: [f32; 3] = std::array::from_fn(|c| value * (1.0 - sat + sat * base[c]));
    let mut out = vec![0.0f32; IMAGE_LEN];
    for y in 0..SIDE {
        for x in 0..SIDE {
            let t = if vertical { x } else { y } as f32;
            let stripe = 1.0 - STRIPE_DEPTH + STRIPE_DEPTH * (std::f32::consts::TAU * t / period + phase).sin();
            for c in 0..CHANNELS {
                let v = color[c] * stripe + noise.sample(rng);
                out[(c * SIDE + y) * SIDE + x] = v.clamp(0.0, 1.0);
            }
        }
    }
    out
}

/// Fully saturated RGB of a hue in `[0, 1)`.
fn hue_rgb(h: f32) -> [f32; 3] {
    std::array::from_fn(|c| {
        let k = (h * 6.0 + [5.0, 3.0, 1.0][c]) % 6.0;
        1.0 - (k.min(4.0 - k).clamp(0.0, 1.0))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn idx_round_trip_and_scaling() {
        let raw: Vec<u8> = (0..2 * 28 * 28).map(|i| (i % 256) as u8).collect();
        let bytes = encode_idx(&[2, 28, 28], &raw);
        let parsed = parse_idx(&bytes, IDX_IMAGES_MAGIC).unwrap();
        assert_eq!(parsed.dims, vec![2, 28, 28]);
        assert_eq!(parsed.data, raw);
    }

    #[test]
    fn idx_rejects_bad_magic_and_truncation() {
        let mut bytes = encode_idx(&[1, 2, 2], &[0, 1, 2, 3]);
        let truncated = &bytes[..bytes.len() - 1];
        assert!(matches!(parse_idx(truncated, IDX_IMAGES_MAGIC), Err(Error::Format { .. })));
        bytes[3] = 0x02;
        match parse_idx(&bytes, IDX_IMAGES_MAGIC) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_idx(&[0, 0], IDX_LABELS_MAGIC), Err(Error::Format { .. })));
    }

    #[test]
    fn cifar_record_layout() {
        let mut bytes = vec![7u8];
        bytes.extend((0..IMAGE_LEN).map(|i| (i % 251) as u8));
        let (labels, pixels) = parse_cifar_batch(&bytes).unwrap();
        assert_eq!(labels, vec![7]);
        assert_eq!(pixels[1024], (1024 % 251) as u8);
        assert!(matches!(parse_cifar_batch(&bytes[..100]), Err(Error::Format { .. })));
        bytes[0] = 10;
        assert!(parse_cifar_batch(&bytes).is_err());
    }

    #[test]
    fn stl_constant_record_survives() {
        let img = decode_stl_record(&vec![51u8; STL_RECORD]);
        assert_eq!((img.height, img.width), (32, 32));
        assert!(img.data.iter().all(|&v| (v - 0.2).abs() < 1e-6));
    }

    #[test]
    fn stl_transposes_column_major() {
        let mut rec = vec![0u8; STL_RECORD];
        // Column-major: byte x·96 + y holds pixel (y, x); light up columns 0..3.
        rec[..3 * STL_SIDE].fill(255);
        let img = decode_stl_record(&rec);
        for y in 0..SIDE {
            assert_eq!(img.at(0, y, 0), 1.0);
            assert_eq!(img.at(0, y, 31), 0.0);
        }
        assert_eq!(img.at(1, 5, 0), 0.0);
    }

    #[test]
    fn stl_labels_shift_to_zero_based() {
        assert_eq!(parse_stl_labels(&[1, 10, 5]).unwrap(), vec![0, 9, 4]);
        assert!(parse_stl_labels(&[0]).is_err());
        assert!(parse_stl_labels(&[11]).is_err());
    }

    #[test]
    fn subset_counts_and_determinism() {
        let s = subset_indices("cifar10", 50_000, 0.01, 0).unwrap();
        assert_eq!(s.indices.len(), 500);
        assert_eq!(s, subset_indices("cifar10", 50_000, 0.01, 0).unwrap());
        assert_ne!(s.indices, subset_indices("cifar10", 50_000, 0.01, 1).unwrap().indices);
        let full = subset_indices("x", 37, 1.0, 3).unwrap();
        assert_eq!(full.indices, (0..37).collect::<Vec<_>>());
        assert!(subset_indices("x", 10, 0.01, 0).is_err());
        assert!(subset_indices("x", 10, 0.0, 0).is_err());
        assert!(subset_indices("x", 10, 1.5, 0).is_err());
    }

    #[test]
    fn subset_text_round_trip() {
        let s = subset_indices("mnist", 1000, 0.05, 42).unwrap();
        assert_eq!(SubsetSpec::from_text(&s.to_text()).unwrap(), s);
    }

    #[test]
    fn synthetic_is_balanced_and_deterministic() {
        let d = synthetic_dataset(10, 2, 5).unwrap();
        assert_eq!(d.len(), 20);
        let ones = d.labels().unwrap().iter().filter(|&&y| y == 1).count();
        assert_eq!(ones, 10);
        assert_eq!(d, synthetic_dataset(10, 2, 5).unwrap());
        assert_ne!(d, synthetic_dataset(10, 2, 6).unwrap());
        assert!(synthetic_dataset(0, 2, 0).is_err());
    }

    #[test]
    fn dataset_enforces_label_contract() {
        let px = vec![0.5; IMAGE_LEN];
        assert!(Dataset::new("d", Split::Unlabeled, 10, px.clone(), Some(vec![0])).is_err());
        assert!(Dataset::new("d", Split::Train, 10, px.clone(), None).is_err());
        assert!(Dataset::new("d", Split::Train, 10, px.clone(), Some(vec![0, 1])).is_err());
        assert!(Dataset::new("d", Split::Train, 10, px.clone(), Some(vec![10])).is_err());
        let d = Dataset::new("d", Split::Train, 10, px, Some(vec![3])).unwrap();
        assert_eq!(d.batch(&[0, 0]).shape(), &[2, 3, 32, 32]);
        assert_eq!(d.batch_labels(&[0]).unwrap(), vec![3]);
    }

    #[test]
    fn expected_counts() {
        assert_eq!(DatasetName::Cifar10.expected_count(Split::Train), Some(50_000));
        assert_eq!(DatasetName::Stl10.expected_count(Split::Unlabeled), Some(100_000));
        assert_eq!(DatasetName::Mnist.expected_count(Split::Unlabeled), None);
    }
}
