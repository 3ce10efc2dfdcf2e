//! Datasets, on-disk formats, and canonicalization.
//!
//! Images load from the IDX format (magic 0x803 images / 0x801 labels,
//! big-endian dimensions, u8 pixels) or the CIFAR-10 binary format (3073-byte
//! records: label byte + 3×32×32 channel planes). Pixels are scaled to [0,1]
//! by /255. `canonicalize` maps any source to the 28×28×1 shape the
//! transceivers expect: RGB collapses by luma, 32×32 center-crops to 28×28.
//!
//! Labels are stored in absolute class ids: `label_offset` shifts a source
//! into a joint label space (e.g. a second 10-class source occupying 10..20).

use crate::error::{Error, Result};
use crate::rng::{self, tag};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use std::fs;
use std::io::Write;
use std::path::Path;

pub const LUMA_R: f64 = 0.299;
pub const LUMA_G: f64 = 0.587;
pub const LUMA_B: f64 = 0.114;

#[derive(Debug, Clone)]
pub struct Dataset<F: Scalar> {
    /// [N, C, H, W], values in [0,1].
    images: Tensor<F>,
    /// Absolute class ids, each in [label_offset, label_offset + n_classes).
    labels: Vec<u32>,
    pub source_id: String,
    pub label_offset: u32,
    pub n_classes: u32,
}

impl<F: Scalar> Dataset<F> {
    pub fn new(
        images: Tensor<F>,
        labels: Vec<u32>,
        source_id: impl Into<String>,
        label_offset: u32,
        n_classes: u32,
    ) -> Result<Self> {
        let shape = images.shape();
        if shape.len() != 4 {
            return Err(Error::Data(format!(
                "dataset images must be [N,C,H,W], got {shape:?}"
            )));
        }
        if shape[0] != labels.len() {
            return Err(Error::Data(format!(
                "{} images but {} labels",
                shape[0],
                labels.len()
            )));
        }
        let lo = label_offset;
        let hi = label_offset + n_classes;
        if let Some(&bad) = labels.iter().find(|&&l| l < lo || l >= hi) {
            return Err(Error::Data(format!(
                "label {bad} outside [{lo}, {hi})"
            )));
        }
        if let Some(bad) = images
            .data()
            .iter()
            .find(|v| !v.is_finite() || **v < F::zero() || **v > F::one())
        {
            return Err(Error::Data(format!(
                "pixel value {bad} outside [0,1]"
            )));
        }
        Ok(Dataset {
            images,
            labels,
            source_id: source_id.into(),
            label_offset,
            n_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// [C, H, W] of one sample.
    pub fn sample_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    pub fn images(&self) -> &Tensor<F> {
        &self.images
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> u32 {
        self.labels[i]
    }

    /// Copy of rows `idxs` as a batch tensor [B, C, H, W].
    pub fn batch(&self, idxs: &[usize]) -> Tensor<F> {
        let [c, h, w] = self.sample_shape();
        let stride = c * h * w;
        let mut data = Vec::with_capacity(idxs.len() * stride);
        for &i in idxs {
            data.extend_from_slice(&self.images.data()[i * stride..(i + 1) * stride]);
        }
        Tensor::new(vec![idxs.len(), c, h, w], data).expect("consistent")
    }

    pub fn batch_labels(&self, idxs: &[usize]) -> Vec<u32> {
        idxs.iter().map(|&i| self.labels[i]).collect()
    }

    pub fn subset(&self, idxs: &[usize]) -> Dataset<F> {
        Dataset {
            images: self.batch(idxs),
            labels: self.batch_labels(idxs),
            source_id: self.source_id.clone(),
            label_offset: self.label_offset,
            n_classes: self.n_classes,
        }
    }

    /// First `n` samples (used by --max-samples).
    pub fn take(&self, n: usize) -> Dataset<F> {
        let n = n.min(self.len());
        let idxs: Vec<usize> = (0..n).collect();
        self.subset(&idxs)
    }

    /// Shift this source into a joint label space.
    pub fn with_label_offset(mut self, offset: u32) -> Self {
        for l in &mut self.labels {
            *l = *l - self.label_offset + offset;
        }
        self.label_offset = offset;
        self
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path, what: &str) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(Error::Data(format!(
            "{}: truncated reading {what} at byte {offset} (file has {} bytes)",
            path.display(),
            bytes.len()
        )));
    }
    Ok(u32::from_be_bytes([
        bytes[offset],
        bytes[offset + 1],
        bytes[offset + 2],
        bytes[offset + 3],
    ]))
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Load a 28×28 grayscale IDX image/label pair.
pub fn load_idx<F: Scalar>(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    source_id: &str,
) -> Result<Dataset<F>> {
    let ipath = images_path.as_ref();
    let lpath = labels_path.as_ref();
    let ibytes = read_file(ipath)?;
    let lbytes = read_file(lpath)?;

    let magic = be_u32(&ibytes, 0, ipath, "image magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Data(format!(
            "{}: bad image magic {magic:#010x} at byte 0 (expected {IDX_IMAGES_MAGIC:#010x})",
            ipath.display()
        )));
    }
    let n = be_u32(&ibytes, 4, ipath, "image count")? as usize;
    let h = be_u32(&ibytes, 8, ipath, "image rows")? as usize;
    let w = be_u32(&ibytes, 12, ipath, "image cols")? as usize;
    let expected = 16 + n * h * w;
    if ibytes.len() != expected {
        return Err(Error::Data(format!(
            "{}: {n} images of {h}x{w} need {expected} bytes, file has {} (payload starts at byte 16)",
            ipath.display(),
            ibytes.len()
        )));
    }

    let lmagic = be_u32(&lbytes, 0, lpath, "label magic")?;
    if lmagic != IDX_LABELS_MAGIC {
        return Err(Error::Data(format!(
            "{}: bad label magic {lmagic:#010x} at byte 0 (expected {IDX_LABELS_MAGIC:#010x})",
            lpath.display()
        )));
    }
    let ln = be_u32(&lbytes, 4, lpath, "label count")? as usize;
    if ln != n {
        return Err(Error::Data(format!(
            "{} labels for {n} images",
            ln
        )));
    }
    if lbytes.len() != 8 + n {
        return Err(Error::Data(format!(
            "{}: {n} labels need {} bytes, file has {} (payload starts at byte 8)",
            lpath.display(),
            8 + n,
            lbytes.len()
        )));
    }

    let data: Vec<F> = ibytes[16..]
        .iter()
        .map(|&b| F::of(b as f64 / 255.0))
        .collect();
    let labels: Vec<u32> = lbytes[8..].iter().map(|&b| b as u32).collect();
    let n_classes = labels.iter().max().map_or(1, |m| m + 1).max(10);
    Dataset::new(
        Tensor::new(vec![n, 1, h, w], data)?,
        labels,
        source_id,
        0,
        n_classes,
    )
}

/// Write a single-channel dataset as an IDX pair. Pixels quantize to the
/// format's 8-bit grid (round(v·255)); loader-produced data round-trips
/// bit-identically because it already lives on that grid.
pub fn write_idx<F: Scalar>(
    ds: &Dataset<F>,
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<()> {
    let [c, h, w] = ds.sample_shape();
    if c != 1 {
        return Err(Error::Data(format!(
            "IDX stores single-channel images, dataset has {c} channels"
        )));
    }
    let n = ds.len();
    let mut ibytes = Vec::with_capacity(16 + n * h * w);
    ibytes.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    ibytes.extend_from_slice(&(n as u32).to_be_bytes());
    ibytes.extend_from_slice(&(h as u32).to_be_bytes());
    ibytes.extend_from_slice(&(w as u32).to_be_bytes());
    for &v in ds.images().data() {
        ibytes.push((v.to_f64c() * 255.0).round().clamp(0.0, 255.0) as u8);
    }

    let mut lbytes = Vec::with_capacity(8 + n);
    lbytes.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    lbytes.extend_from_slice(&(n as u32).to_be_bytes());
    for &l in ds.labels() {
        if l > 255 {
            return Err(Error::Data(format!("label {l} does not fit in a byte")));
        }
        lbytes.push(l as u8);
    }

    write_bytes(images_path.as_ref(), &ibytes)?;
    write_bytes(labels_path.as_ref(), &lbytes)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f =
        fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    f.write_all(bytes)
        .map_err(|e| Error::io(path.display().to_string(), e))
}

const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;

/// Load CIFAR-10 binary batch files (concatenated in the order given).
pub fn load_cifar_bin<F: Scalar>(
    paths: &[impl AsRef<Path>],
    source_id: &str,
) -> Result<Dataset<F>> {
    if paths.is_empty() {
        return Err(Error::Data("no CIFAR batch files given".into()));
    }
    let mut data: Vec<F> = Vec::new();
    let mut labels: Vec<u32> = Vec::new();
    for p in paths {
        let path = p.as_ref();
        let bytes = read_file(path)?;
        if bytes.is_empty() || bytes.len() % CIFAR_RECORD != 0 {
            return Err(Error::Data(format!(
                "{}: {} bytes is not a whole number of {CIFAR_RECORD}-byte records \
                 (truncated at byte {})",
                path.display(),
                bytes.len(),
                bytes.len() - bytes.len() % CIFAR_RECORD
            )));
        }
        for rec in bytes.chunks_exact(CIFAR_RECORD) {
            let label = rec[0] as u32;
            if label > 9 {
                return Err(Error::Data(format!(
                    "{}: label byte {label} out of range 0..=9",
                    path.display()
                )));
            }
            labels.push(label);
            data.extend(rec[1..].iter().map(|&b| F::of(b as f64 / 255.0)));
        }
    }
    let n = labels.len();
    Dataset::new(
        Tensor::new(vec![n, 3, 32, 32], data)?,
        labels,
        source_id,
        0,
        10,
    )
}

/// Write records in the CIFAR-10 binary layout (for fixtures).
pub fn write_cifar_bin<F: Scalar>(ds: &Dataset<F>, path: impl AsRef<Path>) -> Result<()> {
    let [c, h, w] = ds.sample_shape();
    if (c, h, w) != (3, 32, 32) {
        return Err(Error::Data(format!(
            "CIFAR binary stores 3x32x32 images, dataset is {c}x{h}x{w}"
        )));
    }
    let mut bytes = Vec::with_capacity(ds.len() * CIFAR_RECORD);
    let plane = h * w;
    for i in 0..ds.len() {
        let l = ds.label(i) - ds.label_offset;
        bytes.push(l as u8);
        let img = &ds.images().data()[i * 3 * plane..(i + 1) * 3 * plane];
        for &v in img {
            bytes.push((v.to_f64c() * 255.0).round().clamp(0.0, 255.0) as u8);
        }
    }
    write_bytes(path.as_ref(), &bytes)
}

/// Map a dataset to the canonical 28×28×1 transceiver input: RGB collapses
/// to luma (full precision, not re-quantized), anything larger than 28×28
/// center-crops down to it.
pub fn canonicalize<F: Scalar>(ds: &Dataset<F>) -> Result<Dataset<F>> {
    let [c, h, w] = ds.sample_shape();
    if h < 28 || w < 28 {
        return Err(Error::Data(format!(
            "cannot canonicalize {h}x{w} images below 28x28"
        )));
    }
    if c != 1 && c != 3 {
        return Err(Error::Data(format!(
            "canonicalize handles 1- or 3-channel images, got {c}"
        )));
    }
    if (c, h, w) == (1, 28, 28) {
        return Ok(ds.clone());
    }
    let n = ds.len();
    let (y0, x0) = ((h - 28) / 2, (w - 28) / 2);
    let plane = h * w;
    let mut out = Vec::with_capacity(n * 28 * 28);
    let (wr, wg, wb) = (F::of(LUMA_R), F::of(LUMA_G), F::of(LUMA_B));
    for i in 0..n {
        let img = &ds.images().data()[i * c * plane..(i + 1) * c * plane];
        for y in 0..28 {
            for x in 0..28 {
                let p = (y0 + y) * w + (x0 + x);
                let v = if c == 3 {
                    wr * img[p] + wg * img[plane + p] + wb * img[2 * plane + p]
                } else {
                    img[p]
                };
                out.push(v.min(F::one()).max(F::zero()));
            }
        }
    }
    Dataset::new(
        Tensor::new(vec![n, 1, 28, 28], out)?,
        ds.labels().to_vec(),
        ds.source_id.clone(),
        ds.label_offset,
        ds.n_classes,
    )
}

/// Seeded split into (train, test) with train size round(ratio·N).
pub fn split_train_test<F: Scalar>(
    ds: &Dataset<F>,
    ratio: f64,
    seed: u64,
) -> Result<(Dataset<F>, Dataset<F>)> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::InvalidArgument(format!(
            "split ratio {ratio} outside [0,1]"
        )));
    }
    let n = ds.len();
    let n_train = (ratio * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::substream(seed, &[tag::SPLIT]));
    let train = ds.subset(&order[..n_train]);
    let test = ds.subset(&order[n_train..]);
    Ok((train, test))
}
