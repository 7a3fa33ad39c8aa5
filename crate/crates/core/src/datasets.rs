//! Corpora as intensity matrices in `[0, 1]`, their ingestion from the
//! published file formats, and the `RBMDS1` container.
//!
//! `RBMDS1` layout: the 6 ASCII bytes `RBMDS1`, little-endian `u32`
//! example count, little-endian `u32` dimension, then `n · dim` little-endian
//! `f32` intensities, row-major.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rbm::{BinaryState, BinaryVisible};

pub const CONTAINER_MAGIC: &[u8; 6] = b"RBMDS1";
pub const MNIST_IMAGE_MAGIC: u32 = 0x0000_0803;
pub const MNIST_LABEL_MAGIC: u32 = 0x0000_0801;
pub const MNIST_PER_DIGIT: usize = 1000;
pub const CIFAR_SUBSET: usize = 10_000;
pub const CIFAR_RECORD_LEN: usize = 1 + 3 * 1024;
pub const SILHOUETTE_DIM: usize = 256;

/// First row/column of the centred 14×14 window in a 32×32 CIFAR image.
const CIFAR_CROP_START: usize = 9;
const CIFAR_CROP: usize = 14;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub id: String,
    n_examples: usize,
    dim: usize,
    intensities: Vec<f32>,
    pub source_meta: String,
}

impl Dataset {
    pub fn new(
        id: impl Into<String>,
        dim: usize,
        intensities: Vec<f32>,
        source_meta: impl Into<String>,
    ) -> Result<Self> {
        if dim == 0 || !intensities.len().is_multiple_of(dim) {
            return Err(Error::InvalidConfig(format!(
                "{} intensities do not form rows of dimension {dim}",
                intensities.len()
            )));
        }
        if let Some((index, &value)) = intensities
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::InvalidIntensity {
                index,
                value: f64::from(value),
            });
        }
        Ok(Dataset {
            id: id.into(),
            n_examples: intensities.len() / dim,
            dim,
            intensities,
            source_meta: source_meta.into(),
        })
    }

    pub fn from_binary_rows(id: impl Into<String>, rows: &[BinaryVisible]) -> Result<Self> {
        let dim = rows.first().map_or(0, BinaryState::len);
        let mut flat = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    what: "dataset row",
                    expected: dim,
                    found: row.len(),
                });
            }
            flat.extend(row.as_slice().iter().map(|&b| f32::from(b)));
        }
        Dataset::new(id, dim, flat, "binary rows")
    }

    pub fn n_examples(&self) -> usize {
        self.n_examples
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.n_examples == 0
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.intensities[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.intensities.chunks_exact(self.dim)
    }

    pub fn intensities(&self) -> &[f32] {
        &self.intensities
    }

    /// Samples the visible units of example `i`.
    pub fn binarize_row<R: Rng + ?Sized>(&self, i: usize, rng: &mut R) -> BinaryVisible {
        let mut out = vec![0u8; self.dim];
        binarize_into(self.row(i), &mut out, rng);
        BinaryState::from_raw(out)
    }

    pub fn to_container_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(14 + 4 * self.intensities.len());
        out.extend_from_slice(CONTAINER_MAGIC);
        out.extend_from_slice(&(self.n_examples as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for v in &self.intensities {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_container_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() < 14 || &bytes[..6] != CONTAINER_MAGIC {
            return Err(Error::format(path, 0, "bad magic, expected RBMDS1"));
        }
        let n = read_u32_le(bytes, 6) as usize;
        let dim = read_u32_le(bytes, 10) as usize;
        let expected = 14 + 4 * n * dim;
        if bytes.len() != expected {
            return Err(Error::format(
                path,
                bytes.len().min(expected) as u64,
                format!(
                    "container holds {} bytes, header implies {expected}",
                    bytes.len()
                ),
            ));
        }
        if dim == 0 {
            return Err(Error::format(path, 10, "zero dimension"));
        }
        let intensities: Vec<f32> = bytes[14..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if let Some(i) = intensities.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::format(
                path,
                14 + 4 * i as u64,
                format!("intensity {} outside [0, 1]", intensities[i]),
            ));
        }
        let id = path.file_stem().map_or_else(
            || "dataset".to_string(),
            |s| s.to_string_lossy().into_owned(),
        );
        Dataset::new(id, dim, intensities, format!("RBMDS1:{}", path.display()))
    }

    pub fn write_container(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_container_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read_container(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Dataset::from_container_bytes(&bytes, path)
    }
}

/// Independent `Bernoulli(intensity_i)` per unit, one uniform per unit in
/// index order.
pub fn binarize<R: Rng + ?Sized>(row: &[f32], rng: &mut R) -> Result<BinaryVisible> {
    if let Some((index, &value)) = row
        .iter()
        .enumerate()
        .find(|(_, v)| !(0.0..=1.0).contains(*v))
    {
        return Err(Error::InvalidIntensity {
            index,
            value: f64::from(value),
        });
    }
    let mut out = vec![0u8; row.len()];
    binarize_into(row, &mut out, rng);
    Ok(BinaryState::from_raw(out))
}

pub(crate) fn binarize_into<R: Rng + ?Sized>(row: &[f32], out: &mut [u8], rng: &mut R) {
    for (o, &p) in out.iter_mut().zip(row) {
        *o = u8::from(rng.random::<f64>() < f64::from(p));
    }
}

fn read_u32_le(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

fn read_u32_be(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

/// Reads a file, transparently inflating gzip. Offsets in later errors refer
/// to the decompressed stream.
fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// Parsed IDX image file: `(count, rows, cols, pixels)`.
fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    if bytes.len() < 16 {
        return Err(Error::format(
            path,
            bytes.len() as u64,
            "truncated IDX image header",
        ));
    }
    let magic = read_u32_be(bytes, 0);
    if magic != MNIST_IMAGE_MAGIC {
        return Err(Error::format(
            path,
            0,
            format!("bad magic 0x{magic:08x}, expected 0x{MNIST_IMAGE_MAGIC:08x}"),
        ));
    }
    let n = read_u32_be(bytes, 4) as usize;
    let rows = read_u32_be(bytes, 8) as usize;
    let cols = read_u32_be(bytes, 12) as usize;
    if !rows.is_multiple_of(2) || !cols.is_multiple_of(2) || rows == 0 || cols == 0 {
        return Err(Error::format(
            path,
            8,
            format!("image size {rows}x{cols} cannot be 2x2 pooled"),
        ));
    }
    let expected = 16 + n * rows * cols;
    if bytes.len() < expected {
        return Err(Error::format(
            path,
            bytes.len() as u64,
            format!("truncated: header declares {n} images ({expected} bytes)"),
        ));
    }
    Ok((n, rows, cols, bytes[16..expected].to_vec()))
}

fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    if bytes.len() < 8 {
        return Err(Error::format(
            path,
            bytes.len() as u64,
            "truncated IDX label header",
        ));
    }
    let magic = read_u32_be(bytes, 0);
    if magic != MNIST_LABEL_MAGIC {
        return Err(Error::format(
            path,
            0,
            format!("bad magic 0x{magic:08x}, expected 0x{MNIST_LABEL_MAGIC:08x}"),
        ));
    }
    let n = read_u32_be(bytes, 4) as usize;
    if bytes.len() < 8 + n {
        return Err(Error::format(
            path,
            bytes.len() as u64,
            format!("truncated: header declares {n} labels"),
        ));
    }
    let labels = bytes[8..8 + n].to_vec();
    if let Some(i) = labels.iter().position(|&l| l > 9) {
        return Err(Error::format(
            path,
            8 + i as u64,
            format!("label {} is not a digit", labels[i]),
        ));
    }
    Ok(labels)
}

/// Mean of each disjoint 2×2 block, scaled to `[0, 1]`.
fn mean_pool_2x2(pixels: &[u8], rows: usize, cols: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(rows * cols / 4);
    for r in (0..rows).step_by(2) {
        for c in (0..cols).step_by(2) {
            let sum = u32::from(pixels[r * cols + c])
                + u32::from(pixels[r * cols + c + 1])
                + u32::from(pixels[(r + 1) * cols + c])
                + u32::from(pixels[(r + 1) * cols + c + 1]);
            out.push((f64::from(sum) / (4.0 * 255.0)) as f32);
        }
    }
    out
}

pub fn load_mnist_subset(images: &Path, labels: &Path) -> Result<Dataset> {
    load_mnist_subset_with(images, labels, MNIST_PER_DIGIT)
}

/// The first `per_digit` examples of each digit in file order, pooled 2×2,
/// ordered by `(digit, occurrence)`.
pub fn load_mnist_subset_with(images: &Path, labels: &Path, per_digit: usize) -> Result<Dataset> {
    let (n, rows, cols, pixels) = parse_idx_images(&read_maybe_gz(images)?, images)?;
    let label_bytes = parse_idx_labels(&read_maybe_gz(labels)?, labels)?;
    if label_bytes.len() != n {
        return Err(Error::Data {
            path: labels.to_path_buf(),
            message: format!("{} labels for {n} images", label_bytes.len()),
        });
    }
    let image_len = rows * cols;
    let mut by_digit: Vec<Vec<usize>> = (0..10).map(|_| Vec::with_capacity(per_digit)).collect();
    for (i, &label) in label_bytes.iter().enumerate() {
        let bucket = &mut by_digit[label as usize];
        if bucket.len() < per_digit {
            bucket.push(i);
        }
    }
    if let Some((digit, found)) = by_digit
        .iter()
        .enumerate()
        .find(|(_, b)| b.len() < per_digit)
        .map(|(d, b)| (d, b.len()))
    {
        return Err(Error::Data {
            path: labels.to_path_buf(),
            message: format!("digit {digit} has only {found} examples, need {per_digit}"),
        });
    }
    let mut intensities = Vec::with_capacity(10 * per_digit * image_len / 4);
    for bucket in &by_digit {
        for &i in bucket {
            intensities.extend(mean_pool_2x2(
                &pixels[i * image_len..(i + 1) * image_len],
                rows,
                cols,
            ));
        }
    }
    Dataset::new(
        "mnist",
        image_len / 4,
        intensities,
        format!(
            "MNIST IDX {} + {}, first {per_digit} per digit, 2x2 mean pooled",
            images.display(),
            labels.display()
        ),
    )
}

pub fn load_cifar_subset(batch_paths: &[PathBuf]) -> Result<Dataset> {
    load_cifar_subset_with(batch_paths, CIFAR_SUBSET)
}

/// The first `count` records across the batches in order, converted to BT.601
/// luma and cropped to the central 14×14 window.
pub fn load_cifar_subset_with(batch_paths: &[PathBuf], count: usize) -> Result<Dataset> {
    let dim = CIFAR_CROP * CIFAR_CROP;
    let mut intensities = Vec::with_capacity(count * dim);
    let mut taken = 0;
    for path in batch_paths {
        if taken == count {
            break;
        }
        let bytes = read_maybe_gz(path)?;
        if bytes.len() % CIFAR_RECORD_LEN != 0 {
            let whole = bytes.len() / CIFAR_RECORD_LEN;
            // Only an error if the partial record would actually be read.
            if taken + whole < count {
                return Err(Error::format(
                    path,
                    (whole * CIFAR_RECORD_LEN) as u64,
                    format!(
                        "truncated record ({} trailing bytes)",
                        bytes.len() % CIFAR_RECORD_LEN
                    ),
                ));
            }
        }
        for record in bytes.chunks_exact(CIFAR_RECORD_LEN) {
            if taken == count {
                break;
            }
            let (red, rest) = record[1..].split_at(1024);
            let (green, blue) = rest.split_at(1024);
            for r in CIFAR_CROP_START..CIFAR_CROP_START + CIFAR_CROP {
                for c in CIFAR_CROP_START..CIFAR_CROP_START + CIFAR_CROP {
                    let at = r * 32 + c;
                    let luma = 0.299 * (f64::from(red[at]) / 255.0)
                        + 0.587 * (f64::from(green[at]) / 255.0)
                        + 0.114 * (f64::from(blue[at]) / 255.0);
                    intensities.push(luma.clamp(0.0, 1.0) as f32);
                }
            }
            taken += 1;
        }
    }
    if taken < count {
        return Err(Error::Data {
            path: batch_paths.last().cloned().unwrap_or_default(),
            message: format!("only {taken} CIFAR records available, need {count}"),
        });
    }
    let sources: Vec<String> = batch_paths
        .iter()
        .map(|p| p.display().to_string())
        .collect();
    Dataset::new(
        "cifar",
        dim,
        intensities,
        format!(
            "CIFAR-10 binary batches [{}], first {count} records, BT.601 luma, centre 14x14",
            sources.join(", ")
        ),
    )
}

/// One image per CSV row, 256 values in {0, 1}, no header.
pub fn load_silhouettes(csv_path: &Path) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(csv_path)
        .map_err(|e| Error::Data {
            path: csv_path.to_path_buf(),
            message: e.to_string(),
        })?;
    let mut intensities = Vec::new();
    for (row_no, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Data {
            path: csv_path.to_path_buf(),
            message: e.to_string(),
        })?;
        if record.len() != SILHOUETTE_DIM {
            return Err(Error::Data {
                path: csv_path.to_path_buf(),
                message: format!(
                    "row {}: {} values, expected {SILHOUETTE_DIM}",
                    row_no + 1,
                    record.len()
                ),
            });
        }
        for (col, field) in record.iter().enumerate() {
            let value: f64 = field.parse().map_err(|_| Error::Data {
                path: csv_path.to_path_buf(),
                message: format!(
                    "row {}, column {}: {field:?} is not a number",
                    row_no + 1,
                    col + 1
                ),
            })?;
            if value != 0.0 && value != 1.0 {
                return Err(Error::Data {
                    path: csv_path.to_path_buf(),
                    message: format!(
                        "row {}, column {}: {field:?} is not binary",
                        row_no + 1,
                        col + 1
                    ),
                });
            }
            intensities.push(value as f32);
        }
    }
    if intensities.is_empty() {
        return Err(Error::Data {
            path: csv_path.to_path_buf(),
            message: "no rows".into(),
        });
    }
    Dataset::new(
        "silhouettes",
        SILHOUETTE_DIM,
        intensities,
        format!("Caltech 101 Silhouettes CSV {}", csv_path.display()),
    )
}
