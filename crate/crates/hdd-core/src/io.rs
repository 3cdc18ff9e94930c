//! On-disk formats: the tensor container, dataset directories, run
//! manifests, and run-record CSVs.
//!
//! The tensor container is a minimal self-describing binary format:
//!
//! ```text
//!   magic   4 bytes  "HDDT"
//!   version u8       1
//!   dtype   u8       1 (f64)
//!   rank    u8
//!   dims    rank x u64, little endian
//!   payload prod(dims) x f64, little endian, row major
//! ```
//!
//! Every reader failure names what was expected and what was found, so a
//! truncated or corrupted file is diagnosed rather than misread. Manifests
//! are `key=value` text files whose final line carries an FNV-1a digest of
//! everything above it; rewriting any byte of the payload without updating
//! the digest is detected on load.

use std::fs;
use std::io::{BufWriter, Write as _};
use std::path::Path;

use ndarray::{Array1, ArrayD, ArrayViewD, IxDyn};

use crate::engine::{LabeledDataset, RunRecord};
use crate::error::{HddError, Result};
use crate::util::Fnv1a;

const TENSOR_MAGIC: &[u8; 4] = b"HDDT";
const TENSOR_VERSION: u8 = 1;
const DTYPE_F64: u8 = 1;
const MAX_RANK: u8 = 8;

/// File name of the image tensor inside a dataset directory.
pub const IMAGES_FILE: &str = "images.hddt";
/// File name of the label tensor inside a dataset directory.
pub const LABELS_FILE: &str = "labels.hddt";
/// File name of the CSV fallback inside a dataset directory.
pub const DATASET_CSV_FILE: &str = "dataset.csv";
/// File name of the image tensor inside a distillation output directory.
pub const SYNTHETIC_FILE: &str = "synthetic.hddt";
/// File name of the run manifest inside an output directory.
pub const MANIFEST_FILE: &str = "manifest.txt";

/// Serializes a tensor into the container format.
pub fn write_tensor(path: &Path, tensor: ArrayViewD<f64>) -> Result<()> {
    if tensor.ndim() == 0 || tensor.ndim() > MAX_RANK as usize {
        return Err(HddError::InvalidArgument(format!(
            "container supports ranks 1..={MAX_RANK}, got {}",
            tensor.ndim()
        )));
    }
    let file = fs::File::create(path)?;
    let mut out = BufWriter::new(file);
    out.write_all(TENSOR_MAGIC)?;
    out.write_all(&[TENSOR_VERSION, DTYPE_F64, tensor.ndim() as u8])?;
    for &d in tensor.shape() {
        out.write_all(&(d as u64).to_le_bytes())?;
    }
    let contiguous = tensor.as_standard_layout();
    for v in contiguous.iter() {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a tensor back from the container format, validating the header and
/// the exact payload length.
pub fn read_tensor(path: &Path) -> Result<ArrayD<f64>> {
    let bytes = fs::read(path)?;
    let need_header = TENSOR_MAGIC.len() + 3;
    if bytes.len() < need_header {
        return Err(HddError::Data(format!(
            "truncated container {}: expected at least {need_header} header bytes, found {}",
            path.display(),
            bytes.len()
        )));
    }
    if &bytes[..4] != TENSOR_MAGIC {
        return Err(HddError::Data(format!(
            "bad container magic in {}: expected {:?}, found {:?}",
            path.display(),
            String::from_utf8_lossy(TENSOR_MAGIC),
            String::from_utf8_lossy(&bytes[..4])
        )));
    }
    let (version, dtype, rank) = (bytes[4], bytes[5], bytes[6]);
    if version != TENSOR_VERSION {
        return Err(HddError::Data(format!(
            "unsupported container version in {}: expected {TENSOR_VERSION}, found {version}",
            path.display()
        )));
    }
    if dtype != DTYPE_F64 {
        return Err(HddError::Data(format!(
            "unsupported dtype in {}: expected {DTYPE_F64} (f64), found {dtype}",
            path.display()
        )));
    }
    if rank == 0 || rank > MAX_RANK {
        return Err(HddError::Data(format!(
            "bad rank in {}: expected 1..={MAX_RANK}, found {rank}",
            path.display()
        )));
    }
    let dims_end = need_header + rank as usize * 8;
    if bytes.len() < dims_end {
        return Err(HddError::Data(format!(
            "truncated container {}: expected {dims_end} bytes of header and dims, found {}",
            path.display(),
            bytes.len()
        )));
    }
    let mut dims = Vec::with_capacity(rank as usize);
    for i in 0..rank as usize {
        let start = need_header + i * 8;
        let d = u64::from_le_bytes(bytes[start..start + 8].try_into().expect("8 bytes"));
        dims.push(d as usize);
    }
    let count = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).ok_or_else(|| {
        HddError::Data(format!("dimension overflow in {}: {dims:?}", path.display()))
    })?;
    let expected = dims_end + count * 8;
    if bytes.len() != expected {
        return Err(HddError::Data(format!(
            "payload size mismatch in {}: expected {expected} bytes for shape {dims:?}, found {}",
            path.display(),
            bytes.len()
        )));
    }
    let mut values = Vec::with_capacity(count);
    for i in 0..count {
        let start = dims_end + i * 8;
        values.push(f64::from_le_bytes(bytes[start..start + 8].try_into().expect("8 bytes")));
    }
    ArrayD::from_shape_vec(IxDyn(&dims), values)
        .map_err(|e| HddError::Data(format!("inconsistent container {}: {e}", path.display())))
}

/// Writes a dataset as `images.hddt` (N x C x H x W) plus `labels.hddt` (N),
/// creating the directory if needed.
pub fn save_dataset(dir: &Path, data: &LabeledDataset) -> Result<()> {
    save_pair(dir, IMAGES_FILE, data)
}

/// Writes a distilled dataset as `synthetic.hddt` (N x C x H x W) plus
/// `labels.hddt` (N), creating the directory if needed. The directory loads
/// back through [`load_dataset`] like any other dataset directory.
pub fn save_synthetic(dir: &Path, data: &LabeledDataset) -> Result<()> {
    save_pair(dir, SYNTHETIC_FILE, data)
}

fn save_pair(dir: &Path, images_file: &str, data: &LabeledDataset) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_tensor(&dir.join(images_file), data.images().view().into_dyn())?;
    let labels = Array1::from_iter(data.labels().iter().map(|&l| l as f64));
    write_tensor(&dir.join(LABELS_FILE), labels.view().into_dyn())?;
    Ok(())
}

/// Interprets raw image values: integer payloads in [0, 255] with any value
/// above 1 are treated as 8-bit intensities and scaled by 1/255; anything
/// else must already lie in [0, 1].
fn normalize_pixels(images: &mut ArrayD<f64>) -> Result<bool> {
    let mut all_int_255 = true;
    let mut any_above_one = false;
    for &v in images.iter() {
        if !v.is_finite() {
            return Err(HddError::Data("non-finite pixel value".into()));
        }
        if v.fract() != 0.0 || !(0.0..=255.0).contains(&v) {
            all_int_255 = false;
        }
        if v > 1.0 {
            any_above_one = true;
        }
    }
    if all_int_255 && any_above_one {
        images.mapv_inplace(|v| v / 255.0);
        return Ok(true);
    }
    Ok(false)
}

/// Remaps arbitrary nonnegative integer labels onto `0..k` by ascending
/// value, returning the classes in their new order.
fn remap_labels(raw: &[f64]) -> Result<(Vec<usize>, Vec<u64>)> {
    let mut values = Vec::with_capacity(raw.len());
    for (i, &v) in raw.iter().enumerate() {
        if !v.is_finite() || v.fract() != 0.0 || v < 0.0 || v > u32::MAX as f64 {
            return Err(HddError::Data(format!(
                "label {v} at row {i} is not a small nonnegative integer"
            )));
        }
        values.push(v as u64);
    }
    let mut distinct: Vec<u64> = values.clone();
    distinct.sort_unstable();
    distinct.dedup();
    let labels = values
        .iter()
        .map(|v| distinct.binary_search(v).expect("value is in its own index") )
        .collect();
    Ok((labels, distinct))
}

/// Loads a dataset directory: the tensor pair when present (original
/// `images.hddt` or distilled `synthetic.hddt`), otherwise the CSV fallback.
/// Labels are remapped to contiguous `0..k` (ascending by original value)
/// and 8-bit integer images are rescaled to [0, 1]; both adjustments are
/// reported through the diagnostic log.
pub fn load_dataset(dir: &Path) -> Result<LabeledDataset> {
    let mut images_path = dir.join(IMAGES_FILE);
    if !images_path.exists() {
        images_path = dir.join(SYNTHETIC_FILE);
    }
    if !images_path.exists() {
        let csv = dir.join(DATASET_CSV_FILE);
        if csv.exists() {
            return load_dataset_csv(&csv);
        }
        return Err(HddError::Data(format!(
            "no dataset at {}: expected {IMAGES_FILE} (or {SYNTHETIC_FILE}) + {LABELS_FILE} \
             or {DATASET_CSV_FILE}",
            dir.display()
        )));
    }
    let mut images = read_tensor(&images_path)?;
    let labels_raw = read_tensor(&dir.join(LABELS_FILE))?;
    if images.ndim() != 4 {
        return Err(HddError::Data(format!(
            "image tensor must be rank 4 (N x C x H x W), found rank {}",
            images.ndim()
        )));
    }
    if labels_raw.ndim() != 1 {
        return Err(HddError::Data(format!(
            "label tensor must be rank 1, found rank {}",
            labels_raw.ndim()
        )));
    }
    if images.shape()[0] != labels_raw.len() {
        return Err(HddError::Data(format!(
            "{} images against {} labels",
            images.shape()[0],
            labels_raw.len()
        )));
    }
    if normalize_pixels(&mut images)? {
        log::info!("dataset {}: rescaled 8-bit integer pixels to [0, 1]", dir.display());
    }
    let flat: Vec<f64> = labels_raw.iter().cloned().collect();
    let (labels, distinct) = remap_labels(&flat)?;
    if distinct.iter().enumerate().any(|(i, &v)| v != i as u64) {
        log::info!(
            "dataset {}: remapped labels {:?} onto 0..{}",
            dir.display(),
            distinct,
            distinct.len()
        );
    }
    let shape = (
        images.shape()[0],
        images.shape()[1],
        images.shape()[2],
        images.shape()[3],
    );
    let images4 = images
        .into_dimensionality::<ndarray::Ix4>()
        .map_err(|e| HddError::Data(format!("image tensor reshape failed: {e}")))?;
    debug_assert_eq!(images4.dim(), shape);
    LabeledDataset::new(images4, labels)
}

/// Writes a dataset as a single CSV file: a `channels,height,width` header
/// line, then one `label,v0,v1,...` row per image (pixels row major, 17
/// significant digits).
pub fn save_dataset_csv(path: &Path, data: &LabeledDataset) -> Result<()> {
    let (c, h, w) = data.shape();
    let mut out = String::new();
    out.push_str(&format!("{c},{h},{w}\n"));
    for (img, &label) in data.images().outer_iter().zip(data.labels()) {
        out.push_str(&label.to_string());
        for v in img.iter() {
            out.push_str(&format!(",{v:.16e}"));
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads the CSV dataset format written by [`save_dataset_csv`]. Labels are
/// remapped to contiguous `0..k` exactly as in [`load_dataset`].
pub fn load_dataset_csv(path: &Path) -> Result<LabeledDataset> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| {
        HddError::Data(format!("empty dataset CSV {}", path.display()))
    })?;
    let dims: Vec<usize> = header
        .split(',')
        .map(|t| {
            t.trim().parse::<usize>().map_err(|_| {
                HddError::Data(format!(
                    "bad CSV header {header:?}: expected channels,height,width"
                ))
            })
        })
        .collect::<Result<_>>()?;
    let &[c, h, w] = dims.as_slice() else {
        return Err(HddError::Data(format!(
            "bad CSV header {header:?}: expected exactly 3 dimensions"
        )));
    };
    let pixel_count = c * h * w;
    let mut raw_labels = Vec::new();
    let mut pixels = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let label: f64 = fields
            .next()
            .and_then(|t| t.trim().parse().ok())
            .ok_or_else(|| {
                HddError::Data(format!("row {}: missing or bad label", lineno + 2))
            })?;
        raw_labels.push(label);
        let before = pixels.len();
        for t in fields {
            let v: f64 = t.trim().parse().map_err(|_| {
                HddError::Data(format!("row {}: bad pixel value {t:?}", lineno + 2))
            })?;
            pixels.push(v);
        }
        if pixels.len() - before != pixel_count {
            return Err(HddError::Data(format!(
                "row {}: expected {pixel_count} pixels, found {}",
                lineno + 2,
                pixels.len() - before
            )));
        }
    }
    if raw_labels.is_empty() {
        return Err(HddError::Data(format!("dataset CSV {} has no rows", path.display())));
    }
    let n = raw_labels.len();
    let mut images = ArrayD::from_shape_vec(IxDyn(&[n, c, h, w]), pixels)
        .map_err(|e| HddError::Data(format!("CSV reshape failed: {e}")))?;
    if normalize_pixels(&mut images)? {
        log::info!("dataset {}: rescaled 8-bit integer pixels to [0, 1]", path.display());
    }
    let (labels, distinct) = remap_labels(&raw_labels)?;
    if distinct.iter().enumerate().any(|(i, &v)| v != i as u64) {
        log::info!(
            "dataset {}: remapped labels {:?} onto 0..{}",
            path.display(),
            distinct,
            distinct.len()
        );
    }
    let images4 = images
        .into_dimensionality::<ndarray::Ix4>()
        .map_err(|e| HddError::Data(format!("CSV reshape failed: {e}")))?;
    LabeledDataset::new(images4, labels)
}

/// Writes a run manifest: the given `key=value` entries in order, followed
/// by a `digest=<hex>` line holding the FNV-1a digest of every preceding
/// byte.
pub fn write_manifest(path: &Path, entries: &[(String, String)]) -> Result<()> {
    let mut payload = String::new();
    for (k, v) in entries {
        if k.contains('=') || k.contains('\n') || v.contains('\n') {
            return Err(HddError::InvalidArgument(format!(
                "manifest entry {k:?} must not contain '=' in the key or newlines"
            )));
        }
        payload.push_str(&format!("{k}={v}\n"));
    }
    let mut hasher = Fnv1a::new();
    hasher.update(payload.as_bytes());
    let digest = hasher.finish();
    fs::write(path, format!("{payload}digest={digest:016x}\n"))?;
    Ok(())
}

/// Reads a manifest back, verifying its digest line. Any altered payload
/// byte surfaces as a corruption error naming both digests.
pub fn read_manifest(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path)?;
    let Some(digest_start) = text.rfind("digest=") else {
        return Err(HddError::Data(format!(
            "manifest {} has no digest line",
            path.display()
        )));
    };
    let payload = &text[..digest_start];
    let digest_line = text[digest_start..].trim_end();
    let stored = digest_line
        .strip_prefix("digest=")
        .and_then(|d| u64::from_str_radix(d, 16).ok())
        .ok_or_else(|| {
            HddError::Data(format!("manifest {}: malformed digest line", path.display()))
        })?;
    let mut hasher = Fnv1a::new();
    hasher.update(payload.as_bytes());
    let actual = hasher.finish();
    if actual != stored {
        return Err(HddError::Data(format!(
            "manifest {} is corrupted: stored digest {stored:016x}, computed {actual:016x}",
            path.display()
        )));
    }
    let mut entries = Vec::new();
    for line in payload.lines() {
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(HddError::Data(format!(
                "manifest {}: line {line:?} is not key=value",
                path.display()
            )));
        };
        entries.push((k.to_string(), v.to_string()));
    }
    Ok(entries)
}

/// File name of the loss-series CSV inside a run directory.
pub const RUN_RECORD_FILE: &str = "run_record.csv";
/// File name of the evaluation-checkpoint CSV inside a run directory.
pub const EVALS_FILE: &str = "evals.csv";

/// Writes the run record into `dir`: the loss series as `run_record.csv`,
/// plus `evals.csv` when checkpoints were recorded. Output bytes depend only
/// on the record contents, so identical runs produce identical files.
pub fn write_run_record(dir: &Path, record: &RunRecord) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(RUN_RECORD_FILE), record.to_csv())?;
    if !record.evals.is_empty() {
        fs::write(dir.join(EVALS_FILE), record.evals_csv())?;
    }
    Ok(())
}

/// Reads the loss series back from a run directory's `run_record.csv`.
pub fn read_run_record(dir: &Path) -> Result<Vec<crate::engine::IterationLoss>> {
    let path = dir.join(RUN_RECORD_FILE);
    let text = fs::read_to_string(&path)
        .map_err(|e| HddError::Data(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| HddError::Data(format!("empty record {}", path.display())))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.first() != Some(&"iteration") || cols.last() != Some(&"total") || cols.len() < 3 {
        return Err(HddError::Data(format!(
            "unexpected record header {header:?}: expected iteration,loss_class_...,total"
        )));
    }
    let classes = cols.len() - 2;
    let mut out = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            return Err(HddError::Data(format!(
                "record row {}: expected {} columns, found {}",
                lineno + 2,
                cols.len(),
                fields.len()
            )));
        }
        let iteration: usize = fields[0].parse().map_err(|_| {
            HddError::Data(format!("record row {}: bad iteration {:?}", lineno + 2, fields[0]))
        })?;
        let mut per_class = Vec::with_capacity(classes);
        for f in &fields[1..=classes] {
            per_class.push(f.parse().map_err(|_| {
                HddError::Data(format!("record row {}: bad loss value {f:?}", lineno + 2))
            })?);
        }
        let total: f64 = fields[cols.len() - 1].parse().map_err(|_| {
            HddError::Data(format!("record row {}: bad total", lineno + 2))
        })?;
        out.push(crate::engine::IterationLoss { iteration, per_class, total });
    }
    Ok(out)
}
