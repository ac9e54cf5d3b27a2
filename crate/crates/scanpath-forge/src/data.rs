//! Dataset serialization, synthetic data generation, splits, raster I/O,
//! and the external-feature import hook.
//!
//! ## Dataset format
//!
//! Datasets are JSONL: one [`DatasetRecord`] per line, UTF-8, no trailing
//! commas. Field by field:
//!
//! - `image_id` — unique string key for the stimulus.
//! - `image_path` — optional path to a PPM raster, relative to the JSONL
//!   file; omitted when no pixels are attached.
//! - `screen_w`, `screen_h` — positive integer screen size in pixels.
//! - `observers` — nonempty array of `{observer_id, fixations}` objects,
//!   where `fixations` is a nonempty array of `[x, y]` or `[x, y, t_ms]`
//!   triples in screen pixels. Onset times are carried through but ignored
//!   by computation.
//!
//! ## Feature import format
//!
//! Externally computed encoder features use a small binary container:
//! magic `SPFEAT01`, a little-endian `u64` header length, a JSON header
//! mapping `image_id` to `{shape, offset}` (offset counted in elements),
//! then the concatenated feature payload as little-endian `f64`.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Tensor;
use crate::gaze::{Fixation, GazeError, ObserverPool, SaliencyMap, Scanpath};
use crate::seeding::mix_seed;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: parse error: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: invalid record: {reason}")]
    Validation { line: usize, reason: String },
    #[error("split ratios must be nonnegative and sum to 1, got {0:?}")]
    BadRatios([f64; 3]),
    #[error("feature file {path}: {message}")]
    BadFeatureFile { path: PathBuf, message: String },
    #[error("no features stored for image '{0}'")]
    MissingImage(String),
    #[error("features for '{id}' have shape {got:?}, expected {expected:?}")]
    FeatureShape {
        id: String,
        got: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error("raster file {path}: {message}")]
    BadRaster { path: PathBuf, message: String },
    #[error(transparent)]
    Gaze(#[from] GazeError),
}

fn io_err(path: &Path, source: std::io::Error) -> DataError {
    DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// A fixation serialized as `[x, y]` or `[x, y, t_ms]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct FixationEntry(pub Fixation);

impl TryFrom<Vec<f64>> for FixationEntry {
    type Error = String;

    fn try_from(v: Vec<f64>) -> Result<Self, String> {
        match v.as_slice() {
            [x, y] => Ok(FixationEntry(Fixation::new(*x, *y))),
            [x, y, t] => Ok(FixationEntry(Fixation::with_time(*x, *y, *t))),
            other => Err(format!(
                "fixation needs 2 or 3 numbers, got {}",
                other.len()
            )),
        }
    }
}

impl From<FixationEntry> for Vec<f64> {
    fn from(e: FixationEntry) -> Vec<f64> {
        match e.0.t_ms {
            Some(t) => vec![e.0.x, e.0.y, t],
            None => vec![e.0.x, e.0.y],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObserverRecord {
    pub observer_id: String,
    pub fixations: Vec<FixationEntry>,
}

/// One dataset line: an image with every observer's scanpath.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub image_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_path: Option<String>,
    pub screen_w: u32,
    pub screen_h: u32,
    pub observers: Vec<ObserverRecord>,
}

impl DatasetRecord {
    pub fn scanpaths(&self) -> Vec<Scanpath> {
        self.observers
            .iter()
            .map(|o| {
                Scanpath::new(
                    self.image_id.clone(),
                    o.observer_id.clone(),
                    self.screen_w,
                    self.screen_h,
                    o.fixations.iter().map(|f| f.0).collect(),
                )
            })
            .collect()
    }

    pub fn pool(&self) -> Result<ObserverPool, GazeError> {
        ObserverPool::new(self.scanpaths())
    }

    fn validate(&self) -> Result<(), String> {
        if self.observers.is_empty() {
            return Err("record has no observers".into());
        }
        for sp in self.scanpaths() {
            sp.validate()
                .map_err(|e| format!("observer '{}': {e}", sp.observer_id))?;
        }
        Ok(())
    }
}

/// Reads a JSONL dataset, reporting malformed lines by number (1-based).
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<DatasetRecord>, DataError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: DatasetRecord = serde_json::from_str(&line).map_err(|e| DataError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        record.validate().map_err(|reason| DataError::Validation {
            line: i + 1,
            reason,
        })?;
        records.push(record);
    }
    Ok(records)
}

/// Writes records as JSONL, one per line, in the given order.
pub fn save_dataset(records: &[DatasetRecord], path: impl AsRef<Path>) -> Result<(), DataError> {
    let path = path.as_ref();
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| io_err(path, e))
}

/// A single scanpath as a standalone JSON document, using the same
/// `[x, y, t?]` fixation arrays as the dataset format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanpathRecord {
    pub image_id: String,
    pub observer_id: String,
    pub screen_w: u32,
    pub screen_h: u32,
    pub fixations: Vec<FixationEntry>,
}

impl ScanpathRecord {
    pub fn from_scanpath(sp: &Scanpath) -> Self {
        ScanpathRecord {
            image_id: sp.image_id.clone(),
            observer_id: sp.observer_id.clone(),
            screen_w: sp.screen_w,
            screen_h: sp.screen_h,
            fixations: sp.fixations.iter().map(|f| FixationEntry(*f)).collect(),
        }
    }

    pub fn to_scanpath(&self) -> Scanpath {
        Scanpath::new(
            self.image_id.clone(),
            self.observer_id.clone(),
            self.screen_w,
            self.screen_h,
            self.fixations.iter().map(|f| f.0).collect(),
        )
    }
}

/// Reads a standalone scanpath JSON file.
pub fn load_scanpath(path: impl AsRef<Path>) -> Result<Scanpath, DataError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let record: ScanpathRecord = serde_json::from_str(&text).map_err(|e| DataError::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    Ok(record.to_scanpath())
}

/// Writes a standalone scanpath JSON file.
pub fn save_scanpath(sp: &Scanpath, path: impl AsRef<Path>) -> Result<(), DataError> {
    let path = path.as_ref();
    let record = ScanpathRecord::from_scanpath(sp);
    let text = serde_json::to_string_pretty(&record).expect("record serializes");
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Parameters of the synthetic blob-world generator. Each image gets
/// `n_blobs` bright Gaussian patches at seeded random positions inside a
/// centered box; observers fixate blob centers (chosen by the normalized
/// mixture weights) with per-observer Gaussian jitter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub width: u32,
    pub height: u32,
    pub n_blobs: usize,
    /// Blob spread range as a fraction of image width.
    pub blob_sigma_frac: (f64, f64),
    /// Blob centers stay inside `[margin, 1 - margin]` of each dimension.
    pub center_margin: f64,
    pub n_observers: usize,
    /// Inclusive range of fixations per scanpath.
    pub scanpath_len: (usize, usize),
    /// Per-observer jitter standard deviation as a fraction of image width.
    pub observer_noise_frac: f64,
    /// Probability of dwelling on the current blob for the next fixation
    /// instead of redrawing from the mixture. Real scanpaths cluster
    /// fixations; a high value reproduces that.
    pub dwell_prob: f64,
    /// Background brightness floor of the rendered images.
    pub background: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            width: 64,
            height: 64,
            n_blobs: 2,
            blob_sigma_frac: (0.05, 0.09),
            center_margin: 0.25,
            n_observers: 15,
            scanpath_len: (8, 12),
            observer_noise_frac: 0.03,
            dwell_prob: 0.8,
            background: 0.08,
        }
    }
}

/// One rendered Gaussian patch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlobSpec {
    /// Center in pixels.
    pub cx: f64,
    pub cy: f64,
    /// Spread in pixels.
    pub sigma: f64,
    /// Normalized mixture weight.
    pub weight: f64,
}

/// One synthetic stimulus: the dataset record, the rendered pixels, the
/// exact mixture density as ground truth, and the blob layout behind both.
#[derive(Clone, Debug)]
pub struct SyntheticImage {
    pub record: DatasetRecord,
    pub image: Tensor,
    pub truth: SaliencyMap,
    pub blobs: Vec<BlobSpec>,
}

#[derive(Clone, Debug)]
pub struct SyntheticDataset {
    pub spec: SyntheticSpec,
    pub images: Vec<SyntheticImage>,
}

impl SyntheticDataset {
    pub fn records(&self) -> Vec<DatasetRecord> {
        self.images.iter().map(|i| i.record.clone()).collect()
    }
}

use crate::seeding::sample_normal;

/// Generates a fully deterministic synthetic dataset: same spec and seed,
/// same bytes.
pub fn generate_synthetic(spec: &SyntheticSpec, n_images: usize, seed: u64) -> SyntheticDataset {
    let (w, h) = (spec.width, spec.height);
    let (wf, hf) = (f64::from(w), f64::from(h));
    let mut images = Vec::with_capacity(n_images);

    for i in 0..n_images {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 0xB10B, i as u64]));

        // blob layout
        let mut blobs = Vec::with_capacity(spec.n_blobs);
        let mut weight_sum = 0.0;
        for _ in 0..spec.n_blobs.max(1) {
            let cx = rng.random_range(spec.center_margin..1.0 - spec.center_margin) * wf;
            let cy = rng.random_range(spec.center_margin..1.0 - spec.center_margin) * hf;
            let sigma = rng.random_range(spec.blob_sigma_frac.0..=spec.blob_sigma_frac.1) * wf;
            let weight = rng.random_range(0.5..1.5);
            weight_sum += weight;
            blobs.push(BlobSpec {
                cx,
                cy,
                sigma,
                weight,
            });
        }
        for b in &mut blobs {
            b.weight /= weight_sum;
        }

        // exact mixture density on pixel centers
        let mut density = vec![0.0f64; (w as usize) * (h as usize)];
        for b in &blobs {
            let coeff = b.weight / (std::f64::consts::TAU * b.sigma * b.sigma);
            let inv = 1.0 / (2.0 * b.sigma * b.sigma);
            for r in 0..h as usize {
                let y = r as f64 + 0.5;
                for c in 0..w as usize {
                    let x = c as f64 + 0.5;
                    let d2 = (x - b.cx) * (x - b.cx) + (y - b.cy) * (y - b.cy);
                    density[r * w as usize + c] += coeff * (-d2 * inv).exp();
                }
            }
        }
        let peak = density.iter().copied().fold(0.0f64, f64::max);
        let truth_values: Vec<f64> = density.iter().map(|v| v / peak).collect();
        let truth = SaliencyMap::new(w, h, truth_values.clone()).expect("density is nonnegative");

        // bright patches on a dark background, grayscale over three channels
        let mut image = Vec::with_capacity(3 * truth_values.len());
        for _ in 0..3 {
            image.extend(
                truth_values
                    .iter()
                    .map(|v| spec.background + (1.0 - spec.background) * v),
            );
        }
        let image = Tensor::new([3, h as usize, w as usize], image);

        // observers fixate blob centers with jitter
        let jitter = spec.observer_noise_frac * wf;
        let mut observers = Vec::with_capacity(spec.n_observers);
        for o in 0..spec.n_observers {
            let len = rng.random_range(spec.scanpath_len.0..=spec.scanpath_len.1);
            let mut fixations = Vec::with_capacity(len);
            let mut current = usize::MAX;
            for k in 0..len {
                let redraw = current == usize::MAX || rng.random_range(0.0..1.0) >= spec.dwell_prob;
                if redraw {
                    let pick: f64 = rng.random_range(0.0..1.0);
                    let mut acc = 0.0;
                    current = blobs.len() - 1;
                    for (bi, b) in blobs.iter().enumerate() {
                        acc += b.weight;
                        if pick <= acc {
                            current = bi;
                            break;
                        }
                    }
                }
                let blob = &blobs[current];
                let x = (blob.cx + jitter * sample_normal(&mut rng)).clamp(0.0, wf);
                let y = (blob.cy + jitter * sample_normal(&mut rng)).clamp(0.0, hf);
                fixations.push(FixationEntry(Fixation::with_time(x, y, 250.0 * k as f64)));
            }
            observers.push(ObserverRecord {
                observer_id: format!("obs_{o:02}"),
                fixations,
            });
        }

        images.push(SyntheticImage {
            record: DatasetRecord {
                image_id: format!("img_{i:03}"),
                image_path: None,
                screen_w: w,
                screen_h: h,
                observers,
            },
            image,
            truth,
            blobs,
        });
    }

    SyntheticDataset {
        spec: spec.clone(),
        images,
    }
}

/// Train, validation, and test partitions of a dataset.
pub type SplitRecords = (Vec<DatasetRecord>, Vec<DatasetRecord>, Vec<DatasetRecord>);

/// Deterministic split by image, never by observer. Ratios must sum to one.
pub fn split(
    records: &[DatasetRecord],
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<SplitRecords, DataError> {
    let (a, b, c) = ratios;
    if a < 0.0 || b < 0.0 || c < 0.0 || (a + b + c - 1.0).abs() > 1e-9 {
        return Err(DataError::BadRatios([a, b, c]));
    }
    let mut indices: Vec<usize> = (0..records.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 0x59117]));
    for i in (1..indices.len()).rev() {
        let j = rng.random_range(0..=i);
        indices.swap(i, j);
    }
    let n = records.len();
    let n_a = (a * n as f64).round() as usize;
    let n_b = ((b * n as f64).round() as usize).min(n - n_a.min(n));
    let n_a = n_a.min(n);
    let take = |idx: &[usize]| idx.iter().map(|&i| records[i].clone()).collect::<Vec<_>>();
    Ok((
        take(&indices[..n_a]),
        take(&indices[n_a..n_a + n_b]),
        take(&indices[n_a + n_b..]),
    ))
}

// ---- feature import/export ---------------------------------------------------

const FEATURE_MAGIC: &[u8; 8] = b"SPFEAT01";

#[derive(Serialize, Deserialize)]
struct FeatureHeader {
    entries: BTreeMap<String, FeatureEntry>,
}

#[derive(Serialize, Deserialize)]
struct FeatureEntry {
    shape: Vec<usize>,
    offset: usize,
}

/// Externally computed per-image feature maps, keyed by image id.
#[derive(Clone, Debug, Default)]
pub struct FeatureFile {
    entries: BTreeMap<String, Tensor>,
}

impl FeatureFile {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, image_id: &str) -> Result<&Tensor, DataError> {
        self.entries
            .get(image_id)
            .ok_or_else(|| DataError::MissingImage(image_id.to_string()))
    }

    /// Fetches features and checks them against the model's expected shape.
    pub fn get_checked(&self, image_id: &str, expected: &[usize]) -> Result<&Tensor, DataError> {
        let t = self.get(image_id)?;
        if t.shape() != expected {
            return Err(DataError::FeatureShape {
                id: image_id.to_string(),
                got: t.shape().to_vec(),
                expected: expected.to_vec(),
            });
        }
        Ok(t)
    }
}

/// Writes feature maps in the binary container format described in the
/// module docs. Entries are laid out in key order.
pub fn export_features(
    entries: &[(String, Tensor)],
    path: impl AsRef<Path>,
) -> Result<(), DataError> {
    let path = path.as_ref();
    let mut header = FeatureHeader {
        entries: BTreeMap::new(),
    };
    let mut offset = 0usize;
    let sorted: BTreeMap<&String, &Tensor> = entries.iter().map(|(k, v)| (k, v)).collect();
    for (id, tensor) in &sorted {
        header.entries.insert(
            (*id).clone(),
            FeatureEntry {
                shape: tensor.shape().to_vec(),
                offset,
            },
        );
        offset += tensor.len();
    }
    let header_json = serde_json::to_vec(&header).expect("header serializes");

    let mut out = Vec::with_capacity(16 + header_json.len() + offset * 8);
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_json);
    for tensor in sorted.values() {
        for v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Reads a feature container written by [`export_features`].
pub fn import_features(path: impl AsRef<Path>) -> Result<FeatureFile, DataError> {
    let path = path.as_ref();
    let bad = |message: &str| DataError::BadFeatureFile {
        path: path.to_path_buf(),
        message: message.to_string(),
    };
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    if bytes.len() < 16 || &bytes[..8] != FEATURE_MAGIC {
        return Err(bad("missing SPFEAT01 magic"));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    if bytes.len() < 16 + header_len {
        return Err(bad("truncated header"));
    }
    let header: FeatureHeader = serde_json::from_slice(&bytes[16..16 + header_len])
        .map_err(|e| bad(&format!("bad header: {e}")))?;
    let payload = &bytes[16 + header_len..];
    if payload.len() % 8 != 0 {
        return Err(bad("payload is not a whole number of f64 values"));
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();

    let mut entries = BTreeMap::new();
    for (id, entry) in header.entries {
        let len: usize = entry.shape.iter().product();
        let end = entry
            .offset
            .checked_add(len)
            .ok_or_else(|| bad("offset overflow"))?;
        if end > values.len() {
            return Err(bad(&format!("entry '{id}' runs past the payload")));
        }
        let data = values[entry.offset..end].to_vec();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(bad(&format!("entry '{id}' contains non-finite values")));
        }
        entries.insert(id, Tensor::new(entry.shape, data));
    }
    Ok(FeatureFile { entries })
}

// ---- minimal raster I/O --------------------------------------------------------

/// Writes a `[3, H, W]` tensor with values in `[0, 1]` as a binary PPM.
pub fn write_ppm(image: &Tensor, path: impl AsRef<Path>) -> Result<(), DataError> {
    let path = path.as_ref();
    let shape = image.shape();
    assert_eq!(shape.len(), 3, "expected [3, H, W], got {shape:?}");
    assert_eq!(shape[0], 3, "expected 3 channels, got {shape:?}");
    let (h, w) = (shape[1], shape[2]);
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let data = image.data();
    for r in 0..h {
        for c in 0..w {
            for ch in 0..3 {
                let v = data[ch * h * w + r * w + c];
                out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    std::fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Reads a binary PPM into a `[3, H, W]` tensor with values in `[0, 1]`.
pub fn read_ppm(path: impl AsRef<Path>) -> Result<Tensor, DataError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    let bad = |message: &str| DataError::BadRaster {
        path: path.to_path_buf(),
        message: message.to_string(),
    };
    let mut reader = PnmHeader::new(&bytes);
    if reader.token().ok_or_else(|| bad("empty file"))? != "P6" {
        return Err(bad("not a binary PPM (P6)"));
    }
    let w: usize = reader
        .token()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| bad("bad width"))?;
    let h: usize = reader
        .token()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| bad("bad height"))?;
    let maxval: usize = reader
        .token()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| bad("bad maxval"))?;
    if maxval != 255 {
        return Err(bad("only maxval 255 is supported"));
    }
    let pixels = &bytes[reader.pos..];
    if pixels.len() < 3 * w * h {
        return Err(bad("truncated pixel data"));
    }
    let mut data = vec![0.0f64; 3 * w * h];
    for r in 0..h {
        for c in 0..w {
            for ch in 0..3 {
                data[ch * h * w + r * w + c] = f64::from(pixels[(r * w + c) * 3 + ch]) / 255.0;
            }
        }
    }
    Ok(Tensor::new([3, h, w], data))
}

/// Writes a saliency map as a 16-bit binary PGM (big-endian samples, per the
/// netpbm convention), scaling `[0, max]` onto the full range.
pub fn write_pgm16(map: &SaliencyMap, path: impl AsRef<Path>) -> Result<(), DataError> {
    let path = path.as_ref();
    let (w, h) = (map.width() as usize, map.height() as usize);
    let peak = map.max_value().max(1e-300);
    let mut out = format!("P5\n{w} {h}\n65535\n").into_bytes();
    for v in map.values() {
        let q = ((v / peak) * 65535.0).round() as u16;
        out.extend_from_slice(&q.to_be_bytes());
    }
    std::fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Skips PNM header whitespace and `#` comments.
struct PnmHeader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> PnmHeader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        PnmHeader { bytes, pos: 0 }
    }

    fn token(&mut self) -> Option<String> {
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if self.pos == start {
            return None;
        }
        let token = String::from_utf8_lossy(&self.bytes[start..self.pos]).into_owned();
        self.pos += 1; // single whitespace after the last header token
        Some(token)
    }
}
