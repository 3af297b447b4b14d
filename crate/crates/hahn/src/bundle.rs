//! Bit-exact model serialization and CSV feature export.
//!
//! The bundle file starts with the magic bytes `HAHN` and a little-endian
//! `u32` version, followed by length-prefixed sections: matrices carry two
//! `u32` dimensions and row-major 64-bit little-endian IEEE-754 payloads,
//! vectors a single `u32` length. Loading validates magic, version, and
//! every dimension, and re-saving a loaded bundle reproduces the file byte
//! for byte.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2};
use sha2::{Digest, Sha256};

use crate::classifier::LinearModel;
use crate::encoder::TrainedLayer;
use crate::error::{HahnError, Result};
use crate::network::{NetworkConfig, NetworkState};
use crate::preprocess::WhiteningTransform;

pub const BUNDLE_MAGIC: [u8; 4] = *b"HAHN";
pub const BUNDLE_VERSION: u32 = 1;

/// How a bundle was produced: master seed, per-layer patch budgets in
/// training order, and a SHA-256 over the dataset files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub seed: u64,
    pub patch_counts: Vec<u64>,
    pub dataset_checksum: [u8; 32],
}

/// A complete trained model: one layer stack per resolution, an optional
/// classifier over the concatenated pooled features, and provenance.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub resolutions: Vec<Vec<TrainedLayer>>,
    pub classifier: Option<LinearModel>,
    pub provenance: Provenance,
}

impl ModelBundle {
    /// Cross-checks the dimensions the file format cannot express on its
    /// own: window size vs input dimension, layer chaining, whitening size.
    pub fn validate(&self) -> Result<()> {
        if self.resolutions.is_empty() {
            return Err(HahnError::EmptyInput("bundle resolutions".into()));
        }
        for (r, stack) in self.resolutions.iter().enumerate() {
            if stack.is_empty() {
                return Err(HahnError::EmptyInput(format!("resolution {r} layers")));
            }
            let mut incoming_channels: Option<usize> = None;
            for (l, layer) in stack.iter().enumerate() {
                let section = format!("resolution {r} layer {l}");
                let rf = layer.receptive_field;
                if rf == 0 {
                    return Err(HahnError::format(section, "zero receptive field"));
                }
                let n = layer.state.input_dim();
                if n % (rf * rf) != 0 {
                    return Err(HahnError::format(
                        section,
                        format!("input dim {n} not divisible by rf^2 = {}", rf * rf),
                    ));
                }
                if let Some(channels) = incoming_channels {
                    if n != rf * rf * channels {
                        return Err(HahnError::format(
                            section,
                            format!(
                                "input dim {n} does not chain onto {channels} incoming channels"
                            ),
                        ));
                    }
                }
                if let Some(wt) = &layer.whitening {
                    if wt.dim() != n {
                        return Err(HahnError::format(
                            section,
                            format!("whitening dim {} vs input dim {n}", wt.dim()),
                        ));
                    }
                }
                incoming_channels = Some(layer.state.neurons());
            }
        }
        Ok(())
    }

    /// Total pooled feature length the classifier expects: four quadrants
    /// per layer per resolution.
    pub fn feature_len(&self) -> usize {
        self.resolutions
            .iter()
            .flat_map(|stack| stack.iter())
            .map(|layer| 4 * layer.state.neurons())
            .sum()
    }
}

struct Writer {
    bytes: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        Writer { bytes: Vec::new() }
    }

    fn u8(&mut self, v: u8) {
        self.bytes.push(v);
    }

    fn u32(&mut self, v: u32) {
        self.bytes.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.bytes.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.bytes.extend_from_slice(&v.to_le_bytes());
    }

    fn vector(&mut self, v: &Array1<f64>) {
        self.u32(v.len() as u32);
        for &x in v.iter() {
            self.f64(x);
        }
    }

    fn matrix(&mut self, m: &Array2<f64>) {
        self.u32(m.nrows() as u32);
        self.u32(m.ncols() as u32);
        for row in m.rows() {
            for &x in row.iter() {
                self.f64(x);
            }
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    cursor: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, cursor: 0 }
    }

    fn take(&mut self, count: usize, section: &str) -> Result<&'a [u8]> {
        if self.cursor + count > self.bytes.len() {
            return Err(HahnError::format(
                section,
                format!(
                    "needs {count} bytes at offset {} but only {} remain",
                    self.cursor,
                    self.bytes.len() - self.cursor
                ),
            ));
        }
        let slice = &self.bytes[self.cursor..self.cursor + count];
        self.cursor += count;
        Ok(slice)
    }

    fn u8(&mut self, section: &str) -> Result<u8> {
        Ok(self.take(1, section)?[0])
    }

    fn u32(&mut self, section: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, section)?.try_into().unwrap()))
    }

    fn u64(&mut self, section: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, section)?.try_into().unwrap()))
    }

    fn f64(&mut self, section: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, section)?.try_into().unwrap()))
    }

    fn vector(&mut self, section: &str) -> Result<Array1<f64>> {
        let len = self.u32(section)? as usize;
        let mut values = Vec::with_capacity(len);
        for _ in 0..len {
            values.push(self.value(section, len)?);
        }
        Ok(Array1::from(values))
    }

    fn matrix(&mut self, section: &str) -> Result<Array2<f64>> {
        let rows = self.u32(section)? as usize;
        let cols = self.u32(section)? as usize;
        let total = rows
            .checked_mul(cols)
            .ok_or_else(|| HahnError::format(section, "dimension overflow"))?;
        let mut values = Vec::with_capacity(total);
        for _ in 0..total {
            values.push(self.value(section, total)?);
        }
        Array2::from_shape_vec((rows, cols), values)
            .map_err(|e| HahnError::format(section, e.to_string()))
    }

    /// One f64 payload value; phrases truncation as a dimension mismatch.
    fn value(&mut self, section: &str, declared: usize) -> Result<f64> {
        if self.cursor + 8 > self.bytes.len() {
            let available = (self.bytes.len() - self.cursor) / 8;
            return Err(HahnError::format(
                section,
                format!("dimension mismatch: declares {declared} values but the file ends early \
                         (only {available} more available)"),
            ));
        }
        self.f64(section)
    }
}

/// Serialize a bundle to its byte representation.
pub fn bundle_to_bytes(bundle: &ModelBundle) -> Result<Vec<u8>> {
    bundle.validate()?;
    let mut w = Writer::new();
    w.bytes.extend_from_slice(&BUNDLE_MAGIC);
    w.u32(BUNDLE_VERSION);
    w.u32(bundle.resolutions.len() as u32);
    for stack in &bundle.resolutions {
        w.u32(stack.len() as u32);
        for layer in stack {
            w.u32(layer.receptive_field as u32);
            let config = layer.state.config();
            w.u32(config.input_dim as u32);
            w.u32(config.neurons as u32);
            w.u32(config.train_sweeps as u32);
            w.u32(config.infer_sweeps as u32);
            w.f64(config.cd_tolerance);
            w.u64(config.seed);
            w.f64(layer.var_floor);
            w.matrix(layer.state.feedforward());
            w.matrix(layer.state.lateral());
            w.vector(layer.state.cumulative_activity());
            w.u64(layer.state.samples_seen());
            match &layer.whitening {
                Some(wt) => {
                    w.u8(1);
                    w.vector(wt.mean());
                    w.matrix(wt.transform());
                    w.f64(wt.epsilon());
                }
                None => w.u8(0),
            }
        }
    }
    match &bundle.classifier {
        Some(model) => {
            w.u8(1);
            w.u32(model.classes() as u32);
            w.matrix(model.weights());
            w.vector(model.biases());
            w.vector(model.feature_mean());
            w.vector(model.feature_std());
        }
        None => w.u8(0),
    }
    w.u64(bundle.provenance.seed);
    w.u32(bundle.provenance.patch_counts.len() as u32);
    for &count in &bundle.provenance.patch_counts {
        w.u64(count);
    }
    w.bytes.extend_from_slice(&bundle.provenance.dataset_checksum);
    Ok(w.bytes)
}

/// Parse a bundle from bytes, validating magic, version, and all dimensions.
pub fn bundle_from_bytes(bytes: &[u8]) -> Result<ModelBundle> {
    let mut r = Reader::new(bytes);
    let magic = r.take(4, "header")?;
    if magic != BUNDLE_MAGIC {
        return Err(HahnError::format("header", "bad magic"));
    }
    let version = r.u32("header")?;
    if version != BUNDLE_VERSION {
        return Err(HahnError::format(
            "header",
            format!("unsupported version {version}, expected {BUNDLE_VERSION}"),
        ));
    }
    let resolution_count = r.u32("header")? as usize;
    let mut resolutions = Vec::with_capacity(resolution_count);
    for res in 0..resolution_count {
        let layer_count = r.u32(&format!("resolution {res}"))? as usize;
        let mut stack = Vec::with_capacity(layer_count);
        for lay in 0..layer_count {
            let section = format!("resolution {res} layer {lay}");
            let receptive_field = r.u32(&section)? as usize;
            let config = NetworkConfig {
                input_dim: r.u32(&section)? as usize,
                neurons: r.u32(&section)? as usize,
                train_sweeps: r.u32(&section)? as usize,
                infer_sweeps: r.u32(&section)? as usize,
                cd_tolerance: r.f64(&section)?,
                seed: r.u64(&section)?,
            };
            let var_floor = r.f64(&section)?;
            let feedforward = r.matrix(&format!("{section} feed-forward matrix"))?;
            let lateral = r.matrix(&format!("{section} lateral matrix"))?;
            let activity = r.vector(&format!("{section} activity vector"))?;
            let samples_seen = r.u64(&section)?;
            let state = NetworkState::from_parts(config, feedforward, lateral, activity, samples_seen)
                .map_err(|e| HahnError::format(&section, e.to_string()))?;
            let whitening = match r.u8(&format!("{section} whitening flag"))? {
                0 => None,
                1 => {
                    let mean = r.vector(&format!("{section} whitening mean"))?;
                    let transform = r.matrix(&format!("{section} whitening matrix"))?;
                    let epsilon = r.f64(&format!("{section} whitening epsilon"))?;
                    Some(
                        WhiteningTransform::new(mean, transform, epsilon)
                            .map_err(|e| HahnError::format(&section, e.to_string()))?,
                    )
                }
                flag => {
                    return Err(HahnError::format(
                        section,
                        format!("invalid whitening flag {flag}"),
                    ))
                }
            };
            stack.push(TrainedLayer {
                receptive_field,
                state,
                whitening,
                var_floor,
            });
        }
        resolutions.push(stack);
    }
    let classifier = match r.u8("classifier flag")? {
        0 => None,
        1 => {
            let classes = r.u32("classifier")? as usize;
            let weights = r.matrix("classifier weights")?;
            if weights.nrows() != classes {
                return Err(HahnError::format(
                    "classifier weights",
                    format!("{} rows for {classes} classes", weights.nrows()),
                ));
            }
            let biases = r.vector("classifier biases")?;
            let mean = r.vector("classifier feature mean")?;
            let std = r.vector("classifier feature std")?;
            Some(
                LinearModel::from_parts(weights, biases, mean, std)
                    .map_err(|e| HahnError::format("classifier", e.to_string()))?,
            )
        }
        flag => {
            return Err(HahnError::format(
                "classifier flag",
                format!("invalid flag {flag}"),
            ))
        }
    };
    let seed = r.u64("provenance")?;
    let count = r.u32("provenance patch counts")? as usize;
    let mut patch_counts = Vec::with_capacity(count);
    for _ in 0..count {
        patch_counts.push(r.u64("provenance patch counts")?);
    }
    let checksum: [u8; 32] = r
        .take(32, "provenance checksum")?
        .try_into()
        .expect("32 bytes");
    if r.cursor != bytes.len() {
        return Err(HahnError::format(
            "trailer",
            format!("{} trailing bytes", bytes.len() - r.cursor),
        ));
    }
    let bundle = ModelBundle {
        resolutions,
        classifier,
        provenance: Provenance {
            seed,
            patch_counts,
            dataset_checksum: checksum,
        },
    };
    bundle.validate()?;
    Ok(bundle)
}

pub fn save_bundle(bundle: &ModelBundle, path: impl AsRef<Path>) -> Result<()> {
    let bytes = bundle_to_bytes(bundle)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load_bundle(path: impl AsRef<Path>) -> Result<ModelBundle> {
    let bytes = fs::read(path)?;
    bundle_from_bytes(&bytes)
}

/// Write features as CSV: header `label,f0,f1,...`, floats with nine
/// significant digits, one row per sample.
pub fn export_features(
    features: ArrayView2<f64>,
    labels: &[usize],
    path: impl AsRef<Path>,
) -> Result<()> {
    if features.nrows() != labels.len() {
        return Err(HahnError::dims(
            "export_features labels",
            features.nrows(),
            labels.len(),
        ));
    }
    let mut out = String::new();
    out.push_str("label");
    for j in 0..features.ncols() {
        out.push_str(&format!(",f{j}"));
    }
    out.push('\n');
    for (row, &label) in features.rows().into_iter().zip(labels) {
        out.push_str(&label.to_string());
        for &v in row.iter() {
            out.push_str(&format!(",{v:.8e}"));
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// SHA-256 over the contents of the given files, in order.
pub fn checksum_files(paths: &[impl AsRef<Path>]) -> Result<[u8; 32]> {
    let mut hasher = Sha256::new();
    for path in paths {
        hasher.update(fs::read(path)?);
    }
    Ok(hasher.finalize().into())
}
