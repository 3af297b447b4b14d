//! CIFAR-10 binary ingestion and deterministic subsetting.
//!
//! The binary batches hold consecutive 3073-byte records: one label byte,
//! then the red, green, and blue planes, each 32x32 row-major. Parsing is
//! lossless; pixels convert to floats only when patches are cut.

use std::fs;
use std::path::Path;

use ndarray::Array3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{HahnError, Result};
use crate::preprocess::Image;

pub const IMAGE_SIDE: usize = 32;
pub const IMAGE_CHANNELS: usize = 3;
pub const PIXELS_PER_IMAGE: usize = IMAGE_SIDE * IMAGE_SIDE * IMAGE_CHANNELS;
pub const RECORD_BYTES: usize = PIXELS_PER_IMAGE + 1;
pub const CLASS_COUNT: usize = 10;

/// The canonical training batch file names, in order, plus the test batch.
pub const TRAIN_BATCHES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const TEST_BATCH: &str = "test_batch.bin";

/// One 32x32 RGB image with its class label, kept in the file's byte layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledImage {
    pixels: Vec<u8>,
    label: u8,
}

impl LabeledImage {
    pub fn new(pixels: Vec<u8>, label: u8) -> Result<Self> {
        if pixels.len() != PIXELS_PER_IMAGE {
            return Err(HahnError::dims("image pixels", PIXELS_PER_IMAGE, pixels.len()));
        }
        if label as usize >= CLASS_COUNT {
            return Err(HahnError::Dataset(format!("label {label} out of range")));
        }
        Ok(LabeledImage { pixels, label })
    }

    pub fn label(&self) -> usize {
        self.label as usize
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    /// Serialize back to the on-disk record layout.
    pub fn to_record(&self) -> Vec<u8> {
        let mut record = Vec::with_capacity(RECORD_BYTES);
        record.push(self.label);
        record.extend_from_slice(&self.pixels);
        record
    }

    /// Convert to a planar float image on the 0-255 scale. The stored plane
    /// order already matches the channel-major patch layout.
    pub fn to_image(&self) -> Image {
        let mut data = Array3::zeros((IMAGE_CHANNELS, IMAGE_SIDE, IMAGE_SIDE));
        for c in 0..IMAGE_CHANNELS {
            for r in 0..IMAGE_SIDE {
                for col in 0..IMAGE_SIDE {
                    data[[c, r, col]] =
                        self.pixels[c * IMAGE_SIDE * IMAGE_SIDE + r * IMAGE_SIDE + col] as f64;
                }
            }
        }
        Image::new(data).expect("bytes are finite")
    }
}

/// Parse one binary batch file. The file length must be a whole number of
/// records and every label byte must be a valid class.
pub fn load_cifar_batch(path: impl AsRef<Path>) -> Result<Vec<LabeledImage>> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    parse_batch_bytes(&bytes).map_err(|e| match e {
        HahnError::Dataset(msg) => {
            HahnError::Dataset(format!("{}: {msg}", path.display()))
        }
        other => other,
    })
}

fn parse_batch_bytes(bytes: &[u8]) -> Result<Vec<LabeledImage>> {
    if bytes.len() % RECORD_BYTES != 0 {
        return Err(HahnError::Dataset(format!(
            "truncated record: file length {} is not a multiple of {RECORD_BYTES} \
             (stray {} bytes at offset {})",
            bytes.len(),
            bytes.len() % RECORD_BYTES,
            bytes.len() - bytes.len() % RECORD_BYTES,
        )));
    }
    let mut images = Vec::with_capacity(bytes.len() / RECORD_BYTES);
    for (index, record) in bytes.chunks_exact(RECORD_BYTES).enumerate() {
        let label = record[0];
        if label as usize >= CLASS_COUNT {
            return Err(HahnError::Dataset(format!(
                "label byte {label} out of range at offset {}",
                index * RECORD_BYTES
            )));
        }
        images.push(LabeledImage {
            pixels: record[1..].to_vec(),
            label,
        });
    }
    Ok(images)
}

/// Load the five training batches and the test batch from a directory.
pub fn load_cifar_dir(dir: impl AsRef<Path>) -> Result<(Vec<LabeledImage>, Vec<LabeledImage>)> {
    let dir = dir.as_ref();
    let mut train = Vec::new();
    for name in TRAIN_BATCHES {
        train.extend(load_cifar_batch(dir.join(name))?);
    }
    let test = load_cifar_batch(dir.join(TEST_BATCH))?;
    Ok((train, test))
}

/// Deterministic class-stratified sample of `count` images. Per-class quotas
/// follow the class shares (largest remainder, ties to the lower class id);
/// the result is shuffled so classes interleave.
pub fn subset(images: &[LabeledImage], count: usize, seed: u64) -> Result<Vec<LabeledImage>> {
    if count > images.len() {
        return Err(HahnError::Dataset(format!(
            "subset of {count} from {} images",
            images.len()
        )));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); CLASS_COUNT];
    for (idx, image) in images.iter().enumerate() {
        by_class[image.label()].push(idx);
    }
    let total = images.len() as f64;
    let mut quotas = [0usize; CLASS_COUNT];
    let mut remainders: Vec<(usize, f64)> = Vec::new();
    let mut assigned = 0usize;
    for (class, members) in by_class.iter().enumerate() {
        let exact = count as f64 * members.len() as f64 / total;
        let floor = exact.floor() as usize;
        quotas[class] = floor.min(members.len());
        assigned += quotas[class];
        remainders.push((class, exact - floor as f64));
    }
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let mut cursor = 0;
    while assigned < count {
        let (class, _) = remainders[cursor % remainders.len()];
        if quotas[class] < by_class[class].len() {
            quotas[class] += 1;
            assigned += 1;
        }
        cursor += 1;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::with_capacity(count);
    for (class, members) in by_class.iter().enumerate() {
        let mut pool = members.clone();
        pool.shuffle(&mut rng);
        chosen.extend(pool.into_iter().take(quotas[class]));
    }
    chosen.shuffle(&mut rng);
    Ok(chosen.into_iter().map(|idx| images[idx].clone()).collect())
}

/// Labels of an image slice, in order.
pub fn labels(images: &[LabeledImage]) -> Vec<usize> {
    images.iter().map(|i| i.label()).collect()
}

/// Float images of a labeled slice, in order.
pub fn to_images(images: &[LabeledImage]) -> Vec<Image> {
    images.iter().map(|i| i.to_image()).collect()
}
