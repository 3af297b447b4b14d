//! Whole-pipeline orchestration: stacked layers, multi-resolution banks, and
//! bulk feature extraction over image sets.
//!
//! A stack holds one or two layers. The second layer trains on windows of the
//! 2x2-average-pooled first-layer feature maps of a deterministic image
//! subset, with its own normalization and whitening.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::encoder::{avg_pool_2x2, quadrant_pool, train_layer, LayerSpec, TrainedLayer};
use crate::error::{HahnError, Result};
use crate::preprocess::Image;
use crate::seeds::indexed_seed;

/// Default number of images whose pooled layer-1 maps feed layer-2 training.
pub const DEFAULT_LAYER2_SOURCES: usize = 2000;

/// One layer of a training plan: its spec plus the patch budget.
#[derive(Debug, Clone)]
pub struct StackPlan {
    pub spec: LayerSpec,
    pub patch_count: usize,
}

/// Train a one- or two-layer stack. Layer 1 samples from the raw images;
/// layer 2 samples from pooled layer-1 maps of `layer2_sources` images chosen
/// deterministically from `seed`. Per-layer seeds are derived sub-streams.
pub fn train_stack(
    images: &[Image],
    plans: &[StackPlan],
    layer2_sources: usize,
    seed: u64,
) -> Result<Vec<TrainedLayer>> {
    if plans.is_empty() || plans.len() > 2 {
        return Err(HahnError::InvalidConfig(
            "a stack has one or two layers".into(),
        ));
    }
    let first = train_layer(
        images,
        &plans[0].spec,
        plans[0].patch_count,
        indexed_seed(seed, "layer-sampling", 0),
    )?;
    let mut layers = vec![first];

    if let Some(plan) = plans.get(1) {
        let sources = pooled_source_maps(images, &layers[0], layer2_sources, seed)?;
        let second = train_layer(
            &sources,
            &plan.spec,
            plan.patch_count,
            indexed_seed(seed, "layer-sampling", 1),
        )?;
        layers.push(second);
    }
    Ok(layers)
}

/// Pooled layer-1 feature maps of a deterministic image subset, reinterpreted
/// as images for layer-2 patch sampling.
fn pooled_source_maps(
    images: &[Image],
    layer1: &TrainedLayer,
    source_count: usize,
    seed: u64,
) -> Result<Vec<Image>> {
    if source_count == 0 {
        return Err(HahnError::InvalidConfig(
            "layer2_sources must be >= 1".into(),
        ));
    }
    let mut indices: Vec<usize> = (0..images.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(indexed_seed(seed, "layer2-sources", 0));
    indices.shuffle(&mut rng);
    indices.truncate(source_count.min(images.len()));
    indices
        .into_par_iter()
        .map(|idx| {
            let map = layer1.encode(&images[idx])?;
            Ok(avg_pool_2x2(&map)?.to_image())
        })
        .collect()
}

/// Per-layer pooled feature vectors for one image: `phi_1` from the first
/// layer's map, and when a second layer is present, `phi_2` from encoding the
/// pooled first-layer map with it.
pub fn encode_stack(layers: &[TrainedLayer], image: &Image) -> Result<Vec<Array1<f64>>> {
    if layers.is_empty() || layers.len() > 2 {
        return Err(HahnError::InvalidConfig(
            "a stack has one or two layers".into(),
        ));
    }
    let first_map = layers[0].encode(image)?;
    let mut features = vec![quadrant_pool(&first_map)?];
    if let Some(second) = layers.get(1) {
        let pooled = avg_pool_2x2(&first_map)?.to_image();
        let second_map = second.encode(&pooled)?;
        features.push(quadrant_pool(&second_map)?);
    }
    Ok(features)
}

/// Two-layer convenience split of [`encode_stack`].
pub fn encode_two_layer(
    layer1: &TrainedLayer,
    layer2: &TrainedLayer,
    image: &Image,
) -> Result<(Array1<f64>, Array1<f64>)> {
    let mut features = encode_stack(&[layer1.clone(), layer2.clone()], image)?;
    let phi2 = features.pop().expect("two layers");
    let phi1 = features.pop().expect("two layers");
    Ok((phi1, phi2))
}

/// Pooled features for a whole image set, one matrix per layer, images in
/// row order. Encoding fans out across threads; the result is identical to
/// the sequential order.
pub fn stack_features(layers: &[TrainedLayer], images: &[Image]) -> Result<Vec<Array2<f64>>> {
    if images.is_empty() {
        return Err(HahnError::EmptyInput("stack_features images".into()));
    }
    let per_image: Vec<Vec<Array1<f64>>> = images
        .par_iter()
        .map(|image| encode_stack(layers, image))
        .collect::<Result<_>>()?;
    let mut matrices = Vec::with_capacity(layers.len());
    for layer_idx in 0..layers.len() {
        let dim = per_image[0][layer_idx].len();
        let mut matrix = Array2::<f64>::zeros((images.len(), dim));
        for (row, feats) in per_image.iter().enumerate() {
            matrix.row_mut(row).assign(&feats[layer_idx]);
        }
        matrices.push(matrix);
    }
    Ok(matrices)
}

/// Concatenate per-layer feature matrices row-wise (`phi_1 + phi_2`).
pub fn concat_features(matrices: &[Array2<f64>]) -> Result<Array2<f64>> {
    if matrices.is_empty() {
        return Err(HahnError::EmptyInput("concat_features".into()));
    }
    let rows = matrices[0].nrows();
    if matrices.iter().any(|m| m.nrows() != rows) {
        return Err(HahnError::dims(
            "concat_features rows",
            rows,
            matrices.iter().map(|m| m.nrows()).find(|&r| r != rows).unwrap_or(rows),
        ));
    }
    let total: usize = matrices.iter().map(|m| m.ncols()).sum();
    let mut out = Array2::<f64>::zeros((rows, total));
    let mut offset = 0;
    for m in matrices {
        out.slice_mut(ndarray::s![.., offset..offset + m.ncols()])
            .assign(m);
        offset += m.ncols();
    }
    Ok(out)
}

/// Independently trained single-layer networks with distinct window sizes
/// whose pooled features are concatenated.
#[derive(Debug, Clone)]
pub struct ResolutionBank {
    members: Vec<TrainedLayer>,
}

impl ResolutionBank {
    /// Members must come with strictly increasing receptive fields.
    pub fn new(members: Vec<TrainedLayer>) -> Result<Self> {
        if members.is_empty() {
            return Err(HahnError::EmptyInput("resolution bank".into()));
        }
        for pair in members.windows(2) {
            if pair[1].receptive_field <= pair[0].receptive_field {
                return Err(HahnError::InvalidConfig(
                    "resolution receptive fields must be strictly increasing".into(),
                ));
            }
        }
        Ok(ResolutionBank { members })
    }

    pub fn members(&self) -> &[TrainedLayer] {
        &self.members
    }

    pub fn into_members(self) -> Vec<TrainedLayer> {
        self.members
    }

    /// Total pooled feature length: four quadrants per member network.
    pub fn feature_len(&self) -> usize {
        self.members.iter().map(|l| 4 * l.state.neurons()).sum()
    }
}

/// Train one single-layer network per resolution entry over the same images.
pub fn train_resolution_bank(
    images: &[Image],
    plans: &[StackPlan],
    seed: u64,
) -> Result<ResolutionBank> {
    if plans.is_empty() {
        return Err(HahnError::EmptyInput("resolution plans".into()));
    }
    let members = plans
        .iter()
        .enumerate()
        .map(|(idx, plan)| {
            train_layer(
                images,
                &plan.spec,
                plan.patch_count,
                indexed_seed(seed, "resolution-sampling", idx as u64),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    ResolutionBank::new(members)
}

/// Concatenated quadrant-pooled features across the bank, in member order.
pub fn encode_multi_resolution(bank: &ResolutionBank, image: &Image) -> Result<Array1<f64>> {
    let mut out = Array1::<f64>::zeros(bank.feature_len());
    let mut offset = 0;
    for member in &bank.members {
        let pooled = quadrant_pool(&member.encode(image)?)?;
        out.slice_mut(ndarray::s![offset..offset + pooled.len()])
            .assign(&pooled);
        offset += pooled.len();
    }
    Ok(out)
}

/// Bank features for an image set, rows in image order.
pub fn bank_features(bank: &ResolutionBank, images: &[Image]) -> Result<Array2<f64>> {
    if images.is_empty() {
        return Err(HahnError::EmptyInput("bank_features images".into()));
    }
    let rows: Vec<Array1<f64>> = images
        .par_iter()
        .map(|image| encode_multi_resolution(bank, image))
        .collect::<Result<_>>()?;
    let mut matrix = Array2::<f64>::zeros((images.len(), bank.feature_len()));
    for (r, row) in rows.iter().enumerate() {
        matrix.row_mut(r).assign(row);
    }
    Ok(matrix)
}
