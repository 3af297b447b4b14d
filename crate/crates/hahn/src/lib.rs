//! Online representation learning with Hebbian/anti-Hebbian networks.
//!
//! The library trains single-layer, stacked, and multi-resolution networks of
//! rectified linear neurons with lateral inhibition, entirely from a stream of
//! image patches, and turns whole images into pooled feature vectors for a
//! linear classifier. Everything is deterministic given a seed.
//!
//! Module map:
//! - [`network`] — the learning kernel: coordinate-descent inference and
//!   recursive local weight updates, plus closed-form verification oracles.
//! - [`preprocess`] — patch sampling, per-patch normalization, ZCA whitening.
//! - [`encoder`] — sliding-window encoding, quadrant pooling, layer stacking,
//!   multi-resolution banks.
//! - [`classifier`] — one-vs-rest linear SVM on pooled features.
//! - [`dataset`] — CIFAR-10 binary ingestion and stratified subsets.
//! - [`bundle`] — binary model serialization and CSV feature export.
//! - [`render`] — filter visualization as tiled RGB grids.

pub mod bundle;
pub mod classifier;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod network;
pub mod pipeline;
pub mod preprocess;
pub mod render;
pub mod seeds;

pub use bundle::{export_features, load_bundle, save_bundle, ModelBundle, Provenance};
pub use classifier::{evaluate, fit_svm, fit_svm_tuned, predict, LinearModel, SvmOptions};
pub use dataset::{load_cifar_batch, load_cifar_dir, subset, LabeledImage};

pub use encoder::{
    avg_pool_2x2, encode_image, quadrant_pool, train_layer, FeatureMap, LayerSpec, TrainedLayer,
};
pub use error::{HahnError, Result};
pub use network::{
    batch_weights_oracle, global_objective, Code, NetworkConfig, NetworkState, Patch,
};
pub use pipeline::{
    bank_features, concat_features, encode_multi_resolution, encode_stack, encode_two_layer,
    stack_features, train_resolution_bank, train_stack, ResolutionBank, StackPlan,
};
pub use preprocess::{
    fit_whitening, normalize_patch, sample_patches, Image, PatchSampler, WhiteningTransform,
};
