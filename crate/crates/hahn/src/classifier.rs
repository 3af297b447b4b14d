//! One-vs-rest linear SVM on pooled feature vectors.
//!
//! Features are standardized per dimension, then each class gets an
//! L2-regularized hinge-loss separator trained by seeded stochastic
//! subgradient descent with averaged iterates. Prediction is the argmax of
//! the per-class scores, ties broken toward the lowest class id.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{HahnError, Result};

/// Smallest per-dimension standard deviation kept during standardization.
pub const STD_FLOOR: f64 = 1e-8;
/// Default L2 regularization strength of the per-sample objective.
pub const DEFAULT_LAMBDA: f64 = 1e-4;
/// Default number of passes over the training set.
pub const DEFAULT_EPOCHS: usize = 20;

/// Training options. `lambda` weights the L2 penalty against the mean hinge
/// loss; the step size at global step `t` is `1 / (lambda * t)`.
#[derive(Debug, Clone)]
pub struct SvmOptions {
    pub lambda: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for SvmOptions {
    fn default() -> Self {
        SvmOptions {
            lambda: DEFAULT_LAMBDA,
            epochs: DEFAULT_EPOCHS,
            seed: 0,
        }
    }
}

/// A trained multi-class linear model with its standardization statistics.
#[derive(Debug, Clone)]
pub struct LinearModel {
    weights: Array2<f64>,
    biases: Array1<f64>,
    feature_mean: Array1<f64>,
    feature_std: Array1<f64>,
    classes: usize,
}

impl LinearModel {
    pub fn from_parts(
        weights: Array2<f64>,
        biases: Array1<f64>,
        feature_mean: Array1<f64>,
        feature_std: Array1<f64>,
    ) -> Result<Self> {
        let classes = weights.nrows();
        let dim = weights.ncols();
        if biases.len() != classes {
            return Err(HahnError::dims("model biases", classes, biases.len()));
        }
        if feature_mean.len() != dim || feature_std.len() != dim {
            return Err(HahnError::dims("model statistics", dim, feature_mean.len()));
        }
        if feature_std.iter().any(|&s| !(s > 0.0)) {
            return Err(HahnError::InvalidConfig(
                "feature_std entries must be positive".into(),
            ));
        }
        Ok(LinearModel {
            weights,
            biases,
            feature_mean,
            feature_std,
            classes,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn biases(&self) -> &Array1<f64> {
        &self.biases
    }

    pub fn feature_mean(&self) -> &Array1<f64> {
        &self.feature_mean
    }

    pub fn feature_std(&self) -> &Array1<f64> {
        &self.feature_std
    }

    /// Per-class decision values for one feature vector.
    pub fn scores(&self, feature: ArrayView1<f64>) -> Result<Array1<f64>> {
        if feature.len() != self.dim() {
            return Err(HahnError::dims("predict input", self.dim(), feature.len()));
        }
        let standardized = (&feature - &self.feature_mean) / &self.feature_std;
        Ok(self.weights.dot(&standardized) + &self.biases)
    }
}

/// Fit a one-vs-rest linear SVM. Labels are class ids `0..classes`; at least
/// two classes must be present and every feature must be finite.
pub fn fit_svm(
    features: ArrayView2<f64>,
    labels: &[usize],
    options: &SvmOptions,
) -> Result<LinearModel> {
    let samples = features.nrows();
    let dim = features.ncols();
    if samples == 0 || dim == 0 {
        return Err(HahnError::EmptyInput("fit_svm features".into()));
    }
    if labels.len() != samples {
        return Err(HahnError::dims("fit_svm labels", samples, labels.len()));
    }
    if !features.iter().all(|v| v.is_finite()) {
        return Err(HahnError::NonFinite("fit_svm features".into()));
    }
    if !(options.lambda > 0.0) || options.epochs == 0 {
        return Err(HahnError::InvalidConfig(
            "lambda must be > 0 and epochs >= 1".into(),
        ));
    }
    let classes = labels.iter().max().map_or(0, |&c| c + 1);
    let mut present = vec![false; classes];
    for &label in labels {
        present[label] = true;
    }
    if classes < 2 || present.iter().filter(|&&p| p).count() < 2 {
        return Err(HahnError::InvalidConfig(
            "fit_svm needs at least two distinct classes".into(),
        ));
    }

    // Standardize once; every class trains on the same matrix.
    let mut mean = Array1::<f64>::zeros(dim);
    for row in features.rows() {
        mean += &row;
    }
    mean /= samples as f64;
    let mut variance = Array1::<f64>::zeros(dim);
    for row in features.rows() {
        let centered = &row - &mean;
        variance += &centered.mapv(|v| v * v);
    }
    variance /= samples as f64;
    let std = variance.mapv(|v| v.sqrt().max(STD_FLOOR));
    let mut standardized = features.to_owned();
    for mut row in standardized.rows_mut() {
        row -= &mean;
        row /= &std;
    }

    let mut weights = Array2::<f64>::zeros((classes, dim));
    let mut biases = Array1::<f64>::zeros(classes);
    for class in 0..classes {
        let (w, b) = fit_binary_hinge(&standardized, labels, class, options);
        weights.row_mut(class).assign(&w);
        biases[class] = b;
    }

    LinearModel::from_parts(weights, biases, mean, std)
}

/// Averaged projected stochastic subgradient descent on the hinge loss for
/// one one-vs-rest split. The bias rides along as an augmented constant
/// coordinate. After each step the iterate is projected onto the ball of
/// radius `1/sqrt(lambda)`, which keeps the aggressive early steps of the
/// `1/(lambda t)` schedule bounded; the averaged iterate is returned. Every
/// split sees the same deterministic epoch orders, which makes relabeling
/// classes permute the fitted separators exactly.
fn fit_binary_hinge(
    standardized: &Array2<f64>,
    labels: &[usize],
    positive_class: usize,
    options: &SvmOptions,
) -> (Array1<f64>, f64) {
    let samples = standardized.nrows();
    let dim = standardized.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut order: Vec<usize> = (0..samples).collect();

    let radius_sq = 1.0 / options.lambda;
    let mut w = vec![0.0f64; dim + 1];
    let mut w_sum = vec![0.0f64; dim + 1];
    let mut step = 0usize;

    for _ in 0..options.epochs {
        order.shuffle(&mut rng);
        for &idx in &order {
            step += 1;
            let learning_rate = 1.0 / (options.lambda * step as f64);
            let target = if labels[idx] == positive_class { 1.0 } else { -1.0 };
            let row = standardized.row(idx);
            let row = row.as_slice().expect("standard layout");
            let mut margin = w[dim];
            for (wj, xj) in w.iter().zip(row) {
                margin += wj * xj;
            }
            let decay = 1.0 - learning_rate * options.lambda;
            if target * margin < 1.0 {
                let gain = learning_rate * target;
                for (wj, xj) in w.iter_mut().zip(row) {
                    *wj = *wj * decay + gain * xj;
                }
                w[dim] = w[dim] * decay + gain;
            } else {
                for wj in w.iter_mut() {
                    *wj *= decay;
                }
            }
            let norm_sq: f64 = w.iter().map(|v| v * v).sum();
            if norm_sq > radius_sq {
                let shrink = (radius_sq / norm_sq).sqrt();
                for wj in w.iter_mut() {
                    *wj *= shrink;
                }
            }
            for (sj, wj) in w_sum.iter_mut().zip(&w) {
                *sj += wj;
            }
        }
    }

    let total = step as f64;
    let bias = w_sum[dim] / total;
    w_sum.truncate(dim);
    let averaged = Array1::from(w_sum.into_iter().map(|v| v / total).collect::<Vec<_>>());
    (averaged, bias)
}

/// Class of the highest decision value; ties go to the lowest class id.
pub fn predict(model: &LinearModel, feature: ArrayView1<f64>) -> Result<usize> {
    let scores = model.scores(feature)?;
    let mut best = 0;
    for (class, &score) in scores.iter().enumerate() {
        if score > scores[best] {
            best = class;
        }
    }
    Ok(best)
}

/// Fraction of predictions matching the labels.
pub fn evaluate(model: &LinearModel, features: ArrayView2<f64>, labels: &[usize]) -> Result<f64> {
    if features.nrows() == 0 {
        return Err(HahnError::EmptyInput("evaluate features".into()));
    }
    if features.nrows() != labels.len() {
        return Err(HahnError::dims("evaluate labels", features.nrows(), labels.len()));
    }
    let mut correct = 0usize;
    for (row, &label) in features.rows().into_iter().zip(labels) {
        if predict(model, row)? == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / labels.len() as f64)
}

/// Per-class accuracies, indexed by class id; classes absent from the labels
/// report NaN.
pub fn per_class_accuracy(
    model: &LinearModel,
    features: ArrayView2<f64>,
    labels: &[usize],
) -> Result<Vec<f64>> {
    if features.nrows() != labels.len() {
        return Err(HahnError::dims("evaluate labels", features.nrows(), labels.len()));
    }
    let classes = model.classes();
    let mut correct = vec![0usize; classes];
    let mut totals = vec![0usize; classes];
    for (row, &label) in features.rows().into_iter().zip(labels) {
        if label < classes {
            totals[label] += 1;
            if predict(model, row)? == label {
                correct[label] += 1;
            }
        }
    }
    Ok((0..classes)
        .map(|c| {
            if totals[c] == 0 {
                f64::NAN
            } else {
                correct[c] as f64 / totals[c] as f64
            }
        })
        .collect())
}

/// Pick the regularization strength on a deterministic stratified 10%
/// holdout, then refit on everything with the winner. Returns the refit
/// model, the chosen lambda, and the holdout accuracy it reached.
pub fn fit_svm_tuned(
    features: ArrayView2<f64>,
    labels: &[usize],
    lambdas: &[f64],
    options: &SvmOptions,
) -> Result<(LinearModel, f64, f64)> {
    if lambdas.is_empty() {
        return Err(HahnError::EmptyInput("fit_svm_tuned lambdas".into()));
    }
    let samples = features.nrows();
    if samples < 20 {
        return Err(HahnError::InvalidConfig(
            "tuning needs at least 20 samples".into(),
        ));
    }
    // Stratified holdout: every 10th occurrence of each class.
    let mut seen = std::collections::HashMap::new();
    let mut holdout = Vec::new();
    let mut training = Vec::new();
    for (idx, &label) in labels.iter().enumerate() {
        let count = seen.entry(label).or_insert(0usize);
        if *count % 10 == 9 {
            holdout.push(idx);
        } else {
            training.push(idx);
        }
        *count += 1;
    }
    if holdout.is_empty() {
        return Err(HahnError::InvalidConfig("holdout came out empty".into()));
    }
    let take = |indices: &[usize]| {
        let mut m = Array2::<f64>::zeros((indices.len(), features.ncols()));
        let mut l = Vec::with_capacity(indices.len());
        for (row, &idx) in indices.iter().enumerate() {
            m.row_mut(row).assign(&features.row(idx));
            l.push(labels[idx]);
        }
        (m, l)
    };
    let (train_x, train_y) = take(&training);
    let (hold_x, hold_y) = take(&holdout);

    let mut best = (lambdas[0], f64::NEG_INFINITY);
    for &lambda in lambdas {
        let candidate = SvmOptions {
            lambda,
            ..options.clone()
        };
        let model = fit_svm(train_x.view(), &train_y, &candidate)?;
        let accuracy = evaluate(&model, hold_x.view(), &hold_y)?;
        if accuracy > best.1 {
            best = (lambda, accuracy);
        }
    }
    let final_options = SvmOptions {
        lambda: best.0,
        ..options.clone()
    };
    let model = fit_svm(features, labels, &final_options)?;
    Ok((model, best.0, best.1))
}
