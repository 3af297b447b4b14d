//! Hebbian/anti-Hebbian similarity-matching network kernel.
//!
//! A single layer of `m` neurons receives an `n`-dimensional input through a
//! feed-forward weight matrix and inhibits itself through nonnegative lateral
//! weights with a zero diagonal. Inference solves the rectified fixed point
//!
//! ```text
//! y_i = max(W_i . x - M_i . y, 0)
//! ```
//!
//! by cyclic coordinate descent, and learning applies recursive local updates
//! that keep each weight equal to a running correlation ratio of the activity
//! the network actually emitted. The closed-form ratios are available in
//! [`batch_weights_oracle`] for verification.

use ndarray::{Array1, Array2, ShapeBuilder};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{HahnError, Result};

/// Cumulative-activity floor used by [`NetworkState::init`]. Keeps the
/// denominator of the weight updates positive before a neuron first fires.
pub const DEFAULT_ACTIVITY_FLOOR: f64 = 1e-3;
/// Default sweep cap for coordinate descent during training.
pub const DEFAULT_TRAIN_SWEEPS: usize = 50;
/// Default sweep cap for coordinate descent with frozen weights.
pub const DEFAULT_INFER_SWEEPS: usize = 10;
/// Default max-absolute-change threshold that stops a descent early.
pub const DEFAULT_CD_TOLERANCE: f64 = 1e-6;

/// Static description of one network: sizes, descent budgets, and seed.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    /// Input dimension (receptive-field pixels times channels).
    pub input_dim: usize,
    /// Number of output neurons.
    pub neurons: usize,
    /// Max coordinate-descent sweeps per training step.
    pub train_sweeps: usize,
    /// Max coordinate-descent sweeps when encoding with frozen weights.
    pub infer_sweeps: usize,
    /// Stop a descent once the largest per-coordinate change in a full sweep
    /// falls below this value.
    pub cd_tolerance: f64,
    /// Seed for weight initialization.
    pub seed: u64,
}

impl NetworkConfig {
    pub fn new(input_dim: usize, neurons: usize) -> Self {
        NetworkConfig {
            input_dim,
            neurons,
            train_sweeps: DEFAULT_TRAIN_SWEEPS,
            infer_sweeps: DEFAULT_INFER_SWEEPS,
            cd_tolerance: DEFAULT_CD_TOLERANCE,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(HahnError::InvalidConfig("input_dim must be >= 1".into()));
        }
        if self.neurons == 0 {
            return Err(HahnError::InvalidConfig("neurons must be >= 1".into()));
        }
        if self.train_sweeps == 0 || self.infer_sweeps == 0 {
            return Err(HahnError::InvalidConfig("sweep caps must be >= 1".into()));
        }
        if !(self.cd_tolerance > 0.0) {
            return Err(HahnError::InvalidConfig(
                "cd_tolerance must be > 0".into(),
            ));
        }
        Ok(())
    }
}

/// An input vector. Entries are validated finite at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    values: Array1<f64>,
}

impl Patch {
    pub fn new(values: Array1<f64>) -> Result<Self> {
        if !values.iter().all(|v| v.is_finite()) {
            return Err(HahnError::NonFinite("patch".into()));
        }
        Ok(Patch { values })
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        Patch::new(Array1::from(values.to_vec()))
    }

    pub fn values(&self) -> &Array1<f64> {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// A nonnegative sparse output vector produced by coordinate descent.
#[derive(Debug, Clone, PartialEq)]
pub struct Code {
    values: Array1<f64>,
}

impl Code {
    pub fn new(values: Array1<f64>) -> Result<Self> {
        if !values.iter().all(|v| v.is_finite()) {
            return Err(HahnError::NonFinite("code".into()));
        }
        if values.iter().any(|&v| v < 0.0) {
            return Err(HahnError::InvalidConfig(
                "code entries must be nonnegative".into(),
            ));
        }
        Ok(Code { values })
    }

    /// Descent output is nonnegative by construction.
    fn from_descent(values: Array1<f64>) -> Self {
        Code { values }
    }

    pub fn values(&self) -> &Array1<f64> {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// The learnable synapses of one network plus its running statistics.
///
/// Sequential single-writer training; shared read-only inference is safe.
#[derive(Debug, Clone)]
pub struct NetworkState {
    config: NetworkConfig,
    /// Feed-forward weights, `neurons x input_dim`, row-major.
    feedforward: Array2<f64>,
    /// Lateral inhibitory weights, `neurons x neurons`, zero diagonal.
    /// Column-major so the incremental descent can stream columns.
    lateral: Array2<f64>,
    /// Cumulative squared activity per neuron.
    activity: Array1<f64>,
    /// Training samples consumed.
    samples_seen: u64,
}

impl NetworkState {
    /// Fresh state: feed-forward rows are unit-norm Gaussian, lateral weights
    /// zero, activity at [`DEFAULT_ACTIVITY_FLOOR`]. Deterministic in the seed.
    pub fn init(config: &NetworkConfig) -> Result<Self> {
        Self::init_with_activity_floor(config, DEFAULT_ACTIVITY_FLOOR)
    }

    /// Like [`init`](Self::init) but with an explicit activity floor. A floor
    /// of zero makes the recursive updates reproduce the closed-form ratios
    /// exactly (rows are skipped until their neuron first fires), which the
    /// equivalence tests rely on.
    pub fn init_with_activity_floor(config: &NetworkConfig, floor: f64) -> Result<Self> {
        config.validate()?;
        if !(floor >= 0.0) {
            return Err(HahnError::InvalidConfig(
                "activity floor must be >= 0".into(),
            ));
        }
        let (m, n) = (config.neurons, config.input_dim);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut feedforward = Array2::<f64>::zeros((m, n));
        for mut row in feedforward.rows_mut() {
            loop {
                for w in row.iter_mut() {
                    *w = rng.sample(StandardNormal);
                }
                let norm = row.iter().map(|w| w * w).sum::<f64>().sqrt();
                if norm > 1e-12 {
                    row.mapv_inplace(|w| w / norm);
                    break;
                }
            }
        }
        Ok(NetworkState {
            config: config.clone(),
            feedforward,
            lateral: Array2::zeros((m, m).f()),
            activity: Array1::from_elem(m, floor),
            samples_seen: 0,
        })
    }

    /// Rebuild a state from raw parts, validating every structural invariant.
    /// Used when deserializing.
    pub fn from_parts(
        config: NetworkConfig,
        feedforward: Array2<f64>,
        lateral: Array2<f64>,
        activity: Array1<f64>,
        samples_seen: u64,
    ) -> Result<Self> {
        config.validate()?;
        let (m, n) = (config.neurons, config.input_dim);
        if feedforward.dim() != (m, n) {
            return Err(HahnError::dims(
                "feed-forward matrix rows",
                m,
                feedforward.dim().0,
            ));
        }
        if lateral.dim() != (m, m) {
            return Err(HahnError::dims("lateral matrix rows", m, lateral.dim().0));
        }
        if activity.len() != m {
            return Err(HahnError::dims("activity vector", m, activity.len()));
        }
        if (0..m).any(|i| lateral[[i, i]] != 0.0) {
            return Err(HahnError::InvalidConfig(
                "lateral matrix must have a zero diagonal".into(),
            ));
        }
        if activity.iter().any(|&a| !(a >= 0.0)) {
            return Err(HahnError::InvalidConfig(
                "activity entries must be nonnegative".into(),
            ));
        }
        // Re-pack the lateral matrix column-major regardless of how the
        // caller built it.
        let mut packed = Array2::zeros((m, m).f());
        packed.assign(&lateral);
        Ok(NetworkState {
            config,
            feedforward,
            lateral: packed,
            activity,
            samples_seen,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn input_dim(&self) -> usize {
        self.config.input_dim
    }

    pub fn neurons(&self) -> usize {
        self.config.neurons
    }

    pub fn feedforward(&self) -> &Array2<f64> {
        &self.feedforward
    }

    pub fn lateral(&self) -> &Array2<f64> {
        &self.lateral
    }

    pub fn cumulative_activity(&self) -> &Array1<f64> {
        &self.activity
    }

    pub fn samples_seen(&self) -> u64 {
        self.samples_seen
    }

    /// Cyclic coordinate descent from `y = 0`: repeatedly set
    /// `y_i <- max(W_i . x - M_i . y, 0)` in index order, stopping after
    /// `sweeps` full sweeps or once the largest per-coordinate change in a
    /// sweep drops below `tol`. The weights are frozen for the call.
    pub fn infer(&self, x: &Patch, sweeps: usize, tol: f64) -> Result<Code> {
        if x.len() != self.config.input_dim {
            return Err(HahnError::dims("infer input", self.config.input_dim, x.len()));
        }
        let drive = self.feedforward.dot(x.values());
        let mut y = vec![0.0; self.config.neurons];
        let mut inhibition = vec![0.0; self.config.neurons];
        self.descend(
            drive.as_slice().expect("contiguous"),
            sweeps,
            tol,
            &mut y,
            &mut inhibition,
        );
        Ok(Code::from_descent(Array1::from(y)))
    }

    /// Descent core shared by [`infer`](Self::infer) and the batched encoder:
    /// `drive` holds the precomputed feed-forward input `W . x`. The running
    /// lateral input `M . y` is maintained incrementally, so a sweep costs
    /// O(neurons) plus O(neurons) per coordinate that actually moved.
    pub(crate) fn descend(
        &self,
        drive: &[f64],
        sweeps: usize,
        tol: f64,
        y: &mut [f64],
        inhibition: &mut [f64],
    ) {
        let m = self.config.neurons;
        debug_assert_eq!(drive.len(), m);
        y.fill(0.0);
        inhibition.fill(0.0);
        for _ in 0..sweeps {
            let mut max_change = 0.0f64;
            for i in 0..m {
                let target = drive[i] - inhibition[i];
                let updated = if target > 0.0 { target } else { 0.0 };
                let change = updated - y[i];
                if change != 0.0 {
                    y[i] = updated;
                    // Lateral diagonal is zero, so inhibition[i] is untouched.
                    let column = self.lateral.column(i);
                    let column = column.as_slice().expect("column-major lateral");
                    for (acc, &w) in inhibition.iter_mut().zip(column) {
                        *acc += w * change;
                    }
                    let magnitude = change.abs();
                    if magnitude > max_change {
                        max_change = magnitude;
                    }
                }
            }
            if max_change < tol {
                break;
            }
        }
    }

    /// Encode with frozen weights using the configured inference budget.
    pub fn encode(&self, x: &Patch) -> Result<Code> {
        self.infer(x, self.config.infer_sweeps, self.config.cd_tolerance)
    }

    /// One online learning step: infer a code with the training budget, add
    /// its square to the cumulative activity, then update the feed-forward
    /// and lateral rows of every neuron that fired. The activity update runs
    /// first; the weight updates divide by the new activity and read the old
    /// weights. Rows whose neuron stayed silent are untouched, which also
    /// covers the zero-floor mode where the denominator may still be zero.
    pub fn train_step(&mut self, x: &Patch) -> Result<Code> {
        let code = self.infer(x, self.config.train_sweeps, self.config.cd_tolerance)?;
        let y = code.values();
        let m = self.config.neurons;

        for i in 0..m {
            self.activity[i] += y[i] * y[i];
        }

        let xs = x.values().as_slice().expect("contiguous");
        for i in 0..m {
            let yi = y[i];
            if yi == 0.0 {
                continue;
            }
            let rate = yi / self.activity[i];
            let mut row = self.feedforward.row_mut(i);
            let row = row.as_slice_mut().expect("row-major feed-forward");
            for (w, &xj) in row.iter_mut().zip(xs) {
                *w += rate * (xj - *w * yi);
            }
            for j in 0..m {
                if j == i {
                    continue;
                }
                let w = self.lateral[[i, j]];
                self.lateral[[i, j]] = w + rate * (y[j] - w * yi);
            }
        }

        self.samples_seen += 1;
        Ok(code)
    }
}

/// Closed-form weights from a full activity history:
/// `W_ij = sum_t y_i x_j / sum_t y_i^2` and
/// `M_ij = sum_t y_i y_j / sum_t y_i^2` with a zero diagonal.
/// Verification companion to the recursive updates; errors if any neuron
/// never fired (the ratio is undefined).
pub fn batch_weights_oracle(
    codes: &[Code],
    patches: &[Patch],
) -> Result<(Array2<f64>, Array2<f64>)> {
    if codes.is_empty() || patches.is_empty() {
        return Err(HahnError::EmptyInput("batch_weights_oracle".into()));
    }
    if codes.len() != patches.len() {
        return Err(HahnError::dims(
            "batch_weights_oracle histories",
            patches.len(),
            codes.len(),
        ));
    }
    let m = codes[0].len();
    let n = patches[0].len();
    let mut ff_num = Array2::<f64>::zeros((m, n));
    let mut lat_num = Array2::<f64>::zeros((m, m));
    let mut denom = Array1::<f64>::zeros(m);
    for (code, patch) in codes.iter().zip(patches) {
        if code.len() != m {
            return Err(HahnError::dims("oracle code", m, code.len()));
        }
        if patch.len() != n {
            return Err(HahnError::dims("oracle patch", n, patch.len()));
        }
        let y = code.values();
        let x = patch.values();
        for i in 0..m {
            let yi = y[i];
            if yi == 0.0 {
                continue;
            }
            denom[i] += yi * yi;
            for j in 0..n {
                ff_num[[i, j]] += yi * x[j];
            }
            for j in 0..m {
                lat_num[[i, j]] += yi * y[j];
            }
        }
    }
    if let Some(i) = denom.iter().position(|&d| d == 0.0) {
        return Err(HahnError::ZeroActivity(i));
    }
    let mut feedforward = ff_num;
    let mut lateral = lat_num;
    for i in 0..m {
        let d = denom[i];
        feedforward.row_mut(i).mapv_inplace(|v| v / d);
        lateral.row_mut(i).mapv_inplace(|v| v / d);
        lateral[[i, i]] = 0.0;
    }
    Ok((feedforward, lateral))
}

/// Squared Frobenius norm of the Gram-matrix mismatch `X'X - Y'Y` between an
/// `n x T` input matrix and an `m x T` output matrix. Test-side objective.
pub fn global_objective(inputs: &Array2<f64>, outputs: &Array2<f64>) -> Result<f64> {
    if inputs.ncols() != outputs.ncols() {
        return Err(HahnError::dims(
            "global_objective columns",
            inputs.ncols(),
            outputs.ncols(),
        ));
    }
    let gram_in = inputs.t().dot(inputs);
    let gram_out = outputs.t().dot(outputs);
    Ok((&gram_in - &gram_out).iter().map(|d| d * d).sum())
}
