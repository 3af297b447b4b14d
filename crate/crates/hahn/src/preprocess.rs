//! Patch sampling, per-patch normalization, and ZCA whitening.
//!
//! Patches are flattened channel-major, then row, then column, so a CIFAR
//! image crop keeps its native plane order. Normalization removes the patch
//! mean and divides by a floored standard deviation; whitening is the
//! symmetric transform `U (D + eps I)^(-1/2) U'` fitted on normalized patches.

use ndarray::{Array1, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{HahnError, Result};
use crate::network::Patch;

/// Default variance floor for per-patch normalization on the 0-255 pixel
/// scale. Layer-2 inputs live on the code scale and need a much smaller one.
pub const DEFAULT_VAR_FLOOR: f64 = 10.0;
/// Default whitening regularizer on the normalized-patch scale.
pub const DEFAULT_WHITEN_EPSILON: f64 = 0.1;

/// A planar multi-channel image with `f64` samples, laid out
/// `(channel, row, column)`.
#[derive(Debug, Clone)]
pub struct Image {
    data: Array3<f64>,
}

impl Image {
    pub fn new(data: Array3<f64>) -> Result<Self> {
        if !data.iter().all(|v| v.is_finite()) {
            return Err(HahnError::NonFinite("image".into()));
        }
        Ok(Image { data })
    }

    pub fn channels(&self) -> usize {
        self.data.dim().0
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    /// Flatten the `rf x rf` window at `(top, left)` channel-major.
    pub fn extract_patch(&self, top: usize, left: usize, rf: usize) -> Result<Patch> {
        let (c, h, w) = self.data.dim();
        if top + rf > h || left + rf > w {
            return Err(HahnError::dims(
                "patch window",
                h.min(w),
                (top + rf).max(left + rf),
            ));
        }
        let mut values = Vec::with_capacity(c * rf * rf);
        for ch in 0..c {
            for r in 0..rf {
                for col in 0..rf {
                    values.push(self.data[[ch, top + r, left + col]]);
                }
            }
        }
        Patch::new(Array1::from(values))
    }
}

/// Uniform random patch positions over an image set. Deterministic in the
/// seed; the stride policy is random placement, not a grid.
#[derive(Debug, Clone)]
pub struct PatchSampler {
    pub receptive_field: usize,
    pub channels: usize,
    pub seed: u64,
}

/// Draw `count` patches, each from a uniformly random image and position.
pub fn sample_patches(images: &[Image], sampler: &PatchSampler, count: usize) -> Result<Vec<Patch>> {
    let positions = sample_positions(images, sampler, count)?;
    positions
        .iter()
        .map(|&(img, top, left)| images[img].extract_patch(top, left, sampler.receptive_field))
        .collect()
}

/// The position stream behind [`sample_patches`], exposed so pipelines can
/// group extraction by image without changing the sampled order.
pub fn sample_positions(
    images: &[Image],
    sampler: &PatchSampler,
    count: usize,
) -> Result<Vec<(usize, usize, usize)>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    if images.is_empty() {
        return Err(HahnError::EmptyInput("sample_patches images".into()));
    }
    let rf = sampler.receptive_field;
    if rf == 0 {
        return Err(HahnError::InvalidConfig("receptive field must be >= 1".into()));
    }
    for img in images {
        if img.channels() != sampler.channels {
            return Err(HahnError::dims("sampler channels", sampler.channels, img.channels()));
        }
        if rf > img.height() || rf > img.width() {
            return Err(HahnError::dims(
                "receptive field vs image side",
                img.height().min(img.width()),
                rf,
            ));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(sampler.seed);
    let mut positions = Vec::with_capacity(count);
    for _ in 0..count {
        let img = rng.random_range(0..images.len());
        let top = rng.random_range(0..=images[img].height() - rf);
        let left = rng.random_range(0..=images[img].width() - rf);
        positions.push((img, top, left));
    }
    Ok(positions)
}

/// Remove the patch mean and divide by `sqrt(population variance + floor)`.
/// The floor keeps constant patches finite and damps near-constant ones.
pub fn normalize_patch(x: &Patch, var_floor: f64) -> Patch {
    let values = x.values();
    let n = values.len() as f64;
    let mean = values.sum() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let scale = 1.0 / (var + var_floor).sqrt();
    let normalized = values.mapv(|v| (v - mean) * scale);
    Patch::new(normalized).expect("finite by construction")
}

/// Affine decorrelating transform fitted on a patch sample: subtract the
/// sample mean, multiply by the symmetric matrix `U (D + eps I)^(-1/2) U'`.
#[derive(Debug, Clone)]
pub struct WhiteningTransform {
    mean: Array1<f64>,
    transform: Array2<f64>,
    epsilon: f64,
}

impl WhiteningTransform {
    /// Validates dimensions and symmetry (the ZCA form is symmetric).
    pub fn new(mean: Array1<f64>, transform: Array2<f64>, epsilon: f64) -> Result<Self> {
        let n = mean.len();
        if transform.dim() != (n, n) {
            return Err(HahnError::dims("whitening transform", n, transform.dim().0));
        }
        let asym = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .map(|(i, j)| (transform[[i, j]] - transform[[j, i]]).abs())
            .fold(0.0f64, f64::max);
        if asym > 1e-9 {
            return Err(HahnError::InvalidConfig(format!(
                "whitening transform asymmetric by {asym:e}"
            )));
        }
        Ok(WhiteningTransform {
            mean,
            transform,
            epsilon,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &Array1<f64> {
        &self.mean
    }

    pub fn transform(&self) -> &Array2<f64> {
        &self.transform
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// `transform . (x - mean)`.
    pub fn apply(&self, x: &Patch) -> Result<Patch> {
        if x.len() != self.dim() {
            return Err(HahnError::dims("whitening input", self.dim(), x.len()));
        }
        let centered = x.values() - &self.mean;
        Patch::new(self.transform.dot(&centered))
    }
}

/// Fit the ZCA transform on normalized patches: sample mean, sample
/// covariance (N-1 normalization), eigendecomposition, then
/// `U (D + eps I)^(-1/2) U'` symmetrized against rounding.
pub fn fit_whitening(patches: &[Patch], epsilon: f64) -> Result<WhiteningTransform> {
    if patches.len() < 2 {
        return Err(HahnError::EmptyInput(
            "fit_whitening needs at least 2 patches".into(),
        ));
    }
    if !(epsilon >= 0.0) {
        return Err(HahnError::InvalidConfig("whitening epsilon must be >= 0".into()));
    }
    let n = patches[0].len();
    let count = patches.len();
    let mut mean = Array1::<f64>::zeros(n);
    for p in patches {
        if p.len() != n {
            return Err(HahnError::dims("fit_whitening patch", n, p.len()));
        }
        mean += p.values();
    }
    mean /= count as f64;

    // Centered data matrix, samples as rows; covariance via one GEMM.
    let mut centered = Array2::<f64>::zeros((count, n));
    for (mut row, p) in centered.rows_mut().into_iter().zip(patches) {
        row.assign(&(p.values() - &mean));
    }
    let covariance = centered.t().dot(&centered) / (count as f64 - 1.0);

    let transform = zca_from_covariance(&covariance, epsilon);
    WhiteningTransform::new(mean, transform, epsilon)
}

/// `U (D + eps I)^(-1/2) U'` for a symmetric PSD matrix; tiny negative
/// eigenvalues from rounding are clamped to zero.
fn zca_from_covariance(covariance: &Array2<f64>, epsilon: f64) -> Array2<f64> {
    let n = covariance.nrows();
    let sym = nalgebra::DMatrix::from_fn(n, n, |i, j| covariance[[i, j]]);
    let eigen = sym.symmetric_eigen();
    let scales: Vec<f64> = eigen
        .eigenvalues
        .iter()
        .map(|&l| 1.0 / (l.max(0.0) + epsilon).sqrt())
        .collect();
    let u = &eigen.eigenvectors;
    let mut transform = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut acc = 0.0;
            for k in 0..n {
                acc += u[(i, k)] * scales[k] * u[(j, k)];
            }
            transform[[i, j]] = acc;
            transform[[j, i]] = acc;
        }
    }
    transform
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Patch;
    use rand_distr::StandardNormal;

    fn constant_image(channels: usize, side: usize, value: f64) -> Image {
        Image::new(Array3::from_elem((channels, side, side), value)).unwrap()
    }

    fn gaussian_patches(n: usize, count: usize, seed: u64) -> Vec<Patch> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
                Patch::from_slice(&v).unwrap()
            })
            .collect()
    }

    // Test-side eigensolver: classic cyclic Jacobi rotations, independent of
    // the nalgebra route used by the implementation.
    fn jacobi_eigh(matrix: &Array2<f64>) -> (Vec<f64>, Array2<f64>) {
        let n = matrix.nrows();
        let mut a = matrix.clone();
        let mut v = Array2::<f64>::eye(n);
        for _ in 0..100 {
            let mut off = 0.0;
            for i in 0..n {
                for j in (i + 1)..n {
                    off += a[[i, j]] * a[[i, j]];
                }
            }
            if off < 1e-24 {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    if a[[p, q]].abs() < 1e-18 {
                        continue;
                    }
                    let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * a[[p, q]]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[[k, p]];
                        let akq = a[[k, q]];
                        a[[k, p]] = c * akp - s * akq;
                        a[[k, q]] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[[p, k]];
                        let aqk = a[[q, k]];
                        a[[p, k]] = c * apk - s * aqk;
                        a[[q, k]] = s * apk + c * aqk;
                    }
                    for k in 0..n {
                        let vkp = v[[k, p]];
                        let vkq = v[[k, q]];
                        v[[k, p]] = c * vkp - s * vkq;
                        v[[k, q]] = s * vkp + c * vkq;
                    }
                }
            }
        }
        ((0..n).map(|i| a[[i, i]]).collect(), v)
    }

    fn double_loop_covariance(patches: &[Patch]) -> (Array1<f64>, Array2<f64>) {
        let n = patches[0].len();
        let count = patches.len();
        let mut mean = Array1::<f64>::zeros(n);
        for p in patches {
            for j in 0..n {
                mean[j] += p.values()[j];
            }
        }
        mean /= count as f64;
        let mut cov = Array2::<f64>::zeros((n, n));
        for p in patches {
            for i in 0..n {
                for j in 0..n {
                    cov[[i, j]] += (p.values()[i] - mean[i]) * (p.values()[j] - mean[j]);
                }
            }
        }
        cov /= count as f64 - 1.0;
        (mean, cov)
    }

    #[test]
    fn extract_patch_is_channel_major() {
        let mut data = Array3::zeros((2, 3, 3));
        for ch in 0..2 {
            for r in 0..3 {
                for c in 0..3 {
                    data[[ch, r, c]] = (100 * ch + 10 * r + c) as f64;
                }
            }
        }
        let image = Image::new(data).unwrap();
        let patch = image.extract_patch(1, 0, 2).unwrap();
        let expected = [10.0, 11.0, 20.0, 21.0, 110.0, 111.0, 120.0, 121.0];
        assert_eq!(patch.values().as_slice().unwrap(), &expected);
    }

    #[test]
    fn sample_patches_zero_count_is_empty() {
        let images = vec![constant_image(1, 4, 1.0)];
        let sampler = PatchSampler {
            receptive_field: 2,
            channels: 1,
            seed: 0,
        };
        assert!(sample_patches(&images, &sampler, 0).unwrap().is_empty());
    }

    #[test]
    fn single_pixel_patches_come_from_the_images() {
        let images = vec![constant_image(1, 4, 3.5), constant_image(1, 4, -1.25)];
        let sampler = PatchSampler {
            receptive_field: 1,
            channels: 1,
            seed: 9,
        };
        let patches = sample_patches(&images, &sampler, 50).unwrap();
        for p in &patches {
            let v = p.values()[0];
            assert!(v == 3.5 || v == -1.25);
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let images: Vec<Image> = (0..10)
            .map(|_| {
                let data = Array3::from_shape_fn((1, 8, 8), |_| rng.sample(StandardNormal));
                Image::new(data).unwrap()
            })
            .collect();
        let sampler = PatchSampler {
            receptive_field: 3,
            channels: 1,
            seed: 77,
        };
        let a = sample_patches(&images, &sampler, 1000).unwrap();
        let b = sample_patches(&images, &sampler, 1000).unwrap();
        for (pa, pb) in a.iter().zip(&b) {
            assert_eq!(pa.values(), pb.values());
        }
    }

    #[test]
    fn oversized_receptive_field_is_rejected() {
        let images = vec![constant_image(1, 4, 0.0)];
        let sampler = PatchSampler {
            receptive_field: 5,
            channels: 1,
            seed: 0,
        };
        assert!(sample_patches(&images, &sampler, 1).is_err());
    }

    #[test]
    fn normalize_constant_patch_is_zero() {
        let p = Patch::from_slice(&[7.0; 6]).unwrap();
        let out = normalize_patch(&p, DEFAULT_VAR_FLOOR);
        assert!(out.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn normalize_output_mean_is_zero() {
        let patches = gaussian_patches(12, 20, 5);
        for p in patches {
            let out = normalize_patch(&p, DEFAULT_VAR_FLOOR);
            let mean = out.values().sum() / out.len() as f64;
            assert!(mean.abs() < 1e-12);
        }
    }

    #[test]
    fn normalize_two_point_patch_is_symmetric() {
        let p = Patch::from_slice(&[0.0, 255.0]).unwrap();
        let out = normalize_patch(&p, DEFAULT_VAR_FLOOR);
        assert!((out.values()[0] + out.values()[1]).abs() < 1e-12);
        assert!(out.values()[1] > 0.0);
    }

    #[test]
    fn normalize_is_idempotent_when_variance_dominates_the_floor() {
        // Unit-variance output normalized again with a tiny floor stays put.
        let p = Patch::from_slice(&[0.0, 100.0, 200.0, 300.0]).unwrap();
        let floor = 1e-9;
        let once = normalize_patch(&p, floor);
        let twice = normalize_patch(&once, floor);
        for (a, b) in once.values().iter().zip(twice.values()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn whitening_identical_patches_is_rejected_early() {
        assert!(fit_whitening(&gaussian_patches(3, 1, 0), 0.1).is_err());
    }

    #[test]
    fn whitening_maps_identical_patches_to_zero() {
        let p = Patch::from_slice(&[1.0, -2.0, 0.5]).unwrap();
        let wt = fit_whitening(&[p.clone(), p.clone(), p.clone()], 0.1).unwrap();
        let out = wt.apply(&p).unwrap();
        assert!(out.values().iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn whitening_identity_covariance_gives_identity_transform() {
        // Orthonormal two-point construction with exactly identity sample
        // covariance: +/- the standard basis, scaled.
        let n = 4;
        let mut patches = Vec::new();
        let scale = ((2 * n - 1) as f64 / 2.0).sqrt();
        for i in 0..n {
            let mut plus = vec![0.0; n];
            plus[i] = scale;
            let mut minus = vec![0.0; n];
            minus[i] = -scale;
            patches.push(Patch::from_slice(&plus).unwrap());
            patches.push(Patch::from_slice(&minus).unwrap());
        }
        let wt = fit_whitening(&patches, 0.0).unwrap();
        for i in 0..n {
            for j in 0..n {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!(
                    (wt.transform()[[i, j]] - expected).abs() < 1e-6,
                    "entry ({i},{j}) = {}",
                    wt.transform()[[i, j]]
                );
            }
        }
    }

    #[test]
    fn whitened_covariance_matches_the_shrunk_spectrum() {
        // Independent route: double-loop covariance and a Jacobi
        // eigendecomposition, against the fitted transform's output.
        let patches = gaussian_patches(4, 500, 13);
        let epsilon = 0.1;
        let wt = fit_whitening(&patches, epsilon).unwrap();
        let whitened: Vec<Patch> = patches.iter().map(|p| wt.apply(p).unwrap()).collect();
        let (_, cov_white) = double_loop_covariance(&whitened);

        let (_, cov_raw) = double_loop_covariance(&patches);
        let (eigenvalues, u) = jacobi_eigh(&cov_raw);
        let n = 4;
        let mut expected = Array2::<f64>::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += u[[i, k]] * (eigenvalues[k] / (eigenvalues[k] + epsilon)) * u[[j, k]];
                }
                expected[[i, j]] = acc;
            }
        }
        let frobenius = (&cov_white - &expected)
            .iter()
            .map(|d| d * d)
            .sum::<f64>()
            .sqrt();
        assert!(frobenius < 1e-8, "Frobenius distance {frobenius}");
    }

    #[test]
    fn whitened_training_set_has_zero_mean() {
        let patches = gaussian_patches(5, 300, 21);
        let wt = fit_whitening(&patches, 0.05).unwrap();
        let mut mean = Array1::<f64>::zeros(5);
        for p in &patches {
            mean += wt.apply(p).unwrap().values();
        }
        mean /= 300.0;
        assert!(mean.iter().all(|&v| v.abs() < 1e-10));
    }

    #[test]
    fn apply_is_affine() {
        let patches = gaussian_patches(3, 50, 2);
        let wt = fit_whitening(&patches, 0.1).unwrap();
        // apply(mean) = 0
        let at_mean = wt.apply(&Patch::new(wt.mean().clone()).unwrap()).unwrap();
        assert!(at_mean.values().iter().all(|&v| v.abs() < 1e-12));
        // Linearity around the mean: apply(mean + a(u - mean) + b(v - mean))
        // = a apply(u) + b apply(v).
        let (a, b) = (0.7, -1.3);
        let u = &patches[0];
        let v = &patches[1];
        let combined = Patch::new(
            wt.mean() + &(a * (u.values() - wt.mean())) + &(b * (v.values() - wt.mean())),
        )
        .unwrap();
        let lhs = wt.apply(&combined).unwrap();
        let rhs = a * wt.apply(u).unwrap().values() + b * wt.apply(v).unwrap().values();
        for (l, r) in lhs.values().iter().zip(rhs.iter()) {
            assert!((l - r).abs() < 1e-12);
        }
    }

    #[test]
    fn apply_rejects_dimension_mismatch() {
        let patches = gaussian_patches(3, 10, 0);
        let wt = fit_whitening(&patches, 0.1).unwrap();
        assert!(wt.apply(&Patch::from_slice(&[1.0, 2.0]).unwrap()).is_err());
    }

    #[test]
    fn transform_is_symmetric() {
        let patches = gaussian_patches(6, 200, 31);
        let wt = fit_whitening(&patches, 0.01).unwrap();
        let t = wt.transform();
        for i in 0..6 {
            for j in 0..6 {
                assert!((t[[i, j]] - t[[j, i]]).abs() < 1e-9);
            }
        }
    }
}
