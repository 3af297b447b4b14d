//! Sliding-window image encoding and spatial pooling.
//!
//! Every stride-1 window of an image is normalized, optionally whitened, and
//! pushed through a frozen network; the codes form a feature map. Feature
//! maps are summarized by quadrant average pooling for the classifier, or
//! downsampled by 2x2 average pooling on the way into a second layer.

use ndarray::{Array1, Array2, Array3, Axis};

use crate::error::{HahnError, Result};
use crate::network::{NetworkConfig, NetworkState};
use crate::preprocess::{
    fit_whitening, normalize_patch, sample_patches, Image, PatchSampler, WhiteningTransform,
};

/// A spatial grid of nonnegative codes, laid out `(row, column, neuron)`.
#[derive(Debug, Clone)]
pub struct FeatureMap {
    data: Array3<f64>,
}

impl FeatureMap {
    pub fn new(data: Array3<f64>) -> Result<Self> {
        if !data.iter().all(|v| v.is_finite()) {
            return Err(HahnError::NonFinite("feature map".into()));
        }
        if data.iter().any(|&v| v < 0.0) {
            return Err(HahnError::InvalidConfig(
                "feature map entries must be nonnegative".into(),
            ));
        }
        Ok(FeatureMap { data })
    }

    pub fn height(&self) -> usize {
        self.data.dim().0
    }

    pub fn width(&self) -> usize {
        self.data.dim().1
    }

    pub fn depth(&self) -> usize {
        self.data.dim().2
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    /// Reinterpret the map as a planar image so it can feed another layer.
    pub fn to_image(&self) -> Image {
        let (h, w, d) = self.data.dim();
        let mut planes = Array3::zeros((d, h, w));
        for r in 0..h {
            for c in 0..w {
                for k in 0..d {
                    planes[[k, r, c]] = self.data[[r, c, k]];
                }
            }
        }
        Image::new(planes).expect("finite by construction")
    }
}

/// Encode one image with frozen weights: for every valid stride-1 window,
/// normalize, whiten when a transform is given, and run coordinate descent
/// with the state's inference budget. Output side is `image side - rf + 1`.
///
/// Pure in the state, so callers may fan images out across threads.
pub fn encode_image(
    state: &NetworkState,
    whitening: Option<&WhiteningTransform>,
    image: &Image,
    rf: usize,
    var_floor: f64,
) -> Result<FeatureMap> {
    let (channels, height, width) = image.data().dim();
    if rf == 0 {
        return Err(HahnError::InvalidConfig("receptive field must be >= 1".into()));
    }
    if rf > height || rf > width {
        return Err(HahnError::dims(
            "receptive field vs image side",
            height.min(width),
            rf,
        ));
    }
    let n = rf * rf * channels;
    if state.input_dim() != n {
        return Err(HahnError::dims("encoder input dimension", state.input_dim(), n));
    }
    if let Some(wt) = whitening {
        if wt.dim() != n {
            return Err(HahnError::dims("whitening dimension", n, wt.dim()));
        }
    }

    let out_h = height - rf + 1;
    let out_w = width - rf + 1;
    let windows = out_h * out_w;

    // All windows as columns, so whitening and the feed-forward projection
    // run as two matrix products over the whole image.
    let mut columns = Array2::<f64>::zeros((n, windows));
    for top in 0..out_h {
        for left in 0..out_w {
            let patch = image.extract_patch(top, left, rf)?;
            let normalized = normalize_patch(&patch, var_floor);
            columns
                .column_mut(top * out_w + left)
                .assign(normalized.values());
        }
    }
    let drive = match whitening {
        Some(wt) => {
            let centered = &columns - &wt.mean().view().insert_axis(Axis(1));
            state.feedforward().dot(&wt.transform().dot(&centered))
        }
        None => state.feedforward().dot(&columns),
    };

    let m = state.neurons();
    let sweeps = state.config().infer_sweeps;
    let tol = state.config().cd_tolerance;
    let mut map = Array3::<f64>::zeros((out_h, out_w, m));
    let mut window_drive = vec![0.0; m];
    let mut code = vec![0.0; m];
    let mut inhibition = vec![0.0; m];
    for idx in 0..windows {
        for i in 0..m {
            window_drive[i] = drive[[i, idx]];
        }
        state.descend(&window_drive, sweeps, tol, &mut code, &mut inhibition);
        let (r, c) = (idx / out_w, idx % out_w);
        for i in 0..m {
            map[[r, c, i]] = code[i];
        }
    }
    Ok(FeatureMap { data: map })
}

/// Average each channel over the four spatial quadrants and concatenate
/// quadrant-major (top-left, top-right, bottom-left, bottom-right). With an
/// odd side the split index is `floor(side / 2)`, so the bottom/right
/// quadrants take the extra row/column.
pub fn quadrant_pool(map: &FeatureMap) -> Result<Array1<f64>> {
    let (h, w, d) = map.data.dim();
    if h < 2 || w < 2 {
        return Err(HahnError::dims("quadrant_pool map side", 2, h.min(w)));
    }
    let (split_r, split_c) = (h / 2, w / 2);
    let bounds = [
        (0, split_r, 0, split_c),
        (0, split_r, split_c, w),
        (split_r, h, 0, split_c),
        (split_r, h, split_c, w),
    ];
    let mut pooled = Array1::<f64>::zeros(4 * d);
    for (q, &(r0, r1, c0, c1)) in bounds.iter().enumerate() {
        let cells = ((r1 - r0) * (c1 - c0)) as f64;
        for k in 0..d {
            let mut acc = 0.0;
            for r in r0..r1 {
                for c in c0..c1 {
                    acc += map.data[[r, c, k]];
                }
            }
            pooled[q * d + k] = acc / cells;
        }
    }
    Ok(pooled)
}

/// Non-overlapping 2x2 average pooling per channel; a trailing odd row or
/// column is dropped.
pub fn avg_pool_2x2(map: &FeatureMap) -> Result<FeatureMap> {
    let (h, w, d) = map.data.dim();
    if h < 2 || w < 2 {
        return Err(HahnError::dims("avg_pool_2x2 map side", 2, h.min(w)));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Array3::<f64>::zeros((oh, ow, d));
    for r in 0..oh {
        for c in 0..ow {
            for k in 0..d {
                out[[r, c, k]] = 0.25
                    * (map.data[[2 * r, 2 * c, k]]
                        + map.data[[2 * r, 2 * c + 1, k]]
                        + map.data[[2 * r + 1, 2 * c, k]]
                        + map.data[[2 * r + 1, 2 * c + 1, k]]);
            }
        }
    }
    Ok(FeatureMap { data: out })
}

/// How to build one layer: window size, network shape, and preprocessing.
#[derive(Debug, Clone)]
pub struct LayerSpec {
    pub receptive_field: usize,
    pub network: NetworkConfig,
    pub whiten: bool,
    pub whiten_epsilon: f64,
    pub var_floor: f64,
}

impl LayerSpec {
    /// Spec with the network input dimension derived from the window size.
    pub fn for_input(receptive_field: usize, channels: usize, neurons: usize) -> Self {
        LayerSpec {
            receptive_field,
            network: NetworkConfig::new(receptive_field * receptive_field * channels, neurons),
            whiten: true,
            whiten_epsilon: crate::preprocess::DEFAULT_WHITEN_EPSILON,
            var_floor: crate::preprocess::DEFAULT_VAR_FLOOR,
        }
    }
}

/// A trained layer: frozen network plus the preprocessing fitted with it.
#[derive(Debug, Clone)]
pub struct TrainedLayer {
    pub receptive_field: usize,
    pub state: NetworkState,
    pub whitening: Option<WhiteningTransform>,
    pub var_floor: f64,
}

impl TrainedLayer {
    /// Encode an image with this layer's window size and preprocessing.
    pub fn encode(&self, image: &Image) -> Result<FeatureMap> {
        encode_image(
            &self.state,
            self.whitening.as_ref(),
            image,
            self.receptive_field,
            self.var_floor,
        )
    }
}

/// Train one layer from scratch: sample `patch_count` random windows,
/// normalize them, fit whitening on the sample when enabled, then run one
/// online learning step per patch in the sampled order. Deterministic in
/// `seed` (sampling) and `spec.network.seed` (initialization).
pub fn train_layer(
    images: &[Image],
    spec: &LayerSpec,
    patch_count: usize,
    seed: u64,
) -> Result<TrainedLayer> {
    if patch_count < 2 {
        return Err(HahnError::InvalidConfig(
            "patch_count must be >= 2 to fit preprocessing".into(),
        ));
    }
    if images.is_empty() {
        return Err(HahnError::EmptyInput("train_layer images".into()));
    }
    let channels = images[0].channels();
    let expected_dim = spec.receptive_field * spec.receptive_field * channels;
    if spec.network.input_dim != expected_dim {
        return Err(HahnError::dims(
            "layer input dimension",
            expected_dim,
            spec.network.input_dim,
        ));
    }
    let sampler = PatchSampler {
        receptive_field: spec.receptive_field,
        channels,
        seed,
    };
    let raw = sample_patches(images, &sampler, patch_count)?;
    let mut patches: Vec<_> = raw
        .iter()
        .map(|p| normalize_patch(p, spec.var_floor))
        .collect();
    let whitening = if spec.whiten {
        let wt = fit_whitening(&patches, spec.whiten_epsilon)?;
        for p in patches.iter_mut() {
            *p = wt.apply(p)?;
        }
        Some(wt)
    } else {
        None
    };
    let mut state = NetworkState::init(&spec.network)?;
    for patch in &patches {
        state.train_step(patch)?;
    }
    Ok(TrainedLayer {
        receptive_field: spec.receptive_field,
        state,
        whitening,
        var_floor: spec.var_floor,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Patch;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn map_from(data: Array3<f64>) -> FeatureMap {
        FeatureMap::new(data).unwrap()
    }

    fn random_image(channels: usize, side: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::new(Array3::from_shape_fn((channels, side, side), |_| {
            rng.random_range(0.0..255.0)
        }))
        .unwrap()
    }

    fn identity_whitening(n: usize) -> WhiteningTransform {
        WhiteningTransform::new(Array1::zeros(n), Array2::eye(n), 0.0).unwrap()
    }

    fn small_state(n: usize, m: usize, seed: u64) -> NetworkState {
        NetworkState::init(&NetworkConfig::new(n, m).with_seed(seed)).unwrap()
    }

    #[test]
    fn feature_map_rejects_negative_entries() {
        assert!(FeatureMap::new(Array3::from_elem((2, 2, 1), -0.5)).is_err());
        assert!(FeatureMap::new(Array3::from_elem((2, 2, 1), 0.5)).is_ok());
    }

    #[test]
    fn encode_output_side_is_image_minus_rf_plus_one() {
        let state = small_state(6 * 6 * 3, 2, 0);
        let image = random_image(3, 32, 1);
        let map = encode_image(&state, None, &image, 6, 10.0).unwrap();
        assert_eq!((map.height(), map.width(), map.depth()), (27, 27, 2));
    }

    #[test]
    fn encode_zero_image_is_zero() {
        let n = 2 * 2 * 1;
        let state = small_state(n, 3, 4);
        let wt = identity_whitening(n);
        let image = Image::new(Array3::zeros((1, 5, 5))).unwrap();
        let map = encode_image(&state, Some(&wt), &image, 2, 10.0).unwrap();
        assert!(map.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn encode_full_image_window_matches_direct_inference() {
        let n = 4 * 4 * 1;
        let state = small_state(n, 5, 9);
        let image = random_image(1, 4, 2);
        let wt = identity_whitening(n);
        let map = encode_image(&state, Some(&wt), &image, 4, 10.0).unwrap();
        assert_eq!((map.height(), map.width()), (1, 1));

        let patch = image.extract_patch(0, 0, 4).unwrap();
        let normalized = normalize_patch(&patch, 10.0);
        let whitened = wt.apply(&normalized).unwrap();
        let code = state
            .infer(
                &whitened,
                state.config().infer_sweeps,
                state.config().cd_tolerance,
            )
            .unwrap();
        for i in 0..5 {
            assert!((map.data()[[0, 0, i]] - code.values()[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn encode_rejects_oversized_window() {
        let state = small_state(6 * 6 * 1, 2, 0);
        let image = random_image(1, 5, 3);
        assert!(encode_image(&state, None, &image, 6, 10.0).is_err());
    }

    #[test]
    fn encode_is_pure() {
        let state = small_state(3 * 3 * 1, 4, 8);
        let image = random_image(1, 8, 5);
        let a = encode_image(&state, None, &image, 3, 10.0).unwrap();
        let b = encode_image(&state, None, &image, 3, 10.0).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn quadrant_pool_constant_map() {
        let map = map_from(Array3::from_elem((5, 7, 3), 2.5));
        let pooled = quadrant_pool(&map).unwrap();
        assert_eq!(pooled.len(), 12);
        assert!(pooled.iter().all(|&v| (v - 2.5).abs() < 1e-12));
    }

    #[test]
    fn quadrant_pool_two_by_two_is_the_identity() {
        let mut data = Array3::zeros((2, 2, 1));
        data[[0, 0, 0]] = 1.0;
        data[[0, 1, 0]] = 2.0;
        data[[1, 0, 0]] = 3.0;
        data[[1, 1, 0]] = 4.0;
        let pooled = quadrant_pool(&map_from(data)).unwrap();
        assert_eq!(pooled.as_slice().unwrap(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn quadrant_pool_matches_a_nested_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let data = Array3::from_shape_fn((5, 5, 2), |_| rng.random_range(0.0..1.0));
        let pooled = quadrant_pool(&map_from(data.clone())).unwrap();
        // Direct per-quadrant averages with the split fixed at index 2.
        let ranges = [(0..2, 0..2), (0..2, 2..5), (2..5, 0..2), (2..5, 2..5)];
        for (q, (rows, cols)) in ranges.into_iter().enumerate() {
            for k in 0..2 {
                let mut acc = 0.0;
                let mut cells = 0.0;
                for r in rows.clone() {
                    for c in cols.clone() {
                        acc += data[[r, c, k]];
                        cells += 1.0;
                    }
                }
                assert!((pooled[q * 2 + k] - acc / cells).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn quadrant_pool_rejects_tiny_maps() {
        let map = map_from(Array3::zeros((1, 5, 2)));
        assert!(quadrant_pool(&map).is_err());
    }

    #[test]
    fn avg_pool_basic() {
        let mut data = Array3::zeros((2, 2, 1));
        data[[0, 0, 0]] = 1.0;
        data[[0, 1, 0]] = 2.0;
        data[[1, 0, 0]] = 3.0;
        data[[1, 1, 0]] = 4.0;
        let out = avg_pool_2x2(&map_from(data)).unwrap();
        assert_eq!((out.height(), out.width(), out.depth()), (1, 1, 1));
        assert!((out.data()[[0, 0, 0]] - 2.5).abs() < 1e-12);
    }

    #[test]
    fn avg_pool_constant_map_halves_the_grid() {
        let out = avg_pool_2x2(&map_from(Array3::from_elem((6, 6, 2), 1.5))).unwrap();
        assert_eq!((out.height(), out.width(), out.depth()), (3, 3, 2));
        assert!(out.data().iter().all(|&v| (v - 1.5).abs() < 1e-12));
    }

    #[test]
    fn avg_pool_drops_odd_trailing_rows() {
        let out = avg_pool_2x2(&map_from(Array3::zeros((5, 4, 1)))).unwrap();
        assert_eq!((out.height(), out.width()), (2, 2));
        assert!(avg_pool_2x2(&map_from(Array3::zeros((1, 4, 1)))).is_err());
    }

    #[test]
    fn feature_map_to_image_transposes_layout() {
        let mut data = Array3::zeros((2, 3, 2));
        data[[1, 2, 0]] = 5.0;
        data[[0, 1, 1]] = 7.0;
        let image = map_from(data).to_image();
        assert_eq!((image.channels(), image.height(), image.width()), (2, 2, 3));
        assert_eq!(image.data()[[0, 1, 2]], 5.0);
        assert_eq!(image.data()[[1, 0, 1]], 7.0);
    }

    #[test]
    fn train_layer_requires_two_patches() {
        let spec = LayerSpec::for_input(2, 1, 2);
        let images = vec![random_image(1, 6, 0)];
        assert!(train_layer(&images, &spec, 1, 0).is_err());
    }

    #[test]
    fn train_layer_preserves_kernel_invariants() {
        let mut spec = LayerSpec::for_input(3, 1, 4);
        spec.network.seed = 3;
        let images: Vec<Image> = (0..4).map(|i| random_image(1, 8, i)).collect();
        let layer = train_layer(&images, &spec, 500, 11).unwrap();
        let m = layer.state.neurons();
        for i in 0..m {
            assert_eq!(layer.state.lateral()[[i, i]], 0.0);
            assert!(layer.state.cumulative_activity()[i] >= crate::network::DEFAULT_ACTIVITY_FLOOR);
        }
        assert_eq!(layer.state.samples_seen(), 500);
        assert!(layer.whitening.is_some());
    }

    #[test]
    fn train_layer_is_deterministic() {
        let mut spec = LayerSpec::for_input(2, 1, 3);
        spec.network.seed = 21;
        let images: Vec<Image> = (0..3).map(|i| random_image(1, 7, 40 + i)).collect();
        let a = train_layer(&images, &spec, 200, 5).unwrap();
        let b = train_layer(&images, &spec, 200, 5).unwrap();
        assert_eq!(a.state.feedforward(), b.state.feedforward());
        assert_eq!(a.state.lateral(), b.state.lateral());
        assert_eq!(
            a.state.cumulative_activity(),
            b.state.cumulative_activity()
        );
    }

    #[test]
    fn train_layer_checks_the_input_dimension() {
        let mut spec = LayerSpec::for_input(2, 1, 3);
        spec.network = NetworkConfig::new(99, 3);
        let images = vec![random_image(1, 6, 0)];
        assert!(train_layer(&images, &spec, 10, 0).is_err());
    }

    #[test]
    fn encoded_maps_are_nonnegative() {
        let mut spec = LayerSpec::for_input(3, 1, 6);
        spec.network.seed = 2;
        let images: Vec<Image> = (0..3).map(|i| random_image(1, 10, 60 + i)).collect();
        let layer = train_layer(&images, &spec, 300, 9).unwrap();
        let map = layer.encode(&images[0]).unwrap();
        assert!(map.data().iter().all(|&v| v >= 0.0));
        let _ = Patch::from_slice(&[0.0]).unwrap();
        let pooled = quadrant_pool(&map).unwrap();
        assert!(pooled.iter().all(|&v| v >= 0.0));
        assert_eq!(pooled.len(), 4 * 6);
    }

    #[test]
    fn identity_whitening_keeps_normalized_patches() {
        // transform = I, mean = 0: apply is the identity.
        let wt = identity_whitening(4);
        let p = Patch::from_slice(&[1.0, -2.0, 3.0, 0.5]).unwrap();
        let out = wt.apply(&p).unwrap();
        assert_eq!(out.values(), p.values());
        let _ = array![0.0];
    }
}
