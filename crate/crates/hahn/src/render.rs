//! Filter visualization: tile feed-forward rows into an RGB grid.
//!
//! Each row un-flattens to its `rf x rf x channels` window, is linearly
//! rescaled per tile to the 0-255 range, upscaled by nearest neighbor, and
//! placed into a near-square grid.

use crate::error::{HahnError, Result};
use crate::network::NetworkState;

/// A plain 8-bit RGB buffer, row-major.
#[derive(Debug, Clone)]
pub struct RgbGrid {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

/// Tile every feed-forward row of `state` into a grid of `ceil(sqrt(m))`
/// columns. Supports 1-channel (replicated to gray) and 3-channel filters.
pub fn filter_grid(state: &NetworkState, rf: usize, upscale: usize) -> Result<RgbGrid> {
    if rf == 0 || upscale == 0 {
        return Err(HahnError::InvalidConfig(
            "receptive field and upscale must be >= 1".into(),
        ));
    }
    let n = state.input_dim();
    if n % (rf * rf) != 0 {
        return Err(HahnError::dims("filter window", rf * rf, n));
    }
    let channels = n / (rf * rf);
    if channels != 1 && channels != 3 {
        return Err(HahnError::InvalidConfig(format!(
            "can only render 1- or 3-channel filters, got {channels}"
        )));
    }
    let m = state.neurons();
    let grid_cols = (m as f64).sqrt().ceil() as usize;
    let grid_rows = m.div_ceil(grid_cols);
    let tile = rf * upscale;
    let (width, height) = (grid_cols * tile, grid_rows * tile);
    let mut pixels = vec![0u8; width * height * 3];

    for (index, row) in state.feedforward().rows().into_iter().enumerate() {
        let lo = row.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        let origin_r = (index / grid_cols) * tile;
        let origin_c = (index % grid_cols) * tile;
        for pr in 0..rf {
            for pc in 0..rf {
                let mut rgb = [0u8; 3];
                for color in 0..3 {
                    let ch = if channels == 3 { color } else { 0 };
                    let v = row[ch * rf * rf + pr * rf + pc];
                    let byte = if span > 0.0 {
                        ((v - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8
                    } else {
                        128
                    };
                    rgb[color] = byte;
                }
                for ur in 0..upscale {
                    for uc in 0..upscale {
                        let y = origin_r + pr * upscale + ur;
                        let x = origin_c + pc * upscale + uc;
                        let at = (y * width + x) * 3;
                        pixels[at..at + 3].copy_from_slice(&rgb);
                    }
                }
            }
        }
    }
    Ok(RgbGrid {
        width,
        height,
        pixels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::NetworkConfig;

    #[test]
    fn sixteen_filters_tile_into_a_four_by_four_grid() {
        let state =
            NetworkState::init(&NetworkConfig::new(6 * 6 * 3, 16).with_seed(1)).unwrap();
        let grid = filter_grid(&state, 6, 8).unwrap();
        assert_eq!(grid.width, 4 * 6 * 8);
        assert_eq!(grid.height, 4 * 6 * 8);
        assert_eq!(grid.pixels.len(), grid.width * grid.height * 3);
    }

    #[test]
    fn ragged_counts_round_the_grid_up() {
        let state = NetworkState::init(&NetworkConfig::new(2 * 2, 5).with_seed(2)).unwrap();
        let grid = filter_grid(&state, 2, 1).unwrap();
        // ceil(sqrt(5)) = 3 columns, 2 rows.
        assert_eq!(grid.width, 6);
        assert_eq!(grid.height, 4);
    }

    #[test]
    fn per_tile_rescale_spans_the_byte_range() {
        let state = NetworkState::init(&NetworkConfig::new(3 * 3, 4).with_seed(3)).unwrap();
        let grid = filter_grid(&state, 3, 1).unwrap();
        assert!(grid.pixels.iter().any(|&p| p == 0));
        assert!(grid.pixels.iter().any(|&p| p == 255));
    }

    #[test]
    fn unsupported_channel_counts_are_rejected() {
        let state = NetworkState::init(&NetworkConfig::new(2 * 2 * 5, 3)).unwrap();
        assert!(filter_grid(&state, 2, 1).is_err());
    }
}
