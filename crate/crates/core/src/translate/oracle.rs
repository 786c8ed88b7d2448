//! Exactly invertible analytic day/night colour map.

use serde::{Deserialize, Serialize};

use crate::dataset::{ImageBuffer, ValueRange};

/// `T(x) = (g_c x)^gamma` per channel, in `[0, 1]` space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleParams {
    pub gain: [f32; 3],
    pub gamma: f32,
}

impl OracleParams {
    pub fn is_valid(&self) -> bool {
        self.gain.iter().all(|g| *g > 0.0 && g.is_finite()) && self.gamma > 0.0 && self.gamma.is_finite()
    }

    #[inline]
    pub fn forward_value(&self, channel: usize, x: f64) -> f64 {
        (self.gain[channel] as f64 * x).powf(self.gamma as f64).clamp(0.0, 1.0)
    }

    #[inline]
    pub fn backward_value(&self, channel: usize, y: f64) -> f64 {
        (y.max(0.0).powf(1.0 / self.gamma as f64) / self.gain[channel] as f64).clamp(0.0, 1.0)
    }

    /// Whether the forward map stays below 1 for this channel value, i.e.
    /// forward-then-backward is exact.
    pub fn forward_clips(&self, channel: usize, x: f64) -> bool {
        self.gain[channel] as f64 * x > 1.0
    }
}

/// Applies the map (or its inverse) to a 3-channel image of either range.
/// The output keeps the input's range tag.
pub fn apply(params: &OracleParams, img: &ImageBuffer, inverse: bool) -> ImageBuffer {
    debug_assert_eq!(img.channels(), 3);
    let unit = img.to_range(ValueRange::Unit01);
    let p = unit.plane();
    let data: Vec<f32> = unit
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let c = i / p;
            let out = if inverse {
                params.backward_value(c, v as f64)
            } else {
                params.forward_value(c, v as f64)
            };
            out as f32
        })
        .collect();
    let out = ImageBuffer::new(img.height(), img.width(), 3, ValueRange::Unit01, data).expect("values clamped into [0, 1]");
    out.to_range(img.range())
}
