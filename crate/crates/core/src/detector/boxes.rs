//! Box overlap and the centre/size delta parameterisation.

use crate::dataset::BBox;
use crate::{Error, Result};

/// Largest log-scale delta accepted when decoding, `ln(1000 / 16)`.
pub const MAX_LOG_SCALE: f64 = 4.135_166_556_742_356;

/// Intersection over union; 0 for disjoint or degenerate pairs.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = a.x_max.min(b.x_max) - a.x_min.max(b.x_min);
    let ih = a.y_max.min(b.y_max) - a.y_min.max(b.y_min);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Delta encoder with per-component weights `(wx, wy, ww, wh)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxCoder {
    pub weights: [f64; 4],
}

impl Default for BoxCoder {
    fn default() -> Self {
        Self { weights: [1.0; 4] }
    }
}

fn require_positive(b: &BBox, what: &str) -> Result<()> {
    if b.width() > 0.0 && b.height() > 0.0 && b.as_array().iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NumericDomain(format!("{what} {:?} has no area", b.as_array())))
    }
}

impl BoxCoder {
    pub fn new(weights: [f64; 4]) -> Self {
        Self { weights }
    }

    pub fn encode(&self, gt: &BBox, anchor: &BBox) -> Result<[f64; 4]> {
        require_positive(gt, "box")?;
        require_positive(anchor, "anchor")?;
        let (ax, ay) = anchor.center();
        let (gx, gy) = gt.center();
        let [wx, wy, ww, wh] = self.weights;
        Ok([
            wx * (gx - ax) / anchor.width(),
            wy * (gy - ay) / anchor.height(),
            ww * (gt.width() / anchor.width()).ln(),
            wh * (gt.height() / anchor.height()).ln(),
        ])
    }

    /// Inverse of [`BoxCoder::encode`], without clipping.
    pub fn decode(&self, deltas: &[f64; 4], anchor: &BBox) -> Result<BBox> {
        require_positive(anchor, "anchor")?;
        let (ax, ay) = anchor.center();
        let [wx, wy, ww, wh] = self.weights;
        let cx = deltas[0] / wx * anchor.width() + ax;
        let cy = deltas[1] / wy * anchor.height() + ay;
        let w = (deltas[2] / ww).min(MAX_LOG_SCALE).exp() * anchor.width();
        let h = (deltas[3] / wh).min(MAX_LOG_SCALE).exp() * anchor.height();
        if !(cx.is_finite() && cy.is_finite() && w.is_finite() && h.is_finite()) {
            return Err(Error::NumericDomain(format!("non-finite deltas {deltas:?}")));
        }
        Ok(BBox::raw(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h))
    }

    /// Decodes and clips to a `width x height` image.
    pub fn decode_clipped(&self, deltas: &[f64; 4], anchor: &BBox, width: usize, height: usize) -> Result<BBox> {
        Ok(self.decode(deltas, anchor)?.clipped(width, height))
    }
}

/// Unit-weight encoding of `gt` relative to `anchor`.
pub fn encode_box(gt: &BBox, anchor: &BBox) -> Result<[f64; 4]> {
    BoxCoder::default().encode(gt, anchor)
}

/// Unit-weight decoding.
pub fn decode_box(deltas: &[f64; 4], anchor: &BBox) -> Result<BBox> {
    BoxCoder::default().decode(deltas, anchor)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iou_values() {
        let a = BBox::raw(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &BBox::raw(10.0, 0.0, 20.0, 10.0)), 0.0);
        let b = BBox::raw(5.0, 0.0, 15.0, 10.0);
        assert!((iou(&a, &b) - 50.0 / 150.0).abs() < 1e-12);
        assert_eq!(iou(&a, &BBox::raw(3.0, 3.0, 3.0, 8.0)), 0.0);
    }

    #[test]
    fn doubling_width() {
        let anchor = BBox::raw(100.0, 100.0, 148.0, 148.0);
        let b = decode_box(&[0.0, 0.0, 2f64.ln(), 0.0], &anchor).unwrap();
        assert!((b.width() - 96.0).abs() < 1e-9);
        assert!((b.height() - 48.0).abs() < 1e-9);
        assert_eq!(b.center(), anchor.center());
    }

    #[test]
    fn weighted_round_trip() {
        let coder = BoxCoder::new([10.0, 10.0, 5.0, 5.0]);
        let gt = BBox::raw(12.5, 40.0, 60.25, 71.0);
        let anchor = BBox::raw(10.0, 30.0, 70.0, 80.0);
        let d = coder.encode(&gt, &anchor).unwrap();
        let back = coder.decode(&d, &anchor).unwrap();
        for (x, y) in back.as_array().iter().zip(gt.as_array()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn degenerate_inputs_rejected() {
        let flat = BBox::raw(0.0, 0.0, 0.0, 5.0);
        let ok = BBox::raw(0.0, 0.0, 4.0, 5.0);
        assert!(matches!(encode_box(&ok, &flat), Err(Error::NumericDomain(_))));
        assert!(matches!(encode_box(&flat, &ok), Err(Error::NumericDomain(_))));
        assert!(decode_box(&[0.0; 4], &flat).is_err());
    }

    #[test]
    fn huge_scale_deltas_are_capped() {
        let b = decode_box(&[0.0, 0.0, 1e6, 1e6], &BBox::raw(0.0, 0.0, 16.0, 16.0)).unwrap();
        assert!((b.width() - 1000.0).abs() < 1e-6);
    }
}
