//! Max RoI pooling over integer-snapped bins.

use crate::{Result, Scalar, Tensor};

/// Pooled features for a batch of regions, `rois x channels x size x size`,
/// plus the winning feature index of every output cell (`None` for empty bins).
#[derive(Debug, Clone)]
pub struct RoiPoolOutput<T> {
    pub rois: usize,
    pub size: usize,
    pub channels: usize,
    pub data: Vec<T>,
    argmax: Vec<Option<usize>>,
    feature_shape: (usize, usize, usize),
}

impl<T> RoiPoolOutput<T> {
    pub fn row_len(&self) -> usize {
        self.channels * self.size * self.size
    }
}

/// Integer feature-cell range `[lo, hi)` covered by one image-space interval.
fn snap(lo: f64, hi: f64, scale: f64, limit: usize) -> (usize, usize) {
    let a = (lo * scale).floor().max(0.0) as usize;
    let b = ((hi * scale).ceil() as usize).min(limit);
    let a = a.min(limit.saturating_sub(1));
    (a, b.max(a + 1))
}

/// Pools every `[x1, y1, x2, y2]` box (image coordinates) from `features`,
/// whose cells are `1 / scale` image pixels apart.
pub fn roi_pool<T: Scalar>(
    features: &Tensor<T>,
    boxes: &[[f64; 4]],
    scale: f64,
    size: usize,
) -> Result<RoiPoolOutput<T>> {
    let (c, h, w) = features.shape();
    let row = c * size * size;
    let mut data = vec![T::zero(); boxes.len() * row];
    let mut argmax = vec![None; boxes.len() * row];
    for (r, b) in boxes.iter().enumerate() {
        let (x0, x1) = snap(b[0], b[2], scale, w);
        let (y0, y1) = snap(b[1], b[3], scale, h);
        let (rw, rh) = ((x1 - x0) as f64, (y1 - y0) as f64);
        for py in 0..size {
            let hs = y0 + (py as f64 * rh / size as f64).floor() as usize;
            let he = (y0 + ((py + 1) as f64 * rh / size as f64).ceil() as usize).min(h);
            for px in 0..size {
                let ws = x0 + (px as f64 * rw / size as f64).floor() as usize;
                let we = (x0 + ((px + 1) as f64 * rw / size as f64).ceil() as usize).min(w);
                if hs >= he || ws >= we {
                    continue;
                }
                for ch in 0..c {
                    let mut best: Option<(usize, T)> = None;
                    for yy in hs..he {
                        for xx in ws..we {
                            let idx = (ch * h + yy) * w + xx;
                            let v = features.data[idx];
                            if best.is_none_or(|(_, bv)| v > bv) {
                                best = Some((idx, v));
                            }
                        }
                    }
                    let out = r * row + (ch * size + py) * size + px;
                    if let Some((idx, v)) = best {
                        data[out] = v;
                        argmax[out] = Some(idx);
                    }
                }
            }
        }
    }
    Ok(RoiPoolOutput {
        rois: boxes.len(),
        size,
        channels: c,
        data,
        argmax,
        feature_shape: (c, h, w),
    })
}

/// Routes pooled-feature gradients back to the winning feature cells.
pub fn roi_pool_backward<T: Scalar>(out: &RoiPoolOutput<T>, grad: &[T]) -> Tensor<T> {
    let (c, h, w) = out.feature_shape;
    let mut dx = Tensor::zeros(c, h, w);
    for (g, a) in grad.iter().zip(&out.argmax) {
        if let Some(idx) = a {
            dx.data[*idx] += *g;
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn whole_map_pooling_takes_block_maxima() {
        let f = Tensor::<f64>::from_vec(1, 4, 4, (0..16).map(|v| v as f64).collect()).unwrap();
        let out = roi_pool(&f, &[[0.0, 0.0, 32.0, 32.0]], 1.0 / 8.0, 2).unwrap();
        assert_eq!(out.data, vec![5.0, 7.0, 13.0, 15.0]);
        let dx = roi_pool_backward(&out, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(dx.data[5], 1.0);
        assert_eq!(dx.data[15], 4.0);
        assert_eq!(dx.data.iter().sum::<f64>(), 10.0);
    }

    #[test]
    fn tiny_region_repeats_single_cell() {
        let f = Tensor::<f32>::from_vec(2, 4, 4, (0..32).map(|v| v as f32).collect()).unwrap();
        let out = roi_pool(&f, &[[9.0, 9.0, 12.0, 12.0]], 1.0 / 8.0, 3).unwrap();
        assert_eq!(out.row_len(), 18);
        assert!(out.data[..9].iter().all(|&v| v == 5.0));
        assert!(out.data[9..].iter().all(|&v| v == 21.0));
    }
}
