//! Loss functions returning the value together with its gradient.

use crate::Scalar;

/// Numerically stable `log(1 + exp(x))`.
fn softplus<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Binary cross-entropy on logits, summed over the listed entries and divided
/// by `norm`. Returns the loss and a dense gradient over `logits`.
pub fn bce_with_logits<T: Scalar>(logits: &[T], picks: &[(usize, bool)], norm: T) -> (T, Vec<T>) {
    let mut grad = vec![T::zero(); logits.len()];
    let mut loss = T::zero();
    for &(i, positive) in picks {
        let z = logits[i];
        let t = if positive { T::one() } else { T::zero() };
        loss += softplus(z) - t * z;
        grad[i] = (sigmoid(z) - t) / norm;
    }
    (loss / norm, grad)
}

/// Row-wise softmax.
pub fn softmax_rows<T: Scalar>(logits: &[T], classes: usize) -> Vec<T> {
    let mut out = logits.to_vec();
    for row in out.chunks_mut(classes) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut s = T::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        row.iter_mut().for_each(|v| *v /= s);
    }
    out
}

/// Mean softmax cross-entropy over rows of `logits` (`rows x classes`).
pub fn softmax_cross_entropy<T: Scalar>(logits: &[T], classes: usize, labels: &[usize]) -> (T, Vec<T>) {
    let rows = labels.len();
    debug_assert_eq!(logits.len(), rows * classes);
    if rows == 0 {
        return (T::zero(), Vec::new());
    }
    let n = T::of(rows as f64);
    let mut grad = softmax_rows(logits, classes);
    let mut loss = T::zero();
    for (r, &label) in labels.iter().enumerate() {
        let row = &logits[r * classes..(r + 1) * classes];
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
        loss += lse - row[label];
        grad[r * classes + label] -= T::one();
    }
    grad.iter_mut().for_each(|g| *g /= n);
    (loss / n, grad)
}

/// Smooth-L1 (Huber with transition at `beta`) summed over all entries and
/// divided by `norm`. Gradient is with respect to `pred`.
pub fn smooth_l1<T: Scalar>(pred: &[T], target: &[T], beta: f64, norm: T) -> (T, Vec<T>) {
    let b = T::of(beta);
    let half = T::of(0.5);
    let mut loss = T::zero();
    let grad = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let d = p - t;
            let a = d.abs();
            if a < b {
                loss += half * d * d / b;
                d / b / norm
            } else {
                loss += a - half * b;
                d.signum() / norm
            }
        })
        .collect();
    (loss / norm, grad)
}

/// Mean absolute error and its gradient with respect to `pred`.
pub fn l1<T: Scalar>(pred: &[T], target: &[T]) -> (T, Vec<T>) {
    let n = T::of(pred.len().max(1) as f64);
    let mut loss = T::zero();
    let grad = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let d = p - t;
            loss += d.abs();
            if d > T::zero() {
                T::one() / n
            } else if d < T::zero() {
                -T::one() / n
            } else {
                T::zero()
            }
        })
        .collect();
    (loss / n, grad)
}

/// Mean squared distance to a constant target (least-squares GAN objective).
pub fn mse_to<T: Scalar>(pred: &[T], target: f64) -> (T, Vec<T>) {
    let t = T::of(target);
    let n = T::of(pred.len().max(1) as f64);
    let two = T::of(2.0);
    let mut loss = T::zero();
    let grad = pred
        .iter()
        .map(|&p| {
            let d = p - t;
            loss += d * d;
            two * d / n
        })
        .collect();
    (loss / n, grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check(f: impl Fn(&[f64]) -> f64, x: &[f64], grad: &[f64]) {
        let h = 1e-6;
        for i in 0..x.len() {
            let mut p = x.to_vec();
            p[i] += h;
            let mut m = x.to_vec();
            m[i] -= h;
            let num = (f(&p) - f(&m)) / (2.0 * h);
            assert!((num - grad[i]).abs() < 1e-6, "entry {i}: {num} vs {}", grad[i]);
        }
    }

    #[test]
    fn bce_gradient_and_extremes() {
        let x: Vec<f64> = vec![0.3, -2.0, 40.0, -40.0];
        let picks = vec![(0, true), (1, false), (2, true), (3, true)];
        let (l, g) = bce_with_logits(&x, &picks, 4.0);
        assert!(l.is_finite() && l > 0.0);
        check(|v| bce_with_logits(v, &picks, 4.0).0, &x, &g);
        // confident correct prediction costs nothing
        let (l, _) = bce_with_logits(&[50.0], &[(0, true)], 1.0);
        assert!(l < 1e-20);
    }

    #[test]
    fn cross_entropy_gradient() {
        let x = vec![0.5, -0.2, 1.0, 3.0, 0.1, -1.0];
        let labels = vec![1, 0];
        let (_, g) = softmax_cross_entropy(&x, 3, &labels);
        check(|v| softmax_cross_entropy(v, 3, &labels).0, &x, &g);
    }

    #[test]
    fn cross_entropy_decreases_with_margin() {
        let (a, _) = softmax_cross_entropy(&[1.0, 0.0], 2, &[0]);
        let (b, _) = softmax_cross_entropy(&[2.0, 0.0], 2, &[0]);
        assert!(b < a);
    }

    #[test]
    fn smooth_l1_regions() {
        let p: Vec<f64> = vec![0.05, 1.0, -3.0];
        let t = vec![0.0, 0.0, 0.0];
        let (l, g) = smooth_l1(&p, &t, 1.0 / 9.0, 1.0);
        let want = 0.5 * 0.05 * 0.05 * 9.0 + (1.0 - 0.5 / 9.0) + (3.0 - 0.5 / 9.0);
        assert!((l - want).abs() < 1e-12);
        check(|v| smooth_l1(v, &t, 1.0 / 9.0, 1.0).0, &p, &g);
        assert_eq!(smooth_l1(&t, &t, 1.0, 1.0).0, 0.0);
    }

    #[test]
    fn l1_and_mse() {
        let p: Vec<f64> = vec![0.2, -0.7, 0.4];
        let t = vec![0.0, 0.1, 1.0];
        let (l, g) = l1(&p, &t);
        assert!((l - (0.2 + 0.8 + 0.6) / 3.0).abs() < 1e-12);
        check(|v| l1(v, &t).0, &p, &g);
        let (m, g) = mse_to(&p, 1.0);
        assert!((m - (0.64 + 2.89 + 0.36) / 3.0).abs() < 1e-12);
        check(|v| mse_to(v, 1.0).0, &p, &g);
    }
}
