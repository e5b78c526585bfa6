use ndarray::{Array2, ArrayView2};

/// Mean softmax cross-entropy over rows and its gradient w.r.t. the logits.
pub fn cross_entropy(logits: ArrayView2<f64>, labels: &[usize]) -> (f64, Array2<f64>) {
    let n = logits.nrows();
    assert_eq!(n, labels.len(), "one label per row");
    let mut grad = Array2::zeros(logits.raw_dim());
    if n == 0 {
        return (0.0, grad);
    }
    let mut total = 0.0;
    for (i, row) in logits.rows().into_iter().enumerate() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        total += log_z - row[labels[i]];
        for (k, v) in row.iter().enumerate() {
            let p = (v - log_z).exp();
            grad[(i, k)] = (p - if k == labels[i] { 1.0 } else { 0.0 }) / n as f64;
        }
    }
    (total / n as f64, grad)
}

/// Mean smooth-L1 (quadratic below `beta`, linear above) and its gradient.
pub fn smooth_l1(pred: &[f64], target: &[f64], beta: f64) -> (f64, Vec<f64>) {
    assert_eq!(pred.len(), target.len());
    let n = pred.len();
    if n == 0 {
        return (0.0, Vec::new());
    }
    let mut total = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let e = p - t;
            if e.abs() < beta {
                total += 0.5 * e * e / beta;
                e / beta / n as f64
            } else {
                total += e.abs() - 0.5 * beta;
                e.signum() / n as f64
            }
        })
        .collect();
    (total / n as f64, grad)
}

/// Mean squared error and its gradient.
pub fn mse(pred: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    assert_eq!(pred.len(), target.len());
    let n = pred.len();
    if n == 0 {
        return (0.0, Vec::new());
    }
    let total: f64 = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum();
    let grad = pred.iter().zip(target).map(|(p, t)| 2.0 * (p - t) / n as f64).collect();
    (total / n as f64, grad)
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossWeights {
    pub objectness: f64,
    pub graspness: f64,
    pub diffusion: f64,
    pub joints: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            objectness: 1.0,
            graspness: 1.0,
            diffusion: 10.0,
            joints: 1.0,
        }
    }
}

/// Component losses of one training step.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct LossTerms {
    pub objectness: f64,
    pub graspness: f64,
    pub diffusion: f64,
    pub joints: f64,
}

impl LossTerms {
    pub fn total(&self, w: &LossWeights) -> f64 {
        w.objectness * self.objectness + w.graspness * self.graspness + w.diffusion * self.diffusion + w.joints * self.joints
    }

    pub fn is_finite(&self) -> bool {
        [self.objectness, self.graspness, self.diffusion, self.joints]
            .iter()
            .all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_error_losses() {
        let x = [0.3, -1.0, 2.0];
        assert_eq!(smooth_l1(&x, &x, 1.0).0, 0.0);
        assert_eq!(mse(&x, &x).0, 0.0);
    }

    #[test]
    fn cross_entropy_decreases_with_margin() {
        let mut prev = f64::INFINITY;
        for m in [0.0, 1.0, 2.0, 5.0, 10.0] {
            let (l, _) = cross_entropy(array![[m, -m]].view(), &[0]);
            assert!(l < prev);
            prev = l;
        }
        let (l, _) = cross_entropy(array![[0.0, 0.0]].view(), &[1]);
        assert!((l - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn smooth_l1_is_c1_at_beta() {
        let beta = 1.0;
        let h = 1e-9;
        let (l_left, g_left) = smooth_l1(&[beta - h], &[0.0], beta);
        let (l_right, g_right) = smooth_l1(&[beta + h], &[0.0], beta);
        assert!((l_left - l_right).abs() < 1e-8);
        assert!((g_left[0] - g_right[0]).abs() < 1e-8);
        assert_eq!(smooth_l1(&[3.0], &[0.0], beta).0, 2.5);
        assert_eq!(smooth_l1(&[0.5], &[0.0], beta).0, 0.125);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let pred = [0.3, -1.7, 2.2, 0.05];
        let target = [0.0, -0.5, 0.4, 0.1];
        let h = 1e-6;
        for k in 0..pred.len() {
            let mut up = pred;
            up[k] += h;
            let mut down = pred;
            down[k] -= h;
            let fd = (smooth_l1(&up, &target, 1.0).0 - smooth_l1(&down, &target, 1.0).0) / (2.0 * h);
            assert!((fd - smooth_l1(&pred, &target, 1.0).1[k]).abs() < 1e-6);
            let fd = (mse(&up, &target).0 - mse(&down, &target).0) / (2.0 * h);
            assert!((fd - mse(&pred, &target).1[k]).abs() < 1e-6);
        }
        let logits = array![[0.2, -0.3], [1.5, 0.7], [-2.0, 0.1]];
        let labels = [1, 0, 0];
        let (_, g) = cross_entropy(logits.view(), &labels);
        for i in 0..3 {
            for j in 0..2 {
                let mut up = logits.clone();
                up[(i, j)] += h;
                let mut down = logits.clone();
                down[(i, j)] -= h;
                let fd = (cross_entropy(up.view(), &labels).0 - cross_entropy(down.view(), &labels).0) / (2.0 * h);
                assert!((fd - g[(i, j)]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn weighted_total() {
        let t = LossTerms {
            objectness: 0.5,
            graspness: 0.25,
            diffusion: 0.1,
            joints: 2.0,
        };
        assert!((t.total(&LossWeights::default()) - (0.5 + 0.25 + 1.0 + 2.0)).abs() < 1e-15);
    }
}
