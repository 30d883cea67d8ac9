//! Adam with bias correction, and global-norm gradient clipping.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl Adam {
    /// Zero moments shaped like `params`.
    pub fn new<'a>(lr: f64, params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let m: Vec<Tensor> = params
            .into_iter()
            .map(|p| Tensor::zeros(p.rows(), p.cols()))
            .collect();
        Self {
            lr,
            beta1: BETA1,
            beta2: BETA2,
            eps: ADAM_EPS,
            step: 0,
            v: m.clone(),
            m,
        }
    }

    /// One bias-corrected update. Nothing is modified if any gradient is
    /// non-finite or a shape disagrees.
    pub fn update(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Contract(format!(
                "optimizer tracks {} tensors, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (k, ((p, g), m)) in params.iter().zip(grads).zip(&self.m).enumerate() {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(Error::shape("adam", p.shape(), g.shape()));
            }
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient of parameter {k}")));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for (((x, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let mh = *mi / c1;
                let vh = *vi / c2;
                *x -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Rescales `grads` so their joint L2 norm is at most `max_norm`. Returns
/// the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().map(Tensor::squared_norm).sum::<f64>().sqrt();
    if norm > max_norm && norm.is_finite() {
        let c = max_norm / norm;
        grads.iter_mut().for_each(|g| g.scale_assign(c));
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut w = Tensor::from_rows(&[[1.0, -2.0]]);
        let mut adam = Adam::new(0.1, [&w]);
        adam.update(&mut [&mut w], &[Tensor::zeros(1, 2)]).unwrap();
        assert_eq!(w.data(), &[1.0, -2.0]);
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut w = Tensor::scalar(0.5);
        let mut adam = Adam::new(1e-3, [&w]);
        adam.update(&mut [&mut w], &[Tensor::scalar(3.0)]).unwrap();
        // m̂ = g, v̂ = g², so the step is lr·g/(|g|+eps).
        let expected = 0.5 - 1e-3 * 3.0 / (3.0 + ADAM_EPS);
        assert!((w.item() - expected).abs() < 1e-15);
    }

    #[test]
    fn descends_a_quadratic() {
        let mut w = Tensor::scalar(1.0);
        let mut adam = Adam::new(0.1, [&w]);
        for _ in 0..100 {
            let g = Tensor::scalar(2.0 * w.item());
            adam.update(&mut [&mut w], &[g]).unwrap();
        }
        assert!(w.item().abs() < 0.1, "{}", w.item());
    }

    #[test]
    fn non_finite_gradient_is_rejected_untouched() {
        let mut w = Tensor::scalar(1.0);
        let mut adam = Adam::new(0.1, [&w]);
        let err = adam.update(&mut [&mut w], &[Tensor::scalar(f64::NAN)]);
        assert!(matches!(err, Err(Error::NonFinite(_))));
        assert_eq!((w.item(), adam.step), (1.0, 0));
    }

    #[test]
    fn clipping_caps_the_norm() {
        let mut g = vec![Tensor::from_rows(&[[3.0]]), Tensor::from_rows(&[[4.0]])];
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((g[0].item() - 0.6).abs() < 1e-15 && (g[1].item() - 0.8).abs() < 1e-15);
        let mut small = vec![Tensor::scalar(0.1)];
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small[0].item(), 0.1);
    }
}
