use ndarray::{Array2, Zip};

use crate::config::AdamConfig;
use crate::params::Params;
use crate::tape::Grads;

/// Adam with bias correction. Moments start at zero.
pub struct Adam {
    cfg: AdamConfig,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    t: i32,
}

impl Adam {
    pub fn new(params: &Params, cfg: AdamConfig) -> Self {
        let zeros = || params.values.iter().map(|p| Array2::zeros(p.raw_dim())).collect();
        Adam { cfg, m: zeros(), v: zeros(), t: 0 }
    }

    /// One update with learning rate `lr`; parameters without a gradient
    /// are treated as having a zero gradient.
    pub fn step(&mut self, params: &mut Params, grads: &Grads, lr: f64) {
        self.t += 1;
        let AdamConfig { beta1, beta2, eps, .. } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        for (i, p) in params.values.iter_mut().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            match &grads.0[i] {
                Some(g) => Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                }),
                None => Zip::from(p).and(m).and(v).for_each(|p, m, v| {
                    *m *= beta1;
                    *v *= beta2;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                }),
            }
        }
    }
}

/// Scales `grads` so their global norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut Grads, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm && norm > 0.0 {
        grads.scale(max_norm / norm);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn first_step_moves_by_lr() {
        // with bias correction the first update is lr * sign(g)
        let mut params = Params { names: vec!["w".into()], values: vec![array![[1.0, -2.0]]] };
        let mut adam = Adam::new(&params, AdamConfig { lr: 0.1, beta1: 0.9, beta2: 0.999, eps: 0.0 });
        let grads = Grads(vec![Some(array![[3.0, -0.5]])]);
        adam.step(&mut params, &grads, 0.1);
        let p = &params.values[0];
        assert!((p[[0, 0]] - 0.9).abs() < 1e-12);
        assert!((p[[0, 1]] + 1.9).abs() < 1e-12);
    }

    #[test]
    fn clipping() {
        let mut g = Grads(vec![Some(array![[3.0, 4.0]])]);
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((g.global_norm() - 1.0).abs() < 1e-12);
    }
}
