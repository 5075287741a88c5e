use ndarray::{ArrayD, Zip};

use crate::nn::{Grads, Params};

/// Adam with decoupled weight decay scaled by the current learning rate:
/// `p -= lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p)`.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<ArrayD<f64>>,
    v: Vec<ArrayD<f64>>,
}

impl Adam {
    pub fn new(params: &Params, weight_decay: f64) -> Self {
        let zeros = || params.ids().map(|id| ArrayD::zeros(params.get(id).raw_dim())).collect();
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut Params, grads: &Grads, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2, eps, wd) = (self.beta1, self.beta2, self.eps, self.weight_decay);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for id in params.ids().collect::<Vec<_>>() {
            let i = id.0;
            Zip::from(params.get_mut(id))
                .and(&mut self.m[i])
                .and(&mut self.v[i])
                .and(grads.get(id))
                .for_each(|p, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let update = (*m / c1) / ((*v / c2).sqrt() + eps);
                    *p -= lr * (update + wd * *p);
                });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, Array1};

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut params = Params::default();
        let id = params.add("w", arr1(&[1.0, -1.0, 0.5]));
        let mut adam = Adam::new(&params, 0.0);
        let grads = Grads(vec![arr1(&[2.0, -3.0, 0.0]).into_dyn()]);
        adam.step(&mut params, &grads, 0.1);
        let w = params.get(id);
        assert!((w[0] - 0.9).abs() < 1e-6);
        assert!((w[1] + 0.9).abs() < 1e-6);
        assert_eq!(w[2], 0.5);
    }

    #[test]
    fn decoupled_decay_shrinks_weights_without_gradient() {
        let mut params = Params::default();
        let id = params.add("w", Array1::from_elem(2, 2.0));
        let mut adam = Adam::new(&params, 0.5);
        let zeros = params.zeros_like();
        adam.step(&mut params, &zeros, 0.1);
        assert!((params.get(id)[0] - 2.0 * (1.0 - 0.05)).abs() < 1e-12);
    }

    #[test]
    fn minimises_a_quadratic() {
        let mut params = Params::default();
        let id = params.add("w", arr1(&[3.0, -2.0]));
        let mut adam = Adam::new(&params, 0.0);
        for _ in 0..2000 {
            let g = params.get(id).mapv(|v| 2.0 * (v - 1.0));
            adam.step(&mut params, &Grads(vec![g]), 0.01);
        }
        assert!(params.get(id).iter().all(|v| (v - 1.0).abs() < 1e-3));
    }
}
