//! Adam over a flat parameter buffer.  Moment estimates are kept in f64
//! regardless of the model's scalar type.

use super::{ParamSet, Scalar, TrainConfig};

pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    lr: f64,
    weight_decay: f64,
}

impl Adam {
    pub fn new(tc: &TrainConfig, n_params: usize) -> Self {
        Self {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
            beta1: tc.adam_beta1,
            beta2: tc.adam_beta2,
            eps: tc.adam_eps,
            lr: tc.lr,
            weight_decay: tc.weight_decay,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn step<F: Scalar>(&mut self, params: &mut ParamSet<F>, grads: &ParamSet<F>) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let data = params.data_mut();
        for i in 0..data.len() {
            let mut g = grads.data()[i].into_f64();
            if self.weight_decay != 0.0 {
                g += self.weight_decay * data[i].into_f64();
            }
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            let delta = self.lr * m_hat / (v_hat.sqrt() + self.eps);
            data[i] = F::from_f64(data[i].into_f64() - delta);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seqmodel::params::{Init, LayoutBuilder};

    fn tiny() -> ParamSet<f64> {
        let mut b = LayoutBuilder::new();
        b.add("w", &[4], Init::Normal002);
        b.build(0)
    }

    #[test]
    fn zero_lr_leaves_parameters_unchanged() {
        let mut tc = TrainConfig::new(1, 1, 0.0, 0);
        tc.lr = 0.0;
        let mut p = tiny();
        let before = p.data().to_vec();
        let mut g = p.zeros_like();
        g.data_mut().iter_mut().for_each(|x| *x = 1.0);
        let mut adam = Adam::new(&tc, p.len());
        for _ in 0..10 {
            adam.step(&mut p, &g);
        }
        assert_eq!(p.data(), &before[..]);
    }

    #[test]
    fn first_step_size_is_about_lr() {
        // With bias correction, |delta| of the first step approaches lr for a
        // nonzero gradient.
        let tc = TrainConfig::new(1, 1, 1e-3, 0);
        let mut p = tiny();
        let before = p.data().to_vec();
        let mut g = p.zeros_like();
        g.data_mut().iter_mut().for_each(|x| *x = 0.5);
        let mut adam = Adam::new(&tc, p.len());
        adam.step(&mut p, &g);
        for (a, b) in p.data().iter().zip(&before) {
            assert!(((b - a) - 1e-3).abs() < 1e-8, "step was {}", b - a);
        }
    }
}
