use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::Parameters;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Bias-corrected Adam moments for a fixed list of parameter tensors.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig, sizes: &[usize]) -> Self {
        AdamState {
            config,
            step: 0,
            first: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// Moment buffers sized for every tensor of `model`.
    pub fn for_model(config: AdamConfig, model: &impl Parameters) -> Self {
        let mut sizes = Vec::new();
        model.visit("", &mut |_, t| sizes.push(t.len()));
        Self::new(config, &sizes)
    }

    fn check(&self, i: usize, param: &Tensor, grad: &Tensor) -> Result<()> {
        if param.shape() != grad.shape() || self.first[i].len() != param.len() {
            return Err(Error::shape(format!(
                "parameter {i}: shape {:?}, gradient {:?}, state {}",
                param.shape(),
                grad.shape(),
                self.first[i].len()
            )));
        }
        Ok(())
    }

    fn update(&mut self, i: usize, param: &mut Tensor, grad: &Tensor) {
        let c = &self.config;
        let t = self.step as i32;
        let correction1 = 1.0 - c.beta1.powi(t);
        let correction2 = 1.0 - c.beta2.powi(t);
        let (m, v) = (&mut self.first[i], &mut self.second[i]);
        for (((p, &g), m), v) in param.data_mut().iter_mut().zip(grad.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = c.beta1 * *m + (1.0 - c.beta1) * g;
            *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
            let m_hat = *m / correction1;
            let v_hat = *v / correction2;
            *p -= c.learning_rate * m_hat / (v_hat.sqrt() + c.epsilon);
        }
    }

    /// One update of every parameter; the step counter advances by one.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.first.len() {
            return Err(Error::shape(format!(
                "{} parameters, {} gradients, state for {}",
                params.len(),
                grads.len(),
                self.first.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            self.check(i, p, g)?;
        }
        self.step += 1;
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            self.update(i, p, g);
        }
        Ok(())
    }

    /// [`AdamState::step`] over a model's tensors in visit order.
    pub fn step_model(&mut self, model: &mut impl Parameters, grads: &[Tensor]) -> Result<()> {
        let mut ok = true;
        let mut i = 0;
        model.visit_mut(&mut |t| {
            if i >= grads.len() || t.shape() != grads[i].shape() {
                ok = false;
            }
            i += 1;
        });
        if !ok || i != grads.len() || i != self.first.len() {
            return Err(Error::shape("gradients do not line up with model parameters"));
        }
        self.step += 1;
        let mut i = 0;
        model.visit_mut(&mut |t| {
            self.update(i, t, &grads[i]);
            i += 1;
        });
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = Tensor::vector(vec![1.0, -2.0]);
        let mut s = AdamState::new(AdamConfig::default(), &[2]);
        s.step(&mut [&mut p], &[Tensor::zeros(&[2])]).unwrap();
        assert_eq!(p.data(), &[1.0, -2.0]);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = Tensor::vector(vec![1.0, 1.0, 1.0]);
        let cfg = AdamConfig { learning_rate: 0.01, ..AdamConfig::default() };
        let mut s = AdamState::new(cfg, &[3]);
        s.step(&mut [&mut p], &[Tensor::vector(vec![3.0, -0.2, 50.0])]).unwrap();
        for (x, sign) in p.data().iter().zip([1.0, -1.0, 1.0]) {
            assert!((x - (1.0 - 0.01 * sign)).abs() < 1e-8, "{x}");
        }
    }

    #[test]
    fn minimizes_a_parabola() {
        let cfg = AdamConfig { learning_rate: 0.1, ..AdamConfig::default() };
        let mut p = Tensor::vector(vec![1.0]);
        let mut s = AdamState::new(cfg.clone(), &[1]);
        for _ in 0..100 {
            let g = Tensor::vector(vec![2.0 * p.data()[0]]);
            s.step(&mut [&mut p], &[g]).unwrap();
        }

        // the scalar recurrence written out independently
        let (mut x, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for t in 1..=100 {
            let g = 2.0 * x;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            x -= 0.1 * mh / (vh.sqrt() + 1e-8);
        }
        assert!(x.abs() < 0.1, "{x}");
        assert!((p.data()[0] - x).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch() {
        let mut p = Tensor::vector(vec![1.0, 2.0]);
        let mut s = AdamState::new(AdamConfig::default(), &[2]);
        assert!(matches!(s.step(&mut [&mut p], &[Tensor::zeros(&[3])]), Err(Error::Shape(_))));
        assert_eq!(s.step, 0);
    }
}
