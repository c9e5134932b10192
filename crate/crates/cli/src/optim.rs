//! Adam optimizer and the exponential learning-rate schedule.

use adaradar_core::error::Result;
use adaradar_core::params::ParamSet;
use adaradar_core::tensor::Tensor;

pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u32,
}

impl Adam {
    pub fn new(params: &ParamSet) -> Self {
        let sizes: Vec<usize> = params.iter().map(|p| p.value.numel()).collect();
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    /// One update over every parameter; `grads` is parallel to the registry
    /// order and `None` entries are treated as zero gradients.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Option<Tensor>], lr: f64) -> Result<()> {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let numel = params.entry(i).value.numel();
            let mut data = params.entry(i).value.data().to_vec();
            let shape = params.entry(i).value.shape().to_vec();
            for e in 0..numel {
                let g = grads[i].as_ref().map(|t| t.data()[e]).unwrap_or(0.0);
                self.m[i][e] = self.beta1 * self.m[i][e] + (1.0 - self.beta1) * g;
                self.v[i][e] = self.beta2 * self.v[i][e] + (1.0 - self.beta2) * g * g;
                let mh = self.m[i][e] / bc1;
                let vh = self.v[i][e] / bc2;
                data[e] -= lr * mh / (vh.sqrt() + self.eps);
            }
            params.set_by_index(i, Tensor::new(shape, data)?)?;
        }
        Ok(())
    }
}

/// lr(epoch) = lr0 * gamma^floor(epoch / step).
pub fn scheduled_lr(lr0: f64, gamma: f64, step: usize, epoch: usize) -> f64 {
    lr0 * gamma.powi((epoch / step) as i32)
}
