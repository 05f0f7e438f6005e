//! Adaptive moments with decoupled weight decay.

use super::{Dense, PolicyNet};

#[derive(Clone, Debug)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64, params: usize) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: vec![0.0; params],
            v: vec![0.0; params],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update. Parameters are rounded to f32 afterwards so that
    /// checkpoints store them exactly.
    pub fn step(&mut self, net: &mut PolicyNet, grad: &PolicyNet) {
        self.step_layers(net.layers_mut(), grad.layers());
    }

    /// Same update over any list of layers with matching gradients.
    pub fn step_layers(&mut self, layers: Vec<&mut Dense>, grads: Vec<&Dense>) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let mut i = 0;
        for (layer, g) in layers.into_iter().zip(grads) {
            for (p, g) in layer.values_mut().zip(g.values()) {
                let m = &mut self.m[i];
                let v = &mut self.v[i];
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let update = (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
                let decayed = *p - self.lr * self.weight_decay * *p;
                *p = f64::from((decayed - self.lr * update) as f32);
                i += 1;
            }
        }
    }
}
