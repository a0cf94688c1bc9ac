use crate::model::{OptimizerState, ParamStore};
use crate::tensor::Tensor;

/// Adam with global gradient-norm clipping.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip: f64,
    pub state: OptimizerState,
}

impl Adam {
    pub fn new(params: &ParamStore, lr: f64, clip: f64) -> Self {
        let zeros: Vec<Tensor> = params
            .tensors()
            .iter()
            .map(|t| Tensor::zeros(t.dims()))
            .collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip,
            state: OptimizerState {
                step: 0,
                m: zeros.clone(),
                v: zeros,
            },
        }
    }

    /// Applies one update. `grads[i]` is `None` for unused parameters.
    /// Returns the gradient norm before clipping.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Option<Tensor>]) -> f64 {
        let norm = grads
            .iter()
            .flatten()
            .map(|g| g.data().iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt();
        let scale = if self.clip > 0.0 && norm > self.clip {
            self.clip / norm
        } else {
            1.0
        };
        self.state.step += 1;
        let t = self.state.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            let (m, v) = (&mut self.state.m[i], &mut self.state.v[i]);
            let p = params.get_mut(i);
            for (((p, m), v), &g) in p
                .data_mut()
                .iter_mut()
                .zip(m.data_mut())
                .zip(v.data_mut())
                .zip(g.data())
            {
                let g = g * scale;
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
            }
        }
        norm
    }
}
