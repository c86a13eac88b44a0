use serde::{Deserialize, Serialize};

use crate::model::ModelParameters;

/// Adam moments with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<f32>,
    v: Vec<f32>,
    decay: Vec<bool>,
    step: u64,
}

impl AdamW {
    /// Weight decay applies to matrices only, never to biases, norm gains or
    /// the null context vector.
    pub fn new(params: &ModelParameters<f32>, beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        let mut decay = vec![false; params.data.len()];
        for t in &params.layout.tensors {
            if t.is_matrix() {
                decay[t.offset..t.offset + t.len()].fill(true);
            }
        }
        AdamW {
            beta1,
            beta2,
            eps,
            weight_decay,
            m: vec![0.0; params.data.len()],
            v: vec![0.0; params.data.len()],
            decay,
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, params: &mut [f32], grad: &[f32], lr: f64) {
        self.step += 1;
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        let step_size = (lr * c2.sqrt() / c1) as f32;
        let eps = (self.eps * c2.sqrt()) as f32;
        let decay = (lr * self.weight_decay) as f32;
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            if self.decay[i] {
                params[i] -= decay * params[i];
            }
            params[i] -= step_size * self.m[i] / (self.v[i].sqrt() + eps);
        }
    }
}

/// Linear warmup followed by inverse-square-root decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub peak_lr: f64,
    pub warmup_steps: u64,
}

impl Schedule {
    pub fn new(peak_lr: f64, total_steps: u64, warmup_frac: f64) -> Self {
        let warmup_steps = ((total_steps as f64 * warmup_frac).round() as u64).max(1);
        Schedule { peak_lr, warmup_steps }
    }

    /// Learning rate for the 1-based step `t`.
    pub fn lr(&self, t: u64) -> f64 {
        let t = t.max(1) as f64;
        let w = self.warmup_steps as f64;
        if t <= w {
            self.peak_lr * t / w
        } else {
            self.peak_lr * (w / t).sqrt()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ArchConfig;

    #[test]
    fn schedule_shape() {
        let s = Schedule::new(1e-3, 100, 0.04);
        assert_eq!(s.warmup_steps, 4);
        assert!((s.lr(1) - 2.5e-4).abs() < 1e-12);
        assert!((s.lr(4) - 1e-3).abs() < 1e-12);
        assert!((s.lr(16) - 5e-4).abs() < 1e-12);
        assert_eq!(Schedule::new(1e-3, 3, 0.04).warmup_steps, 1);
    }

    #[test]
    fn adam_first_step_is_lr_sized_and_decay_skips_vectors() {
        let arch = ArchConfig::tiny_contextual(20, 16).as_base();
        let mut p = ModelParameters::<f32>::init(&arch, 1).unwrap();
        let before = p.data.clone();
        let grad: Vec<f32> = (0..p.data.len()).map(|i| if i % 2 == 0 { 0.3 } else { -2.0 }).collect();
        let mut opt = AdamW::new(&p, 0.9, 0.98, 1e-8, 0.0);
        opt.update(&mut p.data, &grad, 1e-2);
        for ((a, b), g) in p.data.iter().zip(&before).zip(&grad) {
            assert!(((b - a) - 1e-2 * g.signum()).abs() < 1e-5);
        }

        let mut q = ModelParameters::<f32>::init(&arch, 1).unwrap();
        q.named_mut("dec.ln_f.g").unwrap().fill(2.0);
        let zero = vec![0.0; q.data.len()];
        let mut opt = AdamW::new(&q, 0.9, 0.98, 1e-8, 0.5);
        let w_before = q.named("dec.tok_emb").unwrap()[0];
        opt.update(&mut q.data, &zero, 0.1);
        assert!(q.named("dec.ln_f.g").unwrap().iter().all(|&v| v == 2.0));
        assert!((q.named("dec.tok_emb").unwrap()[0] - w_before * 0.95).abs() < 1e-7);
    }
}
