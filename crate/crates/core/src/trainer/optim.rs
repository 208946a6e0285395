//! AdamW with decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::par::Execution;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWParams {
    fn default() -> Self {
        AdamWParams {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamW {
    hp: AdamWParams,
    /// First and second moment per parameter.
    moments: Vec<[f64; 2]>,
    t: u64,
}

const CHUNK: usize = 1 << 14;

impl AdamW {
    pub fn new(n: usize, hp: AdamWParams) -> Self {
        AdamW {
            hp,
            moments: vec![[0.0; 2]; n],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update: `p ← p(1 − lr·wd) − lr · m̂ / (√v̂ + eps)`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64, exec: Execution) {
        assert_eq!(params.len(), grad.len());
        self.t += 1;
        let hp = self.hp;
        let bc1 = 1.0 - hp.beta1.powi(self.t as i32);
        let bc2 = 1.0 - hp.beta2.powi(self.t as i32);
        exec.for_each_zip_chunk_mut(params, &mut self.moments, CHUNK, |off, ps, ms| {
            for (k, (p, mv)) in ps.iter_mut().zip(ms.iter_mut()).enumerate() {
                let g = grad[off + k];
                mv[0] = hp.beta1 * mv[0] + (1.0 - hp.beta1) * g;
                mv[1] = hp.beta2 * mv[1] + (1.0 - hp.beta2) * g * g;
                let m_hat = mv[0] / bc1;
                let v_hat = mv[1] / bc2;
                *p *= 1.0 - lr * hp.weight_decay;
                *p -= lr * m_hat / (v_hat.sqrt() + hp.eps);
            }
        });
    }
}
