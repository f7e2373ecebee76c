//! AdamW with decoupled weight decay.

use super::params::{ParamId, ParamStore};

#[derive(Clone, Copy, Debug)]
pub struct AdamWConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
}

impl AdamWConfig {
    pub fn new(lr: f32, beta1: f32, beta2: f32) -> Self {
        AdamWConfig {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

pub struct AdamW {
    pub cfg: AdamWConfig,
    t: u64,
    m: Vec<Option<Vec<f32>>>,
    v: Vec<Option<Vec<f32>>>,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig) -> Self {
        AdamW {
            cfg,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn set_lr(&mut self, lr: f32) {
        self.cfg.lr = lr;
    }

    fn slot<'a>(buf: &'a mut Vec<Option<Vec<f32>>>, id: ParamId, n: usize) -> &'a mut Vec<f32> {
        if buf.len() <= id.index() {
            buf.resize_with(id.index() + 1, || None);
        }
        buf[id.index()].get_or_insert_with(|| vec![0.0; n])
    }

    /// Apply one update. Only the parameters present in `grads` move, which
    /// is what enforces stage freezing at the optimizer level.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[(ParamId, Vec<f32>)]) {
        self.t += 1;
        let b1 = self.cfg.beta1;
        let b2 = self.cfg.beta2;
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        for (pid, g) in grads {
            let n = g.len();
            let m = Self::slot(&mut self.m, *pid, n);
            for (mv, &gv) in m.iter_mut().zip(g) {
                *mv = b1 * *mv + (1.0 - b1) * gv;
            }
            let v = Self::slot(&mut self.v, *pid, n);
            for (vv, &gv) in v.iter_mut().zip(g) {
                *vv = b2 * *vv + (1.0 - b2) * gv * gv;
            }
            let p = store.data_mut(*pid);
            debug_assert_eq!(p.len(), n, "grad size mismatch for param {}", pid.index());
            let m = self.m[pid.index()].as_ref().unwrap();
            let v = self.v[pid.index()].as_ref().unwrap();
            for i in 0..n {
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                let mut upd = self.cfg.lr * mhat / (vhat.sqrt() + self.cfg.eps);
                if self.cfg.weight_decay > 0.0 {
                    upd += self.cfg.lr * self.cfg.weight_decay * p[i];
                }
                p[i] -= upd;
            }
        }
    }
}
