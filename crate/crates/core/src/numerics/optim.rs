//! First-order optimizers over flat parameter slots.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum OptimizerKind {
    Sgd,
    Momentum { beta: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sgd" => Some(OptimizerKind::Sgd),
            "momentum" => Some(OptimizerKind::Momentum { beta: 0.9 }),
            "adam" => Some(OptimizerKind::adam()),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Momentum { .. } => "momentum",
            OptimizerKind::Adam { .. } => "adam",
        }
    }
}

#[derive(Clone, Debug, Default)]
struct SlotState {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Holds per-slot state; a slot is one parameter tensor. Call
/// [`Optimizer::begin_step`] once per minibatch before updating slots.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    t: u64,
    slots: Vec<SlotState>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Self {
            kind,
            lr,
            t: 0,
            slots: Vec::new(),
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn begin_step(&mut self) {
        self.t += 1;
    }

    pub fn update(&mut self, slot: usize, params: &mut [f64], grads: &[f64]) {
        debug_assert_eq!(params.len(), grads.len());
        self.update_range(slot, params.len(), 0, params, grads);
    }

    /// Update only the listed rows of a row-major matrix of `width`-wide
    /// rows. `grads[i]` is the gradient of row `rows[i]`. State of other rows
    /// is left untouched.
    pub fn update_rows(&mut self, slot: usize, params: &mut [f64], width: usize, rows: &[usize], grads: &[Vec<f64>]) {
        let total = params.len();
        for (&r, g) in rows.iter().zip(grads) {
            let range = r * width..(r + 1) * width;
            self.update_range(slot, total, range.start, &mut params[range], g);
        }
    }

    fn update_range(&mut self, slot: usize, total: usize, start: usize, params: &mut [f64], grads: &[f64]) {
        if self.slots.len() <= slot {
            self.slots.resize_with(slot + 1, SlotState::default);
        }
        let lr = self.lr;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    *p -= lr * g;
                }
            }
            OptimizerKind::Momentum { beta } => {
                let st = &mut self.slots[slot];
                if st.m.len() != total {
                    st.m = vec![0.0; total];
                }
                let m = &mut st.m[start..start + params.len()];
                for ((p, g), m) in params.iter_mut().zip(grads).zip(m.iter_mut()) {
                    *m = beta * *m + g;
                    *p -= lr * *m;
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let t = self.t.max(1) as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                let st = &mut self.slots[slot];
                if st.m.len() != total {
                    st.m = vec![0.0; total];
                    st.v = vec![0.0; total];
                }
                for i in 0..params.len() {
                    let g = grads[i];
                    let (m, v) = (&mut st.m[start + i], &mut st.v[start + i]);
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let mh = *m / c1;
                    let vh = *v / c2;
                    params[i] -= lr * mh / (vh.sqrt() + eps);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimize(kind: OptimizerKind, lr: f64) -> f64 {
        let mut opt = Optimizer::new(kind, lr);
        let mut x = vec![3.0, -2.0];
        for _ in 0..500 {
            opt.begin_step();
            let g = x.clone();
            opt.update(0, &mut x, &g);
        }
        x.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }

    #[test]
    fn all_kinds_minimize_a_quadratic() {
        assert!(minimize(OptimizerKind::Sgd, 0.1) < 1e-6);
        assert!(minimize(OptimizerKind::Momentum { beta: 0.9 }, 0.05) < 1e-3);
        assert!(minimize(OptimizerKind::adam(), 0.05) < 1e-2);
    }

    #[test]
    fn row_updates_match_dense_updates_on_those_rows() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::Momentum { beta: 0.9 }, OptimizerKind::adam()] {
            let mut dense = Optimizer::new(kind, 0.1);
            let mut sparse = Optimizer::new(kind, 0.1);
            let mut a: Vec<f64> = (0..12).map(|i| i as f64 * 0.1).collect();
            let mut b = a.clone();
            for step in 0..5 {
                let g: Vec<f64> = (0..12).map(|i| if (4..8).contains(&i) { (i + step) as f64 } else { 0.0 }).collect();
                dense.begin_step();
                sparse.begin_step();
                dense.update(0, &mut a, &g);
                sparse.update_rows(0, &mut b, 4, &[1], &[g[4..8].to_vec()]);
            }
            assert_eq!(a, b, "{kind:?}");
        }
    }

    #[test]
    fn zero_gradient_leaves_adam_params_fixed() {
        let mut opt = Optimizer::new(OptimizerKind::adam(), 0.05);
        let mut x = vec![1.25, -0.5];
        for _ in 0..10 {
            opt.begin_step();
            opt.update(3, &mut x, &[0.0, 0.0]);
        }
        assert_eq!(x, vec![1.25, -0.5]);
    }
}
