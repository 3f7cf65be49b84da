use serde::{Deserialize, Serialize};

use crate::tensor::{Gradients, ParamSet, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Sgd,
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First-order optimizer state over a [`ParamSet`]. Parameters missing from
/// a step's gradients are treated as having zero gradient.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    step: u64,
    moments: Vec<(Tensor, Tensor)>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, params: &ParamSet) -> Self {
        let moments = match kind {
            OptimizerKind::Adam { .. } => params
                .iter()
                .map(|(_, p)| (Tensor::zeros(p.value.shape()), Tensor::zeros(p.value.shape())))
                .collect(),
            OptimizerKind::Sgd => Vec::new(),
        };
        Optimizer {
            kind,
            lr,
            step: 0,
            moments,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &Gradients) {
        self.step += 1;
        let mut dense: Vec<Option<&Tensor>> = vec![None; params.len()];
        for (id, g) in grads.iter() {
            dense[id.index()] = Some(g);
        }
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(dense) {
                    if let Some(g) = g {
                        p.value.add_assign_scaled(g, -self.lr);
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let t = self.step as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for ((p, g), (m, v)) in params.iter_mut().zip(dense).zip(&mut self.moments) {
                    let values = p.value.data_mut();
                    let (m, v) = (m.data_mut(), v.data_mut());
                    for i in 0..values.len() {
                        let gi = g.map_or(0.0, |g| g.data()[i]);
                        m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                        v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                        let update = (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                        values[i] -= self.lr * update;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;

    fn quadratic(params: &ParamSet) -> Gradients {
        let mut tape = Tape::with_params(params);
        let x = tape.param(params.id("x").unwrap());
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq);
        tape.backward(loss).unwrap()
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut params = ParamSet::new();
        params.add("x", Tensor::vector(vec![0.0, 0.0])).unwrap();
        let before = params.clone();
        let mut opt = Optimizer::new(OptimizerKind::default(), 0.1, &params);
        for _ in 0..3 {
            let g = quadratic(&params);
            opt.step(&mut params, &g);
        }
        assert_eq!(params, before);
    }

    #[test]
    fn adam_and_sgd_descend() {
        for kind in [OptimizerKind::default(), OptimizerKind::Sgd] {
            let mut params = ParamSet::new();
            params.add("x", Tensor::vector(vec![1.0, -2.0])).unwrap();
            let mut opt = Optimizer::new(kind, 0.05, &params);
            for _ in 0..200 {
                let g = quadratic(&params);
                opt.step(&mut params, &g);
            }
            assert!(params.by_name("x").unwrap().value.norm() < 0.1, "{kind:?}");
        }
    }

    #[test]
    fn first_adam_step_moves_by_learning_rate() {
        let mut params = ParamSet::new();
        params.add("x", Tensor::vector(vec![3.0])).unwrap();
        let mut opt = Optimizer::new(OptimizerKind::default(), 0.01, &params);
        let g = quadratic(&params);
        opt.step(&mut params, &g);
        let x = params.by_name("x").unwrap().value.data()[0];
        assert!((x - 2.99).abs() < 1e-8, "{x}");
    }
}
