//! SGD with momentum for the feature path and Adam for the adversarial path.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::nets::{ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerKind {
    Sgd { momentum: f64, weight_decay: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

/// Per-parameter optimizer state keyed by parameter name.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    steps: BTreeMap<String, u64>,
    first: BTreeMap<String, Tensor>,
    second: BTreeMap<String, Tensor>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind) -> Self {
        Optimizer {
            kind,
            steps: BTreeMap::new(),
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    /// Apply one update with learning rate `lr` to every `(param, grad)`.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[(ParamId, Tensor)], lr: f64) {
        for (id, g) in grads {
            let name = store.entry(*id).name.clone();
            let p = store.value_mut(*id);
            match self.kind {
                OptimizerKind::Sgd { momentum, weight_decay } => {
                    let v = self.first.entry(name).or_insert_with(|| Tensor::zeros(g.shape()));
                    for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                        let d = gv + weight_decay * *pv;
                        *vv = momentum * *vv + d;
                        *pv -= lr * *vv;
                    }
                }
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let t = self.steps.entry(name.clone()).or_insert(0);
                    *t += 1;
                    let bc1 = 1.0 - beta1.powi(*t as i32);
                    let bc2 = 1.0 - beta2.powi(*t as i32);
                    let m = self.first.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.shape()));
                    let v = self.second.entry(name).or_insert_with(|| Tensor::zeros(g.shape()));
                    for (((pv, &gv), mv), vv) in
                        p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut())
                    {
                        *mv = beta1 * *mv + (1.0 - beta1) * gv;
                        *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                        let mh = *mv / bc1;
                        let vh = *vv / bc2;
                        *pv -= lr * mh / (vh.sqrt() + eps);
                    }
                }
            }
        }
    }

    /// Flatten the state into named arrays for a checkpoint.
    pub fn state_arrays(&self, prefix: &str) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (k, t) in &self.first {
            out.push((format!("{prefix}/m/{k}"), t.clone()));
        }
        for (k, t) in &self.second {
            out.push((format!("{prefix}/v/{k}"), t.clone()));
        }
        for (k, &s) in &self.steps {
            out.push((format!("{prefix}/t/{k}"), Tensor::new(vec![1], vec![s as f64])));
        }
        out
    }

    pub fn load_state(&mut self, prefix: &str, arrays: &[(String, Tensor)]) -> Result<()> {
        self.first.clear();
        self.second.clear();
        self.steps.clear();
        let head = format!("{prefix}/");
        for (name, t) in arrays {
            let Some(rest) = name.strip_prefix(&head) else { continue };
            match rest.split_once('/') {
                Some(("m", k)) => {
                    self.first.insert(k.to_string(), t.clone());
                }
                Some(("v", k)) => {
                    self.second.insert(k.to_string(), t.clone());
                }
                Some(("t", k)) => {
                    self.steps.insert(k.to_string(), t.item() as u64);
                }
                _ => return Err(Error::Checkpoint(format!("unknown optimizer array {name}"))),
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{init_models, NetConfig, ParamGroup, Variant};

    fn bundle() -> crate::nets::ModelBundle {
        init_models(
            &NetConfig {
                variant: Variant::Basel,
                ..NetConfig::default()
            },
            0,
        )
        .unwrap()
    }

    #[test]
    fn sgd_matches_hand_update() {
        let mut m = bundle();
        let id = m.store.find("embedder.b").unwrap();
        m.store.set(id, Tensor::full(&[64], 1.0));
        let g = Tensor::full(&[64], 0.5);
        let mut opt = Optimizer::new(OptimizerKind::Sgd {
            momentum: 0.9,
            weight_decay: 0.1,
        });
        opt.step(&mut m.store, &[(id, g.clone())], 0.2);
        // v = 0.5 + 0.1 * 1 = 0.6, p = 1 - 0.2 * 0.6
        assert!((m.store.value(id).data()[0] - 0.88).abs() < 1e-15);
        opt.step(&mut m.store, &[(id, g)], 0.2);
        // v = 0.9 * 0.6 + 0.5 + 0.1 * 0.88
        let v = 0.9 * 0.6 + 0.5 + 0.088;
        assert!((m.store.value(id).data()[0] - (0.88 - 0.2 * v)).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut m = bundle();
        let id = m.store.find("embedder.b").unwrap();
        let before = m.store.value(id).data()[3];
        let mut opt = Optimizer::new(OptimizerKind::Adam {
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        });
        opt.step(&mut m.store, &[(id, Tensor::full(&[64], -3.0))], 0.01);
        assert!((m.store.value(id).data()[3] - before - 0.01).abs() < 1e-9);
    }

    #[test]
    fn state_round_trip() {
        let mut m = bundle();
        let ids: Vec<_> = m.store.ids().filter(|i| m.store.entry(*i).group == ParamGroup::Heads).collect();
        let grads: Vec<_> = ids
            .iter()
            .filter(|i| m.store.entry(**i).trainable)
            .map(|&i| (i, Tensor::full(m.store.value(i).shape(), 0.1)))
            .collect();
        let mut opt = Optimizer::new(OptimizerKind::Adam {
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        });
        opt.step(&mut m.store, &grads, 0.01);
        let arrays = opt.state_arrays("gan");
        let mut back = Optimizer::new(opt.kind);
        back.load_state("gan", &arrays).unwrap();
        assert_eq!(back, opt);
    }
}
