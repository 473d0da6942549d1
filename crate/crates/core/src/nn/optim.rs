use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{NnError, Parameterized};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Rescale the whole gradient when its L2 norm exceeds this.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Adam with per-tensor moments keyed by parameter name, so parameter sets
/// that grow (new modules) keep the state of existing tensors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    moments: BTreeMap<String, Moments>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update. Tensors absent from `grads` are left alone, so a
    /// gradient set may cover a subset of the parameters. Rejects non-finite
    /// or mis-shaped gradients without touching `params` or the state.
    pub fn step<P: Parameterized>(&mut self, params: &mut P, grads: &P) -> Result<(), NnError> {
        let mut flat: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        let mut bad: Option<String> = None;
        let mut sq = 0.0;
        grads.visit(&mut |name, t| {
            if bad.is_none() && !t.data.iter().all(|v| v.is_finite()) {
                bad = Some(name.to_string());
            }
            sq += t.data.iter().map(|v| v * v).sum::<f64>();
            flat.insert(name.to_string(), t.data.clone());
        });
        if let Some(name) = bad {
            return Err(NnError::NonFinite(format!("gradient `{name}`")));
        }
        let mut found = 0;
        let mut mismatch: Option<String> = None;
        params.visit(&mut |name, t| {
            if let Some(g) = flat.get(name) {
                found += 1;
                if g.len() != t.len() && mismatch.is_none() {
                    mismatch = Some(name.to_string());
                }
            }
        });
        if let Some(name) = mismatch {
            return Err(NnError::Dimension(format!("gradient for `{name}` has the wrong length")));
        }
        if found != flat.len() {
            return Err(NnError::Dimension("gradient names a tensor the parameters lack".into()));
        }

        let scale = match self.config.clip_norm {
            Some(c) if sq.sqrt() > c => c / sq.sqrt(),
            _ => 1.0,
        };
        self.step += 1;
        let cfg = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        let moments = &mut self.moments;
        params.visit_mut(&mut |name, tensor| {
            let Some(g) = flat.get(name) else {
                return;
            };
            let slot = moments.entry(name.to_string()).or_insert_with(|| Moments {
                m: vec![0.0; g.len()],
                v: vec![0.0; g.len()],
            });
            if slot.m.len() != g.len() {
                *slot = Moments {
                    m: vec![0.0; g.len()],
                    v: vec![0.0; g.len()],
                };
            }
            for i in 0..g.len() {
                let gi = g[i] * scale;
                slot.m[i] = cfg.beta1 * slot.m[i] + (1.0 - cfg.beta1) * gi;
                slot.v[i] = cfg.beta2 * slot.v[i] + (1.0 - cfg.beta2) * gi * gi;
                let m_hat = slot.m[i] / bc1;
                let v_hat = slot.v[i] / bc2;
                tensor.data[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        });
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    #[derive(Clone)]
    struct One(Tensor);

    impl Parameterized for One {
        fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
            f("x", &self.0)
        }
        fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
            f("x", &mut self.0)
        }
    }

    fn one(v: Vec<f64>) -> One {
        One(Tensor {
            rows: v.len(),
            cols: 1,
            data: v,
        })
    }

    #[test]
    fn first_step_moves_by_lr() {
        // With bias correction the first update is lr * g / (|g| + eps).
        let mut p = one(vec![1.0, -2.0]);
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut p, &one(vec![4.0, -0.5])).unwrap();
        assert!((p.0.data[0] - (1.0 - 1e-3)).abs() < 1e-9);
        assert!((p.0.data[1] - (-2.0 + 1e-3)).abs() < 1e-9);
    }

    #[test]
    fn minimises_quadratic() {
        let mut p = one(vec![3.0, -4.0]);
        let mut adam = Adam::new(AdamConfig {
            lr: 0.05,
            ..AdamConfig::default()
        });
        for _ in 0..2000 {
            let g = one(p.0.data.iter().map(|x| 2.0 * x).collect());
            adam.step(&mut p, &g).unwrap();
        }
        assert!(p.0.data.iter().all(|x| x.abs() < 1e-2), "{:?}", p.0.data);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = one(vec![0.25, -7.5]);
        let mut adam = Adam::new(AdamConfig::default());
        for _ in 0..5 {
            adam.step(&mut p, &one(vec![0.0, 0.0])).unwrap();
        }
        assert_eq!(p.0.data, vec![0.25, -7.5]);
    }

    #[test]
    fn one_dimensional_quadratic_in_200_steps() {
        // f(p) = (p - 3)^2, minimiser 3.
        let mut p = one(vec![0.0]);
        let mut adam = Adam::new(AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        });
        for _ in 0..200 {
            let g = one(vec![2.0 * (p.0.data[0] - 3.0)]);
            adam.step(&mut p, &g).unwrap();
        }
        assert!((p.0.data[0] - 3.0).abs() < 1e-3, "{}", p.0.data[0]);
    }

    #[test]
    fn non_finite_gradient_is_rejected_untouched() {
        let mut p = one(vec![1.0, 2.0]);
        let mut adam = Adam::new(AdamConfig::default());
        let before = adam.clone();
        let err = adam.step(&mut p, &one(vec![f64::NAN, 1.0])).unwrap_err();
        assert!(matches!(err, NnError::NonFinite(_)));
        assert_eq!(p.0.data, vec![1.0, 2.0]);
        assert_eq!(adam, before);
        assert!(adam.step(&mut p, &one(vec![f64::INFINITY, 1.0])).is_err());
        assert_eq!(p.0.data, vec![1.0, 2.0]);
    }

    #[test]
    fn clipping_bounds_the_update_direction() {
        let mut p = one(vec![0.0]);
        let mut adam = Adam::new(AdamConfig {
            clip_norm: Some(1.0),
            ..AdamConfig::default()
        });
        adam.step(&mut p, &one(vec![1e6])).unwrap();
        assert!((p.0.data[0] + 1e-3).abs() < 1e-9);
    }
}
