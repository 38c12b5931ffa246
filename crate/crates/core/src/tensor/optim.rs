use serde::{Deserialize, Serialize};

use super::ParamSet;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First-order optimizer over every tensor of a [`ParamSet`].
///
/// `step` consumes the gradients stored in the set and zeroes them.
#[derive(Clone, Debug)]
pub enum Optimizer {
    Sgd {
        lr: f64,
    },
    Adam {
        config: AdamConfig,
        t: u64,
        m: Vec<Vec<f64>>,
        v: Vec<Vec<f64>>,
    },
}

impl Optimizer {
    pub fn sgd(lr: f64) -> Self {
        Optimizer::Sgd { lr }
    }

    pub fn adam(config: AdamConfig, params: &ParamSet) -> Self {
        let zeros: Vec<Vec<f64>> = params.ids().map(|id| vec![0.0; params.value(id).len()]).collect();
        Optimizer::Adam {
            config,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, params: &mut ParamSet) {
        let ids: Vec<_> = params.ids().collect();
        match self {
            Optimizer::Sgd { lr } => {
                for id in ids {
                    let g = params.grad(id).data().to_vec();
                    for (w, g) in params.value_mut(id).data_mut().iter_mut().zip(g) {
                        *w -= *lr * g;
                    }
                }
            }
            Optimizer::Adam { config, t, m, v } => {
                *t += 1;
                let c1 = 1.0 - config.beta1.powi(*t as i32);
                let c2 = 1.0 - config.beta2.powi(*t as i32);
                for id in ids {
                    let i = id.index();
                    let g = params.grad(id).data().to_vec();
                    let w = params.value_mut(id).data_mut();
                    for k in 0..g.len() {
                        // Untouched entries keep zero moments and do not move.
                        if g[k] == 0.0 && m[i][k] == 0.0 && v[i][k] == 0.0 {
                            continue;
                        }
                        m[i][k] = config.beta1 * m[i][k] + (1.0 - config.beta1) * g[k];
                        v[i][k] = config.beta2 * v[i][k] + (1.0 - config.beta2) * g[k] * g[k];
                        let mh = m[i][k] / c1;
                        let vh = v[i][k] / c2;
                        w[k] -= config.lr * mh / (vh.sqrt() + config.eps);
                    }
                }
            }
        }
        params.zero_grads();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn one_param(w: f64, g: f64) -> ParamSet {
        let mut p = ParamSet::new();
        let id = p.add("w", Tensor::scalar(w)).unwrap();
        p.grad_mut(id).data_mut()[0] = g;
        p
    }

    #[test]
    fn sgd_arithmetic() {
        let mut p = one_param(1.0, 1.0);
        Optimizer::sgd(0.1).step(&mut p);
        let id = p.id("w").unwrap();
        assert!((p.value(id).data()[0] - 0.9).abs() < 1e-15);
        assert_eq!(p.grad(id).data()[0], 0.0);
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        for mut opt in [
            Optimizer::sgd(0.5),
            Optimizer::adam(AdamConfig::default(), &one_param(0.0, 0.0)),
        ] {
            let mut p = one_param(3.25, 0.0);
            opt.step(&mut p);
            assert_eq!(p.value(p.id("w").unwrap()).data()[0], 3.25);
        }
    }

    #[test]
    fn adam_first_step_moves_by_lr_against_gradient() {
        // At t=1 the bias-corrected moments are g and g^2, so the update is
        // lr * g / (|g| + eps).
        for g in [2.0, -0.03, 1e3] {
            let mut p = one_param(1.0, g);
            let cfg = AdamConfig::default();
            let mut opt = Optimizer::adam(cfg, &p);
            opt.step(&mut p);
            let w = p.value(p.id("w").unwrap()).data()[0];
            let expected = 1.0 - cfg.lr * g / (g.abs() + cfg.eps);
            assert!((w - expected).abs() < 1e-15, "g={g}: {w} vs {expected}");
            assert!((1.0 - w).signum() == g.signum());
            assert!(((1.0 - w).abs() - cfg.lr).abs() < 1e-6);
        }
    }
}
