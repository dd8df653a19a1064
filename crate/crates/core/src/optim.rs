//! Adam with optional per-group learning rates.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::params::{ModelParams, ParamError};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; `0` disables clipping.
    #[serde(default)]
    pub clip_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 1.0,
        }
    }
}

/// Parameters sharing one learning-rate multiplier.
#[derive(Clone, Debug)]
pub struct ParamGroup {
    pub names: BTreeSet<String>,
    pub lr_scale: f64,
}

pub struct Adam {
    cfg: AdamConfig,
    groups: Vec<ParamGroup>,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
    t: u64,
}

impl Adam {
    /// Single group holding every parameter.
    pub fn new(cfg: AdamConfig, params: &ModelParams) -> Self {
        let group = ParamGroup {
            names: params.names().map(str::to_string).collect(),
            lr_scale: 1.0,
        };
        Self::with_groups(cfg, vec![group], params).expect("single group covers all names")
    }

    /// Every parameter must appear in exactly one group.
    pub fn with_groups(
        cfg: AdamConfig,
        groups: Vec<ParamGroup>,
        params: &ModelParams,
    ) -> Result<Self, ParamError> {
        let mut seen = BTreeSet::new();
        for g in &groups {
            for n in &g.names {
                params.get(n)?;
                if !seen.insert(n.clone()) {
                    return Err(ParamError::Duplicate(n.clone()));
                }
            }
        }
        if let Some(missing) = params.names().find(|n| !seen.contains(*n)) {
            return Err(ParamError::Unknown(format!(
                "{missing} (in no optimizer group)"
            )));
        }
        Ok(Self {
            cfg,
            groups,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
            t: 0,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Applies one update from the accumulated gradients, then zeroes them.
    pub fn step(&mut self, params: &mut ModelParams) {
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - self.cfg.beta1.powi(t);
        let bc2 = 1.0 - self.cfg.beta2.powi(t);

        let mut clip = 1.0;
        if self.cfg.clip_norm > 0.0 {
            let norm = params
                .entries_and_grads_mut()
                .map(|(_, _, g)| g.data().iter().map(|x| x * x).sum::<f64>())
                .sum::<f64>()
                .sqrt();
            if norm > self.cfg.clip_norm {
                clip = self.cfg.clip_norm / norm;
            }
        }

        let lr_of: BTreeMap<&str, f64> = self
            .groups
            .iter()
            .flat_map(|g| g.names.iter().map(move |n| (n.as_str(), g.lr_scale)))
            .collect();
        let (b1, b2, eps) = (self.cfg.beta1, self.cfg.beta2, self.cfg.eps);
        for (name, value, grad) in params.entries_and_grads_mut() {
            let lr = self.cfg.lr * lr_of.get(name.as_str()).copied().unwrap_or(1.0);
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; grad.len()]);
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; grad.len()]);
            for (((p, &g), mi), vi) in value
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                let g = g * clip;
                *mi = b1 * *mi + (1.0 - b1) * g;
                *vi = b2 * *vi + (1.0 - b2) * g * g;
                *p -= lr * (*mi / bc1) / ((*vi / bc2).sqrt() + eps);
            }
        }
        params.zero_grad();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::tensor::Tensor;

    #[test]
    fn minimizes_quadratic() {
        let mut p = ModelParams::new(0);
        p.insert("x", Tensor::scalar(3.0)).unwrap();
        let mut opt = Adam::new(
            AdamConfig {
                lr: 0.1,
                ..AdamConfig::default()
            },
            &p,
        );
        for _ in 0..500 {
            let tape = Tape::new();
            let b = p.bind(&tape);
            let loss = b.get("x").unwrap().square().sum();
            let g = tape.backward(loss).unwrap();
            p.accumulate(&b, &g).unwrap();
            opt.step(&mut p);
        }
        assert!(p.get("x").unwrap().data()[0].abs() < 1e-2);
    }

    #[test]
    fn groups_must_cover_exactly_once() {
        let mut p = ModelParams::new(0);
        p.insert("a", Tensor::scalar(1.0)).unwrap();
        p.insert("b", Tensor::scalar(1.0)).unwrap();
        let only_a = ParamGroup {
            names: ["a".to_string()].into(),
            lr_scale: 1.0,
        };
        assert!(Adam::with_groups(AdamConfig::default(), vec![only_a.clone()], &p).is_err());
        assert!(
            Adam::with_groups(AdamConfig::default(), vec![only_a.clone(), only_a], &p).is_err()
        );
    }
}
