use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use ndarray::ArrayD;

use crate::autograd::{Grads, Param};
use crate::error::{Error, Result};
use crate::networks::weights;

#[derive(Debug, Clone, PartialEq)]
struct Slot {
    m: ArrayD<f32>,
    v: ArrayD<f32>,
    t: u64,
}

/// Adam with bias correction, keyed by parameter name.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    slots: BTreeMap<String, Slot>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            slots: BTreeMap::new(),
        }
    }

    /// Updates every trainable parameter that has a gradient. Parameters
    /// without one keep their value and moments.
    pub fn step(&mut self, params: Vec<&mut Param<f32>>, grads: &Grads<f32>) {
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        for p in params {
            if !p.is_trainable() {
                continue;
            }
            let Some(g) = grads.param(p) else { continue };
            let slot = self.slots.entry(p.name().to_string()).or_insert_with(|| Slot {
                m: ArrayD::zeros(g.raw_dim()),
                v: ArrayD::zeros(g.raw_dim()),
                t: 0,
            });
            slot.t += 1;
            let bc1 = 1.0 - self.beta1.powi(slot.t as i32);
            let bc2 = 1.0 - self.beta2.powi(slot.t as i32);
            let step = (self.lr / bc1) as f32;
            let bc2_sqrt = bc2.sqrt() as f32;
            let eps = self.eps as f32;
            ndarray::Zip::from(p.value_mut())
                .and(&mut slot.m)
                .and(&mut slot.v)
                .and(g)
                .for_each(|w, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *w -= step * *m / (v.sqrt() / bc2_sqrt + eps);
                });
        }
    }

    /// Number of updates applied to the parameter called `name`.
    pub fn steps_of(&self, name: &str) -> u64 {
        self.slots.get(name).map_or(0, |s| s.t)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut names = Vec::with_capacity(2 * self.slots.len());
        for (k, s) in &self.slots {
            names.push((format!("m.{k}"), &s.m));
            names.push((format!("v.{k}"), &s.v));
        }
        let tensors: Vec<(&str, &ArrayD<f32>)> = names.iter().map(|(n, a)| (n.as_str(), *a)).collect();
        let meta: HashMap<String, String> = self
            .slots
            .iter()
            .map(|(k, s)| (format!("t.{k}"), s.t.to_string()))
            .collect();
        let bytes = weights::to_bytes(&tensors, Some(meta))?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    /// Restores moments written by [`Adam::save`]; hyper-parameters are kept.
    pub fn load(&mut self, path: &Path) -> Result<()> {
        let mut tensors = weights::read_all::<f32>(path)?;
        let meta = weights::read_metadata(path)?;
        let mut slots = BTreeMap::new();
        for (key, t) in meta {
            let Some(name) = key.strip_prefix("t.") else { continue };
            let t: u64 = t
                .parse()
                .map_err(|_| Error::Checkpoint(format!("{}: bad step count for '{name}'", path.display())))?;
            let take = |tensors: &mut BTreeMap<String, ArrayD<f32>>, k: String| {
                tensors
                    .remove(&k)
                    .ok_or_else(|| Error::Checkpoint(format!("{}: missing tensor '{k}'", path.display())))
            };
            let m = take(&mut tensors, format!("m.{name}"))?;
            let v = take(&mut tensors, format!("v.{name}"))?;
            slots.insert(name.to_string(), Slot { m, v, t });
        }
        self.slots = slots;
        Ok(())
    }
}
