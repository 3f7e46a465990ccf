//! Adam with a step learning-rate schedule.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

/// Learning rate multiplied by `factor` at every milestone epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDecay {
    pub base: f64,
    pub factor: f64,
    pub milestones: Vec<usize>,
}

impl StepDecay {
    pub fn at(&self, epoch: usize) -> f64 {
        let drops = self.milestones.iter().filter(|&&m| epoch >= m).count();
        self.base * libm::pow(self.factor, drops as f64)
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: BTreeMap::new(),
        }
    }
}

impl Adam {
    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Updates every parameter that has a gradient; others are untouched.
    pub fn step(&mut self, store: &mut ParamStore, grads: &BTreeMap<String, Tensor>, lr: f64) -> Result<()> {
        self.step += 1;
        let t = self.step as f64;
        let c1 = 1.0 - libm::pow(self.beta1, t);
        let c2 = 1.0 - libm::pow(self.beta2, t);
        for (name, g) in grads {
            let p = store
                .param_mut(name)
                .ok_or_else(|| Error::invalid("optimizer", alloc::format!("gradient for unknown `{name}`")))?;
            if p.len() != g.len() {
                return Err(Error::shape("Adam::step", alloc::format!("`{name}` gradient size")));
            }
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (alloc::vec![0.0; g.len()], alloc::vec![0.0; g.len()]));
            for (((w, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                *w -= lr * (*mi / c1) / (libm::sqrt(*vi / c2) + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_drops_at_milestones() {
        let s = StepDecay {
            base: 2e-4,
            factor: 0.1,
            milestones: alloc::vec![10],
        };
        assert_eq!(s.at(0), 2e-4);
        assert_eq!(s.at(9), 2e-4);
        assert!((s.at(10) - 2e-5).abs() < 1e-18);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut store = ParamStore::new();
        store.insert_param("w", Tensor::new(&[2], alloc::vec![1.0, -1.0]).unwrap());
        let mut grads = BTreeMap::new();
        grads.insert(String::from("w"), Tensor::new(&[2], alloc::vec![3.0, -0.5]).unwrap());
        Adam::default().step(&mut store, &grads, 0.1).unwrap();
        let w = store.param("w").unwrap().data();
        assert!((w[0] - 0.9).abs() < 1e-6 && (w[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut store = ParamStore::new();
        store.insert_param("w", Tensor::new(&[1], alloc::vec![5.0]).unwrap());
        let mut adam = Adam::default();
        for _ in 0..2000 {
            let w = store.param("w").unwrap().data()[0];
            let mut grads = BTreeMap::new();
            grads.insert(
                String::from("w"),
                Tensor::new(&[1], alloc::vec![2.0 * (w - 2.0)]).unwrap(),
            );
            adam.step(&mut store, &grads, 0.05).unwrap();
        }
        assert!((store.param("w").unwrap().data()[0] - 2.0).abs() < 1e-3);
    }
}
