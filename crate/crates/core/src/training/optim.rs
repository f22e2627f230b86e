use crate::error::{Error, Result};
use crate::model::{ParamSet, Scalar};
use ndarray::Zip;
use std::marker::PhantomData;

/// Adam with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamW<F, P> {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Learning-rate multipliers by tensor-name prefix; the longest matching
    /// prefix wins.
    group_scales: Vec<(String, f64)>,
    step: u64,
    m: P,
    v: P,
    scalar: PhantomData<F>,
}

impl<F: Scalar, P: ParamSet<F>> AdamW<F, P> {
    pub fn new(params: &P, lr: f64, weight_decay: f64) -> Self {
        AdamW {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            group_scales: Vec::new(),
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
            scalar: PhantomData,
        }
    }

    pub fn with_group_scale(mut self, prefix: impl Into<String>, scale: f64) -> Self {
        self.group_scales.push((prefix.into(), scale));
        self
    }

    fn scale_for(&self, name: &str) -> f64 {
        self.group_scales
            .iter()
            .filter(|(p, _)| name.starts_with(p.as_str()))
            .max_by_key(|(p, _)| p.len())
            .map_or(1.0, |(_, s)| *s)
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update. Non-finite gradients abort before anything is modified.
    pub fn step(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let grad_tensors = grads.tensors();
        if let Some((name, _)) = grad_tensors
            .iter()
            .find(|(_, g)| g.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::NonFiniteGradient {
                group: name.clone(),
            });
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (F::c(self.beta1), F::c(self.beta2));
        let c1 = F::c(1.0 - self.beta1.powi(t));
        let c2 = F::c(1.0 - self.beta2.powi(t));
        let eps = F::c(self.eps);
        let one = F::one();
        let rates: Vec<f64> = grad_tensors
            .iter()
            .map(|(name, _)| self.lr * self.scale_for(name))
            .collect();
        for (((((_, mut p), (_, g)), (_, mut m)), (_, mut v)), lr_t) in params
            .tensors_mut()
            .into_iter()
            .zip(grad_tensors)
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
            .zip(rates)
        {
            let lr = F::c(lr_t);
            let decay = F::c(lr_t * self.weight_decay);
            Zip::from(&mut p)
                .and(&g)
                .and(&mut m)
                .and(&mut v)
                .for_each(|p, &g, m, v| {
                    *m = b1 * *m + (one - b1) * g;
                    *v = b2 * *v + (one - b2) * g * g;
                    let mhat = *m / c1;
                    let vhat = *v / c2;
                    *p -= lr * mhat / (vhat.sqrt() + eps);
                    *p -= decay * *p;
                });
        }
        Ok(())
    }
}
