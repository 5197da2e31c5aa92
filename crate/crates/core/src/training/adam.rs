//! Adam over named candle variables, with inspectable state so it can be
//! checkpointed and resumed bit-exactly.

use std::collections::BTreeMap;

use candle_core::{backprop::GradStore, Tensor, Var};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment of one parameter.
#[derive(Debug, Clone)]
pub struct Moments {
    pub m: Tensor,
    pub v: Tensor,
}

#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    params: BTreeMap<String, Var>,
    moments: BTreeMap<String, Moments>,
    steps: u64,
}

impl Adam {
    pub fn new(params: BTreeMap<String, Var>, config: AdamConfig) -> Result<Self> {
        if !(config.lr >= 0.0 && config.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be >= 0, got {}", config.lr)));
        }
        let moments = params
            .iter()
            .map(|(k, v)| {
                let z = v.as_tensor().zeros_like()?;
                Ok((k.clone(), Moments { m: z.clone(), v: z }))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            config,
            params,
            moments,
            steps: 0,
        })
    }

    pub fn config(&self) -> AdamConfig {
        self.config
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn moments(&self) -> &BTreeMap<String, Moments> {
        &self.moments
    }

    /// Overwrite the optimizer state, e.g. when resuming.
    pub fn restore(&mut self, steps: u64, moments: BTreeMap<String, Moments>) -> Result<()> {
        for (name, var) in &self.params {
            let mo = moments
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing optimizer state for {name}")))?;
            if mo.m.dims() != var.dims() || mo.v.dims() != var.dims() {
                return Err(Error::Checkpoint(format!("optimizer state shape mismatch for {name}")));
            }
        }
        if moments.len() != self.params.len() {
            return Err(Error::Checkpoint("optimizer state has extra entries".into()));
        }
        self.steps = steps;
        self.moments = moments;
        Ok(())
    }

    /// One update from `grads`. Parameters without a gradient are left alone.
    pub fn step(&mut self, grads: &GradStore) -> Result<()> {
        self.steps += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.steps as i32;
        let bias1 = 1.0 - beta1.powi(t);
        let bias2 = 1.0 - beta2.powi(t);
        for (name, var) in &self.params {
            // Gradients carry the op history of the backward pass; keeping
            // them in the moments would retain every step's graph.
            let Some(g) = grads.get(var).map(Tensor::detach) else { continue };
            let mo = self.moments.get_mut(name).expect("moments for every param");
            let m = ((&mo.m * beta1)? + (&g * (1.0 - beta1))?)?;
            let v = ((&mo.v * beta2)? + (g.sqr()? * (1.0 - beta2))?)?;
            let m_hat = (&m / bias1)?;
            let v_hat = (&v / bias2)?;
            let update = ((m_hat / (v_hat.sqrt()? + eps)?)? * lr)?;
            var.set(&(var.as_tensor() - update)?)?;
            mo.m = m.detach();
            mo.v = v.detach();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let p = Var::from_tensor(&Tensor::new(&[1.0f64, -2.0], &Device::Cpu).unwrap()).unwrap();
        let mut params = BTreeMap::new();
        params.insert("p".to_string(), p.clone());
        let mut opt = Adam::new(params, AdamConfig::new(0.1)).unwrap();
        let loss = (p.as_tensor() * 3.0).unwrap().sum_all().unwrap();
        opt.step(&loss.backward().unwrap()).unwrap();
        let v: Vec<f64> = p.as_tensor().to_vec1().unwrap();
        // Bias-corrected first step is lr * g / (|g| + eps).
        assert!((v[0] - 0.9).abs() < 1e-8);
        assert!((v[1] + 2.1).abs() < 1e-8);
    }

    #[test]
    fn zero_lr_keeps_bits() {
        let p = Var::from_tensor(&Tensor::new(&[0.3f32, -0.7, 1e-20], &Device::Cpu).unwrap()).unwrap();
        let before: Vec<f32> = p.as_tensor().to_vec1().unwrap();
        let mut params = BTreeMap::new();
        params.insert("p".to_string(), p.clone());
        let mut opt = Adam::new(params, AdamConfig::new(0.0)).unwrap();
        for _ in 0..3 {
            let loss = p.as_tensor().sqr().unwrap().sum_all().unwrap();
            opt.step(&loss.backward().unwrap()).unwrap();
        }
        let after: Vec<f32> = p.as_tensor().to_vec1().unwrap();
        let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&before), bits(&after));
        assert_eq!(p.dtype(), DType::F32);
    }
}
