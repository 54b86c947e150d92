use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.003,
            batch_size: 64,
        }
    }
}

impl SgdConfig {
    pub fn new(learning_rate: f64, batch_size: usize) -> Result<Self> {
        let c = Self {
            learning_rate,
            batch_size,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Plain SGD: `p <- p - lr * g` for every trainable tensor, then clears grads.
///
/// Every trainable parameter must carry a gradient; nothing is updated if one
/// is missing.
pub fn sgd_step(params: &mut [(&str, &mut Tensor)], config: &SgdConfig) -> Result<()> {
    config.validate()?;
    for (name, p) in params.iter() {
        if p.requires_grad() && p.grad().is_none() {
            return Err(Error::MissingGrad((*name).to_string()));
        }
    }
    let lr = config.learning_rate;
    for (_, p) in params.iter_mut() {
        if !p.requires_grad() {
            continue;
        }
        let g = p.grad().expect("checked above").to_vec();
        p.data_mut()
            .iter_mut()
            .zip(&g)
            .for_each(|(v, gv)| *v -= lr * gv);
        p.clear_grad();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(data: Vec<f64>, grad: Vec<f64>) -> Tensor {
        let mut t = Tensor::vector(data).with_grad(true);
        t.set_grad(grad).unwrap();
        t
    }

    #[test]
    fn examples() {
        let mut a = param(vec![1.0], vec![1.0]);
        let mut b = param(vec![1.0], vec![0.0]);
        let mut c = param(vec![2.0, -2.0], vec![1.0, -1.0]);
        sgd_step(&mut [("a", &mut a)], &SgdConfig::new(0.1, 1).unwrap()).unwrap();
        sgd_step(&mut [("b", &mut b)], &SgdConfig::new(0.1, 1).unwrap()).unwrap();
        sgd_step(&mut [("c", &mut c)], &SgdConfig::new(0.5, 1).unwrap()).unwrap();
        assert_eq!(a.data(), &[0.9]);
        assert_eq!(b.data(), &[1.0]);
        assert_eq!(c.data(), &[1.5, -1.5]);
        assert!(a.grad().is_none());
    }

    #[test]
    fn missing_grad_is_error_and_nothing_moves() {
        let mut a = param(vec![1.0], vec![1.0]);
        let mut b = Tensor::vector(vec![3.0]).with_grad(true);
        let err = sgd_step(
            &mut [("a", &mut a), ("b", &mut b)],
            &SgdConfig::new(0.1, 1).unwrap(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::MissingGrad(ref n) if n == "b"));
        assert_eq!(a.data(), &[1.0]);
    }

    #[test]
    fn config_validation() {
        assert!(SgdConfig::new(0.0, 1).is_err());
        assert!(SgdConfig::new(0.1, 0).is_err());
        assert_eq!(SgdConfig::default().learning_rate, 0.003);
        assert_eq!(SgdConfig::default().batch_size, 64);
    }
}
