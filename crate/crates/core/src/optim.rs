//! Parameter update rules behind a single step interface.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
    Adabelief,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            "adabelief" => Ok(OptimizerKind::Adabelief),
            other => Err(Error::config(format!("unknown optimizer `{other}`"))),
        }
    }
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

fn default_epsilon() -> f64 {
    1e-8
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

impl OptimizerConfig {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Self {
        OptimizerConfig {
            kind,
            learning_rate,
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_epsilon(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        for (name, beta) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&beta) {
                return Err(Error::config(format!("{name} must be in [0, 1), got {beta}")));
            }
        }
        Ok(())
    }
}

/// Moment accumulators, one pair per parameter tensor. Empty for SGD.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSlots {
    pub step: u64,
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
}

impl OptimizerSlots {
    pub fn new(kind: OptimizerKind, params: &[Tensor]) -> Self {
        let zeros = || params.iter().map(|p| vec![0.0; p.len()]).collect::<Vec<_>>();
        match kind {
            OptimizerKind::Sgd => OptimizerSlots {
                step: 0,
                first: Vec::new(),
                second: Vec::new(),
            },
            OptimizerKind::Adam | OptimizerKind::Adabelief => OptimizerSlots {
                step: 0,
                first: zeros(),
                second: zeros(),
            },
        }
    }
}

/// One update of every parameter tensor from its gradient.
///
/// Adam and AdaBelief share the first moment and bias correction; they differ
/// only in the second-moment estimand: `g²` for Adam, `(g − m)² + ε` for
/// AdaBelief.
pub fn optimizer_step(
    config: &OptimizerConfig,
    slots: &mut OptimizerSlots,
    params: &mut [Tensor],
    grads: &[Tensor],
) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::shape(format!(
            "{} parameters but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() {
            return Err(Error::shape(format!(
                "parameter {i} has shape {:?}, gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
    }
    let lr = config.learning_rate;
    if config.kind == OptimizerKind::Sgd {
        slots.step += 1;
        for (p, g) in params.iter_mut().zip(grads) {
            for (w, &gi) in p.data_mut().iter_mut().zip(g.data()) {
                *w -= lr * gi;
            }
        }
        return Ok(());
    }
    if slots.first.len() != params.len() || slots.first.iter().zip(params.iter()).any(|(m, p)| m.len() != p.len()) {
        return Err(Error::shape("optimizer slots do not match parameters"));
    }

    slots.step += 1;
    let t = slots.step as i32;
    let (b1, b2, eps) = (config.beta1, config.beta2, config.epsilon);
    let correction1 = 1.0 - b1.powi(t);
    let correction2 = 1.0 - b2.powi(t);
    let belief = config.kind == OptimizerKind::Adabelief;
    for (idx, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = &mut slots.first[idx];
        let v = &mut slots.second[idx];
        for (j, (w, &gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            m[j] = b1 * m[j] + (1.0 - b1) * gi;
            v[j] = if belief {
                let d = gi - m[j];
                b2 * v[j] + (1.0 - b2) * (d * d) + eps
            } else {
                b2 * v[j] + (1.0 - b2) * (gi * gi)
            };
            let m_hat = m[j] / correction1;
            let v_hat = v[j] / correction2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
