use serde::{Deserialize, Serialize};

use super::ParamTensor;
use crate::error::{Error, Result};

/// RMSProp with heavy-ball momentum and coupled L2 weight decay.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RmsProp {
    pub lr: f64,
    /// Smoothing constant of the squared-gradient average.
    pub alpha: f64,
    pub eps: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for RmsProp {
    fn default() -> Self {
        RmsProp {
            lr: 1e-4,
            alpha: 0.99,
            eps: 1e-8,
            momentum: 0.9,
            weight_decay: 5e-4,
        }
    }
}

impl RmsProp {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::config(format!("learning rate must be > 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::config(format!("rmsprop alpha {} not in [0, 1)", self.alpha)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(format!("momentum {} not in [0, 1)", self.momentum)));
        }
        if self.eps < 0.0 || self.weight_decay < 0.0 {
            return Err(Error::config("eps and weight decay must be non-negative"));
        }
        Ok(())
    }

    /// One update of every parameter; gradients are zeroed afterwards.
    pub fn step<'a>(&self, params: impl IntoIterator<Item = &'a mut ParamTensor>) -> Result<()> {
        self.validate()?;
        self.apply(params, self.lr)
    }

    /// Same update rule with an arbitrary (possibly zero) step size. Used to
    /// freeze a run while keeping the optimizer state evolving.
    pub(crate) fn apply<'a>(
        &self,
        params: impl IntoIterator<Item = &'a mut ParamTensor>,
        lr: f64,
    ) -> Result<()> {
        for p in params {
            let ParamTensor {
                value,
                grad,
                rms_cache,
                momentum_buf,
                name,
            } = p;
            for (((w, g), r), m) in value
                .data_mut()
                .iter_mut()
                .zip(grad.data_mut().iter_mut())
                .zip(rms_cache.data_mut().iter_mut())
                .zip(momentum_buf.data_mut().iter_mut())
            {
                let g_eff = *g + self.weight_decay * *w;
                *r = self.alpha * *r + (1.0 - self.alpha) * g_eff * g_eff;
                *m = self.momentum * *m + g_eff / (r.sqrt() + self.eps);
                *w -= lr * *m;
                *g = 0.0;
            }
            if value.data().iter().any(|x| !x.is_finite()) {
                return Err(Error::numeric(format!("parameter {name} became non-finite")));
            }
        }
        Ok(())
    }
}
