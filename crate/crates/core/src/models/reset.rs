//! Reset model: the state is frozen while passive and reset to 0 when
//! activated. No reward; activation costs 0.1, plus an optional holding cost
//! `h * x` under either action.
//!
//! With `h = 0` the marginal resource metric is positive everywhere
//! (`g(x, z) = 0.1 (1 - beta)` for `x > z`, `0.1` otherwise). With a holding
//! cost, say `h = 1`, staying passive above the threshold is expensive and
//! `g(0.6, 0.5) = 0.7 - (0.6 + 0.9 * 0.7) = -0.53`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    Action, BanditModel, Branch, FiniteMixtureKernel, StateInterval, WeightBound,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResetParams {
    pub beta: f64,
    /// Holding cost per unit of state.
    #[serde(default)]
    pub h: f64,
}

impl Default for ResetParams {
    fn default() -> Self {
        Self { beta: 0.9, h: 0.0 }
    }
}

pub const ACTIVATION_COST: f64 = 0.1;

impl ResetParams {
    pub fn model(&self) -> Result<BanditModel> {
        if !(self.h >= 0.0 && self.h.is_finite()) {
            return Err(Error::InvalidModel(format!(
                "holding cost must be nonnegative, got {}",
                self.h
            )));
        }
        let h = self.h;
        let kernel = FiniteMixtureKernel::new(
            vec![Branch::certain(|x| x)],
            vec![Branch::certain(|_| 0.0)],
        )?;
        BanditModel::new(
            "reset",
            StateInterval::new(0.0, 1.0)?,
            Arc::new(|_, _| 0.0),
            Arc::new(move |x, a: Action| {
                h * x + if a == Action::Active { ACTIVATION_COST } else { 0.0 }
            }),
            kernel,
            self.beta,
            WeightBound::unit(ACTIVATION_COST + h, self.beta),
        )
    }
}
