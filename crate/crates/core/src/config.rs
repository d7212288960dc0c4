//! Serializable model specifications: the bundled models by parameters, or a
//! user model written as expressions in `x`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::model::{
    Action, BanditModel, Branch, ExtReal, FiniteMixtureKernel, StateInterval, WeightBound,
};
use crate::models::{ChannelParams, ResetParams, WebCrawlParams};

/// Grid size used to bound user-model primitives when no bound is given.
const BOUND_GRID: usize = 1001;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Webcrawl(WebCrawlParams),
    Channel(ChannelParams),
    Reset(ResetParams),
    Custom(CustomModelSpec),
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec::Webcrawl(WebCrawlParams::default())
    }
}

impl ModelSpec {
    pub fn build(&self) -> Result<BanditModel> {
        match self {
            ModelSpec::Webcrawl(p) => p.model(),
            ModelSpec::Channel(p) => p.model(),
            ModelSpec::Reset(p) => p.model(),
            ModelSpec::Custom(c) => c.build(),
        }
    }

    pub fn name(&self) -> &str {
        match self {
            ModelSpec::Webcrawl(_) => "webcrawl",
            ModelSpec::Channel(_) => "channel",
            ModelSpec::Reset(_) => "reset",
            ModelSpec::Custom(c) => &c.name,
        }
    }

    pub fn beta(&self) -> f64 {
        match self {
            ModelSpec::Webcrawl(p) => p.beta,
            ModelSpec::Channel(p) => p.beta,
            ModelSpec::Reset(p) => p.beta,
            ModelSpec::Custom(c) => c.beta,
        }
    }
}

/// Per-action expressions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionExprs {
    pub passive: Expr,
    pub active: Expr,
}

/// One branch of a transition: move to `map(x)` with probability `prob(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchSpec {
    #[serde(default = "one")]
    pub prob: Expr,
    pub map: Expr,
}

fn one() -> Expr {
    Expr::constant(1.0)
}

fn custom_name() -> String {
    "custom".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomModelSpec {
    #[serde(default = "custom_name")]
    pub name: String,
    pub lower: ExtReal,
    pub upper: ExtReal,
    pub beta: f64,
    pub reward: ActionExprs,
    pub cost: ActionExprs,
    pub passive: Vec<BranchSpec>,
    pub active: Vec<BranchSpec>,
    /// Bound `M` on `|r|` and `c` (with `w = 1`, `gamma = beta`); taken from a
    /// grid when absent, which needs a bounded interval.
    #[serde(default)]
    pub bound: Option<f64>,
}

fn branches(specs: &[BranchSpec]) -> Vec<Branch> {
    specs
        .iter()
        .map(|b| {
            let (p, m) = (b.prob.clone(), b.map.clone());
            Branch::new(move |x| p.eval(x), move |x| m.eval(x))
        })
        .collect()
}

impl CustomModelSpec {
    pub fn build(&self) -> Result<BanditModel> {
        if self.passive.is_empty() || self.active.is_empty() {
            return Err(Error::InvalidModel("each action needs at least one branch".into()));
        }
        let states = StateInterval::new(self.lower, self.upper)?;
        let kernel = FiniteMixtureKernel::new(branches(&self.passive), branches(&self.active))?;
        let (rp, ra) = (self.reward.passive.clone(), self.reward.active.clone());
        let (cp, ca) = (self.cost.passive.clone(), self.cost.active.clone());
        let reward = Arc::new(move |x, a: Action| match a {
            Action::Passive => rp.eval(x),
            Action::Active => ra.eval(x),
        });
        let cost = Arc::new(move |x, a: Action| match a {
            Action::Passive => cp.eval(x),
            Action::Active => ca.eval(x),
        });
        match self.bound {
            Some(m) => BanditModel::new(
                self.name.clone(),
                states,
                reward,
                cost,
                kernel,
                self.beta,
                WeightBound::unit(m, self.beta),
            ),
            None => {
                if !states.is_bounded() {
                    return Err(Error::InvalidModel(
                        "an unbounded state interval needs an explicit 'bound'".into(),
                    ));
                }
                let grid = states.grid(BOUND_GRID)?;
                BanditModel::with_default_bound(
                    self.name.clone(),
                    states,
                    reward,
                    cost,
                    kernel,
                    self.beta,
                    &grid,
                )
            }
        }
    }
}
