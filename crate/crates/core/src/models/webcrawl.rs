//! Web crawling: a page's freshness value `x` grows passively toward `u` by
//! `x -> l + alpha * x` and is reset to `l` when crawled. Crawling earns `x`
//! and costs `C`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::IterateLadder;
use crate::engine::MetricBundle;
use crate::error::{Error, Result};
use crate::model::{
    Action, BanditModel, Branch, FiniteMixtureKernel, StateInterval, ThresholdSpec,
    WeightBound,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WebCrawlParams {
    pub alpha: f64,
    pub b: f64,
    #[serde(rename = "C")]
    pub c: f64,
    pub beta: f64,
}

impl Default for WebCrawlParams {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            b: 1.0,
            c: 1.0,
            beta: 0.9,
        }
    }
}

impl WebCrawlParams {
    pub fn new(alpha: f64, b: f64, c: f64, beta: f64) -> Result<Self> {
        let p = Self { alpha, b, c, beta };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidModel(m));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0,1), got {}", self.alpha));
        }
        if !(self.b > 0.0 && self.b.is_finite()) {
            return bad(format!("b must be positive, got {}", self.b));
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return bad(format!("C must be positive, got {}", self.c));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return bad(format!("beta must lie in [0,1), got {}", self.beta));
        }
        Ok(())
    }

    /// Reset level `l = (1 - alpha) b`.
    pub fn lower(&self) -> f64 {
        (1.0 - self.alpha) * self.b
    }

    /// Passive fixed point `u = l / (1 - alpha) = b`.
    pub fn upper(&self) -> f64 {
        self.b
    }

    /// One passive step `h(x) = l + alpha x`.
    pub fn h(&self, x: f64) -> f64 {
        self.lower() + self.alpha * x
    }

    pub fn ladder(&self) -> IterateLadder {
        IterateLadder {
            offset: self.lower(),
            rate: self.alpha,
        }
    }

    pub fn tau(&self, x: f64, policy: &ThresholdSpec) -> Option<usize> {
        self.ladder().tau(x, policy)
    }

    /// Project model with `w = 1`, `gamma = beta`, `M = max(u, C)`.
    pub fn model(&self) -> Result<BanditModel> {
        self.validate()?;
        let (l, alpha, c) = (self.lower(), self.alpha, self.c);
        let kernel = FiniteMixtureKernel::new(
            vec![Branch::certain(move |x| l + alpha * x)],
            vec![Branch::certain(move |_| l)],
        )?;
        BanditModel::new(
            "webcrawl",
            StateInterval::new(l, self.upper())?,
            Arc::new(|x, a: Action| if a == Action::Active { x } else { 0.0 }),
            Arc::new(move |_, a: Action| if a == Action::Active { c } else { 0.0 }),
            kernel,
            self.beta,
            WeightBound::unit(self.upper().max(c), self.beta),
        )
    }

    // ── Closed forms ───────────────────────────────────────────────────────

    /// `(F(l,pi), G(l,pi))`: after `tau` idle steps the page is crawled and
    /// the cycle restarts from `l`.
    pub fn reset_values(&self, policy: &ThresholdSpec) -> (f64, f64) {
        let l = self.lower();
        match self.tau(l, policy) {
            None => (0.0, 0.0),
            Some(t) => self.cycle_values(t),
        }
    }

    /// `(F_t, G_t) = (beta^t h_t(l), beta^t C) / (1 - beta^{t+1})`.
    pub fn cycle_values(&self, t: usize) -> (f64, f64) {
        let bt = self.beta.powi(t as i32);
        let denom = 1.0 - bt * self.beta;
        (bt * self.ladder().at(self.lower(), t) / denom, bt * self.c / denom)
    }

    /// `(F(x,pi), G(x,pi))`.
    pub fn values(&self, x: f64, policy: &ThresholdSpec) -> (f64, f64) {
        let (fl, gl) = self.reset_values(policy);
        match self.tau(x, policy) {
            None => (0.0, 0.0),
            Some(s) => {
                let bs = self.beta.powi(s as i32);
                let hs = self.ladder().at(x, s);
                (
                    bs * (hs + self.beta * fl),
                    bs * (self.c + self.beta * gl),
                )
            }
        }
    }

    /// Exact metrics; randomized policies mix the `z` and `z⁻` endpoints.
    pub fn metrics(&self, x: f64, policy: &ThresholdSpec) -> Result<MetricBundle> {
        StateInterval::new(self.lower(), self.upper())?.check(x)?;
        if let Some(alpha) = policy.alpha {
            let right = self.metrics(x, &policy.with_side(crate::model::Side::Right))?;
            let left = self.metrics(x, &policy.with_side(crate::model::Side::Left))?;
            return Ok(right.mix(&left, alpha));
        }
        let (fb, gb) = self.values(x, policy);
        let (fl, gl) = self.reset_values(policy);
        let (fh, gh) = self.values(self.h(x), policy);
        let f = x + self.beta * fl - self.beta * fh;
        let g = self.c + self.beta * gl - self.beta * gh;
        Ok(MetricBundle::exact(fb, gb, f, g))
    }

    /// Piece index `t = tau(l, x)`: `h_{t-1}(l) <= x < h_t(l)`.
    pub fn piece(&self, x: f64) -> Option<usize> {
        self.tau(self.lower(), &ThresholdSpec::z(x))
    }

    /// MP index from the piecewise formula
    /// `m(x) = (x - beta h(x) + beta (1-beta) F_t) / ((1-beta)(C + beta G_t))`,
    /// with `m(u) = u / C`.
    pub fn index(&self, x: f64) -> Result<f64> {
        StateInterval::new(self.lower(), self.upper())?.check(x)?;
        let beta = self.beta;
        match self.piece(x) {
            None => Ok(x / self.c),
            Some(t) => {
                let (ft, gt) = self.cycle_values(t);
                Ok((x - beta * self.h(x) + beta * (1.0 - beta) * ft)
                    / ((1.0 - beta) * (self.c + beta * gt)))
            }
        }
    }

    /// Average-reward limit `((t+1)(x - h(x)) + h_t(l)) / C`, `u / C` at `u`.
    pub fn avg_index(&self, x: f64) -> Result<f64> {
        StateInterval::new(self.lower(), self.upper())?.check(x)?;
        match self.piece(x) {
            None => Ok(x / self.c),
            Some(t) => {
                let ht = self.ladder().at(self.lower(), t);
                Ok(((t as f64 + 1.0) * (x - self.h(x)) + ht) / self.c)
            }
        }
    }

    /// Breakpoints `h_t(l)`, `t = 0..n`, of the index and of `G(x, .)`.
    pub fn breakpoints(&self, n: usize) -> Vec<f64> {
        (0..n).map(|t| self.ladder().at(self.lower(), t)).collect()
    }

    /// Jump thresholds of `z -> G(x, z)`: the ladders from `x` and from `l`.
    /// Thresholds at or above `u` are excluded (the policy there is never active).
    pub fn jump_points(&self, x: f64, n: usize) -> Vec<f64> {
        let lad = self.ladder();
        let mut pts: Vec<f64> = (0..n)
            .flat_map(|t| [lad.at(x, t), lad.at(self.lower(), t)])
            .filter(|&z| z < self.upper())
            .collect();
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        pts
    }
}

/// Exact metrics at `x` (free-function form).
pub fn webcrawl_metrics(p: &WebCrawlParams, x: f64, policy: &ThresholdSpec) -> Result<MetricBundle> {
    p.metrics(x, policy)
}

pub fn webcrawl_index(p: &WebCrawlParams, x: f64) -> Result<f64> {
    p.index(x)
}

pub fn webcrawl_avg_index(p: &WebCrawlParams, x: f64) -> Result<f64> {
    p.avg_index(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> WebCrawlParams {
        WebCrawlParams::default()
    }

    #[test]
    fn reference_reward_at_reset_level() {
        let b = p().metrics(0.5, &ThresholdSpec::z(0.7)).unwrap();
        assert!((b.reward - 0.675 / 0.19).abs() < 1e-12);
    }

    #[test]
    fn never_active_at_upper_threshold() {
        for x in [0.5, 0.8, 1.0] {
            let b = p().metrics(x, &ThresholdSpec::z(1.0)).unwrap();
            assert_eq!((b.reward, b.resource), (0.0, 0.0));
        }
    }

    #[test]
    fn index_reference_values() {
        assert_eq!(p().index(1.0).unwrap(), 1.0);
        let m = p().index(0.5).unwrap();
        // t = 1: F_1 = 0.675/0.19, G_1 = 0.9/0.19.
        let f = 0.5 - 0.9 * 0.75 + 0.9 * 0.1 * 0.675 / 0.19;
        let g = 0.1 * (1.0 + 0.9 * 0.9 / 0.19);
        assert!((m - f / g).abs() < 1e-14);
        assert!((m - 0.275).abs() < 1e-12);
        assert!((p().avg_index(0.5).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn index_is_f_over_g_at_the_diagonal() {
        let par = p();
        for i in 0..50 {
            let x = 0.5 + 0.01 * i as f64;
            let b = par.metrics(x, &ThresholdSpec::z(x)).unwrap();
            let m = par.index(x).unwrap();
            assert!((m - b.marginal_reward / b.marginal_resource).abs() < 1e-12, "x={x}");
        }
    }

    #[test]
    fn avg_index_scales_inversely_with_cost() {
        let a = p();
        let b = WebCrawlParams { c: 2.0, ..a };
        for x in [0.5, 0.6, 0.9] {
            assert!((a.avg_index(x).unwrap() - 2.0 * b.avg_index(x).unwrap()).abs() < 1e-14);
        }
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(WebCrawlParams::new(1.0, 1.0, 1.0, 0.9).is_err());
        assert!(WebCrawlParams::new(0.5, -1.0, 1.0, 0.9).is_err());
        assert!(WebCrawlParams::new(0.5, 1.0, 1.0, 1.0).is_err());
    }
}
