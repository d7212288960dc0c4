//! Noisy channel transmission. The state is the belief `x` that the channel
//! is good. Passively the belief drifts `x -> q + rho x` toward
//! `h_inf = q / (1 - rho)`; transmitting earns `x`, costs 1 and reveals the
//! channel, so the belief jumps to `q + rho` with probability `x` and to `q`
//! otherwise.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::IterateLadder;
use crate::engine::MetricBundle;
use crate::error::{Error, Result};
use crate::model::{
    Action, BanditModel, Branch, ExtReal, FiniteMixtureKernel, Side, StateInterval,
    ThresholdSpec, WeightBound,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelParams {
    pub p: f64,
    pub q: f64,
    pub beta: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            p: 0.3,
            q: 0.2,
            beta: 0.9,
        }
    }
}

/// Which closed-form regime a finite threshold falls in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelCase {
    /// `z < q`
    I,
    /// `q <= z < h_inf`
    II,
    /// `h_inf <= z < q + rho`
    III,
    /// `z >= q + rho`
    IV,
}

/// `(value at q, value at q + rho)` for reward and resource.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Anchors {
    fa: f64,
    fb: f64,
    ga: f64,
    gb: f64,
}

impl ChannelParams {
    pub fn new(p: f64, q: f64, beta: f64) -> Result<Self> {
        let s = Self { p, q, beta };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidModel(m));
        if !(self.p > 0.0 && self.p < 1.0 && self.q > 0.0 && self.q < 1.0) {
            return bad(format!("p and q must lie in (0,1), got p = {}, q = {}", self.p, self.q));
        }
        if !(self.rho() > 0.0) {
            return bad(format!("need rho = 1 - p - q > 0, got {}", self.rho()));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return bad(format!("beta must lie in [0,1), got {}", self.beta));
        }
        Ok(())
    }

    pub fn rho(&self) -> f64 {
        1.0 - self.p - self.q
    }

    pub fn h_inf(&self) -> f64 {
        self.q / (1.0 - self.rho())
    }

    /// One passive step `h(x) = q + rho x`.
    pub fn h(&self, x: f64) -> f64 {
        self.q + self.rho() * x
    }

    pub fn ladder(&self) -> IterateLadder {
        IterateLadder {
            offset: self.q,
            rate: self.rho(),
        }
    }

    pub fn case_of(&self, z: f64) -> ChannelCase {
        if z < self.q {
            ChannelCase::I
        } else if z < self.h_inf() {
            ChannelCase::II
        } else if z < self.q + self.rho() {
            ChannelCase::III
        } else {
            ChannelCase::IV
        }
    }

    /// Project model on `[0, 1]` with `w = 1`, `gamma = beta`, `M = 1`.
    pub fn model(&self) -> Result<BanditModel> {
        self.validate()?;
        let (q, rho) = (self.q, self.rho());
        let kernel = FiniteMixtureKernel::new(
            vec![Branch::certain(move |x| q + rho * x)],
            vec![
                Branch::new(|x| x, move |_| q + rho),
                Branch::new(|x| 1.0 - x, move |_| q),
            ],
        )?;
        BanditModel::new(
            "channel",
            StateInterval::new(0.0, 1.0)?,
            Arc::new(|x, a: Action| if a == Action::Active { x } else { 0.0 }),
            Arc::new(|_, a: Action| if a == Action::Active { 1.0 } else { 0.0 }),
            kernel,
            self.beta,
            WeightBound::unit(1.0, self.beta),
        )
    }

    // ── Fixed-point evaluation on the anchors {q, q + rho} ─────────────────

    /// Every activation sends the belief to `q` or `q + rho`, so the metrics
    /// of a threshold policy are fixed by their values at those two anchors.
    /// Each anchor idles `t` steps along its ladder, activates at `h = h_t`,
    /// and restarts at an anchor, giving a 2×2 linear system.
    fn anchors(&self, policy: &ThresholdSpec) -> Anchors {
        let beta = self.beta;
        let lad = self.ladder();
        let row = |y: f64, own_is_b: bool| -> ([f64; 2], f64, f64) {
            match lad.tau(y, policy) {
                None => {
                    let mut m = [0.0; 2];
                    m[own_is_b as usize] = 1.0;
                    (m, 0.0, 0.0)
                }
                Some(t) => {
                    let h = lad.at(y, t);
                    let bt = beta.powi(t as i32);
                    let mut m = [-bt * beta * (1.0 - h), -bt * beta * h];
                    m[own_is_b as usize] += 1.0;
                    (m, bt * h, bt)
                }
            }
        };
        let (ra, fa_rhs, ga_rhs) = row(self.q, false);
        let (rb, fb_rhs, gb_rhs) = row(self.q + self.rho(), true);
        let det = ra[0] * rb[1] - ra[1] * rb[0];
        let solve = |ya: f64, yb: f64| {
            (
                (ya * rb[1] - ra[1] * yb) / det,
                (ra[0] * yb - ya * rb[0]) / det,
            )
        };
        let (fa, fb) = solve(fa_rhs, fb_rhs);
        let (ga, gb) = solve(ga_rhs, gb_rhs);
        Anchors { fa, fb, ga, gb }
    }

    /// Value of transmitting at `x` now and following the policy after.
    fn active_values(&self, x: f64, an: &Anchors) -> (f64, f64) {
        let beta = self.beta;
        (
            x + beta * (x * an.fb + (1.0 - x) * an.fa),
            1.0 + beta * (x * an.gb + (1.0 - x) * an.ga),
        )
    }

    fn values_with(&self, x: f64, policy: &ThresholdSpec, an: &Anchors) -> (f64, f64) {
        match self.ladder().tau(x, policy) {
            None => (0.0, 0.0),
            Some(s) => {
                let bs = self.beta.powi(s as i32);
                let (fa, ga) = self.active_values(self.ladder().at(x, s), an);
                (bs * fa, bs * ga)
            }
        }
    }

    /// Exact metrics for any deterministic threshold policy (either side,
    /// sentinels included) from the anchor system.
    pub fn anchor_metrics(&self, x: f64, policy: &ThresholdSpec) -> MetricBundle {
        let policy = policy.with_side(policy.side);
        let an = self.anchors(&policy);
        let (fb, gb) = self.values_with(x, &policy, &an);
        let (f1, g1) = self.active_values(x, &an);
        let (fh, gh) = self.values_with(self.h(x), &policy, &an);
        MetricBundle::exact(fb, gb, f1 - self.beta * fh, g1 - self.beta * gh)
    }

    /// Exact metrics. Finite `z`-policies use the case formulas (Case II via
    /// the anchor system); everything else goes through the anchor system.
    pub fn metrics(&self, x: f64, policy: &ThresholdSpec) -> Result<MetricBundle> {
        StateInterval::new(0.0, 1.0)?.check(x)?;
        if let Some(alpha) = policy.alpha {
            let right = self.metrics(x, &policy.with_side(Side::Right))?;
            let left = self.metrics(x, &policy.with_side(Side::Left))?;
            return Ok(right.mix(&left, alpha));
        }
        match (policy.z, policy.side) {
            (ExtReal::Finite(z), Side::Right) => Ok(self.case_metrics(x, z)),
            _ => Ok(self.anchor_metrics(x, policy)),
        }
    }

    fn case_metrics(&self, x: f64, z: f64) -> MetricBundle {
        let (q, rho, beta) = (self.q, self.rho(), self.beta);
        let act = if x > z { 1.0 } else { 0.0 };
        match self.case_of(z) {
            ChannelCase::I => {
                let f_big = (beta * (q + (1.0 - beta) * rho * x)
                    + (1.0 - beta) * (1.0 - beta * rho) * x * act)
                    / ((1.0 - beta) * (1.0 - beta * rho));
                let g_big = (beta + (1.0 - beta) * act) / (1.0 - beta);
                MetricBundle::exact(f_big, g_big, x, 1.0)
            }
            ChannelCase::II => self.anchor_metrics(x, &ThresholdSpec::z(z)),
            ChannelCase::III => {
                let k = 1.0 - beta * (q + rho);
                let hx = self.h(x);
                let next = if hx > z { 1.0 } else { 0.0 };
                MetricBundle::exact(
                    act * x / k,
                    act * (k + beta * x) / k,
                    (x - beta * hx * next) / k,
                    (k + beta * x - beta * next * (k + beta * hx)) / k,
                )
            }
            ChannelCase::IV => MetricBundle::exact(act * x, act, x, 1.0),
        }
    }

    /// MP index: `x` below `q` and from `q + rho` on,
    /// `x / (1 - beta (q + rho - x))` on `[h_inf, q + rho)`, and the anchor
    /// system's `f(x,x)/g(x,x)` on `[q, h_inf)`.
    pub fn index(&self, x: f64) -> Result<f64> {
        StateInterval::new(0.0, 1.0)?.check(x)?;
        let (q, rho, beta) = (self.q, self.rho(), self.beta);
        Ok(match self.case_of(x) {
            ChannelCase::I | ChannelCase::IV => x,
            ChannelCase::III => x / (1.0 - beta * (q + rho - x)),
            ChannelCase::II => {
                let b = self.anchor_metrics(x, &ThresholdSpec::z(x));
                b.marginal_reward / b.marginal_resource
            }
        })
    }
}

pub fn channel_metrics(p: &ChannelParams, x: f64, policy: &ThresholdSpec) -> Result<MetricBundle> {
    p.metrics(x, policy)
}

pub fn channel_index(p: &ChannelParams, x: f64) -> Result<f64> {
    p.index(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> ChannelParams {
        ChannelParams::default()
    }

    #[test]
    fn derived_constants() {
        let c = p();
        assert!((c.rho() - 0.5).abs() < 1e-15);
        assert!((c.h_inf() - 0.4).abs() < 1e-15);
        assert!((c.h(c.h_inf()) - c.h_inf()).abs() < 1e-14);
    }

    #[test]
    fn case_formulas_agree_with_anchor_system() {
        let c = p();
        for &z in &[0.05, 0.15, 0.25, 0.3, 0.39, 0.4, 0.45, 0.6, 0.7, 0.8, 0.95] {
            for i in 0..=20 {
                let x = i as f64 / 20.0;
                let a = c.case_metrics(x, z);
                let b = c.anchor_metrics(x, &ThresholdSpec::z(z));
                for (u, v) in [
                    (a.reward, b.reward),
                    (a.resource, b.resource),
                    (a.marginal_reward, b.marginal_reward),
                    (a.marginal_resource, b.marginal_resource),
                ] {
                    assert!((u - v).abs() < 1e-12, "x={x} z={z}: {u} vs {v}");
                }
            }
        }
    }

    #[test]
    fn case_three_reference() {
        let b = p().metrics(0.5, &ThresholdSpec::z(0.45)).unwrap();
        assert!((b.resource - 0.82 / 0.37).abs() < 1e-12);
        assert!((p().index(0.5).unwrap() - 0.5 / 0.82).abs() < 1e-15);
    }

    #[test]
    fn case_four_below_threshold() {
        let b = p().metrics(0.75, &ThresholdSpec::z(0.8)).unwrap();
        assert_eq!(
            (b.reward, b.resource, b.marginal_reward, b.marginal_resource),
            (0.0, 0.0, 0.75, 1.0)
        );
    }

    #[test]
    fn index_at_case_boundaries_is_continuous() {
        let c = p();
        for b in [c.q, c.h_inf(), c.q + c.rho()] {
            let left = c.index(b - 1e-10).unwrap();
            let right = c.index(b).unwrap();
            assert!((left - right).abs() < 1e-8, "boundary {b}: {left} vs {right}");
        }
    }

    #[test]
    fn rejects_nonpositive_rho() {
        assert!(ChannelParams::new(0.6, 0.5, 0.9).is_err());
    }
}
