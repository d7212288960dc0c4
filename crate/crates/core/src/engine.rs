//! Threshold-policy metrics by exact k-horizon value iteration.
//!
//! With a finite-mixture kernel the k-step value of a policy from a root
//! state depends only on the states reachable in at most k steps, so the
//! recursion
//!
//! ```text
//! F_0(x) = r(x, a(x)),   F_{d+1}(x) = r(x, a(x)) + beta * sum_i p_i(x) F_d(h_i(x))
//! ```
//!
//! (and the same for `G` with `c`) can be evaluated exactly, memoized on
//! `(state, remaining depth)`. Truncation error is controlled by the
//! weighted bound: `|F_k - F| <= M_gamma * gamma^k * w(x)`.

use std::collections::hash_map::Entry;

use rayon::prelude::*;
use rustc_hash::{FxHashMap, FxHashSet};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Action, BanditModel, InitialDistribution, Side, ThresholdSpec};

pub const DEFAULT_MEMO_CAP: usize = 10_000_000;
pub const DEFAULT_HORIZON_CAP: usize = 100_000;

/// Resource limits for the engine.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineLimits {
    pub memo_cap: usize,
    pub horizon_cap: usize,
}

impl Default for EngineLimits {
    fn default() -> Self {
        Self {
            memo_cap: DEFAULT_MEMO_CAP,
            horizon_cap: DEFAULT_HORIZON_CAP,
        }
    }
}

/// Memo key for a state: its exact bit pattern, with `-0.0` folded onto `0.0`.
///
/// No rounding: near an accumulation point two states a few ulps apart can
/// reach the threshold after different numbers of steps, and merging them
/// would give one the other's future. Float ladders stop at their float fixed
/// point, so exact keys do not blow up the memo.
#[inline]
pub fn state_key(x: f64) -> u64 {
    let x = if x == 0.0 { 0.0 } else { x };
    x.to_bits()
}

type MemoKey = (u64, usize);

/// Reward and resource metrics with their truncation certificates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricBundle {
    #[serde(rename = "F")]
    pub reward: f64,
    #[serde(rename = "G")]
    pub resource: f64,
    #[serde(rename = "f")]
    pub marginal_reward: f64,
    #[serde(rename = "g")]
    pub marginal_resource: f64,
    /// `None` for closed-form (infinite-horizon) values.
    pub horizon: Option<usize>,
    #[serde(rename = "F_err")]
    pub reward_err: f64,
    #[serde(rename = "G_err")]
    pub resource_err: f64,
    pub fg_err: f64,
}

impl MetricBundle {
    /// Closed-form bundle with zero error.
    pub fn exact(f_big: f64, g_big: f64, f: f64, g: f64) -> Self {
        Self {
            reward: f_big,
            resource: g_big,
            marginal_reward: f,
            marginal_resource: g,
            horizon: None,
            reward_err: 0.0,
            resource_err: 0.0,
            fg_err: 0.0,
        }
    }

    /// `w * self + (1 - w) * other`, errors combined the same way.
    pub fn mix(&self, other: &Self, w: f64) -> Self {
        let lerp = |a: f64, b: f64| w * a + (1.0 - w) * b;
        Self {
            reward: lerp(self.reward, other.reward),
            resource: lerp(self.resource, other.resource),
            marginal_reward: lerp(self.marginal_reward, other.marginal_reward),
            marginal_resource: lerp(self.marginal_resource, other.marginal_resource),
            horizon: self.horizon.max(other.horizon),
            reward_err: lerp(self.reward_err, other.reward_err),
            resource_err: lerp(self.resource_err, other.resource_err),
            fg_err: lerp(self.fg_err, other.fg_err),
        }
    }
}

/// MP index value `m(x) = f(x,x)/g(x,x)` with its certificate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MPIndexValue {
    pub x: f64,
    pub m: f64,
    pub err: f64,
    /// Certified lower bound `g_k(x,x) - fg_err` on the marginal resource metric.
    pub g_floor: f64,
    pub horizon: usize,
}

/// How precisely to compute an index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Precision {
    Horizon(usize),
    Tolerance(f64),
}

/// Smallest `k >= 0` with `scale * M_gamma * gamma^k <= tol`, i.e.
/// `k = ceil(log(tol (1 - gamma) / (scale M)) / log gamma)`.
pub fn horizon_for_tolerance(m: f64, gamma: f64, scale: f64, tol: f64) -> Result<usize> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    let target = tol * (1.0 - gamma) / (scale * m);
    // A few ulps of slack so that `tol == M_gamma` lands on k = 0.
    if target >= 1.0 - 4.0 * f64::EPSILON {
        return Ok(0);
    }
    if gamma == 0.0 {
        return Ok(1);
    }
    let k = (target.ln() / gamma.ln()).ceil();
    if !k.is_finite() || k > u32::MAX as f64 {
        return Err(Error::Numeric(format!("cannot reach tolerance {tol} with gamma {gamma}")));
    }
    Ok(k.max(0.0) as usize)
}

// ── Per-policy evaluator ────────────────────────────────────────────────────

struct Frame {
    x: f64,
    depth: usize,
    expanded: bool,
}

/// Memoized evaluator of one deterministic threshold policy.
///
/// The memo is reused across root states, so evaluating many roots under the
/// same threshold shares the common tails (the ladders behind reset states).
pub struct PolicyEvaluator<'m> {
    model: &'m BanditModel,
    policy: ThresholdSpec,
    memo: FxHashMap<MemoKey, (f64, f64)>,
    limits: EngineLimits,
}

impl<'m> PolicyEvaluator<'m> {
    /// Any randomization weight on `policy` is ignored; see
    /// [`randomized_threshold_metrics`] for mixtures.
    pub fn new(model: &'m BanditModel, policy: ThresholdSpec, limits: EngineLimits) -> Self {
        Self {
            model,
            policy: policy.with_side(policy.side),
            memo: FxHashMap::default(),
            limits,
        }
    }

    pub fn policy(&self) -> &ThresholdSpec {
        &self.policy
    }

    pub fn memo_len(&self) -> usize {
        self.memo.len()
    }

    /// `(F_d(x), G_d(x))` under the policy.
    #[inline]
    fn key(&self, x: f64, depth: usize) -> MemoKey {
        (state_key(x), depth)
    }

    pub fn value(&mut self, x: f64, depth: usize) -> Result<(f64, f64)> {
        if let Some(&v) = self.memo.get(&self.key(x, depth)) {
            return Ok(v);
        }
        let model = self.model;
        let beta = model.beta();
        let mut stack = vec![Frame {
            x,
            depth,
            expanded: false,
        }];
        while let Some(top) = stack.last_mut() {
            let (x, d) = (top.x, top.depth);
            let active = self.policy.is_active(x);
            let key = (state_key(x), d);
            if self.memo.contains_key(&key) {
                stack.pop();
                continue;
            }
            let a = Action::from_bool(active);
            if d == 0 {
                let v = (model.reward(x, a), model.cost(x, a));
                self.insert(key, v, depth)?;
                stack.pop();
                continue;
            }
            if !top.expanded {
                top.expanded = true;
                let memo = &self.memo;
                let mut children = Vec::new();
                model.kernel().for_each_successor(x, a, |_, y| {
                    if !memo.contains_key(&(state_key(y), d - 1)) {
                        children.push(Frame {
                            x: y,
                            depth: d - 1,
                            expanded: false,
                        });
                    }
                });
                stack.extend(children);
                continue;
            }
            let (mut fs, mut gs) = (0.0, 0.0);
            let memo = &self.memo;
            model.kernel().for_each_successor(x, a, |p, y| {
                let (fy, gy) = memo[&(state_key(y), d - 1)];
                fs += p * fy;
                gs += p * gy;
            });
            let v = (model.reward(x, a) + beta * fs, model.cost(x, a) + beta * gs);
            self.insert(key, v, depth)?;
            stack.pop();
        }
        Ok(self.memo[&self.key(x, depth)])
    }

    fn insert(&mut self, key: MemoKey, v: (f64, f64), horizon: usize) -> Result<()> {
        let len = self.memo.len();
        if let Entry::Vacant(e) = self.memo.entry(key) {
            if len >= self.limits.memo_cap {
                return Err(Error::MemoCap {
                    cap: self.limits.memo_cap,
                    horizon,
                });
            }
            e.insert(v);
        }
        Ok(())
    }

    /// `k`-horizon metrics of the policy `<a, pi>` that takes action `a` first
    /// and then follows the threshold policy.
    pub fn forced(&mut self, x: f64, a: Action, k: usize) -> Result<(f64, f64)> {
        let model = self.model;
        if k == 0 {
            return Ok((model.reward(x, a), model.cost(x, a)));
        }
        let succ = model.kernel().successors(x, a);
        let (mut fs, mut gs) = (0.0, 0.0);
        for (p, y) in succ {
            let (fy, gy) = self.value(y, k - 1)?;
            fs += p * fy;
            gs += p * gy;
        }
        Ok((
            model.reward(x, a) + model.beta() * fs,
            model.cost(x, a) + model.beta() * gs,
        ))
    }

    /// Full bundle `(F_k, G_k, f_k, g_k)` at `x` with certificates.
    pub fn bundle(&mut self, x: f64, k: usize) -> Result<MetricBundle> {
        let model = self.model;
        model.states().check(x)?;
        if k > self.limits.horizon_cap {
            return Err(Error::HorizonCap {
                required: k,
                cap: self.limits.horizon_cap,
            });
        }
        let (fb, gb) = self.value(x, k)?;
        let (f1, g1) = self.forced(x, Action::Active, k)?;
        let (f0, g0) = self.forced(x, Action::Passive, k)?;
        let e = model.truncation_bound(k) * model.w(x);
        Ok(MetricBundle {
            reward: fb,
            resource: gb,
            marginal_reward: f1 - f0,
            marginal_resource: g1 - g0,
            horizon: Some(k),
            reward_err: e,
            resource_err: e,
            fg_err: 2.0 * e,
        })
    }
}

// ── Free-standing operations ────────────────────────────────────────────────

/// `k`-horizon metrics of a threshold policy at `x`. A randomized policy is
/// evaluated as the mixture of its `z` and `z⁻` endpoints.
pub fn k_horizon_metrics(
    model: &BanditModel,
    x: f64,
    policy: &ThresholdSpec,
    k: usize,
) -> Result<MetricBundle> {
    k_horizon_metrics_with(model, x, policy, k, EngineLimits::default())
}

pub fn k_horizon_metrics_with(
    model: &BanditModel,
    x: f64,
    policy: &ThresholdSpec,
    k: usize,
    limits: EngineLimits,
) -> Result<MetricBundle> {
    if let Some(alpha) = policy.alpha {
        let right = PolicyEvaluator::new(model, policy.with_side(Side::Right), limits).bundle(x, k)?;
        let left = PolicyEvaluator::new(model, policy.with_side(Side::Left), limits).bundle(x, k)?;
        return Ok(right.mix(&left, alpha));
    }
    PolicyEvaluator::new(model, *policy, limits).bundle(x, k)
}

/// Metrics with `F_err <= tol * w(x)`.
pub fn metrics_to_tolerance(
    model: &BanditModel,
    x: f64,
    policy: &ThresholdSpec,
    tol: f64,
) -> Result<MetricBundle> {
    let limits = EngineLimits::default();
    let k = horizon_for_tolerance(model.weight().m, model.gamma(), 1.0, tol)?;
    if k > limits.horizon_cap {
        return Err(Error::HorizonCap {
            required: k,
            cap: limits.horizon_cap,
        });
    }
    k_horizon_metrics_with(model, x, policy, k, limits)
}

/// Metrics integrated against an initial distribution by its quadrature
/// nodes; certificates are scaled by `‖nu0‖_w`.
pub fn distribution_metrics(
    model: &BanditModel,
    nu0: &InitialDistribution,
    policy: &ThresholdSpec,
    k: usize,
) -> Result<MetricBundle> {
    nu0.validate(model.states())?;
    if let Some(alpha) = policy.alpha {
        let z = policy
            .z
            .finite()
            .ok_or_else(|| Error::InvalidArgument("randomization needs a finite threshold".into()))?;
        return randomized_threshold_metrics(model, nu0, z, alpha, k);
    }
    let mut ev = PolicyEvaluator::new(model, *policy, EngineLimits::default());
    let mut acc = MetricBundle::exact(0.0, 0.0, 0.0, 0.0);
    acc.horizon = Some(k);
    for (x, p) in nu0.nodes() {
        let b = ev.bundle(x, k)?;
        acc.reward += p * b.reward;
        acc.resource += p * b.resource;
        acc.marginal_reward += p * b.marginal_reward;
        acc.marginal_resource += p * b.marginal_resource;
    }
    let e = model.truncation_bound(k) * nu0.w_norm(model);
    acc.reward_err = e;
    acc.resource_err = e;
    acc.fg_err = 2.0 * e;
    Ok(acc)
}

/// `alpha * M(nu0, z) + (1 - alpha) * M(nu0, z⁻)` for each metric `M`.
pub fn randomized_threshold_metrics(
    model: &BanditModel,
    nu0: &InitialDistribution,
    z: f64,
    alpha: f64,
    k: usize,
) -> Result<MetricBundle> {
    ThresholdSpec::randomized(z, alpha)?;
    let right = distribution_metrics(model, nu0, &ThresholdSpec::z(z), k)?;
    let left = distribution_metrics(model, nu0, &ThresholdSpec::z_minus(z), k)?;
    Ok(right.mix(&left, alpha))
}

/// Index at a fixed horizon, evaluating on a caller-supplied evaluator for
/// the `x`-policy (so its memo can be reused).
pub fn index_from_evaluator(
    ev: &mut PolicyEvaluator<'_>,
    x: f64,
    k: usize,
) -> Result<MPIndexValue> {
    let b = ev.bundle(x, k)?;
    index_from_bundle(x, &b)
}

/// Index and certificate from a bundle evaluated under the `x`-policy.
pub fn index_from_bundle(x: f64, b: &MetricBundle) -> Result<MPIndexValue> {
    let k = b.horizon.unwrap_or(0);
    let g = b.marginal_resource;
    let g_floor = g - b.fg_err;
    if !(g_floor > 0.0) {
        return Err(Error::NotCertifiable {
            x,
            g_k: g,
            bound: b.fg_err,
            horizon: k,
        });
    }
    let m = b.marginal_reward / g;
    Ok(MPIndexValue {
        x,
        m,
        err: b.fg_err * (1.0 + m.abs()) / g_floor,
        g_floor,
        horizon: k,
    })
}

/// MP index `m(x) = f_k(x,x) / g_k(x,x)`.
///
/// With a tolerance the horizon starts where the marginal certificate drops
/// below `tol` and grows until the index certificate does too.
pub fn mp_index_at(model: &BanditModel, x: f64, precision: Precision) -> Result<MPIndexValue> {
    mp_index_at_with(model, x, precision, EngineLimits::default())
}

pub fn mp_index_at_with(
    model: &BanditModel,
    x: f64,
    precision: Precision,
    limits: EngineLimits,
) -> Result<MPIndexValue> {
    model.states().check(x)?;
    let mut ev = PolicyEvaluator::new(model, ThresholdSpec::z(x), limits);
    match precision {
        Precision::Horizon(k) => index_from_evaluator(&mut ev, x, k),
        Precision::Tolerance(tol) => {
            let gamma = model.gamma();
            let mut k = horizon_for_tolerance(model.weight().m, gamma, 2.0 * model.w(x), tol)?;
            loop {
                if k > limits.horizon_cap {
                    return Err(Error::HorizonCap {
                        required: k,
                        cap: limits.horizon_cap,
                    });
                }
                let v = match index_from_evaluator(&mut ev, x, k) {
                    Ok(v) => v,
                    // A larger horizon shrinks the bound and may certify g.
                    Err(Error::NotCertifiable { g_k, .. }) if g_k > 0.0 && gamma > 0.0 => {
                        k = k + k / 2 + 8;
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                if v.err <= tol || gamma == 0.0 {
                    return Ok(v);
                }
                let extra = ((v.err / tol).ln() / (1.0 / gamma).ln()).ceil().max(1.0) as usize;
                k += extra;
            }
        }
    }
}

/// One table entry: the index or the reason it could not be certified.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub x: f64,
    pub value: Option<MPIndexValue>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

/// Index table over a sorted grid; per-point failures are recorded, not fatal.
pub fn mp_index_table(model: &BanditModel, grid: &[f64], tol: f64) -> Result<Vec<IndexEntry>> {
    if grid.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(Error::InvalidArgument("index grid must be sorted ascending".into()));
    }
    for &x in grid {
        model.states().check(x)?;
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    Ok(grid
        .par_iter()
        .map(|&x| match mp_index_at(model, x, Precision::Tolerance(tol)) {
            Ok(v) => IndexEntry {
                x,
                value: Some(v),
                failure: None,
            },
            Err(e) => IndexEntry {
                x,
                value: None,
                failure: Some(e.to_string()),
            },
        })
        .collect())
}

// ── Reachable states ────────────────────────────────────────────────────────

/// Distinct states reachable from a root in at most `k` steps under any
/// action sequence, sorted ascending.
///
/// Deduplication is by exact floating-point identity: these states are the
/// candidate jump points of `z -> G(x, z)`, and merging two neighbours a few
/// ulps apart would drop a jump. Geometric ladders still stop growing once
/// they land on their floating-point fixed point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReachableSet {
    pub root: f64,
    pub depth: usize,
    pub states: Vec<f64>,
}

impl ReachableSet {
    pub fn contains(&self, x: f64) -> bool {
        let key = state_key(x);
        self.states.iter().any(|&s| state_key(s) == key)
    }
}

pub fn reachable_set(model: &BanditModel, x: f64, k: usize) -> Result<ReachableSet> {
    reachable_set_with(model, x, k, EngineLimits::default())
}

pub fn reachable_set_with(
    model: &BanditModel,
    x: f64,
    k: usize,
    limits: EngineLimits,
) -> Result<ReachableSet> {
    model.states().check(x)?;
    let mut seen = FxHashSet::default();
    let mut states = vec![x];
    seen.insert(state_key(x));
    let mut layer = vec![x];
    for _ in 0..k {
        let mut next = Vec::new();
        for &s in &layer {
            for a in [Action::Passive, Action::Active] {
                model.kernel().for_each_successor(s, a, |_, y| {
                    if seen.insert(state_key(y)) {
                        next.push(y);
                    }
                });
            }
        }
        if seen.len() > limits.memo_cap {
            return Err(Error::MemoCap {
                cap: limits.memo_cap,
                horizon: k,
            });
        }
        if next.is_empty() {
            break;
        }
        states.extend_from_slice(&next);
        layer = next;
    }
    states.sort_by(f64::total_cmp);
    Ok(ReachableSet {
        root: x,
        depth: k,
        states,
    })
}
