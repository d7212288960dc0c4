//! Single-project restless bandit model.
//!
//! A project lives on a closed real interval, earns `r(x, a)` and consumes
//! `c(x, a)` per period, and moves according to a finite mixture of
//! deterministic maps per action: from `x` under action `a` it jumps to
//! `h_i^a(x)` with probability `p_i^a(x)`. Both bundled models have this
//! form, and it lets the metrics engine run exact value iteration over the
//! reachable states.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Tolerance on branch-probability sums.
pub const PROB_SUM_TOL: f64 = 1e-12;

pub type StateFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type StageFn = Arc<dyn Fn(f64, Action) -> f64 + Send + Sync>;

/// Extended real number used for thresholds and interval endpoints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExtReal {
    NegInf,
    Finite(f64),
    PosInf,
}

impl ExtReal {
    pub fn to_f64(self) -> f64 {
        match self {
            ExtReal::NegInf => f64::NEG_INFINITY,
            ExtReal::Finite(v) => v,
            ExtReal::PosInf => f64::INFINITY,
        }
    }

    pub fn from_f64(v: f64) -> Self {
        if v == f64::INFINITY {
            ExtReal::PosInf
        } else if v == f64::NEG_INFINITY {
            ExtReal::NegInf
        } else {
            ExtReal::Finite(v)
        }
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            ExtReal::Finite(v) => Some(v),
            _ => None,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, ExtReal::Finite(_))
    }
}

impl From<f64> for ExtReal {
    fn from(v: f64) -> Self {
        ExtReal::from_f64(v)
    }
}

impl fmt::Display for ExtReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtReal::NegInf => write!(f, "-inf"),
            ExtReal::Finite(v) => write!(f, "{v}"),
            ExtReal::PosInf => write!(f, "inf"),
        }
    }
}

// Finite values serialize as JSON numbers, infinities as "-inf" / "inf".
#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ExtRealRepr {
    Num(f64),
    Str(String),
}

impl Serialize for ExtReal {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            ExtReal::Finite(v) => ExtRealRepr::Num(*v).serialize(s),
            ExtReal::NegInf => ExtRealRepr::Str("-inf".into()).serialize(s),
            ExtReal::PosInf => ExtRealRepr::Str("inf".into()).serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for ExtReal {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match ExtRealRepr::deserialize(d)? {
            ExtRealRepr::Num(v) => Ok(ExtReal::Finite(v)),
            ExtRealRepr::Str(s) => match s.as_str() {
                "-inf" | "-infinity" => Ok(ExtReal::NegInf),
                "inf" | "+inf" | "infinity" => Ok(ExtReal::PosInf),
                other => Err(serde::de::Error::custom(format!(
                    "expected a number, \"-inf\" or \"inf\", got {other:?}"
                ))),
            },
        }
    }
}

/// Closed, possibly unbounded, state interval `[lower, upper]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateInterval {
    pub lower: ExtReal,
    pub upper: ExtReal,
}

impl StateInterval {
    pub fn new(lower: impl Into<ExtReal>, upper: impl Into<ExtReal>) -> Result<Self> {
        let (lower, upper) = (lower.into(), upper.into());
        if !(lower.to_f64() < upper.to_f64()) {
            return Err(Error::InvalidModel(format!(
                "state interval needs lower < upper, got [{lower}, {upper}]"
            )));
        }
        Ok(Self { lower, upper })
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lower.to_f64() <= x && x <= self.upper.to_f64()
    }

    pub fn is_bounded(&self) -> bool {
        self.lower.is_finite() && self.upper.is_finite()
    }

    pub fn check(&self, x: f64) -> Result<()> {
        if self.contains(x) {
            Ok(())
        } else {
            Err(Error::Domain {
                x,
                lower: self.lower.to_f64(),
                upper: self.upper.to_f64(),
            })
        }
    }

    /// `n` equally spaced points covering the interval, endpoints included.
    pub fn grid(&self, n: usize) -> Result<Vec<f64>> {
        match (self.lower, self.upper) {
            (ExtReal::Finite(a), ExtReal::Finite(b)) => Ok(linspace(a, b, n)),
            _ => Err(Error::InvalidArgument(
                "a default grid needs a bounded state interval".into(),
            )),
        }
    }
}

/// `n` equally spaced points from `a` to `b` inclusive; the last point is exactly `b`.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..n)
            .map(|i| {
                if i == n - 1 {
                    b
                } else {
                    a + (b - a) * i as f64 / (n - 1) as f64
                }
            })
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Passive,
    Active,
}

impl Action {
    pub fn from_bool(active: bool) -> Self {
        if active {
            Action::Active
        } else {
            Action::Passive
        }
    }

    pub fn as_u8(self) -> u8 {
        match self {
            Action::Passive => 0,
            Action::Active => 1,
        }
    }
}

/// One deterministic branch of a mixture kernel.
#[derive(Clone)]
pub struct Branch {
    pub prob: StateFn,
    pub map: StateFn,
}

impl Branch {
    pub fn new(
        prob: impl Fn(f64) -> f64 + Send + Sync + 'static,
        map: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            prob: Arc::new(prob),
            map: Arc::new(map),
        }
    }

    /// Branch taken with probability one.
    pub fn certain(map: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self::new(|_| 1.0, map)
    }
}

/// Finite mixture of deterministic maps, one branch list per action.
#[derive(Clone)]
pub struct FiniteMixtureKernel {
    passive: Vec<Branch>,
    active: Vec<Branch>,
}

impl FiniteMixtureKernel {
    pub fn new(passive: Vec<Branch>, active: Vec<Branch>) -> Result<Self> {
        if passive.is_empty() || active.is_empty() {
            return Err(Error::InvalidModel(
                "each action needs at least one kernel branch".into(),
            ));
        }
        Ok(Self { passive, active })
    }

    pub fn branches(&self, a: Action) -> &[Branch] {
        match a {
            Action::Passive => &self.passive,
            Action::Active => &self.active,
        }
    }

    /// Calls `f(p, y)` for every branch with nonzero probability.
    #[inline]
    pub fn for_each_successor(&self, x: f64, a: Action, mut f: impl FnMut(f64, f64)) {
        for b in self.branches(a) {
            let p = (b.prob)(x);
            if p != 0.0 {
                f(p, (b.map)(x));
            }
        }
    }

    pub fn successors(&self, x: f64, a: Action) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(self.branches(a).len());
        self.for_each_successor(x, a, |p, y| out.push((p, y)));
        out
    }

    /// Checks the probability and support invariants at one state.
    pub fn check_at(&self, x: f64, states: &StateInterval) -> std::result::Result<(), String> {
        for a in [Action::Passive, Action::Active] {
            let mut sum = 0.0;
            for b in self.branches(a) {
                let p = (b.prob)(x);
                if !(0.0..=1.0).contains(&p) {
                    return Err(format!("branch probability {p} outside [0,1] at x = {x}"));
                }
                sum += p;
                let y = (b.map)(x);
                if p > 0.0 && !states.contains(y) {
                    return Err(format!(
                        "map sends x = {x} under {a:?} to {y}, outside the state interval"
                    ));
                }
            }
            if (sum - 1.0).abs() > PROB_SUM_TOL {
                return Err(format!(
                    "branch probabilities under {a:?} sum to {sum} at x = {x}"
                ));
            }
        }
        Ok(())
    }
}

/// Weighted sup-norm data `(M, gamma, w)`.
#[derive(Clone)]
pub struct WeightBound {
    pub m: f64,
    pub gamma: f64,
    pub w: StateFn,
    unit: bool,
}

impl WeightBound {
    /// `w = 1` with the given `M` and `gamma`.
    pub fn unit(m: f64, gamma: f64) -> Self {
        Self {
            m,
            gamma,
            w: Arc::new(|_| 1.0),
            unit: true,
        }
    }

    pub fn weighted(m: f64, gamma: f64, w: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            m,
            gamma,
            w: Arc::new(w),
            unit: false,
        }
    }

    pub fn is_unit(&self) -> bool {
        self.unit
    }
}

impl fmt::Debug for WeightBound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("WeightBound")
            .field("m", &self.m)
            .field("gamma", &self.gamma)
            .field("unit_weight", &self.unit)
            .finish()
    }
}

/// A single restless project. Immutable once built.
#[derive(Clone)]
pub struct BanditModel {
    name: String,
    states: StateInterval,
    reward: StageFn,
    cost: StageFn,
    kernel: FiniteMixtureKernel,
    beta: f64,
    weight: WeightBound,
}

impl fmt::Debug for BanditModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BanditModel")
            .field("name", &self.name)
            .field("states", &self.states)
            .field("beta", &self.beta)
            .field("weight", &self.weight)
            .finish_non_exhaustive()
    }
}

impl BanditModel {
    pub fn new(
        name: impl Into<String>,
        states: StateInterval,
        reward: StageFn,
        cost: StageFn,
        kernel: FiniteMixtureKernel,
        beta: f64,
        weight: WeightBound,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&beta) {
            return Err(Error::InvalidModel(format!(
                "discount factor must lie in [0,1), got {beta}"
            )));
        }
        if !(weight.gamma >= beta && weight.gamma < 1.0) {
            return Err(Error::InvalidModel(format!(
                "need beta <= gamma < 1, got beta = {beta}, gamma = {}",
                weight.gamma
            )));
        }
        if !(weight.m > 0.0 && weight.m.is_finite()) {
            return Err(Error::InvalidModel(format!(
                "bound M must be positive and finite, got {}",
                weight.m
            )));
        }
        Ok(Self {
            name: name.into(),
            states,
            reward,
            cost,
            kernel,
            beta,
            weight,
        })
    }

    /// Builds a model with `w = 1`, `gamma = beta` and `M` taken as the largest
    /// `max(|r|, c)` seen on `grid`.
    pub fn with_default_bound(
        name: impl Into<String>,
        states: StateInterval,
        reward: StageFn,
        cost: StageFn,
        kernel: FiniteMixtureKernel,
        beta: f64,
        grid: &[f64],
    ) -> Result<Self> {
        let mut m: f64 = 0.0;
        for &x in grid {
            for a in [Action::Passive, Action::Active] {
                m = m.max(reward(x, a).abs()).max(cost(x, a));
            }
        }
        if m == 0.0 {
            m = f64::EPSILON;
        }
        Self::new(
            name,
            states,
            reward,
            cost,
            kernel,
            beta,
            WeightBound::unit(m, beta),
        )
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn states(&self) -> &StateInterval {
        &self.states
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn weight(&self) -> &WeightBound {
        &self.weight
    }

    pub fn kernel(&self) -> &FiniteMixtureKernel {
        &self.kernel
    }

    #[inline]
    pub fn reward(&self, x: f64, a: Action) -> f64 {
        (self.reward)(x, a)
    }

    #[inline]
    pub fn cost(&self, x: f64, a: Action) -> f64 {
        (self.cost)(x, a)
    }

    #[inline]
    pub fn w(&self, x: f64) -> f64 {
        (self.weight.w)(x)
    }

    pub fn gamma(&self) -> f64 {
        self.weight.gamma
    }

    /// `M_gamma = M / (1 - gamma)`.
    pub fn m_gamma(&self) -> f64 {
        self.weight.m / (1.0 - self.weight.gamma)
    }

    /// Truncation bound `M_gamma * gamma^k` on `F_k` and `G_k` (per unit of `w`).
    pub fn truncation_bound(&self, k: usize) -> f64 {
        self.m_gamma() * pow_usize(self.weight.gamma, k)
    }
}

pub(crate) fn pow_usize(base: f64, k: usize) -> f64 {
    if k <= i32::MAX as usize {
        base.powi(k as i32)
    } else {
        base.powf(k as f64)
    }
}

/// Which side of the threshold is closed on the active region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    /// `z`-policy: active iff `x > z`.
    Right,
    /// `z⁻`-policy: active iff `x >= z`.
    Left,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Side::Right => write!(f, "z"),
            Side::Left => write!(f, "z-"),
        }
    }
}

/// Threshold policy, optionally randomized at the threshold.
///
/// `alpha` is the probability of the passive action at `x = z`, so the
/// randomized policy interpolates between the `z⁻`-policy (`alpha = 0`) and
/// the `z`-policy (`alpha = 1`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSpec {
    pub z: ExtReal,
    pub side: Side,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

impl ThresholdSpec {
    pub fn z(z: impl Into<ExtReal>) -> Self {
        Self {
            z: z.into(),
            side: Side::Right,
            alpha: None,
        }
    }

    pub fn z_minus(z: impl Into<ExtReal>) -> Self {
        Self {
            z: z.into(),
            side: Side::Left,
            alpha: None,
        }
    }

    pub fn always_active() -> Self {
        Self::z(ExtReal::NegInf)
    }

    pub fn never_active() -> Self {
        Self::z(ExtReal::PosInf)
    }

    pub fn randomized(z: f64, alpha: f64) -> Result<Self> {
        if !z.is_finite() {
            return Err(Error::InvalidArgument(
                "randomization needs a finite threshold".into(),
            ));
        }
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidArgument(format!(
                "mixing weight must lie in [0,1], got {alpha}"
            )));
        }
        Ok(Self {
            z: ExtReal::Finite(z),
            side: Side::Right,
            alpha: Some(alpha),
        })
    }

    /// Same threshold with the given closure side and no randomization.
    pub fn with_side(self, side: Side) -> Self {
        Self {
            z: self.z,
            side,
            alpha: None,
        }
    }

    /// Deterministic active-region test. Randomization is ignored.
    #[inline]
    pub fn is_active(&self, x: f64) -> bool {
        match self.z {
            ExtReal::NegInf => true,
            ExtReal::PosInf => false,
            ExtReal::Finite(z) => match self.side {
                Side::Right => x > z,
                Side::Left => x >= z,
            },
        }
    }
}

/// Action taken by `policy` in state `x`. `coin` is a uniform draw used only
/// when the policy randomizes and `x` sits exactly on the threshold; the
/// passive action is taken with probability `alpha`.
pub fn action_of(
    states: &StateInterval,
    policy: &ThresholdSpec,
    x: f64,
    coin: Option<f64>,
) -> Result<Action> {
    states.check(x)?;
    if let (Some(alpha), ExtReal::Finite(z)) = (policy.alpha, policy.z) {
        if x == z {
            let coin = coin.ok_or_else(|| {
                Error::InvalidArgument("a coin draw is required at the threshold".into())
            })?;
            let passive = alpha >= 1.0 || coin < alpha;
            return Ok(Action::from_bool(!passive));
        }
        return Ok(Action::from_bool(x > z));
    }
    Ok(Action::from_bool(policy.is_active(x)))
}

/// Initial-state distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialDistribution {
    PointMass { x: f64 },
    /// Uniform on `[a, b]`, discretized by the `n`-node midpoint rule.
    Uniform { a: f64, b: f64, n: usize },
    Nodes { nodes: Vec<(f64, f64)> },
}

impl InitialDistribution {
    /// Quadrature nodes `(x, weight)`.
    pub fn nodes(&self) -> Vec<(f64, f64)> {
        match self {
            InitialDistribution::PointMass { x } => vec![(*x, 1.0)],
            InitialDistribution::Uniform { a, b, n } => {
                let h = (b - a) / *n as f64;
                (0..*n)
                    .map(|i| (a + (i as f64 + 0.5) * h, 1.0 / *n as f64))
                    .collect()
            }
            InitialDistribution::Nodes { nodes } => nodes.clone(),
        }
    }

    pub fn validate(&self, states: &StateInterval) -> Result<()> {
        if let InitialDistribution::Uniform { a, b, n } = self {
            if *n == 0 || !(a < b) {
                return Err(Error::InvalidArgument(format!(
                    "uniform distribution needs a < b and n >= 1, got [{a}, {b}], n = {n}"
                )));
            }
        }
        let nodes = self.nodes();
        if nodes.is_empty() {
            return Err(Error::InvalidArgument("distribution has no nodes".into()));
        }
        let mut sum = 0.0;
        for &(x, w) in &nodes {
            states.check(x)?;
            if !(w >= 0.0) {
                return Err(Error::InvalidArgument(format!("negative weight {w}")));
            }
            sum += w;
        }
        // Summation round-off grows with the node count.
        let slack = PROB_SUM_TOL.max(nodes.len() as f64 * f64::EPSILON);
        if (sum - 1.0).abs() > slack {
            return Err(Error::InvalidArgument(format!(
                "weights sum to {sum}, expected 1"
            )));
        }
        Ok(())
    }

    /// `‖ν₀‖_w = E[w(X₀)]`.
    pub fn w_norm(&self, model: &BanditModel) -> f64 {
        self.nodes().iter().map(|&(x, p)| p * model.w(x)).sum()
    }

    /// Whether the distribution stands in for a full-support one on `states`.
    /// Only a uniform law spanning the whole interval qualifies.
    pub fn approximates_full_support(&self, states: &StateInterval) -> bool {
        match self {
            InitialDistribution::Uniform { a, b, n } => {
                *n >= 2
                    && Some(*a) == states.lower.finite()
                    && Some(*b) == states.upper.finite()
            }
            _ => false,
        }
    }
}

/// Per-clause verdict of [`validate_model`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClauseCheck {
    pub clause: String,
    pub passed: bool,
    /// Smallest slack observed (negative when violated).
    pub worst_margin: f64,
    pub witness: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub clauses: Vec<ClauseCheck>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.clauses.iter().all(|c| c.passed)
    }

    pub fn clause(&self, name: &str) -> Option<&ClauseCheck> {
        self.clauses.iter().find(|c| c.clause == name)
    }
}

struct Worst {
    margin: f64,
    witness: Option<f64>,
}

impl Worst {
    fn new() -> Self {
        Self {
            margin: f64::INFINITY,
            witness: None,
        }
    }

    fn see(&mut self, margin: f64, x: f64) {
        if margin < self.margin || margin.is_nan() {
            self.margin = margin;
            self.witness = Some(x);
        }
    }

    fn into_check(self, clause: &str, strict: bool) -> ClauseCheck {
        let passed = if strict {
            self.margin > 0.0
        } else {
            self.margin >= 0.0
        };
        ClauseCheck {
            clause: clause.to_string(),
            passed,
            worst_margin: self.margin,
            witness: if passed { None } else { self.witness },
        }
    }
}

/// Checks the standing assumptions on a grid of states.
///
/// Clauses: `kernel` (probabilities sum to one, maps stay inside the
/// interval), `i` (`0 <= c(x,0) < c(x,1)`), `ii.a` (`max(|r|, c) <= M w`),
/// `ii.b` (`beta * E[w(next)] <= gamma w`) and `w` (`w >= 1`).
pub fn validate_model(model: &BanditModel, grid: &[f64]) -> Result<ValidationReport> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("validation grid is empty".into()));
    }
    for &x in grid {
        model.states().check(x)?;
    }
    let wb = model.weight();
    let mut kernel = Worst::new();
    let mut gap = Worst::new();
    let mut nonneg = Worst::new();
    let mut bound_a = Worst::new();
    let mut bound_b = Worst::new();
    let mut weight = Worst::new();
    let mut kernel_msg = None;

    for &x in grid {
        match model.kernel().check_at(x, model.states()) {
            Ok(()) => kernel.see(0.0, x),
            Err(msg) => {
                kernel.see(-1.0, x);
                kernel_msg.get_or_insert(msg);
            }
        }
        let c0 = model.cost(x, Action::Passive);
        let c1 = model.cost(x, Action::Active);
        gap.see(c1 - c0, x);
        nonneg.see(c0, x);
        let wx = model.w(x);
        weight.see(wx - 1.0, x);
        for a in [Action::Passive, Action::Active] {
            let big = model.reward(x, a).abs().max(model.cost(x, a));
            bound_a.see(wb.m * wx - big, x);
            let mut next_w = 0.0;
            model
                .kernel()
                .for_each_successor(x, a, |p, y| next_w += p * model.w(y));
            bound_b.see(wb.gamma * wx - model.beta() * next_w, x);
        }
    }

    let mut warnings = Vec::new();
    if let Some(msg) = kernel_msg {
        warnings.push(msg);
    }
    if !model.states().is_bounded() {
        warnings.push(
            "unbounded state interval: the numeric engine is untested for genuinely unbounded \
             states with a nonconstant weight function"
                .to_string(),
        );
    }
    let gap = gap.into_check("i", true);
    let nonneg = nonneg.into_check("i", false);
    let costs = ClauseCheck {
        clause: "i".into(),
        passed: gap.passed && nonneg.passed,
        worst_margin: gap.worst_margin.min(nonneg.worst_margin),
        witness: gap.witness.or(nonneg.witness),
    };
    let clauses = vec![
        kernel.into_check("kernel", false),
        costs,
        bound_a.into_check("ii.a", false),
        bound_b.into_check("ii.b", false),
        weight.into_check("w", false),
    ];
    Ok(ValidationReport { clauses, warnings })
}
