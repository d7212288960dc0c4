//! Resource-constrained multi-project scheduling.
//!
//! Relaxing the per-period budget with a price `lambda` decouples the
//! projects; each subproblem is solved by the threshold policy at the
//! generalized inverse of its MP index, and
//! `L(lambda) = b lambda / (1 - beta) + sum_i V_i(lambda)` bounds the optimum
//! from above. The index policy activates projects greedily by current index.

use std::sync::RwLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::engine::{
    horizon_for_tolerance, mp_index_at, EngineLimits, IndexEntry, MPIndexValue, PolicyEvaluator,
    Precision,
};
use crate::error::{Error, Result};
use crate::model::{Action, BanditModel, ExtReal, ThresholdSpec};
use crate::pcl::{full_report, PCLReport, PclGrids, PclTolerances};

/// Slack for floating-point budget comparisons.
const BUDGET_SLACK: f64 = 1e-12;
/// Certificate target for subproblem values and on-line indices.
const VALUE_TOL: f64 = 1e-10;
const INDEX_TOL: f64 = 1e-9;
/// Width to which each generalized-inverse threshold is refined.
const THRESHOLD_WIDTH: f64 = 1e-12;

/// A project together with the PCL report that licenses its index.
#[derive(Debug, Clone)]
pub struct CertifiedProject {
    pub model: BanditModel,
    pub report: PCLReport,
    table: Vec<MPIndexValue>,
}

impl CertifiedProject {
    /// Runs the full PCL report and keeps the project only if it passes.
    pub fn certify(model: BanditModel, grids: &PclGrids, tols: &PclTolerances) -> Result<Self> {
        let report = full_report(&model, grids, tols)?;
        Self::from_report(model, report, 0)
    }

    pub fn from_report(model: BanditModel, report: PCLReport, id: usize) -> Result<Self> {
        if !report.passed() {
            return Err(Error::ProjectNotCertified { project: id });
        }
        let table = certified_table(&report.index_table)?;
        Ok(Self {
            model,
            report,
            table,
        })
    }

    pub fn index_table(&self) -> &[MPIndexValue] {
        &self.table
    }
}

fn certified_table(entries: &[IndexEntry]) -> Result<Vec<MPIndexValue>> {
    entries
        .iter()
        .map(|e| {
            e.value
                .ok_or_else(|| Error::Uncertified(format!("no certified index at x = {}", e.x)))
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct RMABPInstance {
    pub projects: Vec<CertifiedProject>,
    pub budget: f64,
    pub beta: f64,
    pub initial_states: Vec<f64>,
}

impl RMABPInstance {
    pub fn new(projects: Vec<CertifiedProject>, budget: f64, initial_states: Vec<f64>) -> Result<Self> {
        if projects.is_empty() {
            return Err(Error::InvalidArgument("instance needs at least one project".into()));
        }
        if projects.len() != initial_states.len() {
            return Err(Error::InvalidArgument(format!(
                "{} projects but {} initial states",
                projects.len(),
                initial_states.len()
            )));
        }
        let beta = projects[0].model.beta();
        if projects.iter().any(|p| p.model.beta() != beta) {
            return Err(Error::InvalidArgument("all projects must share beta".into()));
        }
        for (p, &x) in projects.iter().zip(&initial_states) {
            p.model.states().check(x)?;
        }
        // Some joint state must leave passivity affordable, judged on each
        // project's certified grid; a step where it is not is reported as an
        // infeasibility error by the policy.
        let passive_floor: f64 = projects
            .iter()
            .map(|p| {
                p.table
                    .iter()
                    .map(|v| p.model.cost(v.x, Action::Passive))
                    .fold(f64::INFINITY, f64::min)
            })
            .sum();
        if !(budget >= passive_floor - BUDGET_SLACK) {
            return Err(Error::Infeasible(format!(
                "budget {budget} is below the least passive cost {passive_floor}"
            )));
        }
        Ok(Self {
            projects,
            budget,
            beta,
            initial_states,
        })
    }

    pub fn n(&self) -> usize {
        self.projects.len()
    }

    /// `n * M_gamma`, the scale of the truncation bias.
    pub fn value_scale(&self) -> f64 {
        self.projects.iter().map(|p| p.model.m_gamma()).sum()
    }

    /// Smallest `T` with `beta^T * sum_i M_gamma_i <= tol`.
    pub fn horizon_for_bias(&self, tol: f64) -> Result<usize> {
        horizon_for_tolerance(self.value_scale() * (1.0 - self.beta), self.beta, 1.0, tol)
    }
}

// ── Generalized inverse ─────────────────────────────────────────────────────

/// A threshold `z` in the level/overflow set of `m` at level `lambda`.
///
/// Leftmost grid solution of `m(z) = lambda`, interpolating linearly between
/// bracketing points; `x_0 - 1` when `lambda` lies below the table and
/// `x_last + 1` when above.
pub fn generalized_inverse(table: &[MPIndexValue], lambda: f64) -> Result<ExtReal> {
    if table.is_empty() {
        return Err(Error::InvalidArgument("empty index table".into()));
    }
    for w in table.windows(2) {
        if !(w[0].x < w[1].x) || w[1].m - w[0].m < -(w[0].err + w[1].err + 1e-9) {
            return Err(Error::Uncertified(format!(
                "index table is not sorted and nondecreasing near x = {}",
                w[0].x
            )));
        }
    }
    let first = &table[0];
    let last = &table[table.len() - 1];
    if lambda < first.m {
        return Ok(ExtReal::Finite(first.x - 1.0));
    }
    if lambda > last.m {
        return Ok(ExtReal::Finite(last.x + 1.0));
    }
    let i = table.iter().position(|v| v.m >= lambda).expect("lambda <= max");
    if i == 0 || table[i].m == lambda {
        return Ok(ExtReal::Finite(table[i].x));
    }
    let (a, b) = (&table[i - 1], &table[i]);
    let t = (lambda - a.m) / (b.m - a.m);
    Ok(ExtReal::Finite(a.x + t * (b.x - a.x)))
}

/// Generalized inverse refined between grid points by bisection on the index.
fn refined_threshold(project: &CertifiedProject, lambda: f64) -> Result<ExtReal> {
    let z = generalized_inverse(&project.table, lambda)?;
    let t = &project.table;
    let zf = z.to_f64();
    if zf < t[0].x || zf > t[t.len() - 1].x {
        return Ok(z);
    }
    let i = t.iter().position(|v| v.x >= zf).unwrap_or(t.len() - 1);
    if i == 0 || t[i].x == zf && t[i].m == lambda {
        return Ok(z);
    }
    let (mut lo, mut hi) = (t[i - 1].x, t[i].x);
    while hi - lo > THRESHOLD_WIDTH {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let m = mp_index_at(&project.model, mid, Precision::Tolerance(INDEX_TOL))?.m;
        if m >= lambda {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(ExtReal::Finite(hi))
}

// ── Lagrangian bound ────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectDual {
    pub threshold: ExtReal,
    /// `V_i(lambda) = F - lambda G` at the project's initial state.
    pub value: f64,
    pub reward: f64,
    pub resource: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualSolution {
    pub lambda_opt: f64,
    pub bound: f64,
    /// Truncation certificate on `bound`.
    pub bound_err: f64,
    pub per_project: Vec<ProjectDual>,
}

/// `L(lambda)` and its per-project decomposition.
pub fn lagrangian_value(instance: &RMABPInstance, lambda: f64) -> Result<DualSolution> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!("price must be >= 0, got {lambda}")));
    }
    let mut per_project = Vec::with_capacity(instance.n());
    let mut err = 0.0;
    for (p, &x) in instance.projects.iter().zip(&instance.initial_states) {
        let z = refined_threshold(p, lambda)?;
        let m = &p.model;
        let k = horizon_for_tolerance(m.weight().m, m.gamma(), 1.0, VALUE_TOL)?;
        // At the exact threshold both closures are optimal; taking the better
        // one guards against the last ulps of the refined threshold.
        let mut best: Option<ProjectDual> = None;
        for spec in [ThresholdSpec::z(z), ThresholdSpec::z_minus(z)] {
            let (f, g) = PolicyEvaluator::new(m, spec, EngineLimits::default()).value(x, k)?;
            let v = f - lambda * g;
            if best.is_none_or(|b| v > b.value) {
                best = Some(ProjectDual {
                    threshold: z,
                    value: v,
                    reward: f,
                    resource: g,
                });
            }
        }
        per_project.push(best.expect("two candidates"));
        err += (1.0 + lambda) * m.truncation_bound(k) * m.w(x);
    }
    let bound = instance.budget * lambda / (1.0 - instance.beta)
        + per_project.iter().map(|p| p.value).sum::<f64>();
    Ok(DualSolution {
        lambda_opt: lambda,
        bound,
        bound_err: err,
        per_project,
    })
}

/// Minimizes the convex map `lambda -> L(lambda)` on `[0, lambda_max]` by
/// golden-section search to width `tol`, with `lambda_max = 1 + max index`.
pub fn solve_dual(instance: &RMABPInstance, tol: f64) -> Result<DualSolution> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    let lambda_max = 1.0
        + instance
            .projects
            .iter()
            .flat_map(|p| p.table.iter().map(|v| v.m))
            .fold(f64::NEG_INFINITY, f64::max);
    let mut trace: Vec<(f64, f64)> = Vec::new();
    let mut eval = |l: f64| -> Result<DualSolution> {
        let d = lagrangian_value(instance, l)?;
        trace.push((l, d.bound));
        Ok(d)
    };
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (0.0, lambda_max);
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let mut fc = eval(c)?;
    let mut fd = eval(d)?;
    while b - a > tol {
        if fc.bound <= fd.bound {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = eval(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = eval(d)?;
        }
    }
    let interior = if fc.bound <= fd.bound { fc } else { fd };
    let lo = eval(0.0)?;
    let hi = eval(lambda_max)?;
    check_convex_trace(&trace)?;
    let mut best = interior;
    for cand in [lo, hi] {
        if cand.bound < best.bound {
            best = cand;
        }
    }
    Ok(best)
}

/// Rejects a search trace whose divided second differences are clearly
/// negative.
fn check_convex_trace(trace: &[(f64, f64)]) -> Result<()> {
    let mut pts = trace.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    pts.dedup_by(|b, a| (a.0 - b.0).abs() < 1e-15);
    let scale = pts.iter().map(|p| p.1.abs()).fold(1.0, f64::max);
    for w in pts.windows(3) {
        let s1 = (w[1].1 - w[0].1) / (w[1].0 - w[0].0);
        let s2 = (w[2].1 - w[1].1) / (w[2].0 - w[1].0);
        // Slopes over tiny intervals carry round-off of order eps*scale/width.
        let noise = 1e-9 * scale * (1.0 / (w[1].0 - w[0].0) + 1.0 / (w[2].0 - w[1].0));
        if s2 < s1 - noise - 1e-8 {
            let listing: Vec<String> = pts.iter().map(|(l, v)| format!("({l}, {v})")).collect();
            return Err(Error::Numeric(format!(
                "dual function not convex near lambda = {}; trace: {}",
                w[1].0,
                listing.join(" ")
            )));
        }
    }
    Ok(())
}

// ── Index policy ────────────────────────────────────────────────────────────

/// Greedy activation by nonincreasing index (ties by lower id), skipping any
/// project whose activation would exceed the budget.
pub fn index_policy_step(
    indices: &[f64],
    costs_active: &[f64],
    costs_passive: &[f64],
    budget: f64,
) -> Result<Vec<Action>> {
    let n = indices.len();
    if costs_active.len() != n || costs_passive.len() != n {
        return Err(Error::InvalidArgument("per-project slices differ in length".into()));
    }
    let mut usage: f64 = costs_passive.iter().sum();
    if usage > budget + BUDGET_SLACK {
        return Err(Error::Infeasible(format!(
            "passive costs {usage} exceed budget {budget}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| indices[j].total_cmp(&indices[i]).then(i.cmp(&j)));
    let mut actions = vec![Action::Passive; n];
    for i in order {
        let extra = costs_active[i] - costs_passive[i];
        if usage + extra <= budget + BUDGET_SLACK {
            usage += extra;
            actions[i] = Action::Active;
        }
    }
    Ok(actions)
}

/// Caches on-line index evaluations per project and state.
struct IndexOracle<'a> {
    models: Vec<&'a BanditModel>,
    cache: Vec<RwLock<FxHashMap<u64, f64>>>,
}

impl<'a> IndexOracle<'a> {
    fn new(instance: &'a RMABPInstance) -> Self {
        Self {
            models: instance.projects.iter().map(|p| &p.model).collect(),
            cache: instance.projects.iter().map(|_| RwLock::default()).collect(),
        }
    }

    fn index(&self, project: usize, x: f64) -> Result<f64> {
        let key = x.to_bits();
        if let Some(&m) = self.cache[project].read().expect("index cache poisoned").get(&key) {
            return Ok(m);
        }
        let m = mp_index_at(self.models[project], x, Precision::Tolerance(INDEX_TOL))?.m;
        self.cache[project]
            .write()
            .expect("index cache poisoned")
            .insert(key, m);
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub mean_value: f64,
    /// 95% normal confidence half-width.
    pub half_width: f64,
    pub std_dev: f64,
    pub episodes: u64,
    pub horizon: usize,
    pub seed: u64,
    /// Bound on the discounted reward beyond the horizon.
    pub truncation_bias: f64,
    pub budget_violations: u64,
}

/// Monte Carlo value of the index policy.
///
/// Episode `e` draws from `ChaCha8Rng::seed_from_u64(seed)` on stream `e`,
/// so results do not depend on how episodes are scheduled across threads.
pub fn simulate_index_policy(
    instance: &RMABPInstance,
    episodes: u64,
    horizon: usize,
    seed: u64,
) -> Result<SimResult> {
    if episodes == 0 {
        return Err(Error::InvalidArgument("need at least one episode".into()));
    }
    let oracle = IndexOracle::new(instance);
    let values: Vec<f64> = (0..episodes)
        .into_par_iter()
        .map(|e| run_episode(instance, &oracle, e, horizon, seed))
        .collect::<Result<_>>()?;
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let sd = var.sqrt();
    Ok(SimResult {
        mean_value: mean,
        half_width: 1.96 * sd / n.sqrt(),
        std_dev: sd,
        episodes,
        horizon,
        seed,
        truncation_bias: instance.value_scale() * instance.beta.powi(horizon as i32),
        budget_violations: 0,
    })
}

fn run_episode(
    instance: &RMABPInstance,
    oracle: &IndexOracle<'_>,
    episode: u64,
    horizon: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(episode);
    let n = instance.n();
    let mut xs = instance.initial_states.clone();
    let mut idx = vec![0.0; n];
    let mut ca = vec![0.0; n];
    let mut cp = vec![0.0; n];
    let mut total = 0.0;
    let mut disc = 1.0;
    for step in 0..horizon {
        for i in 0..n {
            let m = &instance.projects[i].model;
            idx[i] = oracle.index(i, xs[i])?;
            ca[i] = m.cost(xs[i], Action::Active);
            cp[i] = m.cost(xs[i], Action::Passive);
        }
        let actions = index_policy_step(&idx, &ca, &cp, instance.budget)?;
        let mut usage = 0.0;
        for i in 0..n {
            let m = &instance.projects[i].model;
            usage += m.cost(xs[i], actions[i]);
            total += disc * m.reward(xs[i], actions[i]);
        }
        if usage > instance.budget + BUDGET_SLACK {
            return Err(Error::BudgetViolation {
                episode,
                step,
                usage,
                budget: instance.budget,
            });
        }
        for i in 0..n {
            xs[i] = sample_next(&instance.projects[i].model, xs[i], actions[i], &mut rng);
        }
        disc *= instance.beta;
    }
    Ok(total)
}

fn sample_next(model: &BanditModel, x: f64, a: Action, rng: &mut ChaCha8Rng) -> f64 {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = x;
    for b in model.kernel().branches(a) {
        let p = (b.prob)(x);
        if p == 0.0 {
            continue;
        }
        last = (b.map)(x);
        acc += p;
        if u < acc {
            return last;
        }
    }
    // Probabilities summing to slightly under one.
    last
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: f64, m: f64) -> MPIndexValue {
        MPIndexValue {
            x,
            m,
            err: 0.0,
            g_floor: 1.0,
            horizon: 0,
        }
    }

    #[test]
    fn greedy_with_skip() {
        let a = index_policy_step(&[0.3, 0.2, 0.1], &[0.6, 0.6, 0.3], &[0.0; 3], 1.0).unwrap();
        assert_eq!(a, vec![Action::Active, Action::Passive, Action::Active]);
        let a = index_policy_step(&[0.3, 0.2], &[1.0, 1.0], &[0.0, 0.0], 1.0).unwrap();
        assert_eq!(a, vec![Action::Active, Action::Passive]);
        let a = index_policy_step(&[0.1, 0.2], &[1.0, 1.0], &[0.0, 0.0], 5.0).unwrap();
        assert_eq!(a, vec![Action::Active, Action::Active]);
        assert!(index_policy_step(&[0.1], &[1.0], &[2.0], 1.0).is_err());
    }

    #[test]
    fn ties_go_to_lower_id() {
        let a = index_policy_step(&[0.5, 0.5], &[1.0, 1.0], &[0.0, 0.0], 1.0).unwrap();
        assert_eq!(a, vec![Action::Active, Action::Passive]);
    }

    #[test]
    fn inverse_cases() {
        let t = vec![v(0.0, 0.0), v(0.5, 0.5), v(1.0, 2.0)];
        assert_eq!(generalized_inverse(&t, -1.0).unwrap(), ExtReal::Finite(-1.0));
        assert_eq!(generalized_inverse(&t, 3.0).unwrap(), ExtReal::Finite(2.0));
        assert_eq!(generalized_inverse(&t, 0.25).unwrap(), ExtReal::Finite(0.25));
        assert_eq!(generalized_inverse(&t, 0.5).unwrap(), ExtReal::Finite(0.5));
        assert_eq!(generalized_inverse(&t, 1.25).unwrap(), ExtReal::Finite(0.75));
        let flat = vec![v(0.0, 0.0), v(0.5, 1.0), v(1.0, 1.0)];
        assert_eq!(generalized_inverse(&flat, 1.0).unwrap(), ExtReal::Finite(0.5));
        let bad = vec![v(0.0, 1.0), v(1.0, 0.0)];
        assert!(matches!(generalized_inverse(&bad, 0.5), Err(Error::Uncertified(_))));
    }

    #[test]
    fn convexity_trace_check() {
        assert!(check_convex_trace(&[(0.0, 1.0), (1.0, 0.0), (2.0, 1.0)]).is_ok());
        assert!(check_convex_trace(&[(0.0, 0.0), (1.0, 1.0), (2.0, 0.0)]).is_err());
    }
}
