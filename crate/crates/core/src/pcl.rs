//! Grid certification of PCL-indexability.
//!
//! * PCLI1 — the marginal resource metric `g(x, z)` is positive.
//! * PCLI2 — the MP index is nondecreasing and continuous.
//! * PCLI3 — `F(x, z2) - F(x, z1)` equals the Lebesgue–Stieltjes integral
//!   of `m` against `G(x, .)` over `(z1, z2]`.
//!
//! A project passing all three is threshold-indexable with Whittle index `m`.
//! Everything here is certified on finite grids only; witnesses of failure
//! are genuine counterexamples, passes are "certified on grid".

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{
    horizon_for_tolerance, index_from_evaluator, mp_index_at, mp_index_table, reachable_set_with,
    EngineLimits, IndexEntry, MPIndexValue, PolicyEvaluator, Precision,
};
use crate::error::{Error, Result};
use crate::model::{Action, BanditModel, ExtReal, ThresholdSpec};

pub const SCHEMA_VERSION: &str = "whittle.pcl-report/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

impl Verdict {
    /// Conjunction: any failure fails, otherwise any doubt is inconclusive.
    pub fn and(self, other: Verdict) -> Verdict {
        use Verdict::*;
        match (self, other) {
            (Fail, _) | (_, Fail) => Fail,
            (Inconclusive, _) | (_, Inconclusive) => Inconclusive,
            _ => Pass,
        }
    }
}

// ── PCLI1 ───────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pcli1Verdict {
    pub verdict: Verdict,
    /// `min (g_k - fg_err)` over the grid: a certified lower bound on `g`.
    pub min_certified_g: f64,
    /// Pair attaining the minimum of `g_k`.
    pub argmin: (f64, ExtReal),
    pub min_g: f64,
    /// Present unless the verdict is a pass.
    pub witness: Option<Pcli1Witness>,
    pub horizon: usize,
    pub pairs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pcli1Witness {
    pub x: f64,
    pub z: ExtReal,
    pub g: f64,
    pub bound: f64,
}

/// `g_k(x, z)` and its certificate for every `x` under one `z`-policy.
fn marginal_resource_column(
    model: &BanditModel,
    states: &[f64],
    z: ExtReal,
    k: usize,
    limits: EngineLimits,
) -> Result<Vec<(f64, f64)>> {
    let mut ev = PolicyEvaluator::new(model, ThresholdSpec::z(z), limits);
    let base = 2.0 * model.truncation_bound(k);
    states
        .iter()
        .map(|&x| {
            let (_, g1) = ev.forced(x, Action::Active, k)?;
            let (_, g0) = ev.forced(x, Action::Passive, k)?;
            Ok((g1 - g0, base * model.w(x)))
        })
        .collect()
}

/// Checks `g(x, z) > 0` on `states × thresholds` at the horizon where the
/// marginal certificate drops below `tol`. The threshold grid must contain
/// both infinite sentinels.
pub fn check_pcli1(
    model: &BanditModel,
    states: &[f64],
    thresholds: &[ExtReal],
    tol: f64,
) -> Result<Pcli1Verdict> {
    check_pcli1_with(model, states, thresholds, tol, EngineLimits::default())
}

pub fn check_pcli1_with(
    model: &BanditModel,
    states: &[f64],
    thresholds: &[ExtReal],
    tol: f64,
    limits: EngineLimits,
) -> Result<Pcli1Verdict> {
    if states.is_empty() || thresholds.is_empty() {
        return Err(Error::InvalidArgument("PCLI1 grids must be nonempty".into()));
    }
    if !thresholds.contains(&ExtReal::NegInf) || !thresholds.contains(&ExtReal::PosInf) {
        return Err(Error::InvalidArgument(
            "PCLI1 threshold grid must include the -inf and +inf sentinels".into(),
        ));
    }
    for &x in states {
        model.states().check(x)?;
    }
    let k = horizon_for_tolerance(model.weight().m, model.gamma(), 2.0, tol)?;
    if k > limits.horizon_cap {
        return Err(Error::HorizonCap {
            required: k,
            cap: limits.horizon_cap,
        });
    }
    let columns: Vec<Vec<(f64, f64)>> = thresholds
        .par_iter()
        .map(|&z| marginal_resource_column(model, states, z, k, limits))
        .collect::<Result<_>>()?;

    // Serial reduction in grid order; ties keep the first pair.
    let mut min_cert = f64::INFINITY;
    let mut min_g = f64::INFINITY;
    let mut argmin = (states[0], thresholds[0]);
    let mut argmin_bound = 0.0;
    let mut any_fail = false;
    let mut any_doubt = false;
    for (j, col) in columns.iter().enumerate() {
        for (i, &(g, e)) in col.iter().enumerate() {
            min_cert = min_cert.min(g - e);
            if g < min_g {
                min_g = g;
                argmin = (states[i], thresholds[j]);
                argmin_bound = e;
            }
            if g + e <= 0.0 {
                any_fail = true;
            } else if g - e <= 0.0 {
                any_doubt = true;
            }
        }
    }
    let verdict = if any_fail {
        Verdict::Fail
    } else if any_doubt {
        Verdict::Inconclusive
    } else {
        Verdict::Pass
    };
    let witness = (verdict != Verdict::Pass).then_some(Pcli1Witness {
        x: argmin.0,
        z: argmin.1,
        g: min_g,
        bound: argmin_bound,
    });
    Ok(Pcli1Verdict {
        verdict,
        min_certified_g: min_cert,
        argmin,
        min_g,
        witness,
        horizon: k,
        pairs: states.len() * thresholds.len(),
    })
}

// ── PCLI2 ───────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pcli2Verdict {
    pub verdict: Verdict,
    /// `min (m_{i+1} - m_i + err_i + err_{i+1})`; negative beyond `tol_mono`
    /// means a certified decrease.
    pub monotonicity_margin: f64,
    /// Adjacent pair attaining the margin.
    pub worst_pair: Option<(f64, f64)>,
    pub max_adjacent_gap: f64,
    pub max_gap_pair: Option<(f64, f64)>,
    /// Intervals in which a jump of the index survived every refinement.
    pub detected_jumps: Vec<JumpDiagnostic>,
    pub refinement_factor: usize,
    pub refined_intervals: usize,
    /// Present unless the verdict is a pass.
    pub witness: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpDiagnostic {
    pub left: f64,
    pub right: f64,
    /// Index gap across `[left, right]` at the finest level examined.
    pub gap: f64,
}

/// Number of successive zooms a suspected jump must survive.
const JUMP_LEVELS: usize = 3;

fn certified_values(table: &[IndexEntry]) -> Result<Vec<MPIndexValue>> {
    table
        .iter()
        .map(|e| {
            e.value.ok_or_else(|| {
                Error::Uncertified(format!(
                    "index at x = {} failed: {}",
                    e.x,
                    e.failure.as_deref().unwrap_or("unknown")
                ))
            })
        })
        .collect()
}

/// Monotonicity within certificates plus a refinement-based jump detector.
///
/// An adjacent gap above the noise floor is refined by `refinement_factor`;
/// a continuous segment's largest sub-gap shrinks by at least
/// `refinement_factor / 2`, a jump's does not. Suspects are zoomed into
/// repeatedly before being reported.
pub fn check_pcli2(
    model: &BanditModel,
    table: &[IndexEntry],
    tol_mono: f64,
    refinement_factor: usize,
    index_tol: f64,
) -> Result<Pcli2Verdict> {
    if refinement_factor < 2 {
        return Err(Error::InvalidArgument(
            "refinement factor must be at least 2".into(),
        ));
    }
    let vals = certified_values(table)?;
    let mut margin = f64::INFINITY;
    let mut worst_pair = None;
    let mut max_gap = 0.0;
    let mut max_gap_pair = None;
    let mut suspects = Vec::new();
    let mut decreasing = None;
    for w in vals.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let noise = a.err + b.err + tol_mono;
        let step = b.m - a.m;
        let slack = step + a.err + b.err;
        if slack < margin {
            margin = slack;
            worst_pair = Some((a.x, b.x));
        }
        if step < -noise && decreasing.is_none() {
            decreasing = Some((a.x, b.x));
        }
        let gap = step.abs();
        if gap > max_gap {
            max_gap = gap;
            max_gap_pair = Some((a.x, b.x));
        }
        if gap > noise && b.x > a.x {
            suspects.push((a.x, b.x, gap, a.err + b.err));
        }
    }

    let refined: Vec<Option<JumpDiagnostic>> = suspects
        .par_iter()
        .map(|&(l, r, gap, noise)| zoom(model, l, r, gap, noise + tol_mono, refinement_factor, index_tol))
        .collect::<Result<_>>()?;
    let detected_jumps: Vec<JumpDiagnostic> = refined.into_iter().flatten().collect();

    let (verdict, witness) = if let Some(pair) = decreasing {
        (Verdict::Fail, Some(pair))
    } else if let Some(j) = detected_jumps.first() {
        (Verdict::Fail, Some((j.left, j.right)))
    } else {
        (Verdict::Pass, None)
    };
    Ok(Pcli2Verdict {
        verdict,
        monotonicity_margin: margin,
        worst_pair,
        max_adjacent_gap: max_gap,
        max_gap_pair,
        detected_jumps,
        refinement_factor,
        refined_intervals: suspects.len(),
        witness,
    })
}

fn zoom(
    model: &BanditModel,
    mut left: f64,
    mut right: f64,
    mut gap: f64,
    noise: f64,
    factor: usize,
    index_tol: f64,
) -> Result<Option<JumpDiagnostic>> {
    for _ in 0..JUMP_LEVELS {
        let xs: Vec<f64> = (0..=factor)
            .map(|i| {
                if i == factor {
                    right
                } else {
                    left + (right - left) * i as f64 / factor as f64
                }
            })
            .collect();
        let ms: Vec<f64> = xs
            .iter()
            .map(|&x| mp_index_at(model, x, Precision::Tolerance(index_tol)).map(|v| v.m))
            .collect::<Result<_>>()?;
        let (mut best, mut best_i) = (0.0, 0);
        for i in 0..factor {
            let d = (ms[i + 1] - ms[i]).abs();
            if d > best {
                best = d;
                best_i = i;
            }
        }
        if best <= gap * 2.0 / factor as f64 || best <= noise {
            return Ok(None);
        }
        left = xs[best_i];
        right = xs[best_i + 1];
        gap = best;
        if !(right > left) {
            break;
        }
    }
    Ok(Some(JumpDiagnostic { left, right, gap }))
}

// ── PCLI3 ───────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pcli3Method {
    PiecewiseConstantExact,
    Quadrature,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pcli3Verdict {
    pub verdict: Verdict,
    /// `max |ΔF - integral|` over the tested triples (absolute, >= 0).
    pub max_residual: f64,
    /// Certified numeric budget at the triple attaining the maximum.
    pub budget_at_max: f64,
    pub method: Pcli3Method,
    pub triples: Vec<Pcli3Triple>,
    /// True when run without passing PCLI1/PCLI2 verdicts.
    pub conditional: bool,
    pub witness: Option<(f64, f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pcli3Triple {
    pub x: f64,
    pub z1: f64,
    pub z2: f64,
    pub delta_f: f64,
    pub integral: f64,
    pub residual: f64,
    pub budget: f64,
    /// Jump points summed (exact) or partition nodes (quadrature).
    pub jumps: usize,
    pub method: Pcli3Method,
    /// Quadrature only: the certified enclosure `[lo, hi]` of the integral.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bracket: Option<(f64, f64)>,
}

impl Pcli3Triple {
    /// Half-width of the quadrature enclosure; 0 for exact sums.
    pub fn spread(&self) -> f64 {
        self.bracket.map_or(0.0, |(lo, hi)| 0.5 * (hi - lo))
    }
}

/// Reachable sets larger than this fall back to quadrature.
const MAX_EXACT_JUMPS: usize = 4096;
/// Initial uniform partition and node budget of the adaptive quadrature.
const QUADRATURE_START: usize = 64;
const QUADRATURE_MAX_NODES: usize = 1024;

/// Checks the LS-integral identity for every `x` in `states` and every pair.
///
/// Preferred route: `z -> G(x, z)` is piecewise constant with jumps only at
/// states reachable from `x`, so the integral is a finite sum of
/// `m(z_j) (G(x, z_j) - G(x, z_j⁻))`. When the reachable set is too large a
/// Riemann–Stieltjes sum on a dense threshold grid is used instead.
pub fn check_pcli3(
    model: &BanditModel,
    states: &[f64],
    pairs: &[(f64, f64)],
    tol: f64,
    conditional: bool,
) -> Result<Pcli3Verdict> {
    let limits = EngineLimits::default();
    for &x in states {
        model.states().check(x)?;
    }
    for &(z1, z2) in pairs {
        if !(z1 <= z2) {
            return Err(Error::InvalidArgument(format!(
                "PCLI3 pair needs z1 <= z2, got ({z1}, {z2})"
            )));
        }
    }
    // Horizon with a tiny per-evaluation certificate so the budget is
    // dominated by `tol`.
    let k = horizon_for_tolerance(model.weight().m, model.gamma(), 2.0, tol * 1e-3)?;

    // Jump candidates per state; `None` means fall back to quadrature.
    let reach: Vec<Option<Vec<f64>>> = states
        .par_iter()
        .map(|&x| match reachable_set_with(model, x, k, limits) {
            Ok(r) if r.states.len() <= MAX_EXACT_JUMPS => Ok(Some(r.states)),
            Ok(_) | Err(Error::MemoCap { .. }) => Ok(None),
            Err(e) => Err(e),
        })
        .collect::<Result<_>>()?;

    // Every threshold needed, evaluated once for all states: the z-policy
    // gives F, G and (at its own threshold) the index, the z⁻-policy gives
    // the left limit of G.
    let mut thresholds: Vec<(f64, bool)> = Vec::new();
    for r in &reach {
        for &(z1, z2) in pairs {
            thresholds.push((z1, false));
            thresholds.push((z2, false));
            if let Some(r) = r {
                thresholds.extend(r.iter().filter(|&&s| s > z1 && s <= z2).map(|&s| (s, true)));
            }
        }
    }
    thresholds.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    thresholds.dedup_by(|b, a| {
        if a.0.to_bits() == b.0.to_bits() {
            a.1 |= b.1;
            true
        } else {
            false
        }
    });
    let columns: Vec<ThresholdColumn> = thresholds
        .par_iter()
        .map(|&(z, is_jump)| threshold_column(model, states, z, is_jump, k, limits))
        .collect::<Result<_>>()?;
    let column = |z: f64| -> &ThresholdColumn {
        let i = thresholds
            .binary_search_by(|t| t.0.total_cmp(&z))
            .expect("threshold evaluated");
        &columns[i]
    };

    // Quadrature states share one partition per pair, so each threshold
    // is evaluated once for all of them.
    let quad: Vec<usize> = (0..states.len()).filter(|&i| reach[i].is_none()).collect();
    let mut enclosures: Vec<Vec<Enclosure>> = Vec::with_capacity(pairs.len());
    if !quad.is_empty() {
        let xs: Vec<f64> = quad.iter().map(|&i| states[i]).collect();
        for &(z1, z2) in pairs {
            enclosures.push(if z1 < z2 {
                stieltjes_brackets(model, &xs, z1, z2, k, tol, limits)?
            } else {
                Vec::new()
            });
        }
    }
    let mut triples = Vec::with_capacity(states.len() * pairs.len());
    for (i, &x) in states.iter().enumerate() {
        let trunc = model.truncation_bound(k) * model.w(x);
        for (p, &(z1, z2)) in pairs.iter().enumerate() {
            let delta_f = column(z2).right[i].0 - column(z1).right[i].0;
            let triple = match &reach[i] {
                _ if z1 == z2 => Pcli3Triple {
                    x,
                    z1,
                    z2,
                    delta_f,
                    integral: 0.0,
                    residual: delta_f.abs(),
                    budget: 2.0 * trunc,
                    jumps: 0,
                    method: Pcli3Method::PiecewiseConstantExact,
                    bracket: None,
                },
                Some(r) => {
                    let mut integral = 0.0;
                    let mut budget = 2.0 * trunc;
                    let mut jumps = 0;
                    for &zj in r.iter().filter(|&&s| s > z1 && s <= z2) {
                        let col = column(zj);
                        let idx = col.index.as_ref().expect("jump column carries an index");
                        let idx = match idx {
                            Ok(v) => *v,
                            Err(e) => return Err(e.clone()),
                        };
                        let dg = col.right[i].1 - col.left[i];
                        integral += idx.m * dg;
                        budget += idx.m.abs() * 2.0 * trunc + idx.err * dg.abs();
                        jumps += 1;
                    }
                    Pcli3Triple {
                        x,
                        z1,
                        z2,
                        delta_f,
                        integral,
                        residual: (delta_f - integral).abs(),
                        budget,
                        jumps,
                        method: Pcli3Method::PiecewiseConstantExact,
                        bracket: None,
                    }
                }
                None => {
                    let q = &enclosures[p][quad.binary_search(&i).expect("quadrature state")];
                    let mid = 0.5 * (q.lo + q.hi);
                    Pcli3Triple {
                        x,
                        z1,
                        z2,
                        delta_f,
                        integral: mid,
                        residual: (delta_f - mid).abs(),
                        budget: 2.0 * trunc + q.err + 0.5 * (q.hi - q.lo),
                        jumps: q.nodes,
                        method: Pcli3Method::Quadrature,
                        bracket: Some((q.lo, q.hi)),
                    }
                }
            };
            triples.push(triple);
        }
    }

    let mut max_residual: f64 = 0.0;
    let mut budget_at_max = 0.0;
    let mut witness = None;
    let mut method = Pcli3Method::PiecewiseConstantExact;
    for t in &triples {
        if t.method == Pcli3Method::Quadrature {
            method = Pcli3Method::Quadrature;
        }
        if t.residual > max_residual {
            max_residual = t.residual;
            budget_at_max = t.budget;
        }
        if t.residual > tol + t.budget && witness.is_none() {
            witness = Some((t.x, t.z1, t.z2));
        }
    }
    // An enclosure wider than `tol` can refute the identity but not confirm it.
    let verdict = if witness.is_some() {
        Verdict::Fail
    } else if triples.iter().any(|t| t.spread() > tol) {
        Verdict::Inconclusive
    } else {
        Verdict::Pass
    };
    Ok(Pcli3Verdict {
        verdict,
        max_residual,
        budget_at_max,
        method,
        triples,
        conditional,
        witness,
    })
}

struct ThresholdColumn {
    /// `(F, G)` under the `z`-policy, per state.
    right: Vec<(f64, f64)>,
    /// `G` under the `z⁻`-policy, per state (jump thresholds only).
    left: Vec<f64>,
    index: Option<Result<MPIndexValue>>,
}

fn threshold_column(
    model: &BanditModel,
    states: &[f64],
    z: f64,
    is_jump: bool,
    k: usize,
    limits: EngineLimits,
) -> Result<ThresholdColumn> {
    let mut ev = PolicyEvaluator::new(model, ThresholdSpec::z(z), limits);
    let right = states
        .iter()
        .map(|&x| ev.value(x, k))
        .collect::<Result<Vec<_>>>()?;
    if !is_jump {
        return Ok(ThresholdColumn {
            right,
            left: Vec::new(),
            index: None,
        });
    }
    let index = Some(index_from_evaluator(&mut ev, z, k));
    let mut ev = PolicyEvaluator::new(model, ThresholdSpec::z_minus(z), limits);
    let left = states
        .iter()
        .map(|&x| ev.value(x, k).map(|v| v.1))
        .collect::<Result<Vec<_>>>()?;
    Ok(ThresholdColumn { right, left, index })
}

struct Enclosure {
    lo: f64,
    hi: f64,
    err: f64,
    nodes: usize,
}

/// Encloses `∫_(z1, z2] m dG(x, ·)`, for each `x` in `xs`, between the left-
/// and right-tagged Stieltjes sums of one partition, refined where the gap
/// between the two is largest for some state not yet within `tol`.
///
/// On each cell `G` is monotone in the threshold (which holds under PCLI1)
/// and `m` is nondecreasing (PCLI2), so the cell's integral lies between
/// `m(left) ΔG` and `m(right) ΔG`. `err` bounds the effect of the value and
/// index certificates; by summation by parts the `G` errors contribute at
/// most `(|m_0| + |m_n| + |m_n - m_0|) ε_G` for monotone `m`.
#[allow(clippy::too_many_arguments)]
fn stieltjes_brackets(
    model: &BanditModel,
    xs: &[f64],
    z1: f64,
    z2: f64,
    k: usize,
    tol: f64,
    limits: EngineLimits,
) -> Result<Vec<Enclosure>> {
    struct Node {
        z: f64,
        g: Vec<f64>,
        m: f64,
        err: f64,
    }
    let node = |z: f64| -> Result<Node> {
        let mut ev = PolicyEvaluator::new(model, ThresholdSpec::z(z), limits);
        let g = xs.iter().map(|&x| ev.value(x, k).map(|v| v.1)).collect::<Result<_>>()?;
        let m = mp_index_at(model, z, Precision::Tolerance(tol))?;
        Ok(Node { z, g, m: m.m, err: m.err })
    };
    let n0 = QUADRATURE_START;
    let zs: Vec<f64> = (0..=n0)
        .map(|i| if i == n0 { z2 } else { z1 + (z2 - z1) * i as f64 / n0 as f64 })
        .collect();
    let mut pts: Vec<Node> = zs.par_iter().map(|&z| node(z)).collect::<Result<_>>()?;
    let gap = |a: &Node, b: &Node, s: usize| ((b.m - a.m) * (b.g[s] - a.g[s])).abs();
    loop {
        let widths: Vec<f64> = (0..xs.len())
            .map(|s| pts.windows(2).map(|w| gap(&w[0], &w[1], s)).sum())
            .collect();
        let open: Vec<usize> = (0..xs.len()).filter(|&s| widths[s] > tol).collect();
        if open.is_empty() || pts.len() >= QUADRATURE_MAX_NODES {
            break;
        }
        // Split every cell carrying at least its share of some open gap.
        let cells = (pts.len() - 1) as f64;
        let mids: Vec<f64> = pts
            .windows(2)
            .filter(|w| w[1].z - w[0].z > f64::EPSILON * w[1].z.abs().max(1.0))
            .filter(|w| open.iter().any(|&s| gap(&w[0], &w[1], s) >= widths[s] / cells))
            .map(|w| 0.5 * (w[0].z + w[1].z))
            .take(QUADRATURE_MAX_NODES - pts.len())
            .collect();
        if mids.is_empty() {
            break;
        }
        let fresh: Vec<Node> = mids.par_iter().map(|&z| node(z)).collect::<Result<_>>()?;
        pts.extend(fresh);
        pts.sort_by(|a, b| a.z.total_cmp(&b.z));
    }
    let (first, last) = (pts[0].m, pts[pts.len() - 1].m);
    Ok(xs
        .iter()
        .enumerate()
        .map(|(s, &x)| {
            let (mut lo, mut hi, mut m_err) = (0.0, 0.0, 0.0);
            for w in pts.windows(2) {
                let dg = w[1].g[s] - w[0].g[s];
                let (a, b) = (w[0].m * dg, w[1].m * dg);
                lo += a.min(b);
                hi += a.max(b);
                m_err += w[0].err.max(w[1].err) * dg.abs();
            }
            let eps_g = model.truncation_bound(k) * model.w(x);
            Enclosure {
                lo,
                hi,
                err: m_err + (first.abs() + last.abs() + (last - first).abs()) * eps_g,
                nodes: pts.len(),
            }
        })
        .collect())
}

// ── Full report ─────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PclGrids {
    pub states: Vec<f64>,
    pub thresholds: Vec<ExtReal>,
    pub pcli3_states: Vec<f64>,
    pub pcli3_pairs: Vec<(f64, f64)>,
}

impl PclGrids {
    /// `n` uniform states; thresholds are the states plus `±inf`; PCLI3 uses
    /// five interior states and three nested threshold pairs.
    pub fn uniform(model: &BanditModel, n: usize) -> Result<Self> {
        let states = model.states().grid(n)?;
        let thresholds = with_sentinels(&states);
        let (a, b) = (states[0], states[states.len() - 1]);
        let at = |f: f64| a + (b - a) * f;
        let pcli3_states = [0.0, 0.25, 0.5, 0.75, 1.0].iter().map(|&f| at(f)).collect();
        let pcli3_pairs = vec![(at(0.1), at(0.4)), (at(0.3), at(0.8)), (at(0.05), at(0.95))];
        Ok(Self {
            states,
            thresholds,
            pcli3_states,
            pcli3_pairs,
        })
    }
}

/// `grid` plus the two infinite sentinels, in ascending order.
pub fn with_sentinels(grid: &[f64]) -> Vec<ExtReal> {
    let mut out = Vec::with_capacity(grid.len() + 2);
    out.push(ExtReal::NegInf);
    out.extend(grid.iter().map(|&z| ExtReal::Finite(z)));
    out.push(ExtReal::PosInf);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PclTolerances {
    /// Target for the marginal certificate in PCLI1.
    pub pcli1: f64,
    /// Target for each index certificate in the table.
    pub index: f64,
    pub monotonicity: f64,
    pub refinement_factor: usize,
    pub pcli3: f64,
}

impl Default for PclTolerances {
    fn default() -> Self {
        Self {
            pcli1: 1e-10,
            index: 1e-9,
            monotonicity: 1e-9,
            refinement_factor: 4,
            pcli3: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureWitness {
    pub condition: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PCLReport {
    pub schema_version: String,
    pub model: String,
    pub verdict: Verdict,
    pub scope: String,
    pub conclusion: String,
    pub witness: Option<FailureWitness>,
    pub pcli1: Pcli1Verdict,
    pub pcli2: Option<Pcli2Verdict>,
    pub pcli3: Option<Pcli3Verdict>,
    pub index_table: Vec<IndexEntry>,
    pub grids: PclGrids,
    pub tolerances: PclTolerances,
    pub notes: Vec<String>,
}

impl PCLReport {
    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }

    /// Re-derives the PASS claims from the stored numbers alone.
    pub fn recheck(&self) -> bool {
        if !self.passed() {
            return false;
        }
        let Ok(vals) = certified_values(&self.index_table) else {
            return false;
        };
        let mono = vals
            .windows(2)
            .all(|w| w[1].m - w[0].m >= -(w[0].err + w[1].err + self.tolerances.monotonicity));
        let p3 = self.pcli3.as_ref().is_some_and(|p| {
            p.triples
                .iter()
                .all(|t| t.residual <= self.tolerances.pcli3 + t.budget && t.spread() <= self.tolerances.pcli3)
        });
        mono && self.pcli1.min_certified_g > 0.0 && p3
    }
}

/// Runs all three checks and combines them.
pub fn full_report(model: &BanditModel, grids: &PclGrids, tols: &PclTolerances) -> Result<PCLReport> {
    let mut notes = vec![
        "conditions are certified on the listed grids only".to_string(),
        "certified floor: lower bounds on g use g_k minus the truncation bound, not an infimum over horizons"
            .to_string(),
        "infinite threshold sentinels use the endpoint-limit extension of m".to_string(),
    ];
    let pcli1 = check_pcli1(model, &grids.states, &grids.thresholds, tols.pcli1)?;
    let index_table = mp_index_table(model, &grids.states, tols.index)?;
    let uncertified = index_table.iter().filter(|e| e.value.is_none()).count();

    let pcli2 = if uncertified == 0 {
        Some(check_pcli2(
            model,
            &index_table,
            tols.monotonicity,
            tols.refinement_factor,
            tols.index,
        )?)
    } else {
        notes.push(format!(
            "PCLI2 skipped: {uncertified} index entries could not be certified"
        ));
        None
    };

    let prior_ok = pcli1.verdict == Verdict::Pass
        && pcli2.as_ref().is_some_and(|p| p.verdict == Verdict::Pass);
    let pcli3 = if uncertified == 0 {
        Some(check_pcli3(
            model,
            &grids.pcli3_states,
            &grids.pcli3_pairs,
            tols.pcli3,
            !prior_ok,
        )?)
    } else {
        notes.push("PCLI3 skipped: the index is not certified everywhere".to_string());
        None
    };

    if pcli3.as_ref().is_some_and(|p| p.verdict == Verdict::Inconclusive) {
        notes.push(
            "PCLI3 fell back to quadrature; its enclosure could not be narrowed to the tolerance"
                .to_string(),
        );
    }
    let v2 = pcli2.as_ref().map_or(Verdict::Inconclusive, |p| p.verdict);
    let v3 = pcli3.as_ref().map_or(Verdict::Inconclusive, |p| p.verdict);
    let verdict = pcli1.verdict.and(v2).and(v3);

    let witness = if let Some(w) = pcli1.witness.filter(|_| pcli1.verdict == Verdict::Fail) {
        Some(FailureWitness {
            condition: "PCLI1".into(),
            detail: format!("g({}, {}) = {} (bound {})", w.x, w.z, w.g, w.bound),
        })
    } else if let Some((a, b)) = pcli2.as_ref().and_then(|p| p.witness) {
        Some(FailureWitness {
            condition: "PCLI2".into(),
            detail: format!("index not nondecreasing and continuous on [{a}, {b}]"),
        })
    } else if let Some((x, a, b)) = pcli3.as_ref().and_then(|p| p.witness) {
        Some(FailureWitness {
            condition: "PCLI3".into(),
            detail: format!("integral identity fails at x = {x}, (z1, z2] = ({a}, {b}]"),
        })
    } else if verdict == Verdict::Inconclusive {
        pcli1.witness.map(|w| FailureWitness {
            condition: "PCLI1".into(),
            detail: format!(
                "g({}, {}) = {} lies within its bound {}",
                w.x, w.z, w.g, w.bound
            ),
        })
    } else {
        None
    };

    let conclusion = match verdict {
        Verdict::Pass => "PCL-indexable (certified on grid): the project is threshold-indexable and its Whittle index is the MP index m".to_string(),
        Verdict::Fail => "not PCL-indexable: see witness".to_string(),
        Verdict::Inconclusive => "inconclusive: some margins lie inside the numeric noise band".to_string(),
    };

    Ok(PCLReport {
        schema_version: SCHEMA_VERSION.to_string(),
        model: model.name().to_string(),
        verdict,
        scope: "certified on grid".to_string(),
        conclusion,
        witness,
        pcli1,
        pcli2,
        pcli3,
        index_table,
        grids: grids.clone(),
        tolerances: *tols,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadrature_enclosure_contains_exact_jump_sum() {
        use crate::models::webcrawl::{webcrawl_index, webcrawl_metrics};
        use crate::models::WebCrawlParams;
        let p = WebCrawlParams::default();
        let model = p.model().unwrap();
        let tol = 1e-8;
        let k = horizon_for_tolerance(model.weight().m, model.gamma(), 2.0, tol * 1e-3).unwrap();
        for (x, z1, z2) in [(0.6, 0.55, 0.9), (0.95, 0.7, 0.99), (0.5, 0.52, 0.98)] {
            let q = &stieltjes_brackets(&model, &[x, 0.7], z1, z2, k, tol, EngineLimits::default())
                .unwrap()[0];
            assert!(q.lo <= q.hi && q.nodes > QUADRATURE_START);
            // Oracle: the closed-form jump sum and the closed-form ΔF.
            let f = |pol: ThresholdSpec| webcrawl_metrics(&p, x, &pol).unwrap();
            let exact: f64 = p
                .jump_points(x, 200)
                .into_iter()
                .filter(|&z| z1 < z && z <= z2)
                .map(|z| {
                    let dg = f(ThresholdSpec::z(z)).resource - f(ThresholdSpec::z_minus(z)).resource;
                    webcrawl_index(&p, z).unwrap() * dg
                })
                .sum();
            let delta_f = f(ThresholdSpec::z(z2)).reward - f(ThresholdSpec::z(z1)).reward;
            for v in [exact, delta_f] {
                assert!(q.lo - q.err - 1e-12 <= v && v <= q.hi + q.err + 1e-12, "{v} not in [{}, {}]", q.lo, q.hi);
            }
        }
    }

    #[test]
    fn verdict_conjunction() {
        use Verdict::*;
        assert_eq!(Pass.and(Pass), Pass);
        assert_eq!(Pass.and(Inconclusive), Inconclusive);
        assert_eq!(Inconclusive.and(Fail), Fail);
    }

    #[test]
    fn sentinels_wrap_grid() {
        let g = with_sentinels(&[0.0, 1.0]);
        assert_eq!(
            g,
            vec![ExtReal::NegInf, ExtReal::Finite(0.0), ExtReal::Finite(1.0), ExtReal::PosInf]
        );
    }

    #[test]
    fn verdict_serializes_uppercase() {
        assert_eq!(serde_json::to_string(&Verdict::Inconclusive).unwrap(), "\"INCONCLUSIVE\"");
    }
}
