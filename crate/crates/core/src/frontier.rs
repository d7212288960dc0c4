//! Achievable resource-reward region of a single project under an initial
//! law `nu0`.
//!
//! Threshold policies trace points `(G(nu0, z), F(nu0, z))`; randomizing at
//! the threshold fills the segment between the `z` and `z⁻` points, and the
//! efficient frontier is the upper concave hull of all of them. Where `G`
//! jumps, the frontier slope is the MP index.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{distribution_metrics, horizon_for_tolerance, mp_index_at, reachable_set, Precision};
use crate::error::{Error, Result};
use crate::model::{BanditModel, ExtReal, InitialDistribution, Side, ThresholdSpec};
use crate::pcl::PCLReport;

/// Collinearity tolerance of the hull, relative to the coordinate scale.
pub const HULL_TOL: f64 = 1e-12;
/// Uniform sweep size when no jump ladder is available.
pub const DEFAULT_SWEEP_POINTS: usize = 401;
/// Largest jump-point set used as a sweep grid.
const MAX_LADDER_GRID: usize = 4000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrontierPoint {
    pub gamma: f64,
    pub phi: f64,
    pub z: ExtReal,
    pub side: Side,
    #[serde(default)]
    pub alpha: Option<f64>,
}

impl FrontierPoint {
    pub fn policy(&self) -> ThresholdSpec {
        ThresholdSpec {
            z: self.z,
            side: self.side,
            alpha: self.alpha,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierCurve {
    pub points: Vec<FrontierPoint>,
    /// `slopes[i]` is the slope of the segment from point `i` to `i + 1`.
    pub slopes: Vec<f64>,
    pub horizon: usize,
    /// Certificate on every `gamma` and `phi`.
    pub err: f64,
    /// Number of threshold points swept before taking the hull.
    pub swept: usize,
}

/// One CSV row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrontierRow {
    pub gamma: f64,
    pub phi: f64,
    pub z: ExtReal,
    pub side: Side,
    pub alpha: Option<f64>,
    pub slope: Option<f64>,
}

impl FrontierCurve {
    pub fn gamma_range(&self) -> (f64, f64) {
        (self.points[0].gamma, self.points[self.points.len() - 1].gamma)
    }

    pub fn rows(&self) -> Vec<FrontierRow> {
        self.points
            .iter()
            .enumerate()
            .map(|(i, p)| FrontierRow {
                gamma: p.gamma,
                phi: p.phi,
                z: p.z,
                side: p.side,
                alpha: p.alpha,
                slope: self.slopes.get(i).copied(),
            })
            .collect()
    }

    /// Columns `gamma, phi, z, side, alpha, slope`; empty cells for absent values.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["gamma", "phi", "z", "side", "alpha", "slope"])
            .map_err(io_err)?;
        for r in self.rows() {
            let side = match r.side {
                Side::Right => "z",
                Side::Left => "z-",
            };
            w.write_record([
                r.gamma.to_string(),
                r.phi.to_string(),
                r.z.to_string(),
                side.to_string(),
                r.alpha.map(|a| a.to_string()).unwrap_or_default(),
                r.slope.map(|s| s.to_string()).unwrap_or_default(),
            ])
            .map_err(io_err)?;
        }
        w.flush().map_err(|e| Error::Io {
            kind: e.kind(),
            message: e.to_string(),
        })?;
        Ok(())
    }

    /// Second differences of `phi` in `gamma` (slope decrements), which are
    /// nonpositive for a concave curve.
    pub fn slope_changes(&self) -> Vec<f64> {
        self.slopes.windows(2).map(|w| w[1] - w[0]).collect()
    }
}

fn io_err(e: csv::Error) -> Error {
    let message = e.to_string();
    let kind = match e.into_kind() {
        csv::ErrorKind::Io(e) => e.kind(),
        _ => std::io::ErrorKind::Other,
    };
    Error::Io { kind, message }
}

fn require_certified(report: &PCLReport) -> Result<()> {
    if report.passed() {
        Ok(())
    } else {
        Err(Error::Uncertified(format!(
            "frontier optimality needs a passing PCL report; model '{}' is {:?}",
            report.model, report.verdict
        )))
    }
}

/// Default sweep thresholds: the exact jump points of `z -> G(nu0, z)` (the
/// reachable states of the nodes) when that set is small, otherwise the
/// nodes plus a uniform grid over the state interval.
pub fn default_threshold_grid(model: &BanditModel, nu0: &InitialDistribution, k: usize) -> Result<Vec<f64>> {
    let nodes = nu0.nodes();
    let mut pts = Vec::new();
    let mut ladder_ok = true;
    for &(x, _) in &nodes {
        match reachable_set(model, x, k) {
            Ok(r) => pts.extend(r.states),
            Err(Error::MemoCap { .. }) => ladder_ok = false,
            Err(e) => return Err(e),
        }
        if pts.len() > MAX_LADDER_GRID {
            ladder_ok = false;
        }
        if !ladder_ok {
            break;
        }
    }
    if !ladder_ok {
        pts = nodes.iter().map(|&(x, _)| x).collect();
        let s = model.states();
        if s.is_bounded() {
            pts.extend(s.grid(DEFAULT_SWEEP_POINTS)?);
        }
    }
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    Ok(pts)
}

/// Sweeps the `z` and `z⁻` policies over the grid (plus both infinite
/// thresholds) and returns the upper hull of their points.
pub fn sweep_frontier(
    model: &BanditModel,
    report: &PCLReport,
    nu0: &InitialDistribution,
    threshold_grid: Option<&[f64]>,
    tol: f64,
) -> Result<FrontierCurve> {
    require_certified(report)?;
    nu0.validate(model.states())?;
    let k = horizon_for_tolerance(model.weight().m, model.gamma(), nu0.w_norm(model), tol)?;
    let grid = match threshold_grid {
        Some(g) => {
            if g.iter().any(|z| !z.is_finite()) {
                return Err(Error::InvalidArgument("threshold grid must be finite".into()));
            }
            g.to_vec()
        }
        None => default_threshold_grid(model, nu0, k)?,
    };
    let mut policies = vec![ThresholdSpec::never_active(), ThresholdSpec::always_active()];
    for &z in &grid {
        policies.push(ThresholdSpec::z(z));
        policies.push(ThresholdSpec::z_minus(z));
    }
    let raw: Vec<FrontierPoint> = policies
        .par_iter()
        .map(|pol| {
            let b = distribution_metrics(model, nu0, pol, k)?;
            Ok(FrontierPoint {
                gamma: b.resource,
                phi: b.reward,
                z: pol.z,
                side: pol.side,
                alpha: None,
            })
        })
        .collect::<Result<_>>()?;
    let err = model.truncation_bound(k) * nu0.w_norm(model);
    let points = upper_hull(&raw);
    let slopes = segment_slopes(&points);
    Ok(FrontierCurve {
        points,
        slopes,
        horizon: k,
        err,
        swept: raw.len(),
    })
}

fn segment_slopes(points: &[FrontierPoint]) -> Vec<f64> {
    points
        .windows(2)
        .map(|w| (w[1].phi - w[0].phi) / (w[1].gamma - w[0].gamma))
        .collect()
}

/// Upper concave hull by the monotone chain, left to right in `gamma`.
///
/// Points with equal `gamma` keep the one with the largest `phi`; nearly
/// collinear middle points are dropped.
pub fn upper_hull(points: &[FrontierPoint]) -> Vec<FrontierPoint> {
    let mut pts: Vec<FrontierPoint> = points.to_vec();
    pts.sort_by(|a, b| a.gamma.total_cmp(&b.gamma).then(b.phi.total_cmp(&a.phi)));
    let scale = pts
        .iter()
        .map(|p| p.gamma.abs().max(p.phi.abs()))
        .fold(1.0, f64::max);
    let eps = HULL_TOL * scale;
    let mut hull: Vec<FrontierPoint> = Vec::with_capacity(pts.len());
    for p in pts {
        if let Some(last) = hull.last() {
            if (p.gamma - last.gamma).abs() <= eps {
                continue;
            }
        }
        while hull.len() >= 2 {
            let (o, a) = (&hull[hull.len() - 2], &hull[hull.len() - 1]);
            let cross = (a.gamma - o.gamma) * (p.phi - o.phi) - (a.phi - o.phi) * (p.gamma - o.gamma);
            let span = (p.gamma - o.gamma).abs() * scale;
            if cross >= -eps * span {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }
    hull
}

/// How a frontier value is realized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Achiever {
    /// A vertex of the curve.
    Threshold { z: ExtReal, side: Side },
    /// `z^alpha`: passive at `x = z` with probability `alpha`.
    Randomized { z: f64, alpha: f64 },
    /// A chord between two different thresholds (the sweep grid skipped the
    /// jump in between); `weight` is on the lower-resource vertex.
    Mixture {
        lower: FrontierPoint,
        upper: FrontierPoint,
        weight: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResourceValue {
    pub gamma: f64,
    pub phi: f64,
    pub achiever: Achiever,
}

impl ResourceValue {
    /// `(z, alpha)` of the achieving policy when it is a single threshold.
    pub fn threshold(&self) -> Option<(ExtReal, Option<f64>)> {
        match self.achiever {
            Achiever::Threshold { z, side } => Some((
                z,
                z.is_finite().then_some(if side == Side::Right { 1.0 } else { 0.0 }),
            )),
            Achiever::Randomized { z, alpha } => Some((ExtReal::Finite(z), Some(alpha))),
            Achiever::Mixture { .. } => None,
        }
    }
}

/// Frontier value `Phi(gamma)` and the policy achieving it.
pub fn value_at_resource(curve: &FrontierCurve, gamma: f64) -> Result<ResourceValue> {
    let (lo, hi) = curve.gamma_range();
    if !(gamma >= lo && gamma <= hi) {
        return Err(Error::Domain {
            x: gamma,
            lower: lo,
            upper: hi,
        });
    }
    let pts = &curve.points;
    let i = pts.partition_point(|p| p.gamma < gamma);
    if pts[i].gamma == gamma {
        let p = pts[i];
        return Ok(ResourceValue {
            gamma,
            phi: p.phi,
            achiever: Achiever::Threshold { z: p.z, side: p.side },
        });
    }
    let (a, b) = (pts[i - 1], pts[i]);
    let weight = (b.gamma - gamma) / (b.gamma - a.gamma);
    let phi = weight * a.phi + (1.0 - weight) * b.phi;
    let achiever = match (a.z, b.z, a.side, b.side) {
        (ExtReal::Finite(za), ExtReal::Finite(zb), Side::Right, Side::Left) if za == zb => {
            Achiever::Randomized { z: za, alpha: weight }
        }
        _ => Achiever::Mixture {
            lower: a,
            upper: b,
            weight,
        },
    };
    Ok(ResourceValue { gamma, phi, achiever })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ProbeStatus {
    Pass,
    Fail,
    /// The resource jump at the probe is below ten times its certificate.
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShadowPriceCheck {
    pub z: f64,
    pub delta_f: f64,
    pub delta_g: f64,
    /// `None` for a degenerate probe.
    pub slope: Option<f64>,
    pub index: f64,
    pub index_err: f64,
    /// `tol` plus the propagated certificates.
    pub allowance: Option<f64>,
    pub status: ProbeStatus,
    pub horizon: usize,
    /// The uniform law is a node quadrature standing in for full support.
    pub note: String,
}

/// Compares the frontier slope across the jump of `G(nu0, .)` at `z_probe`
/// with the MP index there.
pub fn shadow_price_check(
    model: &BanditModel,
    report: &PCLReport,
    nu0: &InitialDistribution,
    z_probe: f64,
    tol: f64,
) -> Result<ShadowPriceCheck> {
    require_certified(report)?;
    nu0.validate(model.states())?;
    if !nu0.approximates_full_support(model.states()) {
        return Err(Error::InvalidArgument(
            "the slope/index identity needs an initial law with full support; use a uniform law over the whole state interval"
                .into(),
        ));
    }
    model.states().check(z_probe)?;
    let target = (tol * 1e-3).max(1e-13);
    let wn = nu0.w_norm(model);
    let k = horizon_for_tolerance(model.weight().m, model.gamma(), wn, target)?;
    let right = distribution_metrics(model, nu0, &ThresholdSpec::z(z_probe), k)?;
    let left = distribution_metrics(model, nu0, &ThresholdSpec::z_minus(z_probe), k)?;
    let e = model.truncation_bound(k) * wn;
    let delta_f = left.reward - right.reward;
    let delta_g = left.resource - right.resource;
    let idx = mp_index_at(model, z_probe, Precision::Tolerance(target))?;
    let note = match nu0 {
        InitialDistribution::Uniform { n, .. } => {
            format!("full support approximated by a {n}-node midpoint rule")
        }
        _ => String::new(),
    };
    let jump_err = 2.0 * e;
    if delta_g.abs() < 10.0 * jump_err || delta_g == 0.0 {
        return Ok(ShadowPriceCheck {
            z: z_probe,
            delta_f,
            delta_g,
            slope: None,
            index: idx.m,
            index_err: idx.err,
            allowance: None,
            status: ProbeStatus::Degenerate,
            horizon: k,
            note,
        });
    }
    let slope = delta_f / delta_g;
    let slope_err = jump_err * (1.0 + slope.abs()) / (delta_g.abs() - jump_err);
    let allowance = tol + slope_err + idx.err;
    let status = if (slope - idx.m).abs() <= allowance {
        ProbeStatus::Pass
    } else {
        ProbeStatus::Fail
    };
    Ok(ShadowPriceCheck {
        z: z_probe,
        delta_f,
        delta_g,
        slope: Some(slope),
        index: idx.m,
        index_err: idx.err,
        allowance: Some(allowance),
        status,
        horizon: k,
        note,
    })
}

/// Secant slope `(F(nu0, z) - F(nu0, z0)) / (G(nu0, z) - G(nu0, z0))` of the
/// right-closed threshold metrics; `None` if `G` does not move.
pub fn secant_slope(
    model: &BanditModel,
    nu0: &InitialDistribution,
    z0: f64,
    z: f64,
    k: usize,
) -> Result<Option<f64>> {
    let a = distribution_metrics(model, nu0, &ThresholdSpec::z(z0), k)?;
    let b = distribution_metrics(model, nu0, &ThresholdSpec::z(z), k)?;
    let dg = b.resource - a.resource;
    Ok((dg != 0.0).then(|| (b.reward - a.reward) / dg))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(gamma: f64, phi: f64) -> FrontierPoint {
        FrontierPoint {
            gamma,
            phi,
            z: ExtReal::Finite(gamma),
            side: Side::Right,
            alpha: None,
        }
    }

    #[test]
    fn hull_drops_interior_and_collinear_points() {
        let raw = vec![
            pt(0.0, 0.0),
            pt(1.0, 0.5),
            pt(2.0, 2.0),
            pt(1.0, 1.0),
            pt(3.0, 2.5),
            pt(4.0, 3.0),
        ];
        let h = upper_hull(&raw);
        let coords: Vec<(f64, f64)> = h.iter().map(|p| (p.gamma, p.phi)).collect();
        assert_eq!(coords, vec![(0.0, 0.0), (2.0, 2.0), (4.0, 3.0)]);
    }

    #[test]
    fn hull_is_idempotent() {
        let raw: Vec<_> = (0..50)
            .map(|i| {
                let g = i as f64 / 10.0;
                pt(g, (g * 3.0).sin() + g.sqrt())
            })
            .collect();
        let h = upper_hull(&raw);
        assert_eq!(upper_hull(&h), h);
    }
}
