use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use whittle_core::config::ModelSpec;
use whittle_core::engine::{horizon_for_tolerance, k_horizon_metrics, mp_index_table};
use whittle_core::frontier::{
    shadow_price_check, sweep_frontier, FrontierCurve, ProbeStatus, ShadowPriceCheck,
};
use whittle_core::model::{BanditModel, InitialDistribution, ThresholdSpec};
use whittle_core::pcl::{full_report, PCLReport, PclGrids, Verdict};
use whittle_core::rmabp::{
    simulate_index_policy, solve_dual, CertifiedProject, DualSolution, RMABPInstance, SimResult,
};
use whittle_core::Error;

use crate::cache::ReportCache;
use crate::run_config::RunConfig;

pub const FRONTIER_SCHEMA: &str = "whittle.frontier/1";
pub const RMABP_SCHEMA: &str = "whittle.rmabp/1";

/// Process exit status. The table is exhaustive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Ok = 0,
    Runtime = 1,
    Fail = 2,
    Inconclusive = 3,
    Usage = 64,
}

#[derive(Debug, thiserror::Error)]
pub enum CmdError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] Error),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("json output failed: {0}")]
    Json(#[from] serde_json::Error),
}

impl CmdError {
    pub fn exit(&self) -> Exit {
        match self {
            CmdError::Usage(_) => Exit::Usage,
            CmdError::Core(e) => match e {
                Error::Domain { .. }
                | Error::InvalidModel(_)
                | Error::InvalidArgument(_)
                | Error::Expr(_)
                | Error::Config(_) => Exit::Usage,
                Error::ProjectNotCertified { .. }
                | Error::Uncertified(_)
                | Error::NotCertifiable { .. }
                | Error::Infeasible(_) => Exit::Fail,
                _ => Exit::Runtime,
            },
            CmdError::Io(_) | CmdError::Json(_) => Exit::Runtime,
        }
    }

    /// The reader closed the pipe (`whittle index | head`); not worth a message.
    pub fn is_broken_pipe(&self) -> bool {
        match self {
            CmdError::Io(e) => e.kind() == io::ErrorKind::BrokenPipe,
            CmdError::Json(e) => e.io_error_kind() == Some(io::ErrorKind::BrokenPipe),
            CmdError::Core(Error::Io { kind, .. }) => *kind == io::ErrorKind::BrokenPipe,
            _ => false,
        }
    }
}

type CmdResult = Result<Exit, CmdError>;

fn sink(path: Option<&Path>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<(), CmdError> {
    let mut w = sink(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn csv_writer(path: Option<&Path>) -> io::Result<csv::Writer<Box<dyn Write>>> {
    Ok(csv::Writer::from_writer(sink(path)?))
}

fn csv_err(e: csv::Error) -> CmdError {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => CmdError::Io(e),
        other => CmdError::Io(io::Error::other(format!("{other:?}"))),
    }
}

fn model_of(spec: &ModelSpec) -> Result<BanditModel, CmdError> {
    Ok(spec.build()?)
}

fn grid_of(model: &BanditModel, n: usize) -> Result<Vec<f64>, CmdError> {
    if !model.states().is_bounded() {
        return Err(CmdError::Usage(
            "uniform grids need a bounded state interval; list states explicitly".into(),
        ));
    }
    Ok(model.states().grid(n)?)
}

pub fn index(cfg: &RunConfig) -> CmdResult {
    let model = model_of(&cfg.model)?;
    let grid = grid_of(&model, cfg.grid)?;
    let table = mp_index_table(&model, &grid, cfg.index_tol)?;
    let mut w = csv_writer(cfg.output.out.as_deref())?;
    w.write_record(["x", "m", "err", "k_used", "failure"]).map_err(csv_err)?;
    let mut failed = false;
    for e in &table {
        let row = match (&e.value, &e.failure) {
            (Some(v), _) => [
                e.x.to_string(),
                v.m.to_string(),
                v.err.to_string(),
                v.horizon.to_string(),
                String::new(),
            ],
            (None, f) => {
                failed = true;
                [
                    e.x.to_string(),
                    String::new(),
                    String::new(),
                    String::new(),
                    f.clone().unwrap_or_else(|| "not certified".into()),
                ]
            }
        };
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(if failed { Exit::Fail } else { Exit::Ok })
}

fn report_for(spec: &ModelSpec, model: &BanditModel, cfg: &RunConfig) -> Result<PCLReport, CmdError> {
    let grids = PclGrids::uniform(model, cfg.grid)?;
    let cache = ReportCache::from_env();
    if let Some(r) = cache.get(spec, &grids, &cfg.tolerances) {
        return Ok(r);
    }
    let r = full_report(model, &grids, &cfg.tolerances)?;
    cache.put(spec, &grids, &cfg.tolerances, &r);
    Ok(r)
}

fn verdict_exit(v: Verdict) -> Exit {
    match v {
        Verdict::Pass => Exit::Ok,
        Verdict::Fail => Exit::Fail,
        Verdict::Inconclusive => Exit::Inconclusive,
    }
}

pub fn verify(cfg: &RunConfig) -> CmdResult {
    let model = model_of(&cfg.model)?;
    grid_of(&model, cfg.grid)?;
    let report = report_for(&cfg.model, &model, cfg)?;
    write_json(cfg.output.out.as_deref(), &report)?;
    Ok(verdict_exit(report.verdict))
}

pub fn metrics(cfg: &RunConfig) -> CmdResult {
    let model = model_of(&cfg.model)?;
    let states = match &cfg.metrics.states {
        Some(s) => s.clone(),
        None => grid_of(&model, cfg.grid)?,
    };
    let policy = ThresholdSpec {
        z: cfg.metrics.z,
        side: cfg.metrics.side,
        alpha: cfg.metrics.alpha,
    };
    if let Some(a) = policy.alpha {
        let z = policy.z.finite().unwrap_or(f64::NAN);
        ThresholdSpec::randomized(z, a)?;
    }
    let k = horizon_for_tolerance(model.weight().m, model.gamma(), 1.0, cfg.metrics.tol)?;
    let mut w = csv_writer(cfg.output.out.as_deref())?;
    w.write_record(["x", "F", "G", "f", "g", "F_err", "G_err", "fg_err", "k"])
        .map_err(csv_err)?;
    for &x in &states {
        let b = k_horizon_metrics(&model, x, &policy, k)?;
        w.write_record([
            x.to_string(),
            b.reward.to_string(),
            b.resource.to_string(),
            b.marginal_reward.to_string(),
            b.marginal_resource.to_string(),
            b.reward_err.to_string(),
            b.resource_err.to_string(),
            b.fg_err.to_string(),
            k.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(Exit::Ok)
}

#[derive(Serialize)]
struct FrontierDoc<'a> {
    schema_version: &'static str,
    model: &'a ModelSpec,
    nu0: &'a InitialDistribution,
    curve: &'a FrontierCurve,
    probes: &'a [ShadowPriceCheck],
}

/// `count` nodes spread evenly over the node list.
fn probe_states(nu0: &InitialDistribution, count: usize) -> Vec<f64> {
    let nodes = nu0.nodes();
    if count == 0 || nodes.is_empty() {
        return Vec::new();
    }
    let n = nodes.len();
    let mut idx: Vec<usize> = (0..count.min(n))
        .map(|i| ((2 * i + 1) * n) / (2 * count.min(n)))
        .collect();
    idx.dedup();
    idx.into_iter().map(|i| nodes[i].0).collect()
}

pub fn frontier(cfg: &RunConfig) -> CmdResult {
    let model = model_of(&cfg.model)?;
    let report = report_for(&cfg.model, &model, cfg)?;
    let nu0 = match &cfg.frontier.nu0 {
        Some(d) => d.clone(),
        None => {
            let s = model.states();
            let (a, b) = match (s.lower.finite(), s.upper.finite()) {
                (Some(a), Some(b)) => (a, b),
                _ => {
                    return Err(CmdError::Usage(
                        "a default uniform initial law needs a bounded state interval".into(),
                    ))
                }
            };
            InitialDistribution::Uniform {
                a,
                b,
                n: cfg.frontier.nodes,
            }
        }
    };
    let curve = sweep_frontier(
        &model,
        &report,
        &nu0,
        cfg.frontier.thresholds.as_deref(),
        cfg.frontier.tol,
    )?;
    let probes: Vec<ShadowPriceCheck> = if nu0.approximates_full_support(model.states()) {
        probe_states(&nu0, cfg.frontier.probes)
            .into_iter()
            .map(|z| shadow_price_check(&model, &report, &nu0, z, cfg.frontier.probe_tol))
            .collect::<Result<_, _>>()?
    } else {
        Vec::new()
    };
    let mut w = sink(cfg.output.out.as_deref())?;
    curve.write_csv(&mut w)?;
    w.flush()?;
    if let Some(p) = &cfg.output.json {
        write_json(
            Some(p),
            &FrontierDoc {
                schema_version: FRONTIER_SCHEMA,
                model: &cfg.model,
                nu0: &nu0,
                curve: &curve,
                probes: &probes,
            },
        )?;
    }
    let failed = probes.iter().any(|p| p.status == ProbeStatus::Fail);
    Ok(if failed { Exit::Fail } else { Exit::Ok })
}

#[derive(Serialize)]
struct WeakDuality {
    /// `bound + bound_err + 3 * half_width + truncation_bias`.
    allowance: f64,
    holds: bool,
}

#[derive(Serialize)]
struct RmabpDoc {
    schema_version: &'static str,
    projects: Vec<ModelSpec>,
    budget: f64,
    initial_states: Vec<f64>,
    dual: DualSolution,
    simulation: SimResult,
    weak_duality: WeakDuality,
}

pub fn rmabp(cfg: &RunConfig) -> CmdResult {
    let specs = cfg.rmabp_projects();
    let mut projects: Vec<CertifiedProject> = Vec::with_capacity(specs.len());
    for (i, spec) in specs.iter().enumerate() {
        let model = model_of(spec)?;
        // Identical projects share one certification.
        let report = match specs[..i].iter().position(|s| s == spec) {
            Some(j) => projects[j].report.clone(),
            None => report_for(spec, &model, cfg)?,
        };
        projects.push(CertifiedProject::from_report(model, report, i)?);
    }
    let initial = if cfg.rmabp.initial_states.is_empty() {
        let n = projects.len();
        projects
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let s = p.model.states();
                match (s.lower.finite(), s.upper.finite()) {
                    (Some(a), Some(b)) => Ok(a + (b - a) * (i + 1) as f64 / (n + 1) as f64),
                    _ => Err(CmdError::Usage(
                        "initial states are required for unbounded state intervals".into(),
                    )),
                }
            })
            .collect::<Result<Vec<_>, _>>()?
    } else {
        cfg.rmabp.initial_states.clone()
    };
    let instance = RMABPInstance::new(projects, cfg.rmabp.budget, initial.clone())?;
    let horizon = match cfg.rmabp.horizon {
        Some(h) => h,
        None => instance.horizon_for_bias(cfg.rmabp.bias_tol)?,
    };
    let dual = solve_dual(&instance, cfg.rmabp.dual_tol)?;
    let simulation = simulate_index_policy(&instance, cfg.rmabp.episodes, horizon, cfg.seed)?;
    let allowance =
        dual.bound + dual.bound_err + 3.0 * simulation.half_width + simulation.truncation_bias;
    let holds = simulation.mean_value <= allowance;
    write_json(
        cfg.output.out.as_deref(),
        &RmabpDoc {
            schema_version: RMABP_SCHEMA,
            projects: specs,
            budget: cfg.rmabp.budget,
            initial_states: initial,
            dual,
            simulation,
            weak_duality: WeakDuality { allowance, holds },
        },
    )?;
    Ok(if holds { Exit::Ok } else { Exit::Fail })
}
