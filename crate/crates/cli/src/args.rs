use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use whittle_core::config::ModelSpec;
use whittle_core::model::{ExtReal, InitialDistribution, Side};
use whittle_core::models::{ChannelParams, ResetParams, WebCrawlParams};

use crate::run_config::RunConfig;

#[derive(Debug, Parser)]
#[command(
    name = "whittle",
    version,
    about = "MP (Whittle) indices, PCL-indexability certificates, dual bounds and frontiers for restless bandits",
    after_help = "Exit codes: 0 success/PASS, 1 runtime error, 2 analytic failure (FAIL verdict, \
uncertifiable index, refused project, failed check), 3 INCONCLUSIVE, 64 usage error.\n\
Set WHITTLE_CACHE_DIR to cache PCL reports between runs."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Tabulate the MP index on a uniform grid (CSV: x, m, err, k_used, failure).
    Index(CommonArgs),
    /// Run the three PCL checks and emit the report (JSON).
    Verify(CommonArgs),
    /// Threshold-policy metrics F, G, f, g at a list of states (CSV).
    Metrics(MetricsArgs),
    /// Resource-reward frontier (CSV) with shadow-price probes.
    Frontier(FrontierArgs),
    /// Lagrangian dual bound and index-policy simulation (JSON).
    Rmabp(RmabpArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    Webcrawl,
    Channel,
    Reset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SideArg {
    #[value(name = "z")]
    Right,
    #[value(name = "z-")]
    Left,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output file (stdout when absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Built-in model; parameters not given keep their defaults.
    #[arg(long, value_enum)]
    pub model: Option<ModelKind>,
    /// Web crawling: passive growth factor.
    #[arg(long, allow_negative_numbers = true)]
    pub alpha: Option<f64>,
    /// Web crawling: upper end of the state interval.
    #[arg(long, allow_negative_numbers = true)]
    pub b: Option<f64>,
    /// Web crawling: crawl cost.
    #[arg(long = "C", allow_negative_numbers = true)]
    pub c: Option<f64>,
    /// Discount factor.
    #[arg(long, allow_negative_numbers = true)]
    pub beta: Option<f64>,
    /// Channel: good-to-bad switching probability.
    #[arg(long, allow_negative_numbers = true)]
    pub p: Option<f64>,
    /// Channel: bad-to-good switching probability.
    #[arg(long, allow_negative_numbers = true)]
    pub q: Option<f64>,
    /// Reset: holding cost per unit of state.
    #[arg(long, allow_negative_numbers = true)]
    pub h: Option<f64>,
    /// Number of uniform grid points.
    #[arg(long)]
    pub grid: Option<usize>,
    /// Certificate target for index values.
    #[arg(long)]
    pub tol: Option<f64>,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// States, comma separated (default: the grid).
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub x: Option<Vec<f64>>,
    /// Threshold: a number, `inf` or `-inf`.
    #[arg(long, allow_negative_numbers = true)]
    pub z: Option<String>,
    #[arg(long, value_enum)]
    pub side: Option<SideArg>,
    /// Randomization: passive at x = z with this probability.
    #[arg(long)]
    pub mix: Option<f64>,
}

#[derive(Debug, Args)]
pub struct FrontierArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Nodes of the uniform initial law.
    #[arg(long)]
    pub nodes: Option<usize>,
    /// Put all initial mass on one state (shadow-price probes are skipped).
    #[arg(long, allow_negative_numbers = true)]
    pub point_mass: Option<f64>,
    #[arg(long)]
    pub probes: Option<usize>,
    /// Also write the curve and probe records as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RmabpArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub budget: Option<f64>,
    #[arg(long)]
    pub episodes: Option<u64>,
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Copies of the model when the config lists no projects.
    #[arg(long)]
    pub copies: Option<usize>,
    /// Initial states, comma separated, one per project.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub initial: Option<Vec<f64>>,
}

impl Command {
    pub fn common(&self) -> &CommonArgs {
        match self {
            Command::Index(c) | Command::Verify(c) => c,
            Command::Metrics(m) => &m.common,
            Command::Frontier(f) => &f.common,
            Command::Rmabp(r) => &r.common,
        }
    }
}

pub fn parse_ext(s: &str) -> Result<ExtReal, String> {
    serde_json::from_str::<ExtReal>(s)
        .or_else(|_| serde_json::from_value::<ExtReal>(serde_json::Value::String(s.to_string())))
        .map_err(|_| format!("'{s}' is not a number, 'inf' or '-inf'"))
}

/// Applies the model flags to the configured model.
fn apply_model(cfg: &mut RunConfig, a: &CommonArgs) -> Result<(), String> {
    if let Some(kind) = a.model {
        let same = matches!(
            (&cfg.model, kind),
            (ModelSpec::Webcrawl(_), ModelKind::Webcrawl)
                | (ModelSpec::Channel(_), ModelKind::Channel)
                | (ModelSpec::Reset(_), ModelKind::Reset)
        );
        if !same {
            cfg.model = match kind {
                ModelKind::Webcrawl => ModelSpec::Webcrawl(WebCrawlParams::default()),
                ModelKind::Channel => ModelSpec::Channel(ChannelParams::default()),
                ModelKind::Reset => ModelSpec::Reset(ResetParams::default()),
            };
        }
    }
    let name = cfg.model.name().to_string();
    let reject = |flag: &str| Err(format!("--{flag} does not apply to model '{name}'"));
    match &mut cfg.model {
        ModelSpec::Webcrawl(p) => {
            set(&mut p.alpha, a.alpha);
            set(&mut p.b, a.b);
            set(&mut p.c, a.c);
            set(&mut p.beta, a.beta);
            for (flag, v) in [("p", a.p), ("q", a.q), ("h", a.h)] {
                if v.is_some() {
                    return reject(flag);
                }
            }
        }
        ModelSpec::Channel(p) => {
            set(&mut p.p, a.p);
            set(&mut p.q, a.q);
            set(&mut p.beta, a.beta);
            for (flag, v) in [("alpha", a.alpha), ("b", a.b), ("C", a.c), ("h", a.h)] {
                if v.is_some() {
                    return reject(flag);
                }
            }
        }
        ModelSpec::Reset(p) => {
            set(&mut p.beta, a.beta);
            set(&mut p.h, a.h);
            for (flag, v) in [("alpha", a.alpha), ("b", a.b), ("C", a.c), ("p", a.p), ("q", a.q)] {
                if v.is_some() {
                    return reject(flag);
                }
            }
        }
        ModelSpec::Custom(c) => {
            set(&mut c.beta, a.beta);
            for (flag, v) in [
                ("alpha", a.alpha),
                ("b", a.b),
                ("C", a.c),
                ("p", a.p),
                ("q", a.q),
                ("h", a.h),
            ] {
                if v.is_some() {
                    return reject(flag);
                }
            }
        }
    }
    Ok(())
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

/// Loads the config file (if any) and layers the flags on top.
pub fn resolve(cmd: &Command) -> Result<RunConfig, String> {
    let a = cmd.common();
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p).map_err(|e| e.to_string())?,
        None => RunConfig::default(),
    };
    apply_model(&mut cfg, a)?;
    if a.out.is_some() {
        cfg.output.out = a.out.clone();
    }
    if a.threads.is_some() {
        cfg.threads = a.threads;
    }
    set(&mut cfg.seed, a.seed);
    set(&mut cfg.grid, a.grid);
    set(&mut cfg.index_tol, a.tol);
    match cmd {
        Command::Index(_) | Command::Verify(_) => {}
        Command::Metrics(m) => {
            if m.x.is_some() {
                cfg.metrics.states = m.x.clone();
            }
            if let Some(z) = &m.z {
                cfg.metrics.z = parse_ext(z)?;
            }
            if let Some(s) = m.side {
                cfg.metrics.side = match s {
                    SideArg::Right => Side::Right,
                    SideArg::Left => Side::Left,
                };
            }
            if m.mix.is_some() {
                cfg.metrics.alpha = m.mix;
            }
            if a.tol.is_some() {
                cfg.metrics.tol = cfg.index_tol;
            }
        }
        Command::Frontier(f) => {
            set(&mut cfg.frontier.nodes, f.nodes);
            set(&mut cfg.frontier.probes, f.probes);
            if let Some(x) = f.point_mass {
                cfg.frontier.nu0 = Some(InitialDistribution::PointMass { x });
            } else if f.nodes.is_some() {
                cfg.frontier.nu0 = None;
            }
            if f.json.is_some() {
                cfg.output.json = f.json.clone();
            }
        }
        Command::Rmabp(r) => {
            set(&mut cfg.rmabp.budget, r.budget);
            set(&mut cfg.rmabp.episodes, r.episodes);
            set(&mut cfg.rmabp.copies, r.copies);
            if r.horizon.is_some() {
                cfg.rmabp.horizon = r.horizon;
            }
            if let Some(x) = &r.initial {
                cfg.rmabp.initial_states = x.clone();
            }
        }
    }
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}
