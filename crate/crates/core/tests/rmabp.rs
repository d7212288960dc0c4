//! Lagrangian bound, generalized inverse and index-policy simulation.

use std::sync::OnceLock;

use whittle_core::engine::{distribution_metrics, mp_index_at, Precision};
use whittle_core::model::{Action, ExtReal, InitialDistribution, ThresholdSpec};
use whittle_core::models::channel::{channel_index, channel_metrics};
use whittle_core::models::webcrawl::{webcrawl_index, webcrawl_metrics};
use whittle_core::models::{ChannelParams, ResetParams, WebCrawlParams};
use whittle_core::pcl::{PclGrids, PclTolerances};
use whittle_core::rmabp::{
    generalized_inverse, index_policy_step, lagrangian_value, simulate_index_policy, solve_dual,
    CertifiedProject, RMABPInstance,
};
use whittle_core::Error;

fn certify(model: whittle_core::model::BanditModel) -> CertifiedProject {
    let grids = PclGrids::uniform(&model, 201).unwrap();
    CertifiedProject::certify(model, &grids, &PclTolerances::default()).unwrap()
}

fn channel_project() -> CertifiedProject {
    static P: OnceLock<CertifiedProject> = OnceLock::new();
    P.get_or_init(|| certify(ChannelParams::default().model().unwrap()))
        .clone()
}

fn web_project() -> CertifiedProject {
    static P: OnceLock<CertifiedProject> = OnceLock::new();
    P.get_or_init(|| certify(WebCrawlParams::default().model().unwrap()))
        .clone()
}

fn channel_pair(budget: f64) -> RMABPInstance {
    RMABPInstance::new(vec![channel_project(), channel_project()], budget, vec![0.25, 0.55]).unwrap()
}

#[test]
fn inverse_on_channel_case_one_is_identity() {
    let p = channel_project();
    let z = generalized_inverse(p.index_table(), 0.15).unwrap();
    assert!((z.to_f64() - 0.15).abs() < 1e-8, "{z}");
    assert_eq!(generalized_inverse(p.index_table(), -0.5).unwrap(), ExtReal::Finite(-1.0));
    assert_eq!(generalized_inverse(p.index_table(), 5.0).unwrap(), ExtReal::Finite(2.0));
}

#[test]
fn zero_price_bound_is_sum_of_unconstrained_rewards() {
    // At lambda = 0 the web index is positive everywhere, so each project
    // is always active; F then has a closed form.
    let w = WebCrawlParams::default();
    let inst = RMABPInstance::new(vec![web_project(), web_project()], 1.0, vec![0.6, 0.8]).unwrap();
    let d = lagrangian_value(&inst, 0.0).unwrap();
    let exact: f64 = [0.6, 0.8]
        .iter()
        .map(|&x| webcrawl_metrics(&w, x, &ThresholdSpec::always_active()).unwrap().reward)
        .sum();
    assert!((d.bound - exact).abs() <= d.bound_err + 1e-9, "{} vs {exact}", d.bound);
}

#[test]
fn price_above_top_index_idles_single_web_project() {
    let w = WebCrawlParams::default();
    let inst = RMABPInstance::new(vec![web_project()], 0.5, vec![0.7]).unwrap();
    let lambda = webcrawl_index(&w, w.upper()).unwrap() + 0.5;
    let d = lagrangian_value(&inst, lambda).unwrap();
    assert_eq!(d.per_project[0].value, 0.0);
    assert!((d.bound - 0.5 * lambda / (1.0 - w.beta)).abs() < 1e-12);
}

#[test]
fn symmetric_channel_pair_decomposes() {
    let ch = ChannelParams::default();
    let lambda = 0.3;
    let pair = channel_pair(1.0);
    let d = lagrangian_value(&pair, lambda).unwrap();
    // Each side recomputed independently: a one-project instance per state,
    // and the closed form at the returned threshold.
    let mut sum = 0.0;
    for (i, &x) in pair.initial_states.iter().enumerate() {
        let single = RMABPInstance::new(vec![channel_project()], 0.0, vec![x]).unwrap();
        let v = lagrangian_value(&single, lambda).unwrap().per_project[0].value;
        assert_eq!(v, d.per_project[i].value);
        let z = d.per_project[i].threshold.to_f64();
        let best = [ThresholdSpec::z(z), ThresholdSpec::z_minus(z)]
            .iter()
            .map(|pol| {
                let b = channel_metrics(&ch, x, pol).unwrap();
                b.reward - lambda * b.resource
            })
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((best - v).abs() < 1e-8, "x={x}: closed form {best} vs {v}");
        sum += v;
    }
    let lhs = d.bound;
    let rhs = pair.budget * lambda / (1.0 - pair.beta) + sum;
    assert!((lhs - rhs).abs() <= 1e-10);
}

#[test]
fn slack_budget_prices_at_zero() {
    let d = solve_dual(&channel_pair(2.0), 1e-6).unwrap();
    assert!(d.lambda_opt <= 1e-6, "{}", d.lambda_opt);
}

#[test]
fn zero_budget_prices_out_all_activity() {
    let w = WebCrawlParams::default();
    let x0 = 0.7;
    let inst = RMABPInstance::new(vec![web_project()], 0.0, vec![x0]).unwrap();
    let d = solve_dual(&inst, 1e-7).unwrap();
    assert!(d.lambda_opt >= webcrawl_index(&w, x0).unwrap() - 1e-6, "{}", d.lambda_opt);
    assert!(d.bound.abs() <= d.bound_err + 1e-9);
    // Grid sweep: nothing on the grid beats the solver.
    for i in 0..=40 {
        let l = 2.0 * i as f64 / 40.0;
        assert!(lagrangian_value(&inst, l).unwrap().bound >= d.bound - 1e-9);
    }
}

#[test]
fn dual_is_convex_on_fifty_point_grid() {
    let inst = channel_pair(1.0);
    let lambda_max = 1.0 + channel_index(&ChannelParams::default(), 1.0).unwrap();
    let vals: Vec<f64> = (0..50)
        .map(|i| lagrangian_value(&inst, lambda_max * i as f64 / 49.0).unwrap().bound)
        .collect();
    let worst = vals
        .windows(3)
        .map(|w| w[2] - 2.0 * w[1] + w[0])
        .fold(f64::INFINITY, f64::min);
    assert!(worst >= -1e-8, "second difference {worst}");
}

#[test]
fn greedy_step_matches_exhaustive_search_on_knapsack_example() {
    let idx = [0.3, 0.2, 0.1];
    let ca = [0.6, 0.6, 0.3];
    let acts = index_policy_step(&idx, &ca, &[0.0; 3], 1.0).unwrap();
    let mut best = (f64::NEG_INFINITY, 0u8);
    for mask in 0u8..8 {
        let on = |i: usize| mask >> i & 1 == 1;
        let cost: f64 = (0..3).filter(|&i| on(i)).map(|i| ca[i]).sum();
        let gain: f64 = (0..3).filter(|&i| on(i)).map(|i| idx[i]).sum();
        if cost <= 1.0 && gain > best.0 {
            best = (gain, mask);
        }
    }
    let chosen: Vec<Action> = (0..3)
        .map(|i| Action::from_bool(best.1 >> i & 1 == 1))
        .collect();
    assert_eq!(acts, chosen);
    assert_eq!(acts, vec![Action::Active, Action::Passive, Action::Active]);
}

#[test]
fn greedy_step_rejects_unaffordable_passivity() {
    let err = index_policy_step(&[0.1, 0.2], &[1.0, 1.0], &[0.5, 0.7], 1.0).unwrap_err();
    assert!(matches!(err, Error::Infeasible(_)));
}

#[test]
fn instances_refuse_uncertified_projects_and_infeasible_budgets() {
    let m = ResetParams { beta: 0.9, h: 1.0 }.model().unwrap();
    let grids = PclGrids::uniform(&m, 51).unwrap();
    let err = CertifiedProject::certify(m, &grids, &PclTolerances::default()).unwrap_err();
    assert!(matches!(err, Error::ProjectNotCertified { .. }));
    let err = RMABPInstance::new(vec![channel_project()], -0.1, vec![0.5]).unwrap_err();
    assert!(matches!(err, Error::Infeasible(_)));
    let err = RMABPInstance::new(vec![channel_project()], 1.0, vec![0.5, 0.5]).unwrap_err();
    assert!(matches!(err, Error::InvalidArgument(_)));
    let other = certify(ChannelParams::new(0.3, 0.2, 0.8).unwrap().model().unwrap());
    let err = RMABPInstance::new(vec![channel_project(), other], 1.0, vec![0.5, 0.5]).unwrap_err();
    assert!(matches!(err, Error::InvalidArgument(_)));
}

#[test]
fn bias_horizon_for_channel_pair() {
    let inst = channel_pair(1.0);
    let t = inst.horizon_for_bias(1e-4).unwrap();
    // 2 * M_gamma = 20 for two channel projects.
    let brute = (0..10_000).find(|&t| 0.9f64.powi(t) * 20.0 <= 1e-4).unwrap();
    assert_eq!(t, brute as usize);
    assert_eq!(t, 116);
}

#[test]
fn deterministic_web_instance_has_zero_spread() {
    let inst = RMABPInstance::new(vec![web_project(), web_project()], 1.0, vec![0.6, 0.8]).unwrap();
    let s = simulate_index_policy(&inst, 50, 100, 9).unwrap();
    assert_eq!(s.half_width, 0.0);
    assert_eq!(s.std_dev, 0.0);
    assert_eq!(s.budget_violations, 0);
}

#[test]
fn single_project_simulation_reduces_to_policy_metrics() {
    // With an ample budget every project is activated at every step, so the
    // simulated value is F under the always-active policy, horizon T - 1.
    let horizon = 120;
    let web = RMABPInstance::new(vec![web_project()], 1.0, vec![0.65]).unwrap();
    let s = simulate_index_policy(&web, 5, horizon, 1).unwrap();
    let model = &web.projects[0].model;
    let nu0 = InitialDistribution::PointMass { x: 0.65 };
    let f = distribution_metrics(model, &nu0, &ThresholdSpec::always_active(), horizon - 1)
        .unwrap()
        .reward;
    assert!((s.mean_value - f).abs() < 1e-12, "{} vs {f}", s.mean_value);

    let ch = RMABPInstance::new(vec![channel_project()], 1.0, vec![0.35]).unwrap();
    let s = simulate_index_policy(&ch, 20_000, horizon, 3).unwrap();
    let model = &ch.projects[0].model;
    let nu0 = InitialDistribution::PointMass { x: 0.35 };
    let f = distribution_metrics(model, &nu0, &ThresholdSpec::always_active(), horizon - 1)
        .unwrap()
        .reward;
    assert!((s.mean_value - f).abs() <= 3.0 * s.half_width, "{s:?} vs {f}");
}

#[test]
fn weak_duality_on_channel_pair() {
    let inst = channel_pair(1.0);
    let t = inst.horizon_for_bias(1e-4).unwrap();
    let s = simulate_index_policy(&inst, 10_000, t, 42).unwrap();
    let d = solve_dual(&inst, 1e-6).unwrap();
    let allowance = 3.0 * s.half_width + 1e-4 + d.bound_err;
    assert!(s.mean_value <= d.bound + allowance, "{s:?} vs {d:?}");
    for i in 0..20 {
        let l = 1.5 * i as f64 / 19.0;
        let b = lagrangian_value(&inst, l).unwrap();
        assert!(s.mean_value <= b.bound + 3.0 * s.half_width + 1e-4 + b.bound_err, "lambda={l}");
    }
    assert!(d.bound <= lagrangian_value(&inst, 0.0).unwrap().bound + 1e-12);
}

#[test]
fn simulation_is_reproducible_and_thread_independent() {
    let inst = channel_pair(1.0);
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| simulate_index_policy(&inst, 2_000, 60, 42).unwrap())
    };
    let a = run(1);
    let b = run(1);
    let c = run(3);
    assert_eq!(a, b);
    assert_eq!(a, c);
    assert_eq!(
        serde_json::to_string(&a).unwrap(),
        serde_json::to_string(&c).unwrap()
    );
    let other = simulate_index_policy(&inst, 2_000, 60, 43).unwrap();
    assert_ne!(a.mean_value, other.mean_value);
}

#[test]
fn online_index_matches_table_values() {
    let p = channel_project();
    for v in p.index_table().iter().step_by(20) {
        let m = mp_index_at(&p.model, v.x, Precision::Tolerance(1e-9)).unwrap();
        assert!((m.m - v.m).abs() <= m.err + v.err + 1e-12);
    }
}
