//! Full PCL reports on the bundled models and on deliberate counterexamples.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use whittle_core::engine::{k_horizon_metrics, mp_index_table};
use whittle_core::model::{
    Action, BanditModel, Branch, FiniteMixtureKernel, StateInterval, ThresholdSpec, WeightBound,
};
use whittle_core::models::webcrawl::{webcrawl_index, webcrawl_metrics};
use whittle_core::models::{ChannelParams, ResetParams, WebCrawlParams};
use whittle_core::pcl::{
    check_pcli2, check_pcli3, full_report, PCLReport, PclGrids, PclTolerances, Verdict,
};
use whittle_core::Error;

fn report(model: &BanditModel, n: usize) -> PCLReport {
    let grids = PclGrids::uniform(model, n).unwrap();
    full_report(model, &grids, &PclTolerances::default()).unwrap()
}

#[test]
fn webcrawl_report_passes_and_rechecks() {
    let m = WebCrawlParams::default().model().unwrap();
    let r = report(&m, 201);
    assert_eq!(r.verdict, Verdict::Pass, "{:?}", r.witness);
    assert!(r.witness.is_none());
    assert!(r.recheck());
    assert!(r.pcli3.as_ref().unwrap().max_residual <= 1e-8);
    assert!(r.pcli3.as_ref().unwrap().max_residual >= 0.0);
    assert_eq!(r.scope, "certified on grid");
}

#[test]
fn channel_report_passes_with_floor_one_minus_beta() {
    let p = ChannelParams::default();
    let m = p.model().unwrap();
    let r = report(&m, 201);
    assert_eq!(r.verdict, Verdict::Pass, "{:?}", r.witness);
    assert!(r.recheck());
    assert!(r.pcli1.min_certified_g >= 1.0 - p.beta - 1e-9, "{}", r.pcli1.min_certified_g);
}

#[test]
fn reports_are_deterministic_and_round_trip() {
    let m = WebCrawlParams::default().model().unwrap();
    let a = report(&m, 51);
    let b = report(&m, 51);
    assert_eq!(a, b);
    let json = serde_json::to_string(&a).unwrap();
    let back: PCLReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back, a);
    assert_eq!(serde_json::to_string(&back).unwrap(), json);
}

#[test]
fn reset_model_without_holding_cost_is_pcl_indexable() {
    // Activation at x > z costs 0.1 once, then the state sits at 0 <= z
    // passively, so g(x, z) = 0.1 - 0.9 * 0.1 = 0.01 there.
    let m = ResetParams::default().model().unwrap();
    let b = k_horizon_metrics(&m, 0.6, &ThresholdSpec::z(0.5), 200).unwrap();
    assert!((b.marginal_resource - 0.01).abs() < 1e-12);
    assert_eq!(report(&m, 101).verdict, Verdict::Pass);
}

#[test]
fn reset_model_with_holding_cost_fails_pcli1_with_witness() {
    let m = ResetParams { beta: 0.9, h: 1.0 }.model().unwrap();
    let r = report(&m, 101);
    assert_eq!(r.verdict, Verdict::Fail);
    assert_eq!(r.witness.as_ref().unwrap().condition, "PCLI1");
    let w = r.pcli1.witness.unwrap();
    assert!(w.g <= -0.5, "{w:?}");
    // Hand value at (0.6, 0.5): active now costs 0.1 + 0.6 and leaves 0 for
    // ever; passive costs 0.6, then the same activation one step later.
    let hand = 0.7 - (0.6 + 0.9 * 0.7);
    let b = k_horizon_metrics(&m, 0.6, &ThresholdSpec::z(0.5), 400).unwrap();
    assert!((b.marginal_resource - hand).abs() <= b.fg_err + 1e-12);
    assert!(b.marginal_resource <= -0.5);
}

/// Web-crawling dynamics with the reward reversed to `a (1 - x)`.
fn reversed_reward_model() -> BanditModel {
    let p = WebCrawlParams::default();
    let (l, alpha, beta) = (p.lower(), p.alpha, p.beta);
    let kernel = FiniteMixtureKernel::new(
        vec![Branch::certain(move |x| l + alpha * x)],
        vec![Branch::certain(move |_| l)],
    )
    .unwrap();
    BanditModel::new(
        "reversed",
        StateInterval::new(l, p.upper()).unwrap(),
        Arc::new(|x, a: Action| a.as_u8() as f64 * (1.0 - x)),
        Arc::new(|_, a: Action| a.as_u8() as f64),
        kernel,
        beta,
        WeightBound::unit(1.0, beta),
    )
    .unwrap()
}

#[test]
fn decreasing_reward_fails_monotonicity_with_adjacent_witness() {
    let m = reversed_reward_model();
    let r = report(&m, 201);
    assert_eq!(r.verdict, Verdict::Fail);
    let p2 = r.pcli2.as_ref().unwrap();
    assert_eq!(p2.verdict, Verdict::Fail);
    let (a, b) = p2.witness.unwrap();
    // The witness is a pair of adjacent grid states on which the tabulated
    // index drops by more than the two certificates.
    let i = r.grids.states.iter().position(|&s| s == a).unwrap();
    assert_eq!(r.grids.states[i + 1], b);
    let (va, vb) = (
        r.index_table[i].value.unwrap(),
        r.index_table[i + 1].value.unwrap(),
    );
    assert!(vb.m < va.m - va.err - vb.err);
}

#[test]
fn pcli2_rejects_uncertified_tables() {
    let m = ResetParams { beta: 0.9, h: 1.0 }.model().unwrap();
    let table = mp_index_table(&m, &[0.1, 0.6, 0.9], 1e-6).unwrap();
    assert!(table.iter().any(|e| e.value.is_none()));
    let err = check_pcli2(&m, &table, 1e-9, 4, 1e-6).unwrap_err();
    assert!(matches!(err, Error::Uncertified(_)));
}

#[test]
fn pcli3_empty_interval_has_zero_residual() {
    let m = WebCrawlParams::default().model().unwrap();
    let v = check_pcli3(&m, &[0.7], &[(0.8, 0.8)], 1e-8, false).unwrap();
    assert_eq!(v.verdict, Verdict::Pass);
    let t = v.triples[0];
    assert_eq!((t.delta_f, t.integral, t.residual), (0.0, 0.0, 0.0));
}

#[test]
fn pcli3_random_triples_match_closed_form_sums() {
    // Independent route: both sides from the closed forms. The integral is
    // the finite sum of m(z_j) times the G-jump at each ladder point z_j.
    let p = WebCrawlParams::default();
    let m = p.model().unwrap();
    let (l, u) = (p.lower(), p.upper());
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut triples = Vec::new();
    for _ in 0..50 {
        let x = rng.gen_range(l..=u);
        let (a, b) = (rng.gen_range(l..u), rng.gen_range(l..u));
        triples.push((x, a.min(b), a.max(b)));
    }
    for &(x, z1, z2) in &triples {
        let big_f = |z: f64| webcrawl_metrics(&p, x, &ThresholdSpec::z(z)).unwrap().reward;
        let big_g = |pol: ThresholdSpec| webcrawl_metrics(&p, x, &pol).unwrap().resource;
        let delta_f = big_f(z2) - big_f(z1);
        let integral: f64 = p
            .jump_points(x, 200)
            .into_iter()
            .filter(|&z| z1 < z && z <= z2)
            .map(|z| {
                let jump = big_g(ThresholdSpec::z(z)) - big_g(ThresholdSpec::z_minus(z));
                webcrawl_index(&p, z).unwrap() * jump
            })
            .sum();
        assert!((delta_f - integral).abs() <= 1e-8, "({x}, {z1}, {z2})");

        let v = check_pcli3(&m, &[x], &[(z1, z2)], 1e-8, false).unwrap();
        let t = v.triples[0];
        assert!(t.residual <= 1e-8, "engine residual at ({x}, {z1}, {z2}): {t:?}");
        assert!((t.delta_f - delta_f).abs() <= 1e-8);
    }
}
