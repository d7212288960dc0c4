//! Engine output against the model closed forms and against direct
//! trajectory sums.

use whittle_core::engine::{
    horizon_for_tolerance, k_horizon_metrics, mp_index_at, MetricBundle, Precision,
};
use whittle_core::model::{linspace, Action, ExtReal, Side, ThresholdSpec};
use whittle_core::models::channel::{channel_index, channel_metrics, ChannelCase};
use whittle_core::models::webcrawl::{webcrawl_avg_index, webcrawl_index, webcrawl_metrics};
use whittle_core::models::{ChannelParams, WebCrawlParams};

fn policies(z: f64) -> [ThresholdSpec; 2] {
    [ThresholdSpec::z(z), ThresholdSpec::z_minus(z)]
}

fn assert_within_certificate(num: &MetricBundle, exact: &MetricBundle, ctx: &str) {
    let slack = 1e-12;
    assert!((num.reward - exact.reward).abs() <= num.reward_err + slack, "F {ctx}: {num:?} vs {exact:?}");
    assert!((num.resource - exact.resource).abs() <= num.resource_err + slack, "G {ctx}");
    assert!(
        (num.marginal_reward - exact.marginal_reward).abs() <= num.fg_err + slack,
        "f {ctx}"
    );
    assert!(
        (num.marginal_resource - exact.marginal_resource).abs() <= num.fg_err + slack,
        "g {ctx}"
    );
}

/// Deterministic web-crawling trajectory summed directly.
fn crawl_trajectory(p: &WebCrawlParams, x0: f64, policy: &ThresholdSpec, steps: usize) -> (f64, f64) {
    let l = (1.0 - p.alpha) * p.b;
    let (mut x, mut disc, mut f, mut g) = (x0, 1.0, 0.0, 0.0);
    for _ in 0..steps {
        if policy.is_active(x) {
            f += disc * x;
            g += disc * p.c;
            x = l;
        } else {
            x = l + p.alpha * x;
        }
        disc *= p.beta;
    }
    (f, g)
}

#[test]
fn webcrawl_engine_within_certificates_of_closed_form() {
    let p = WebCrawlParams::default();
    let m = p.model().unwrap();
    for k in [5, 20, 60] {
        for &x in &linspace(0.5, 1.0, 11) {
            for &z in &[0.5, 0.6, 0.75, 0.8, 0.875, 0.93, 0.99, 1.0] {
                for pol in policies(z) {
                    let num = k_horizon_metrics(&m, x, &pol, k).unwrap();
                    let exact = webcrawl_metrics(&p, x, &pol).unwrap();
                    assert_within_certificate(&num, &exact, &format!("k={k} x={x} z={z}"));
                }
            }
        }
    }
}

#[test]
fn webcrawl_closed_form_matches_trajectory_sum() {
    for p in [
        WebCrawlParams::default(),
        WebCrawlParams::new(0.8, 2.0, 0.5, 0.95).unwrap(),
    ] {
        let (l, u) = (p.lower(), p.upper());
        for &x in &linspace(l, u, 9) {
            for &z in &linspace(l, u, 7) {
                for pol in policies(z) {
                    let (f, g) = crawl_trajectory(&p, x, &pol, 2000);
                    let b = webcrawl_metrics(&p, x, &pol).unwrap();
                    assert!((b.reward - f).abs() < 1e-10, "F x={x} z={z}");
                    assert!((b.resource - g).abs() < 1e-10, "G x={x} z={z}");
                }
            }
        }
    }
}

#[test]
fn webcrawl_reference_values() {
    let p = WebCrawlParams::default();
    // From l = 0.5 the 0.7-policy waits one step (to 0.75), crawls, repeats.
    let b = webcrawl_metrics(&p, 0.5, &ThresholdSpec::z(0.7)).unwrap();
    assert!((b.reward - 0.675 / 0.19).abs() < 1e-12);
    assert_eq!(webcrawl_index(&p, 1.0).unwrap(), 1.0);
    let q = WebCrawlParams::new(0.5, 1.0, 2.0, 0.9).unwrap();
    assert_eq!(webcrawl_index(&q, 1.0).unwrap(), 0.5);
}

#[test]
fn webcrawl_numeric_index_matches_closed_form() {
    let p = WebCrawlParams::default();
    let m = p.model().unwrap();
    for &x in &linspace(0.5, 1.0, 101) {
        let num = mp_index_at(&m, x, Precision::Tolerance(1e-6)).unwrap();
        let exact = webcrawl_index(&p, x).unwrap();
        assert!((num.m - exact).abs() <= num.err, "x={x}: {} vs {exact}, err {}", num.m, num.err);
        assert!((num.m - exact).abs() <= 1e-6);
    }
}

#[test]
fn webcrawl_index_is_continuous_at_ladder_breakpoints() {
    let p = WebCrawlParams::default();
    let lad = p.ladder();
    for t in 1..=30 {
        let bp = lad.at(p.lower(), t);
        if bp >= p.upper() {
            break;
        }
        let left = webcrawl_index(&p, bp - 1e-11).unwrap();
        let right = webcrawl_index(&p, bp).unwrap();
        // The index has slope at most 1 / ((1 - beta) C) = 10 here.
        assert!((left - right).abs() < 1e-9, "t={t} bp={bp}: {left} vs {right}");
    }
}

#[test]
fn webcrawl_index_tends_to_average_reward_index() {
    let p = WebCrawlParams::new(0.5, 1.0, 1.0, 0.999).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..51 {
        let x = 0.5 + 0.5 * i as f64 / 51.0;
        let d = webcrawl_index(&p, x).unwrap();
        let a = webcrawl_avg_index(&p, x).unwrap();
        worst = worst.max(((d - a) / a).abs());
    }
    assert!(worst < 1e-2, "worst relative gap {worst}");
    // And the gap shrinks as beta grows.
    let coarse = WebCrawlParams::new(0.5, 1.0, 1.0, 0.99).unwrap();
    let gap = |p: &WebCrawlParams| {
        ((webcrawl_index(p, 0.8).unwrap() - webcrawl_avg_index(p, 0.8).unwrap())
            / webcrawl_avg_index(p, 0.8).unwrap())
        .abs()
    };
    assert!(gap(&p) < gap(&coarse));
}

#[test]
fn channel_engine_within_certificates_of_closed_form() {
    let p = ChannelParams::default();
    let m = p.model().unwrap();
    for k in [3, 15, 40] {
        for &x in &linspace(0.0, 1.0, 11) {
            for &z in &[0.05, 0.2, 0.3, 0.39, 0.4, 0.5, 0.65, 0.7, 0.9] {
                for pol in policies(z) {
                    let num = k_horizon_metrics(&m, x, &pol, k).unwrap();
                    let exact = channel_metrics(&p, x, &pol).unwrap();
                    assert_within_certificate(&num, &exact, &format!("k={k} x={x} z={z}"));
                }
            }
            for pol in [ThresholdSpec::always_active(), ThresholdSpec::never_active()] {
                let num = k_horizon_metrics(&m, x, &pol, k).unwrap();
                let exact = channel_metrics(&p, x, &pol).unwrap();
                assert_within_certificate(&num, &exact, &format!("k={k} x={x} sentinel"));
            }
        }
    }
}

#[test]
fn channel_reference_values() {
    let p = ChannelParams::default();
    assert!((channel_index(&p, 0.1).unwrap() - 0.1).abs() < 1e-15);
    assert!((channel_index(&p, 0.5).unwrap() - 0.5 / 0.82).abs() < 1e-15);
    assert!((channel_index(&p, 0.9).unwrap() - 0.9).abs() < 1e-15);
    assert_eq!(p.case_of(0.1), ChannelCase::I);
    assert_eq!(p.case_of(0.3), ChannelCase::II);
    assert_eq!(p.case_of(0.5), ChannelCase::III);
    assert_eq!(p.case_of(0.9), ChannelCase::IV);
}

#[test]
fn channel_numeric_index_matches_closed_form_by_case() {
    let p = ChannelParams::default();
    let m = p.model().unwrap();
    for &x in &linspace(0.0, 1.0, 101) {
        let num = mp_index_at(&m, x, Precision::Tolerance(1e-10)).unwrap();
        let exact = channel_index(&p, x).unwrap();
        let tol = if p.case_of(x) == ChannelCase::II { 1e-6 } else { 1e-8 };
        assert!((num.m - exact).abs() <= tol, "x={x}: {} vs {exact}", num.m);
        assert!((num.m - exact).abs() <= num.err + 1e-12);
    }
}

#[test]
fn channel_marginal_resource_at_least_one_minus_beta() {
    let p = ChannelParams::default();
    let floor = 1.0 - p.beta;
    let grid = linspace(0.0, 1.0, 41);
    for &x in &grid {
        for &z in &grid {
            for pol in policies(z) {
                let g = channel_metrics(&p, x, &pol).unwrap().marginal_resource;
                assert!(g >= floor - 1e-12, "g({x},{z}) = {g}");
            }
        }
    }
}

#[test]
fn forced_first_action_reproduces_marginals() {
    // f = F(x, <1, pi>) - F(x, <0, pi>), built here from one explicit step
    // over the kernel and the engine's F at the successors.
    let p = ChannelParams::default();
    let m = p.model().unwrap();
    let k = 40;
    for &x in &[0.1, 0.35, 0.5, 0.8] {
        for &z in &[0.25, 0.45, 0.75] {
            let pol = ThresholdSpec::z(z);
            let b = k_horizon_metrics(&m, x, &pol, k).unwrap();
            let step = |a: Action| {
                let mut fg = (m.reward(x, a), m.cost(x, a));
                for (pr, y) in m.kernel().successors(x, a) {
                    let nb = k_horizon_metrics(&m, y, &pol, k - 1).unwrap();
                    fg.0 += p.beta * pr * nb.reward;
                    fg.1 += p.beta * pr * nb.resource;
                }
                fg
            };
            let (f1, g1) = step(Action::Active);
            let (f0, g0) = step(Action::Passive);
            assert!((b.marginal_reward - (f1 - f0)).abs() < 1e-12);
            assert!((b.marginal_resource - (g1 - g0)).abs() < 1e-12);
        }
    }
}

#[test]
fn horizon_for_tolerance_reference_values() {
    // Web crawling: M = 1, beta = 0.9, target 1e-6 on the index difference.
    let k = horizon_for_tolerance(1.0, 0.9, 1.0, 1e-6).unwrap();
    // Smallest k with 10 * 0.9^k <= 1e-6.
    let brute = (0..1000).find(|&k| 10.0 * 0.9f64.powi(k) <= 1e-6).unwrap();
    assert_eq!(k, brute as usize);
    let m = WebCrawlParams::default().model().unwrap();
    assert!(m.truncation_bound(k) <= 1e-6);
    assert!(m.truncation_bound(k - 1) > 1e-6);
}

#[test]
fn sentinel_thresholds_are_extreme_policies() {
    let p = WebCrawlParams::default();
    let m = p.model().unwrap();
    let never = k_horizon_metrics(&m, 0.7, &ThresholdSpec::never_active(), 50).unwrap();
    assert_eq!((never.reward, never.resource), (0.0, 0.0));
    let always = webcrawl_metrics(&p, 0.7, &ThresholdSpec::always_active()).unwrap();
    // Crawl now for 0.7, then crawl every step from l = 0.5.
    assert!((always.reward - (0.7 + 0.9 * 0.5 / 0.1)).abs() < 1e-12);
    assert!((always.resource - 10.0).abs() < 1e-12);
    let spec = ThresholdSpec {
        z: ExtReal::PosInf,
        side: Side::Left,
        alpha: None,
    };
    assert!(!spec.is_active(1.0));
}
