use std::sync::Arc;

use odebayes::numerics::split_stream;
use odebayes::ode::{Exponential, LotkaVolterra, OdeSystem};
use odebayes::rksb::{rksb_run, RksbConfig};
use odebayes::rktb::{rktb_run, RktbConfig};
use odebayes::study::{equal_tailed_interval, generate_dataset, TruthCurve};
use odebayes::ts::{ts_run, TsConfig};
use odebayes::{Case, Dataset, Method};

fn lv_data(n: usize, seed: u64) -> (Arc<dyn OdeSystem>, Dataset) {
    let lv: Arc<dyn OdeSystem> = Arc::new(LotkaVolterra::default());
    let truth = TruthCurve::new(lv.clone(), &[10.0; 4], Case::WellSpecified).unwrap();
    let data = generate_dataset(&truth, n, 0.1, &mut split_stream(seed, 0)).unwrap();
    (lv, data)
}

#[test]
fn rktb_centres_on_truth_at_n500() {
    let (lv, data) = lv_data(500, 11);
    let draws = rktb_run(lv, &data, &RktbConfig { draws: 300, ..RktbConfig::default() }, &mut split_stream(11, 1)).unwrap();
    assert_eq!(draws.method, Method::Rktb);
    assert!(!draws.flagged);
    for (j, m) in draws.mean().iter().enumerate() {
        assert!((m - 10.0).abs() < 0.5, "theta{} mean {m}", j + 1);
        let (lo, hi) = equal_tailed_interval(&draws.column(j), 0.95).unwrap();
        assert!(lo < hi && hi - lo < 1.5, "theta{} interval ({lo}, {hi})", j + 1);
    }
}

#[test]
fn rktb_is_deterministic_per_stream() {
    let (lv, data) = lv_data(60, 12);
    let cfg = RktbConfig { draws: 50, ..RktbConfig::default() };
    let a = rktb_run(lv.clone(), &data, &cfg, &mut split_stream(12, 1)).unwrap();
    let b = rktb_run(lv.clone(), &data, &cfg, &mut split_stream(12, 1)).unwrap();
    let c = rktb_run(lv, &data, &cfg, &mut split_stream(12, 2)).unwrap();
    assert_eq!(a.theta, b.theta);
    assert_eq!(a.sigma2, b.sigma2);
    assert_ne!(a.theta, c.theta);
}

#[test]
fn ts_intervals_are_wider_than_rktb() {
    let (lv, data) = lv_data(300, 13);
    let rktb = rktb_run(lv.clone(), &data, &RktbConfig { draws: 300, ..RktbConfig::default() }, &mut split_stream(13, 1)).unwrap();
    let ts = ts_run(lv, &data, &TsConfig { draws: 300, ..TsConfig::default() }, &mut split_stream(13, 2)).unwrap();
    let width = |d: &odebayes::PosteriorDraws, j: usize| {
        let (lo, hi) = equal_tailed_interval(&d.column(j), 0.95).unwrap();
        hi - lo
    };
    for j in 0..4 {
        assert!(width(&ts, j) > width(&rktb, j), "theta{}", j + 1);
    }
}

#[test]
fn rksb_recovers_exponential_rate() {
    let mut s = split_stream(14, 0);
    let x: Vec<f64> = (0..200).map(|_| s.uniform()).collect();
    let y: Vec<f64> = x.iter().map(|t| (0.7 * t).exp() + 0.05 * s.normal()).collect();
    let data = Dataset::new(x, nalgebra::DMatrix::from_vec(200, 1, y)).unwrap();
    let cfg = RksbConfig { prior_theta_mean: vec![0.0], prior_theta_var: vec![4.0], proposal_scale: vec![0.1], ..RksbConfig::default() }.with_draws(500);
    let draws = rksb_run(Arc::new(Exponential), &data, &cfg, &mut split_stream(14, 1)).unwrap();
    let (lo, hi) = equal_tailed_interval(&draws.column(0), 0.95).unwrap();
    assert!(lo < 0.7 && 0.7 < hi, "({lo}, {hi})");
    assert!((0.1..0.6).contains(&draws.acceptance_rate), "{}", draws.acceptance_rate);
}

#[test]
fn rksb_rejects_mismatched_prior_length() {
    let (lv, data) = lv_data(30, 15);
    let cfg = RksbConfig { prior_theta_mean: vec![6.0; 3], ..RksbConfig::default() };
    assert!(rksb_run(lv, &data, &cfg, &mut split_stream(15, 1)).is_err());
}

#[test]
fn rksb_acceptance_after_adaptation_on_lotka_volterra() {
    for (n, seed) in [(100, 16), (500, 17)] {
        let (lv, data) = lv_data(n, seed);
        let draws = rksb_run(lv, &data, &RksbConfig::default().with_draws(200), &mut split_stream(seed, 1)).unwrap();
        assert!((0.1..=0.5).contains(&draws.acceptance_rate), "n={n}: {}", draws.acceptance_rate);
        for (j, m) in draws.mean().iter().enumerate() {
            assert!((m - 10.0).abs() < 1.0, "n={n} theta{} mean {m}", j + 1);
        }
    }
}
