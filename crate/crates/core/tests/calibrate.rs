use stpp_watch::calibrate::{calibrate_threshold, empirical_arl, empirical_arl_grid, CalibrationConfig};
use stpp_watch::detect::DetectorConfig;
use stpp_watch::monitor::{Baseline, Monitor, Stcusum};
use stpp_watch::score::ScoreModel;
use stpp_watch::{ChangeScenario, Domain, HawkesParams, Rect, RegionUnion};

fn scenario() -> ChangeScenario {
    let omega = RegionUnion::from_boxes(vec![Rect::new(0.4, 0.4, 0.6, 0.6)], &Rect::unit());
    ChangeScenario::new(HawkesParams::poisson(50.0), HawkesParams::poisson(500.0), 0.5, omega, Domain::unit(1.0).unwrap()).unwrap()
}

fn stcusum(sc: &ChangeScenario) -> Stcusum {
    Stcusum { model0: ScoreModel::analytic(sc.pre, 0.1), model1: ScoreModel::analytic(sc.post, 0.1), cfg: DetectorConfig::default() }
}

#[test]
fn arl_is_monotone_in_threshold_per_path() {
    let sc = scenario();
    let m = Baseline::cusum_for(&sc, 0.01);
    let gammas = [0.5, 1.0, 2.0, 4.0, 8.0];
    let grid = empirical_arl_grid(&m, &sc, &gammas, 40, 3.0, 5).unwrap();
    for w in grid.windows(2) {
        assert!(w[1].arl >= w[0].arl);
        for (a, b) in w[0].stops.iter().zip(&w[1].stops) {
            assert!(a.unwrap_or(3.0) <= b.unwrap_or(3.0));
        }
    }
    for (g, r) in gammas.iter().zip(&grid) {
        let single = empirical_arl(&m, &sc, *g, 40, 3.0, 5).unwrap();
        assert_eq!(single.stops, r.stops);
        assert_eq!(single.arl, r.arl);
    }
}

#[test]
fn calibration_is_deterministic_and_hits_the_quantile() {
    let sc = scenario();
    let m = stcusum(&sc);
    let cfg = CalibrationConfig { n_trials: 40, seed: 3, ..CalibrationConfig::default() };
    let a = calibrate_threshold(&m, &sc, &cfg).unwrap();
    assert_eq!(a, calibrate_threshold(&m, &sc, &cfg).unwrap());
    assert_eq!(a.w_max.len(), 40);
    assert_eq!(a.horizon, 2.0);
    assert!(a.level > 0.0 && a.level <= 1.0);
    let below = a.w_max.iter().filter(|w| **w <= a.gamma).count() as f64 / 40.0;
    assert!((below - a.level).abs() <= 1.0 / 40.0 + 1e-12, "{below} vs {}", a.level);
    let other = calibrate_threshold(&m, &sc, &CalibrationConfig { seed: 4, ..cfg }).unwrap();
    assert_ne!(a.w_max, other.w_max);
    assert_eq!(a.detector, m.name());
}

#[test]
fn invalid_calibration_configs_are_rejected() {
    let sc = scenario();
    let m = Baseline::cusum_for(&sc, 0.01);
    for cfg in [
        CalibrationConfig { n_trials: 5, ..CalibrationConfig::default() },
        CalibrationConfig { target_arl: -1.0, ..CalibrationConfig::default() },
        CalibrationConfig { horizon: Some(f64::INFINITY), ..CalibrationConfig::default() },
    ] {
        assert!(calibrate_threshold(&m, &sc, &cfg).is_err());
    }
}
