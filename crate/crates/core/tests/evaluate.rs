use stpp_watch::calibrate::{empirical_arl, trial_stream};
use stpp_watch::detect::{DetectorConfig, IStepRule};
use stpp_watch::evaluate::{edd, jaccard_at_stop, match_arl, region_evolution, run_batch, tradeoff_curve, TradeoffConfig};
use stpp_watch::monitor::{Baseline, Monitor, Stcusum};
use stpp_watch::score::ScoreModel;
use stpp_watch::{jaccard, ChangeScenario, Domain, HawkesParams, Rect, RegionUnion};

fn scenario() -> ChangeScenario {
    let omega = RegionUnion::from_boxes(vec![Rect::new(0.4, 0.4, 0.6, 0.6)], &Rect::unit());
    ChangeScenario::new(HawkesParams::poisson(50.0), HawkesParams::poisson(500.0), 0.5, omega, Domain::unit(1.0).unwrap()).unwrap()
}

fn stcusum(sc: &ChangeScenario) -> Stcusum {
    Stcusum { model0: ScoreModel::analytic(sc.pre, 0.1), model1: ScoreModel::analytic(sc.post, 0.1), cfg: DetectorConfig::default() }
}

#[test]
fn stopping_times_are_monotone_along_thresholds() {
    let sc = scenario();
    let m = stcusum(&sc);
    let gammas = [1.0, 5.0, 20.0, 80.0];
    let batches: Vec<_> = gammas.iter().map(|g| run_batch(&m, &sc, *g, 20, 8).unwrap()).collect();
    for w in batches.windows(2) {
        for (a, b) in w[0].records.iter().zip(&w[1].records) {
            assert!(a.result.nu.unwrap_or(1.0) <= b.result.nu.unwrap_or(1.0));
        }
    }
    let e = edd(&batches[3]).unwrap();
    assert_eq!(e.n_detected + e.n_false_alarm + e.n_censored, 20);
}

#[test]
fn perfect_region_scores_one() {
    let sc = scenario();
    let mut b = run_batch(&Baseline::cusum_for(&sc, 0.01), &sc, 10.0, 10, 1).unwrap();
    for r in &mut b.records {
        r.result.omega_hat = sc.omega.clone();
    }
    let j = jaccard_at_stop(&b, &sc.omega);
    if j.n > 0 {
        assert_eq!(j.mean, Some(1.0));
    }
}

#[test]
fn region_evolution_starts_empty_and_ends_at_the_full_run() {
    let sc = scenario();
    let mut m = stcusum(&sc);
    m.cfg.rule = IStepRule::LevelSet;
    let st = trial_stream(&sc, 2, 0).unwrap();
    let snaps = region_evolution(&m, &st, &sc, &[0.0, 0.25, 1.0]).unwrap();
    assert!(snaps[0].omega_hat.is_empty());
    assert_eq!(snaps[0].w, 0.0);
    let full = m.run(&st, &sc.domain, f64::INFINITY).unwrap();
    assert_eq!(snaps[2].omega_hat, full.omega_hat);
    assert_eq!(snaps[2].w, full.w);
    assert!(jaccard(&snaps[2].omega_hat, &sc.omega) > 0.0);
}

#[test]
fn tradeoff_rows_are_consistent() {
    let sc = scenario();
    let m = Baseline::cusum_for(&sc, 0.01);
    let cfg = TradeoffConfig { n_trials: 20, arl_trials: 20, arl_horizon: 3.0, seed: 4 };
    let rows = tradeoff_curve(&m, &sc, &[1.0, 4.0, 16.0], &cfg).unwrap();
    assert_eq!(rows.len(), 3);
    for w in rows.windows(2) {
        assert!(w[1].arl >= w[0].arl);
        assert!(w[1].false_alarm_rate <= w[0].false_alarm_rate);
    }
    for r in &rows {
        let direct = edd(&run_batch(&m, &sc, r.gamma, 20, 4).unwrap()).unwrap();
        assert_eq!(r.edd, direct.edd);
    }
    assert_eq!(rows, tradeoff_curve(&m, &sc, &[1.0, 4.0, 16.0], &cfg).unwrap());
}

#[test]
fn matched_threshold_is_minimal() {
    let sc = scenario();
    let m = Baseline::cusum_for(&sc, 0.01);
    let r = match_arl(&m, &sc, 2.0, 30, 4.0, 6).unwrap();
    assert!(r.arl >= 2.0);
    let pre = sc.pre_change().unwrap().with_horizon(4.0).unwrap();
    let below = (0..30)
        .flat_map(|i| m.run(&trial_stream(&pre, 6, i).unwrap(), &pre.domain, f64::INFINITY).unwrap().trajectory.w)
        .filter(|w| *w < r.gamma)
        .fold(0.0, f64::max);
    assert!(empirical_arl(&m, &sc, below, 30, 4.0, 6).unwrap().arl < 2.0);
    assert!(match_arl(&m, &sc, 5.0, 30, 4.0, 6).is_err());
}
