mod common;

use proptest::prelude::*;
use stpp_watch::calibrate::trial_stream;
use stpp_watch::detect::{alternate, istep, ostep, run_detector, run_online_detector, statistic, Detector, DetectorConfig, IStepRule, OnlineConfig};
use stpp_watch::score::nn::default_scale;
use stpp_watch::score::{anomaly_at, hyvarinen, NetWeights, NeuralScore, ScoreContext, ScoreModel, WeightConfig, WeightMode};
use stpp_watch::simulate::trial_rng;
use stpp_watch::{simulate, ChangeScenario, Domain, HawkesParams, Rect, RegionUnion};

use common::{brute_force_sup, random_scored};

fn dom() -> Domain {
    Domain::unit(1.0).unwrap()
}

fn table_scenario(mu0: f64, mu1: f64) -> ChangeScenario {
    let omega = RegionUnion::from_boxes(vec![Rect::new(0.4, 0.4, 0.6, 0.6)], &Rect::unit());
    ChangeScenario::new(HawkesParams::poisson(mu0), HawkesParams::poisson(mu1), 0.5, omega, dom()).unwrap()
}

fn analytic_pair(sc: &ChangeScenario, delta: f64) -> (ScoreModel, ScoreModel) {
    (ScoreModel::analytic(sc.pre, delta), ScoreModel::analytic(sc.post, delta))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn level_set_alternation_is_monotone_and_sandwiched(seed in any::<u64>(), n in 1usize..40, k in 1usize..6) {
        let s = random_scored(seed, n);
        let a = alternate(&s, 0.0, k, 0.1, &dom(), IStepRule::LevelSet);
        prop_assert!(a.trace.windows(2).all(|w| w[1] >= w[0]));
        prop_assert!(a.w >= 0.0);
        for x in s.iter().filter(|x| x.event.t >= a.tau_hat) {
            if x.delta_value > 0.0 {
                prop_assert!(a.omega_hat.contains(x.event.s));
            } else if x.delta_value < 0.0 {
                prop_assert!(!a.omega_hat.contains(x.event.s));
            }
        }
    }

    #[test]
    fn level_set_reaches_brute_force_sup(seed in any::<u64>(), n in 1usize..11) {
        let s = random_scored(seed, n);
        let a = alternate(&s, 0.0, 3, 0.1, &dom(), IStepRule::LevelSet);
        prop_assert_eq!(a.w, brute_force_sup(&s));
        let d = alternate(&s, 0.0, 3, 0.1, &dom(), IStepRule::DeltaSquares);
        prop_assert!(d.w >= 0.0 && d.w <= a.w + 1e-12);
    }

    #[test]
    fn ostep_matches_dense_grid(seed in any::<u64>(), n in 1usize..12, boxes in prop::collection::vec((0.0..1.0f64, 0.0..1.0f64, 0.05..0.6f64), 1..4)) {
        let s = random_scored(seed, n);
        let gaps_ok = s.windows(2).all(|w| w[1].event.t - w[0].event.t > 2e-4) && s[0].event.t > 2e-4;
        prop_assume!(gaps_ok);
        let omega = RegionUnion::from_boxes(boxes.iter().map(|&(x, y, r)| Rect::square([x, y], r)).collect(), &Rect::unit());
        let now = s.last().unwrap().event.t.next_up();
        let (tau, v) = ostep(&s, &omega, now);
        prop_assert_eq!(statistic(&s, tau, &omega), v);
        let grid = (0..=10_000).map(|i| i as f64 / 10_000.0 * now).map(|t| statistic(&s, t, &omega)).fold(0.0, f64::max);
        prop_assert!((grid - v).abs() < 1e-12, "grid {} ostep {}", grid, v);
    }

    #[test]
    fn istep_region_is_optimal_for_its_window(seed in any::<u64>(), n in 1usize..11, tau in 0.0..1.0f64) {
        let s = random_scored(seed, n);
        let omega = istep(&s, tau, 0.1, &dom(), IStepRule::LevelSet);
        let start = s.partition_point(|x| x.event.t < tau);
        let positives = s[start..].iter().map(|x| x.delta_value).filter(|d| *d > 0.0).fold(0.0, |a, d| a + d);
        prop_assert_eq!(statistic(&s, tau, &omega), positives);
    }
}

#[test]
fn istep_examples() {
    let s = random_scored(1, 6).into_iter().map(|mut x| {
        x.delta_value = -x.delta_value.abs() - 0.1;
        x
    });
    let s: Vec<_> = s.collect();
    assert!(istep(&s, 0.0, 0.1, &dom(), IStepRule::LevelSet).is_empty());
    assert!(istep(&s, 0.0, 0.1, &dom(), IStepRule::DeltaSquares).is_empty());
    let r = RegionUnion::from_boxes(vec![Rect::unit()], &Rect::unit());
    let now = s.last().unwrap().event.t.next_up();
    assert_eq!(ostep(&s, &r, now), (now, 0.0));
    let pos: Vec<_> = s.iter().map(|x| stpp_watch::detect::ScoredEvent::new(x.event, -x.delta_value)).collect();
    assert_eq!(ostep(&pos, &r, now).0, pos[0].event.t);
}

#[test]
fn detector_is_deterministic_and_consistent_with_first_passage() {
    let sc = table_scenario(50.0, 500.0);
    let (m0, m1) = analytic_pair(&sc, 0.1);
    for rule in [IStepRule::DeltaSquares, IStepRule::LevelSet] {
        let cfg = DetectorConfig { rule, ..DetectorConfig::default() };
        for seed in 0..5 {
            let st = simulate(&sc, seed).unwrap();
            let full = run_detector(&st, &m0, &m1, f64::INFINITY, &cfg, &sc.domain).unwrap();
            assert!(full.horizon_exhausted());
            assert_eq!(full.trajectory.len(), st.len());
            assert!(full.trajectory.w.iter().all(|w| *w >= 0.0));
            assert_eq!(full, run_detector(&st, &m0, &m1, f64::INFINITY, &cfg, &sc.domain).unwrap());
            for gamma in [0.0, 1.0, 10.0, 50.0] {
                let r = run_detector(&st, &m0, &m1, gamma, &cfg, &sc.domain).unwrap();
                assert_eq!(r.nu, full.trajectory.first_passage(gamma));
                assert_eq!(r.trajectory.w[..], full.trajectory.w[..r.trajectory.len()]);
                if let Some(nu) = r.nu {
                    assert!(nu >= r.tau_hat || r.omega_hat.is_empty());
                }
            }
        }
    }
}

#[test]
fn streaming_state_matches_batch_statistic() {
    let sc = table_scenario(50.0, 500.0);
    let (m0, m1) = analytic_pair(&sc, 0.1);
    let st = simulate(&sc, 9).unwrap();
    let mut det = Detector::new(m0, m1, DetectorConfig::default(), sc.domain).unwrap();
    for e in st.events() {
        let w = det.push(*e).unwrap();
        assert_eq!(w, statistic(det.scored(), det.tau_hat(), det.omega_hat()));
        assert_eq!(w, det.statistic());
    }
    assert!(det.push(st.events()[0]).is_err());
}

#[test]
fn anomaly_at_equals_difference_of_scores() {
    let omega = RegionUnion::from_boxes(vec![Rect::new(0.3, 0.3, 0.7, 0.7)], &Rect::unit());
    let pre = HawkesParams::hawkes(30.0, 0.5, 2.0);
    let sc = ChangeScenario::new(pre, pre.with_mu(90.0), 2.0, omega, Domain::unit(4.0).unwrap()).unwrap();
    let st = simulate(&sc, 21).unwrap();
    let ev = st.events();
    let (m0, m1) = analytic_pair(&sc, 0.1);
    let needs = m0.needs().merge(&m1.needs());
    for mode in [WeightMode::CoordinateBoundaryDistance, WeightMode::TemporalOnly, WeightMode::ScalarLinf] {
        let w = WeightConfig::new(mode);
        for i in (0..ev.len()).step_by(7) {
            let ctx = ScoreContext::from_slice(ev, i, &needs);
            let x = stpp_watch::TransformedEvent { dt: ev[i].t - ctx.t_n, s: ev[i].s };
            let want = hyvarinen(&m0, &w, &ctx, &x, &sc.domain).unwrap() - hyvarinen(&m1, &w, &ctx, &x, &sc.domain).unwrap();
            let got = anomaly_at(&m0, &m1, &w, &ctx, &x, &sc.domain).unwrap();
            assert_eq!(got.to_bits(), want.to_bits(), "{mode:?} event {i}");
        }
    }
}

fn neural(seed: u64, delta: f64) -> ScoreModel {
    let d = dom();
    let w = NetWeights::init(4, 16, default_scale(&d, delta, 0.05), &mut trial_rng(seed, 0));
    ScoreModel::Neural(NeuralScore { weights: w, delta })
}

#[test]
fn online_with_zero_step_matches_offline_detector() {
    let sc = table_scenario(50.0, 500.0);
    let m0 = neural(3, 0.1);
    let cfg = DetectorConfig::default();
    let st = trial_stream(&sc, 5, 0).unwrap();
    let online = OnlineConfig { eta: 0.0, ..OnlineConfig::default() };
    let a = run_online_detector(&st, &m0, f64::INFINITY, &cfg, &online, &sc.domain).unwrap();
    let b = run_detector(&st, &m0, &m0, f64::INFINITY, &cfg, &sc.domain).unwrap();
    assert_eq!(a.trajectory, b.trajectory);
    assert!(a.trajectory.w.iter().all(|w| *w == 0.0));
}

#[test]
fn online_updates_change_the_post_model() {
    let sc = table_scenario(50.0, 500.0);
    let m0 = neural(3, 0.1);
    let st = trial_stream(&sc, 5, 1).unwrap();
    let online = OnlineConfig { eta: 1e-4, ..OnlineConfig::default() };
    let r = run_online_detector(&st, &m0, f64::INFINITY, &DetectorConfig::default(), &online, &sc.domain).unwrap();
    assert!(r.trajectory.w.iter().any(|w| *w > 0.0));
    assert!(run_online_detector(&st, &ScoreModel::analytic(sc.pre, 0.1), 1.0, &DetectorConfig::default(), &online, &sc.domain).is_err());
}
