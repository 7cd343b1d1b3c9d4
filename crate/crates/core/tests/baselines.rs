use proptest::prelude::*;
use stpp_watch::baselines::{bin_events, cusum_binned, min_cusum, pp_cusum, scusum_binned, Aggregation, GaussianScore};
use stpp_watch::geometry::union_area;
use stpp_watch::monitor::{Baseline, Monitor};
use stpp_watch::{intensity_at, simulate, ChangeScenario, Domain, Event, EventStream, HawkesParams, Rect, RegionUnion};

fn dom(t: f64) -> Domain {
    Domain::unit(t).unwrap()
}

fn table_scenario() -> ChangeScenario {
    let omega = RegionUnion::from_boxes(vec![Rect::new(0.4, 0.4, 0.6, 0.6)], &Rect::unit());
    ChangeScenario::new(HawkesParams::poisson(100.0), HawkesParams::poisson(1000.0), 0.5, omega, dom(1.0)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn binning_conserves_events(seed in any::<u64>(), n in 1usize..8, dt in 0.013..0.4f64) {
        let sc = ChangeScenario::no_change(HawkesParams::poisson(200.0), dom(1.0)).unwrap();
        let st = simulate(&sc, seed).unwrap();
        let b = bin_events(&st, &sc.domain, n, dt).unwrap();
        prop_assert_eq!(b.total() as usize, st.len());
        prop_assert_eq!(b.n_bins(), (1.0 / dt).ceil() as usize);
    }
}

#[test]
fn binned_counts_have_poisson_means() {
    let sc = ChangeScenario::no_change(HawkesParams::poisson(100.0), dom(50.0)).unwrap();
    let st = simulate(&sc, 2).unwrap();
    let b = bin_events(&st, &sc.domain, 4, 0.5).unwrap();
    let mean = b.total() as f64 / (b.n_bins() * b.n_cells()) as f64;
    let want = 100.0 * 0.5 / 16.0;
    assert!((mean / want - 1.0).abs() < 0.05, "{mean} vs {want}");
}

#[test]
fn cusum_statistics_are_nonnegative_and_reset() {
    let sc = table_scenario();
    for seed in 0..10 {
        let st = simulate(&sc, seed).unwrap();
        let series = bin_events(&st, &sc.domain, 5, 0.01).unwrap();
        let c = cusum_binned(&bin_events(&st, &sc.domain, 1, 0.01).unwrap(), 100.0, 136.0, f64::INFINITY).unwrap();
        let m = min_cusum(&series, 100.0, 1000.0, f64::INFINITY, Aggregation::Sum).unwrap();
        let p = pp_cusum(&st, &sc.pre, &sc.pre.with_mu(136.0), f64::INFINITY, &sc.domain).unwrap();
        for r in [&c, &m, &p] {
            assert!(r.trajectory.w.iter().all(|w| *w >= 0.0), "{}", r.detector);
        }
        assert!(c.trajectory.w.contains(&0.0));
        assert_eq!(c.omega_hat.area(), 1.0);
        assert_eq!(p.omega_hat.area(), 1.0);
        let cells = m.omega_hat.boxes.iter().all(|b| {
            let k = |v: f64| (v * 5.0 - (v * 5.0).round()).abs() < 1e-9;
            k(b.x0) && k(b.x1) && k(b.y0) && k(b.y1) && (b.width() - 0.2).abs() < 1e-9
        });
        assert!(cells);
        assert!((union_area(&m.omega_hat.boxes) - 0.04 * m.omega_hat.boxes.len() as f64).abs() < 1e-9);
    }
}

#[test]
fn scusum_with_identical_models_never_stops() {
    let sc = table_scenario();
    let reference = bin_events(&simulate(&sc.pre_change().unwrap(), 40).unwrap(), &sc.domain, 3, 0.01).unwrap();
    let g = GaussianScore::fit(&reference.vectors()).unwrap();
    let st = simulate(&sc, 41).unwrap();
    let r = scusum_binned(&bin_events(&st, &sc.domain, 3, 0.01).unwrap(), &g, &g, 1e-9).unwrap();
    assert!(r.horizon_exhausted());
    assert!(r.trajectory.w.iter().all(|w| *w == 0.0));
    let fitted = Baseline::scusum_for(&sc, 3, 0.01, 7).unwrap();
    assert!(fitted.run(&st, &sc.domain, f64::INFINITY).unwrap().trajectory.max() > 0.0);
}

/// `max(0, max_j Σ_{i≥j} ln(λ₁/λ₀)(t_i) − (μ₁−μ₀)|S|(t_n − t_j))` from full-history intensities.
fn pp_oracle(st: &EventStream, pre: &ChangeScenario, post: &ChangeScenario) -> f64 {
    let ev = st.events();
    let c = (post.pre.mu - pre.pre.mu) * pre.domain.area();
    let lr: Vec<f64> = (0..ev.len())
        .map(|i| (intensity_at(post, &ev[i], &ev[..i]).unwrap() / intensity_at(pre, &ev[i], &ev[..i]).unwrap()).ln())
        .collect();
    let t_n = ev.last().unwrap().t;
    (0..ev.len())
        .map(|j| lr[j..].iter().sum::<f64>() - c * (t_n - ev[j].t))
        .fold(0.0, f64::max)
}

#[test]
fn pp_cusum_matches_tau_oracle() {
    for (alpha, mu1) in [(0.0, 60.0), (0.4, 60.0), (0.4, 30.0)] {
        let p0 = HawkesParams::hawkes(40.0, alpha, 3.0);
        let d = dom(3.0);
        let pre = ChangeScenario::no_change(p0, d).unwrap();
        let post = ChangeScenario::no_change(p0.with_mu(mu1), d).unwrap();
        for seed in 0..3 {
            let st = simulate(&pre, seed).unwrap();
            let r = pp_cusum(&st, &p0, &p0.with_mu(mu1), f64::INFINITY, &d).unwrap();
            let want = pp_oracle(&st, &pre, &post);
            assert!((r.w - want).abs() < 1e-9 * want.abs().max(1.0), "alpha {alpha} mu1 {mu1}: {} vs {want}", r.w);
        }
    }
}

#[test]
fn pp_cusum_poisson_increment() {
    let st = EventStream::new(vec![Event::new(0.1, 0.5, 0.5), Event::new(0.3, 0.2, 0.2)]).unwrap();
    let r = pp_cusum(&st, &HawkesParams::poisson(1.0), &HawkesParams::poisson(2.0), f64::INFINITY, &dom(1.0)).unwrap();
    let l = 2f64.ln();
    assert!((r.trajectory.w[0] - l).abs() < 1e-15);
    assert!((r.trajectory.w[1] - (2.0 * l - 0.2)).abs() < 1e-15);
}
