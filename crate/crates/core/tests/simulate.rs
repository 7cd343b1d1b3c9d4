use statrs::distribution::{ChiSquared, ContinuousCDF};
use stpp_watch::simulate::time_rescaled;
use stpp_watch::{simulate, stationary_intensity, ChangeScenario, Domain, HawkesParams, Rect, RegionUnion};

/// Two-sided one-sample KS statistic against `cdf`.
fn ks(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic KS critical value at level 0.01.
fn ks_crit(n: usize) -> f64 {
    1.6276 / (n as f64).sqrt()
}

fn no_change(p: HawkesParams, t: f64) -> ChangeScenario {
    ChangeScenario::no_change(p, Domain::unit(t).unwrap()).unwrap()
}

#[test]
fn poisson_inter_arrivals_are_exponential() {
    let sc = no_change(HawkesParams::poisson(100.0), 100.0);
    let st = simulate(&sc, 11).unwrap();
    let t: Vec<f64> = st.events().iter().map(|e| e.t).collect();
    let gaps: Vec<f64> = std::iter::once(t[0]).chain(t.windows(2).map(|w| w[1] - w[0])).collect();
    assert!(gaps.len() > 9_000);
    let n = gaps.len();
    let d = ks(gaps, |x| 1.0 - (-100.0 * x).exp());
    assert!(d < ks_crit(n), "KS {d}");
}

#[test]
fn poisson_cell_counts_pass_chi_square() {
    let sc = no_change(HawkesParams::poisson(100.0), 100.0);
    let st = simulate(&sc, 12).unwrap();
    let (nx, nt) = (5usize, 40usize);
    let mut counts = vec![0u32; nx * nx * nt];
    for e in st.events() {
        let ix = ((e.s[0] * nx as f64) as usize).min(nx - 1);
        let iy = ((e.s[1] * nx as f64) as usize).min(nx - 1);
        let it = ((e.t / 100.0 * nt as f64) as usize).min(nt - 1);
        counts[(it * nx + iy) * nx + ix] += 1;
    }
    let m = 100.0 * 100.0 / counts.len() as f64;
    let chi: f64 = counts.iter().map(|&c| (c as f64 - m).powi(2) / m).sum();
    let dist = ChiSquared::new((counts.len() - 1) as f64).unwrap();
    assert!(chi > dist.inverse_cdf(0.005) && chi < dist.inverse_cdf(0.995), "chi2 {chi}");
}

#[test]
fn hawkes_time_rescaling_residuals_are_unit_exponential() {
    for (seed, kernel) in [(13, stpp_watch::KernelKind::Gaussian), (14, stpp_watch::KernelKind::Uniform)] {
        let p = HawkesParams { kernel, ..HawkesParams::hawkes(100.0, 0.5, 1.0) };
        let sc = no_change(p, 50.0);
        let st = simulate(&sc, seed).unwrap();
        let r = time_rescaled(&sc, &st);
        let n = r.len();
        assert!(n > 8_000);
        let d = ks(r, |x| 1.0 - (-x).exp());
        assert!(d < ks_crit(n), "{kernel:?}: KS {d}");
    }
}

#[test]
fn change_scenario_time_rescaling() {
    let omega = RegionUnion::from_boxes(vec![Rect::new(0.4, 0.4, 0.6, 0.6)], &Rect::unit());
    let sc = ChangeScenario::new(HawkesParams::hawkes(100.0, 0.3, 2.0), HawkesParams::hawkes(1000.0, 0.3, 2.0), 20.0, omega, Domain::unit(40.0).unwrap()).unwrap();
    let st = simulate(&sc, 15).unwrap();
    let r = time_rescaled(&sc, &st);
    let n = r.len();
    let d = ks(r, |x| 1.0 - (-x).exp());
    assert!(d < ks_crit(n), "KS {d}");
}

#[test]
fn mean_counts_match_rates() {
    let hpp = no_change(HawkesParams::poisson(100.0), 1.0);
    let counts: Vec<f64> = (0..200).map(|s| simulate(&hpp, s).unwrap().len() as f64).collect();
    let m = counts.iter().sum::<f64>() / 200.0;
    let sd = (counts.iter().map(|c| (c - m).powi(2)).sum::<f64>() / 199.0).sqrt();
    assert!((m - 100.0).abs() < 3.0, "mean {m}");
    assert!((sd - 10.0).abs() < 2.0, "sd {sd}");

    // Short temporal memory so [0, 1] is close to stationary.
    let hawkes = no_change(HawkesParams::hawkes(100.0, 0.5, 50.0), 1.0);
    let m = (0..200).map(|s| simulate(&hawkes, s).unwrap().len() as f64).sum::<f64>() / 200.0;
    assert!((m / 200.0 - 1.0).abs() < 0.1, "mean {m}");
}

#[test]
fn long_run_rate_matches_stationary_intensity() {
    let p = HawkesParams::hawkes(10.0, 0.5, 1.0);
    let st = simulate(&no_change(p, 500.0), 3).unwrap();
    let rate = st.len() as f64 / 500.0;
    let want = stationary_intensity(&p).unwrap();
    assert!((rate / want - 1.0).abs() < 0.05, "rate {rate} vs {want}");
}

#[test]
fn post_change_counts_inside_omega() {
    let omega = RegionUnion::from_boxes(vec![Rect::new(0.4, 0.4, 0.6, 0.6)], &Rect::unit());
    let sc = ChangeScenario::new(HawkesParams::poisson(100.0), HawkesParams::poisson(1000.0), 0.5, omega.clone(), Domain::unit(1.0).unwrap()).unwrap();
    let n = 200;
    let m = (0..n)
        .map(|s| simulate(&sc, s).unwrap().events().iter().filter(|e| e.t >= 0.5 && omega.contains(e.s)).count() as f64)
        .sum::<f64>()
        / n as f64;
    assert!((m - 20.0).abs() < 1.5, "mean {m}");
}
