use stpp_watch::score::{train_score_model, DsmConfig};
use stpp_watch::{simulate, ChangeScenario, Domain, HawkesParams};

fn data(seed: u64) -> (stpp_watch::EventStream, Domain) {
    let d = Domain::unit(2.0).unwrap();
    let sc = ChangeScenario::no_change(HawkesParams::poisson(150.0), d).unwrap();
    (simulate(&sc, seed).unwrap(), d)
}

#[test]
fn training_is_deterministic() {
    let (st, d) = data(1);
    let cfg = DsmConfig { epochs: 3, width: 16, ..DsmConfig::default() };
    let a = train_score_model(&st, 0.1, &d, &cfg).unwrap();
    let b = train_score_model(&st, 0.1, &d, &cfg).unwrap();
    assert_eq!(a.model.weights.to_json().unwrap(), b.model.weights.to_json().unwrap());
    assert_eq!(a.loss_trace, b.loss_trace);
    let c = train_score_model(&st, 0.1, &d, &DsmConfig { seed: 1, ..cfg }).unwrap();
    assert_ne!(a.loss_trace, c.loss_trace);
}

#[test]
fn loss_decreases_over_training() {
    let d = Domain::unit(20.0).unwrap();
    let st = simulate(&ChangeScenario::no_change(HawkesParams::poisson(150.0), d).unwrap(), 2).unwrap();
    let cfg = DsmConfig { sigma: 0.1, epochs: 30, width: 16, ..DsmConfig::default() };
    let out = train_score_model(&st, 0.1, &d, &cfg).unwrap();
    let means: Vec<f64> = out.loss_trace.chunks(10).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
    assert!(means.windows(2).all(|w| w[1] <= w[0]), "{means:?}");
}

#[test]
fn training_rejects_bad_input() {
    let (st, d) = data(3);
    assert!(train_score_model(&stpp_watch::EventStream::new(vec![]).unwrap(), 0.1, &d, &DsmConfig::default()).is_err());
    assert!(train_score_model(&st, 0.1, &d, &DsmConfig { sigma: 0.0, ..DsmConfig::default() }).is_err());
}
