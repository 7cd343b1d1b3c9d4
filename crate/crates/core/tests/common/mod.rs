#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stpp_watch::detect::ScoredEvent;
use stpp_watch::Event;

/// `n` scored events at random times and locations in `[0,1)³` with Δ in `[-1, 1)`.
pub fn random_scored(seed: u64, n: usize) -> Vec<ScoredEvent> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    t.sort_by(f64::total_cmp);
    t.dedup();
    t.into_iter()
        .map(|t| ScoredEvent::new(Event::new(t, rng.random(), rng.random()), rng.random_range(-1.0..1.0)))
        .collect()
}

/// Exhaustive sup of the windowed sum over `τ` ∈ event times ∪ {now} and every subset of window events,
/// each subset summed forward in time.
pub fn brute_force_sup(scored: &[ScoredEvent]) -> f64 {
    let mut best = 0.0f64;
    for start in 0..scored.len() {
        let window = &scored[start..];
        for mask in 1u32..(1 << window.len()) {
            let mut s = 0.0;
            for (i, x) in window.iter().enumerate() {
                if mask >> i & 1 == 1 {
                    s += x.delta_value;
                }
            }
            best = best.max(s);
        }
    }
    best
}
