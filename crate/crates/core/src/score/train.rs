//! Denoising score-matching training of the neural score model.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::context::ScoreContext;
use super::nn::{default_scale, NetWeights, DEFAULT_MAX_HISTORY};
use super::{perturb, NeuralScore};
use crate::error::{Error, Result};
use crate::events::{Domain, EventStream, LocalIndex, TransformedEvent};
use crate::simulate::trial_rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DsmConfig {
    /// Noise standard deviation.
    pub sigma: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Recurrent width.
    pub hidden: usize,
    /// Feed-forward width.
    pub width: usize,
    pub max_history: usize,
}

impl Default for DsmConfig {
    fn default() -> Self {
        DsmConfig {
            sigma: 0.02,
            epochs: 60,
            batch_size: 64,
            learning_rate: 3e-3,
            seed: 0,
            hidden: 8,
            width: 64,
            max_history: DEFAULT_MAX_HISTORY,
        }
    }
}

impl DsmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !(self.learning_rate > 0.0) {
            return Err(Error::InvalidParameter("sigma and learning_rate must be positive".into()));
        }
        if self.batch_size == 0 || self.hidden == 0 || self.width == 0 {
            return Err(Error::InvalidParameter("batch_size, hidden and width must be positive".into()));
        }
        Ok(())
    }
}

/// One training example: encoder sequence plus the transformed event.
#[derive(Debug, Clone, PartialEq)]
pub struct DsmSample {
    pub sequence: Vec<[f64; 3]>,
    pub x: TransformedEvent,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: NeuralScore,
    /// Mean DSM loss per epoch.
    pub loss_trace: Vec<f64>,
}

/// Adds the DSM gradient of `samples` (mean over samples) into `grad` and returns the mean loss.
fn accumulate(w: &NetWeights, samples: &[&DsmSample], eps: &[[f64; 3]], sigma: f64, grad: &mut [f64]) -> f64 {
    let s2 = sigma * sigma;
    let scale = 1.0 / samples.len() as f64;
    let mut loss = 0.0;
    for (smp, e) in samples.iter().zip(eps) {
        let xp = perturb(&smp.x, *e);
        let enc = w.encode(&smp.sequence);
        let y = w.forward(&enc, &xp);
        let r = [0, 1, 2].map(|k| y[k] + e[k] / s2);
        loss += r.iter().map(|v| v * v).sum::<f64>();
        w.backward(&enc, &xp, r.map(|v| 2.0 * v * scale), grad);
    }
    loss * scale
}

/// One plain gradient step of size `eta` on the mean DSM loss of `samples`.
pub fn dsm_gradient_step(w: &mut NetWeights, samples: &[&DsmSample], eps: &[[f64; 3]], sigma: f64, eta: f64) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let mut grad = vec![0.0; w.n_params()];
    let loss = accumulate(w, samples, eps, sigma, &mut grad);
    for (p, g) in w.params.iter_mut().zip(&grad) {
        *p -= eta * g;
    }
    loss
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        self.t += 1;
        let c1 = 1.0 - B1.powi(self.t);
        let c2 = 1.0 - B2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = B1 * self.m[i] + (1.0 - B1) * grad[i];
            self.v[i] = B2 * self.v[i] + (1.0 - B2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + 1e-8);
        }
    }
}

/// Training examples from a stream: every event with a prior in-ball event.
pub fn training_samples(data: &EventStream, delta: f64, max_history: usize, domain: &Domain) -> Vec<(ScoreContext, TransformedEvent)> {
    let ev = data.events();
    let idx = LocalIndex::build(ev, domain.s_bounds(), delta);
    let needs = super::HistoryNeeds { delta, radius: delta, memory: f64::INFINITY, max_events: Some(max_history) };
    (0..ev.len())
        .filter_map(|i| {
            let ctx = ScoreContext::from_index(ev, i, &idx, &needs);
            if ctx.censored {
                return None;
            }
            let x = TransformedEvent { dt: ev[i].t - ctx.t_n, s: ev[i].s };
            Some((ctx, x))
        })
        .collect()
}

/// Fits a neural score model by minimizing the DSM loss with Adam and a cosine step-size decay.
pub fn train_score_model(data: &EventStream, delta: f64, domain: &Domain, cfg: &DsmConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidStream("training data is empty".into()));
    }
    let pairs = training_samples(data, delta, cfg.max_history, domain);
    if pairs.is_empty() {
        return Err(Error::InvalidStream("no event has a prior event within delta".into()));
    }
    let mean_dt = pairs.iter().map(|(_, x)| x.dt).sum::<f64>() / pairs.len() as f64;
    let mut rng = trial_rng(cfg.seed, 0);
    let mut weights = NetWeights::init(cfg.hidden, cfg.width, default_scale(domain, delta, mean_dt), &mut rng);
    weights.max_history = cfg.max_history;
    let proto = NeuralScore { weights, delta };
    let samples: Vec<DsmSample> = pairs
        .iter()
        .map(|(ctx, x)| DsmSample { sequence: proto.sequence(ctx), x: *x })
        .collect();
    let mut w = proto.weights;

    let noise = Normal::new(0.0, cfg.sigma).expect("sigma validated positive");
    let mut adam = Adam::new(w.n_params());
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut grad = vec![0.0; w.n_params()];
    for epoch in 0..cfg.epochs {
        let frac = epoch as f64 / cfg.epochs.max(1) as f64;
        let lr = cfg.learning_rate * (0.05 + 0.95 * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos()));
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let items: Vec<&DsmSample> = batch.iter().map(|&i| &samples[i]).collect();
            let eps: Vec<[f64; 3]> = items
                .iter()
                .map(|_| [noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng)])
                .collect();
            grad.iter_mut().for_each(|g| *g = 0.0);
            let loss = accumulate(&w, &items, &eps, cfg.sigma, &mut grad);
            if !loss.is_finite() || !grad.iter().all(|g| g.is_finite()) {
                return Err(Error::Divergence { epoch, loss });
            }
            total += loss * items.len() as f64;
            adam.step(&mut w.params, &grad, lr);
        }
        let mean = total / samples.len() as f64;
        if !mean.is_finite() || !w.is_finite() {
            return Err(Error::Divergence { epoch, loss: mean });
        }
        trace.push(mean);
    }
    Ok(TrainOutput { model: NeuralScore { weights: w, delta }, loss_trace: trace })
}

/// Draws `n` DSM noise vectors.
pub(crate) fn draw_noise<R: Rng + ?Sized>(rng: &mut R, n: usize, sigma: f64) -> Vec<[f64; 3]> {
    let noise = Normal::new(0.0, sigma).expect("sigma positive");
    (0..n).map(|_| [noise.sample(rng), noise.sample(rng), noise.sample(rng)]).collect()
}
