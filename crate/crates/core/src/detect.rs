//! Spatio-temporal CUSUM: cached anomalies, alternating window/region
//! maximization, stopping, and the online post-change update.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{Domain, Event, EventStream, LocalIndex, TransformedEvent};
use crate::geometry::{BoxIndex, Rect, RegionUnion};
use crate::score::{
    anomaly_at, draw_noise, dsm_gradient_step, CensoredPolicy, DsmSample, HistoryNeeds, ScoreContext, ScoreModel,
    WeightConfig,
};
use crate::simulate::trial_rng;

/// An event with its cached anomaly `Δ(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredEvent {
    pub event: Event,
    pub delta_value: f64,
}

impl ScoredEvent {
    pub fn new(event: Event, delta_value: f64) -> Self {
        ScoredEvent { event, delta_value }
    }
}

/// Region returned by the I-step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IStepRule {
    /// δ-squares around positive window events; every event inside counts.
    #[default]
    DeltaSquares,
    /// δ-squares around positive window events with negative window events as excluded points.
    LevelSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorConfig {
    pub delta: f64,
    /// Alternations per event.
    pub k: usize,
    pub weight: WeightConfig,
    pub censored: CensoredPolicy,
    pub rule: IStepRule,
    /// Start each event's alternation from the previous τ̂ instead of 0.
    pub warm_start: bool,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            delta: 0.1,
            k: 5,
            weight: WeightConfig::default(),
            censored: CensoredPolicy::Skip,
            rule: IStepRule::DeltaSquares,
            warm_start: false,
        }
    }
}

impl DetectorConfig {
    pub fn with_delta(self, delta: f64) -> Self {
        DetectorConfig { delta, ..self }
    }

    pub fn with_k(self, k: usize) -> Self {
        DetectorConfig { k, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0) || !self.delta.is_finite() {
            return Err(Error::InvalidParameter(format!("delta must be positive, got {}", self.delta)));
        }
        if self.k == 0 {
            return Err(Error::InvalidParameter("k must be at least 1".into()));
        }
        Ok(())
    }
}

/// Point-membership flags of `scored` in `omega`.
fn membership(scored: &[ScoredEvent], omega: &RegionUnion) -> Vec<bool> {
    if omega.is_empty() {
        return vec![false; scored.len()];
    }
    if omega.boxes.len() <= 8 {
        return scored.iter().map(|x| omega.contains(x.event.s)).collect();
    }
    let bb = omega.boxes.iter().fold(omega.boxes[0], |a, b| {
        Rect::new(a.x0.min(b.x0), a.y0.min(b.y0), a.x1.max(b.x1), a.y1.max(b.y1))
    });
    let side = omega.boxes.iter().map(|b| b.width().max(b.height())).sum::<f64>() / omega.boxes.len() as f64;
    let cell = side.max(bb.width().max(bb.height()) / 256.0);
    let idx = BoxIndex::new(omega, &bb, cell);
    scored.iter().map(|x| idx.contains(x.event.s)).collect()
}

fn window_start(scored: &[ScoredEvent], tau_hat: f64) -> usize {
    scored.partition_point(|x| x.event.t < tau_hat)
}

/// I-step: the region maximizing the windowed sum for window `[tau_hat, now)`.
pub fn istep(scored: &[ScoredEvent], tau_hat: f64, delta: f64, domain: &Domain, rule: IStepRule) -> RegionUnion {
    let win = &scored[window_start(scored, tau_hat)..];
    let boxes: Vec<Rect> = win
        .iter()
        .filter(|x| x.delta_value > 0.0)
        .map(|x| Rect::square(x.event.s, delta))
        .collect();
    if boxes.is_empty() {
        return RegionUnion::empty();
    }
    let excluded = match rule {
        IStepRule::DeltaSquares => Vec::new(),
        IStepRule::LevelSet => win.iter().filter(|x| x.delta_value < 0.0).map(|x| x.event.s).collect(),
    };
    RegionUnion::new(boxes, excluded, domain.s_bounds())
}

/// O-step: `τ ∈ {t_now} ∪ {event times < t_now}` maximizing the windowed sum over `omega`,
/// ties toward the latest `τ`. Returns `(τ, value)`.
pub fn ostep(scored: &[ScoredEvent], omega: &RegionUnion, t_now: f64) -> (f64, f64) {
    let end = scored.partition_point(|x| x.event.t < t_now);
    let inside = membership(&scored[..end], omega);
    let (mut best, mut tau) = (0.0, t_now);
    let mut suffix = 0.0;
    for (x, &inn) in scored[..end].iter().zip(&inside).rev() {
        if inn {
            suffix += x.delta_value;
        }
        if suffix > best {
            best = suffix;
            tau = x.event.t;
        }
    }
    (tau, best)
}

/// Sum of `Δ` over events with `t ≥ tau_hat` located in `omega`.
pub fn statistic(scored: &[ScoredEvent], tau_hat: f64, omega: &RegionUnion) -> f64 {
    let win = &scored[window_start(scored, tau_hat)..];
    win.iter()
        .zip(membership(win, omega))
        .filter(|(_, inn)| *inn)
        .map(|(x, _)| x.delta_value)
        .sum()
}

/// Outcome of `k` I/O alternations.
#[derive(Debug, Clone, PartialEq)]
pub struct Alternation {
    pub tau_hat: f64,
    pub omega_hat: RegionUnion,
    pub w: f64,
    /// Objective after each half-step (I then O, `2k` values).
    pub trace: Vec<f64>,
}

/// Runs `k` alternations from `tau0`; `now` is the right limit after the newest event.
pub fn alternate(scored: &[ScoredEvent], tau0: f64, k: usize, delta: f64, domain: &Domain, rule: IStepRule) -> Alternation {
    let t_now = scored.last().map_or(0.0, |x| x.event.t.next_up());
    let mut tau = tau0.min(t_now);
    let mut omega = RegionUnion::empty();
    let mut trace = Vec::with_capacity(2 * k);
    for _ in 0..k {
        omega = istep(scored, tau, delta, domain, rule);
        trace.push(statistic(scored, tau, &omega));
        tau = ostep(scored, &omega, t_now).0;
        trace.push(statistic(scored, tau, &omega));
    }
    let w = statistic(scored, tau, &omega);
    Alternation { tau_hat: tau, omega_hat: omega, w, trace }
}

/// `W_t` at every event, as paired arrays.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub w: Vec<f64>,
}

impl Trajectory {
    pub fn push(&mut self, t: f64, w: f64) {
        self.t.push(t);
        self.w.push(w);
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.w.iter().copied().fold(0.0, f64::max)
    }

    /// First time with `W ≥ gamma`.
    pub fn first_passage(&self, gamma: f64) -> Option<f64> {
        self.w.iter().position(|&w| w >= gamma).map(|i| self.t[i])
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(writer);
        wr.write_record(["t", "w"])?;
        for (t, w) in self.t.iter().zip(&self.w) {
            wr.write_record([t.to_string(), w.to_string()])?;
        }
        wr.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub detector: String,
    /// Stopping time; `None` when the stream ended first.
    pub nu: Option<f64>,
    pub tau_hat: f64,
    pub omega_hat: RegionUnion,
    /// Final statistic value.
    pub w: f64,
    pub n_events: usize,
    pub trajectory: Trajectory,
}

impl DetectionResult {
    pub fn horizon_exhausted(&self) -> bool {
        self.nu.is_none()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, json: impl AsRef<Path>, trajectory_csv: impl AsRef<Path>) -> Result<()> {
        std::fs::write(json, self.to_json()?)?;
        self.trajectory.write_csv(std::fs::File::create(trajectory_csv)?)
    }
}

/// Streaming detector: feed events one at a time with [`Detector::push`].
#[derive(Debug, Clone)]
pub struct Detector {
    model0: ScoreModel,
    model1: ScoreModel,
    cfg: DetectorConfig,
    domain: Domain,
    needs: HistoryNeeds,
    events: Vec<Event>,
    index: LocalIndex,
    scored: Vec<ScoredEvent>,
    contexts: Option<Vec<ScoreContext>>,
    tau_hat: f64,
    omega_hat: RegionUnion,
    w: f64,
    trajectory: Trajectory,
}

impl Detector {
    pub fn new(model0: ScoreModel, model1: ScoreModel, cfg: DetectorConfig, domain: Domain) -> Result<Self> {
        cfg.validate()?;
        for m in [&model0, &model1] {
            if m.delta() != cfg.delta {
                return Err(Error::InvalidParameter(format!(
                    "score model delta {} differs from detector delta {}",
                    m.delta(),
                    cfg.delta
                )));
            }
        }
        let needs = model0.needs().merge(&model1.needs());
        let index = LocalIndex::new(domain.s_bounds(), cfg.delta);
        Ok(Detector {
            model0,
            model1,
            cfg,
            domain,
            needs,
            events: Vec::new(),
            index,
            scored: Vec::new(),
            contexts: None,
            tau_hat: 0.0,
            omega_hat: RegionUnion::empty(),
            w: 0.0,
            trajectory: Trajectory::default(),
        })
    }

    fn keep_contexts(mut self) -> Self {
        self.contexts = Some(Vec::new());
        self
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.cfg
    }

    pub fn scored(&self) -> &[ScoredEvent] {
        &self.scored
    }

    pub fn tau_hat(&self) -> f64 {
        self.tau_hat
    }

    pub fn omega_hat(&self) -> &RegionUnion {
        &self.omega_hat
    }

    pub fn statistic(&self) -> f64 {
        self.w
    }

    pub fn trajectory(&self) -> &Trajectory {
        &self.trajectory
    }

    pub fn model1(&self) -> &ScoreModel {
        &self.model1
    }

    fn delta_value(&self, ctx: &ScoreContext, e: &Event) -> Result<f64> {
        if ctx.censored && self.cfg.censored == CensoredPolicy::Skip {
            return Ok(0.0);
        }
        let x = TransformedEvent { dt: e.t - ctx.t_n, s: e.s };
        let d = anomaly_at(&self.model0, &self.model1, &self.cfg.weight, ctx, &x, &self.domain)?;
        if !d.is_finite() {
            return Err(Error::NonFiniteScore { t: e.t });
        }
        Ok(d)
    }

    /// Scores `e`, reruns the alternation and returns the new `W_t`.
    pub fn push(&mut self, e: Event) -> Result<f64> {
        if let Some(last) = self.events.last() {
            if !(e.t > last.t) {
                return Err(Error::UnorderedHistory);
            }
        }
        let i = self.events.len();
        self.events.push(e);
        let ctx = ScoreContext::from_index(&self.events, i, &self.index, &self.needs);
        let d = self.delta_value(&ctx, &e).inspect_err(|_| {
            self.events.pop();
        })?;
        self.index.push(i, e.s);
        self.scored.push(ScoredEvent::new(e, d));
        if let Some(c) = self.contexts.as_mut() {
            c.push(ctx);
        }
        let tau0 = if self.cfg.warm_start { self.tau_hat } else { 0.0 };
        let alt = alternate(&self.scored, tau0, self.cfg.k, self.cfg.delta, &self.domain, self.cfg.rule);
        self.tau_hat = alt.tau_hat;
        self.omega_hat = alt.omega_hat;
        self.w = alt.w;
        self.trajectory.push(e.t, self.w);
        Ok(self.w)
    }

    fn result(self, name: &str, nu: Option<f64>) -> DetectionResult {
        DetectionResult {
            detector: name.to_string(),
            nu,
            tau_hat: self.tau_hat,
            omega_hat: self.omega_hat,
            w: self.w,
            n_events: self.events.len(),
            trajectory: self.trajectory,
        }
    }

    /// DSM samples for events in the current window and region (newest event alone when the region is empty).
    fn update_samples(&self) -> Vec<DsmSample> {
        let ScoreModel::Neural(m1) = &self.model1 else {
            return Vec::new();
        };
        let contexts = self.contexts.as_deref().unwrap_or_default();
        let n = self.scored.len();
        let ids: Vec<usize> = if self.omega_hat.is_empty() {
            vec![n - 1]
        } else {
            let start = window_start(&self.scored, self.tau_hat);
            let inside = membership(&self.scored[start..], &self.omega_hat);
            (start..n).filter(|&i| inside[i - start]).collect()
        };
        ids.into_iter()
            .filter(|&i| !contexts[i].censored)
            .map(|i| {
                let ctx = &contexts[i];
                let e = self.events[i];
                DsmSample { sequence: m1.sequence(ctx), x: TransformedEvent { dt: e.t - ctx.t_n, s: e.s } }
            })
            .collect()
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma.is_nan() || gamma < 0.0 {
        return Err(Error::InvalidParameter(format!("gamma must be non-negative, got {gamma}")));
    }
    Ok(())
}

/// Offline detection with fixed pre/post score models; stops at the first event with `W_t ≥ gamma`.
pub fn run_detector(
    stream: &EventStream,
    model0: &ScoreModel,
    model1: &ScoreModel,
    gamma: f64,
    cfg: &DetectorConfig,
    domain: &Domain,
) -> Result<DetectionResult> {
    check_gamma(gamma)?;
    let mut det = Detector::new(model0.clone(), model1.clone(), *cfg, *domain)?;
    for e in stream.events() {
        if det.push(*e)? >= gamma {
            return Ok(det.result("stcusum", Some(e.t)));
        }
    }
    Ok(det.result("stcusum", None))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OnlineConfig {
    /// Gradient step size.
    pub eta: f64,
    pub steps_per_event: usize,
    /// DSM noise level.
    pub sigma: f64,
    /// Use at most this many of the most recent qualifying events per step.
    pub max_batch: Option<usize>,
    pub seed: u64,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        OnlineConfig { eta: 1e-3, steps_per_event: 1, sigma: 0.02, max_batch: None, seed: 0 }
    }
}

/// Online detection: `model1` starts as a copy of `model0` and takes DSM
/// gradient steps on the current window and region after every event.
pub fn run_online_detector(
    stream: &EventStream,
    model0: &ScoreModel,
    gamma: f64,
    cfg: &DetectorConfig,
    online: &OnlineConfig,
    domain: &Domain,
) -> Result<DetectionResult> {
    check_gamma(gamma)?;
    if !matches!(model0, ScoreModel::Neural(_)) {
        return Err(Error::UnsupportedModel("online updates need a neural score model".into()));
    }
    if !(online.eta >= 0.0) || !(online.sigma > 0.0) {
        return Err(Error::InvalidParameter("eta must be non-negative and sigma positive".into()));
    }
    let mut det = Detector::new(model0.clone(), model0.clone(), *cfg, *domain)?.keep_contexts();
    let mut rng = trial_rng(online.seed, 0);
    for e in stream.events() {
        let w = det.push(*e)?;
        if w >= gamma {
            return Ok(det.result("stcusum-online", Some(e.t)));
        }
        let mut samples = det.update_samples();
        if let Some(m) = online.max_batch {
            let skip = samples.len().saturating_sub(m);
            samples.drain(..skip);
        }
        if samples.is_empty() || online.eta == 0.0 {
            continue;
        }
        let refs: Vec<&DsmSample> = samples.iter().collect();
        let ScoreModel::Neural(m1) = &mut det.model1 else { unreachable!("checked above") };
        for _ in 0..online.steps_per_event {
            let eps = draw_noise(&mut rng, refs.len(), online.sigma);
            let loss = dsm_gradient_step(&mut m1.weights, &refs, &eps, online.sigma, online.eta);
            if !loss.is_finite() || !m1.weights.is_finite() {
                return Err(Error::OnlineDivergence { t: e.t, loss });
            }
        }
    }
    Ok(det.result("stcusum-online", None))
}
