//! Trial batches and detection metrics: EDD, Jaccard at stopping, the
//! Jaccard lower bound, ARL tradeoff curves and region snapshots.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibrate::{empirical_arl_grid, trial_stream, ArlReport};
use crate::detect::DetectionResult;
use crate::error::{Error, Result};
use crate::events::EventStream;
use crate::geometry::{dilate, erode, jaccard, Rect, RegionUnion};
use crate::monitor::Monitor;
use crate::simulate::ChangeScenario;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: u64,
    pub result: DetectionResult,
    /// Wall-clock detector time in seconds.
    pub runtime_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialBatch {
    pub scenario: ChangeScenario,
    pub detector: String,
    pub gamma: f64,
    pub seed: u64,
    pub records: Vec<TrialRecord>,
}

impl TrialBatch {
    pub fn mean_runtime(&self) -> f64 {
        self.records.iter().map(|r| r.runtime_s).sum::<f64>() / self.records.len().max(1) as f64
    }

    pub fn max_runtime(&self) -> f64 {
        self.records.iter().map(|r| r.runtime_s).fold(0.0, f64::max)
    }
}

/// Runs `monitor` at `gamma` on `n_trials` streams of `scenario` (trial `i` uses `(seed, i)`).
pub fn run_batch(monitor: &dyn Monitor, scenario: &ChangeScenario, gamma: f64, n_trials: usize, seed: u64) -> Result<TrialBatch> {
    let records = (0..n_trials as u64)
        .into_par_iter()
        .map(|trial| {
            let st = trial_stream(scenario, seed, trial)?;
            let t0 = Instant::now();
            let result = monitor.run(&st, &scenario.domain, gamma)?;
            Ok(TrialRecord { trial, result, runtime_s: t0.elapsed().as_secs_f64() })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TrialBatch { scenario: scenario.clone(), detector: monitor.name(), gamma, seed, records })
}

/// Outcome of one trial relative to the change time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Detected,
    FalseAlarm,
    Censored,
}

pub fn outcome(r: &DetectionResult, tau: f64) -> Outcome {
    match r.nu {
        Some(nu) if nu > tau => Outcome::Detected,
        Some(_) => Outcome::FalseAlarm,
        None => Outcome::Censored,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EddReport {
    /// Mean `ν − τ` over detected trials; `None` when nothing was detected.
    pub edd: Option<f64>,
    pub edd_se: Option<f64>,
    /// Mean delay with horizon-exhausted trials counted at `T − τ`.
    pub edd_censored: Option<f64>,
    pub n_trials: usize,
    pub n_detected: usize,
    pub n_false_alarm: usize,
    pub n_censored: usize,
    pub false_alarm_rate: f64,
}

fn mean_se(v: &[f64]) -> (Option<f64>, Option<f64>) {
    if v.is_empty() {
        return (None, None);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let se = (v.len() > 1).then(|| (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt());
    (Some(m), se)
}

/// Detection delay over trials that stopped after the change.
pub fn edd(batch: &TrialBatch) -> Result<EddReport> {
    let tau = batch.scenario.tau;
    let t_end = batch.scenario.domain.t_end();
    if tau >= t_end {
        return Err(Error::InvalidParameter("EDD needs a change before the horizon".into()));
    }
    let mut delays = Vec::new();
    let (mut fa, mut cens) = (0, 0);
    for r in &batch.records {
        match outcome(&r.result, tau) {
            Outcome::Detected => delays.push((r.result.nu.unwrap_or(t_end) - tau).min(t_end - tau)),
            Outcome::FalseAlarm => fa += 1,
            Outcome::Censored => cens += 1,
        }
    }
    let (edd, edd_se) = mean_se(&delays);
    let with_censored: Vec<f64> = delays.iter().copied().chain(std::iter::repeat_n(t_end - tau, cens)).collect();
    let n = batch.records.len();
    Ok(EddReport {
        edd,
        edd_se,
        edd_censored: mean_se(&with_censored).0,
        n_trials: n,
        n_detected: delays.len(),
        n_false_alarm: fa,
        n_censored: cens,
        false_alarm_rate: fa as f64 / n.max(1) as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JaccardReport {
    pub mean: Option<f64>,
    pub se: Option<f64>,
    pub n: usize,
}

/// Mean `J(Ω̂, Ω)` over detected trials.
pub fn jaccard_at_stop(batch: &TrialBatch, true_omega: &RegionUnion) -> JaccardReport {
    let tau = batch.scenario.tau;
    let v: Vec<f64> = batch
        .records
        .iter()
        .filter(|r| outcome(&r.result, tau) == Outcome::Detected)
        .map(|r| jaccard(&r.result.omega_hat, true_omega))
        .collect();
    let (mean, se) = mean_se(&v);
    JaccardReport { mean, se, n: v.len() }
}

/// Mean `J(Ω̂, Ω)` over every trial's final region, stopped or not.
pub fn jaccard_final(batch: &TrialBatch, true_omega: &RegionUnion) -> f64 {
    let n = batch.records.len().max(1) as f64;
    batch.records.iter().map(|r| jaccard(&r.result.omega_hat, true_omega)).sum::<f64>() / n
}

/// `min{|Ω|/|Ω ⊕ B_δ|, |Ω ⊖ B_δ|/|Ω|}` within `bounds`; 1 when `δ = 0` or `Ω` is empty.
pub fn jaccard_lower_bound(omega: &RegionUnion, delta: f64, bounds: &Rect) -> f64 {
    let a = omega.area();
    if delta == 0.0 || a == 0.0 {
        return 1.0;
    }
    let grown = dilate(omega, delta, bounds).area();
    let shrunk = erode(omega, delta, bounds).area();
    (a / grown).min(shrunk / a)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffRow {
    pub detector: String,
    pub gamma: f64,
    pub arl: f64,
    pub arl_censored: usize,
    pub edd: Option<f64>,
    pub edd_se: Option<f64>,
    pub jaccard: Option<f64>,
    pub false_alarm_rate: f64,
    pub censored_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TradeoffConfig {
    pub n_trials: usize,
    pub arl_trials: usize,
    /// Horizon of the pre-change ARL runs.
    pub arl_horizon: f64,
    pub seed: u64,
}

impl Default for TradeoffConfig {
    fn default() -> Self {
        TradeoffConfig { n_trials: 100, arl_trials: 200, arl_horizon: 10.0, seed: 0 }
    }
}

/// EDD and Jaccard against empirical ARL along `gammas`, on common random numbers.
pub fn tradeoff_curve(monitor: &dyn Monitor, scenario: &ChangeScenario, gammas: &[f64], cfg: &TradeoffConfig) -> Result<Vec<TradeoffRow>> {
    let arls = empirical_arl_grid(monitor, scenario, gammas, cfg.arl_trials, cfg.arl_horizon, cfg.seed.wrapping_add(1))?;
    let full = run_batch(monitor, scenario, f64::INFINITY, cfg.n_trials, cfg.seed)?;
    let mut rows = Vec::with_capacity(gammas.len());
    for (&g, arl) in gammas.iter().zip(&arls) {
        // Reruns only trials whose full trajectory crosses `g`; others keep the γ = ∞ result.
        let records = full
            .records
            .par_iter()
            .map(|rec| {
                if rec.result.trajectory.first_passage(g).is_none() {
                    return Ok(rec.clone());
                }
                let st = trial_stream(scenario, cfg.seed, rec.trial)?;
                let t0 = Instant::now();
                let result = monitor.run(&st, &scenario.domain, g)?;
                Ok(TrialRecord { trial: rec.trial, result, runtime_s: t0.elapsed().as_secs_f64() })
            })
            .collect::<Result<Vec<_>>>()?;
        let batch = TrialBatch { gamma: g, records, ..full.clone() };
        let e = edd(&batch)?;
        let j = jaccard_at_stop(&batch, &scenario.omega);
        rows.push(TradeoffRow {
            detector: monitor.name(),
            gamma: g,
            arl: arl.arl,
            arl_censored: arl.censored,
            edd: e.edd,
            edd_se: e.edd_se,
            jaccard: j.mean,
            false_alarm_rate: e.false_alarm_rate,
            censored_rate: e.n_censored as f64 / e.n_trials.max(1) as f64,
        });
    }
    Ok(rows)
}

/// Smallest `γ` on common pre-change streams whose censored empirical ARL reaches `target`.
pub fn match_arl(
    monitor: &dyn Monitor,
    scenario: &ChangeScenario,
    target: f64,
    n_trials: usize,
    horizon: f64,
    seed: u64,
) -> Result<ArlReport> {
    let pre = scenario.pre_change()?.with_horizon(horizon)?;
    let trajectories = (0..n_trials as u64)
        .into_par_iter()
        .map(|i| Ok(monitor.run(&trial_stream(&pre, seed, i)?, &pre.domain, f64::INFINITY)?.trajectory))
        .collect::<Result<Vec<_>>>()?;
    let arl_at = |g: f64| ArlReport::new(g, horizon, trajectories.iter().map(|tr| tr.first_passage(g)).collect());
    // ARL only changes at the per-trial maxima, so search over those.
    let mut cands: Vec<f64> = trajectories.iter().flat_map(|tr| tr.w.iter().copied()).filter(|w| *w > 0.0).collect();
    cands.sort_by(f64::total_cmp);
    cands.dedup();
    let (mut lo, mut hi) = (0usize, cands.len());
    while lo < hi {
        let mid = (lo + hi) / 2;
        if arl_at(cands[mid]).arl >= target {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    match cands.get(lo) {
        Some(&g) => Ok(arl_at(g)),
        None => Err(Error::InfeasibleTarget(format!("no threshold reaches ARL {target} within horizon {horizon}"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub t: f64,
    pub omega_hat: RegionUnion,
    pub w: f64,
}

/// Runs `monitor` with `γ = ∞` on each prefix `[0, t]` and records the region estimate.
pub fn region_evolution(monitor: &dyn Monitor, stream: &EventStream, scenario: &ChangeScenario, times: &[f64]) -> Result<Vec<Snapshot>> {
    times
        .iter()
        .map(|&t| {
            if !(t > 0.0) {
                return Ok(Snapshot { t, omega_hat: RegionUnion::empty(), w: 0.0 });
            }
            let domain = scenario.domain.with_horizon(t)?;
            let r = monitor.run(&stream.truncated(t), &domain, f64::INFINITY)?;
            Ok(Snapshot { t, omega_hat: r.omega_hat, w: r.w })
        })
        .collect()
}

pub fn write_tradeoff_csv<W: Write>(rows: &[TradeoffRow], writer: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(writer);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub detector: String,
    pub gamma: f64,
    pub n_trials: usize,
    pub edd: EddReport,
    pub jaccard: JaccardReport,
    pub jaccard_lower_bound: Option<f64>,
}

/// Wall-clock detector time per trial, in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuntimeSummary {
    pub detector: String,
    pub mean_s: f64,
    pub max_s: f64,
    pub per_trial_s: Vec<f64>,
}

impl RuntimeSummary {
    pub fn of(batch: &TrialBatch) -> Self {
        RuntimeSummary {
            detector: batch.detector.clone(),
            mean_s: batch.mean_runtime(),
            max_s: batch.max_runtime(),
            per_trial_s: batch.records.iter().map(|r| r.runtime_s).collect(),
        }
    }
}

pub fn batch_report(batch: &TrialBatch, delta: Option<f64>) -> Result<BatchReport> {
    let sc = &batch.scenario;
    Ok(BatchReport {
        detector: batch.detector.clone(),
        gamma: batch.gamma,
        n_trials: batch.records.len(),
        edd: edd(batch)?,
        jaccard: jaccard_at_stop(batch, &sc.omega),
        jaccard_lower_bound: delta.map(|d| jaccard_lower_bound(&sc.omega, d, sc.domain.s_bounds())),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::Trajectory;
    use crate::events::Domain;
    use crate::simulate::HawkesParams;

    fn square() -> RegionUnion {
        RegionUnion::from_boxes(vec![Rect::new(0.4, 0.4, 0.6, 0.6)], &Rect::unit())
    }

    fn batch(stops: &[Option<f64>], omega: RegionUnion) -> TrialBatch {
        let d = Domain::unit(1.0).unwrap();
        let sc = ChangeScenario::new(HawkesParams::poisson(100.0), HawkesParams::poisson(1000.0), 0.5, square(), d).unwrap();
        let records = stops
            .iter()
            .enumerate()
            .map(|(i, &nu)| TrialRecord {
                trial: i as u64,
                result: DetectionResult {
                    detector: "x".into(),
                    nu,
                    tau_hat: 0.5,
                    omega_hat: omega.clone(),
                    w: 0.0,
                    n_events: 0,
                    trajectory: Trajectory::default(),
                },
                runtime_s: 0.0,
            })
            .collect();
        TrialBatch { scenario: sc, detector: "x".into(), gamma: 1.0, seed: 0, records }
    }

    #[test]
    fn edd_examples() {
        let b = batch(&[Some(0.6), Some(0.6), Some(0.6)], square());
        assert!((edd(&b).unwrap().edd.unwrap() - 0.1).abs() < 1e-12);
        let b = batch(&[Some(0.2), Some(0.3)], square());
        let e = edd(&b).unwrap();
        assert_eq!((e.edd, e.n_false_alarm), (None, 2));
        let b = batch(&[Some(0.7), None], square());
        let e = edd(&b).unwrap();
        assert!((e.edd.unwrap() - 0.2).abs() < 1e-12 && (e.edd_censored.unwrap() - 0.35).abs() < 1e-12);
    }

    #[test]
    fn jaccard_examples() {
        assert_eq!(jaccard_at_stop(&batch(&[Some(0.7)], square()), &square()).mean, Some(1.0));
        assert_eq!(jaccard_at_stop(&batch(&[Some(0.7)], RegionUnion::empty()), &square()).mean, Some(0.0));
    }

    #[test]
    fn lower_bound_examples() {
        let b = Rect::unit();
        assert_eq!(jaccard_lower_bound(&square(), 0.0, &b), 1.0);
        assert!(jaccard_lower_bound(&square(), 0.1, &b).abs() < 1e-12);
        assert!((jaccard_lower_bound(&square(), 0.05, &b) - 0.25).abs() < 1e-12);
    }
}
