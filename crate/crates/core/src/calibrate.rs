//! Threshold calibration for a target average run length, and ARL estimation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::EventStream;
use crate::monitor::Monitor;
use crate::simulate::{simulate_with, trial_rng, ChangeScenario, DEFAULT_EVENT_CAP};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationConfig {
    pub n_trials: usize,
    /// Simulation horizon; twice the scenario horizon when absent.
    pub horizon: Option<f64>,
    pub target_arl: f64,
    pub seed: u64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig { n_trials: 200, horizon: None, target_arl: 5.0, seed: 0 }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trials < 20 {
            return Err(Error::InvalidParameter(format!("n_trials must be at least 20, got {}", self.n_trials)));
        }
        if !(self.target_arl > 0.0) {
            return Err(Error::InvalidParameter(format!("target_arl must be positive, got {}", self.target_arl)));
        }
        if let Some(h) = self.horizon {
            if !(h > 0.0) || !h.is_finite() {
                return Err(Error::InvalidParameter(format!("horizon must be positive and finite, got {h}")));
            }
        }
        Ok(())
    }
}

/// Equal-width histogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn new(values: &[f64], bins: usize) -> Self {
        let bins = bins.max(1);
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !lo.is_finite() || !hi.is_finite() {
            return Histogram { edges: Vec::new(), counts: Vec::new() };
        }
        let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
        let edges = (0..=bins).map(|i| lo + i as f64 * width).collect();
        let mut counts = vec![0; bins];
        for v in values {
            counts[(((v - lo) / width) as usize).min(bins - 1)] += 1;
        }
        Histogram { edges, counts }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub detector: String,
    pub config: CalibrationConfig,
    pub horizon: f64,
    /// Mean event count per stream.
    pub n_bar: f64,
    /// Target ARL in expected events.
    pub lambda_target: f64,
    pub level: f64,
    pub gamma: f64,
    /// Per-stream maximum statistic, in trial order.
    pub w_max: Vec<f64>,
    pub event_counts: Vec<usize>,
    pub histogram: Histogram,
}

/// Linear-interpolation quantile of unsorted `values` at level `p ∈ [0,1]`.
pub fn quantile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

/// Stream `trial` of a calibration or validation run.
pub fn trial_stream(scenario: &ChangeScenario, seed: u64, trial: u64) -> Result<EventStream> {
    simulate_with(scenario, &mut trial_rng(seed, trial), DEFAULT_EVENT_CAP)
}

/// Full `γ = ∞` trajectories on `n` pre-change streams: `(W_max, event count)` per trial.
fn pre_change_maxima(monitor: &dyn Monitor, pre: &ChangeScenario, n: usize, seed: u64) -> Result<Vec<(f64, usize)>> {
    (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let st = trial_stream(pre, seed, i)?;
            let r = monitor.run(&st, &pre.domain, f64::INFINITY)?;
            Ok((r.trajectory.max(), st.len()))
        })
        .collect()
}

/// Sets `γ` so the pre-change run length matches `cfg.target_arl` under the exponential approximation.
pub fn calibrate_threshold(monitor: &dyn Monitor, scenario: &ChangeScenario, cfg: &CalibrationConfig) -> Result<CalibrationReport> {
    cfg.validate()?;
    let horizon = cfg.horizon.unwrap_or(2.0 * scenario.domain.t_end());
    let pre = scenario.pre_change()?.with_horizon(horizon)?;
    let runs = pre_change_maxima(monitor, &pre, cfg.n_trials, cfg.seed)?;
    let w_max: Vec<f64> = runs.iter().map(|r| r.0).collect();
    let event_counts: Vec<usize> = runs.iter().map(|r| r.1).collect();
    let n_bar = event_counts.iter().sum::<usize>() as f64 / runs.len() as f64;
    if n_bar == 0.0 {
        return Err(Error::InfeasibleTarget("pre-change streams are empty".into()));
    }
    let lambda_target = cfg.target_arl * n_bar / horizon;
    let level = (-n_bar / lambda_target).exp();
    if !(level > 0.0 && level <= 1.0) {
        return Err(Error::InfeasibleTarget(format!("quantile level {level} outside (0, 1]")));
    }
    let gamma = quantile(&w_max, level);
    Ok(CalibrationReport {
        detector: monitor.name(),
        config: *cfg,
        horizon,
        n_bar,
        lambda_target,
        level,
        gamma,
        histogram: Histogram::new(&w_max, 20),
        w_max,
        event_counts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArlReport {
    pub gamma: f64,
    pub horizon: f64,
    /// Mean stopping time with censored trials counted at the horizon.
    pub arl: f64,
    pub censored: usize,
    /// Per-trial stopping times (`None` when censored).
    pub stops: Vec<Option<f64>>,
}

impl ArlReport {
    pub(crate) fn new(gamma: f64, horizon: f64, stops: Vec<Option<f64>>) -> Self {
        let arl = stops.iter().map(|s| s.unwrap_or(horizon)).sum::<f64>() / stops.len().max(1) as f64;
        let censored = stops.iter().filter(|s| s.is_none()).count();
        ArlReport { gamma, horizon, arl, censored, stops }
    }
}

/// Mean stopping time on `n_trials` pre-change streams over `horizon`.
pub fn empirical_arl(monitor: &dyn Monitor, scenario: &ChangeScenario, gamma: f64, n_trials: usize, horizon: f64, seed: u64) -> Result<ArlReport> {
    let pre = scenario.pre_change()?.with_horizon(horizon)?;
    let stops = (0..n_trials as u64)
        .into_par_iter()
        .map(|i| {
            let st = trial_stream(&pre, seed, i)?;
            Ok(monitor.run(&st, &pre.domain, gamma)?.nu)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ArlReport::new(gamma, horizon, stops))
}

/// [`empirical_arl`] for several thresholds on common streams (one `γ = ∞` run per stream).
pub fn empirical_arl_grid(
    monitor: &dyn Monitor,
    scenario: &ChangeScenario,
    gammas: &[f64],
    n_trials: usize,
    horizon: f64,
    seed: u64,
) -> Result<Vec<ArlReport>> {
    let pre = scenario.pre_change()?.with_horizon(horizon)?;
    let trajectories = (0..n_trials as u64)
        .into_par_iter()
        .map(|i| {
            let st = trial_stream(&pre, seed, i)?;
            Ok(monitor.run(&st, &pre.domain, f64::INFINITY)?.trajectory)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(gammas
        .iter()
        .map(|&g| ArlReport::new(g, horizon, trajectories.iter().map(|tr| tr.first_passage(g)).collect()))
        .collect())
}
