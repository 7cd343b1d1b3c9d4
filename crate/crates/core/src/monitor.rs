//! A common interface over the primary detector and the baselines.

use serde::{Deserialize, Serialize};

use crate::baselines::{bin_events, cusum_binned, min_cusum, pp_cusum, scusum_binned, Aggregation, GaussianScore, DEFAULT_DT_BIN};
use crate::detect::{run_detector, run_online_detector, DetectionResult, DetectorConfig, OnlineConfig};
use crate::error::Result;
use crate::events::{Domain, EventStream};
use crate::score::ScoreModel;
use crate::simulate::{simulate, ChangeScenario, HawkesParams};

/// Anything that watches a stream and may raise an alarm.
///
/// The trajectory up to the stop must not depend on `gamma`, so a run with
/// `gamma = ∞` yields every threshold's stopping time by first passage.
pub trait Monitor: Sync {
    fn name(&self) -> String;

    fn run(&self, stream: &EventStream, domain: &Domain, gamma: f64) -> Result<DetectionResult>;
}

/// The primary detector with fixed pre/post score models.
#[derive(Debug, Clone)]
pub struct Stcusum {
    pub model0: ScoreModel,
    pub model1: ScoreModel,
    pub cfg: DetectorConfig,
}

impl Monitor for Stcusum {
    fn name(&self) -> String {
        format!("stcusum(k={},delta={})", self.cfg.k, self.cfg.delta)
    }

    fn run(&self, stream: &EventStream, domain: &Domain, gamma: f64) -> Result<DetectionResult> {
        run_detector(stream, &self.model0, &self.model1, gamma, &self.cfg, domain)
    }
}

/// The primary detector with an online-updated post-change model.
#[derive(Debug, Clone)]
pub struct OnlineStcusum {
    pub model0: ScoreModel,
    pub cfg: DetectorConfig,
    pub online: OnlineConfig,
}

impl Monitor for OnlineStcusum {
    fn name(&self) -> String {
        format!("stcusum-online(k={},delta={})", self.cfg.k, self.cfg.delta)
    }

    fn run(&self, stream: &EventStream, domain: &Domain, gamma: f64) -> Result<DetectionResult> {
        run_online_detector(stream, &self.model0, gamma, &self.cfg, &self.online, domain)
    }
}

/// Baseline detectors with their tuning.
#[derive(Debug, Clone)]
pub enum Baseline {
    Cusum { mu0: f64, mu1: f64, dt_bin: f64 },
    Scusum { score0: GaussianScore, score1: GaussianScore, n: usize, dt_bin: f64 },
    MinCusum { mu0: f64, mu1: f64, n: usize, dt_bin: f64, aggregation: Aggregation },
    PpCusum { pre: HawkesParams, post: HawkesParams },
}

impl Baseline {
    pub fn cusum(mu0: f64, mu1: f64) -> Self {
        Baseline::Cusum { mu0, mu1, dt_bin: DEFAULT_DT_BIN }
    }

    pub fn min_cusum(mu0: f64, mu1: f64, n: usize) -> Self {
        Baseline::MinCusum { mu0, mu1, n, dt_bin: DEFAULT_DT_BIN, aggregation: Aggregation::Sum }
    }

    /// Binned CUSUM tuned to the scenario's aggregate rates over `S`.
    pub fn cusum_for(sc: &ChangeScenario, dt_bin: f64) -> Self {
        Baseline::Cusum { mu0: sc.pre.mu, mu1: effective_post_rate(sc), dt_bin }
    }

    /// PP-CUSUM with the scenario's kernel and aggregate post-change rate.
    pub fn pp_cusum_for(sc: &ChangeScenario) -> Self {
        Baseline::PpCusum { pre: sc.pre, post: sc.pre.with_mu(effective_post_rate(sc)) }
    }

    /// SCUSUM with Gaussian models fitted to one reference stream per regime
    /// (pre-change, and changed from `t = 0`).
    pub fn scusum_for(sc: &ChangeScenario, n: usize, dt_bin: f64, seed: u64) -> Result<Self> {
        let pre = sc.pre_change()?;
        let post = ChangeScenario::new(sc.pre, sc.post, 0.0, sc.omega.clone(), sc.domain)?;
        let fit = |s: &ChangeScenario, k: u64| -> Result<GaussianScore> {
            let st = simulate(s, seed.wrapping_add(k))?;
            GaussianScore::fit(&bin_events(&st, &s.domain, n, dt_bin)?.vectors())
        };
        Ok(Baseline::Scusum { score0: fit(&pre, 0)?, score1: fit(&post, 1)?, n, dt_bin })
    }
}

/// `μ₀ + (μ₁ − μ₀)|Ω ∩ S|/|S|`.
pub fn effective_post_rate(sc: &ChangeScenario) -> f64 {
    sc.pre.mu + (sc.post.mu - sc.pre.mu) * sc.omega_area() / sc.domain.area()
}

impl Monitor for Baseline {
    fn name(&self) -> String {
        match self {
            Baseline::Cusum { .. } => "cusum".into(),
            Baseline::Scusum { n, .. } => format!("scusum({n})"),
            Baseline::MinCusum { n, .. } => format!("min-cusum({n})"),
            Baseline::PpCusum { .. } => "pp-cusum".into(),
        }
    }

    fn run(&self, stream: &EventStream, domain: &Domain, gamma: f64) -> Result<DetectionResult> {
        match self {
            Baseline::Cusum { mu0, mu1, dt_bin } => cusum_binned(&bin_events(stream, domain, 1, *dt_bin)?, *mu0, *mu1, gamma),
            Baseline::Scusum { score0, score1, n, dt_bin } => {
                scusum_binned(&bin_events(stream, domain, *n, *dt_bin)?, score0, score1, gamma)
            }
            Baseline::MinCusum { mu0, mu1, n, dt_bin, aggregation } => {
                min_cusum(&bin_events(stream, domain, *n, *dt_bin)?, *mu0, *mu1, gamma, *aggregation)
            }
            Baseline::PpCusum { pre, post } => pp_cusum(stream, pre, post, gamma, domain),
        }
    }
}

/// Serializable detector choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    #[default]
    Stcusum,
    StcusumOnline,
    Cusum,
    Scusum,
    MinCusum,
    PpCusum,
}
