use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stpp_watch::baselines::{Aggregation, DEFAULT_DT_BIN};
use stpp_watch::calibrate::CalibrationConfig;
use stpp_watch::detect::{DetectorConfig, OnlineConfig};
use stpp_watch::monitor::DetectorKind;
use stpp_watch::score::DsmConfig;
use stpp_watch::ChangeScenario;

use crate::ConfigError;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub scenario: ChangeScenario,
    #[serde(default)]
    pub detector: DetectorSpec,
    #[serde(default)]
    pub training: DsmConfig,
    #[serde(default)]
    pub calibration: CalibrationConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    /// Streams written by `simulate`.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoints {
    pub pre: PathBuf,
    #[serde(default)]
    pub post: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorSpec {
    pub kind: DetectorKind,
    pub config: DetectorConfig,
    pub online: OnlineConfig,
    /// Fixed threshold; calibrated when absent.
    pub gamma: Option<f64>,
    /// Grid side for the binned baselines.
    pub grid: usize,
    pub dt_bin: f64,
    pub aggregation: Aggregation,
    /// Neural checkpoints; analytic scores from the scenario when absent.
    pub checkpoints: Option<Checkpoints>,
}

impl Default for DetectorSpec {
    fn default() -> Self {
        DetectorSpec {
            kind: DetectorKind::Stcusum,
            config: DetectorConfig::default(),
            online: OnlineConfig::default(),
            gamma: None,
            grid: 5,
            dt_bin: DEFAULT_DT_BIN,
            aggregation: Aggregation::Sum,
            checkpoints: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationConfig {
    pub n_trials: usize,
    pub detectors: Vec<DetectorKind>,
    /// Tradeoff thresholds as multiples of each detector's calibrated γ.
    pub gamma_multipliers: Vec<f64>,
    pub arl_trials: usize,
    /// Pre-change horizon for ARL runs; ten scenario horizons when absent.
    pub arl_horizon: Option<f64>,
    /// Region snapshot times; quarters of the horizon when empty.
    pub snapshot_times: Vec<f64>,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            n_trials: 100,
            detectors: vec![DetectorKind::Stcusum, DetectorKind::Cusum, DetectorKind::MinCusum],
            gamma_multipliers: vec![0.25, 0.5, 1.0, 2.0, 4.0],
            arl_trials: 200,
            arl_horizon: None,
            snapshot_times: Vec::new(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        let cfg: RunConfig = serde_json::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.version != CONFIG_VERSION {
            return Err(ConfigError(format!("unsupported config version {} (expected {CONFIG_VERSION})", self.version)));
        }
        let lib = |e: stpp_watch::Error| ConfigError(e.to_string());
        self.scenario.validate().map_err(lib)?;
        self.detector.config.validate().map_err(lib)?;
        self.training.validate().map_err(lib)?;
        self.calibration.validate().map_err(lib)?;
        if self.detector.grid == 0 || !(self.detector.dt_bin > 0.0) {
            return Err(ConfigError("detector.grid and detector.dt_bin must be positive".into()));
        }
        if let Some(g) = self.detector.gamma {
            if g.is_nan() || g < 0.0 {
                return Err(ConfigError(format!("detector.gamma must be non-negative, got {g}")));
            }
        }
        if self.evaluation.n_trials == 0 || self.evaluation.arl_trials == 0 {
            return Err(ConfigError("evaluation trial counts must be positive".into()));
        }
        if self.evaluation.gamma_multipliers.iter().any(|m| !(*m > 0.0)) {
            return Err(ConfigError("evaluation.gamma_multipliers must be positive".into()));
        }
        Ok(())
    }

    pub fn arl_horizon(&self) -> f64 {
        self.evaluation.arl_horizon.unwrap_or(10.0 * self.scenario.domain.t_end())
    }

    pub fn snapshot_times(&self) -> Vec<f64> {
        if self.evaluation.snapshot_times.is_empty() {
            let t = self.scenario.domain.t_end();
            vec![0.25 * t, 0.5 * t, 0.75 * t, t]
        } else {
            self.evaluation.snapshot_times.clone()
        }
    }
}
