//! `stpp-watch`: simulate, train, calibrate, detect, evaluate and plot.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;
mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use stpp_watch::calibrate::{calibrate_threshold, CalibrationReport};
use stpp_watch::detect::DetectionResult;
use stpp_watch::evaluate::{batch_report, region_evolution, run_batch, tradeoff_curve, write_tradeoff_csv, BatchReport, RuntimeSummary, Snapshot, TradeoffConfig, TradeoffRow};
use stpp_watch::monitor::{Baseline, DetectorKind, Monitor, OnlineStcusum, Stcusum};
use stpp_watch::plot::{region_svg, tradeoff_svg, Metric};
use stpp_watch::score::{train_score_model, NetWeights, NeuralScore, ScoreModel};
use stpp_watch::{simulate, Event, EventStream, Rect, RegionUnion};

use config::RunConfig;
use manifest::Manifest;

#[derive(Debug, thiserror::Error)]
#[error("config error: {0}")]
pub struct ConfigError(pub String);

#[derive(Parser)]
#[command(name = "stpp-watch", version, about = "Change detection and localization for spatio-temporal event streams")]
struct Cli {
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true, env = "STPP_WATCH_JOBS")]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (JSON).
    #[arg(long, short)]
    config: PathBuf,
    /// Output directory (default: `<output_dir>/<command>`).
    #[arg(long, short)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct DetectorFlags {
    /// Detector kind, e.g. `stcusum`, `cusum`, `min_cusum`.
    #[arg(long)]
    detector: Option<String>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    /// Threshold; `inf` never stops.
    #[arg(long)]
    gamma: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one event stream per seed.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Fit neural score models by denoising score matching.
    Train {
        #[command(flatten)]
        common: Common,
        /// Pre-change reference events (CSV).
        #[arg(long)]
        pre: PathBuf,
        /// Post-change reference events (CSV).
        #[arg(long)]
        post: Option<PathBuf>,
    },
    /// Calibrate the detection threshold for a target ARL.
    Calibrate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        det: DetectorFlags,
    },
    /// Run a detector on one stream.
    Detect {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        det: DetectorFlags,
        /// Event stream (CSV with header t,s1,s2).
        #[arg(long)]
        stream: PathBuf,
        /// Update the post-change model online.
        #[arg(long)]
        online: bool,
    },
    /// Trial batches, tradeoff curves and region snapshots.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Re-render SVG charts from evaluation outputs.
    Plot {
        /// Tradeoff table written by `evaluate`.
        #[arg(long)]
        tradeoff: Option<PathBuf>,
        /// Snapshot file written by `evaluate`.
        #[arg(long)]
        snapshots: Option<PathBuf>,
        #[arg(long, short)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<ConfigError>() || cause.is::<serde_json::Error>() || cause.is::<csv::Error>() {
            return 2;
        }
        if let Some(le) = cause.downcast_ref::<stpp_watch::Error>() {
            return match le {
                _ if le.is_numerical() => 3,
                stpp_watch::Error::Io(_) => 1,
                _ => 2,
            };
        }
    }
    1
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Simulate { common, seeds } => cmd_simulate(&common, seeds),
        Command::Train { common, pre, post } => cmd_train(&common, &pre, post.as_deref()),
        Command::Calibrate { common, det } => cmd_calibrate(&common, &det),
        Command::Detect { common, det, stream, online } => cmd_detect(&common, &det, &stream, online),
        Command::Evaluate { common, trials } => cmd_evaluate(&common, trials),
        Command::Plot { tradeoff, snapshots, out } => cmd_plot(tradeoff.as_deref(), snapshots.as_deref(), &out),
    }
}

/// Loads the config and applies the shared flags; returns it with the output directory.
fn setup(common: &Common, name: &str) -> Result<(RunConfig, PathBuf)> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    let out = common.out.clone().unwrap_or_else(|| cfg.output_dir.join(name));
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    Ok((cfg, out))
}

fn apply_detector_flags(cfg: &mut RunConfig, det: &DetectorFlags) -> Result<()> {
    if let Some(k) = &det.detector {
        cfg.detector.kind = parse_kind(k)?;
    }
    if let Some(d) = det.delta {
        cfg.detector.config.delta = d;
    }
    if let Some(k) = det.k {
        cfg.detector.config.k = k;
    }
    if det.gamma.is_some() {
        cfg.detector.gamma = det.gamma;
    }
    cfg.validate()?;
    Ok(())
}

fn parse_kind(s: &str) -> Result<DetectorKind> {
    let v = serde_json::Value::String(s.replace('-', "_"));
    serde_json::from_value(v).map_err(|_| ConfigError(format!("unknown detector `{s}`")).into())
}

fn kind_name(k: DetectorKind) -> String {
    serde_json::to_value(k).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default()
}

fn load_neural(path: &Path, delta: f64) -> Result<ScoreModel> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let weights = NetWeights::from_json(&text).with_context(|| format!("loading {}", path.display()))?;
    Ok(ScoreModel::Neural(NeuralScore { weights, delta }))
}

fn build_monitor(cfg: &RunConfig, kind: DetectorKind) -> Result<Box<dyn Monitor>> {
    let sc = &cfg.scenario;
    let spec = &cfg.detector;
    let delta = spec.config.delta;
    let analytic = || (ScoreModel::analytic(sc.pre, delta), ScoreModel::analytic(sc.post, delta));
    Ok(match kind {
        DetectorKind::Stcusum => {
            let (model0, model1) = match &spec.checkpoints {
                Some(ck) => {
                    let post = ck.post.as_ref().ok_or_else(|| ConfigError("detector.checkpoints.post is required for stcusum".into()))?;
                    (load_neural(&ck.pre, delta)?, load_neural(post, delta)?)
                }
                None => analytic(),
            };
            Box::new(Stcusum { model0, model1, cfg: spec.config })
        }
        DetectorKind::StcusumOnline => {
            let ck = spec.checkpoints.as_ref().ok_or_else(|| ConfigError("online detection needs detector.checkpoints.pre".into()))?;
            Box::new(OnlineStcusum { model0: load_neural(&ck.pre, delta)?, cfg: spec.config, online: spec.online })
        }
        DetectorKind::Cusum => Box::new(Baseline::cusum_for(sc, spec.dt_bin)),
        DetectorKind::Scusum => Box::new(Baseline::scusum_for(sc, spec.grid, spec.dt_bin, cfg.seed)?),
        DetectorKind::MinCusum => Box::new(Baseline::MinCusum {
            mu0: sc.pre.mu,
            mu1: sc.post.mu,
            n: spec.grid,
            dt_bin: spec.dt_bin,
            aggregation: spec.aggregation,
        }),
        DetectorKind::PpCusum => Box::new(Baseline::pp_cusum_for(sc)),
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

fn cmd_simulate(common: &Common, seeds: Option<Vec<u64>>) -> Result<()> {
    let (cfg, out) = setup(common, "simulate")?;
    let seeds = seeds.unwrap_or_else(|| cfg.seeds.clone());
    let mut man = Manifest::new("simulate", &cfg);
    for seed in seeds {
        let st = simulate(&cfg.scenario, seed)?;
        let name = format!("stream_{seed}.csv");
        st.save(out.join(&name))?;
        man.add(&out, &name, "events", Some(st.len()))?;
    }
    man.write(&out)
}

fn cmd_train(common: &Common, pre: &Path, post: Option<&Path>) -> Result<()> {
    let (cfg, out) = setup(common, "train")?;
    let mut man = Manifest::new("train", &cfg);
    let delta = cfg.detector.config.delta;
    let tcfg = stpp_watch::score::DsmConfig { seed: cfg.training.seed.wrapping_add(cfg.seed), ..cfg.training };
    for (label, path) in std::iter::once(("pre", pre)).chain(post.map(|p| ("post", p))) {
        let data = EventStream::load(path).with_context(|| format!("reading {}", path.display()))?;
        if data.is_empty() {
            return Err(ConfigError(format!("training data {} is empty", path.display())).into());
        }
        let fit = train_score_model(&data, delta, &cfg.scenario.domain, &tcfg)?;
        let model = format!("model_{label}.json");
        fs::write(out.join(&model), fit.model.weights.to_json()? + "\n")?;
        man.add(&out, &model, "checkpoint", None)?;
        let loss = format!("loss_{label}.csv");
        let mut text = String::from("epoch,loss\n");
        for (i, l) in fit.loss_trace.iter().enumerate() {
            text.push_str(&format!("{i},{l}\n"));
        }
        fs::write(out.join(&loss), text)?;
        man.add(&out, &loss, "loss", Some(fit.loss_trace.len()))?;
    }
    man.write(&out)
}

fn calibrate(cfg: &RunConfig, monitor: &dyn Monitor) -> Result<CalibrationReport> {
    let ccfg = stpp_watch::calibrate::CalibrationConfig { seed: cfg.calibration.seed.wrapping_add(cfg.seed), ..cfg.calibration };
    Ok(calibrate_threshold(monitor, &cfg.scenario, &ccfg)?)
}

fn cmd_calibrate(common: &Common, det: &DetectorFlags) -> Result<()> {
    let (mut cfg, out) = setup(common, "calibrate")?;
    apply_detector_flags(&mut cfg, det)?;
    let monitor = build_monitor(&cfg, cfg.detector.kind)?;
    let report = calibrate(&cfg, monitor.as_ref())?;
    let mut man = Manifest::new("calibrate", &cfg);
    write_json(&out.join("calibration.json"), &report)?;
    man.add(&out, "calibration.json", "calibration", None)?;
    man.write(&out)
}

fn cmd_detect(common: &Common, det: &DetectorFlags, stream: &Path, online: bool) -> Result<()> {
    let (mut cfg, out) = setup(common, "detect")?;
    apply_detector_flags(&mut cfg, det)?;
    if online {
        cfg.detector.kind = DetectorKind::StcusumOnline;
    }
    let events = EventStream::load(stream).with_context(|| format!("reading {}", stream.display()))?;
    let monitor = build_monitor(&cfg, cfg.detector.kind)?;
    let mut man = Manifest::new("detect", &cfg);
    let gamma = match cfg.detector.gamma {
        Some(g) => g,
        None => {
            let report = calibrate(&cfg, monitor.as_ref())?;
            write_json(&out.join("calibration.json"), &report)?;
            man.add(&out, "calibration.json", "calibration", None)?;
            report.gamma
        }
    };
    let result = monitor.run(&events, &cfg.scenario.domain, gamma)?;
    result.save(out.join("detection.json"), out.join("trajectory.csv"))?;
    man.add(&out, "detection.json", "detection", None)?;
    man.add(&out, "trajectory.csv", "trajectory", Some(result.trajectory.len()))?;
    man.write(&out)
}

/// Region snapshots of one detector on one stream, as stored by `evaluate`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct SnapshotSet {
    detector: String,
    bounds: Rect,
    truth: RegionUnion,
    events: Vec<Event>,
    snapshots: Vec<Snapshot>,
}

#[derive(Debug, Serialize)]
struct DetectorReport {
    kind: String,
    calibration: CalibrationReport,
    batch: BatchReport,
    trials: Vec<DetectionResult>,
}

fn cmd_evaluate(common: &Common, trials: Option<usize>) -> Result<()> {
    let (mut cfg, out) = setup(common, "evaluate")?;
    if let Some(n) = trials {
        cfg.evaluation.n_trials = n;
        cfg.validate()?;
    }
    let sc = cfg.scenario.clone();
    let mut man = Manifest::new("evaluate", &cfg);
    let mut rows: Vec<TradeoffRow> = Vec::new();
    let mut sets = Vec::new();
    let mut reports = Vec::new();
    let mut runtimes = Vec::new();
    let snap_stream = stpp_watch::calibrate::trial_stream(&sc, cfg.seed, 0)?;
    for &kind in &cfg.evaluation.detectors {
        let monitor = build_monitor(&cfg, kind)?;
        let calibration = calibrate(&cfg, monitor.as_ref())?;
        let gamma = cfg.detector.gamma.unwrap_or(calibration.gamma);
        let batch = run_batch(monitor.as_ref(), &sc, gamma, cfg.evaluation.n_trials, cfg.seed)?;
        let delta = (kind == DetectorKind::Stcusum || kind == DetectorKind::StcusumOnline).then_some(cfg.detector.config.delta);
        let report = batch_report(&batch, delta)?;
        runtimes.push(RuntimeSummary::of(&batch));
        let gammas: Vec<f64> = cfg.evaluation.gamma_multipliers.iter().map(|m| m * gamma).collect();
        let tcfg = TradeoffConfig {
            n_trials: cfg.evaluation.n_trials,
            arl_trials: cfg.evaluation.arl_trials,
            arl_horizon: cfg.arl_horizon(),
            seed: cfg.seed,
        };
        rows.extend(tradeoff_curve(monitor.as_ref(), &sc, &gammas, &tcfg)?);
        let snapshots = region_evolution(monitor.as_ref(), &snap_stream, &sc, &cfg.snapshot_times())?;
        sets.push(SnapshotSet {
            detector: monitor.name(),
            bounds: *sc.domain.s_bounds(),
            truth: sc.omega.clone(),
            events: snap_stream.events().to_vec(),
            snapshots,
        });
        reports.push(DetectorReport {
            kind: kind_name(kind),
            calibration,
            batch: report,
            trials: batch.records.into_iter().map(|r| r.result).collect(),
        });
    }
    let mut tbuf = Vec::new();
    write_tradeoff_csv(&rows, &mut tbuf)?;
    fs::write(out.join("tradeoff.csv"), tbuf)?;
    man.add(&out, "tradeoff.csv", "tradeoff", Some(rows.len()))?;
    write_json(&out.join("report.json"), &reports)?;
    man.add(&out, "report.json", "report", None)?;
    write_json(&out.join("runtime.json"), &runtimes)?;
    man.add(&out, "runtime.json", "wall_clock", None)?;
    write_json(&out.join("snapshots.json"), &sets)?;
    man.add(&out, "snapshots.json", "snapshots", None)?;
    for (name, svg) in render(&rows, &sets) {
        fs::write(out.join(&name), svg)?;
        man.add(&out, &name, "svg", None)?;
    }
    man.write(&out)
}

/// SVG charts as `(file name, contents)`.
fn render(rows: &[TradeoffRow], sets: &[SnapshotSet]) -> Vec<(String, String)> {
    let mut files = Vec::new();
    if !rows.is_empty() {
        files.push(("tradeoff_edd.svg".to_string(), tradeoff_svg(rows, Metric::Edd, "EDD vs ARL")));
        files.push(("tradeoff_jaccard.svg".to_string(), tradeoff_svg(rows, Metric::Jaccard, "Jaccard vs ARL")));
    }
    for (d, set) in sets.iter().enumerate() {
        for (i, snap) in set.snapshots.iter().enumerate() {
            let events: Vec<Event> = set.events.iter().filter(|e| e.t <= snap.t).copied().collect();
            let title = format!("{} at t = {}", set.detector, snap.t);
            files.push((format!("region_{d}_{i}.svg"), region_svg(&set.bounds, &set.truth, &snap.omega_hat, &events, &title)));
        }
    }
    files
}

fn cmd_plot(tradeoff: Option<&Path>, snapshots: Option<&Path>, out: &Path) -> Result<()> {
    if tradeoff.is_none() && snapshots.is_none() {
        return Err(ConfigError("plot needs --tradeoff or --snapshots".into()).into());
    }
    fs::create_dir_all(out)?;
    let rows: Vec<TradeoffRow> = match tradeoff {
        Some(p) => csv_rows(p)?,
        None => Vec::new(),
    };
    let sets: Vec<SnapshotSet> = match snapshots {
        Some(p) => serde_json::from_str(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?,
        None => Vec::new(),
    };
    let mut man = Manifest::bare("plot");
    for (name, svg) in render(&rows, &sets) {
        fs::write(out.join(&name), svg)?;
        man.add(out, &name, "svg", None)?;
    }
    man.write(out)
}

fn csv_rows(path: &Path) -> Result<Vec<TradeoffRow>> {
    let mut rd = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(rd.deserialize().collect::<std::result::Result<Vec<TradeoffRow>, _>>()?)
}
