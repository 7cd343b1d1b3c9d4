//! Reference detectors: binned CUSUM, Gaussian-score SCUSUM, multi-cell
//! MinCUSUM and the point-process CUSUM.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::detect::{DetectionResult, Trajectory};
use crate::error::{Error, Result};
use crate::events::{Domain, EventStream, LocalIndex};
use crate::geometry::{Rect, RegionUnion};
use crate::simulate::HawkesParams;

/// Default time-bin width.
pub const DEFAULT_DT_BIN: f64 = 0.01;

/// Diagonal loading added to fitted covariances.
pub const COV_LOADING: f64 = 1e-6;

/// Counts on an `n × n` spatial grid per time bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedSeries {
    pub n: usize,
    pub dt_bin: f64,
    pub bounds: Rect,
    pub t_end: f64,
    /// `counts[bin][iy * n + ix]`.
    pub counts: Vec<Vec<u32>>,
}

impl BinnedSeries {
    pub fn n_bins(&self) -> usize {
        self.counts.len()
    }

    pub fn n_cells(&self) -> usize {
        self.n * self.n
    }

    pub fn cell_index(&self, ix: usize, iy: usize) -> usize {
        iy * self.n + ix
    }

    pub fn cell_rect(&self, c: usize) -> Rect {
        let (ix, iy) = (c % self.n, c / self.n);
        let (w, h) = (self.bounds.width() / self.n as f64, self.bounds.height() / self.n as f64);
        let x0 = self.bounds.x0 + ix as f64 * w;
        let y0 = self.bounds.y0 + iy as f64 * h;
        let x1 = if ix + 1 == self.n { self.bounds.x1 } else { x0 + w };
        let y1 = if iy + 1 == self.n { self.bounds.y1 } else { y0 + h };
        Rect::new(x0, y0, x1, y1)
    }

    pub fn cell_area(&self) -> f64 {
        self.bounds.area() / self.n_cells() as f64
    }

    /// Width of bin `b` (the last bin may be shorter).
    pub fn bin_width(&self, b: usize) -> f64 {
        (self.t_end - b as f64 * self.dt_bin).min(self.dt_bin)
    }

    pub fn bin_end(&self, b: usize) -> f64 {
        ((b + 1) as f64 * self.dt_bin).min(self.t_end)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().map(|&c| c as u64).sum()
    }

    /// Per-bin count vectors as reals.
    pub fn vectors(&self) -> Vec<Vec<f64>> {
        self.counts.iter().map(|c| c.iter().map(|&v| v as f64).collect()).collect()
    }
}

/// Bins `stream` into half-open cells; points on the upper domain edge go to the last cell.
pub fn bin_events(stream: &EventStream, domain: &Domain, n: usize, dt_bin: f64) -> Result<BinnedSeries> {
    if n == 0 || !(dt_bin > 0.0) || !dt_bin.is_finite() {
        return Err(Error::InvalidParameter(format!("need n ≥ 1 and dt_bin > 0, got n={n}, dt_bin={dt_bin}")));
    }
    let b = *domain.s_bounds();
    let t_end = domain.t_end();
    let n_bins = ((t_end / dt_bin).ceil() as usize).max(1);
    let mut counts = vec![vec![0u32; n * n]; n_bins];
    let idx = |v: f64, lo: f64, width: f64| -> usize { (((v - lo) / width * n as f64).floor().max(0.0) as usize).min(n - 1) };
    for e in stream.events() {
        let tb = ((e.t / dt_bin).floor().max(0.0) as usize).min(n_bins - 1);
        let ix = idx(e.s[0], b.x0, b.width());
        let iy = idx(e.s[1], b.y0, b.height());
        counts[tb][iy * n + ix] += 1;
    }
    Ok(BinnedSeries { n, dt_bin, bounds: b, t_end, counts })
}

fn check_rates(mu0: f64, mu1: f64) -> Result<()> {
    if !(mu0 > 0.0 && mu1 > 0.0) || mu0 == mu1 {
        return Err(Error::InvalidParameter(format!("need distinct positive rates, got mu0={mu0}, mu1={mu1}")));
    }
    Ok(())
}

fn whole(bounds: &Rect) -> RegionUnion {
    RegionUnion::from_boxes(vec![*bounds], bounds)
}

fn result(name: &str, nu: Option<f64>, tau_hat: f64, omega_hat: RegionUnion, trajectory: Trajectory, n_events: usize) -> DetectionResult {
    DetectionResult {
        detector: name.to_string(),
        nu,
        tau_hat,
        omega_hat,
        w: trajectory.w.last().copied().unwrap_or(0.0),
        n_events,
        trajectory,
    }
}

/// Recursive scalar CUSUM over per-bin increments; returns (stop bin, reset bin, trajectory).
fn run_recursion(series: &BinnedSeries, gamma: f64, mut incr: impl FnMut(usize) -> f64) -> (Option<usize>, usize, Trajectory) {
    let mut w = 0.0;
    let mut start = 0;
    let mut traj = Trajectory::default();
    for b in 0..series.n_bins() {
        if w == 0.0 {
            start = b;
        }
        w = (w + incr(b)).max(0.0);
        traj.push(series.bin_end(b), w);
        if w >= gamma {
            return (Some(b), start, traj);
        }
    }
    (None, start, traj)
}

fn reset_time(series: &BinnedSeries, start: usize) -> f64 {
    start as f64 * series.dt_bin
}

/// CUSUM on total counts per bin with the Poisson log-likelihood ratio.
pub fn cusum_binned(series: &BinnedSeries, mu0: f64, mu1: f64, gamma: f64) -> Result<DetectionResult> {
    check_rates(mu0, mu1)?;
    let lr = (mu1 / mu0).ln();
    let area = series.bounds.area();
    let totals: Vec<f64> = series.counts.iter().map(|c| c.iter().map(|&v| v as f64).sum()).collect();
    let (stop, start, traj) = run_recursion(series, gamma, |b| totals[b] * lr - (mu1 - mu0) * series.bin_width(b) * area);
    let n_events = series.total() as usize;
    Ok(result("cusum", stop.map(|b| series.bin_end(b)), reset_time(series, start), whole(&series.bounds), traj, n_events))
}

/// Multivariate Gaussian model of per-bin count vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianScore {
    pub mean: DVector<f64>,
    pub precision: DMatrix<f64>,
    trace: f64,
}

impl GaussianScore {
    /// From a mean and covariance; the covariance is loaded by [`COV_LOADING`] before inversion.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::InvalidParameter("covariance shape does not match mean".into()));
        }
        let loaded = cov + DMatrix::identity(d, d) * COV_LOADING;
        let chol = loaded
            .cholesky()
            .ok_or_else(|| Error::InvalidParameter("covariance is not positive definite".into()))?;
        let precision = chol.inverse();
        let trace = precision.trace();
        Ok(GaussianScore { mean, precision, trace })
    }

    /// Sample mean and covariance of `samples`.
    pub fn fit(samples: &[Vec<f64>]) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::InvalidParameter("need at least two reference vectors".into()));
        }
        let d = samples[0].len();
        if samples.iter().any(|v| v.len() != d) {
            return Err(Error::InvalidParameter("reference vectors differ in length".into()));
        }
        let n = samples.len() as f64;
        let cols: Vec<DVector<f64>> = samples.iter().map(|v| DVector::from_column_slice(v)).collect();
        let mean = cols.iter().fold(DVector::zeros(d), |a, v| a + v) / n;
        let mut cov = DMatrix::zeros(d, d);
        for v in &cols {
            let c = v - &mean;
            cov += &c * c.transpose();
        }
        cov /= n - 1.0;
        Self::new(mean, cov)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `∇ log p(z) = −Σ⁻¹(z − m)`.
    pub fn score(&self, z: &[f64]) -> DVector<f64> {
        -(&self.precision * (DVector::from_column_slice(z) - &self.mean))
    }

    /// `‖Σ⁻¹(z − m)‖² − 2 tr(Σ⁻¹)`.
    pub fn hyvarinen(&self, z: &[f64]) -> f64 {
        self.score(z).norm_squared() - 2.0 * self.trace
    }
}

/// CUSUM on Hyvärinen-score differences of per-bin count vectors.
pub fn scusum_binned(series: &BinnedSeries, score0: &GaussianScore, score1: &GaussianScore, gamma: f64) -> Result<DetectionResult> {
    let d = series.n_cells();
    if score0.dim() != d || score1.dim() != d {
        return Err(Error::InvalidParameter(format!("score models have dimension {} and {}, series has {d} cells", score0.dim(), score1.dim())));
    }
    let z = series.vectors();
    let (stop, start, traj) = run_recursion(series, gamma, |b| score0.hyvarinen(&z[b]) - score1.hyvarinen(&z[b]));
    let n_events = series.total() as usize;
    Ok(result("scusum", stop.map(|b| series.bin_end(b)), reset_time(series, start), whole(&series.bounds), traj, n_events))
}

/// How per-cell statistics are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Sum,
    Max,
}

/// Per-cell Poisson CUSUMs combined by `aggregation`; region = cells with positive statistic.
pub fn min_cusum(series: &BinnedSeries, mu0: f64, mu1: f64, gamma: f64, aggregation: Aggregation) -> Result<DetectionResult> {
    check_rates(mu0, mu1)?;
    let lr = (mu1 / mu0).ln();
    let ca = series.cell_area();
    let mut w = vec![0.0; series.n_cells()];
    let mut start = vec![0usize; series.n_cells()];
    let mut traj = Trajectory::default();
    let mut stop = None;
    for b in 0..series.n_bins() {
        let comp = (mu1 - mu0) * series.bin_width(b) * ca;
        for (c, wk) in w.iter_mut().enumerate() {
            if *wk == 0.0 {
                start[c] = b;
            }
            *wk = (*wk + series.counts[b][c] as f64 * lr - comp).max(0.0);
        }
        let g = match aggregation {
            Aggregation::Sum => w.iter().sum(),
            Aggregation::Max => w.iter().copied().fold(0.0, f64::max),
        };
        traj.push(series.bin_end(b), g);
        if g >= gamma {
            stop = Some(b);
            break;
        }
    }
    let active: Vec<usize> = (0..w.len()).filter(|&c| w[c] > 0.0).collect();
    let omega = RegionUnion::from_boxes(active.iter().map(|&c| series.cell_rect(c)).collect(), &series.bounds);
    let tau_hat = active.iter().map(|&c| reset_time(series, start[c])).fold(f64::INFINITY, f64::min);
    let tau_hat = if tau_hat.is_finite() { tau_hat } else { traj.t.last().copied().unwrap_or(0.0) };
    let n_events = series.total() as usize;
    Ok(result(
        &format!("min-cusum({})", series.n),
        stop.map(|b| series.bin_end(b)),
        tau_hat,
        omega,
        traj,
        n_events,
    ))
}

/// Continuous-time CUSUM on the full domain: `W_t = sup_τ [ℓ₁ − ℓ₀]` over event times,
/// for regimes differing only in `μ`.
pub fn pp_cusum(stream: &EventStream, pre: &HawkesParams, post: &HawkesParams, gamma: f64, domain: &Domain) -> Result<DetectionResult> {
    pre.validate()?;
    post.validate()?;
    if !pre.shares_kernel(post) {
        return Err(Error::KernelMismatch);
    }
    let ev = stream.events();
    let bounds = *domain.s_bounds();
    // Excitation is shared, so the compensator difference is (μ₁ − μ₀)|S| per unit time.
    let c = (post.mu - pre.mu) * bounds.area();
    let reach = pre.spatial().reach();
    let memory = pre.memory(1e-12);
    let mut idx = LocalIndex::new(&bounds, reach.max(1e-3));
    let mut v = 0.0;
    let mut t_prev = 0.0;
    let mut start = 0usize;
    let mut traj = Trajectory::default();
    for (i, e) in ev.iter().enumerate() {
        let exc = if pre.alpha > 0.0 {
            idx.within(ev, i, e.s, reach, e.t - memory)
                .into_iter()
                .map(|j| pre.kernel_value(e, &ev[j]))
                .sum::<f64>()
        } else {
            0.0
        };
        idx.push(i, e.s);
        let l0 = pre.mu + pre.alpha * exc;
        let l1 = post.mu + post.alpha * exc;
        if !(l0 > 0.0 && l1 > 0.0) {
            return Err(Error::DegenerateIntensity { t: e.t });
        }
        let carried = v - c * (e.t - t_prev);
        if carried <= 0.0 {
            start = i;
        }
        v = carried.max(0.0) + (l1 / l0).ln();
        t_prev = e.t;
        let w = v.max(0.0);
        traj.push(e.t, w);
        if w >= gamma {
            return Ok(result("pp-cusum", Some(e.t), ev[start].t, whole(&bounds), traj, i + 1));
        }
    }
    let tau_hat = if v > 0.0 { ev[start].t } else { t_prev.next_up() };
    Ok(result("pp-cusum", None, tau_hat, whole(&bounds), traj, ev.len()))
}
