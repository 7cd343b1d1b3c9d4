//! Spatio-temporal Hawkes processes with a base-rate change, and their exact simulation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::events::{Domain, Event, EventStream};
use crate::geometry::{intersection, Rect, RegionUnion};

/// Default cap on simulated events per stream.
pub const DEFAULT_EVENT_CAP: usize = 1_000_000;

/// Shape of the normalized spatial triggering density.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    /// Isotropic Gaussian with standard deviation `spatial_sigma`.
    #[default]
    Gaussian,
    /// Uniform on the ℓ∞ ball of half-width `spatial_sigma`.
    Uniform,
}

/// Separable spatial density `g(d) = g₁(d₁) g₁(d₂)` integrating to one over ℝ².
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialKernel {
    pub kind: KernelKind,
    pub sigma: f64,
}

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

impl SpatialKernel {
    pub fn new(kind: KernelKind, sigma: f64) -> Self {
        SpatialKernel { kind, sigma }
    }

    /// One-dimensional marginal density.
    pub fn g1(&self, u: f64) -> f64 {
        let s = self.sigma;
        match self.kind {
            KernelKind::Gaussian => INV_SQRT_2PI / s * (-0.5 * (u / s).powi(2)).exp(),
            KernelKind::Uniform => {
                if u.abs() <= s {
                    0.5 / s
                } else {
                    0.0
                }
            }
        }
    }

    /// Derivative of [`SpatialKernel::g1`].
    pub fn dg1(&self, u: f64) -> f64 {
        match self.kind {
            KernelKind::Gaussian => -u / (self.sigma * self.sigma) * self.g1(u),
            KernelKind::Uniform => 0.0,
        }
    }

    /// `∫_a^b g₁(u) du`.
    pub fn m1(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        let s = self.sigma;
        match self.kind {
            KernelKind::Gaussian => {
                let z = std::f64::consts::SQRT_2 * s;
                // Φ(b) − Φ(a), evaluated on the side with the smaller tail for accuracy.
                if a >= 0.0 {
                    0.5 * (erfc(a / z) - erfc(b / z))
                } else if b <= 0.0 {
                    0.5 * (erfc(-b / z) - erfc(-a / z))
                } else {
                    1.0 - 0.5 * (erfc(-a / z) + erfc(b / z))
                }
            }
            KernelKind::Uniform => (b.min(s) - a.max(-s)).max(0.0) / (2.0 * s),
        }
    }

    /// Density at offset `d = s − s'`.
    pub fn density(&self, d: [f64; 2]) -> f64 {
        self.g1(d[0]) * self.g1(d[1])
    }

    /// Gradient of the density with respect to the offset.
    pub fn grad(&self, d: [f64; 2]) -> [f64; 2] {
        [self.dg1(d[0]) * self.g1(d[1]), self.g1(d[0]) * self.dg1(d[1])]
    }

    /// `∫_r g(s − c) ds`.
    pub fn mass(&self, r: &Rect, c: [f64; 2]) -> f64 {
        self.m1(r.x0 - c[0], r.x1 - c[0]) * self.m1(r.y0 - c[1], r.y1 - c[1])
    }

    /// `∫_r ∇_s g(s − c) ds`, via the fundamental theorem on each axis.
    pub fn grad_mass(&self, r: &Rect, c: [f64; 2]) -> [f64; 2] {
        let (ax, bx) = (r.x0 - c[0], r.x1 - c[0]);
        let (ay, by) = (r.y0 - c[1], r.y1 - c[1]);
        [
            (self.g1(bx) - self.g1(ax)) * self.m1(ay, by),
            (self.g1(by) - self.g1(ay)) * self.m1(ax, bx),
        ]
    }

    /// ℓ∞ offset beyond which the density is negligible (exactly zero for the uniform kernel).
    pub fn reach(&self) -> f64 {
        match self.kind {
            KernelKind::Gaussian => 8.0 * self.sigma,
            KernelKind::Uniform => self.sigma,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 2] {
        match self.kind {
            KernelKind::Gaussian => {
                let n = Normal::new(0.0, self.sigma).expect("sigma validated positive");
                [n.sample(rng), n.sample(rng)]
            }
            KernelKind::Uniform => [
                rng.random_range(-self.sigma..=self.sigma),
                rng.random_range(-self.sigma..=self.sigma),
            ],
        }
    }
}

/// Parameters of one Hawkes regime.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HawkesParams {
    /// Base rate per unit time per unit area.
    pub mu: f64,
    /// Branching ratio.
    #[serde(default)]
    pub alpha: f64,
    /// Temporal decay rate.
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// Spatial bandwidth.
    #[serde(default = "default_sigma")]
    pub spatial_sigma: f64,
    #[serde(default)]
    pub kernel: KernelKind,
}

fn default_beta() -> f64 {
    0.1
}

fn default_sigma() -> f64 {
    0.02
}

impl HawkesParams {
    /// Homogeneous Poisson process with rate `mu`.
    pub fn poisson(mu: f64) -> Self {
        HawkesParams { mu, alpha: 0.0, beta: default_beta(), spatial_sigma: default_sigma(), kernel: KernelKind::Gaussian }
    }

    pub fn hawkes(mu: f64, alpha: f64, beta: f64) -> Self {
        HawkesParams { alpha, beta, ..Self::poisson(mu) }
    }

    pub fn with_mu(self, mu: f64) -> Self {
        HawkesParams { mu, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return bad(format!("mu must be non-negative, got {}", self.mu));
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return bad(format!("alpha must lie in [0,1), got {}", self.alpha));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad(format!("beta must be positive, got {}", self.beta));
        }
        if !(self.spatial_sigma > 0.0 && self.spatial_sigma.is_finite()) {
            return bad(format!("spatial_sigma must be positive, got {}", self.spatial_sigma));
        }
        Ok(())
    }

    pub fn spatial(&self) -> SpatialKernel {
        SpatialKernel::new(self.kernel, self.spatial_sigma)
    }

    /// `κ(x, x') = β e^{−β(t−t')} g(s − s')`, zero when `t' ≥ t`.
    pub fn kernel_value(&self, x: &Event, xp: &Event) -> f64 {
        let dt = x.t - xp.t;
        if dt <= 0.0 {
            return 0.0;
        }
        self.beta * (-self.beta * dt).exp() * self.spatial().density([x.s[0] - xp.s[0], x.s[1] - xp.s[1]])
    }

    /// Time lag after which `e^{−β lag}` drops below `tol`.
    pub fn memory(&self, tol: f64) -> f64 {
        -tol.ln() / self.beta
    }

    /// Same α, β and kernel.
    pub fn shares_kernel(&self, o: &HawkesParams) -> bool {
        self.alpha == o.alpha && self.beta == o.beta && self.spatial_sigma == o.spatial_sigma && self.kernel == o.kernel
    }
}

/// Stationary event rate per unit area, `μ / (1 − α)`.
pub fn stationary_intensity(p: &HawkesParams) -> Result<f64> {
    if p.alpha >= 1.0 {
        return Err(Error::InvalidParameter(format!("alpha must be below 1, got {}", p.alpha)));
    }
    Ok(p.mu / (1.0 - p.alpha))
}

/// A base-rate change from `pre.mu` to `post.mu` inside `omega` from time `tau` on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChangeScenario {
    pub pre: HawkesParams,
    pub post: HawkesParams,
    pub tau: f64,
    pub omega: RegionUnion,
    pub domain: Domain,
}

impl ChangeScenario {
    pub fn new(pre: HawkesParams, post: HawkesParams, tau: f64, omega: RegionUnion, domain: Domain) -> Result<Self> {
        let sc = ChangeScenario { pre, post, tau, omega, domain };
        sc.validate()?;
        Ok(sc)
    }

    /// A scenario without change.
    pub fn no_change(pre: HawkesParams, domain: Domain) -> Result<Self> {
        Self::new(pre, pre, domain.t_end(), RegionUnion::empty(), domain)
    }

    pub fn validate(&self) -> Result<()> {
        self.pre.validate()?;
        self.post.validate()?;
        if !self.pre.shares_kernel(&self.post) {
            return Err(Error::KernelMismatch);
        }
        if !(0.0..=self.domain.t_end()).contains(&self.tau) {
            return Err(Error::InvalidParameter(format!(
                "tau must lie in [0, {}], got {}",
                self.domain.t_end(),
                self.tau
            )));
        }
        Ok(())
    }

    /// Same processes over a different horizon; `tau` is kept (so a no-change scenario stays unchanged).
    pub fn with_horizon(&self, t_end: f64) -> Result<Self> {
        let domain = self.domain.with_horizon(t_end)?;
        let tau = if self.tau >= self.domain.t_end() { t_end } else { self.tau.min(t_end) };
        Self::new(self.pre, self.post, tau, self.omega.clone(), domain)
    }

    /// The pre-change process alone over the same domain.
    pub fn pre_change(&self) -> Result<Self> {
        Self::no_change(self.pre, self.domain)
    }

    pub fn has_change(&self) -> bool {
        self.tau < self.domain.t_end() && !self.omega.is_empty() && self.pre.mu != self.post.mu
    }

    /// Base rate `μ(x)`.
    pub fn mu_at(&self, t: f64, s: [f64; 2]) -> f64 {
        if t >= self.tau && self.omega.contains(s) {
            self.post.mu
        } else {
            self.pre.mu
        }
    }

    fn mu_max(&self) -> f64 {
        if self.has_change() {
            self.pre.mu.max(self.post.mu)
        } else {
            self.pre.mu
        }
    }

    /// `|Ω ∩ S|`.
    pub fn omega_area(&self) -> f64 {
        let s = RegionUnion::from_boxes(vec![*self.domain.s_bounds()], self.domain.s_bounds());
        intersection(&self.omega, &s).area()
    }
}

/// `λ(x) = μ(x) + α Σ κ(x, x')` over `history` (all strictly before `x`).
pub fn intensity_at(scenario: &ChangeScenario, x: &Event, history: &[Event]) -> Result<f64> {
    if history.windows(2).any(|w| w[1].t <= w[0].t) || history.last().is_some_and(|h| h.t >= x.t) {
        return Err(Error::UnorderedHistory);
    }
    let p = &scenario.pre;
    let exc: f64 = if p.alpha == 0.0 {
        0.0
    } else {
        history.iter().map(|h| p.kernel_value(x, h)).sum()
    };
    Ok(scenario.mu_at(x.t, x.s) + p.alpha * exc)
}

/// RNG for trial `trial` of an experiment seeded with `seed`.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// Running sum `Σ_j e^{−β(t−t_j)}` over parents with prefix sums for O(log n) parent draws.
struct Excitation {
    beta: f64,
    t_ref: f64,
    times: Vec<f64>,
    locs: Vec<[f64; 2]>,
    cum: Vec<f64>,
}

impl Excitation {
    const REBASE: f64 = 50.0;
    const FORGET: f64 = 45.0;

    fn new(beta: f64) -> Self {
        Excitation { beta, t_ref: 0.0, times: Vec::new(), locs: Vec::new(), cum: Vec::new() }
    }

    fn total(&self, t: f64) -> f64 {
        self.cum.last().map_or(0.0, |c| c * (-self.beta * (t - self.t_ref)).exp())
    }

    fn push(&mut self, t: f64, s: [f64; 2]) {
        if self.beta * (t - self.t_ref) > Self::REBASE {
            self.rebase(t);
        }
        let w = (self.beta * (t - self.t_ref)).exp();
        let c = self.cum.last().copied().unwrap_or(0.0) + w;
        self.times.push(t);
        self.locs.push(s);
        self.cum.push(c);
    }

    fn rebase(&mut self, t: f64) {
        let keep = self.times.partition_point(|&tj| self.beta * (t - tj) > Self::FORGET);
        let times = self.times.split_off(keep);
        let locs = self.locs.split_off(keep);
        self.t_ref = t;
        self.cum.clear();
        let mut c = 0.0;
        for &tj in &times {
            c += (self.beta * (tj - t)).exp();
            self.cum.push(c);
        }
        self.times = times;
        self.locs = locs;
    }

    fn draw_parent<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 2] {
        let total = *self.cum.last().expect("draw_parent on empty excitation");
        let u = rng.random::<f64>() * total;
        let k = self.cum.partition_point(|&c| c <= u).min(self.cum.len() - 1);
        self.locs[k]
    }
}

/// Simulates with the default event cap and the RNG of trial 0.
pub fn simulate(scenario: &ChangeScenario, seed: u64) -> Result<EventStream> {
    simulate_with(scenario, &mut trial_rng(seed, 0), DEFAULT_EVENT_CAP)
}

/// Exact simulation by thinning in time against the spatially integrated
/// intensity. Accepted candidates pick their location from the mixture of
/// background and per-parent kernels; offspring landing outside `S` are lost.
pub fn simulate_with<R: Rng + ?Sized>(scenario: &ChangeScenario, rng: &mut R, cap: usize) -> Result<EventStream> {
    scenario.validate()?;
    let p = scenario.pre;
    let bounds = *scenario.domain.s_bounds();
    let t_end = scenario.domain.t_end();
    let mu_max = scenario.mu_max();
    let bg = mu_max * bounds.area();
    let kernel = p.spatial();
    let mut exc = Excitation::new(p.beta);
    let mut events: Vec<Event> = Vec::new();
    let mut t = 0.0_f64;

    loop {
        let bound = bg + p.alpha * p.beta * exc.total(t);
        if bound <= 0.0 {
            break;
        }
        t += Exp::new(bound).expect("positive rate").sample(rng);
        if t >= t_end {
            break;
        }
        let exc_now = p.alpha * p.beta * exc.total(t);
        let u = rng.random::<f64>() * bound;
        let s = if u < exc_now {
            let parent = exc.draw_parent(rng);
            let d = kernel.sample(rng);
            let s = [parent[0] + d[0], parent[1] + d[1]];
            if !bounds.contains(s) {
                continue;
            }
            s
        } else if u - exc_now < bg {
            let s = [rng.random_range(bounds.x0..bounds.x1), rng.random_range(bounds.y0..bounds.y1)];
            if rng.random::<f64>() * mu_max >= scenario.mu_at(t, s) {
                continue;
            }
            s
        } else {
            continue;
        };
        if let Some(last) = events.last() {
            if t <= last.t {
                t = last.t.next_up();
                if t >= t_end {
                    break;
                }
            }
        }
        if events.len() >= cap {
            return Err(Error::EventBudget { cap });
        }
        events.push(Event { t, s });
        if p.alpha > 0.0 {
            exc.push(t, s);
        }
    }
    EventStream::new(events)
}

/// Compensator increments `∫_{t_{i−1}}^{t_i} ∫_S λ` between consecutive events
/// (the first measured from 0). Standard exponential for a correct model.
pub fn time_rescaled(scenario: &ChangeScenario, stream: &EventStream) -> Vec<f64> {
    let p = scenario.pre;
    let bounds = *scenario.domain.s_bounds();
    let area = bounds.area();
    let omega_area = scenario.omega_area();
    let kernel = p.spatial();
    let background = |a: f64, b: f64| {
        let pre = p.mu * area * (b - a);
        let after = (b - a.max(scenario.tau)).max(0.0);
        pre + (scenario.post.mu - p.mu) * omega_area * after
    };
    // a = Σ_j α·mass_S(s_j)·e^{−β(t−t_j)} carried between events.
    let mut a = 0.0;
    let mut prev = 0.0;
    let mut out = Vec::with_capacity(stream.len());
    for e in stream.events() {
        let decay = (-p.beta * (e.t - prev)).exp();
        out.push(background(prev, e.t) + a * (1.0 - decay));
        a = a * decay + p.alpha * kernel.mass(&bounds, e.s);
        prev = e.t;
    }
    out
}
