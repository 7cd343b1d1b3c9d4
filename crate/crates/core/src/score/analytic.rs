//! Exact score of the localized conditional density of a Hawkes regime.
//!
//! For regime intensity `λ` and ball `B = B_δ(s) ∩ S`,
//! `log p(x) = log λ(x) − ∫_{[t_n,t)×B} λ`, differentiated in
//! `(dt, s₁, s₂)` with the history moving with `x` (so the gradient of
//! `log λ` contributes `α k(x)/λ`, `k = Σ ∇ₓκ + ∇ₓ'κ`).

use serde::{Deserialize, Serialize};

use super::context::{HistoryNeeds, ScoreContext};
use crate::error::{Error, Result};
use crate::events::{Domain, Event, TransformedEvent};
use crate::geometry::Rect;
use crate::simulate::HawkesParams;

/// How kernel integrals over the ball are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "method")]
pub enum Integration {
    /// Closed forms (error function in space, exponentials in time).
    #[default]
    Exact,
    /// Tensor-product midpoint rule.
    Midpoint { space: usize, time: usize },
}

impl Integration {
    pub const MIDPOINT_DEFAULT: Integration = Integration::Midpoint { space: 16, time: 32 };
}

/// Score vector and optional Jacobian diagonal.
pub type ScoreJacobian = ([f64; 3], Option<[f64; 3]>);

/// Relative weight below which an old parent is ignored.
const MEMORY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyticScore {
    pub params: HawkesParams,
    pub delta: f64,
    #[serde(default)]
    pub integration: Integration,
}

impl AnalyticScore {
    pub fn new(params: HawkesParams, delta: f64) -> Self {
        AnalyticScore { params, delta, integration: Integration::Exact }
    }

    pub fn with_integration(self, integration: Integration) -> Self {
        AnalyticScore { integration, ..self }
    }

    pub fn needs(&self) -> HistoryNeeds {
        if self.params.alpha == 0.0 {
            HistoryNeeds { delta: self.delta, radius: 0.0, memory: 0.0, max_events: Some(0) }
        } else {
            HistoryNeeds {
                delta: self.delta,
                radius: self.delta + self.params.spatial().reach(),
                memory: self.params.memory(MEMORY_TOL),
                max_events: None,
            }
        }
    }

    fn ball(&self, s: [f64; 2], domain: &Domain) -> Rect {
        domain.neighborhood(s, self.delta)
    }

    /// History sums at `(t, s)`; spatial entries only when `spatial`.
    fn sums(&self, ctx: &ScoreContext, x: &TransformedEvent, domain: &Domain, spatial: bool) -> Sums {
        let p = &self.params;
        let t = ctx.t_n + x.dt;
        let s = x.s;
        let ball = self.ball(s, domain);
        let mut out = Sums { area: ball.area(), ..Sums::default() };
        if p.alpha == 0.0 {
            return out;
        }
        let g = p.spatial();
        let reach = g.reach();
        let exact = self.integration == Integration::Exact;
        let b = domain.s_bounds();
        // Which ball edges move with s (unclipped).
        let moves = [
            (s[0] - self.delta > b.x0, s[0] + self.delta < b.x1),
            (s[1] - self.delta > b.y0, s[1] + self.delta < b.y1),
        ];
        for h in ctx.history.iter().filter(|h| h.t < t) {
            let d = [s[0] - h.s[0], s[1] - h.s[1]];
            let decay = (-p.beta * (t - h.t)).exp();
            if d[0].abs() <= reach && d[1].abs() <= reach {
                let kv = p.beta * decay * g.density(d);
                out.exc += kv;
                if h.t < ctx.t_n && ball.contains(h.s) {
                    // ∇ₓκ + ∇ₓ'κ for κ(x,x') = β e^{−β(t−t')} g(s−s').
                    let gr = g.grad(d);
                    let dx = [-p.beta * kv, p.beta * decay * gr[0], p.beta * decay * gr[1]];
                    let dxp = [p.beta * kv, -p.beta * decay * gr[0], -p.beta * decay * gr[1]];
                    for i in 0..3 {
                        out.k[i] += dx[i] + dxp[i];
                    }
                }
            }
            if !exact {
                continue;
            }
            let lo = [ball.x0 - h.s[0], ball.y0 - h.s[1]];
            let hi = [ball.x1 - h.s[0], ball.y1 - h.s[1]];
            let side = [g.m1(lo[0], hi[0]), g.m1(lo[1], hi[1])];
            out.mass += p.beta * decay * side[0] * side[1];
            if spatial {
                let from = ctx.t_n.max(h.t);
                let w = (-p.beta * (from - h.t)).exp() - decay;
                for ax in 0..2 {
                    let o = 1 - ax;
                    let (ghi, glo) = (g.g1(hi[ax]), g.g1(lo[ax]));
                    out.flux[ax] += w * (ghi - glo) * side[o];
                    let dhi = if moves[ax].1 { g.dg1(hi[ax]) } else { 0.0 };
                    let dlo = if moves[ax].0 { g.dg1(lo[ax]) } else { 0.0 };
                    out.js[ax] += w * (dhi - dlo) * side[o];
                }
            }
        }
        out
    }

    /// Score and, under exact integration, the Jacobian diagonal from one pass over the history.
    fn finish(&self, ctx: &ScoreContext, x: &TransformedEvent, domain: &Domain, sm: &Sums) -> Result<ScoreJacobian> {
        let p = &self.params;
        let t = ctx.t_n + x.dt;
        if p.alpha == 0.0 {
            if p.mu <= 0.0 {
                return Err(Error::DegenerateIntensity { t });
            }
            let j = (self.integration == Integration::Exact).then_some([0.0; 3]);
            return Ok(([-p.mu * sm.area, 0.0, 0.0], j));
        }
        let lam = p.mu + p.alpha * sm.exc;
        if !(lam > 0.0) {
            return Err(Error::DegenerateIntensity { t });
        }
        let (lam_ball, flux, jac) = match self.integration {
            Integration::Exact => (
                p.mu * sm.area + p.alpha * sm.mass,
                [p.alpha * sm.flux[0], p.alpha * sm.flux[1]],
                Some([p.alpha * p.beta * sm.mass, -p.alpha * sm.js[0], -p.alpha * sm.js[1]]),
            ),
            Integration::Midpoint { space, time } => {
                let (lb, fl) = self.midpoint(ctx, t, &self.ball(x.s, domain), space, time);
                (lb, fl, None)
            }
        };
        let a = p.alpha / lam;
        Ok(([a * sm.k[0] - lam_ball, a * sm.k[1] - flux[0], a * sm.k[2] - flux[1]], jac))
    }

    /// Score vector at `(t_n + dt, s)`.
    pub fn eval(&self, ctx: &ScoreContext, x: &TransformedEvent, domain: &Domain) -> Result<[f64; 3]> {
        Ok(self.eval_with_jacobian(ctx, x, domain, true)?.0)
    }

    /// Score plus closed-form `∂f_k/∂x_k` (`None` under quadrature). With
    /// `spatial = false` only the temporal entries are computed; spatial ones are 0.
    pub fn eval_with_jacobian(
        &self,
        ctx: &ScoreContext,
        x: &TransformedEvent,
        domain: &Domain,
        spatial: bool,
    ) -> Result<ScoreJacobian> {
        let sm = self.sums(ctx, x, domain, spatial);
        self.finish(ctx, x, domain, &sm)
    }

    /// [`AnalyticScore::eval_with_jacobian`] for two regimes differing only in `μ`, sharing one pass.
    pub fn eval_pair(
        &self,
        other: &AnalyticScore,
        ctx: &ScoreContext,
        x: &TransformedEvent,
        domain: &Domain,
        spatial: bool,
    ) -> Result<[ScoreJacobian; 2]> {
        if !self.params.shares_kernel(&other.params) || self.delta != other.delta || self.integration != other.integration {
            return Ok([
                self.eval_with_jacobian(ctx, x, domain, spatial)?,
                other.eval_with_jacobian(ctx, x, domain, spatial)?,
            ]);
        }
        let sm = self.sums(ctx, x, domain, spatial);
        Ok([self.finish(ctx, x, domain, &sm)?, other.finish(ctx, x, domain, &sm)?])
    }

    /// `∫_B λ(t,·)` and `∫_{[t_n,t)×B} ∇_{s'}λ` by the midpoint rule.
    fn midpoint(&self, ctx: &ScoreContext, t: f64, ball: &Rect, m: usize, mt: usize) -> (f64, [f64; 2]) {
        let p = &self.params;
        let g = p.spatial();
        let (hx, hy) = (ball.width() / m as f64, ball.height() / m as f64);
        let cell = hx * hy;
        let nodes: Vec<[f64; 2]> = (0..m)
            .flat_map(|i| (0..m).map(move |j| [ball.x0 + (i as f64 + 0.5) * hx, ball.y0 + (j as f64 + 0.5) * hy]))
            .collect();
        let span = t - ctx.t_n;
        let ht = span / mt as f64;
        let mut lam_ball = p.mu * ball.area().max(0.0);
        let mut flux = [0.0; 2];
        for h in ctx.history.iter().filter(|h| h.t < t) {
            let mut mass = 0.0;
            let mut gm = [0.0; 2];
            for q in &nodes {
                let d = [q[0] - h.s[0], q[1] - h.s[1]];
                mass += g.density(d);
                let gr = g.grad(d);
                gm[0] += gr[0];
                gm[1] += gr[1];
            }
            lam_ball += p.alpha * p.beta * (-p.beta * (t - h.t)).exp() * mass * cell;
            let mut tw = 0.0;
            for r in 0..mt {
                let u = ctx.t_n + (r as f64 + 0.5) * ht;
                if u > h.t {
                    tw += p.beta * (-p.beta * (u - h.t)).exp() * ht;
                }
            }
            flux[0] += p.alpha * tw * gm[0] * cell;
            flux[1] += p.alpha * tw * gm[1] * cell;
        }
        (lam_ball, flux)
    }

    /// Closed-form diagonal of the score Jacobian, `∂f_k/∂x_k`; `None` under quadrature.
    pub fn jacobian_diag(&self, ctx: &ScoreContext, x: &TransformedEvent, domain: &Domain) -> Option<[f64; 3]> {
        if self.integration != Integration::Exact {
            return None;
        }
        self.eval_with_jacobian(ctx, x, domain, true).ok().and_then(|r| r.1)
    }
}

/// μ-independent history sums at one point.
#[derive(Debug, Clone, Copy, Default)]
struct Sums {
    area: f64,
    /// `Σ β e^{−β(t−t_j)} g(s − s_j)`.
    exc: f64,
    k: [f64; 3],
    /// `Σ β e^{−β(t−t_j)} ∫_B g(· − s_j)`.
    mass: f64,
    flux: [f64; 2],
    js: [f64; 2],
}

/// Analytic score of `x` given its prior events (any superset of the relevant ones).
pub fn analytic_score(params: &HawkesParams, x: &Event, history: &[Event], delta: f64, domain: &Domain) -> Result<[f64; 3]> {
    let model = AnalyticScore::new(*params, delta);
    let ctx = context_for(x, history, &model.needs());
    model.eval(&ctx, &TransformedEvent { dt: x.t - ctx.t_n, s: x.s }, domain)
}

fn context_for(x: &Event, history: &[Event], needs: &HistoryNeeds) -> ScoreContext {
    let prior: Vec<Event> = history.iter().filter(|h| h.t < x.t).copied().collect();
    let mut all = prior;
    all.push(*x);
    ScoreContext::from_slice(&all, all.len() - 1, needs)
}

/// `f₁ − f₀ = (μ₀ − μ₁)[α k(x)/(λ₁λ₀) + (|B|, 0, 0)]` for regimes sharing α, β and kernel.
pub fn score_diff_closed_form(
    pre: &HawkesParams,
    post: &HawkesParams,
    x: &Event,
    history: &[Event],
    delta: f64,
    domain: &Domain,
) -> Result<[f64; 3]> {
    if !pre.shares_kernel(post) {
        return Err(Error::KernelMismatch);
    }
    let ball = Rect::square(x.s, delta).intersect(domain.s_bounds());
    let t_n = history
        .iter()
        .filter(|h| h.t < x.t && h.linf(x.s) <= delta)
        .map(|h| h.t)
        .fold(0.0, f64::max);
    let g = pre.spatial();
    let mut exc = 0.0;
    let mut k = [0.0; 3];
    for h in history.iter().filter(|h| h.t < x.t) {
        let d = [x.s[0] - h.s[0], x.s[1] - h.s[1]];
        let decay = (-pre.beta * (x.t - h.t)).exp();
        let kv = pre.beta * decay * g.density(d);
        exc += kv;
        if h.t < t_n && ball.contains(h.s) {
            let gr = g.grad(d);
            let dx = [-pre.beta * kv, pre.beta * decay * gr[0], pre.beta * decay * gr[1]];
            let dxp = [pre.beta * kv, -pre.beta * decay * gr[0], -pre.beta * decay * gr[1]];
            for i in 0..3 {
                k[i] += dx[i] + dxp[i];
            }
        }
    }
    let l0 = pre.mu + pre.alpha * exc;
    let l1 = post.mu + post.alpha * exc;
    if !(l0 > 0.0 && l1 > 0.0) {
        return Err(Error::DegenerateIntensity { t: x.t });
    }
    let c = pre.mu - post.mu;
    let a = pre.alpha / (l0 * l1);
    Ok([c * (a * k[0] + ball.area()), c * a * k[1], c * a * k[2]])
}
