//! Boundary-vanishing weights for the Hyvärinen score.

use serde::{Deserialize, Serialize};

use crate::events::{Domain, TransformedEvent};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// `(dt, min(s₁−L₁, U₁−s₁), min(s₂−L₂, U₂−s₂))`.
    #[default]
    CoordinateBoundaryDistance,
    /// `(dt, 0, 0)`.
    TemporalOnly,
    /// `min(dt, d₁, d₂)` in every entry.
    ScalarLinf,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightConfig {
    #[serde(default)]
    pub mode: WeightMode,
    #[serde(default)]
    pub cap: Option<f64>,
}

impl WeightConfig {
    pub fn new(mode: WeightMode) -> Self {
        WeightConfig { mode, cap: None }
    }

    pub fn temporal_only() -> Self {
        Self::new(WeightMode::TemporalOnly)
    }

    pub fn with_cap(self, cap: f64) -> Self {
        WeightConfig { cap: Some(cap), ..self }
    }

    /// Coordinates whose weight is not identically zero.
    pub fn active(&self) -> [bool; 3] {
        match self.mode {
            WeightMode::TemporalOnly => [true, false, false],
            _ => [true, true, true],
        }
    }
}

/// Raw (uncapped) entries and their diagonal partial derivatives.
fn raw(xt: &TransformedEvent, domain: &Domain, mode: WeightMode) -> ([f64; 3], [f64; 3]) {
    let b = domain.s_bounds();
    let side = |v: f64, lo: f64, hi: f64| {
        let (a, c) = (v - lo, hi - v);
        if a < c {
            (a, 1.0)
        } else if c < a {
            (c, -1.0)
        } else {
            (a, 0.0)
        }
    };
    let (d1, g1) = side(xt.s[0], b.x0, b.x1);
    let (d2, g2) = side(xt.s[1], b.y0, b.y1);
    match mode {
        WeightMode::CoordinateBoundaryDistance => ([xt.dt, d1, d2], [1.0, g1, g2]),
        WeightMode::TemporalOnly => ([xt.dt, 0.0, 0.0], [1.0, 0.0, 0.0]),
        WeightMode::ScalarLinf => {
            let m = xt.dt.min(d1).min(d2);
            let pick = |v: f64, g: f64| if v == m { g } else { 0.0 };
            ([m; 3], [pick(xt.dt, 1.0), pick(d1, g1), pick(d2, g2)])
        }
    }
}

/// Weight vector at a transformed event.
pub fn weight(xt: &TransformedEvent, domain: &Domain, cfg: &WeightConfig) -> [f64; 3] {
    let (w, _) = raw(xt, domain, cfg.mode);
    match cfg.cap {
        Some(c) => w.map(|v| v.min(c)),
        None => w,
    }
}

/// `∂w_k/∂x_k` for each coordinate (one-sided conventions at kinks).
pub fn weight_partials(xt: &TransformedEvent, domain: &Domain, cfg: &WeightConfig) -> [f64; 3] {
    let (w, g) = raw(xt, domain, cfg.mode);
    match cfg.cap {
        Some(c) => [0, 1, 2].map(|k| if w[k] >= c { 0.0 } else { g[k] }),
        None => g,
    }
}
