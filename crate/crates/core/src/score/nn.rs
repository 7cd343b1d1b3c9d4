//! Neural score model: a gated recurrent history encoder followed by a
//! one-hidden-layer network on `[h, dt, s₁, s₂]`, with hand-written backprop.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{Domain, Event, TransformedEvent};

/// Checkpoint format version.
pub const FORMAT_VERSION: u32 = 1;

/// Default number of in-ball history events fed to the encoder.
pub const DEFAULT_MAX_HISTORY: usize = 32;

/// Input normalization shared by training and evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputScale {
    /// Divides time lags and `dt`.
    pub time: f64,
    /// Divides history offsets (typically δ).
    pub offset: f64,
    /// Spatial bounds mapped to `[-1, 1]²`.
    pub bounds: [f64; 4],
}

/// Parameter block names and shapes, in storage order.
fn layout(h: usize, w: usize) -> [(&'static str, [usize; 2]); 10] {
    [
        ("wf", [h, 3]),
        ("uf", [h, h]),
        ("bf", [h, 1]),
        ("wc", [h, 3]),
        ("uc", [h, h]),
        ("bc", [h, 1]),
        ("w1", [w, h + 3]),
        ("b1", [w, 1]),
        ("w2", [3, w]),
        ("b2", [3, 1]),
    ]
}

/// Model parameters, stored flat in [`layout`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct NetWeights {
    pub hidden: usize,
    pub width: usize,
    pub scale: InputScale,
    pub max_history: usize,
    pub params: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Layer {
    name: String,
    shape: [usize; 2],
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    format_version: u32,
    hidden: usize,
    width: usize,
    max_history: usize,
    scale: InputScale,
    layers: Vec<Layer>,
}

/// Offsets of each block into the flat parameter vector.
#[derive(Debug, Clone, Copy)]
struct Offsets {
    wf: usize,
    uf: usize,
    bf: usize,
    wc: usize,
    uc: usize,
    bc: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    end: usize,
}

impl Offsets {
    fn new(h: usize, w: usize) -> Self {
        let mut o = [0usize; 11];
        for (i, (_, sh)) in layout(h, w).iter().enumerate() {
            o[i + 1] = o[i] + sh[0] * sh[1];
        }
        Offsets {
            wf: o[0],
            uf: o[1],
            bf: o[2],
            wc: o[3],
            uc: o[4],
            bc: o[5],
            w1: o[6],
            b1: o[7],
            w2: o[8],
            b2: o[9],
            end: o[10],
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `out = M v + b` for row-major `M` (rows × v.len()).
fn affine(p: &[f64], m: usize, b: usize, rows: usize, v: &[f64], out: &mut [f64]) {
    let cols = v.len();
    for r in 0..rows {
        let row = &p[m + r * cols..m + (r + 1) * cols];
        out[r] = p[b + r] + row.iter().zip(v).map(|(a, x)| a * x).sum::<f64>();
    }
}

/// Adds `dy vᵀ` into `g[m..]` and `Mᵀ dy` into `dv`.
fn affine_back(p: &[f64], g: &mut [f64], m: usize, dy: &[f64], v: &[f64], dv: Option<&mut [f64]>) {
    let cols = v.len();
    for (r, &d) in dy.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        let gr = &mut g[m + r * cols..m + (r + 1) * cols];
        for (gi, x) in gr.iter_mut().zip(v) {
            *gi += d * x;
        }
    }
    if let Some(dv) = dv {
        for (r, &d) in dy.iter().enumerate() {
            let row = &p[m + r * cols..m + (r + 1) * cols];
            for (o, a) in dv.iter_mut().zip(row) {
                *o += a * d;
            }
        }
    }
}

/// Saved activations of one encoder step.
#[derive(Debug, Clone)]
struct Step {
    x: [f64; 3],
    h_prev: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    c: Vec<f64>,
}

/// Encoder trace for backprop.
#[derive(Debug, Clone, Default)]
pub struct Encoding {
    steps: Vec<Step>,
    pub h: Vec<f64>,
}

/// Saved activations of the output network.
#[derive(Debug, Clone)]
struct Head {
    v: Vec<f64>,
    a: Vec<f64>,
}

impl NetWeights {
    /// Random initialization (scaled Gaussian weights, zero biases).
    pub fn init<R: Rng + ?Sized>(hidden: usize, width: usize, scale: InputScale, rng: &mut R) -> Self {
        let off = Offsets::new(hidden, width);
        let mut params = vec![0.0; off.end];
        let mut fill = |start: usize, rows: usize, cols: usize, gain: f64| {
            let n = Normal::new(0.0, gain / (cols as f64).sqrt()).expect("finite std");
            for v in &mut params[start..start + rows * cols] {
                *v = n.sample(rng);
            }
        };
        fill(off.wf, hidden, 3, 1.0);
        fill(off.uf, hidden, hidden, 1.0);
        fill(off.wc, hidden, 3, 1.0);
        fill(off.uc, hidden, hidden, 1.0);
        fill(off.w1, width, hidden + 3, 1.0);
        fill(off.w2, 3, width, 0.1);
        NetWeights { hidden, width, scale, max_history: DEFAULT_MAX_HISTORY, params }
    }

    fn off(&self) -> Offsets {
        Offsets::new(self.hidden, self.width)
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|v| v.is_finite())
    }

    /// Normalized encoder inputs for history events relative to `(t_n, center)`.
    pub fn history_features(&self, history: &[Event], t_n: f64, center: [f64; 2]) -> Vec<[f64; 3]> {
        history
            .iter()
            .map(|e| {
                [
                    (t_n - e.t) / self.scale.time,
                    (e.s[0] - center[0]) / self.scale.offset,
                    (e.s[1] - center[1]) / self.scale.offset,
                ]
            })
            .collect()
    }

    /// Normalized head inputs for a transformed event.
    pub fn point_features(&self, x: &TransformedEvent) -> [f64; 3] {
        let [x0, y0, x1, y1] = self.scale.bounds;
        [
            x.dt / self.scale.time,
            2.0 * (x.s[0] - x0) / (x1 - x0) - 1.0,
            2.0 * (x.s[1] - y0) / (y1 - y0) - 1.0,
        ]
    }

    /// Chain-rule factors from normalized inputs back to `(dt, s₁, s₂)`.
    fn input_jacobian(&self) -> [f64; 3] {
        let [x0, y0, x1, y1] = self.scale.bounds;
        [1.0 / self.scale.time, 2.0 / (x1 - x0), 2.0 / (y1 - y0)]
    }

    pub fn encode(&self, seq: &[[f64; 3]]) -> Encoding {
        let o = self.off();
        let hd = self.hidden;
        let p = &self.params;
        let mut h = vec![0.0; hd];
        let mut steps = Vec::with_capacity(seq.len());
        let mut pre = vec![0.0; hd];
        for x in seq {
            // Gate f from (x, h); candidate c from (x, f ⊙ h).
            let mut f = vec![0.0; hd];
            affine(p, o.wf, o.bf, hd, x, &mut pre);
            let mut uh = vec![0.0; hd];
            mat_vec(p, o.uf, hd, &h, &mut uh);
            for i in 0..hd {
                f[i] = sigmoid(pre[i] + uh[i]);
            }
            let g: Vec<f64> = f.iter().zip(&h).map(|(a, b)| a * b).collect();
            affine(p, o.wc, o.bc, hd, x, &mut pre);
            mat_vec(p, o.uc, hd, &g, &mut uh);
            let c: Vec<f64> = (0..hd).map(|i| (pre[i] + uh[i]).tanh()).collect();
            let h_new: Vec<f64> = (0..hd).map(|i| (1.0 - f[i]) * h[i] + f[i] * c[i]).collect();
            steps.push(Step { x: *x, h_prev: std::mem::replace(&mut h, h_new), f, g, c });
        }
        Encoding { steps, h }
    }

    fn head(&self, h: &[f64], z: [f64; 3]) -> ([f64; 3], Head) {
        let o = self.off();
        let mut v = Vec::with_capacity(self.hidden + 3);
        v.extend_from_slice(h);
        v.extend_from_slice(&z);
        let mut a = vec![0.0; self.width];
        affine(&self.params, o.w1, o.b1, self.width, &v, &mut a);
        for x in &mut a {
            *x = x.tanh();
        }
        let mut y = [0.0; 3];
        affine(&self.params, o.w2, o.b2, 3, &a, &mut y);
        (y, Head { v, a })
    }

    /// Score at a transformed event given a precomputed history encoding.
    pub fn forward(&self, enc: &Encoding, x: &TransformedEvent) -> [f64; 3] {
        self.head(&enc.h, self.point_features(x)).0
    }

    /// Accumulates `∂L/∂θ` into `grad` for upstream gradient `dy = ∂L/∂f`.
    pub fn backward(&self, enc: &Encoding, x: &TransformedEvent, dy: [f64; 3], grad: &mut [f64]) {
        let o = self.off();
        let p = &self.params;
        let (hd, w) = (self.hidden, self.width);
        let (_, head) = self.head(&enc.h, self.point_features(x));

        for i in 0..3 {
            grad[o.b2 + i] += dy[i];
        }
        let mut da = vec![0.0; w];
        affine_back(p, grad, o.w2, &dy, &head.a, Some(&mut da));
        let dpre: Vec<f64> = da.iter().zip(&head.a).map(|(d, a)| d * (1.0 - a * a)).collect();
        for i in 0..w {
            grad[o.b1 + i] += dpre[i];
        }
        let mut dv = vec![0.0; hd + 3];
        affine_back(p, grad, o.w1, &dpre, &head.v, Some(&mut dv));

        let mut dh = dv[..hd].to_vec();
        for st in enc.steps.iter().rev() {
            let mut dh_prev: Vec<f64> = (0..hd).map(|i| dh[i] * (1.0 - st.f[i])).collect();
            let mut df: Vec<f64> = (0..hd).map(|i| dh[i] * (st.c[i] - st.h_prev[i])).collect();
            let dpc: Vec<f64> = (0..hd).map(|i| dh[i] * st.f[i] * (1.0 - st.c[i] * st.c[i])).collect();
            for i in 0..hd {
                grad[o.bc + i] += dpc[i];
            }
            affine_back(p, grad, o.wc, &dpc, &st.x, None);
            let mut dg = vec![0.0; hd];
            affine_back(p, grad, o.uc, &dpc, &st.g, Some(&mut dg));
            for i in 0..hd {
                df[i] += dg[i] * st.h_prev[i];
                dh_prev[i] += dg[i] * st.f[i];
            }
            let dpf: Vec<f64> = (0..hd).map(|i| df[i] * st.f[i] * (1.0 - st.f[i])).collect();
            for i in 0..hd {
                grad[o.bf + i] += dpf[i];
            }
            affine_back(p, grad, o.wf, &dpf, &st.x, None);
            affine_back(p, grad, o.uf, &dpf, &st.h_prev, Some(&mut dh_prev));
            dh = dh_prev;
        }
    }

    /// `∂f_k/∂x_k` by differentiating the head analytically in its inputs.
    pub fn jacobian_diag(&self, enc: &Encoding, x: &TransformedEvent) -> [f64; 3] {
        let o = self.off();
        let hd = self.hidden;
        let (_, head) = self.head(&enc.h, self.point_features(x));
        let jf = self.input_jacobian();
        let cols = hd + 3;
        let mut out = [0.0; 3];
        for (k, jk) in jf.iter().enumerate() {
            let mut s = 0.0;
            for r in 0..self.width {
                let a = head.a[r];
                s += self.params[o.w2 + k * self.width + r] * (1.0 - a * a) * self.params[o.w1 + r * cols + hd + k];
            }
            out[k] = s * jk;
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        let off = self.off();
        let starts = [off.wf, off.uf, off.bf, off.wc, off.uc, off.bc, off.w1, off.b1, off.w2, off.b2, off.end];
        let layers = layout(self.hidden, self.width)
            .iter()
            .enumerate()
            .map(|(i, (name, shape))| Layer {
                name: name.to_string(),
                shape: *shape,
                values: self.params[starts[i]..starts[i + 1]].to_vec(),
            })
            .collect();
        let ck = Checkpoint {
            format_version: FORMAT_VERSION,
            hidden: self.hidden,
            width: self.width,
            max_history: self.max_history,
            scale: self.scale,
            layers,
        };
        Ok(serde_json::to_string_pretty(&ck)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(s)?;
        if ck.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format_version {} (expected {FORMAT_VERSION})",
                ck.format_version
            )));
        }
        let want = layout(ck.hidden, ck.width);
        if ck.layers.len() != want.len() {
            return Err(Error::Checkpoint(format!("expected {} layers, found {}", want.len(), ck.layers.len())));
        }
        let mut params = Vec::new();
        for (l, (name, shape)) in ck.layers.iter().zip(want.iter()) {
            if l.name != *name || l.shape != *shape || l.values.len() != shape[0] * shape[1] {
                return Err(Error::Checkpoint(format!(
                    "layer {} has shape {:?}; expected {name} {:?}",
                    l.name, l.shape, shape
                )));
            }
            params.extend_from_slice(&l.values);
        }
        let w = NetWeights { hidden: ck.hidden, width: ck.width, scale: ck.scale, max_history: ck.max_history, params };
        if !w.is_finite() {
            return Err(Error::Checkpoint("non-finite parameter".into()));
        }
        Ok(w)
    }
}

fn mat_vec(p: &[f64], m: usize, rows: usize, v: &[f64], out: &mut [f64]) {
    let cols = v.len();
    for r in 0..rows {
        out[r] = p[m + r * cols..m + (r + 1) * cols].iter().zip(v).map(|(a, x)| a * x).sum();
    }
}

/// Default input scale for a domain, localization radius and typical inter-arrival time.
pub fn default_scale(domain: &Domain, delta: f64, time: f64) -> InputScale {
    let b = domain.s_bounds();
    InputScale { time: time.max(1e-12), offset: delta, bounds: [b.x0, b.y0, b.x1, b.y1] }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::trial_rng;

    fn net() -> NetWeights {
        let d = Domain::unit(1.0).unwrap();
        let mut w = NetWeights::init(4, 6, default_scale(&d, 0.1, 0.5), &mut trial_rng(3, 0));
        // Non-trivial output layer so every block receives gradient.
        let o = w.off();
        for i in 0..3 * 6 {
            w.params[o.w2 + i] *= 10.0;
        }
        w
    }

    fn loss(w: &NetWeights, seq: &[[f64; 3]], x: &TransformedEvent, target: [f64; 3]) -> f64 {
        let y = w.forward(&w.encode(seq), x);
        (0..3).map(|i| (y[i] - target[i]).powi(2)).sum()
    }

    #[test]
    fn backprop_matches_finite_differences() {
        let w = net();
        let seq = [[0.3, 0.2, -0.5], [0.1, -0.7, 0.4], [0.05, 0.9, 0.1]];
        let x = TransformedEvent { dt: 0.4, s: [0.3, 0.7] };
        let target = [-1.0, 0.5, 0.2];
        let enc = w.encode(&seq);
        let y = w.forward(&enc, &x);
        let dy = [0, 1, 2].map(|i| 2.0 * (y[i] - target[i]));
        let mut g = vec![0.0; w.n_params()];
        w.backward(&enc, &x, dy, &mut g);
        let h = 1e-6;
        for i in 0..w.n_params() {
            let mut a = w.clone();
            a.params[i] += h;
            let mut b = w.clone();
            b.params[i] -= h;
            let fd = (loss(&a, &seq, &x, target) - loss(&b, &seq, &x, target)) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-6 * fd.abs().max(1.0), "param {i}: fd {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn input_jacobian_matches_differences() {
        let w = net();
        let enc = w.encode(&[[0.2, 0.1, 0.3]]);
        let x = TransformedEvent { dt: 0.4, s: [0.3, 0.7] };
        let j = w.jacobian_diag(&enc, &x);
        let h = 1e-6;
        for k in 0..3 {
            let (mut a, mut b) = (x, x);
            if k == 0 {
                a.dt += h;
                b.dt -= h;
            } else {
                a.s[k - 1] += h;
                b.s[k - 1] -= h;
            }
            let fd = (w.forward(&enc, &a)[k] - w.forward(&enc, &b)[k]) / (2.0 * h);
            assert!((fd - j[k]).abs() < 1e-6 * fd.abs().max(1.0));
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let w = net();
        let js = w.to_json().unwrap();
        assert!(js.contains("\"format_version\": 1"));
        assert_eq!(NetWeights::from_json(&js).unwrap(), w);
        let bad = js.replace("\"format_version\": 1", "\"format_version\": 9");
        assert!(NetWeights::from_json(&bad).is_err());
    }
}
