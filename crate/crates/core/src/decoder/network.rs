//! Proposal-wise MLP decoder with hand-written reverse-mode gradients.
//!
//! Per proposal: `relu(W_roi r + b)` ‖ `relu(W_t e(t) + b)` ‖ raw signal
//! coordinates → two ReLU layers → heads for one class logit, five
//! signal-space residuals and two height offsets. Proposals never interact.

use ndarray::{concatenate, s, Array1, Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::diffusion::{clamp_signal, Signal};
use crate::error::{Error, Result};
use crate::matching::{LossGradients, PredictionOutput};

use super::features::CHANNELS;

/// Extra RoI inputs when [`DecoderConfig::summary`] is set.
pub const SUMMARY_DIM: usize = 9;

/// How `(cz, dz)` are produced for a predicted box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HeightMode {
    /// Class prior plus a learned offset from the height head.
    #[default]
    Regressed,
    /// Class prior only; the height head is ignored.
    Prior,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecoderConfig {
    pub pool: usize,
    pub roi_context: f64,
    /// Whether [`SUMMARY_DIM`] footprint statistics follow the pooled cells.
    pub summary: bool,
    pub hidden: usize,
    pub time_dim: usize,
    pub time_proj: usize,
    pub signal_scale: f64,
    pub height_mode: HeightMode,
    /// Prior box center height and box height in meters.
    pub cz_prior: f64,
    pub dz_prior: f64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            pool: 7,
            roi_context: 1.0,
            summary: false,
            hidden: 128,
            time_dim: 64,
            time_proj: 32,
            signal_scale: 2.0,
            height_mode: HeightMode::Regressed,
            cz_prior: -1.73 + 0.75,
            dz_prior: 1.5,
        }
    }
}

impl DecoderConfig {
    pub fn roi_dim(&self) -> usize {
        self.pool * self.pool * CHANNELS + if self.summary { SUMMARY_DIM } else { 0 }
    }

    fn concat_dim(&self) -> usize {
        self.hidden + self.time_proj + 5
    }

    pub fn validate(&self) -> Result<()> {
        if self.pool == 0 || self.hidden == 0 || self.time_proj == 0 {
            return Err(Error::InvalidArgument("decoder widths must be positive".into()));
        }
        if self.time_dim == 0 || !self.time_dim.is_multiple_of(2) {
            return Err(Error::InvalidArgument("time_dim must be even and positive".into()));
        }
        if !(self.roi_context > 0.0 && self.signal_scale > 0.0 && self.dz_prior > 0.0) {
            return Err(Error::InvalidArgument("bad decoder scales".into()));
        }
        Ok(())
    }
}

/// Sinusoidal embedding: `sin(t f_k)` then `cos(t f_k)` with a geometric
/// frequency ladder `f_k = 10000^(-k / (D/2))`.
pub fn time_embedding(t: usize, dim: usize) -> Array1<f64> {
    let half = dim / 2;
    let mut e = Array1::zeros(dim);
    for k in 0..half {
        let f = (-(10000f64.ln()) * k as f64 / half as f64).exp();
        let a = t as f64 * f;
        e[k] = a.sin();
        e[half + k] = a.cos();
    }
    e
}

/// All trainable tensors. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams {
    pub w_roi: Array2<f64>,
    pub b_roi: Array1<f64>,
    pub w_time: Array2<f64>,
    pub b_time: Array1<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub w_cls: Array2<f64>,
    pub b_cls: Array1<f64>,
    pub w_reg: Array2<f64>,
    pub b_reg: Array1<f64>,
    pub w_height: Array2<f64>,
    pub b_height: Array1<f64>,
}

/// Tensor names in storage order.
pub const TENSOR_NAMES: [&str; 14] = [
    "w_roi", "b_roi", "w_time", "b_time", "w1", "b1", "w2", "b2", "w_cls", "b_cls", "w_reg",
    "b_reg", "w_height", "b_height",
];

impl DecoderParams {
    pub fn zeros(cfg: &DecoderConfig) -> Self {
        let (h, q) = (cfg.hidden, cfg.time_proj);
        Self {
            w_roi: Array2::zeros((h, cfg.roi_dim())),
            b_roi: Array1::zeros(h),
            w_time: Array2::zeros((q, cfg.time_dim)),
            b_time: Array1::zeros(q),
            w1: Array2::zeros((h, cfg.concat_dim())),
            b1: Array1::zeros(h),
            w2: Array2::zeros((h, h)),
            b2: Array1::zeros(h),
            w_cls: Array2::zeros((1, h)),
            b_cls: Array1::zeros(1),
            w_reg: Array2::zeros((5, h)),
            b_reg: Array1::zeros(5),
            w_height: Array2::zeros((2, h)),
            b_height: Array1::zeros(2),
        }
    }

    /// He-normal hidden layers, zero biases and zero output heads.
    pub fn init<R: Rng + ?Sized>(cfg: &DecoderConfig, rng: &mut R) -> Self {
        let mut p = Self::zeros(cfg);
        for w in [&mut p.w_roi, &mut p.w_time, &mut p.w1, &mut p.w2] {
            let std = (2.0 / w.ncols() as f64).sqrt();
            w.mapv_inplace(|_| std * rng.sample::<f64, _>(StandardNormal));
        }
        p
    }

    pub fn tensors(&self) -> [&[f64]; 14] {
        [
            slice(&self.w_roi),
            self.b_roi.as_slice().unwrap(),
            slice(&self.w_time),
            self.b_time.as_slice().unwrap(),
            slice(&self.w1),
            self.b1.as_slice().unwrap(),
            slice(&self.w2),
            self.b2.as_slice().unwrap(),
            slice(&self.w_cls),
            self.b_cls.as_slice().unwrap(),
            slice(&self.w_reg),
            self.b_reg.as_slice().unwrap(),
            slice(&self.w_height),
            self.b_height.as_slice().unwrap(),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 14] {
        [
            self.w_roi.as_slice_mut().unwrap(),
            self.b_roi.as_slice_mut().unwrap(),
            self.w_time.as_slice_mut().unwrap(),
            self.b_time.as_slice_mut().unwrap(),
            self.w1.as_slice_mut().unwrap(),
            self.b1.as_slice_mut().unwrap(),
            self.w2.as_slice_mut().unwrap(),
            self.b2.as_slice_mut().unwrap(),
            self.w_cls.as_slice_mut().unwrap(),
            self.b_cls.as_slice_mut().unwrap(),
            self.w_reg.as_slice_mut().unwrap(),
            self.b_reg.as_slice_mut().unwrap(),
            self.w_height.as_slice_mut().unwrap(),
            self.b_height.as_slice_mut().unwrap(),
        ]
    }

    /// `(rows, cols)` per tensor; biases report one row.
    pub fn shapes(&self) -> [(usize, usize); 14] {
        let m = |a: &Array2<f64>| a.dim();
        let v = |a: &Array1<f64>| (1, a.len());
        [
            m(&self.w_roi),
            v(&self.b_roi),
            m(&self.w_time),
            v(&self.b_time),
            m(&self.w1),
            v(&self.b1),
            m(&self.w2),
            v(&self.b2),
            m(&self.w_cls),
            v(&self.b_cls),
            m(&self.w_reg),
            v(&self.b_reg),
            m(&self.w_height),
            v(&self.b_height),
        ]
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Shape agreement with `cfg` and finiteness.
    pub fn check(&self, cfg: &DecoderConfig) -> Result<()> {
        if self.shapes() != Self::zeros(cfg).shapes() {
            return Err(Error::InvalidArgument("parameter shapes do not match config".into()));
        }
        if self.tensors().iter().any(|t| t.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("decoder parameters"));
        }
        Ok(())
    }

    /// `self += k * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &Self, k: f64) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += k * y;
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|&v| v == 0.0))
    }
}

fn slice(a: &Array2<f64>) -> &[f64] {
    a.as_slice().expect("standard layout")
}

/// Activations kept from the forward pass for [`Decoder::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    roi: Array2<f64>,
    a0: Array2<f64>,
    temb: Array1<f64>,
    te_pre: Array1<f64>,
    z: Array2<f64>,
    a1: Array2<f64>,
    h1: Array2<f64>,
    a2: Array2<f64>,
    h2: Array2<f64>,
    /// Residual-added coordinates before clamping.
    raw: Vec<Signal>,
}

impl ForwardCache {
    /// Which ReLUs fired and which residual outputs stayed inside the clamp,
    /// in a fixed order. Two inputs with equal patterns lie in the same
    /// smooth piece of the network.
    pub fn activation_pattern(&self, scale: f64) -> Vec<bool> {
        let relu = [&self.a0, &self.a1, &self.a2].into_iter().flat_map(|a| a.iter().map(|&v| v > 0.0));
        let time = self.te_pre.iter().map(|&v| v > 0.0);
        let clamp = self.raw.iter().flatten().map(|&v| v > -scale && v < scale);
        relu.chain(time).chain(clamp).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoder {
    pub cfg: DecoderConfig,
    pub params: DecoderParams,
}

fn relu(a: &Array2<f64>) -> Array2<f64> {
    a.mapv(|v| v.max(0.0))
}

impl Decoder {
    pub fn new(cfg: DecoderConfig, params: DecoderParams) -> Result<Self> {
        cfg.validate()?;
        params.check(&cfg)?;
        Ok(Self { cfg, params })
    }

    /// Forward pass for `N` proposals sharing time level `t`.
    ///
    /// `roi` is `N x roi_dim`, `coords` the proposals' signal coordinates.
    pub fn forward(&self, roi: Array2<f64>, coords: &[Signal], t: usize) -> Result<(Vec<PredictionOutput>, ForwardCache)> {
        let p = &self.params;
        let cfg = &self.cfg;
        let n = coords.len();
        if roi.dim() != (n, cfg.roi_dim()) {
            return Err(Error::InvalidArgument(format!(
                "roi features {:?}, expected ({n}, {})",
                roi.dim(),
                cfg.roi_dim()
            )));
        }
        let a0 = roi.dot(&p.w_roi.t()) + &p.b_roi;
        let h0 = relu(&a0);
        let temb = time_embedding(t, cfg.time_dim);
        let te_pre = p.w_time.dot(&temb) + &p.b_time;
        let te = te_pre.mapv(|v| v.max(0.0));
        let te_rows = te.broadcast((n, cfg.time_proj)).unwrap();
        let coord_rows = Array2::from_shape_fn((n, 5), |(i, d)| coords[i][d]);
        let z = concatenate(Axis(1), &[h0.view(), te_rows, coord_rows.view()]).expect("concat shapes");
        let a1 = z.dot(&p.w1.t()) + &p.b1;
        let h1 = relu(&a1);
        let a2 = h1.dot(&p.w2.t()) + &p.b2;
        let h2 = relu(&a2);
        let logits = h2.dot(&p.w_cls.t()) + &p.b_cls;
        let delta = h2.dot(&p.w_reg.t()) + &p.b_reg;
        let height = h2.dot(&p.w_height.t()) + &p.b_height;

        let mut out = Vec::with_capacity(n);
        let mut raw = Vec::with_capacity(n);
        for i in 0..n {
            let r: Signal = std::array::from_fn(|d| coords[i][d] + delta[[i, d]]);
            let hgt = match cfg.height_mode {
                HeightMode::Regressed => [cfg.cz_prior + height[[i, 0]], cfg.dz_prior + height[[i, 1]]],
                HeightMode::Prior => [cfg.cz_prior, cfg.dz_prior],
            };
            let o = PredictionOutput {
                logit: logits[[i, 0]],
                signal: clamp_signal(&r, cfg.signal_scale),
                height: hgt,
            };
            if !o.logit.is_finite() || o.signal.iter().chain(&o.height).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("decoder activations"));
            }
            raw.push(r);
            out.push(o);
        }
        let cache = ForwardCache {
            roi,
            a0,
            temb,
            te_pre,
            z,
            a1,
            h1,
            a2,
            h2,
            raw,
        };
        Ok((out, cache))
    }

    /// Parameter gradients given loss gradients with respect to the outputs.
    pub fn backward(&self, cache: &ForwardCache, g: &LossGradients) -> DecoderParams {
        let p = &self.params;
        let cfg = &self.cfg;
        let n = cache.raw.len();
        let scale = cfg.signal_scale;

        let d_logit = Array2::from_shape_fn((n, 1), |(i, _)| g.logit[i]);
        let d_delta = Array2::from_shape_fn((n, 5), |(i, d)| {
            let r = cache.raw[i][d];
            if r > -scale && r < scale {
                g.signal[i][d]
            } else {
                0.0
            }
        });
        let d_height = match cfg.height_mode {
            HeightMode::Regressed => Array2::from_shape_fn((n, 2), |(i, k)| g.height[i][k]),
            HeightMode::Prior => Array2::zeros((n, 2)),
        };

        let mut grad = DecoderParams::zeros(cfg);
        grad.w_cls = standard(d_logit.t().dot(&cache.h2));
        grad.b_cls = d_logit.sum_axis(Axis(0));
        grad.w_reg = standard(d_delta.t().dot(&cache.h2));
        grad.b_reg = d_delta.sum_axis(Axis(0));
        grad.w_height = standard(d_height.t().dot(&cache.h2));
        grad.b_height = d_height.sum_axis(Axis(0));

        let mut d_h2 = d_logit.dot(&p.w_cls) + d_delta.dot(&p.w_reg) + d_height.dot(&p.w_height);
        relu_mask(&mut d_h2, &cache.a2);
        grad.w2 = standard(d_h2.t().dot(&cache.h1));
        grad.b2 = d_h2.sum_axis(Axis(0));

        let mut d_h1 = d_h2.dot(&p.w2);
        relu_mask(&mut d_h1, &cache.a1);
        grad.w1 = standard(d_h1.t().dot(&cache.z));
        grad.b1 = d_h1.sum_axis(Axis(0));

        let d_z = d_h1.dot(&p.w1);
        let h = cfg.hidden;
        let q = cfg.time_proj;
        let mut d_h0 = d_z.slice(s![.., 0..h]).to_owned();
        relu_mask(&mut d_h0, &cache.a0);
        grad.w_roi = standard(d_h0.t().dot(&cache.roi));
        grad.b_roi = d_h0.sum_axis(Axis(0));

        let mut d_te = d_z.slice(s![.., h..h + q]).sum_axis(Axis(0));
        for (d, pre) in d_te.iter_mut().zip(cache.te_pre.iter()) {
            if *pre <= 0.0 {
                *d = 0.0;
            }
        }
        let d_te_col = d_te.view().insert_axis(Axis(1));
        let temb_row = cache.temb.view().insert_axis(Axis(0));
        grad.w_time = standard(d_te_col.dot(&temb_row));
        grad.b_time = d_te;
        grad
    }
}

/// Matrix products may come back column-major; storage must be row-major.
fn standard(a: Array2<f64>) -> Array2<f64> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

fn relu_mask(d: &mut Array2<f64>, pre: &Array2<f64>) {
    ndarray::Zip::from(d).and(pre).for_each(|g, &a| {
        if a <= 0.0 {
            *g = 0.0;
        }
    });
}
