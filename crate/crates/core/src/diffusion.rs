//! Noise schedule, box normalization, forward corruption and the DDIM
//! reverse update.
//!
//! Time levels are integers `1..=T`; level `0` denotes the clean sample with
//! `alpha_bar(0) = 1`. Box coordinates live in three spaces:
//! metric ([`BevBox`]), normalized (`[0, 1]^5`) and signal
//! (`(2u - 1) * scale`), the space in which noise is added.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::geometry::{wrap_half_turn, BevBox};

/// Signal-space box coordinates `(cx, cy, dx, dy, theta)`.
pub type Signal = [f64; 5];

/// Extents decoded from the signal space are floored at this value.
pub const MIN_EXTENT: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    /// `alpha_bars[t]` for `t = 0..=T`, with `alpha_bars[0] = 1`.
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear `beta` ramp from `start` to `end` across `steps` levels.
    pub fn linear(steps: usize, start: f64, end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidArgument("schedule needs T >= 1".into()));
        }
        let betas = (0..steps)
            .map(|i| {
                if steps == 1 {
                    start
                } else {
                    start + (end - start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        Self::from_betas(betas)
    }

    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::InvalidArgument("schedule needs T >= 1".into()));
        }
        if betas.iter().any(|&b| !(b > 0.0 && b < 1.0)) {
            return Err(Error::InvalidArgument("betas must lie in (0, 1)".into()));
        }
        if betas.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidArgument("betas must be nondecreasing".into()));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(alphas.len() + 1);
        alpha_bars.push(1.0);
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        Ok(Self {
            betas,
            alphas,
            alpha_bars,
        })
    }

    /// Number of diffusion levels `T`.
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    /// `beta_t` for `t` in `1..=T`.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    /// Cumulative product `alpha_bar_t` for `t` in `0..=T`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    fn check_level(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::InvalidArgument(format!(
                "time level {t} outside 1..={}",
                self.steps()
            )));
        }
        Ok(())
    }
}

/// DDPM-convention schedule: `beta` from `1e-4` to `0.02` over `T` levels.
pub fn linear_beta_schedule(steps: usize) -> Result<NoiseSchedule> {
    NoiseSchedule::linear(steps, 1e-4, 0.02)
}

/// Maps metric BEV boxes to `[0, 1]^5` and on to the signal space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxNormalizer {
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    /// Ceiling for `dx` (first) and `dy` (second).
    pub size_max: (f64, f64),
    pub signal_scale: f64,
}

impl Default for BoxNormalizer {
    fn default() -> Self {
        Self {
            x_range: (0.0, 70.4),
            y_range: (-40.0, 40.0),
            size_max: (8.0, 5.0),
            signal_scale: 2.0,
        }
    }
}

/// Result of normalizing a box; `clamped` is set when any coordinate was
/// outside the configured ranges.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalized {
    pub coords: [f64; 5],
    pub clamped: bool,
}

impl BoxNormalizer {
    pub fn validate(&self) -> Result<()> {
        let ok = self.x_range.1 > self.x_range.0
            && self.y_range.1 > self.y_range.0
            && self.size_max.0 > 0.0
            && self.size_max.1 > 0.0
            && self.signal_scale > 0.0
            && [
                self.x_range.0,
                self.x_range.1,
                self.y_range.0,
                self.y_range.1,
                self.size_max.0,
                self.size_max.1,
                self.signal_scale,
            ]
            .iter()
            .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("bad normalizer {self:?}")))
        }
    }

    /// Per-dimension affine map into `[0, 1]`.
    pub fn normalize(&self, b: &BevBox) -> Result<Normalized> {
        if !b.to_array().iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("box to normalize"));
        }
        let theta = if (-PI / 2.0..=PI / 2.0).contains(&b.theta) {
            b.theta
        } else {
            wrap_half_turn(b.theta)
        };
        let raw = [
            (b.cx - self.x_range.0) / (self.x_range.1 - self.x_range.0),
            (b.cy - self.y_range.0) / (self.y_range.1 - self.y_range.0),
            b.dx / self.size_max.0,
            b.dy / self.size_max.1,
            (theta + PI / 2.0) / PI,
        ];
        let coords = raw.map(|u| u.clamp(0.0, 1.0));
        Ok(Normalized {
            clamped: coords != raw,
            coords,
        })
    }

    pub fn denormalize(&self, u: &[f64; 5]) -> BevBox {
        BevBox::new(
            self.x_range.0 + u[0] * (self.x_range.1 - self.x_range.0),
            self.y_range.0 + u[1] * (self.y_range.1 - self.y_range.0),
            (u[2] * self.size_max.0).max(MIN_EXTENT),
            (u[3] * self.size_max.1).max(MIN_EXTENT),
            u[4] * PI - PI / 2.0,
        )
    }

    pub fn to_signal(&self, u: &[f64; 5]) -> Signal {
        u.map(|v| (2.0 * v - 1.0) * self.signal_scale)
    }

    pub fn from_signal(&self, z: &Signal) -> [f64; 5] {
        z.map(|v| (v / self.signal_scale + 1.0) * 0.5)
    }

    /// Normalize then scale into the signal space.
    pub fn normalize_and_scale(&self, b: &BevBox) -> Result<(Signal, bool)> {
        let n = self.normalize(b)?;
        Ok((self.to_signal(&n.coords), n.clamped))
    }

    /// Metric box for a signal-space point (no clamping applied here).
    pub fn signal_to_box(&self, z: &Signal) -> BevBox {
        self.denormalize(&self.from_signal(z))
    }

    /// `d(metric)/d(signal)` per coordinate; the maps are diagonal and affine.
    pub fn signal_jacobian(&self) -> [f64; 5] {
        let k = 0.5 / self.signal_scale;
        [
            k * (self.x_range.1 - self.x_range.0),
            k * (self.y_range.1 - self.y_range.0),
            k * self.size_max.0,
            k * self.size_max.1,
            k * PI,
        ]
    }
}

/// Forward corruption `sqrt(ab_t) x0 + sqrt(1 - ab_t) eps`.
pub fn q_sample(x0: &Signal, t: usize, eps: &Signal, sched: &NoiseSchedule) -> Signal {
    let ab = sched.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    std::array::from_fn(|i| a * x0[i] + b * eps[i])
}

/// Noise implied by a predicted clean sample at level `t`.
pub fn eps_from_x0(x_t: &Signal, x0_hat: &Signal, t: usize, sched: &NoiseSchedule) -> Result<Signal> {
    sched.check_level(t)?;
    let ab = sched.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(std::array::from_fn(|i| (x_t[i] - a * x0_hat[i]) / b))
}

/// Which closed form to use for the DDIM noise scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SigmaForm {
    /// `sqrt((1 - ab_prev) / (1 - ab_t)) * sqrt(1 - ab_t / ab_prev)`.
    #[default]
    Standard,
    /// The variance ratio inverted: `sqrt((1 - ab_t / ab_prev) * (1 - ab_t) / (1 - ab_prev))`.
    /// Kept only for comparison runs.
    Inverted,
}

/// DDIM noise scale for the jump `t -> t_prev`, multiplied by `eta`.
pub fn ddim_sigma(sched: &NoiseSchedule, t: usize, t_prev: usize, form: SigmaForm, eta: f64) -> f64 {
    let ab_t = sched.alpha_bar(t);
    let ab_p = sched.alpha_bar(t_prev);
    let ratio = (1.0 - ab_t / ab_p).max(0.0);
    let s = match form {
        SigmaForm::Standard => ((1.0 - ab_p) / (1.0 - ab_t)).sqrt() * ratio.sqrt(),
        SigmaForm::Inverted => {
            if t_prev == 0 {
                0.0
            } else {
                (ratio * (1.0 - ab_t) / (1.0 - ab_p)).sqrt()
            }
        }
    };
    eta * s
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DdimOutput {
    pub x: Signal,
    /// Set when `1 - ab_prev - sigma^2` was negative and clamped to zero.
    pub variance_clamped: bool,
}

/// One DDIM reverse update from level `t` to `t - s`.
pub fn ddim_step(
    x_t: &Signal,
    x0_hat: &Signal,
    t: usize,
    s: usize,
    noise: &Signal,
    sigma: f64,
    sched: &NoiseSchedule,
) -> Result<DdimOutput> {
    sched.check_level(t)?;
    if s == 0 || s > t {
        return Err(Error::InvalidArgument(format!("step {s} not in 1..={t}")));
    }
    let t_prev = t - s;
    let eps = eps_from_x0(x_t, x0_hat, t, sched)?;
    let ab_p = sched.alpha_bar(t_prev);
    let dir2 = 1.0 - ab_p - sigma * sigma;
    let variance_clamped = dir2 < 0.0;
    let (a, d) = (ab_p.sqrt(), dir2.max(0.0).sqrt());
    let x = std::array::from_fn(|i| a * x0_hat[i] + d * eps[i] + sigma * noise[i]);
    Ok(DdimOutput {
        x,
        variance_clamped,
    })
}

/// Per-dimension clamp to `[-scale, scale]`.
pub fn clamp_signal(x: &Signal, scale: f64) -> Signal {
    x.map(|v| v.clamp(-scale, scale))
}
