//! Proposal generation: ground-truth padding and corruption for training,
//! point-count resampling with correlated sizes, Gaussian proposals for
//! inference, and the sine-shaped time-step ceiling used during training.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::diffusion::{clamp_signal, q_sample, BoxNormalizer, NoiseSchedule, Signal};
use crate::error::{Error, Result};
use crate::geometry::{count_points_in_box, BevBox};

/// Where a proposal came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    GtRepeat,
    ResampledRandom,
    InferenceRandom,
}

/// `N` proposals at a shared time level, held in both metric and signal form.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalSet {
    pub boxes: Vec<BevBox>,
    pub signal: Vec<Signal>,
    pub t: usize,
    pub provenance: Vec<Provenance>,
    /// Set for slots that never reached the point threshold during resampling.
    pub best_effort: Vec<bool>,
}

impl ProposalSet {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    /// Build the metric view from signal coordinates.
    pub fn from_signal(signal: Vec<Signal>, t: usize, provenance: Vec<Provenance>, norm: &BoxNormalizer) -> Self {
        let boxes = signal.iter().map(|z| norm.signal_to_box(z)).collect();
        let n = signal.len();
        Self {
            boxes,
            signal,
            t,
            provenance,
            best_effort: vec![false; n],
        }
    }
}

/// Correlated size prior: `W = rho L + sqrt(1 - rho^2) X`, mapped through the
/// normal CDF onto `(0, w) x (0, l)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SizePrior {
    pub rho: f64,
    /// Ceiling for the box length `dx`.
    pub w: f64,
    /// Ceiling for the box width `dy`.
    pub l: f64,
}

impl Default for SizePrior {
    fn default() -> Self {
        Self {
            rho: 0.8,
            w: 8.0,
            l: 5.0,
        }
    }
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Raw correlated Gaussian pair `(W, L)`.
pub fn sample_correlated_raw<R: Rng + ?Sized>(rng: &mut R, rho: f64) -> (f64, f64) {
    let l: f64 = rng.sample(StandardNormal);
    let x: f64 = rng.sample(StandardNormal);
    (rho * l + (1.0 - rho * rho).sqrt() * x, l)
}

/// `(dx, dy)` strictly inside `(0, w) x (0, l)`.
pub fn sample_correlated_size<R: Rng + ?Sized>(rng: &mut R, prior: &SizePrior) -> (f64, f64) {
    let (w_raw, l_raw) = sample_correlated_raw(rng, prior.rho);
    size_from_raw(w_raw, l_raw, prior)
}

/// Probit map of a raw pair onto the open size rectangle.
pub fn size_from_raw(w_raw: f64, l_raw: f64, prior: &SizePrior) -> (f64, f64) {
    // keep away from the endpoints when the CDF saturates
    const EDGE: f64 = 1e-12;
    let pw = normal_cdf(w_raw).clamp(EDGE, 1.0 - EDGE);
    let pl = normal_cdf(l_raw).clamp(EDGE, 1.0 - EDGE);
    (pw * prior.w, pl * prior.l)
}

/// Uniform center, correlated size, uniform yaw in `[-pi/2, pi/2)`.
pub fn random_box<R: Rng + ?Sized>(rng: &mut R, norm: &BoxNormalizer, prior: &SizePrior) -> BevBox {
    let cx = rng.random_range(norm.x_range.0..norm.x_range.1);
    let cy = rng.random_range(norm.y_range.0..norm.y_range.1);
    let (dx, dy) = sample_correlated_size(rng, prior);
    let theta = rng.random_range(-PI / 2.0..PI / 2.0);
    BevBox::new(cx, cy, dx, dy, theta)
}

/// Repeat (or subsample) ground truth to exactly `n` boxes. An empty scene
/// falls back to inference-style random proposals.
pub fn pad_gt_to_n<R: Rng + ?Sized>(
    gt: &[BevBox],
    n: usize,
    norm: &BoxNormalizer,
    prior: &SizePrior,
    rng: &mut R,
) -> (Vec<BevBox>, Vec<Provenance>) {
    if gt.is_empty() {
        let set = sample_inference_proposals(n, 1, norm, prior, rng);
        return (set.boxes, set.provenance);
    }
    let boxes: Vec<BevBox> = if gt.len() <= n {
        gt.iter().cycle().take(n).copied().collect()
    } else {
        let mut idx = rand::seq::index::sample(rng, gt.len(), n).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| gt[i]).collect()
    };
    (boxes, vec![Provenance::GtRepeat; n])
}

/// Draw i.i.d. standard Gaussian noise per box and diffuse to level `t`.
pub fn corrupt<R: Rng + ?Sized>(
    boxes: &[BevBox],
    provenance: &[Provenance],
    t: usize,
    sched: &NoiseSchedule,
    norm: &BoxNormalizer,
    rng: &mut R,
) -> Result<ProposalSet> {
    let noise: Vec<Signal> = boxes
        .iter()
        .map(|_| std::array::from_fn(|_| rng.sample(StandardNormal)))
        .collect();
    corrupt_with_noise(boxes, provenance, t, &noise, sched, norm)
}

/// [`corrupt`] with caller-provided noise.
pub fn corrupt_with_noise(
    boxes: &[BevBox],
    provenance: &[Provenance],
    t: usize,
    noise: &[Signal],
    sched: &NoiseSchedule,
    norm: &BoxNormalizer,
) -> Result<ProposalSet> {
    if t == 0 || t > sched.steps() {
        return Err(Error::InvalidArgument(format!("time level {t} outside 1..={}", sched.steps())));
    }
    let scale = norm.signal_scale;
    let signal = boxes
        .iter()
        .zip(noise)
        .map(|(b, eps)| {
            let (x0, _) = norm.normalize_and_scale(b)?;
            Ok(clamp_signal(&q_sample(&x0, t, eps, sched), scale))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ProposalSet::from_signal(signal, t, provenance.to_vec(), norm))
}

/// Resampling outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResampleReport {
    /// Rounds that replaced at least one box.
    pub rounds: usize,
    pub best_effort: usize,
}

/// Replace proposals holding fewer than `eta` points with random boxes until
/// all pass or `max_rounds` is exhausted. Failing slots then keep the
/// best-seen candidate and are flagged as best effort.
#[allow(clippy::too_many_arguments)]
pub fn resample_empty<R: Rng + ?Sized, P: AsRef<[f64]>>(
    set: &mut ProposalSet,
    points: &[P],
    eta: usize,
    max_rounds: usize,
    norm: &BoxNormalizer,
    prior: &SizePrior,
    rng: &mut R,
) -> Result<ResampleReport> {
    if eta == 0 {
        return Ok(ResampleReport {
            rounds: 0,
            best_effort: 0,
        });
    }
    let mut pending: Vec<usize> = (0..set.len())
        .filter(|&i| count_points_in_box(points, &set.boxes[i]) < eta)
        .collect();
    // best random candidate seen so far per failing slot
    let mut best: Vec<Option<(usize, BevBox)>> = vec![None; set.len()];
    let mut rounds = 0;
    while !pending.is_empty() && rounds < max_rounds {
        rounds += 1;
        let mut still = Vec::new();
        for &i in &pending {
            let cand = random_box(rng, norm, prior);
            let c = count_points_in_box(points, &cand);
            set.provenance[i] = Provenance::ResampledRandom;
            if c >= eta {
                place(set, i, &cand, norm)?;
            } else {
                if best[i].is_none_or(|(bc, _)| c > bc) {
                    best[i] = Some((c, cand));
                }
                still.push(i);
            }
        }
        pending = still;
    }
    for &i in &pending {
        if let Some((_, b)) = best[i] {
            place(set, i, &b, norm)?;
        }
        set.best_effort[i] = true;
    }
    Ok(ResampleReport {
        rounds,
        best_effort: pending.len(),
    })
}

fn place(set: &mut ProposalSet, i: usize, b: &BevBox, norm: &BoxNormalizer) -> Result<()> {
    let (z, _) = norm.normalize_and_scale(b)?;
    set.signal[i] = z;
    set.boxes[i] = *b;
    Ok(())
}

/// Gaussian signal proposals at level `t` with correlated sizes.
pub fn sample_inference_proposals<R: Rng + ?Sized>(
    n: usize,
    t: usize,
    norm: &BoxNormalizer,
    prior: &SizePrior,
    rng: &mut R,
) -> ProposalSet {
    let signal: Vec<Signal> = (0..n)
        .map(|_| {
            let mut z: Signal = std::array::from_fn(|_| rng.sample(StandardNormal));
            let (dx, dy) = sample_correlated_size(rng, prior);
            z[2] = (2.0 * dx / norm.size_max.0 - 1.0) * norm.signal_scale;
            z[3] = (2.0 * dy / norm.size_max.1 - 1.0) * norm.signal_scale;
            clamp_signal(&z, norm.signal_scale)
        })
        .collect();
    ProposalSet::from_signal(signal, t, vec![Provenance::InferenceRandom; n], norm)
}

/// Sine-shaped training ceiling on the diffusion time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DynamicTimeConfig {
    pub t_max: usize,
    pub omega: f64,
    pub sigma: f64,
    pub epochs: usize,
}

impl Default for DynamicTimeConfig {
    fn default() -> Self {
        Self {
            t_max: 1000,
            omega: 5.0,
            sigma: 0.5,
            epochs: 60,
        }
    }
}

impl DynamicTimeConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.omega > 0.0
            && self.omega <= self.t_max as f64
            && self.sigma > 0.0
            && self.sigma <= 1.0
            && self.epochs > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("bad dynamic time config {self:?}")))
        }
    }
}

/// Ceiling `T_max(x) = floor(T sin(acos(w/T) x / (sigma n) + asin(w/T)))` for
/// `x < sigma n`, and `T` afterwards.
pub fn dynamic_t_max(epoch: usize, cfg: &DynamicTimeConfig) -> usize {
    let t = cfg.t_max as f64;
    let ramp = cfg.sigma * cfg.epochs as f64;
    let x = epoch as f64;
    if x >= ramp {
        return cfg.t_max;
    }
    let r = cfg.omega / t;
    let v = t * (r.acos() / ramp * x + r.asin()).sin();
    // sin(asin(r)) may round just below r; keep x = 0 at exactly omega
    ((v + 1e-9).floor() as usize).clamp(1, cfg.t_max)
}
