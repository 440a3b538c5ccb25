//! Multi-step inference: Gaussian proposals at `t = T`, repeated
//! decode → DDIM update, candidates pooled across steps, then rotated NMS.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::{Config, Scene};
use crate::decoder::{Checkpoint, Decoder, FeatureGrid};
use crate::diffusion::{clamp_signal, ddim_sigma, ddim_step, BoxNormalizer, Signal};
use crate::error::Result;
use crate::geometry::{nms_rotated, Box3D, Detection};
use crate::matching::PredictionOutput;
use crate::proposals::{sample_inference_proposals, SizePrior};

use super::train::scene_rng;
use super::{scene_grid, RoiEncoder, TARGET_CLASS};

/// A scene with its feature grid, built once and reused at every step.
pub struct PreparedScene<'a> {
    pub scene: &'a Scene,
    pub grid: FeatureGrid,
}

impl<'a> PreparedScene<'a> {
    pub fn new(scene: &'a Scene, cfg: &Config) -> Self {
        Self {
            scene,
            grid: scene_grid(&scene.points, &cfg.grid()),
        }
    }
}

/// Anything that maps noisy signal boxes at level `t` to clean predictions.
pub trait Denoiser {
    fn denoise(&self, scene: &PreparedScene<'_>, x_t: &[Signal], t: usize) -> Result<Vec<PredictionOutput>>;
}

/// Decoder paired with the normalizer of the scene range it was trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct Detector {
    pub decoder: Decoder,
    pub norm: BoxNormalizer,
    pub encoder: RoiEncoder,
}

impl Detector {
    pub fn new(decoder: Decoder, cfg: &Config) -> Self {
        Self {
            decoder,
            norm: cfg.normalizer(),
            encoder: RoiEncoder::new(cfg),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        Ok(Self::new(ck.decoder()?, &ck.config))
    }
}

impl Denoiser for Detector {
    fn denoise(&self, scene: &PreparedScene<'_>, x_t: &[Signal], t: usize) -> Result<Vec<PredictionOutput>> {
        let boxes: Vec<_> = x_t.iter().map(|z| self.norm.signal_to_box(z)).collect();
        let roi = self.encoder.encode(&scene.grid, &boxes);
        Ok(self.decoder.forward(roi, x_t, t)?.0)
    }
}

/// Sampler-only reference: proposal `i` predicts ground truth `i mod M`
/// with a confident score.
pub struct GtOracle<'c> {
    pub config: &'c Config,
    pub logit: f64,
}

impl<'c> GtOracle<'c> {
    pub fn new(config: &'c Config) -> Self {
        Self { config, logit: 8.0 }
    }
}

impl Denoiser for GtOracle<'_> {
    fn denoise(&self, scene: &PreparedScene<'_>, x_t: &[Signal], _t: usize) -> Result<Vec<PredictionOutput>> {
        let norm = self.config.normalizer();
        let gts: Vec<Box3D> = scene.scene.boxes();
        if gts.is_empty() {
            return Ok(x_t
                .iter()
                .map(|z| PredictionOutput {
                    logit: -self.logit,
                    signal: *z,
                    height: [0.0, 1.0],
                })
                .collect());
        }
        let targets = gts
            .iter()
            .map(|g| Ok((norm.normalize_and_scale(&g.bev)?.0, [g.cz, g.dz])))
            .collect::<Result<Vec<_>>>()?;
        Ok((0..x_t.len())
            .map(|i| {
                let (signal, height) = targets[i % targets.len()];
                PredictionOutput {
                    logit: self.logit,
                    signal,
                    height,
                }
            })
            .collect())
    }
}

/// Detections plus the pre-NMS candidate count.
#[derive(Debug, Clone, PartialEq)]
pub struct InferenceOutput {
    pub detections: Vec<Detection>,
    pub candidates: usize,
}

/// Time levels `T = t_0 > t_1 > ... > t_steps = 0`, evenly spaced.
pub fn step_levels(t_max: usize, steps: usize) -> Vec<usize> {
    (0..=steps)
        .map(|k| ((t_max * (steps - k)) as f64 / steps as f64).round() as usize)
        .collect()
}

/// Run `steps` denoising iterations on one scene.
pub fn run_inference<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    denoiser: &D,
    scene: &PreparedScene<'_>,
    cfg: &Config,
    steps: usize,
    rng: &mut R,
) -> Result<InferenceOutput> {
    let sched = cfg.noise_schedule()?;
    let norm = cfg.normalizer();
    let prior: SizePrior = cfg.size_prior();
    let t_max = sched.steps();
    let steps = steps.clamp(1, t_max);
    let levels = step_levels(t_max, steps);

    let mut x = sample_inference_proposals(cfg.proposals.n, t_max, &norm, &prior, rng).signal;
    let mut candidates: Vec<Detection> = Vec::new();
    for k in 0..steps {
        let (t, t_prev) = (levels[k], levels[k + 1]);
        let preds = denoiser.denoise(scene, &x, t)?;
        if cfg.infer.pool_steps || k + 1 == steps {
            candidates.extend(
                preds
                    .iter()
                    .filter(|p| p.prob() >= cfg.infer.min_score)
                    .map(|p| Detection::new(p.to_box(&norm), p.prob(), TARGET_CLASS)),
            );
        }
        if k + 1 == steps {
            break;
        }
        let sigma = ddim_sigma(&sched, t, t_prev, cfg.infer.sigma, cfg.infer.ddim_eta);
        for (xi, p) in x.iter_mut().zip(&preds) {
            let noise: Signal = std::array::from_fn(|_| rng.sample(StandardNormal));
            let out = ddim_step(xi, &p.signal, t, t - t_prev, &noise, sigma, &sched)?;
            *xi = clamp_signal(&out.x, norm.signal_scale);
        }
    }
    let total = candidates.len();
    Ok(InferenceOutput {
        detections: nms_rotated(&candidates, cfg.infer.nms_iou),
        candidates: total,
    })
}

/// Inference over many scenes; scene `k` (in the given order) draws from
/// stream `k` of `seed`. Returns detections keyed by scene id.
pub fn infer_dataset<D: Denoiser + ?Sized>(
    denoiser: &D,
    scenes: &[Scene],
    cfg: &Config,
    steps: usize,
    seed: u64,
) -> Result<BTreeMap<String, InferenceOutput>> {
    scenes
        .iter()
        .enumerate()
        .map(|(k, scene)| {
            let prep = PreparedScene::new(scene, cfg);
            let out = run_inference(denoiser, &prep, cfg, steps, &mut scene_rng(seed, k as u64))?;
            Ok((scene.id.clone(), out))
        })
        .collect()
}

/// Keep only the detections of an [`infer_dataset`] result.
pub fn detections_only(outputs: BTreeMap<String, InferenceOutput>) -> BTreeMap<String, Vec<Detection>> {
    outputs.into_iter().map(|(id, o)| (id, o.detections)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn levels_are_even_and_end_at_zero() {
        assert_eq!(step_levels(1000, 1), vec![1000, 0]);
        assert_eq!(step_levels(1000, 4), vec![1000, 750, 500, 250, 0]);
        assert_eq!(step_levels(1000, 6)[1], 833);
    }

    #[test]
    fn oracle_recovers_boxes() {
        let cfg = Config::default();
        let scene = crate::data::generate_synthetic_scene(&mut ChaCha8Rng::seed_from_u64(2), &cfg, "s");
        let prep = PreparedScene::new(&scene, &cfg);
        for steps in [1, 4] {
            let out = run_inference(&GtOracle::new(&cfg), &prep, &cfg, steps, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
            assert_eq!(out.detections.len(), scene.objects.len());
            assert_eq!(out.candidates, steps * cfg.proposals.n);
        }
    }
}
