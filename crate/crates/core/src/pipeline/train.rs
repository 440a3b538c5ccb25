//! Training loop.
//!
//! Per epoch the time ceiling comes from the dynamic schedule; per scene:
//! pad ground truth to `N`, draw one shared `t`, corrupt, resample empty
//! proposals, pool RoI features, decode, match, compute the loss and
//! accumulate gradients; every `batch` scenes take one AdamW step.
//!
//! Randomness: parameter init uses stream 0 of the seed; scene `s` of epoch
//! `e` uses stream `1 + e * num_scenes + s`, and the epoch's scene order
//! uses a separate stream family, so runs are bit-reproducible.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{Config, Scene};
use crate::decoder::{AdamW, Checkpoint, Decoder, DecoderParams, OneCycle};
use crate::error::{Error, Result};
use crate::geometry::{BevBox, Box3D, Detection};
use crate::matching::{hungarian, match_cost_matrix, training_loss, LossBreakdown};
use crate::proposals::{corrupt, dynamic_t_max, pad_gt_to_n, resample_empty};

use super::{scene_grid, RoiEncoder, TARGET_CLASS};

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    pub seed: u64,
    /// Start from these parameters instead of a fresh initialization.
    pub initial: Option<DecoderParams>,
}

/// Scene-averaged loss terms for one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub t_ceiling: usize,
    pub loss: LossBreakdown,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
    /// Proposals left below the point threshold after resampling.
    pub best_effort: usize,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub checkpoint: Checkpoint,
    pub epochs: Vec<EpochStats>,
}

/// ChaCha8 generator on stream `stream` of `seed`.
pub fn scene_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Target-class ground truth, truncated to at most `n` boxes.
pub fn training_targets(scene: &Scene, n: usize) -> Vec<Box3D> {
    scene
        .objects
        .iter()
        .filter(|o| o.class == TARGET_CLASS)
        .map(|o| o.bbox)
        .take(n)
        .collect()
}

/// Loss and parameter gradient for one scene at a given level `t`.
pub fn scene_step<R: Rng + ?Sized>(
    decoder: &Decoder,
    cfg: &Config,
    scene: &Scene,
    t: usize,
    rng: &mut R,
) -> Result<(LossBreakdown, DecoderParams, usize)> {
    let norm = cfg.normalizer();
    let prior = cfg.size_prior();
    let sched = cfg.noise_schedule()?;
    let n = cfg.proposals.n;
    let gts = training_targets(scene, n);
    let gt_bev: Vec<BevBox> = gts.iter().map(|g| g.bev).collect();

    let (boxes, prov) = pad_gt_to_n(&gt_bev, n, &norm, &prior, rng);
    let mut set = corrupt(&boxes, &prov, t, &sched, &norm, rng)?;
    let mut best_effort = 0;
    if cfg.proposals.resample {
        let report = resample_empty(
            &mut set,
            &scene.points,
            cfg.proposals.eta,
            cfg.proposals.max_rounds,
            &norm,
            &prior,
            rng,
        )?;
        best_effort = report.best_effort;
    }

    let grid = scene_grid(&scene.points, &cfg.grid());
    let roi = RoiEncoder::new(cfg).encode(&grid, &set.boxes);
    let (preds, cache) = decoder.forward(roi, &set.signal, t)?;
    let dets: Vec<Detection> = preds
        .iter()
        .map(|p| Detection::new(p.to_box(&norm), p.prob(), TARGET_CLASS))
        .collect();
    let cost = match_cost_matrix(&dets, &gt_bev, &norm, &cfg.loss)?;
    let assignment = hungarian(&cost)?;
    let (loss, grads) = training_loss(&preds, &gts, &assignment, &norm, &cfg.loss)?;
    Ok((loss, decoder.backward(&cache, &grads), best_effort))
}

fn param_norm(p: &DecoderParams) -> f64 {
    p.tensors().iter().flat_map(|t| t.iter()).map(|v| v * v).sum::<f64>().sqrt()
}

/// Train on `scenes` and return the final checkpoint with per-epoch losses.
pub fn run_training(cfg: &Config, scenes: &[Scene], opts: &TrainOptions) -> Result<TrainReport> {
    cfg.validate()?;
    if scenes.is_empty() {
        return Err(Error::InvalidArgument("training needs at least one scene".into()));
    }
    let dcfg = cfg.decoder_config();
    let params = match &opts.initial {
        Some(p) => p.clone(),
        None => DecoderParams::init(&dcfg, &mut scene_rng(opts.seed, 0)),
    };
    let mut decoder = Decoder::new(dcfg, params)?;
    let dyn_cfg = cfg.dynamic_time();
    let batch = cfg.train.batch;
    let steps_per_epoch = scenes.len().div_ceil(batch);
    let mut schedule = OneCycle::new(cfg.train.lr, cfg.train.epochs * steps_per_epoch);
    schedule.warmup_frac = cfg.train.warmup_frac;
    let mut opt = AdamW::new(&decoder.params, schedule, cfg.train.weight_decay);

    let num = scenes.len() as u64;
    let mut history = Vec::with_capacity(cfg.train.epochs);
    for epoch in 0..cfg.train.epochs {
        let t_ceiling = dynamic_t_max(epoch, &dyn_cfg);
        let mut order: Vec<usize> = (0..scenes.len()).collect();
        order.shuffle(&mut scene_rng(opts.seed ^ 0x005e_ed0f_0de5, epoch as u64));

        let mut sum = LossBreakdown::default();
        let mut best_effort = 0;
        let mut lr = 0.0;
        for (k, chunk) in order.chunks(batch).enumerate() {
            let mut acc = DecoderParams::zeros(&decoder.cfg);
            for &s in chunk {
                let mut rng = scene_rng(opts.seed, 1 + epoch as u64 * num + s as u64);
                let t = rng.random_range(1..=t_ceiling);
                let diverged = |detail: String| Error::Diverged {
                    epoch,
                    step: k,
                    detail: format!("scene {} (t = {t}): {detail}", scenes[s].id),
                };
                let (loss, grad, be) = scene_step(&decoder, cfg, &scenes[s], t, &mut rng).map_err(|e| match e {
                    Error::NonFinite(what) => diverged(format!("non-finite {what}")),
                    other => other,
                })?;
                if !loss.total.is_finite() {
                    log::error!("parameter norm {:.4e} at divergence", param_norm(&decoder.params));
                    return Err(diverged(format!("loss {loss:?}")));
                }
                acc.add_scaled(&grad, 1.0 / chunk.len() as f64);
                sum.cls += loss.cls;
                sum.reg += loss.reg;
                sum.iou += loss.iou;
                sum.total += loss.total;
                sum.l1 += loss.l1;
                best_effort += be;
            }
            lr = opt.step(&mut decoder.params, &acc);
        }
        let k = 1.0 / scenes.len() as f64;
        let loss = LossBreakdown {
            cls: sum.cls * k,
            reg: sum.reg * k,
            iou: sum.iou * k,
            total: sum.total * k,
            l1: sum.l1 * k,
        };
        log::info!(
            "epoch {epoch}: T_max {t_ceiling}, loss {:.4} (cls {:.4}, reg {:.4}, iou {:.4}), l1 {:.4}, lr {lr:.2e}",
            loss.total,
            loss.cls,
            loss.reg,
            loss.iou,
            loss.l1
        );
        history.push(EpochStats {
            epoch,
            t_ceiling,
            loss,
            lr,
            best_effort,
        });
    }
    Ok(TrainReport {
        checkpoint: Checkpoint::new(cfg.clone(), decoder.params)?,
        epochs: history,
    })
}
