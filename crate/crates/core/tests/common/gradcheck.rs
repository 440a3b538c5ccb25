//! Central finite-difference checks for the decoder and the training loss.

use boxdiff_core::decoder::{Decoder, DecoderConfig, DecoderParams, HeightMode};
use boxdiff_core::diffusion::{BoxNormalizer, Signal};
use boxdiff_core::geometry::{diou_loss_3d, diou_loss_3d_grad, BevBox, Box3D, Detection};
use boxdiff_core::matching::{hungarian, match_cost_matrix, training_loss, Assignment, MatchCostParams, PredictionOutput};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::rel_err;

pub const H: f64 = 1e-5;

/// Worst relative error found and how many probes were checked or skipped.
#[derive(Debug, Clone, Copy, Default)]
pub struct GradReport {
    pub max_rel: f64,
    pub checked: usize,
    /// Probes where no step down to 1e-8 stayed inside one smooth piece.
    pub skipped: usize,
}

impl GradReport {
    fn record(&mut self, analytic: f64, numeric: f64) {
        self.max_rel = self.max_rel.max(rel_err(analytic, numeric));
        self.checked += 1;
    }

    pub fn merge(&mut self, o: GradReport) {
        self.max_rel = self.max_rel.max(o.max_rel);
        self.checked += o.checked;
        self.skipped += o.skipped;
    }
}

pub struct Problem {
    pub decoder: Decoder,
    pub roi: Array2<f64>,
    pub coords: Vec<Signal>,
    pub t: usize,
    pub gts: Vec<Box3D>,
    pub assignment: Assignment,
    pub norm: BoxNormalizer,
    pub params: MatchCostParams,
}

pub fn small_config() -> DecoderConfig {
    DecoderConfig {
        pool: 2,
        roi_context: 1.0,
        summary: true,
        hidden: 8,
        time_dim: 4,
        time_proj: 3,
        signal_scale: 2.0,
        height_mode: HeightMode::Regressed,
        cz_prior: -1.0,
        dz_prior: 1.5,
    }
}

/// Random decoder (heads included), random inputs and ground truth placed
/// near the initial predictions so every loss term is active.
pub fn problem(seed: u64) -> Problem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = small_config();
    let mut p = DecoderParams::init(&cfg, &mut rng);
    for t in p.tensors_mut() {
        for v in t.iter_mut() {
            *v += 0.3 * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let decoder = Decoder::new(cfg, p).unwrap();
    let n = 6;
    let roi = Array2::from_shape_fn((n, cfg.roi_dim()), |_| rng.random::<f64>());
    let coords: Vec<Signal> = (0..n).map(|_| std::array::from_fn(|_| rng.random_range(-1.2..1.2))).collect();
    let t = rng.random_range(1..=1000);
    let norm = BoxNormalizer::default();
    let params = MatchCostParams::default();

    let (preds, _) = decoder.forward(roi.clone(), &coords, t).unwrap();
    let m = rng.random_range(1..=3);
    let gts: Vec<Box3D> = (0..m)
        .map(|k| {
            let b = preds[k].to_box(&norm);
            Box3D::new(
                BevBox::new(
                    b.bev.cx + rng.random_range(-1.0..1.0),
                    b.bev.cy + rng.random_range(-1.0..1.0),
                    (b.bev.dx * rng.random_range(0.7..1.3)).max(0.5),
                    (b.bev.dy * rng.random_range(0.7..1.3)).max(0.5),
                    b.bev.theta + rng.random_range(-0.4..0.4),
                ),
                b.cz + rng.random_range(-0.3..0.3),
                b.dz.abs().max(0.5) * rng.random_range(0.8..1.2),
            )
        })
        .collect();
    let dets: Vec<Detection> = preds.iter().map(|p| Detection::new(p.to_box(&norm), p.prob(), "Car")).collect();
    let gt_bev: Vec<BevBox> = gts.iter().map(|g| g.bev).collect();
    let assignment = hungarian(&match_cost_matrix(&dets, &gt_bev, &norm, &params).unwrap()).unwrap();
    Problem {
        decoder,
        roi,
        coords,
        t,
        gts,
        assignment,
        norm,
        params,
    }
}

impl Problem {
    fn eval(&self, d: &Decoder) -> (f64, Vec<bool>) {
        let (preds, cache) = d.forward(self.roi.clone(), &self.coords, self.t).unwrap();
        let (loss, _) = training_loss(&preds, &self.gts, &self.assignment, &self.norm, &self.params).unwrap();
        (loss.total, cache.activation_pattern(d.cfg.signal_scale))
    }

    /// Every parameter of the decoder through the full loss composition.
    pub fn check_parameters(&self) -> GradReport {
        let (preds, cache) = self.decoder.forward(self.roi.clone(), &self.coords, self.t).unwrap();
        let (_, g) = training_loss(&preds, &self.gts, &self.assignment, &self.norm, &self.params).unwrap();
        let analytic = self.decoder.backward(&cache, &g);
        let base = cache.activation_pattern(self.decoder.cfg.signal_scale);
        let mut report = GradReport::default();
        let mut probe = self.decoder.clone();
        for (ti, tensor) in analytic.tensors().iter().enumerate() {
            for (k, &a) in tensor.iter().enumerate() {
                let orig = self.decoder.params.tensors()[ti][k];
                let mut h = H;
                let mut done = false;
                while h >= 1e-8 {
                    probe.params.tensors_mut()[ti][k] = orig + h;
                    let (fp, pp) = self.eval(&probe);
                    probe.params.tensors_mut()[ti][k] = orig - h;
                    let (fm, pm) = self.eval(&probe);
                    probe.params.tensors_mut()[ti][k] = orig;
                    if pp == base && pm == base {
                        report.record(a, (fp - fm) / (2.0 * h));
                        done = true;
                        break;
                    }
                    h /= 10.0;
                }
                if !done {
                    report.skipped += 1;
                }
            }
        }
        report
    }

    /// Loss gradients with respect to the decoder outputs.
    pub fn check_outputs(&self) -> GradReport {
        let (preds, _) = self.decoder.forward(self.roi.clone(), &self.coords, self.t).unwrap();
        check_loss_inputs(&preds, &self.gts, &self.assignment, &self.norm, &self.params)
    }
}

/// 0 = logit, 1..=5 signal, 6..=7 height.
fn slot_mut(p: &mut PredictionOutput, slot: usize) -> &mut f64 {
    match slot {
        0 => &mut p.logit,
        1..=5 => &mut p.signal[slot - 1],
        _ => &mut p.height[slot - 6],
    }
}

pub fn check_loss_inputs(
    preds: &[PredictionOutput],
    gts: &[Box3D],
    assignment: &Assignment,
    norm: &BoxNormalizer,
    params: &MatchCostParams,
) -> GradReport {
    let total = |p: &[PredictionOutput]| training_loss(p, gts, assignment, norm, params).unwrap().0.total;
    let (_, g) = training_loss(preds, gts, assignment, norm, params).unwrap();
    let mut report = GradReport::default();
    let mut probe = preds.to_vec();
    for i in 0..preds.len() {
        for slot in 0..8 {
            let analytic = match slot {
                0 => g.logit[i],
                1..=5 => g.signal[i][slot - 1],
                _ => g.height[i][slot - 6],
            };
            let orig = preds[i];
            // saturated coordinates sit on a kink of the clamp
            if (1..=5).contains(&slot) && orig.signal[slot - 1].abs() >= norm.signal_scale {
                report.skipped += 1;
                continue;
            }
            *slot_mut(&mut probe[i], slot) += H;
            let fp = total(&probe);
            probe[i] = orig;
            *slot_mut(&mut probe[i], slot) -= H;
            let fm = total(&probe);
            probe[i] = orig;
            report.record(analytic, (fp - fm) / (2.0 * H));
        }
    }
    report
}

/// DIoU loss gradient over all seven box parameters.
pub fn check_diou(pred: &Box3D, gt: &Box3D) -> GradReport {
    let (_, g) = diou_loss_3d_grad(pred, gt);
    let mut report = GradReport::default();
    for k in 0..7 {
        let mut a = pred.to_array();
        a[k] += H;
        let fp = diou_loss_3d(&Box3D::from_array(a), gt);
        a[k] -= 2.0 * H;
        let fm = diou_loss_3d(&Box3D::from_array(a), gt);
        report.record(g[k], (fp - fm) / (2.0 * H));
    }
    report
}
