//! AdamW with a one-cycle learning-rate profile.

use std::f64::consts::PI;

use super::network::DecoderParams;

/// Linear warmup from `peak / start_div` to `peak`, then cosine decay to
/// `peak / final_div` at `total_steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OneCycle {
    pub peak: f64,
    pub total_steps: usize,
    pub warmup_frac: f64,
    pub start_div: f64,
    pub final_div: f64,
}

impl OneCycle {
    pub fn new(peak: f64, total_steps: usize) -> Self {
        Self {
            peak,
            total_steps,
            warmup_frac: 0.3,
            start_div: 25.0,
            final_div: 1000.0,
        }
    }

    pub fn lr(&self, step: usize) -> f64 {
        let total = self.total_steps.max(1) as f64;
        let warm = self.warmup_frac * total;
        let k = (step as f64).min(total);
        let start = self.peak / self.start_div;
        let end = self.peak / self.final_div;
        if k < warm {
            start + (self.peak - start) * k / warm
        } else {
            let p = if total > warm { (k - warm) / (total - warm) } else { 1.0 };
            end + (self.peak - end) * 0.5 * (1.0 + (PI * p).cos())
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub schedule: OneCycle,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: DecoderParams,
    v: DecoderParams,
    step: usize,
}

impl AdamW {
    pub fn new(template: &DecoderParams, schedule: OneCycle, weight_decay: f64) -> Self {
        let mut zero = template.clone();
        for t in zero.tensors_mut() {
            t.fill(0.0);
        }
        Self {
            schedule,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: zero.clone(),
            v: zero,
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// Apply one update and return the learning rate that was used.
    pub fn step(&mut self, params: &mut DecoderParams, grads: &DecoderParams) -> f64 {
        let lr = self.schedule.lr(self.step);
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let (b1, b2, eps, wd) = (self.beta1, self.beta2, self.eps, self.weight_decay);
        let tensors = params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut());
        for (((p, g), m), v) in tensors {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                p[i] -= lr * (mh / (vh.sqrt() + eps) + wd * p[i]);
            }
        }
        lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::network::DecoderConfig;

    fn tiny() -> DecoderParams {
        DecoderParams::zeros(&DecoderConfig {
            pool: 1,
            hidden: 2,
            time_dim: 2,
            time_proj: 1,
            ..DecoderConfig::default()
        })
    }

    #[test]
    fn profile_endpoints() {
        let s = OneCycle::new(1e-3, 1000);
        assert!((s.lr(0) - 1e-3 / 25.0).abs() < 1e-18);
        assert!((s.lr(300) - 1e-3).abs() < 1e-15);
        assert!((s.lr(1000) - 1e-6).abs() < 1e-18);
        let mut prev = f64::INFINITY;
        for k in 300..=1000 {
            assert!(s.lr(k) <= prev);
            prev = s.lr(k);
        }
    }

    #[test]
    fn zero_gradient_no_decay_is_identity() {
        let mut p = tiny();
        p.b1.fill(0.7);
        let before = p.clone();
        let g = tiny();
        let mut opt = AdamW::new(&p, OneCycle::new(1e-3, 10), 0.0);
        opt.step(&mut p, &g);
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = tiny();
        let mut g = tiny();
        g.b_cls[0] = 3.0;
        let sched = OneCycle::new(1e-3, 10);
        let mut opt = AdamW::new(&p, sched, 0.0);
        let lr = opt.step(&mut p, &g);
        let expected = -lr * 3.0 / (3.0 + 1e-8);
        assert!((p.b_cls[0] - expected).abs() < 1e-18);
        assert!((p.b_cls[0] + lr).abs() < 1e-12);
    }
}
