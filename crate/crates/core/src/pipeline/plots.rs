//! CSV artifacts for plotting.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use crate::data::Config;
use crate::error::{Error, Result};
use crate::matching::LossBreakdown;
use crate::proposals::{dynamic_t_max, sample_correlated_raw, size_from_raw};

use super::eval::EvalReport;
use super::train::EpochStats;

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// `epoch,t_max` for epochs `0..=train.epochs`.
pub fn schedule_csv(cfg: &Config) -> String {
    let dyn_cfg = cfg.dynamic_time();
    let mut out = String::from("epoch,t_max\n");
    for x in 0..=cfg.train.epochs {
        let _ = writeln!(out, "{x},{}", dynamic_t_max(x, &dyn_cfg));
    }
    out
}

pub fn write_schedule_csv(path: &Path, cfg: &Config) -> Result<()> {
    write(path, &schedule_csv(cfg))
}

/// `kind,w,l,w_raw,l_raw`: `random` rows draw both sizes independently and
/// uniformly, `constrained` rows come from the correlated sampler (raw
/// Gaussian pair included).
pub fn sizes_csv<R: Rng + ?Sized>(cfg: &Config, n: usize, rng: &mut R) -> String {
    let prior = cfg.size_prior();
    let mut out = String::from("kind,w,l,w_raw,l_raw\n");
    for _ in 0..n {
        let w = rng.random::<f64>() * prior.w;
        let l = rng.random::<f64>() * prior.l;
        let _ = writeln!(out, "random,{w},{l},,");
    }
    for _ in 0..n {
        let (wr, lr) = sample_correlated_raw(rng, prior.rho);
        let (w, l) = size_from_raw(wr, lr, &prior);
        let _ = writeln!(out, "constrained,{w},{l},{wr},{lr}");
    }
    out
}

pub fn write_sizes_csv<R: Rng + ?Sized>(path: &Path, cfg: &Config, n: usize, rng: &mut R) -> Result<()> {
    write(path, &sizes_csv(cfg, n, rng))
}

/// `difficulty,recall,precision` (interpolated).
pub fn pr_csv(report: &EvalReport) -> String {
    let mut out = String::from("difficulty,recall,precision\n");
    for (name, c) in ["easy", "moderate", "hard"].iter().zip(&report.levels) {
        for (r, p) in c.recall.iter().zip(&c.precision) {
            let _ = writeln!(out, "{name},{r},{p}");
        }
    }
    out
}

pub fn write_pr_csv(path: &Path, report: &EvalReport) -> Result<()> {
    write(path, &pr_csv(report))
}

/// `epoch,t_max,cls,reg,iou,total,l1,lr`.
pub fn loss_csv(epochs: &[EpochStats]) -> String {
    let mut out = String::from("epoch,t_max,cls,reg,iou,total,l1,lr\n");
    for e in epochs {
        let l = &e.loss;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            e.epoch, e.t_ceiling, l.cls, l.reg, l.iou, l.total, l.l1, e.lr
        );
    }
    out
}

/// Inverse of [`loss_csv`].
pub fn parse_loss_csv(text: &str) -> Result<Vec<EpochStats>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "epoch,t_max,cls,reg,iou,total,l1,lr" => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                message: "missing loss CSV header".into(),
            })
        }
    }
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let bad = || Error::Parse {
                line: i + 1,
                message: format!("malformed row `{l}`"),
            };
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 8 {
                return Err(bad());
            }
            let num = |k: usize| f[k].trim().parse::<f64>().map_err(|_| bad());
            let int = |k: usize| f[k].trim().parse::<usize>().map_err(|_| bad());
            Ok(EpochStats {
                epoch: int(0)?,
                t_ceiling: int(1)?,
                loss: LossBreakdown {
                    cls: num(2)?,
                    reg: num(3)?,
                    iou: num(4)?,
                    total: num(5)?,
                    l1: num(6)?,
                },
                lr: num(7)?,
                best_effort: 0,
            })
        })
        .collect()
}

pub fn write_loss_csv(path: &Path, epochs: &[EpochStats]) -> Result<()> {
    write(path, &loss_csv(epochs))
}
