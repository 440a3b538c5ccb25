//! Flat `key = value` configuration with `#` comments.
//!
//! Every key has a default; unknown keys, duplicate keys, unparsable values
//! and out-of-range values are rejected with the offending key named.

use std::collections::HashSet;
use std::fmt::Display;
use std::str::FromStr;

use crate::decoder::{DecoderConfig, GridConfig, HeightMode};
use crate::diffusion::{BoxNormalizer, NoiseSchedule, SigmaForm};
use crate::error::{Error, Result};
use crate::matching::MatchCostParams;
use crate::proposals::{DynamicTimeConfig, SizePrior};

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionConfig {
    pub t: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneRange {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub z_min: f64,
    pub z_max: f64,
    pub ground_z: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProposalConfig {
    pub n: usize,
    pub eta: usize,
    pub rho: f64,
    pub w: f64,
    pub l: f64,
    pub resample: bool,
    pub max_rounds: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeScheduleConfig {
    pub omega: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderSection {
    pub hidden: usize,
    pub pool: usize,
    pub time_dim: usize,
    pub time_proj: usize,
    pub roi_context: f64,
    /// Append footprint statistics of elevated cells to the RoI features.
    pub summary: bool,
    pub summary_context: f64,
    pub height: HeightMode,
    pub dz_prior: f64,
    pub cell: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub warmup_frac: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferConfig {
    pub steps: usize,
    pub nms_iou: f64,
    pub pool_steps: bool,
    pub sigma: SigmaForm,
    pub ddim_eta: f64,
    pub min_score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub iou: f64,
    pub recall: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub k_max: usize,
    pub min_points: usize,
    pub base_points: usize,
    pub clutter: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub diffusion: DiffusionConfig,
    pub scene: SceneRange,
    pub proposals: ProposalConfig,
    pub schedule: TimeScheduleConfig,
    pub loss: MatchCostParams,
    pub decoder: DecoderSection,
    pub train: TrainConfig,
    pub infer: InferConfig,
    pub eval: EvalConfig,
    pub synth: SynthConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            diffusion: DiffusionConfig {
                t: 1000,
                beta_start: 1e-4,
                beta_end: 0.02,
                scale: 2.0,
            },
            scene: SceneRange {
                x_min: 0.0,
                x_max: 70.4,
                y_min: -40.0,
                y_max: 40.0,
                z_min: -3.0,
                z_max: 1.0,
                ground_z: -1.73,
            },
            proposals: ProposalConfig {
                n: 300,
                eta: 5,
                rho: 0.8,
                w: 8.0,
                l: 5.0,
                resample: true,
                max_rounds: 100,
            },
            schedule: TimeScheduleConfig {
                omega: 5.0,
                sigma: 0.5,
            },
            loss: MatchCostParams::default(),
            decoder: DecoderSection {
                hidden: 128,
                pool: 7,
                time_dim: 64,
                time_proj: 32,
                roi_context: 1.0,
                summary: true,
                summary_context: 2.0,
                height: HeightMode::Regressed,
                dz_prior: 1.5,
                cell: 0.4,
            },
            train: TrainConfig {
                epochs: 30,
                batch: 4,
                lr: 1e-3,
                weight_decay: 1e-2,
                warmup_frac: 0.3,
            },
            infer: InferConfig {
                steps: 4,
                nms_iou: 0.1,
                pool_steps: true,
                sigma: SigmaForm::Standard,
                ddim_eta: 1.0,
                min_score: 0.0,
            },
            eval: EvalConfig {
                iou: 0.7,
                recall: 40,
            },
            synth: SynthConfig {
                k_max: 8,
                min_points: 10,
                base_points: 400,
                clutter: 2000,
            },
        }
    }
}

trait ConfigValue: Sized {
    fn parse_value(s: &str) -> Option<Self>;
    fn render(&self) -> String;
}

macro_rules! plain_value {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse_value(s: &str) -> Option<Self> {
                <$t as FromStr>::from_str(s).ok()
            }
            fn render(&self) -> String {
                self.to_string()
            }
        }
    )*};
}
plain_value!(usize, bool);

impl ConfigValue for f64 {
    fn parse_value(s: &str) -> Option<Self> {
        s.parse::<f64>().ok().filter(|v| v.is_finite())
    }
    fn render(&self) -> String {
        // Display is the shortest representation that round-trips
        format!("{self}")
    }
}

impl ConfigValue for HeightMode {
    fn parse_value(s: &str) -> Option<Self> {
        match s {
            "regressed" => Some(Self::Regressed),
            "prior" => Some(Self::Prior),
            _ => None,
        }
    }
    fn render(&self) -> String {
        match self {
            Self::Regressed => "regressed",
            Self::Prior => "prior",
        }
        .into()
    }
}

impl ConfigValue for SigmaForm {
    fn parse_value(s: &str) -> Option<Self> {
        match s {
            "standard" => Some(Self::Standard),
            "inverted" => Some(Self::Inverted),
            _ => None,
        }
    }
    fn render(&self) -> String {
        match self {
            Self::Standard => "standard",
            Self::Inverted => "inverted",
        }
        .into()
    }
}

fn parse_as<T: ConfigValue>(key: &str, value: &str) -> Result<T> {
    T::parse_value(value).ok_or_else(|| Error::Config {
        key: key.into(),
        message: format!("cannot parse `{value}` as {}", std::any::type_name::<T>()),
    })
}

macro_rules! config_keys {
    ($($key:literal => $($field:ident).+ : $t:ty),* $(,)?) => {
        impl Config {
            /// Every recognized key.
            pub const KEYS: &'static [&'static str] = &[$($key),*];

            fn set_raw(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $($key => self.$($field).+ = parse_as::<$t>(key, value)?,)*
                    _ => {
                        return Err(Error::Config {
                            key: key.into(),
                            message: "unknown key".into(),
                        })
                    }
                }
                Ok(())
            }

            /// `(key, rendered value)` for every key, in declaration order.
            pub fn entries(&self) -> Vec<(&'static str, String)> {
                vec![$(($key, ConfigValue::render(&self.$($field).+))),*]
            }
        }
    };
}

config_keys! {
    "diffusion.t" => diffusion.t: usize,
    "diffusion.beta_start" => diffusion.beta_start: f64,
    "diffusion.beta_end" => diffusion.beta_end: f64,
    "diffusion.scale" => diffusion.scale: f64,
    "scene.x_min" => scene.x_min: f64,
    "scene.x_max" => scene.x_max: f64,
    "scene.y_min" => scene.y_min: f64,
    "scene.y_max" => scene.y_max: f64,
    "scene.z_min" => scene.z_min: f64,
    "scene.z_max" => scene.z_max: f64,
    "scene.ground_z" => scene.ground_z: f64,
    "proposals.n" => proposals.n: usize,
    "proposals.eta" => proposals.eta: usize,
    "proposals.rho" => proposals.rho: f64,
    "proposals.w" => proposals.w: f64,
    "proposals.l" => proposals.l: f64,
    "proposals.resample" => proposals.resample: bool,
    "proposals.max_rounds" => proposals.max_rounds: usize,
    "schedule.omega" => schedule.omega: f64,
    "schedule.sigma" => schedule.sigma: f64,
    "loss.lambda_cls" => loss.lambda_cls: f64,
    "loss.lambda_reg" => loss.lambda_reg: f64,
    "loss.lambda_iou" => loss.lambda_iou: f64,
    "loss.focal_alpha" => loss.focal_alpha: f64,
    "loss.focal_gamma" => loss.focal_gamma: f64,
    "decoder.hidden" => decoder.hidden: usize,
    "decoder.pool" => decoder.pool: usize,
    "decoder.time_dim" => decoder.time_dim: usize,
    "decoder.time_proj" => decoder.time_proj: usize,
    "decoder.roi_context" => decoder.roi_context: f64,
    "decoder.summary" => decoder.summary: bool,
    "decoder.summary_context" => decoder.summary_context: f64,
    "decoder.height" => decoder.height: HeightMode,
    "decoder.dz_prior" => decoder.dz_prior: f64,
    "decoder.cell" => decoder.cell: f64,
    "train.epochs" => train.epochs: usize,
    "train.batch" => train.batch: usize,
    "train.lr" => train.lr: f64,
    "train.weight_decay" => train.weight_decay: f64,
    "train.warmup_frac" => train.warmup_frac: f64,
    "infer.steps" => infer.steps: usize,
    "infer.nms_iou" => infer.nms_iou: f64,
    "infer.pool_steps" => infer.pool_steps: bool,
    "infer.sigma" => infer.sigma: SigmaForm,
    "infer.ddim_eta" => infer.ddim_eta: f64,
    "infer.min_score" => infer.min_score: f64,
    "eval.iou" => eval.iou: f64,
    "eval.recall" => eval.recall: usize,
    "synth.k_max" => synth.k_max: usize,
    "synth.min_points" => synth.min_points: usize,
    "synth.base_points" => synth.base_points: usize,
    "synth.clutter" => synth.clutter: usize,
}

fn range_err(key: &str, msg: impl Display) -> Error {
    Error::Config {
        key: key.into(),
        message: msg.to_string(),
    }
}

/// Parse and validate configuration text on top of the defaults.
pub fn load_config(text: &str) -> Result<Config> {
    let mut cfg = Config::default();
    cfg.apply(text)?;
    Ok(cfg)
}

impl Config {
    /// Apply `key = value` lines from `text`, then validate.
    pub fn apply(&mut self, text: &str) -> Result<()> {
        let mut seen = HashSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: lineno + 1,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(range_err(key, "duplicate key"));
            }
            self.set_raw(key, value)?;
        }
        self.validate()
    }

    /// Set one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        self.set_raw(key, value)?;
        self.validate()
    }

    /// Render as loadable text.
    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.diffusion;
        if d.t == 0 {
            return Err(range_err("diffusion.t", "must be >= 1"));
        }
        if !(d.beta_start > 0.0 && d.beta_start <= d.beta_end && d.beta_end < 1.0) {
            return Err(range_err("diffusion.beta_end", "need 0 < beta_start <= beta_end < 1"));
        }
        if d.scale <= 0.0 {
            return Err(range_err("diffusion.scale", "must be > 0"));
        }
        let s = &self.scene;
        if s.x_max <= s.x_min {
            return Err(range_err("scene.x_max", "must exceed scene.x_min"));
        }
        if s.y_max <= s.y_min {
            return Err(range_err("scene.y_max", "must exceed scene.y_min"));
        }
        if s.z_max <= s.z_min {
            return Err(range_err("scene.z_max", "must exceed scene.z_min"));
        }
        let p = &self.proposals;
        if p.n == 0 {
            return Err(range_err("proposals.n", "must be >= 1"));
        }
        if !(-1.0..=1.0).contains(&p.rho) {
            return Err(range_err("proposals.rho", "must lie in [-1, 1]"));
        }
        if p.w <= 0.0 {
            return Err(range_err("proposals.w", "must be > 0"));
        }
        if p.l <= 0.0 {
            return Err(range_err("proposals.l", "must be > 0"));
        }
        let ts = &self.schedule;
        if !(ts.omega > 0.0 && ts.omega <= d.t as f64) {
            return Err(range_err("schedule.omega", "must lie in (0, diffusion.t]"));
        }
        if !(ts.sigma > 0.0 && ts.sigma <= 1.0) {
            return Err(range_err("schedule.sigma", "must lie in (0, 1]"));
        }
        for (key, v) in [
            ("loss.lambda_cls", self.loss.lambda_cls),
            ("loss.lambda_reg", self.loss.lambda_reg),
            ("loss.lambda_iou", self.loss.lambda_iou),
            ("loss.focal_gamma", self.loss.focal_gamma),
        ] {
            if v < 0.0 {
                return Err(range_err(key, "must be >= 0"));
            }
        }
        if !(0.0..=1.0).contains(&self.loss.focal_alpha) {
            return Err(range_err("loss.focal_alpha", "must lie in [0, 1]"));
        }
        let dc = &self.decoder;
        for (key, v) in [
            ("decoder.hidden", dc.hidden),
            ("decoder.pool", dc.pool),
            ("decoder.time_proj", dc.time_proj),
        ] {
            if v == 0 {
                return Err(range_err(key, "must be >= 1"));
            }
        }
        if dc.time_dim == 0 || dc.time_dim % 2 == 1 {
            return Err(range_err("decoder.time_dim", "must be even and >= 2"));
        }
        if dc.roi_context <= 0.0 {
            return Err(range_err("decoder.roi_context", "must be > 0"));
        }
        if dc.summary_context <= 0.0 {
            return Err(range_err("decoder.summary_context", "must be > 0"));
        }
        if dc.dz_prior <= 0.0 {
            return Err(range_err("decoder.dz_prior", "must be > 0"));
        }
        if dc.cell <= 0.0 {
            return Err(range_err("decoder.cell", "must be > 0"));
        }
        let tr = &self.train;
        if tr.epochs == 0 {
            return Err(range_err("train.epochs", "must be >= 1"));
        }
        if tr.batch == 0 {
            return Err(range_err("train.batch", "must be >= 1"));
        }
        if tr.lr <= 0.0 {
            return Err(range_err("train.lr", "must be > 0"));
        }
        if tr.weight_decay < 0.0 {
            return Err(range_err("train.weight_decay", "must be >= 0"));
        }
        if !(tr.warmup_frac > 0.0 && tr.warmup_frac < 1.0) {
            return Err(range_err("train.warmup_frac", "must lie in (0, 1)"));
        }
        let inf = &self.infer;
        if inf.steps == 0 || inf.steps > d.t {
            return Err(range_err("infer.steps", "must lie in 1..=diffusion.t"));
        }
        if !(0.0..=1.0).contains(&inf.nms_iou) {
            return Err(range_err("infer.nms_iou", "must lie in [0, 1]"));
        }
        if inf.ddim_eta < 0.0 {
            return Err(range_err("infer.ddim_eta", "must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.eval.iou) {
            return Err(range_err("eval.iou", "must lie in [0, 1]"));
        }
        if self.eval.recall != 11 && self.eval.recall != 40 {
            return Err(range_err("eval.recall", "must be 11 or 40"));
        }
        if self.synth.k_max == 0 {
            return Err(range_err("synth.k_max", "must be >= 1"));
        }
        Ok(())
    }

    pub fn normalizer(&self) -> BoxNormalizer {
        BoxNormalizer {
            x_range: (self.scene.x_min, self.scene.x_max),
            y_range: (self.scene.y_min, self.scene.y_max),
            size_max: (self.proposals.w, self.proposals.l),
            signal_scale: self.diffusion.scale,
        }
    }

    pub fn noise_schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.diffusion.t, self.diffusion.beta_start, self.diffusion.beta_end)
    }

    pub fn size_prior(&self) -> SizePrior {
        SizePrior {
            rho: self.proposals.rho,
            w: self.proposals.w,
            l: self.proposals.l,
        }
    }

    pub fn dynamic_time(&self) -> DynamicTimeConfig {
        DynamicTimeConfig {
            t_max: self.diffusion.t,
            omega: self.schedule.omega,
            sigma: self.schedule.sigma,
            epochs: self.train.epochs,
        }
    }

    pub fn grid(&self) -> GridConfig {
        GridConfig {
            x_range: (self.scene.x_min, self.scene.x_max),
            y_range: (self.scene.y_min, self.scene.y_max),
            z_range: (self.scene.z_min, self.scene.z_max),
            cell: self.decoder.cell,
        }
    }

    pub fn decoder_config(&self) -> DecoderConfig {
        DecoderConfig {
            pool: self.decoder.pool,
            roi_context: self.decoder.roi_context,
            summary: self.decoder.summary,
            hidden: self.decoder.hidden,
            time_dim: self.decoder.time_dim,
            time_proj: self.decoder.time_proj,
            signal_scale: self.diffusion.scale,
            height_mode: self.decoder.height,
            cz_prior: self.scene.ground_z + 0.5 * self.decoder.dz_prior,
            dz_prior: self.decoder.dz_prior,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        let c = load_config("").unwrap();
        assert_eq!(c, Config::default());
        assert_eq!(c.diffusion.t, 1000);
        assert_eq!(c.proposals.n, 300);
        assert_eq!(c.proposals.eta, 5);
        assert_eq!(c.proposals.rho, 0.8);
        assert_eq!((c.proposals.w, c.proposals.l), (8.0, 5.0));
        assert_eq!((c.schedule.omega, c.schedule.sigma), (5.0, 0.5));
        assert_eq!(c.diffusion.scale, 2.0);
        assert_eq!((c.loss.lambda_cls, c.loss.lambda_reg, c.loss.lambda_iou), (2.0, 5.0, 2.0));
        assert_eq!(c.eval.iou, 0.7);
    }

    #[test]
    fn override_and_comments() {
        let c = load_config("# comment\nproposals.n = 100  # trailing\n\n").unwrap();
        assert_eq!(c.proposals.n, 100);
    }

    #[test]
    fn errors_name_the_key() {
        let e = load_config("proposals.rho = 1.5").unwrap_err().to_string();
        assert!(e.contains("proposals.rho"), "{e}");
        let e = load_config("proposals.bogus = 1").unwrap_err().to_string();
        assert!(e.contains("proposals.bogus"), "{e}");
        let e = load_config("proposals.n = many").unwrap_err().to_string();
        assert!(e.contains("proposals.n"), "{e}");
        assert!(load_config("proposals.n = 1\nproposals.n = 2").is_err());
        assert!(load_config("just text").is_err());
    }

    #[test]
    fn text_round_trip_and_order_independence() {
        let a = load_config("train.epochs = 3\ndecoder.height = prior\ninfer.sigma = inverted").unwrap();
        let b = load_config("infer.sigma = inverted\ndecoder.height = prior\ntrain.epochs = 3").unwrap();
        assert_eq!(a, b);
        assert_eq!(load_config(&a.to_text()).unwrap(), a);
        assert_eq!(Config::KEYS.len(), a.entries().len());
    }
}
