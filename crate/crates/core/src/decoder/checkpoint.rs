//! Versioned text checkpoint.
//!
//! ```text
//! boxdiff-checkpoint 1
//! [config]
//! <key> = <value>          one line per configuration key
//! [tensors]
//! tensor <name> <rows> <cols>
//! <cols values>            `rows` lines, row-major
//! ...
//! ```
//!
//! Tensors appear in [`TENSOR_NAMES`] order; biases are stored as one row.
//! Values use Rust's shortest round-trip float formatting, so a save/load
//! cycle is bit-exact.

use std::fmt::Write as _;
use std::path::Path;

use crate::data::config::Config;
use crate::error::{Error, Result};

use super::network::{Decoder, DecoderParams, TENSOR_NAMES};

pub const MAGIC: &str = "boxdiff-checkpoint";
pub const VERSION: u32 = 1;

/// Trained parameters together with the configuration that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: Config,
    pub params: DecoderParams,
}

impl Checkpoint {
    pub fn new(config: Config, params: DecoderParams) -> Result<Self> {
        params.check(&config.decoder_config())?;
        Ok(Self { config, params })
    }

    pub fn decoder(&self) -> Result<Decoder> {
        Decoder::new(self.config.decoder_config(), self.params.clone())
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{MAGIC} {VERSION}\n[config]\n");
        out.push_str(&self.config.to_text());
        out.push_str("[tensors]\n");
        let shapes = self.params.shapes();
        for ((name, data), (rows, cols)) in TENSOR_NAMES.iter().zip(self.params.tensors()).zip(shapes) {
            let _ = writeln!(out, "tensor {name} {rows} {cols}");
            for row in data.chunks(cols.max(1)) {
                let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
                out.push_str(&line.join(" "));
                out.push('\n');
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |msg: String| Error::Checkpoint(msg);
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
        match header.split_whitespace().collect::<Vec<_>>()[..] {
            [MAGIC, v] if v == VERSION.to_string() => {}
            [MAGIC, v] => return Err(bad(format!("unsupported version {v}"))),
            _ => return Err(bad("missing header".into())),
        }
        if lines.next().map(str::trim) != Some("[config]") {
            return Err(bad("expected [config]".into()));
        }
        let mut cfg_text = String::new();
        for line in lines.by_ref() {
            if line.trim() == "[tensors]" {
                break;
            }
            cfg_text.push_str(line);
            cfg_text.push('\n');
        }
        let mut config = Config::default();
        config.apply(&cfg_text)?;
        let mut params = DecoderParams::zeros(&config.decoder_config());
        let shapes = params.shapes();
        for ((name, dst), (rows, cols)) in TENSOR_NAMES.iter().zip(params.tensors_mut()).zip(shapes) {
            let head = lines.next().ok_or_else(|| bad(format!("missing tensor {name}")))?;
            let fields: Vec<&str> = head.split_whitespace().collect();
            let expected = [String::from("tensor"), name.to_string(), rows.to_string(), cols.to_string()];
            if fields != expected.iter().map(String::as_str).collect::<Vec<_>>() {
                return Err(bad(format!("expected `{}`, got `{head}`", expected.join(" "))));
            }
            let mut k = 0;
            for _ in 0..rows {
                let line = lines.next().ok_or_else(|| bad(format!("tensor {name} truncated")))?;
                for tok in line.split_whitespace() {
                    if k >= dst.len() {
                        return Err(bad(format!("tensor {name} has too many values")));
                    }
                    dst[k] = tok
                        .parse()
                        .map_err(|_| bad(format!("tensor {name}: bad value `{tok}`")))?;
                    k += 1;
                }
            }
            if k != dst.len() {
                return Err(bad(format!("tensor {name}: {k} values, expected {}", dst.len())));
            }
        }
        if lines.any(|l| !l.trim().is_empty()) {
            return Err(bad("trailing data".into()));
        }
        Self::new(config, params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> Checkpoint {
        let mut config = Config::default();
        config.apply("decoder.hidden = 4\ndecoder.pool = 2\ndecoder.time_dim = 4\ndecoder.time_proj = 3").unwrap();
        let params = DecoderParams::init(&config.decoder_config(), &mut ChaCha8Rng::seed_from_u64(3));
        Checkpoint::new(config, params).unwrap()
    }

    #[test]
    fn text_round_trip_is_exact() {
        let ck = small();
        let back = Checkpoint::from_text(&ck.to_text()).unwrap();
        assert_eq!(back, ck);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let ck = small();
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ck);
    }

    #[test]
    fn corrupt_files_rejected() {
        let text = small().to_text();
        assert!(Checkpoint::from_text("").is_err());
        assert!(Checkpoint::from_text(&text.replace("checkpoint 1", "checkpoint 9")).is_err());
        let truncated: String = text.lines().take(text.lines().count() - 1).map(|l| format!("{l}\n")).collect();
        assert!(Checkpoint::from_text(&truncated).is_err());
    }
}
