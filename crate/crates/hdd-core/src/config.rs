//! Flat `key=value` run configuration files.
//!
//! The format is a plain text file, one assignment per line; blank lines and
//! `#` comments are ignored. Every key is optional and falls back to the
//! library default, unknown and duplicate keys are hard errors (a silently
//! ignored typo would change an experiment), and [`render_config`] emits a
//! file that parses back to exactly the same configuration.

use std::path::Path;

use crate::encoder::EncoderKind;
use crate::engine::{DistillConfig, InitMode, LossKind};
use crate::error::{HddError, Result};
use crate::pruning::{PruneScope, PruneSpec};

/// Everything a config file can describe: the distillation run plus the
/// pruning directive applied around it.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FileConfig {
    pub distill: DistillConfig,
    pub prune: PruneSpec,
}

const KEYS: &[&str] = &[
    "curvature_magnitude",
    "lambda",
    "lr",
    "ipc",
    "iterations",
    "batch_real",
    "seed",
    "loss_kind",
    "init_mode",
    "resample_encoder",
    "feature_norm_cap",
    "eval_every",
    "encoder.kind",
    "encoder.seed",
    "encoder.width",
    "encoder.feature_dim",
    "prune.alpha",
    "prune.scope",
];

fn parse_value<T: std::str::FromStr>(key: &str, value: &str, what: &str) -> Result<T> {
    value.parse().map_err(|_| {
        HddError::Config(format!("key {key}: expected {what}, got {value:?}"))
    })
}

/// Parses a configuration from flat `key=value` text.
pub fn parse_config(text: &str) -> Result<FileConfig> {
    let mut cfg = FileConfig::default();
    let mut seen: Vec<&str> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(HddError::Config(format!(
                "line {}: {line:?} is not a key=value assignment",
                lineno + 1
            )));
        };
        let key = key.trim();
        let value = value.trim();
        let Some(&canon) = KEYS.iter().find(|&&k| k == key) else {
            return Err(HddError::Config(format!("line {}: unknown key {key:?}", lineno + 1)));
        };
        if seen.contains(&canon) {
            return Err(HddError::Config(format!(
                "line {}: duplicate key {key:?}",
                lineno + 1
            )));
        }
        seen.push(canon);
        let d = &mut cfg.distill;
        match canon {
            "curvature_magnitude" => d.curvature_magnitude = parse_value(key, value, "a number")?,
            "lambda" => d.lambda = parse_value(key, value, "a number")?,
            "lr" => d.lr = parse_value(key, value, "a number")?,
            "ipc" => d.ipc = parse_value(key, value, "a positive integer")?,
            "iterations" => d.iterations = parse_value(key, value, "an integer")?,
            "batch_real" => d.batch_real = parse_value(key, value, "a positive integer")?,
            "seed" => d.seed = parse_value(key, value, "an unsigned integer")?,
            "loss_kind" => d.loss_kind = LossKind::parse(value)?,
            "init_mode" => d.init = InitMode::parse(value)?,
            "resample_encoder" => d.resample_encoder = parse_value(key, value, "true or false")?,
            "feature_norm_cap" => d.feature_norm_cap = parse_value(key, value, "a number")?,
            "eval_every" => d.eval_every = parse_value(key, value, "an integer")?,
            "encoder.kind" => d.encoder_kind = EncoderKind::parse(value)?,
            "encoder.seed" => d.encoder_seed = parse_value(key, value, "an unsigned integer")?,
            "encoder.width" => d.encoder_width = parse_value(key, value, "a positive integer")?,
            "encoder.feature_dim" => {
                d.encoder_feature_dim = parse_value(key, value, "a positive integer")?
            }
            "prune.alpha" => cfg.prune.alpha = parse_value(key, value, "a number in [0, 1]")?,
            "prune.scope" => cfg.prune.scope = PruneScope::parse(value)?,
            _ => unreachable!("canonical key list is exhaustive"),
        }
    }
    cfg.distill.validate()?;
    cfg.prune.validate()?;
    Ok(cfg)
}

/// Reads and parses a configuration file.
pub fn load_config(path: &Path) -> Result<FileConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| HddError::Config(format!("cannot read config {}: {e}", path.display())))?;
    parse_config(&text)
}

/// Renders a configuration as flat `key=value` text that parses back to the
/// identical configuration (floats use the shortest round-tripping form).
pub fn render_config(cfg: &FileConfig) -> String {
    let d = &cfg.distill;
    let mut out = String::new();
    let mut push = |k: &str, v: String| out.push_str(&format!("{k}={v}\n"));
    push("curvature_magnitude", d.curvature_magnitude.to_string());
    push("lambda", d.lambda.to_string());
    push("lr", d.lr.to_string());
    push("ipc", d.ipc.to_string());
    push("iterations", d.iterations.to_string());
    push("batch_real", d.batch_real.to_string());
    push("seed", d.seed.to_string());
    push("loss_kind", d.loss_kind.name().to_string());
    push("init_mode", d.init.name().to_string());
    push("resample_encoder", d.resample_encoder.to_string());
    push("feature_norm_cap", d.feature_norm_cap.to_string());
    push("eval_every", d.eval_every.to_string());
    push("encoder.kind", d.encoder_kind.name().to_string());
    push("encoder.seed", d.encoder_seed.to_string());
    push("encoder.width", d.encoder_width.to_string());
    push("encoder.feature_dim", d.encoder_feature_dim.to_string());
    push("prune.alpha", cfg.prune.alpha.to_string());
    push("prune.scope", cfg.prune.scope.name().to_string());
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_yields_the_defaults() {
        let cfg = parse_config("").unwrap();
        assert_eq!(cfg, FileConfig::default());
        assert_eq!(cfg.distill.lambda, 20.0);
        assert_eq!(cfg.distill.ipc, 10);
        assert_eq!(cfg.prune.alpha, 0.0);
    }

    #[test]
    fn comments_blanks_and_spacing_are_tolerated() {
        let cfg = parse_config(
            "# experiment 12\n\n  lambda = 4.5  \nencoder.kind=mlp\n\n# done\n",
        )
        .unwrap();
        assert_eq!(cfg.distill.lambda, 4.5);
        assert_eq!(cfg.distill.encoder_kind, EncoderKind::Mlp);
    }

    #[test]
    fn every_key_parses_and_round_trips() {
        let text = "\
curvature_magnitude=2.5
lambda=7.25
lr=0.125
ipc=3
iterations=17
batch_real=9
seed=901
loss_kind=euclidean_mmd
init_mode=noise
resample_encoder=false
feature_norm_cap=6.5
eval_every=5
encoder.kind=random_linear
encoder.seed=77
encoder.width=16
encoder.feature_dim=24
prune.alpha=0.35
prune.scope=global
";
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.distill.curvature_magnitude, 2.5);
        assert_eq!(cfg.distill.loss_kind, LossKind::EuclideanMmd);
        assert_eq!(cfg.distill.init, InitMode::Noise);
        assert!(!cfg.distill.resample_encoder);
        assert_eq!(cfg.distill.encoder_feature_dim, 24);
        assert_eq!(cfg.prune.scope, PruneScope::Global);
        let again = parse_config(&render_config(&cfg)).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = parse_config("lamda=3\n").unwrap_err().to_string();
        assert!(err.contains("unknown key") && err.contains("lamda"), "{err}");
    }

    #[test]
    fn duplicate_keys_are_rejected() {
        let err = parse_config("lambda=3\nlambda=4\n").unwrap_err().to_string();
        assert!(err.contains("duplicate"), "{err}");
    }

    #[test]
    fn malformed_lines_and_values_are_rejected() {
        assert!(parse_config("just words\n").is_err());
        let err = parse_config("ipc=three\n").unwrap_err().to_string();
        assert!(err.contains("ipc") && err.contains("three"), "{err}");
        // Values that parse but fail validation are also rejected.
        assert!(parse_config("lambda=-2\n").is_err());
        assert!(parse_config("prune.alpha=1.5\n").is_err());
    }
}
