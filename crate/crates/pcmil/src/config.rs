//! Run settings from a flat `key = value` file, overridable per key.
//!
//! Blank lines and lines starting with `#` are ignored. Recognized keys:
//!
//! ```text
//! seed alpha val_fraction test_fraction min_patches
//! lr weight_decay beta1 beta2 eps max_epochs patience tau attn_dim
//! n_slides grid_rows grid_cols d lesion_rate lesion_side_min lesion_side_max
//! delta sigma stroma_fraction annotation_fraction
//! ```

use std::path::Path;
use std::str::FromStr;

use pcmil_core::allocation::CompositionVector;
use pcmil_core::bagging::RegionRule;
use pcmil_core::synthcohort::SynthConfig;
use pcmil_core::training::TrainConfig;

use crate::error::{CliError, Result};
use crate::io::read_text;

#[derive(Clone, Debug, PartialEq)]
pub struct Settings {
    pub seed: u64,
    pub alpha: CompositionVector,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub rule: RegionRule,
    pub train: TrainConfig,
    pub synth: SynthConfig,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            seed: 0,
            alpha: CompositionVector::slide_only(),
            val_fraction: 0.2,
            test_fraction: 0.2,
            rule: RegionRule::default(),
            train: TrainConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| CliError::Config(format!("bad value {value:?} for {key}")))
}

/// Parses `s,a4,a2,a1` integer percents summing to 100.
pub fn parse_alpha(text: &str) -> Result<CompositionVector> {
    let parts: Vec<&str> = text.trim().trim_start_matches('(').trim_end_matches(')').split(',').collect();
    let [s, a4, a2, a1] = parts[..] else {
        return Err(CliError::Config(format!("alpha {text:?} needs four comma-separated percents")));
    };
    let p = [s, a4, a2, a1].map(|v| v.trim().parse::<u32>());
    let [Ok(s), Ok(a4), Ok(a2), Ok(a1)] = p else {
        return Err(CliError::Config(format!("alpha {text:?} must hold integer percents")));
    };
    Ok(CompositionVector::from_percents([s, a4, a2, a1])?)
}

impl Settings {
    /// Sets one key.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let t = &mut self.train;
        let s = &mut self.synth;
        match key.trim() {
            "seed" => self.seed = parse(key, v)?,
            "alpha" => self.alpha = parse_alpha(v)?,
            "val_fraction" => self.val_fraction = parse(key, v)?,
            "test_fraction" => self.test_fraction = parse(key, v)?,
            "min_patches" => self.rule.min_patches = parse(key, v)?,
            "lr" => t.lr = parse(key, v)?,
            "weight_decay" => t.weight_decay = parse(key, v)?,
            "beta1" => t.beta1 = parse(key, v)?,
            "beta2" => t.beta2 = parse(key, v)?,
            "eps" => t.eps = parse(key, v)?,
            "max_epochs" => t.max_epochs = parse(key, v)?,
            "patience" => t.patience = parse(key, v)?,
            "tau" => t.tau = parse(key, v)?,
            "attn_dim" => t.attn_dim = parse(key, v)?,
            "n_slides" => s.n_slides = parse(key, v)?,
            "grid_rows" => s.grid_rows = parse(key, v)?,
            "grid_cols" => s.grid_cols = parse(key, v)?,
            "d" => s.d = parse(key, v)?,
            "lesion_rate" => s.lesion_rate = parse(key, v)?,
            "lesion_side_min" => s.lesion_side_range.0 = parse(key, v)?,
            "lesion_side_max" => s.lesion_side_range.1 = parse(key, v)?,
            "delta" => s.delta = parse(key, v)?,
            "sigma" => s.sigma = parse(key, v)?,
            "stroma_fraction" => s.stroma_fraction = parse(key, v)?,
            "annotation_fraction" => s.annotation_fraction = parse(key, v)?,
            other => return Err(CliError::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Applies every `key = value` line of `text`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("config line {}: expected key = value", i + 1)))?;
            self.apply(k, v)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        self.apply_text(&read_text(path)?)
    }

    /// Training settings with the run seed filled in.
    pub fn train_config(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig { seed: self.seed, ..self.train };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Generator settings with the run seed filled in.
    pub fn synth_config(&self) -> Result<SynthConfig> {
        let cfg = SynthConfig { seed: self.seed, ..self.synth.clone() };
        cfg.validate()?;
        Ok(cfg)
    }
}
