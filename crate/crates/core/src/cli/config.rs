use std::fmt::Write as _;
use std::path::Path;

use super::CliError;
use crate::data::{SplitSpec, SynthSpec};
use crate::evaluation::VariantSpec;
use crate::model::ModelConfig;
use crate::training::{FinetuneConfig, PretrainConfig};

/// Everything a command may read, grouped by config-file section.
///
/// File format: UTF-8 lines of `key = value` under `[section]` headers.
/// Blank lines and lines starting with `#` or `;` are ignored. Sections are
/// `model`, `pretrain`, `finetune`, `split`, `synth` and `ablate`; any other
/// section or key is rejected. In `[model]`, `bpe_vocab` and `wp_vocab` are
/// tokenizer training targets; a loaded tokenizer's actual size wins.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneConfig,
    pub split: SplitSpec,
    pub synth: SynthSpec,
    pub ablate: AblateConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblateConfig {
    pub variants: Vec<String>,
    pub seeds: Vec<u64>,
}

impl Default for AblateConfig {
    fn default() -> Self {
        Self {
            variants: VariantSpec::all().into_iter().map(|v| v.name).collect(),
            seeds: vec![1, 2, 3],
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            pretrain: PretrainConfig::default(),
            finetune: FinetuneConfig::default(),
            split: SplitSpec::default(),
            synth: SynthSpec::default(),
            ablate: AblateConfig::default(),
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

fn set_split(s: &mut SplitSpec, key: &str, value: &str) -> Result<(), CliError> {
    let v = value.trim();
    let bad = |what: &str| CliError::Config(format!("split.{key}: expected {what}, got `{v}`"));
    match key {
        "test_fraction" => s.test_fraction = v.parse().map_err(|_| bad("a number"))?,
        "val_fraction" => s.val_fraction = v.parse().map_err(|_| bad("a number"))?,
        "stratify" => s.stratify = v.parse().map_err(|_| bad("true/false"))?,
        "seed" => s.seed = v.parse().map_err(|_| bad("an integer"))?,
        _ => return Err(CliError::Config(format!("unknown key `split.{key}`"))),
    }
    Ok(())
}

fn split_pairs(s: &SplitSpec) -> Vec<(String, String)> {
    vec![
        ("test_fraction".into(), s.test_fraction.to_string()),
        ("val_fraction".into(), s.val_fraction.to_string()),
        ("stratify".into(), s.stratify.to_string()),
        ("seed".into(), s.seed.to_string()),
    ]
}

fn list(v: &str) -> impl Iterator<Item = &str> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty())
}

impl RunConfig {
    /// Sets `section.key`; unknown sections and keys are errors.
    pub fn set(&mut self, section: &str, key: &str, value: &str) -> Result<(), CliError> {
        match section {
            "model" => self.model.set(key, value).map_err(config_err),
            "pretrain" => self.pretrain.set(key, value).map_err(config_err),
            "finetune" => self.finetune.set(key, value).map_err(config_err),
            "split" => set_split(&mut self.split, key, value),
            "synth" => self.synth.set(key, value).map_err(config_err),
            "ablate" => match key {
                "variants" => {
                    self.ablate.variants = list(value).map(String::from).collect();
                    Ok(())
                }
                "seeds" => {
                    self.ablate.seeds = list(value)
                        .map(|s| s.parse())
                        .collect::<Result<_, _>>()
                        .map_err(|_| CliError::Config(format!("ablate.seeds: expected integers, got `{value}`")))?;
                    Ok(())
                }
                _ => Err(CliError::Config(format!("unknown key `ablate.{key}`"))),
            },
            "" => Err(CliError::Config(format!("key `{key}` outside any section"))),
            _ => Err(CliError::Config(format!("unknown section `{section}`"))),
        }
    }

    /// Applies a `section.key=value` override.
    pub fn set_dotted(&mut self, assignment: &str) -> Result<(), CliError> {
        let (path, value) = assignment
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("expected section.key=value, got `{assignment}`")))?;
        let (section, key) = path
            .trim()
            .split_once('.')
            .ok_or_else(|| CliError::Config(format!("expected section.key, got `{path}`")))?;
        self.set(section, key, value.trim())
    }

    /// Applies a config file's text on top of the current values.
    pub fn apply_str(&mut self, src: &str, origin: &str) -> Result<(), CliError> {
        let mut section = String::new();
        for (i, raw) in src.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            let at = |msg: String| CliError::Config(format!("{origin}:{}: {msg}", i + 1));
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| at(format!("unterminated section header `{line}`")))?;
                section = name.trim().to_string();
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| at(format!("expected `key = value`, got `{line}`")))?;
            self.set(&section, k.trim(), v.trim())
                .map_err(|e| at(e.to_string()))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let src = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        self.apply_str(&src, &path.display().to_string())
    }

    /// Sets every stage seed at once.
    pub fn set_seed(&mut self, seed: u64) {
        self.pretrain.seed = seed;
        self.finetune.seed = seed;
        self.split.seed = seed;
        self.synth.seed = seed;
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.model.validate().map_err(config_err)?;
        self.pretrain.validate().map_err(config_err)?;
        self.finetune.validate().map_err(config_err)?;
        let s = &self.split;
        if !(0.0..1.0).contains(&s.test_fraction) || !(0.0..1.0).contains(&s.val_fraction) {
            return Err(CliError::Config(format!(
                "split fractions must lie in [0, 1), got test {} and val {}",
                s.test_fraction, s.val_fraction
            )));
        }
        if let Some(v) = self.ablate.variants.iter().find(|v| VariantSpec::preset(v).is_none()) {
            return Err(CliError::Config(format!("unknown ablation variant `{v}`")));
        }
        if self.ablate.variants.is_empty() || self.ablate.seeds.is_empty() {
            return Err(CliError::Config("ablate needs at least one variant and one seed".into()));
        }
        Ok(())
    }

    /// The effective configuration in the file format, every key spelled out.
    pub fn to_ini(&self) -> String {
        let sections: [(&str, Vec<(String, String)>); 6] = [
            ("model", self.model.to_pairs()),
            ("pretrain", self.pretrain.to_pairs()),
            ("finetune", self.finetune.to_pairs()),
            ("split", split_pairs(&self.split)),
            ("synth", self.synth.to_pairs()),
            (
                "ablate",
                vec![
                    ("variants".into(), self.ablate.variants.join(",")),
                    (
                        "seeds".into(),
                        self.ablate.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(","),
                    ),
                ],
            ),
        ];
        let mut out = String::new();
        for (name, pairs) in sections {
            let _ = writeln!(out, "[{name}]");
            for (k, v) in pairs {
                let _ = writeln!(out, "{k} = {v}");
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_round_trips_through_to_ini() {
        let mut cfg = RunConfig::default();
        cfg.apply_str("[model]\nhidden = 32\nproj = 16\n\n[finetune]\ngamma = 0.25\n", "t")
            .unwrap();
        let mut back = RunConfig::default();
        back.apply_str(&cfg.to_ini(), "t").unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.model.hidden, 32);
        assert_eq!(back.finetune.gamma, 0.25);
    }

    #[test]
    fn unknown_keys_and_sections_are_rejected() {
        let mut cfg = RunConfig::default();
        for bad in [
            "[model]\ndepth = 3\n",
            "[optimizer]\nlr = 1\n",
            "hidden = 3\n",
            "[model\n",
            "[model]\nhidden\n",
            "[ablate]\nseeds = 1,x\n",
        ] {
            assert!(matches!(cfg.apply_str(bad, "t"), Err(CliError::Config(_))), "{bad}");
        }
        assert!(cfg.set_dotted("pretrain.beta").is_err());
        cfg.set_dotted("pretrain.beta=0").unwrap();
        assert_eq!(cfg.pretrain.beta, 0.0);
    }

    #[test]
    fn validation_catches_bad_values() {
        let mut cfg = RunConfig::default();
        cfg.set("split", "test_fraction", "1.5").unwrap();
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.set("ablate", "variants", "full,nope").unwrap();
        assert!(cfg.validate().is_err());
        RunConfig::default().validate().unwrap();
    }
}
