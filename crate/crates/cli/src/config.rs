//! Configuration file schema. Every section and every field is optional;
//! unknown keys are rejected.

use std::path::Path;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use robustsplat::optim::{AdaptConfig, FitConfig};
use robustsplat::{CorruptionSpec, RenderOptions, SelectionRule};

/// Scene and camera layout of a synthetic dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub primitives: usize,
    pub views: usize,
    pub width: usize,
    pub height: usize,
    pub extent: f64,
    pub sh_degree: usize,
    pub seed: u64,
    /// Position noise (fraction of extent) of the perturbed initial scene.
    pub init_noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { primitives: 50, views: 40, width: 64, height: 64, extent: 1.0, sh_degree: 3, seed: 7, init_noise: 0.02 }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> anyhow::Result<()> {
        if self.primitives == 0 || self.views == 0 {
            bail!("synth.primitives and synth.views must be at least 1");
        }
        if self.width < 11 || self.height < 11 {
            bail!("synth.width and synth.height must be at least 11 (SSIM window)");
        }
        if !(self.extent > 0.0 && self.extent.is_finite()) {
            bail!("synth.extent must be positive");
        }
        if self.sh_degree > 3 {
            bail!("synth.sh_degree must be at most 3");
        }
        if !(self.init_noise >= 0.0) {
            bail!("synth.init_noise must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub synth: SynthConfig,
    pub corruption: CorruptionSpec,
    pub render: RenderOptions,
    pub fit: FitConfig,
    pub adapt: AdaptConfig,
    pub selection: SelectionRule,
}

impl Config {
    /// Loads `.json` files as JSON and anything else as TOML; `None` gives defaults.
    pub fn load(path: Option<&Path>) -> anyhow::Result<Config> {
        let Some(path) = path else { return Ok(Config::default()) };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: Config = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        } else {
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        };
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.synth.validate()?;
        self.corruption.validate().map_err(|e| anyhow::anyhow!("corruption: {e}"))?;
        self.render.validate().map_err(|e| anyhow::anyhow!("render: {e}"))?;
        self.fit.validate().map_err(|e| anyhow::anyhow!("fit: {e}"))?;
        if self.adapt.steps == 0 {
            bail!("adapt.steps must be at least 1");
        }
        if (self.adapt.lambda_l1 + self.adapt.lambda_dssim - 1.0).abs() > 1e-9 {
            bail!("adapt.lambda_l1 and adapt.lambda_dssim must sum to 1");
        }
        if self.selection.k == 0 {
            bail!("selection.k must be at least 1");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        let err = toml::from_str::<Config>("[fit]\niteratons = 5\n").unwrap_err();
        assert!(err.to_string().contains("iteratons"));
        assert!(toml::from_str::<Config>("[nope]\n").is_err());
    }

    #[test]
    fn partial_documents_fill_defaults() {
        let cfg: Config = toml::from_str("[fit]\niterations = 5\n[selection]\nmode = \"disjunctive\"\n").unwrap();
        assert_eq!(cfg.fit.iterations, 5);
        assert_eq!(cfg.fit.lambda_l1, FitConfig::default().lambda_l1);
        assert_eq!(cfg.selection.mode, robustsplat::ConflictMode::Disjunctive);
        assert_eq!(cfg.synth, SynthConfig::default());
        cfg.validate().unwrap();
    }

    #[test]
    fn json_and_toml_agree() {
        let a: Config = toml::from_str("[synth]\nviews = 12\n").unwrap();
        let b: Config = serde_json::from_str(r#"{"synth": {"views": 12}}"#).unwrap();
        assert_eq!(a, b);
    }
}
