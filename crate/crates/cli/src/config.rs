use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use qacal_core::dif::DifConfig;
use qacal_core::genpipe::GenConfig;
use qacal_core::CalibrationConfig;
use serde::{Deserialize, Serialize};

pub const DEFAULT_ENDPOINT: &str = "https://api.openai.com/v1/chat/completions";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderConfig {
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub timeout_secs: u64,
    pub retry_limit: usize,
    pub n_per_snippet: usize,
    pub max_in_flight: usize,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        let g = GenConfig::default();
        Self {
            endpoint: DEFAULT_ENDPOINT.into(),
            model: g.model,
            temperature: g.temperature,
            timeout_secs: 60,
            retry_limit: g.retry_limit,
            n_per_snippet: g.n_per_snippet,
            max_in_flight: g.max_in_flight,
        }
    }
}

impl ProviderConfig {
    pub fn gen_config(&self) -> GenConfig {
        GenConfig {
            model: self.model.clone(),
            temperature: self.temperature,
            retry_limit: self.retry_limit,
            n_per_snippet: self.n_per_snippet,
            max_in_flight: self.max_in_flight,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DifSettings {
    pub delta_flag_threshold: f64,
    pub alpha: f64,
}

impl Default for DifSettings {
    fn default() -> Self {
        let d = DifConfig::default();
        Self {
            delta_flag_threshold: d.delta_flag_threshold,
            alpha: d.alpha,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub context_dir: Option<PathBuf>,
    pub fixtures: Option<PathBuf>,
}

/// Settings read from `--config`; command-line flags take precedence.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub provider: ProviderConfig,
    pub calibration: CalibrationConfig,
    pub dif: DifSettings,
    pub paths: PathsConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let mut config: RunConfig = toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?;
        // relative paths are taken from the config file's directory
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut config.paths.context_dir, &mut config.paths.fixtures].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if !(0.0..=2.0).contains(&self.provider.temperature) {
            bail!("temperature {} outside [0, 2]", self.provider.temperature);
        }
        self.calibration.validate()?;
        DifConfig {
            delta_flag_threshold: self.dif.delta_flag_threshold,
            alpha: self.dif.alpha,
            ..DifConfig::default()
        }
        .validate()?;
        for p in [&self.paths.context_dir, &self.paths.fixtures].into_iter().flatten() {
            if !p.exists() {
                bail!("configured path {} does not exist", p.display());
            }
        }
        Ok(())
    }
}
