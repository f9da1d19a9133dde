//! Effective-configuration handling: defaults, optional TOML file, flag
//! overrides. The merged result is embedded (and hashed) in every run
//! manifest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use uiforge_core::elements::FilterConfig;
use uiforge_core::foresight::MatchConfig;
use uiforge_core::screens::ProviderConfig;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Fixture,
    Live,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForgeConfig {
    pub min_frequency: u64,
    pub min_length: usize,
    pub skip_color_check: bool,
    /// Apply the frequency threshold to screen-prompt elements as well.
    pub apply_frequency_to_prompts: bool,
    pub enlarge_steps: u32,
    pub enlarge_pct: f64,
    pub banner_pct: f64,
    pub synthetic_px: f64,
    pub provider_kind: ProviderKind,
    pub fixture_path: Option<PathBuf>,
    pub provider: ProviderConfig,
    /// Overrides the built-in generic-word list when set.
    pub generic_words: Option<Vec<String>>,
    /// Ignore the persistent caption cache and query the provider afresh
    /// (an augmentation escape hatch; the refreshed captions replace the
    /// cache entries).
    pub requery_captions: bool,
}

impl Default for ForgeConfig {
    fn default() -> Self {
        ForgeConfig {
            min_frequency: 5,
            min_length: 2,
            skip_color_check: false,
            apply_frequency_to_prompts: false,
            enlarge_steps: 5,
            enlarge_pct: 0.01,
            banner_pct: 0.03,
            synthetic_px: 65.0,
            provider_kind: ProviderKind::Fixture,
            fixture_path: None,
            provider: ProviderConfig::default(),
            generic_words: None,
            requery_captions: false,
        }
    }
}

impl ForgeConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(ForgeConfig::default());
        };
        let body = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&body)
            .map_err(|e| CliError::Config(format!("bad config {}: {e}", path.display())))
    }

    pub fn filter(&self) -> FilterConfig {
        let mut cfg = FilterConfig {
            min_frequency: self.min_frequency,
            min_length: self.min_length,
            ..FilterConfig::default()
        };
        if let Some(words) = &self.generic_words {
            cfg.generic_words = words.iter().cloned().collect();
        }
        cfg
    }

    pub fn match_config(&self) -> MatchConfig {
        MatchConfig {
            enlarge_steps: self.enlarge_steps,
            enlarge_pct: self.enlarge_pct,
            banner_pct: self.banner_pct,
            synthetic_px: self.synthetic_px,
        }
    }

    pub fn effective_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serialization cannot fail")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_documented_values() {
        let c = ForgeConfig::default();
        assert_eq!(c.min_frequency, 5);
        assert_eq!(c.enlarge_steps, 5);
        assert_eq!(c.enlarge_pct, 0.01);
        assert_eq!(c.banner_pct, 0.03);
        assert_eq!(c.synthetic_px, 65.0);
    }

    #[test]
    fn toml_overrides_defaults() {
        let parsed: ForgeConfig = toml::from_str(
            r#"
            min_frequency = 2
            enlarge_steps = 3

            [provider]
            model_name = "test-model"
            "#,
        )
        .unwrap();
        assert_eq!(parsed.min_frequency, 2);
        assert_eq!(parsed.enlarge_steps, 3);
        assert_eq!(parsed.provider.model_name, "test-model");
        assert_eq!(parsed.min_length, 2); // untouched default
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<ForgeConfig>("not_a_setting = 1").is_err());
    }
}
