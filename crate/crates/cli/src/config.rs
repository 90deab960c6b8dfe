//! Run configuration: a TOML file with command-line overrides on top.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use rms_core::backend::NoiseSchedule;
use rms_core::domain::DifficultyTier;
use rms_core::evolution::EvolutionConfig;
use rms_core::synth::{SynthConfig, TierWeights};
use rms_core::world::{AgentErrorProfile, WorldSpec};

/// A problem with the configuration rather than with the run; exits 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn config_error(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Oracle,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    /// Injected error rates of the domain-specific oracle.
    pub ds_noise: NoiseSchedule,
    /// Injected error rate of the general-purpose oracle.
    pub gp_noise: f64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self { ds_noise: NoiseSchedule::uniform(0.0), gp_noise: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefluxConfig {
    pub episodes: usize,
    pub agent: AgentErrorProfile,
}

impl Default for RefluxConfig {
    fn default() -> Self {
        Self { episodes: 200, agent: EvolutionConfig::default().agent }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub addr: String,
    pub capacity: usize,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self { addr: "127.0.0.1:8080".to_string(), capacity: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Directory of an exported world; when absent, `world_spec` is
    /// generated in memory.
    pub world: Option<PathBuf>,
    pub world_spec: WorldSpec,
    pub out: PathBuf,
    pub backend: BackendKind,
    pub endpoint: Option<String>,
    pub workers: Option<usize>,
    pub strict_schema: bool,
    pub synth: SynthConfig,
    pub backends: BackendConfig,
    pub reflux: RefluxConfig,
    pub evolution: EvolutionConfig,
    pub server: ServerConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            world: None,
            world_spec: WorldSpec::default(),
            out: PathBuf::from("out"),
            backend: BackendKind::Oracle,
            endpoint: None,
            workers: None,
            strict_schema: false,
            synth: SynthConfig::default(),
            backends: BackendConfig::default(),
            reflux: RefluxConfig::default(),
            evolution: EvolutionConfig::default(),
            server: ServerConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_error(format!("config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| config_error(format!("config {}: {e}", path.display())))
    }
}

/// Parses `tier=weight` pairs into a full weight map; tiers not named get
/// weight 0.
pub fn parse_tier_weights(pairs: &[String]) -> anyhow::Result<TierWeights> {
    let mut map: BTreeMap<DifficultyTier, f64> = DifficultyTier::ALL.into_iter().map(|t| (t, 0.0)).collect();
    for pair in pairs {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| config_error(format!("tier-weights: `{pair}` is not tier=weight")))?;
        let tier = DifficultyTier::parse(k.trim())
            .ok_or_else(|| config_error(format!("tier-weights: unknown tier `{k}`")))?;
        let w: f64 = v
            .trim()
            .parse()
            .map_err(|_| config_error(format!("tier-weights.{k}: `{v}` is not a number")))?;
        map.insert(tier, w);
    }
    Ok(TierWeights(map))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tier_weights_replace_the_whole_map() {
        let w = parse_tier_weights(&["hard=1".to_string()]).unwrap();
        assert_eq!(w.get(DifficultyTier::HardNegative), 1.0);
        assert_eq!(w.get(DifficultyTier::Positive), 0.0);
        assert!(parse_tier_weights(&["bogus=1".to_string()]).is_err());
        assert!(parse_tier_weights(&["hard".to_string()]).is_err());
    }

    #[test]
    fn partial_toml_fills_defaults() {
        let cfg: RunConfig = toml::from_str("seed = 4\n[world_spec]\nn_apps = 5\n[evolution]\nrounds = 2\n").unwrap();
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.world_spec.n_apps, 5);
        assert_eq!(cfg.world_spec.n_tasks_per_app, WorldSpec::default().n_tasks_per_app);
        assert_eq!(cfg.evolution.rounds, 2);
        assert!(toml::from_str::<RunConfig>("sed = 4").is_err());
    }
}
