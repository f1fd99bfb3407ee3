//! The single TOML run configuration.
//!
//! Every section is optional except for the two keys that pin down an
//! experiment: `train.seed` and `scenario.env_type`. Unknown keys are
//! rejected so typos surface as errors.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::{build_action_space, Action};
use crate::error::{Error, Result};
use crate::kinematics::StepConfig;
use crate::orca::OrcaConfig;
use crate::reward::{Ablation, RewardConfig};
use crate::simulation::{ScenarioConfig, SimConfig};
use crate::training::{LookaheadConfig, TrainConfig};
use crate::valuenet::NetworkConfig;

pub const REQUIRED_KEYS: [&str; 2] = ["train.seed", "scenario.env_type"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActionConfig {
    pub n_headings: usize,
    pub dtheta_max_deg: f64,
}

impl Default for ActionConfig {
    fn default() -> Self {
        Self {
            n_headings: 10,
            dtheta_max_deg: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub episodes: usize,
    /// Master seed of the evaluation scenarios; `train.seed` when absent.
    pub seed: Option<u64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            episodes: 500,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub ablation: Ablation,
    pub train: TrainConfig,
    pub scenario: ScenarioConfig,
    pub reward: RewardConfig,
    pub sim: StepConfig,
    pub orca: OrcaConfig,
    pub actions: ActionConfig,
    pub network: NetworkConfig,
    pub eval: EvalConfig,
}

fn lookup<'a>(root: &'a toml::Value, dotted: &str) -> Option<&'a toml::Value> {
    dotted.split('.').try_fold(root, |v, k| v.get(k))
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: toml::Value = text.parse().map_err(|e| Error::parse("config", e))?;
        for key in REQUIRED_KEYS {
            if lookup(&raw, key).is_none() {
                return Err(Error::Config(format!("missing required key `{key}`")));
            }
        }
        let orca_dt_given = lookup(&raw, "orca.dt").is_some();
        let mut cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if !orca_dt_given {
            cfg.orca.dt = cfg.sim.dt;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.scenario.validate()?;
        self.reward.validate()?;
        self.network.validate()?;
        if !(self.sim.dt > 0.0 && self.sim.dt.is_finite()) {
            return Err(Error::Config(format!("sim.dt must be positive, got {}", self.sim.dt)));
        }
        if self.orca.dt != self.sim.dt {
            return Err(Error::Config(format!(
                "orca.dt ({}) must equal sim.dt ({})",
                self.orca.dt, self.sim.dt
            )));
        }
        if !(self.orca.tau > 0.0) {
            return Err(Error::Config("orca.tau must be positive".into()));
        }
        if !(self.orca.neighbor_dist > 0.0) || !(self.orca.radius_margin >= 0.0) {
            return Err(Error::Config(
                "orca.neighbor_dist must be positive and orca.radius_margin non-negative".into(),
            ));
        }
        if self.actions.n_headings == 0 || !(self.actions.dtheta_max_deg > 0.0) {
            return Err(Error::Config(
                "actions need n_headings >= 1 and dtheta_max_deg > 0".into(),
            ));
        }
        Ok(())
    }

    /// Resolved configuration as canonical TOML.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Hex SHA-256 of the canonical TOML.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn sim(&self) -> SimConfig {
        SimConfig {
            scenario: self.scenario.clone(),
            reward: self.reward,
            terms: self.ablation.terms(),
            step: self.sim,
            orca: self.orca,
        }
    }

    pub fn action_space(&self) -> Vec<Action> {
        build_action_space(
            self.scenario.v_pref,
            self.actions.n_headings,
            self.actions.dtheta_max_deg.to_radians(),
        )
    }

    pub fn lookahead(&self) -> LookaheadConfig {
        LookaheadConfig {
            terminal_cutoff: self.train.terminal_cutoff,
            ..LookaheadConfig::from_sim(&self.sim(), self.action_space(), self.train.gamma)
        }
    }

    pub fn eval_seed(&self) -> u64 {
        self.eval.seed.unwrap_or(self.train.seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulation::EnvType;

    const MINIMAL: &str = "[train]\nseed = 3\n[scenario]\nenv_type = \"concave\"\n";

    #[test]
    fn minimal_document_takes_defaults() {
        let cfg = Config::from_toml_str(MINIMAL).unwrap();
        assert_eq!(cfg.train.seed, 3);
        assert_eq!(cfg.scenario.env_type, EnvType::Concave);
        assert_eq!(cfg.reward, RewardConfig::default());
        assert_eq!(cfg.ablation, Ablation::Full);
        assert_eq!(cfg.action_space().len(), 11);
    }

    #[test]
    fn missing_required_key_is_named() {
        let err = Config::from_toml_str("[train]\nseed = 3\n").unwrap_err();
        assert!(err.to_string().contains("scenario.env_type"), "{err}");
        let err = Config::from_toml_str("[scenario]\nenv_type = \"none\"\n").unwrap_err();
        assert!(err.to_string().contains("train.seed"), "{err}");
    }

    #[test]
    fn unknown_key_is_rejected() {
        let err = Config::from_toml_str(&format!("{MINIMAL}[reward]\nalpah = 0.1\n")).unwrap_err();
        assert!(err.to_string().contains("alpah"), "{err}");
    }

    #[test]
    fn bad_value_names_field() {
        let err = Config::from_toml_str(&format!("{MINIMAL}[reward]\nd_disc = -1.0\n")).unwrap_err();
        assert!(err.to_string().contains("reward.d_disc"), "{err}");
    }

    #[test]
    fn orca_step_follows_sim_step() {
        let cfg = Config::from_toml_str(&format!("{MINIMAL}[sim]\ndt = 0.1\n")).unwrap();
        assert_eq!(cfg.orca.dt, 0.1);
        assert!(Config::from_toml_str(&format!("{MINIMAL}[sim]\ndt = 0.1\n[orca]\ndt = 0.2\n")).is_err());
    }

    #[test]
    fn hash_tracks_content_and_round_trips() {
        let a = Config::from_toml_str(MINIMAL).unwrap();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.reward.alpha = 0.2;
        assert_ne!(a.hash(), b.hash());
        let back = Config::from_toml_str(&a.to_toml()).unwrap();
        assert_eq!(back, a);
    }
}
