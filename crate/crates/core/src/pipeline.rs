//! End-to-end runs built from a [`Config`]: demonstrations, two-stage
//! training and evaluation.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::evaluation::{run_evaluation, MetricsReport};
use crate::rng::{rng_for, Stream};
use crate::simulation::{EpisodeRecord, OrcaPolicy, Outcome, Policy, StraightPolicy};
use crate::training::{
    collect_demonstrations, imitation_fit, rl_train, Experience, LogLine, ReplayBuffer, ValueNetPolicy,
};
use crate::valuenet::ValueNetParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Net,
    Orca,
    Straight,
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "net" => Ok(PolicyKind::Net),
            "orca" => Ok(PolicyKind::Orca),
            "straight" => Ok(PolicyKind::Straight),
            other => Err(Error::Config(format!(
                "unknown policy {other:?} (expected net, orca or straight)"
            ))),
        }
    }
}

/// Collects the configured number of demonstration episodes.
pub fn demonstrations(cfg: &Config, log: &mut dyn FnMut(&LogLine) -> Result<()>) -> Result<Vec<Experience>> {
    let (data, summary) = collect_demonstrations(
        cfg.train.il_episodes,
        cfg.train.seed,
        &cfg.sim(),
        &cfg.action_space(),
        &cfg.lookahead().rule,
        &cfg.network,
    )?;
    let count = |o: Outcome| summary.iter().filter(|s| s.outcome == o).count();
    log(&LogLine::Demonstrations {
        episodes: summary.len(),
        experiences: data.len(),
        success: count(Outcome::Success),
        collision: count(Outcome::Collision),
        timeout: count(Outcome::Timeout),
    })?;
    Ok(data)
}

/// Network after each training stage.
#[derive(Debug, Clone)]
pub struct Trained {
    pub imitation: ValueNetParams,
    pub final_params: ValueNetParams,
}

/// Seeded initialisation and the imitation stage. Also returns the
/// demonstrations for reuse by [`reinforce`].
pub fn imitation(
    cfg: &Config,
    log: &mut dyn FnMut(&LogLine) -> Result<()>,
) -> Result<(ValueNetParams, Vec<Experience>)> {
    let mut params = ValueNetParams::init(cfg.network.clone(), &mut rng_for(cfg.train.seed, Stream::Init, 0))?;
    let demos = demonstrations(cfg, log)?;
    if !demos.is_empty() {
        imitation_fit(&mut params, &demos, &cfg.train, log)?;
    }
    Ok((params, demos))
}

/// V-learning from `params`; the replay buffer starts with `demos` when
/// `keep_demonstrations` is set.
pub fn reinforce(
    cfg: &Config,
    mut params: ValueNetParams,
    demos: Vec<Experience>,
    log: &mut dyn FnMut(&LogLine) -> Result<()>,
) -> Result<ValueNetParams> {
    let mut replay = ReplayBuffer::new(cfg.train.replay_capacity);
    if cfg.train.keep_demonstrations {
        for e in demos {
            replay.push(e);
        }
    }
    rl_train(&mut params, &mut replay, &cfg.train, &cfg.sim(), &cfg.lookahead(), log)?;
    Ok(params)
}

/// Both stages back to back.
pub fn train(cfg: &Config, log: &mut dyn FnMut(&LogLine) -> Result<()>) -> Result<Trained> {
    let (imitation, demos) = imitation(cfg, log)?;
    let final_params = reinforce(cfg, imitation.clone(), demos, log)?;
    Ok(Trained {
        imitation,
        final_params,
    })
}

/// Greedy evaluation of the chosen policy. `params` is required for
/// [`PolicyKind::Net`] and ignored otherwise.
pub fn evaluate(
    cfg: &Config,
    kind: PolicyKind,
    params: Option<&ValueNetParams>,
    episodes: usize,
    seed: u64,
    workers: usize,
) -> Result<(MetricsReport, Vec<EpisodeRecord>)> {
    let sim = cfg.sim();
    let hash = cfg.hash();
    let lookahead = cfg.lookahead();
    let orca;
    let straight;
    let net;
    let policy: &dyn Policy = match kind {
        PolicyKind::Net => {
            let p = params.ok_or_else(|| Error::Config("policy `net` needs a checkpoint".into()))?;
            p.check_config(&cfg.network)?;
            net = ValueNetPolicy {
                value: p,
                epsilon: 0.0,
                lookahead: &lookahead,
            };
            &net
        }
        PolicyKind::Orca => {
            orca = OrcaPolicy {
                actions: cfg.action_space(),
                orca: cfg.orca,
            };
            &orca
        }
        PolicyKind::Straight => {
            straight = StraightPolicy {
                actions: cfg.action_space(),
            };
            &straight
        }
    };
    run_evaluation(policy, episodes, seed, &sim, &hash, workers)
}
