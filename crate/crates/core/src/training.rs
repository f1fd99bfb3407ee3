//! Imitation bootstrap from ORCA demonstrations followed by epsilon-greedy
//! V-learning with a replay buffer and a periodically synced target network.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{rotate_to_robot_frame, Action, JointState, ObservableState};
use crate::error::{Error, Result};
use crate::kinematics::{propagate_robot, StepConfig};
use crate::optim::Adam;
use crate::reward::{reached_goal, total_reward, RewardConfig, RewardTerms};
use crate::rng::{rng_for, SimRng, Stream};
use crate::simulation::{
    generate_scenario, run_episode, EpisodeRecord, Observation, OrcaPolicy, Outcome, Policy, SimConfig,
};
use crate::valuenet::{FeatureBatch, NetworkConfig, StateFeatures, ValueNetParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub il_episodes: usize,
    pub il_epochs: usize,
    pub il_lr: f64,
    pub il_batch_size: usize,
    pub rl_episodes: usize,
    pub rl_lr: f64,
    pub gamma: f64,
    pub eps_start: f64,
    pub eps_end: f64,
    pub eps_decay_episodes: usize,
    pub replay_capacity: usize,
    pub batch_size: usize,
    /// Gradient steps after every RL episode.
    pub train_batches: usize,
    pub target_sync_episodes: usize,
    /// Start the replay buffer with the demonstration data.
    pub keep_demonstrations: bool,
    /// Score look-ahead candidates that end in a collision or at the goal by
    /// their reward alone, i.e. with a terminal value of zero.
    pub terminal_cutoff: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            il_episodes: 3000,
            il_epochs: 50,
            il_lr: 0.01,
            il_batch_size: 100,
            rl_episodes: 10_000,
            rl_lr: 1e-4,
            gamma: 0.9,
            eps_start: 0.5,
            eps_end: 0.1,
            eps_decay_episodes: 4000,
            replay_capacity: 100_000,
            batch_size: 100,
            train_batches: 100,
            target_sync_episodes: 50,
            keep_demonstrations: true,
            terminal_cutoff: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!(
                "train.gamma must lie in (0, 1), got {}",
                self.gamma
            )));
        }
        if !(self.eps_start >= self.eps_end && self.eps_end >= 0.0 && self.eps_start <= 1.0) {
            return Err(Error::Config("train needs 1 >= eps_start >= eps_end >= 0".into()));
        }
        for (name, v) in [("train.il_lr", self.il_lr), ("train.rl_lr", self.rl_lr)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        for (name, v) in [
            ("train.il_batch_size", self.il_batch_size),
            ("train.batch_size", self.batch_size),
            ("train.replay_capacity", self.replay_capacity),
            ("train.target_sync_episodes", self.target_sync_episodes),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }
}

/// Linear decay from `eps_start` to `eps_end`, then constant.
pub fn epsilon_at(episode: usize, cfg: &TrainConfig) -> f64 {
    if cfg.eps_decay_episodes == 0 || episode >= cfg.eps_decay_episodes {
        return cfg.eps_end;
    }
    let frac = episode as f64 / cfg.eps_decay_episodes as f64;
    cfg.eps_start + (cfg.eps_end - cfg.eps_start) * frac
}

/// Per-step discount `gamma^(dt * v_pref)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscountRule {
    pub gamma: f64,
    pub v_pref: f64,
    pub dt: f64,
}

impl DiscountRule {
    pub fn factor(&self) -> f64 {
        self.gamma.powf(self.dt * self.v_pref)
    }
}

pub fn td_target(reward: f64, next_value: f64, terminal: bool, rule: &DiscountRule) -> f64 {
    if terminal {
        reward
    } else {
        reward + rule.factor() * next_value
    }
}

/// A state and its regression target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experience {
    pub features: StateFeatures,
    pub target: f64,
}

/// Anything that can score a batch of encoded states.
pub trait ValueFunction: Sync {
    fn network(&self) -> &NetworkConfig;
    fn values(&self, states: &[StateFeatures]) -> Vec<f64>;
}

impl ValueFunction for ValueNetParams {
    fn network(&self) -> &NetworkConfig {
        self.config()
    }

    fn values(&self, states: &[StateFeatures]) -> Vec<f64> {
        if states.is_empty() {
            return Vec::new();
        }
        self.predict(&FeatureBatch::new(states, self.config()))
    }
}

pub fn encode_state(state: &JointState, cfg: &NetworkConfig) -> StateFeatures {
    StateFeatures::from_rotated(&rotate_to_robot_frame(state), cfg)
}

/// Settings shared by every one-step look-ahead decision.
#[derive(Debug, Clone, PartialEq)]
pub struct LookaheadConfig {
    pub actions: Vec<Action>,
    pub reward: RewardConfig,
    pub terms: RewardTerms,
    pub step: StepConfig,
    pub rule: DiscountRule,
    pub terminal_cutoff: bool,
}

impl LookaheadConfig {
    pub fn from_sim(sim: &SimConfig, actions: Vec<Action>, gamma: f64) -> Self {
        Self {
            actions,
            reward: sim.reward,
            terms: sim.terms,
            step: sim.step,
            rule: DiscountRule {
                gamma,
                v_pref: sim.scenario.v_pref,
                dt: sim.step.dt,
            },
            terminal_cutoff: false,
        }
    }
}

/// State after `action`, humans carried forward at constant velocity.
pub fn predict_next(state: &JointState, action: Action, step: &StepConfig) -> JointState {
    JointState {
        robot: propagate_robot(&state.robot, action, step),
        humans: state
            .humans
            .iter()
            .map(|h| ObservableState {
                px: h.px + h.vx * step.dt,
                py: h.py + h.vy * step.dt,
                ..*h
            })
            .collect(),
    }
}

/// Epsilon-greedy one-step look-ahead: maximise `R(s, a) + discount * V(s')`.
/// One uniform draw decides exploration; a second picks the random action.
pub fn select_action<V: ValueFunction + ?Sized>(
    value: &V,
    obs: &Observation<'_>,
    epsilon: f64,
    cfg: &LookaheadConfig,
    rng: &mut SimRng,
) -> Action {
    assert!(!cfg.actions.is_empty(), "empty action space");
    if rng.gen::<f64>() < epsilon {
        return cfg.actions[rng.gen_range(0..cfg.actions.len())];
    }
    let t_next = obs.t + cfg.step.dt;
    let mut rewards = Vec::with_capacity(cfg.actions.len());
    let mut terminal = Vec::with_capacity(cfg.actions.len());
    let mut next_states = Vec::with_capacity(cfg.actions.len());
    for &a in &cfg.actions {
        let next = predict_next(obs.state, a, &cfg.step);
        rewards.push(total_reward(obs.state, &next, a, obs.static_flags, t_next, &cfg.reward, cfg.terms).total);
        terminal.push(cfg.terminal_cutoff && (next.min_clearance() < 0.0 || reached_goal(&next, &cfg.reward)));
        next_states.push(encode_state(&next, value.network()));
    }
    let values = value.values(&next_states);
    let discount = cfg.rule.factor();
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (i, (r, v)) in rewards.iter().zip(&values).enumerate() {
        let score = if terminal[i] { *r } else { r + discount * v };
        if score > best_score {
            best_score = score;
            best = i;
        }
    }
    cfg.actions[best]
}

/// Robot policy backed by a value function.
pub struct ValueNetPolicy<'a, V: ValueFunction + ?Sized> {
    pub value: &'a V,
    pub epsilon: f64,
    pub lookahead: &'a LookaheadConfig,
}

impl<V: ValueFunction + ?Sized> Policy for ValueNetPolicy<'_, V> {
    fn act(&self, obs: &Observation<'_>, rng: &mut SimRng) -> Action {
        select_action(self.value, obs, self.epsilon, self.lookahead, rng)
    }
}

/// Joint states visited before each action of an episode.
pub fn visited_states(record: &EpisodeRecord) -> Vec<JointState> {
    let mut out = Vec::with_capacity(record.steps.len());
    out.push(record.initial.clone());
    for s in &record.steps[..record.steps.len().saturating_sub(1)] {
        out.push(JointState {
            robot: s.robot,
            humans: s.humans.clone(),
        });
    }
    out
}

/// Discounted return-to-go for every step of an episode.
pub fn discounted_returns(rewards: &[f64], rule: &DiscountRule) -> Vec<f64> {
    let f = rule.factor();
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (k, r) in rewards.iter().enumerate().rev() {
        acc = r + f * acc;
        out[k] = acc;
    }
    out
}

/// Demonstration summary, one per episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoSummary {
    pub episode: usize,
    pub outcome: Outcome,
    pub steps: usize,
}

/// Drives the robot with projected ORCA for `n` episodes and labels every
/// visited state with its discounted return. Episode `i` uses the
/// demonstration stream of `seed`.
pub fn collect_demonstrations(
    n: usize,
    seed: u64,
    sim: &SimConfig,
    actions: &[Action],
    rule: &DiscountRule,
    net: &NetworkConfig,
) -> Result<(Vec<Experience>, Vec<DemoSummary>)> {
    let policy = OrcaPolicy {
        actions: actions.to_vec(),
        orca: sim.orca,
    };
    let mut data = Vec::new();
    let mut summary = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = rng_for(seed, Stream::Demonstration, i as u64);
        let scenario = generate_scenario(&sim.scenario, &mut rng)?;
        let record = run_episode(&policy, &scenario, sim, &mut rng)?;
        let rewards: Vec<f64> = record.steps.iter().map(|s| s.reward.total).collect();
        let returns = discounted_returns(&rewards, rule);
        for (state, target) in visited_states(&record).iter().zip(returns) {
            data.push(Experience {
                features: encode_state(state, net),
                target,
            });
        }
        summary.push(DemoSummary {
            episode: i,
            outcome: record.outcome,
            steps: record.steps.len(),
        });
    }
    Ok((data, summary))
}

fn check_loss(loss: f64, context: impl FnOnce() -> String) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence(format!("non-finite loss {loss} at {}", context())))
    }
}

fn fit_batch(params: &mut ValueNetParams, opt: &mut Adam, batch: &[&Experience]) -> f64 {
    let fb = FeatureBatch::new(batch.iter().map(|e| &e.features), params.config());
    let targets: Vec<f64> = batch.iter().map(|e| e.target).collect();
    let (loss, grad) = params.loss_and_gradient(&fb, &targets);
    opt.step(params.params_mut(), &grad);
    loss
}

/// Mean squared error of `params` over `data`.
pub fn dataset_loss(params: &ValueNetParams, data: &[Experience]) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for chunk in data.chunks(256) {
        let fb = FeatureBatch::new(chunk.iter().map(|e| &e.features), params.config());
        let v = params.predict(&fb);
        total += v.iter().zip(chunk).map(|(v, e)| (v - e.target).powi(2)).sum::<f64>();
    }
    total / data.len() as f64
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "snake_case")]
pub enum LogLine {
    Demonstrations {
        episodes: usize,
        experiences: usize,
        success: usize,
        collision: usize,
        timeout: usize,
    },
    Imitation {
        epoch: usize,
        loss: f64,
    },
    Rl {
        episode: usize,
        outcome: Outcome,
        #[serde(rename = "return")]
        total_return: f64,
        steps: usize,
        td_loss: Option<f64>,
        epsilon: f64,
        nav_time: Option<f64>,
    },
}

/// Mean-squared-error regression with Adam over shuffled mini-batches.
/// Returns the mean batch loss of every epoch.
pub fn imitation_fit(
    params: &mut ValueNetParams,
    data: &[Experience],
    cfg: &TrainConfig,
    log: &mut dyn FnMut(&LogLine) -> Result<()>,
) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::Empty("imitation dataset"));
    }
    let mut opt = Adam::new(params.len(), cfg.il_lr);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut losses = Vec::with_capacity(cfg.il_epochs);
    for epoch in 0..cfg.il_epochs {
        let mut rng = rng_for(cfg.seed, Stream::Shuffle, epoch as u64);
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut n = 0;
        for chunk in order.chunks(cfg.il_batch_size) {
            let batch: Vec<&Experience> = chunk.iter().map(|&i| &data[i]).collect();
            let loss = fit_batch(params, &mut opt, &batch);
            check_loss(loss, || format!("imitation epoch {epoch}"))?;
            sum += loss;
            n += 1;
        }
        let loss = sum / n as f64;
        log(&LogLine::Imitation { epoch, loss })?;
        losses.push(loss);
    }
    Ok(losses)
}

/// Fixed-capacity buffer that evicts the oldest experience first.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Experience>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
        }
    }

    pub fn push(&mut self, e: Experience) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(e);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Experience> {
        self.items.iter()
    }

    /// Uniform draw with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<&Experience> {
        (0..n)
            .map(|_| &self.items[rng.gen_range(0..self.items.len())])
            .collect()
    }
}

/// V-learning. `replay` may arrive pre-filled (e.g. with demonstrations).
pub fn rl_train(
    params: &mut ValueNetParams,
    replay: &mut ReplayBuffer,
    cfg: &TrainConfig,
    sim: &SimConfig,
    lookahead: &LookaheadConfig,
    log: &mut dyn FnMut(&LogLine) -> Result<()>,
) -> Result<()> {
    let mut target = params.clone();
    let mut opt = Adam::new(params.len(), cfg.rl_lr);
    for episode in 0..cfg.rl_episodes {
        let epsilon = epsilon_at(episode, cfg);
        let mut rng = rng_for(cfg.seed, Stream::RlScenario, episode as u64);
        let scenario = generate_scenario(&sim.scenario, &mut rng)?;
        let mut explore = rng_for(cfg.seed, Stream::Exploration, episode as u64);
        let policy = ValueNetPolicy {
            value: &*params,
            epsilon,
            lookahead,
        };
        let record = run_episode(&policy, &scenario, sim, &mut explore)?;

        let states = visited_states(&record);
        let next: Vec<StateFeatures> = record
            .steps
            .iter()
            .map(|s| {
                encode_state(
                    &JointState {
                        robot: s.robot,
                        humans: s.humans.clone(),
                    },
                    params.config(),
                )
            })
            .collect();
        let next_values = target.values(&next);
        let last = record.steps.len() - 1;
        for (k, (s, step)) in states.iter().zip(&record.steps).enumerate() {
            let y = td_target(step.reward.total, next_values[k], k == last, &lookahead.rule);
            replay.push(Experience {
                features: encode_state(s, params.config()),
                target: y,
            });
        }

        let mut td_loss = None;
        if replay.len() >= cfg.batch_size && cfg.train_batches > 0 {
            let mut sample_rng = rng_for(cfg.seed, Stream::Shuffle, (1u64 << 32) + episode as u64);
            let mut sum = 0.0;
            for _ in 0..cfg.train_batches {
                let batch = replay.sample(cfg.batch_size, &mut sample_rng);
                let loss = fit_batch(params, &mut opt, &batch);
                check_loss(loss, || format!("RL episode {episode}"))?;
                sum += loss;
            }
            td_loss = Some(sum / cfg.train_batches as f64);
        }
        if (episode + 1) % cfg.target_sync_episodes == 0 {
            target = params.clone();
        }
        log(&LogLine::Rl {
            episode,
            outcome: record.outcome,
            total_return: record.total_return(),
            steps: record.steps.len(),
            td_loss,
            epsilon,
            nav_time: record.nav_time,
        })?;
    }
    Ok(())
}
