//! Clipped-surrogate PPO with GAE and an entropy bonus.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{EnvId, Observation};
use crate::nn::{log_softmax, AdamState, ForwardCache, Mlp, MlpSpec, NnError, OutputGrad, PolicyParams};
use crate::rollout::TrajectoryBatch;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PpoError {
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("non-finite loss")]
    NonFiniteLoss,
    #[error("batch collected under policy version {batch}, learner holds {learner}")]
    StalePolicyVersion { batch: u64, learner: u64 },
    #[error("invalid PPO config: {0}")]
    InvalidConfig(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error(transparent)]
    Network(#[from] NnError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpoConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub clip: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub learning_rate: f64,
    pub epochs_per_batch: usize,
    pub minibatch_size: usize,
    /// Steps per worker per collection round.
    pub horizon: usize,
    pub workers: usize,
    pub total_steps: u64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lambda: 0.95,
            clip: 0.2,
            entropy_coef: 0.01,
            value_coef: 0.5,
            learning_rate: 3e-4,
            epochs_per_batch: 3,
            minibatch_size: 256,
            horizon: 128,
            workers: 4,
            total_steps: 50_000,
        }
    }
}

impl PpoConfig {
    pub fn for_env(env_id: EnvId) -> Self {
        match env_id {
            EnvId::GridWorld => Self::default(),
            EnvId::WallJumper => Self { total_steps: 200_000, ..Self::default() },
        }
    }

    pub fn batch_size(&self) -> usize {
        self.horizon * self.workers
    }

    pub fn validate(&self) -> Result<(), PpoError> {
        let bad = |what: &str| Err(PpoError::InvalidConfig(what.to_string()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0,1]");
        }
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return bad("lambda must lie in (0,1]");
        }
        if self.clip.is_nan() || self.clip <= 0.0 {
            return bad("clip must be positive");
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 || self.entropy_coef < 0.0 || self.value_coef < 0.0 {
            return bad("coefficients must be non-negative and learning rate positive");
        }
        if self.minibatch_size == 0 || self.horizon == 0 || self.workers == 0 {
            return bad("minibatch size, horizon and workers must be positive");
        }
        if self.total_steps == 0 {
            return bad("total_steps must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Observation,
    pub action: usize,
    pub reward: f64,
    pub terminal: bool,
    pub log_prob: f64,
    pub value: f64,
    pub difficulty: u32,
}

/// Generalized advantage estimation over one contiguous segment.
///
/// `terminals[t]` cuts bootstrapping after step `t`; `bootstrap_value` is the
/// value estimate of the observation following the last step.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    terminals: &[bool],
    bootstrap_value: f64,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>), PpoError> {
    let n = rewards.len();
    if values.len() != n || terminals.len() != n {
        return Err(PpoError::LengthMismatch(format!(
            "rewards {n}, values {}, terminals {}",
            values.len(),
            terminals.len()
        )));
    }
    let mut advantages = vec![0.0; n];
    let mut next_value = bootstrap_value;
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let cont = if terminals[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * cont - values[t];
        next_adv = delta + gamma * lambda * cont * next_adv;
        advantages[t] = next_adv;
        next_value = values[t];
    }
    let returns = advantages.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((advantages, returns))
}

/// Rescales to zero mean and unit standard deviation. Returns `false` (and
/// only centers) when the standard deviation falls below `1e-8`.
pub fn normalize_advantages(advantages: &mut [f64]) -> bool {
    if advantages.is_empty() {
        return false;
    }
    let n = advantages.len() as f64;
    let mean = advantages.iter().sum::<f64>() / n;
    let var = advantages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    let scaled = std >= 1e-8;
    for a in advantages.iter_mut() {
        *a -= mean;
        if scaled {
            *a /= std;
        }
    }
    scaled
}

#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub obs: &'a [f64],
    pub action: usize,
    pub old_log_prob: f64,
    pub advantage: f64,
    pub ret: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub loss: f64,
    pub gradient: Vec<f64>,
    pub stats: ObjectiveStats,
}

/// Mean clipped-surrogate loss with value and entropy terms, and its exact
/// gradient with respect to the flat parameters.
///
/// `loss = -E[min(r·A, clip(r)·A)] + value_coef·E[(V - R)²] - entropy_coef·E[H]`
pub fn ppo_objective(
    mlp: &Mlp,
    params: &[f64],
    samples: &[Sample<'_>],
    config: &PpoConfig,
) -> Result<Objective, PpoError> {
    if samples.is_empty() {
        return Err(PpoError::EmptyBatch);
    }
    let n = samples.len() as f64;
    let mut grad = vec![0.0; mlp.param_count()];
    let mut cache = ForwardCache::default();
    let mut stats = ObjectiveStats::default();
    let mut clipped = 0usize;

    for s in samples {
        mlp.forward_cached(params, s.obs, &mut cache)?;
        let out = cache.output.as_ref().expect("forward output");
        let log_probs = log_softmax(&out.logits);
        let probs: Vec<f64> = log_probs.iter().map(|l| l.exp()).collect();
        let log_prob = log_probs[s.action];
        let ratio = (log_prob - s.old_log_prob).exp();
        let clipped_ratio = ratio.clamp(1.0 - config.clip, 1.0 + config.clip);
        let unclipped_obj = ratio * s.advantage;
        let clipped_obj = clipped_ratio * s.advantage;
        let surrogate = unclipped_obj.min(clipped_obj);
        let entropy: f64 = -probs.iter().zip(&log_probs).map(|(p, l)| p * l).sum::<f64>();

        stats.policy_loss -= surrogate / n;
        stats.value_loss += (out.value - s.ret).powi(2) / n;
        stats.entropy += entropy / n;
        stats.approx_kl += (s.old_log_prob - log_prob) / n;
        if clipped_obj < unclipped_obj {
            clipped += 1;
        }

        let mut d_logits = vec![0.0; probs.len()];
        // d(-surrogate)/dz flows only through the unclipped branch.
        if unclipped_obj <= clipped_obj {
            let coef = -s.advantage * ratio / n;
            for (j, (d, p)) in d_logits.iter_mut().zip(&probs).enumerate() {
                let indicator = if j == s.action { 1.0 } else { 0.0 };
                *d += coef * (indicator - p);
            }
        }
        // d(-c_e·H)/dz_j = c_e·p_j·(log p_j + H)
        for ((d, p), l) in d_logits.iter_mut().zip(&probs).zip(&log_probs) {
            *d += config.entropy_coef * p * (l + entropy) / n;
        }
        let d_value = 2.0 * config.value_coef * (out.value - s.ret) / n;
        mlp.backward_cached(params, &cache, &OutputGrad { logits: d_logits, value: d_value }, &mut grad)?;
    }
    stats.clip_fraction = clipped as f64 / n;
    let loss = stats.policy_loss + config.value_coef * stats.value_loss - config.entropy_coef * stats.entropy;
    if !loss.is_finite() {
        return Err(PpoError::NonFiniteLoss);
    }
    Ok(Objective { loss, gradient: grad, stats })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    /// KL of the very first minibatch, before any update in this iteration.
    pub first_approx_kl: f64,
    pub updates: usize,
}

/// Owns the policy parameters, optimizer state and minibatch shuffling RNG.
#[derive(Debug, Clone)]
pub struct Learner {
    mlp: Mlp,
    params: PolicyParams,
    adam: AdamState,
    rng: ChaCha8Rng,
    config: PpoConfig,
}

/// Offsets mixed into the run seed so parameter init and minibatch shuffling
/// use unrelated streams.
pub const INIT_SEED_OFFSET: u64 = 0x51_7c_c1_b7_27_22_0a_95;
pub const SHUFFLE_SEED_OFFSET: u64 = 0x9e_37_79_b9_7f_4a_7c_15;

impl Learner {
    pub fn new(spec: MlpSpec, config: PpoConfig, seed: u64) -> Result<Self, PpoError> {
        config.validate()?;
        let params = PolicyParams::init(&spec, seed ^ INIT_SEED_OFFSET);
        let adam = AdamState::new(params.len(), config.learning_rate);
        Self::from_parts(spec, params, adam, config, seed)
    }

    pub fn from_parts(
        spec: MlpSpec,
        params: PolicyParams,
        adam: AdamState,
        config: PpoConfig,
        seed: u64,
    ) -> Result<Self, PpoError> {
        let mlp = Mlp::new(spec)?;
        if params.len() != mlp.param_count() || adam.first_moment.len() != params.len() {
            return Err(PpoError::LengthMismatch(format!(
                "network has {} parameters, got {} params / {} optimizer slots",
                mlp.param_count(),
                params.len(),
                adam.first_moment.len()
            )));
        }
        Ok(Self {
            mlp,
            params,
            adam,
            rng: ChaCha8Rng::seed_from_u64(seed ^ SHUFFLE_SEED_OFFSET),
            config,
        })
    }

    pub fn params(&self) -> &PolicyParams {
        &self.params
    }

    pub fn adam(&self) -> &AdamState {
        &self.adam
    }

    pub fn spec(&self) -> &MlpSpec {
        self.mlp.spec()
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn config(&self) -> &PpoConfig {
        &self.config
    }

    pub fn into_params(self) -> PolicyParams {
        self.params
    }

    /// One PPO iteration: GAE per worker segment, batch advantage
    /// normalization, then `epochs_per_batch` shuffled minibatch passes.
    /// The policy version increases by exactly one.
    pub fn train_iteration(&mut self, batch: &TrajectoryBatch) -> Result<TrainStats, PpoError> {
        if batch.policy_version != self.params.version {
            return Err(PpoError::StalePolicyVersion {
                batch: batch.policy_version,
                learner: self.params.version,
            });
        }
        if batch.transitions.is_empty() {
            return Err(PpoError::EmptyBatch);
        }
        let (mut advantages, returns) = batch_advantages(batch, &self.config)?;
        normalize_advantages(&mut advantages);

        let samples: Vec<Sample<'_>> = batch
            .transitions
            .iter()
            .zip(advantages.iter().zip(&returns))
            .map(|(t, (adv, ret))| Sample {
                obs: t.obs.as_slice(),
                action: t.action,
                old_log_prob: t.log_prob,
                advantage: *adv,
                ret: *ret,
            })
            .collect();

        let mut stats = TrainStats::default();
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut minibatch = Vec::with_capacity(self.config.minibatch_size);
        for _ in 0..self.config.epochs_per_batch {
            order.shuffle(&mut self.rng);
            for chunk in order.chunks(self.config.minibatch_size) {
                minibatch.clear();
                minibatch.extend(chunk.iter().map(|&i| samples[i]));
                let objective = ppo_objective(&self.mlp, &self.params.values, &minibatch, &self.config)?;
                if stats.updates == 0 {
                    stats.first_approx_kl = objective.stats.approx_kl;
                }
                stats.policy_loss += objective.stats.policy_loss;
                stats.value_loss += objective.stats.value_loss;
                stats.entropy += objective.stats.entropy;
                stats.approx_kl += objective.stats.approx_kl;
                stats.clip_fraction += objective.stats.clip_fraction;
                stats.updates += 1;
                self.adam.update(&mut self.params.values, &objective.gradient)?;
            }
        }
        if stats.updates > 0 {
            let k = stats.updates as f64;
            stats.policy_loss /= k;
            stats.value_loss /= k;
            stats.entropy /= k;
            stats.approx_kl /= k;
            stats.clip_fraction /= k;
        }
        self.params.version += 1;
        Ok(stats)
    }
}

/// Advantages and returns for every transition, computed per worker segment.
pub fn batch_advantages(
    batch: &TrajectoryBatch,
    config: &PpoConfig,
) -> Result<(Vec<f64>, Vec<f64>), PpoError> {
    let mut advantages = Vec::with_capacity(batch.transitions.len());
    let mut returns = Vec::with_capacity(batch.transitions.len());
    for (segment, bootstrap) in batch.segments().zip(&batch.bootstrap_values) {
        let rewards: Vec<f64> = segment.iter().map(|t| t.reward).collect();
        let values: Vec<f64> = segment.iter().map(|t| t.value).collect();
        let terminals: Vec<bool> = segment.iter().map(|t| t.terminal).collect();
        let (a, r) = compute_gae(&rewards, &values, &terminals, *bootstrap, config.gamma, config.lambda)?;
        advantages.extend(a);
        returns.extend(r);
    }
    if advantages.len() != batch.transitions.len() {
        return Err(PpoError::LengthMismatch(format!(
            "{} segments cover {} of {} transitions",
            batch.bootstrap_values.len(),
            advantages.len(),
            batch.transitions.len()
        )));
    }
    Ok((advantages, returns))
}
