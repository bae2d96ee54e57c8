//! Greedy-policy evaluation and generalization sweeps.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{EnvError, EnvId, EnvInstance, Environment, TerminalKind};
use crate::nn::{argmax, Mlp, MlpSpec, NnError, PolicyParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("at least one episode is required")]
    NoEpisodes,
    #[error("empty level list")]
    NoLevels,
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Network(#[from] NnError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub difficulty: u32,
    pub episodes: usize,
    pub mean_return: f64,
    pub return_std: f64,
    pub success_rate: f64,
    pub mean_episode_length: f64,
    pub seed: u64,
    pub params_version: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralizationCurve {
    pub reports: Vec<EvalReport>,
    pub mean_return: f64,
    pub mean_success_rate: f64,
}

/// Level sets used for generalization sweeps: obstacles 1..=5 for
/// GridWorld, every height 0..=8 (levels 0..=16) for WallJumper.
pub fn sweep_levels(env_id: EnvId) -> Vec<u32> {
    match env_id {
        EnvId::GridWorld => (1..=5).collect(),
        EnvId::WallJumper => (0..=16).collect(),
    }
}

/// Runs `episodes` greedy (argmax) episodes on a fresh environment.
/// Episode layouts are drawn from a ChaCha stream seeded by `seed`.
pub fn evaluate(
    params: &PolicyParams,
    spec: &MlpSpec,
    env_id: EnvId,
    level: u32,
    episodes: usize,
    seed: u64,
) -> Result<EvalReport, EvalError> {
    let mlp = Mlp::new(spec.clone())?;
    evaluate_with(&mlp, params, env_id, level, episodes, seed)
}

pub fn evaluate_with(
    mlp: &Mlp,
    params: &PolicyParams,
    env_id: EnvId,
    level: u32,
    episodes: usize,
    seed: u64,
) -> Result<EvalReport, EvalError> {
    if episodes == 0 {
        return Err(EvalError::NoEpisodes);
    }
    let mut env = EnvInstance::new(env_id, level)?;
    let mut seeds = ChaCha8Rng::seed_from_u64(seed);
    let mut returns = Vec::with_capacity(episodes);
    let mut successes = 0usize;
    let mut total_len = 0u64;
    for _ in 0..episodes {
        let mut obs = env.reset(seeds.next_u64());
        let mut ret = 0.0;
        loop {
            let out = mlp.forward(&params.values, &obs)?;
            let step = env.step(argmax(&out.logits))?;
            ret += step.reward;
            total_len += 1;
            if step.terminal() {
                if step.kind == TerminalKind::Success {
                    successes += 1;
                }
                break;
            }
            obs = step.observation;
        }
        returns.push(ret);
    }
    let n = episodes as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    Ok(EvalReport {
        difficulty: level,
        episodes,
        mean_return: mean,
        return_std: var.sqrt(),
        success_rate: successes as f64 / n,
        mean_episode_length: total_len as f64 / n,
        seed,
        params_version: params.version,
    })
}

/// One [`evaluate`] per level, plus unweighted means across levels.
pub fn sweep(
    params: &PolicyParams,
    spec: &MlpSpec,
    env_id: EnvId,
    levels: &[u32],
    episodes: usize,
    seed: u64,
) -> Result<GeneralizationCurve, EvalError> {
    if levels.is_empty() {
        return Err(EvalError::NoLevels);
    }
    let mlp = Mlp::new(spec.clone())?;
    let reports = levels
        .iter()
        .map(|&level| evaluate_with(&mlp, params, env_id, level, episodes, seed))
        .collect::<Result<Vec<_>, _>>()?;
    let k = reports.len() as f64;
    let mean_return = reports.iter().map(|r| r.mean_return).sum::<f64>() / k;
    let mean_success_rate = reports.iter().map(|r| r.success_rate).sum::<f64>() / k;
    Ok(GeneralizationCurve { reports, mean_return, mean_success_rate })
}
