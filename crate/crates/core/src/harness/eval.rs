use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{factorization_table, FactorizationTable};
use crate::autodiff::Tensor;
use crate::env::EnvKind;
use crate::learner::{rollout, select_actions, stream, Behavior, LearnerError, TrainState, EVAL_STREAM};
use crate::nets::{Dims, Networks, ParamSet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub env_step: u64,
    pub episodes: usize,
    pub mean_return: f64,
    pub median_return: f64,
    /// Matrix game: fraction of episodes earning 8. Corridor: fraction of
    /// joint commits at the rewarded exit.
    pub success_rate: f64,
    pub wall_clock_s: f64,
    pub table: Option<FactorizationTable>,
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Plays `n_episodes` with actions from `choose` (history blocks, flattened
/// mask). Returns the record without a table, plus the first episode's
/// opening joint action.
pub fn evaluate_policy(
    env_kind: EnvKind,
    n_episodes: usize,
    seed: u64,
    mut choose: impl FnMut(&[Tensor<f64>], &[bool]) -> Result<Vec<usize>, LearnerError>,
) -> Result<(EvalRecord, Vec<usize>), LearnerError> {
    let mut env = env_kind.build();
    let spec = env_kind.spec();
    let dims = Dims { n_agents: spec.n_agents, n_actions: spec.n_actions, obs_dim: spec.obs_dim, state_dim: spec.state_dim };
    let mut seeds = stream(seed, EVAL_STREAM);
    let mut returns = Vec::with_capacity(n_episodes);
    let mut wins = 0;
    let mut first_actions = None;
    for _ in 0..n_episodes {
        let s: u64 = seeds.gen();
        let (ep, ok) = rollout(env.as_mut(), s, &dims, &mut choose)?;
        first_actions.get_or_insert_with(|| ep.steps[0].actions.clone());
        returns.push(ep.total_reward());
        wins += usize::from(ok);
    }
    let n = n_episodes.max(1) as f64;
    let rec = EvalRecord {
        env_step: 0,
        episodes: n_episodes,
        mean_return: returns.iter().sum::<f64>() / n,
        median_return: median(&returns),
        success_rate: wins as f64 / n,
        wall_clock_s: 0.0,
        table: None,
    };
    Ok((rec, first_actions.unwrap_or_default()))
}

/// Greedy episodes from a parameter snapshot. Actors act by the argmax of
/// their policy, value-based learners by the argmax of their local values;
/// nothing is written back.
pub fn evaluate(
    env_kind: EnvKind,
    nets: &Networks,
    params: &ParamSet,
    value_based: bool,
    n_episodes: usize,
    seed: u64,
) -> Result<EvalRecord, LearnerError> {
    let (mut rec, first) = evaluate_policy(env_kind, n_episodes, seed, |h, m| {
        select_actions(nets, params, value_based, h, m, Behavior::Greedy)
    })?;
    if env_kind == EnvKind::Matrix && n_episodes > 0 {
        rec.table = Some(factorization_table(env_kind, nets, params, first).map_err(|e| LearnerError::Config(e.to_string()))?);
    }
    Ok(rec)
}

pub fn evaluate_state(st: &TrainState, env_kind: EnvKind, wall_clock_s: f64) -> Result<EvalRecord, LearnerError> {
    let mut rec = evaluate(env_kind, &st.nets, &st.params, st.cfg.algo.value_based(), st.cfg.eval_episodes, st.cfg.seed)?;
    rec.env_step = st.env_steps;
    rec.wall_clock_s = wall_clock_s;
    Ok(rec)
}
