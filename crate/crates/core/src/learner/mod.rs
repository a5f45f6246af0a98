//! Episode collection, replay, and the ordered training step.

mod batch;
mod buffer;
mod optim;

pub use batch::Batch;
pub use buffer::ReplayBuffer;
pub use optim::Adam;

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::Tensor;
use crate::baselines::{self, EpsilonSchedule};
use crate::env::{EnvError, EnvKind, EnvSpec, Environment, Episode, EpisodeStep};
use crate::harness::{self, EvalRecord, MetricsSink};
use crate::nets::checkpoint::{self, CheckpointError};
use crate::nets::{actor_forward, agent_input, local_q_forward, Dims, MixerKind, NetConfig, NetError, Networks, ParamGroup, ParamSet};
use crate::objective::{
    message_loss, policy_loss, td_loss, temperature_loss, total_loss, AlphaMode, IBConfig, LossReport, MessageNoise,
    ObjectiveError,
};

#[derive(Debug, Error)]
pub enum LearnerError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error("replay buffer holds {have} episodes, need {need}")]
    InsufficientBuffer { have: usize, need: usize },
    #[error("non-finite {what} at learner step {step}; report: {report:?}")]
    NonFinite { what: &'static str, step: u64, report: Box<LossReport> },
    #[error("invalid learner config: {0}")]
    Config(String),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Algo {
    LsfSac,
    /// LSF-SAC with the message mechanism removed.
    Masac,
    Vdn,
    Qmix,
}

impl Algo {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "lsf-sac" => Some(Self::LsfSac),
            "masac" => Some(Self::Masac),
            "vdn" => Some(Self::Vdn),
            "qmix" => Some(Self::Qmix),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::LsfSac => "lsf-sac",
            Self::Masac => "masac",
            Self::Vdn => "vdn",
            Self::Qmix => "qmix",
        }
    }

    /// Acts by argmax of local values with ε-greedy exploration instead of
    /// through an actor.
    pub fn value_based(self) -> bool {
        matches!(self, Self::Vdn | Self::Qmix)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LearnerConfig {
    pub algo: Algo,
    pub seed: u64,
    pub net: NetConfig,
    pub ib: IBConfig,
    pub lr: f64,
    pub alpha_lr: f64,
    pub grad_clip: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Episodes collected before the first train step.
    pub warmup: usize,
    pub target_interval: u64,
    /// Train steps per collected episode.
    pub train_ratio: usize,
    pub max_env_steps: u64,
    pub eval_interval: u64,
    pub eval_episodes: usize,
    /// Env steps between checkpoints; 0 keeps only the final one.
    pub checkpoint_interval: u64,
    /// Learner steps between train records.
    pub log_interval: u64,
    pub epsilon: EpsilonSchedule,
    /// Overrides the environment's discount.
    pub gamma: Option<f64>,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            algo: Algo::LsfSac,
            seed: 0,
            net: NetConfig::default(),
            ib: IBConfig::default(),
            lr: 5e-4,
            alpha_lr: 1e-4,
            grad_clip: 10.0,
            batch_size: 32,
            buffer_capacity: 5000,
            warmup: 32,
            target_interval: 200,
            train_ratio: 1,
            max_env_steps: 20_000,
            eval_interval: 5000,
            eval_episodes: 32,
            checkpoint_interval: 0,
            log_interval: 100,
            epsilon: EpsilonSchedule::default(),
            gamma: None,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<(), LearnerError> {
        self.ib.validate()?;
        let bad = |m: String| Err(LearnerError::Config(m));
        if self.algo.value_based() && self.net.double_q {
            return bad(format!("double-Q is an LSF-SAC ablation and cannot be combined with {}", self.algo.name()));
        }
        if self.batch_size == 0 || self.buffer_capacity < self.batch_size {
            return bad(format!("batch_size {} must be in 1..=buffer_capacity {}", self.batch_size, self.buffer_capacity));
        }
        if !(self.lr >= 0.0 && self.alpha_lr >= 0.0 && self.grad_clip >= 0.0) {
            return bad("learning rates and grad_clip must be non-negative".into());
        }
        if self.eval_episodes == 0 {
            return bad("eval_episodes must be at least 1".into());
        }
        if let Some(g) = self.gamma {
            if !(0.0..1.0).contains(&g) {
                return bad(format!("gamma = {g} outside [0, 1)"));
            }
        }
        self.epsilon.validate().map_err(LearnerError::Config)
    }

    /// Network configuration after applying the algorithm's constraints.
    pub fn resolved_net(&self) -> NetConfig {
        let mut net = self.net.clone();
        match self.algo {
            Algo::LsfSac => {}
            Algo::Masac | Algo::Qmix => net.messages = false,
            Algo::Vdn => {
                net.messages = false;
                net.mixer = MixerKind::Additive;
            }
        }
        net
    }
}

/// Independent random streams, one per role.
#[derive(Clone, Debug)]
pub struct Streams {
    pub env: ChaCha8Rng,
    pub act: ChaCha8Rng,
    pub noise: ChaCha8Rng,
    pub sample: ChaCha8Rng,
}

pub fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        Self { env: stream(seed, 1), act: stream(seed, 2), noise: stream(seed, 3), sample: stream(seed, 4) }
    }
}

pub const INIT_STREAM: u64 = 0;
pub const EVAL_STREAM: u64 = 5;

pub struct TrainState {
    pub cfg: LearnerConfig,
    pub dims: Dims,
    pub gamma: f64,
    pub episode_limit: usize,
    pub nets: Networks,
    pub params: ParamSet,
    pub optim: BTreeMap<String, Adam>,
    pub buffer: ReplayBuffer,
    pub env_steps: u64,
    pub learner_steps: u64,
    pub episodes: u64,
    pub rngs: Streams,
    /// When set, a parameter snapshot is pushed after each update stage.
    pub stage_log: Option<Vec<(&'static str, ParamSet)>>,
}

impl TrainState {
    pub fn new(cfg: LearnerConfig, spec: &EnvSpec) -> Result<Self, LearnerError> {
        cfg.validate()?;
        spec.validate()?;
        let dims = Dims { n_agents: spec.n_agents, n_actions: spec.n_actions, obs_dim: spec.obs_dim, state_dim: spec.state_dim };
        let (nets, params) = Networks::init(cfg.resolved_net(), dims, &mut stream(cfg.seed, INIT_STREAM));
        let mut optim = BTreeMap::new();
        for g in params.groups().into_iter().filter(|g| !g.name.starts_with("target_")) {
            let lr = if g.name == "log_alpha" { cfg.alpha_lr } else { cfg.lr };
            optim.insert(g.name.clone(), Adam::new(g, lr));
        }
        let mut params = params;
        if cfg.ib.alpha_mode == AlphaMode::Fixed {
            params.set_log_alpha(cfg.ib.alpha_fixed.ln());
        }
        Ok(Self {
            gamma: cfg.gamma.unwrap_or(spec.gamma),
            episode_limit: spec.episode_limit,
            buffer: ReplayBuffer::new(cfg.buffer_capacity),
            rngs: Streams::new(cfg.seed),
            cfg,
            dims,
            nets,
            params,
            optim,
            env_steps: 0,
            learner_steps: 0,
            episodes: 0,
            stage_log: None,
        })
    }

    fn stage(&mut self, name: &'static str) {
        if let Some(log) = &mut self.stage_log {
            log.push((name, self.params.clone()));
        }
    }
}

/// How actions are drawn from the current networks.
pub enum Behavior<'a> {
    Greedy,
    /// Sample from the masked policy.
    Stochastic(&'a mut dyn RngCore),
    EpsilonGreedy(f64, &'a mut dyn RngCore),
}

/// Joint action for the last step of `history` (one `n × input_dim` block
/// per step so far). Actor-based algorithms read the policy, value-based ones
/// the local values of the first critic; messages are never used here.
pub fn select_actions(
    nets: &Networks,
    params: &ParamSet,
    value_based: bool,
    history: &[Tensor<f64>],
    avail: &[bool],
    behavior: Behavior<'_>,
) -> Result<Vec<usize>, LearnerError> {
    let (n, na) = (nets.dims.n_agents, nets.dims.n_actions);
    let scores = if value_based {
        local_q_forward(nets, &params.critics[0], history, None)?
    } else {
        actor_forward(nets, &params.actor, history, avail)?.probs
    };
    let mut out = Vec::with_capacity(n);
    match behavior {
        Behavior::Greedy => {
            for i in 0..n {
                out.push(scores.masked_argmax_row(i, Some(&avail[i * na..(i + 1) * na])));
            }
        }
        Behavior::Stochastic(rng) => {
            for i in 0..n {
                let w = WeightedIndex::new(scores.row(i)).map_err(|_| NetError::EmptyMask(i))?;
                out.push(w.sample(rng));
            }
        }
        Behavior::EpsilonGreedy(eps, rng) => {
            for i in 0..n {
                out.push(baselines::epsilon_greedy(scores.row(i), eps, &avail[i * na..(i + 1) * na], rng));
            }
        }
    }
    Ok(out)
}

/// Plays one episode, feeding `choose` the history blocks and the flattened
/// availability mask. Returns the episode and whether it succeeded.
pub fn rollout(
    env: &mut dyn Environment,
    seed: u64,
    dims: &Dims,
    mut choose: impl FnMut(&[Tensor<f64>], &[bool]) -> Result<Vec<usize>, LearnerError>,
) -> Result<(Episode, bool), LearnerError> {
    let limit = env.spec().episode_limit;
    let mut o = env.reset(seed);
    let mut history: Vec<Tensor<f64>> = Vec::with_capacity(limit);
    let mut prev: Option<Vec<usize>> = None;
    let mut steps = Vec::with_capacity(limit);
    for _ in 0..limit {
        let mut block = Tensor::zeros(dims.n_agents, dims.input_dim());
        for i in 0..dims.n_agents {
            block.row_mut(i).copy_from_slice(&agent_input(dims, i, &o.obs[i], prev.as_ref().map(|p| p[i])));
        }
        history.push(block);
        let mask: Vec<bool> = o.avail.concat();
        let actions = choose(&history, &mask)?;
        let r = env.step(&actions)?;
        prev = Some(actions.clone());
        steps.push(EpisodeStep {
            state: std::mem::take(&mut o.state),
            obs: std::mem::take(&mut o.obs),
            avail: std::mem::take(&mut o.avail),
            actions,
            reward: r.reward,
            terminated: r.terminated,
        });
        if r.terminated {
            break;
        }
        o.state = r.next_state;
        o.obs = r.next_obs;
        o.avail = r.avail_actions;
    }
    Ok((Episode { steps }, env.succeeded()))
}

/// Runs one behavior episode, stores it, and advances the env step counter.
pub fn collect_episode(st: &mut TrainState, env: &mut dyn Environment) -> Result<(Episode, bool), LearnerError> {
    let seed: u64 = st.rngs.env.gen();
    let value_based = st.cfg.algo.value_based();
    let eps = st.cfg.epsilon.at(st.env_steps);
    let (nets, params, act) = (&st.nets, &st.params, &mut st.rngs.act);
    let (ep, success) = rollout(env, seed, &st.dims, |h, m| {
        let b = if value_based { Behavior::EpsilonGreedy(eps, &mut *act) } else { Behavior::Stochastic(&mut *act) };
        select_actions(nets, params, value_based, h, m, b)
    })?;
    st.env_steps += ep.len() as u64;
    st.episodes += 1;
    st.buffer.push(ep.clone());
    Ok((ep, success))
}

/// Padded minibatch of `batch_size` distinct stored episodes.
pub fn sample_minibatch(st: &mut TrainState) -> Result<Batch, LearnerError> {
    let eps = st.buffer.sample(st.cfg.batch_size, &mut st.rngs.sample)?;
    Ok(Batch::from_episodes(&eps, &st.dims, st.gamma))
}

fn scaled(grads: &[Tensor<f64>], w: f64) -> Vec<Tensor<f64>> {
    grads.iter().map(|t| t.map(|x| x * w)).collect()
}

fn group_mut<'a>(ps: &'a mut ParamSet, name: &str) -> &'a mut ParamGroup {
    ps.groups_mut().into_iter().find(|g| g.name == name).expect("known group")
}

/// One optimizer step on group `name`; returns the pre-clip gradient norm.
pub(crate) fn apply(st: &mut TrainState, name: &str, grads: &[Tensor<f64>]) -> f64 {
    let clip = st.cfg.grad_clip;
    let opt = st.optim.get_mut(name).expect("optimizer for group");
    let grp = group_mut(&mut st.params, name);
    if grp.is_empty() {
        return 0.0;
    }
    opt.step(grp, grads, clip)
}

fn ensure_finite(st: &TrainState, what: &'static str, v: f64, report: &LossReport) -> Result<(), LearnerError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(LearnerError::NonFinite { what, step: st.learner_steps, report: Box::new(report.clone()) })
    }
}

/// One training step. LSF-SAC and MASAC update in the order critic, policy,
/// encoder (with decoder and prior), temperature; the baselines run a plain
/// TD step.
pub fn train_step(st: &mut TrainState, batch: &Batch) -> Result<LossReport, LearnerError> {
    let report = if st.cfg.algo.value_based() { baselines::baseline_train_step(st, batch)? } else { lsf_train_step(st, batch)? };
    st.learner_steps += 1;
    maybe_sync_targets(st);
    Ok(report)
}

fn lsf_train_step(st: &mut TrainState, batch: &Batch) -> Result<LossReport, LearnerError> {
    let ib = st.cfg.ib.clone();
    let d = st.nets.cfg.msg_dim;
    let messages = st.nets.cfg.messages;
    let noise =
        if messages { MessageNoise::sample(batch.rows(), d, &mut st.rngs.noise) } else { MessageNoise::zeros(batch.rows(), d) };
    let mut rep = LossReport { alpha: ib.alpha(&st.params), ..LossReport::default() };

    let td = td_loss::<f32>(&st.nets, &st.params, batch, &noise, &ib)?;
    rep.td_loss = td.value;
    ensure_finite(st, "td_loss", td.value, &rep)?;
    for k in 0..st.params.critics.len() {
        let name = format!("critic{k}");
        let n = apply(st, &name, &td.grads[&name]);
        rep.grad_norms.insert(name, n);
    }
    st.stage("critic");

    let pol = policy_loss::<f32>(&st.nets, &st.params, batch, &noise, &ib)?;
    rep.policy_loss = pol.eval.value;
    rep.entropy = pol.entropy;
    rep.entropy_per_agent = pol.entropy_per_agent.clone();
    ensure_finite(st, "policy_loss", pol.eval.value, &rep)?;
    let n = apply(st, "actor", &scaled(&pol.eval.grads["actor"], ib.lambda2));
    rep.grad_norms.insert("actor".into(), n);
    st.stage("actor");

    if messages {
        let msg = message_loss::<f32>(&st.nets, &st.params, batch, &noise, &ib)?;
        rep.msg_ce = msg.ce;
        rep.msg_kl = msg.kl;
        rep.msg_loss = msg.eval.value;
        ensure_finite(st, "message_loss", msg.eval.value, &rep)?;
        let mut enc = scaled(&msg.eval.grads["encoder"], ib.lambda1);
        for (e, t) in enc.iter_mut().zip(&td.grads["encoder"]) {
            e.add_assign(t);
        }
        let n = apply(st, "encoder", &enc);
        rep.grad_norms.insert("encoder".into(), n);
        for name in ["decoder", "prior"] {
            if let Some(g) = msg.eval.grads.get(name) {
                let n = apply(st, name, &scaled(g, ib.lambda1));
                rep.grad_norms.insert(name.into(), n);
            }
        }
    }
    st.stage("encoder");

    let tl = temperature_loss::<f64>(&st.params, pol.entropy, st.dims.n_actions, &ib);
    rep.alpha_loss = tl.value;
    ensure_finite(st, "alpha_loss", tl.value, &rep)?;
    if ib.alpha_mode == AlphaMode::Auto {
        let n = apply(st, "log_alpha", &tl.grads["log_alpha"]);
        rep.grad_norms.insert("log_alpha".into(), n);
    }
    st.stage("temperature");

    rep.total = total_loss(rep.td_loss, rep.msg_loss, rep.policy_loss, &ib);
    if !rep.is_finite() || !st.params.all_finite() {
        return Err(LearnerError::NonFinite { what: "parameters", step: st.learner_steps, report: Box::new(rep) });
    }
    Ok(rep)
}

/// Hard target copy every `target_interval` learner steps; returns whether
/// it happened.
pub fn maybe_sync_targets(st: &mut TrainState) -> bool {
    let k = st.cfg.target_interval;
    if k > 0 && st.learner_steps > 0 && st.learner_steps % k == 0 {
        st.params.sync_target();
        true
    } else {
        false
    }
}

/// Everything a finished run hands back.
pub struct TrainOutcome {
    pub state: TrainState,
    pub evals: Vec<EvalRecord>,
    pub last_report: Option<LossReport>,
}

/// The outer loop: collect, train once warm, evaluate every
/// `eval_interval` env steps, write metrics and checkpoints under `out`.
pub fn run_training(
    cfg: &LearnerConfig,
    env_kind: EnvKind,
    out: Option<&Path>,
    run_id: &str,
) -> Result<TrainOutcome, LearnerError> {
    let mut env = env_kind.build();
    let mut st = TrainState::new(cfg.clone(), env.spec())?;
    let mut sink = MetricsSink::open(out.map(|d| d.join("metrics.jsonl")).as_deref(), run_id)?;
    let result = train_loop(&mut st, env.as_mut(), env_kind, out, &mut sink);
    match result {
        Ok((evals, last_report)) => Ok(TrainOutcome { state: st, evals, last_report }),
        Err(e) => {
            sink.error(st.env_steps, &e.to_string())?;
            Err(e)
        }
    }
}

fn train_loop(
    st: &mut TrainState,
    env: &mut dyn Environment,
    env_kind: EnvKind,
    out: Option<&Path>,
    sink: &mut MetricsSink,
) -> Result<(Vec<EvalRecord>, Option<LossReport>), LearnerError> {
    let start = Instant::now();
    let cfg = st.cfg.clone();
    let mut evals = Vec::new();
    let mut next_eval = cfg.eval_interval.max(1);
    let mut next_ckpt = if cfg.checkpoint_interval > 0 { cfg.checkpoint_interval } else { u64::MAX };
    let mut last_report = None;
    let mut recent = Vec::new();
    let min_fill = cfg.warmup.max(cfg.batch_size);
    while st.env_steps < cfg.max_env_steps {
        let (ep, success) = collect_episode(st, env)?;
        recent.push((ep.total_reward(), success));
        if st.buffer.len() >= min_fill {
            for _ in 0..cfg.train_ratio {
                let batch = sample_minibatch(st)?;
                let rep = train_step(st, &batch)?;
                if cfg.log_interval > 0 && st.learner_steps % cfg.log_interval == 0 {
                    sink.train(st.env_steps, st.learner_steps, &rep, &recent)?;
                    recent.clear();
                }
                last_report = Some(rep);
            }
        }
        while st.env_steps >= next_eval {
            let rec = harness::evaluate_state(st, env_kind, start.elapsed().as_secs_f64())?;
            sink.eval(&rec)?;
            evals.push(rec);
            next_eval += cfg.eval_interval.max(1);
        }
        while st.env_steps >= next_ckpt {
            if let Some(dir) = out {
                checkpoint::save(&st.params, &dir.join("checkpoints").join(format!("step_{next_ckpt}")))?;
            }
            next_ckpt += cfg.checkpoint_interval;
        }
    }
    if evals.last().map_or(true, |r| r.env_step != st.env_steps) {
        let rec = harness::evaluate_state(st, env_kind, start.elapsed().as_secs_f64())?;
        sink.eval(&rec)?;
        evals.push(rec);
    }
    if let Some(dir) = out {
        checkpoint::save(&st.params, &dir.join("checkpoints").join("final"))?;
    }
    Ok((evals, last_report))
}
