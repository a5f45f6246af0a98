//! Differentiable losses: TD critic loss, variational message loss, soft
//! policy loss and temperature loss, plus the weighted report.
//!
//! Every loss builds its own tape over a generic float type so the same code
//! serves training (`f64`) and precision checks (`f32`). Quantities that must
//! carry no gradient (bootstrap targets, critic values inside the policy loss)
//! are computed tape-free and enter as constants.

mod bound;

pub use bound::ToyJoint;

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Grads, Graph, Real, Tensor, Var};
use crate::learner::Batch;
use crate::nets::joint::{greedy_by, joint_table, JointInputs, JointTable};
use crate::nets::{
    decoder_inbound, inbound_messages, sample_message, Bound, EncoderNet, HistoryEncoder, NetError, Networks,
    ParamGroup, ParamSet,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObjectiveError {
    #[error("batch has no valid steps")]
    EmptyBatch,
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("message loss needs the message networks, which are disabled")]
    MessagesOff,
    #[error("prior variance must be positive, got {0}")]
    NonPositiveVariance(f64),
    #[error("invalid objective config: {0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlphaMode {
    Fixed,
    Auto,
}

impl AlphaMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "fixed" => Some(Self::Fixed),
            "auto" => Some(Self::Auto),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Fixed => "fixed",
            Self::Auto => "auto",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IBConfig {
    pub beta: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub alpha_mode: AlphaMode,
    pub alpha_fixed: f64,
    /// Nats; `None` means `0.98·ln(n_actions)`.
    pub target_entropy: Option<f64>,
    /// Bootstrap with the policy expectation plus entropy instead of the greedy max.
    pub soft_target: bool,
}

impl Default for IBConfig {
    fn default() -> Self {
        Self {
            beta: 0.05,
            lambda1: 0.1,
            lambda2: 1.0,
            alpha_mode: AlphaMode::Auto,
            alpha_fixed: 1.0,
            target_entropy: None,
            soft_target: false,
        }
    }
}

impl IBConfig {
    pub fn validate(&self) -> Result<(), ObjectiveError> {
        if !(self.beta >= 0.0) {
            return Err(ObjectiveError::Config(format!("beta must be >= 0, got {}", self.beta)));
        }
        if self.alpha_mode == AlphaMode::Fixed && !(self.alpha_fixed > 0.0) {
            return Err(ObjectiveError::Config(format!("alpha_fixed must be > 0, got {}", self.alpha_fixed)));
        }
        Ok(())
    }

    pub fn h0(&self, n_actions: usize) -> f64 {
        self.target_entropy.unwrap_or(0.98 * (n_actions as f64).ln())
    }

    pub fn alpha(&self, ps: &ParamSet) -> f64 {
        match self.alpha_mode {
            AlphaMode::Fixed => self.alpha_fixed,
            AlphaMode::Auto => ps.alpha(),
        }
    }
}

/// Reparameterization noise for the online messages and, independently,
/// for the target messages; one row per agent row of the batch.
#[derive(Clone, Debug, PartialEq)]
pub struct MessageNoise {
    pub online: Tensor<f64>,
    pub target: Tensor<f64>,
}

impl MessageNoise {
    pub fn zeros(rows: usize, d: usize) -> Self {
        Self { online: Tensor::zeros(rows, d), target: Tensor::zeros(rows, d) }
    }

    pub fn sample(rows: usize, d: usize, rng: &mut impl Rng) -> Self {
        let mut draw = || Tensor::from_vec(rows, d, (0..rows * d).map(|_| rng.sample(StandardNormal)).collect());
        let online = draw();
        let target = draw();
        Self { online, target }
    }
}

pub type GroupGrads = BTreeMap<String, Vec<Tensor<f64>>>;

/// A scalar loss value and the gradients of the groups it trains.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossEval {
    pub value: f64,
    pub grads: GroupGrads,
}

impl LossEval {
    pub fn grad_norm(&self, group: &str) -> f64 {
        self.grads.get(group).map_or(0.0, |g| crate::nets::global_norm(g))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub td_loss: f64,
    pub msg_ce: f64,
    pub msg_kl: f64,
    pub msg_loss: f64,
    pub policy_loss: f64,
    pub alpha_loss: f64,
    pub total: f64,
    pub alpha: f64,
    pub entropy: f64,
    pub entropy_per_agent: Vec<f64>,
    pub grad_norms: BTreeMap<String, f64>,
}

impl LossReport {
    pub fn is_finite(&self) -> bool {
        [self.td_loss, self.msg_ce, self.msg_kl, self.msg_loss, self.policy_loss, self.alpha_loss, self.total]
            .iter()
            .all(|v| v.is_finite())
    }

    /// `total` matches the weighted sum of its components.
    pub fn identity_holds(&self, cfg: &IBConfig) -> bool {
        (self.total - total_loss(self.td_loss, self.msg_loss, self.policy_loss, cfg)).abs() <= 1e-6
    }
}

/// `L = L_TD + λ1·L_m + λ2·L_π`, for reporting.
pub fn total_loss(td: f64, msg: f64, policy: f64, cfg: &IBConfig) -> f64 {
    td + cfg.lambda1 * msg + cfg.lambda2 * policy
}

/// Per-agent argmax over available actions, ties to the lowest index.
pub fn greedy_joint_action(q: &[Vec<f64>], masks: Option<&[Vec<bool>]>) -> Vec<usize> {
    q.iter()
        .enumerate()
        .map(|(i, qi)| {
            let t = Tensor::from_vec(1, qi.len(), qi.clone());
            t.masked_argmax_row(0, masks.map(|m| m[i].as_slice()))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GaussianPrior<'a> {
    Standard,
    Diagonal { mean: &'a [f64], var: &'a [f64] },
}

/// `KL(N(μ, diag(var)) ‖ prior)`; `var = None` is the unit covariance.
pub fn gaussian_kl(mu: &[f64], var: Option<&[f64]>, prior: GaussianPrior<'_>) -> Result<f64, ObjectiveError> {
    let d = mu.len();
    let zeros = vec![0.0; d];
    let ones = vec![1.0; d];
    let (pm, pv) = match prior {
        GaussianPrior::Standard => (zeros.as_slice(), ones.as_slice()),
        GaussianPrior::Diagonal { mean, var } => (mean, var),
    };
    if let Some(&bad) = pv.iter().find(|&&v| !(v > 0.0)) {
        return Err(ObjectiveError::NonPositiveVariance(bad));
    }
    let v = var.unwrap_or(&ones);
    let kl = (0..d)
        .map(|k| 0.5 * ((pv[k] / v[k]).ln() + (v[k] + (mu[k] - pm[k]).powi(2)) / pv[k] - 1.0))
        .sum::<f64>();
    Ok(kl.max(0.0))
}

// ---------------------------------------------------------------------------
// shared pieces
// ---------------------------------------------------------------------------

fn seq<S: Real>(g: &mut Graph<S>, batch: &Batch) -> Vec<Var> {
    batch.inputs.iter().map(|t| g.constant_f64(t)).collect()
}

// Tape-free trunk pass; run in f32 since only values are needed.
fn trunk_states(trunk: &HistoryEncoder, grp: &ParamGroup, batch: &Batch) -> Tensor<f64> {
    let mut g = Graph::<f32>::new();
    let p = grp.bind(&mut g, false);
    let xs = seq(&mut g, batch);
    let h = trunk.forward_sequence(&mut g, &p, &xs);
    g.value(h).cast()
}

/// Joint tables of `critics` over every sample of the batch.
pub fn tables(
    nets: &Networks,
    critics: &[ParamGroup],
    encoder: &ParamGroup,
    batch: &Batch,
    noise: &Tensor<f64>,
) -> Result<Vec<JointTable>, ObjectiveError> {
    let eh = nets.encoder.as_ref().map(|e| trunk_states(&e.trunk, encoder, batch));
    critics
        .iter()
        .map(|c| {
            let ch = trunk_states(&nets.critic.local.trunk, c, batch);
            let inp = JointInputs {
                critic_h: &ch,
                enc_h: eh.as_ref(),
                state: &batch.states,
                avail: &batch.avail,
                noise: Some(noise),
            };
            Ok(joint_table(nets, c, nets.encoder.as_ref().map(|_| encoder), inp)?)
        })
        .collect()
}

fn min_q(tables: &[JointTable], s: usize, c: usize) -> f64 {
    tables.iter().map(|t| t.q_tot(s, c)).fold(f64::INFINITY, f64::min)
}

/// Greedy joint action of sample `s` under the pessimistic mixed value.
fn greedy_min(tables: &[JointTable], s: usize) -> usize {
    let t0 = &tables[0];
    greedy_by(t0.n_combos, |c| t0.is_valid(s, c), |c| min_q(tables, s, c))
}

/// Policy of every agent row over the whole batch, tape-free.
pub fn policy_table(nets: &Networks, actor: &ParamGroup, batch: &Batch) -> (Tensor<f64>, Tensor<f64>) {
    let mut g = Graph::<f64>::new();
    let p = actor.bind(&mut g, false);
    let xs = seq(&mut g, batch);
    let logits = nets.actor.logits(&mut g, &p, &xs);
    let probs = g.masked_softmax(logits, batch.avail.clone());
    let logp = g.masked_log_softmax(logits, batch.avail.clone());
    (g.value(probs).clone(), g.value(logp).clone())
}

fn entropy_of_row(probs: &Tensor<f64>, logp: &Tensor<f64>, r: usize) -> f64 {
    -probs.row(r).iter().zip(logp.row(r)).map(|(p, l)| p * l).sum::<f64>()
}

/// Messages for the recorded actions: `(μ, log σ², inbound)`.
fn online_messages<S: Real>(
    g: &mut Graph<S>,
    enc: &EncoderNet,
    p: &Bound,
    xs: &[Var],
    batch: &Batch,
    noise: &Tensor<f64>,
) -> (Var, Option<Var>, Var) {
    let h = enc.trunk.forward_sequence(g, p, xs);
    let (mu, lv) = enc.heads(g, p, h, &batch.actions);
    let eps = g.constant_f64(noise);
    let m = sample_message(g, mu, lv, eps);
    let inbound = inbound_messages(g, m, batch.n_agents);
    (mu, lv, inbound)
}

/// `Σ mask·x / count` for a column `x`.
fn masked_mean<S: Real>(g: &mut Graph<S>, x: Var, mask: &Tensor<f64>, count: usize) -> Var {
    let m = g.constant_f64(mask);
    let y = g.mul(x, m);
    let s = g.sum(y);
    g.scale(s, 1.0 / count as f64)
}

fn check_batch(nets: &Networks, batch: &Batch, noise: &MessageNoise) -> Result<(), ObjectiveError> {
    if batch.valid_count() == 0 {
        return Err(ObjectiveError::EmptyBatch);
    }
    let rows = batch.rows();
    for t in [&noise.online, &noise.target] {
        if t.rows != rows || t.cols != nets.cfg.msg_dim {
            return Err(NetError::DimensionMismatch { what: "message noise", expected: rows, got: t.rows }.into());
        }
    }
    Ok(())
}

fn collect<S: Real>(grads: &Grads<S>, bound: &[(&Bound, &ParamGroup)]) -> GroupGrads {
    bound.iter().map(|(b, grp)| (grp.name.clone(), b.grads(grads, grp))).collect()
}

// ---------------------------------------------------------------------------
// TD loss
// ---------------------------------------------------------------------------

/// Bootstrap targets `y` per sample (zero on padding), from the target critics
/// and the target encoder.
pub fn td_targets(
    nets: &Networks,
    ps: &ParamSet,
    batch: &Batch,
    noise: &MessageNoise,
    cfg: &IBConfig,
) -> Result<Vec<f64>, ObjectiveError> {
    let tabs = tables(nets, &ps.target_critics, &ps.target_encoder, batch, &noise.target)?;
    let policy = cfg.soft_target.then(|| policy_table(nets, &ps.actor, batch));
    let alpha = cfg.alpha(ps);
    let (b, n) = (batch.episodes, batch.n_agents);
    let mut y = vec![0.0; batch.samples()];
    for t in 0..batch.t_max {
        for e in 0..b {
            let s = t * b + e;
            if !batch.valid[s] {
                continue;
            }
            y[s] = batch.rewards[s];
            let s2 = (t + 1) * b + e;
            if batch.terminated[s] || t + 1 >= batch.t_max || !batch.valid[s2] {
                continue;
            }
            let boot = match &policy {
                None => min_q(&tabs, s2, greedy_min(&tabs, s2)),
                Some((probs, logp)) => {
                    let t0 = &tabs[0];
                    let mut v = 0.0;
                    for c in (0..t0.n_combos).filter(|&c| t0.is_valid(s2, c)) {
                        let acts = t0.decode(c);
                        let w: f64 = acts.iter().enumerate().map(|(i, &a)| probs.get(s2 * n + i, a)).product();
                        v += w * min_q(&tabs, s2, c);
                    }
                    v + alpha * (0..n).map(|i| entropy_of_row(probs, logp, s2 * n + i)).sum::<f64>()
                }
            };
            y[s] += batch.gamma * boot;
        }
    }
    Ok(y)
}

/// `Q_tot(τ, u, m)` at the recorded joint actions, `(T·B) × 1`.
fn online_q_tot<S: Real>(
    g: &mut Graph<S>,
    nets: &Networks,
    p: &Bound,
    xs: &[Var],
    inbound: Option<Var>,
    states: Var,
    batch: &Batch,
) -> Var {
    let local = &nets.critic.local;
    let h = local.trunk.forward_sequence(g, p, xs);
    let q = local.q_values(g, p, h, inbound);
    let chosen = g.gather_cols(q, batch.actions.clone());
    let chosen = g.reshape(chosen, batch.samples(), batch.n_agents);
    nets.critic.mixer.mix(g, p, chosen, states)
}

/// Online `Q_tot` at the recorded joint actions, one value per sample, with
/// messages built from `noise` (the first critic only).
pub fn recorded_q_tot(nets: &Networks, ps: &ParamSet, batch: &Batch, noise: &Tensor<f64>) -> Result<Vec<f64>, ObjectiveError> {
    let mut g = Graph::<f64>::new();
    let xs = seq(&mut g, batch);
    let states = g.constant_f64(&batch.states);
    let inbound = match &nets.encoder {
        Some(enc) => {
            let p = ps.encoder.bind(&mut g, false);
            Some(online_messages(&mut g, enc, &p, &xs, batch, noise).2)
        }
        None => None,
    };
    let p = ps.critics[0].bind(&mut g, false);
    let q = online_q_tot(&mut g, nets, &p, &xs, inbound, states, batch);
    Ok(g.value(q).data.clone())
}

/// Mean squared TD residual over valid steps; trains the critic(s) and the
/// encoder. With two critics both regress on the shared pessimistic target
/// and the loss is their average.
pub fn td_loss<S: Real>(
    nets: &Networks,
    ps: &ParamSet,
    batch: &Batch,
    noise: &MessageNoise,
    cfg: &IBConfig,
) -> Result<LossEval, ObjectiveError> {
    check_batch(nets, batch, noise)?;
    let y = td_targets(nets, ps, batch, noise, cfg)?;
    let mut g = Graph::<S>::new();
    let xs = seq(&mut g, batch);
    let states = g.constant_f64(&batch.states);
    let enc_p = nets.encoder.as_ref().map(|_| ps.encoder.bind(&mut g, true));
    let inbound = match (&nets.encoder, &enc_p) {
        (Some(enc), Some(p)) => Some(online_messages(&mut g, enc, p, &xs, batch, &noise.online).2),
        _ => None,
    };
    let crit_p: Vec<Bound> = ps.critics.iter().map(|c| c.bind(&mut g, true)).collect();
    let ycol = g.constant_f64(&Tensor::from_vec(batch.samples(), 1, y));
    let mut parts = Vec::with_capacity(crit_p.len());
    for p in &crit_p {
        let q = online_q_tot(&mut g, nets, p, &xs, inbound, states, batch);
        let d = g.sub(q, ycol);
        let d2 = g.square(d);
        parts.push(masked_mean(&mut g, d2, &batch.valid_col(), batch.valid_count() * crit_p.len()));
    }
    let loss = parts[1..].iter().fold(parts[0], |acc, &p| g.add(acc, p));
    let grads = g.backward(loss);
    let mut bound: Vec<(&Bound, &ParamGroup)> = crit_p.iter().zip(&ps.critics).collect();
    if let Some(p) = &enc_p {
        bound.push((p, &ps.encoder));
    }
    Ok(LossEval { value: Real::to_f64(g.value(loss).item()), grads: collect(&grads, &bound) })
}

// ---------------------------------------------------------------------------
// policy loss
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyEval {
    pub eval: LossEval,
    /// Mean policy entropy over valid agent rows.
    pub entropy: f64,
    pub entropy_per_agent: Vec<f64>,
}

/// Critic values `V_i(a)` per agent row and action: agent `i` takes `a`
/// while the others hold the online greedy joint action.
pub fn policy_critic_values(
    nets: &Networks,
    ps: &ParamSet,
    batch: &Batch,
    noise: &MessageNoise,
) -> Result<Vec<Tensor<f64>>, ObjectiveError> {
    let tabs = tables(nets, &ps.critics, &ps.encoder, batch, &noise.online)?;
    let (n, na) = (batch.n_agents, batch.n_actions);
    let mut out = vec![Tensor::zeros(batch.rows(), na); tabs.len()];
    for s in 0..batch.samples() {
        if !batch.valid[s] {
            continue;
        }
        let star = greedy_min(&tabs, s);
        for i in 0..n {
            for a in 0..na {
                let c = tabs[0].with_action(star, i, a);
                for (k, t) in tabs.iter().enumerate() {
                    out[k].set(s * n + i, a, t.q(s, c, i));
                }
            }
        }
    }
    Ok(out)
}

/// `−q_mix(s, [Σ_a π_i(a)(V_i(a) − α log π_i(a))]_i)` averaged over valid
/// steps; trains the actor only.
pub fn policy_loss<S: Real>(
    nets: &Networks,
    ps: &ParamSet,
    batch: &Batch,
    noise: &MessageNoise,
    cfg: &IBConfig,
) -> Result<PolicyEval, ObjectiveError> {
    check_batch(nets, batch, noise)?;
    let values = policy_critic_values(nets, ps, batch, noise)?;
    let alpha = cfg.alpha(ps);
    let mut g = Graph::<S>::new();
    let xs = seq(&mut g, batch);
    let states = g.constant_f64(&batch.states);
    let pa = ps.actor.bind(&mut g, true);
    let crit_p: Vec<Bound> = ps.critics.iter().map(|c| c.bind(&mut g, false)).collect();
    let logits = nets.actor.logits(&mut g, &pa, &xs);
    let probs = g.masked_softmax(logits, batch.avail.clone());
    let logp = g.masked_log_softmax(logits, batch.avail.clone());
    let ent_term = g.scale(logp, alpha);
    let mut mixed: Option<Var> = None;
    for (p, v) in crit_p.iter().zip(&values) {
        let v = g.constant_f64(v);
        let inner = g.sub(v, ent_term);
        let w = g.mul(probs, inner);
        let soft = g.row_sum(w);
        let soft = g.reshape(soft, batch.samples(), batch.n_agents);
        let m = nets.critic.mixer.mix(&mut g, p, soft, states);
        mixed = Some(match mixed {
            None => m,
            Some(prev) => g.minimum(prev, m),
        });
    }
    let mixed = mixed.expect("at least one critic");
    let neg = g.neg(mixed);
    let loss = masked_mean(&mut g, neg, &batch.valid_col(), batch.valid_count());
    let grads = g.backward(loss);

    let (pv, lv) = (g.value(probs).cast::<f64>(), g.value(logp).cast::<f64>());
    let n = batch.n_agents;
    let mut per_agent = vec![0.0; n];
    for s in (0..batch.samples()).filter(|&s| batch.valid[s]) {
        for (i, e) in per_agent.iter_mut().enumerate() {
            *e += entropy_of_row(&pv, &lv, s * n + i);
        }
    }
    let count = batch.valid_count() as f64;
    per_agent.iter_mut().for_each(|e| *e /= count);
    let entropy = per_agent.iter().sum::<f64>() / n as f64;
    Ok(PolicyEval {
        eval: LossEval { value: Real::to_f64(g.value(loss).item()), grads: collect(&grads, &[(&pa, &ps.actor)]) },
        entropy,
        entropy_per_agent: per_agent,
    })
}

// ---------------------------------------------------------------------------
// temperature loss
// ---------------------------------------------------------------------------

/// `α·(H − H_0)` with the entropy `H` detached; the gradient lands on log α.
/// Fixed mode returns zero.
pub fn temperature_loss<S: Real>(ps: &ParamSet, entropy: f64, n_actions: usize, cfg: &IBConfig) -> LossEval {
    let grp = &ps.log_alpha;
    if cfg.alpha_mode == AlphaMode::Fixed {
        return LossEval { value: 0.0, grads: [(grp.name.clone(), grp.zeros_like())].into() };
    }
    let mut g = Graph::<S>::new();
    let p = grp.bind(&mut g, true);
    let a = g.exp(p[0]);
    let loss = g.scale(a, entropy - cfg.h0(n_actions));
    let grads = g.backward(loss);
    LossEval { value: Real::to_f64(g.value(loss).item()), grads: collect(&grads, &[(&p, grp)]) }
}

// ---------------------------------------------------------------------------
// message loss
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct MessageEval {
    pub eval: LossEval,
    pub ce: f64,
    pub kl: f64,
    /// Decoder argmax accuracy on the recorded actions, per agent.
    pub accuracy: Vec<f64>,
    /// Mean `‖μ‖²` over valid agent rows.
    pub mu_sq: f64,
}

/// Per-row KL of the message posterior to the prior, `rows × 1`.
fn kl_rows<S: Real>(g: &mut Graph<S>, nets: &Networks, pp: Option<&Bound>, mu: Var, lv: Option<Var>) -> Var {
    let (rows, d) = g.shape(mu);
    let (pm, plv) = match (nets.prior, pp) {
        (Some(pn), Some(p)) => (g.repeat_rows(p[pn.mean], rows), g.repeat_rows(p[pn.log_var], rows)),
        _ => {
            let z = g.constant_f64(&Tensor::zeros(rows, d));
            (z, z)
        }
    };
    let lv = lv.unwrap_or_else(|| g.constant_f64(&Tensor::zeros(rows, d)));
    let diff = g.sub(mu, pm);
    let sq = g.square(diff);
    let var = g.exp(lv);
    let num = g.add(var, sq);
    let neg_plv = g.neg(plv);
    let inv_pv = g.exp(neg_plv);
    let ratio = g.mul(num, inv_pv);
    let log_ratio = g.sub(plv, lv);
    let t = g.add(log_ratio, ratio);
    let t = g.add_scalar(t, -1.0);
    let t = g.scale(t, 0.5);
    g.row_sum(t)
}

/// `CE + β·KL`: decoder negative log-likelihood of the recorded actions from
/// the other agents' messages, plus the message KL to the prior. Trains the
/// encoder, decoder and learned prior.
pub fn message_loss<S: Real>(
    nets: &Networks,
    ps: &ParamSet,
    batch: &Batch,
    noise: &MessageNoise,
    cfg: &IBConfig,
) -> Result<MessageEval, ObjectiveError> {
    let (enc, dec) = match (&nets.encoder, &nets.decoder) {
        (Some(e), Some(d)) => (e, d),
        _ => return Err(ObjectiveError::MessagesOff),
    };
    check_batch(nets, batch, noise)?;
    if let Some(pn) = nets.prior {
        if let Some(&bad) = ps.prior.tensors[pn.log_var].data.iter().find(|v| !v.is_finite()) {
            return Err(ObjectiveError::NonPositiveVariance(bad.exp()));
        }
    }
    let mut g = Graph::<S>::new();
    let xs = seq(&mut g, batch);
    let pe = ps.encoder.bind(&mut g, true);
    let pd = ps.decoder.bind(&mut g, true);
    let pp = nets.prior.map(|_| ps.prior.bind(&mut g, true));
    let (mu, lv, inbound) = online_messages(&mut g, enc, &pe, &xs, batch, &noise.online);
    let dinb = decoder_inbound(&mut g, inbound, batch.n_agents);
    let lp = dec.log_probs(&mut g, &pd, &xs, dinb, batch.avail.clone());
    let chosen = g.gather_cols(lp, batch.actions.clone());
    let rows_mask = batch.valid_rows_col();
    let nrows = batch.valid_count() * batch.n_agents;
    let ll = masked_mean(&mut g, chosen, &rows_mask, nrows);
    let ce = g.neg(ll);
    let klr = kl_rows(&mut g, nets, pp.as_ref(), mu, lv);
    let kl = masked_mean(&mut g, klr, &rows_mask, nrows);
    let bkl = g.scale(kl, cfg.beta);
    let loss = g.add(ce, bkl);
    let grads = g.backward(loss);

    let mut bound = vec![(&pe, &ps.encoder), (&pd, &ps.decoder)];
    if let Some(p) = &pp {
        bound.push((p, &ps.prior));
    }
    let lpv = g.value(lp).cast::<f64>();
    let muv = g.value(mu).cast::<f64>();
    let n = batch.n_agents;
    let mut hits = vec![0.0; n];
    let mut mu_sq = 0.0;
    for r in (0..batch.rows()).filter(|&r| batch.valid[r / n]) {
        let mask = &batch.avail[r * batch.n_actions..(r + 1) * batch.n_actions];
        if lpv.masked_argmax_row(r, Some(mask)) == batch.actions[r] {
            hits[r % n] += 1.0;
        }
        mu_sq += muv.row(r).iter().map(|x| x * x).sum::<f64>();
    }
    let count = batch.valid_count() as f64;
    Ok(MessageEval {
        eval: LossEval { value: Real::to_f64(g.value(loss).item()), grads: collect(&grads, &bound) },
        ce: Real::to_f64(g.value(ce).item()),
        kl: Real::to_f64(g.value(kl).item()),
        accuracy: hits.iter().map(|h| h / count).collect(),
        mu_sq: mu_sq / nrows as f64,
    })
}

#[cfg(test)]
mod tests;
