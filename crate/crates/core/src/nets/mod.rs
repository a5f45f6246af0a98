//! Function approximators: decentralized actors, the latent message encoder,
//! the variational decoder and prior, per-agent critics, and the monotonic
//! hypernetwork mixer, together with their parameter groups and target copies.

pub mod checkpoint;
pub mod joint;
mod layers;
mod params;

pub use layers::{GruCell, HistoryEncoder, HistoryKind, Linear};
pub use params::{global_norm, init_bias, init_tensor, Bound, Init, ParamGroup};

use rand::Rng;
use thiserror::Error;

use crate::autodiff::{Graph, Real, Tensor, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch { what: &'static str, expected: usize, got: usize },
    #[error("row {0} has no available action")]
    EmptyMask(usize),
    #[error("prior variance must be positive, got {0}")]
    NonPositiveVariance(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MixerActivation {
    Elu,
    /// Linear mixing; used to check the additive reduction.
    Identity,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MixerKind {
    /// State-conditioned hypernetwork mixer with non-negative weights.
    Monotonic,
    /// `Q_tot = Σ q_i`.
    Additive,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetConfig {
    pub history: HistoryKind,
    pub hidden: usize,
    pub msg_dim: usize,
    pub mix_hidden: usize,
    /// Latent message sharing into the local critics; off is the MASAC ablation.
    pub messages: bool,
    pub learned_msg_var: bool,
    pub learned_prior: bool,
    pub mixer_activation: MixerActivation,
    pub mixer: MixerKind,
    pub double_q: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            history: HistoryKind::Gru,
            hidden: 64,
            msg_dim: 4,
            mix_hidden: 32,
            messages: true,
            learned_msg_var: false,
            learned_prior: false,
            mixer_activation: MixerActivation::Elu,
            mixer: MixerKind::Monotonic,
            double_q: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dims {
    pub n_agents: usize,
    pub n_actions: usize,
    pub obs_dim: usize,
    pub state_dim: usize,
}

impl Dims {
    /// Trunk input: observation, previous action one-hot, agent id one-hot.
    pub fn input_dim(&self) -> usize {
        self.obs_dim + self.n_actions + self.n_agents
    }
}

/// Builds the per-row trunk input `[o, onehot(prev_action), onehot(agent)]`.
pub fn agent_input(dims: &Dims, agent: usize, obs: &[f64], prev_action: Option<usize>) -> Vec<f64> {
    let mut x = Vec::with_capacity(dims.input_dim());
    x.extend_from_slice(obs);
    let mut a = vec![0.0; dims.n_actions];
    if let Some(u) = prev_action {
        a[u] = 1.0;
    }
    x.extend(a);
    let mut id = vec![0.0; dims.n_agents];
    id[agent] = 1.0;
    x.extend(id);
    x
}

pub fn one_hot(rows: &[usize], width: usize) -> Tensor<f64> {
    let mut t = Tensor::zeros(rows.len(), width);
    for (r, &a) in rows.iter().enumerate() {
        t.set(r, a, 1.0);
    }
    t
}

#[derive(Clone, Debug)]
pub struct ActorNet {
    pub trunk: HistoryEncoder,
    pub out: Linear,
}

impl ActorNet {
    pub fn logits<S: Real>(&self, g: &mut Graph<S>, p: &Bound, inputs: &[Var]) -> Var {
        let h = self.trunk.forward_sequence(g, p, inputs);
        self.out.forward(g, p, h)
    }
}

#[derive(Clone, Debug)]
pub struct EncoderNet {
    pub trunk: HistoryEncoder,
    pub head: Linear,
    pub mu: Linear,
    pub log_var: Option<Linear>,
    pub n_actions: usize,
}

impl EncoderNet {
    /// Message mean (and log-variance when learned) from trunk states and
    /// the action each row's agent takes at that step.
    pub fn heads<S: Real>(&self, g: &mut Graph<S>, p: &Bound, h: Var, actions: &[usize]) -> (Var, Option<Var>) {
        let a = g.constant_f64(&one_hot(actions, self.n_actions));
        let x = g.concat_cols(&[h, a]);
        let z = self.head.forward(g, p, x);
        let z = g.relu(z);
        let mu = self.mu.forward(g, p, z);
        let lv = self.log_var.map(|l| l.forward(g, p, z));
        (mu, lv)
    }

    /// Tape-free message mean and log-variance for every row under action `action`.
    pub fn heads_plain(&self, grp: &ParamGroup, h: &Tensor<f64>, action: usize) -> (Tensor<f64>, Option<Tensor<f64>>) {
        let mut x = Tensor::zeros(h.rows, h.cols + self.n_actions);
        for r in 0..h.rows {
            x.row_mut(r)[..h.cols].copy_from_slice(h.row(r));
            x.set(r, h.cols + action, 1.0);
        }
        let z = self.head.apply(grp, &x).map(|v| v.max(0.0));
        (self.mu.apply(grp, &z), self.log_var.map(|l| l.apply(grp, &z)))
    }
}

#[derive(Clone, Debug)]
pub struct LocalCriticNet {
    pub trunk: HistoryEncoder,
    pub head: Linear,
    pub q: Linear,
    /// Width of the inbound message vector (0 when messages are off).
    pub msg_in: usize,
}

impl LocalCriticNet {
    pub fn q_values<S: Real>(&self, g: &mut Graph<S>, p: &Bound, h: Var, inbound: Option<Var>) -> Var {
        let x = match inbound {
            Some(m) => g.concat_cols(&[h, m]),
            None => h,
        };
        let z = self.head.forward(g, p, x);
        let z = g.relu(z);
        self.q.forward(g, p, z)
    }
}

/// Per-sample mixing weights after the absolute-value constraint.
#[derive(Clone, Debug, PartialEq)]
pub struct MixerWeights {
    /// `n_agents × h_mix`, non-negative.
    pub w1: Tensor<f64>,
    pub b1: Vec<f64>,
    /// length `h_mix`, non-negative.
    pub w2: Vec<f64>,
    pub b2: f64,
    pub activation: MixerActivation,
}

impl MixerWeights {
    pub fn apply(&self, q: &[f64]) -> f64 {
        let h = self.b1.len();
        let mut out = self.b2;
        for j in 0..h {
            let mut pre = self.b1[j];
            for (i, &qi) in q.iter().enumerate() {
                pre += qi * self.w1.get(i, j);
            }
            let act = match self.activation {
                MixerActivation::Elu if pre <= 0.0 => pre.exp() - 1.0,
                _ => pre,
            };
            out += self.w2[j] * act;
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct MixerNet {
    pub w1: Linear,
    pub b1: Linear,
    pub w2: Linear,
    pub b2a: Linear,
    pub b2b: Linear,
    pub n_agents: usize,
    pub hidden: usize,
    pub activation: MixerActivation,
}

impl MixerNet {
    /// `Q_tot = |W2|ᵀ act(qᵀ|W1| + b1) + b2` per row of `q` (`B×n`).
    pub fn mix<S: Real>(&self, g: &mut Graph<S>, p: &Bound, q: Var, state: Var) -> Var {
        let w1 = self.w1.forward(g, p, state);
        let w1 = g.abs(w1);
        let b1 = self.b1.forward(g, p, state);
        let pre = g.batched_vecmat(q, w1);
        let pre = g.add(pre, b1);
        let hidden = match self.activation {
            MixerActivation::Elu => g.elu(pre),
            MixerActivation::Identity => pre,
        };
        let w2 = self.w2.forward(g, p, state);
        let w2 = g.abs(w2);
        let b2 = self.b2a.forward(g, p, state);
        let b2 = g.relu(b2);
        let b2 = self.b2b.forward(g, p, b2);
        let y = g.mul(hidden, w2);
        let y = g.row_sum(y);
        g.add(y, b2)
    }

    pub fn weights(&self, grp: &ParamGroup, state: &Tensor<f64>) -> Vec<MixerWeights> {
        let w1 = self.w1.apply(grp, state);
        let b1 = self.b1.apply(grp, state);
        let w2 = self.w2.apply(grp, state);
        let b2h = self.b2a.apply(grp, state).map(|v| v.max(0.0));
        let b2 = self.b2b.apply(grp, &b2h);
        (0..state.rows)
            .map(|r| MixerWeights {
                w1: Tensor::from_vec(self.n_agents, self.hidden, w1.row(r).iter().map(|v| v.abs()).collect()),
                b1: b1.row(r).to_vec(),
                w2: w2.row(r).iter().map(|v| v.abs()).collect(),
                b2: b2.get(r, 0),
                activation: self.activation,
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
pub enum Mixer {
    Monotonic(MixerNet),
    Additive { n_agents: usize },
}

impl Mixer {
    pub fn mix<S: Real>(&self, g: &mut Graph<S>, p: &Bound, q: Var, state: Var) -> Var {
        match self {
            Self::Monotonic(m) => m.mix(g, p, q, state),
            Self::Additive { .. } => g.row_sum(q),
        }
    }

    pub fn weights(&self, grp: &ParamGroup, state: &Tensor<f64>) -> Vec<MixerWeights> {
        match self {
            Self::Monotonic(m) => m.weights(grp, state),
            &Self::Additive { n_agents } => vec![
                MixerWeights {
                    w1: Tensor::filled(n_agents, 1, 1.0),
                    b1: vec![0.0],
                    w2: vec![1.0],
                    b2: 0.0,
                    activation: MixerActivation::Identity,
                };
                state.rows
            ],
        }
    }

    pub fn monotonic(&self) -> Option<&MixerNet> {
        match self {
            Self::Monotonic(m) => Some(m),
            Self::Additive { .. } => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CriticNet {
    pub local: LocalCriticNet,
    pub mixer: Mixer,
}

#[derive(Clone, Debug)]
pub struct DecoderNet {
    pub trunk: HistoryEncoder,
    pub head: Linear,
    pub out: Linear,
}

impl DecoderNet {
    pub fn log_probs<S: Real>(&self, g: &mut Graph<S>, p: &Bound, inputs: &[Var], inbound: Var, mask: Vec<bool>) -> Var {
        let h = self.trunk.forward_sequence(g, p, inputs);
        let x = g.concat_cols(&[h, inbound]);
        let z = self.head.forward(g, p, x);
        let z = g.relu(z);
        let logits = self.out.forward(g, p, z);
        g.masked_log_softmax(logits, mask)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct PriorNet {
    pub mean: usize,
    pub log_var: usize,
}

/// Architecture of every network; weights live in a [`ParamSet`].
#[derive(Clone, Debug)]
pub struct Networks {
    pub cfg: NetConfig,
    pub dims: Dims,
    pub actor: ActorNet,
    pub critic: CriticNet,
    pub encoder: Option<EncoderNet>,
    pub decoder: Option<DecoderNet>,
    pub prior: Option<PriorNet>,
}

/// All learnable parameters plus target copies of the critic(s) and encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    pub actor: ParamGroup,
    pub critics: Vec<ParamGroup>,
    pub encoder: ParamGroup,
    pub decoder: ParamGroup,
    pub prior: ParamGroup,
    pub log_alpha: ParamGroup,
    pub target_critics: Vec<ParamGroup>,
    pub target_encoder: ParamGroup,
}

impl ParamSet {
    pub fn alpha(&self) -> f64 {
        self.log_alpha.tensors[0].item().exp()
    }

    pub fn set_log_alpha(&mut self, v: f64) {
        self.log_alpha.tensors[0] = Tensor::scalar(v);
    }

    /// Online groups followed by targets, in a fixed order.
    pub fn groups(&self) -> Vec<&ParamGroup> {
        let mut v = vec![&self.actor];
        v.extend(self.critics.iter());
        v.extend([&self.encoder, &self.decoder, &self.prior, &self.log_alpha]);
        v.extend(self.target_critics.iter());
        v.push(&self.target_encoder);
        v
    }

    pub fn groups_mut(&mut self) -> Vec<&mut ParamGroup> {
        let mut v = vec![&mut self.actor];
        v.extend(self.critics.iter_mut());
        v.extend([&mut self.encoder, &mut self.decoder, &mut self.prior, &mut self.log_alpha]);
        v.extend(self.target_critics.iter_mut());
        v.push(&mut self.target_encoder);
        v
    }

    pub fn all_finite(&self) -> bool {
        self.groups().iter().all(|g| g.all_finite())
    }

    /// Hard copy θ⁻ ← θ for critics and encoder.
    pub fn sync_target(&mut self) {
        for (t, s) in self.target_critics.iter_mut().zip(&self.critics) {
            t.copy_from(s);
        }
        self.target_encoder.copy_from(&self.encoder);
    }
}

fn history(group: &mut ParamGroup, name: &str, cfg: &NetConfig, dims: &Dims, rng: &mut impl Rng) -> HistoryEncoder {
    HistoryEncoder::new(group, name, cfg.history, dims.input_dim(), cfg.hidden, rng)
}

fn build_critic(group: &mut ParamGroup, cfg: &NetConfig, dims: &Dims, rng: &mut impl Rng) -> CriticNet {
    let msg_in = if cfg.messages { dims.n_agents * cfg.msg_dim } else { 0 };
    let trunk = history(group, "local.trunk", cfg, dims, rng);
    let head = Linear::new(group, "local.head", cfg.hidden + msg_in, cfg.hidden, Init::FanIn, rng);
    let q = Linear::new(group, "local.q", cfg.hidden, dims.n_actions, Init::FanIn, rng);
    let (sd, h, n) = (dims.state_dim, cfg.mix_hidden, dims.n_agents);
    let mixer = match cfg.mixer {
        MixerKind::Additive => Mixer::Additive { n_agents: n },
        MixerKind::Monotonic => Mixer::Monotonic(MixerNet {
            w1: Linear::new(group, "mixer.hyper_w1", sd, n * h, Init::FanIn, rng),
            b1: Linear::new(group, "mixer.hyper_b1", sd, h, Init::FanIn, rng),
            w2: Linear::new(group, "mixer.hyper_w2", sd, h, Init::FanIn, rng),
            b2a: Linear::new(group, "mixer.hyper_b2.0", sd, h, Init::FanIn, rng),
            b2b: Linear::new(group, "mixer.hyper_b2.1", h, 1, Init::FanIn, rng),
            n_agents: n,
            hidden: h,
            activation: cfg.mixer_activation,
        }),
    };
    CriticNet { local: LocalCriticNet { trunk, head, q, msg_in }, mixer }
}

impl Networks {
    /// Builds the architecture and freshly initialized parameters; targets
    /// start as copies of the online groups.
    pub fn init(cfg: NetConfig, dims: Dims, rng: &mut impl Rng) -> (Self, ParamSet) {
        let mut actor_g = ParamGroup::new("actor");
        let actor = ActorNet {
            trunk: history(&mut actor_g, "trunk", &cfg, &dims, rng),
            out: Linear::new(&mut actor_g, "out", cfg.hidden, dims.n_actions, Init::Zero, rng),
        };

        let n_critics = if cfg.double_q { 2 } else { 1 };
        let mut critics = Vec::with_capacity(n_critics);
        let mut critic = None;
        for k in 0..n_critics {
            let mut grp = ParamGroup::new(format!("critic{k}"));
            critic = Some(build_critic(&mut grp, &cfg, &dims, rng));
            critics.push(grp);
        }
        let critic = critic.expect("at least one critic");

        let mut enc_g = ParamGroup::new("encoder");
        let mut dec_g = ParamGroup::new("decoder");
        let mut prior_g = ParamGroup::new("prior");
        let (encoder, decoder, prior) = if cfg.messages {
            let trunk = history(&mut enc_g, "trunk", &cfg, &dims, rng);
            let head = Linear::new(&mut enc_g, "head", cfg.hidden + dims.n_actions, cfg.hidden, Init::FanIn, rng);
            let mu = Linear::new(&mut enc_g, "mu", cfg.hidden, cfg.msg_dim, Init::FanIn, rng);
            let log_var = cfg
                .learned_msg_var
                .then(|| Linear::new(&mut enc_g, "log_var", cfg.hidden, cfg.msg_dim, Init::Zero, rng));
            let encoder = EncoderNet { trunk, head, mu, log_var, n_actions: dims.n_actions };

            let dtrunk = history(&mut dec_g, "trunk", &cfg, &dims, rng);
            let dhead = Linear::new(&mut dec_g, "head", cfg.hidden + dims.n_agents * cfg.msg_dim, cfg.hidden, Init::FanIn, rng);
            let dout = Linear::new(&mut dec_g, "out", cfg.hidden, dims.n_actions, Init::FanIn, rng);
            let decoder = DecoderNet { trunk: dtrunk, head: dhead, out: dout };

            let prior = cfg.learned_prior.then(|| PriorNet {
                mean: prior_g.push("mean", Tensor::zeros(1, cfg.msg_dim)),
                log_var: prior_g.push("log_var", Tensor::zeros(1, cfg.msg_dim)),
            });
            (Some(encoder), Some(decoder), prior)
        } else {
            (None, None, None)
        };

        let mut log_alpha = ParamGroup::new("log_alpha");
        log_alpha.push("log_alpha", Tensor::scalar(0.0));

        let mut target_critics = critics.clone();
        for (k, t) in target_critics.iter_mut().enumerate() {
            t.name = format!("target_critic{k}");
        }
        let mut target_encoder = enc_g.clone();
        target_encoder.name = "target_encoder".into();

        let params = ParamSet {
            actor: actor_g,
            critics,
            encoder: enc_g,
            decoder: dec_g,
            prior: prior_g,
            log_alpha,
            target_critics,
            target_encoder,
        };
        (Self { cfg, dims, actor, critic, encoder, decoder, prior }, params)
    }
}

// ---------------------------------------------------------------------------
// Value-level entry points. These run a throwaway tape and return plain
// tensors; the objective module builds its own tapes to get gradients.
// ---------------------------------------------------------------------------

/// Masked policy for one block of rows.
#[derive(Clone, Debug, PartialEq)]
pub struct ActorOutput {
    pub logits: Tensor<f64>,
    pub probs: Tensor<f64>,
    pub log_probs: Tensor<f64>,
}

/// Latent messages for one time step of `n_agents` rows per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct MessageBundle {
    pub mu: Tensor<f64>,
    pub log_var: Option<Tensor<f64>>,
    pub noise: Tensor<f64>,
    pub m_out: Tensor<f64>,
    /// Per row, the concatenation of every agent's message in the same sample.
    pub inbound: Tensor<f64>,
}

fn check_mask(mask: &[bool], cols: usize) -> Result<(), NetError> {
    for (r, row) in mask.chunks(cols).enumerate() {
        if !row.iter().any(|&x| x) {
            return Err(NetError::EmptyMask(r));
        }
    }
    Ok(())
}

fn seq_consts(g: &mut Graph<f64>, inputs: &[Tensor<f64>], dims: &Dims) -> Result<Vec<Var>, NetError> {
    inputs
        .iter()
        .map(|t| {
            if t.cols != dims.input_dim() {
                return Err(NetError::DimensionMismatch { what: "trunk input", expected: dims.input_dim(), got: t.cols });
            }
            Ok(g.constant(t.clone()))
        })
        .collect()
}

/// Policy of every row at the last step of `inputs` (one tensor per step).
pub fn actor_forward(nets: &Networks, actor: &ParamGroup, inputs: &[Tensor<f64>], mask: &[bool]) -> Result<ActorOutput, NetError> {
    check_mask(mask, nets.dims.n_actions)?;
    let mut g = Graph::<f64>::new();
    let p = actor.bind(&mut g, false);
    let xs = seq_consts(&mut g, inputs, &nets.dims)?;
    let logits = nets.actor.logits(&mut g, &p, &xs);
    let rows = g.shape(xs[0]).0;
    let last = g.shape(logits).0 - rows;
    let logits = g.slice_rows(logits, last, rows);
    let probs = g.masked_softmax(logits, mask.to_vec());
    let logp = g.masked_log_softmax(logits, mask.to_vec());
    Ok(ActorOutput { logits: g.value(logits).clone(), probs: g.value(probs).clone(), log_probs: g.value(logp).clone() })
}

/// Reparameterized messages `m = μ + σ·ε` for the last step of `inputs`.
/// Rows are grouped per sample with `n_agents` consecutive rows.
pub fn encode_messages(
    nets: &Networks,
    encoder: &ParamGroup,
    inputs: &[Tensor<f64>],
    actions: &[usize],
    noise: &Tensor<f64>,
) -> Result<MessageBundle, NetError> {
    let enc = nets.encoder.as_ref().ok_or(NetError::DimensionMismatch { what: "encoder", expected: 1, got: 0 })?;
    let mut g = Graph::<f64>::new();
    let p = encoder.bind(&mut g, false);
    let xs = seq_consts(&mut g, inputs, &nets.dims)?;
    let h = enc.trunk.forward_sequence(&mut g, &p, &xs);
    let rows = g.shape(xs[0]).0;
    let h = g.slice_rows(h, g.shape(h).0 - rows, rows);
    if actions.len() != rows || noise.rows != rows || noise.cols != nets.cfg.msg_dim {
        return Err(NetError::DimensionMismatch { what: "message rows", expected: rows, got: actions.len() });
    }
    let (mu, lv) = enc.heads(&mut g, &p, h, actions);
    let eps = g.constant(noise.clone());
    let m_out = sample_message(&mut g, mu, lv, eps);
    let inbound = inbound_messages(&mut g, m_out, nets.dims.n_agents);
    Ok(MessageBundle {
        mu: g.value(mu).clone(),
        log_var: lv.map(|v| g.value(v).clone()),
        noise: noise.clone(),
        m_out: g.value(m_out).clone(),
        inbound: g.value(inbound).clone(),
    })
}

pub fn sample_message<S: Real>(g: &mut Graph<S>, mu: Var, log_var: Option<Var>, eps: Var) -> Var {
    match log_var {
        Some(lv) => {
            let half = g.scale(lv, 0.5);
            let sd = g.exp(half);
            let scaled = g.mul(sd, eps);
            g.add(mu, scaled)
        }
        None => g.add(mu, eps),
    }
}

/// `(B·n) × d` messages to `(B·n) × (n·d)` inbound vectors: every agent of
/// a sample receives all `n` messages of that sample in agent order.
pub fn inbound_messages<S: Real>(g: &mut Graph<S>, m_out: Var, n_agents: usize) -> Var {
    let (rows, d) = g.shape(m_out);
    let per_sample = g.reshape(m_out, rows / n_agents, n_agents * d);
    g.repeat_rows(per_sample, n_agents)
}

/// Inbound vectors as seen by the decoder: the row's own slot is zeroed.
/// Messages are conditioned on the sender's current action, so the own slot
/// would hand the decoder its target.
pub fn decoder_inbound<S: Real>(g: &mut Graph<S>, inbound: Var, n_agents: usize) -> Var {
    let (rows, cols) = g.shape(inbound);
    let d = cols / n_agents;
    let mut keep = Tensor::filled(rows, cols, 1.0);
    for r in 0..rows {
        let slot = r % n_agents;
        for k in 0..d {
            keep.set(r, slot * d + k, 0.0);
        }
    }
    let keep = g.constant_f64(&keep);
    g.mul(inbound, keep)
}

/// Local action values `q_i(τ_i, ·, m_i)` for the last step of `inputs`.
pub fn local_q_forward(
    nets: &Networks,
    critic: &ParamGroup,
    inputs: &[Tensor<f64>],
    inbound: Option<&Tensor<f64>>,
) -> Result<Tensor<f64>, NetError> {
    let local = &nets.critic.local;
    let got = inbound.map_or(0, |m| m.cols);
    if got != local.msg_in {
        return Err(NetError::DimensionMismatch { what: "inbound message", expected: local.msg_in, got });
    }
    let mut g = Graph::<f64>::new();
    let p = critic.bind(&mut g, false);
    let xs = seq_consts(&mut g, inputs, &nets.dims)?;
    let h = local.trunk.forward_sequence(&mut g, &p, &xs);
    let rows = g.shape(xs[0]).0;
    let h = g.slice_rows(h, g.shape(h).0 - rows, rows);
    let m = match inbound {
        Some(m) if m.rows != rows => {
            return Err(NetError::DimensionMismatch { what: "inbound rows", expected: rows, got: m.rows });
        }
        Some(m) => Some(g.constant(m.clone())),
        None => None,
    };
    let q = local.q_values(&mut g, &p, h, m);
    Ok(g.value(q).clone())
}

/// Mixed joint value for each row of `q_chosen` (`B × n_agents`).
pub fn mix(nets: &Networks, critic: &ParamGroup, q_chosen: &Tensor<f64>, state: &Tensor<f64>) -> Tensor<f64> {
    let mut g = Graph::<f64>::new();
    let p = critic.bind(&mut g, false);
    let q = g.constant(q_chosen.clone());
    let s = g.constant(state.clone());
    let y = nets.critic.mixer.mix(&mut g, &p, q, s);
    g.value(y).clone()
}

/// Decoder distribution over each row's own action given the other agents'
/// messages.
pub fn decoder_forward(
    nets: &Networks,
    decoder: &ParamGroup,
    inputs: &[Tensor<f64>],
    inbound: &Tensor<f64>,
    mask: &[bool],
) -> Result<Tensor<f64>, NetError> {
    let dec = nets.decoder.as_ref().ok_or(NetError::DimensionMismatch { what: "decoder", expected: 1, got: 0 })?;
    check_mask(mask, nets.dims.n_actions)?;
    let mut g = Graph::<f64>::new();
    let p = decoder.bind(&mut g, false);
    let xs = seq_consts(&mut g, inputs, &nets.dims)?;
    let rows = g.shape(xs[0]).0;
    // pad the inbound block so the decoder sees one per step; only the last is read
    let t = xs.len();
    let mut full = Tensor::zeros(rows * t, inbound.cols);
    full.data[(t - 1) * rows * inbound.cols..].copy_from_slice(&inbound.data);
    let m = g.constant(full);
    let m = decoder_inbound(&mut g, m, nets.dims.n_agents);
    let mut full_mask = vec![true; rows * t * nets.dims.n_actions];
    full_mask[(t - 1) * rows * nets.dims.n_actions..].copy_from_slice(mask);
    let lp = dec.log_probs(&mut g, &p, &xs, m, full_mask);
    let lp = g.slice_rows(lp, (t - 1) * rows, rows);
    let out = g.value(lp).clone();
    let mut probs = out.map(f64::exp);
    for (p, &ok) in probs.data.iter_mut().zip(mask) {
        if !ok {
            *p = 0.0;
        }
    }
    Ok(probs)
}

/// `log q_φ(m)`: standard normal by default, learned diagonal Gaussian when
/// the prior group carries parameters.
pub fn prior_logprob(nets: &Networks, prior: &ParamGroup, m: &[f64]) -> f64 {
    let d = m.len();
    let (mean, log_var) = match nets.prior {
        Some(pn) => (prior.tensors[pn.mean].data.clone(), prior.tensors[pn.log_var].data.clone()),
        None => (vec![0.0; d], vec![0.0; d]),
    };
    let ln2pi = (2.0 * std::f64::consts::PI).ln();
    m.iter()
        .zip(&mean)
        .zip(&log_var)
        .map(|((&x, &mu), &lv)| -0.5 * (ln2pi + lv + (x - mu) * (x - mu) / lv.exp()))
        .sum()
}

#[cfg(test)]
mod tests;
