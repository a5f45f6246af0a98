//! Tape-free evaluation of local values and the mixed value for every joint
//! action of a block of samples.
//!
//! With action-conditioned messages an agent's local value depends on what
//! every agent does, so the greedy joint action is found by enumeration.
//! Joint actions are indexed in mixed radix with agent 0 most significant.

use super::{NetError, Networks, ParamGroup};
use crate::autodiff::Tensor;

/// Upper bound on enumerated joint actions per sample.
pub const MAX_COMBOS: usize = 4096;

/// Hidden states and context for one block of samples with `n_agents`
/// consecutive rows each.
#[derive(Clone, Copy, Debug)]
pub struct JointInputs<'a> {
    /// Critic trunk states, `rows × hidden`.
    pub critic_h: &'a Tensor<f64>,
    /// Encoder trunk states, required when messages are on.
    pub enc_h: Option<&'a Tensor<f64>>,
    /// `samples × state_dim`.
    pub state: &'a Tensor<f64>,
    /// `rows × n_actions` availability.
    pub avail: &'a [bool],
    /// Message noise per row (`rows × msg_dim`); zero when absent.
    pub noise: Option<&'a Tensor<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct JointTable {
    pub samples: usize,
    pub n_agents: usize,
    pub n_actions: usize,
    pub n_combos: usize,
    /// `[sample][combo][agent]`
    pub q: Vec<f64>,
    /// `[sample][combo]`
    pub q_tot: Vec<f64>,
    /// Whether every agent's action in the combo is available.
    pub valid: Vec<bool>,
}

pub fn encode_joint(actions: &[usize], n_actions: usize) -> usize {
    actions.iter().fold(0, |c, &a| c * n_actions + a)
}

pub fn decode_joint(mut c: usize, n_agents: usize, n_actions: usize) -> Vec<usize> {
    let mut out = vec![0; n_agents];
    for slot in out.iter_mut().rev() {
        *slot = c % n_actions;
        c /= n_actions;
    }
    out
}

impl JointTable {
    pub fn q(&self, s: usize, c: usize, agent: usize) -> f64 {
        self.q[(s * self.n_combos + c) * self.n_agents + agent]
    }

    pub fn q_tot(&self, s: usize, c: usize) -> f64 {
        self.q_tot[s * self.n_combos + c]
    }

    pub fn is_valid(&self, s: usize, c: usize) -> bool {
        self.valid[s * self.n_combos + c]
    }

    pub fn decode(&self, c: usize) -> Vec<usize> {
        decode_joint(c, self.n_agents, self.n_actions)
    }

    /// Combo obtained by replacing `agent`'s action in `c` with `a`.
    pub fn with_action(&self, c: usize, agent: usize, a: usize) -> usize {
        let mut acts = self.decode(c);
        acts[agent] = a;
        encode_joint(&acts, self.n_actions)
    }

    /// Valid combo with the largest mixed value; ties go to the lowest index.
    pub fn greedy(&self, s: usize) -> usize {
        greedy_by(self.n_combos, |c| self.is_valid(s, c), |c| self.q_tot(s, c))
    }
}

/// Lowest-index argmax of `value` over combos accepted by `valid`.
pub fn greedy_by(n_combos: usize, valid: impl Fn(usize) -> bool, value: impl Fn(usize) -> f64) -> usize {
    let mut best: Option<(usize, f64)> = None;
    for c in 0..n_combos {
        if !valid(c) {
            continue;
        }
        let v = value(c);
        match best {
            Some((_, bv)) if v <= bv => {}
            _ => best = Some((c, v)),
        }
    }
    best.map_or(0, |(c, _)| c)
}

pub fn joint_table(
    nets: &Networks,
    critic: &ParamGroup,
    encoder: Option<&ParamGroup>,
    inp: JointInputs<'_>,
) -> Result<JointTable, NetError> {
    let (n, na) = (nets.dims.n_agents, nets.dims.n_actions);
    let n_combos = na.checked_pow(n as u32).filter(|&c| c <= MAX_COMBOS).ok_or(NetError::DimensionMismatch {
        what: "joint action count",
        expected: MAX_COMBOS,
        got: usize::MAX,
    })?;
    let rows = inp.critic_h.rows;
    if rows % n != 0 || inp.state.rows * n != rows {
        return Err(NetError::DimensionMismatch { what: "joint rows", expected: inp.state.rows * n, got: rows });
    }
    if inp.avail.len() != rows * na {
        return Err(NetError::DimensionMismatch { what: "joint mask", expected: rows * na, got: inp.avail.len() });
    }
    let samples = rows / n;
    let local = &nets.critic.local;
    let hidden = local.head.out_dim;
    let trunk_w = local.trunk.hidden;
    let w_head = &critic.tensors[local.head.w];
    let w_q = &critic.tensors[local.q.w];
    let b_q = &critic.tensors[local.q.b].data;

    // history part of the head pre-activation
    let mut base = Tensor::zeros(rows, hidden);
    {
        let wh = Tensor::from_vec(trunk_w, hidden, w_head.data[..trunk_w * hidden].to_vec());
        let hb = inp.critic_h.matmul(&wh);
        let b = &critic.tensors[local.head.b].data;
        for r in 0..rows {
            for (o, (&x, &bb)) in base.row_mut(r).iter_mut().zip(hb.row(r).iter().zip(b)) {
                *o = x + bb;
            }
        }
    }

    // contrib[a] row r: message of row r under action a, through its slot
    let contrib: Option<Vec<Tensor<f64>>> = if local.msg_in > 0 {
        let enc = nets.encoder.as_ref().ok_or(NetError::DimensionMismatch { what: "encoder", expected: 1, got: 0 })?;
        let grp = encoder.ok_or(NetError::DimensionMismatch { what: "encoder params", expected: 1, got: 0 })?;
        let eh = inp.enc_h.ok_or(NetError::DimensionMismatch { what: "encoder states", expected: rows, got: 0 })?;
        let d = nets.cfg.msg_dim;
        let mut out = Vec::with_capacity(na);
        for a in 0..na {
            let (mu, lv) = enc.heads_plain(grp, eh, a);
            let mut c = Tensor::zeros(rows, hidden);
            for r in 0..rows {
                let slot = r % n;
                for k in 0..d {
                    let eps = inp.noise.map_or(0.0, |t| t.get(r, k));
                    let sd = lv.as_ref().map_or(1.0, |t| (0.5 * t.get(r, k)).exp());
                    let m = mu.get(r, k) + sd * eps;
                    let wrow = &w_head.data[(trunk_w + slot * d + k) * hidden..(trunk_w + slot * d + k + 1) * hidden];
                    for (o, &w) in c.row_mut(r).iter_mut().zip(wrow) {
                        *o += m * w;
                    }
                }
            }
            out.push(c);
        }
        Some(out)
    } else {
        None
    };

    let mixers = nets.critic.mixer.weights(critic, inp.state);
    let mut q = vec![0.0; samples * n_combos * n];
    let mut q_tot = vec![0.0; samples * n_combos];
    let mut valid = vec![false; samples * n_combos];
    let mut pre = vec![0.0; hidden];
    let mut qs = vec![0.0; n];

    // messages off: local values do not depend on the other agents
    let local_q: Option<Vec<f64>> = contrib.is_none().then(|| {
        let mut out = vec![0.0; rows * na];
        for r in 0..rows {
            for a in 0..na {
                out[r * na + a] = head_q(base.row(r), w_q, b_q, a, na);
            }
        }
        out
    });

    for s in 0..samples {
        for c in 0..n_combos {
            let acts = decode_joint(c, n, na);
            valid[s * n_combos + c] = acts.iter().enumerate().all(|(i, &a)| inp.avail[(s * n + i) * na + a]);
            match (&contrib, &local_q) {
                (Some(contrib), _) => {
                    let mut msum = vec![0.0; hidden];
                    for (j, &a) in acts.iter().enumerate() {
                        for (o, &x) in msum.iter_mut().zip(contrib[a].row(s * n + j)) {
                            *o += x;
                        }
                    }
                    for (i, &a) in acts.iter().enumerate() {
                        for ((p, &b), &m) in pre.iter_mut().zip(base.row(s * n + i)).zip(&msum) {
                            *p = b + m;
                        }
                        qs[i] = head_q(&pre, w_q, b_q, a, na);
                    }
                }
                (None, Some(lq)) => {
                    for (i, &a) in acts.iter().enumerate() {
                        qs[i] = lq[(s * n + i) * na + a];
                    }
                }
                (None, None) => unreachable!(),
            }
            q[(s * n_combos + c) * n..(s * n_combos + c + 1) * n].copy_from_slice(&qs);
            q_tot[s * n_combos + c] = mixers[s].apply(&qs);
        }
    }
    Ok(JointTable { samples, n_agents: n, n_actions: na, n_combos, q, q_tot, valid })
}

/// `relu(pre)·W_q[:, a] + b_q[a]`.
fn head_q(pre: &[f64], w_q: &Tensor<f64>, b_q: &[f64], a: usize, na: usize) -> f64 {
    let mut v = b_q[a];
    for (k, &p) in pre.iter().enumerate() {
        if p > 0.0 {
            v += p * w_q.data[k * na + a];
        }
    }
    v
}
