//! Value-based VDN and QMIX learners. They share the environment, replay
//! buffer, batch layout, critic and mixer code with LSF-SAC and differ only in
//! acting ε-greedily on local values and training on the TD loss alone.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::env::{payoff, EpisodeStep};
use crate::learner::{self, Algo, Batch, LearnerConfig, LearnerError, TrainState};
use crate::nets::{Dims, NetConfig, Networks};
use crate::objective::{recorded_q_tot, td_loss, IBConfig, LossReport, MessageNoise};

/// Linear ε decay from `start` to `end` over `steps` env steps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub steps: u64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        Self { start: 1.0, end: 0.05, steps: 5000 }
    }
}

impl EpsilonSchedule {
    pub fn validate(&self) -> Result<(), String> {
        for v in [self.start, self.end] {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("epsilon {v} outside [0, 1]"));
            }
        }
        Ok(())
    }

    pub fn at(&self, step: u64) -> f64 {
        if self.steps == 0 || step >= self.steps {
            return self.end;
        }
        let f = step as f64 / self.steps as f64;
        (self.start + f * (self.end - self.start)).clamp(0.0, 1.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaselineConfig {
    pub algo: Algo,
    pub epsilon: EpsilonSchedule,
    pub lr: f64,
    pub target_interval: u64,
    pub batch_size: usize,
}

impl BaselineConfig {
    pub fn learner_config(&self, seed: u64) -> LearnerConfig {
        LearnerConfig {
            algo: self.algo,
            seed,
            epsilon: self.epsilon,
            lr: self.lr,
            target_interval: self.target_interval,
            batch_size: self.batch_size,
            ..LearnerConfig::default()
        }
    }
}

impl Default for BaselineConfig {
    fn default() -> Self {
        let l = LearnerConfig::default();
        Self { algo: Algo::Qmix, epsilon: EpsilonSchedule::default(), lr: l.lr, target_interval: l.target_interval, batch_size: l.batch_size }
    }
}

pub fn vdn_mix(q: &[f64]) -> f64 {
    q.iter().sum()
}

/// Uniform over available actions with probability `eps`, otherwise the
/// masked argmax (lowest index on ties).
pub fn epsilon_greedy<R: Rng + ?Sized>(q: &[f64], eps: f64, mask: &[bool], rng: &mut R) -> usize {
    let avail: Vec<usize> = (0..q.len()).filter(|&a| mask[a]).collect();
    assert!(!avail.is_empty(), "epsilon_greedy needs an available action");
    if rng.gen::<f64>() < eps {
        return avail[rng.gen_range(0..avail.len())];
    }
    let mut best = avail[0];
    for &a in &avail[1..] {
        if q[a] > q[best] {
            best = a;
        }
    }
    best
}

/// `[r + γ·max Q_tot⁻ − Q_tot]²` on the critic only; no messages, actors or
/// entropy terms.
pub fn baseline_train_step(st: &mut TrainState, batch: &Batch) -> Result<LossReport, LearnerError> {
    let noise = MessageNoise::zeros(batch.rows(), st.nets.cfg.msg_dim);
    let ib = IBConfig { soft_target: false, ..st.cfg.ib.clone() };
    let td = td_loss::<f32>(&st.nets, &st.params, batch, &noise, &ib)?;
    let mut rep = LossReport { td_loss: td.value, total: td.value, ..LossReport::default() };
    if !td.value.is_finite() {
        return Err(LearnerError::NonFinite { what: "td_loss", step: st.learner_steps, report: Box::new(rep) });
    }
    let n = learner::apply(st, "critic0", &td.grads["critic0"]);
    rep.grad_norms.insert("critic0".into(), n);
    Ok(rep)
}

// ---------------------------------------------------------------------------
// Representational gap on the matrix game
// ---------------------------------------------------------------------------

/// One single-step episode per joint action, rewarded with its payoff.
pub fn payoff_batch(dims: &Dims) -> Batch {
    let mut eps = Vec::new();
    for u1 in 0..3 {
        for u2 in 0..3 {
            eps.push(crate::env::Episode {
                steps: vec![EpisodeStep {
                    state: vec![1.0],
                    obs: vec![vec![1.0]; 2],
                    avail: vec![vec![true; 3]; 2],
                    actions: vec![u1, u2],
                    reward: payoff(u1, u2).expect("in range"),
                    terminated: true,
                }],
            });
        }
    }
    let refs: Vec<_> = eps.iter().collect();
    Batch::from_episodes(&refs, dims, 0.0)
}

/// Lower bound on the max-error of any fit `f(q1(u1), q2(u2))` with `f`
/// non-decreasing in each argument. For two own actions `x`, `y` of one
/// agent, the learned local values put one above the other; `q(x) ≥ q(y)`
/// forces `f̂(x,z) ≥ f̂(y,z)` for every partner action `z`, which costs at least
/// `max_z (R(y,z) − R(x,z)) / 2`. Either ordering is possible, so each pair
/// yields the cheaper of the two; the bound is the largest over all pairs.
pub fn monotonic_error_bound(table: &[[f64; 3]; 3]) -> f64 {
    let mut bound: f64 = 0.0;
    for agent in 0..2 {
        let entry = |own: usize, other: usize| if agent == 0 { table[own][other] } else { table[other][own] };
        let cost = |x: usize, y: usize| (0..3).map(|z| entry(y, z) - entry(x, z)).fold(0.0, f64::max) / 2.0;
        for x in 0..3 {
            for y in x + 1..3 {
                bound = bound.max(cost(x, y).min(cost(y, x)));
            }
        }
    }
    bound
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitResult {
    /// Max absolute error over the 9 payoffs, per restart.
    pub max_errors: Vec<f64>,
}

impl FitResult {
    pub fn best(&self) -> f64 {
        self.max_errors.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Regresses the critic (and encoder, when messages are on) onto the 9
/// payoffs with noise-free messages, `restarts` times from random inits.
pub fn fit_payoff(net: &NetConfig, restarts: usize, iters: usize, lr: f64, seed: u64) -> Result<FitResult, LearnerError> {
    let dims = Dims { n_agents: 2, n_actions: 3, obs_dim: 1, state_dim: 1 };
    let batch = payoff_batch(&dims);
    let noise = MessageNoise::zeros(batch.rows(), net.msg_dim);
    let ib = IBConfig::default();
    let mut max_errors = Vec::with_capacity(restarts);
    for r in 0..restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(1000).wrapping_add(r as u64));
        let (nets, mut ps) = Networks::init(net.clone(), dims, &mut rng);
        let mut opt_c = learner::Adam::new(&ps.critics[0], lr);
        let mut opt_e = learner::Adam::new(&ps.encoder, lr);
        for _ in 0..iters {
            // terminal single steps: the TD loss is the plain regression error
            let l = td_loss::<f64>(&nets, &ps, &batch, &noise, &ib)?;
            opt_c.step(&mut ps.critics[0], &l.grads["critic0"], 0.0);
            if let Some(g) = l.grads.get("encoder") {
                if !ps.encoder.is_empty() {
                    opt_e.step(&mut ps.encoder, g, 0.0);
                }
            }
        }
        let q = recorded_q_tot(&nets, &ps, &batch, &noise.online)?;
        let err = q.iter().zip(&batch.rewards).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        max_errors.push(err);
    }
    Ok(FitResult { max_errors })
}
