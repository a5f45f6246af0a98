use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::*;
use crate::env::{run_episode, secret_corridor_spec, Environment, Episode, EpisodeStep, MatrixGame, SecretCorridor};
use crate::nets::joint::{joint_table, JointInputs};
use crate::nets::{Dims, Init, Linear, MixerActivation, NetConfig};

fn corridor_dims() -> Dims {
    let s = secret_corridor_spec().0;
    Dims { n_agents: 2, n_actions: s.n_actions, obs_dim: s.obs_dim, state_dim: s.state_dim }
}

fn matrix_dims() -> Dims {
    Dims { n_agents: 2, n_actions: 3, obs_dim: 1, state_dim: 1 }
}

fn tiny(dims: Dims, seed: u64, edit: impl FnOnce(&mut NetConfig)) -> (Networks, ParamSet) {
    let mut cfg = NetConfig { hidden: 4, msg_dim: 2, mix_hidden: 3, ..NetConfig::default() };
    edit(&mut cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (nets, mut ps) = Networks::init(cfg, dims, &mut rng);
    // non-trivial actor output layer and targets that differ from the online nets
    let out = nets.actor.out;
    ps.actor.tensors[out.w] = crate::nets::init_tensor(out.in_dim, out.out_dim, Init::FanIn, &mut rng);
    for t in ps.target_critics.iter_mut().flat_map(|g| g.tensors.iter_mut()) {
        *t = t.map(|v| v * 0.9 + 0.01);
    }
    (nets, ps)
}

fn random_episodes(n: usize, seed: u64) -> Vec<Episode> {
    let mut env = SecretCorridor::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|k| {
            run_episode(&mut env, seed + k as u64, |o, _| {
                Ok(o.avail.iter().map(|m| {
                    let ok: Vec<usize> = (0..m.len()).filter(|&a| m[a]).collect();
                    ok[rng.gen_range(0..ok.len())]
                }).collect())
            })
            .unwrap()
        })
        .collect()
}

fn corridor_batch(n: usize, seed: u64) -> Batch {
    let eps = random_episodes(n, seed);
    let refs: Vec<&Episode> = eps.iter().collect();
    Batch::from_episodes(&refs, &corridor_dims(), 0.99)
}

fn matrix_batch(joint: &[[usize; 2]], rewards: &[f64]) -> Batch {
    let eps: Vec<Episode> = joint
        .iter()
        .zip(rewards)
        .map(|(a, &r)| Episode {
            steps: vec![EpisodeStep {
                state: vec![1.0],
                obs: vec![vec![1.0], vec![1.0]],
                avail: vec![vec![true; 3]; 2],
                actions: a.to_vec(),
                reward: r,
                terminated: true,
            }],
        })
        .collect();
    let refs: Vec<&Episode> = eps.iter().collect();
    Batch::from_episodes(&refs, &matrix_dims(), 0.99)
}

fn noise_for(batch: &Batch, d: usize, seed: u64) -> MessageNoise {
    MessageNoise::sample(batch.rows(), d, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn set_linear(grp: &mut ParamGroup, lin: Linear, w: f64, b: &[f64]) {
    grp.tensors[lin.w] = Tensor::filled(lin.in_dim, lin.out_dim, w);
    grp.tensors[lin.b] = Tensor::from_vec(1, lin.out_dim, b.to_vec());
}

/// Sets the mixer of `grp` to fixed weights independent of the state.
fn fixed_mixer(nets: &Networks, grp: &mut ParamGroup, w1: &[f64], b1: &[f64], w2: &[f64], b2: f64) {
    let m = nets.critic.mixer.monotonic().unwrap().clone();
    set_linear(grp, m.w1, 0.0, w1);
    set_linear(grp, m.b1, 0.0, b1);
    set_linear(grp, m.w2, 0.0, w2);
    set_linear(grp, m.b2a, 0.0, &vec![0.0; m.hidden]);
    set_linear(grp, m.b2b, 0.0, &[b2]);
}

fn group_mut<'a>(ps: &'a mut ParamSet, name: &str) -> &'a mut ParamGroup {
    ps.groups_mut().into_iter().find(|g| g.name == name).expect("group exists")
}

/// Relative error `‖analytic − fd‖ / max(‖analytic‖, ‖fd‖)` over one group,
/// with the analytic gradient from `grad` and central differences of `value`.
fn fd_rel_error_split(
    ps: &ParamSet,
    group: &str,
    eps: f64,
    grad: impl Fn(&ParamSet) -> LossEval,
    value: impl Fn(&ParamSet) -> LossEval,
) -> f64 {
    let analytic: Vec<f64> = grad(ps).grads[group].iter().flat_map(|t| t.data.clone()).collect();
    let mut fd = Vec::with_capacity(analytic.len());
    let shapes: Vec<usize> = ps.groups().into_iter().find(|g| g.name == group).unwrap().tensors.iter().map(|t| t.len()).collect();
    for (ti, &len) in shapes.iter().enumerate() {
        for k in 0..len {
            let eval = |delta: f64| {
                let mut q = ps.clone();
                group_mut(&mut q, group).tensors[ti].data[k] += delta;
                value(&q).value
            };
            fd.push((eval(eps) - eval(-eps)) / (2.0 * eps));
        }
    }
    let diff: f64 = analytic.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nf: f64 = fd.iter().map(|a| a * a).sum::<f64>().sqrt();
    assert!(na > 1e-8, "gradient of {group} vanishes; check is vacuous");
    diff / na.max(nf)
}

fn fd_rel_error(ps: &ParamSet, group: &str, eps: f64, f: impl Fn(&ParamSet) -> LossEval) -> f64 {
    fd_rel_error_split(ps, group, eps, &f, &f)
}

// ---------------------------------------------------------------------------

#[test]
fn td_reduces_to_reward() {
    let (nets, mut ps) = tiny(matrix_dims(), 1, |_| {});
    fixed_mixer(&nets, &mut ps.critics[0], &[0.0; 6], &[0.0; 3], &[0.0; 3], 0.0);
    let batch = matrix_batch(&[[0, 1]], &[1.0]);
    let cfg = IBConfig::default();
    let l = td_loss::<f64>(&nets, &ps, &batch, &noise_for(&batch, 2, 0), &cfg).unwrap();
    assert!((l.value - 1.0).abs() < 1e-12);
}

#[test]
fn td_hand_mixer_example() {
    let (nets, mut ps) = tiny(matrix_dims(), 2, |c| {
        c.mix_hidden = 2;
        c.mixer_activation = MixerActivation::Identity;
    });
    let grp = &mut ps.critics[0];
    fixed_mixer(&nets, grp, &[0.5, 1.0, 2.0, 0.0], &[0.0, 0.0], &[1.0, 1.0], 0.0);
    let q = nets.critic.local.q;
    set_linear(grp, q, 0.0, &[1.0, 2.0, 0.0]);
    let mut batch = matrix_batch(&[[0, 1]], &[1.0]);
    batch.gamma = 0.9;
    let l = td_loss::<f64>(&nets, &ps, &batch, &noise_for(&batch, 2, 0), &IBConfig::default()).unwrap();
    assert!((l.value - 20.25).abs() < 1e-10);
}

#[test]
fn td_bellman_fixed_point() {
    let c = 3.0;
    let (nets, mut ps) = tiny(corridor_dims(), 3, |_| {});
    fixed_mixer(&nets, &mut ps.critics[0], &[0.0; 6], &[0.0; 3], &[0.0; 3], c);
    ps.sync_target();
    let mut batch = corridor_batch(4, 3);
    for s in 0..batch.samples() {
        batch.rewards[s] = if batch.terminated[s] { c } else { (1.0 - batch.gamma) * c };
    }
    let l = td_loss::<f64>(&nets, &ps, &batch, &noise_for(&batch, 2, 1), &IBConfig::default()).unwrap();
    assert!(l.value.abs() < 1e-20);
}

#[test]
fn td_rejects_empty_batch() {
    let (nets, ps) = tiny(matrix_dims(), 4, |_| {});
    let batch = matrix_batch(&[], &[]);
    let err = td_loss::<f64>(&nets, &ps, &batch, &MessageNoise::zeros(0, 2), &IBConfig::default()).unwrap_err();
    assert_eq!(err, ObjectiveError::EmptyBatch);
}

#[test]
fn greedy_examples() {
    let q = vec![vec![3.8, -2.1, -2.3], vec![4.2, 2.3, 2.3]];
    assert_eq!(greedy_joint_action(&q, None), vec![0, 0]);
    let flat = vec![vec![1.0; 3], vec![1.0; 3]];
    assert_eq!(greedy_joint_action(&flat, None), vec![0, 0]);
    let masks = vec![vec![false, true, true], vec![true; 3]];
    assert_eq!(greedy_joint_action(&flat, Some(&masks)), vec![1, 0]);
}

/// Per-agent argmax of a plain monotonic critic equals the brute-force
/// joint argmax of its mixed value on the matrix game.
#[test]
fn igm_holds_for_monotonic_critic() {
    let batch = matrix_batch(&[[0, 0]], &[0.0]);
    for seed in 0..100 {
        let (nets, ps) = tiny(matrix_dims(), 1000 + seed, |c| c.messages = false);
        let ch = trunk_states(&nets.critic.local.trunk, &ps.critics[0], &batch);
        let inp = JointInputs { critic_h: &ch, enc_h: None, state: &batch.states, avail: &batch.avail, noise: None };
        let t = joint_table(&nets, &ps.critics[0], None, inp).unwrap();
        let local: Vec<Vec<f64>> = (0..2).map(|i| (0..3).map(|a| t.q(0, t.with_action(0, i, a), i)).collect()).collect();
        let per_agent = greedy_joint_action(&local, None);
        assert_eq!(t.decode(t.greedy(0)), per_agent, "seed {seed}");
    }
}

#[test]
fn message_loss_uniform_decoder_and_zero_means() {
    let (nets, mut ps) = tiny(matrix_dims(), 5, |_| {});
    let dec = nets.decoder.as_ref().unwrap().out;
    set_linear(&mut ps.decoder, dec, 0.0, &[0.0; 3]);
    let mu = nets.encoder.as_ref().unwrap().mu;
    set_linear(&mut ps.encoder, mu, 0.0, &[0.0; 2]);
    let batch = matrix_batch(&[[0, 1], [2, 2]], &[8.0, 0.0]);
    let m = message_loss::<f64>(&nets, &ps, &batch, &noise_for(&batch, 2, 5), &IBConfig::default()).unwrap();
    assert!((m.ce - 3f64.ln()).abs() < 1e-12);
    assert_eq!(m.kl, 0.0);
    assert!((m.eval.value - 3f64.ln()).abs() < 1e-12);
}

#[test]
fn message_loss_kl_matches_closed_form() {
    let (nets, ps) = tiny(matrix_dims(), 6, |c| c.learned_prior = true);
    let batch = matrix_batch(&[[0, 1]], &[8.0]);
    let noise = noise_for(&batch, 2, 6);
    let m = message_loss::<f64>(&nets, &ps, &batch, &noise, &IBConfig::default()).unwrap();
    let x = batch.inputs[0].clone();
    let b = crate::nets::encode_messages(&nets, &ps.encoder, &[x], &batch.actions, &noise.online).unwrap();
    let expect: f64 = (0..2)
        .map(|r| gaussian_kl(b.mu.row(r), None, GaussianPrior::Standard).unwrap())
        .sum::<f64>()
        / 2.0;
    assert!((m.kl - expect).abs() < 1e-12);
    assert!(m.kl >= 0.0 && m.ce >= 0.0);
}

#[test]
fn kl_closed_form_examples() {
    assert_eq!(gaussian_kl(&[0.0, 0.0], None, GaussianPrior::Standard).unwrap(), 0.0);
    assert!((gaussian_kl(&[2.0, 0.0], None, GaussianPrior::Standard).unwrap() - 2.0).abs() < 1e-15);
    let bad = GaussianPrior::Diagonal { mean: &[0.0], var: &[0.0] };
    assert_eq!(gaussian_kl(&[1.0], None, bad), Err(ObjectiveError::NonPositiveVariance(0.0)));
}

#[test]
fn kl_matches_monte_carlo() {
    let mu = [1.0, 1.0, 0.0, 0.0];
    let kl = gaussian_kl(&mu, None, GaussianPrior::Standard).unwrap();
    assert!((kl - 1.0).abs() < 1e-15);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 100_000;
    // log p(x) - log q(x) for x ~ N(mu, I)
    let samples: Vec<f64> = (0..n)
        .map(|_| {
            mu.iter()
                .map(|&m| {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    let x = m + e;
                    -0.5 * e * e + 0.5 * x * x
                })
                .sum()
        })
        .collect();
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    assert!((mean - kl).abs() <= 3.0 * se, "mc {mean} vs {kl} (se {se})");
}

#[test]
fn kl_learned_prior_matches_quadrature() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mu = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
    let (pm, pv) = ([1.0, -1.0], [2.0, 0.5]);
    let kl = gaussian_kl(&mu, None, GaussianPrior::Diagonal { mean: &pm, var: &pv }).unwrap();
    // composite Simpson over ±12 sd per coordinate
    let mut numeric = 0.0;
    for k in 0..2 {
        let (a, b, steps) = (mu[k] - 12.0, mu[k] + 12.0, 20_000);
        let h = (b - a) / steps as f64;
        let f = |x: f64| {
            let lp = -0.5 * (2.0 * std::f64::consts::PI).ln() - 0.5 * (x - mu[k]).powi(2);
            let lq = -0.5 * (2.0 * std::f64::consts::PI * pv[k]).ln() - 0.5 * (x - pm[k]).powi(2) / pv[k];
            lp.exp() * (lp - lq)
        };
        let mut s = f(a) + f(b);
        for i in 1..steps {
            s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        numeric += s * h / 3.0;
    }
    assert!((kl - numeric).abs() < 1e-6, "{kl} vs {numeric}");
}

#[test]
fn policy_loss_uniform_additive_example() {
    let (nets, mut ps) = tiny(matrix_dims(), 9, |c| {
        c.messages = false;
        c.mix_hidden = 2;
        c.mixer_activation = MixerActivation::Identity;
    });
    let out = nets.actor.out;
    set_linear(&mut ps.actor, out, 0.0, &[0.0; 3]);
    let grp = &mut ps.critics[0];
    fixed_mixer(&nets, grp, &[1.0, 0.0, 0.0, 1.0], &[0.0, 0.0], &[1.0, 1.0], 0.0);
    set_linear(grp, nets.critic.local.q, 0.0, &[8.0, -12.0, -12.0]);
    let batch = matrix_batch(&[[0, 0], [1, 2]], &[0.0, 0.0]);
    let cfg = IBConfig { alpha_mode: AlphaMode::Fixed, alpha_fixed: 0.0, ..IBConfig::default() };
    let p = policy_loss::<f64>(&nets, &ps, &batch, &noise_for(&batch, 2, 9), &cfg).unwrap();
    let mean = -16.0 / 3.0;
    assert!((p.eval.value + 2.0 * mean).abs() < 1e-12);
    assert!((p.entropy - 3f64.ln()).abs() < 1e-12);
}

#[test]
fn policy_loss_saturated_greedy() {
    let (nets, mut ps) = tiny(matrix_dims(), 10, |c| {
        c.messages = false;
        c.mix_hidden = 2;
        c.mixer_activation = MixerActivation::Identity;
    });
    let out = nets.actor.out;
    set_linear(&mut ps.actor, out, 0.0, &[40.0, 0.0, 0.0]);
    let grp = &mut ps.critics[0];
    fixed_mixer(&nets, grp, &[1.0, 0.0, 0.0, 1.0], &[0.0, 0.0], &[1.0, 1.0], 0.0);
    set_linear(grp, nets.critic.local.q, 0.0, &[8.0, -12.0, -12.0]);
    let batch = matrix_batch(&[[0, 0]], &[0.0]);
    let cfg = IBConfig { alpha_mode: AlphaMode::Fixed, alpha_fixed: 0.0, ..IBConfig::default() };
    let p = policy_loss::<f64>(&nets, &ps, &batch, &noise_for(&batch, 2, 10), &cfg).unwrap();
    assert!((p.eval.value + 16.0).abs() < 1e-9);
    assert!(p.eval.grad_norm("actor") < 1e-9);
}

#[test]
fn temperature_examples() {
    let (_, mut ps) = tiny(matrix_dims(), 11, |_| {});
    let cfg = IBConfig::default();
    let h0 = cfg.h0(3);
    let at = temperature_loss::<f64>(&ps, h0, 3, &cfg);
    assert_eq!(at.grad_norm("log_alpha"), 0.0);
    let above = temperature_loss::<f64>(&ps, h0 + 0.3, 3, &cfg);
    let g = above.grads["log_alpha"][0].item();
    assert!(g > 0.0);
    let before = ps.alpha();
    ps.set_log_alpha(ps.log_alpha.tensors[0].item() - 1e-2 * g);
    assert!(ps.alpha() < before);
    let fixed = IBConfig { alpha_mode: AlphaMode::Fixed, ..IBConfig::default() };
    let f = temperature_loss::<f64>(&ps, h0 + 0.3, 3, &fixed);
    assert_eq!(f.value, 0.0);
    assert_eq!(f.grad_norm("log_alpha"), 0.0);
}

#[test]
fn total_loss_examples() {
    let zero = IBConfig { lambda1: 0.0, lambda2: 0.0, ..IBConfig::default() };
    assert_eq!(total_loss(2.0, 3.0, 5.0, &zero), 2.0);
    let ones = IBConfig { lambda1: 1.0, lambda2: 1.0, ..IBConfig::default() };
    assert_eq!(total_loss(2.0, 3.0, 5.0, &ones), 10.0);
}

#[test]
fn config_validation() {
    assert!(IBConfig::default().validate().is_ok());
    assert!(IBConfig { beta: -1.0, ..IBConfig::default() }.validate().is_err());
    let bad = IBConfig { alpha_mode: AlphaMode::Fixed, alpha_fixed: 0.0, ..IBConfig::default() };
    assert!(bad.validate().is_err());
}

#[test]
fn losses_touch_only_their_groups() {
    let (nets, ps) = tiny(corridor_dims(), 12, |c| c.learned_prior = true);
    let batch = corridor_batch(3, 12);
    let noise = noise_for(&batch, 2, 12);
    let cfg = IBConfig::default();
    let keys = |e: &LossEval| e.grads.keys().cloned().collect::<Vec<_>>();
    let td = td_loss::<f64>(&nets, &ps, &batch, &noise, &cfg).unwrap();
    assert_eq!(keys(&td), vec!["critic0", "encoder"]);
    assert!(td.grad_norm("critic0") > 0.0 && td.grad_norm("encoder") > 0.0);
    let pol = policy_loss::<f64>(&nets, &ps, &batch, &noise, &cfg).unwrap();
    assert_eq!(keys(&pol.eval), vec!["actor"]);
    let msg = message_loss::<f64>(&nets, &ps, &batch, &noise, &cfg).unwrap();
    assert_eq!(keys(&msg.eval), vec!["decoder", "encoder", "prior"]);
    assert!(msg.eval.grad_norm("prior") > 0.0);
    let tmp = temperature_loss::<f64>(&ps, 0.5, 4, &cfg);
    assert_eq!(keys(&tmp), vec!["log_alpha"]);
}

#[test]
fn td_ignores_target_gradients() {
    // perturbing a target tensor moves the loss only through the bootstrap
    // constant; the online gradient never names a target group
    let (nets, ps) = tiny(corridor_dims(), 13, |_| {});
    let batch = corridor_batch(3, 13);
    let noise = noise_for(&batch, 2, 13);
    let td = td_loss::<f64>(&nets, &ps, &batch, &noise, &IBConfig::default()).unwrap();
    assert!(td.grads.keys().all(|k| !k.starts_with("target")));
}

#[test]
fn gradients_match_finite_differences_f64() {
    let (nets, ps) = tiny(corridor_dims(), 14, |c| c.learned_prior = true);
    let batch = corridor_batch(3, 14);
    let noise = noise_for(&batch, 2, 14);
    let cfg = IBConfig::default();
    let td = |p: &ParamSet| td_loss::<f64>(&nets, p, &batch, &noise, &cfg).unwrap();
    for g in ["critic0", "encoder"] {
        let e = fd_rel_error(&ps, g, 1e-6, td);
        assert!(e <= 1e-4, "td/{g}: {e}");
    }
    let pol = |p: &ParamSet| policy_loss::<f64>(&nets, p, &batch, &noise, &cfg).unwrap().eval;
    let e = fd_rel_error(&ps, "actor", 1e-6, pol);
    assert!(e <= 1e-4, "policy/actor: {e}");
    let msg = |p: &ParamSet| message_loss::<f64>(&nets, p, &batch, &noise, &cfg).unwrap().eval;
    for g in ["encoder", "decoder", "prior"] {
        let e = fd_rel_error(&ps, g, 1e-6, msg);
        assert!(e <= 1e-4, "message/{g}: {e}");
    }
    let tmp = |p: &ParamSet| temperature_loss::<f64>(p, 0.7, 4, &cfg);
    let e = fd_rel_error(&ps, "log_alpha", 1e-6, tmp);
    assert!(e <= 1e-4, "temperature: {e}");
}

#[test]
fn gradients_match_finite_differences_double_q_and_learned_variance() {
    let (nets, ps) = tiny(corridor_dims(), 15, |c| {
        c.double_q = true;
        c.learned_msg_var = true;
    });
    let batch = corridor_batch(2, 15);
    let noise = noise_for(&batch, 2, 15);
    let cfg = IBConfig { soft_target: true, ..IBConfig::default() };
    let td = |p: &ParamSet| td_loss::<f64>(&nets, p, &batch, &noise, &cfg).unwrap();
    for g in ["critic0", "critic1", "encoder"] {
        let e = fd_rel_error(&ps, g, 1e-6, td);
        assert!(e <= 1e-4, "td/{g}: {e}");
    }
    let pol = |p: &ParamSet| policy_loss::<f64>(&nets, p, &batch, &noise, &cfg).unwrap().eval;
    let e = fd_rel_error(&ps, "actor", 1e-6, pol);
    assert!(e <= 1e-4, "policy/actor: {e}");
    let msg = |p: &ParamSet| message_loss::<f64>(&nets, p, &batch, &noise, &cfg).unwrap().eval;
    let e = fd_rel_error(&ps, "encoder", 1e-6, msg);
    assert!(e <= 1e-4, "message/encoder: {e}");
}

/// 32-bit analytic gradients against central differences of the same loss
/// evaluated in 64-bit; differencing an `f32` loss directly is dominated by
/// rounding of the loss value.
#[test]
fn gradients_match_finite_differences_f32() {
    let (nets, ps) = tiny(corridor_dims(), 16, |c| c.learned_prior = true);
    let batch = corridor_batch(3, 16);
    let noise = noise_for(&batch, 2, 16);
    let cfg = IBConfig::default();
    let check = |group: &str, g32: &dyn Fn(&ParamSet) -> LossEval, v64: &dyn Fn(&ParamSet) -> LossEval| {
        let e = fd_rel_error_split(&ps, group, 1e-6, g32, v64);
        assert!(e <= 1e-2, "{group}: {e}");
    };
    let td32 = |p: &ParamSet| td_loss::<f32>(&nets, p, &batch, &noise, &cfg).unwrap();
    let td64 = |p: &ParamSet| td_loss::<f64>(&nets, p, &batch, &noise, &cfg).unwrap();
    check("critic0", &td32, &td64);
    check("encoder", &td32, &td64);
    let pol32 = |p: &ParamSet| policy_loss::<f32>(&nets, p, &batch, &noise, &cfg).unwrap().eval;
    let pol64 = |p: &ParamSet| policy_loss::<f64>(&nets, p, &batch, &noise, &cfg).unwrap().eval;
    check("actor", &pol32, &pol64);
    let msg32 = |p: &ParamSet| message_loss::<f32>(&nets, p, &batch, &noise, &cfg).unwrap().eval;
    let msg64 = |p: &ParamSet| message_loss::<f64>(&nets, p, &batch, &noise, &cfg).unwrap().eval;
    for g in ["encoder", "decoder", "prior"] {
        check(g, &msg32, &msg64);
    }
    let t32 = |p: &ParamSet| temperature_loss::<f32>(p, 0.7, 4, &cfg);
    let t64 = |p: &ParamSet| temperature_loss::<f64>(p, 0.7, 4, &cfg);
    check("log_alpha", &t32, &t64);
}

#[test]
fn variational_bound_never_exceeds_mutual_information() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..10 {
        let toy = ToyJoint::random(&mut rng);
        let mi = toy.conditional_mi();
        assert!(mi >= 0.0);
        for _ in 0..50 {
            let logits = ToyJoint::random_logits(&mut rng, 3.0);
            assert!(toy.variational_bound(&logits) <= mi + 1e-12);
        }
        let tight = toy.variational_bound(&toy.posterior_logits());
        assert!((tight - mi).abs() < 1e-10);
    }
}

#[test]
fn matrix_env_batch_round_trip() {
    let mut env = MatrixGame::new();
    let ep = run_episode(&mut env, 0, |_, _| Ok(vec![0, 0])).unwrap();
    assert_eq!(ep.len(), 1);
    assert_eq!(ep.total_reward(), 8.0);
    assert!(env.spec().episode_limit == 1);
}
