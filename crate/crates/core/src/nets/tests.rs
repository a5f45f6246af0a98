use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::joint::{joint_table, JointInputs};
use super::*;

fn dims() -> Dims {
    Dims { n_agents: 2, n_actions: 3, obs_dim: 2, state_dim: 3 }
}

fn small(cfg_edit: impl FnOnce(&mut NetConfig), seed: u64) -> (Networks, ParamSet) {
    let mut cfg = NetConfig { hidden: 8, mix_hidden: 4, ..NetConfig::default() };
    cfg_edit(&mut cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Networks::init(cfg, dims(), &mut rng)
}

fn inputs(nets: &Networks, obs: &[[f64; 2]]) -> Tensor<f64> {
    let d = nets.dims;
    let mut data = Vec::new();
    for (r, o) in obs.iter().enumerate() {
        data.extend(agent_input(&d, r % d.n_agents, o, None));
    }
    Tensor::from_vec(obs.len(), d.input_dim(), data)
}

fn set_linear(grp: &mut ParamGroup, lin: Linear, w: f64, b: &[f64]) {
    grp.tensors[lin.w] = Tensor::filled(lin.in_dim, lin.out_dim, w);
    grp.tensors[lin.b] = Tensor::from_vec(1, lin.out_dim, b.to_vec());
}

/// Mixer with `W1 = [[0.5, 1], [2, 0]]`, `W2 = [1, 1]`, zero biases.
fn hand_mixer(act: MixerActivation) -> (Networks, ParamSet) {
    let (nets, mut ps) = small(
        |c| {
            c.mix_hidden = 2;
            c.mixer_activation = act;
        },
        0,
    );
    let m = nets.critic.mixer.monotonic().unwrap().clone();
    let grp = &mut ps.critics[0];
    set_linear(grp, m.w1, 0.0, &[0.5, 1.0, 2.0, 0.0]);
    set_linear(grp, m.b1, 0.0, &[0.0, 0.0]);
    set_linear(grp, m.w2, 0.0, &[1.0, 1.0]);
    set_linear(grp, m.b2a, 0.0, &[0.0, 0.0]);
    set_linear(grp, m.b2b, 0.0, &[0.0]);
    (nets, ps)
}

#[test]
fn actor_uniform_at_zero_logits() {
    let (nets, ps) = small(|_| {}, 1);
    let x = inputs(&nets, &[[0.3, -1.0], [1.0, 2.0]]);
    let out = actor_forward(&nets, &ps.actor, &[x], &[true; 6]).unwrap();
    for p in &out.probs.data {
        assert!((p - 1.0 / 3.0).abs() < 1e-12);
    }
}

#[test]
fn actor_masking() {
    let (nets, mut ps) = small(|_| {}, 2);
    let out_lin = nets.actor.out;
    ps.actor.tensors[out_lin.b] = Tensor::from_vec(1, 3, vec![-5.0, 3.0, 9.0]);
    let x = inputs(&nets, &[[0.3, -1.0], [1.0, 2.0]]);
    let mask = [true, false, false, true, true, true];
    let out = actor_forward(&nets, &ps.actor, &[x.clone()], &mask).unwrap();
    assert_eq!(out.probs.row(0), &[1.0, 0.0, 0.0]);
    assert!((out.probs.row(1).iter().sum::<f64>() - 1.0).abs() < 1e-6);
    assert!(out.log_probs.row(0)[0].is_finite());
    let empty = [false, false, false, true, true, true];
    assert_eq!(actor_forward(&nets, &ps.actor, &[x], &empty), Err(NetError::EmptyMask(0)));
}

#[test]
fn actor_is_local() {
    let (nets, mut ps) = small(|_| {}, 3);
    // non-zero output layer so the probe is not vacuous
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let out = nets.actor.out;
    ps.actor.tensors[out.w] = init_tensor(8, 3, Init::FanIn, &mut rng);
    let a = inputs(&nets, &[[0.3, -1.0], [1.0, 2.0]]);
    let b = inputs(&nets, &[[0.3, -1.0], [-4.0, 0.5]]);
    let steps_a = vec![a.clone(), a];
    let steps_b = vec![b.clone(), b];
    let pa = actor_forward(&nets, &ps.actor, &steps_a, &[true; 6]).unwrap();
    let pb = actor_forward(&nets, &ps.actor, &steps_b, &[true; 6]).unwrap();
    assert_eq!(pa.logits.row(0), pb.logits.row(0));
    assert_ne!(pa.logits.row(1), pb.logits.row(1));
}

#[test]
fn zero_noise_gives_the_mean() {
    let (nets, ps) = small(|_| {}, 4);
    let x = inputs(&nets, &[[0.3, -1.0], [1.0, 2.0]]);
    let b = encode_messages(&nets, &ps.encoder, &[x], &[0, 2], &Tensor::zeros(2, 4)).unwrap();
    assert_eq!(b.m_out, b.mu);
    assert_eq!(b.inbound.shape(), (2, 8));
    // both agents see agent 0's message first, then agent 1's
    for r in 0..2 {
        assert_eq!(&b.inbound.row(r)[..4], b.m_out.row(0));
        assert_eq!(&b.inbound.row(r)[4..], b.m_out.row(1));
    }
}

#[test]
fn message_noise_has_unit_variance() {
    let (nets, ps) = small(|_| {}, 5);
    let rows = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let noise = Tensor::from_vec(rows, 4, (0..rows * 4).map(|_| StandardNormal.sample(&mut rng)).collect());
    let obs: Vec<[f64; 2]> = vec![[0.5, 0.5]; rows];
    let x = inputs(&nets, &obs);
    let b = encode_messages(&nets, &ps.encoder, &[x], &vec![1; rows], &noise).unwrap();
    for k in 0..4 {
        let d: Vec<f64> = (0..rows).map(|r| b.m_out.get(r, k) - b.mu.get(r, k)).collect();
        assert!(d.iter().zip(0..).all(|(&v, r)| (v - noise.get(r, k)).abs() < 1e-12));
        let mean = d.iter().sum::<f64>() / rows as f64;
        let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (rows - 1) as f64;
        assert!((0.98..=1.02).contains(&var), "coordinate {k}: variance {var}");
    }
}

#[test]
fn reparameterization_jacobian_is_identity() {
    let mu0 = Tensor::from_vec(1, 3, vec![0.2, -0.4, 1.5]);
    let eps = Tensor::from_vec(1, 3, vec![0.7, 0.1, -0.3]);
    for k in 0..3 {
        let mut g = Graph::<f64>::new();
        let mu = g.param(&mu0);
        let e = g.constant(eps.clone());
        let m = sample_message(&mut g, mu, None, e);
        let pick = g.gather_cols(m, vec![k]);
        let s = g.sum(pick);
        let grad = g.backward(s).get_f64(mu, (1, 3));
        for j in 0..3 {
            assert_eq!(grad.get(0, j), if j == k { 1.0 } else { 0.0 });
        }
    }
}

#[test]
fn local_q_shape_and_message_sensitivity() {
    let (nets, ps) = small(|_| {}, 6);
    let x = inputs(&nets, &[[0.3, -1.0], [1.0, 2.0]]);
    let m0 = Tensor::from_vec(2, 8, (0..16).map(|i| (i as f64 * 0.37).sin()).collect());
    let q = local_q_forward(&nets, &ps.critics[0], &[x.clone()], Some(&m0)).unwrap();
    assert_eq!(q.shape(), (2, 3));
    assert!(q.all_finite());
    let h = 1e-5;
    let mut max_fd: f64 = 0.0;
    for i in 0..8 {
        let mut mp = m0.clone();
        let mut mm = m0.clone();
        mp.data[i] += h;
        mm.data[i] -= h;
        let qp = local_q_forward(&nets, &ps.critics[0], &[x.clone()], Some(&mp)).unwrap();
        let qm = local_q_forward(&nets, &ps.critics[0], &[x.clone()], Some(&mm)).unwrap();
        max_fd = max_fd.max(((qp.get(0, 0) - qm.get(0, 0)) / (2.0 * h)).abs());
    }
    assert!(max_fd > 1e-6);
    let err = local_q_forward(&nets, &ps.critics[0], &[x], Some(&Tensor::zeros(2, 3))).unwrap_err();
    assert!(matches!(err, NetError::DimensionMismatch { .. }));
}

#[test]
fn messages_off_critic_ignores_messages() {
    let (nets, ps) = small(|c| c.messages = false, 7);
    assert!(nets.encoder.is_none() && ps.encoder.is_empty());
    let x = inputs(&nets, &[[0.3, -1.0], [1.0, 2.0]]);
    let q = local_q_forward(&nets, &ps.critics[0], &[x.clone()], None).unwrap();
    assert_eq!(q.shape(), (2, 3));
    assert!(local_q_forward(&nets, &ps.critics[0], &[x], Some(&Tensor::zeros(2, 8))).is_err());
}

#[test]
fn mixer_hand_example() {
    let (nets, ps) = hand_mixer(MixerActivation::Identity);
    let q = Tensor::from_vec(1, 2, vec![1.0, 2.0]);
    let s = Tensor::from_vec(1, 3, vec![0.3, 0.1, -0.2]);
    let y = mix(&nets, &ps.critics[0], &q, &s);
    assert!((y.item() - 5.5).abs() < 1e-12);
    let w = nets.critic.mixer.weights(&ps.critics[0], &s);
    assert!((w[0].apply(&[1.0, 2.0]) - 5.5).abs() < 1e-12);
}

#[test]
fn mixer_additive_reduction() {
    let (nets, mut ps) = hand_mixer(MixerActivation::Identity);
    let w1 = nets.critic.mixer.monotonic().unwrap().w1;
    ps.critics[0].tensors[w1.b] = Tensor::from_vec(1, 4, vec![1.0, 0.0, 0.0, 1.0]);
    let q = Tensor::from_vec(2, 2, vec![3.0, -4.5, 0.25, 7.0]);
    let s = Tensor::zeros(2, 3);
    let y = mix(&nets, &ps.critics[0], &q, &s);
    assert!((y.get(0, 0) + 1.5).abs() < 1e-12);
    assert!((y.get(1, 0) - 7.25).abs() < 1e-12);
}

#[test]
fn mixer_is_monotone() {
    let (nets, ps) = small(|_| {}, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut violations = 0;
    let n = 1000;
    let q = Tensor::from_vec(n, 2, (0..2 * n).map(|_| 10.0 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)).collect());
    let s = Tensor::from_vec(n, 3, (0..3 * n).map(|_| StandardNormal.sample(&mut rng)).collect());
    let base = mix(&nets, &ps.critics[0], &q, &s);
    for i in 0..2 {
        let mut qp = q.clone();
        for r in 0..n {
            qp.set(r, i, q.get(r, i) + 0.1);
        }
        let up = mix(&nets, &ps.critics[0], &qp, &s);
        violations += (0..n).filter(|&r| up.get(r, 0) < base.get(r, 0) - 1e-6).count();
    }
    assert_eq!(violations, 0);
    let w = nets.critic.mixer.weights(&ps.critics[0], &s);
    assert!(w.iter().all(|m| m.w1.data.iter().chain(&m.w2).all(|&x| x >= 0.0)));
}

#[test]
fn prior_density() {
    let (nets, ps) = small(|c| c.msg_dim = 2, 9);
    let at0 = prior_logprob(&nets, &ps.prior, &[0.0, 0.0]);
    assert!((at0 + (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);
    let m = [0.7, -1.2];
    let shift = prior_logprob(&nets, &ps.prior, &m) - at0;
    assert!((shift + 0.5 * (0.49 + 1.44)).abs() < 1e-12);
    let (lnets, lps) = small(
        |c| {
            c.msg_dim = 2;
            c.learned_prior = true;
        },
        9,
    );
    assert_eq!(prior_logprob(&lnets, &lps.prior, &m), prior_logprob(&nets, &ps.prior, &m));
}

#[test]
fn decoder_normalized_and_uniform_at_zero() {
    let (nets, mut ps) = small(|_| {}, 10);
    let x = inputs(&nets, &[[0.3, -1.0], [1.0, 2.0]]);
    let m = Tensor::from_vec(2, 8, (0..16).map(|i| i as f64 * 0.1).collect());
    let mask = [true, true, false, true, true, true];
    let p = decoder_forward(&nets, &ps.decoder, &[x.clone(), x.clone()], &m, &mask).unwrap();
    for r in 0..2 {
        assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
    assert_eq!(p.get(0, 2), 0.0);
    let out = nets.decoder.as_ref().unwrap().out;
    ps.decoder.tensors[out.w] = Tensor::zeros(8, 3);
    ps.decoder.tensors[out.b] = Tensor::zeros(1, 3);
    let p = decoder_forward(&nets, &ps.decoder, &[x], &m, &[true; 6]).unwrap();
    assert!(p.data.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-12));
}

#[test]
fn decoder_ignores_own_message() {
    let (nets, ps) = small(|_| {}, 13);
    let x = inputs(&nets, &[[0.3, -1.0], [1.0, 2.0]]);
    let m = Tensor::from_vec(2, 8, (0..16).map(|i| i as f64 * 0.1).collect());
    let mut m2 = m.clone();
    // agent 0's own slot in its own row
    m2.set(0, 1, 5.0);
    let a = decoder_forward(&nets, &ps.decoder, &[x.clone()], &m, &[true; 6]).unwrap();
    let b = decoder_forward(&nets, &ps.decoder, &[x], &m2, &[true; 6]).unwrap();
    assert_eq!(a.row(0), b.row(0));
}

#[test]
fn targets_start_as_copies_and_sync() {
    let (nets, mut ps) = small(|_| {}, 14);
    assert_eq!(ps.target_critics[0].tensors, ps.critics[0].tensors);
    assert_eq!(ps.target_encoder.tensors, ps.encoder.tensors);
    for t in ps.critics[0].tensors.iter_mut() {
        *t = t.map(|v| v + 0.25);
    }
    let x = inputs(&nets, &[[0.3, -1.0], [1.0, 2.0]]);
    let m = Tensor::zeros(2, 8);
    let on = local_q_forward(&nets, &ps.critics[0], &[x.clone()], Some(&m)).unwrap();
    let tg = local_q_forward(&nets, &ps.target_critics[0], &[x.clone()], Some(&m)).unwrap();
    assert_ne!(on, tg);
    ps.sync_target();
    let tg = local_q_forward(&nets, &ps.target_critics[0], &[x], Some(&m)).unwrap();
    assert_eq!(on, tg);
}

#[test]
fn double_q_builds_two_critics() {
    let (_, ps) = small(|c| c.double_q = true, 15);
    assert_eq!(ps.critics.len(), 2);
    assert_ne!(ps.critics[0].tensors, ps.critics[1].tensors);
    let (_, ps) = small(|_| {}, 15);
    assert_eq!(ps.critics.len(), 1);
}

fn graph_q_tot(nets: &Networks, ps: &ParamSet, x: &Tensor<f64>, s: &Tensor<f64>, acts: &[usize], noise: &Tensor<f64>) -> Vec<f64> {
    let b = encode_messages(nets, &ps.encoder, &[x.clone()], acts, noise).unwrap();
    let q = local_q_forward(nets, &ps.critics[0], &[x.clone()], Some(&b.inbound)).unwrap();
    let samples = s.rows;
    let chosen = Tensor::from_vec(samples, 2, (0..2 * samples).map(|r| q.get(r, acts[r])).collect());
    mix(nets, &ps.critics[0], &chosen, s).data
}

#[test]
fn joint_table_matches_graph_path() {
    let (nets, ps) = small(|_| {}, 16);
    let x = inputs(&nets, &[[0.3, -1.0], [1.0, 2.0], [0.0, 0.5], [-0.5, 0.1]]);
    let s = Tensor::from_vec(2, 3, vec![0.1, 0.2, 0.3, -1.0, 0.0, 1.0]);
    let noise = Tensor::from_vec(4, 4, (0..16).map(|i| (i as f64).cos()).collect());
    let ch = {
        let mut g = Graph::<f64>::new();
        let p = ps.critics[0].bind(&mut g, false);
        let xv = g.constant(x.clone());
        let h = nets.critic.local.trunk.forward_sequence(&mut g, &p, &[xv]);
        g.value(h).clone()
    };
    let eh = {
        let mut g = Graph::<f64>::new();
        let p = ps.encoder.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let h = nets.encoder.as_ref().unwrap().trunk.forward_sequence(&mut g, &p, &[xv]);
        g.value(h).clone()
    };
    let mut avail = vec![true; 12];
    avail[3 + 2] = false;
    let inp = JointInputs { critic_h: &ch, enc_h: Some(&eh), state: &s, avail: &avail, noise: Some(&noise) };
    let table = joint_table(&nets, &ps.critics[0], Some(&ps.encoder), inp).unwrap();
    assert_eq!(table.n_combos, 9);
    for c in 0..9 {
        let a = table.decode(c);
        let acts = vec![a[0], a[1], a[0], a[1]];
        let y = graph_q_tot(&nets, &ps, &x, &s, &acts, &noise);
        for smp in 0..2 {
            assert!((table.q_tot(smp, c) - y[smp]).abs() < 1e-10);
        }
        assert_eq!(table.is_valid(0, c), a[1] != 2);
        assert!(table.is_valid(1, c));
    }
    let g0 = table.greedy(0);
    assert!(table.is_valid(0, g0));
    assert_eq!(table.with_action(g0, 1, table.decode(g0)[1]), g0);
}

#[test]
fn checkpoint_round_trip() {
    let (_, ps) = small(|c| c.double_q = true, 17);
    let dir = tempfile::tempdir().unwrap();
    checkpoint::save(&ps, dir.path()).unwrap();
    let (_, mut other) = small(|c| c.double_q = true, 18);
    assert_ne!(other, ps);
    checkpoint::load(&mut other, dir.path()).unwrap();
    assert_eq!(other, ps);
    let (_, mut wrong) = small(|c| c.hidden = 6, 18);
    assert!(checkpoint::load(&mut wrong, dir.path()).is_err());
}
