//! Three operations exported to the browser page in `www/`.

use lsfsac::env::EnvKind;
use lsfsac::harness::{evaluate, FactorizationTable};
use lsfsac::learner::{collect_episode, sample_minibatch, stream, train_step, LearnerConfig, TrainState};
use lsfsac::nets::{Dims, NetConfig, Networks};
use lsfsac::objective::{gaussian_kl, GaussianPrior};
use rand::Rng;
use wasm_bindgen::prelude::*;

/// Trains LSF-SAC on the matrix game for `steps` env steps and returns the
/// factorization table plus the greedy success rate as JSON.
#[wasm_bindgen]
pub fn train_matrix(seed: u64, steps: u32) -> Result<String, JsError> {
    let (table, success) = train_matrix_table(seed, steps).map_err(|e| JsError::new(&e))?;
    let v = serde_json::json!({ "table": table, "success_rate": success, "text": table.to_text() });
    Ok(v.to_string())
}

pub fn train_matrix_table(seed: u64, steps: u32) -> Result<(FactorizationTable, f64), String> {
    let cfg = LearnerConfig { seed, max_env_steps: u64::from(steps), ..LearnerConfig::default() };
    let mut env = EnvKind::Matrix.build();
    let mut st = TrainState::new(cfg, env.spec()).map_err(|e| e.to_string())?;
    let warm = st.cfg.warmup.max(st.cfg.batch_size);
    while st.env_steps < st.cfg.max_env_steps {
        collect_episode(&mut st, env.as_mut()).map_err(|e| e.to_string())?;
        if st.buffer.len() >= warm {
            let b = sample_minibatch(&mut st).map_err(|e| e.to_string())?;
            train_step(&mut st, &b).map_err(|e| e.to_string())?;
        }
    }
    let rec = evaluate(EnvKind::Matrix, &st.nets, &st.params, false, 8, seed).map_err(|e| e.to_string())?;
    let table = rec.table.ok_or("no table")?;
    Ok((table, rec.success_rate))
}

/// Probes a freshly initialized monotonic mixer: for random states and
/// per-agent values, raises each agent's value by 0.1 and counts how often
/// the mixed value drops. Returns `{probes, violations, min_change}` as JSON.
#[wasm_bindgen]
pub fn mixer_probe(seed: u64, n_agents: usize, probes: u32) -> String {
    let (violations, min_change) = probe(seed, n_agents.clamp(2, 8), probes);
    serde_json::json!({ "probes": probes, "violations": violations, "min_change": min_change }).to_string()
}

pub fn probe(seed: u64, n_agents: usize, probes: u32) -> (u32, f64) {
    let dims = Dims { n_agents, n_actions: 2, obs_dim: 1, state_dim: 4 };
    let mut rng = stream(seed, 0);
    let (nets, ps) = Networks::init(NetConfig { messages: false, ..NetConfig::default() }, dims, &mut rng);
    let mut violations = 0;
    let mut min_change = f64::INFINITY;
    for _ in 0..probes {
        let state: Vec<f64> = (0..dims.state_dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let state = lsfsac::autodiff::Tensor::from_vec(1, dims.state_dim, state);
        let w = &nets.critic.mixer.weights(&ps.critics[0], &state)[0];
        let q: Vec<f64> = (0..n_agents).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let base = w.apply(&q);
        for i in 0..n_agents {
            let mut up = q.clone();
            up[i] += 0.1;
            let d = w.apply(&up) - base;
            min_change = min_change.min(d);
            if d < -1e-6 {
                violations += 1;
            }
        }
    }
    (violations, min_change)
}

/// `KL(N(μ, diag(var)) ‖ N(0, I))` for comma-separated inputs.
#[wasm_bindgen]
pub fn kl_to_standard(mu: &str, var: &str) -> Result<f64, JsError> {
    let parse = |s: &str| -> Result<Vec<f64>, JsError> {
        s.split(',').filter(|t| !t.trim().is_empty()).map(|t| t.trim().parse::<f64>().map_err(|e| JsError::new(&format!("{t:?}: {e}")))).collect()
    };
    let (mu, var) = (parse(mu)?, parse(var)?);
    gaussian_kl(&mu, Some(&var), GaussianPrior::Standard).map_err(|e| JsError::new(&e.to_string()))
}
