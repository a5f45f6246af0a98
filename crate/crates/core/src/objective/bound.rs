//! Enumerable toy for the variational lower bound on the conditional mutual
//! information between an agent's action and a partner's message.
//!
//! Variables: history `T ∈ {0,1}`, own message `M_j` and partner message
//! `M_i`, each a scalar quantized to 8 bins, and action `A ∈ {0,1}`.
//! `T` is uniform, `M_j | T` and `M_i | T, A` are discretized Gaussians, and
//! `A | T, M_j` is a random Bernoulli table.

use rand::Rng;

pub const BINS: usize = 8;

/// Bin centers spread over `[-2, 2]`.
fn center(k: usize) -> f64 {
    -2.0 + 4.0 * (k as f64 + 0.5) / BINS as f64
}

fn quantized(mean: f64, sd: f64) -> [f64; BINS] {
    let mut w = [0.0; BINS];
    for (k, x) in w.iter_mut().enumerate() {
        *x = (-(center(k) - mean).powi(2) / (2.0 * sd * sd)).exp();
    }
    let z: f64 = w.iter().sum();
    w.map(|x| x / z)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyJoint {
    /// `p[t][mj][mi][a]` flattened.
    pub p: Vec<f64>,
}

fn idx(t: usize, mj: usize, mi: usize, a: usize) -> usize {
    ((t * BINS + mj) * BINS + mi) * 2 + a
}

impl ToyJoint {
    pub fn random(rng: &mut impl Rng) -> Self {
        let mut p = vec![0.0; 2 * BINS * BINS * 2];
        for t in 0..2 {
            let pj = quantized(rng.gen_range(-1.5..1.5), rng.gen_range(0.3..1.2));
            let pi: Vec<[f64; BINS]> =
                (0..2).map(|_| quantized(rng.gen_range(-1.5..1.5), rng.gen_range(0.3..1.2))).collect();
            for (mj, &wj) in pj.iter().enumerate() {
                let p1: f64 = rng.gen_range(0.05..0.95);
                for a in 0..2 {
                    let pa = if a == 1 { p1 } else { 1.0 - p1 };
                    for (mi, &wi) in pi[a].iter().enumerate() {
                        p[idx(t, mj, mi, a)] = 0.5 * wj * pa * wi;
                    }
                }
            }
        }
        Self { p }
    }

    fn marginal_tjm(&self, t: usize, mj: usize) -> [f64; 2] {
        let mut out = [0.0; 2];
        for mi in 0..BINS {
            for (a, o) in out.iter_mut().enumerate() {
                *o += self.p[idx(t, mj, mi, a)];
            }
        }
        out
    }

    /// Exact `I(A; M_i | T, M_j)` in nats.
    pub fn conditional_mi(&self) -> f64 {
        let mut mi_sum = 0.0;
        for t in 0..2 {
            for mj in 0..BINS {
                let p_a_tm = self.marginal_tjm(t, mj);
                let p_tm: f64 = p_a_tm.iter().sum();
                for mi in 0..BINS {
                    let p_full: f64 = (0..2).map(|a| self.p[idx(t, mj, mi, a)]).sum();
                    for a in 0..2 {
                        let pj = self.p[idx(t, mj, mi, a)];
                        if pj > 0.0 {
                            mi_sum += pj * (pj * p_tm / (p_full * p_a_tm[a])).ln();
                        }
                    }
                }
            }
        }
        mi_sum
    }

    /// `H(A | T, M_j)` in nats.
    pub fn conditional_entropy(&self) -> f64 {
        let mut h = 0.0;
        for t in 0..2 {
            for mj in 0..BINS {
                let pa = self.marginal_tjm(t, mj);
                let z: f64 = pa.iter().sum();
                for &x in &pa {
                    if x > 0.0 {
                        h -= x * (x / z).ln();
                    }
                }
            }
        }
        h
    }

    /// Cross-entropy `E_p[−log q(A | T, M_j, M_i)]` of a decoder given as
    /// logit pairs indexed like `p` without the action axis.
    pub fn cross_entropy(&self, logits: &[[f64; 2]]) -> f64 {
        let mut ce = 0.0;
        for t in 0..2 {
            for mj in 0..BINS {
                for mi in 0..BINS {
                    let l = logits[(t * BINS + mj) * BINS + mi];
                    let m = l[0].max(l[1]);
                    let lse = m + ((l[0] - m).exp() + (l[1] - m).exp()).ln();
                    for (a, &la) in l.iter().enumerate() {
                        ce -= self.p[idx(t, mj, mi, a)] * (la - lse);
                    }
                }
            }
        }
        ce
    }

    /// Variational estimate `H(A | T, M_j) − CE(q)`; never above the exact
    /// conditional mutual information.
    pub fn variational_bound(&self, logits: &[[f64; 2]]) -> f64 {
        self.conditional_entropy() - self.cross_entropy(logits)
    }

    /// Logits of the true posterior `p(A | T, M_j, M_i)`, which attains the bound.
    pub fn posterior_logits(&self) -> Vec<[f64; 2]> {
        (0..2 * BINS * BINS)
            .map(|k| {
                let (a0, a1) = (self.p[2 * k], self.p[2 * k + 1]);
                [a0.ln(), a1.ln()]
            })
            .collect()
    }

    pub fn random_logits(rng: &mut impl Rng, scale: f64) -> Vec<[f64; 2]> {
        (0..2 * BINS * BINS).map(|_| [rng.gen_range(-scale..scale), rng.gen_range(-scale..scale)]).collect()
    }
}
