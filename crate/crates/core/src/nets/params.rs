use std::ops::Index;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{Grads, Graph, Real, Tensor, Var};

/// Named, ordered list of parameter tensors that are optimized together.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamGroup {
    pub name: String,
    pub names: Vec<String>,
    pub tensors: Vec<Tensor<f64>>,
}

impl ParamGroup {
    pub fn new(name: impl Into<String>) -> Self {
        Self { name: name.into(), names: Vec::new(), tensors: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor<f64>) -> usize {
        self.names.push(name.into());
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Places every tensor of the group on the tape; trainable leaves
    /// receive gradients, the others are constants.
    pub fn bind<S: Real>(&self, g: &mut Graph<S>, trainable: bool) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|t| if trainable { g.param(t) } else { g.constant_f64(t) })
            .collect();
        Bound { vars }
    }

    pub fn zeros_like(&self) -> Vec<Tensor<f64>> {
        self.tensors.iter().map(|t| Tensor::zeros(t.rows, t.cols)).collect()
    }

    pub fn copy_from(&mut self, other: &ParamGroup) {
        assert_eq!(self.names, other.names, "parameter layouts differ");
        self.tensors.clone_from(&other.tensors);
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }
}

/// Tape handles for one bound [`ParamGroup`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Index<usize> for Bound {
    type Output = Var;
    fn index(&self, i: usize) -> &Var {
        &self.vars[i]
    }
}

impl Bound {
    /// Gradients for every tensor of `group`, zero where none flowed.
    pub fn grads<S: Real>(&self, grads: &Grads<S>, group: &ParamGroup) -> Vec<Tensor<f64>> {
        self.vars
            .iter()
            .zip(&group.tensors)
            .map(|(&v, t)| grads.get_f64(v, t.shape()))
            .collect()
    }
}

pub fn global_norm(grads: &[Tensor<f64>]) -> f64 {
    grads.iter().map(Tensor::norm_sq).sum::<f64>().sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// Uniform in ±1/√fan_in.
    FanIn,
    Zero,
    /// Row-orthonormal square blocks.
    Orthogonal,
}

pub fn init_tensor(rows: usize, cols: usize, init: Init, rng: &mut impl Rng) -> Tensor<f64> {
    match init {
        Init::Zero => Tensor::zeros(rows, cols),
        Init::FanIn => {
            let bound = 1.0 / (rows.max(1) as f64).sqrt();
            let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
            Tensor::from_vec(rows, cols, data)
        }
        Init::Orthogonal => {
            assert_eq!(cols % rows, 0, "orthogonal init expects square blocks");
            let mut out = Tensor::zeros(rows, cols);
            for blk in 0..cols / rows {
                let q = random_orthogonal(rows, rng);
                for r in 0..rows {
                    for c in 0..rows {
                        out.set(r, blk * rows + c, q.get(r, c));
                    }
                }
            }
            out
        }
    }
}

/// Bias row, uniform in ±1/√fan_in unless `zero`.
pub fn init_bias(fan_in: usize, out: usize, zero: bool, rng: &mut impl Rng) -> Tensor<f64> {
    if zero {
        return Tensor::zeros(1, out);
    }
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Tensor::from_vec(1, out, (0..out).map(|_| rng.gen_range(-bound..bound)).collect())
}

fn random_orthogonal(n: usize, rng: &mut impl Rng) -> Tensor<f64> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    while rows.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        for u in &rows {
            let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            for (x, y) in v.iter_mut().zip(u) {
                *x -= d * y;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            rows.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    Tensor::from_vec(n, n, rows.concat())
}
