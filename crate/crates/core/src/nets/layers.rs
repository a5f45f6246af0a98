use rand::Rng;

use super::params::{init_bias, init_tensor, Bound, Init, ParamGroup};
use crate::autodiff::{Graph, Real, Tensor, Var};

/// `y = x·W + b` with `W` stored `in × out`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: usize,
    pub b: usize,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(group: &mut ParamGroup, name: &str, in_dim: usize, out_dim: usize, init: Init, rng: &mut impl Rng) -> Self {
        let w = group.push(format!("{name}.w"), init_tensor(in_dim, out_dim, init, rng));
        let b = group.push(format!("{name}.b"), init_bias(in_dim, out_dim, init == Init::Zero, rng));
        Self { w, b, in_dim, out_dim }
    }

    pub fn forward<S: Real>(&self, g: &mut Graph<S>, p: &Bound, x: Var) -> Var {
        let y = g.matmul(x, p[self.w]);
        g.add_row(y, p[self.b])
    }

    /// Tape-free evaluation.
    pub fn apply(&self, group: &ParamGroup, x: &Tensor<f64>) -> Tensor<f64> {
        let mut y = x.matmul(&group.tensors[self.w]);
        let b = &group.tensors[self.b];
        for r in 0..y.rows {
            for (o, &bb) in y.row_mut(r).iter_mut().zip(&b.data) {
                *o += bb;
            }
        }
        y
    }
}

/// Gated recurrent cell with reset/update/candidate gates packed as
/// `[r | z | n]` along the output dimension.
#[derive(Clone, Copy, Debug)]
pub struct GruCell {
    pub ih: Linear,
    pub hh: Linear,
    pub hidden: usize,
}

impl GruCell {
    pub fn new(group: &mut ParamGroup, name: &str, in_dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let ih = Linear::new(group, &format!("{name}.ih"), in_dim, 3 * hidden, Init::FanIn, rng);
        let hh = Linear::new(group, &format!("{name}.hh"), hidden, 3 * hidden, Init::Orthogonal, rng);
        Self { ih, hh, hidden }
    }

    pub fn forward<S: Real>(&self, g: &mut Graph<S>, p: &Bound, x: Var, h: Var) -> Var {
        let hd = self.hidden;
        let gi = self.ih.forward(g, p, x);
        let gh = self.hh.forward(g, p, h);
        let (gi_r, gi_z, gi_n) = (g.slice_cols(gi, 0, hd), g.slice_cols(gi, hd, hd), g.slice_cols(gi, 2 * hd, hd));
        let (gh_r, gh_z, gh_n) = (g.slice_cols(gh, 0, hd), g.slice_cols(gh, hd, hd), g.slice_cols(gh, 2 * hd, hd));
        let r = g.add(gi_r, gh_r);
        let r = g.sigmoid(r);
        let z = g.add(gi_z, gh_z);
        let z = g.sigmoid(z);
        let rn = g.mul(r, gh_n);
        let n = g.add(gi_n, rn);
        let n = g.tanh(n);
        // h' = n + z * (h - n)
        let d = g.sub(h, n);
        let zd = g.mul(z, d);
        g.add(n, zd)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HistoryKind {
    Gru,
    Mlp,
}

impl HistoryKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "gru" => Some(Self::Gru),
            "mlp" => Some(Self::Mlp),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Gru => "gru",
            Self::Mlp => "mlp",
        }
    }
}

/// Per-agent history trunk over inputs `[o_t, onehot(u_{t-1}), onehot(agent)]`.
#[derive(Clone, Copy, Debug)]
pub struct HistoryEncoder {
    pub fc_in: Linear,
    pub cell: Option<GruCell>,
    pub fc2: Option<Linear>,
    pub hidden: usize,
}

impl HistoryEncoder {
    pub fn new(group: &mut ParamGroup, name: &str, kind: HistoryKind, in_dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let fc_in = Linear::new(group, &format!("{name}.fc_in"), in_dim, hidden, Init::FanIn, rng);
        let (cell, fc2) = match kind {
            HistoryKind::Gru => (Some(GruCell::new(group, &format!("{name}.gru"), hidden, hidden, rng)), None),
            HistoryKind::Mlp => (None, Some(Linear::new(group, &format!("{name}.fc2"), hidden, hidden, Init::FanIn, rng))),
        };
        Self { fc_in, cell, fc2, hidden }
    }

    /// Runs the trunk over a sequence of per-step input blocks (each
    /// `rows × in_dim`) and returns all hidden states stacked time-major.
    pub fn forward_sequence<S: Real>(&self, g: &mut Graph<S>, p: &Bound, inputs: &[Var]) -> Var {
        let rows = g.shape(inputs[0]).0;
        let mut h = g.constant(Tensor::zeros(rows, self.hidden));
        let mut outs = Vec::with_capacity(inputs.len());
        for &x in inputs {
            let e = self.fc_in.forward(g, p, x);
            let e = g.relu(e);
            h = match (self.cell, self.fc2) {
                (Some(cell), _) => cell.forward(g, p, e, h),
                (None, Some(fc2)) => {
                    let y = fc2.forward(g, p, e);
                    g.relu(y)
                }
                (None, None) => unreachable!("history encoder without a body"),
            };
            outs.push(h);
        }
        if outs.len() == 1 {
            outs[0]
        } else {
            g.concat_rows(&outs)
        }
    }
}
