use super::tensor::{Real, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<S> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Minimum(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, S),
    AddScalar(Var),
    Abs(Var),
    Elu(Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    MaskedSoftmax(Var, Vec<bool>),
    MaskedLogSoftmax(Var, Vec<bool>),
    SumAll(Var),
    RowSum(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    Reshape(Var),
    RepeatRows(Var, usize),
    GatherCols(Var, Vec<usize>),
    BatchedVecMat(Var, Var),
}

struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    needs_grad: bool,
}

/// Reverse-mode tape. Nodes are appended in evaluation order, so a single
/// backward sweep over the node list visits every node after all of its
/// consumers.
pub struct Graph<S: Real = f64> {
    nodes: Vec<Node<S>>,
}

impl<S: Real> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Grads<S> {
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Real> Grads<S> {
    pub fn get(&self, v: Var) -> Option<&Tensor<S>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient converted to `f64`; zeros of `shape` when the node received none.
    pub fn get_f64(&self, v: Var, shape: (usize, usize)) -> Tensor<f64> {
        match self.get(v) {
            Some(g) => g.cast(),
            None => Tensor::zeros(shape.0, shape.1),
        }
    }
}

impl<S: Real> Graph<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Trainable leaf, converted from the stored `f64` parameter.
    pub fn param(&mut self, t: &Tensor<f64>) -> Var {
        self.push(t.cast(), Op::Leaf, true)
    }

    pub fn constant(&mut self, t: Tensor<S>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn constant_f64(&mut self, t: &Tensor<f64>) -> Var {
        self.push(t.cast(), Op::Leaf, false)
    }

    /// Copy of `v` with no gradient path back to it.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::MatMul(a, b), ng)
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(S, S) -> S, op: Op<S>) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape(), tb.shape(), "elementwise shape mismatch");
        let data = ta.data.iter().zip(&tb.data).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::from_vec(ta.rows, ta.cols, data);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| if y < x { y } else { x }, Op::Minimum(a, b))
    }

    /// `a (n×m) + bias (1×m)` broadcast over rows.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(bias));
        assert_eq!(tb.rows, 1, "add_row bias must be a row vector");
        assert_eq!(ta.cols, tb.cols, "add_row width mismatch");
        let mut out = ta.clone();
        for r in 0..out.rows {
            for (o, &b) in out.row_mut(r).iter_mut().zip(&tb.data) {
                *o = *o + b;
            }
        }
        let ng = self.ng(a) || self.ng(bias);
        self.push(out, Op::AddRow(a, bias), ng)
    }

    /// `a (n×m) * col (n×1)` broadcast over columns.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let (ta, tc) = (self.value(a), self.value(col));
        assert_eq!(tc.cols, 1, "mul_col expects a column vector");
        assert_eq!(ta.rows, tc.rows, "mul_col height mismatch");
        let mut out = ta.clone();
        for r in 0..out.rows {
            let c = tc.data[r];
            for o in out.row_mut(r) {
                *o = *o * c;
            }
        }
        let ng = self.ng(a) || self.ng(col);
        self.push(out, Op::MulCol(a, col), ng)
    }

    fn unary(&mut self, a: Var, f: impl Fn(S) -> S, op: Op<S>) -> Var {
        let out = self.value(a).map(f);
        let ng = self.ng(a);
        self.push(out, op, ng)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let k = S::from_f64(k);
        self.unary(a, |x| x * k, Op::Scale(a, k))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let k = S::from_f64(k);
        self.unary(a, |x| x + k, Op::AddScalar(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.abs(), Op::Abs(a))
    }

    pub fn elu(&mut self, a: Var) -> Var {
        self.unary(a, |x| if x > S::zero() { x } else { x.exp() - S::one() }, Op::Elu(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| if x > S::zero() { x } else { S::zero() }, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.tanh(), Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, |x| S::one() / (S::one() + (-x).exp()), Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.exp(), Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.ln(), Op::Log(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    /// Row-wise softmax restricted to entries where `mask` is set; masked
    /// entries are exactly zero.
    pub fn masked_softmax(&mut self, a: Var, mask: Vec<bool>) -> Var {
        let out = softmax_rows(self.value(a), &mask, false);
        let ng = self.ng(a);
        self.push(out, Op::MaskedSoftmax(a, mask), ng)
    }

    /// Row-wise log-softmax over available entries; masked entries hold 0
    /// and receive no gradient.
    pub fn masked_log_softmax(&mut self, a: Var, mask: Vec<bool>) -> Var {
        let out = softmax_rows(self.value(a), &mask, true);
        let ng = self.ng(a);
        self.push(out, Op::MaskedLogSoftmax(a, mask), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        let ng = self.ng(a);
        self.push(out, Op::SumAll(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// `n×m → n×1`.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let data = (0..t.rows).map(|r| t.row(r).iter().copied().sum()).collect();
        let out = Tensor::from_vec(t.rows, 1, data);
        let ng = self.ng(a);
        self.push(out, Op::RowSum(a), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for &p in parts {
                let t = self.value(p);
                assert_eq!(t.rows, rows, "concat_cols height mismatch");
                out.data[r * cols + off..r * cols + off + t.cols].copy_from_slice(t.row(r));
                off += t.cols;
            }
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(out, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let t = self.value(a);
        assert!(start + len <= t.cols, "slice_cols out of range");
        let mut out = Tensor::zeros(t.rows, len);
        for r in 0..t.rows {
            out.row_mut(r).copy_from_slice(&t.row(r)[start..start + len]);
        }
        let ng = self.ng(a);
        self.push(out, Op::SliceCols(a, start), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.cols, cols, "concat_rows width mismatch");
            data.extend_from_slice(&t.data);
        }
        let rows = data.len() / cols.max(1);
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(Tensor::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()), ng)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let t = self.value(a);
        assert!(start + len <= t.rows, "slice_rows out of range");
        let data = t.data[start * t.cols..(start + len) * t.cols].to_vec();
        let out = Tensor::from_vec(len, t.cols, data);
        let ng = self.ng(a);
        self.push(out, Op::SliceRows(a, start), ng)
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let t = self.value(a);
        assert_eq!(t.len(), rows * cols, "reshape size mismatch");
        let out = Tensor::from_vec(rows, cols, t.data.clone());
        let ng = self.ng(a);
        self.push(out, Op::Reshape(a), ng)
    }

    /// Each row repeated `k` times consecutively.
    pub fn repeat_rows(&mut self, a: Var, k: usize) -> Var {
        let t = self.value(a);
        let mut data = Vec::with_capacity(t.len() * k);
        for r in 0..t.rows {
            for _ in 0..k {
                data.extend_from_slice(t.row(r));
            }
        }
        let out = Tensor::from_vec(t.rows * k, t.cols, data);
        let ng = self.ng(a);
        self.push(out, Op::RepeatRows(a, k), ng)
    }

    /// Picks `a[r][idx[r]]` for every row, giving an `n×1` column.
    pub fn gather_cols(&mut self, a: Var, idx: Vec<usize>) -> Var {
        let t = self.value(a);
        assert_eq!(idx.len(), t.rows, "gather index length mismatch");
        let data = idx.iter().enumerate().map(|(r, &c)| t.get(r, c)).collect();
        let out = Tensor::from_vec(t.rows, 1, data);
        let ng = self.ng(a);
        self.push(out, Op::GatherCols(a, idx), ng)
    }

    /// Per-row vector-matrix product: `q` is `B×n`, `w` is `B×(n·h)` holding
    /// one row-major `n×h` matrix per row; the result is `B×h`.
    pub fn batched_vecmat(&mut self, q: Var, w: Var) -> Var {
        let (tq, tw) = (self.value(q), self.value(w));
        assert_eq!(tq.rows, tw.rows, "batched_vecmat batch mismatch");
        let n = tq.cols;
        assert_eq!(tw.cols % n, 0, "batched_vecmat width mismatch");
        let h = tw.cols / n;
        let mut out = Tensor::zeros(tq.rows, h);
        for b in 0..tq.rows {
            let qrow = tq.row(b);
            let wrow = tw.row(b);
            let orow = &mut out.data[b * h..(b + 1) * h];
            for (i, &qi) in qrow.iter().enumerate() {
                for (o, &wv) in orow.iter_mut().zip(&wrow[i * h..(i + 1) * h]) {
                    *o = *o + qi * wv;
                }
            }
        }
        let ng = self.ng(q) || self.ng(w);
        self.push(out, Op::BatchedVecMat(q, w), ng)
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Grads<S> {
        assert_eq!(self.value(root).len(), 1, "backward root must be scalar");
        let mut grads: Vec<Option<Tensor<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::scalar(S::one()));
        for idx in (0..=root.0).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Grads { grads }
    }

    fn accum(&self, grads: &mut [Option<Tensor<S>>], v: Var, g: Tensor<S>) {
        if !self.ng(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn backprop_node(&self, idx: usize, g: &Tensor<S>, grads: &mut [Option<Tensor<S>>]) {
        let node = &self.nodes[idx];
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.ng(*a) {
                    self.accum(grads, *a, g.matmul_t(self.value(*b)));
                }
                if self.ng(*b) {
                    self.accum(grads, *b, self.value(*a).tmatmul(g));
                }
            }
            Op::Add(a, b) => {
                self.accum(grads, *a, g.clone());
                self.accum(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accum(grads, *a, g.clone());
                if self.ng(*b) {
                    self.accum(grads, *b, g.map(|x| -x));
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.ng(*a) {
                    self.accum(grads, *a, hadamard(g, tb));
                }
                if self.ng(*b) {
                    self.accum(grads, *b, hadamard(g, ta));
                }
            }
            Op::Minimum(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let mut ga = Tensor::zeros(g.rows, g.cols);
                let mut gb = Tensor::zeros(g.rows, g.cols);
                for i in 0..g.len() {
                    if tb.data[i] < ta.data[i] {
                        gb.data[i] = g.data[i];
                    } else {
                        ga.data[i] = g.data[i];
                    }
                }
                self.accum(grads, *a, ga);
                self.accum(grads, *b, gb);
            }
            Op::AddRow(a, bias) => {
                self.accum(grads, *a, g.clone());
                if self.ng(*bias) {
                    let mut gb = Tensor::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for (o, &x) in gb.data.iter_mut().zip(g.row(r)) {
                            *o = *o + x;
                        }
                    }
                    self.accum(grads, *bias, gb);
                }
            }
            Op::MulCol(a, col) => {
                let (ta, tc) = (self.value(*a), self.value(*col));
                if self.ng(*a) {
                    let mut ga = g.clone();
                    for r in 0..ga.rows {
                        let c = tc.data[r];
                        for x in ga.row_mut(r) {
                            *x = *x * c;
                        }
                    }
                    self.accum(grads, *a, ga);
                }
                if self.ng(*col) {
                    let data = (0..g.rows)
                        .map(|r| g.row(r).iter().zip(ta.row(r)).map(|(&x, &y)| x * y).sum())
                        .collect();
                    self.accum(grads, *col, Tensor::from_vec(g.rows, 1, data));
                }
            }
            Op::Scale(a, k) => {
                let k = *k;
                self.accum(grads, *a, g.map(|x| x * k));
            }
            Op::AddScalar(a) => self.accum(grads, *a, g.clone()),
            Op::Abs(a) => {
                let x = self.value(*a);
                self.accum(grads, *a, zip_with(g, x, |gi, xi| if xi < S::zero() { -gi } else { gi }));
            }
            Op::Elu(a) => {
                let x = self.value(*a);
                let d = zip_with(x, y, |xi, yi| if xi > S::zero() { S::one() } else { yi + S::one() });
                self.accum(grads, *a, hadamard(g, &d));
            }
            Op::Relu(a) => {
                let x = self.value(*a);
                self.accum(grads, *a, zip_with(g, x, |gi, xi| if xi > S::zero() { gi } else { S::zero() }));
            }
            Op::Tanh(a) => self.accum(grads, *a, zip_with(g, y, |gi, yi| gi * (S::one() - yi * yi))),
            Op::Sigmoid(a) => self.accum(grads, *a, zip_with(g, y, |gi, yi| gi * yi * (S::one() - yi))),
            Op::Exp(a) => self.accum(grads, *a, hadamard(g, y)),
            Op::Log(a) => {
                let x = self.value(*a);
                self.accum(grads, *a, zip_with(g, x, |gi, xi| gi / xi));
            }
            Op::Square(a) => {
                let x = self.value(*a);
                let two = S::from_f64(2.0);
                self.accum(grads, *a, zip_with(g, x, |gi, xi| two * gi * xi));
            }
            Op::MaskedSoftmax(a, mask) => {
                let mut ga = Tensor::zeros(g.rows, g.cols);
                for r in 0..g.rows {
                    let (pr, gr) = (y.row(r), g.row(r));
                    let dot: S = pr.iter().zip(gr).map(|(&p, &gi)| p * gi).sum();
                    for c in 0..g.cols {
                        if mask[r * g.cols + c] {
                            ga.data[r * g.cols + c] = pr[c] * (gr[c] - dot);
                        }
                    }
                }
                self.accum(grads, *a, ga);
            }
            Op::MaskedLogSoftmax(a, mask) => {
                let mut ga = Tensor::zeros(g.rows, g.cols);
                for r in 0..g.rows {
                    let (lr, gr) = (y.row(r), g.row(r));
                    let mut gsum = S::zero();
                    for c in 0..g.cols {
                        if mask[r * g.cols + c] {
                            gsum = gsum + gr[c];
                        }
                    }
                    for c in 0..g.cols {
                        if mask[r * g.cols + c] {
                            ga.data[r * g.cols + c] = gr[c] - lr[c].exp() * gsum;
                        }
                    }
                }
                self.accum(grads, *a, ga);
            }
            Op::SumAll(a) => {
                let (r, c) = self.shape(*a);
                self.accum(grads, *a, Tensor::filled(r, c, g.item()));
            }
            Op::RowSum(a) => {
                let (r, c) = self.shape(*a);
                let mut ga = Tensor::zeros(r, c);
                for i in 0..r {
                    let gi = g.data[i];
                    for x in ga.row_mut(i) {
                        *x = gi;
                    }
                }
                self.accum(grads, *a, ga);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let (r, c) = self.shape(p);
                    if self.ng(p) {
                        let mut gp = Tensor::zeros(r, c);
                        for i in 0..r {
                            gp.row_mut(i).copy_from_slice(&g.row(i)[off..off + c]);
                        }
                        self.accum(grads, p, gp);
                    }
                    off += c;
                }
            }
            Op::SliceCols(a, start) => {
                let (r, c) = self.shape(*a);
                let mut ga = Tensor::zeros(r, c);
                for i in 0..r {
                    ga.row_mut(i)[*start..*start + g.cols].copy_from_slice(g.row(i));
                }
                self.accum(grads, *a, ga);
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let (r, c) = self.shape(p);
                    if self.ng(p) {
                        let data = g.data[off * c..(off + r) * c].to_vec();
                        self.accum(grads, p, Tensor::from_vec(r, c, data));
                    }
                    off += r;
                }
            }
            Op::SliceRows(a, start) => {
                let (r, c) = self.shape(*a);
                let mut ga = Tensor::zeros(r, c);
                ga.data[start * c..(start + g.rows) * c].copy_from_slice(&g.data);
                self.accum(grads, *a, ga);
            }
            Op::Reshape(a) => {
                let (r, c) = self.shape(*a);
                self.accum(grads, *a, Tensor::from_vec(r, c, g.data.clone()));
            }
            Op::RepeatRows(a, k) => {
                let (r, c) = self.shape(*a);
                let mut ga = Tensor::zeros(r, c);
                for i in 0..r {
                    for j in 0..*k {
                        let src = g.row(i * k + j);
                        for (o, &x) in ga.row_mut(i).iter_mut().zip(src) {
                            *o = *o + x;
                        }
                    }
                }
                self.accum(grads, *a, ga);
            }
            Op::GatherCols(a, idx) => {
                let (r, c) = self.shape(*a);
                let mut ga = Tensor::zeros(r, c);
                for (i, &j) in idx.iter().enumerate() {
                    ga.data[i * c + j] = g.data[i];
                }
                self.accum(grads, *a, ga);
            }
            Op::BatchedVecMat(q, w) => {
                let (tq, tw) = (self.value(*q), self.value(*w));
                let n = tq.cols;
                let h = g.cols;
                if self.ng(*q) {
                    let mut gq = Tensor::zeros(tq.rows, n);
                    for b in 0..tq.rows {
                        let (gr, wr) = (g.row(b), tw.row(b));
                        for i in 0..n {
                            gq.data[b * n + i] = gr.iter().zip(&wr[i * h..(i + 1) * h]).map(|(&x, &y)| x * y).sum();
                        }
                    }
                    self.accum(grads, *q, gq);
                }
                if self.ng(*w) {
                    let mut gw = Tensor::zeros(tw.rows, tw.cols);
                    for b in 0..tq.rows {
                        let gr = g.row(b);
                        for i in 0..n {
                            let qi = tq.data[b * n + i];
                            for (o, &x) in gw.data[b * n * h + i * h..b * n * h + (i + 1) * h].iter_mut().zip(gr) {
                                *o = qi * x;
                            }
                        }
                    }
                    self.accum(grads, *w, gw);
                }
            }
        }
    }
}

fn hadamard<S: Real>(a: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
    zip_with(a, b, |x, y| x * y)
}

fn zip_with<S: Real>(a: &Tensor<S>, b: &Tensor<S>, f: impl Fn(S, S) -> S) -> Tensor<S> {
    let data = a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.rows, a.cols, data)
}

fn softmax_rows<S: Real>(t: &Tensor<S>, mask: &[bool], log: bool) -> Tensor<S> {
    assert_eq!(mask.len(), t.len(), "mask shape mismatch");
    let mut out = Tensor::zeros(t.rows, t.cols);
    for r in 0..t.rows {
        let row = t.row(r);
        let m = &mask[r * t.cols..(r + 1) * t.cols];
        let mx = row
            .iter()
            .zip(m)
            .filter(|(_, &ok)| ok)
            .map(|(&x, _)| x)
            .fold(S::neg_infinity(), |a, b| a.max(b));
        assert!(mx > S::neg_infinity(), "softmax row {r} has no available entries");
        let z: S = row.iter().zip(m).filter(|(_, &ok)| ok).map(|(&x, _)| (x - mx).exp()).sum();
        let lz = z.ln();
        for c in 0..t.cols {
            if m[c] {
                let l = row[c] - mx - lz;
                out.data[r * t.cols + c] = if log { l } else { l.exp() };
            }
        }
    }
    out
}
