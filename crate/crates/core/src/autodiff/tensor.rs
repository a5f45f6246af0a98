use std::fmt::Debug;
use std::iter::Sum;

use num_traits::Float;

/// Floating-point element type usable by the tape.
///
/// Parameters are always stored in `f64`; a graph in `f32` converts on bind
/// and converts gradients back on collection.
pub trait Real: Float + Debug + Default + Sum + Send + Sync + 'static {
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;

    /// `c = a · b` for an `m × k` by `k × n` product, each operand given as
    /// (slice, row stride, col stride). `c` is row-major and overwritten.
    fn gemm(m: usize, k: usize, n: usize, a: (&[Self], isize, isize), b: (&[Self], isize, isize), c: &mut [Self]);
}

fn check_extent<S>(buf: &[S], rows: usize, cols: usize, rs: isize, cs: isize) {
    if rows > 0 && cols > 0 {
        let last = (rows as isize - 1) * rs + (cols as isize - 1) * cs;
        assert!(rs >= 0 && cs >= 0 && (last as usize) < buf.len(), "gemm operand out of bounds");
    }
}

impl Real for f64 {
    #[inline]
    fn from_f64(x: f64) -> Self {
        x
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }

    fn gemm(m: usize, k: usize, n: usize, a: (&[f64], isize, isize), b: (&[f64], isize, isize), c: &mut [f64]) {
        check_extent(a.0, m, k, a.1, a.2);
        check_extent(b.0, k, n, b.1, b.2);
        assert_eq!(c.len(), m * n);
        // SAFETY: extents checked above; c is a distinct m×n row-major buffer.
        unsafe {
            matrixmultiply::dgemm(m, k, n, 1.0, a.0.as_ptr(), a.1, a.2, b.0.as_ptr(), b.1, b.2, 0.0, c.as_mut_ptr(), n as isize, 1);
        }
    }
}

impl Real for f32 {
    #[inline]
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }

    fn gemm(m: usize, k: usize, n: usize, a: (&[f32], isize, isize), b: (&[f32], isize, isize), c: &mut [f32]) {
        check_extent(a.0, m, k, a.1, a.2);
        check_extent(b.0, k, n, b.1, b.2);
        assert_eq!(c.len(), m * n);
        // SAFETY: as for f64.
        unsafe {
            matrixmultiply::sgemm(m, k, n, 1.0, a.0.as_ptr(), a.1, a.2, b.0.as_ptr(), b.1, b.2, 0.0, c.as_mut_ptr(), n as isize, 1);
        }
    }
}

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S = f64> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<S>,
}

impl<S: Real> Tensor<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![S::zero(); rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, value: S) -> Self {
        Self { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<S>) -> Self {
        assert_eq!(rows * cols, data.len(), "tensor data length does not match shape");
        Self { rows, cols, data }
    }

    pub fn scalar(value: S) -> Self {
        Self { rows: 1, cols: 1, data: vec![value] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> S {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: S) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[S] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [S] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn item(&self) -> S {
        assert_eq!(self.data.len(), 1, "item() on a non-scalar tensor");
        self.data[0]
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn cast<T: Real>(&self) -> Tensor<T> {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| T::from_f64(x.to_f64())).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }

    pub fn sum(&self) -> S {
        self.data.iter().copied().sum()
    }

    pub fn norm_sq(&self) -> S {
        self.data.iter().map(|&x| x * x).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch {:?} x {:?}", self.shape(), other.shape());
        let (n, k, m) = (self.rows, self.cols, other.cols);
        let mut out = Self::zeros(n, m);
        S::gemm(n, k, m, (&self.data, k as isize, 1), (&other.data, m as isize, 1), &mut out.data);
        out
    }

    /// `selfᵀ · other` without materializing the transpose.
    pub fn tmatmul(&self, other: &Self) -> Self {
        assert_eq!(self.rows, other.rows, "tmatmul shape mismatch");
        let (n, k, m) = (self.rows, self.cols, other.cols);
        let mut out = Self::zeros(k, m);
        S::gemm(k, n, m, (&self.data, 1, k as isize), (&other.data, m as isize, 1), &mut out.data);
        out
    }

    /// `self · otherᵀ` without materializing the transpose.
    pub fn matmul_t(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.cols, "matmul_t shape mismatch");
        let (n, k, m) = (self.rows, self.cols, other.rows);
        let mut out = Self::zeros(n, m);
        S::gemm(n, k, m, (&self.data, k as isize, 1), (&other.data, 1, k as isize), &mut out.data);
        out
    }

    /// Index of the largest entry in row `r` among entries where `mask` is
    /// set; ties go to the lowest index.
    pub fn masked_argmax_row(&self, r: usize, mask: Option<&[bool]>) -> usize {
        let row = self.row(r);
        let mut best: Option<(usize, S)> = None;
        for (c, &v) in row.iter().enumerate() {
            if mask.is_some_and(|m| !m[c]) {
                continue;
            }
            match best {
                Some((_, bv)) if v <= bv => {}
                _ => best = Some((c, v)),
            }
        }
        best.map(|(c, _)| c).expect("argmax over an empty mask")
    }
}
