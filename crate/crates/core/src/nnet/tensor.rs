use crate::Scalar;

/// Row-major 2-D tensor. Vectors are `1 x n`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: [usize; 2],
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor { shape: [rows, cols], data: vec![T::zero(); rows * cols] }
    }

    pub fn full(rows: usize, cols: usize, v: T) -> Self {
        Tensor { shape: [rows, cols], data: vec![v; rows * cols] }
    }

    /// Panics if `data.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "tensor data length must equal rows * cols");
        Tensor { shape: [rows, cols], data }
    }

    pub fn scalar(v: T) -> Self {
        Tensor { shape: [1, 1], data: vec![v] }
    }

    pub fn shape(&self) -> [usize; 2] {
        self.shape
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.shape[1] + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: T) {
        let cols = self.shape[1];
        self.data[r * cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[T] {
        let c = self.shape[1];
        &self.data[r * c..(r + 1) * c]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        let c = self.shape[1];
        &mut self.data[r * c..(r + 1) * c]
    }

    /// Only meaningful for `1 x 1` tensors.
    pub fn item(&self) -> T {
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(mut self, rows: usize, cols: usize) -> Self {
        assert_eq!(rows * cols, self.data.len());
        self.shape = [rows, cols];
        self
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale_in_place(&mut self, s: T) {
        for a in &mut self.data {
            *a *= s;
        }
    }

    pub fn sum_squares(&self) -> T {
        self.data.iter().map(|&v| v * v).sum()
    }

    /// `self · other`. Zero entries of `self` are skipped, which makes sparse
    /// binary inputs cheap.
    pub fn matmul(&self, other: &Tensor<T>) -> Tensor<T> {
        let [n, k] = self.shape;
        let [k2, m] = other.shape;
        assert_eq!(k, k2, "matmul inner dimensions");
        let mut out = Tensor::zeros(n, m);
        for i in 0..n {
            let out_row = &mut out.data[i * m..(i + 1) * m];
            for (p, &a) in self.data[i * k..(i + 1) * k].iter().enumerate() {
                if a == T::zero() {
                    continue;
                }
                let b_row = &other.data[p * m..(p + 1) * m];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self · otherᵀ`.
    pub fn matmul_bt(&self, other: &Tensor<T>) -> Tensor<T> {
        let [n, k] = self.shape;
        let [m, k2] = other.shape;
        assert_eq!(k, k2, "matmul_bt inner dimensions");
        let mut out = Tensor::zeros(n, m);
        for i in 0..n {
            let a = &self.data[i * k..(i + 1) * k];
            for j in 0..m {
                let b = &other.data[j * k..(j + 1) * k];
                out.data[i * m + j] = a.iter().zip(b).map(|(&x, &y)| x * y).sum();
            }
        }
        out
    }

    /// `selfᵀ · other`, skipping zero entries of `self`.
    pub fn matmul_at(&self, other: &Tensor<T>) -> Tensor<T> {
        let [n, k] = self.shape;
        let [n2, m] = other.shape;
        assert_eq!(n, n2, "matmul_at outer dimensions");
        let mut out = Tensor::zeros(k, m);
        for i in 0..n {
            let b_row = &other.data[i * m..(i + 1) * m];
            for (p, &a) in self.data[i * k..(i + 1) * k].iter().enumerate() {
                if a == T::zero() {
                    continue;
                }
                let out_row = &mut out.data[p * m..(p + 1) * m];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&self) -> Tensor<T> {
        let mut out = self.clone();
        for r in 0..self.rows() {
            let row = out.row_mut(r);
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Tensor<T> {
        Tensor { shape: self.shape, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// Little-endian `f64` bytes of the data.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.data.iter().flat_map(|v| v.to_f64_lossy().to_le_bytes()).collect()
    }
}
