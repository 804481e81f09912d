//! Dense row-major matrices and a seeded, platform-independent random stream.
//!
//! Every product in this module uses a fixed loop order, so results are
//! reproducible bit for bit on a given build. The random stream is ChaCha8
//! (`rand_chacha`), seeded from a `u64` through `SeedableRng::seed_from_u64`,
//! with independent sub-streams selected through the ChaCha stream id.

use rand::seq::SliceRandom;
use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dims(
                "Matrix::new",
                format!("{} entries ({rows}x{cols})", rows * cols),
                data.len(),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::dims("Matrix::from_rows", cols, format!("{} in row {i}", r.len())));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        matmul(self, other)
    }

    /// Gathers the given rows, in order, into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn hstack(blocks: &[Matrix]) -> Result<Matrix> {
        let rows = blocks.first().map_or(0, Matrix::rows);
        let cols: usize = blocks.iter().map(Matrix::cols).sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for b in blocks {
            if b.rows != rows {
                return Err(Error::dims("Matrix::hstack", rows, b.rows));
            }
            for r in 0..rows {
                out.data[r * cols + offset..r * cols + offset + b.cols].copy_from_slice(b.row(r));
            }
            offset += b.cols;
        }
        Ok(out)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Standard product `a * b`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::dims(
            "matmul",
            format!("lhs cols == rhs rows ({})", a.cols),
            format!("{}x{} * {}x{}", a.rows, a.cols, b.rows, b.cols),
        ));
    }
    let mut c = Matrix::zeros(a.rows, b.cols);
    gemm_nn(&a.data, &b.data, &mut c.data, a.rows, a.cols, b.cols);
    Ok(c)
}

/// `c[m×n] += a[m×k] · b[k×n]`, loop order i, k, j.
pub fn gemm_nn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &a_ip) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for (c_ij, &b_pj) in c_row.iter_mut().zip(b_row) {
                *c_ij += a_ip * b_pj;
            }
        }
    }
}

/// `c[k×n] += aᵀ · b` with `a` stored `m×k` and `b` stored `m×n`; loop order i, p, j.
pub fn gemm_tn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(c.len(), k * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let b_row = &b[i * n..(i + 1) * n];
        for (p, &a_ip) in a_row.iter().enumerate() {
            let c_row = &mut c[p * n..(p + 1) * n];
            for (c_pj, &b_ij) in c_row.iter_mut().zip(b_row) {
                *c_pj += a_ip * b_ij;
            }
        }
    }
}

/// `c[m×k] += a · bᵀ` with `a` stored `m×n` and `b` stored `k×n`.
pub fn gemm_nt(a: &[f64], b: &[f64], c: &mut [f64], m: usize, n: usize, k: usize) {
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * k);
    for i in 0..m {
        let a_row = &a[i * n..(i + 1) * n];
        let c_row = &mut c[i * k..(i + 1) * k];
        for (p, c_ip) in c_row.iter_mut().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            let mut acc = 0.0;
            for (x, y) in a_row.iter().zip(b_row) {
                acc += x * y;
            }
            *c_ip += acc;
        }
    }
}

/// Seeded ChaCha8 stream.
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    /// Independent stream `stream` under the same seed.
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { seed, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// `n` draws uniform on `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "uniform requires finite lo < hi, got [{lo}, {hi})"
            )));
        }
        let width = hi - lo;
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let v = lo + width * self.next_f64();
            // rounding can land exactly on hi for tiny widths
            if v < hi {
                out.push(v);
            }
        }
        Ok(out)
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    /// `amount` distinct indices from `0..len`, in random order.
    pub fn sample_indices(&mut self, len: usize, amount: usize) -> Vec<usize> {
        rand::seq::index::sample(&mut self.inner, len, amount).into_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_matrix(rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
        Matrix::new(rows, cols, rng.uniform(-1.0, 1.0, rows * cols).unwrap()).unwrap()
    }

    fn naive(a: &Matrix, b: &Matrix) -> Matrix {
        let mut c = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for p in 0..a.cols() {
                    s += a.get(i, p) * b.get(p, j);
                }
                c.set(i, j, s);
            }
        }
        c
    }

    #[test]
    fn identity_product() {
        let mut rng = Rng::new(1);
        let m = random_matrix(&mut rng, 3, 4);
        assert_eq!(matmul(&Matrix::identity(3), &m).unwrap(), m);
    }

    #[test]
    fn one_by_one() {
        let a = Matrix::new(1, 1, vec![2.0]).unwrap();
        let b = Matrix::new(1, 1, vec![3.0]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap().as_slice(), &[6.0]);
    }

    #[test]
    fn matches_naive_triple_loop() {
        let mut rng = Rng::new(11);
        let a = random_matrix(&mut rng, 4, 5);
        let b = random_matrix(&mut rng, 5, 3);
        // same summation order as the oracle, so equality is exact
        assert_eq!(matmul(&a, &b).unwrap(), naive(&a, &b));
    }

    #[test]
    fn dimension_mismatch_is_error() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(2, 3);
        assert!(matches!(matmul(&a, &b), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn transposed_kernels_agree_with_explicit_transpose() {
        let mut rng = Rng::new(5);
        let a = random_matrix(&mut rng, 6, 4);
        let b = random_matrix(&mut rng, 6, 3);
        let mut c = vec![0.0; 12];
        gemm_tn(a.as_slice(), b.as_slice(), &mut c, 6, 4, 3);
        let expect = naive(&a.transpose(), &b);
        for (x, y) in c.iter().zip(expect.as_slice()) {
            assert!((x - y).abs() < 1e-14);
        }

        let w = random_matrix(&mut rng, 5, 3);
        let mut d = vec![0.0; 30];
        gemm_nt(b.as_slice(), w.as_slice(), &mut d, 6, 3, 5);
        let expect = naive(&b, &w.transpose());
        for (x, y) in d.iter().zip(expect.as_slice()) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn uniform_tiny_interval() {
        let mut rng = Rng::new(3);
        let lo = 1.0;
        let eps = 1e-12;
        let v = rng.uniform(lo, lo + eps, 3).unwrap();
        assert_eq!(v.len(), 3);
        assert!(v.iter().all(|&x| x >= lo && x < lo + eps));
    }

    #[test]
    fn uniform_rejects_empty_interval() {
        let mut rng = Rng::new(3);
        assert!(rng.uniform(1.0, 1.0, 2).is_err());
        assert!(rng.uniform(2.0, 1.0, 2).is_err());
    }

    #[test]
    fn same_seed_same_stream() {
        let a = Rng::new(7).uniform(-2.0, 2.0, 16).unwrap();
        let b = Rng::new(7).uniform(-2.0, 2.0, 16).unwrap();
        assert_eq!(a, b);
        let c = Rng::with_stream(7, 1).uniform(-2.0, 2.0, 16).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn uniform_mean_is_centered() {
        // sd of U[-2,2) is 4/sqrt(12); 3 sigma / sqrt(n) ~ 0.011
        let v = Rng::new(99).uniform(-2.0, 2.0, 100_000).unwrap();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn matmul_is_associative(seed in any::<u64>(), m in 1usize..5, k in 1usize..5, n in 1usize..5, q in 1usize..5) {
                let mut rng = super::Rng::new(seed);
                let a = random_matrix(&mut rng, m, k);
                let b = random_matrix(&mut rng, k, n);
                let c = random_matrix(&mut rng, n, q);
                let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
                let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
                for (x, y) in left.as_slice().iter().zip(right.as_slice()) {
                    prop_assert!((x - y).abs() < 1e-9);
                }
            }
        }
    }
}
