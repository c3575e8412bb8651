//! Small dense vectors and matrices for states, controls and diffusion loadings.
//!
//! Dimensions in this crate are tiny (state dimension 1 or 2 in every
//! benchmark), so storage is inline up to four entries.

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

/// State, control or gradient vector.
pub type Vector = SmallVec<[f64; 4]>;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: SmallVec<[f64; 4]>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: smallvec::smallvec![0.0; rows * cols],
        }
    }

    /// Panics if `data.len() != rows * cols`.
    pub fn from_row_slice(rows: usize, cols: usize, data: &[f64]) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self {
            rows,
            cols,
            data: SmallVec::from_slice(data),
        }
    }

    /// 1×1 matrix.
    pub fn scalar(v: f64) -> Self {
        Self::from_row_slice(1, 1, &[v])
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &v) in diag.iter().enumerate() {
            m.set(i, i, v);
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Largest |A_ij - A_ji|; infinite for non-square matrices.
    pub fn asymmetry(&self) -> f64 {
        if self.rows != self.cols {
            return f64::INFINITY;
        }
        let mut worst = 0.0_f64;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.shape(), other.shape());
        let data = self.data.iter().zip(other.data.iter()).map(|(a, b)| a + b).collect();
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    pub fn scaled(&self, c: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Tr[σσᵀ Z] for σ of shape d×m and Z of shape d×d, both row-major.
#[inline]
pub fn trace_sigma_sigma_t_z(sigma: &[f64], d: usize, m: usize, z: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..d {
        for j in 0..d {
            let zji = z[j * d + i];
            if zji == 0.0 {
                continue;
            }
            let mut s = 0.0;
            for k in 0..m {
                s += sigma[i * m + k] * sigma[j * m + k];
            }
            acc += s * zji;
        }
    }
    acc
}

/// (∂ₓh)ᵀ σ ΔW: gradient row times d×m loading times the m-vector of increments.
#[inline]
pub fn gradient_sigma_dw(grad: &[f64], sigma: &[f64], d: usize, m: usize, dw: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..d {
        let mut row = 0.0;
        for k in 0..m {
            row += sigma[i * m + k] * dw[k];
        }
        acc += grad[i] * row;
    }
    acc
}
