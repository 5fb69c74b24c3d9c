//! Small dense tensors indexed by the moment-function output dimension.
//!
//! The expansion machinery only needs rank-3 and rank-4 tensors over `[d]`
//! with `d` small, so these are plain row-major buffers.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

/// Rank-3 tensor over `[d]^3`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor3 {
    d: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(d: usize) -> Self {
        Self {
            d,
            data: vec![0.0; d * d * d],
        }
    }

    pub fn from_fn(d: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut t = Self::zeros(d);
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    t.set(i, j, k, f(i, j, k));
                }
            }
        }
        t
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[(i * self.d + j) * self.d + k]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        self.data[(i * self.d + j) * self.d + k] = v;
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, k: usize, v: f64) {
        self.data[(i * self.d + j) * self.d + k] += v;
    }

    /// `<T, a ⊗ b ⊗ c>`.
    pub fn contract(&self, a: &DVector<f64>, b: &DVector<f64>, c: &DVector<f64>) -> f64 {
        let d = self.d;
        let mut acc = 0.0;
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    acc += self.get(i, j, k) * a[i] * b[j] * c[k];
                }
            }
        }
        acc
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

/// Rank-4 tensor over `[d]^4`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor4 {
    d: usize,
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn zeros(d: usize) -> Self {
        Self {
            d,
            data: vec![0.0; d * d * d * d],
        }
    }

    pub fn from_fn(d: usize, mut f: impl FnMut(usize, usize, usize, usize) -> f64) -> Self {
        let mut t = Self::zeros(d);
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    for l in 0..d {
                        t.set(i, j, k, l, f(i, j, k, l));
                    }
                }
            }
        }
        t
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        self.data[((i * self.d + j) * self.d + k) * self.d + l]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, l: usize, v: f64) {
        self.data[((i * self.d + j) * self.d + k) * self.d + l] = v;
    }

    /// `<T, x ⊗ x ⊗ x ⊗ x>`.
    pub fn contract4(&self, x: &DVector<f64>) -> f64 {
        let d = self.d;
        let mut acc = 0.0;
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    for l in 0..d {
                        acc += self.get(i, j, k, l) * x[i] * x[j] * x[k] * x[l];
                    }
                }
            }
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn contract_matches_manual_sum() {
        let t = Tensor3::from_fn(2, |i, j, k| (i + 2 * j + 4 * k) as f64);
        let a = DVector::from_vec(vec![1.0, -1.0]);
        let got = t.contract(&a, &a, &a);
        let mut want = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    want += t.get(i, j, k) * a[i] * a[j] * a[k];
                }
            }
        }
        assert_eq!(got, want);
    }

    #[test]
    fn tensor4_roundtrip() {
        let mut t = Tensor4::zeros(3);
        t.set(2, 1, 0, 2, 7.5);
        assert_eq!(t.get(2, 1, 0, 2), 7.5);
        assert_eq!(t.get(0, 0, 0, 0), 0.0);
    }
}
