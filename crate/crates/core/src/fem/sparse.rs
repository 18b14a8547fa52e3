//! Compressed sparse rows and a banded Cholesky solver for the reduced plate system.

use crate::error::{Error, Result};

/// Square matrix in CSR form, both triangles stored.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from `(row, col, value)` triplets, summing duplicates in insertion order.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for &(i, j, v) in triplets {
            rows[i].push((j, v));
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for mut r in rows {
            // stable: duplicates keep insertion order, so sums are reproducible
            r.sort_by_key(|&(j, _)| j);
            for (j, v) in r {
                if col_idx.len() > *row_ptr.last().unwrap() && *col_idx.last().unwrap() == j {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_idx.push(j);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        SparseMatrix {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        self.col_idx[a..b].iter().copied().zip(self.values[a..b].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        match self.col_idx[a..b].binary_search(&j) {
            Ok(k) => self.values[a + k],
            Err(_) => 0.0,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).map(|(j, v)| v * x[j]).sum())
            .collect()
    }

    /// `max |K_ij - K_ji|`
    pub fn max_asymmetry(&self) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                m = m.max((v - self.get(j, i)).abs());
            }
        }
        m
    }

    /// Largest `|i - j|` over stored entries.
    pub fn bandwidth(&self) -> usize {
        (0..self.n)
            .flat_map(|i| self.row(i).map(move |(j, _)| i.abs_diff(j)))
            .max()
            .unwrap_or(0)
    }
}

/// Lower band storage of a symmetric matrix: row `i` keeps columns `i - bw ..= i`.
#[derive(Debug, Clone)]
pub struct BandCholesky {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl BandCholesky {
    pub fn factor(k: &SparseMatrix) -> Result<Self> {
        let n = k.n();
        let bw = k.bandwidth();
        let w = bw + 1;
        let mut data = vec![0.0; n * w];
        for i in 0..n {
            for (j, v) in k.row(i) {
                if j <= i {
                    data[i * w + (j + bw - i)] = v;
                }
            }
        }
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let k0 = lo.max(j.saturating_sub(bw));
                let mut s = data[i * w + (j + bw - i)];
                let ri = &data[i * w + (k0 + bw - i)..i * w + (j + bw - i)];
                let rj = &data[j * w + (k0 + bw - j)..j * w + bw];
                s -= ri.iter().zip(rj).map(|(a, b)| a * b).sum::<f64>();
                if i == j {
                    if !(s > 0.0) {
                        return Err(Error::NotPositiveDefinite { index: i, pivot: s });
                    }
                    data[i * w + bw] = s.sqrt();
                } else {
                    data[i * w + (j + bw - i)] = s / data[j * w + bw];
                }
            }
        }
        Ok(BandCholesky { n, bw, data })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let (n, bw, w) = (self.n, self.bw, self.bw + 1);
        let mut y = b.to_vec();
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let mut s = y[i];
            for j in lo..i {
                s -= self.data[i * w + (j + bw - i)] * y[j];
            }
            y[i] = s / self.data[i * w + bw];
        }
        for i in (0..n).rev() {
            y[i] /= self.data[i * w + bw];
            let yi = y[i];
            let lo = i.saturating_sub(bw);
            for j in lo..i {
                y[j] -= self.data[i * w + (j + bw - i)] * yi;
            }
        }
        y
    }
}

pub(crate) fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}
