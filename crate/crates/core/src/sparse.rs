//! Sparse nonnegative edge-weight matrices.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Rows at or above this count use a row-parallel matvec.
const PARALLEL_ROWS: usize = 4096;

/// `n × n` sparse weight matrix with a row-offset index (CSR layout).
///
/// Stored weights are finite and nonnegative, there are no diagonal entries
/// and no duplicate coordinates. When `symmetric` is set every entry `(i, j)`
/// has a mirror `(j, i)` with an identical weight.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseWeights {
    n: usize,
    row_offsets: Vec<usize>,
    cols: Vec<usize>,
    weights: Vec<f64>,
    symmetric: bool,
}

impl SparseWeights {
    /// Builds a matrix from unordered triplets.
    pub fn from_triplets(
        n: usize,
        mut triplets: Vec<(usize, usize, f64)>,
        symmetric: bool,
    ) -> Result<Self> {
        for &(i, j, w) in &triplets {
            if i >= n || j >= n {
                return Err(Error::InvalidMatrix(format!("entry ({i}, {j}) outside {n}x{n}")));
            }
            if i == j {
                return Err(Error::InvalidMatrix(format!("diagonal entry at node {i}")));
            }
            if !w.is_finite() || w < 0.0 {
                return Err(Error::InvalidMatrix(format!("weight {w} at ({i}, {j})")));
            }
        }
        triplets.sort_by_key(|&(i, j, _)| (i, j));
        if let Some(pair) = triplets.windows(2).find(|p| (p[0].0, p[0].1) == (p[1].0, p[1].1)) {
            return Err(Error::InvalidMatrix(format!(
                "duplicate entry ({}, {})",
                pair[0].0, pair[0].1
            )));
        }
        let m = Self::from_sorted(n, &triplets, symmetric);
        if symmetric {
            m.check_symmetric()?;
        }
        Ok(m)
    }

    /// Builds from per-row entry lists; each row's columns must be distinct.
    pub(crate) fn from_rows(n: usize, rows: Vec<Vec<(usize, f64)>>, symmetric: bool) -> Self {
        debug_assert_eq!(rows.len(), n);
        let mut row_offsets = Vec::with_capacity(n + 1);
        row_offsets.push(0);
        let nnz = rows.iter().map(Vec::len).sum();
        let mut cols = Vec::with_capacity(nnz);
        let mut weights = Vec::with_capacity(nnz);
        for mut row in rows {
            row.sort_by_key(|&(j, _)| j);
            for (j, w) in row {
                cols.push(j);
                weights.push(w);
            }
            row_offsets.push(cols.len());
        }
        Self {
            n,
            row_offsets,
            cols,
            weights,
            symmetric,
        }
    }

    fn from_sorted(n: usize, triplets: &[(usize, usize, f64)], symmetric: bool) -> Self {
        let mut row_offsets = vec![0usize; n + 1];
        for &(i, _, _) in triplets {
            row_offsets[i + 1] += 1;
        }
        for i in 0..n {
            row_offsets[i + 1] += row_offsets[i];
        }
        Self {
            n,
            row_offsets,
            cols: triplets.iter().map(|t| t.1).collect(),
            weights: triplets.iter().map(|t| t.2).collect(),
            symmetric,
        }
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            row_offsets: vec![0; n + 1],
            cols: Vec::new(),
            weights: Vec::new(),
            symmetric: true,
        }
    }

    fn check_symmetric(&self) -> Result<()> {
        for (i, j, w) in self.entries() {
            match self.get(j, i) {
                Some(v) if v == w => {}
                _ => {
                    return Err(Error::InvalidMatrix(format!(
                        "entry ({i}, {j}) has no equal mirror"
                    )))
                }
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    /// Column indices and weights of row `i`, ordered by column.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let span = self.row_offsets[i]..self.row_offsets[i + 1];
        (&self.cols[span.clone()], &self.weights[span])
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let (cols, weights) = self.row(i);
        cols.binary_search(&j).ok().map(|k| weights[k])
    }

    /// Stored entries in row-major order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| {
            let (cols, weights) = self.row(i);
            cols.iter().zip(weights).map(move |(&j, &w)| (i, j, w))
        })
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).1.iter().sum()).collect()
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        let mut out = self.clone();
        out.weights.iter_mut().for_each(|w| *w *= alpha);
        out
    }

    /// `y = W x`.
    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(y.len(), self.n);
        let row_dot = |i: usize| -> f64 {
            let (cols, weights) = self.row(i);
            cols.iter().zip(weights).map(|(&j, &w)| w * x[j]).sum()
        };
        if self.n >= PARALLEL_ROWS {
            y.par_iter_mut().enumerate().for_each(|(i, yi)| *yi = row_dot(i));
        } else {
            y.iter_mut().enumerate().for_each(|(i, yi)| *yi = row_dot(i));
        }
    }

    /// Upper bound on the spectral radius (max absolute row sum).
    pub fn inf_norm(&self) -> f64 {
        self.row_sums().into_iter().fold(0.0, f64::max)
    }

    /// Squared Frobenius norm.
    pub fn frobenius_sq(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for (i, j, w) in self.entries() {
            d[i][j] = w;
        }
        d
    }
}
