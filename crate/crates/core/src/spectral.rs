//! Top-K eigenpairs of sparse symmetric weight matrices and the maximal
//! entropy random walk (MERW) distributions built from them.
//!
//! The hierarchical variant (HMERW) treats each rank-one term
//! `λ_k ψ_k ψ_kᵀ` of the spectral expansion as its own sub-graph and sums the
//! sub-graph stationary distributions `max(λ_k, 0) ψ_k²`, so weaker
//! structures that the principal eigenvector ignores still receive mass.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::sparse::SparseWeights;
use crate::stats::{dot, norm};

/// Vectors at or above this length are orthogonalized in parallel.
const PARALLEL_LEN: usize = 4096;

/// Top eigenpairs of a symmetric matrix, eigenvalues in descending
/// algebraic order.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralBasis {
    eigenvalues: Vec<f64>,
    eigenvectors: Vec<Vec<f64>>,
}

impl SpectralBasis {
    pub fn new(eigenvalues: Vec<f64>, eigenvectors: Vec<Vec<f64>>) -> Result<Self> {
        if eigenvalues.is_empty() || eigenvalues.len() != eigenvectors.len() {
            return Err(Error::InvalidParameter(format!(
                "{} eigenvalues for {} eigenvectors",
                eigenvalues.len(),
                eigenvectors.len()
            )));
        }
        let n = eigenvectors[0].len();
        if n == 0 || eigenvectors.iter().any(|v| v.len() != n) {
            return Err(Error::DimensionMismatch("eigenvectors differ in length".into()));
        }
        if eigenvalues.windows(2).any(|p| p[0] < p[1]) {
            return Err(Error::InvalidParameter("eigenvalues must be sorted descending".into()));
        }
        if eigenvalues.iter().chain(eigenvectors.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite spectral data".into()));
        }
        Ok(Self {
            eigenvalues,
            eigenvectors,
        })
    }

    /// Number of retained pairs.
    pub fn k(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Length of each eigenvector.
    pub fn n(&self) -> usize {
        self.eigenvectors[0].len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvector(&self, k: usize) -> &[f64] {
        &self.eigenvectors[k]
    }

    pub fn eigenvectors(&self) -> &[Vec<f64>] {
        &self.eigenvectors
    }

    /// Keeps the leading `k` pairs.
    pub fn truncated(&self, k: usize) -> Result<Self> {
        check_level(k, self.k())?;
        Ok(Self {
            eigenvalues: self.eigenvalues[..k].to_vec(),
            eigenvectors: self.eigenvectors[..k].to_vec(),
        })
    }

    /// Largest `‖W ψ − λ ψ‖` over the retained pairs.
    pub fn max_residual(&self, w: &SparseWeights) -> f64 {
        let mut y = vec![0.0; self.n()];
        let mut worst = 0.0f64;
        for (lambda, v) in self.eigenvalues.iter().zip(&self.eigenvectors) {
            w.mul_vec(v, &mut y);
            let r = y.iter().zip(v).map(|(a, b)| (a - lambda * b).powi(2)).sum::<f64>().sqrt();
            worst = worst.max(r);
        }
        worst
    }
}

/// Nonnegative per-node distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryVector(Vec<f64>);

impl StationaryVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidParameter("distribution entries must be finite and nonnegative".into()));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }
}

/// Thick-restart Lanczos solver for the algebraically largest eigenpairs.
///
/// Every Lanczos vector is fully reorthogonalized (classical Gram-Schmidt,
/// applied twice). A cycle extends the basis to `m = max(2k + 40, 3k)`
/// vectors (capped at `n`), solves the projected problem densely and, if the
/// leading `k` Ritz pairs have not converged, restarts from the best
/// `k + (m - k) / 2` Ritz vectors. Invariant subspaces are stepped over with
/// a fresh random direction, so reducible and zero matrices are handled.
///
/// Exactly repeated eigenvalues are only resolved when the basis reaches
/// the full dimension; a single Krylov sequence sees one vector per
/// eigenspace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenSolver {
    /// A Ritz pair is accepted once its residual estimate drops below
    /// `tol * ‖W‖₂` (the norm estimated from the Ritz values).
    pub tol: f64,
    /// Matvec budget; `None` means `10 * n`.
    pub max_matvecs: Option<usize>,
    /// Seed for the start vector and breakdown restarts.
    pub seed: u64,
}

impl Default for EigenSolver {
    fn default() -> Self {
        Self {
            tol: 1e-11,
            max_matvecs: None,
            seed: 0x5eed_1a2c,
        }
    }
}

/// `top_k_eigenpairs` with the default solver settings.
pub fn top_k_eigenpairs(w: &SparseWeights, k: usize) -> Result<SpectralBasis> {
    EigenSolver::default().solve(w, k)
}

fn project(v: &[f64], basis: &[Vec<f64>]) -> Vec<f64> {
    if v.len() >= PARALLEL_LEN {
        basis.par_iter().map(|b| dot(b, v)).collect()
    } else {
        basis.iter().map(|b| dot(b, v)).collect()
    }
}

fn subtract(v: &mut [f64], basis: &[Vec<f64>], coeffs: &[f64]) {
    let apply = |offset: usize, chunk: &mut [f64]| {
        for (b, &c) in basis.iter().zip(coeffs) {
            for (x, y) in chunk.iter_mut().zip(&b[offset..]) {
                *x -= c * y;
            }
        }
    };
    if v.len() >= PARALLEL_LEN {
        const CHUNK: usize = 1024;
        v.par_chunks_mut(CHUNK)
            .enumerate()
            .for_each(|(i, chunk)| apply(i * CHUNK, chunk));
    } else {
        apply(0, v);
    }
}

/// Removes the span of `basis` from `v` (two passes); returns the summed
/// projection coefficients.
fn orthogonalize(v: &mut [f64], basis: &[Vec<f64>]) -> Vec<f64> {
    let mut total = vec![0.0; basis.len()];
    for _ in 0..2 {
        let coeffs = project(v, basis);
        subtract(v, basis, &coeffs);
        total.iter_mut().zip(&coeffs).for_each(|(t, c)| *t += c);
    }
    total
}

/// Unit vector orthogonal to `basis`, or `None` once the basis spans the space.
fn random_direction(n: usize, rng: &mut ChaCha8Rng, basis: &[Vec<f64>]) -> Option<Vec<f64>> {
    if basis.len() >= n {
        return None;
    }
    for _ in 0..3 {
        let mut v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        let before = norm(&v);
        orthogonalize(&mut v, basis);
        let after = norm(&v);
        if after > 1e-8 * before {
            v.iter_mut().for_each(|x| *x /= after);
            return Some(v);
        }
    }
    None
}

/// `Σ_r coeffs[r] basis[r]` for each coefficient column.
fn combine(basis: &[Vec<f64>], columns: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = basis[0].len();
    columns
        .par_iter()
        .map(|col| {
            let mut y = vec![0.0; n];
            for (b, &c) in basis.iter().zip(col) {
                y.iter_mut().zip(b).for_each(|(yi, bi)| *yi += c * bi);
            }
            y
        })
        .collect()
}

/// Flips `v` so its largest-magnitude entry (first on ties) is positive.
pub fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).is_some_and(|&x| x < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

impl EigenSolver {
    pub fn solve(&self, w: &SparseWeights, k: usize) -> Result<SpectralBasis> {
        let n = w.n();
        if !w.is_symmetric() {
            return Err(Error::InvalidMatrix("eigensolver requires a symmetric matrix".into()));
        }
        if k == 0 || k > n {
            return Err(Error::InvalidParameter(format!("k = {k} must lie in 1..={n}")));
        }
        let m = n.min((2 * k + 40).max(3 * k));
        let keep = k + (m - k) / 2;
        let budget = self.max_matvecs.unwrap_or(10 * n);
        let breakdown = 1e-12 * w.inf_norm();

        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
        basis.push(random_direction(n, &mut rng, &[]).expect("n >= 1"));
        let mut h = DMatrix::<f64>::zeros(m, m);
        let mut start = 0;
        let mut matvecs = 0;
        let mut work = vec![0.0; n];

        loop {
            let mut size = m;
            let mut beta_last = 0.0;
            let mut residual_vector = None;
            for j in start..m {
                w.mul_vec(&basis[j], &mut work);
                matvecs += 1;
                let coeffs = orthogonalize(&mut work, &basis[..=j]);
                for (i, c) in coeffs.into_iter().enumerate() {
                    h[(i, j)] = c;
                }
                let beta = norm(&work);
                let next = if beta > breakdown {
                    work.iter_mut().for_each(|x| *x /= beta);
                    Some((work.clone(), beta))
                } else {
                    random_direction(n, &mut rng, &basis).map(|v| (v, 0.0))
                };
                if j + 1 == m {
                    if let Some((v, beta)) = next {
                        beta_last = beta;
                        residual_vector = Some(v);
                    }
                    break;
                }
                match next {
                    Some((v, beta)) => {
                        h[(j + 1, j)] = beta;
                        basis.push(v);
                    }
                    None => {
                        size = j + 1;
                        break;
                    }
                }
            }

            let projected = h.view((0, 0), (size, size));
            let sym = (projected + projected.transpose()) * 0.5;
            let eig = SymmetricEigen::new(sym);
            let mut order: Vec<usize> = (0..size).collect();
            order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
            let theta: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
            let anorm = theta.iter().fold(0.0f64, |a, t| a.max(t.abs()));
            let estimate = |i: usize| beta_last * eig.eigenvectors[(size - 1, order[i])].abs();
            let worst = (0..k).map(estimate).fold(0.0f64, f64::max);
            let converged = worst <= self.tol * anorm;

            if converged || matvecs >= budget {
                let columns: Vec<Vec<f64>> = order[..k]
                    .iter()
                    .map(|&i| eig.eigenvectors.column(i).iter().copied().collect())
                    .collect();
                let mut vectors = combine(&basis[..size], &columns);
                for v in &mut vectors {
                    let len = norm(v);
                    v.iter_mut().for_each(|x| *x /= len);
                    fix_sign(v);
                }
                let result = SpectralBasis::new(theta[..k].to_vec(), vectors)?;
                let true_residual = result.max_residual(w);
                let bound = theta[..k].iter().fold(1.0f64, |a, t| a.max(t.abs()));
                if !converged || true_residual > 1e-6 * bound {
                    return Err(Error::NotConverged {
                        matvecs,
                        residual: true_residual.max(worst),
                    });
                }
                return Ok(result);
            }

            let l = keep.min(size - 1);
            let columns: Vec<Vec<f64>> = order[..l]
                .iter()
                .map(|&i| eig.eigenvectors.column(i).iter().copied().collect())
                .collect();
            let mut next_basis = combine(&basis[..size], &columns);
            h.fill(0.0);
            for i in 0..l {
                h[(i, i)] = theta[i];
                let arrow = beta_last * eig.eigenvectors[(size - 1, order[i])];
                h[(l, i)] = arrow;
                h[(i, l)] = arrow;
            }
            let continuation = match residual_vector {
                Some(v) if beta_last > 0.0 => v,
                _ => random_direction(n, &mut rng, &next_basis).ok_or(Error::NotConverged {
                    matvecs,
                    residual: worst,
                })?,
            };
            next_basis.push(continuation);
            basis = next_basis;
            start = l;
        }
    }
}

fn check_level(k: usize, available: usize) -> Result<()> {
    if k == 0 || k > available {
        return Err(Error::InvalidParameter(format!(
            "level {k} outside 1..={available}"
        )));
    }
    Ok(())
}

/// MERW transition matrix `P_ij = W_ij ψ_j / (λ₁ ψ_i)`, stored in the same
/// sparse layout as `W`.
pub fn merw_transition(w: &SparseWeights, basis: &SpectralBasis) -> Result<SparseWeights> {
    if basis.n() != w.n() {
        return Err(Error::DimensionMismatch(format!(
            "basis has length {}, matrix has {} nodes",
            basis.n(),
            w.n()
        )));
    }
    let lambda = basis.eigenvalues()[0];
    if lambda <= 0.0 {
        return Err(Error::InvalidMatrix(format!(
            "principal eigenvalue {lambda} is not positive"
        )));
    }
    let psi = basis.eigenvector(0);
    let peak = psi.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let mut rows = Vec::with_capacity(w.n());
    for i in 0..w.n() {
        let (cols, weights) = w.row(i);
        if cols.is_empty() {
            return Err(Error::IsolatedNode(i));
        }
        if psi[i] <= 1e-12 * peak {
            return Err(Error::ReducibleGraph(i));
        }
        let scale = lambda * psi[i];
        rows.push(
            cols.iter()
                .zip(weights)
                .map(|(&j, &wij)| (j, (wij * psi[j] / scale).max(0.0)))
                .collect(),
        );
    }
    Ok(SparseWeights::from_rows(w.n(), rows, false))
}

/// `π_i = (ψ₁)_i²`.
pub fn merw_stationary(basis: &SpectralBasis) -> StationaryVector {
    StationaryVector(basis.eigenvector(0).iter().map(|x| x * x).collect())
}

/// Unnormalized level-`k` distribution `max(λ_k, 0) ψ_k²`; `k` is 1-based.
pub fn sublevel_stationary(basis: &SpectralBasis, k: usize) -> Result<StationaryVector> {
    check_level(k, basis.k())?;
    let lambda = basis.eigenvalues()[k - 1].max(0.0);
    Ok(StationaryVector(
        basis.eigenvector(k - 1).iter().map(|x| lambda * x * x).collect(),
    ))
}

/// Normalized sum of the first `levels` sub-graph distributions.
pub fn hmerw_stationary(basis: &SpectralBasis, levels: usize) -> Result<StationaryVector> {
    check_level(levels, basis.k())?;
    let clamped: Vec<f64> = basis.eigenvalues()[..levels].iter().map(|l| l.max(0.0)).collect();
    let mut values: Vec<f64> = (0..basis.n())
        .map(|i| {
            clamped
                .iter()
                .zip(basis.eigenvectors())
                .map(|(l, v)| l * v[i] * v[i])
                .sum()
        })
        .collect();
    let total: f64 = values.iter().sum();
    if total <= 0.0 {
        return Err(Error::SpectrallyEmpty);
    }
    values.iter_mut().for_each(|v| *v /= total);
    Ok(StationaryVector(values))
}

/// Frobenius norm of `W − Σ_{k≤K} λ_k ψ_k ψ_kᵀ`.
///
/// Evaluated one row at a time so no `n × n` matrix is held and the result
/// does not suffer the cancellation of the expanded quadratic form.
pub fn decomposition_residual(w: &SparseWeights, basis: &SpectralBasis, levels: usize) -> Result<f64> {
    check_level(levels, basis.k())?;
    if basis.n() != w.n() {
        return Err(Error::DimensionMismatch(format!(
            "basis has length {}, matrix has {} nodes",
            basis.n(),
            w.n()
        )));
    }
    let n = w.n();
    let lambdas = &basis.eigenvalues()[..levels];
    let vectors = &basis.eigenvectors()[..levels];
    let row_sq: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut row = vec![0.0; n];
            for (l, v) in lambdas.iter().zip(vectors) {
                let a = l * v[i];
                row.iter_mut().zip(v).for_each(|(r, vj)| *r -= a * vj);
            }
            let (cols, weights) = w.row(i);
            for (&j, &wij) in cols.iter().zip(weights) {
                row[j] += wij;
            }
            row.iter().map(|x| x * x).sum::<f64>()
        })
        .collect();
    Ok(row_sq.iter().sum::<f64>().sqrt())
}

/// Eigenvalues as `(level, lambda)` rows with 1-based levels.
pub fn eigenvalue_rows(basis: &SpectralBasis) -> Vec<(usize, f64)> {
    basis.eigenvalues().iter().enumerate().map(|(i, &l)| (i + 1, l)).collect()
}
