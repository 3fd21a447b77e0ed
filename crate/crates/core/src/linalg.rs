//! Symmetric lattice operators and their factorizations.
//!
//! Operators on at most [`DENSE_SITE_LIMIT`] sites are stored as dense
//! matrices and factorized by Cholesky; larger ones use compressed sparse
//! columns and a fill-reducing sparse LDLᵀ. Both variants honour the same
//! quadratic-form contract.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use sprs::{CsMat, FillInReduction, TriMat};
use sprs_ldl::{Ldl, LdlNumeric};

use crate::error::{Error, Result};
use crate::lattice::Edge;

/// Largest site count stored densely.
pub const DENSE_SITE_LIMIT: usize = 4096;

/// Largest dimension for which eigenvalue certificates use a full dense
/// eigensolver; above it an inverse iteration is used.
pub const DENSE_EIGEN_LIMIT: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Storage {
    Dense,
    Sparse,
}

impl Storage {
    pub fn for_sites(n: usize) -> Self {
        if n <= DENSE_SITE_LIMIT {
            Storage::Dense
        } else {
            Storage::Sparse
        }
    }
}

/// A real symmetric matrix acting on per-site vectors.
#[derive(Debug, Clone)]
pub enum SymmetricOperator {
    Dense(DMatrix<f64>),
    Sparse(CsMat<f64>),
}

impl SymmetricOperator {
    /// `Σ_e w_e (δ_a - δ_b)(δ_a - δ_b)ᵀ + diag(extra)`, storage chosen by size.
    pub fn from_edge_weights(
        n: usize,
        edges: &[Edge],
        weights: &[f64],
        extra_diagonal: Option<&[f64]>,
    ) -> Self {
        Self::assemble(n, edges, weights, extra_diagonal, None, Storage::for_sites(n))
    }

    /// Same operator with the last site removed (row and column deleted).
    ///
    /// For a weighted graph Laplacian this is the grounded Laplacian, whose
    /// determinant equals `1/n` times the product of the nonzero eigenvalues
    /// of the full one.
    pub fn grounded_from_edge_weights(
        n: usize,
        edges: &[Edge],
        weights: &[f64],
        extra_diagonal: Option<&[f64]>,
    ) -> Self {
        Self::assemble(
            n,
            edges,
            weights,
            extra_diagonal,
            Some(n - 1),
            Storage::for_sites(n),
        )
    }

    pub fn assemble(
        n: usize,
        edges: &[Edge],
        weights: &[f64],
        extra_diagonal: Option<&[f64]>,
        ground: Option<usize>,
        storage: Storage,
    ) -> Self {
        debug_assert_eq!(edges.len(), weights.len());
        let dim = if ground.is_some() { n - 1 } else { n };
        let index = |site: usize| -> Option<usize> {
            match ground {
                Some(g) if site == g => None,
                Some(g) if site > g => Some(site - 1),
                _ => Some(site),
            }
        };
        let mut diag = vec![0.0; dim];
        if let Some(extra) = extra_diagonal {
            for (site, &v) in extra.iter().enumerate() {
                if let Some(i) = index(site) {
                    diag[i] += v;
                }
            }
        }
        match storage {
            Storage::Dense => {
                let mut m = DMatrix::zeros(dim, dim);
                for (e, &w) in edges.iter().zip(weights) {
                    let (ia, ib) = (index(e.a), index(e.b));
                    if let Some(i) = ia {
                        diag[i] += w;
                    }
                    if let Some(j) = ib {
                        diag[j] += w;
                    }
                    if let (Some(i), Some(j)) = (ia, ib) {
                        m[(i, j)] -= w;
                        m[(j, i)] -= w;
                    }
                }
                for (i, d) in diag.into_iter().enumerate() {
                    m[(i, i)] += d;
                }
                SymmetricOperator::Dense(m)
            }
            Storage::Sparse => {
                let mut tri = TriMat::with_capacity((dim, dim), dim + 2 * edges.len());
                for (e, &w) in edges.iter().zip(weights) {
                    let (ia, ib) = (index(e.a), index(e.b));
                    if let Some(i) = ia {
                        diag[i] += w;
                    }
                    if let Some(j) = ib {
                        diag[j] += w;
                    }
                    if let (Some(i), Some(j)) = (ia, ib) {
                        tri.add_triplet(i, j, -w);
                        tri.add_triplet(j, i, -w);
                    }
                }
                for (i, d) in diag.into_iter().enumerate() {
                    tri.add_triplet(i, i, d);
                }
                SymmetricOperator::Sparse(tri.to_csc())
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            SymmetricOperator::Dense(m) => m.nrows(),
            SymmetricOperator::Sparse(m) => m.rows(),
        }
    }

    pub fn storage(&self) -> Storage {
        match self {
            SymmetricOperator::Dense(_) => Storage::Dense,
            SymmetricOperator::Sparse(_) => Storage::Sparse,
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match self {
            SymmetricOperator::Dense(m) => m[(i, j)],
            SymmetricOperator::Sparse(m) => m.get(i, j).copied().unwrap_or(0.0),
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        match self {
            SymmetricOperator::Dense(m) => {
                let v = m * DVector::from_column_slice(x);
                v.as_slice().to_vec()
            }
            SymmetricOperator::Sparse(m) => {
                let mut y = vec![0.0; m.rows()];
                for (col, vec) in m.outer_iterator().enumerate() {
                    for (row, &v) in vec.iter() {
                        y[row] += v * x[col];
                    }
                }
                y
            }
        }
    }

    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        self.apply(x).iter().zip(x).map(|(a, b)| a * b).sum()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            SymmetricOperator::Dense(m) => m.clone(),
            SymmetricOperator::Sparse(m) => {
                let mut d = DMatrix::zeros(m.rows(), m.cols());
                for (col, vec) in m.outer_iterator().enumerate() {
                    for (row, &v) in vec.iter() {
                        d[(row, col)] = v;
                    }
                }
                d
            }
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        match self {
            SymmetricOperator::Dense(m) => SymmetricOperator::Dense(m * c),
            SymmetricOperator::Sparse(m) => SymmetricOperator::Sparse(m.map(|v| v * c)),
        }
    }

    /// Cholesky (dense) or LDLᵀ (sparse) factorization of a positive
    /// definite operator.
    pub fn factorize(&self) -> Result<Factorization> {
        match self {
            SymmetricOperator::Dense(m) => {
                if let Some(i) = (0..m.nrows()).find(|&i| !m[(i, i)].is_finite()) {
                    return Err(Error::Factorization {
                        site: Some(i),
                        reason: "non-finite diagonal entry".into(),
                    });
                }
                Cholesky::new(m.clone())
                    .map(Factorization::Dense)
                    .ok_or_else(|| Error::Factorization {
                        site: weakest_row(m),
                        reason: "matrix is not positive definite".into(),
                    })
            }
            SymmetricOperator::Sparse(m) => {
                let ldl = Ldl::new()
                    .fill_in_reduction(FillInReduction::ReverseCuthillMcKee)
                    .numeric(m.view())
                    .map_err(|e| Error::Factorization {
                        site: None,
                        reason: format!("{e:?}"),
                    })?;
                if ldl.d().iter().any(|&d| !(d > 0.0) || !d.is_finite()) {
                    return Err(Error::Factorization {
                        site: None,
                        reason: "sparse LDLᵀ produced a non-positive pivot".into(),
                    });
                }
                Ok(Factorization::Sparse(Box::new(ldl)))
            }
        }
    }
}

/// Row whose diagonal is smallest relative to its off-diagonal mass; used
/// only to point at a likely culprit when a factorization fails.
fn weakest_row(m: &DMatrix<f64>) -> Option<usize> {
    (0..m.nrows())
        .map(|i| {
            let off: f64 = (0..m.ncols()).filter(|&j| j != i).map(|j| m[(i, j)].abs()).sum();
            (i, m[(i, i)] - off)
        })
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i)
}

/// Factorization handle of a positive definite [`SymmetricOperator`].
pub enum Factorization {
    Dense(Cholesky<f64, Dyn>),
    Sparse(Box<LdlNumeric<f64, usize>>),
}

impl Factorization {
    pub fn dim(&self) -> usize {
        match self {
            Factorization::Dense(c) => c.l_dirty().nrows(),
            Factorization::Sparse(l) => l.problem_size(),
        }
    }

    pub fn logdet(&self) -> f64 {
        match self {
            Factorization::Dense(c) => 2.0 * c.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>(),
            Factorization::Sparse(l) => l.d().iter().map(|d| d.ln()).sum(),
        }
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        match self {
            Factorization::Dense(c) => {
                let x = c.solve(&DVector::from_column_slice(rhs));
                x.as_slice().to_vec()
            }
            Factorization::Sparse(l) => l.solve(rhs.to_vec()),
        }
    }

    /// Full inverse. Dense factorizations only.
    pub fn inverse(&self) -> Result<DMatrix<f64>> {
        match self {
            Factorization::Dense(c) => Ok(c.inverse()),
            Factorization::Sparse(l) => Err(Error::TooLarge {
                op: "dense inverse",
                sites: l.problem_size(),
                limit: DENSE_SITE_LIMIT,
            }),
        }
    }

    /// The dense lower Cholesky factor, if any.
    pub fn dense_factor(&self) -> Option<DMatrix<f64>> {
        match self {
            Factorization::Dense(c) => Some(c.l()),
            Factorization::Sparse(_) => None,
        }
    }
}

/// Orthonormal basis of the zero-sum subspace of `R^n` (Helmert contrasts).
///
/// Column `k - 1` (for `k = 1..n`) is `(1, …, 1, -k, 0, …, 0) / √(k(k+1))`
/// with `k` leading ones.
pub fn zero_sum_basis(n: usize) -> DMatrix<f64> {
    let mut q = DMatrix::zeros(n, n.saturating_sub(1));
    for k in 1..n {
        let norm = ((k * (k + 1)) as f64).sqrt();
        for j in 0..k {
            q[(j, k - 1)] = 1.0 / norm;
        }
        q[(k, k - 1)] = -(k as f64) / norm;
    }
    q
}

/// Smallest eigenvalue of a dense symmetric matrix.
pub fn smallest_eigenvalue(m: &DMatrix<f64>) -> Result<f64> {
    smallest_eigenvalue_with_limit(m, DENSE_EIGEN_LIMIT)
}

pub(crate) fn smallest_eigenvalue_with_limit(m: &DMatrix<f64>, dense_limit: usize) -> Result<f64> {
    let n = m.nrows();
    if n == 0 {
        return Err(Error::InvalidParams("empty matrix".into()));
    }
    if n <= dense_limit {
        return Ok(SymmetricEigen::new(m.clone())
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min));
    }
    inverse_iteration_min(m)
}

/// Inverse iteration on `m - σI` with `σ` strictly below the spectrum
/// (Gershgorin), refined by the Rayleigh quotient.
fn inverse_iteration_min(m: &DMatrix<f64>) -> Result<f64> {
    let n = m.nrows();
    let gershgorin = (0..n)
        .map(|i| {
            let off: f64 = (0..n).filter(|&j| j != i).map(|j| m[(i, j)].abs()).sum();
            m[(i, i)] - off
        })
        .fold(f64::INFINITY, f64::min);
    let scale = m.amax().max(1.0);
    let shift = gershgorin - 1e-3 * scale;
    let shifted = m - DMatrix::identity(n, n) * shift;
    let chol = Cholesky::new(shifted).ok_or_else(|| Error::Factorization {
        site: None,
        reason: "shifted operator for inverse iteration is not positive definite".into(),
    })?;
    let mut v = DVector::from_fn(n, |i, _| 1.0 + 0.01 * ((i * 7919) % 101) as f64);
    v /= v.norm();
    let mut rayleigh = v.dot(&(m * &v));
    for _ in 0..20_000 {
        let mut w = chol.solve(&v);
        w /= w.norm();
        rayleigh = w.dot(&(m * &w));
        let residual = (m * &w - &w * rayleigh).norm();
        v = w;
        if residual <= 1e-11 * scale {
            break;
        }
    }
    Ok(rayleigh)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_lattice, laplacian};

    #[test]
    fn helmert_basis_is_orthonormal_and_zero_sum() {
        let q = zero_sum_basis(7);
        let gram = q.transpose() * &q;
        assert!((gram - DMatrix::identity(6, 6)).amax() < 1e-14);
        for col in q.column_iter() {
            assert!(col.sum().abs() < 1e-14);
        }
    }

    #[test]
    fn dense_and_sparse_agree() {
        let lat = build_lattice(2, &[4, 5]).unwrap();
        let w: Vec<f64> = (0..lat.edges().len()).map(|e| 0.5 + (e % 7) as f64 * 0.3).collect();
        let mass: Vec<f64> = (0..lat.num_sites()).map(|i| 0.1 + (i % 3) as f64 * 0.05).collect();
        let n = lat.num_sites();
        let dense = SymmetricOperator::assemble(n, lat.edges(), &w, Some(&mass), None, Storage::Dense);
        let sparse = SymmetricOperator::assemble(n, lat.edges(), &w, Some(&mass), None, Storage::Sparse);
        assert!((dense.to_dense() - sparse.to_dense()).amax() < 1e-15);
        let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        assert!((dense.quadratic_form(&x) - sparse.quadratic_form(&x)).abs() < 1e-12);

        let fd = dense.factorize().unwrap();
        let fs = sparse.factorize().unwrap();
        assert!((fd.logdet() - fs.logdet()).abs() < 1e-10);
        let a = fd.solve(&x);
        let b = fs.solve(&x);
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-10);
        }
    }

    #[test]
    fn grounded_determinant_matches_pseudo_determinant() {
        let lat = build_lattice(2, &[3, 4]).unwrap();
        let n = lat.num_sites();
        let w: Vec<f64> = (0..lat.edges().len()).map(|e| 1.0 + (e % 5) as f64 * 0.2).collect();
        let full = SymmetricOperator::from_edge_weights(n, lat.edges(), &w, None).to_dense();
        let pdet: f64 = SymmetricEigen::new(full)
            .eigenvalues
            .iter()
            .filter(|v| v.abs() > 1e-9)
            .map(|v| v.ln())
            .sum();
        let grounded = SymmetricOperator::grounded_from_edge_weights(n, lat.edges(), &w, None);
        let ld = grounded.factorize().unwrap().logdet();
        assert!((ld + (n as f64).ln() - pdet).abs() < 1e-10);
    }

    #[test]
    fn singular_operator_fails_to_factorize() {
        let lat = build_lattice(1, &[5]).unwrap();
        assert!(laplacian(&lat).factorize().is_err());
    }

    #[test]
    fn inverse_iteration_matches_dense_eigensolver() {
        let lat = build_lattice(2, &[5, 6]).unwrap();
        let mut m = laplacian(&lat).to_dense();
        for i in 0..m.nrows() {
            m[(i, i)] += 0.2 + 0.01 * i as f64;
        }
        let dense = smallest_eigenvalue_with_limit(&m, 1000).unwrap();
        let iter = smallest_eigenvalue_with_limit(&m, 4).unwrap();
        assert!((dense - iter).abs() < 1e-8, "{dense} vs {iter}");
    }
}
