//! Thin wrapper over faer's sparse Cholesky for the symmetric positive
//! definite systems that appear in the solvers.

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Llt, SymbolicLlt};
use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, Side};
use nalgebra::DMatrix;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("sparse factorization failed: {0}")]
pub struct FactorError(pub String);

/// Accumulates entries of a symmetric matrix. Only the lower triangle is
/// kept; duplicates are summed.
#[derive(Debug, Clone, Default)]
pub struct SymmetricBuilder {
    n: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl SymmetricBuilder {
    pub fn new(n: usize) -> Self {
        Self { n, entries: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Adds `v` at `(i, j)` and, implicitly, at `(j, i)`. Call once per
    /// unordered pair.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        self.entries.push((r, c, v));
    }

    pub fn add_diagonal(&mut self, v: f64) {
        for i in 0..self.n {
            self.entries.push((i, i, v));
        }
    }

    fn merged(&self) -> Vec<Triplet<usize, usize, f64>> {
        let mut e = self.entries.clone();
        e.sort_unstable_by_key(|&(r, c, _)| (c, r));
        let mut out: Vec<Triplet<usize, usize, f64>> = Vec::with_capacity(e.len());
        for (r, c, v) in e {
            match out.last_mut() {
                Some(t) if t.row == r && t.col == c => t.val += v,
                _ => out.push(Triplet::new(r, c, v)),
            }
        }
        out
    }

    pub fn factor(&self) -> Result<SpdFactor, FactorError> {
        let a = SparseColMat::<usize, f64>::try_new_from_triplets(self.n, self.n, &self.merged())
            .map_err(|e| FactorError(format!("{e:?}")))?;
        let symbolic = SymbolicLlt::try_new(a.symbolic(), Side::Lower).map_err(|e| FactorError(format!("{e:?}")))?;
        let llt = Llt::try_new_with_symbolic(symbolic, a.as_ref(), Side::Lower)
            .map_err(|e| FactorError(format!("{e:?}")))?;
        Ok(SpdFactor { n: self.n, llt })
    }
}

/// Cholesky factor of a sparse SPD matrix.
#[derive(Debug)]
pub struct SpdFactor {
    n: usize,
    llt: Llt<usize, f64>,
}

impl SpdFactor {
    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves `A X = B` column by column.
    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(b.nrows(), self.n, "right-hand side has wrong height");
        let rhs = Mat::<f64>::from_fn(b.nrows(), b.ncols(), |i, j| b[(i, j)]);
        let x = self.llt.solve(&rhs);
        DMatrix::from_fn(b.nrows(), b.ncols(), |i, j| x[(i, j)])
    }
}
