//! Compressed sparse row storage and the factorizations used by the solvers.

use faer::prelude::*;
use faer::sparse::linalg::solvers::{Llt, Lu, SymbolicLlt, SymbolicLu};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};
use faer::dyn_stack::{MemBuffer, MemStack};
use faer::sparse::linalg::cholesky::{factorize_symbolic_cholesky, LdltRef, SymbolicCholesky};
use faer::{Conj, Par, Side};
use std::sync::Arc;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds the matrix from `(row, col, value)` triplets, summing
    /// duplicates. Summation order follows the input order, so identical
    /// input gives bit-identical values.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut order: Vec<usize> = (0..triplets.len()).collect();
        order.sort_by_key(|&i| (triplets[i].0, triplets[i].1));
        let mut row_ptr = vec![0usize; nrows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for &i in &order {
            let (r, c, v) = triplets[i];
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) out of bounds");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..nrows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self { nrows, ncols, row_ptr, col_idx, values }
    }

    pub fn identity(n: usize) -> Self {
        Self::diagonal(&vec![1.0; n])
    }

    pub fn diagonal(d: &[f64]) -> Self {
        let n = d.len();
        Self {
            nrows: n,
            ncols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: d.to_vec(),
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[range.clone()].iter().copied().zip(self.values[range].iter().copied())
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |r| self.row(r).map(move |(c, v)| (r, c, v)))
    }

    /// Storage index of entry `(r, c)`, if it is part of the pattern.
    pub fn position(&self, r: usize, c: usize) -> Option<usize> {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[range.clone()].binary_search(&c).ok().map(|k| range.start + k)
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.position(r, c).map_or(0.0, |k| self.values[k])
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for (r, out) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            *out = acc;
        }
    }

    /// `xᵀ A y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        let ay = self.mul_vec(y);
        dot(x, &ay)
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    pub fn transpose(&self) -> Self {
        let t: Vec<_> = self.triplets().map(|(r, c, v)| (c, r, v)).collect();
        Self::from_triplets(self.ncols, self.nrows, &t)
    }

    /// Largest `|A_ij - A_ji|` over the stored pattern.
    pub fn asymmetry(&self) -> f64 {
        self.triplets()
            .map(|(r, c, v)| (v - self.get(c, r)).abs())
            .fold(0.0, f64::max)
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= s);
        out
    }

    /// `a·self + b·other`, on the union pattern.
    pub fn add_scaled(&self, a: f64, other: &CsrMatrix, b: f64) -> Self {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let t: Vec<_> = self
            .triplets()
            .map(|(r, c, v)| (r, c, a * v))
            .chain(other.triplets().map(|(r, c, v)| (r, c, b * v)))
            .collect();
        Self::from_triplets(self.nrows, self.ncols, &t)
    }

    /// Dense copy, for small test problems.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for (r, c, v) in self.triplets() {
            d[r][c] += v;
        }
        d
    }

    fn as_faer_transpose(&self) -> SparseColMatRef<'_, usize, f64> {
        // CSR of A is CSC of Aᵀ
        let symbolic = SymbolicSparseColMatRef::new_checked(
            self.ncols,
            self.nrows,
            &self.row_ptr,
            None,
            &self.col_idx,
        );
        SparseColMatRef::new(symbolic, &self.values)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Sparse LU whose symbolic analysis is computed once per sparsity pattern.
#[derive(Debug, Clone)]
pub struct LuSolver {
    symbolic: SymbolicLu<usize>,
    n: usize,
    nnz: usize,
}

/// Numeric LU factors of a square matrix.
#[derive(Debug)]
pub struct LuFactor {
    lu: Lu<usize, f64>,
}

impl LuSolver {
    pub fn new(pattern: &CsrMatrix) -> Result<Self> {
        if pattern.nrows != pattern.ncols {
            return Err(Error::LinearSolver("LU of a non-square matrix".into()));
        }
        let symbolic = SymbolicLu::try_new(pattern.as_faer_transpose().symbolic())
            .map_err(|e| Error::LinearSolver(format!("{e:?}")))?;
        Ok(Self { symbolic, n: pattern.nrows, nnz: pattern.nnz() })
    }

    /// Factors a matrix with the same pattern as the one used in [`LuSolver::new`].
    pub fn factor(&self, a: &CsrMatrix) -> Result<LuFactor> {
        if a.nrows != self.n || a.nnz() != self.nnz {
            return Err(Error::LinearSolver("sparsity pattern changed".into()));
        }
        let lu = Lu::try_new_with_symbolic(self.symbolic.clone(), a.as_faer_transpose())
            .map_err(|e| Error::LinearSolver(format!("{e:?}")))?;
        Ok(LuFactor { lu })
    }
}

impl LuFactor {
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = Col::<f64>::from_fn(b.len(), |i| b[i]);
        // the factors are of Aᵀ
        self.lu.solve_transpose_in_place(x.as_mut());
        (0..b.len()).map(|i| x[i]).collect()
    }
}

/// Sparse Cholesky for symmetric positive definite matrices.
#[derive(Debug, Clone)]
pub struct CholeskySolver {
    symbolic: SymbolicLlt<usize>,
    n: usize,
    nnz: usize,
}

#[derive(Debug)]
pub struct CholeskyFactor {
    llt: Llt<usize, f64>,
}

impl CholeskySolver {
    pub fn new(pattern: &CsrMatrix) -> Result<Self> {
        if pattern.nrows != pattern.ncols {
            return Err(Error::LinearSolver("Cholesky of a non-square matrix".into()));
        }
        let symbolic = SymbolicLlt::try_new(pattern.as_faer_transpose().symbolic(), Side::Lower)
            .map_err(|e| Error::LinearSolver(format!("{e:?}")))?;
        Ok(Self { symbolic, n: pattern.nrows, nnz: pattern.nnz() })
    }

    pub fn factor(&self, a: &CsrMatrix) -> Result<CholeskyFactor> {
        if a.nrows != self.n || a.nnz() != self.nnz {
            return Err(Error::LinearSolver("sparsity pattern changed".into()));
        }
        let llt = Llt::try_new_with_symbolic(self.symbolic.clone(), a.as_faer_transpose(), Side::Lower)
            .map_err(|e| Error::LinearSolver(format!("{e:?}")))?;
        Ok(CholeskyFactor { llt })
    }
}

impl CholeskyFactor {
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = Col::<f64>::from_fn(b.len(), |i| b[i]);
        self.llt.solve_in_place(x.as_mut());
        (0..b.len()).map(|i| x[i]).collect()
    }
}

/// Sparse `LDLᵀ` without pivoting, for symmetric quasi-definite matrices.
/// Breakdown is reported as an error so callers can fall back to LU.
#[derive(Debug, Clone)]
pub struct LdltSolver {
    symbolic: Arc<SymbolicCholesky<usize>>,
    n: usize,
    nnz: usize,
}

#[derive(Debug)]
pub struct LdltFactor {
    symbolic: Arc<SymbolicCholesky<usize>>,
    values: Vec<f64>,
}

impl LdltSolver {
    pub fn new(pattern: &CsrMatrix) -> Result<Self> {
        if pattern.nrows != pattern.ncols {
            return Err(Error::LinearSolver("LDLT of a non-square matrix".into()));
        }
        let symbolic = factorize_symbolic_cholesky(
            pattern.as_faer_transpose().symbolic(),
            Side::Lower,
            Default::default(),
            Default::default(),
        )
        .map_err(|e| Error::LinearSolver(format!("{e:?}")))?;
        Ok(Self { symbolic: Arc::new(symbolic), n: pattern.nrows, nnz: pattern.nnz() })
    }

    /// Factors a symmetric matrix with the pattern given to [`LdltSolver::new`].
    pub fn factor(&self, a: &CsrMatrix) -> Result<LdltFactor> {
        if a.nrows != self.n || a.nnz() != self.nnz {
            return Err(Error::LinearSolver("sparsity pattern changed".into()));
        }
        let mut values = vec![0.0; self.symbolic.len_val()];
        let mut buf = MemBuffer::new(self.symbolic.factorize_numeric_ldlt_scratch::<f64>(Par::Seq, Default::default()));
        self.symbolic
            .factorize_numeric_ldlt(
                &mut values,
                a.as_faer_transpose(),
                Side::Lower,
                Default::default(),
                Par::Seq,
                MemStack::new(&mut buf),
                Default::default(),
            )
            .map_err(|e| Error::LinearSolver(format!("{e:?}")))?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::LinearSolver("LDLT breakdown".into()));
        }
        Ok(LdltFactor { symbolic: self.symbolic.clone(), values })
    }
}

impl LdltFactor {
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = Col::<f64>::from_fn(b.len(), |i| b[i]);
        let mut buf = MemBuffer::new(self.symbolic.solve_in_place_scratch::<f64>(1, Par::Seq));
        LdltRef::new(&self.symbolic, &self.values).solve_in_place_with_conj(
            Conj::No,
            x.as_mat_mut(),
            Par::Seq,
            MemStack::new(&mut buf),
        );
        (0..b.len()).map(|i| x[i]).collect()
    }
}

/// Outcome of an iterative solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterativeStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Jacobi-preconditioned conjugate gradients for a symmetric positive
/// definite operator given as a closure.
pub fn conjugate_gradient(
    apply: impl Fn(&[f64], &mut [f64]),
    jacobi: &[f64],
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, IterativeStats)> {
    let n = b.len();
    let b_norm = dot(b, b).sqrt();
    let mut x = vec![0.0; n];
    if b_norm == 0.0 {
        return Ok((x, IterativeStats { iterations: 0, relative_residual: 0.0 }));
    }
    let precond = |r: &[f64]| -> Vec<f64> {
        r.iter().zip(jacobi).map(|(ri, d)| if *d != 0.0 { ri / d } else { *ri }).collect()
    };
    let mut r = b.to_vec();
    let mut z = precond(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 1..=max_iter {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::LinearSolver(format!("CG breakdown: pᵀAp = {pap:e}")));
        }
        let step = rz / pap;
        for i in 0..n {
            x[i] += step * p[i];
            r[i] -= step * ap[i];
        }
        let rel = dot(&r, &r).sqrt() / b_norm;
        if rel <= tol {
            return Ok((x, IterativeStats { iterations: it, relative_residual: rel }));
        }
        z = precond(&r);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::LinearSolver(format!("CG did not reach {tol:e} in {max_iter} iterations")))
}
