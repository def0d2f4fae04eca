//! Small dense helpers and a compressed sparse row matrix used for the
//! lifted generator blocks.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

pub const STRUCT_TOL: f64 = 1e-12;
pub const SOLVE_TOL: f64 = 1e-10;

/// Kronecker sum A ⊕ B = A ⊗ I + I ⊗ B.
pub fn kron_sum(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let ia = DMatrix::<f64>::identity(a.nrows(), a.nrows());
    let ib = DMatrix::<f64>::identity(b.nrows(), b.nrows());
    a.kronecker(&ib) + ia.kronecker(b)
}

pub fn row_sums(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(m.nrows(), m.row_iter().map(|r| r.sum()))
}

/// Stationary vector of a finite generator: solves πQ = 0, π1 = 1 by
/// replacing one balance equation with the normalization.
pub fn generator_stationary(q: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = q.nrows();
    if n == 0 || q.ncols() != n {
        return Err(Error::DimensionMismatch(format!("generator is {}x{}", q.nrows(), q.ncols())));
    }
    let mut a = q.transpose();
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = 1.0;
    let pi = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::SingularSolve("stationary equations".into()))?;
    if pi.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSolve("non-finite stationary vector".into()));
    }
    Ok(pi)
}

/// Breadth-first reachability over the nonzero pattern of a square matrix.
pub fn reachable_dense(m: &DMatrix<f64>, start: usize) -> Vec<bool> {
    let n = m.nrows();
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([start]);
    seen[start] = true;
    while let Some(i) = queue.pop_front() {
        for j in 0..n {
            if !seen[j] && i != j && m[(i, j)] != 0.0 {
                seen[j] = true;
                queue.push_back(j);
            }
        }
    }
    seen
}

/// Strong connectivity of the off-diagonal nonzero pattern: every state is
/// reachable from 0 and 0 is reachable from every state. Returns the first
/// offending index on failure.
pub fn first_unconnected(m: &DMatrix<f64>) -> Option<usize> {
    let fwd = reachable_dense(m, 0);
    if let Some(i) = fwd.iter().position(|&s| !s) {
        return Some(i);
    }
    let back = reachable_dense(&m.transpose(), 0);
    back.iter().position(|&s| !s)
}

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl Csr {
    pub fn zeros(nrows: usize, ncols: usize) -> Csr {
        Csr { nrows, ncols, indptr: vec![0; nrows + 1], indices: Vec::new(), values: Vec::new() }
    }

    /// Builds from (row, col, value) triplets; duplicates are summed and
    /// exact zeros dropped.
    pub fn from_triplets(nrows: usize, ncols: usize, mut trips: Vec<(usize, usize, f64)>) -> Csr {
        trips.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut indptr = vec![0usize; nrows + 1];
        let mut indices = Vec::with_capacity(trips.len());
        let mut values: Vec<f64> = Vec::with_capacity(trips.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in trips {
            debug_assert!(r < nrows && c < ncols);
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                indices.push(c);
                values.push(v);
                indptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..nrows {
            indptr[r + 1] += indptr[r];
        }
        let mut m = Csr { nrows, ncols, indptr, indices, values };
        m.prune();
        m
    }

    pub fn from_dense(d: &DMatrix<f64>) -> Csr {
        let mut trips = Vec::new();
        for i in 0..d.nrows() {
            for j in 0..d.ncols() {
                let v = d[(i, j)];
                if v != 0.0 {
                    trips.push((i, j, v));
                }
            }
        }
        Csr::from_triplets(d.nrows(), d.ncols(), trips)
    }

    fn prune(&mut self) {
        if self.values.iter().all(|&v| v != 0.0) {
            return;
        }
        let mut indptr = vec![0usize; self.nrows + 1];
        let mut indices = Vec::with_capacity(self.indices.len());
        let mut values = Vec::with_capacity(self.values.len());
        for r in 0..self.nrows {
            for k in self.indptr[r]..self.indptr[r + 1] {
                if self.values[k] != 0.0 {
                    indices.push(self.indices[k]);
                    values.push(self.values[k]);
                }
            }
            indptr[r + 1] = indices.len();
        }
        self.indptr = indptr;
        self.indices = indices;
        self.values = values;
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

    pub fn is_zero(&self) -> bool {
        self.values.is_empty()
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.indptr[i], self.indptr[i + 1]);
        (&self.indices[a..b], &self.values[a..b])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.nrows).map(|i| self.row(i).1.iter().sum()).collect()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    pub fn scaled(&self, s: f64) -> Csr {
        let mut m = self.clone();
        for v in &mut m.values {
            *v *= s;
        }
        m.prune();
        m
    }

    pub fn add(&self, other: &Csr) -> Csr {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let mut trips = self.triplets();
        trips.extend(other.triplets());
        Csr::from_triplets(self.nrows, self.ncols, trips)
    }

    pub fn add_identity(&self, s: f64) -> Csr {
        let mut trips = self.triplets();
        trips.extend((0..self.nrows.min(self.ncols)).map(|i| (i, i, s)));
        Csr::from_triplets(self.nrows, self.ncols, trips)
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.nnz());
        for i in 0..self.nrows {
            let (c, v) = self.row(i);
            out.extend(c.iter().zip(v).map(|(&j, &x)| (i, j, x)));
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.nrows, self.ncols);
        for (i, j, v) in self.triplets() {
            d[(i, j)] = v;
        }
        d
    }

    pub fn transpose(&self) -> Csr {
        let trips = self.triplets().into_iter().map(|(i, j, v)| (j, i, v)).collect();
        Csr::from_triplets(self.ncols, self.nrows, trips)
    }

    /// Row vector times matrix: y = x A.
    pub fn left_mul(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.ncols];
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let (c, v) = self.row(i);
            for (&j, &a) in c.iter().zip(v) {
                y[j] += xi * a;
            }
        }
        y
    }

    /// Matrix product A B.
    pub fn matmul(&self, other: &Csr) -> Csr {
        assert_eq!(self.ncols, other.nrows);
        let mut trips = Vec::new();
        for i in 0..self.nrows {
            let (ca, va) = self.row(i);
            for (&k, &a) in ca.iter().zip(va) {
                let (cb, vb) = other.row(k);
                trips.extend(cb.iter().zip(vb).map(|(&j, &b)| (i, j, a * b)));
            }
        }
        Csr::from_triplets(self.nrows, other.ncols, trips)
    }
}

/// Nonzero entries of a dense matrix as (row, col, value).
fn nonzeros(m: &DMatrix<f64>) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::new();
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            let v = m[(i, j)];
            if v != 0.0 {
                out.push((i, j, v));
            }
        }
    }
    out
}

/// Sparse Kronecker product of a sequence of dense factors, in order
/// (first factor is the most significant index).
pub fn sparse_kron(factors: &[&DMatrix<f64>]) -> Csr {
    let mut trips: Vec<(usize, usize, f64)> = vec![(0, 0, 1.0)];
    let (mut nr, mut nc) = (1usize, 1usize);
    for f in factors {
        let nz = nonzeros(f);
        let mut next = Vec::with_capacity(trips.len() * nz.len());
        for &(i, j, v) in &trips {
            for &(a, b, w) in &nz {
                next.push((i * f.nrows() + a, j * f.ncols() + b, v * w));
            }
        }
        trips = next;
        nr *= f.nrows();
        nc *= f.ncols();
    }
    Csr::from_triplets(nr, nc, trips)
}
