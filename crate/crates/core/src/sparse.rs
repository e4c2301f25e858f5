//! Row-sparse complex operators for model Hamiltonians whose full dense form
//! would be too large, plus isometries describing subspaces.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::qcore::{c, Operator, StateVector, C64, DEFAULT_MAX_DIM};

#[derive(Debug, Clone, PartialEq)]
pub struct SparseOperator {
    dim: usize,
    rows: Vec<Vec<(usize, C64)>>,
}

impl SparseOperator {
    pub fn zeros(dim: usize) -> Self {
        Self { dim, rows: vec![Vec::new(); dim] }
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        let rows = d
            .iter()
            .enumerate()
            .map(|(i, &x)| if x != 0.0 { vec![(i, c(x))] } else { Vec::new() })
            .collect();
        Self { dim: d.len(), rows }
    }

    /// Sum duplicate entries and drop exact zeros.
    pub fn from_triplets(dim: usize, triplets: impl IntoIterator<Item = (usize, usize, C64)>) -> Self {
        let mut rows: Vec<Vec<(usize, C64)>> = vec![Vec::new(); dim];
        for (i, j, v) in triplets {
            rows[i].push((j, v));
        }
        for row in &mut rows {
            row.sort_by_key(|e| e.0);
            let mut merged: Vec<(usize, C64)> = Vec::with_capacity(row.len());
            for &(j, v) in row.iter() {
                match merged.last_mut() {
                    Some(last) if last.0 == j => last.1 += v,
                    _ => merged.push((j, v)),
                }
            }
            merged.retain(|e| e.1 != C64::new(0.0, 0.0));
            *row = merged;
        }
        Self { dim, rows }
    }

    pub fn from_dense(op: &Operator) -> Self {
        let n = op.nrows();
        Self::from_triplets(n, (0..n).flat_map(|i| (0..n).map(move |j| (i, j, op[(i, j)]))))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn row(&self, i: usize) -> &[(usize, C64)] {
        &self.rows[i]
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, C64)> + '_ {
        self.rows.iter().enumerate().flat_map(|(i, r)| r.iter().map(move |&(j, v)| (i, j, v)))
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.rows[i]
            .binary_search_by_key(&j, |e| e.0)
            .map(|k| self.rows[i][k].1)
            .unwrap_or(C64::new(0.0, 0.0))
    }

    pub fn add(&self, other: &Self) -> Self {
        Self::from_triplets(self.dim, self.triplets().chain(other.triplets()))
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::from_triplets(self.dim, self.triplets().map(|(i, j, v)| (i, j, v * s)))
    }

    pub fn adjoint(&self) -> Self {
        Self::from_triplets(self.dim, self.triplets().map(|(i, j, v)| (j, i, v.conj())))
    }

    pub fn is_diagonal(&self) -> bool {
        self.triplets().all(|(i, j, _)| i == j)
    }

    pub fn diagonal_re(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i).re).collect()
    }

    pub fn to_dense(&self) -> Result<Operator> {
        if self.dim > DEFAULT_MAX_DIM {
            return Err(Error::DimensionOverflow { dim: self.dim, max: DEFAULT_MAX_DIM });
        }
        let mut m = Operator::zeros(self.dim, self.dim);
        for (i, j, v) in self.triplets() {
            m[(i, j)] = v;
        }
        Ok(m)
    }

    pub fn mul_vec(&self, v: &StateVector) -> StateVector {
        StateVector::from_fn(self.dim, |i, _| self.rows[i].iter().map(|&(j, x)| x * v[j]).sum())
    }

    pub fn hermiticity_residual(&self) -> f64 {
        self.triplets().fold(0.0_f64, |m, (i, j, v)| m.max((v - self.get(j, i).conj()).norm()))
    }

    pub fn hs_norm(&self) -> f64 {
        self.triplets().map(|(_, _, v)| v.norm_sqr()).sum::<f64>().sqrt()
    }

    /// `‖[A, D]‖₂` for a diagonal `D = diag(q)`.
    pub fn commutator_with_diagonal_hs(&self, q: &[f64]) -> f64 {
        self.triplets().map(|(i, j, v)| (v * (q[j] - q[i])).norm_sqr()).sum::<f64>().sqrt()
    }

    /// Dense submatrix on the listed basis indices.
    pub fn block(&self, indices: &[usize]) -> Operator {
        let mut lookup = vec![usize::MAX; self.dim];
        for (k, &i) in indices.iter().enumerate() {
            lookup[i] = k;
        }
        let m = indices.len();
        let mut out = Operator::zeros(m, m);
        for (a, &i) in indices.iter().enumerate() {
            for &(j, v) in &self.rows[i] {
                let b = lookup[j];
                if b != usize::MAX {
                    out[(a, b)] = v;
                }
            }
        }
        out
    }

    /// `B† A B` for an isometry `B`.
    pub fn compress(&self, iso: &Isometry) -> Operator {
        if iso.is_coordinate() {
            return self.block(&iso.indices);
        }
        let cols: Vec<StateVector> = (0..iso.rank()).map(|j| self.mul_vec(&iso.column(j))).collect();
        let ab = Operator::from_columns(&cols);
        let b = iso.to_dense();
        b.adjoint() * ab
    }
}

/// Isometry `B: C^rank → C^dim` whose columns are supported on `indices`:
/// column `j` has amplitude `local[(r, j)]` at basis index `indices[r]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Isometry {
    pub dim: usize,
    pub indices: Vec<usize>,
    pub local: Operator,
    coordinate: bool,
}

impl Isometry {
    /// Columns are the listed basis vectors.
    pub fn coordinates(dim: usize, indices: Vec<usize>) -> Self {
        let m = indices.len();
        Self { dim, indices, local: Operator::identity(m, m), coordinate: true }
    }

    pub fn new(dim: usize, indices: Vec<usize>, local: Operator) -> Self {
        Self { dim, indices, local, coordinate: false }
    }

    pub fn dense(b: Operator) -> Self {
        let dim = b.nrows();
        Self { dim, indices: (0..dim).collect(), local: b, coordinate: false }
    }

    pub fn is_coordinate(&self) -> bool {
        self.coordinate
    }

    pub fn rank(&self) -> usize {
        self.local.ncols()
    }

    pub fn column(&self, j: usize) -> StateVector {
        let mut v = StateVector::zeros(self.dim);
        for (r, &i) in self.indices.iter().enumerate() {
            v[i] = self.local[(r, j)];
        }
        v
    }

    pub fn columns(&self) -> Vec<StateVector> {
        (0..self.rank()).map(|j| self.column(j)).collect()
    }

    pub fn to_dense(&self) -> Operator {
        let mut b = Operator::zeros(self.dim, self.rank());
        for (r, &i) in self.indices.iter().enumerate() {
            for j in 0..self.rank() {
                b[(i, j)] = self.local[(r, j)];
            }
        }
        b
    }

    /// `B x` for coefficients `x` of length `rank`.
    pub fn apply(&self, x: &StateVector) -> StateVector {
        let y = &self.local * x;
        let mut v = StateVector::zeros(self.dim);
        for (r, &i) in self.indices.iter().enumerate() {
            v[i] = y[r];
        }
        v
    }

    /// `B† v`.
    pub fn project(&self, v: &StateVector) -> StateVector {
        let sub = StateVector::from_fn(self.indices.len(), |r, _| v[self.indices[r]]);
        self.local.adjoint() * sub
    }

    /// Restrict to the columns `B · local_cols`.
    pub fn refine(&self, local_cols: &DMatrix<C64>) -> Self {
        Self::new(self.dim, self.indices.clone(), &self.local * local_cols)
    }

    /// Restrict a coordinate isometry to a subset of its coordinates.
    pub fn select(&self, rows: &[usize]) -> Self {
        debug_assert!(self.coordinate);
        Self::coordinates(self.dim, rows.iter().map(|&r| self.indices[r]).collect())
    }

    pub fn projector(&self) -> Operator {
        let b = self.to_dense();
        &b * b.adjoint()
    }
}

/// Source of a Hermitian operator that can be compressed onto subspaces.
pub trait HermitianSource: Sync {
    fn dim(&self) -> usize;
    fn diagonal(&self) -> Option<Vec<f64>>;
    fn compress(&self, iso: &Isometry) -> Operator;
}

impl HermitianSource for Operator {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn diagonal(&self) -> Option<Vec<f64>> {
        let n = self.nrows();
        for j in 0..n {
            for i in 0..n {
                if i != j && self[(i, j)] != C64::new(0.0, 0.0) {
                    return None;
                }
            }
        }
        Some((0..n).map(|i| self[(i, i)].re).collect())
    }

    fn compress(&self, iso: &Isometry) -> Operator {
        if iso.is_coordinate() {
            let m = iso.indices.len();
            return Operator::from_fn(m, m, |a, b| self[(iso.indices[a], iso.indices[b])]);
        }
        let b = iso.to_dense();
        b.adjoint() * self * b
    }
}

impl HermitianSource for SparseOperator {
    fn dim(&self) -> usize {
        self.dim
    }

    fn diagonal(&self) -> Option<Vec<f64>> {
        self.is_diagonal().then(|| self.diagonal_re())
    }

    fn compress(&self, iso: &Isometry) -> Operator {
        SparseOperator::compress(self, iso)
    }
}

/// Diagonal operator given by its real diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalOperator(pub Vec<f64>);

impl HermitianSource for DiagonalOperator {
    fn dim(&self) -> usize {
        self.0.len()
    }

    fn diagonal(&self) -> Option<Vec<f64>> {
        Some(self.0.clone())
    }

    fn compress(&self, iso: &Isometry) -> Operator {
        let sub = Operator::from_fn(iso.indices.len(), iso.indices.len(), |a, b| {
            if a == b { c(self.0[iso.indices[a]]) } else { C64::new(0.0, 0.0) }
        });
        if iso.is_coordinate() {
            sub
        } else {
            iso.local.adjoint() * sub * &iso.local
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qcore::{hs_norm, random_hermitian};
    use crate::rng::rng_from_seed;

    #[test]
    fn dense_round_trip_and_products() {
        let h = random_hermitian(6, &mut rng_from_seed(1));
        let s = SparseOperator::from_dense(&h);
        assert_eq!(s.to_dense().unwrap(), h);
        let v = crate::qcore::haar_state(6, 2);
        assert!((s.mul_vec(&v) - &h * &v).norm() < 1e-13);
        assert!(s.hermiticity_residual() < 1e-15);
        assert!((s.hs_norm() - hs_norm(&h)).abs() < 1e-13);
    }

    #[test]
    fn compression_matches_dense() {
        let h = random_hermitian(6, &mut rng_from_seed(3));
        let s = SparseOperator::from_dense(&h);
        let iso = Isometry::coordinates(6, vec![1, 4, 5]);
        assert_eq!(s.compress(&iso), HermitianSource::compress(&h, &iso));
        let u = crate::qcore::haar_unitary(3, 4);
        let iso2 = iso.refine(&u.columns(0, 2).into_owned());
        let a = s.compress(&iso2);
        let b = HermitianSource::compress(&h, &iso2);
        assert!(hs_norm(&(a - b)) < 1e-13);
        let d = DiagonalOperator(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let dd = crate::qcore::diagonal(&d.0);
        assert!(hs_norm(&(d.compress(&iso2) - HermitianSource::compress(&dd, &iso2))) < 1e-13);
    }

    #[test]
    fn duplicates_are_summed() {
        let s = SparseOperator::from_triplets(2, vec![(0, 1, c(1.0)), (0, 1, c(2.0)), (1, 1, c(0.0))]);
        assert_eq!(s.nnz(), 1);
        assert_eq!(s.get(0, 1), c(3.0));
    }
}
