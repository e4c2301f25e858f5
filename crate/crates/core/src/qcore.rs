//! Dense finite-dimensional Hilbert-space kernel.
//!
//! Operators are `DMatrix<Complex64>`, states are `DVector<Complex64>`. Tensor
//! products use the Kronecker convention with the first factor most
//! significant, so `diag(1,2) ⊗ I₂ = diag(1,1,2,2)`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng_from_seed, Rng};

pub type C64 = Complex64;
pub type Operator = DMatrix<C64>;
pub type StateVector = DVector<C64>;

pub const DEFAULT_MAX_DIM: usize = 16384;
pub const HERMITIAN_TOL: f64 = 1e-12;
pub const DEGENERACY_REL_TOL: f64 = 1e-9;

pub fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

pub fn identity(dim: usize) -> Operator {
    Operator::identity(dim, dim)
}

pub fn zeros(dim: usize) -> Operator {
    Operator::zeros(dim, dim)
}

pub fn diagonal(values: &[f64]) -> Operator {
    let d = values.len();
    let mut m = zeros(d);
    for (i, v) in values.iter().enumerate() {
        m[(i, i)] = c(*v);
    }
    m
}

pub fn basis_vector(dim: usize, i: usize) -> StateVector {
    let mut v = StateVector::zeros(dim);
    v[i] = c(1.0);
    v
}

/// `|ψ⟩⟨ψ|`
pub fn projector(psi: &StateVector) -> Operator {
    psi * psi.adjoint()
}

/// `|a⟩⟨b|`
pub fn outer(a: &StateVector, b: &StateVector) -> Operator {
    a * b.adjoint()
}

pub fn commutator(a: &Operator, b: &Operator) -> Operator {
    a * b - b * a
}

pub fn max_abs(op: &Operator) -> f64 {
    op.iter().fold(0.0_f64, |m, z| m.max(z.norm()))
}

/// Largest entrywise distance between `op` and its adjoint.
pub fn hermiticity_residual(op: &Operator) -> f64 {
    let n = op.nrows();
    let mut r = 0.0_f64;
    for i in 0..n {
        for j in i..n {
            r = r.max((op[(i, j)] - op[(j, i)].conj()).norm());
        }
    }
    r
}

pub fn ensure_square(op: &Operator) -> Result<()> {
    if op.nrows() != op.ncols() || op.nrows() == 0 {
        return Err(Error::InvalidInput(format!(
            "expected a nonempty square operator, got {}x{}",
            op.nrows(),
            op.ncols()
        )));
    }
    Ok(())
}

pub fn ensure_hermitian(op: &Operator) -> Result<()> {
    ensure_square(op)?;
    let residual = hermiticity_residual(op);
    if residual >= HERMITIAN_TOL * max_abs(op).max(1.0) {
        return Err(Error::NotHermitian { residual });
    }
    Ok(())
}

/// Hermitian, unit trace (1e-10) and smallest eigenvalue above −1e-10.
pub fn ensure_density(op: &Operator) -> Result<()> {
    ensure_hermitian(op)?;
    let tr = op.trace();
    if (tr.re - 1.0).abs() > 1e-10 || tr.im.abs() > 1e-10 {
        return Err(Error::InvalidInput(format!("density trace {tr} is not 1")));
    }
    let e = eigh(op)?;
    if e.values[0] < -1e-10 {
        return Err(Error::InvalidInput(format!(
            "density has negative eigenvalue {:e}",
            e.values[0]
        )));
    }
    Ok(())
}

/// Replace `op` by `(op + op†)/2`.
pub fn symmetrize(op: &Operator) -> Operator {
    (op + op.adjoint()) * c(0.5)
}

pub fn tensor(a: &Operator, b: &Operator) -> Result<Operator> {
    tensor_with_limit(a, b, DEFAULT_MAX_DIM)
}

pub fn tensor_with_limit(a: &Operator, b: &Operator, max_dim: usize) -> Result<Operator> {
    let dim = a
        .nrows()
        .checked_mul(b.nrows())
        .ok_or(Error::DimensionOverflow { dim: usize::MAX, max: max_dim })?;
    if dim > max_dim {
        return Err(Error::DimensionOverflow { dim, max: max_dim });
    }
    Ok(a.kronecker(b))
}

pub fn tensor_states(a: &StateVector, b: &StateVector) -> StateVector {
    a.kronecker(b)
}

/// Ordered tensor factors of a Hilbert space.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Factorization {
    pub dims: Vec<usize>,
    pub labels: Vec<String>,
}

impl Factorization {
    pub fn new(dims: Vec<usize>, labels: Vec<String>) -> Result<Self> {
        if dims.is_empty() || dims.iter().any(|&d| d == 0) {
            return Err(Error::Factorization(format!("factor dims must be positive: {dims:?}")));
        }
        if labels.len() != dims.len() {
            return Err(Error::Factorization(format!(
                "{} labels for {} factors",
                labels.len(),
                dims.len()
            )));
        }
        Ok(Self { dims, labels })
    }

    /// Factors labelled `0, 1, …`.
    pub fn unlabeled(dims: &[usize]) -> Result<Self> {
        Self::new(dims.to_vec(), (0..dims.len()).map(|i| i.to_string()).collect())
    }

    pub fn bipartite(dim_a: usize, dim_b: usize) -> Result<Self> {
        Self::new(vec![dim_a, dim_b], vec!["S".into(), "B".into()])
    }

    pub fn total_dim(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }
}

/// Index bookkeeping for splitting a factorized space into kept and traced
/// factors. `pos[a * traced_dim + t]` is the full index of kept index `a`
/// joined with traced index `t`; both sides keep the original factor order.
#[derive(Debug, Clone)]
pub struct SubsystemMap {
    pub kept_dim: usize,
    pub traced_dim: usize,
    pos: Vec<usize>,
}

impl SubsystemMap {
    pub fn new(fact: &Factorization, keep: &[usize]) -> Result<Self> {
        let n = fact.len();
        if keep.is_empty() {
            return Err(Error::Factorization("keep set is empty".into()));
        }
        let mut kept = vec![false; n];
        for &k in keep {
            if k >= n {
                return Err(Error::Factorization(format!("factor index {k} out of range ({n} factors)")));
            }
            if kept[k] {
                return Err(Error::Factorization(format!("factor index {k} repeated")));
            }
            kept[k] = true;
        }
        let total = fact.total_dim();
        let kept_dim: usize = (0..n).filter(|&f| kept[f]).map(|f| fact.dims[f]).product();
        let traced_dim = total / kept_dim;
        let mut pos = vec![0usize; total];
        let mut digits = vec![0usize; n];
        for full in 0..total {
            let mut a = 0usize;
            let mut t = 0usize;
            for f in 0..n {
                if kept[f] {
                    a = a * fact.dims[f] + digits[f];
                } else {
                    t = t * fact.dims[f] + digits[f];
                }
            }
            pos[a * traced_dim + t] = full;
            for f in (0..n).rev() {
                digits[f] += 1;
                if digits[f] < fact.dims[f] {
                    break;
                }
                digits[f] = 0;
            }
        }
        Ok(Self { kept_dim, traced_dim, pos })
    }

    /// Split a permutation-defined bipartition: `pos[a * traced_dim + t]` given directly.
    pub fn from_positions(kept_dim: usize, traced_dim: usize, pos: Vec<usize>) -> Result<Self> {
        if kept_dim * traced_dim != pos.len() {
            return Err(Error::Factorization("position table has wrong length".into()));
        }
        let mut seen = vec![false; pos.len()];
        for &p in &pos {
            if p >= pos.len() || seen[p] {
                return Err(Error::Factorization("position table is not a bijection".into()));
            }
            seen[p] = true;
        }
        Ok(Self { kept_dim, traced_dim, pos })
    }

    pub fn total_dim(&self) -> usize {
        self.pos.len()
    }

    pub fn full_index(&self, kept: usize, traced: usize) -> usize {
        self.pos[kept * self.traced_dim + traced]
    }

    /// Amplitude matrix `M[a, t] = ψ[(a, t)]`.
    pub fn reshape(&self, psi: &StateVector) -> StateVector2 {
        DMatrix::from_fn(self.kept_dim, self.traced_dim, |a, t| psi[self.full_index(a, t)])
    }

    /// Inverse of [`SubsystemMap::reshape`].
    pub fn flatten(&self, m: &StateVector2) -> StateVector {
        let mut v = StateVector::zeros(self.total_dim());
        for a in 0..self.kept_dim {
            for t in 0..self.traced_dim {
                v[self.full_index(a, t)] = m[(a, t)];
            }
        }
        v
    }

    /// Reduced state of a pure state on the kept factors.
    pub fn reduce_state(&self, psi: &StateVector) -> Operator {
        let m = self.reshape(psi);
        &m * m.adjoint()
    }

    /// `tr_traced |a⟩⟨b|`.
    pub fn reduce_outer(&self, a: &StateVector, b: &StateVector) -> Operator {
        let ma = self.reshape(a);
        let mb = self.reshape(b);
        &ma * mb.adjoint()
    }

    pub fn reduce_operator(&self, op: &Operator) -> Operator {
        let dt = self.traced_dim;
        DMatrix::from_fn(self.kept_dim, self.kept_dim, |a, b| {
            let mut s = C64::new(0.0, 0.0);
            for t in 0..dt {
                s += op[(self.full_index(a, t), self.full_index(b, t))];
            }
            s
        })
    }

    /// `A_kept ⊗ B_traced` expressed in the full ordering.
    pub fn embed_product(&self, a: &Operator, b: &Operator) -> Operator {
        let n = self.total_dim();
        let dt = self.traced_dim;
        let mut out = Operator::zeros(n, n);
        for a1 in 0..self.kept_dim {
            for a2 in 0..self.kept_dim {
                let x = a[(a1, a2)];
                if x == C64::new(0.0, 0.0) {
                    continue;
                }
                for t1 in 0..dt {
                    for t2 in 0..dt {
                        let y = b[(t1, t2)];
                        if y != C64::new(0.0, 0.0) {
                            out[(self.full_index(a1, t1), self.full_index(a2, t2))] = x * y;
                        }
                    }
                }
            }
        }
        out
    }
}

/// Rectangular complex matrix, used for reshaped bipartite amplitudes.
pub type StateVector2 = DMatrix<C64>;

pub fn partial_trace(op: &Operator, fact: &Factorization, keep: &[usize]) -> Result<Operator> {
    ensure_square(op)?;
    if op.nrows() != fact.total_dim() {
        return Err(Error::Factorization(format!(
            "operator dim {} does not match factorization {:?}",
            op.nrows(),
            fact.dims
        )));
    }
    Ok(SubsystemMap::new(fact, keep)?.reduce_operator(op))
}

/// `tr_rest |ψ⟩⟨ψ|` without forming the projector.
pub fn reduced_density(psi: &StateVector, fact: &Factorization, keep: &[usize]) -> Result<Operator> {
    if psi.len() != fact.total_dim() {
        return Err(Error::Factorization(format!(
            "state dim {} does not match factorization {:?}",
            psi.len(),
            fact.dims
        )));
    }
    Ok(SubsystemMap::new(fact, keep)?.reduce_state(psi))
}

pub fn gaussian_vector(dim: usize, rng: &mut Rng) -> StateVector {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    StateVector::from_fn(dim, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        C64::new(re * s, im * s)
    })
}

pub fn haar_state_with(dim: usize, rng: &mut Rng) -> StateVector {
    loop {
        let v = gaussian_vector(dim, rng);
        let n = v.norm();
        if n > 0.0 {
            return v / c(n);
        }
    }
}

/// Uniformly distributed unit vector in `C^dim`.
pub fn haar_state(dim: usize, seed: u64) -> StateVector {
    haar_state_with(dim, &mut rng_from_seed(seed))
}

/// Haar unitary from the QR decomposition of a Ginibre matrix with the
/// diagonal phases of `R` divided out.
pub fn haar_unitary_with(dim: usize, rng: &mut Rng) -> Operator {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let g = Operator::from_fn(dim, dim, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        C64::new(re * s, im * s)
    });
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..dim {
        let d = r[(j, j)];
        let ph = if d.norm() > 0.0 { d / c(d.norm()) } else { c(1.0) };
        for i in 0..dim {
            q[(i, j)] *= ph;
        }
    }
    q
}

pub fn haar_unitary(dim: usize, seed: u64) -> Operator {
    haar_unitary_with(dim, &mut rng_from_seed(seed))
}

/// Columns of a Haar unitary.
pub fn haar_onb(dim: usize, seed: u64) -> Vec<StateVector> {
    let u = haar_unitary(dim, seed);
    columns(&u)
}

pub fn columns(m: &Operator) -> Vec<StateVector> {
    (0..m.ncols()).map(|j| m.column(j).into_owned()).collect()
}

pub fn from_columns(cols: &[StateVector]) -> Operator {
    Operator::from_columns(cols)
}

/// Eigen-decomposition with ascending eigenvalues.
#[derive(Debug, Clone)]
pub struct Eigh {
    pub values: Vec<f64>,
    pub vectors: Operator,
}

/// A maximal run of eigenvalues whose neighbouring spacings fall below the
/// degeneracy tolerance.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub value: f64,
    pub start: usize,
    pub len: usize,
}

impl Eigh {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn range(&self) -> f64 {
        match (self.values.first(), self.values.last()) {
            (Some(a), Some(b)) => b - a,
            _ => 0.0,
        }
    }

    pub fn vector(&self, i: usize) -> StateVector {
        self.vectors.column(i).into_owned()
    }

    pub fn clusters(&self) -> Vec<Cluster> {
        cluster_sorted(&self.values, DEGENERACY_REL_TOL * self.range())
    }

    /// Projector onto the columns `start..start+len`.
    pub fn block_projector(&self, start: usize, len: usize) -> Operator {
        let v = self.vectors.columns(start, len);
        &v * v.adjoint()
    }

    pub fn reconstruct(&self) -> Operator {
        let d = Operator::from_diagonal(&DVector::from_iterator(
            self.dim(),
            self.values.iter().map(|&x| c(x)),
        ));
        &self.vectors * d * self.vectors.adjoint()
    }
}

/// Group an ascending list into clusters with neighbour spacing `<= tol`.
pub fn cluster_sorted(values: &[f64], tol: f64) -> Vec<Cluster> {
    let mut out: Vec<Cluster> = Vec::new();
    for (i, &v) in values.iter().enumerate() {
        match out.last_mut() {
            Some(cl) if v - values[i - 1] <= tol => cl.len += 1,
            _ => out.push(Cluster { value: v, start: i, len: 1 }),
        }
    }
    for cl in &mut out {
        cl.value = values[cl.start..cl.start + cl.len].iter().sum::<f64>() / cl.len as f64;
    }
    out
}

fn is_diagonal(op: &Operator) -> bool {
    let n = op.nrows();
    for j in 0..n {
        for i in 0..n {
            if i != j && op[(i, j)] != C64::new(0.0, 0.0) {
                return false;
            }
        }
    }
    true
}

pub fn eigh(op: &Operator) -> Result<Eigh> {
    ensure_hermitian(op)?;
    let n = op.nrows();
    if is_diagonal(op) {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| op[(a, a)].re.total_cmp(&op[(b, b)].re));
        let values = order.iter().map(|&i| op[(i, i)].re).collect();
        let mut vectors = zeros(n);
        for (col, &i) in order.iter().enumerate() {
            vectors[(i, col)] = c(1.0);
        }
        return Ok(Eigh { values, vectors });
    }
    let se = symmetrize(op).symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| se.eigenvalues[a].total_cmp(&se.eigenvalues[b]));
    let values = order.iter().map(|&i| se.eigenvalues[i]).collect();
    let vectors = Operator::from_fn(n, n, |r, col| se.eigenvectors[(r, order[col])]);
    Ok(Eigh { values, vectors })
}

/// `f(op)` through the spectral decomposition.
pub fn hermitian_function(op: &Operator, f: impl Fn(f64) -> f64) -> Result<Operator> {
    let e = eigh(op)?;
    let d = DVector::from_iterator(e.dim(), e.values.iter().map(|&x| c(f(x))));
    Ok(&e.vectors * Operator::from_diagonal(&d) * e.vectors.adjoint())
}

/// Projector onto eigenvectors with eigenvalue in `[a, b]`, decided per
/// degeneracy cluster with membership tolerance `1e-9 · range`.
pub fn spectral_window_projector(op: &Operator, a: f64, b: f64) -> Result<Operator> {
    if a > b {
        return Err(Error::InvalidInput(format!("window [{a}, {b}] is reversed")));
    }
    let e = eigh(op)?;
    let tol = DEGENERACY_REL_TOL * e.range();
    let mut p = zeros(e.dim());
    for cl in e.clusters() {
        if cl.value >= a - tol && cl.value <= b + tol {
            p += e.block_projector(cl.start, cl.len);
        }
    }
    Ok(p)
}

pub fn singular_values(op: &Operator) -> Vec<f64> {
    op.clone().svd(false, false).singular_values.iter().copied().collect()
}

/// Sum of singular values.
pub fn trace_norm(op: &Operator) -> f64 {
    if op.nrows() == op.ncols() && hermiticity_residual(op) <= 1e-13 * max_abs(op).max(1e-300) {
        let se = symmetrize(op).symmetric_eigen();
        return se.eigenvalues.iter().map(|x| x.abs()).sum();
    }
    singular_values(op).iter().sum()
}

/// Frobenius norm.
pub fn hs_norm(op: &Operator) -> f64 {
    op.norm()
}

pub fn trace_distance(a: &Operator, b: &Operator) -> f64 {
    trace_norm(&(a - b))
}

pub fn expectation(op: &Operator, psi: &StateVector) -> C64 {
    (psi.adjoint() * op * psi)[(0, 0)]
}

/// `tr(a b)` without forming the product.
pub fn trace_product(a: &Operator, b: &Operator) -> C64 {
    let n = a.nrows();
    let mut s = C64::new(0.0, 0.0);
    for i in 0..n {
        for k in 0..n {
            s += a[(i, k)] * b[(k, i)];
        }
    }
    s
}

/// Gram matrix deviation `max |⟨v_i|v_j⟩ − δ_ij|`.
pub fn orthonormality_residual(vectors: &[StateVector]) -> f64 {
    let mut r = 0.0_f64;
    for (i, a) in vectors.iter().enumerate() {
        for (j, b) in vectors.iter().enumerate().skip(i) {
            let ip = a.dotc(b);
            let target = if i == j { 1.0 } else { 0.0 };
            r = r.max((ip - c(target)).norm());
        }
    }
    r
}

/// Random Hermitian matrix with GUE-distributed entries.
pub fn random_hermitian(dim: usize, rng: &mut Rng) -> Operator {
    let g = Operator::from_fn(dim, dim, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        C64::new(re, im)
    });
    (&g + g.adjoint()) * c(0.5)
}

/// Random density matrix `G G† / tr`.
pub fn random_density(dim: usize, rank: usize, rng: &mut Rng) -> Operator {
    let g = Operator::from_fn(dim, rank.max(1), |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        C64::new(re, im)
    });
    let m = &g * g.adjoint();
    let tr = m.trace();
    m / tr
}

pub fn uniform01(rng: &mut Rng) -> f64 {
    rng.random::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn close(a: &Operator, b: &Operator, tol: f64) -> bool {
        hs_norm(&(a - b)) < tol
    }

    #[test]
    fn tensor_identity_and_ordering() {
        assert!(close(&tensor(&identity(2), &identity(2)).unwrap(), &identity(4), 0.0 + 1e-15));
        let t = tensor(&diagonal(&[1.0, 2.0]), &identity(2)).unwrap();
        assert!(close(&t, &diagonal(&[1.0, 1.0, 2.0, 2.0]), 1e-15));
    }

    #[test]
    fn tensor_trace_multiplies() {
        let mut rng = rng_from_seed(3);
        let a = Operator::from_fn(2, 2, |_, _| c(uniform01(&mut rng)) + C64::i() * uniform01(&mut rng));
        let b = Operator::from_fn(3, 3, |_, _| c(uniform01(&mut rng)) - C64::i() * uniform01(&mut rng));
        let t = tensor(&a, &b).unwrap();
        // direct sum over diagonal entries of the product
        let mut direct = C64::new(0.0, 0.0);
        for i in 0..2 {
            for j in 0..3 {
                direct += a[(i, i)] * b[(j, j)];
            }
        }
        assert!((t.trace() - direct).norm() < 1e-12);
        assert!((t.trace() - a.trace() * b.trace()).norm() < 1e-12);
    }

    #[test]
    fn tensor_rejects_overflow() {
        let a = identity(200);
        assert!(matches!(tensor(&a, &a), Err(Error::DimensionOverflow { dim: 40000, .. })));
    }

    #[test]
    fn bell_state_reduces_to_maximally_mixed() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let bell = StateVector::from_vec(vec![c(s), c(0.0), c(0.0), c(s)]);
        let f = Factorization::unlabeled(&[2, 2]).unwrap();
        let r = partial_trace(&projector(&bell), &f, &[0]).unwrap();
        assert!(close(&r, &(identity(2) * c(0.5)), 1e-15));
        let r2 = reduced_density(&bell, &f, &[1]).unwrap();
        assert!(close(&r2, &(identity(2) * c(0.5)), 1e-15));
    }

    #[test]
    fn product_state_partial_trace() {
        let a = haar_state(3, 1);
        let b = haar_state(2, 2);
        let f = Factorization::unlabeled(&[3, 2]).unwrap();
        let full = tensor(&projector(&a), &projector(&b)).unwrap();
        assert!(close(&partial_trace(&full, &f, &[0]).unwrap(), &projector(&a), 1e-14));
        assert!(close(&partial_trace(&full, &f, &[1]).unwrap(), &projector(&b), 1e-14));
    }

    #[test]
    fn sequential_and_combined_traces_agree() {
        let mut rng = rng_from_seed(11);
        let rho = random_density(2 * 3 * 2, 12, &mut rng);
        let f = Factorization::unlabeled(&[2, 3, 2]).unwrap();
        let combined = partial_trace(&rho, &f, &[0]).unwrap();
        let step = partial_trace(&rho, &f, &[0, 1]).unwrap();
        let f2 = Factorization::unlabeled(&[2, 3]).unwrap();
        let seq = partial_trace(&step, &f2, &[0]).unwrap();
        assert!(close(&combined, &seq, 1e-12));
        // explicit index contraction oracle for the middle factor
        let mid = partial_trace(&rho, &f, &[1]).unwrap();
        let mut oracle = zeros(3);
        for b1 in 0..3 {
            for b2 in 0..3 {
                for a in 0..2 {
                    for cc in 0..2 {
                        oracle[(b1, b2)] += rho[(a * 6 + b1 * 2 + cc, a * 6 + b2 * 2 + cc)];
                    }
                }
            }
        }
        assert!(close(&mid, &oracle, 1e-12));
        // non-contiguous keep set keeps factor order
        let outer_pair = partial_trace(&rho, &f, &[2, 0]).unwrap();
        let mut oracle2 = zeros(4);
        for a1 in 0..2 {
            for c1 in 0..2 {
                for a2 in 0..2 {
                    for c2 in 0..2 {
                        for b in 0..3 {
                            oracle2[(a1 * 2 + c1, a2 * 2 + c2)] += rho[(a1 * 6 + b * 2 + c1, a2 * 6 + b * 2 + c2)];
                        }
                    }
                }
            }
        }
        assert!(close(&outer_pair, &oracle2, 1e-12));
    }

    #[test]
    fn partial_trace_rejects_bad_factorization() {
        let f = Factorization::unlabeled(&[2, 2]).unwrap();
        assert!(partial_trace(&identity(3), &f, &[0]).is_err());
        assert!(partial_trace(&identity(4), &f, &[]).is_err());
        assert!(partial_trace(&identity(4), &f, &[2]).is_err());
    }

    #[test]
    fn haar_state_is_unit_and_deterministic() {
        for seed in 0..20 {
            let v = haar_state(7, seed);
            assert!((v.norm() - 1.0).abs() < 1e-12);
            assert_eq!(v, haar_state(7, seed));
        }
        assert_ne!(haar_state(7, 1), haar_state(7, 2));
    }

    #[test]
    fn haar_mean_projector_is_maximally_mixed() {
        let n = 10_000;
        let mut rng = rng_from_seed(5);
        let mut acc = zeros(4);
        for _ in 0..n {
            acc += projector(&haar_state_with(4, &mut rng));
        }
        acc /= c(n as f64);
        let d = hs_norm(&(acc - identity(4) * c(0.25)));
        assert!(d < 6.0 / (n as f64).sqrt(), "distance {d}");
    }

    #[test]
    fn haar_onb_is_orthonormal() {
        for seed in 0..5 {
            let b = haar_onb(9, seed);
            assert_eq!(b.len(), 9);
            assert!(orthonormality_residual(&b) < 1e-12);
        }
        let one = haar_onb(1, 3);
        assert!((one[0][0].norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn eigh_examples() {
        let e = eigh(&diagonal(&[3.0, 1.0, 2.0])).unwrap();
        assert_eq!(e.values, vec![1.0, 2.0, 3.0]);
        assert_eq!(e.vector(0), basis_vector(3, 1));
        assert_eq!(e.vector(1), basis_vector(3, 2));
        assert_eq!(e.vector(2), basis_vector(3, 0));
        let x = Operator::from_row_slice(2, 2, &[c(0.0), c(1.0), c(1.0), c(0.0)]);
        let e = eigh(&x).unwrap();
        assert!((e.values[0] + 1.0).abs() < 1e-14 && (e.values[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn eigh_reconstructs_random_hermitian() {
        let h = random_hermitian(50, &mut rng_from_seed(8));
        let e = eigh(&h).unwrap();
        assert!(e.values.windows(2).all(|w| w[0] <= w[1]));
        let sv = singular_values(&h);
        let op_norm = sv.iter().cloned().fold(0.0, f64::max);
        let res = singular_values(&(&h - e.reconstruct())).into_iter().fold(0.0, f64::max);
        assert!(res < 1e-10 * op_norm);
    }

    #[test]
    fn eigh_rejects_non_hermitian() {
        let m = Operator::from_row_slice(2, 2, &[c(0.0), c(1.0), c(0.0), c(0.0)]);
        assert!(matches!(eigh(&m), Err(Error::NotHermitian { .. })));
    }

    #[test]
    fn window_projector_examples() {
        let d = diagonal(&[0.0, 1.0, 2.0]);
        assert!(close(&spectral_window_projector(&d, -1.0, 3.0).unwrap(), &identity(3), 1e-14));
        assert!(close(&spectral_window_projector(&d, -5.0, -1.0).unwrap(), &zeros(3), 1e-14));
        let p = spectral_window_projector(&d, 0.5, 1.5).unwrap();
        assert!(close(&p, &projector(&basis_vector(3, 1)), 1e-14));
    }

    #[test]
    fn norms() {
        assert_eq!(trace_norm(&zeros(3)), 0.0);
        assert_eq!(hs_norm(&zeros(3)), 0.0);
        let a = projector(&basis_vector(2, 0));
        let b = projector(&basis_vector(2, 1));
        assert!((trace_norm(&(a - b)) - 2.0).abs() < 1e-14);
        let mut rng = rng_from_seed(4);
        for _ in 0..10 {
            let m = Operator::from_fn(5, 5, |_, _| c(uniform01(&mut rng) - 0.5) + C64::i() * (uniform01(&mut rng) - 0.5));
            let tn = trace_norm(&m);
            let hs = hs_norm(&m);
            let sv = singular_values(&m);
            let direct: f64 = sv.iter().map(|s| s * s).sum::<f64>().sqrt();
            assert!((hs - direct).abs() < 1e-12);
            assert!(hs <= tn + 1e-12 && tn <= (5f64).sqrt() * hs + 1e-12);
        }
    }
}
