//! Micro-canonical, generalized Gibbs and grand-canonical ensembles over a
//! commuting family of observables.
//!
//! Everything is expressed through a [`JointSpectrum`]: the joint eigenspaces
//! of `Q_1, …, Q_K` with their eigenvalue tuples. Ensemble weights then only
//! need the tuples and multiplicities, and dense operators are formed only on
//! request.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Bipartition, ConservedSet, LatticeFockModel};
use crate::qcore::{
    c, cluster_sorted, commutator, eigh, hs_norm, tensor, trace_distance, Operator, StateVector, SubsystemMap,
    DEGENERACY_REL_TOL,
};
use crate::rng::Rng;
use crate::sparse::{DiagonalOperator, HermitianSource, Isometry};
use crate::stoich::{conserved_matrix, ConservedMatrix};

/// A joint eigenspace with the eigenvalue of every operator in the family.
#[derive(Debug, Clone)]
pub struct JointBlock {
    pub values: Vec<f64>,
    pub basis: Isometry,
}

impl JointBlock {
    pub fn rank(&self) -> usize {
        self.basis.rank()
    }
}

#[derive(Debug, Clone)]
pub struct JointSpectrum {
    pub dim: usize,
    pub blocks: Vec<JointBlock>,
    /// Spectral range of each operator in the family.
    pub ranges: Vec<f64>,
}

/// Closed window `[upper − width, upper]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub upper: f64,
    pub width: f64,
}

impl Window {
    pub fn new(upper: f64, width: f64) -> Self {
        Self { upper, width }
    }

    pub fn exact(value: f64) -> Self {
        Self { upper: value, width: 0.0 }
    }

    pub fn lower(&self) -> f64 {
        self.upper - self.width
    }

    pub fn contains(&self, x: f64, tol: f64) -> bool {
        x >= self.lower() - tol && x <= self.upper + tol
    }
}

/// Windows for `Q_1..Q_K`, the last one on the energy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub windows: Vec<Window>,
}

fn split_coordinates(iso: &Isometry, diag: &[f64], tol: f64) -> Vec<(f64, Isometry)> {
    let mut rows: Vec<usize> = (0..iso.indices.len()).collect();
    rows.sort_by(|&a, &b| diag[iso.indices[a]].total_cmp(&diag[iso.indices[b]]).then(a.cmp(&b)));
    let vals: Vec<f64> = rows.iter().map(|&r| diag[iso.indices[r]]).collect();
    cluster_sorted(&vals, tol)
        .into_iter()
        .map(|cl| {
            let mut sel: Vec<usize> = rows[cl.start..cl.start + cl.len].to_vec();
            sel.sort_unstable();
            (cl.value, iso.select(&sel))
        })
        .collect()
}

impl JointSpectrum {
    /// Joint eigenspaces by sequential refinement: each operator is
    /// diagonalized inside every eigenspace of the previous ones. When
    /// `windows` is given, blocks falling outside a window are dropped as soon
    /// as that coordinate is known.
    pub fn build(ops: &[&dyn HermitianSource], windows: Option<&[Window]>) -> Result<Self> {
        let Some(first) = ops.first() else {
            return Err(Error::InvalidInput("empty operator family".into()));
        };
        let dim = first.dim();
        if ops.iter().any(|o| o.dim() != dim) {
            return Err(Error::InvalidInput("operators have different dimensions".into()));
        }
        if let Some(w) = windows {
            if w.len() != ops.len() {
                return Err(Error::InvalidInput(format!("{} windows for {} operators", w.len(), ops.len())));
            }
        }
        let mut blocks = vec![JointBlock { values: Vec::new(), basis: Isometry::coordinates(dim, (0..dim).collect()) }];
        let mut ranges = Vec::with_capacity(ops.len());
        for (k, op) in ops.iter().enumerate() {
            let diag = op.diagonal();
            let stage: Vec<(Vec<f64>, Vec<f64>, Option<Operator>, Option<Vec<f64>>)> = blocks
                .par_iter()
                .map(|b| {
                    if let (Some(d), true) = (&diag, b.basis.is_coordinate()) {
                        let vals: Vec<f64> = b.basis.indices.iter().map(|&i| d[i]).collect();
                        (b.values.clone(), vals, None, None)
                    } else {
                        let m = op.compress(&b.basis);
                        match eigh(&crate::qcore::symmetrize(&m)) {
                            Ok(e) => (b.values.clone(), e.values.clone(), Some(e.vectors), None),
                            Err(_) => (b.values.clone(), Vec::new(), None, Some(vec![f64::NAN])),
                        }
                    }
                })
                .collect();
            if stage.iter().any(|s| s.3.is_some()) {
                return Err(Error::InvalidInput(format!("operator {k} is not Hermitian on a joint eigenspace")));
            }
            let (lo, hi) = stage
                .iter()
                .flat_map(|s| s.1.iter())
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
            let range = if hi >= lo { hi - lo } else { 0.0 };
            ranges.push(range);
            let tol = DEGENERACY_REL_TOL * range;
            let mut next = Vec::new();
            for (b, (values, eig, vecs, _)) in blocks.iter().zip(stage) {
                let pieces: Vec<(f64, Isometry)> = match vecs {
                    None => split_coordinates(&b.basis, diag.as_ref().expect("diagonal path"), tol),
                    Some(v) => cluster_sorted(&eig, tol)
                        .into_iter()
                        .map(|cl| (cl.value, b.basis.refine(&v.columns(cl.start, cl.len).into_owned())))
                        .collect(),
                };
                for (val, iso) in pieces {
                    if let Some(w) = windows {
                        if !w[k].contains(val, tol) {
                            continue;
                        }
                    }
                    let mut vs = values.clone();
                    vs.push(val);
                    next.push(JointBlock { values: vs, basis: iso });
                }
            }
            blocks = next;
        }
        Ok(Self { dim, blocks, ranges })
    }

    /// Dense commuting family; pairwise commutators are checked first.
    pub fn from_operators(ops: &[Operator]) -> Result<Self> {
        for (i, a) in ops.iter().enumerate() {
            crate::qcore::ensure_hermitian(a)?;
            for b in &ops[i + 1..] {
                let r = hs_norm(&commutator(a, b));
                if r >= 1e-10 * (hs_norm(a) * hs_norm(b)).max(1.0) {
                    return Err(Error::NonCommuting { residual: r, context: "observable family".into() });
                }
            }
        }
        let refs: Vec<&dyn HermitianSource> = ops.iter().map(|o| o as &dyn HermitianSource).collect();
        Self::build(&refs, None)
    }

    /// Spectrum of `(Q_1, …, Q_{K−1}, H)` for a model's conserved set.
    pub fn from_conserved(set: &ConservedSet, windows: Option<&[Window]>) -> Result<Self> {
        let diags: Vec<DiagonalOperator> = set.q.iter().map(|q| DiagonalOperator(q.clone())).collect();
        let mut refs: Vec<&dyn HermitianSource> = diags.iter().map(|d| d as &dyn HermitianSource).collect();
        refs.push(&set.h);
        Self::build(&refs, windows)
    }

    pub fn k(&self) -> usize {
        self.ranges.len()
    }

    /// Per-coordinate extremes over all joint eigenvalues.
    pub fn bounds(&self) -> Vec<(f64, f64)> {
        (0..self.k())
            .map(|k| {
                self.blocks
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), b| (lo.min(b.values[k]), hi.max(b.values[k])))
            })
            .collect()
    }

    pub fn scales(&self) -> Vec<f64> {
        self.bounds().iter().map(|(lo, hi)| lo.abs().max(hi.abs()).max(1.0)).collect()
    }

    pub fn multiplicity_total(&self) -> usize {
        self.blocks.iter().map(JointBlock::rank).sum()
    }

    /// Blocks whose tuple lies in every window.
    pub fn gmc(&self, spec: &EnsembleSpec) -> Result<GmcSubspace> {
        if spec.windows.len() != self.k() {
            return Err(Error::InvalidInput(format!(
                "{} windows for {} conserved quantities",
                spec.windows.len(),
                self.k()
            )));
        }
        let blocks: Vec<JointBlock> = self
            .blocks
            .iter()
            .filter(|b| {
                b.values
                    .iter()
                    .zip(&spec.windows)
                    .zip(&self.ranges)
                    .all(|((&v, w), &r)| w.contains(v, DEGENERACY_REL_TOL * r))
            })
            .cloned()
            .collect();
        let dim: usize = blocks.iter().map(JointBlock::rank).sum();
        if dim == 0 {
            return Err(Error::EmptySubspace(format!("no joint eigenvalue lies in the windows {:?}", spec.windows)));
        }
        Ok(GmcSubspace { total_dim: self.dim, dim, blocks })
    }

    /// `log Z` and normalized block weights for `ρ ∝ exp(Σ_k λ_k Q_k)`.
    pub fn exp_weights(&self, lambda: &[f64]) -> Result<(f64, Vec<f64>)> {
        if lambda.len() != self.k() {
            return Err(Error::InvalidInput(format!("{} parameters for {} quantities", lambda.len(), self.k())));
        }
        let expo: Vec<f64> = self.blocks.iter().map(|b| dot(lambda, &b.values)).collect();
        let shift = expo.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !shift.is_finite() {
            return Err(Error::Overflow { lambda: lambda.to_vec() });
        }
        let w: Vec<f64> = self.blocks.iter().zip(&expo).map(|(b, &x)| b.rank() as f64 * (x - shift).exp()).collect();
        let z: f64 = w.iter().sum();
        let log_z = shift + z.ln();
        if !log_z.is_finite() || z == 0.0 {
            return Err(Error::Overflow { lambda: lambda.to_vec() });
        }
        // weight per block, already including multiplicity
        Ok((log_z, w.into_iter().map(|x| x / z).collect()))
    }

    pub fn log_partition(&self, lambda: &[f64]) -> Result<f64> {
        Ok(self.exp_weights(lambda)?.0)
    }

    /// `⟨Q_k⟩` under `exp(λ·Q)/Z`.
    pub fn expectations(&self, lambda: &[f64]) -> Result<Vec<f64>> {
        let (_, w) = self.exp_weights(lambda)?;
        Ok(self.moments(&w).0)
    }

    /// Mean vector and covariance matrix for block weights `w`.
    fn moments(&self, w: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
        let k = self.k();
        let mut mean = vec![0.0; k];
        for (b, &p) in self.blocks.iter().zip(w) {
            for j in 0..k {
                mean[j] += p * b.values[j];
            }
        }
        let mut cov = DMatrix::zeros(k, k);
        for (b, &p) in self.blocks.iter().zip(w) {
            for i in 0..k {
                let di = b.values[i] - mean[i];
                for j in 0..k {
                    cov[(i, j)] += p * di * (b.values[j] - mean[j]);
                }
            }
        }
        (mean, cov)
    }

    /// Dense `exp(Σ λ_k Q_k)/Z`.
    pub fn density(&self, lambda: &[f64]) -> Result<Operator> {
        let (_, w) = self.exp_weights(lambda)?;
        Ok(self.weighted_projector_sum(&w, true))
    }

    /// `Σ_b c_b P_b`, with `c_b` either per block or per vector.
    fn weighted_projector_sum(&self, w: &[f64], per_block: bool) -> Operator {
        let parts: Vec<Operator> = self
            .blocks
            .par_iter()
            .zip(w.par_iter())
            .map(|(b, &p)| {
                let scale = if per_block { p / b.rank() as f64 } else { p };
                b.basis.projector() * c(scale)
            })
            .collect();
        parts.into_iter().fold(Operator::zeros(self.dim, self.dim), |acc, x| acc + x)
    }

    /// Reduced state of `exp(λ·Q)/Z` on the kept factors of `map`.
    pub fn reduced_density(&self, lambda: &[f64], map: &SubsystemMap) -> Result<Operator> {
        let (_, w) = self.exp_weights(lambda)?;
        Ok(reduce_blocks(&self.blocks, &w, map))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `Σ_b (w_b / rank_b) tr_rest P_b`.
fn reduce_blocks(blocks: &[JointBlock], w: &[f64], map: &SubsystemMap) -> Operator {
    let parts: Vec<Operator> = blocks
        .par_iter()
        .zip(w.par_iter())
        .map(|(b, &p)| {
            let mut acc = Operator::zeros(map.kept_dim, map.kept_dim);
            if p == 0.0 {
                return acc;
            }
            if b.basis.is_coordinate() {
                for &i in &b.basis.indices {
                    let v = crate::qcore::basis_vector(b.basis.dim, i);
                    acc += map.reduce_state(&v);
                }
            } else {
                for j in 0..b.rank() {
                    acc += map.reduce_state(&b.basis.column(j));
                }
            }
            acc * c(p / b.rank() as f64)
        })
        .collect();
    parts.into_iter().fold(Operator::zeros(map.kept_dim, map.kept_dim), |acc, x| acc + x)
}

/// The span of joint eigenvectors whose eigenvalues fall inside the windows.
#[derive(Debug, Clone)]
pub struct GmcSubspace {
    pub total_dim: usize,
    pub dim: usize,
    pub blocks: Vec<JointBlock>,
}

impl GmcSubspace {
    pub fn projector(&self) -> Operator {
        self.blocks.iter().fold(Operator::zeros(self.total_dim, self.total_dim), |acc, b| acc + b.basis.projector())
    }

    /// `P / dim`.
    pub fn density(&self) -> Operator {
        self.projector() / c(self.dim as f64)
    }

    /// Orthonormal basis of the subspace, block by block.
    pub fn basis(&self) -> Vec<StateVector> {
        self.blocks.iter().flat_map(|b| b.basis.columns()).collect()
    }

    /// Eigenvalue tuple of every basis vector, aligned with [`GmcSubspace::basis`].
    pub fn basis_values(&self) -> Vec<Vec<f64>> {
        self.blocks.iter().flat_map(|b| std::iter::repeat_n(b.values.clone(), b.rank())).collect()
    }

    /// `tr(ρ_gmc Q_k)` for every quantity.
    pub fn mean_values(&self) -> Vec<f64> {
        let k = self.blocks[0].values.len();
        let mut m = vec![0.0; k];
        for b in &self.blocks {
            for j in 0..k {
                m[j] += b.rank() as f64 * b.values[j];
            }
        }
        m.iter().map(|x| x / self.dim as f64).collect()
    }

    /// `tr_rest ρ_gmc` on the kept factors of `map`.
    pub fn reduced(&self, map: &SubsystemMap) -> Operator {
        let w: Vec<f64> = self.blocks.iter().map(|b| b.rank() as f64 / self.dim as f64).collect();
        reduce_blocks(&self.blocks, &w, map)
    }

    /// Uniformly random unit vector of the subspace.
    pub fn haar_state(&self, rng: &mut Rng) -> StateVector {
        let z = crate::qcore::haar_state_with(self.dim, rng);
        self.embed(&z)
    }

    /// Map subspace coordinates (in [`GmcSubspace::basis`] order) into the full space.
    pub fn embed(&self, z: &StateVector) -> StateVector {
        let mut v = StateVector::zeros(self.total_dim);
        let mut off = 0;
        for b in &self.blocks {
            let r = b.rank();
            v += b.basis.apply(&z.rows(off, r).into_owned());
            off += r;
        }
        v
    }

    /// Coordinates of `v` in the subspace basis.
    pub fn coordinates(&self, v: &StateVector) -> StateVector {
        let parts: Vec<StateVector> = self.blocks.iter().map(|b| b.basis.project(v)).collect();
        let mut z = StateVector::zeros(self.dim);
        let mut off = 0;
        for p in parts {
            z.rows_mut(off, p.len()).copy_from(&p);
            off += p.len();
        }
        z
    }

    /// Dense isometry whose columns are [`GmcSubspace::basis`].
    pub fn isometry(&self) -> Operator {
        Operator::from_columns(&self.basis())
    }
}

/// Lagrange parameters of a generalized Gibbs state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GibbsParameters {
    pub lambda: Vec<f64>,
    pub beta: f64,
    pub iterations: usize,
    pub residual: f64,
    /// `log Z(λ) − λ·Q` after every accepted step, starting at `λ = 0`.
    pub objective: Vec<f64>,
}

pub const NEWTON_MAX_ITER: usize = 200;
pub const LAMBDA_DIVERGENCE: f64 = 1e4;

/// Newton iteration on the convex dual `λ ↦ log Z(λ) − λ·Q`, whose gradient
/// is `⟨Q⟩_λ − Q` and whose Hessian is the covariance matrix.
pub fn solve_lambda(spectrum: &JointSpectrum, targets: &[f64]) -> Result<GibbsParameters> {
    let k = spectrum.k();
    if targets.len() != k {
        return Err(Error::InvalidInput(format!("{} targets for {k} quantities", targets.len())));
    }
    for (j, ((lo, hi), &t)) in spectrum.bounds().iter().zip(targets).enumerate() {
        if !(t > *lo && t < *hi) {
            return Err(Error::Infeasible(format!(
                "target {t} for quantity {} is not inside the spectral range [{lo}, {hi}]",
                j + 1
            )));
        }
    }
    let scales = spectrum.scales();
    let objective_at = |lam: &[f64]| -> Result<f64> { Ok(spectrum.log_partition(lam)? - dot(lam, targets)) };
    let mut lambda = vec![0.0; k];
    let mut obj = objective_at(&lambda)?;
    let mut history = vec![obj];
    let mut residual;
    for it in 0..NEWTON_MAX_ITER {
        let (_, w) = spectrum.exp_weights(&lambda)?;
        let (mean, cov) = spectrum.moments(&w);
        let grad: Vec<f64> = mean.iter().zip(targets).map(|(m, t)| m - t).collect();
        residual = grad.iter().zip(&scales).fold(0.0_f64, |m, (g, s)| m.max(g.abs() / s));
        if residual < 1e-13 {
            return Ok(finish(lambda, it, residual, history));
        }
        let ev = cov.clone().symmetric_eigen().eigenvalues;
        let (emin, emax) = ev.iter().fold((f64::INFINITY, 0.0_f64), |(a, b), &x| (a.min(x), b.max(x)));
        if !(emin > 1e-12 * emax) {
            return Err(Error::SingularHessian { lambda: lambda.clone() });
        }
        let chol = cov.clone().cholesky().ok_or_else(|| Error::SingularHessian { lambda: lambda.clone() })?;
        let step = chol.solve(&DVector::from_vec(grad.iter().map(|g| -g).collect()));
        let mut t = 1.0;
        let mut accepted = false;
        if residual < 1e-6 {
            // inside the quadratic basin the objective is flat to rounding;
            // judge the full step by the gradient instead
            let trial: Vec<f64> = lambda.iter().zip(step.iter()).map(|(l, s)| l + s).collect();
            if let Ok((_, wt)) = spectrum.exp_weights(&trial) {
                let (mt, _) = spectrum.moments(&wt);
                let rt = mt.iter().zip(targets).zip(&scales).fold(0.0_f64, |m, ((a, t), s)| m.max((a - t).abs() / s));
                if rt < residual {
                    lambda = trial;
                    obj = objective_at(&lambda)?;
                    history.push(obj);
                    continue;
                }
            }
        }
        for _ in 0..60 {
            let trial: Vec<f64> = lambda.iter().zip(step.iter()).map(|(l, s)| l + t * s).collect();
            if let Ok(o) = objective_at(&trial) {
                if o <= obj {
                    let gain = obj - o;
                    lambda = trial;
                    obj = o;
                    history.push(o);
                    accepted = true;
                    if gain == 0.0 && residual < 1e-8 {
                        return Ok(finish(lambda, it + 1, residual, history));
                    }
                    break;
                }
            }
            t *= 0.5;
        }
        let norm = lambda.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > LAMBDA_DIVERGENCE {
            return Err(Error::Infeasible(format!("|lambda| = {norm:e} diverged; target is outside the joint spectrum hull")));
        }
        if !accepted {
            if residual < 1e-8 {
                return Ok(finish(lambda, it + 1, residual, history));
            }
            return Err(Error::NoConvergence { iterations: it + 1, residual });
        }
    }
    let (_, w) = spectrum.exp_weights(&lambda)?;
    let (mean, _) = spectrum.moments(&w);
    residual = mean.iter().zip(targets).zip(&scales).fold(0.0_f64, |m, ((a, t), s)| m.max((a - t).abs() / s));
    if residual < 1e-8 {
        return Ok(finish(lambda, NEWTON_MAX_ITER, residual, history));
    }
    Err(Error::NoConvergence { iterations: NEWTON_MAX_ITER, residual })
}

fn finish(lambda: Vec<f64>, iterations: usize, residual: f64, objective: Vec<f64>) -> GibbsParameters {
    let beta = -lambda.last().copied().unwrap_or(0.0);
    GibbsParameters { lambda, beta, iterations, residual, objective }
}

/// Dense `exp(Σ λ_k Q_k)/Z` for a commuting family of operators.
pub fn gibbs_density(qops: &[Operator], lambda: &[f64]) -> Result<Operator> {
    JointSpectrum::from_operators(qops)?.density(lambda)
}

/// Dense `P/dim` for the joint window subspace of a commuting family.
pub fn gmc_subspace(qops: &[Operator], spec: &EnsembleSpec) -> Result<GmcSubspace> {
    JointSpectrum::from_operators(qops)?.gmc(spec)
}

/// `μ*_i = β⁻¹ Σ_{k<K} λ_k F_ki`, then `μ0 = μ* − E0`.
pub fn mu_from_lambda(f: &DMatrix<f64>, lambda: &[f64], beta: f64, e0: &[f64]) -> Result<Vec<f64>> {
    if !(beta > 0.0) {
        return Err(Error::InvalidInput(format!("beta must be positive, got {beta}")));
    }
    if lambda.len() != f.nrows() + 1 && lambda.len() != f.nrows() {
        return Err(Error::InvalidInput("lambda length does not match F".into()));
    }
    Ok((0..f.ncols())
        .map(|i| (0..f.nrows()).map(|k| lambda[k] * f[(k, i)]).sum::<f64>() / beta - e0[i])
        .collect())
}

/// Inverse of [`mu_from_lambda`]: least-squares `λ` with `Fᵀλ = β(μ0 + E0)`,
/// returned together with the mismatch of that equation. The mismatch
/// vanishes exactly when `μ0 + E0` is orthogonal to every reaction vector.
pub fn lambda_from_mu(f: &DMatrix<f64>, mu0: &[f64], beta: f64, e0: &[f64]) -> Result<(Vec<f64>, f64)> {
    if !(beta > 0.0) {
        return Err(Error::InvalidInput(format!("beta must be positive, got {beta}")));
    }
    let rhs = DVector::from_iterator(f.ncols(), mu0.iter().zip(e0).map(|(m, e)| beta * (m + e)));
    let ft = f.transpose();
    let gram = f * &ft;
    let chol = gram.cholesky().ok_or_else(|| Error::InvalidInput("F does not have full row rank".into()))?;
    let lam = chol.solve(&(f * &rhs));
    let mismatch = (&ft * &lam - rhs).amax();
    let mut out: Vec<f64> = lam.iter().copied().collect();
    out.push(-beta);
    Ok((out, mismatch))
}

/// Joint spectrum of `(N_1, …, N_r, H0)`.
pub fn number_energy_spectrum(model: &LatticeFockModel) -> Result<JointSpectrum> {
    let diags: Vec<DiagonalOperator> =
        (0..model.n_species()).map(|i| DiagonalOperator(model.number_diagonal(i, None))).collect();
    let h0 = model.h0();
    let mut refs: Vec<&dyn HermitianSource> = diags.iter().map(|d| d as &dyn HermitianSource).collect();
    refs.push(&h0);
    JointSpectrum::build(&refs, None)
}

/// Exponent coefficients `(βμ0_1, …, βμ0_r, −β)` on `(N_1, …, N_r, H0)`.
fn gc_coefficients(beta: f64, mu0: &[f64]) -> Vec<f64> {
    let mut v: Vec<f64> = mu0.iter().map(|m| beta * m).collect();
    v.push(-beta);
    v
}

/// Grand-canonical state `exp(−β(H0 − Σ μ0_i N_i))/Z` with the interaction
/// left out.
#[derive(Debug, Clone)]
pub struct GrandCanonical {
    pub beta: f64,
    pub mu0: Vec<f64>,
    pub spectrum: JointSpectrum,
}

impl GrandCanonical {
    pub fn new(model: &LatticeFockModel, beta: f64, mu0: &[f64]) -> Result<Self> {
        if !(beta > 0.0) {
            return Err(Error::InvalidInput(format!("beta must be positive, got {beta}")));
        }
        if mu0.len() != model.n_species() {
            return Err(Error::InvalidInput(format!("{} chemical potentials for {} species", mu0.len(), model.n_species())));
        }
        Ok(Self { beta, mu0: mu0.to_vec(), spectrum: number_energy_spectrum(model)? })
    }

    pub fn with_spectrum(spectrum: JointSpectrum, beta: f64, mu0: &[f64]) -> Self {
        Self { beta, mu0: mu0.to_vec(), spectrum }
    }

    pub fn log_partition(&self) -> Result<f64> {
        self.spectrum.log_partition(&gc_coefficients(self.beta, &self.mu0))
    }

    pub fn density(&self) -> Result<Operator> {
        self.spectrum.density(&gc_coefficients(self.beta, &self.mu0))
    }

    /// `tr(ρ_gc N_i)` per species.
    pub fn numbers(&self) -> Result<Vec<f64>> {
        let mut m = self.spectrum.expectations(&gc_coefficients(self.beta, &self.mu0))?;
        m.pop();
        Ok(m)
    }

    /// `−β⁻¹ log Z_gc`.
    pub fn grand_potential(&self) -> Result<f64> {
        Ok(-self.log_partition()? / self.beta)
    }
}

pub fn grand_canonical(model: &LatticeFockModel, beta: f64, mu0: &[f64]) -> Result<Operator> {
    GrandCanonical::new(model, beta, mu0)?.density()
}

pub fn equilibrium_numbers(model: &LatticeFockModel, beta: f64, mu0: &[f64]) -> Result<Vec<f64>> {
    GrandCanonical::new(model, beta, mu0)?.numbers()
}

pub fn grand_potential(model: &LatticeFockModel, beta: f64, mu0: &[f64]) -> Result<f64> {
    GrandCanonical::new(model, beta, mu0)?.grand_potential()
}

/// One factor `exp(−β(H0_i − μ0_i N_i))/Z_i` of the grand-canonical product,
/// built on the Fock space of species `i` alone.
pub fn species_factor(model: &LatticeFockModel, species: usize, beta: f64, mu0: f64) -> Result<Operator> {
    let modes: Vec<usize> = (0..model.n_modes()).filter(|&m| model.mode_info(m).0 == species).collect();
    let sub = model.restrict(&modes)?;
    let h = sub.h0().to_dense()? - sub.number_operator(species, None) * c(mu0);
    let e = eigh(&h)?;
    let shift = e.values[0];
    let w: Vec<f64> = e.values.iter().map(|x| (-beta * (x - shift)).exp()).collect();
    let z: f64 = w.iter().sum();
    let d = DVector::from_iterator(w.len(), w.iter().map(|x| c(x / z)));
    Ok(&e.vectors * Operator::from_diagonal(&d) * e.vectors.adjoint())
}

/// `log dim` of the joint window subspace.
pub fn boltzmann_entropy(spectrum: &JointSpectrum, windows: &[Window]) -> Result<f64> {
    let g = spectrum.gmc(&EnsembleSpec { windows: windows.to_vec() })?;
    Ok((g.dim as f64).ln())
}

/// Backward-difference estimate `λ_k ≈ −(S(q) − S(q − step·e_k))/step`.
pub fn entropy_lambda(spectrum: &JointSpectrum, windows: &[Window], step: f64) -> Result<Vec<f64>> {
    let s0 = boltzmann_entropy(spectrum, windows)?;
    (0..windows.len())
        .map(|k| {
            let mut w = windows.to_vec();
            w[k].upper -= step;
            let s1 = boltzmann_entropy(spectrum, &w).map_err(|e| match e {
                Error::EmptySubspace(m) => Error::EmptySubspace(format!("shifted window for quantity {}: {m}", k + 1)),
                other => other,
            })?;
            Ok(-(s0 - s1) / step)
        })
        .collect()
}

/// Conserved set and joint spectrum of a model, with `F` from its network.
pub struct ModelEnsemble {
    pub f: ConservedMatrix,
    pub set: ConservedSet,
    pub spectrum: JointSpectrum,
}

impl ModelEnsemble {
    pub fn new(model: &LatticeFockModel) -> Result<Self> {
        Self::with_f(model, conserved_matrix(model.network()))
    }

    pub fn with_f(model: &LatticeFockModel, f: ConservedMatrix) -> Result<Self> {
        let set = model.conserved_ops(&f)?;
        let spectrum = JointSpectrum::from_conserved(&set, None)?;
        Ok(Self { f, set, spectrum })
    }

    /// Same conserved quantities with `H*` (no interaction or perturbation)
    /// as the energy.
    pub fn additive(model: &LatticeFockModel, f: ConservedMatrix) -> Result<Self> {
        let set = model.conserved_ops_with(&f, model.h_star())?;
        let spectrum = JointSpectrum::from_conserved(&set, None)?;
        Ok(Self { f, set, spectrum })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Statement1aReport {
    pub gmc_dim: usize,
    pub region_dim: usize,
    pub bath_dim: usize,
    pub targets: Vec<f64>,
    pub lambda: Vec<f64>,
    pub beta: f64,
    pub solver_residual: f64,
    /// `‖tr_bath ρ_gmc − ρ_gG^S‖_tr`
    pub local_distance: f64,
    /// `‖ρ_gG − ρ_gG^S ⊗ ρ_gG^S̄‖_tr`, only evaluated for total dimension ≤ 1024.
    pub factorization_distance: Option<f64>,
    pub h1_defects: Vec<f64>,
}

/// Region-restricted Gibbs state with the given parameters: the conserved
/// quantities are built from the region's particle numbers and the energy is
/// the region's `H*` without interaction.
pub fn region_gibbs(model: &LatticeFockModel, modes: &[usize], f: &ConservedMatrix, lambda: &[f64]) -> Result<Operator> {
    let sub = model.restrict(modes)?;
    let ens = ModelEnsemble::additive(&sub, f.clone())?;
    ens.spectrum.density(lambda)
}

/// Compare the reduced micro-canonical state of region `s_modes` with the
/// region's own generalized Gibbs state at the parameters matching the
/// micro-canonical means.
pub fn statement1a_report(model: &LatticeFockModel, s_modes: &[usize], spec: &EnsembleSpec) -> Result<Statement1aReport> {
    let ens = ModelEnsemble::new(model)?;
    let gmc = ens.spectrum.gmc(spec)?;
    let targets = gmc.mean_values();
    let params = solve_lambda(&ens.spectrum, &targets)?;
    let bip: Bipartition = model.bipartition(s_modes)?;
    let rho_gmc_s = gmc.reduced(&bip.map);
    let rho_gg_s = region_gibbs(model, &bip.s_modes, &ens.f, &params.lambda)?;
    let local_distance = trace_distance(&rho_gmc_s, &rho_gg_s);
    let factorization_distance = if model.dim() <= 1024 {
        let rho = ens.spectrum.density(&params.lambda)?;
        let rho_b = region_gibbs(model, &bip.bath_modes, &ens.f, &params.lambda)?;
        let prod = tensor(&rho_gg_s, &rho_b)?;
        Some(trace_distance(&bip.to_region_major(&rho), &prod))
    } else {
        None
    };
    Ok(Statement1aReport {
        gmc_dim: gmc.dim,
        region_dim: bip.dim_s,
        bath_dim: bip.dim_b,
        targets,
        beta: params.beta,
        lambda: params.lambda,
        solver_residual: params.residual,
        local_distance,
        factorization_distance,
        h1_defects: bip.h1_defects,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{binding_model, staircase_sites};
    use crate::qcore::{diagonal, identity};

    fn qubit() -> JointSpectrum {
        JointSpectrum::from_operators(&[diagonal(&[0.0, 1.0])]).unwrap()
    }

    #[test]
    fn full_window_gives_maximally_mixed() {
        let h = diagonal(&[0.0, 1.0, 2.0, 2.0]);
        let g = gmc_subspace(&[h], &EnsembleSpec { windows: vec![Window::new(2.0, 2.0)] }).unwrap();
        assert_eq!(g.dim, 4);
        assert!(hs_norm(&(g.density() - identity(4) * c(0.25))) < 1e-15);
    }

    #[test]
    fn exact_windows_select_tuple() {
        let q1 = diagonal(&[0.0, 1.0]);
        let q2 = diagonal(&[0.0, 0.0]);
        let g = gmc_subspace(&[q1, q2], &EnsembleSpec { windows: vec![Window::exact(1.0), Window::exact(0.0)] }).unwrap();
        assert_eq!(g.dim, 1);
        let none = gmc_subspace(&[diagonal(&[0.0, 1.0])], &EnsembleSpec { windows: vec![Window::exact(0.5)] });
        assert!(matches!(none, Err(Error::EmptySubspace(_))));
    }

    #[test]
    fn non_commuting_family_is_rejected() {
        let x = Operator::from_row_slice(2, 2, &[c(0.0), c(1.0), c(1.0), c(0.0)]);
        let z = diagonal(&[1.0, -1.0]);
        assert!(matches!(JointSpectrum::from_operators(&[x, z]), Err(Error::NonCommuting { .. })));
    }

    #[test]
    fn binding_model_gmc_dimension_matches_enumeration() {
        let m = binding_model([0.3, 0.5, 0.2], 1.0, 0.4).unwrap();
        let ens = ModelEnsemble::new(&m).unwrap();
        // canonical F rows are N_A + N_C and N_B + N_C
        let (lo, hi) = ens.spectrum.bounds()[2];
        let spec = EnsembleSpec { windows: vec![Window::exact(1.0), Window::exact(1.0), Window::new(hi, hi - lo)] };
        let g = ens.spectrum.gmc(&spec).unwrap();
        let count = (0..8)
            .filter(|&s| {
                let o = m.occupation(s);
                o[0] + o[2] == 1 && o[1] + o[2] == 1
            })
            .count();
        assert_eq!(g.dim, count);
        assert!(crate::qcore::hermiticity_residual(&g.projector()) < 1e-12);
    }

    #[test]
    fn gibbs_density_examples() {
        let q = diagonal(&[0.0, 1.0]);
        let r = gibbs_density(&[q.clone()], &[0.0]).unwrap();
        assert!(hs_norm(&(r - identity(2) * c(0.5))) < 1e-15);
        let r = gibbs_density(&[q.clone()], &[-1.0]).unwrap();
        let e = (-1f64).exp();
        assert!(hs_norm(&(r.clone() - diagonal(&[1.0 / (1.0 + e), e / (1.0 + e)]))) < 1e-15);
        assert!(hs_norm(&commutator(&r, &q)) < 1e-12);
        assert!((r.trace().re - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gibbs_density_survives_large_exponents() {
        let q = diagonal(&[0.0, 1.0]);
        let r = gibbs_density(&[q], &[-800.0]).unwrap();
        assert!((r[(0, 0)].re - 1.0).abs() < 1e-15);
    }

    #[test]
    fn qubit_lambda_solutions() {
        let p = solve_lambda(&qubit(), &[0.5]).unwrap();
        assert!(p.lambda[0].abs() < 1e-12);
        let target = 1.0 / (1.0 + std::f64::consts::E);
        let p = solve_lambda(&qubit(), &[target]).unwrap();
        assert!((p.lambda[0] + 1.0).abs() < 1e-8, "{:?}", p.lambda);
        assert!(p.objective.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn targets_outside_hull_are_infeasible() {
        assert!(matches!(solve_lambda(&qubit(), &[1.5]), Err(Error::Infeasible(_))));
        assert!(matches!(solve_lambda(&qubit(), &[1.0]), Err(Error::Infeasible(_))));
    }

    #[test]
    fn facet_target_is_singular() {
        // Q2 = 2 Q1 makes the covariance matrix singular at every λ
        let q1 = diagonal(&[0.0, 1.0, 2.0]);
        let q2 = diagonal(&[0.0, 2.0, 4.0]);
        let s = JointSpectrum::from_operators(&[q1, q2]).unwrap();
        assert!(matches!(solve_lambda(&s, &[0.5, 1.0]), Err(Error::SingularHessian { .. })));
    }

    #[test]
    fn mu_lambda_round_trip() {
        let f = conserved_matrix(&crate::stoich::binding_network(0.8)).to_f64();
        let e0 = [0.0, 0.0, -0.8];
        let lam = [0.3, -0.2, -1.7];
        let mu = mu_from_lambda(&f, &lam, 1.7, &e0).unwrap();
        let (back, mismatch) = lambda_from_mu(&f, &mu, 1.7, &e0).unwrap();
        assert!(mismatch < 1e-12);
        for (a, b) in back.iter().zip(&lam) {
            assert!((a - b).abs() < 1e-12);
        }
        let mu2 = mu_from_lambda(&f, &back, 1.7, &e0).unwrap();
        for (a, b) in mu.iter().zip(&mu2) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((mu[2] - (mu[0] + mu[1] + 0.8)).abs() < 1e-12);
        let zero = mu_from_lambda(&f, &[0.0, 0.0, -1.0], 1.0, &e0).unwrap();
        assert_eq!(zero, vec![0.0, 0.0, 0.8]);
    }

    #[test]
    fn grand_canonical_single_species_is_canonical() {
        let m = staircase_sites(3).unwrap();
        let rho = grand_canonical(&m, 0.7, &[0.0]).unwrap();
        let h = m.h0().to_dense().unwrap();
        let w: Vec<f64> = (0..m.dim()).map(|i| (-0.7 * h[(i, i)].re).exp()).collect();
        let z: f64 = w.iter().sum();
        let expected = diagonal(&w.iter().map(|x| x / z).collect::<Vec<_>>());
        assert!(hs_norm(&(rho - expected)) < 1e-14);
    }

    #[test]
    fn grand_canonical_factorizes_without_interaction() {
        let m = binding_model([0.3, 0.5, 0.2], 1.0, 0.0).unwrap();
        let (beta, mu) = (1.3, [0.2, -0.4, 0.1]);
        let rho = grand_canonical(&m, beta, &mu).unwrap();
        let mut prod = species_factor(&m, 0, beta, mu[0]).unwrap();
        for i in 1..3 {
            prod = tensor(&prod, &species_factor(&m, i, beta, mu[i]).unwrap()).unwrap();
        }
        assert!(crate::qcore::trace_norm(&(rho.clone() - prod)) < 1e-12);
        let n = equilibrium_numbers(&m, beta, &mu).unwrap();
        for i in 0..3 {
            let fi = species_factor(&m, i, beta, mu[i]).unwrap();
            assert!((n[i] - fi[(1, 1)].re).abs() < 1e-12);
        }
    }

    #[test]
    fn grand_potential_derivative() {
        let m = binding_model([0.3, 0.5, 0.2], 1.0, 0.0).unwrap();
        let (beta, mu) = (0.9, [0.2, -0.4, 0.1]);
        let n = equilibrium_numbers(&m, beta, &mu).unwrap();
        let h = 1e-5;
        for i in 0..3 {
            let mut up = mu;
            let mut dn = mu;
            up[i] += h;
            dn[i] -= h;
            let lz = |x: &[f64]| -beta * grand_potential(&m, beta, x).unwrap();
            let d = (lz(&up) - lz(&dn)) / (2.0 * h) / beta;
            assert!((d - n[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn low_temperature_concentrates_on_ground_sector() {
        let m = staircase_sites(3).unwrap();
        let rho = grand_canonical(&m, 50.0, &[0.5]).unwrap();
        // only the site with energy 0 is below μ0 = 0.5, so |100⟩ dominates
        let ground = m.index_of(&[1, 0, 0]).unwrap();
        assert!((rho[(ground, ground)].re - 1.0).abs() < 1e-6);
        let flat = equilibrium_numbers(&m, 1e-9, &[0.0]).unwrap();
        assert!((flat[0] - 1.5).abs() < 1e-6);
    }

    #[test]
    fn entropy_examples() {
        let s = JointSpectrum::from_operators(&[diagonal(&[0.0, 1.0, 1.0, 2.0])]).unwrap();
        assert!((boltzmann_entropy(&s, &[Window::new(2.0, 2.0)]).unwrap() - 4f64.ln()).abs() < 1e-15);
        assert_eq!(boltzmann_entropy(&s, &[Window::exact(0.0)]).unwrap(), 0.0);
        assert!(matches!(entropy_lambda(&s, &[Window::exact(0.0)], 1.0), Err(Error::EmptySubspace(_))));
    }

    #[test]
    fn statement1a_without_interaction_factorizes() {
        let m = staircase_sites(5).unwrap();
        let ens = ModelEnsemble::new(&m).unwrap();
        let spec = EnsembleSpec { windows: vec![Window::exact(2.0), Window::new(5.0, 2.0)] };
        let _ = ens.spectrum.gmc(&spec).unwrap();
        let r = statement1a_report(&m, &[0], &spec).unwrap();
        assert!(r.factorization_distance.unwrap() < 1e-10);
        assert!(r.solver_residual < 1e-8);
        assert_eq!(r.region_dim, 2);
    }

    #[test]
    fn reduced_gmc_counts_bath_configurations() {
        let m = staircase_sites(5).unwrap();
        let ens = ModelEnsemble::new(&m).unwrap();
        let spec = EnsembleSpec { windows: vec![Window::exact(2.0), Window::new(5.0, 2.0)] };
        let g = ens.spectrum.gmc(&spec).unwrap();
        let bip = m.bipartition(&[1]).unwrap();
        let r = g.reduced(&bip.map);
        let inside: Vec<usize> = (0..m.dim())
            .filter(|&s| {
                let o = m.occupation(s);
                let n: u8 = o.iter().sum();
                let e: usize = o.iter().enumerate().map(|(j, &x)| j * x as usize).sum();
                n == 2 && (3..=5).contains(&e)
            })
            .collect();
        let occupied = inside.iter().filter(|&&s| m.occupation(s)[1] == 1).count();
        assert_eq!(g.dim, inside.len());
        let p1 = occupied as f64 / inside.len() as f64;
        assert!(hs_norm(&(r - diagonal(&[1.0 - p1, p1]))) < 1e-14);
    }
}
