//! Conditional wave functions of a region given an orthonormal basis of its
//! complement, and the Monte Carlo experiments comparing their distribution
//! with GAP measures and mixtures of GAP measures.
//!
//! For `Ψ ∈ 𝓗^S ⊗ 𝓗^B` with amplitude matrix `M` (region rows, bath
//! columns) and a bath basis `b_j`, the unnormalized branch is
//! `φ_j = ⟨b_j|Ψ⟩_B = M · conj(b_j)` and is chosen with Born weight `‖φ_j‖²`.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensembles::{
    solve_lambda, EnsembleSpec, GibbsParameters, GmcSubspace, JointSpectrum, ModelEnsemble,
};
use crate::error::{Error, Result};
use crate::gapm::{default_probes, measure_distance, GapSampler, MeasureDistance, MixtureComponent, MixtureSpec};
use crate::model::{Bipartition, LatticeFockModel};
use crate::qcore::{
    c, haar_unitary_with, hermitian_function, max_abs, symmetrize, trace_distance, Operator, StateVector, SubsystemMap, C64,
};
use crate::rng::{child_seed, stream, Rng};
use crate::sparse::Isometry;
use crate::stats::{chi_square_gof, quantile, summarize, ChiSquareResult};

/// Born weights below this are treated as zero.
pub const NULL_WEIGHT: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalDraw {
    pub psi_s: StateVector,
    pub index: usize,
    pub weight: f64,
}

/// All branches of one `(Ψ, basis)` pair.
#[derive(Debug, Clone)]
pub struct BranchTable {
    pub weights: Vec<f64>,
    /// Column `j` is the unnormalized branch `φ_j`.
    pub branches: DMatrix<C64>,
    cumulative: Vec<f64>,
}

fn conj(m: &Operator) -> Operator {
    m.map(|z| z.conj())
}

impl BranchTable {
    /// `onb` holds the bath basis as columns and must be unitary to 1e-10.
    pub fn new(psi: &StateVector, map: &SubsystemMap, onb: &Operator) -> Result<Self> {
        if psi.len() != map.total_dim() {
            return Err(Error::InvalidInput("state does not match the bipartition".into()));
        }
        if onb.nrows() != map.traced_dim || onb.ncols() != map.traced_dim {
            return Err(Error::InvalidInput("basis is not square on the bath".into()));
        }
        let gram = onb.adjoint() * onb - Operator::identity(onb.ncols(), onb.ncols());
        let r = gram.iter().fold(0.0_f64, |m, z| m.max(z.norm()));
        if r > 1e-10 {
            return Err(Error::InvalidInput(format!("bath basis is not orthonormal (residual {r:e})")));
        }
        Self::from_amplitudes(&map.reshape(psi), onb)
    }

    pub(crate) fn from_amplitudes(m: &DMatrix<C64>, onb: &Operator) -> Result<Self> {
        let branches = m * conj(onb);
        let weights: Vec<f64> = (0..branches.ncols()).map(|j| branches.column(j).norm_squared()).collect();
        let mut acc = 0.0;
        let cumulative: Vec<f64> = weights
            .iter()
            .map(|&w| {
                if w >= NULL_WEIGHT {
                    acc += w;
                }
                acc
            })
            .collect();
        if acc < NULL_WEIGHT {
            return Err(Error::NullState("every Born weight is below 1e-14".into()));
        }
        Ok(Self { weights, branches, cumulative })
    }

    /// Normalized branch `j`, or `None` for a null branch.
    pub fn state(&self, j: usize) -> Option<StateVector> {
        let w = self.weights[j];
        (w >= NULL_WEIGHT).then(|| self.branches.column(j) / c(w.sqrt()))
    }

    pub fn draw(&self, rng: &mut Rng) -> ConditionalDraw {
        let total = *self.cumulative.last().unwrap();
        let u = rng.random::<f64>() * total;
        let mut j = self.cumulative.partition_point(|&x| x <= u).min(self.weights.len() - 1);
        while self.weights[j] < NULL_WEIGHT {
            j -= 1;
        }
        ConditionalDraw { psi_s: self.state(j).unwrap(), index: j, weight: self.weights[j] }
    }

    /// `Σ_j w_j |⟨φ|ψ_j⟩|^{2p}` over non-null branches.
    pub fn moment(&self, probe: &StateVector, power: i32) -> f64 {
        (0..self.weights.len())
            .filter(|&j| self.weights[j] >= NULL_WEIGHT)
            .map(|j| {
                let w = self.weights[j];
                let o = probe.dotc(&self.branches.column(j).into_owned()).norm_sqr() / w;
                w * o.powi(power)
            })
            .sum()
    }
}

/// One conditional wave function drawn with the Born rule.
pub fn conditional_wf(psi: &StateVector, map: &SubsystemMap, onb: &Operator, seed: u64) -> Result<ConditionalDraw> {
    Ok(BranchTable::new(psi, map, onb)?.draw(&mut crate::rng::rng_from_seed(seed)))
}

/// Joint eigenspaces of commuting bath observables with their Born
/// probabilities for one state.
#[derive(Debug, Clone)]
pub struct SectorTable {
    pub values: Vec<Vec<f64>>,
    pub probabilities: Vec<f64>,
    pub bases: Vec<Isometry>,
}

impl SectorTable {
    /// `(I ⊗ P_j)Ψ`, normalized.
    pub fn collapse(&self, psi: &StateVector, map: &SubsystemMap, j: usize) -> Result<StateVector> {
        let w = self.bases[j].to_dense();
        let m = map.reshape(psi);
        let out = &m * conj(&w) * w.transpose();
        let n = out.norm();
        if n < NULL_WEIGHT.sqrt() {
            return Err(Error::NullState(format!("sector {j} has zero weight")));
        }
        Ok(map.flatten(&(out / c(n))))
    }
}

fn sector_weight(m: &DMatrix<C64>, basis: &Isometry) -> f64 {
    if basis.is_coordinate() {
        basis.indices.iter().map(|&t| m.column(t).norm_squared()).sum()
    } else {
        (m * conj(&basis.to_dense())).norm_squared()
    }
}

/// Sector probabilities `⟨Ψ|I ⊗ P_a|Ψ⟩` for the joint eigenspaces of commuting
/// observables on the bath. With no observables there is a single sector.
pub fn sector_probs(psi: &StateVector, map: &SubsystemMap, observables: &[Operator]) -> Result<SectorTable> {
    let d = map.traced_dim;
    let (values, bases) = if observables.is_empty() {
        (vec![Vec::new()], vec![Isometry::coordinates(d, (0..d).collect())])
    } else {
        if observables.iter().any(|o| o.nrows() != d) {
            return Err(Error::InvalidInput("observable does not act on the bath".into()));
        }
        let js = JointSpectrum::from_operators(observables)?;
        js.blocks.into_iter().map(|b| (b.values, b.basis)).unzip()
    };
    let m = map.reshape(psi);
    let probabilities = bases.iter().map(|b| sector_weight(&m, b)).collect();
    Ok(SectorTable { values, probabilities, bases })
}

/// Orthonormal basis that is Haar-random inside each sector and respects the
/// sector decomposition. Returns the basis columns and the sector of every
/// column.
pub fn sector_respecting_onb(dim: usize, sectors: &[Isometry], rng: &mut Rng) -> Result<(Operator, Vec<usize>)> {
    let total: usize = sectors.iter().map(Isometry::rank).sum();
    if total != dim {
        return Err(Error::InvalidInput(format!("sectors span {total} of {dim} dimensions")));
    }
    let mut out = Operator::zeros(dim, dim);
    let mut owner = Vec::with_capacity(dim);
    let mut col = 0;
    for (s, b) in sectors.iter().enumerate() {
        let r = b.rank();
        let u = haar_unitary_with(r, rng);
        if b.is_coordinate() {
            for (a, &t) in b.indices.iter().enumerate() {
                for j in 0..r {
                    out[(t, col + j)] = u[(a, j)];
                }
            }
        } else {
            out.columns_mut(col, r).copy_from(&(b.to_dense() * u));
        }
        owner.extend(std::iter::repeat_n(s, r));
        col += r;
    }
    Ok((out, owner))
}

/// A region of a model together with the micro-canonical subspace and the
/// conserved quantities.
pub struct RegionContext<'a> {
    pub model: &'a LatticeFockModel,
    pub bip: Bipartition,
    pub ens: ModelEnsemble,
    pub spec: EnsembleSpec,
    pub gmc: GmcSubspace,
}

impl<'a> RegionContext<'a> {
    pub fn new(model: &'a LatticeFockModel, s_modes: &[usize], spec: &EnsembleSpec) -> Result<Self> {
        let ens = ModelEnsemble::new(model)?;
        let gmc = ens.spectrum.gmc(spec)?;
        let bip = model.bipartition(s_modes)?;
        Ok(Self { model, bip, ens, spec: spec.clone(), gmc })
    }

    /// Gibbs parameters matching the micro-canonical means.
    pub fn gibbs_parameters(&self) -> Result<GibbsParameters> {
        solve_lambda(&self.ens.spectrum, &self.gmc.mean_values())
    }

    /// The region's own generalized Gibbs state at parameters `lambda`.
    pub fn rho_gg_s(&self, lambda: &[f64]) -> Result<Operator> {
        crate::ensembles::region_gibbs(self.model, &self.bip.s_modes, &self.ens.f, lambda)
    }

    pub fn rho_gmc_s(&self) -> Operator {
        self.gmc.reduced(&self.bip.map)
    }

    /// Reduced state of the additive Gibbs state `exp(λ·Q + λ_K H*)/Z`,
    /// which is the grand-canonical state whenever `λ_K = −β < 0`.
    pub fn rho_gc_s(&self, lambda: &[f64]) -> Result<Operator> {
        let add = ModelEnsemble::additive(self.model, self.ens.f.clone())?;
        add.spectrum.reduced_density(lambda, &self.bip.map)
    }

    pub fn region_dim(&self) -> usize {
        self.bip.dim_s
    }

    pub fn bath_dim(&self) -> usize {
        self.bip.dim_b
    }

    /// Particle numbers of every region basis index.
    pub fn region_numbers(&self) -> Vec<Vec<u32>> {
        (0..self.bip.dim_s).map(|a| self.model.numbers(self.bip.map.full_index(a, 0))).collect()
    }

    /// Particle numbers of every bath basis index.
    pub fn bath_numbers(&self) -> Vec<Vec<u32>> {
        (0..self.bip.dim_b).map(|t| self.model.numbers(self.bip.map.full_index(0, t))).collect()
    }

    fn charges(&self, n: &[u32]) -> Vec<f64> {
        let f = self.ens.f.to_f64();
        (0..f.nrows()).map(|k| (0..f.ncols()).map(|i| f[(k, i)] * n[i] as f64).sum()).collect()
    }
}

fn key_of(values: &[f64]) -> Vec<i64> {
    values.iter().map(|x| (x * 1e9).round() as i64).collect()
}

fn value_of(key: &[i64]) -> Vec<f64> {
    key.iter().map(|&k| k as f64 * 1e-9).collect()
}

fn group<K: Ord>(keys: impl IntoIterator<Item = K>) -> BTreeMap<K, Vec<usize>> {
    let mut out: BTreeMap<K, Vec<usize>> = BTreeMap::new();
    for (i, k) in keys.into_iter().enumerate() {
        out.entry(k).or_default().push(i);
    }
    out
}

fn quartiles(xs: &[f64]) -> [f64; 3] {
    [quantile(xs, 0.1), quantile(xs, 0.5), quantile(xs, 0.9)]
}

/// One row of the concentration-of-measure bound table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationRow {
    pub eta: f64,
    /// `η + d_S / √d_R`
    pub threshold: f64,
    /// `4 exp(−η² d_R / (18 π³))`
    pub bound: f64,
    pub vacuous: bool,
    pub exceedance: f64,
    pub holds: bool,
}

pub fn concentration_bound(eta: f64, region_dim: usize, subspace_dim: usize) -> (f64, f64) {
    let dr = subspace_dim as f64;
    let threshold = eta + region_dim as f64 / dr.sqrt();
    let bound = 4.0 * (-eta * eta * dr / (18.0 * std::f64::consts::PI.powi(3))).exp();
    (threshold, bound)
}

pub const DEFAULT_ETA: [f64; 6] = [0.05, 0.1, 0.2, 0.3, 0.5, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypicalityConfig {
    pub n_states: usize,
    pub eta: Vec<f64>,
    pub seed: u64,
}

impl Default for TypicalityConfig {
    fn default() -> Self {
        Self { n_states: 64, eta: DEFAULT_ETA.to_vec(), seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypicalityReport {
    pub seed: u64,
    pub region_dim: usize,
    pub subspace_dim: usize,
    /// `‖tr_B |Ψ⟩⟨Ψ| − tr_B ρ_gmc‖_tr` per state.
    pub distances_gmc: Vec<f64>,
    /// `‖tr_B |Ψ⟩⟨Ψ| − ρ_gG^S‖_tr` per state, when the Gibbs parameters exist.
    pub distances_gg: Option<Vec<f64>>,
    pub gibbs_error: Option<String>,
    pub quantiles_gmc: [f64; 3],
    pub median_gmc: f64,
    /// `d_S / √d_R`
    pub scale: f64,
    pub scaling_ratio: f64,
    pub bounds: Vec<ConcentrationRow>,
    pub verdict: bool,
}

/// Reduced states of Haar-random states of the micro-canonical subspace
/// against the reduced micro-canonical and Gibbs states.
pub fn typicality_experiment(ctx: &RegionContext, cfg: &TypicalityConfig) -> Result<TypicalityReport> {
    let rho_gmc_s = ctx.rho_gmc_s();
    let (rho_gg_s, gibbs_error) = match ctx.gibbs_parameters().and_then(|p| ctx.rho_gg_s(&p.lambda)) {
        Ok(r) => (Some(r), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let pairs: Vec<(f64, Option<f64>)> = (0..cfg.n_states)
        .into_par_iter()
        .map(|i| {
            let psi = ctx.gmc.haar_state(&mut stream(cfg.seed, i as u64));
            let r = ctx.bip.map.reduce_state(&psi);
            (trace_distance(&r, &rho_gmc_s), rho_gg_s.as_ref().map(|g| trace_distance(&r, g)))
        })
        .collect();
    let distances_gmc: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let distances_gg = rho_gg_s.as_ref().map(|_| pairs.iter().map(|p| p.1.unwrap()).collect());
    let (ds, dr) = (ctx.region_dim(), ctx.gmc.dim);
    let scale = ds as f64 / (dr as f64).sqrt();
    let median_gmc = quantile(&distances_gmc, 0.5);
    let bounds: Vec<ConcentrationRow> = cfg
        .eta
        .iter()
        .map(|&eta| {
            let (threshold, bound) = concentration_bound(eta, ds, dr);
            let exceedance =
                distances_gmc.iter().filter(|&&d| d >= threshold).count() as f64 / distances_gmc.len().max(1) as f64;
            ConcentrationRow { eta, threshold, bound, vacuous: bound >= 1.0, exceedance, holds: exceedance <= bound }
        })
        .collect();
    Ok(TypicalityReport {
        seed: cfg.seed,
        region_dim: ds,
        subspace_dim: dr,
        quantiles_gmc: quartiles(&distances_gmc),
        median_gmc,
        scale,
        scaling_ratio: median_gmc / scale,
        verdict: bounds.iter().all(|b| b.holds),
        bounds,
        distances_gmc,
        distances_gg,
        gibbs_error,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Statement3Config {
    pub n_states: usize,
    pub n_bases: usize,
    pub n_draws: usize,
    pub epsilon: f64,
    /// GAP samples per state for the second-moment reference.
    pub reference_samples: usize,
    pub sigmas: f64,
    pub seed: u64,
}

impl Default for Statement3Config {
    fn default() -> Self {
        Self { n_states: 64, n_bases: 16, n_draws: 5000, epsilon: 0.5, reference_samples: 4000, sigmas: 4.0, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Statement3Report {
    pub seed: u64,
    pub region_dim: usize,
    pub bath_dim: usize,
    pub subspace_dim: usize,
    pub lambda: Vec<f64>,
    pub beta: f64,
    /// `‖tr_B ρ_gmc − ρ_gG^S‖_tr`
    pub reference_gap: f64,
    /// Pooled draws (fresh `Ψ` and fresh Haar basis per draw) against GAP(ρ_gG^S).
    pub law: MeasureDistance,
    pub law_max_z: f64,
    pub law_min_ks_p: f64,
    pub law_within: bool,
    pub epsilon: f64,
    /// `4 / (ε² d_B)`
    pub failure_bound: f64,
    pub bad_fraction: f64,
    pub deviation_quantiles: [f64; 3],
    pub reference_std_error: f64,
    pub bound_holds: bool,
    pub verdict: bool,
}

/// Draws `ψ^S` for fresh `Ψ ∈ 𝕊(𝓗_gmc)` and fresh Haar bath bases.
fn averaged_law_draws(ctx: &RegionContext, n: usize, seed: u64) -> Result<Vec<StateVector>> {
    let db = ctx.bath_dim();
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, i as u64);
            let psi = ctx.gmc.haar_state(&mut rng);
            let onb = haar_unitary_with(db, &mut rng);
            let t = BranchTable::from_amplitudes(&ctx.bip.map.reshape(&psi), &onb)?;
            Ok(t.draw(&mut rng).psi_s)
        })
        .collect()
}

/// Conditional wave functions for Haar bath bases against GAP measures.
///
/// The pooled law over random `Ψ` and random bases is compared with
/// `GAP(ρ_gG^S)` by probe moments. For individual `Ψ`, a basis counts as bad
/// when the exact conditional law deviates from `GAP(tr_B |Ψ⟩⟨Ψ|)` by at
/// least `ε` on a probe function `|⟨φ|ψ⟩|²` or `|⟨φ|ψ⟩|⁴`; the bad fraction is
/// compared with `4 / (ε² d_B)`.
pub fn statement3_experiment(ctx: &RegionContext, cfg: &Statement3Config) -> Result<Statement3Report> {
    let (ds, db) = (ctx.region_dim(), ctx.bath_dim());
    if db < 4.max(ds) {
        return Err(Error::PremiseViolated {
            residual: db as f64,
            context: format!("bath dimension {db} is below max(4, {ds})"),
        });
    }
    let params = ctx.gibbs_parameters()?;
    let rho_gg_s = ctx.rho_gg_s(&params.lambda)?;
    let reference_gap = trace_distance(&ctx.rho_gmc_s(), &rho_gg_s);
    let probes = default_probes(ds, child_seed(cfg.seed, 1));

    let draws = averaged_law_draws(ctx, cfg.n_draws, child_seed(cfg.seed, 2))?;
    let reference = GapSampler::new(&rho_gg_s)?.sample_n(cfg.n_draws, child_seed(cfg.seed, 3));
    let law = measure_distance(&draws, &reference, &probes)?;

    let basis_seed = child_seed(cfg.seed, 4);
    let ref_seed = child_seed(cfg.seed, 5);
    let per_state: Vec<(Vec<f64>, f64)> = (0..cfg.n_states)
        .into_par_iter()
        .map(|s| -> Result<(Vec<f64>, f64)> {
            let mut rng = stream(basis_seed, s as u64);
            let psi = ctx.gmc.haar_state(&mut rng);
            let m = ctx.bip.map.reshape(&psi);
            let rho = symmetrize(&(&m * m.adjoint()));
            let gap = GapSampler::new(&rho)?.sample_n(cfg.reference_samples, child_seed(ref_seed, s as u64));
            let mut worst_se = 0.0_f64;
            let exact: Vec<(f64, f64)> = probes
                .iter()
                .map(|phi| {
                    let first = phi.dotc(&(&rho * phi)).re;
                    let q: Vec<f64> = gap.iter().map(|g| phi.dotc(g).norm_sqr().powi(2)).collect();
                    let sm = summarize(&q);
                    worst_se = worst_se.max(sm.std_error);
                    (first, sm.mean)
                })
                .collect();
            let devs = (0..cfg.n_bases)
                .map(|_| -> Result<f64> {
                    let onb = haar_unitary_with(db, &mut rng);
                    let t = BranchTable::from_amplitudes(&m, &onb)?;
                    Ok(probes.iter().zip(&exact).fold(0.0_f64, |acc, (phi, &(f1, f2))| {
                        acc.max((t.moment(phi, 1) - f1).abs()).max((t.moment(phi, 2) - f2).abs())
                    }))
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok((devs, worst_se))
        })
        .collect::<Result<_>>()?;
    let deviations: Vec<f64> = per_state.iter().flat_map(|p| p.0.iter().copied()).collect();
    let reference_std_error = per_state.iter().map(|p| p.1).fold(0.0, f64::max);
    let bad = deviations.iter().filter(|&&d| d >= cfg.epsilon).count();
    let bad_fraction = bad as f64 / deviations.len().max(1) as f64;
    let failure_bound = 4.0 / (cfg.epsilon * cfg.epsilon * db as f64);
    let law_within = law.within(cfg.sigmas);
    let bound_holds = bad_fraction <= failure_bound;
    Ok(Statement3Report {
        seed: cfg.seed,
        region_dim: ds,
        bath_dim: db,
        subspace_dim: ctx.gmc.dim,
        lambda: params.lambda.clone(),
        beta: params.beta,
        reference_gap,
        law_max_z: law.max_z(),
        law_min_ks_p: law.min_ks_p(),
        law,
        law_within,
        epsilon: cfg.epsilon,
        failure_bound,
        bad_fraction,
        deviation_quantiles: quartiles(&deviations),
        reference_std_error,
        bound_holds,
        verdict: law_within && bound_holds,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixtureMode {
    /// Bath bases diagonalizing the bath charges `Q_k^B`, `k < K`.
    Qdiag,
    /// Bath bases diagonalizing every bath particle number.
    Ndiag,
    /// Charge sectors of the reduced grand-canonical state.
    GcSimplified,
}

/// Predicted mixture together with the bath sectors that label it.
#[derive(Debug, Clone)]
pub struct PredictedMixture {
    pub mode: MixtureMode,
    pub mixture: MixtureSpec,
    /// Bath sectors used for drawing bases.
    pub bath_sectors: Vec<Isometry>,
    /// Component predicted for each bath sector, if any.
    pub bath_component: Vec<Option<usize>>,
    pub lambda: Vec<f64>,
    /// Norm of the parts of the region state that couple different sectors.
    pub off_block: f64,
}

/// Exact charges `Q_k`, `k < K`, after checking that their windows have
/// zero width.
fn exact_charges(ctx: &RegionContext) -> Result<Vec<f64>> {
    let k = ctx.spec.windows.len() - 1;
    for (i, w) in ctx.spec.windows[..k].iter().enumerate() {
        if w.width != 0.0 {
            return Err(Error::PremiseViolated {
                residual: w.width,
                context: format!("window of Q_{} has nonzero width", i + 1),
            });
        }
    }
    Ok(ctx.gmc.blocks[0].values[..k].to_vec())
}

/// Charge sectors of the region state `rho`: `P ρ P / tr(Pρ)` weighted by
/// `tr(Pρ)` for each joint eigenvalue of the region charges.
fn charge_mixture(ctx: &RegionContext, rho: &Operator) -> Result<(MixtureSpec, Vec<Vec<i64>>, f64)> {
    let ds = ctx.region_dim();
    let sectors = group(ctx.region_numbers().iter().map(|n| key_of(&ctx.charges(n))));
    let mut owner = vec![0usize; ds];
    for (s, idx) in sectors.values().enumerate() {
        for &a in idx {
            owner[a] = s;
        }
    }
    let mut off = 0.0;
    for a in 0..ds {
        for b in 0..ds {
            if owner[a] != owner[b] {
                off += rho[(a, b)].norm_sqr();
            }
        }
    }
    let mut comps = Vec::new();
    let mut keys = Vec::new();
    for (key, idx) in &sectors {
        let block = Operator::from_fn(idx.len(), idx.len(), |i, j| rho[(idx[i], idx[j])]);
        let p = block.trace().re;
        if p < NULL_WEIGHT {
            continue;
        }
        let emb = Isometry::coordinates(ds, idx.clone()).to_dense();
        comps.push(MixtureComponent { weight: p, rho: symmetrize(&(block / c(p))), embedding: Some(emb), label: value_of(key) });
        keys.push(key.clone());
    }
    renormalize(&mut comps);
    Ok((MixtureSpec::new(ds, comps, true)?, keys, off.sqrt()))
}

/// Dropping null sectors leaves a deficit below 1e-13; fold it back.
fn renormalize(comps: &mut [MixtureComponent]) {
    let total: f64 = comps.iter().map(|c| c.weight).sum();
    comps.iter_mut().for_each(|c| c.weight /= total);
}

/// Sectors of joint bath charges and their charge labels.
fn bath_charge_sectors(ctx: &RegionContext) -> (Vec<Isometry>, Vec<Vec<f64>>) {
    let db = ctx.bath_dim();
    let groups = group(ctx.bath_numbers().iter().map(|n| key_of(&ctx.charges(n))));
    groups.into_iter().map(|(k, idx)| (Isometry::coordinates(db, idx), value_of(&k))).unzip()
}

fn bath_number_sectors(ctx: &RegionContext) -> (Vec<Isometry>, Vec<Vec<u32>>) {
    let db = ctx.bath_dim();
    let groups = group(ctx.bath_numbers());
    groups.into_iter().map(|(k, idx)| (Isometry::coordinates(db, idx), k)).unzip()
}

/// Predicted law of `ψ^S` for bases respecting the chosen bath sectors.
pub fn build_predicted_mixture(ctx: &RegionContext, mode: MixtureMode) -> Result<PredictedMixture> {
    let q = exact_charges(ctx)?;
    let params = ctx.gibbs_parameters()?;
    match mode {
        MixtureMode::Qdiag | MixtureMode::GcSimplified => {
            let rho = match mode {
                MixtureMode::Qdiag => ctx.rho_gg_s(&params.lambda)?,
                _ => ctx.rho_gc_s(&params.lambda)?,
            };
            let (mixture, keys, off_block) = charge_mixture(ctx, &rho)?;
            let (bath_sectors, bath_q) = bath_charge_sectors(ctx);
            let bath_component = bath_q
                .iter()
                .map(|qb| {
                    let qs: Vec<f64> = q.iter().zip(qb).map(|(a, b)| a - b).collect();
                    let k = key_of(&qs);
                    keys.iter().position(|x| *x == k)
                })
                .collect();
            Ok(PredictedMixture { mode, mixture, bath_sectors, bath_component, lambda: params.lambda, off_block })
        }
        MixtureMode::Ndiag => {
            let (bath_sectors, labels) = bath_number_sectors(ctx);
            let ds = ctx.region_dim();
            let map = &ctx.bip.map;
            let basis = ctx.gmc.basis();
            let dim = ctx.gmc.dim as f64;
            let parts: Vec<Vec<Operator>> = basis
                .par_iter()
                .map(|v| {
                    let m = map.reshape(v);
                    bath_sectors
                        .iter()
                        .map(|b| {
                            let cols = m.select_columns(&b.indices);
                            &cols * cols.adjoint()
                        })
                        .collect()
                })
                .collect();
            let mut acc = vec![Operator::zeros(ds, ds); bath_sectors.len()];
            for p in parts {
                for (a, x) in acc.iter_mut().zip(p) {
                    *a += x;
                }
            }
            let mut comps = Vec::new();
            let mut bath_component = Vec::new();
            for (s, r) in acc.into_iter().enumerate() {
                let r = r / c(dim);
                let p = r.trace().re;
                if p < NULL_WEIGHT {
                    bath_component.push(None);
                    continue;
                }
                bath_component.push(Some(comps.len()));
                let label = labels[s].iter().map(|&x| x as f64).collect();
                comps.push(MixtureComponent { weight: p, rho: symmetrize(&(r / c(p))), embedding: None, label });
            }
            renormalize(&mut comps);
            Ok(PredictedMixture {
                mode,
                mixture: MixtureSpec::new(ds, comps, false)?,
                bath_sectors,
                bath_component,
                lambda: params.lambda,
                off_block: 0.0,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Statement4Config {
    pub n_states: usize,
    pub n_bases: usize,
    pub n_draws: usize,
    pub sigmas: f64,
    /// Sectors with fewer draws are not compared on probes.
    pub min_sector_draws: usize,
    pub chi_square_alpha: f64,
    pub seed: u64,
}

impl Default for Statement4Config {
    fn default() -> Self {
        Self { n_states: 64, n_bases: 16, n_draws: 5000, sigmas: 4.0, min_sector_draws: 30, chi_square_alpha: 1e-3, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectorRow {
    pub label: Vec<f64>,
    pub predicted: f64,
    pub observed: u64,
    pub frequency: f64,
    pub std_error: f64,
    pub distance: Option<MeasureDistance>,
    pub within: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Statement4Report {
    pub mode: MixtureMode,
    pub seed: u64,
    pub region_dim: usize,
    pub bath_dim: usize,
    pub subspace_dim: usize,
    pub n_draws: usize,
    pub lambda: Vec<f64>,
    pub sectors: Vec<SectorRow>,
    /// Draws landing in sectors the prediction gives no weight.
    pub unexpected: u64,
    pub chi_square: ChiSquareResult,
    pub frequencies_ok: bool,
    pub moments_ok: bool,
    /// Largest difference between sector probabilities summed over basis
    /// branches and the direct projector expectation.
    pub basis_independence_residual: f64,
    /// `Σ_q |p_Ndiag(q) − p_gc(q)|` with the bath-number sectors merged by charge.
    pub gc_weight_discrepancy: Option<f64>,
    /// `‖tr_B ρ_gmc − tr_B ρ_gc‖_tr`, which bounds the discrepancy above.
    pub equivalence_error: Option<f64>,
    pub verdict: bool,
}

/// Conditional wave functions for sector-respecting bath bases against the
/// predicted mixture of GAP measures.
pub fn statement4_experiment(ctx: &RegionContext, mode: MixtureMode, cfg: &Statement4Config) -> Result<Statement4Report> {
    let pred = build_predicted_mixture(ctx, mode)?;
    let ds = ctx.region_dim();
    let db = ctx.bath_dim();
    let ncomp = pred.mixture.components.len();
    let draw_seed = child_seed(cfg.seed, 2);
    let draws: Vec<(Option<usize>, StateVector)> = (0..cfg.n_draws)
        .into_par_iter()
        .map(|i| -> Result<(Option<usize>, StateVector)> {
            let mut rng = stream(draw_seed, i as u64);
            let psi = ctx.gmc.haar_state(&mut rng);
            let (onb, owner) = sector_respecting_onb(db, &pred.bath_sectors, &mut rng)?;
            let t = BranchTable::from_amplitudes(&ctx.bip.map.reshape(&psi), &onb)?;
            let d = t.draw(&mut rng);
            Ok((pred.bath_component[owner[d.index]], d.psi_s))
        })
        .collect::<Result<_>>()?;
    let mut counts = vec![0u64; ncomp + 1];
    let mut by_comp: Vec<Vec<StateVector>> = vec![Vec::new(); ncomp];
    for (comp, psi) in draws {
        match comp {
            Some(j) => {
                counts[j] += 1;
                by_comp[j].push(psi);
            }
            None => counts[ncomp] += 1,
        }
    }
    let mut probs = pred.mixture.weights();
    probs.push(0.0);
    let chi_square = chi_square_gof(&counts, &probs);
    let probes = default_probes(ds, child_seed(cfg.seed, 1));
    let ref_seed = child_seed(cfg.seed, 3);
    let n = cfg.n_draws as f64;
    let sectors: Vec<SectorRow> = pred
        .mixture
        .components
        .iter()
        .enumerate()
        .map(|(j, comp)| -> Result<SectorRow> {
            let observed = counts[j];
            let frequency = observed as f64 / n;
            let std_error = (comp.weight * (1.0 - comp.weight) / n).sqrt();
            let distance = if observed as usize >= cfg.min_sector_draws {
                let nref = (observed as usize).max(2000);
                let samples: Vec<StateVector> = pred
                    .mixture
                    .sampler(j)
                    .sample_n(nref, child_seed(ref_seed, j as u64))
                    .into_iter()
                    .map(|s| match &comp.embedding {
                        Some(e) => e * s,
                        None => s,
                    })
                    .collect();
                Some(measure_distance(&by_comp[j], &samples, &probes)?)
            } else {
                None
            };
            let within = distance.as_ref().is_none_or(|d| d.within(cfg.sigmas));
            Ok(SectorRow { label: comp.label.clone(), predicted: comp.weight, observed, frequency, std_error, distance, within })
        })
        .collect::<Result<_>>()?;

    let basis_independence_residual = basis_independence(ctx, &pred, cfg)?;
    let (gc_weight_discrepancy, equivalence_error) = if mode == MixtureMode::Ndiag {
        let (d, e) = remark_cross_check(ctx, &pred)?;
        (Some(d), Some(e))
    } else {
        (None, None)
    };
    let frequencies_ok = chi_square.p_value > cfg.chi_square_alpha;
    let moments_ok = sectors.iter().all(|s| s.within);
    let remark_ok = match (gc_weight_discrepancy, equivalence_error) {
        (Some(d), Some(e)) => d <= e + 1e-12,
        _ => true,
    };
    Ok(Statement4Report {
        mode,
        seed: cfg.seed,
        region_dim: ds,
        bath_dim: db,
        subspace_dim: ctx.gmc.dim,
        n_draws: cfg.n_draws,
        lambda: pred.lambda.clone(),
        unexpected: counts[ncomp],
        chi_square,
        frequencies_ok,
        moments_ok,
        basis_independence_residual,
        gc_weight_discrepancy,
        equivalence_error,
        verdict: frequencies_ok && moments_ok && remark_ok && basis_independence_residual < 1e-10,
        sectors,
    })
}

/// Sector probabilities from branch weights for several random bases
/// against the direct projector expectation.
fn basis_independence(ctx: &RegionContext, pred: &PredictedMixture, cfg: &Statement4Config) -> Result<f64> {
    let seed = child_seed(cfg.seed, 6);
    let db = ctx.bath_dim();
    let res: Vec<f64> = (0..cfg.n_states)
        .into_par_iter()
        .map(|s| -> Result<f64> {
            let mut rng = stream(seed, s as u64);
            let psi = ctx.gmc.haar_state(&mut rng);
            let m = ctx.bip.map.reshape(&psi);
            let direct: Vec<f64> = pred.bath_sectors.iter().map(|b| sector_weight(&m, b)).collect();
            let mut worst = 0.0_f64;
            for _ in 0..cfg.n_bases {
                let (onb, owner) = sector_respecting_onb(db, &pred.bath_sectors, &mut rng)?;
                let t = BranchTable::from_amplitudes(&m, &onb)?;
                let mut sums = vec![0.0; direct.len()];
                for (j, &w) in t.weights.iter().enumerate() {
                    sums[owner[j]] += w;
                }
                worst = sums.iter().zip(&direct).fold(worst, |acc, (a, b)| acc.max((a - b).abs()));
            }
            Ok(worst)
        })
        .collect::<Result<_>>()?;
    Ok(res.into_iter().fold(0.0, f64::max))
}

/// Merge bath-number sector weights by region charge and compare them with
/// the charge weights of the reduced grand-canonical state.
fn remark_cross_check(ctx: &RegionContext, pred: &PredictedMixture) -> Result<(f64, f64)> {
    let q = exact_charges(ctx)?;
    let rho_gc_s = ctx.rho_gc_s(&pred.lambda)?;
    let (gc, keys, _) = charge_mixture(ctx, &rho_gc_s)?;
    let mut merged: BTreeMap<Vec<i64>, f64> = BTreeMap::new();
    for comp in &pred.mixture.components {
        let n: Vec<u32> = comp.label.iter().map(|&x| x.round() as u32).collect();
        let qs: Vec<f64> = q.iter().zip(ctx.charges(&n)).map(|(a, b)| a - b).collect();
        *merged.entry(key_of(&qs)).or_default() += comp.weight;
    }
    for k in &keys {
        merged.entry(k.clone()).or_default();
    }
    let discrepancy = merged
        .iter()
        .map(|(k, &p)| {
            let pg = keys.iter().position(|x| x == k).map_or(0.0, |j| gc.components[j].weight);
            (p - pg).abs()
        })
        .sum();
    Ok((discrepancy, trace_distance(&ctx.rho_gmc_s(), &rho_gc_s)))
}

/// Generic charge-sector pipeline against the closed form for one species
/// in a region with no boundary hopping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedFormReport {
    pub beta: f64,
    pub mu: f64,
    pub region_numbers: Vec<u32>,
    pub weights_pipeline: Vec<f64>,
    pub weights_closed: Vec<f64>,
    pub max_weight_error: f64,
    pub max_component_error: f64,
    pub boundary_defect: f64,
}

/// Compare the charge-sector weights and components of the reduced
/// grand-canonical state at `(β, μ)` with
/// `p(n) = e^{βμn} tr(P_n e^{−βH0^S}) / Z^S` and
/// `ρ(n) = P_n e^{−βH0^S} P_n / tr(P_n e^{−βH0^S})` computed on the region alone.
pub fn closed_form_check(model: &LatticeFockModel, s_modes: &[usize], beta: f64, mu: f64) -> Result<ClosedFormReport> {
    if model.n_species() != 1 {
        return Err(Error::InvalidInput("closed form needs a single species".into()));
    }
    let ens = ModelEnsemble::new(model)?;
    let bip = model.bipartition(s_modes)?;
    let (lambda, _) = crate::ensembles::lambda_from_mu(&ens.f.to_f64(), &[mu], beta, model.e0())?;
    let add = ModelEnsemble::additive(model, ens.f.clone())?;
    let rho_gc_s = add.spectrum.reduced_density(&lambda, &bip.map)?;

    let sub = model.restrict(&bip.s_modes)?;
    let h0 = sub.h0().to_dense()?;
    let shift = (0..h0.nrows()).map(|i| h0[(i, i)].re).fold(f64::INFINITY, f64::min);
    let boltz = hermitian_function(&h0, |x| (-beta * (x - shift)).exp())?;
    let numbers = sub.number_diagonal(0, None);
    let sectors = group(numbers.iter().map(|&x| x.round() as u32));
    let ds = bip.dim_s;
    let mut weights_pipeline = Vec::new();
    let mut weights_closed = Vec::new();
    let mut region_numbers = Vec::new();
    let mut max_component_error = 0.0_f64;
    let mut z = 0.0;
    let mut raw = Vec::new();
    for (n, idx) in &sectors {
        let block = Operator::from_fn(idx.len(), idx.len(), |i, j| boltz[(idx[i], idx[j])]);
        let t = block.trace().re;
        let w = (beta * mu * *n as f64).exp() * t;
        z += w;
        raw.push((*n, idx.clone(), block, t, w));
    }
    for (n, idx, block, t, w) in raw {
        let p_closed = w / z;
        let pb = Operator::from_fn(idx.len(), idx.len(), |i, j| rho_gc_s[(idx[i], idx[j])]);
        let p_pipe = pb.trace().re;
        let comp_closed = block / c(t);
        let comp_pipe = pb / c(p_pipe);
        max_component_error = max_component_error.max(max_abs(&(comp_closed - comp_pipe)));
        region_numbers.push(n);
        weights_pipeline.push(p_pipe);
        weights_closed.push(p_closed);
    }
    debug_assert_eq!(ds, sub.dim());
    let max_weight_error =
        weights_pipeline.iter().zip(&weights_closed).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
    Ok(ClosedFormReport {
        beta,
        mu,
        region_numbers,
        weights_pipeline,
        weights_closed,
        max_weight_error,
        max_component_error,
        boundary_defect: bip.h1_defects[0],
    })
}
