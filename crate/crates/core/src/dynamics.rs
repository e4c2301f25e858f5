//! Unitary evolution inside an energy-resolved subspace, ETH diagnostics,
//! gap degeneracy and the equilibration experiments.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::condwf::{build_predicted_mixture, BranchTable, MixtureMode, RegionContext};
use crate::ensembles::GmcSubspace;
use crate::error::{Error, Result};
use crate::gapm::{default_probes, measure_distance, mixture_sample, GapSampler};
use crate::qcore::{
    c, cluster_sorted, eigh, haar_unitary_with, hs_norm, trace_distance, Operator, StateVector, SubsystemMap, C64,
    DEGENERACY_REL_TOL,
};
use crate::rng::{child_seed, stream};
use crate::stats::golden_ratio_times;

/// One eigenvalue of `H` with an orthonormal basis of its eigenspace.
#[derive(Debug, Clone)]
pub struct EnergyCluster {
    pub value: f64,
    pub basis: Operator,
}

impl EnergyCluster {
    pub fn multiplicity(&self) -> usize {
        self.basis.ncols()
    }
}

/// Spectral decomposition `H = Σ_e e Π_e` on the space spanned by the
/// clusters, which is either the whole space or an invariant subspace.
#[derive(Debug, Clone)]
pub struct SpectralData {
    pub dim: usize,
    pub clusters: Vec<EnergyCluster>,
}

impl SpectralData {
    pub fn from_hamiltonian(h: &Operator) -> Result<Self> {
        let e = eigh(h)?;
        let clusters = e
            .clusters()
            .into_iter()
            .map(|cl| EnergyCluster { value: cl.value, basis: e.vectors.columns(cl.start, cl.len).into_owned() })
            .collect();
        Ok(Self { dim: h.nrows(), clusters })
    }

    /// Energy eigenspaces inside a micro-canonical subspace, read off the
    /// joint blocks whose last value is the energy. Blocks with equal energy
    /// are merged.
    pub fn from_subspace(gmc: &GmcSubspace) -> Self {
        let mut items: Vec<(f64, usize)> =
            gmc.blocks.iter().enumerate().map(|(i, b)| (*b.values.last().unwrap(), i)).collect();
        items.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let vals: Vec<f64> = items.iter().map(|x| x.0).collect();
        let range = vals.last().unwrap() - vals[0];
        let clusters = cluster_sorted(&vals, DEGENERACY_REL_TOL * range.max(1.0))
            .into_iter()
            .map(|cl| {
                let cols: Vec<StateVector> =
                    items[cl.start..cl.start + cl.len].iter().flat_map(|&(_, i)| gmc.blocks[i].basis.columns()).collect();
                EnergyCluster { value: cl.value, basis: Operator::from_columns(&cols) }
            })
            .collect();
        Self { dim: gmc.total_dim, clusters }
    }

    pub fn values(&self) -> Vec<f64> {
        self.clusters.iter().map(|c| c.value).collect()
    }

    pub fn rank(&self) -> usize {
        self.clusters.iter().map(EnergyCluster::multiplicity).sum()
    }

    /// `‖Σ_e Π_e − P‖_HS` where `P` is the projector onto the span, given.
    pub fn resolution_residual(&self, target: &Operator) -> f64 {
        let sum = self.clusters.iter().fold(Operator::zeros(self.dim, self.dim), |acc, c| acc + &c.basis * c.basis.adjoint());
        hs_norm(&(sum - target))
    }

    /// Smallest spacing between distinct eigenvalues.
    pub fn min_gap(&self) -> Option<f64> {
        self.clusters.windows(2).map(|w| w[1].value - w[0].value).reduce(f64::min)
    }

    pub fn max_gap(&self) -> Option<f64> {
        match (self.clusters.first(), self.clusters.last()) {
            (Some(a), Some(b)) if self.clusters.len() > 1 => Some(b.value - a.value),
            _ => None,
        }
    }

    /// Cluster coordinates `B_e† ψ`.
    pub fn coordinates(&self, psi: &StateVector) -> Vec<StateVector> {
        self.clusters.iter().map(|c| c.basis.adjoint() * psi).collect()
    }

    fn assemble(&self, coords: &[StateVector], t: f64) -> StateVector {
        let mut out = StateVector::zeros(self.dim);
        for (cl, a) in self.clusters.iter().zip(coords) {
            let ph = C64::from_polar(1.0, -cl.value * t);
            out += &cl.basis * (a * ph);
        }
        out
    }

    /// `e^{−iHt} ψ` for `ψ` in the span.
    pub fn evolve(&self, psi: &StateVector, t: f64) -> StateVector {
        self.assemble(&self.coordinates(psi), t)
    }

    /// `Σ_e Π_e |ψ⟩⟨ψ| Π_e`.
    pub fn dephased(&self, psi: &StateVector) -> Operator {
        self.clusters.iter().fold(Operator::zeros(self.dim, self.dim), |acc, cl| {
            let v = &cl.basis * (cl.basis.adjoint() * psi);
            acc + &v * v.adjoint()
        })
    }

    pub fn dephased_reduced(&self, psi: &StateVector, map: &SubsystemMap) -> Operator {
        self.clusters.iter().fold(Operator::zeros(map.kept_dim, map.kept_dim), |acc, cl| {
            let v = &cl.basis * (cl.basis.adjoint() * psi);
            acc + map.reduce_state(&v)
        })
    }

    pub fn gap_degeneracy(&self, tol: f64) -> usize {
        gap_degeneracy(&self.values(), tol)
    }
}

/// `e^{−iHt} ψ` through the eigen-decomposition of a dense Hamiltonian.
pub fn evolve(psi0: &StateVector, h: &Operator, t: f64) -> Result<StateVector> {
    Ok(SpectralData::from_hamiltonian(h)?.evolve(psi0, t))
}

pub fn dephased_average(psi0: &StateVector, h: &Operator) -> Result<Operator> {
    Ok(SpectralData::from_hamiltonian(h)?.dephased(psi0))
}

/// Largest number of ordered pairs of distinct eigenvalues sharing one gap.
/// Eigenvalues closer than `tol` count as one; gaps are binned by
/// `tol`-clustering of all pairwise differences.
pub fn gap_degeneracy(eigenvalues: &[f64], tol: f64) -> usize {
    let mut v = eigenvalues.to_vec();
    v.sort_by(f64::total_cmp);
    let distinct: Vec<f64> = cluster_sorted(&v, tol).into_iter().map(|c| c.value).collect();
    let n = distinct.len();
    if n < 2 {
        return 0;
    }
    let mut gaps = Vec::with_capacity(n * (n - 1));
    for i in 0..n {
        for j in 0..n {
            if i != j {
                gaps.push(distinct[i] - distinct[j]);
            }
        }
    }
    gaps.sort_by(f64::total_cmp);
    cluster_sorted(&gaps, tol).into_iter().map(|c| c.len).max().unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EthReport {
    /// `max_φ ‖tr_B |φ⟩⟨φ| − tr_B ρ_R‖_HS`
    pub eps_diag: f64,
    /// `max ‖tr_B |φ₁⟩⟨φ₂|‖_HS` over eigenvectors of different eigenvalues.
    pub eps_offdiag: f64,
    pub eps: f64,
    pub n_vectors: usize,
    pub n_clusters: usize,
    /// How the basis inside degenerate eigenspaces was fixed.
    pub degenerate_basis: String,
}

/// ETH quantities for the eigenvectors held by `spectral`, with the reduced
/// ensemble state `rho_r_s`.
pub fn eth_report(spectral: &SpectralData, map: &SubsystemMap, rho_r_s: &Operator) -> EthReport {
    let mut owner = Vec::new();
    let mut mats = Vec::new();
    for (ci, cl) in spectral.clusters.iter().enumerate() {
        for j in 0..cl.multiplicity() {
            owner.push(ci);
            mats.push(map.reshape(&cl.basis.column(j).into_owned()));
        }
    }
    let n = mats.len();
    let eps_diag = mats.par_iter().map(|m| hs_norm(&(m * m.adjoint() - rho_r_s))).reduce(|| 0.0, f64::max);
    let eps_offdiag = (0..n)
        .into_par_iter()
        .map(|i| {
            (i + 1..n)
                .filter(|&j| owner[i] != owner[j])
                .map(|j| hs_norm(&(&mats[i] * mats[j].adjoint())))
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max);
    EthReport {
        eps_diag,
        eps_offdiag,
        eps: eps_diag.max(eps_offdiag),
        n_vectors: n,
        n_clusters: spectral.clusters.len(),
        degenerate_basis: "eigenvectors as returned by the joint block decomposition".into(),
    }
}

/// ETH report for a dense Hamiltonian restricted to a subspace; the
/// subspace must be invariant under `H`.
pub fn eth_report_for(h: &Operator, gmc: &GmcSubspace, map: &SubsystemMap) -> Result<EthReport> {
    let b = gmc.isometry();
    let hb = h * &b;
    let compressed = b.adjoint() * &hb;
    let leak = hs_norm(&(hb - &b * &compressed));
    let scale = hs_norm(h).max(1.0);
    if leak > 1e-10 * scale {
        return Err(Error::NonCommuting { residual: leak, context: "H does not leave the subspace invariant".into() });
    }
    let local = SpectralData::from_hamiltonian(&crate::qcore::symmetrize(&compressed))?;
    let spectral = SpectralData {
        dim: gmc.total_dim,
        clusters: local.clusters.into_iter().map(|cl| EnergyCluster { value: cl.value, basis: &b * cl.basis }).collect(),
    };
    Ok(eth_report(&spectral, map, &gmc.reduced(map)))
}

/// Midpoint-rule average of `|ψ_t⟩⟨ψ_t|` over `[0, T]` with a step of
/// `π / (8 · max gap)`. Returns the average and the number of steps.
pub fn numerical_time_average(
    spectral: &SpectralData,
    psi0: &StateVector,
    horizon: f64,
    max_steps: usize,
) -> Result<(Operator, usize)> {
    let coords = spectral.coordinates(psi0);
    // flatten to one coordinate per eigenvector with its energy
    let mut energy = Vec::new();
    let mut z0 = Vec::new();
    for (cl, a) in spectral.clusters.iter().zip(&coords) {
        for x in a.iter() {
            energy.push(cl.value);
            z0.push(*x);
        }
    }
    let d = z0.len();
    let gap = spectral.max_gap().unwrap_or(0.0);
    let steps = if gap > 0.0 { (horizon * 8.0 * gap / std::f64::consts::PI).ceil() as usize } else { 1 }.max(1);
    if steps > max_steps {
        return Err(Error::Config(format!("time average needs {steps} steps, above the limit {max_steps}")));
    }
    let h = horizon / steps as f64;
    let chunks = 64;
    let per = steps.div_ceil(chunks);
    let parts: Vec<Operator> = (0..chunks)
        .into_par_iter()
        .map(|ch| {
            let lo = ch * per;
            let hi = ((ch + 1) * per).min(steps);
            let mut acc = Operator::zeros(d, d);
            if lo >= hi {
                return acc;
            }
            let t0 = (lo as f64 + 0.5) * h;
            let mut z: Vec<C64> = (0..d).map(|i| z0[i] * C64::from_polar(1.0, -energy[i] * t0)).collect();
            let rot: Vec<C64> = energy.iter().map(|&e| C64::from_polar(1.0, -e * h)).collect();
            for _ in lo..hi {
                for i in 0..d {
                    let zi = z[i];
                    for j in 0..d {
                        acc[(i, j)] += zi * z[j].conj();
                    }
                }
                for i in 0..d {
                    z[i] *= rot[i];
                }
            }
            acc
        })
        .collect();
    let avg = parts.into_iter().fold(Operator::zeros(d, d), |a, b| a + b) / c(steps as f64);
    let basis: Vec<StateVector> = spectral.clusters.iter().flat_map(|cl| crate::qcore::columns(&cl.basis)).collect();
    let b = Operator::from_columns(&basis);
    Ok((&b * avg * b.adjoint(), steps))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    /// Haar-random state of the micro-canonical subspace.
    Haar,
    /// Occupation basis state, one entry per mode.
    Occupation(Vec<u8>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibrationConfig {
    pub delta: f64,
    pub n_times: usize,
    /// Horizon in units of `2π / min gap`.
    pub horizon_cycles: f64,
    /// Horizon of the dephasing check in units of `1 / min gap`.
    pub average_factor: f64,
    pub check_dephasing: bool,
    pub dephasing_max_steps: usize,
    pub slack: f64,
    pub initial: InitialState,
    pub seed: u64,
}

impl Default for EquilibrationConfig {
    fn default() -> Self {
        Self {
            delta: 0.1,
            n_times: 2000,
            horizon_cycles: 50.0,
            average_factor: 200.0,
            check_dephasing: true,
            dephasing_max_steps: 20_000_000,
            slack: 0.02,
            initial: InitialState::Haar,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimePoint {
    pub t: f64,
    /// `‖tr_B |Ψ_t⟩⟨Ψ_t| − tr_B ρ_gmc‖_HS`
    pub distance: f64,
    /// `‖tr_B |Ψ_t⟩⟨Ψ_t| − ρ_gG^S‖_tr`, when the Gibbs parameters exist.
    pub distance_gg: Option<f64>,
    /// `‖tr_B |Ψ_t⟩⟨Ψ_t| − tr_B ω̄‖_HS` with `ω̄` the dephased state.
    pub deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DephasingCheck {
    pub horizon: f64,
    pub steps: usize,
    pub hs_error: f64,
    pub relative_error: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibrationReport {
    pub seed: u64,
    pub subspace_dim: usize,
    pub region_dim: usize,
    pub n_clusters: usize,
    pub min_gap: Option<f64>,
    pub horizon: f64,
    pub gap_tol: f64,
    pub d_g: usize,
    pub eth: EthReport,
    pub delta: f64,
    /// `2 ε √(D_G / δ)`
    pub threshold: f64,
    pub exceedance: f64,
    pub exceedance_ok: bool,
    pub mean_distance: f64,
    /// `‖time average of tr_B |Ψ_t⟩⟨Ψ_t| − tr_B ρ_gmc‖_HS`
    pub averaged_state_distance: f64,
    pub averaged_state_ok: bool,
    pub mean_sq_deviation: f64,
    /// `D_G ε² + slack`
    pub variance_bound: f64,
    pub variance_ok: bool,
    /// Fraction of times with deviation `≥ threshold` against
    /// `mean_sq_deviation / threshold²`.
    pub markov_fraction: f64,
    pub markov_bound: f64,
    pub markov_ok: bool,
    pub gibbs_error: Option<String>,
    pub dephasing: Option<DephasingCheck>,
    pub series: Vec<TimePoint>,
    pub verdict: bool,
}

fn initial_state(ctx: &RegionContext, init: &InitialState, seed: u64) -> Result<StateVector> {
    match init {
        InitialState::Haar => Ok(ctx.gmc.haar_state(&mut stream(seed, 0))),
        InitialState::Occupation(occ) => {
            let idx = ctx
                .model
                .index_of(occ)
                .ok_or_else(|| Error::InvalidInput(format!("occupation {occ:?} is not a basis state")))?;
            let v = crate::qcore::basis_vector(ctx.model.dim(), idx);
            let p = ctx.gmc.embed(&ctx.gmc.coordinates(&v));
            let n = p.norm();
            if n * n < 1.0 - 1e-10 {
                return Err(Error::PremiseViolated {
                    residual: 1.0 - n * n,
                    context: "initial state is not inside the micro-canonical subspace".into(),
                });
            }
            Ok(p / c(n))
        }
    }
}

/// Time series of the reduced state of `Ψ_t` against the reduced
/// micro-canonical state, checked against the equilibration bounds built
/// from the ETH constant and the gap degeneracy.
pub fn equilibration_experiment(ctx: &RegionContext, cfg: &EquilibrationConfig) -> Result<EquilibrationReport> {
    let spectral = SpectralData::from_subspace(&ctx.gmc);
    let map = &ctx.bip.map;
    let rho_r_s = ctx.rho_gmc_s();
    let eth = eth_report(&spectral, map, &rho_r_s);
    let values = spectral.values();
    let range = values.last().unwrap() - values[0];
    let gap_tol = DEGENERACY_REL_TOL * range.max(1.0);
    let d_g = gap_degeneracy(&values, gap_tol);
    let min_gap = spectral.min_gap();
    let horizon = min_gap.map_or(1.0, |g| cfg.horizon_cycles * std::f64::consts::TAU / g);
    let psi0 = initial_state(ctx, &cfg.initial, cfg.seed)?;
    let (rho_gg_s, gibbs_error) = match ctx.gibbs_parameters().and_then(|p| ctx.rho_gg_s(&p.lambda)) {
        Ok(r) => (Some(r), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let deph_s = spectral.dephased_reduced(&psi0, map);
    let coords = spectral.coordinates(&psi0);
    let times = golden_ratio_times(horizon, cfg.n_times);
    let reduced: Vec<Operator> = times.par_iter().map(|&t| map.reduce_state(&spectral.assemble(&coords, t))).collect();
    let series: Vec<TimePoint> = times
        .iter()
        .zip(&reduced)
        .map(|(&t, r)| TimePoint {
            t,
            distance: hs_norm(&(r - &rho_r_s)),
            distance_gg: rho_gg_s.as_ref().map(|g| trace_distance(r, g)),
            deviation: hs_norm(&(r - &deph_s)),
        })
        .collect();
    let n = series.len().max(1) as f64;
    let threshold = 2.0 * eth.eps * (d_g.max(1) as f64 / cfg.delta).sqrt();
    let exceedance = series.iter().filter(|p| p.distance > threshold).count() as f64 / n;
    let mean_distance = series.iter().map(|p| p.distance).sum::<f64>() / n;
    let avg_state = reduced.iter().fold(Operator::zeros(map.kept_dim, map.kept_dim), |a, r| a + r) / c(n);
    let averaged_state_distance = hs_norm(&(avg_state - &rho_r_s));
    let mean_sq_deviation = series.iter().map(|p| p.deviation * p.deviation).sum::<f64>() / n;
    let variance_bound = d_g as f64 * eth.eps * eth.eps + cfg.slack;
    let markov_fraction = series.iter().filter(|p| p.deviation >= threshold).count() as f64 / n;
    let markov_bound = if threshold > 0.0 { mean_sq_deviation / (threshold * threshold) } else { f64::INFINITY };
    let dephasing = if cfg.check_dephasing {
        let h = min_gap.map_or(1.0, |g| cfg.average_factor / g);
        let (avg, steps) = numerical_time_average(&spectral, &psi0, h, cfg.dephasing_max_steps)?;
        let omega = spectral.dephased(&psi0);
        let err = hs_norm(&(avg - &omega));
        let rel = err / hs_norm(&omega);
        Some(DephasingCheck { horizon: h, steps, hs_error: err, relative_error: rel, ok: rel <= 0.05 })
    } else {
        None
    };
    let exceedance_ok = exceedance <= cfg.delta;
    let averaged_state_ok = averaged_state_distance <= eth.eps + cfg.slack;
    let variance_ok = mean_sq_deviation <= variance_bound;
    let markov_ok = markov_fraction <= markov_bound + 1e-12;
    let verdict =
        exceedance_ok && averaged_state_ok && variance_ok && markov_ok && dephasing.as_ref().is_none_or(|d| d.ok);
    Ok(EquilibrationReport {
        seed: cfg.seed,
        subspace_dim: ctx.gmc.dim,
        region_dim: ctx.region_dim(),
        n_clusters: spectral.clusters.len(),
        min_gap,
        horizon,
        gap_tol,
        d_g,
        eth,
        delta: cfg.delta,
        threshold,
        exceedance,
        exceedance_ok,
        mean_distance,
        averaged_state_distance,
        averaged_state_ok,
        mean_sq_deviation,
        variance_bound,
        variance_ok,
        markov_fraction,
        markov_bound,
        markov_ok,
        gibbs_error,
        dephasing,
        series,
        verdict,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisMode {
    Haar,
    Qdiag,
    Ndiag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Statement5Config {
    pub basis: BasisMode,
    pub n_times: usize,
    pub n_draws: usize,
    pub sigmas: f64,
    pub horizon_cycles: f64,
    pub good_fraction_threshold: f64,
    pub initial: InitialState,
    pub seed: u64,
}

impl Default for Statement5Config {
    fn default() -> Self {
        Self {
            basis: BasisMode::Haar,
            n_times: 20,
            n_draws: 2000,
            sigmas: 4.0,
            horizon_cycles: 50.0,
            good_fraction_threshold: 0.8,
            initial: InitialState::Haar,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionalTimePoint {
    pub t: f64,
    pub max_z: f64,
    pub min_ks_p: f64,
    pub good: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Statement5Report {
    pub seed: u64,
    pub basis: BasisMode,
    pub horizon: f64,
    pub points: Vec<ConditionalTimePoint>,
    pub good_fraction: f64,
    pub verdict: bool,
}

/// Conditional wave functions of `Ψ_t` for one fixed bath basis, compared at
/// sampled times with the predicted GAP measure or mixture.
pub fn statement5_conditional_experiment(ctx: &RegionContext, cfg: &Statement5Config) -> Result<Statement5Report> {
    let spectral = SpectralData::from_subspace(&ctx.gmc);
    let psi0 = initial_state(ctx, &cfg.initial, cfg.seed)?;
    let coords = spectral.coordinates(&psi0);
    let horizon = spectral.min_gap().map_or(1.0, |g| cfg.horizon_cycles * std::f64::consts::TAU / g);
    let times = golden_ratio_times(horizon, cfg.n_times);
    let db = ctx.bath_dim();
    let mut rng = stream(child_seed(cfg.seed, 1), 0);
    let (onb, reference) = match cfg.basis {
        BasisMode::Haar => {
            let params = ctx.gibbs_parameters()?;
            let rho = ctx.rho_gg_s(&params.lambda)?;
            let refs = GapSampler::new(&rho)?.sample_n(cfg.n_draws, child_seed(cfg.seed, 2));
            (haar_unitary_with(db, &mut rng), refs)
        }
        BasisMode::Qdiag | BasisMode::Ndiag => {
            let mode = if cfg.basis == BasisMode::Qdiag { MixtureMode::Qdiag } else { MixtureMode::Ndiag };
            let pred = build_predicted_mixture(ctx, mode)?;
            let (onb, _) = crate::condwf::sector_respecting_onb(db, &pred.bath_sectors, &mut rng)?;
            let refs = mixture_sample(&pred.mixture, cfg.n_draws, child_seed(cfg.seed, 2)).into_iter().map(|x| x.1).collect();
            (onb, refs)
        }
    };
    let probes = default_probes(ctx.region_dim(), child_seed(cfg.seed, 3));
    let draw_seed = child_seed(cfg.seed, 4);
    let points: Vec<ConditionalTimePoint> = times
        .par_iter()
        .enumerate()
        .map(|(k, &t)| -> Result<ConditionalTimePoint> {
            let psi = spectral.assemble(&coords, t);
            let table = BranchTable::from_amplitudes(&ctx.bip.map.reshape(&psi), &onb)?;
            let mut r = stream(draw_seed, k as u64);
            let draws: Vec<StateVector> = (0..cfg.n_draws).map(|_| table.draw(&mut r).psi_s).collect();
            let d = measure_distance(&draws, &reference, &probes)?;
            Ok(ConditionalTimePoint { t, max_z: d.max_z(), min_ks_p: d.min_ks_p(), good: d.within(cfg.sigmas) })
        })
        .collect::<Result<_>>()?;
    let good_fraction = points.iter().filter(|p| p.good).count() as f64 / points.len().max(1) as f64;
    Ok(Statement5Report {
        seed: cfg.seed,
        basis: cfg.basis,
        horizon,
        verdict: good_fraction >= cfg.good_fraction_threshold,
        good_fraction,
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qcore::{diagonal, haar_state, random_hermitian};
    use crate::rng::rng_from_seed;

    #[test]
    fn gap_degeneracy_examples() {
        assert_eq!(gap_degeneracy(&[0.0, 1.0, 2.0], 1e-9), 2);
        let ladder: Vec<f64> = (0..7).map(|i| i as f64 * 0.5).collect();
        assert_eq!(gap_degeneracy(&ladder, 1e-9), 6);
        let mut rng = rng_from_seed(5);
        let generic: Vec<f64> = (0..12).map(|_| crate::qcore::uniform01(&mut rng)).collect();
        assert_eq!(gap_degeneracy(&generic, 1e-12), 1);
        assert_eq!(gap_degeneracy(&[1.0], 1e-9), 0);
    }

    #[test]
    fn evolution_basics() {
        let h = random_hermitian(5, &mut rng_from_seed(2));
        let psi = haar_state(5, 3);
        let sd = SpectralData::from_hamiltonian(&h).unwrap();
        assert!((sd.evolve(&psi, 0.0) - &psi).norm() < 1e-12);
        let a = sd.evolve(&sd.evolve(&psi, 0.7), 1.1);
        let b = sd.evolve(&psi, 1.8);
        assert!((a - &b).norm() < 1e-9);
        assert!((b.norm() - 1.0).abs() < 1e-10);
        let v = sd.clusters[2].basis.column(0).into_owned();
        let vt = sd.evolve(&v, 2.0);
        let expected = &v * C64::from_polar(1.0, -sd.clusters[2].value * 2.0);
        assert!((vt - expected).norm() < 1e-12);
    }

    #[test]
    fn dephasing_of_two_level_superposition() {
        let h = diagonal(&[0.0, 1.0, 3.0]);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let psi = StateVector::from_vec(vec![c(s), c(s), c(0.0)]);
        let w = dephased_average(&psi, &h).unwrap();
        assert!(hs_norm(&(w - diagonal(&[0.5, 0.5, 0.0]))) < 1e-14);
    }

    #[test]
    fn numerical_average_approaches_dephased_state() {
        let h = random_hermitian(4, &mut rng_from_seed(8));
        let psi = haar_state(4, 1);
        let sd = SpectralData::from_hamiltonian(&h).unwrap();
        let t = 200.0 / sd.min_gap().unwrap();
        let (avg, _) = numerical_time_average(&sd, &psi, t, 50_000_000).unwrap();
        let w = sd.dephased(&psi);
        assert!(hs_norm(&(avg - &w)) / hs_norm(&w) < 0.05);
        assert!(hs_norm(&(&w * &h - &h * &w)) < 1e-10);
        assert!((w.trace().re - 1.0).abs() < 1e-12);
    }
}
