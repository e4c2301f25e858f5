//! Capped bosonic lattice models.
//!
//! Every species lives on its own list of sites; each (species, site) pair is
//! one mode with occupations `0..=cap`. Modes are numbered species-major then
//! site-major and the occupation basis uses the first mode as the most
//! significant digit, so one species on two hard-core sites has the basis
//! `|00⟩, |01⟩, |10⟩, |11⟩`.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qcore::{c, diagonal, Factorization, Operator, SubsystemMap, C64, DEFAULT_MAX_DIM};
use crate::rng::{child_seed, rng_from_seed};
use crate::sparse::SparseOperator;
use crate::stoich::{ConservedMatrix, ReactionNetwork};

#[derive(Debug, Clone, PartialEq)]
pub struct Species {
    pub name: String,
    pub cap: u32,
    /// One-particle Hamiltonian over this species' sites.
    pub h1: Operator,
    /// Region label of every site.
    pub regions: Vec<String>,
}

impl Species {
    pub fn sites(&self) -> usize {
        self.h1.nrows()
    }

    /// Sites with on-site energies and nearest-neighbour hopping `t` along a
    /// open chain.
    pub fn chain(name: &str, cap: u32, onsite: &[f64], hopping: f64) -> Self {
        let n = onsite.len();
        let mut h1 = diagonal(onsite);
        for j in 0..n.saturating_sub(1) {
            h1[(j, j + 1)] = c(hopping);
            h1[(j + 1, j)] = c(hopping);
        }
        Self { name: name.into(), cap, h1, regions: vec!["bulk".into(); n] }
    }
}

/// One reaction channel acting at fixed sites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub reaction: usize,
    pub amplitude: f64,
    /// Each tuple assigns one site per species.
    pub site_tuples: Vec<Vec<usize>>,
}

/// Seeded random Hermitian term that is block diagonal in the joint
/// particle-number sectors, used to make spectra generic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub strength: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub species: Vec<Species>,
    pub network: ReactionNetwork,
    pub e0: Vec<f64>,
    pub interactions: Vec<Interaction>,
    pub perturbation: Option<Perturbation>,
    pub max_dim: usize,
}

#[derive(Debug, Clone)]
pub struct LatticeFockModel {
    spec: ModelSpec,
    /// `(species, site)` of every mode.
    modes: Vec<(usize, usize)>,
    mode_offset: Vec<usize>,
    radix: Vec<usize>,
    dim: usize,
    occupations: Vec<Vec<u8>>,
}

impl LatticeFockModel {
    pub fn new(spec: ModelSpec) -> Result<Self> {
        let r = spec.species.len();
        if r == 0 {
            return Err(Error::Config("model has no species".into()));
        }
        if spec.network.species() != r {
            return Err(Error::Config(format!(
                "reaction network has {} species, model has {r}",
                spec.network.species()
            )));
        }
        if spec.e0.len() != r {
            return Err(Error::Config(format!("{} ground energies for {r} species", spec.e0.len())));
        }
        let mut modes = Vec::new();
        let mut mode_offset = Vec::with_capacity(r);
        let mut radix = Vec::new();
        for (i, sp) in spec.species.iter().enumerate() {
            if sp.h1.nrows() != sp.h1.ncols() {
                return Err(Error::Config(format!("h1 of species {} is not square", sp.name)));
            }
            if sp.sites() > 0 {
                crate::qcore::ensure_hermitian(&sp.h1)?;
            }
            if sp.regions.len() != sp.sites() {
                return Err(Error::Config(format!("species {} needs one region label per site", sp.name)));
            }
            if sp.cap == 0 || sp.cap > 255 {
                return Err(Error::Config(format!("species {} cap must be in 1..=255", sp.name)));
            }
            mode_offset.push(modes.len());
            for j in 0..sp.sites() {
                modes.push((i, j));
                radix.push(sp.cap as usize + 1);
            }
        }
        let mut dim: usize = 1;
        for &d in &radix {
            dim = dim.checked_mul(d).filter(|&x| x <= spec.max_dim).ok_or(Error::DimensionOverflow {
                dim: radix.iter().fold(1usize, |a, &b| a.saturating_mul(b)),
                max: spec.max_dim,
            })?;
        }
        for (k, int) in spec.interactions.iter().enumerate() {
            let re = spec
                .network
                .reactions()
                .get(int.reaction)
                .ok_or_else(|| Error::Config(format!("interaction {k} refers to missing reaction {}", int.reaction)))?;
            for tuple in &int.site_tuples {
                if tuple.len() != r {
                    return Err(Error::Config(format!("interaction {k}: site tuple needs {r} entries")));
                }
                for i in 0..r {
                    let involved = re.lhs[i] > 0 || re.rhs[i] > 0;
                    if involved && tuple[i] >= spec.species[i].sites() {
                        return Err(Error::Config(format!(
                            "interaction {k}: site {} out of range for species {}",
                            tuple[i], spec.species[i].name
                        )));
                    }
                    if re.lhs[i] > spec.species[i].cap || re.rhs[i] > spec.species[i].cap {
                        return Err(Error::Config(format!(
                            "interaction {k}: reaction {} exceeds the cap of species {}",
                            int.reaction, spec.species[i].name
                        )));
                    }
                }
            }
        }
        let occupations = (0..dim)
            .map(|mut idx| {
                let mut occ = vec![0u8; radix.len()];
                for m in (0..radix.len()).rev() {
                    occ[m] = (idx % radix[m]) as u8;
                    idx /= radix[m];
                }
                occ
            })
            .collect();
        Ok(Self { spec, modes, mode_offset, radix, dim, occupations })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_species(&self) -> usize {
        self.spec.species.len()
    }

    pub fn n_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn network(&self) -> &ReactionNetwork {
        &self.spec.network
    }

    pub fn e0(&self) -> &[f64] {
        &self.spec.e0
    }

    pub fn mode(&self, species: usize, site: usize) -> usize {
        self.mode_offset[species] + site
    }

    pub fn mode_info(&self, mode: usize) -> (usize, usize) {
        self.modes[mode]
    }

    /// One tensor factor per mode.
    pub fn factorization(&self) -> Factorization {
        let labels = self
            .modes
            .iter()
            .map(|&(i, j)| format!("{}[{j}]", self.spec.species[i].name))
            .collect();
        Factorization::new(self.radix.clone(), labels).expect("radix entries are positive")
    }

    pub fn occupation(&self, index: usize) -> &[u8] {
        &self.occupations[index]
    }

    pub fn index_of(&self, occ: &[u8]) -> Option<usize> {
        if occ.len() != self.radix.len() {
            return None;
        }
        let mut idx = 0usize;
        for (m, &n) in occ.iter().enumerate() {
            if n as usize >= self.radix[m] {
                return None;
            }
            idx = idx * self.radix[m] + n as usize;
        }
        Some(idx)
    }

    /// Global modes whose site carries `label`.
    pub fn modes_in_region(&self, label: &str) -> Vec<usize> {
        (0..self.n_modes())
            .filter(|&m| {
                let (i, j) = self.modes[m];
                self.spec.species[i].regions[j] == label
            })
            .collect()
    }

    /// All modes (every species) at the given site indices.
    pub fn modes_at_sites(&self, sites: &[usize]) -> Vec<usize> {
        (0..self.n_modes()).filter(|&m| sites.contains(&self.modes[m].1)).collect()
    }

    fn species_modes(&self, i: usize) -> std::ops::Range<usize> {
        self.mode_offset[i]..self.mode_offset[i] + self.spec.species[i].sites()
    }

    /// Diagonal of `N_i`, optionally restricted to the given global modes.
    pub fn number_diagonal(&self, species: usize, modes: Option<&[usize]>) -> Vec<f64> {
        let range = self.species_modes(species);
        let ms: Vec<usize> = match modes {
            Some(sel) => range.filter(|m| sel.contains(m)).collect(),
            None => range.collect(),
        };
        self.occupations
            .iter()
            .map(|occ| ms.iter().map(|&m| occ[m] as f64).sum())
            .collect()
    }

    pub fn number_operator(&self, species: usize, modes: Option<&[usize]>) -> Operator {
        diagonal(&self.number_diagonal(species, modes))
    }

    /// Particle numbers of every basis state.
    pub fn numbers(&self, index: usize) -> Vec<u32> {
        (0..self.n_species())
            .map(|i| self.species_modes(i).map(|m| self.occupations[index][m] as u32).sum())
            .collect()
    }

    /// Second quantization of species `i`'s one-particle Hamiltonian.
    pub fn h0_species(&self, species: usize) -> SparseOperator {
        let sp = &self.spec.species[species];
        let off = self.mode_offset[species];
        let n = sp.sites();
        let mut trip = Vec::new();
        for (idx, occ) in self.occupations.iter().enumerate() {
            for j in 0..n {
                for k in 0..n {
                    let h = sp.h1[(j, k)];
                    if h == C64::new(0.0, 0.0) {
                        continue;
                    }
                    let (mj, mk) = (off + j, off + k);
                    if j == k {
                        trip.push((idx, idx, h * occ[mj] as f64));
                        continue;
                    }
                    // ⟨out| a†_j a_k |idx⟩
                    let nk = occ[mk] as u32;
                    let nj = occ[mj] as u32;
                    if nk == 0 || nj == sp.cap {
                        continue;
                    }
                    let mut new = occ.clone();
                    new[mk] -= 1;
                    new[mj] += 1;
                    let out = self.index_of(&new).expect("occupation within caps");
                    let amp = ((nk as f64) * (nj as f64 + 1.0)).sqrt();
                    trip.push((out, idx, h * amp));
                }
            }
        }
        SparseOperator::from_triplets(self.dim, trip)
    }

    pub fn h0(&self) -> SparseOperator {
        (0..self.n_species()).fold(SparseOperator::zeros(self.dim), |acc, i| acc.add(&self.h0_species(i)))
    }

    /// `H* = H0 + Σ_i E0_i N_i`.
    pub fn h_star(&self) -> SparseOperator {
        let mut d = vec![0.0; self.dim];
        for i in 0..self.n_species() {
            for (x, n) in d.iter_mut().zip(self.number_diagonal(i, None)) {
                *x += self.spec.e0[i] * n;
            }
        }
        self.h0().add(&SparseOperator::from_diagonal(&d))
    }

    /// Reaction interaction `Σ_ℓ g_ℓ (T_ℓ + T_ℓ†)`.
    pub fn interaction(&self) -> SparseOperator {
        let mut trip = Vec::new();
        for int in &self.spec.interactions {
            if int.amplitude == 0.0 {
                continue;
            }
            let re = &self.spec.network.reactions()[int.reaction];
            for tuple in &int.site_tuples {
                for (idx, occ) in self.occupations.iter().enumerate() {
                    let mut new = occ.clone();
                    let mut amp = 1.0;
                    let mut ok = true;
                    for i in 0..self.n_species() {
                        let (nu, nut) = (re.lhs[i], re.rhs[i]);
                        if nu == 0 && nut == 0 {
                            continue;
                        }
                        let m = self.mode(i, tuple[i]);
                        let n = occ[m] as u32;
                        if n < nu || n - nu + nut > self.spec.species[i].cap {
                            ok = false;
                            break;
                        }
                        let mid = n - nu;
                        amp *= (falling(n, nu) * falling(mid + nut, nut)).sqrt();
                        new[m] = (mid + nut) as u8;
                    }
                    if !ok {
                        continue;
                    }
                    let out = self.index_of(&new).expect("occupation within caps");
                    let v = c(int.amplitude * amp);
                    trip.push((out, idx, v));
                    trip.push((idx, out, v.conj()));
                }
            }
        }
        SparseOperator::from_triplets(self.dim, trip)
    }

    /// Joint particle-number sectors as sorted `(numbers, basis indices)`.
    pub fn number_sectors(&self) -> BTreeMap<Vec<u32>, Vec<usize>> {
        let mut map: BTreeMap<Vec<u32>, Vec<usize>> = BTreeMap::new();
        for idx in 0..self.dim {
            map.entry(self.numbers(idx)).or_default().push(idx);
        }
        map
    }

    pub fn perturbation(&self) -> SparseOperator {
        let Some(p) = self.spec.perturbation else {
            return SparseOperator::zeros(self.dim);
        };
        let mut trip = Vec::new();
        for (key, idx) in self.number_sectors() {
            let tag = key.iter().fold(0u64, |acc, &n| acc.wrapping_mul(1_000_003).wrapping_add(n as u64 + 1));
            let mut rng = rng_from_seed(child_seed(p.seed, tag));
            let m = idx.len();
            let g = crate::qcore::random_hermitian(m, &mut rng);
            let scale = p.strength / (2.0 * (m as f64).sqrt());
            for a in 0..m {
                for b in 0..m {
                    trip.push((idx[a], idx[b], g[(a, b)] * scale));
                }
            }
        }
        SparseOperator::from_triplets(self.dim, trip)
    }

    /// `H = H* + V` plus the optional generic perturbation.
    pub fn hamiltonian(&self) -> SparseOperator {
        self.h_star().add(&self.interaction()).add(&self.perturbation())
    }

    /// Conserved operators `Q_k = Σ_i F_ki N_i` as diagonals, plus `H`.
    /// Fails when `H` does not commute with some `Q_k`.
    pub fn conserved_ops(&self, f: &ConservedMatrix) -> Result<ConservedSet> {
        self.conserved_ops_with(f, self.hamiltonian())
    }

    pub fn conserved_ops_with(&self, f: &ConservedMatrix, h: SparseOperator) -> Result<ConservedSet> {
        if f.species() != self.n_species() {
            return Err(Error::InvalidInput(format!(
                "F has {} columns, model has {} species",
                f.species(),
                self.n_species()
            )));
        }
        let ff = f.to_f64();
        let numbers: Vec<Vec<f64>> = (0..self.n_species()).map(|i| self.number_diagonal(i, None)).collect();
        let q: Vec<Vec<f64>> = (0..ff.nrows())
            .map(|k| (0..self.dim).map(|s| (0..self.n_species()).map(|i| ff[(k, i)] * numbers[i][s]).sum()).collect())
            .collect();
        let hn = h.hs_norm();
        for (k, qk) in q.iter().enumerate() {
            let qn = qk.iter().map(|x| x * x).sum::<f64>().sqrt();
            let comm = h.commutator_with_diagonal_hs(qk);
            if comm > 1e-10 * hn * qn {
                return Err(Error::NonCommuting {
                    residual: comm,
                    context: format!("Hamiltonian does not conserve Q_{}", k + 1),
                });
            }
        }
        Ok(ConservedSet { q, h, f: ff })
    }

    /// Bipartition into `s_modes` and the remaining modes.
    pub fn bipartition(&self, s_modes: &[usize]) -> Result<Bipartition> {
        let mut s: Vec<usize> = s_modes.to_vec();
        s.sort_unstable();
        s.dedup();
        if s.iter().any(|&m| m >= self.n_modes()) {
            return Err(Error::InvalidInput("region mode out of range".into()));
        }
        let rest: Vec<usize> = (0..self.n_modes()).filter(|m| !s.contains(m)).collect();
        let (map, dim_s, dim_b) = if s.is_empty() {
            let d = self.dim;
            (SubsystemMap::from_positions(1, d, (0..d).collect())?, 1, d)
        } else {
            let map = SubsystemMap::new(&self.factorization(), &s)?;
            let (a, b) = (map.kept_dim, map.traced_dim);
            (map, a, b)
        };
        let mut permutation = vec![0usize; self.dim];
        for a in 0..dim_s {
            for t in 0..dim_b {
                permutation[map.full_index(a, t)] = a * dim_b + t;
            }
        }
        let defects = (0..self.n_species())
            .map(|i| {
                let sp = &self.spec.species[i];
                let mut sum = 0.0;
                for j in 0..sp.sites() {
                    for k in 0..sp.sites() {
                        let (mj, mk) = (self.mode(i, j), self.mode(i, k));
                        if s.contains(&mj) != s.contains(&mk) {
                            sum += sp.h1[(j, k)].norm_sqr();
                        }
                    }
                }
                sum.sqrt()
            })
            .collect();
        Ok(Bipartition { s_modes: s, bath_modes: rest, map, dim_s, dim_b, permutation, h1_defects: defects })
    }

    /// Model on the listed modes only, with the interaction and the
    /// perturbation dropped and cross-boundary hopping removed.
    pub fn restrict(&self, modes: &[usize]) -> Result<LatticeFockModel> {
        let species = (0..self.n_species())
            .map(|i| {
                let sp = &self.spec.species[i];
                let sites: Vec<usize> = (0..sp.sites()).filter(|&j| modes.contains(&self.mode(i, j))).collect();
                let h1 = DMatrix::from_fn(sites.len(), sites.len(), |a, b| sp.h1[(sites[a], sites[b])]);
                Species {
                    name: sp.name.clone(),
                    cap: sp.cap,
                    h1,
                    regions: sites.iter().map(|&j| sp.regions[j].clone()).collect(),
                }
            })
            .collect();
        LatticeFockModel::new(ModelSpec {
            species,
            network: self.spec.network.clone(),
            e0: self.spec.e0.clone(),
            interactions: Vec::new(),
            perturbation: None,
            max_dim: self.spec.max_dim,
        })
    }
}

fn falling(n: u32, k: u32) -> f64 {
    (0..k).map(|j| (n - j) as f64).product()
}

/// Diagonal conserved quantities `Q_1..Q_{K−1}` with the Hamiltonian `Q_K`.
#[derive(Debug, Clone)]
pub struct ConservedSet {
    pub q: Vec<Vec<f64>>,
    pub h: SparseOperator,
    pub f: DMatrix<f64>,
}

impl ConservedSet {
    pub fn k(&self) -> usize {
        self.q.len() + 1
    }

    pub fn dim(&self) -> usize {
        self.h.dim()
    }
}

#[derive(Debug, Clone)]
pub struct Bipartition {
    pub s_modes: Vec<usize>,
    pub bath_modes: Vec<usize>,
    /// `map.full_index(a, t)` joins region index `a` with bath index `t`.
    pub map: SubsystemMap,
    pub dim_s: usize,
    pub dim_b: usize,
    /// `permutation[full] = a · dim_b + t`.
    pub permutation: Vec<usize>,
    /// Per species, `‖h1 − h1^S ⊕ h1^S̄‖₂`.
    pub h1_defects: Vec<f64>,
}

impl Bipartition {
    /// Reorder a full-space operator into region-major order.
    pub fn to_region_major(&self, op: &Operator) -> Operator {
        let n = op.nrows();
        let mut out = Operator::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                out[(self.permutation[i], self.permutation[j])] = op[(i, j)];
            }
        }
        out
    }
}

/// Dirichlet discrete Laplacian `(2, −1)/ε²` on `nsites` points.
pub fn discrete_laplacian(nsites: usize, eps: f64) -> DMatrix<f64> {
    let s = 1.0 / (eps * eps);
    DMatrix::from_fn(nsites, nsites, |i, j| {
        if i == j {
            2.0 * s
        } else if i.abs_diff(j) == 1 {
            -s
        } else {
            0.0
        }
    })
}

/// `‖Δ − Δ_left ⊕ Δ_right‖₂` for the cut after `split` sites.
pub fn laplacian_block_defect(nsites: usize, split: usize, eps: f64) -> f64 {
    let d = discrete_laplacian(nsites, eps);
    let mut blocks = d.clone();
    for i in 0..nsites {
        for j in 0..nsites {
            if (i < split) != (j < split) {
                blocks[(i, j)] = 0.0;
            }
        }
    }
    (d - blocks).norm()
}

/// Single-species hard-core chain with the given on-site energies and
/// hopping, zero ground energy and no reactions.
pub fn hard_core_chain(onsite: &[f64], hopping: f64, perturbation: Option<Perturbation>) -> Result<LatticeFockModel> {
    LatticeFockModel::new(ModelSpec {
        species: vec![Species::chain("A", 1, onsite, hopping)],
        network: ReactionNetwork::empty(1)?,
        e0: vec![0.0],
        interactions: Vec::new(),
        perturbation,
        max_dim: DEFAULT_MAX_DIM,
    })
}

/// Hard-core sites with on-site energies `0, 1, …, n−1`.
pub fn staircase_sites(n: usize) -> Result<LatticeFockModel> {
    let e: Vec<f64> = (0..n).map(|j| j as f64).collect();
    hard_core_chain(&e, 0.0, None)
}

/// `A + B ⇌ C` on one hard-core mode per species with `E0 = (0, 0, −δE)`.
pub fn binding_model(omega: [f64; 3], released_energy: f64, amplitude: f64) -> Result<LatticeFockModel> {
    let network = crate::stoich::binding_network(released_energy);
    let species = ["A", "B", "C"]
        .iter()
        .zip(omega)
        .map(|(n, w)| Species::chain(n, 1, &[w], 0.0))
        .collect();
    LatticeFockModel::new(ModelSpec {
        species,
        network,
        e0: vec![0.0, 0.0, -released_energy],
        interactions: vec![Interaction { reaction: 0, amplitude, site_tuples: vec![vec![0, 0, 0]] }],
        perturbation: None,
        max_dim: DEFAULT_MAX_DIM,
    })
}
