//! Sampling from GAP measures and comparing sampled measures.
//!
//! `GAP(ρ)` is the Gaussian measure with covariance `ρ`, reweighted by
//! `‖ψ‖²` and projected to the unit sphere. The reweighting is done exactly:
//! `‖ψ‖² G(dψ) = Σ_m p_m ν_m(dψ)` where under `ν_m` the coordinate along
//! eigenvector `m` has `|z_m|² ~ Gamma(2, p_m)` and all other coordinates
//! stay Gaussian.

use rand::Rng as _;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qcore::{c, eigh, ensure_density, hs_norm, C64, Operator, StateVector};
use crate::rng::{stream, Rng};
use crate::stats::{ks_two_sample, summarize, KsResult};

/// Eigenvalues below this are treated as exact zeros.
pub const ZERO_WEIGHT: f64 = 1e-14;

#[derive(Debug, Clone)]
pub struct GapSampler {
    pub probs: Vec<f64>,
    pub vectors: Operator,
    pub dim: usize,
    cumulative: Vec<f64>,
}

impl GapSampler {
    pub fn new(rho: &Operator) -> Result<Self> {
        ensure_density(rho)?;
        let e = eigh(rho)?;
        Self::from_spectrum(e.values, e.vectors)
    }

    /// Sampler for `Σ_m p_m |m⟩⟨m|` with the columns of `vectors` as `|m⟩`.
    pub fn from_spectrum(probs: Vec<f64>, vectors: Operator) -> Result<Self> {
        let dim = vectors.nrows();
        if probs.len() != vectors.ncols() || probs.is_empty() {
            return Err(Error::InvalidInput("eigenvalue count does not match eigenvectors".into()));
        }
        let mut p: Vec<f64> = probs.iter().map(|&x| if x < ZERO_WEIGHT { 0.0 } else { x }).collect();
        let total: f64 = p.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidInput("density has no positive eigenvalue".into()));
        }
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidInput(format!("eigenvalues sum to {total}, not 1")));
        }
        p.iter_mut().for_each(|x| *x /= total);
        let mut acc = 0.0;
        let cumulative = p
            .iter()
            .map(|x| {
                acc += x;
                acc
            })
            .collect();
        Ok(Self { probs: p, vectors, dim, cumulative })
    }

    fn pick(&self, u: f64) -> usize {
        let target = u * self.cumulative.last().copied().unwrap_or(1.0);
        let m = self.cumulative.partition_point(|&c| c <= target).min(self.probs.len() - 1);
        // never land on a pinned coordinate
        if self.probs[m] > 0.0 {
            m
        } else {
            (0..self.probs.len()).rev().find(|&j| self.probs[j] > 0.0).unwrap_or(m)
        }
    }

    pub fn sample(&self, rng: &mut Rng) -> StateVector {
        loop {
            let m = self.pick(rng.random::<f64>());
            let mut z = StateVector::zeros(self.probs.len());
            for (j, &p) in self.probs.iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                if j == m {
                    let g = Gamma::new(2.0, p).expect("positive scale");
                    let r2: f64 = g.sample(rng);
                    let phase = rng.random::<f64>() * std::f64::consts::TAU;
                    z[j] = C64::from_polar(r2.sqrt(), phase);
                } else {
                    let s = (p / 2.0).sqrt();
                    let re: f64 = rng.sample(StandardNormal);
                    let im: f64 = rng.sample(StandardNormal);
                    z[j] = C64::new(re * s, im * s);
                }
            }
            let psi = &self.vectors * z;
            let n = psi.norm();
            if n > 0.0 {
                return psi / c(n);
            }
        }
    }

    /// `n` samples, sample `i` drawn from sub-stream `i` of `seed`.
    pub fn sample_n(&self, n: usize, seed: u64) -> Vec<StateVector> {
        (0..n).into_par_iter().map(|i| self.sample(&mut stream(seed, i as u64))).collect()
    }
}

pub fn gap_sample(rho: &Operator, n: usize, seed: u64) -> Result<Vec<StateVector>> {
    Ok(GapSampler::new(rho)?.sample_n(n, seed))
}

/// Mean of `|ψ⟩⟨ψ|` over the samples.
pub fn empirical_density(samples: &[StateVector]) -> Result<Operator> {
    let first = samples.first().ok_or_else(|| Error::InvalidInput("no samples".into()))?;
    let d = first.len();
    let mut acc = Operator::zeros(d, d);
    for s in samples {
        acc.gerc(c(1.0), s, s, c(1.0));
    }
    Ok(acc / c(samples.len() as f64))
}

/// One component of a mixture of GAP measures. `embedding` maps the
/// component's space into the ambient space; `None` means the component
/// already lives on the ambient space.
#[derive(Debug, Clone)]
pub struct MixtureComponent {
    pub weight: f64,
    pub rho: Operator,
    pub embedding: Option<Operator>,
    pub label: Vec<f64>,
}

impl MixtureComponent {
    pub fn ambient_density(&self) -> Operator {
        match &self.embedding {
            Some(e) => e * &self.rho * e.adjoint(),
            None => self.rho.clone(),
        }
    }

    /// Projector onto the support of the component in the ambient space.
    fn support_projector(&self) -> Result<Operator> {
        let e = eigh(&self.rho)?;
        let cols: Vec<StateVector> =
            (0..e.dim()).filter(|&i| e.values[i] >= ZERO_WEIGHT).map(|i| e.vector(i)).collect();
        let v = Operator::from_columns(&cols);
        let v = match &self.embedding {
            Some(emb) => emb * v,
            None => v,
        };
        Ok(&v * v.adjoint())
    }
}

#[derive(Debug, Clone)]
pub struct MixtureSpec {
    pub ambient_dim: usize,
    pub components: Vec<MixtureComponent>,
    samplers: Vec<GapSampler>,
}

impl MixtureSpec {
    /// Validates the weights and, when `orthogonal` is set, that the
    /// component supports are mutually orthogonal.
    pub fn new(ambient_dim: usize, components: Vec<MixtureComponent>, orthogonal: bool) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidInput("mixture has no components".into()));
        }
        if components.iter().any(|c| !(c.weight >= 0.0)) {
            return Err(Error::InvalidInput("negative mixture weight".into()));
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidInput(format!("mixture weights sum to {total}")));
        }
        for comp in &components {
            let rows = comp.embedding.as_ref().map_or(comp.rho.nrows(), |e| e.nrows());
            if rows != ambient_dim {
                return Err(Error::InvalidInput("component does not embed into the ambient space".into()));
            }
            if let Some(e) = &comp.embedding {
                if e.ncols() != comp.rho.nrows() {
                    return Err(Error::InvalidInput("embedding width differs from component dimension".into()));
                }
            }
        }
        if orthogonal {
            let supports: Vec<Operator> = components.iter().map(|c| c.support_projector()).collect::<Result<_>>()?;
            for i in 0..supports.len() {
                for j in i + 1..supports.len() {
                    let r = hs_norm(&(&supports[i] * &supports[j]));
                    if r > 1e-10 {
                        return Err(Error::InvalidInput(format!(
                            "supports of components {i} and {j} overlap ({r:e})"
                        )));
                    }
                }
            }
        }
        let samplers = components.iter().map(|c| GapSampler::new(&c.rho)).collect::<Result<_>>()?;
        Ok(Self { ambient_dim, components, samplers })
    }

    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.weight).collect()
    }

    /// `Σ_j w_j ρ_j` on the ambient space.
    pub fn mean_density(&self) -> Operator {
        self.components
            .iter()
            .fold(Operator::zeros(self.ambient_dim, self.ambient_dim), |acc, comp| {
                acc + comp.ambient_density() * c(comp.weight)
            })
    }

    pub fn sampler(&self, j: usize) -> &GapSampler {
        &self.samplers[j]
    }

    fn draw(&self, rng: &mut Rng) -> (usize, StateVector) {
        let u: f64 = rng.random::<f64>();
        let mut acc = 0.0;
        let mut j = self.components.len() - 1;
        for (i, comp) in self.components.iter().enumerate() {
            acc += comp.weight;
            if u < acc && comp.weight > 0.0 {
                j = i;
                break;
            }
        }
        while self.components[j].weight == 0.0 && j > 0 {
            j -= 1;
        }
        let psi = self.samplers[j].sample(rng);
        let psi = match &self.components[j].embedding {
            Some(e) => e * psi,
            None => psi,
        };
        (j, psi)
    }
}

/// `n` draws of (component index, ambient state).
pub fn mixture_sample(spec: &MixtureSpec, n: usize, seed: u64) -> Vec<(usize, StateVector)> {
    (0..n).into_par_iter().map(|i| spec.draw(&mut stream(seed, i as u64))).collect()
}

/// `|⟨φ|ψ⟩|²` for every sample.
pub fn probe_values(samples: &[StateVector], probe: &StateVector) -> Vec<f64> {
    samples.iter().map(|s| probe.dotc(s).norm_sqr()).collect()
}

/// Comparison of two sampled measures along one probe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeComparison {
    pub mean_a: f64,
    pub mean_b: f64,
    pub difference: f64,
    pub std_error: f64,
    pub ks: KsResult,
}

impl ProbeComparison {
    /// `|difference| / std_error`, with the error floored at 1e-12 so that
    /// rounding noise between degenerate samples does not register.
    pub fn z_score(&self) -> f64 {
        self.difference.abs() / self.std_error.max(1e-12)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureDistance {
    pub probes: Vec<ProbeComparison>,
    /// HS distance of the two empirical density matrices.
    pub hs_distance: f64,
}

impl MeasureDistance {
    pub fn max_z(&self) -> f64 {
        self.probes.iter().map(ProbeComparison::z_score).fold(0.0, f64::max)
    }

    pub fn min_ks_p(&self) -> f64 {
        self.probes.iter().map(|p| p.ks.p_value).fold(1.0, f64::min)
    }

    pub fn within(&self, sigmas: f64) -> bool {
        self.probes.iter().all(|p| p.z_score() <= sigmas)
    }
}

pub fn measure_distance(a: &[StateVector], b: &[StateVector], probes: &[StateVector]) -> Result<MeasureDistance> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidInput("both sample sets must be nonempty".into()));
    }
    let probes = probes
        .iter()
        .map(|phi| {
            let fa = probe_values(a, phi);
            let fb = probe_values(b, phi);
            let (sa, sb) = (summarize(&fa), summarize(&fb));
            ProbeComparison {
                mean_a: sa.mean,
                mean_b: sb.mean,
                difference: sa.mean - sb.mean,
                std_error: crate::stats::pooled_std_error(&sa, &sb),
                ks: ks_two_sample(&fa, &fb),
            }
        })
        .collect();
    let hs_distance = hs_norm(&(empirical_density(a)? - empirical_density(b)?));
    Ok(MeasureDistance { probes, hs_distance })
}

/// Computational basis followed by 8 Haar-random unit vectors.
pub fn default_probes(dim: usize, seed: u64) -> Vec<StateVector> {
    let mut out: Vec<StateVector> = (0..dim).map(|i| crate::qcore::basis_vector(dim, i)).collect();
    out.extend((0..8).map(|k| crate::qcore::haar_state_with(dim, &mut stream(seed, k))));
    out
}
