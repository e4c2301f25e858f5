//! Reaction-network stoichiometry over the rationals.
//!
//! A reaction `Σ ν_i A_i ⇌ Σ ν̃_i A_i` changes particle numbers by `ν̃ − ν`.
//! The span of these vectors is the reaction space; conserved linear
//! combinations of particle numbers are the rows of a matrix `F` whose rows
//! span its orthogonal complement.

use nalgebra::{DMatrix, DVector};
use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

pub type Rational = BigRational;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reaction {
    /// Consumed quanta `ν` per species.
    pub lhs: Vec<u32>,
    /// Produced quanta `ν̃` per species.
    pub rhs: Vec<u32>,
    /// Energy `δE` released when the reaction runs left to right.
    pub released_energy: f64,
}

impl Reaction {
    /// `ν̃ − ν`
    pub fn vector(&self) -> Vec<i64> {
        self.rhs.iter().zip(&self.lhs).map(|(&p, &c)| p as i64 - c as i64).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReactionNetwork {
    species: usize,
    reactions: Vec<Reaction>,
}

impl ReactionNetwork {
    pub fn new(species: usize, reactions: Vec<Reaction>) -> Result<Self> {
        if species == 0 {
            return Err(Error::InvalidInput("a reaction network needs at least one species".into()));
        }
        for (l, r) in reactions.iter().enumerate() {
            if r.lhs.len() != species || r.rhs.len() != species {
                return Err(Error::InvalidInput(format!(
                    "reaction {l} has coefficient vectors of length {}/{}, expected {species}",
                    r.lhs.len(),
                    r.rhs.len()
                )));
            }
            if r.lhs == r.rhs {
                return Err(Error::InvalidInput(format!("reaction {l} does not change any particle number")));
            }
            if !r.released_energy.is_finite() {
                return Err(Error::InvalidInput(format!("reaction {l} has a non-finite energy")));
            }
        }
        Ok(Self { species, reactions })
    }

    pub fn empty(species: usize) -> Result<Self> {
        Self::new(species, Vec::new())
    }

    pub fn species(&self) -> usize {
        self.species
    }

    pub fn reactions(&self) -> &[Reaction] {
        &self.reactions
    }

    pub fn reaction_vectors(&self) -> Vec<Vec<i64>> {
        self.reactions.iter().map(Reaction::vector).collect()
    }
}

/// `A + B ⇌ C` with `δE` released on binding.
pub fn binding_network(released_energy: f64) -> ReactionNetwork {
    ReactionNetwork::new(
        3,
        vec![Reaction { lhs: vec![1, 1, 0], rhs: vec![0, 0, 1], released_energy }],
    )
    .expect("static network is valid")
}

/// Seeded random network with coefficients in `0..=max_coeff`.
pub fn random_network(species: usize, reactions: usize, max_coeff: u32, seed: u64) -> ReactionNetwork {
    let mut rng = rng_from_seed(seed);
    let mut list = Vec::with_capacity(reactions);
    while list.len() < reactions {
        let lhs: Vec<u32> = (0..species).map(|_| rng.random_range(0..=max_coeff)).collect();
        let rhs: Vec<u32> = (0..species).map(|_| rng.random_range(0..=max_coeff)).collect();
        if lhs != rhs {
            list.push(Reaction { lhs, rhs, released_energy: rng.random_range(-2.0..2.0) });
        }
    }
    ReactionNetwork::new(species, list).expect("generated network is valid")
}

fn rat(x: i64) -> Rational {
    Rational::from_integer(BigInt::from(x))
}

fn to_f64(x: &Rational) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// Reduced row echelon form in place; returns pivot columns.
fn rref(m: &mut Vec<Vec<Rational>>) -> Vec<usize> {
    let rows = m.len();
    let cols = m.first().map_or(0, Vec::len);
    let mut pivots = Vec::new();
    let mut r = 0;
    for col in 0..cols {
        if r == rows {
            break;
        }
        let Some(p) = (r..rows).find(|&i| !m[i][col].is_zero()) else {
            continue;
        };
        m.swap(r, p);
        let inv = m[r][col].recip();
        for x in m[r].iter_mut() {
            *x = &*x * &inv;
        }
        for i in 0..rows {
            if i != r && !m[i][col].is_zero() {
                let f = m[i][col].clone();
                for j in 0..cols {
                    let sub = &f * &m[r][j];
                    m[i][j] = &m[i][j] - sub;
                }
            }
        }
        pivots.push(col);
        r += 1;
    }
    m.truncate(r);
    pivots
}

/// Basis of `{x : M x = 0}` for an `rows × cols` rational matrix.
fn nullspace(m: &[Vec<Rational>], cols: usize) -> Vec<Vec<Rational>> {
    let mut a = m.to_vec();
    let pivots = rref(&mut a);
    let free: Vec<usize> = (0..cols).filter(|c| !pivots.contains(c)).collect();
    free.iter()
        .map(|&f| {
            let mut v = vec![Rational::zero(); cols];
            v[f] = Rational::one();
            for (row, &p) in pivots.iter().enumerate() {
                v[p] = -a[row][f].clone();
            }
            v
        })
        .collect()
}

fn rank(m: &[Vec<Rational>]) -> usize {
    let mut a = m.to_vec();
    rref(&mut a).len()
}

fn rational_rows(vs: &[Vec<i64>]) -> Vec<Vec<Rational>> {
    vs.iter().map(|v| v.iter().map(|&x| rat(x)).collect()).collect()
}

/// Linearly independent subset of the reaction vectors spanning `ℒ`, chosen
/// greedily in reaction order.
pub fn reaction_space(net: &ReactionNetwork) -> Vec<Vec<i64>> {
    let mut basis: Vec<Vec<i64>> = Vec::new();
    for v in net.reaction_vectors() {
        let mut trial = basis.clone();
        trial.push(v.clone());
        if rank(&rational_rows(&trial)) == trial.len() {
            basis.push(v);
        }
    }
    basis
}

/// Rows spanning the orthogonal complement of the reaction space, in reduced
/// row echelon form with unit pivots.
#[derive(Debug, Clone, PartialEq)]
pub struct ConservedMatrix {
    rows: Vec<Vec<Rational>>,
    species: usize,
}

impl ConservedMatrix {
    pub fn from_rows(rows: Vec<Vec<Rational>>, species: usize) -> Result<Self> {
        if rows.iter().any(|r| r.len() != species) {
            return Err(Error::InvalidInput("conserved matrix rows have the wrong length".into()));
        }
        if rank(&rows) != rows.len() {
            return Err(Error::InvalidInput("conserved matrix rows are linearly dependent".into()));
        }
        Ok(Self { rows, species })
    }

    pub fn from_f64_rows(rows: &[Vec<f64>], species: usize) -> Result<Self> {
        let mut out = Vec::with_capacity(rows.len());
        for r in rows {
            let mut row = Vec::with_capacity(r.len());
            for &x in r {
                row.push(Rational::from_float(x).ok_or_else(|| Error::InvalidInput(format!("non-finite F entry {x}")))?);
            }
            out.push(row);
        }
        Self::from_rows(out, species)
    }

    pub fn rows(&self) -> &[Vec<Rational>] {
        &self.rows
    }

    /// Number of rows, `K − 1`.
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn species(&self) -> usize {
        self.species
    }

    /// `K`, counting the energy as the last conserved quantity.
    pub fn k(&self) -> usize {
        self.rows.len() + 1
    }

    pub fn to_f64(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows.len(), self.species, |i, j| to_f64(&self.rows[i][j]))
    }

    /// Rows scaled to primitive integer vectors with positive leading entry.
    pub fn integer_rows(&self) -> Vec<Vec<i64>> {
        self.rows
            .iter()
            .map(|row| {
                let lcm = row.iter().fold(BigInt::one(), |acc, x| acc.lcm(x.denom()));
                let ints: Vec<BigInt> = row.iter().map(|x| (x * Rational::from_integer(lcm.clone())).to_integer()).collect();
                let g = ints.iter().fold(BigInt::zero(), |acc, x| acc.gcd(x));
                let g = if g.is_zero() { BigInt::one() } else { g };
                let lead_neg = ints.iter().find(|x| !x.is_zero()).is_some_and(|x| x.is_negative());
                ints.iter()
                    .map(|x| {
                        let v = (x / &g).to_i64().unwrap_or(i64::MAX);
                        if lead_neg { -v } else { v }
                    })
                    .collect()
            })
            .collect()
    }

    /// `F v` computed exactly.
    pub fn apply(&self, v: &[i64]) -> Vec<Rational> {
        self.rows
            .iter()
            .map(|row| row.iter().zip(v).fold(Rational::zero(), |acc, (f, &x)| acc + f * rat(x)))
            .collect()
    }

    /// Whether the row space equals the span of `other` (exact).
    pub fn same_row_space(&self, other: &[Vec<i64>]) -> bool {
        let o = rational_rows(other);
        let r_self = rank(&self.rows);
        let r_other = rank(&o);
        let mut joint = self.rows.clone();
        joint.extend(o);
        r_self == r_other && rank(&joint) == r_self
    }

    /// Left-multiply by an invertible `(K−1)×(K−1)` matrix, skipping the
    /// canonicalization so that the transformed rows are kept as given.
    pub fn transformed(&self, g: &[Vec<Rational>]) -> Result<Self> {
        let n = self.rows.len();
        if g.len() != n || g.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidInput("transform has the wrong shape".into()));
        }
        if rank(g) != n {
            return Err(Error::InvalidInput("transform is singular".into()));
        }
        let rows = g
            .iter()
            .map(|grow| {
                (0..self.species)
                    .map(|j| grow.iter().zip(&self.rows).fold(Rational::zero(), |acc, (gk, frow)| acc + gk * &frow[j]))
                    .collect()
            })
            .collect();
        Ok(Self { rows, species: self.species })
    }
}

pub fn conserved_matrix(net: &ReactionNetwork) -> ConservedMatrix {
    let r = net.species();
    let vs = rational_rows(&net.reaction_vectors());
    let mut rows = nullspace(&vs, r);
    rref(&mut rows);
    ConservedMatrix { rows, species: r }
}

/// Ground energies solving `Σ_i E0_i (ν_ℓi − ν̃_ℓi) = δE_ℓ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundEnergies {
    pub e0: Vec<f64>,
    /// Directions in the unpinned coordinates along which `E0` may be shifted
    /// without violating any reaction equation.
    pub free_directions: Vec<Vec<f64>>,
    pub max_residual: f64,
}

/// Minimum-norm solution in the unpinned coordinates. `pins[i] = Some(x)`
/// fixes `E0_i = x`.
pub fn solve_ground_energies(net: &ReactionNetwork, pins: &[Option<f64>]) -> Result<GroundEnergies> {
    let r = net.species();
    if pins.len() != r {
        return Err(Error::InvalidInput(format!("{} pins for {r} species", pins.len())));
    }
    if let Some(x) = pins.iter().flatten().find(|x| !x.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite pin {x}")));
    }
    let free: Vec<usize> = (0..r).filter(|&i| pins[i].is_none()).collect();
    let vs = net.reaction_vectors();
    let l = vs.len();
    // −v_ℓ · E0 = δE_ℓ  ⇒  A x = b over the unpinned coordinates
    let a = DMatrix::from_fn(l, free.len(), |row, col| -(vs[row][free[col]] as f64));
    let b = DVector::from_fn(l, |row, _| {
        let pinned: f64 = (0..r).filter_map(|i| pins[i].map(|x| vs[row][i] as f64 * x)).sum();
        net.reactions()[row].released_energy + pinned
    });
    let mut e0: Vec<f64> = pins.iter().map(|p| p.unwrap_or(0.0)).collect();
    if !free.is_empty() && l > 0 {
        let svd = a.clone().svd(true, true);
        let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
        let x = svd
            .solve(&b, 1e-12 * smax.max(1.0))
            .map_err(|e| Error::InvalidInput(format!("ground-energy solve failed: {e}")))?;
        for (k, &i) in free.iter().enumerate() {
            e0[i] = x[k];
        }
    }
    let residuals = check_reaction_energies(net, &e0);
    let max_residual = residuals.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let scale = b.iter().fold(1.0_f64, |m, x| m.max(x.abs()));
    if max_residual > 1e-9 * scale {
        return Err(Error::Infeasible(format!(
            "reaction energies are inconsistent (residual {max_residual:e}); an energy-producing cycle exists"
        )));
    }
    let a_rat: Vec<Vec<Rational>> = vs.iter().map(|v| free.iter().map(|&i| rat(v[i])).collect()).collect();
    let kernel = if l == 0 {
        (0..free.len())
            .map(|k| (0..free.len()).map(|j| if j == k { Rational::one() } else { Rational::zero() }).collect())
            .collect()
    } else {
        nullspace(&a_rat, free.len())
    };
    let free_directions = kernel
        .iter()
        .map(|kv| {
            let mut full = vec![0.0; r];
            for (k, &i) in free.iter().enumerate() {
                full[i] = to_f64(&kv[k]);
            }
            full
        })
        .collect();
    Ok(GroundEnergies { e0, free_directions, max_residual })
}

/// `Σ_i E0_i (ν_ℓi − ν̃_ℓi) − δE_ℓ` per reaction.
pub fn check_reaction_energies(net: &ReactionNetwork, e0: &[f64]) -> Vec<f64> {
    net.reactions()
        .iter()
        .map(|re| -dot_i(&re.vector(), e0) - re.released_energy)
        .collect()
}

fn dot_i(v: &[i64], x: &[f64]) -> f64 {
    v.iter().zip(x).map(|(&a, &b)| a as f64 * b).sum()
}

/// `Σ_i (μ0_i + E0_i)(ν_ℓi − ν̃_ℓi)` per reaction; zero when the chemical
/// potentials are in equilibrium with every reaction.
pub fn check_chemical_constraints(mu0: &[f64], e0: &[f64], net: &ReactionNetwork) -> Result<Vec<f64>> {
    let r = net.species();
    if mu0.len() != r || e0.len() != r {
        return Err(Error::InvalidInput(format!("expected vectors of length {r}")));
    }
    let mu_star: Vec<f64> = mu0.iter().zip(e0).map(|(m, e)| m + e).collect();
    Ok(net.reactions().iter().map(|re| -dot_i(&re.vector(), &mu_star)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn a_to_b(de: f64) -> Reaction {
        Reaction { lhs: vec![1, 0], rhs: vec![0, 1], released_energy: de }
    }

    #[test]
    fn binding_reaction_space() {
        assert_eq!(reaction_space(&binding_network(1.0)), vec![vec![-1, -1, 1]]);
        assert!(reaction_space(&ReactionNetwork::empty(3).unwrap()).is_empty());
        let ab = ReactionNetwork::new(2, vec![a_to_b(0.0)]).unwrap();
        assert_eq!(reaction_space(&ab), vec![vec![-1, 1]]);
    }

    #[test]
    fn binding_conserved_matrix() {
        let f = conserved_matrix(&binding_network(1.0));
        assert_eq!(f.n_rows(), 2);
        assert!(f.same_row_space(&[vec![1, -1, 0], vec![1, 0, 1]]));
        assert_eq!(f.integer_rows(), vec![vec![1, 0, 1], vec![0, 1, 1]]);
        assert!(f.apply(&[-1, -1, 1]).iter().all(Zero::is_zero));
    }

    #[test]
    fn conserved_matrix_edge_cases() {
        let f = conserved_matrix(&ReactionNetwork::empty(3).unwrap());
        assert_eq!(f.integer_rows(), vec![vec![1, 0, 0], vec![0, 1, 0], vec![0, 0, 1]]);
        let f = conserved_matrix(&ReactionNetwork::new(2, vec![a_to_b(0.0)]).unwrap());
        assert_eq!(f.integer_rows(), vec![vec![1, 1]]);
    }

    #[test]
    fn dimension_formula_and_exact_kernel() {
        for seed in 0..50 {
            let net = random_network(4, 1 + (seed as usize % 4), 3, seed);
            let f = conserved_matrix(&net);
            assert_eq!(f.n_rows() + reaction_space(&net).len(), 4);
            for v in net.reaction_vectors() {
                assert!(f.apply(&v).iter().all(Zero::is_zero));
            }
        }
    }

    #[test]
    fn reaction_order_does_not_change_f() {
        let net = random_network(5, 3, 2, 9);
        let mut rev = net.reactions().to_vec();
        rev.reverse();
        let net2 = ReactionNetwork::new(5, rev).unwrap();
        assert_eq!(conserved_matrix(&net), conserved_matrix(&net2));
    }

    #[test]
    fn binding_ground_energies() {
        let de = 0.7;
        let g = solve_ground_energies(&binding_network(de), &[Some(0.0), Some(0.0), None]).unwrap();
        assert_eq!(g.e0[0], 0.0);
        assert!((g.e0[2] + de).abs() < 1e-12);
        assert!(g.free_directions.is_empty());
    }

    #[test]
    fn ground_energies_without_reactions() {
        let net = ReactionNetwork::empty(3).unwrap();
        let g = solve_ground_energies(&net, &[Some(1.5), None, None]).unwrap();
        assert_eq!(g.e0, vec![1.5, 0.0, 0.0]);
        assert_eq!(g.free_directions, vec![vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]);
    }

    #[test]
    fn energy_producing_cycle_is_infeasible() {
        let back = Reaction { lhs: vec![0, 1], rhs: vec![1, 0], released_energy: 1.0 };
        let net = ReactionNetwork::new(2, vec![a_to_b(1.0), back]).unwrap();
        assert!(matches!(solve_ground_energies(&net, &[None, None]), Err(Error::Infeasible(_))));
    }

    #[test]
    fn unpinned_solution_is_minimum_norm() {
        let net = ReactionNetwork::new(2, vec![a_to_b(1.0)]).unwrap();
        let g = solve_ground_energies(&net, &[None, None]).unwrap();
        // E_A − E_B = 1 with minimum norm → (1/2, −1/2)
        assert!((g.e0[0] - 0.5).abs() < 1e-12 && (g.e0[1] + 0.5).abs() < 1e-12);
        assert_eq!(g.free_directions, vec![vec![1.0, 1.0]]);
    }

    #[test]
    fn chemical_constraints() {
        let de = 0.7;
        let net = binding_network(de);
        let e0 = vec![0.0, 0.0, -de];
        let mu = vec![-0.3, 0.2, -0.3 + 0.2 + de];
        assert!(check_chemical_constraints(&mu, &e0, &net).unwrap()[0].abs() < 1e-15);
        let neg: Vec<f64> = e0.iter().map(|x| -x).collect();
        assert_eq!(check_chemical_constraints(&neg, &e0, &net).unwrap(), vec![0.0]);
        let ab = ReactionNetwork::new(2, vec![a_to_b(0.0)]).unwrap();
        let r = check_chemical_constraints(&[0.1, 0.0], &[0.0, 0.0], &ab).unwrap();
        assert!((r[0].abs() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn transformed_matrix_keeps_row_space() {
        let f = conserved_matrix(&binding_network(1.0));
        let g = vec![vec![rat(2), rat(0)], vec![rat(1), rat(3)]];
        let h = f.transformed(&g).unwrap();
        assert!(h.same_row_space(&f.integer_rows()));
        let singular = vec![vec![rat(1), rat(1)], vec![rat(1), rat(1)]];
        assert!(f.transformed(&singular).is_err());
    }
}
