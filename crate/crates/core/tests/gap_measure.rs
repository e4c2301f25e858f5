use gclab::gapm::*;
use gclab::qcore::{
    basis_vector, c, diagonal, gaussian_vector, haar_state_with, haar_unitary, hermitian_function, hs_norm, random_density,
    Operator, StateVector,
};
use gclab::rng::{rng_from_seed, stream};
use gclab::stats::{ks_two_sample, summarize};

fn overlap(phi: &StateVector, psi: &StateVector) -> f64 {
    phi.dotc(psi).norm_sqr()
}

#[test]
fn empirical_density_converges_for_five_states() {
    let n = 20_000;
    for (k, dim) in [2usize, 3, 5, 8, 16].into_iter().enumerate() {
        let rho = random_density(dim, dim, &mut rng_from_seed(100 + k as u64));
        let samples = gap_sample(&rho, n, 7 + k as u64).unwrap();
        let dist = hs_norm(&(empirical_density(&samples).unwrap() - &rho));
        assert!(dist < 6.0 / (n as f64).sqrt(), "dim {dim}: {dist}");
    }
}

#[test]
fn maximally_mixed_gap_is_haar() {
    let d = 4;
    let rho = Operator::identity(d, d) / c(d as f64);
    let gap = gap_sample(&rho, 10_000, 3).unwrap();
    let haar: Vec<StateVector> = (0..10_000).map(|i| haar_state_with(d, &mut stream(99, i))).collect();
    let e0 = basis_vector(d, 0);
    let a: Vec<f64> = gap.iter().map(|s| overlap(&e0, s)).collect();
    let b: Vec<f64> = haar.iter().map(|s| overlap(&e0, s)).collect();
    assert!(ks_two_sample(&a, &b).p_value > 0.01);
}

#[test]
fn biased_qubit_first_moment() {
    let samples = gap_sample(&diagonal(&[0.9, 0.1]), 10_000, 5).unwrap();
    let s = summarize(&probe_values(&samples, &basis_vector(2, 0)));
    assert!((s.mean - 0.9).abs() < 3.0 * s.std_error);
}

/// `E_GAP f = E_G[‖ψ‖² f(ψ/‖ψ‖)]` with `ψ = √ρ g`, `g` standard complex
/// Gaussian; estimated as a self-normalized importance average.
fn reweighted_moment(rho: &Operator, probe: &StateVector, power: i32, n: usize, seed: u64) -> (f64, f64) {
    let root = hermitian_function(rho, |x| x.max(0.0).sqrt()).unwrap();
    let mut rng = rng_from_seed(seed);
    let mut w = Vec::with_capacity(n);
    let mut wf = Vec::with_capacity(n);
    for _ in 0..n {
        let psi = &root * gaussian_vector(rho.nrows(), &mut rng);
        let norm2 = psi.norm_squared();
        let f = (probe.dotc(&psi).norm_sqr() / norm2).powi(power);
        w.push(norm2);
        wf.push(norm2 * f);
    }
    let mw = w.iter().sum::<f64>() / n as f64;
    let est = wf.iter().sum::<f64>() / w.iter().sum::<f64>();
    let resid: Vec<f64> = w.iter().zip(&wf).map(|(a, b)| (b - est * a) / mw).collect();
    (est, summarize(&resid).std_error)
}

#[test]
fn size_bias_sampler_matches_importance_oracle() {
    for (k, dim) in [2usize, 3, 4].into_iter().enumerate() {
        let rho = random_density(dim, dim, &mut rng_from_seed(40 + k as u64));
        let samples = gap_sample(&rho, 40_000, 11 + k as u64).unwrap();
        for probe in default_probes(dim, 5).iter().take(dim + 2) {
            for power in [1, 2] {
                let vals: Vec<f64> = samples.iter().map(|s| overlap(probe, s).powi(power)).collect();
                let a = summarize(&vals);
                let (b, se_b) = reweighted_moment(&rho, probe, power, 40_000, 77 + k as u64);
                let z = (a.mean - b).abs() / (a.std_error.powi(2) + se_b.powi(2)).sqrt();
                assert!(z < 4.0, "dim {dim} power {power}: z = {z}");
            }
        }
    }
}

#[test]
fn unitary_covariance() {
    let d = 3;
    let rho = random_density(d, d, &mut rng_from_seed(8));
    let u = haar_unitary(d, 9);
    let rotated = &u * &rho * u.adjoint();
    let a: Vec<StateVector> = gap_sample(&rho, 10_000, 1).unwrap().iter().map(|s| &u * s).collect();
    let b = gap_sample(&rotated, 10_000, 2).unwrap();
    let md = measure_distance(&a, &b, &default_probes(d, 3)).unwrap();
    assert!(md.within(4.0), "max z {}", md.max_z());
    assert!(md.min_ks_p() > 1e-3);
}

#[test]
fn two_component_mixture() {
    let w = 0.3;
    let comp = |weight: f64, j: usize| MixtureComponent {
        weight,
        rho: Operator::identity(1, 1),
        embedding: Some(Operator::from_columns(&[basis_vector(2, j)])),
        label: vec![j as f64],
    };
    let spec = MixtureSpec::new(2, vec![comp(w, 0), comp(1.0 - w, 1)], true).unwrap();
    let n = 20_000;
    let draws = mixture_sample(&spec, n, 4);
    let freq = draws.iter().filter(|(j, _)| *j == 0).count() as f64 / n as f64;
    let se = (w * (1.0 - w) / n as f64).sqrt();
    assert!((freq - w).abs() < 3.0 * se);
    let samples: Vec<StateVector> = draws.into_iter().map(|x| x.1).collect();
    let emp = empirical_density(&samples).unwrap();
    assert!((emp[(0, 0)].re - w).abs() < 3.0 * se);
    assert!(hs_norm(&(emp - diagonal(&[w, 1.0 - w]))) < 6.0 / (n as f64).sqrt());
}

#[test]
fn mixture_density_is_weighted_sum() {
    let r1 = random_density(2, 2, &mut rng_from_seed(1));
    let r2 = random_density(3, 2, &mut rng_from_seed(2));
    let e1 = Operator::from_columns(&[basis_vector(5, 0), basis_vector(5, 1)]);
    let e2 = Operator::from_columns(&[basis_vector(5, 2), basis_vector(5, 3), basis_vector(5, 4)]);
    let spec = MixtureSpec::new(
        5,
        vec![
            MixtureComponent { weight: 0.6, rho: r1, embedding: Some(e1), label: vec![0.0] },
            MixtureComponent { weight: 0.4, rho: r2, embedding: Some(e2), label: vec![1.0] },
        ],
        true,
    )
    .unwrap();
    let n = 20_000;
    let samples: Vec<StateVector> = mixture_sample(&spec, n, 6).into_iter().map(|x| x.1).collect();
    let dist = hs_norm(&(empirical_density(&samples).unwrap() - spec.mean_density()));
    assert!(dist < 6.0 / (n as f64).sqrt());
}

#[test]
fn single_component_mixture_is_plain_gap() {
    let rho = random_density(3, 3, &mut rng_from_seed(12));
    let spec = MixtureSpec::new(
        3,
        vec![MixtureComponent { weight: 1.0, rho: rho.clone(), embedding: None, label: vec![] }],
        true,
    )
    .unwrap();
    let a: Vec<StateVector> = mixture_sample(&spec, 5000, 1).into_iter().map(|x| x.1).collect();
    let b = gap_sample(&rho, 5000, 2).unwrap();
    assert!(measure_distance(&a, &b, &default_probes(3, 1)).unwrap().within(4.0));
}

#[test]
fn measure_distance_sees_first_moment_gap() {
    let a = gap_sample(&diagonal(&[0.5, 0.5]), 10_000, 1).unwrap();
    let b = gap_sample(&diagonal(&[0.9, 0.1]), 10_000, 2).unwrap();
    let md = measure_distance(&a, &b, &[basis_vector(2, 0)]).unwrap();
    let p = &md.probes[0];
    assert!((p.difference.abs() - 0.4).abs() < 3.0 * p.std_error);
}

#[test]
fn independent_seeds_are_not_rejected() {
    let d = 4;
    let rho = random_density(d, d, &mut rng_from_seed(21));
    let a = gap_sample(&rho, 5000, 1).unwrap();
    let b = gap_sample(&rho, 5000, 2).unwrap();
    let probes: Vec<StateVector> = (0..20).map(|i| haar_state_with(d, &mut stream(33, i))).collect();
    let md = measure_distance(&a, &b, &probes).unwrap();
    assert!(md.min_ks_p() > 1e-3);
}

#[test]
fn rank_deficient_density_stays_in_support() {
    let rho = diagonal(&[0.5, 0.5, 0.0]);
    for s in gap_sample(&rho, 1000, 3).unwrap() {
        assert_eq!(s[2].norm(), 0.0);
        assert!((s.norm() - 1.0).abs() < 1e-12);
    }
}
