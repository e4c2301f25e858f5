//! Numerical checks of the auxiliary lemmas: recovery of `Q^b` from a
//! three-factor splitting, invariance under a change of `F`, the
//! ground-energy gauge, the spread of a power-law density and the block
//! defect of the discrete Laplacian.

use nalgebra::DMatrix;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

use crate::ensembles::{solve_lambda, lambda_from_mu, EnsembleSpec, GrandCanonical, ModelEnsemble, Window};
use crate::error::{Error, Result};
use crate::model::{binding_model, laplacian_block_defect, LatticeFockModel};
use crate::qcore::{
    c, hermitian_function, hs_norm, identity, max_abs, partial_trace, random_hermitian, tensor, trace_distance,
    Factorization, Operator,
};
use crate::rng::{rng_from_seed, stream};
use crate::stoich::{ConservedMatrix, Rational};
use rand::Rng as _;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub residual: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub inputs: String,
}

impl CheckResult {
    pub fn new(name: impl Into<String>, residual: f64, tolerance: f64, inputs: impl Into<String>) -> Self {
        Self { name: name.into(), residual, tolerance, pass: residual <= tolerance, inputs: inputs.into() }
    }
}

/// `Q^b = (tr_a Q^{ab} − tr(Q^a) I^b) / dim_a`, after checking
/// `Q^a⊗I⊗I + I⊗Q^{bc} = Q^{ab}⊗I + I⊗I⊗Q^c`. The result is checked
/// against both two-factor splittings.
pub fn qb_recover(
    qa: &Operator,
    qab: &Operator,
    qbc: &Operator,
    qc: &Operator,
    dims: (usize, usize, usize),
) -> Result<(Operator, CheckResult)> {
    let (da, db, dc) = dims;
    if qa.nrows() != da || qab.nrows() != da * db || qbc.nrows() != db * dc || qc.nrows() != dc {
        return Err(Error::InvalidInput("operator sizes do not match the dimensions".into()));
    }
    let (ia, ib, ic) = (identity(da), identity(db), identity(dc));
    let lhs = tensor(&tensor(qa, &ib)?, &ic)? + tensor(&ia, qbc)?;
    let rhs = tensor(qab, &ic)? + tensor(&tensor(&ia, &ib)?, qc)?;
    let premise = max_abs(&(lhs - rhs));
    let scale = [qa, qab, qbc, qc].iter().map(|q| max_abs(q)).fold(1.0, f64::max);
    if premise > 1e-10 * scale {
        return Err(Error::PremiseViolated { residual: premise, context: "three-factor splitting does not hold".into() });
    }
    let fact = Factorization::unlabeled(&[da, db])?;
    let qb = (partial_trace(qab, &fact, &[1])? - &ib * qa.trace()) / c(da as f64);
    let r_bc = max_abs(&(qbc - (tensor(&qb, &ic)? + tensor(&ib, qc)?)));
    let r_ab = max_abs(&(qab - (tensor(qa, &ib)? + tensor(&ia, &qb)?)));
    let check = CheckResult::new("qb_recover", r_bc.max(r_ab), 1e-10 * scale, format!("dims=({da},{db},{dc})"));
    Ok((qb, check))
}

/// Seeded instances of the forward construction followed by recovery.
pub fn qb_round_trips(n: usize, seed: u64) -> Result<CheckResult> {
    let mut worst = 0.0f64;
    for i in 0..n {
        let mut rng = stream(seed, i as u64);
        let da = rng.random_range(1..=3);
        let db = rng.random_range(1..=3);
        let dc = rng.random_range(1..=3);
        let qa = random_hermitian(da, &mut rng);
        let qb = random_hermitian(db, &mut rng);
        let qc = random_hermitian(dc, &mut rng);
        let qab = tensor(&qa, &identity(db))? + tensor(&identity(da), &qb)?;
        let qbc = tensor(&qb, &identity(dc))? + tensor(&identity(db), &qc)?;
        let (rec, check) = qb_recover(&qa, &qab, &qbc, &qc, (da, db, dc))?;
        worst = worst.max(check.residual).max(max_abs(&(rec - qb)));
    }
    Ok(CheckResult::new("qb_round_trips", worst, 1e-10, format!("instances={n} seed={seed} dims<=(3,3,3)")))
}

fn gibbs_by_matrix_function(ens: &ModelEnsemble, lambda: &[f64]) -> Result<Operator> {
    let dim = ens.set.dim();
    let mut a = ens.set.h.to_dense()? * c(lambda[lambda.len() - 1]);
    for (k, q) in ens.set.q.iter().enumerate() {
        for i in 0..dim {
            a[(i, i)] += c(lambda[k] * q[i]);
        }
    }
    let top = crate::qcore::eigh(&a)?.values.last().copied().unwrap_or(0.0);
    let e = hermitian_function(&a, |x| (x - top).exp())?;
    let z = e.trace();
    Ok(e / z)
}

fn rational_matrix_f64(g: &[Vec<Rational>]) -> DMatrix<f64> {
    use num_traits::ToPrimitive;
    DMatrix::from_fn(g.len(), g.len(), |i, j| g[i][j].to_f64().unwrap_or(f64::NAN))
}

/// Compares `ρ_gG(F, λ)` with `ρ_gG(GF, G^{−T} λ)` once through a direct
/// matrix exponential and once through the solver on the transformed
/// targets `G·Q`.
pub fn f_transform_invariance(
    model: &LatticeFockModel,
    f: &ConservedMatrix,
    g: &[Vec<Rational>],
    lambda: &[f64],
) -> Result<CheckResult> {
    let gf = f.transformed(g)?;
    let k1 = f.n_rows();
    if lambda.len() != k1 + 1 {
        return Err(Error::InvalidInput(format!("{} parameters for {} quantities", lambda.len(), k1 + 1)));
    }
    let gm = rational_matrix_f64(g);
    let g_inv_t = gm.clone().try_inverse().ok_or_else(|| Error::InvalidInput("transform is singular".into()))?.transpose();
    let lam_head = nalgebra::DVector::from_column_slice(&lambda[..k1]);
    let mut lam_t: Vec<f64> = (g_inv_t * lam_head).iter().copied().collect();
    lam_t.push(lambda[k1]);

    let ens = ModelEnsemble::with_f(model, f.clone())?;
    let ens_t = ModelEnsemble::with_f(model, gf)?;
    let direct = trace_distance(&gibbs_by_matrix_function(&ens, lambda)?, &gibbs_by_matrix_function(&ens_t, &lam_t)?);

    let rho = ens.spectrum.density(lambda)?;
    let targets = ens.spectrum.expectations(lambda)?;
    let head = nalgebra::DVector::from_column_slice(&targets[..k1]);
    let mut targets_t: Vec<f64> = (&gm * head).iter().copied().collect();
    targets_t.push(targets[k1]);
    let solved = solve_lambda(&ens_t.spectrum, &targets_t)?;
    let via_solver = trace_distance(&rho, &ens_t.spectrum.density(&solved.lambda)?);
    Ok(CheckResult::new(
        "f_transform_invariance",
        direct.max(via_solver),
        1e-10,
        format!("dim={} G={:?} lambda={lambda:?} direct={direct:.3e} solver={via_solver:.3e}", model.dim(), gm.as_slice()),
    ))
}

/// Seeded integer matrix with determinant ±1, built from elementary row
/// operations.
pub fn random_unimodular(n: usize, seed: u64) -> Vec<Vec<Rational>> {
    let mut rng = rng_from_seed(seed);
    let mut g: Vec<Vec<i64>> = (0..n).map(|i| (0..n).map(|j| i64::from(i == j)).collect()).collect();
    if n > 1 {
        for _ in 0..3 * n {
            let i = rng.random_range(0..n);
            let mut j = rng.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            let m: i64 = if rng.random_bool(0.5) { rng.random_range(1..=2) } else { -rng.random_range(1..=2) };
            for col in 0..n {
                g[i][col] += m * g[j][col];
            }
        }
    }
    if rng.random_bool(0.5) {
        g[0].iter_mut().for_each(|x| *x = -*x);
    }
    g.into_iter().map(|r| r.into_iter().map(|x| Rational::from_integer(x.into())).collect()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaugeReport {
    pub check: CheckResult,
    /// `‖ρ_gc(Ẽ0, μ0) − ρ_gc(E0, μ0)‖_tr` through the Lagrange parameters.
    pub gibbs_distance: f64,
    /// `‖ρ_gc − exp(λ·Q − βH*)/Z‖_tr` for the shifted model.
    pub pipeline_distance: f64,
    /// Same comparison with `μ̃0 = μ0 − ε` held instead of `μ0`.
    pub shifted_mu_distance: f64,
    /// HS distance between the micro-canonical projectors, when every
    /// charge window is exact.
    pub projector_distance: Option<f64>,
}

fn orthogonality_residual(model: &LatticeFockModel, eps: &[f64]) -> f64 {
    model
        .network()
        .reaction_vectors()
        .iter()
        .map(|v| v.iter().zip(eps).map(|(&a, &b)| a as f64 * b).sum::<f64>().abs())
        .fold(0.0, f64::max)
}

fn with_e0(model: &LatticeFockModel, e0: Vec<f64>) -> Result<LatticeFockModel> {
    let mut spec = model.spec().clone();
    spec.e0 = e0;
    LatticeFockModel::new(spec)
}

/// Shifts the ground energies by `eps` orthogonal to every reaction vector
/// and checks that the grand-canonical state at fixed `β` and `μ0` is
/// unchanged, and that the micro-canonical projector is unchanged once the
/// energy window moves with the charges.
pub fn e0_gauge_invariance(
    model: &LatticeFockModel,
    eps: &[f64],
    beta: f64,
    mu0: &[f64],
    spec: Option<&EnsembleSpec>,
) -> Result<GaugeReport> {
    if eps.len() != model.n_species() {
        return Err(Error::InvalidInput("shift has the wrong length".into()));
    }
    let orth = orthogonality_residual(model, eps);
    if orth > 1e-12 {
        return Err(Error::PremiseViolated { residual: orth, context: "shift is not orthogonal to the reactions".into() });
    }
    let e0 = model.e0().to_vec();
    let e0_t: Vec<f64> = e0.iter().zip(eps).map(|(a, b)| a + b).collect();
    let shifted = with_e0(model, e0_t.clone())?;
    let ens = ModelEnsemble::additive(model, crate::stoich::conserved_matrix(model.network()))?;
    let ens_t = ModelEnsemble::additive(&shifted, ens.f.clone())?;
    let f = ens.f.to_f64();
    let (lam, _) = lambda_from_mu(&f, mu0, beta, &e0)?;
    let (lam_t, _) = lambda_from_mu(&f, mu0, beta, &e0_t)?;
    let rho = ens.spectrum.density(&lam)?;
    let rho_t = ens_t.spectrum.density(&lam_t)?;
    let gibbs_distance = trace_distance(&rho, &rho_t);
    let gc_t = GrandCanonical::new(&shifted, beta, mu0)?.density()?;
    let gc = GrandCanonical::new(model, beta, mu0)?.density()?;
    let pipeline_distance = trace_distance(&gc_t, &rho_t).max(trace_distance(&gc, &rho));
    let mu_shift: Vec<f64> = mu0.iter().zip(eps).map(|(m, e)| m - e).collect();
    let (lam_s, _) = lambda_from_mu(&f, &mu_shift, beta, &e0_t)?;
    let shifted_mu_distance = trace_distance(&rho, &ens_t.spectrum.density(&lam_s)?);

    let projector_distance = match spec {
        Some(spec) if spec.windows[..spec.windows.len() - 1].iter().all(|w| w.width == 0.0) => {
            let full = ModelEnsemble::new(model)?;
            let full_t = ModelEnsemble::new(&shifted)?;
            // eps = Fᵀ c, so H̃ = H + Σ c_k Q_k and the energy window moves by c·q
            let shift_c: Vec<f64> = lam_t.iter().zip(&lam).take(f.nrows()).map(|(a, b)| (a - b) / beta).collect();
            let k1 = spec.windows.len() - 1;
            let de: f64 = (0..k1).map(|k| shift_c[k] * spec.windows[k].upper).sum();
            let mut w = spec.windows.clone();
            w[k1] = Window::new(w[k1].upper + de, w[k1].width);
            let p = full.spectrum.gmc(spec)?.projector();
            let p_t = full_t.spectrum.gmc(&EnsembleSpec { windows: w })?.projector();
            Some(hs_norm(&(p - p_t)))
        }
        _ => None,
    };
    let residual = gibbs_distance.max(pipeline_distance).max(projector_distance.unwrap_or(0.0));
    Ok(GaugeReport {
        check: CheckResult::new(
            "e0_gauge_invariance",
            residual,
            1e-10,
            format!("eps={eps:?} beta={beta} mu0={mu0:?}"),
        ),
        gibbs_distance,
        pipeline_distance,
        shifted_mu_distance,
        projector_distance,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpreadReport {
    pub m: u32,
    pub q: f64,
    pub sigma_window: f64,
    pub sigma_window_formula: f64,
    pub sigma_exponential: f64,
    pub sigma_exponential_formula: f64,
    pub exponential_mean: f64,
    pub ratio: f64,
    pub check: CheckResult,
}

const QUAD_TOL: f64 = 1e-10;

fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64) -> Result<f64> {
    let out = quadrature::integrate(f, a, b, QUAD_TOL);
    if !(out.error_estimate <= QUAD_TOL) || !out.integral.is_finite() {
        return Err(Error::Quadrature(format!(
            "estimated error {:.3e} on [{a}, {b}] after {} evaluations",
            out.error_estimate, out.num_function_evaluations
        )));
    }
    Ok(out.integral)
}

/// Mean and standard deviation of the density proportional to `w` on `[a, b]`.
fn moments(w: impl Fn(f64) -> f64 + Copy, a: f64, b: f64) -> Result<(f64, f64)> {
    let z = integrate(w, a, b)?;
    let mean = integrate(|x| x * w(x), a, b)? / z;
    let var = integrate(|x| (x - mean) * (x - mean) * w(x), a, b)? / z;
    Ok((mean, var.sqrt()))
}

/// Standard deviations of `q^M` on `(0, Q)` and of `q^M e^{−λq}` on
/// `(0, ∞)` with `λ = (M+1)/Q`, by quadrature, against the closed forms.
/// Integration runs in `u = q/Q`; the half line is cut where the weight
/// falls below `1e-40` of its peak.
pub fn spread_lemma_check(m: u32, q: f64) -> Result<SpreadReport> {
    if m < 1 || !(q > 0.0) {
        return Err(Error::InvalidInput(format!("need M ≥ 1 and Q > 0, got M={m}, Q={q}")));
    }
    let mf = m as f64;
    let (_, s_win) = moments(|u: f64| u.powf(mf), 0.0, 1.0)?;
    let lam = mf + 1.0;
    let peak = mf / lam;
    let log_w = move |u: f64| mf * u.ln() - lam * u - (mf * peak.ln() - lam * peak);
    let mut cut = 2.0;
    while log_w(cut) > -40.0 * std::f64::consts::LN_10 {
        cut *= 1.5;
    }
    let w_exp = move |u: f64| if u <= 0.0 { 0.0 } else { log_w(u).exp() };
    let (mean_exp, s_exp) = moments(w_exp, 0.0, cut)?;
    let sigma_window = q * s_win;
    let sigma_exponential = q * s_exp;
    let sigma_window_formula = q * (mf + 1.0).sqrt() / ((mf + 2.0) * (mf + 3.0).sqrt());
    let sigma_exponential_formula = q / (mf + 1.0).sqrt();
    let rel = ((sigma_window - sigma_window_formula) / sigma_window_formula)
        .abs()
        .max(((sigma_exponential - sigma_exponential_formula) / sigma_exponential_formula).abs())
        .max((mean_exp - 1.0).abs());
    Ok(SpreadReport {
        m,
        q,
        sigma_window,
        sigma_window_formula,
        sigma_exponential,
        sigma_exponential_formula,
        exponential_mean: q * mean_exp,
        ratio: sigma_exponential / sigma_window,
        check: CheckResult::new(format!("spread_lemma_m{m}"), rel, 1e-8, format!("M={m} Q={q}")),
    })
}

/// Block defect of the Dirichlet Laplacian against `√2/ε²`.
pub fn laplacian_check(nsites: usize, split: usize, eps: f64) -> CheckResult {
    let defect = laplacian_block_defect(nsites, split, eps);
    let expected = std::f64::consts::SQRT_2 / (eps * eps);
    CheckResult::new(
        "laplacian_defect",
        (defect - expected).abs() / expected,
        1e-14,
        format!("nsites={nsites} split={split} eps={eps} defect={defect}"),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub seed: u64,
    pub checks: Vec<CheckResult>,
    pub spread: Vec<SpreadReport>,
    pub gauge: GaugeReport,
    pub all_pass: bool,
}

fn rat(num: i64, den: i64) -> Rational {
    Rational::new(num.into(), den.into())
}

/// Every check on seeded default inputs.
pub fn run_suite(seed: u64) -> Result<SuiteReport> {
    let mut checks = vec![qb_round_trips(100, seed)?];
    let zero = Operator::zeros(2, 2);
    let (qb0, mut c0) = qb_recover(&zero, &Operator::zeros(4, 4), &Operator::zeros(4, 4), &zero, (2, 2, 2))?;
    c0.name = "qb_recover_zero".into();
    c0.residual = c0.residual.max(max_abs(&qb0));
    c0.pass = c0.residual <= c0.tolerance;
    checks.push(c0);

    let t2 = binding_model([0.3, 0.5, 0.2], 1.0, 0.7)?;
    let f = crate::stoich::conserved_matrix(t2.network());
    let lambda = [0.4, -0.3, -1.2];
    let k1 = f.n_rows();
    let diag: Vec<Vec<Rational>> = (0..k1)
        .map(|i| (0..k1).map(|j| if i != j { Rational::zero() } else if i == 0 { rat(2, 1) } else { rat(1, 3) }).collect())
        .collect();
    let ident: Vec<Vec<Rational>> =
        (0..k1).map(|i| (0..k1).map(|j| if i == j { Rational::one() } else { Rational::zero() }).collect()).collect();
    for (name, g) in [("identity", ident), ("diagonal", diag), ("unimodular", random_unimodular(k1, seed))] {
        let mut ch = f_transform_invariance(&t2, &f, &g, &lambda)?;
        ch.name = format!("f_transform_{name}");
        checks.push(ch);
    }

    let spec = EnsembleSpec { windows: vec![Window::exact(1.0), Window::exact(1.0), Window::new(10.0, 20.0)] };
    let gauge = e0_gauge_invariance(&t2, &[1.0, -1.0, 0.0], 1.3, &[0.2, -0.1, 1.1], Some(&spec))?;
    checks.push(gauge.check.clone());

    let spread: Vec<SpreadReport> = [1, 3, 10, 30].iter().map(|&m| spread_lemma_check(m, 1.0)).collect::<Result<_>>()?;
    checks.extend(spread.iter().map(|s| s.check.clone()));
    checks.push(laplacian_check(8, 4, 0.1));
    let all_pass = checks.iter().all(|c| c.pass);
    Ok(SuiteReport { seed, checks, spread, gauge, all_pass })
}
