//! MAP/CM estimate and Gaussian posterior of the linear model
//! `M_δ = A U + δ E` with `U ~ N(0, C_U)` and white noise `E`.
//!
//! ```text
//! U_δ = (A*A + δ² C_U⁻¹)⁻¹ A* m
//! C_δ = δ² (A*A + δ² C_U⁻¹)⁻¹  =  C_U - C_U A* (A C_U A* + δ² I)⁻¹ A C_U
//! ```
//!
//! When `A` and `C_U` are both multipliers everything is computed per
//! frequency. Otherwise the mean is found by preconditioned conjugate
//! gradients and the covariance by dense inversion.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fields::{sample_white_noise, GaussianPrior};
use crate::lattice::{FrequencyLattice, SpectralField};
use crate::ops::{DenseOp, MultiplierOp, OperatorHandle, SmoothingOrders};
use crate::rates::SmoothnessParams;
use crate::rng::derive_seed;

/// Relative residual the iterative solver drives to.
pub const CG_TOL: f64 = 1e-10;

/// Symbol values of a multiplier-only model on its lattice.
#[derive(Debug)]
struct DiagonalParts {
    fwd: Vec<Complex64>,
    cov: Vec<f64>,
}

/// Forward operator, prior, noise index and noise level on one lattice.
#[derive(Clone, Debug)]
pub struct GaussianModel {
    fwd: OperatorHandle,
    prior: GaussianPrior,
    cov_inv: OperatorHandle,
    s: f64,
    delta: f64,
    lattice: Arc<FrequencyLattice>,
    diag: Option<Arc<DiagonalParts>>,
}

impl GaussianModel {
    pub fn new(
        fwd: OperatorHandle,
        prior: GaussianPrior,
        s: f64,
        lattice: Arc<FrequencyLattice>,
        delta: f64,
    ) -> Result<Self> {
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(Error::InvalidArgument(format!("noise level must be positive, got {delta}")));
        }
        for op in [&fwd, prior.cov()] {
            if let Some(l) = op.lattice() {
                if **l != *lattice {
                    return Err(Error::LatticeMismatch);
                }
            }
        }
        prior.validate(&lattice)?;
        let cov_inv = prior.cov().invert(&lattice)?;
        let diag = match (&fwd, prior.cov()) {
            (OperatorHandle::Multiplier(a), OperatorHandle::Multiplier(c)) => Some(Arc::new(DiagonalParts {
                fwd: a.lattice_symbol(&lattice),
                cov: c.lattice_symbol(&lattice).iter().map(|v| v.re).collect(),
            })),
            _ => None,
        };
        Ok(Self {
            fwd,
            prior,
            cov_inv,
            s,
            delta,
            lattice,
            diag,
        })
    }

    /// Same operators at another noise level.
    pub fn with_delta(&self, delta: f64) -> Result<Self> {
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(Error::InvalidArgument(format!("noise level must be positive, got {delta}")));
        }
        Ok(Self { delta, ..self.clone() })
    }

    pub fn fwd(&self) -> &OperatorHandle {
        &self.fwd
    }

    pub fn prior(&self) -> &GaussianPrior {
        &self.prior
    }

    /// `C_U⁻¹`.
    pub fn cov_inv(&self) -> &OperatorHandle {
        &self.cov_inv
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn lattice(&self) -> &Arc<FrequencyLattice> {
        &self.lattice
    }

    pub fn is_diagonal(&self) -> bool {
        self.diag.is_some()
    }

    pub fn params(&self) -> Option<SmoothnessParams> {
        let SmoothingOrders { t, t0 } = self.fwd.orders()?;
        Some(SmoothnessParams::new(self.prior.r(), self.s, t, t0, self.lattice.dim() as f64))
    }

    /// Rate-hypothesis violations, carried into reports.
    pub fn warnings(&self) -> Vec<String> {
        match self.params() {
            Some(p) => p.bayes_hypotheses().into_iter().filter(|h| !h.ok).map(|h| h.message).collect(),
            None => vec!["forward operator has no declared order".to_string()],
        }
    }

    /// `(A*A + δ² C_U⁻¹) u`.
    pub fn normal_apply(&self, u: &SpectralField) -> Result<SpectralField> {
        let au = self.fwd.apply(u)?;
        let aau = self.fwd.adjoint().apply(&au)?;
        let reg = self.cov_inv.apply(u)?;
        aau.axpby(1.0, &reg, self.delta * self.delta)
    }

    fn normal_diagonal(&self) -> Result<Vec<f64>> {
        let aa: Vec<f64> = match &self.fwd {
            OperatorHandle::Multiplier(m) => m.lattice_symbol(&self.lattice).iter().map(|a| a.norm_sqr()).collect(),
            OperatorHandle::Dense(d) => {
                let m = d.matrix();
                (0..m.ncols()).map(|j| m.column(j).iter().map(|c| c.norm_sqr()).sum()).collect()
            }
        };
        let ci = self.cov_inv.diagonal(&self.lattice)?;
        let d2 = self.delta * self.delta;
        Ok(aa.iter().zip(&ci).map(|(a, c)| a + d2 * c.re).collect())
    }

    /// Solves `(A*A + δ² C_U⁻¹) u = rhs`.
    pub fn solve_normal(&self, rhs: &SpectralField) -> Result<SpectralField> {
        if **rhs.lattice() != *self.lattice {
            return Err(Error::LatticeMismatch);
        }
        if let Some(diag) = &self.diag {
            let d2 = self.delta * self.delta;
            let coeffs = rhs
                .coeffs()
                .iter()
                .zip(diag.fwd.iter().zip(&diag.cov))
                .map(|(b, (a, c))| b / (a.norm_sqr() + d2 / c))
                .collect();
            return SpectralField::new(self.lattice.clone(), coeffs);
        }
        let precond = self.normal_diagonal()?;
        pcg(|u| self.normal_apply(u), rhs, &precond, CG_TOL, 10 * self.lattice.len())
    }
}

/// Preconditioned conjugate gradients for a Hermitian positive-definite
/// operator with a diagonal preconditioner.
pub fn pcg<F>(op: F, rhs: &SpectralField, precond: &[f64], tol: f64, max_iter: usize) -> Result<SpectralField>
where
    F: Fn(&SpectralField) -> Result<SpectralField>,
{
    let lattice = rhs.lattice().clone();
    let b_norm = rhs.norm_sqr().sqrt();
    let mut x = SpectralField::zeros(lattice.clone());
    if b_norm == 0.0 {
        return Ok(x);
    }
    let precondition = |r: &SpectralField| {
        let coeffs = r.coeffs().iter().zip(precond).map(|(c, p)| c / *p).collect();
        SpectralField::new(lattice.clone(), coeffs).expect("lattice-sized")
    };
    let mut r = rhs.clone();
    let mut z = precondition(&r);
    let mut p = z.clone();
    let mut rz = r.inner(&z)?.re;
    let mut history = Vec::new();
    for _ in 0..max_iter {
        let ap = op(&p)?;
        let pap = p.inner(&ap)?.re;
        if !(pap > 0.0) {
            break;
        }
        let alpha = rz / pap;
        x = x.axpby(1.0, &p, alpha)?;
        r = r.axpby(1.0, &ap, -alpha)?;
        let rel = r.norm_sqr().sqrt() / b_norm;
        history.push(rel);
        if rel <= tol {
            return Ok(x);
        }
        z = precondition(&r);
        let rz_next = r.inner(&z)?.re;
        p = z.axpby(1.0, &p, rz_next / rz)?;
        rz = rz_next;
    }
    Err(Error::NotConverged {
        iterations: history.len(),
        residual: history.last().copied().unwrap_or(1.0),
        history,
    })
}

/// MAP (= conditional mean) estimate `(A*A + δ² C_U⁻¹)⁻¹ A* m`.
pub fn map_estimate(model: &GaussianModel, m: &SpectralField) -> Result<SpectralField> {
    let rhs = model.fwd().adjoint().apply(m)?;
    model.solve_normal(&rhs)
}

/// Dense reference solve `(AᴴA + δ² C⁻¹)⁻¹ Aᴴ m` for a `k × n` matrix `A`.
pub fn map_estimate_discrete(
    a: &DMatrix<Complex64>,
    c: &DMatrix<Complex64>,
    delta: f64,
    m: &DVector<Complex64>,
) -> Result<DVector<Complex64>> {
    let n = a.ncols();
    if c.nrows() != n || c.ncols() != n || m.len() != a.nrows() {
        return Err(Error::InvalidArgument(format!(
            "inconsistent shapes: A {}x{}, C {}x{}, m {}",
            a.nrows(),
            a.ncols(),
            c.nrows(),
            c.ncols(),
            m.len()
        )));
    }
    let c_inv = c
        .clone()
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::Singular("prior covariance matrix".into()))?;
    let system = a.adjoint() * a + c_inv * Complex64::new(delta * delta, 0.0);
    system
        .lu()
        .solve(&(a.adjoint() * m))
        .ok_or_else(|| Error::Singular("normal matrix".into()))
}

/// `C_δ = δ² (A*A + δ² C_U⁻¹)⁻¹`.
pub fn posterior_covariance(model: &GaussianModel) -> Result<OperatorHandle> {
    let d2 = model.delta() * model.delta();
    if let (OperatorHandle::Multiplier(a), OperatorHandle::Multiplier(c)) = (model.fwd(), model.prior().cov()) {
        let (a, c) = (a.clone(), c.clone());
        let orders = c.orders();
        let op = MultiplierOp::new(format!("C_δ[δ={}]", model.delta()), orders, move |l| {
            let cu = c.eval(l).re;
            Complex64::new(d2 / (a.eval(l).norm_sqr() + d2 / cu), 0.0)
        });
        return Ok(op.into());
    }
    let lattice = model.lattice();
    let a = model.fwd().densify(lattice)?;
    let ci = model.cov_inv.densify(lattice)?;
    let system = a.matrix().adjoint() * a.matrix() + ci.matrix() * Complex64::new(d2, 0.0);
    let inv = system
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::Singular("posterior normal matrix".into()))?;
    Ok(DenseOp::new(inv * Complex64::new(d2, 0.0), lattice.clone(), None, "C_δ")?.into())
}

/// `C_U - C_U A* (A C_U A* + δ² I)⁻¹ A C_U`, the form that does not invert `C_U`.
pub fn posterior_covariance_woodbury(model: &GaussianModel) -> Result<OperatorHandle> {
    let lattice = model.lattice();
    let a = model.fwd().densify(lattice)?;
    let c = model.prior().cov().densify(lattice)?;
    let (a, c) = (a.matrix(), c.matrix());
    let d2 = model.delta() * model.delta();
    let k = a.nrows();
    let inner = a * c * a.adjoint() + DMatrix::<Complex64>::identity(k, k) * Complex64::new(d2, 0.0);
    let inner_inv = inner
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::Singular("A C_U A* + δ² I".into()))?;
    let cov = c - c * a.adjoint() * inner_inv * a * c;
    Ok(DenseOp::new(cov, lattice.clone(), None, "C_δ (woodbury)")?.into())
}

/// Trace of `(I-Δ)^{q/2} C (I-Δ)^{q/2}`, i.e. `Σ (1+|ℓ|²)^q C_ℓℓ`.
pub fn posterior_trace(cov: &OperatorHandle, lattice: &FrequencyLattice, q: f64) -> Result<f64> {
    let diag = cov.diagonal(lattice)?;
    Ok(diag
        .iter()
        .zip(lattice.weights())
        .map(|(c, w)| (1.0 + w).powf(q) * c.re)
        .sum())
}

/// Operator norm of a covariance as a map `H^{-q} → H^{q}`.
pub fn cov_operator_norm(cov: &OperatorHandle, lattice: &Arc<FrequencyLattice>, q: f64) -> Result<f64> {
    match cov {
        OperatorHandle::Multiplier(m) => Ok(m
            .lattice_symbol(lattice)
            .iter()
            .zip(lattice.weights())
            .map(|(c, w)| (1.0 + w).powf(q) * c.norm())
            .fold(0.0, f64::max)),
        OperatorHandle::Dense(d) => {
            let half = lattice.sobolev_weights(q / 2.0);
            let m = d.matrix();
            let weighted = DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] * half[i] * half[j]);
            let h = (&weighted + weighted.adjoint()) * Complex64::new(0.5, 0.0);
            Ok(h.symmetric_eigen().eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs())))
        }
    }
}

/// Posterior `N(U_δ, C_δ)` for one measurement.
#[derive(Clone, Debug)]
pub struct PosteriorGaussian {
    mean: SpectralField,
    cov: OperatorHandle,
    sqrt_cov: OperatorHandle,
    sqrt_symbol: Option<Arc<Vec<Complex64>>>,
    model: GaussianModel,
}

impl PosteriorGaussian {
    pub fn new(model: &GaussianModel, m: &SpectralField) -> Result<Self> {
        let mean = map_estimate(model, m)?;
        let cov = posterior_covariance(model)?;
        let sqrt_cov = cov.sqrt_psd()?;
        let sqrt_symbol = sqrt_cov
            .as_multiplier()
            .map(|m| Arc::new(m.lattice_symbol(model.lattice())));
        Ok(Self {
            mean,
            cov,
            sqrt_cov,
            sqrt_symbol,
            model: model.clone(),
        })
    }

    pub fn mean(&self) -> &SpectralField {
        &self.mean
    }

    pub fn cov(&self) -> &OperatorHandle {
        &self.cov
    }

    pub fn sqrt_cov(&self) -> &OperatorHandle {
        &self.sqrt_cov
    }

    pub fn model(&self) -> &GaussianModel {
        &self.model
    }

    /// `‖(A*A + δ² C_U⁻¹) mean - A* m‖ / ‖A* m‖`.
    pub fn normal_residual(&self, m: &SpectralField) -> Result<f64> {
        let rhs = self.model.fwd().adjoint().apply(m)?;
        let lhs = self.model.normal_apply(&self.mean)?;
        Ok(lhs.sub(&rhs)?.norm_sqr().sqrt() / rhs.norm_sqr().sqrt().max(f64::MIN_POSITIVE))
    }

    /// Centred posterior draw `W_δ = C_δ^{1/2} E`.
    pub fn sample_fluctuation(&self, seed: u64) -> Result<SpectralField> {
        let e = sample_white_noise(self.model.lattice(), seed);
        match &self.sqrt_symbol {
            Some(sym) => {
                let coeffs = e.coeffs().iter().zip(sym.iter()).map(|(c, a)| c * a).collect();
                SpectralField::new(self.model.lattice().clone(), coeffs)
            }
            None => self.sqrt_cov.apply(&e),
        }
    }
}

/// Posterior draw `V_δ = U_δ + W_δ`.
pub fn sample_posterior(post: &PosteriorGaussian, seed: u64) -> Result<SpectralField> {
    post.mean().add(&post.sample_fluctuation(seed)?)
}

/// Monte-Carlo probability with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ProbabilityEstimate {
    pub p: f64,
    pub stderr: f64,
    pub n: usize,
}

/// `μ_δ(B_{ζ₁}(0, radius))`: fraction of posterior fluctuations with
/// `‖W_δ‖_{H^{ζ₁}} ≤ radius`, with binomial standard error.
pub fn credible_ball_prob(
    post: &PosteriorGaussian,
    zeta1: f64,
    radius: f64,
    n_mc: usize,
    seed: u64,
) -> Result<ProbabilityEstimate> {
    if n_mc < 100 {
        return Err(Error::InvalidArgument(format!("need at least 100 draws, got {n_mc}")));
    }
    let r2 = radius * radius;
    let weights = post.model().lattice().sobolev_weights(zeta1);
    let inside: Vec<bool> = (0..n_mc)
        .into_par_iter()
        .map(|i| {
            post.sample_fluctuation(derive_seed(seed, i as u64)).map(|w| {
                let q: f64 = w.coeffs().iter().zip(&weights).map(|(c, g)| g * c.norm_sqr()).sum();
                q <= r2
            })
        })
        .collect::<Result<_>>()?;
    let p = inside.iter().filter(|b| **b).count() as f64 / n_mc as f64;
    Ok(ProbabilityEstimate {
        p,
        stderr: (p * (1.0 - p) / n_mc as f64).sqrt(),
        n: n_mc,
    })
}

/// Outside probability `1 - μ_δ(B_{ζ₁}(0, radius))` for a diagonal
/// covariance, conditioning on every mode except the one with the largest
/// weighted variance `λ*` (and its conjugate partner):
///
/// ```text
/// p = E[ P(λ* χ²_k > R² - Q_rest | Q_rest) ]
/// ```
///
/// with `k = 1` for a self-conjugate mode and `k = 2` for a pair. Unbiased
/// like the plain indicator average, but resolves tail probabilities far
/// below `1 / n_mc`.
pub fn credible_ball_tail(
    cov: &MultiplierOp,
    lattice: &Arc<FrequencyLattice>,
    zeta1: f64,
    radius: f64,
    n_mc: usize,
    seed: u64,
) -> Result<ProbabilityEstimate> {
    if n_mc < 100 {
        return Err(Error::InvalidArgument(format!("need at least 100 draws, got {n_mc}")));
    }
    let sym: Vec<f64> = cov.lattice_symbol(lattice).iter().map(|c| c.re.max(0.0)).collect();
    let lam: Vec<f64> = sym
        .iter()
        .zip(lattice.weights())
        .map(|(c, w)| (1.0 + w).powf(zeta1) * c)
        .collect();
    let top = lam
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (k, &v)| if v > acc.1 { (k, v) } else { acc })
        .0;
    let partner = lattice.partner(top);
    let self_conjugate = partner == top;
    let lam_top = lam[top];
    let r2 = radius * radius;
    let tail = |y: f64| -> f64 {
        if y <= 0.0 {
            1.0
        } else if self_conjugate {
            statrs::function::erf::erfc((y / (2.0 * lam_top)).sqrt())
        } else {
            (-y / (2.0 * lam_top)).exp()
        }
    };
    let vals: Vec<f64> = (0..n_mc)
        .into_par_iter()
        .map(|i| {
            let e = sample_white_noise(lattice, derive_seed(seed, i as u64));
            let rest: f64 = e
                .coeffs()
                .iter()
                .enumerate()
                .filter(|(k, _)| *k != top && *k != partner)
                .map(|(k, c)| lam[k] * c.norm_sqr())
                .sum();
            tail(r2 - rest)
        })
        .collect();
    let n = n_mc as f64;
    let p = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - p).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(ProbabilityEstimate {
        p,
        stderr: (var / n).sqrt(),
        n: n_mc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::sample_prior;
    use crate::lattice::build_lattice;
    use crate::ops::{bessel_op, heat_op, variable_coeff_op};

    fn identity_model(lat: &Arc<FrequencyLattice>, delta: f64) -> GaussianModel {
        let prior = GaussianPrior::new(OperatorHandle::identity()).unwrap();
        GaussianModel::new(OperatorHandle::identity(), prior, 1.0, lat.clone(), delta).unwrap()
    }

    fn deblur_model(lat: &Arc<FrequencyLattice>, delta: f64) -> GaussianModel {
        let b = bessel_op(-1.0);
        let prior = GaussianPrior::new(b.clone().into()).unwrap();
        GaussianModel::new(b.into(), prior, 1.01, lat.clone(), delta).unwrap()
    }

    fn phi(lat: &FrequencyLattice, amp: f64, shift: f64) -> Vec<f64> {
        (0..lat.len())
            .map(|k| 1.0 + amp * (lat.grid_point(k)[0] + shift).cos())
            .collect()
    }

    fn dense_model(lat: &Arc<FrequencyLattice>, delta: f64, amp: f64, shift: f64) -> GaussianModel {
        let a = variable_coeff_op(&phi(lat, amp, shift), &bessel_op(-1.0), lat).unwrap();
        let prior = GaussianPrior::new(bessel_op(-1.0).into()).unwrap();
        GaussianModel::new(a.into(), prior, 0.6, lat.clone(), delta).unwrap()
    }

    #[test]
    fn identity_single_mode() {
        let lat = build_lattice(1, 8).unwrap();
        let model = identity_model(&lat, 1.0);
        let m = SpectralField::single_mode(lat.clone(), &[0], Complex64::new(1.0, 0.0)).unwrap();
        let u = map_estimate(&model, &m).unwrap();
        assert!((u.coeff(&[0]).unwrap().re - 0.5).abs() < 1e-15);
    }

    #[test]
    fn rejects_nonpositive_delta() {
        let lat = build_lattice(1, 8).unwrap();
        let prior = GaussianPrior::new(OperatorHandle::identity()).unwrap();
        assert!(GaussianModel::new(OperatorHandle::identity(), prior, 1.0, lat, 0.0).is_err());
    }

    #[test]
    fn noise_free_limit_recovers_truth() {
        let lat = build_lattice(2, 16).unwrap();
        let model = deblur_model(&lat, 1.0);
        let truth = sample_prior(model.prior(), &lat, 4).unwrap();
        let m = model.fwd().apply(&truth).unwrap();
        let mut last = f64::INFINITY;
        for k in 1..=6 {
            let md = model.with_delta(10f64.powi(-k)).unwrap();
            let err = map_estimate(&md, &m).unwrap().sub(&truth).unwrap().norm_sqr().sqrt();
            assert!(err < last);
            last = err;
        }
        assert!(last < 1e-6);
    }

    #[test]
    fn discrete_solver_examples() {
        let a = DMatrix::<Complex64>::identity(2, 2);
        let c = DMatrix::<Complex64>::identity(2, 2);
        let m = DVector::from_vec(vec![Complex64::new(2.0, 0.0), Complex64::new(0.0, 0.0)]);
        let x = map_estimate_discrete(&a, &c, 1.0, &m).unwrap();
        assert!((x[0] - Complex64::new(1.0, 0.0)).norm() < 1e-15 && x[1].norm() < 1e-15);
        let big = map_estimate_discrete(&a, &c, 1e8, &m).unwrap();
        assert!(big.norm() < 1e-15);
        // rectangular: two measurements of one unknown
        let a2 = DMatrix::from_vec(2, 1, vec![Complex64::new(1.0, 0.0); 2]);
        let c1 = DMatrix::<Complex64>::identity(1, 1);
        let x = map_estimate_discrete(&a2, &c1, 1.0, &m).unwrap();
        assert!((x[0].re - 2.0 / 3.0).abs() < 1e-15);
        assert!(map_estimate_discrete(&a, &DMatrix::zeros(2, 2), 1.0, &m).is_err());
    }

    #[test]
    fn discrete_matches_spectral_path() {
        let lat = build_lattice(1, 16).unwrap();
        let model = deblur_model(&lat, 0.05);
        let m = sample_white_noise(&lat, 12);
        let spectral = map_estimate(&model, &m).unwrap();
        let a = model.fwd().densify(&lat).unwrap();
        let c = model.prior().cov().densify(&lat).unwrap();
        let x = map_estimate_discrete(a.matrix(), c.matrix(), 0.05, &DVector::from_column_slice(m.coeffs())).unwrap();
        let diff = x.iter().zip(spectral.coeffs()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(diff < 1e-10);
    }

    #[test]
    fn dense_and_diagonal_paths_agree() {
        let lat = build_lattice(1, 32).unwrap();
        let diag = deblur_model(&lat, 1e-2);
        let dense_a = variable_coeff_op(&vec![1.0; 32], &bessel_op(-1.0), &lat).unwrap();
        let dense = GaussianModel::new(dense_a.into(), diag.prior().clone(), 1.01, lat.clone(), 1e-2).unwrap();
        assert!(!dense.is_diagonal());
        let m = sample_white_noise(&lat, 3);
        let u1 = map_estimate(&diag, &m).unwrap();
        let u2 = map_estimate(&dense, &m).unwrap();
        assert!(u1.sub(&u2).unwrap().max_abs() < 1e-8);
    }

    #[test]
    fn cg_mean_satisfies_normal_equations() {
        let lat = build_lattice(1, 32).unwrap();
        for delta in [0.3, 1e-2, 1e-3] {
            let model = dense_model(&lat, delta, 0.5, 0.3);
            let m = sample_white_noise(&lat, 17);
            let post = PosteriorGaussian::new(&model, &m).unwrap();
            assert!(post.normal_residual(&m).unwrap() <= 1e-8);
        }
    }

    #[test]
    fn cg_reports_non_convergence() {
        let lat = build_lattice(1, 16).unwrap();
        let m = sample_white_noise(&lat, 1);
        let res = pcg(|u| Ok(bessel_op(-3.0).apply(u)), &m, &vec![1.0; 16], 1e-14, 2);
        match res {
            Err(Error::NotConverged { iterations, history, .. }) => {
                assert_eq!(iterations, 2);
                assert_eq!(history.len(), 2);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn identity_covariance_and_trace() {
        let lat = build_lattice(2, 8).unwrap();
        let delta = 0.3;
        let model = identity_model(&lat, delta);
        let cov = posterior_covariance(&model).unwrap();
        let expect = delta * delta / (1.0 + delta * delta);
        for c in cov.diagonal(&lat).unwrap() {
            assert!((c.re - expect).abs() < 1e-15);
        }
        let tr = posterior_trace(&cov, &lat, 0.0).unwrap();
        assert!((tr - lat.len() as f64 * expect).abs() < 1e-12);
    }

    #[test]
    fn covariance_forms_agree_on_dense_models() {
        let lat = build_lattice(1, 16).unwrap();
        let model = dense_model(&lat, 0.2, 0.6, 1.1);
        let a = posterior_covariance(&model).unwrap().densify(&lat).unwrap();
        let b = posterior_covariance_woodbury(&model).unwrap().densify(&lat).unwrap();
        let diff = (a.matrix() - b.matrix()).iter().map(|c| c.norm()).fold(0.0, f64::max);
        assert!(diff < 1e-9, "{diff}");
    }

    #[test]
    fn trace_monotone_in_delta() {
        let lat = build_lattice(2, 16).unwrap();
        let model = deblur_model(&lat, 1.0);
        let mut last = f64::INFINITY;
        for k in 0..8 {
            let md = model.with_delta(0.5f64.powi(k)).unwrap();
            let tr = posterior_trace(&posterior_covariance(&md).unwrap(), &lat, 0.0).unwrap();
            assert!(tr < last);
            last = tr;
        }
    }

    #[test]
    fn dense_trace_matches_multiplier_trace() {
        let lat = build_lattice(1, 16).unwrap();
        let model = deblur_model(&lat, 0.1);
        let cov = posterior_covariance(&model).unwrap();
        let dense = OperatorHandle::from(cov.densify(&lat).unwrap());
        for q in [-1.0, 0.0, 0.5] {
            let a = posterior_trace(&cov, &lat, q).unwrap();
            let b = posterior_trace(&dense, &lat, q).unwrap();
            assert!((a - b).abs() < 1e-12 * a);
            let na = cov_operator_norm(&cov, &lat, q).unwrap();
            let nb = cov_operator_norm(&dense, &lat, q).unwrap();
            assert!((na - nb).abs() < 1e-10 * na);
        }
    }

    #[test]
    fn samples_collapse_as_delta_shrinks() {
        let lat = build_lattice(2, 16).unwrap();
        let model = deblur_model(&lat, 1.0);
        let m = sample_white_noise(&lat, 2);
        let mut last = f64::INFINITY;
        for delta in [1e-1, 1e-3, 1e-5] {
            let post = PosteriorGaussian::new(&model.with_delta(delta).unwrap(), &m).unwrap();
            let v = sample_posterior(&post, 9).unwrap();
            let spread = v.sub(post.mean()).unwrap().norm_sqr();
            assert!(spread < last);
            last = spread;
        }
    }

    #[test]
    fn posterior_sample_moments() {
        let lat = build_lattice(1, 16).unwrap();
        let model = deblur_model(&lat, 0.2);
        let m = sample_white_noise(&lat, 5);
        let post = PosteriorGaussian::new(&model, &m).unwrap();
        let draws = 2000;
        let devs: Vec<SpectralField> = (0..draws)
            .map(|i| sample_posterior(&post, derive_seed(44, i)).unwrap().sub(post.mean()).unwrap())
            .collect();
        let sym = post.cov().diagonal(&lat).unwrap();
        for k in 0..lat.len() {
            let vals: Vec<f64> = devs.iter().map(|d| d.coeffs()[k].norm_sqr()).collect();
            let mean = vals.iter().sum::<f64>() / draws as f64;
            let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (draws - 1) as f64).sqrt();
            assert!((mean - sym[k].re).abs() < 5.0 * sd / (draws as f64).sqrt());
        }
        let energies: Vec<f64> = devs.iter().map(|d| d.norm_sqr()).collect();
        let mean = energies.iter().sum::<f64>() / draws as f64;
        let sd = (energies.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (draws - 1) as f64).sqrt();
        let tr = posterior_trace(post.cov(), &lat, 0.0).unwrap();
        assert!((mean - tr).abs() < 5.0 * sd / (draws as f64).sqrt());
    }

    #[test]
    fn ball_probability_limits_and_single_mode() {
        let lat = build_lattice(1, 4).unwrap();
        let model = identity_model(&lat, 1.0);
        let m = SpectralField::zeros(lat.clone());
        let post = PosteriorGaussian::new(&model, &m).unwrap();
        assert_eq!(credible_ball_prob(&post, 0.0, 0.0, 200, 1).unwrap().p, 0.0);
        assert_eq!(credible_ball_prob(&post, 0.0, 1e6, 200, 1).unwrap().p, 1.0);
        assert!(credible_ball_prob(&post, 0.0, 1.0, 50, 1).is_err());

        // one mode with unit posterior variance: P(|N(0,1)| ≤ 1)
        let single = MultiplierOp::new("e0", SmoothingOrders::elliptic(0.0), |l| {
            Complex64::new(if l[0] == 0 { 1.0 } else { 0.0 }, 0.0)
        });
        let lat1 = build_lattice(1, 4).unwrap();
        let fake = PosteriorGaussian {
            mean: SpectralField::zeros(lat1.clone()),
            cov: single.clone().into(),
            sqrt_cov: single.sqrt().into(),
            sqrt_symbol: None,
            model: identity_model(&lat1, 1.0),
        };
        let est = credible_ball_prob(&fake, 0.0, 1.0, 20000, 3).unwrap();
        assert!((est.p - 0.682_689_492).abs() < 4.0 * est.stderr, "{est:?}");
    }

    #[test]
    fn ball_probability_independent_of_data() {
        let lat = build_lattice(2, 16).unwrap();
        let model = deblur_model(&lat, 0.1);
        let cov = posterior_covariance(&model).unwrap();
        let radius = posterior_trace(&cov, &lat, -1.0).unwrap().sqrt();
        let p1 = PosteriorGaussian::new(&model, &sample_white_noise(&lat, 1)).unwrap();
        let p2 = PosteriorGaussian::new(&model, &sample_white_noise(&lat, 2).scaled(10.0)).unwrap();
        let a = credible_ball_prob(&p1, -1.0, radius, 4000, 10).unwrap();
        let b = credible_ball_prob(&p2, -1.0, radius, 4000, 11).unwrap();
        let combined = (a.stderr.powi(2) + b.stderr.powi(2)).sqrt();
        assert!((a.p - b.p).abs() < 4.0 * combined, "{a:?} {b:?}");
    }

    #[test]
    fn conditional_tail_matches_direct_estimate() {
        let lat = build_lattice(2, 16).unwrap();
        let model = deblur_model(&lat, 0.1);
        let cov = posterior_covariance(&model).unwrap();
        let m = cov.as_multiplier().unwrap();
        let post = PosteriorGaussian::new(&model, &SpectralField::zeros(lat.clone())).unwrap();
        let radius = 1.2 * posterior_trace(&cov, &lat, -3.0).unwrap().sqrt();
        let direct = credible_ball_prob(&post, -3.0, radius, 20000, 5).unwrap();
        let cond = credible_ball_tail(m, &lat, -3.0, radius, 4000, 6).unwrap();
        let combined = (direct.stderr.powi(2) + cond.stderr.powi(2)).sqrt();
        assert!(((1.0 - direct.p) - cond.p).abs() < 4.0 * combined, "{direct:?} {cond:?}");
        assert!(cond.stderr * (cond.n as f64).sqrt() < direct.stderr * (direct.n as f64).sqrt());
    }

    #[test]
    fn shrinkage_in_prior_norm() {
        let lat = build_lattice(2, 16).unwrap();
        let model = deblur_model(&lat, 1.0);
        let m = sample_white_noise(&lat, 8);
        let cinv = model.prior().cov().invert(&lat).unwrap();
        let mut last = 0.0;
        for delta in [2.0, 1.0, 0.5, 0.1, 0.01] {
            let u = map_estimate(&model.with_delta(delta).unwrap(), &m).unwrap();
            let norm = cinv.apply(&u).unwrap().inner(&u).unwrap().re;
            assert!(norm >= last);
            last = norm;
        }
    }

    #[test]
    fn hypoelliptic_forward_model() {
        let lat = build_lattice(2, 16).unwrap();
        let prior = GaussianPrior::new(bessel_op(-1.0).into()).unwrap();
        let model = GaussianModel::new(heat_op(1).into(), prior, 1.01, lat.clone(), 0.05).unwrap();
        let m = sample_white_noise(&lat, 6);
        let post = PosteriorGaussian::new(&model, &m).unwrap();
        assert!(post.normal_residual(&m).unwrap() < 1e-12);
        assert!(post.mean().hermitian_defect() < 1e-14);
        let p = model.params().unwrap();
        assert_eq!((p.t, p.t0, p.r), (1.0, 2.0, 1.0));
        assert!(!model.warnings().is_empty());
    }
}
