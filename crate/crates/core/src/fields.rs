//! White Gaussian noise, Gaussian priors and Sobolev norms on the lattice.

use std::sync::Arc;

use num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lattice::{FrequencyLattice, SpectralField};
use crate::ops::OperatorHandle;
use crate::rng::rng_from_seed;

/// Normalised white noise: i.i.d. `N(0, 1)` coordinates in the real
/// orthonormal Fourier basis.
///
/// Self-conjugate frequencies get a real standard normal; each pair
/// `(ℓ, -ℓ)` gets `(X + iY)/√2` and its conjugate, so `E|û(ℓ)|² = 1` for
/// every frequency. Frequencies are visited in lattice order.
pub fn sample_white_noise(lattice: &Arc<FrequencyLattice>, seed: u64) -> SpectralField {
    let mut rng = rng_from_seed(seed);
    let mut coeffs = vec![Complex64::new(0.0, 0.0); lattice.len()];
    let half = std::f64::consts::FRAC_1_SQRT_2;
    for k in 0..lattice.len() {
        let p = lattice.partner(k);
        if p == k {
            coeffs[k] = Complex64::new(StandardNormal.sample(&mut rng), 0.0);
        } else if k < p {
            let x: f64 = StandardNormal.sample(&mut rng);
            let y: f64 = StandardNormal.sample(&mut rng);
            let c = Complex64::new(x * half, y * half);
            coeffs[k] = c;
            coeffs[p] = c.conj();
        }
    }
    SpectralField::new(lattice.clone(), coeffs).expect("lattice-sized")
}

/// `‖u‖_{H^q} = (Σ (1+|ℓ|²)^q |û(ℓ)|²)^{1/2}`.
pub fn sobolev_norm(u: &SpectralField, q: f64) -> f64 {
    sobolev_norm_sqr(u, q).sqrt()
}

pub fn sobolev_norm_sqr(u: &SpectralField, q: f64) -> f64 {
    let w = u.lattice().weights();
    if q == 0.0 {
        return u.norm_sqr();
    }
    u.coeffs()
        .iter()
        .zip(w)
        .map(|(c, w)| (1.0 + w).powf(q) * c.norm_sqr())
        .sum()
}

/// Exact lattice value of `E‖E‖²_{H^{-s}} = Σ_ℓ (1+|ℓ|²)^{-s}`.
pub fn noise_norm_sum(lattice: &FrequencyLattice, s: f64) -> f64 {
    lattice.weights().iter().map(|w| (1.0 + w).powf(-s)).sum()
}

/// Noise smoothness index; white noise lies in `H^{-s}` iff `s > d/2`.
#[derive(Clone, Debug)]
pub struct NoiseSpec {
    pub s: f64,
    pub lattice: Arc<FrequencyLattice>,
}

impl NoiseSpec {
    pub fn new(s: f64, lattice: Arc<FrequencyLattice>) -> Self {
        Self { s, lattice }
    }

    /// Warning when `s ≤ d/2`; the finite lattice still admits sampling.
    pub fn warning(&self) -> Option<String> {
        let half_d = self.lattice.dim() as f64 / 2.0;
        (self.s <= half_d).then(|| format!("s > d/2 violated: s = {} ≤ {half_d}", self.s))
    }
}

/// Gaussian prior `N(0, C_U)` with `C_U` of smoothing order `2r`.
#[derive(Clone, Debug)]
pub struct GaussianPrior {
    cov: OperatorHandle,
    sqrt_cov: OperatorHandle,
    r: f64,
}

impl GaussianPrior {
    /// Prior whose `r` is read off the covariance's declared orders.
    pub fn new(cov: OperatorHandle) -> Result<Self> {
        let orders = cov.orders().ok_or_else(|| {
            Error::InvalidArgument("covariance has no declared order; use with_r".into())
        })?;
        Self::with_r(cov, orders.t / 2.0)
    }

    pub fn with_r(cov: OperatorHandle, r: f64) -> Result<Self> {
        let sqrt_cov = cov.sqrt_psd()?;
        Ok(Self { cov, sqrt_cov, r })
    }

    pub fn cov(&self) -> &OperatorHandle {
        &self.cov
    }

    pub fn sqrt_cov(&self) -> &OperatorHandle {
        &self.sqrt_cov
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    /// Checks that `C_U` is self-adjoint, positive and injective on `lattice`.
    pub fn validate(&self, lattice: &FrequencyLattice) -> Result<()> {
        match &self.cov {
            OperatorHandle::Multiplier(m) => {
                for (k, a) in m.lattice_symbol(lattice).iter().enumerate() {
                    if !(a.re > 0.0) || a.im.abs() > 1e-12 * a.re {
                        return Err(Error::InvalidArgument(format!(
                            "covariance symbol {a} at {:?} is not real positive",
                            lattice.freq(k)
                        )));
                    }
                }
                Ok(())
            }
            OperatorHandle::Dense(d) => {
                if **d.lattice() != *lattice {
                    return Err(Error::LatticeMismatch);
                }
                let m = d.matrix();
                let asym = (m - m.adjoint()).iter().map(|c| c.norm()).fold(0.0, f64::max);
                let scale = m.iter().map(|c| c.norm()).fold(0.0, f64::max);
                if asym > 1e-10 * scale {
                    return Err(Error::InvalidArgument("covariance is not self-adjoint".into()));
                }
                let eig = m.clone().symmetric_eigen();
                let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
                if !(min > 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "covariance is not positive definite (min eigenvalue {min:.3e})"
                    )));
                }
                Ok(())
            }
        }
    }
}

/// Prior draw `C_U^{1/2} E` with `E` the white noise of `seed`.
pub fn sample_prior(prior: &GaussianPrior, lattice: &Arc<FrequencyLattice>, seed: u64) -> Result<SpectralField> {
    prior.sqrt_cov().apply(&sample_white_noise(lattice, seed))
}

#[derive(Clone, Debug, Serialize)]
pub struct PriorTraceReport {
    pub tau: f64,
    pub r: f64,
    pub d: usize,
    /// `(n_per_dim, Σ_ℓ (1+|ℓ|²)^τ c_U(ℓ))`
    pub partial_sums: Vec<(usize, f64)>,
    /// `log₂` growth of the last partial-sum increment per lattice doubling.
    pub increment_exponent: f64,
    /// Weyl prediction for that growth, `d - 2(r - τ)`.
    pub predicted_increment_exponent: f64,
    /// Fitted exponent of the eigenvalue counting function `N(ν)`.
    pub counting_exponent: f64,
    /// Weyl prediction `d / (2(r - τ))`.
    pub predicted_counting_exponent: f64,
    pub predicted_convergent: bool,
    pub convergent: bool,
    pub pass: bool,
}

/// Increment growth per doubling below which partial sums count as convergent.
const CONVERGENCE_MARGIN: f64 = -0.25;

/// Trace of the prior covariance viewed on `H^τ`, over a doubling sweep of
/// lattices `n_start, 2 n_start, …` (`levels` lattices, at least 3).
///
/// The trace is finite iff `τ < r - d/2`. The check passes when the observed
/// increment growth agrees with that prediction and the fitted Weyl
/// counting exponent is within 10% of `d / (2(r - τ))`.
pub fn prior_trace_check(
    prior: &GaussianPrior,
    tau: f64,
    d: usize,
    n_start: usize,
    levels: usize,
) -> Result<PriorTraceReport> {
    let m = prior
        .cov()
        .as_multiplier()
        .ok_or_else(|| Error::InvalidArgument("trace sweep needs a multiplier covariance".into()))?;
    if levels < 3 {
        return Err(Error::InvalidArgument("trace sweep needs at least 3 lattices".into()));
    }
    let r = prior.r();
    let mut partial_sums = Vec::with_capacity(levels);
    let mut eigen_last = Vec::new();
    for level in 0..levels {
        let n = n_start << level;
        let lat = FrequencyLattice::new(d, n)?;
        let vals: Vec<f64> = m
            .lattice_symbol(&lat)
            .iter()
            .zip(lat.weights())
            .map(|(c, w)| (1.0 + w).powf(tau) * c.re)
            .collect();
        partial_sums.push((n, vals.iter().sum::<f64>()));
        if level + 1 == levels {
            eigen_last = vals;
        }
    }
    let k = partial_sums.len();
    let inc_a = partial_sums[k - 2].1 - partial_sums[k - 3].1;
    let inc_b = partial_sums[k - 1].1 - partial_sums[k - 2].1;
    let increment_exponent = (inc_b / inc_a).log2();

    // counting function over the isotropic part of the largest lattice
    let n_last = partial_sums[k - 1].0 as f64;
    let mut sorted = eigen_last;
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let gap = r - tau;
    let mut pts = Vec::new();
    let (rho_lo, rho_hi) = (4.0f64, n_last / 4.0);
    for i in 0..8 {
        let rho = rho_lo * (rho_hi / rho_lo).powf(i as f64 / 7.0);
        let nu = (1.0 + rho * rho).powf(gap);
        let count = sorted.partition_point(|&lam| lam >= 1.0 / nu);
        pts.push((nu.ln(), (count as f64).ln()));
    }
    let counting_exponent = ols_slope(&pts);
    let predicted_counting_exponent = d as f64 / (2.0 * gap);
    let predicted_convergent = tau < r - d as f64 / 2.0;
    let convergent = increment_exponent < CONVERGENCE_MARGIN;
    let weyl_ok = (counting_exponent - predicted_counting_exponent).abs()
        < 0.1 * predicted_counting_exponent.abs();
    Ok(PriorTraceReport {
        tau,
        r,
        d,
        partial_sums,
        increment_exponent,
        predicted_increment_exponent: d as f64 - 2.0 * gap,
        counting_exponent,
        predicted_counting_exponent,
        predicted_convergent,
        convergent,
        pass: convergent == predicted_convergent && weyl_ok,
    })
}

pub(crate) fn ols_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::build_lattice;
    use crate::ops::bessel_op;
    use crate::rng::derive_seed;

    #[test]
    fn white_noise_is_deterministic_and_real() {
        let lat = build_lattice(2, 16).unwrap();
        let a = sample_white_noise(&lat, 99);
        let b = sample_white_noise(&lat, 99);
        assert_eq!(a, b);
        assert_ne!(a, sample_white_noise(&lat, 100));
        assert_eq!(a.hermitian_defect(), 0.0);
    }

    #[test]
    fn white_noise_total_energy_moment() {
        // Σ|coeff|² is χ² with 16 degrees of freedom: mean 16, variance 32
        let lat = build_lattice(1, 16).unwrap();
        let draws = 1000;
        let mean = (0..draws)
            .map(|i| sample_white_noise(&lat, derive_seed(5, i)).norm_sqr())
            .sum::<f64>()
            / draws as f64;
        assert!((mean - 16.0).abs() < 3.0 * (2.0 * 16.0 / draws as f64).sqrt(), "{mean}");
    }

    #[test]
    fn truncated_negative_sobolev_moment() {
        // restricted to {-1, 0, 1}: weights 1/2 + 1 + 1/2 = 2
        let lat = build_lattice(1, 4).unwrap();
        let draws = 4000;
        let vals: Vec<f64> = (0..draws)
            .map(|i| {
                let e = sample_white_noise(&lat, derive_seed(8, i));
                [-1i64, 0, 1]
                    .iter()
                    .map(|&l| e.coeff(&[l]).unwrap().norm_sqr() / (1.0 + (l * l) as f64))
                    .sum::<f64>()
            })
            .collect();
        let mean = vals.iter().sum::<f64>() / draws as f64;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (draws - 1) as f64).sqrt();
        assert!((mean - 2.0).abs() < 5.0 * sd / (draws as f64).sqrt(), "{mean}");
    }

    #[test]
    fn identity_prior_is_white_noise() {
        let lat = build_lattice(2, 8).unwrap();
        let prior = GaussianPrior::new(OperatorHandle::identity()).unwrap();
        assert_eq!(sample_prior(&prior, &lat, 3).unwrap(), sample_white_noise(&lat, 3));
    }

    #[test]
    fn prior_sample_is_sqrt_cov_of_noise() {
        let lat = build_lattice(2, 8).unwrap();
        let b = bessel_op(-1.0);
        let prior = GaussianPrior::new(b.compose(&b).into()).unwrap();
        assert_eq!(prior.r(), 2.0);
        let e = sample_white_noise(&lat, 21);
        assert_eq!(sample_prior(&prior, &lat, 21).unwrap(), prior.sqrt_cov().apply(&e).unwrap());
        let sq = prior.sqrt_cov().compose(prior.sqrt_cov()).unwrap();
        let diff = sq.apply(&e).unwrap().sub(&prior.cov().apply(&e).unwrap()).unwrap().max_abs();
        assert!(diff < 1e-10);
        prior.validate(&lat).unwrap();
    }

    #[test]
    fn prior_energy_matches_lattice_sum() {
        let lat = build_lattice(2, 16).unwrap();
        let prior = GaussianPrior::new(bessel_op(-1.0).into()).unwrap();
        let expect: f64 = lat.weights().iter().map(|w| 1.0 / (1.0 + w)).sum();
        let draws = 1000;
        let vals: Vec<f64> = (0..draws)
            .map(|i| sample_prior(&prior, &lat, derive_seed(2, i)).unwrap().norm_sqr())
            .collect();
        let mean = vals.iter().sum::<f64>() / draws as f64;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (draws - 1) as f64).sqrt();
        assert!((mean - expect).abs() < 5.0 * sd / (draws as f64).sqrt());
    }

    #[test]
    fn prior_per_mode_variance() {
        let lat = build_lattice(2, 8).unwrap();
        let prior = GaussianPrior::new(bessel_op(-1.0).into()).unwrap();
        let draws = 2000;
        let samples: Vec<SpectralField> = (0..draws)
            .map(|i| sample_prior(&prior, &lat, derive_seed(77, i)).unwrap())
            .collect();
        for freq in [[0i64, 0], [1, 0], [2, -3]] {
            let k = lat.index_of(&freq).unwrap();
            let c = 1.0 / (1.0 + lat.weights()[k]);
            let vals: Vec<f64> = samples.iter().map(|s| s.coeffs()[k].norm_sqr()).collect();
            let mean = vals.iter().sum::<f64>() / draws as f64;
            let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (draws - 1) as f64).sqrt();
            assert!((mean - c).abs() < 5.0 * sd / (draws as f64).sqrt(), "{freq:?}");
        }
    }

    #[test]
    fn white_noise_real_basis_covariance() {
        // real-basis coordinates: Re and Im parts of paired modes scaled by √2
        let lat = build_lattice(1, 8).unwrap();
        let draws = 2000usize;
        let coords: Vec<Vec<f64>> = (0..draws)
            .map(|i| {
                let e = sample_white_noise(&lat, derive_seed(31, i as u64));
                let mut v = Vec::new();
                for k in 0..lat.len() {
                    let p = lat.partner(k);
                    let c = e.coeffs()[k];
                    if p == k {
                        v.push(c.re);
                    } else if k < p {
                        v.push(c.re * 2f64.sqrt());
                        v.push(c.im * 2f64.sqrt());
                    }
                }
                v
            })
            .collect();
        let dim = coords[0].len();
        assert_eq!(dim, 8);
        for a in 0..dim {
            for b in 0..dim {
                let cov = coords.iter().map(|v| v[a] * v[b]).sum::<f64>() / draws as f64;
                if a == b {
                    assert!((cov - 1.0).abs() < 5.0 * (2.0 / draws as f64).sqrt());
                } else {
                    assert!(cov.abs() < 5.0 / (draws as f64).sqrt());
                }
            }
        }
    }

    #[test]
    fn sobolev_norm_examples() {
        let lat = build_lattice(2, 8).unwrap();
        let e = sample_white_noise(&lat, 1);
        assert!((sobolev_norm(&e, 0.0) - e.norm_sqr().sqrt()).abs() < 1e-14);
        let mut f = SpectralField::zeros(lat.clone());
        let k = lat.index_of(&[1, 0]).unwrap();
        f.coeffs_mut()[k] = Complex64::new(1.0, 0.0);
        assert!((sobolev_norm(&f, 1.0) - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn noise_sum_grows_linearly_in_l2() {
        // E‖E‖²_{L²} equals the lattice size: the truncated sum diverges with n
        for n in [8, 16, 32] {
            let lat = FrequencyLattice::new(2, n).unwrap();
            assert_eq!(noise_norm_sum(&lat, 0.0), (n * n) as f64);
        }
    }

    #[test]
    fn noise_spec_warns_below_half_dimension() {
        let lat = build_lattice(2, 8).unwrap();
        assert!(NoiseSpec::new(1.0, lat.clone()).warning().is_some());
        assert!(NoiseSpec::new(1.01, lat).warning().is_none());
    }

    #[test]
    fn trace_check_regimes() {
        let b1 = GaussianPrior::new(bessel_op(-1.0).into()).unwrap();
        let rep = prior_trace_check(&b1, 0.0, 1, 16, 5).unwrap();
        assert!(rep.predicted_convergent && rep.convergent && rep.pass, "{rep:?}");
        let rep = prior_trace_check(&b1, 0.0, 2, 16, 4).unwrap();
        assert!(!rep.predicted_convergent && !rep.convergent && rep.pass, "{rep:?}");
        let b2 = GaussianPrior::new(bessel_op(-2.0).into()).unwrap();
        let rep = prior_trace_check(&b2, 0.5, 2, 16, 4).unwrap();
        assert!(rep.predicted_convergent && rep.convergent && rep.pass, "{rep:?}");
    }

    #[test]
    fn rejects_non_positive_covariance() {
        let lat = build_lattice(1, 8).unwrap();
        let neg = GaussianPrior::with_r(bessel_op(-1.0).scaled(-1.0).into(), 1.0).unwrap();
        assert!(neg.validate(&lat).is_err());
    }
}
