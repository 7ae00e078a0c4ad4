//! Truncated frequency lattice on the flat torus `(R / 2πZ)^d` and the
//! correspondence between grid samples and Fourier coefficients.
//!
//! Coefficients are taken against the orthonormal basis
//! `e_ℓ(x) = (2π)^{-d/2} exp(i ℓ·x)`, so that
//!
//! ```text
//! û(ℓ) = (2π)^{d/2} / N · Σ_j u(x_j) exp(-i ℓ·x_j),     N = n^d
//! ```
//!
//! and `Σ |û(ℓ)|²` equals the grid quadrature of `∫ |u|²`. A white-noise
//! field is then literally a vector of i.i.d. standard normals in the real
//! Fourier basis, independent of the resolution.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

/// Tolerance used when checking that a spectrum represents a real field.
pub const HERMITIAN_TOL: f64 = 1e-10;

/// Integer frequencies `ℓ ∈ [-n/2, n/2)^d` in FFT memory order (row-major,
/// last axis fastest, each axis in `0, 1, …, n/2-1, -n/2, …, -1` order).
#[derive(Clone)]
pub struct FrequencyLattice {
    d: usize,
    n: usize,
    freqs: Vec<i64>,
    weights: Vec<f64>,
    partner: Vec<usize>,
}

impl PartialEq for FrequencyLattice {
    fn eq(&self, other: &Self) -> bool {
        // frequencies and weights are pure functions of (d, n)
        self.d == other.d && self.n == other.n
    }
}

impl Eq for FrequencyLattice {}

impl fmt::Debug for FrequencyLattice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FrequencyLattice")
            .field("d", &self.d)
            .field("n", &self.n)
            .finish()
    }
}

impl FrequencyLattice {
    pub fn new(d: usize, n: usize) -> Result<Self> {
        if !(1..=3).contains(&d) {
            return Err(Error::InvalidLattice(format!("dimension {d} not in 1..=3")));
        }
        if n < 4 || n % 2 != 0 {
            return Err(Error::InvalidLattice(format!(
                "grid size {n} must be even and at least 4"
            )));
        }
        let len = n.pow(d as u32);
        let mut freqs = Vec::with_capacity(len * d);
        let mut weights = Vec::with_capacity(len);
        let mut partner = Vec::with_capacity(len);
        let mut idx = vec![0usize; d];
        for _ in 0..len {
            let mut w = 0.0;
            let mut p = 0usize;
            for &i in &idx {
                let l = fft_index_to_freq(i, n);
                freqs.push(l);
                w += (l * l) as f64;
                p = p * n + (n - i) % n;
            }
            weights.push(w);
            partner.push(p);
            // row-major increment, last axis fastest
            for axis in (0..d).rev() {
                idx[axis] += 1;
                if idx[axis] < n {
                    break;
                }
                idx[axis] = 0;
            }
        }
        Ok(Self {
            d,
            n,
            freqs,
            weights,
            partner,
        })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn n_per_dim(&self) -> usize {
        self.n
    }

    /// Number of frequencies, `n^d`.
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Integer frequency vector at position `k`.
    pub fn freq(&self, k: usize) -> &[i64] {
        &self.freqs[k * self.d..(k + 1) * self.d]
    }

    pub fn freqs(&self) -> impl Iterator<Item = &[i64]> + '_ {
        self.freqs.chunks_exact(self.d)
    }

    /// `|ℓ|²` per frequency.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Index of the frequency `-ℓ` reduced modulo the lattice.
    pub fn partner(&self, k: usize) -> usize {
        self.partner[k]
    }

    /// True when `-ℓ` wraps onto a frequency other than the literal negation,
    /// i.e. some component sits on the Nyquist value `-n/2`.
    pub fn touches_nyquist(&self, k: usize) -> bool {
        let nyq = -(self.n as i64) / 2;
        self.freq(k).iter().any(|&l| l == nyq)
    }

    /// Position of an integer frequency, if it lies inside the lattice.
    pub fn index_of(&self, freq: &[i64]) -> Option<usize> {
        if freq.len() != self.d {
            return None;
        }
        let half = (self.n / 2) as i64;
        let mut k = 0usize;
        for &l in freq {
            if l < -half || l >= half {
                return None;
            }
            let i = if l < 0 { (l + self.n as i64) as usize } else { l as usize };
            k = k * self.n + i;
        }
        Some(k)
    }

    /// Sobolev weights `(1 + |ℓ|²)^q`.
    pub fn sobolev_weights(&self, q: f64) -> Vec<f64> {
        self.weights.iter().map(|w| (1.0 + w).powf(q)).collect()
    }

    /// Grid coordinates `x_j = 2π j / n` along one axis.
    pub fn axis_points(&self) -> Vec<f64> {
        (0..self.n).map(|j| 2.0 * PI * j as f64 / self.n as f64).collect()
    }

    /// Physical grid point of flat sample index `k`, one coordinate per axis.
    pub fn grid_point(&self, mut k: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.d];
        for axis in (0..self.d).rev() {
            x[axis] = 2.0 * PI * (k % self.n) as f64 / self.n as f64;
            k /= self.n;
        }
        x
    }

    fn coeff_scale(&self) -> f64 {
        (2.0 * PI).powf(self.d as f64 / 2.0) / self.len() as f64
    }
}

fn fft_index_to_freq(i: usize, n: usize) -> i64 {
    if i < n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

/// Builds the lattice for dimension `d` with `n_per_dim` points per axis.
pub fn build_lattice(d: usize, n_per_dim: usize) -> Result<Arc<FrequencyLattice>> {
    FrequencyLattice::new(d, n_per_dim).map(Arc::new)
}

/// Fourier coefficients of a real field on the torus.
#[derive(Clone, Debug)]
pub struct SpectralField {
    lattice: Arc<FrequencyLattice>,
    coeffs: Vec<Complex64>,
}

impl PartialEq for SpectralField {
    fn eq(&self, other: &Self) -> bool {
        self.lattice == other.lattice && self.coeffs == other.coeffs
    }
}

impl SpectralField {
    pub fn new(lattice: Arc<FrequencyLattice>, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != lattice.len() {
            return Err(Error::SizeMismatch {
                expected: lattice.len(),
                got: coeffs.len(),
            });
        }
        Ok(Self { lattice, coeffs })
    }

    pub fn zeros(lattice: Arc<FrequencyLattice>) -> Self {
        let coeffs = vec![Complex64::new(0.0, 0.0); lattice.len()];
        Self { lattice, coeffs }
    }

    /// Field whose only nonzero coefficients are `c` at `freq` and `conj(c)`
    /// at `-freq` (a single real mode).
    pub fn single_mode(lattice: Arc<FrequencyLattice>, freq: &[i64], c: Complex64) -> Result<Self> {
        let k = lattice
            .index_of(freq)
            .ok_or_else(|| Error::InvalidLattice(format!("frequency {freq:?} outside lattice")))?;
        let mut f = Self::zeros(lattice);
        let p = f.lattice.partner(k);
        if p == k {
            f.coeffs[k] = Complex64::new(c.re, 0.0);
        } else {
            f.coeffs[k] = c;
            f.coeffs[p] = c.conj();
        }
        Ok(f)
    }

    pub fn lattice(&self) -> &Arc<FrequencyLattice> {
        &self.lattice
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<Complex64> {
        self.coeffs
    }

    pub fn coeff(&self, freq: &[i64]) -> Option<Complex64> {
        self.lattice.index_of(freq).map(|k| self.coeffs[k])
    }

    pub fn same_lattice(&self, other: &Self) -> Result<()> {
        if self.lattice != other.lattice {
            return Err(Error::LatticeMismatch);
        }
        Ok(())
    }

    /// Largest `|coeff(-ℓ) - conj(coeff(ℓ))|`.
    pub fn hermitian_defect(&self) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(k, c)| (self.coeffs[self.lattice.partner(k)] - c.conj()).norm())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    /// `Σ |coeff|²`, the squared L² norm.
    pub fn norm_sqr(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum()
    }

    /// L² inner product `⟨self, other⟩ = Σ coeff_self · conj(coeff_other)`.
    pub fn inner(&self, other: &Self) -> Result<Complex64> {
        self.same_lattice(other)?;
        Ok(self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| a * b.conj())
            .sum())
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            lattice: self.lattice.clone(),
            coeffs: self.coeffs.iter().map(|c| c * alpha).collect(),
        }
    }

    /// `alpha * self + beta * other`.
    pub fn axpby(&self, alpha: f64, other: &Self, beta: f64) -> Result<Self> {
        self.same_lattice(other)?;
        Ok(Self {
            lattice: self.lattice.clone(),
            coeffs: self
                .coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(a, b)| a * alpha + b * beta)
                .collect(),
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.axpby(1.0, other, -1.0)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.axpby(1.0, other, 1.0)
    }
}

/// Coefficients of the real field sampled on the uniform grid of `lattice`
/// (samples in row-major order, last axis fastest).
pub fn forward_transform(lattice: &Arc<FrequencyLattice>, values: &[f64]) -> Result<SpectralField> {
    if values.len() != lattice.len() {
        return Err(Error::SizeMismatch {
            expected: lattice.len(),
            got: values.len(),
        });
    }
    let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft_nd(&mut buf, lattice.dim(), lattice.n_per_dim(), false);
    let scale = lattice.coeff_scale();
    buf.iter_mut().for_each(|c| *c *= scale);
    SpectralField::new(lattice.clone(), buf)
}

/// Grid samples of a real field; rejects spectra that are not Hermitian.
pub fn inverse_transform(field: &SpectralField) -> Result<Vec<f64>> {
    let lattice = field.lattice();
    let defect = field.hermitian_defect();
    if defect > HERMITIAN_TOL * field.max_abs().max(1.0) {
        return Err(Error::NotHermitian(defect));
    }
    let mut buf = field.coeffs().to_vec();
    fft_nd(&mut buf, lattice.dim(), lattice.n_per_dim(), true);
    let scale = (2.0 * PI).powf(-(lattice.dim() as f64) / 2.0);
    Ok(buf.into_iter().map(|c| c.re * scale).collect())
}

/// Unnormalised multidimensional DFT over a row-major `n^d` buffer.
pub(crate) fn fft_nd(buf: &mut [Complex64], d: usize, n: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let fft = if inverse {
        planner.plan_fft_inverse(n)
    } else {
        planner.plan_fft_forward(n)
    };
    let mut line = vec![Complex64::new(0.0, 0.0); n];
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    for axis in 0..d {
        let stride = n.pow((d - 1 - axis) as u32);
        let block = stride * n;
        for start in (0..buf.len()).step_by(block) {
            for offset in 0..stride {
                let base = start + offset;
                for (j, slot) in line.iter_mut().enumerate() {
                    *slot = buf[base + j * stride];
                }
                fft.process_with_scratch(&mut line, &mut scratch);
                for (j, v) in line.iter().enumerate() {
                    buf[base + j * stride] = *v;
                }
            }
        }
    }
}
