//! Fourier-multiplier pseudodifferential operators on the torus, a dense
//! backend for operators that do not commute with the multipliers, and
//! numerical checks of hypoelliptic symbol bounds.
//!
//! Orders follow the smoothing convention: an operator of type `(t, t₀)`
//! satisfies `c₁ (1+|ℓ|)^{-t₀} ≤ |a(ℓ)| ≤ c₂ (1+|ℓ|)^{-t}` and maps
//! `H^q → H^{q+t}`. Elliptic operators have `t = t₀`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::sample_white_noise;
use crate::lattice::{fft_nd, FrequencyLattice, SpectralField};
use crate::rng::derive_seed;

/// Largest lattice the dense backend will materialise.
pub const DENSE_LIMIT: usize = 4096;

/// Growth factor under lattice refinement still counted as "bounded".
pub const REFINEMENT_FACTOR: f64 = 2.0;

/// Declared smoothing orders `(t, t₀)`, `t ≤ t₀`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothingOrders {
    pub t: f64,
    pub t0: f64,
}

impl SmoothingOrders {
    pub fn new(t: f64, t0: f64) -> Self {
        Self { t, t0 }
    }

    pub fn elliptic(t: f64) -> Self {
        Self { t, t0: t }
    }

    pub fn compose(self, other: Self) -> Self {
        Self {
            t: self.t + other.t,
            t0: self.t0 + other.t0,
        }
    }

    pub fn inverse(self) -> Self {
        Self {
            t: -self.t0,
            t0: -self.t,
        }
    }

    pub fn is_elliptic(self) -> bool {
        self.t == self.t0
    }
}

type SymbolFn = dyn Fn(&[i64]) -> Complex64 + Send + Sync;

/// Diagonal operator `û(ℓ) ↦ a(ℓ) û(ℓ)` defined by a symbol on `Z^d`.
#[derive(Clone)]
pub struct MultiplierOp {
    symbol: Arc<SymbolFn>,
    orders: SmoothingOrders,
    label: String,
}

impl fmt::Debug for MultiplierOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MultiplierOp")
            .field("label", &self.label)
            .field("orders", &self.orders)
            .finish()
    }
}

impl MultiplierOp {
    pub fn new<F>(label: impl Into<String>, orders: SmoothingOrders, symbol: F) -> Self
    where
        F: Fn(&[i64]) -> Complex64 + Send + Sync + 'static,
    {
        Self {
            symbol: Arc::new(symbol),
            orders,
            label: label.into(),
        }
    }

    pub fn identity() -> Self {
        Self::new("I", SmoothingOrders::elliptic(0.0), |_| Complex64::new(1.0, 0.0))
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn orders(&self) -> SmoothingOrders {
        self.orders
    }

    /// Same symbol with different declared orders.
    pub fn with_orders(&self, orders: SmoothingOrders) -> Self {
        Self {
            symbol: self.symbol.clone(),
            orders,
            label: self.label.clone(),
        }
    }

    /// Symbol value at an integer frequency.
    pub fn eval(&self, freq: &[i64]) -> Complex64 {
        (self.symbol)(freq)
    }

    /// Symbol realised on a lattice.
    ///
    /// Frequencies with a Nyquist component `-n/2` are their own negation
    /// modulo `n`, so an odd symbol cannot be Hermitian there. Those entries
    /// take the real value `sqrt(|a(ℓ)| |a(p)|)` with `p` the lattice partner,
    /// which keeps the map from symbols to lattice values multiplicative and
    /// real-preserving.
    pub fn lattice_symbol(&self, lattice: &FrequencyLattice) -> Vec<Complex64> {
        (0..lattice.len())
            .map(|k| {
                let a = self.eval(lattice.freq(k));
                if lattice.touches_nyquist(k) {
                    let b = self.eval(lattice.freq(lattice.partner(k)));
                    Complex64::new((a.norm() * b.norm()).sqrt(), 0.0)
                } else {
                    a
                }
            })
            .collect()
    }

    pub fn compose(&self, other: &Self) -> Self {
        let (a, b) = (self.symbol.clone(), other.symbol.clone());
        Self {
            symbol: Arc::new(move |l| a(l) * b(l)),
            orders: self.orders.compose(other.orders),
            label: format!("{}∘{}", self.label, other.label),
        }
    }

    pub fn adjoint(&self) -> Self {
        let a = self.symbol.clone();
        Self {
            symbol: Arc::new(move |l| a(l).conj()),
            orders: self.orders,
            label: format!("{}*", self.label),
        }
    }

    /// Pointwise reciprocal, without checking for zeros.
    pub fn reciprocal(&self) -> Self {
        let a = self.symbol.clone();
        Self {
            symbol: Arc::new(move |l| a(l).inv()),
            orders: self.orders.inverse(),
            label: format!("{}⁻¹", self.label),
        }
    }

    /// Pointwise square root of a real nonnegative symbol.
    pub fn sqrt(&self) -> Self {
        let a = self.symbol.clone();
        Self {
            symbol: Arc::new(move |l| Complex64::new(a(l).re.max(0.0).sqrt(), 0.0)),
            orders: SmoothingOrders::new(self.orders.t / 2.0, self.orders.t0 / 2.0),
            label: format!("{}^½", self.label),
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        let a = self.symbol.clone();
        Self {
            symbol: Arc::new(move |l| a(l) * c),
            orders: self.orders,
            label: format!("{c}·{}", self.label),
        }
    }

    /// `self + other`; orders of the smoother part are dropped to the rougher one.
    pub fn sum(&self, other: &Self) -> Self {
        let (a, b) = (self.symbol.clone(), other.symbol.clone());
        Self {
            symbol: Arc::new(move |l| a(l) + b(l)),
            orders: SmoothingOrders::new(
                self.orders.t.min(other.orders.t),
                self.orders.t0.min(other.orders.t0),
            ),
            label: format!("({}+{})", self.label, other.label),
        }
    }

    pub fn apply(&self, u: &SpectralField) -> SpectralField {
        let sym = self.lattice_symbol(u.lattice());
        let coeffs = u.coeffs().iter().zip(&sym).map(|(c, a)| c * a).collect();
        SpectralField::new(u.lattice().clone(), coeffs).expect("lattice-sized")
    }

    pub fn densify(&self, lattice: &Arc<FrequencyLattice>) -> Result<DenseOp> {
        check_dense_size(lattice)?;
        let diag = DVector::from_vec(self.lattice_symbol(lattice));
        Ok(DenseOp {
            matrix: Arc::new(DMatrix::from_diagonal(&diag)),
            lattice: lattice.clone(),
            orders: Some(self.orders),
            label: self.label.clone(),
        })
    }
}

/// Bessel potential `(I - Δ)^a`, symbol `(1 + |ℓ|²)^a`, type `(-2a, -2a)`.
pub fn bessel_op(a: f64) -> MultiplierOp {
    MultiplierOp::new(
        format!("(I-Δ)^{a}"),
        SmoothingOrders::elliptic(-2.0 * a),
        move |l| {
            let w: i64 = l.iter().map(|x| x * x).sum();
            Complex64::new((1.0 + w as f64).powf(a), 0.0)
        },
    )
}

/// Shifted periodic heat operator `(1 + ∂_t - Δ_x)^{-1}` on `T^{d_x} × T¹`,
/// with the last lattice axis playing the role of time. Symbol
/// `(1 + i ℓ_t + |ℓ_x|²)^{-1}`, hypoelliptic of type `(1, 2)`.
pub fn heat_op(d_x: usize) -> MultiplierOp {
    MultiplierOp::new(
        format!("(1+∂t-Δx)^-1 [d_x={d_x}]"),
        SmoothingOrders::new(1.0, 2.0),
        move |l| {
            let (space, time) = l.split_at(d_x);
            let wx: i64 = space.iter().map(|x| x * x).sum();
            let lt = time.first().copied().unwrap_or(0);
            Complex64::new(1.0 + wx as f64, lt as f64).inv()
        },
    )
}

fn check_dense_size(lattice: &FrequencyLattice) -> Result<()> {
    if lattice.len() > DENSE_LIMIT {
        return Err(Error::TooLarge {
            size: lattice.len(),
            limit: DENSE_LIMIT,
        });
    }
    Ok(())
}

/// Matrix acting on coefficient vectors of one lattice.
#[derive(Clone, Debug)]
pub struct DenseOp {
    matrix: Arc<DMatrix<Complex64>>,
    lattice: Arc<FrequencyLattice>,
    orders: Option<SmoothingOrders>,
    label: String,
}

impl DenseOp {
    pub fn new(
        matrix: DMatrix<Complex64>,
        lattice: Arc<FrequencyLattice>,
        orders: Option<SmoothingOrders>,
        label: impl Into<String>,
    ) -> Result<Self> {
        check_dense_size(&lattice)?;
        if matrix.nrows() != lattice.len() || matrix.ncols() != lattice.len() {
            return Err(Error::SizeMismatch {
                expected: lattice.len(),
                got: matrix.nrows().max(matrix.ncols()),
            });
        }
        Ok(Self {
            matrix: Arc::new(matrix),
            lattice,
            orders,
            label: label.into(),
        })
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.matrix
    }

    pub fn lattice(&self) -> &Arc<FrequencyLattice> {
        &self.lattice
    }

    pub fn orders(&self) -> Option<SmoothingOrders> {
        self.orders
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn apply(&self, u: &SpectralField) -> Result<SpectralField> {
        if **u.lattice() != *self.lattice {
            return Err(Error::LatticeMismatch);
        }
        let v = DVector::from_column_slice(u.coeffs());
        let out = &*self.matrix * v;
        SpectralField::new(u.lattice().clone(), out.as_slice().to_vec())
    }

    pub fn adjoint(&self) -> Self {
        Self {
            matrix: Arc::new(self.matrix.adjoint()),
            lattice: self.lattice.clone(),
            orders: self.orders,
            label: format!("{}*", self.label),
        }
    }

    pub fn compose(&self, other: &Self) -> Result<Self> {
        if self.lattice != other.lattice {
            return Err(Error::LatticeMismatch);
        }
        let orders = match (self.orders, other.orders) {
            (Some(a), Some(b)) => Some(a.compose(b)),
            _ => None,
        };
        Ok(Self {
            matrix: Arc::new(&*self.matrix * &*other.matrix),
            lattice: self.lattice.clone(),
            orders,
            label: format!("{}∘{}", self.label, other.label),
        })
    }

    /// Inverse by LU; rejects matrices that are numerically singular.
    pub fn invert(&self) -> Result<Self> {
        let inv = self
            .matrix
            .clone_owned()
            .lu()
            .try_inverse()
            .ok_or_else(|| Error::Singular(format!("{} has no LU inverse", self.label)))?;
        if inv.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::Singular(format!("{} inverse is not finite", self.label)));
        }
        let check = &*self.matrix * &inv;
        let defect = (0..check.nrows())
            .flat_map(|i| (0..check.ncols()).map(move |j| (i, j)))
            .map(|(i, j)| {
                let target = if i == j { 1.0 } else { 0.0 };
                (check[(i, j)] - Complex64::new(target, 0.0)).norm()
            })
            .fold(0.0, f64::max);
        if defect > 1e-6 {
            return Err(Error::Singular(format!(
                "{} is numerically singular (inverse defect {defect:.2e})",
                self.label
            )));
        }
        Ok(Self {
            matrix: Arc::new(inv),
            lattice: self.lattice.clone(),
            orders: self.orders.map(SmoothingOrders::inverse),
            label: format!("{}⁻¹", self.label),
        })
    }

    /// Hermitian part's square root; negative eigenvalues below
    /// `1e-10 · λ_max` are clamped to zero, larger ones are rejected.
    pub fn sqrt_psd(&self) -> Result<Self> {
        let h = (&*self.matrix + self.matrix.adjoint()) * Complex64::new(0.5, 0.0);
        let eig = h.symmetric_eigen();
        let lmax = eig.eigenvalues.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        let mut roots = Vec::with_capacity(eig.eigenvalues.len());
        for &lam in eig.eigenvalues.iter() {
            if lam < -1e-10 * lmax.max(f64::MIN_POSITIVE) {
                return Err(Error::InvalidArgument(format!(
                    "{} is not positive semidefinite (eigenvalue {lam:.3e})",
                    self.label
                )));
            }
            roots.push(Complex64::new(lam.max(0.0).sqrt(), 0.0));
        }
        let v = &eig.eigenvectors;
        let root = v * DMatrix::from_diagonal(&DVector::from_vec(roots)) * v.adjoint();
        Ok(Self {
            matrix: Arc::new(root),
            lattice: self.lattice.clone(),
            orders: self
                .orders
                .map(|o| SmoothingOrders::new(o.t / 2.0, o.t0 / 2.0)),
            label: format!("{}^½", self.label),
        })
    }

    pub fn diagonal(&self) -> Vec<Complex64> {
        self.matrix.diagonal().as_slice().to_vec()
    }
}

/// Either a multiplier (lattice-independent) or a dense matrix.
#[derive(Clone, Debug)]
pub enum OperatorHandle {
    Multiplier(MultiplierOp),
    Dense(DenseOp),
}

impl From<MultiplierOp> for OperatorHandle {
    fn from(op: MultiplierOp) -> Self {
        OperatorHandle::Multiplier(op)
    }
}

impl From<DenseOp> for OperatorHandle {
    fn from(op: DenseOp) -> Self {
        OperatorHandle::Dense(op)
    }
}

impl OperatorHandle {
    pub fn identity() -> Self {
        MultiplierOp::identity().into()
    }

    pub fn orders(&self) -> Option<SmoothingOrders> {
        match self {
            OperatorHandle::Multiplier(m) => Some(m.orders()),
            OperatorHandle::Dense(d) => d.orders(),
        }
    }

    pub fn label(&self) -> &str {
        match self {
            OperatorHandle::Multiplier(m) => m.label(),
            OperatorHandle::Dense(d) => d.label(),
        }
    }

    /// Lattice the operator is bound to, `None` for multipliers.
    pub fn lattice(&self) -> Option<&Arc<FrequencyLattice>> {
        match self {
            OperatorHandle::Multiplier(_) => None,
            OperatorHandle::Dense(d) => Some(d.lattice()),
        }
    }

    pub fn as_multiplier(&self) -> Option<&MultiplierOp> {
        match self {
            OperatorHandle::Multiplier(m) => Some(m),
            OperatorHandle::Dense(_) => None,
        }
    }

    pub fn apply(&self, u: &SpectralField) -> Result<SpectralField> {
        match self {
            OperatorHandle::Multiplier(m) => Ok(m.apply(u)),
            OperatorHandle::Dense(d) => d.apply(u),
        }
    }

    pub fn densify(&self, lattice: &Arc<FrequencyLattice>) -> Result<DenseOp> {
        match self {
            OperatorHandle::Multiplier(m) => m.densify(lattice),
            OperatorHandle::Dense(d) if d.lattice() == lattice => Ok(d.clone()),
            OperatorHandle::Dense(_) => Err(Error::LatticeMismatch),
        }
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &Self) -> Result<Self> {
        use OperatorHandle::*;
        match (self, other) {
            (Multiplier(a), Multiplier(b)) => Ok(Multiplier(a.compose(b))),
            (Dense(a), Dense(b)) => a.compose(b).map(Dense),
            (Multiplier(a), Dense(b)) => a.densify(b.lattice())?.compose(b).map(Dense),
            (Dense(a), Multiplier(b)) => a.compose(&b.densify(a.lattice())?).map(Dense),
        }
    }

    pub fn adjoint(&self) -> Self {
        match self {
            OperatorHandle::Multiplier(m) => OperatorHandle::Multiplier(m.adjoint()),
            OperatorHandle::Dense(d) => OperatorHandle::Dense(d.adjoint()),
        }
    }

    /// Inverse, verified on `lattice` for multipliers.
    pub fn invert(&self, lattice: &FrequencyLattice) -> Result<Self> {
        match self {
            OperatorHandle::Multiplier(m) => {
                let sym = m.lattice_symbol(lattice);
                if let Some(k) = sym.iter().position(|a| a.norm() == 0.0 || !a.norm().is_finite()) {
                    return Err(Error::Singular(format!(
                        "{} vanishes at frequency {:?}",
                        m.label(),
                        lattice.freq(k)
                    )));
                }
                Ok(OperatorHandle::Multiplier(m.reciprocal()))
            }
            OperatorHandle::Dense(d) => {
                if **d.lattice() != *lattice {
                    return Err(Error::LatticeMismatch);
                }
                d.invert().map(OperatorHandle::Dense)
            }
        }
    }

    /// Square root of a self-adjoint positive semidefinite operator.
    pub fn sqrt_psd(&self) -> Result<Self> {
        match self {
            OperatorHandle::Multiplier(m) => Ok(OperatorHandle::Multiplier(m.sqrt())),
            OperatorHandle::Dense(d) => d.sqrt_psd().map(OperatorHandle::Dense),
        }
    }

    /// Diagonal of the operator in the Fourier basis.
    pub fn diagonal(&self, lattice: &FrequencyLattice) -> Result<Vec<Complex64>> {
        match self {
            OperatorHandle::Multiplier(m) => Ok(m.lattice_symbol(lattice)),
            OperatorHandle::Dense(d) if **d.lattice() == *lattice => Ok(d.diagonal()),
            OperatorHandle::Dense(_) => Err(Error::LatticeMismatch),
        }
    }
}

/// `A u = φ · (M u)`: multiplication by a positive band-limited function
/// after a Fourier multiplier. Does not commute with multipliers unless φ
/// is constant.
pub fn variable_coeff_op(
    phi: &[f64],
    m: &MultiplierOp,
    lattice: &Arc<FrequencyLattice>,
) -> Result<DenseOp> {
    check_dense_size(lattice)?;
    if phi.len() != lattice.len() {
        return Err(Error::SizeMismatch {
            expected: lattice.len(),
            got: phi.len(),
        });
    }
    if let Some(bad) = phi.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "coefficient function must be strictly positive, found {bad}"
        )));
    }
    let (d, n, len) = (lattice.dim(), lattice.n_per_dim(), lattice.len());
    let sym = m.lattice_symbol(lattice);
    let mut matrix = DMatrix::<Complex64>::zeros(len, len);
    let mut col = vec![Complex64::new(0.0, 0.0); len];
    for j in 0..len {
        col.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
        col[j] = sym[j];
        // coefficients -> grid -> multiply -> coefficients; the (2π)^{±d/2}
        // factors cancel, leaving 1/N from the forward/inverse DFT pair
        fft_nd(&mut col, d, n, true);
        for (c, p) in col.iter_mut().zip(phi) {
            *c *= *p;
        }
        fft_nd(&mut col, d, n, false);
        for (i, c) in col.iter().enumerate() {
            matrix[(i, j)] = c / len as f64;
        }
    }
    Ok(DenseOp {
        matrix: Arc::new(matrix),
        lattice: lattice.clone(),
        orders: Some(m.orders()),
        label: format!("φ·{}", m.label()),
    })
}

/// Per-lattice constants of the symbol bounds.
#[derive(Clone, Debug, Serialize)]
pub struct SymbolBounds {
    pub n_per_dim: usize,
    pub c1: f64,
    pub c2: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct HypoellipticityReport {
    pub orders: SmoothingOrders,
    pub per_lattice: Vec<SymbolBounds>,
    /// Smallest `c₁` and largest `c₂` over the sweep.
    pub c1: f64,
    pub c2: f64,
    pub pass: bool,
}

/// Measures `c₁ = min |a|(1+|ℓ|)^{t₀}` and `c₂ = max |a|(1+|ℓ|)^{t}` on each
/// lattice, using the operator's declared orders.
///
/// Passes when both constants are finite and positive on every lattice and
/// neither drifts by more than [`REFINEMENT_FACTOR`] from the coarsest to
/// the finest lattice.
pub fn hypoellipticity_check(op: &MultiplierOp, lattices: &[&FrequencyLattice]) -> HypoellipticityReport {
    let SmoothingOrders { t, t0 } = op.orders();
    let per_lattice: Vec<SymbolBounds> = lattices
        .iter()
        .map(|lat| {
            let sym = op.lattice_symbol(lat);
            let (mut c1, mut c2) = (f64::INFINITY, 0.0f64);
            for (k, a) in sym.iter().enumerate() {
                let bracket = 1.0 + lat.weights()[k].sqrt();
                c1 = c1.min(a.norm() * bracket.powf(t0));
                c2 = c2.max(a.norm() * bracket.powf(t));
            }
            SymbolBounds {
                n_per_dim: lat.n_per_dim(),
                c1,
                c2,
            }
        })
        .collect();
    let c1 = per_lattice.iter().map(|b| b.c1).fold(f64::INFINITY, f64::min);
    let c2 = per_lattice.iter().map(|b| b.c2).fold(0.0, f64::max);
    let finite = per_lattice
        .iter()
        .all(|b| b.c1.is_finite() && b.c2.is_finite() && b.c1 > 0.0 && b.c2 > 0.0);
    let stable = match (per_lattice.first(), per_lattice.last()) {
        (Some(first), Some(last)) => {
            last.c2 < REFINEMENT_FACTOR * first.c2 && first.c1 < REFINEMENT_FACTOR * last.c1
        }
        _ => false,
    };
    HypoellipticityReport {
        orders: op.orders(),
        per_lattice,
        c1,
        c2,
        pass: finite && stable,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SandwichRatios {
    pub n_per_dim: usize,
    /// max `‖A*A u‖_{H^{r+2t}} / ‖u‖_{H^r}`
    pub upper: f64,
    /// max `‖u‖_{H^r} / ‖A*A u‖_{H^{r+2t₀}}`
    pub lower: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SandwichReport {
    pub per_lattice: Vec<SandwichRatios>,
    pub pass: bool,
}

fn weighted_norm(coeffs: &[Complex64], weights: &[f64], q: f64) -> f64 {
    coeffs
        .iter()
        .zip(weights)
        .map(|(c, w)| (1.0 + w).powf(q) * c.norm_sqr())
        .sum::<f64>()
        .sqrt()
}

/// Two-sided Sobolev norm bounds for the normal operator `aa = A*A` of a
/// type-`(t, t₀)` operator:
///
/// ```text
/// ‖A*A u‖_{H^{r+2t}} ≤ C₁ ‖u‖_{H^r},     ‖u‖_{H^r} ≤ C₂ ‖A*A u‖_{H^{r+2t₀}}
/// ```
///
/// Ratios are maximised over `n_samples` white-noise fields and, for
/// multipliers, over every single-mode probe (which attains the operator
/// bound exactly). Dense operators are checked on their own lattice only.
pub fn norm_sandwich_check(
    aa: &OperatorHandle,
    r: f64,
    t: f64,
    t0: f64,
    n_samples: usize,
    lattices: &[Arc<FrequencyLattice>],
    seed: u64,
) -> Result<SandwichReport> {
    let mut per_lattice = Vec::new();
    for (li, lat) in lattices.iter().enumerate() {
        let w = lat.weights();
        let (mut upper, mut lower) = (0.0f64, 0.0f64);
        for i in 0..n_samples {
            let u = sample_white_noise(lat, derive_seed(seed, (li * n_samples + i) as u64));
            let v = aa.apply(&u)?;
            let nu = weighted_norm(u.coeffs(), w, r);
            upper = upper.max(weighted_norm(v.coeffs(), w, r + 2.0 * t) / nu);
            lower = lower.max(nu / weighted_norm(v.coeffs(), w, r + 2.0 * t0));
        }
        if let OperatorHandle::Multiplier(m) = aa {
            for (k, a) in m.lattice_symbol(lat).iter().enumerate() {
                let wk = 1.0 + w[k];
                upper = upper.max(wk.powf(t) * a.norm());
                lower = lower.max(1.0 / (wk.powf(t0) * a.norm()));
            }
        }
        per_lattice.push(SandwichRatios {
            n_per_dim: lat.n_per_dim(),
            upper,
            lower,
        });
    }
    let finite = per_lattice
        .iter()
        .all(|s| s.upper.is_finite() && s.lower.is_finite());
    let stable = match (per_lattice.first(), per_lattice.last()) {
        (Some(a), Some(b)) => b.upper < REFINEMENT_FACTOR * a.upper && b.lower < REFINEMENT_FACTOR * a.lower,
        _ => false,
    };
    Ok(SandwichReport {
        per_lattice,
        pass: finite && stable,
    })
}
