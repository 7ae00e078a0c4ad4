//! Monte-Carlo experiments that measure convergence and contraction rates
//! and compare fitted slopes with the exponents in [`crate::rates`].

mod output;
mod runners;
mod slope;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{sobolev_norm, GaussianPrior};
use crate::lattice::{build_lattice, forward_transform, FrequencyLattice, SpectralField};
use crate::ops::{bessel_op, heat_op, MultiplierOp, OperatorHandle};
use crate::posterior::GaussianModel;

pub use output::{write_series, ExperimentOutput};
pub use runners::{
    run_appendix_b, run_bayes_convergence, run_contraction, run_credible, run_experiment,
    run_frequentist_convergence, run_refinement, AppendixBResult, ContractionRow, ContractionTable, CredibleRow,
    CredibleTable, Curve,
};
pub use slope::{fit_loglog_slope, pre_saturation_rows, SlopeFit, SATURATION_THRESHOLD};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Bayes,
    Frequentist,
    Contraction,
    Credible,
    AppendixB,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Bayes => "bayes",
            Mode::Frequentist => "frequentist",
            Mode::Contraction => "contraction",
            Mode::Credible => "credible",
            Mode::AppendixB => "appendix_b",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bayes" => Ok(Mode::Bayes),
            "frequentist" => Ok(Mode::Frequentist),
            "contraction" => Ok(Mode::Contraction),
            "credible" => Ok(Mode::Credible),
            "appendix_b" => Ok(Mode::AppendixB),
            other => Err(Error::InvalidArgument(format!("unknown mode '{other}'"))),
        }
    }
}

/// Forward operator choice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ForwardSpec {
    /// `(1 + |ℓ|²)^exponent`
    Bessel { exponent: f64 },
    /// `(1 + iℓ_t + |ℓ_x|²)^{-1}` with time on the last axis.
    Heat,
    Identity,
}

/// Prior covariance `C_U = ((1 + |ℓ|²)^exponent)^power`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub exponent: f64,
    #[serde(default = "one")]
    pub power: u32,
}

fn one() -> u32 {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelTemplate {
    pub d: usize,
    pub n: usize,
    pub s: f64,
    pub forward: ForwardSpec,
    pub prior: PriorSpec,
}

impl ModelTemplate {
    /// Deblurring on T²: `A = (I-Δ)^{-1}`, `C_U = (I-Δ)^{-1}`, noise in `H^{-1.01}`.
    pub fn appendix_b() -> Self {
        Self {
            d: 2,
            n: 256,
            s: 1.01,
            forward: ForwardSpec::Bessel { exponent: -1.0 },
            prior: PriorSpec { exponent: -1.0, power: 1 },
        }
    }

    /// Deblurring on T² with the smoother prior `C_U = (I-Δ)^{-2}`.
    pub fn smooth_prior() -> Self {
        Self {
            d: 2,
            n: 128,
            s: 1.01,
            forward: ForwardSpec::Bessel { exponent: -1.0 },
            prior: PriorSpec { exponent: -1.0, power: 2 },
        }
    }

    pub fn lattice(&self) -> Result<Arc<FrequencyLattice>> {
        build_lattice(self.d, self.n)
    }

    pub fn forward_op(&self) -> Result<MultiplierOp> {
        Ok(match self.forward {
            ForwardSpec::Bessel { exponent } => bessel_op(exponent),
            ForwardSpec::Heat => {
                if self.d < 2 {
                    return Err(Error::InvalidArgument("heat operator needs d >= 2".into()));
                }
                heat_op(self.d - 1)
            }
            ForwardSpec::Identity => MultiplierOp::identity(),
        })
    }

    pub fn prior_cov(&self) -> Result<MultiplierOp> {
        if self.prior.power == 0 {
            return Err(Error::InvalidArgument("prior power must be at least 1".into()));
        }
        let base = bessel_op(self.prior.exponent);
        let mut cov = base.clone();
        for _ in 1..self.prior.power {
            cov = cov.compose(&base);
        }
        Ok(cov)
    }

    pub fn build(&self, lattice: &Arc<FrequencyLattice>, delta: f64) -> Result<GaussianModel> {
        let prior = GaussianPrior::new(self.prior_cov()?.into())?;
        GaussianModel::new(
            OperatorHandle::from(self.forward_op()?),
            prior,
            self.s,
            lattice.clone(),
            delta,
        )
    }

    pub fn with_n(&self, n: usize) -> Self {
        Self { n, ..self.clone() }
    }
}

/// Fixed truth of a frequentist run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TruthSpec {
    Hat,
    Zero,
}

#[derive(Clone, Debug)]
pub struct TruthField {
    pub u_dagger: SpectralField,
    pub description: String,
}

impl TruthField {
    pub fn norm(&self, q: f64) -> f64 {
        sobolev_norm(&self.u_dagger, q)
    }

    pub fn from_spec(spec: &TruthSpec, lattice: &Arc<FrequencyLattice>) -> Result<Self> {
        match spec {
            TruthSpec::Hat => make_hat_truth(lattice),
            TruthSpec::Zero => Ok(Self {
                u_dagger: SpectralField::zeros(lattice.clone()),
                description: "zero".into(),
            }),
        }
    }
}

/// `h(x) = max(0, 1 - |x - π| / (π/2))`.
pub fn hat(x: f64) -> f64 {
    use std::f64::consts::{FRAC_PI_2, PI};
    (1.0 - (x - PI).abs() / FRAC_PI_2).max(0.0)
}

/// Tensor pyramid `u†(x, y) = h(x) h(y)` sampled on the grid.
pub fn make_hat_truth(lattice: &Arc<FrequencyLattice>) -> Result<TruthField> {
    if lattice.dim() != 2 {
        return Err(Error::InvalidArgument(format!(
            "hat truth is defined on T², lattice has d = {}",
            lattice.dim()
        )));
    }
    let values: Vec<f64> = (0..lattice.len())
        .map(|k| {
            let x = lattice.grid_point(k);
            hat(x[0]) * hat(x[1])
        })
        .collect();
    Ok(TruthField {
        u_dagger: forward_transform(lattice, &values)?,
        description: "tensor hat h(x)h(y), centre (π, π), half-width π/2".into(),
    })
}

/// `points` geometric values from `start` down to `end`, both included.
pub fn geometric_grid(start: f64, end: f64, points: usize) -> Vec<f64> {
    let ratio = (end / start).ln() / (points as f64 - 1.0).max(1.0);
    let mut g: Vec<f64> = (0..points).map(|i| start * (ratio * i as f64).exp()).collect();
    if let Some(last) = g.last_mut() {
        *last = end;
    }
    g
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub model: ModelTemplate,
    pub delta_grid: Vec<f64>,
    pub zeta_list: Vec<f64>,
    pub n_replicates: usize,
    pub master_seed: u64,
    /// Extra lattice sizes for refinement checks.
    #[serde(default)]
    pub lattice_sizes: Vec<usize>,
    pub truth: TruthSpec,
    /// Contraction radius exponent `κ`.
    pub kappa: Option<f64>,
    /// Contraction radius constant `c₀`; calibrated from the largest δ if absent.
    pub c0: Option<f64>,
    /// Credible radius exponent `α`; `γ/4` if absent.
    pub alpha: Option<f64>,
    /// Credible radius constant `C₁`; calibrated from the largest δ if absent.
    pub c1: Option<f64>,
    /// Inner Monte-Carlo draws per δ (contraction, credible).
    pub n_inner: usize,
    pub slope_tolerance: f64,
}

impl ExperimentConfig {
    pub fn default_for(mode: Mode) -> Self {
        let base = Self {
            mode,
            model: ModelTemplate::smooth_prior(),
            delta_grid: geometric_grid(1e-1, 1e-3, 7),
            zeta_list: vec![-3.5, 0.0],
            n_replicates: 16,
            master_seed: 20_240_917,
            lattice_sizes: Vec::new(),
            truth: TruthSpec::Hat,
            kappa: None,
            c0: None,
            alpha: None,
            c1: None,
            n_inner: 200,
            slope_tolerance: 0.15,
        };
        match mode {
            Mode::Bayes => base,
            Mode::Frequentist => Self {
                delta_grid: geometric_grid(1e-2, 1e-4, 7),
                zeta_list: vec![0.0],
                ..base
            },
            Mode::Contraction => Self {
                delta_grid: geometric_grid(1e-2, 1e-4, 7),
                zeta_list: vec![0.0],
                kappa: Some(0.1),
                ..base
            },
            Mode::Credible => Self {
                model: ModelTemplate::appendix_b().with_n(128),
                zeta_list: vec![-3.0],
                n_inner: 4000,
                ..base
            },
            Mode::AppendixB => Self {
                model: ModelTemplate::appendix_b(),
                delta_grid: geometric_grid(5e-6 * 10f64.powf(1.5), 5e-6, 4),
                zeta_list: vec![-1.0, -0.5, 0.0, 0.5, 1.0],
                n_replicates: 8,
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.delta_grid;
        if g.len() < 4 {
            return Err(Error::InvalidArgument(format!("delta_grid needs at least 4 points, got {}", g.len())));
        }
        if g.iter().any(|d| !(*d > 0.0) || !d.is_finite()) {
            return Err(Error::InvalidArgument("delta_grid values must be positive and finite".into()));
        }
        if g.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidArgument("delta_grid must be strictly decreasing".into()));
        }
        let decades = (g[0] / g[g.len() - 1]).log10();
        if decades < 1.5 - 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "delta_grid spans {decades:.3} decades, need at least 1.5"
            )));
        }
        if self.n_replicates < 8 {
            return Err(Error::InvalidArgument(format!(
                "n_replicates must be at least 8, got {}",
                self.n_replicates
            )));
        }
        if self.zeta_list.is_empty() {
            return Err(Error::InvalidArgument("zeta_list is empty".into()));
        }
        if self.mode == Mode::Contraction && self.kappa.is_none() {
            return Err(Error::InvalidArgument("contraction needs kappa".into()));
        }
        if matches!(self.mode, Mode::Contraction | Mode::Credible) && self.n_inner < 100 {
            return Err(Error::InvalidArgument(format!("n_inner must be at least 100, got {}", self.n_inner)));
        }
        if matches!(self.mode, Mode::AppendixB | Mode::Frequentist | Mode::Contraction)
            && self.truth == TruthSpec::Hat
            && self.model.d != 2
        {
            return Err(Error::InvalidArgument("hat truth needs d = 2".into()));
        }
        Ok(())
    }
}

/// One δ-row of a rate table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub delta: f64,
    pub zeta: f64,
    pub mean_error: f64,
    pub stderr: f64,
    pub n: usize,
    pub dropped: usize,
    /// Mean of `‖δ² Z⁻¹ C_U⁻¹ U‖_{H^ζ}` (prior-bias part of the error).
    pub bias_term: Option<f64>,
    /// Mean of `‖Z⁻¹ A* (δE)‖_{H^ζ}` (noise part of the error).
    pub noise_term: Option<f64>,
    /// Whether the triangle bound `err ≤ bias + noise` held for every replicate.
    pub decomposition_ok: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeSummary {
    pub zeta: f64,
    pub fit: Option<SlopeFit>,
    pub fit_error: Option<String>,
    pub predicted_exponent: f64,
    pub regime: String,
}

impl SlopeSummary {
    pub fn slope(&self) -> Option<f64> {
        self.fit.as_ref().map(|f| f.slope)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateTable {
    pub experiment: String,
    pub rows: Vec<RateRow>,
    pub slopes: Vec<SlopeSummary>,
    pub warnings: Vec<String>,
}

impl RateTable {
    pub fn rows_for(&self, zeta: f64) -> Vec<&RateRow> {
        self.rows.iter().filter(|r| r.zeta == zeta).collect()
    }

    pub fn slope_for(&self, zeta: f64) -> Option<&SlopeSummary> {
        self.slopes.iter().find(|s| s.zeta == zeta)
    }

    pub fn dropped(&self) -> usize {
        self.rows.iter().map(|r| r.dropped).sum()
    }

    pub fn drop_rate(&self) -> f64 {
        let total: usize = self.rows.iter().map(|r| r.n + r.dropped).sum();
        if total == 0 {
            0.0
        } else {
            self.dropped() as f64 / total as f64
        }
    }
}

/// `(mean, sample std / √n)`.
pub(crate) fn mean_stderr(vals: &[f64]) -> (f64, f64) {
    let n = vals.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = vals.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, f64::NAN);
    }
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}
