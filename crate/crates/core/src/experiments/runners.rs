use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::output::ExperimentOutput;
use super::slope::{fit_loglog_slope, SlopeFit};
use super::{mean_stderr, ExperimentConfig, Mode, RateRow, RateTable, SlopeSummary, TruthField};
use crate::error::{Error, Result};
use crate::fields::{sample_prior, sample_white_noise, sobolev_norm, sobolev_norm_sqr};
use crate::lattice::{FrequencyLattice, SpectralField};
use crate::posterior::{
    credible_ball_prob, credible_ball_tail, map_estimate, posterior_trace, GaussianModel,
    PosteriorGaussian,
};
use crate::rates::{bayes_rate, contraction_rate, credible_rate, frequentist_rate, RatePrediction};
use crate::rng::derive_seed;

/// Dispatches on `cfg.mode`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    Ok(match cfg.mode {
        Mode::Bayes => ExperimentOutput::Rates(run_bayes_convergence(cfg)?),
        Mode::Frequentist => {
            let truth = TruthField::from_spec(&cfg.truth, &cfg.model.lattice()?)?;
            ExperimentOutput::Rates(run_frequentist_convergence(cfg, &truth)?)
        }
        Mode::Contraction => {
            let truth = TruthField::from_spec(&cfg.truth, &cfg.model.lattice()?)?;
            ExperimentOutput::Contraction(run_contraction(cfg, &truth)?)
        }
        Mode::Credible => ExperimentOutput::Credible(run_credible(cfg)?),
        Mode::AppendixB => ExperimentOutput::AppendixB(run_appendix_b(cfg)?),
    })
}

/// Non-convergence of the iterative solver drops the replicate; anything
/// else is fatal.
fn converged<T>(r: Result<T>) -> Result<Option<T>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::NotConverged { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

fn models_for(cfg: &ExperimentConfig, lattice: &Arc<FrequencyLattice>) -> Result<Vec<GaussianModel>> {
    let base = cfg.model.build(lattice, cfg.delta_grid[0])?;
    cfg.delta_grid.iter().map(|&d| base.with_delta(d)).collect()
}

fn summarize(deltas: &[f64], values: &[f64], zeta: f64, pred: &RatePrediction) -> SlopeSummary {
    let (fit, fit_error) = match fit_loglog_slope(deltas, values) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };
    SlopeSummary {
        zeta,
        fit,
        fit_error,
        predicted_exponent: pred.exponent,
        regime: pred.regime.tag().to_string(),
    }
}

/// Per replicate and δ: `[error, bias term, noise term]` for each ζ.
type Measurements = Vec<Vec<Option<Vec<[f64; 3]>>>>;

fn table_from(
    cfg: &ExperimentConfig,
    name: &str,
    data: &Measurements,
    with_terms: bool,
    predict: impl Fn(f64) -> RatePrediction,
    warnings: Vec<String>,
) -> RateTable {
    let mut rows = Vec::new();
    let mut slopes = Vec::new();
    for (j, &zeta) in cfg.zeta_list.iter().enumerate() {
        let mut means = Vec::new();
        for (k, &delta) in cfg.delta_grid.iter().enumerate() {
            let kept: Vec<[f64; 3]> = data.iter().filter_map(|rep| rep[k].as_ref().map(|v| v[j])).collect();
            let errs: Vec<f64> = kept.iter().map(|v| v[0]).collect();
            let (mean, stderr) = mean_stderr(&errs);
            means.push(mean);
            let term = |i: usize| with_terms.then(|| kept.iter().map(|v| v[i]).sum::<f64>() / kept.len() as f64);
            rows.push(RateRow {
                delta,
                zeta,
                mean_error: mean,
                stderr,
                n: kept.len(),
                dropped: data.len() - kept.len(),
                bias_term: term(1),
                noise_term: term(2),
                decomposition_ok: with_terms
                    .then(|| kept.iter().all(|v| v[0] <= (v[1] + v[2]) * (1.0 + 1e-12) + 1e-300)),
            });
        }
        slopes.push(summarize(&cfg.delta_grid, &means, zeta, &predict(zeta)));
    }
    RateTable {
        experiment: name.to_string(),
        rows,
        slopes,
        warnings,
    }
}

/// Draws `U` from the prior and `E` per replicate, forms
/// `M_δ = A U + δ E` for every δ and records `‖U_δ - U‖_{H^ζ}` together
/// with the bias and noise parts `δ² Z⁻¹ C_U⁻¹ U` and `Z⁻¹ A* (δE)`.
pub fn run_bayes_convergence(cfg: &ExperimentConfig) -> Result<RateTable> {
    cfg.validate()?;
    let lattice = cfg.model.lattice()?;
    let models = models_for(cfg, &lattice)?;
    let base = &models[0];
    let adj = base.fwd().adjoint();
    let data: Measurements = (0..cfg.n_replicates)
        .into_par_iter()
        .map(|i| {
            let seed = derive_seed(cfg.master_seed, i as u64);
            let u = sample_prior(base.prior(), &lattice, derive_seed(seed, 0))?;
            let e = sample_white_noise(&lattice, derive_seed(seed, 1));
            let au = base.fwd().apply(&u)?;
            let cinv_u = base.cov_inv().apply(&u)?;
            let ae = adj.apply(&e)?;
            models
                .iter()
                .map(|model| {
                    let delta = model.delta();
                    let m = au.axpby(1.0, &e, delta)?;
                    let Some(est) = converged(map_estimate(model, &m))? else {
                        return Ok(None);
                    };
                    let Some(bias) = converged(model.solve_normal(&cinv_u.scaled(delta * delta)))? else {
                        return Ok(None);
                    };
                    let Some(noise) = converged(model.solve_normal(&ae.scaled(delta)))? else {
                        return Ok(None);
                    };
                    let diff = est.sub(&u)?;
                    Ok(Some(
                        cfg.zeta_list
                            .iter()
                            .map(|&z| [sobolev_norm(&diff, z), sobolev_norm(&bias, z), sobolev_norm(&noise, z)])
                            .collect(),
                    ))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let params = base.params();
    let predict = |z: f64| match &params {
        Some(p) => bayes_rate(p, z),
        None => unknown_prediction(),
    };
    Ok(table_from(cfg, "bayes", &data, true, predict, base.warnings()))
}

fn unknown_prediction() -> RatePrediction {
    RatePrediction {
        exponent: f64::NAN,
        regime: crate::rates::Regime::OutOfRegime,
        secondary_exponent: None,
        hypotheses: Vec::new(),
    }
}

/// Fixed truth `u†`, noise-only replicates `M†_δ = A u† + δE`; records the
/// squared `H^ζ` error, whose mean at `ζ = 0` is the MISE.
pub fn run_frequentist_convergence(cfg: &ExperimentConfig, truth: &TruthField) -> Result<RateTable> {
    cfg.validate()?;
    let lattice = cfg.model.lattice()?;
    if **truth.u_dagger.lattice() != *lattice {
        return Err(Error::LatticeMismatch);
    }
    let models = models_for(cfg, &lattice)?;
    let base = &models[0];
    let au = base.fwd().apply(&truth.u_dagger)?;
    let data: Measurements = (0..cfg.n_replicates)
        .into_par_iter()
        .map(|i| {
            let seed = derive_seed(cfg.master_seed, i as u64);
            let e = sample_white_noise(&lattice, derive_seed(seed, 1));
            models
                .iter()
                .map(|model| {
                    let m = au.axpby(1.0, &e, model.delta())?;
                    let Some(est) = converged(map_estimate(model, &m))? else {
                        return Ok(None);
                    };
                    let diff = est.sub(&truth.u_dagger)?;
                    Ok(Some(
                        cfg.zeta_list
                            .iter()
                            .map(|&z| [sobolev_norm_sqr(&diff, z), 0.0, 0.0])
                            .collect(),
                    ))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let params = base.params();
    let predict = |_z: f64| match &params {
        Some(p) => frequentist_rate(p),
        None => unknown_prediction(),
    };
    let warnings = params.map(|p| p.warnings()).unwrap_or_default();
    Ok(table_from(cfg, "frequentist", &data, false, predict, warnings))
}

/// Repeats the bayes or frequentist experiment on every size in
/// `cfg.lattice_sizes`.
pub fn run_refinement(cfg: &ExperimentConfig) -> Result<Vec<(usize, RateTable)>> {
    cfg.lattice_sizes
        .iter()
        .map(|&n| {
            let c = ExperimentConfig {
                model: cfg.model.with_n(n),
                ..cfg.clone()
            };
            let table = match cfg.mode {
                Mode::Bayes => run_bayes_convergence(&c)?,
                Mode::Frequentist => {
                    let truth = TruthField::from_spec(&c.truth, &c.model.lattice()?)?;
                    run_frequentist_convergence(&c, &truth)?
                }
                other => {
                    return Err(Error::InvalidArgument(format!(
                        "refinement sweeps support bayes and frequentist, not {}",
                        other.name()
                    )))
                }
            };
            Ok((n, table))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContractionRow {
    pub delta: f64,
    /// `c₀ δ^κ`
    pub radius: f64,
    /// `Tr_{L²}(C_δ)`
    pub trace: f64,
    /// Mean of `‖U†_δ - u†‖²` over the noise draws.
    pub mise: f64,
    /// `(Tr + MISE) / radius²`
    pub markov: f64,
    /// Posterior mass outside the radius, averaged over noise draws.
    pub direct_p: f64,
    pub direct_stderr: f64,
    pub n_outer: usize,
    pub n_inner: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContractionTable {
    pub kappa: f64,
    pub kappa0: f64,
    pub c0: f64,
    /// Predicted probability decay `2(κ₀ - κ)`.
    pub predicted_exponent: f64,
    pub regime: String,
    pub rows: Vec<ContractionRow>,
    pub direct_slope: Option<SlopeFit>,
    pub markov_slope: Option<SlopeFit>,
    pub fit_errors: Vec<String>,
    pub warnings: Vec<String>,
}

/// `E_{u†} P_{M†}{‖u - u†‖_{L²} ≥ c₀ δ^κ}` by nested Monte Carlo: outer
/// noise draws give `U†_δ`, inner posterior draws test the ball. The
/// Markov path replaces the inner probability by
/// `(Tr C_δ + ‖U†_δ - u†‖²) / (c₀ δ^κ)²`.
///
/// Without `c0` the radius is set equal to the root mean square error at
/// the largest δ.
pub fn run_contraction(cfg: &ExperimentConfig, truth: &TruthField) -> Result<ContractionTable> {
    cfg.validate()?;
    let kappa = cfg.kappa.ok_or_else(|| Error::InvalidArgument("contraction needs kappa".into()))?;
    let lattice = cfg.model.lattice()?;
    if **truth.u_dagger.lattice() != *lattice {
        return Err(Error::LatticeMismatch);
    }
    let models = models_for(cfg, &lattice)?;
    let au = models[0].fwd().apply(&truth.u_dagger)?;
    let zero = SpectralField::zeros(lattice.clone());

    struct Level {
        post: PosteriorGaussian,
        trace: f64,
        biases: Vec<SpectralField>,
        mise: f64,
    }
    let levels: Vec<Level> = models
        .iter()
        .map(|model| {
            let post = PosteriorGaussian::new(model, &zero)?;
            let trace = posterior_trace(post.cov(), &lattice, 0.0)?;
            let biases: Vec<SpectralField> = (0..cfg.n_replicates)
                .into_par_iter()
                .map(|i| {
                    let seed = derive_seed(derive_seed(cfg.master_seed, i as u64), 0);
                    let e = sample_white_noise(&lattice, seed);
                    let m = au.axpby(1.0, &e, model.delta())?;
                    map_estimate(model, &m)?.sub(&truth.u_dagger)
                })
                .collect::<Result<_>>()?;
            let mise = biases.iter().map(|b| b.norm_sqr()).sum::<f64>() / biases.len() as f64;
            Ok(Level {
                post,
                trace,
                biases,
                mise,
            })
        })
        .collect::<Result<_>>()?;

    let d0 = cfg.delta_grid[0];
    let c0 = cfg
        .c0
        .unwrap_or_else(|| (levels[0].trace + levels[0].mise).sqrt() / d0.powf(kappa));

    let mut rows = Vec::new();
    for (level, &delta) in levels.iter().zip(&cfg.delta_grid) {
        let radius = c0 * delta.powf(kappa);
        let r2 = radius * radius;
        let fractions: Vec<f64> = level
            .biases
            .par_iter()
            .enumerate()
            .map(|(i, b)| {
                let seed = derive_seed(derive_seed(cfg.master_seed, i as u64), 1);
                let mut outside = 0usize;
                for j in 0..cfg.n_inner {
                    let w = level.post.sample_fluctuation(derive_seed(seed, j as u64))?;
                    if w.add(b)?.norm_sqr() >= r2 {
                        outside += 1;
                    }
                }
                Ok(outside as f64 / cfg.n_inner as f64)
            })
            .collect::<Result<_>>()?;
        let (direct_p, direct_stderr) = mean_stderr(&fractions);
        rows.push(ContractionRow {
            delta,
            radius,
            trace: level.trace,
            mise: level.mise,
            markov: (level.trace + level.mise) / r2,
            direct_p,
            direct_stderr,
            n_outer: cfg.n_replicates,
            n_inner: cfg.n_inner,
        });
    }

    let params = models[0].params();
    let pred = params.map(|p| contraction_rate(&p, Some(kappa)));
    let mut fit_errors = Vec::new();
    let mut fit = |vals: Vec<f64>, what: &str| match fit_loglog_slope(&cfg.delta_grid, &vals) {
        Ok(f) => Some(f),
        Err(e) => {
            fit_errors.push(format!("{what}: {e}"));
            None
        }
    };
    let direct_slope = fit(rows.iter().map(|r| r.direct_p).collect(), "direct");
    let markov_slope = fit(rows.iter().map(|r| r.markov).collect(), "markov");
    Ok(ContractionTable {
        kappa,
        kappa0: pred.as_ref().map_or(f64::NAN, |p| p.exponent),
        c0,
        predicted_exponent: pred.as_ref().and_then(|p| p.secondary_exponent).unwrap_or(f64::NAN),
        regime: pred.as_ref().map_or("out_of_regime", |p| p.regime.tag()).to_string(),
        rows,
        direct_slope,
        markov_slope,
        fit_errors,
        warnings: params.map(|p| p.warnings()).unwrap_or_default(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CredibleRow {
    pub delta: f64,
    /// `C₁ δ^α`
    pub radius: f64,
    /// `E‖W_δ‖²_{H^{ζ₁}}`, the weighted trace of `C_δ`.
    pub expected_norm_sq: f64,
    /// Markov bound `E‖W_δ‖² / radius²` on the outside probability.
    pub markov: f64,
    /// Outside probability from the conditional estimator.
    pub p_tail: f64,
    pub p_tail_stderr: f64,
    /// Outside probability from plain posterior sampling.
    pub p_direct: f64,
    pub p_direct_stderr: f64,
    pub markov_ok: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CredibleTable {
    pub zeta1: f64,
    pub alpha: f64,
    pub c1: f64,
    pub gamma: f64,
    /// Predicted decay `γ - 2α` of the outside probability.
    pub predicted_exponent: f64,
    pub regime: String,
    pub rows: Vec<CredibleRow>,
    pub tail_slope: Option<SlopeFit>,
    pub fit_error: Option<String>,
    pub warnings: Vec<String>,
}

/// `p_δ = 1 - μ_δ(B_{ζ₁}(0, C₁ δ^α))` over the δ grid, for
/// `ζ₁ = cfg.zeta_list[0]`.
///
/// Without `alpha` the exponent is `γ/4`; without `c1` the radius at the
/// largest δ equals `(E‖W_δ‖²_{H^{ζ₁}})^{1/2}`.
pub fn run_credible(cfg: &ExperimentConfig) -> Result<CredibleTable> {
    cfg.validate()?;
    let zeta1 = cfg.zeta_list[0];
    let lattice = cfg.model.lattice()?;
    let models = models_for(cfg, &lattice)?;
    let params = models[0]
        .params()
        .ok_or_else(|| Error::InvalidArgument("credible sweep needs declared operator orders".into()))?;
    let gamma = credible_rate(&params, zeta1, None).exponent;
    let alpha = cfg.alpha.unwrap_or(gamma / 4.0);
    let pred = credible_rate(&params, zeta1, Some(alpha));
    let zero = SpectralField::zeros(lattice.clone());

    let mut posts = Vec::new();
    let mut expected = Vec::new();
    for model in &models {
        let post = PosteriorGaussian::new(model, &zero)?;
        expected.push(posterior_trace(post.cov(), &lattice, zeta1)?);
        posts.push(post);
    }
    let d0 = cfg.delta_grid[0];
    let c1 = cfg.c1.unwrap_or_else(|| expected[0].sqrt() / d0.powf(alpha));

    let mut rows = Vec::new();
    for (k, ((post, &e2), &delta)) in posts.iter().zip(&expected).zip(&cfg.delta_grid).enumerate() {
        let radius = c1 * delta.powf(alpha);
        let seed = derive_seed(cfg.master_seed, k as u64);
        let direct = credible_ball_prob(post, zeta1, radius, cfg.n_inner, derive_seed(seed, 0))?;
        let tail = match post.cov().as_multiplier() {
            Some(m) => credible_ball_tail(m, &lattice, zeta1, radius, cfg.n_inner, derive_seed(seed, 1))?,
            None => crate::posterior::ProbabilityEstimate {
                p: 1.0 - direct.p,
                ..direct
            },
        };
        let markov = e2 / (radius * radius);
        rows.push(CredibleRow {
            delta,
            radius,
            expected_norm_sq: e2,
            markov,
            p_tail: tail.p,
            p_tail_stderr: tail.stderr,
            p_direct: 1.0 - direct.p,
            p_direct_stderr: direct.stderr,
            markov_ok: tail.p <= markov,
        });
    }
    let tails: Vec<f64> = rows.iter().map(|r| r.p_tail).collect();
    let (tail_slope, fit_error) = match fit_loglog_slope(&cfg.delta_grid, &tails) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };
    Ok(CredibleTable {
        zeta1,
        alpha,
        c1,
        gamma,
        predicted_exponent: pred.secondary_exponent.unwrap_or(f64::NAN),
        regime: pred.regime.tag().to_string(),
        rows,
        tail_slope,
        fit_error,
        warnings: models[0].warnings(),
    })
}

/// A `(δ, value)` series for one Sobolev index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub zeta: f64,
    pub points: Vec<(f64, f64)>,
    /// Power-law exponent for bound series.
    pub exponent: Option<f64>,
    pub regime: Option<String>,
}

impl Curve {
    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.1).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AppendixBResult {
    pub reference_delta: f64,
    /// `‖u† - u†_δ‖_{H^ζ}` before normalisation.
    pub raw: Vec<Curve>,
    /// Errors scaled to 1 at the reference δ.
    pub curves: Vec<Curve>,
    /// `(δ/δ_ref)^ν(ζ)` with the predicted mean-error exponent ν.
    pub bounds: Vec<Curve>,
    pub truth_norms: Vec<(f64, f64)>,
    pub warnings: Vec<String>,
}

/// Noiseless deblurring sweep: `m† = A u†`, `u†_δ` the MAP estimate at
/// every δ, errors normalised at the smallest δ of the grid.
pub fn run_appendix_b(cfg: &ExperimentConfig) -> Result<AppendixBResult> {
    cfg.validate()?;
    let lattice = cfg.model.lattice()?;
    let truth = TruthField::from_spec(&cfg.truth, &lattice)?;
    let models = models_for(cfg, &lattice)?;
    let m = models[0].fwd().apply(&truth.u_dagger)?;
    let errors: Vec<SpectralField> = models
        .par_iter()
        .map(|model| map_estimate(model, &m)?.sub(&truth.u_dagger))
        .collect::<Result<_>>()?;
    let reference_delta = *cfg.delta_grid.last().expect("validated grid");
    let params = models[0].params();
    let mut raw = Vec::new();
    let mut curves = Vec::new();
    let mut bounds = Vec::new();
    for &zeta in &cfg.zeta_list {
        let vals: Vec<f64> = errors.iter().map(|e| sobolev_norm(e, zeta)).collect();
        let norm = *vals.last().expect("validated grid");
        let points = |f: &dyn Fn(usize) -> f64| cfg.delta_grid.iter().enumerate().map(|(k, &d)| (d, f(k))).collect();
        raw.push(Curve {
            zeta,
            points: points(&|k| vals[k]),
            exponent: None,
            regime: None,
        });
        curves.push(Curve {
            zeta,
            points: points(&|k| vals[k] / norm),
            exponent: None,
            regime: None,
        });
        if let Some(p) = &params {
            let pred = bayes_rate(p, zeta);
            bounds.push(Curve {
                zeta,
                points: points(&|k| (cfg.delta_grid[k] / reference_delta).powf(pred.exponent)),
                exponent: Some(pred.exponent),
                regime: Some(pred.regime.tag().to_string()),
            });
        }
    }
    let truth_norms = [-1.0, 0.0, 1.0].iter().map(|&q| (q, truth.norm(q))).collect();
    Ok(AppendixBResult {
        reference_delta,
        raw,
        curves,
        bounds,
        truth_norms,
        warnings: models[0].warnings(),
    })
}
