use std::path::{Path, PathBuf};

use hypoinv::experiments::{run_experiment, ExperimentConfig, ModelTemplate, TruthField};
use hypoinv::posterior::posterior_trace;
use hypoinv::rng::derive_seed;
use hypoinv::{
    bayes_rate, build_lattice, contraction_rate, credible_rate, frequentist_rate, sample_prior, sample_white_noise,
    sobolev_norm, PosteriorGaussian, SmoothnessParams, SpectralField,
};
use serde::Serialize;

use crate::config::{self, apply_model, FileConfig};
use crate::fieldio::{read_field, write_field};
use crate::manifest::{prepare_out_dir, RunManifest};
use crate::CliError;

pub const DEFAULT_SEED: u64 = 20_240_917;

fn rt(e: hypoinv::Error) -> CliError {
    CliError::Runtime(e.to_string())
}

fn f(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Debug, Default)]
pub struct RatesArgs {
    pub r: Option<f64>,
    pub s: Option<f64>,
    pub t: Option<f64>,
    pub t0: Option<f64>,
    pub d: Option<f64>,
    pub zeta: Vec<f64>,
    pub zeta1: Vec<f64>,
    pub kappa: Option<f64>,
    pub alpha: Option<f64>,
}

pub fn rates(file: &FileConfig, args: RatesArgs) -> Result<(), CliError> {
    let sec = file.rates.clone().unwrap_or_default();
    let need = |flag: Option<f64>, fallback: Option<f64>, name: &str| {
        flag.or(fallback).ok_or_else(|| CliError::Usage(format!("--{name} is required")))
    };
    let p = SmoothnessParams::new(
        need(args.r, sec.r, "r")?,
        need(args.s, sec.s, "s")?,
        need(args.t, sec.t, "t")?,
        need(args.t0, sec.t0, "t0")?,
        need(args.d, sec.d, "d")?,
    );
    let zetas = if args.zeta.is_empty() { sec.zeta.unwrap_or_else(|| vec![0.0]) } else { args.zeta };
    let zeta1s = if args.zeta1.is_empty() { sec.zeta1.unwrap_or_default() } else { args.zeta1 };
    let kappa = args.kappa.or(sec.kappa);
    let alpha = args.alpha.or(sec.alpha);

    println!("params r={} s={} t={} t0={} d={} tau={}", f(p.r), f(p.s), f(p.t), f(p.t0), f(p.d), f(p.tau()));
    for z in zetas {
        let b = bayes_rate(&p, z);
        println!("bayes zeta={} exponent={} regime={}", f(z), f(b.exponent), b.regime.tag());
    }
    let fr = frequentist_rate(&p);
    println!("frequentist exponent={} regime={}", f(fr.exponent), fr.regime.tag());
    let c = contraction_rate(&p, kappa);
    match (kappa, c.secondary_exponent) {
        (Some(k), Some(e)) => println!(
            "contraction kappa0={} kappa={} decay_exponent={} regime={}",
            f(c.exponent),
            f(k),
            f(e),
            c.regime.tag()
        ),
        _ => println!("contraction kappa0={} regime={}", f(c.exponent), c.regime.tag()),
    }
    for z1 in zeta1s {
        let cr = credible_rate(&p, z1, alpha);
        match (alpha, cr.secondary_exponent) {
            (Some(a), Some(e)) => println!(
                "credible zeta1={} gamma={} alpha={} bound_exponent={} regime={}",
                f(z1),
                f(cr.exponent),
                f(a),
                f(e),
                cr.regime.tag()
            ),
            _ => println!("credible zeta1={} gamma={} regime={}", f(z1), f(cr.exponent), cr.regime.tag()),
        }
    }
    for w in p.warnings() {
        eprintln!("warning: {w}");
    }
    Ok(())
}

#[derive(Debug, Default)]
pub struct EstimateArgs {
    pub delta: Option<f64>,
    pub data: Option<PathBuf>,
    pub truth: Option<String>,
    pub n: Option<usize>,
}

#[derive(Debug, Serialize)]
struct EstimateConfig {
    model: ModelTemplate,
    delta: f64,
    data: Option<PathBuf>,
    truth: Option<String>,
}

#[derive(Debug, Serialize)]
struct EstimateSummary {
    delta: f64,
    posterior_trace_l2: f64,
    map_norm_l2: f64,
    normal_residual: f64,
    truth_error_l2: Option<f64>,
}

pub fn estimate(
    file: &FileConfig,
    args: EstimateArgs,
    seed: Option<u64>,
    out: &Path,
    force: bool,
) -> Result<(), CliError> {
    let sec = file.estimate.clone().unwrap_or_default();
    let mut model = apply_model(&ModelTemplate::appendix_b(), file.model.as_ref());
    if let Some(n) = args.n {
        model.n = n;
    }
    let delta = args.delta.or(sec.delta).unwrap_or(1e-2);
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(CliError::Config(format!("delta must be positive, got {delta}")));
    }
    let data = args.data.or(sec.data);
    let truth = match (&data, args.truth.or(sec.truth)) {
        (Some(_), Some(_)) => return Err(CliError::Config("truth applies only to synthetic data".into())),
        (Some(_), None) => None,
        (None, t) => Some(t.unwrap_or_else(|| "prior".into())),
    };
    if let Some(t) = &truth {
        if !["prior", "hat", "zero"].contains(&t.as_str()) {
            return Err(CliError::Config(format!("unknown truth '{t}' (expected prior, hat or zero)")));
        }
        if t == "hat" && model.d != 2 {
            return Err(CliError::Config(format!("hat truth needs d = 2, model has d = {}", model.d)));
        }
    }
    let lattice = build_lattice(model.d, model.n).map_err(|e| CliError::Config(e.to_string()))?;
    let gm = model.build(&lattice, delta).map_err(|e| CliError::Config(e.to_string()))?;
    let m_file = data.as_deref().map(|p| read_field(p, &lattice)).transpose()?;
    let master_seed = seed.or(file.seed).unwrap_or(DEFAULT_SEED);

    prepare_out_dir(out, force)?;
    let cfg = EstimateConfig { model, delta, data, truth: truth.clone() };
    let mut manifest = RunManifest::start(
        "estimate",
        serde_json::to_value(&cfg).map_err(|e| CliError::Runtime(e.to_string()))?,
        master_seed,
    );
    for w in gm.warnings() {
        manifest.warn(w);
    }
    let mut files = Vec::new();
    let outcome = (|| -> Result<(), CliError> {
        let (m, u_true) = match m_file {
            Some(m) => (m, None),
            None => {
                let u = match truth.as_deref() {
                    Some("hat") => TruthField::from_spec(&hypoinv::experiments::TruthSpec::Hat, &lattice)
                        .map_err(rt)?
                        .u_dagger,
                    Some("zero") => SpectralField::zeros(lattice.clone()),
                    _ => sample_prior(gm.prior(), &lattice, derive_seed(master_seed, 0)).map_err(rt)?,
                };
                let noise = sample_white_noise(&lattice, derive_seed(master_seed, 1));
                let m = gm.fwd().apply(&u).map_err(rt)?.axpby(1.0, &noise, delta).map_err(rt)?;
                let path = out.join("truth.csv");
                write_field(&path, &u)?;
                files.push(path);
                (m, Some(u))
            }
        };
        let post = PosteriorGaussian::new(&gm, &m).map_err(rt)?;
        let summary = EstimateSummary {
            delta,
            posterior_trace_l2: posterior_trace(post.cov(), &lattice, 0.0).map_err(rt)?,
            map_norm_l2: sobolev_norm(post.mean(), 0.0),
            normal_residual: post.normal_residual(&m).map_err(rt)?,
            truth_error_l2: u_true
                .map(|u| post.mean().sub(&u).map(|e| sobolev_norm(&e, 0.0)))
                .transpose()
                .map_err(rt)?,
        };
        for (name, field) in [("data.csv", &m), ("map.csv", post.mean())] {
            let path = out.join(name);
            write_field(&path, field)?;
            files.push(path);
        }
        let path = out.join("summary.json");
        let text = serde_json::to_string_pretty(&summary).map_err(|e| CliError::Runtime(e.to_string()))?;
        std::fs::write(&path, text).map_err(|e| CliError::Runtime(e.to_string()))?;
        files.push(path);
        println!("posterior_trace_l2={}", f(summary.posterior_trace_l2));
        Ok(())
    })();
    manifest.files = files;
    manifest.finish(out, &outcome)?;
    outcome
}

pub fn experiment(
    file: &FileConfig,
    mode: Option<String>,
    seed: Option<u64>,
    out: &Path,
    force: bool,
) -> Result<(), CliError> {
    let mut file = file.clone();
    if mode.is_some() {
        file.mode = mode;
    }
    let cfg: ExperimentConfig = config::experiment_config(&file, seed)?;
    prepare_out_dir(out, force)?;
    let mut manifest = RunManifest::start(
        "experiment",
        serde_json::to_value(&cfg).map_err(|e| CliError::Runtime(e.to_string()))?,
        cfg.master_seed,
    );
    let outcome = (|| -> Result<(), CliError> {
        let result = run_experiment(&cfg).map_err(rt)?;
        for w in result.warnings() {
            manifest.warn(w.clone());
        }
        manifest.files = result.write_files(out).map_err(rt)?;
        let drop_rate = result.drop_rate();
        println!(
            "experiment={} files={} drop_rate={}",
            result.name(),
            manifest.files.len(),
            f(drop_rate)
        );
        if drop_rate >= 0.01 {
            return Err(CliError::Runtime(format!(
                "{:.2}% of replicates dropped for solver non-convergence",
                100.0 * drop_rate
            )));
        }
        Ok(())
    })();
    manifest.finish(out, &outcome)?;
    outcome
}
