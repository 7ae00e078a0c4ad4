//! TOML run configuration. Every section is optional; missing values fall
//! back to the defaults of the chosen experiment mode.

use std::path::{Path, PathBuf};

use hypoinv::experiments::{geometric_grid, ExperimentConfig, ForwardSpec, Mode, ModelTemplate, PriorSpec, TruthSpec};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub mode: Option<String>,
    pub seed: Option<u64>,
    pub model: Option<ModelSection>,
    pub experiment: Option<ExperimentSection>,
    pub estimate: Option<EstimateSection>,
    pub rates: Option<RatesSection>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub d: Option<usize>,
    pub n: Option<usize>,
    pub s: Option<f64>,
    pub forward: Option<ForwardSpec>,
    pub prior: Option<PriorSpec>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub delta_grid: Option<Vec<f64>>,
    pub delta_start: Option<f64>,
    pub delta_end: Option<f64>,
    pub delta_points: Option<usize>,
    pub zeta_list: Option<Vec<f64>>,
    pub n_replicates: Option<usize>,
    pub lattice_sizes: Option<Vec<usize>>,
    pub truth: Option<String>,
    pub kappa: Option<f64>,
    pub c0: Option<f64>,
    pub alpha: Option<f64>,
    pub c1: Option<f64>,
    pub n_inner: Option<usize>,
    pub slope_tolerance: Option<f64>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateSection {
    pub delta: Option<f64>,
    /// Measurement file (frequency CSV); synthesised when absent.
    pub data: Option<PathBuf>,
    /// Truth used for synthetic data: "prior", "hat" or "zero".
    pub truth: Option<String>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatesSection {
    pub r: Option<f64>,
    pub s: Option<f64>,
    pub t: Option<f64>,
    pub t0: Option<f64>,
    pub d: Option<f64>,
    pub zeta: Option<Vec<f64>>,
    pub zeta1: Option<Vec<f64>>,
    pub kappa: Option<f64>,
    pub alpha: Option<f64>,
}

pub fn load(path: &Path) -> Result<FileConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn parse(text: &str) -> Result<FileConfig, String> {
    toml::from_str(text).map_err(|e| e.to_string())
}

pub fn parse_truth(s: &str) -> Result<TruthSpec, CliError> {
    match s {
        "hat" => Ok(TruthSpec::Hat),
        "zero" => Ok(TruthSpec::Zero),
        other => Err(CliError::Config(format!("unknown truth '{other}' (expected hat or zero)"))),
    }
}

pub fn apply_model(base: &ModelTemplate, section: Option<&ModelSection>) -> ModelTemplate {
    let mut m = base.clone();
    if let Some(s) = section {
        if let Some(v) = s.d {
            m.d = v;
        }
        if let Some(v) = s.n {
            m.n = v;
        }
        if let Some(v) = s.s {
            m.s = v;
        }
        if let Some(v) = &s.forward {
            m.forward = v.clone();
        }
        if let Some(v) = &s.prior {
            m.prior = v.clone();
        }
    }
    m
}

/// Mode defaults overlaid with the file; the seed flag wins over the file.
pub fn experiment_config(file: &FileConfig, seed: Option<u64>) -> Result<ExperimentConfig, CliError> {
    let mode: Mode = file
        .mode
        .as_deref()
        .ok_or_else(|| CliError::Config("missing top-level 'mode'".into()))?
        .parse()
        .map_err(|e: hypoinv::Error| CliError::Config(e.to_string()))?;
    let mut cfg = ExperimentConfig::default_for(mode);
    cfg.model = apply_model(&cfg.model, file.model.as_ref());
    if let Some(s) = file.seed {
        cfg.master_seed = s;
    }
    if let Some(s) = seed {
        cfg.master_seed = s;
    }
    if let Some(e) = &file.experiment {
        match (&e.delta_grid, e.delta_start, e.delta_end, e.delta_points) {
            (Some(g), None, None, None) => cfg.delta_grid = g.clone(),
            (None, Some(a), Some(b), Some(k)) => cfg.delta_grid = geometric_grid(a, b, k),
            (None, None, None, None) => {}
            _ => {
                return Err(CliError::Config(
                    "give either delta_grid or all of delta_start, delta_end, delta_points".into(),
                ))
            }
        }
        if let Some(v) = &e.zeta_list {
            cfg.zeta_list = v.clone();
        }
        if let Some(v) = e.n_replicates {
            cfg.n_replicates = v;
        }
        if let Some(v) = &e.lattice_sizes {
            cfg.lattice_sizes = v.clone();
        }
        if let Some(v) = &e.truth {
            cfg.truth = parse_truth(v)?;
        }
        if e.kappa.is_some() {
            cfg.kappa = e.kappa;
        }
        cfg.c0 = e.c0.or(cfg.c0);
        cfg.alpha = e.alpha.or(cfg.alpha);
        cfg.c1 = e.c1.or(cfg.c1);
        if let Some(v) = e.n_inner {
            cfg.n_inner = v;
        }
        if let Some(v) = e.slope_tolerance {
            cfg.slope_tolerance = v;
        }
    }
    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(cfg)
}
