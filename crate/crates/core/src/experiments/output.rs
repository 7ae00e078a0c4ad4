//! CSV tables, two-column plot series and a JSON summary per experiment.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::runners::{AppendixBResult, ContractionTable, CredibleTable, Curve};
use super::RateTable;
use crate::error::Result;

/// Round-trip decimal formatting, 17 significant digits.
pub(crate) fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Clone, Debug, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExperimentOutput {
    Rates(RateTable),
    Contraction(ContractionTable),
    Credible(CredibleTable),
    AppendixB(AppendixBResult),
}

/// Writes `δ value` lines.
pub fn write_series(path: &Path, points: &[(f64, f64)]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    for (x, y) in points {
        writeln!(f, "{} {}", fmt(*x), fmt(*y))?;
    }
    Ok(())
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

fn zeta_tag(z: f64) -> String {
    format!("{z}")
}

impl ExperimentOutput {
    pub fn name(&self) -> &str {
        match self {
            ExperimentOutput::Rates(t) => &t.experiment,
            ExperimentOutput::Contraction(_) => "contraction",
            ExperimentOutput::Credible(_) => "credible",
            ExperimentOutput::AppendixB(_) => "appendix_b",
        }
    }

    pub fn warnings(&self) -> &[String] {
        match self {
            ExperimentOutput::Rates(t) => &t.warnings,
            ExperimentOutput::Contraction(t) => &t.warnings,
            ExperimentOutput::Credible(t) => &t.warnings,
            ExperimentOutput::AppendixB(t) => &t.warnings,
        }
    }

    /// Fraction of replicate solves dropped for solver non-convergence.
    pub fn drop_rate(&self) -> f64 {
        match self {
            ExperimentOutput::Rates(t) => t.drop_rate(),
            _ => 0.0,
        }
    }

    /// Writes every output file into `dir` and returns their paths.
    pub fn write_files(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut files = Vec::new();
        match self {
            ExperimentOutput::Rates(t) => {
                let path = dir.join(format!("{}.csv", t.experiment));
                let rows: Vec<Vec<String>> = t
                    .rows
                    .iter()
                    .map(|r| {
                        let s = t.slope_for(r.zeta);
                        vec![
                            t.experiment.clone(),
                            fmt(r.delta),
                            fmt(r.zeta),
                            fmt(r.mean_error),
                            fmt(r.stderr),
                            r.n.to_string(),
                            fmt(s.map_or(f64::NAN, |s| s.predicted_exponent)),
                            s.map_or(String::new(), |s| s.regime.clone()),
                        ]
                    })
                    .collect();
                write_csv(
                    &path,
                    &["experiment", "delta", "zeta", "mean_error", "stderr", "n", "predicted_exponent", "regime"],
                    &rows,
                )?;
                files.push(path);
                if t.rows.iter().any(|r| r.bias_term.is_some()) {
                    let path = dir.join("decomposition.csv");
                    let rows: Vec<Vec<String>> = t
                        .rows
                        .iter()
                        .map(|r| {
                            vec![
                                fmt(r.delta),
                                fmt(r.zeta),
                                fmt(r.mean_error),
                                fmt(r.bias_term.unwrap_or(f64::NAN)),
                                fmt(r.noise_term.unwrap_or(f64::NAN)),
                                r.decomposition_ok.unwrap_or(false).to_string(),
                            ]
                        })
                        .collect();
                    write_csv(
                        &path,
                        &["delta", "zeta", "mean_error", "bias_term", "noise_term", "triangle_ok"],
                        &rows,
                    )?;
                    files.push(path);
                }
                for s in &t.slopes {
                    let path = dir.join(format!("series_zeta_{}.dat", zeta_tag(s.zeta)));
                    let pts: Vec<(f64, f64)> = t.rows_for(s.zeta).iter().map(|r| (r.delta, r.mean_error)).collect();
                    write_series(&path, &pts)?;
                    files.push(path);
                }
            }
            ExperimentOutput::Contraction(t) => {
                let path = dir.join("contraction.csv");
                let rows: Vec<Vec<String>> = t
                    .rows
                    .iter()
                    .map(|r| {
                        vec![
                            "contraction".to_string(),
                            fmt(r.delta),
                            fmt(r.radius),
                            fmt(r.direct_p),
                            fmt(r.direct_stderr),
                            fmt(r.markov),
                            fmt(r.trace),
                            fmt(r.mise),
                            r.n_outer.to_string(),
                            r.n_inner.to_string(),
                            fmt(t.predicted_exponent),
                            t.regime.clone(),
                        ]
                    })
                    .collect();
                write_csv(
                    &path,
                    &[
                        "experiment",
                        "delta",
                        "radius",
                        "direct_p",
                        "direct_stderr",
                        "markov",
                        "trace",
                        "mise",
                        "n_outer",
                        "n_inner",
                        "predicted_exponent",
                        "regime",
                    ],
                    &rows,
                )?;
                files.push(path);
                for (name, pts) in [
                    ("series_direct.dat", t.rows.iter().map(|r| (r.delta, r.direct_p)).collect::<Vec<_>>()),
                    ("series_markov.dat", t.rows.iter().map(|r| (r.delta, r.markov)).collect()),
                ] {
                    let path = dir.join(name);
                    write_series(&path, &pts)?;
                    files.push(path);
                }
            }
            ExperimentOutput::Credible(t) => {
                let path = dir.join("credible.csv");
                let rows: Vec<Vec<String>> = t
                    .rows
                    .iter()
                    .map(|r| {
                        vec![
                            "credible".to_string(),
                            fmt(r.delta),
                            fmt(t.zeta1),
                            fmt(r.radius),
                            fmt(r.p_tail),
                            fmt(r.p_tail_stderr),
                            fmt(r.p_direct),
                            fmt(r.p_direct_stderr),
                            fmt(r.expected_norm_sq),
                            fmt(r.markov),
                            r.markov_ok.to_string(),
                            fmt(t.predicted_exponent),
                            t.regime.clone(),
                        ]
                    })
                    .collect();
                write_csv(
                    &path,
                    &[
                        "experiment",
                        "delta",
                        "zeta",
                        "radius",
                        "p_tail",
                        "p_tail_stderr",
                        "p_direct",
                        "p_direct_stderr",
                        "expected_norm_sq",
                        "markov",
                        "markov_ok",
                        "predicted_exponent",
                        "regime",
                    ],
                    &rows,
                )?;
                files.push(path);
                for (name, pts) in [
                    ("series_tail.dat", t.rows.iter().map(|r| (r.delta, r.p_tail)).collect::<Vec<_>>()),
                    ("series_direct.dat", t.rows.iter().map(|r| (r.delta, r.p_direct)).collect()),
                    ("series_markov.dat", t.rows.iter().map(|r| (r.delta, r.markov)).collect()),
                ] {
                    let path = dir.join(name);
                    write_series(&path, &pts)?;
                    files.push(path);
                }
            }
            ExperimentOutput::AppendixB(t) => {
                let path = dir.join("appendix_b.csv");
                let mut rows = Vec::new();
                for (raw, (norm, bound)) in t.raw.iter().zip(t.curves.iter().zip(&t.bounds)) {
                    for ((p, q), b) in raw.points.iter().zip(&norm.points).zip(&bound.points) {
                        rows.push(vec![
                            "appendix_b".to_string(),
                            fmt(p.0),
                            fmt(raw.zeta),
                            fmt(p.1),
                            fmt(q.1),
                            fmt(b.1),
                            fmt(bound.exponent.unwrap_or(f64::NAN)),
                            bound.regime.clone().unwrap_or_default(),
                        ]);
                    }
                }
                write_csv(
                    &path,
                    &[
                        "experiment",
                        "delta",
                        "zeta",
                        "error",
                        "normalized_error",
                        "normalized_bound",
                        "predicted_exponent",
                        "regime",
                    ],
                    &rows,
                )?;
                files.push(path);
                let mut series = |prefix: &str, curves: &[Curve]| -> Result<()> {
                    for c in curves {
                        let path = dir.join(format!("{prefix}_zeta_{}.dat", zeta_tag(c.zeta)));
                        write_series(&path, &c.points)?;
                        files.push(path);
                    }
                    Ok(())
                };
                series("curve", &t.curves)?;
                series("bound", &t.bounds)?;
            }
        }
        let path = dir.join("summary.json");
        fs::write(&path, serde_json::to_string_pretty(self)?)?;
        files.push(path);
        Ok(files)
    }
}
