//! Spectral fields as CSV: one row per lattice frequency, columns
//! `l0, …, l{d-1}, re, im`, rows in lattice order.

use std::path::Path;
use std::sync::Arc;

use hypoinv::{FrequencyLattice, SpectralField};
use num_complex::Complex64;

use crate::CliError;

pub fn write_field(path: &Path, field: &SpectralField) -> Result<(), CliError> {
    let lat = field.lattice();
    let mut text = String::new();
    let header: Vec<String> = (0..lat.dim()).map(|i| format!("l{i}")).chain(["re".into(), "im".into()]).collect();
    text.push_str(&header.join(","));
    text.push('\n');
    for (k, c) in field.coeffs().iter().enumerate() {
        for f in lat.freq(k) {
            text.push_str(&f.to_string());
            text.push(',');
        }
        text.push_str(&format!("{:.16e},{:.16e}\n", c.re, c.im));
    }
    std::fs::write(path, text).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

/// Reads a field on `lattice`. Every frequency must appear exactly once.
pub fn read_field(path: &Path, lattice: &Arc<FrequencyLattice>) -> Result<SpectralField, CliError> {
    let bad = |line: usize, msg: String| CliError::Config(format!("{}: line {line}: {msg}", path.display()));
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let d = lattice.dim();
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| bad(1, "empty file".into()))?;
    let expected: Vec<String> = (0..d).map(|i| format!("l{i}")).chain(["re".into(), "im".into()]).collect();
    let got: Vec<&str> = header.split(',').map(str::trim).collect();
    if got != expected {
        return Err(bad(1, format!("header must be '{}'", expected.join(","))));
    }
    let mut coeffs = vec![Complex64::new(0.0, 0.0); lattice.len()];
    let mut seen = vec![false; lattice.len()];
    for (i, line) in lines {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != d + 2 {
            return Err(bad(line_no, format!("expected {} columns, found {}", d + 2, cols.len())));
        }
        let freq: Vec<i64> = cols[..d]
            .iter()
            .map(|c| c.parse::<i64>().map_err(|e| bad(line_no, format!("frequency '{c}': {e}"))))
            .collect::<Result<_, _>>()?;
        let num = |c: &str| c.parse::<f64>().map_err(|e| bad(line_no, format!("value '{c}': {e}")));
        let value = Complex64::new(num(cols[d])?, num(cols[d + 1])?);
        let k = lattice
            .index_of(&freq)
            .ok_or_else(|| bad(line_no, format!("frequency {freq:?} is outside the lattice")))?;
        if seen[k] {
            return Err(bad(line_no, format!("frequency {freq:?} listed twice")));
        }
        seen[k] = true;
        coeffs[k] = value;
    }
    if let Some(k) = seen.iter().position(|s| !s) {
        return Err(bad(0, format!("frequency {:?} missing", lattice.freq(k))).with_file_level());
    }
    SpectralField::new(lattice.clone(), coeffs).map_err(|e| CliError::Config(e.to_string()))
}

impl CliError {
    fn with_file_level(self) -> Self {
        match self {
            CliError::Config(msg) => CliError::Config(msg.replacen(": line 0:", ":", 1)),
            other => other,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use hypoinv::{build_lattice, sample_white_noise};

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let lat = build_lattice(2, 8).unwrap();
        let u = sample_white_noise(&lat, 3);
        let p = dir.path().join("u.csv");
        write_field(&p, &u).unwrap();
        let v = read_field(&p, &lat).unwrap();
        assert_eq!(u.coeffs(), v.coeffs());
        let q = dir.path().join("v.csv");
        write_field(&q, &v).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&q).unwrap());
    }

    #[test]
    fn malformed_rows_name_their_line() {
        let dir = tempfile::tempdir().unwrap();
        let lat = build_lattice(1, 4).unwrap();
        let p = dir.path().join("bad.csv");
        std::fs::write(&p, "l0,re,im\n0,1,0\n1,abc,0\n").unwrap();
        let err = read_field(&p, &lat).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
        std::fs::write(&p, "l0,re,im\n0,1,0\n9,1,0\n").unwrap();
        assert!(read_field(&p, &lat).unwrap_err().to_string().contains("outside"));
        std::fs::write(&p, "l0,re,im\n0,1,0\n").unwrap();
        assert!(read_field(&p, &lat).unwrap_err().to_string().contains("missing"));
        std::fs::write(&p, "k,re,im\n").unwrap();
        assert!(read_field(&p, &lat).unwrap_err().to_string().contains("header"));
    }
}
