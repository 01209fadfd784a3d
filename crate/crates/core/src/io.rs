//! File formats: CSV tables at 17 significant digits, pretty JSON, and
//! SHA-256 digests for the manifest.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::solver::{ConeLattice, FieldParams, FieldSolution};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Fs {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt17(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    fs::write(path, bytes).map_err(|source| IoError::Fs {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_text(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|source| IoError::Fs {
        path: path.display().to_string(),
        source,
    })
}

pub fn to_json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>, IoError> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s.into_bytes())
}

/// Simple CSV builder; cells never contain commas.
pub struct Csv {
    buf: String,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        let mut buf = header.join(",");
        buf.push('\n');
        Csv { buf }
    }

    pub fn row(&mut self, cells: &[String]) {
        self.buf.push_str(&cells.join(","));
        self.buf.push('\n');
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf.into_bytes()
    }
}

pub const FIELD_HEADER: &str = "k,t,x,phi,psi,blown";

/// Field CSV, one line per lattice node in row-major order. Masked nodes
/// carry `NaN` values and `blown = 1`.
pub fn field_csv(sol: &FieldSolution) -> Vec<u8> {
    let lat = &sol.lattice;
    let mut s = String::with_capacity(lat.len() * 96);
    s.push_str(FIELD_HEADER);
    s.push('\n');
    for k in 0..lat.num_rows() {
        let t = fmt17(lat.t(k));
        for c in lat.columns(k) {
            let i = lat.index(k, c).unwrap();
            let _ = writeln!(
                s,
                "{k},{t},{},{},{},{}",
                fmt17(lat.x(c)),
                fmt17(sol.phi[i]),
                fmt17(sol.psi[i]),
                u8::from(sol.blown[i])
            );
        }
    }
    s.into_bytes()
}

/// Reads a field CSV written by [`field_csv`] back onto `lattice`.
pub fn read_field_csv(
    path: &Path,
    lattice: ConeLattice,
    params: FieldParams,
) -> Result<FieldSolution, IoError> {
    let text = read_text(path)?;
    let err = |line: usize, message: String| IoError::Parse {
        path: path.display().to_string(),
        line,
        message,
    };
    let mut lines = text.lines();
    if lines.next() != Some(FIELD_HEADER) {
        return Err(err(1, format!("expected header `{FIELD_HEADER}`")));
    }
    let n = lattice.len();
    let (mut phi, mut psi, mut blown) = (
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    );
    for (no, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 6 {
            return Err(err(no + 2, "expected 6 columns".into()));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| err(no + 2, e.to_string()));
        phi.push(num(cells[3])?);
        psi.push(num(cells[4])?);
        blown.push(cells[5] == "1");
    }
    FieldSolution::from_nodes(lattice, params, phi, psi, blown).map_err(|e| {
        err(
            0,
            format!("{e} ({} rows for {n} nodes)", text.lines().count() - 1),
        )
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fmt17_roundtrips() {
        for v in [
            0.1,
            1.0 / 3.0,
            -2.5e-300,
            6.02214076e23,
            0.0,
            f64::MIN_POSITIVE,
        ] {
            assert_eq!(fmt17(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(fmt17(f64::NAN), "NaN");
        assert_eq!(fmt17(1.0), "1.0000000000000000e0");
    }

    #[test]
    fn field_csv_roundtrip() {
        let lat = ConeLattice::new(0.1, 0.3, 0.3).unwrap();
        let params = FieldParams {
            p: 2.0,
            mu: 1.0,
            gamma1: 1.0,
            gamma2: 1.0,
            v_max: 3.0,
        };
        let sol = FieldSolution::from_fn(lat.clone(), params, |x, t| {
            (1.0 + x.sin() + 10.0 * t, 1.0 / 3.0)
        });
        assert!(sol.masked_count() > 0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("field.csv");
        write_bytes(&path, &field_csv(&sol)).unwrap();
        let back = read_field_csv(&path, lat, params).unwrap();
        assert_eq!(back.blown, sol.blown);
        assert_eq!(back.first_blow_row, sol.first_blow_row);
        for i in 0..sol.phi.len() {
            assert!(back.phi[i] == sol.phi[i] || (back.phi[i].is_nan() && sol.phi[i].is_nan()));
        }
    }

    #[test]
    fn digest_known_value() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
