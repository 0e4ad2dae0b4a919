//! Signal file formats: CSV (index, theta, phi, q, value) and flat binary.

use crate::error::{QspaceError, Result};
use crate::sampling::GridFile;

/// A stored acquisition: per-sample locations and measured values.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalFile {
    /// (theta, phi, q) per sample; q = sqrt(b) under the b = q^2 convention.
    pub locations: Vec<(f64, f64, f64)>,
    pub values: Vec<f64>,
}

impl SignalFile {
    /// Assemble sample locations from a grid (single-shell q from the b-value).
    pub fn from_grid_values(grid: &GridFile, single_shell_b: f64, values: Vec<f64>) -> Result<Self> {
        let locations: Vec<(f64, f64, f64)> = match grid {
            GridFile::Single(g) => {
                let q = single_shell_b.sqrt();
                g.points().into_iter().map(|(t, p)| (t, p, q)).collect()
            }
            GridFile::Multi(g) => g
                .shells
                .iter()
                .flat_map(|sh| sh.grid.points().into_iter().map(move |(t, p)| (t, p, sh.q)))
                .collect(),
        };
        if locations.len() != values.len() {
            return Err(QspaceError::Validation(format!(
                "{} samples in grid, {} values",
                locations.len(),
                values.len()
            )));
        }
        Ok(SignalFile { locations, values })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,theta,phi,q,value\n");
        for (i, ((t, p, q), v)) in self.locations.iter().zip(&self.values).enumerate() {
            out.push_str(&format!("{i},{t:e},{p:e},{q:e},{v:e}\n"));
        }
        out
    }

    pub fn from_csv_str(s: &str) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(s.as_bytes());
        let mut locations = Vec::new();
        let mut values = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let f = |i: usize| -> Result<f64> {
                rec.get(i)
                    .ok_or_else(|| QspaceError::Parse("short signal CSV record".into()))?
                    .parse()
                    .map_err(|e| QspaceError::Parse(format!("bad float in signal CSV: {e}")))
            };
            locations.push((f(1)?, f(2)?, f(3)?));
            values.push(f(4)?);
        }
        Ok(SignalFile { locations, values })
    }

    const MAGIC: &'static [u8; 4] = b"QSIG";

    pub fn to_binary(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 32 * self.values.len());
        out.extend_from_slice(Self::MAGIC);
        out.extend_from_slice(&(self.values.len() as u64).to_le_bytes());
        for ((t, p, q), v) in self.locations.iter().zip(&self.values) {
            for x in [t, p, q, v] {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_binary(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[0..4] != Self::MAGIC {
            return Err(QspaceError::Parse("not a signal binary (bad magic)".into()));
        }
        let n = u64::from_le_bytes(bytes[4..12].try_into().unwrap()) as usize;
        if bytes.len() < 12 + 32 * n {
            return Err(QspaceError::Parse("signal binary truncated".into()));
        }
        let mut locations = Vec::with_capacity(n);
        let mut values = Vec::with_capacity(n);
        for i in 0..n {
            let off = 12 + 32 * i;
            let g = |k: usize| f64::from_le_bytes(bytes[off + 8 * k..off + 8 * k + 8].try_into().unwrap());
            locations.push((g(0), g(1), g(2)));
            values.push(g(3));
        }
        Ok(SignalFile { locations, values })
    }

    /// Load from a path, sniffing the format from the magic bytes.
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        if bytes.starts_with(Self::MAGIC) {
            Self::from_binary(&bytes)
        } else {
            Self::from_csv_str(
                std::str::from_utf8(&bytes).map_err(|e| QspaceError::Parse(e.to_string()))?,
            )
        }
    }
}
