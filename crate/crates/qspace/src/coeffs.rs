//! Coefficient containers for the even-degree SH basis and the SPF basis,
//! with native JSON and flat binary serialization.

use crate::error::{QspaceError, Result};
use crate::sph::{num_sh_coeffs, sh_indices, ShIndex};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Even-degree spherical harmonic coefficients, flat `ShIndex` order.
#[derive(Debug, Clone, PartialEq)]
pub struct ShCoeffs {
    pub l_max: u32,
    pub data: Vec<Complex64>,
}

impl ShCoeffs {
    pub fn zeros(l_max: u32) -> Self {
        ShCoeffs { l_max, data: vec![Complex64::ZERO; num_sh_coeffs(l_max)] }
    }

    pub fn from_data(l_max: u32, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != num_sh_coeffs(l_max) {
            return Err(QspaceError::Validation(format!(
                "expected {} coefficients for L={}, got {}",
                num_sh_coeffs(l_max),
                l_max,
                data.len()
            )));
        }
        Ok(ShCoeffs { l_max, data })
    }

    pub fn get(&self, ell: u32, m: i32) -> Complex64 {
        self.data[ShIndex { ell, m }.flat()]
    }

    pub fn set(&mut self, ell: u32, m: i32, v: Complex64) {
        self.data[ShIndex { ell, m }.flat()] = v;
    }

    /// Whether the represented signal is real: c_l^-m = (-1)^m conj(c_l^m).
    pub fn is_real_symmetric(&self, tol: f64) -> bool {
        sh_indices(self.l_max).all(|i| {
            if i.m < 0 {
                return true;
            }
            let a = self.get(i.ell, -i.m);
            let b = self.get(i.ell, i.m).conj() * if i.m % 2 == 0 { 1.0 } else { -1.0 };
            (a - b).norm() <= tol
        })
    }
}

/// SPF coefficients over (n = 0..N) x flat even-degree SH index at `l_max`,
/// n-major: `e = [e_000, e_02-2, ..., e_NLL]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpfCoeffs {
    pub n_max: u32,
    pub l_max: u32,
    pub data: Vec<Complex64>,
}

impl SpfCoeffs {
    pub fn zeros(n_max: u32, l_max: u32) -> Self {
        SpfCoeffs {
            n_max,
            l_max,
            data: vec![Complex64::ZERO; (n_max as usize + 1) * num_sh_coeffs(l_max)],
        }
    }

    pub fn from_data(n_max: u32, l_max: u32, data: Vec<Complex64>) -> Result<Self> {
        let want = (n_max as usize + 1) * num_sh_coeffs(l_max);
        if data.len() != want {
            return Err(QspaceError::Validation(format!(
                "expected {} SPF coefficients, got {}",
                want,
                data.len()
            )));
        }
        Ok(SpfCoeffs { n_max, l_max, data })
    }

    pub fn flat(&self, n: u32, ell: u32, m: i32) -> usize {
        n as usize * num_sh_coeffs(self.l_max) + ShIndex { ell, m }.flat()
    }

    pub fn get(&self, n: u32, ell: u32, m: i32) -> Complex64 {
        self.data[self.flat(n, ell, m)]
    }

    pub fn set(&mut self, n: u32, ell: u32, m: i32, v: Complex64) {
        let i = self.flat(n, ell, m);
        self.data[i] = v;
    }
}

// ---------------------------------------------------------------------------
// JSON format
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
pub struct ShEntry {
    ell: u32,
    m: i32,
    re: f64,
    im: f64,
}

#[derive(Serialize, Deserialize)]
pub struct SpfEntry {
    n: u32,
    ell: u32,
    m: i32,
    re: f64,
    im: f64,
}

/// Native JSON container for either coefficient kind.
#[derive(Serialize, Deserialize)]
#[serde(tag = "basis", rename_all = "snake_case")]
pub enum CoeffFile {
    Sh { l_max: u32, coeffs: Vec<ShEntry> },
    Spf { n_max: u32, l_max: u32, coeffs: Vec<SpfEntry> },
}

impl ShCoeffs {
    pub fn to_json(&self) -> Result<String> {
        let coeffs = sh_indices(self.l_max)
            .map(|i| {
                let v = self.get(i.ell, i.m);
                ShEntry { ell: i.ell, m: i.m, re: v.re, im: v.im }
            })
            .collect();
        Ok(serde_json::to_string_pretty(&CoeffFile::Sh { l_max: self.l_max, coeffs })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        match serde_json::from_str(s)? {
            CoeffFile::Sh { l_max, coeffs } => {
                let mut out = ShCoeffs::zeros(l_max);
                for e in coeffs {
                    let idx = ShIndex::new(e.ell, e.m)?;
                    out.data[idx.flat()] = Complex64::new(e.re, e.im);
                }
                Ok(out)
            }
            CoeffFile::Spf { .. } => {
                Err(QspaceError::Parse("expected SH coefficients, found SPF".into()))
            }
        }
    }
}

impl SpfCoeffs {
    pub fn to_json(&self) -> Result<String> {
        let mut coeffs = Vec::with_capacity(self.data.len());
        for n in 0..=self.n_max {
            for i in sh_indices(self.l_max) {
                let v = self.get(n, i.ell, i.m);
                coeffs.push(SpfEntry { n, ell: i.ell, m: i.m, re: v.re, im: v.im });
            }
        }
        Ok(serde_json::to_string_pretty(&CoeffFile::Spf {
            n_max: self.n_max,
            l_max: self.l_max,
            coeffs,
        })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        match serde_json::from_str(s)? {
            CoeffFile::Spf { n_max, l_max, coeffs } => {
                let mut out = SpfCoeffs::zeros(n_max, l_max);
                for e in coeffs {
                    ShIndex::new(e.ell, e.m)?;
                    out.set(e.n, e.ell, e.m, Complex64::new(e.re, e.im));
                }
                Ok(out)
            }
            CoeffFile::Sh { .. } => {
                Err(QspaceError::Parse("expected SPF coefficients, found SH".into()))
            }
        }
    }
}

// ---------------------------------------------------------------------------
// flat binary format: magic, kind, ordering tag, L, N, count, then
// little-endian f64 interleaved re/im
// ---------------------------------------------------------------------------

const MAGIC: &[u8; 4] = b"QSPC";
const ORDERING_FLAT_EVEN: u8 = 1; // n-major, even-degree flat (l, m)

fn write_header(out: &mut Vec<u8>, kind: u8, l_max: u32, n_max: u32, count: u64) {
    out.extend_from_slice(MAGIC);
    out.push(kind);
    out.push(ORDERING_FLAT_EVEN);
    out.extend_from_slice(&l_max.to_le_bytes());
    out.extend_from_slice(&n_max.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
}

fn read_header(bytes: &[u8]) -> Result<(u8, u32, u32, u64, &[u8])> {
    if bytes.len() < 22 || &bytes[0..4] != MAGIC {
        return Err(QspaceError::Parse("not a coefficient binary (bad magic)".into()));
    }
    let kind = bytes[4];
    if bytes[5] != ORDERING_FLAT_EVEN {
        return Err(QspaceError::Parse(format!("unknown ordering tag {}", bytes[5])));
    }
    let l_max = u32::from_le_bytes(bytes[6..10].try_into().unwrap());
    let n_max = u32::from_le_bytes(bytes[10..14].try_into().unwrap());
    let count = u64::from_le_bytes(bytes[14..22].try_into().unwrap());
    Ok((kind, l_max, n_max, count, &bytes[22..]))
}

fn write_complex(out: &mut Vec<u8>, data: &[Complex64]) {
    for v in data {
        out.extend_from_slice(&v.re.to_le_bytes());
        out.extend_from_slice(&v.im.to_le_bytes());
    }
}

fn read_complex(bytes: &[u8], count: usize) -> Result<Vec<Complex64>> {
    if bytes.len() < 16 * count {
        return Err(QspaceError::Parse("coefficient binary truncated".into()));
    }
    Ok((0..count)
        .map(|i| {
            let re = f64::from_le_bytes(bytes[16 * i..16 * i + 8].try_into().unwrap());
            let im = f64::from_le_bytes(bytes[16 * i + 8..16 * i + 16].try_into().unwrap());
            Complex64::new(re, im)
        })
        .collect())
}

impl ShCoeffs {
    pub fn to_binary(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(22 + 16 * self.data.len());
        write_header(&mut out, 0, self.l_max, 0, self.data.len() as u64);
        write_complex(&mut out, &self.data);
        out
    }

    pub fn from_binary(bytes: &[u8]) -> Result<Self> {
        let (kind, l_max, _n, count, rest) = read_header(bytes)?;
        if kind != 0 {
            return Err(QspaceError::Parse("binary holds SPF coefficients, expected SH".into()));
        }
        ShCoeffs::from_data(l_max, read_complex(rest, count as usize)?)
    }
}

impl SpfCoeffs {
    pub fn to_binary(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(22 + 16 * self.data.len());
        write_header(&mut out, 1, self.l_max, self.n_max, self.data.len() as u64);
        write_complex(&mut out, &self.data);
        out
    }

    pub fn from_binary(bytes: &[u8]) -> Result<Self> {
        let (kind, l_max, n_max, count, rest) = read_header(bytes)?;
        if kind != 1 {
            return Err(QspaceError::Parse("binary holds SH coefficients, expected SPF".into()));
        }
        SpfCoeffs::from_data(n_max, l_max, read_complex(rest, count as usize)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_sh(l_max: u32, seed: u64) -> ShCoeffs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..num_sh_coeffs(l_max))
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        ShCoeffs::from_data(l_max, data).unwrap()
    }

    #[test]
    fn json_and_binary_round_trip() {
        let c = random_sh(8, 5);
        assert_eq!(ShCoeffs::from_json(&c.to_json().unwrap()).unwrap(), c);
        assert_eq!(ShCoeffs::from_binary(&c.to_binary()).unwrap(), c);

        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let e = SpfCoeffs::from_data(
            3,
            4,
            (0..4 * num_sh_coeffs(4))
                .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect(),
        )
        .unwrap();
        assert_eq!(SpfCoeffs::from_json(&e.to_json().unwrap()).unwrap(), e);
        assert_eq!(SpfCoeffs::from_binary(&e.to_binary()).unwrap(), e);
    }

    #[test]
    fn kind_mismatch_rejected() {
        let c = random_sh(4, 7);
        assert!(SpfCoeffs::from_binary(&c.to_binary()).is_err());
        assert!(SpfCoeffs::from_json(&c.to_json().unwrap()).is_err());
    }

    #[test]
    fn real_symmetry_check() {
        let mut c = ShCoeffs::zeros(2);
        c.set(0, 0, Complex64::new(1.0, 0.0));
        c.set(2, 1, Complex64::new(0.3, -0.2));
        c.set(2, -1, Complex64::new(-0.3, -0.2));
        assert!(c.is_real_symmetric(1e-14));
        c.set(2, -1, Complex64::new(0.3, -0.2));
        assert!(!c.is_real_symmetric(1e-14));
    }
}
