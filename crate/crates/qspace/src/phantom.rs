//! Gaussian-mixture synthetic diffusion signals, Rician noise injection,
//! FA parameterization, and quadrature-oracle coefficient references.

use crate::coeffs::{ShCoeffs, SpfCoeffs};
use crate::error::{QspaceError, Result};
use crate::sph::{
    gauss_laguerre_rule, gauss_legendre_rule, num_sh_coeffs, radial_rn, sh_indices, ylm,
    RadialBasisSpec,
};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// One fiber population: volume fraction, diffusivities (descending), and the
/// principal orientation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiberCompartment {
    pub fraction: f64,
    /// (lambda_1, lambda_2, lambda_3) in mm^2/s, lambda_1 >= lambda_2 >= lambda_3 > 0.
    pub diffusivities: [f64; 3],
    /// Unit vector along the fiber's main axis.
    pub orientation: [f64; 3],
}

impl FiberCompartment {
    /// Diffusion tensor `R^T diag(lambda) R` for this fiber. The transverse
    /// frame is completed deterministically from the orientation.
    pub fn tensor(&self) -> [[f64; 3]; 3] {
        let u = normalize(self.orientation);
        // least-aligned axis seeds the transverse frame
        let seed = if u[0].abs() <= u[1].abs() && u[0].abs() <= u[2].abs() {
            [1.0, 0.0, 0.0]
        } else if u[1].abs() <= u[2].abs() {
            [0.0, 1.0, 0.0]
        } else {
            [0.0, 0.0, 1.0]
        };
        let a = normalize(sub(seed, scale(u, dot(seed, u))));
        let b = cross(u, a);
        let [l1, l2, l3] = self.diffusivities;
        let mut d = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                d[i][j] = l1 * u[i] * u[j] + l2 * a[i] * a[j] + l3 * b[i] * b[j];
            }
        }
        d
    }
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}
fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}
fn scale(a: [f64; 3], s: f64) -> [f64; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}
fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}
fn normalize(a: [f64; 3]) -> [f64; 3] {
    let n = dot(a, a).sqrt();
    scale(a, 1.0 / n)
}

/// Gaussian mixture phantom: a sum of fiber compartments plus the b = 0
/// baseline amplitude.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GmmPhantom {
    pub fibers: Vec<FiberCompartment>,
    #[serde(default = "default_d0")]
    pub d0: f64,
}

fn default_d0() -> f64 {
    1.0
}

impl GmmPhantom {
    pub fn validate(&self) -> Result<()> {
        if self.fibers.is_empty() {
            return Err(QspaceError::Validation("phantom needs at least one fiber".into()));
        }
        let total: f64 = self.fibers.iter().map(|f| f.fraction).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(QspaceError::Validation(format!("fiber fractions sum to {total}, not 1")));
        }
        for f in &self.fibers {
            let [l1, l2, l3] = f.diffusivities;
            if !(l1 >= l2 && l2 >= l3 && l3 > 0.0) {
                return Err(QspaceError::Validation(format!(
                    "diffusivities must satisfy l1 >= l2 >= l3 > 0, got {:?}",
                    f.diffusivities
                )));
            }
            if !(0.0..=1.0).contains(&f.fraction) {
                return Err(QspaceError::Validation(format!("fraction {} outside [0,1]", f.fraction)));
            }
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let p: GmmPhantom = serde_json::from_str(s)?;
        p.validate()?;
        Ok(p)
    }

    /// The standard crossing phantom: two equal fibers separated by
    /// `angle_rad` in the x-y plane, fiber 1 along x.
    pub fn crossing(angle_rad: f64) -> Self {
        let diff = [1.7e-3, 0.3e-3, 0.3e-3];
        GmmPhantom {
            fibers: vec![
                FiberCompartment { fraction: 0.5, diffusivities: diff, orientation: [1.0, 0.0, 0.0] },
                FiberCompartment {
                    fraction: 0.5,
                    diffusivities: diff,
                    orientation: [angle_rad.cos(), angle_rad.sin(), 0.0],
                },
            ],
            d0: 1.0,
        }
    }

    /// Single-fiber phantom at the given FA, trace fixed to the standard
    /// (1.7 + 0.3 + 0.3)e-3 mm^2/s.
    pub fn single_fiber_fa(fa: f64) -> Result<Self> {
        let md = (1.7e-3 + 0.3e-3 + 0.3e-3) / 3.0;
        let d = diffusivities_from_fa(fa, md)?;
        Ok(GmmPhantom {
            fibers: vec![FiberCompartment { fraction: 1.0, diffusivities: d, orientation: [1.0, 0.0, 0.0] }],
            d0: 1.0,
        })
    }
}

/// Diffusion signal of the mixture at b-value `b` along the unit direction.
pub fn gmm_signal(phantom: &GmmPhantom, b: f64, direction: [f64; 3]) -> Result<f64> {
    if b < 0.0 {
        return Err(QspaceError::Validation(format!("negative b-value {b}")));
    }
    let n2 = dot(direction, direction);
    if (n2 - 1.0).abs() > 1e-12 {
        return Err(QspaceError::Validation(format!("direction not unit length (|u|^2 = {n2})")));
    }
    let mut acc = 0.0;
    for f in &phantom.fibers {
        let d = f.tensor();
        let mut q = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                q += direction[i] * d[i][j] * direction[j];
            }
        }
        acc += f.fraction * (-b * q).exp();
    }
    Ok(phantom.d0 * acc)
}

/// Signal at a (theta, phi) direction.
pub fn gmm_signal_dir(phantom: &GmmPhantom, b: f64, theta: f64, phi: f64) -> f64 {
    let u = [theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()];
    gmm_signal(phantom, b, u).expect("unit direction by construction")
}

/// Prolate diffusivities (lambda_2 = lambda_3) with the given FA and mean
/// diffusivity (trace = 3 md).
pub fn diffusivities_from_fa(fa: f64, mean_diffusivity: f64) -> Result<[f64; 3]> {
    if !(0.0..1.0).contains(&fa) {
        return Err(QspaceError::Validation(format!("FA {fa} outside [0, 1) (FA = 1 is degenerate)")));
    }
    if mean_diffusivity <= 0.0 {
        return Err(QspaceError::Validation("mean diffusivity must be positive".into()));
    }
    // with t = l1/l2 - 1: FA = t / sqrt((1+t)^2 + 2)
    let t = fa * (fa + (3.0 - 2.0 * fa * fa).sqrt()) / (1.0 - fa * fa);
    let l2 = 3.0 * mean_diffusivity / (3.0 + t);
    let l1 = l2 * (1.0 + t);
    Ok([l1, l2, l2])
}

/// The standard FA of a diffusivity triple.
pub fn fa_of_diffusivities(d: [f64; 3]) -> f64 {
    let [l1, l2, l3] = d;
    let num = ((l1 - l2).powi(2) + (l2 - l3).powi(2) + (l3 - l1).powi(2)).sqrt();
    let den = (l1 * l1 + l2 * l2 + l3 * l3).sqrt();
    (0.5f64).sqrt() * num / den
}

/// Seeded noise realization: sigma = d0 / snr on the baseline amplitude.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NoiseRealization {
    pub seed: u64,
    pub snr: f64,
}

impl NoiseRealization {
    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }
}

/// Add magnitude (Rician) noise: `sqrt((d + n1)^2 + n2^2)` with
/// n1, n2 ~ N(0, sigma^2), sigma = d0/snr.
pub fn add_rician_noise<R: Rng>(values: &[f64], d0: f64, snr: f64, rng: &mut R) -> Vec<f64> {
    let sigma = d0 / snr;
    values
        .iter()
        .map(|&v| {
            let n1: f64 = rng.sample::<f64, _>(StandardNormal);
            let n2: f64 = rng.sample::<f64, _>(StandardNormal);
            ((v + sigma * n1).powi(2) + (sigma * n2).powi(2)).sqrt()
        })
        .collect()
}

/// Ground-truth SH coefficients of the phantom at b-value `b`, by dense
/// Gauss-Legendre (theta) x uniform (phi) quadrature with a +16 band-limit
/// margin, truncated to `l_max`.
pub fn oracle_sh_coeffs(phantom: &GmmPhantom, b: f64, l_max: u32) -> ShCoeffs {
    oracle_sh_coeffs_margin(phantom, b, l_max, 16)
}

pub fn oracle_sh_coeffs_margin(phantom: &GmmPhantom, b: f64, l_max: u32, margin: u32) -> ShCoeffs {
    let l_oracle = l_max + margin;
    let n_theta = 2 * (l_oracle as usize + 1);
    let n_phi = (2 * l_oracle + 1) as usize;
    let (x, w) = gauss_legendre_rule(n_theta);
    let mut c = ShCoeffs::zeros(l_max);
    for (xt, wt) in x.iter().zip(&w) {
        let theta = xt.acos();
        // phi transform first: the signal row gives all orders at once
        let row: Vec<f64> =
            (0..n_phi).map(|p| gmm_signal_dir(phantom, b, theta, 2.0 * PI * p as f64 / n_phi as f64)).collect();
        for i in sh_indices(l_max) {
            let mut acc = Complex64::ZERO;
            for (p, &v) in row.iter().enumerate() {
                let phi = 2.0 * PI * p as f64 / n_phi as f64;
                acc += v * ylm(i.ell, i.m, theta, phi).unwrap().conj();
            }
            let cur = c.get(i.ell, i.m);
            c.set(i.ell, i.m, cur + acc * (*wt * 2.0 * PI / n_phi as f64));
        }
    }
    c
}

/// Ground-truth SPF coefficients of the phantom: radial Gauss-Laguerre rule
/// with N + 12 margin nodes composed with the per-shell SH oracle.
pub fn oracle_spf_coeffs(
    phantom: &GmmPhantom,
    spec: &RadialBasisSpec,
    n_max: u32,
    l_max: u32,
) -> Result<SpfCoeffs> {
    let n_oracle = n_max + 12;
    let rule = gauss_laguerre_rule(n_oracle, &RadialBasisSpec::new(n_oracle, spec.zeta)?)?;
    let mut e = SpfCoeffs::zeros(n_max, l_max);
    let nsh = num_sh_coeffs(l_max);
    for (s, &q) in rule.q.iter().enumerate() {
        let b = q * q; // b = q^2 convention
        let c = oracle_sh_coeffs_margin(phantom, b, l_max, 10);
        for n in 0..=n_max {
            let fac = rule.weights[s] * radial_rn(n, q, spec);
            for i in 0..nsh {
                e.data[n as usize * nsh + i] += fac * c.data[i];
            }
        }
    }
    Ok(e)
}
