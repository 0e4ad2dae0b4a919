//! Rician / non-central-Chi likelihood machinery and the majorize-minimize
//! penalized-maximum-likelihood denoiser wrapping either transform family.

use crate::coeffs::{ShCoeffs, SpfCoeffs};
use crate::error::{QspaceError, Result};
use crate::sampling::{MultiShellGrid, SingleShellGrid};
use crate::sph::{laplace_beltrami_diag, num_sh_coeffs};
use crate::transforms::{
    inverse_sht, inverse_spft, ls_sht_operator, ls_spft_operator, nsht, nspft, sh_synthesis_matrix,
    spf_synthesis_matrix, MultiShellSignal, SignalOnGrid,
};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Noise model: per-channel Gaussian variance and coil count (C = 1 is Rician).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub sigma2: f64,
    pub coils: u32,
}

impl NoiseSpec {
    pub fn new(sigma2: f64, coils: u32) -> Result<Self> {
        if !(sigma2.is_finite() && sigma2 > 0.0) {
            return Err(QspaceError::Validation(format!("sigma2 must be finite positive, got {sigma2}")));
        }
        if coils == 0 {
            return Err(QspaceError::Validation("coil count must be >= 1".into()));
        }
        Ok(NoiseSpec { sigma2, coils })
    }

    pub fn rician(sigma2: f64) -> Result<Self> {
        NoiseSpec::new(sigma2, 1)
    }
}

/// Handling of negative predicted intensities inside the MM loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NonnegMode {
    /// Clamp the predicted signal at zero before the measurement update.
    #[default]
    Clamp,
    /// Solve the constrained quadratic program exactly by accelerated
    /// projected gradient in the signal domain (single-shell only).
    Qp,
}

/// Majorize-minimize loop configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MmConfig {
    pub max_iters: usize,
    /// Relative change threshold on the coefficient vector.
    pub tol: f64,
    /// Update sigma^2 each iteration from the likelihood stationarity
    /// condition instead of trusting `NoiseSpec::sigma2`.
    pub estimate_sigma: bool,
    /// Enforce non-negativity of the predicted signal.
    pub nonneg: bool,
    pub nonneg_mode: NonnegMode,
}

impl Default for MmConfig {
    fn default() -> Self {
        MmConfig {
            max_iters: 200,
            tol: 1e-6,
            estimate_sigma: false,
            nonneg: true,
            nonneg_mode: NonnegMode::Clamp,
        }
    }
}

/// Per-iteration trace of the MM loop.
#[derive(Debug, Clone, Serialize)]
pub struct MmDiagnostics {
    pub converged: bool,
    pub iterations: usize,
    /// Penalized negative log-likelihood at each iterate.
    pub objective: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub coeff_delta: Vec<f64>,
}

impl MmDiagnostics {
    /// Iteration-indexed CSV (iter, objective, sigma2, coeff_delta).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,objective,sigma2,coeff_delta\n");
        for i in 0..self.objective.len() {
            out.push_str(&format!(
                "{},{:.17e},{:.17e},{:.17e}\n",
                i, self.objective[i], self.sigma2[i], self.coeff_delta[i]
            ));
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Bessel machinery
// ---------------------------------------------------------------------------

/// Ratio of modified Bessel functions `I_C(z) / I_{C-1}(z)`, in [0, 1).
///
/// Power series below z = 50 (all-positive terms, no cancellation), the
/// asymptotic expansion of the ratio for large z, and a Lentz continued
/// fraction bridging the regime where large coil counts invalidate the
/// asymptotic series. No overflow for z up to 1e8 and beyond.
pub fn bessel_ratio(coils: u32, z: f64) -> f64 {
    debug_assert!(coils >= 1);
    debug_assert!(z >= 0.0);
    if z == 0.0 {
        return 0.0;
    }
    let nu = coils as f64;
    if z <= 50.0 {
        bessel_ratio_series(nu, z)
    } else if z >= 4.0 * nu * nu {
        bessel_ratio_asymptotic(nu, z)
    } else {
        bessel_ratio_lentz(nu, z)
    }
}

/// Series: I_nu(z)/I_{nu-1}(z) with the common (z/2)^{nu-1}/Gamma(nu) factor
/// cancelled.
fn bessel_ratio_series(nu: f64, z: f64) -> f64 {
    let q = 0.25 * z * z;
    // numerator: sum_k q^k / (k! prod_{j<=k}(nu+j)) * 1/nu ; denominator with
    // pochhammer on (nu-1): sum_k q^k / (k! prod_{j<=k}(nu-1+j))
    let mut num_t = 1.0 / nu;
    let mut num = num_t;
    let mut den_t = 1.0;
    let mut den = den_t;
    for k in 1..500 {
        let kf = k as f64;
        num_t *= q / (kf * (nu + kf));
        den_t *= q / (kf * (nu - 1.0 + kf));
        num += num_t;
        den += den_t;
        if num_t < 1e-17 * num && den_t < 1e-17 * den {
            break;
        }
    }
    0.5 * z * num / den
}

/// Asymptotic expansion of the ratio via the large-z series of both orders.
fn bessel_ratio_asymptotic(nu: f64, z: f64) -> f64 {
    let sum = |mu: f64| -> f64 {
        // I_mu(z) ~ e^z/sqrt(2 pi z) * sum_k (-1)^k a_k(mu) / z^k
        let m2 = 4.0 * mu * mu;
        let mut term = 1.0;
        let mut acc = 1.0;
        for k in 1..40 {
            let kf = k as f64;
            let next = term * -(m2 - (2.0 * kf - 1.0).powi(2)) / (8.0 * kf * z);
            if next.abs() >= term.abs() {
                break; // asymptotic tail started growing
            }
            term = next;
            acc += term;
            if term.abs() < 1e-17 * acc.abs() {
                break;
            }
        }
        acc
    };
    sum(nu) / sum(nu - 1.0)
}

/// Gauss continued fraction r_nu = 1 / (2 nu / z + r_{nu+1}) by modified Lentz.
fn bessel_ratio_lentz(nu: f64, z: f64) -> f64 {
    let tiny = 1e-300;
    let mut f = tiny;
    let mut c = f;
    let mut d = 0.0;
    for k in 0..200_000 {
        let b = 2.0 * (nu + k as f64) / z;
        let a = 1.0;
        d = b + a * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = b + a / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            return f;
        }
    }
    f
}

/// MM measurement update (bias removal):
/// `d~_p = d_p I_C(k_p d_p / sigma^2) / I_{C-1}(k_p d_p / sigma^2)`.
pub fn measurement_update(d: &[f64], k: &[f64], spec: &NoiseSpec) -> Vec<f64> {
    debug_assert_eq!(d.len(), k.len());
    d.iter()
        .zip(k)
        .map(|(&dp, &kp)| dp * bessel_ratio(spec.coils, kp.max(0.0) * dp / spec.sigma2))
        .collect()
}

/// Noise-variance update from the likelihood stationarity condition,
/// evaluated once per MM iteration at `sigma2_prev`, clamped to a positive
/// floor of 1e-12 times the mean measured power.
pub fn sigma2_update(d: &[f64], k: &[f64], spec: &NoiseSpec, sigma2_prev: f64) -> f64 {
    let m = d.len() as f64;
    let c = spec.coils as f64;
    let dd: f64 = d.iter().map(|v| v * v).sum();
    let kk: f64 = k.iter().map(|v| v * v).sum();
    let cross: f64 = d
        .iter()
        .zip(k)
        .map(|(&dp, &kp)| {
            let kp = kp.max(0.0);
            dp * kp * bessel_ratio(spec.coils, dp * kp / sigma2_prev)
        })
        .sum();
    let raw = (0.5 * (dd + kk) - cross) / (c * m);
    let floor = 1e-12 * dd / m;
    raw.max(floor)
}

/// Negative log-likelihood of non-central-Chi (Rician at C=1) measurements.
///
/// Uses `g(nu, z) = ln I_nu(z) - nu ln z`, finite as z -> 0, so that zero
/// predictions are handled by the series limit.
pub fn ncc_nll(d: &[f64], k: &[f64], spec: &NoiseSpec) -> f64 {
    debug_assert_eq!(d.len(), k.len());
    let c = spec.coils as f64;
    let s2 = spec.sigma2;
    d.iter()
        .zip(k)
        .map(|(&dp, &kp)| {
            let kp = kp.max(0.0);
            let z = kp * dp / s2;
            kp * kp / (2.0 * s2) - ln_bessel_i_over_zpow(c - 1.0, z) - (c - 1.0) * (dp / s2).ln()
        })
        .sum()
}

/// `ln( I_nu(z) / z^nu )`, stable for z in [0, 1e8].
fn ln_bessel_i_over_zpow(nu: f64, z: f64) -> f64 {
    if z <= 50.0 {
        // ln sum_k (z^2/4)^k / (k! Gamma(nu+k+1)) - nu ln 2
        let q = 0.25 * z * z;
        let mut term = 1.0;
        let mut acc = 1.0;
        for k in 1..500 {
            let kf = k as f64;
            term *= q / (kf * (nu + kf));
            acc += term;
            if term < 1e-17 * acc {
                break;
            }
        }
        acc.ln() - ln_gamma(nu + 1.0) - nu * (2.0f64).ln()
    } else {
        // ln I_nu(z) = z - ln sqrt(2 pi z) + ln S_nu(z)
        let m2 = 4.0 * nu * nu;
        let mut term = 1.0;
        let mut acc = 1.0;
        for k in 1..40 {
            let kf = k as f64;
            let next = term * -(m2 - (2.0 * kf - 1.0).powi(2)) / (8.0 * kf * z);
            if next.abs() >= term.abs() {
                break;
            }
            term = next;
            acc += term;
        }
        z - 0.5 * (2.0 * PI * z).ln() + acc.ln() - nu * z.ln()
    }
}

/// Lanczos ln Gamma for positive real arguments.
fn ln_gamma(x: f64) -> f64 {
    const G: [f64; 9] = [
        0.99999999999980993,
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    if x < 0.5 {
        // reflection
        return (PI / (PI * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = G[0];
    let t = x + 7.5;
    for (i, &g) in G.iter().enumerate().skip(1) {
        a += g / (x + i as f64);
    }
    0.5 * (2.0 * PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

// ---------------------------------------------------------------------------
// MM denoising loops
// ---------------------------------------------------------------------------

/// The effective Laplace-Beltrami penalty weight of the per-order solves in
/// sample-domain units (the unit-normalized weighted data term is 1/(4 pi^2)
/// of the sample-domain misfit).
const PENALTY_SCALE: f64 = 4.0 * PI * PI;

fn coeff_delta(a: &[Complex64], b: &[Complex64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
    let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
    if den == 0.0 {
        num.sqrt()
    } else {
        (num / den).sqrt()
    }
}

fn initial_sigma2(d: &[f64], predicted: &[f64]) -> f64 {
    // median absolute residual of the regularized-only fit, scaled by 1.4826
    let mut resid: Vec<f64> = d.iter().zip(predicted).map(|(a, b)| (a - b).abs()).collect();
    resid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = if resid.is_empty() {
        0.0
    } else if resid.len() % 2 == 1 {
        resid[resid.len() / 2]
    } else {
        0.5 * (resid[resid.len() / 2 - 1] + resid[resid.len() / 2])
    };
    let s = 1.4826 * median;
    (s * s).max(1e-12 * d.iter().map(|v| v * v).sum::<f64>() / d.len().max(1) as f64)
}

/// Shared MM driver: `transform` maps a measurement vector to coefficients,
/// `predict` maps coefficients to the (real) model intensities at the sample
/// locations, `penalty` evaluates the quadratic regularizer in coefficient
/// units.
#[allow(clippy::too_many_arguments)]
fn mm_loop(
    d: &[f64],
    spec: &NoiseSpec,
    cfg: &MmConfig,
    transform: &dyn Fn(&[f64]) -> Result<Vec<Complex64>>,
    predict: &dyn Fn(&[Complex64]) -> Vec<f64>,
    penalty: &dyn Fn(&[Complex64]) -> f64,
    qp_solve: Option<&dyn Fn(&[f64], &[Complex64]) -> Result<Vec<Complex64>>>,
) -> Result<(Vec<Complex64>, MmDiagnostics)> {
    if cfg.max_iters == 0 || cfg.tol <= 0.0 {
        return Err(QspaceError::Validation("max_iters >= 1 and tol > 0 required".into()));
    }
    let mut coeffs = transform(d)?;
    let mut sigma2 = if cfg.estimate_sigma {
        initial_sigma2(d, &predict(&coeffs))
    } else {
        spec.sigma2
    };
    let mut diag = MmDiagnostics {
        converged: false,
        iterations: 0,
        objective: Vec::new(),
        sigma2: Vec::new(),
        coeff_delta: Vec::new(),
    };
    let clamp = |k: &mut Vec<f64>| {
        if cfg.nonneg {
            for v in k.iter_mut() {
                *v = v.max(0.0);
            }
        }
    };
    let record = |diag: &mut MmDiagnostics, coeffs: &[Complex64], predict_k: &[f64], s2: f64, delta: f64| {
        let ns = NoiseSpec { sigma2: s2, coils: spec.coils };
        let obj = ncc_nll(d, predict_k, &ns) + penalty(coeffs) / (2.0 * s2);
        diag.objective.push(obj);
        diag.sigma2.push(s2);
        diag.coeff_delta.push(delta);
    };
    let mut k0 = predict(&coeffs);
    clamp(&mut k0);
    record(&mut diag, &coeffs, &k0, sigma2, f64::NAN);
    for iter in 0..cfg.max_iters {
        let mut k = predict(&coeffs);
        clamp(&mut k);
        if cfg.estimate_sigma {
            sigma2 = sigma2_update(d, &k, &NoiseSpec { sigma2, coils: spec.coils }, sigma2);
        }
        let ns = NoiseSpec { sigma2, coils: spec.coils };
        let d_tilde = measurement_update(d, &k, &ns);
        let next = match (cfg.nonneg, cfg.nonneg_mode, qp_solve) {
            (true, NonnegMode::Qp, Some(qp)) => qp(&d_tilde, &coeffs)?,
            _ => transform(&d_tilde)?,
        };
        let delta = coeff_delta(&next, &coeffs);
        coeffs = next;
        diag.iterations = iter + 1;
        let mut k_next = predict(&coeffs);
        clamp(&mut k_next);
        record(&mut diag, &coeffs, &k_next, sigma2, delta);
        if delta <= cfg.tol {
            diag.converged = true;
            break;
        }
    }
    Ok((coeffs, diag))
}

/// MM-denoised order-recursive SHt reconstruction (Rician / NCC noise).
pub fn mm_denoise_single(
    signal: &[f64],
    grid: &SingleShellGrid,
    lambda: f64,
    spec: &NoiseSpec,
    cfg: &MmConfig,
) -> Result<(ShCoeffs, MmDiagnostics)> {
    let lb = laplace_beltrami_diag(grid.l_max);
    let points = grid.points();
    let transform = |d: &[f64]| -> Result<Vec<Complex64>> {
        Ok(nsht(&SignalOnGrid::from_real(d), grid, lambda)?.data)
    };
    let predict = |c: &[Complex64]| -> Vec<f64> {
        let coeffs = ShCoeffs { l_max: grid.l_max, data: c.to_vec() };
        inverse_sht(&coeffs, &points).iter().map(|v| v.re).collect()
    };
    let penalty = |c: &[Complex64]| -> f64 {
        PENALTY_SCALE * lambda * c.iter().zip(&lb).map(|(v, &p)| v.norm_sqr() * p).sum::<f64>()
    };
    let qp_holder;
    let qp_ref: Option<&dyn Fn(&[f64], &[Complex64]) -> Result<Vec<Complex64>>> =
        if cfg.nonneg && cfg.nonneg_mode == NonnegMode::Qp {
            let a = sh_synthesis_matrix(&points, grid.l_max);
            let lb_qp = lb.clone();
            qp_holder = move |d_tilde: &[f64], warm: &[Complex64]| -> Result<Vec<Complex64>> {
                qp_signal_domain(&a, d_tilde, lambda, &lb_qp, warm)
            };
            Some(&qp_holder)
        } else {
            None
        };
    let (data, diag) = mm_loop(signal, spec, cfg, &transform, &predict, &penalty, qp_ref)?;
    Ok((ShCoeffs { l_max: grid.l_max, data }, diag))
}

/// Exact non-negativity QP for the single-shell MM step, solved by monotone
/// accelerated projected gradient in the signal domain (the square synthesis
/// matrix parameterizes band-limited signals by their grid values, so the
/// feasible-set projection is a clamp). Warm-started at the previous iterate;
/// the best feasible point seen is returned, guaranteeing surrogate descent.
fn qp_signal_domain(
    a: &DMatrix<Complex64>,
    d_tilde: &[f64],
    lambda: f64,
    lb: &[f64],
    warm: &[Complex64],
) -> Result<Vec<Complex64>> {
    let n = d_tilde.len();
    // objective in y = A c:
    //   (1/4pi^2) |y - d~|^2 + lambda c^H diag(lb) c,  c = A^{-1} y
    let a_inv = a.clone().lu().try_inverse().ok_or_else(|| QspaceError::Singular {
        msg: "synthesis matrix not invertible for QP mode".into(),
        cond: None,
    })?;
    let lb_diag = DMatrix::from_fn(lb.len(), lb.len(), |r, c| {
        if r == c {
            Complex64::new(lb[r], 0.0)
        } else {
            Complex64::ZERO
        }
    });
    let m = a_inv.adjoint() * lb_diag * &a_inv; // y^H M y is the penalty
    let data_w = 1.0 / (4.0 * PI * PI);
    let m_norm = m.clone().svd(false, false).singular_values.max();
    let lip = 2.0 * data_w + 2.0 * lambda * m_norm;
    let dt = DVector::from_iterator(n, d_tilde.iter().map(|&v| Complex64::new(v, 0.0)));
    let objective = |y: &DVector<Complex64>| -> f64 {
        let r = y - &dt;
        let quad = (&m * y).dotc(y).re;
        data_w * r.norm_squared() + lambda * quad
    };
    let project = |y: &mut DVector<Complex64>| {
        for v in y.iter_mut() {
            *v = Complex64::new(v.re.max(0.0), 0.0);
        }
    };
    let mut y = a * DVector::from_column_slice(warm);
    project(&mut y);
    let mut best = y.clone();
    let mut best_obj = objective(&best);
    let mut y_prev = y.clone();
    let mut t = 1.0f64;
    for _ in 0..800 {
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let beta = (t - 1.0) / t_next;
        let z = &y + (&y - &y_prev) * Complex64::new(beta, 0.0);
        let grad = (&z - &dt) * Complex64::new(2.0 * data_w, 0.0)
            + (&m * &z) * Complex64::new(2.0 * lambda, 0.0);
        let mut y_next = &z - grad * Complex64::new(1.0 / lip, 0.0);
        project(&mut y_next);
        let step = (&y_next - &y).norm();
        let obj = objective(&y_next);
        if obj < best_obj {
            best_obj = obj;
            best = y_next.clone();
        }
        y_prev = y;
        y = y_next;
        t = t_next;
        if step <= 1e-13 * y.norm().max(1.0) {
            break;
        }
    }
    let c = a_inv * best;
    Ok(c.iter().copied().collect())
}

/// MM-denoised separable SPF reconstruction (multi-shell).
pub fn mm_denoise_multi(
    signal: &[f64],
    grid: &MultiShellGrid,
    lambda_l: f64,
    lambda_n: f64,
    spec: &NoiseSpec,
    cfg: &MmConfig,
) -> Result<(SpfCoeffs, MmDiagnostics)> {
    let l_max = grid.l_max();
    let radial = grid.radial_spec();
    let lb = laplace_beltrami_diag(l_max);
    let nsh = num_sh_coeffs(l_max);
    let qpoints: Vec<(f64, f64, f64)> = grid
        .shells
        .iter()
        .flat_map(|sh| sh.grid.points().into_iter().map(move |(t, p)| (sh.q, t, p)))
        .collect();
    let transform = |d: &[f64]| -> Result<Vec<Complex64>> {
        let ms = MultiShellSignal::from_real_concat(grid, d)?;
        Ok(nspft(&ms, grid, lambda_l, lambda_n)?.data)
    };
    let predict = |e: &[Complex64]| -> Vec<f64> {
        let coeffs = SpfCoeffs { n_max: grid.n_max, l_max, data: e.to_vec() };
        inverse_spft(&coeffs, &radial, &qpoints).iter().map(|v| v.re).collect()
    };
    let penalty = |e: &[Complex64]| -> f64 {
        let mut acc = 0.0;
        for n in 0..=grid.n_max as usize {
            let nf = n as f64;
            let npen = (nf * (nf + 1.0)).powi(2);
            for i in 0..nsh {
                acc += e[n * nsh + i].norm_sqr() * (lambda_l * lb[i] + lambda_n * npen);
            }
        }
        PENALTY_SCALE * acc
    };
    let (data, diag) = mm_loop(signal, spec, cfg, &transform, &predict, &penalty, None)?;
    Ok((SpfCoeffs { n_max: grid.n_max, l_max, data }, diag))
}

// ---------------------------------------------------------------------------
// least-squares MM variants (the LS-Reg-Denoised baselines)
// ---------------------------------------------------------------------------

/// MM-denoised regularized least-squares SHt on the grid's sample set.
pub fn mm_denoise_single_ls(
    signal: &[f64],
    grid: &SingleShellGrid,
    lambda: f64,
    spec: &NoiseSpec,
    cfg: &MmConfig,
) -> Result<(ShCoeffs, MmDiagnostics)> {
    let points = grid.points();
    let op = ls_sht_operator(&points, grid.l_max, lambda)?;
    let a = sh_synthesis_matrix(&points, grid.l_max);
    let lb = laplace_beltrami_diag(grid.l_max);
    let transform = |d: &[f64]| -> Result<Vec<Complex64>> {
        let dv = DVector::from_iterator(d.len(), d.iter().map(|&v| Complex64::new(v, 0.0)));
        Ok((&op * dv).iter().copied().collect())
    };
    let predict = |c: &[Complex64]| -> Vec<f64> {
        let cv = DVector::from_column_slice(c);
        (&a * cv).iter().map(|v| v.re).collect()
    };
    // the LS solve penalizes lambda directly against the sample-domain misfit
    let penalty = |c: &[Complex64]| -> f64 {
        lambda * c.iter().zip(&lb).map(|(v, &p)| v.norm_sqr() * p).sum::<f64>()
    };
    let (data, diag) = mm_loop(signal, spec, cfg, &transform, &predict, &penalty, None)?;
    Ok((ShCoeffs { l_max: grid.l_max, data }, diag))
}

/// MM-denoised regularized least-squares SPFt on the multi-shell grid.
pub fn mm_denoise_multi_ls(
    signal: &[f64],
    grid: &MultiShellGrid,
    lambda_l: f64,
    lambda_n: f64,
    spec: &NoiseSpec,
    cfg: &MmConfig,
) -> Result<(SpfCoeffs, MmDiagnostics)> {
    let l_max = grid.l_max();
    let op = ls_spft_operator(grid, lambda_l, lambda_n)?;
    let b = spf_synthesis_matrix(grid);
    let lb = laplace_beltrami_diag(l_max);
    let nsh = num_sh_coeffs(l_max);
    let transform = |d: &[f64]| -> Result<Vec<Complex64>> {
        let dv = DVector::from_iterator(d.len(), d.iter().map(|&v| Complex64::new(v, 0.0)));
        Ok((&op * dv).iter().copied().collect())
    };
    let predict = |e: &[Complex64]| -> Vec<f64> {
        let ev = DVector::from_column_slice(e);
        (&b * ev).iter().map(|v| v.re).collect()
    };
    let penalty = |e: &[Complex64]| -> f64 {
        let mut acc = 0.0;
        for n in 0..=grid.n_max as usize {
            let nf = n as f64;
            let npen = (nf * (nf + 1.0)).powi(2);
            for i in 0..nsh {
                acc += e[n * nsh + i].norm_sqr() * (lambda_l * lb[i] + lambda_n * npen);
            }
        }
        acc
    };
    let (data, diag) = mm_loop(signal, spec, cfg, &transform, &predict, &penalty, None)?;
    Ok((SpfCoeffs { n_max: grid.n_max, l_max, data }, diag))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{multi_shell_grid, single_shell_grid, BandlimitTable};
    use crate::transforms::inverse_sht;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bessel_ratio_basics() {
        assert_eq!(bessel_ratio(1, 0.0), 0.0);
        // frozen from 50-digit evaluation: I_1(2)/I_0(2)
        assert_relative_eq!(bessel_ratio(1, 2.0), 0.697774657964008, max_relative = 1e-12);
        // asymptotic regime: 1 - 1/(2z) + O(z^-2)
        let z = 1e6;
        assert!((bessel_ratio(1, z) - (1.0 - 0.5 / z)).abs() < 1e-6 / z);
        assert!(bessel_ratio(1, 1e8).is_finite());
    }

    #[test]
    fn bessel_ratio_monotone_and_bounded() {
        for coils in [1u32, 2, 8, 64] {
            let mut prev = -1.0;
            for i in 0..200 {
                let z = 10f64.powf(-3.0 + 10.0 * i as f64 / 199.0);
                let r = bessel_ratio(coils, z);
                assert!((0.0..1.0).contains(&r), "C={coils} z={z} r={r}");
                assert!(r >= prev - 1e-12, "not monotone at C={coils} z={z}");
                prev = r;
            }
        }
    }

    #[test]
    fn bessel_ratio_regimes_agree() {
        // series / CF / asymptotic must agree where they hand over
        for coils in [1u32, 3, 8] {
            let nu = coils as f64;
            for &z in &[49.9, 50.1, 4.0 * nu * nu - 0.5, 4.0 * nu * nu + 0.5] {
                if z <= 0.0 {
                    continue;
                }
                let a = bessel_ratio_series_safe(nu, z);
                let b = bessel_ratio(coils, z);
                assert!((a - b).abs() < 1e-11, "C={coils} z={z}: {a} vs {b}");
            }
        }
    }

    fn bessel_ratio_series_safe(nu: f64, z: f64) -> f64 {
        // reference: Lentz CF, valid everywhere (slow for huge z)
        bessel_ratio_lentz(nu, z)
    }

    #[test]
    fn measurement_update_limits() {
        let spec = NoiseSpec::rician(0.01).unwrap();
        let d = vec![0.5, 1.0, 0.2];
        let zeros = vec![0.0; 3];
        assert_eq!(measurement_update(&d, &zeros, &spec), vec![0.0; 3]);
        // sigma^2 -> 0 makes the ratio -> 1 and d~ -> d
        let tiny = NoiseSpec::rician(1e-12).unwrap();
        let k = vec![0.4, 0.9, 0.3];
        for (a, b) in measurement_update(&d, &k, &tiny).iter().zip(&d) {
            assert!((a - b).abs() < 1e-6 * b);
        }
    }

    #[test]
    fn measurement_update_matches_direct_ratio() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let spec = NoiseSpec::new(0.04, 2).unwrap();
        let d: Vec<f64> = (0..32).map(|_| rng.gen_range(0.0..2.0)).collect();
        let k: Vec<f64> = (0..32).map(|_| rng.gen_range(0.0..2.0)).collect();
        let got = measurement_update(&d, &k, &spec);
        for i in 0..32 {
            let want = d[i] * bessel_ratio(2, k[i] * d[i] / 0.04);
            assert!((got[i] - want).abs() <= 1e-12 * want.abs().max(1.0));
        }
    }

    #[test]
    fn sigma2_update_zero_prediction() {
        let spec = NoiseSpec::new(0.5, 2).unwrap();
        let d = vec![1.0, 2.0, 3.0];
        let k = vec![0.0; 3];
        let got = sigma2_update(&d, &k, &spec, 0.5);
        // d^H d / (2 C M)
        assert_relative_eq!(got, 14.0 / 12.0, max_relative = 1e-13);
    }

    #[test]
    fn sigma2_update_perfect_fit_hits_floor() {
        let spec = NoiseSpec::rician(1e-30).unwrap();
        let d = vec![1.0, 0.5];
        let got = sigma2_update(&d, &d, &spec, 1e-30);
        // ratio -> 1 so the raw estimate collapses; the floor keeps it positive
        let floor = 1e-12 * (1.0 + 0.25) / 2.0;
        assert!(got >= floor && got <= 1e-11, "got {got}");
    }

    #[test]
    fn sigma2_monte_carlo_recovers_truth() {
        // Rician samples with known sigma, fixed true k, iterate Eq-19-style
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let m = 1000;
        let k_true = 1.0;
        let sigma = 0.1; // SNR 10
        let d: Vec<f64> = (0..m)
            .map(|_| {
                let n1: f64 = rng.sample::<f64, _>(rand_distr::StandardNormal) * sigma;
                let n2: f64 = rng.sample::<f64, _>(rand_distr::StandardNormal) * sigma;
                ((k_true + n1) * (k_true + n1) + n2 * n2).sqrt()
            })
            .collect();
        let k = vec![k_true; m];
        let mut s2 = 0.05; // start well off
        for _ in 0..50 {
            s2 = sigma2_update(&d, &k, &NoiseSpec::rician(s2).unwrap(), s2);
        }
        assert!(
            (s2 - sigma * sigma).abs() < 0.1 * sigma * sigma,
            "estimated {s2} vs {}",
            sigma * sigma
        );
    }

    #[test]
    fn nll_decreases_toward_data() {
        let spec = NoiseSpec::rician(1.0).unwrap();
        let d = vec![2.0, 1.5, 0.7];
        let far = vec![0.0; 3];
        let close = d.clone();
        assert!(ncc_nll(&d, &close, &spec) < ncc_nll(&d, &far, &spec));
    }

    #[test]
    fn nll_additivity() {
        let spec = NoiseSpec::new(0.3, 3).unwrap();
        let d = [1.0, 0.4, 0.9, 1.3];
        let k = [0.8, 0.5, 1.0, 1.1];
        let whole = ncc_nll(&d, &k, &spec);
        let split = ncc_nll(&d[..2], &k[..2], &spec) + ncc_nll(&d[2..], &k[2..], &spec);
        assert_relative_eq!(whole, split, max_relative = 1e-13);
    }

    #[test]
    fn nll_matches_direct_evaluation() {
        // direct high-precision form for C=1: k^2/(2s2) - ln I_0(k d / s2)
        let spec = NoiseSpec::rician(0.7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let d: Vec<f64> = (0..4).map(|_| rng.gen_range(0.1..2.0)).collect();
            let k: Vec<f64> = (0..4).map(|_| rng.gen_range(0.0..2.0)).collect();
            let got = ncc_nll(&d, &k, &spec);
            let want: f64 = d
                .iter()
                .zip(&k)
                .map(|(&dp, &kp)| {
                    let z = kp * dp / 0.7;
                    // I_0 by direct series
                    let mut term = 1.0;
                    let mut acc = 1.0;
                    for j in 1..200 {
                        term *= (z * z / 4.0) / (j as f64 * j as f64);
                        acc += term;
                    }
                    kp * kp / 1.4 - acc.ln()
                })
                .sum();
            assert!((got - want).abs() < 1e-9 * want.abs().max(1.0));
        }
    }

    fn crossing_signal(grid: &SingleShellGrid) -> (Vec<f64>, ShCoeffs) {
        // band-limited test signal synthesized from random real-symmetric
        // coefficients; positive after adding a mean offset
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        let mut c = ShCoeffs::zeros(grid.l_max);
        c.set(0, 0, Complex64::new(1.5, 0.0));
        for ell in (2..=grid.l_max).step_by(2) {
            for m in 0..=ell as i32 {
                let v = Complex64::new(rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05));
                let v = if m == 0 { Complex64::new(v.re, 0.0) } else { v };
                c.set(ell, m, v);
                if m > 0 {
                    let sgn = if m % 2 == 0 { 1.0 } else { -1.0 };
                    c.set(ell, -m, sgn * v.conj());
                }
            }
        }
        let vals: Vec<f64> = inverse_sht(&c, &grid.points()).iter().map(|v| v.re).collect();
        (vals, c)
    }

    #[test]
    fn mm_sigma_to_zero_reproduces_regularized_only() {
        let grid = single_shell_grid(6, None).unwrap();
        let (vals, _) = crossing_signal(&grid);
        let lambda = 1e-4;
        let spec = NoiseSpec::rician(1e-14).unwrap();
        let cfg = MmConfig { max_iters: 1, ..Default::default() };
        let (den, _) = mm_denoise_single(&vals, &grid, lambda, &spec, &cfg).unwrap();
        let reg = nsht(&SignalOnGrid::from_real(&vals), &grid, lambda).unwrap();
        for (a, b) in den.data.iter().zip(&reg.data) {
            assert!((a - b).norm() < 1e-10);
        }
    }

    #[test]
    fn mm_noiseless_band_limited_exact() {
        let grid = single_shell_grid(6, None).unwrap();
        let (vals, c_true) = crossing_signal(&grid);
        let spec = NoiseSpec::rician(1e-13).unwrap();
        let cfg = MmConfig::default();
        let (den, diag) = mm_denoise_single(&vals, &grid, 0.0, &spec, &cfg).unwrap();
        assert!(diag.converged);
        for (a, b) in den.data.iter().zip(&c_true.data) {
            assert!((a - b).norm() < 1e-8);
        }
    }

    fn noisy_instance(grid: &SingleShellGrid, seed: u64, sigma: f64) -> Vec<f64> {
        let (clean, _) = crossing_signal(grid);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        clean
            .iter()
            .map(|&v| {
                let n1: f64 = rng.sample::<f64, _>(rand_distr::StandardNormal) * sigma;
                let n2: f64 = rng.sample::<f64, _>(rand_distr::StandardNormal) * sigma;
                ((v + n1) * (v + n1) + n2 * n2).sqrt()
            })
            .collect()
    }

    #[test]
    fn mm_objective_nonincreasing_exact_inner_solve() {
        // at lambda = 0 the inner solve is the exact surrogate minimizer and
        // the interpolated prediction equals d~ >= 0 (constraint inactive):
        // the penalized NLL must be non-increasing by the MM guarantee
        let grid = single_shell_grid(8, None).unwrap();
        let sigma = 0.15;
        let spec = NoiseSpec::rician(sigma * sigma).unwrap();
        let cfg = MmConfig { max_iters: 60, ..Default::default() };
        for seed in [42u64, 43, 44] {
            let noisy = noisy_instance(&grid, seed, sigma);
            let (_, diag) = mm_denoise_single(&noisy, &grid, 0.0, &spec, &cfg).unwrap();
            for w in diag.objective.windows(2) {
                assert!(w[1] <= w[0] + 1e-9, "seed {seed}: {} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn mm_objective_nonincreasing_qp_inner_solve() {
        // with lambda > 0 the exact Eq-17 minimization (QP mode) carries the
        // MM guarantee; the fast per-order iteration does not (its fixed
        // point is not a stationary point of the penalized NLL)
        let grid = single_shell_grid(8, None).unwrap();
        let sigma = 0.15;
        let spec = NoiseSpec::rician(sigma * sigma).unwrap();
        let cfg = MmConfig { max_iters: 40, nonneg_mode: NonnegMode::Qp, ..Default::default() };
        for seed in [52u64, 53] {
            let noisy = noisy_instance(&grid, seed, sigma);
            let (_, diag) = mm_denoise_single(&noisy, &grid, 1e-4, &spec, &cfg).unwrap();
            for w in diag.objective.windows(2) {
                assert!(w[1] <= w[0] + 1e-9, "seed {seed}: {} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn mm_qp_mode_matches_clamp_on_positive_signals() {
        // when predictions stay positive the QP constraint is inactive and
        // both modes agree
        // at lambda = 0 the unconstrained inner solve is the exact joint
        // minimizer, so the two modes coincide whenever the constraint stays
        // inactive
        let grid = single_shell_grid(4, None).unwrap();
        let (vals, _) = crossing_signal(&grid);
        let spec = NoiseSpec::rician(0.01).unwrap();
        let base = MmConfig { max_iters: 5, ..Default::default() };
        let qp = MmConfig { nonneg_mode: NonnegMode::Qp, ..base };
        let (a, _) = mm_denoise_single(&vals, &grid, 0.0, &spec, &base).unwrap();
        let (b, _) = mm_denoise_single(&vals, &grid, 0.0, &spec, &qp).unwrap();
        for (x, y) in a.data.iter().zip(&b.data) {
            assert!((x - y).norm() < 1e-6, "{x} vs {y}");
        }
    }

    #[test]
    fn mm_multi_sigma_to_zero_reproduces_nspft() {
        let grid = multi_shell_grid(1, 900.0, 0.8, &BandlimitTable::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let vals: Vec<f64> = (0..grid.total_samples()).map(|_| rng.gen_range(0.2..1.0)).collect();
        let spec = NoiseSpec::rician(1e-14).unwrap();
        let cfg = MmConfig { max_iters: 1, ..Default::default() };
        let (den, _) = mm_denoise_multi(&vals, &grid, 1e-5, 1e-5, &spec, &cfg).unwrap();
        let ms = MultiShellSignal::from_real_concat(&grid, &vals).unwrap();
        let reg = nspft(&ms, &grid, 1e-5, 1e-5).unwrap();
        for (a, b) in den.data.iter().zip(&reg.data) {
            assert!((a - b).norm() < 1e-10);
        }
    }
}
