//! Special-function and quadrature kernels: normalized associated Legendre /
//! spherical harmonic evaluation, Gaussian-Laguerre radial functions,
//! generalized Laguerre polynomials, Gauss-Laguerre nodes and weights, and the
//! Laplace-Beltrami penalty diagonal.
//!
//! All evaluations use fully normalized recurrences; none of the routines form
//! raw factorial ratios.

use crate::error::{QspaceError, Result};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Index of a single spherical harmonic coefficient in the even-degree basis.
///
/// The flat ordering matches the coefficient vector
/// `[c_0^0, c_2^-2, c_2^-1, c_2^0, c_2^1, c_2^2, c_4^-4, ...]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ShIndex {
    pub ell: u32,
    pub m: i32,
}

impl ShIndex {
    pub fn new(ell: u32, m: i32) -> Result<Self> {
        if m.unsigned_abs() > ell {
            return Err(QspaceError::Domain(format!("|m|={} exceeds ell={}", m, ell)));
        }
        Ok(ShIndex { ell, m })
    }

    /// Flat position of an even-degree (ell, m) pair.
    pub fn flat(&self) -> usize {
        debug_assert!(self.ell % 2 == 0);
        let l = self.ell as usize;
        l.saturating_sub(1) * l / 2 + (self.m + self.ell as i32) as usize
    }
}

/// Number of even-degree SH coefficients up to band-limit `l_max`: (L+1)(L+2)/2.
pub fn num_sh_coeffs(l_max: u32) -> usize {
    ((l_max + 1) * (l_max + 2) / 2) as usize
}

/// Iterate the even-degree (ell, m) pairs in flat order.
pub fn sh_indices(l_max: u32) -> impl Iterator<Item = ShIndex> {
    (0..=l_max).step_by(2).flat_map(|ell| {
        (-(ell as i32)..=ell as i32).map(move |m| ShIndex { ell, m })
    })
}

/// Scale and radial order of the Gaussian-Laguerre radial basis.
///
/// `zeta` is expressed in b-value units; the crate uses the b = q^2 convention
/// throughout, so shell b-values are `zeta * x_s` for quadrature nodes `x_s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadialBasisSpec {
    pub n_max: u32,
    pub zeta: f64,
}

impl RadialBasisSpec {
    pub fn new(n_max: u32, zeta: f64) -> Result<Self> {
        if !zeta.is_finite() || zeta <= 0.0 {
            return Err(QspaceError::Validation(format!("zeta must be finite and positive, got {zeta}")));
        }
        Ok(RadialBasisSpec { n_max, zeta })
    }
}

/// Gauss-Laguerre rule adapted to the radial inner product `f(q) q^2 dq`.
///
/// Nodes are the roots of the (N+1)-th generalized Laguerre polynomial of
/// order 1/2 (ascending); `q` holds the corresponding radii `sqrt(zeta x_s)`
/// and the weights satisfy `sum_s w_s R_n(q_s) R_n'(q_s) = delta_nn'` for
/// n, n' <= N.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub q: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Fully normalized associated Legendre function: `Y_ell^m(theta, 0)`.
///
/// Stable ascending-degree recurrence on the normalized functions, with the
/// Condon-Shortley phase, so that `Y_ell^-m = (-1)^m conj(Y_ell^m)` holds.
pub fn assoc_legendre_norm(ell: u32, m: i32, theta: f64) -> Result<f64> {
    let am = m.unsigned_abs();
    if am > ell {
        return Err(QspaceError::Domain(format!("|m|={} exceeds ell={}", am, ell)));
    }
    let v = assoc_legendre_norm_abs(ell, am, theta);
    // negative order picks up (-1)^m under full normalization
    Ok(if m < 0 && am % 2 == 1 { -v } else { v })
}

/// Normalized ALF for m >= 0; no domain checks.
pub(crate) fn assoc_legendre_norm_abs(ell: u32, m: u32, theta: f64) -> f64 {
    let (s, c) = theta.sin_cos();
    // seed P~_m^m
    let mut pmm = 1.0 / (4.0 * std::f64::consts::PI).sqrt();
    for k in 1..=m {
        let k = k as f64;
        pmm *= -s * ((2.0 * k + 1.0) / (2.0 * k)).sqrt();
    }
    if ell == m {
        return pmm;
    }
    let mut p_prev = pmm; // degree m
    let mut p_curr = c * (2.0 * m as f64 + 3.0).sqrt() * pmm; // degree m+1
    if ell == m + 1 {
        return p_curr;
    }
    let mf2 = (m as f64) * (m as f64);
    let mut a_prev = if ell > m + 1 {
        let l = (m + 1) as f64;
        ((4.0 * l * l - 1.0) / (l * l - mf2)).sqrt()
    } else {
        0.0
    };
    for l in (m + 2)..=ell {
        let lf = l as f64;
        let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf2)).sqrt();
        let p_next = a * (c * p_curr - p_prev / a_prev);
        p_prev = p_curr;
        p_curr = p_next;
        a_prev = a;
    }
    p_curr
}

/// Complex spherical harmonic `Y_ell^m(theta, phi)` per the orthonormal basis.
pub fn ylm(ell: u32, m: i32, theta: f64, phi: f64) -> Result<Complex64> {
    let p = assoc_legendre_norm(ell, m, theta)?;
    Ok(Complex64::from_polar(1.0, m as f64 * phi) * p)
}

/// Generalized Laguerre polynomial of order one half, `L_n^{1/2}(x)`.
pub fn laguerre_half(n: u32, x: f64) -> f64 {
    laguerre_gen(n, 0.5, x)
}

/// `L_n^{alpha}(x)` by the standard three-term recurrence.
pub(crate) fn laguerre_gen(n: u32, alpha: f64, x: f64) -> f64 {
    if n == 0 {
        return 1.0;
    }
    let mut lkm1 = 1.0;
    let mut lk = 1.0 + alpha - x;
    for k in 1..n {
        let kf = k as f64;
        let lkp1 = ((2.0 * kf + 1.0 + alpha - x) * lk - (kf + alpha) * lkm1) / (kf + 1.0);
        lkm1 = lk;
        lk = lkp1;
    }
    lk
}

/// ln Gamma(k) for positive integer k.
pub(crate) fn ln_gamma_int(k: u32) -> f64 {
    (1..k).map(|j| (j as f64).ln()).sum()
}

/// ln Gamma(k + 1/2) for integer k >= 0.
pub(crate) fn ln_gamma_half(k: u32) -> f64 {
    // Gamma(1/2) = sqrt(pi); Gamma(k+1/2) = prod_{j=1..k} (j - 1/2) * sqrt(pi)
    let mut v = 0.5 * std::f64::consts::PI.ln();
    for j in 1..=k {
        v += (j as f64 - 0.5).ln();
    }
    v
}

/// Gaussian-Laguerre radial basis function `R_n(q)`.
pub fn radial_rn(n: u32, q: f64, spec: &RadialBasisSpec) -> f64 {
    let x = q * q / spec.zeta;
    // kappa = sqrt(2 / zeta^{3/2} * n! / Gamma(n + 3/2))
    let ln_kappa = 0.5
        * ((2.0f64).ln() - 1.5 * spec.zeta.ln() + ln_gamma_int(n + 1) - ln_gamma_half(n + 1));
    ln_kappa.exp() * (-0.5 * x).exp() * laguerre_half(n, x)
}

/// Gauss-Laguerre rule with N+1 nodes for the scale in `spec`.
///
/// Roots of `L_{N+1}^{1/2}` are found by bracketed Newton iteration from
/// interlacing initial guesses; failure to converge is reported, never
/// silently accepted.
pub fn gauss_laguerre_rule(n_max: u32, spec: &RadialBasisSpec) -> Result<QuadratureRule> {
    let n_nodes = n_max + 1;
    let nodes = laguerre_half_roots(n_nodes)?;
    let ln_pref =
        ln_gamma_half(n_max + 2) - ln_gamma_int(n_max + 2) - 2.0 * (n_max as f64 + 2.0).ln();
    // w_s = 0.5 zeta^{3/2} Gamma(N+5/2) x e^x / ((N+1)! (N+2)^2 [L_{N+2}^{1/2}(x)]^2)
    // (the zeta exponent follows from the substitution x = q^2/zeta in
    //  int f(q) q^2 dq and makes the rule orthonormal in R_n)
    let weights: Vec<f64> = nodes
        .iter()
        .map(|&x| {
            let lag = laguerre_gen(n_max + 2, 0.5, x);
            0.5 * spec.zeta.powf(1.5) * (ln_pref + x.ln() + x).exp() / (lag * lag)
        })
        .collect();
    let q: Vec<f64> = nodes.iter().map(|&x| (spec.zeta * x).sqrt()).collect();
    Ok(QuadratureRule { nodes, q, weights })
}

/// Roots of `L_n^{1/2}` (ascending), by degree continuation: the roots of
/// `L_{k}^{1/2}` interlace those of `L_{k+1}^{1/2}` and provide brackets.
fn laguerre_half_roots(n: u32) -> Result<Vec<f64>> {
    let mut roots: Vec<f64> = vec![1.5]; // L_1^{1/2}(x) = 3/2 - x
    for k in 2..=n {
        let f = |x: f64| laguerre_gen(k, 0.5, x);
        let mut brackets: Vec<(f64, f64)> = Vec::with_capacity(k as usize);
        brackets.push((1e-12, roots[0]));
        for w in roots.windows(2) {
            brackets.push((w[0], w[1]));
        }
        // rightmost root: expand past the previous largest root
        let mut hi = roots[roots.len() - 1] + 2.0;
        let lo = roots[roots.len() - 1];
        let mut guard = 0;
        while f(lo).signum() == f(hi).signum() {
            hi = lo + (hi - lo) * 1.5;
            guard += 1;
            if guard > 200 {
                return Err(QspaceError::NoConvergence(format!(
                    "failed to bracket the largest root of L_{k}^{{1/2}}"
                )));
            }
        }
        brackets.push((lo, hi));
        let mut new_roots = Vec::with_capacity(k as usize);
        for (a, b) in brackets {
            new_roots.push(newton_bracketed(k, a, b)?);
        }
        roots = new_roots;
    }
    Ok(roots)
}

/// Safeguarded Newton for a root of `L_n^{1/2}` in (a, b); bisection fallback.
fn newton_bracketed(n: u32, mut a: f64, mut b: f64) -> Result<f64> {
    let f = |x: f64| laguerre_gen(n, 0.5, x);
    // d/dx L_n^a = -L_{n-1}^{a+1}
    let df = |x: f64| -laguerre_gen(n - 1, 1.5, x);
    let (mut fa, fb) = (f(a), f(b));
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(QspaceError::NoConvergence(format!(
            "root of L_{n}^{{1/2}} not bracketed in ({a}, {b})"
        )));
    }
    let mut x = 0.5 * (a + b);
    for _ in 0..200 {
        let fx = f(x);
        if fx == 0.0 {
            return Ok(x);
        }
        if fx.signum() == fa.signum() {
            a = x;
            fa = fx;
        } else {
            b = x;
        }
        let d = df(x);
        let step = fx / d;
        let mut x_new = x - step;
        if !(a < x_new && x_new < b) || !x_new.is_finite() {
            x_new = 0.5 * (a + b);
        }
        if (x_new - x).abs() <= 1e-15 * x.abs().max(1.0) {
            return Ok(x_new);
        }
        x = x_new;
    }
    Err(QspaceError::NoConvergence(format!(
        "Newton iteration for a root of L_{n}^{{1/2}} did not converge"
    )))
}

/// Laplace-Beltrami penalty diagonal over the flat even-degree index:
/// entry for (ell, m) is `ell^2 (ell+1)^2`.
pub fn laplace_beltrami_diag(l_max: u32) -> Vec<f64> {
    sh_indices(l_max)
        .map(|i| {
            let l = i.ell as f64;
            (l * (l + 1.0)).powi(2)
        })
        .collect()
}

/// Gauss-Legendre nodes and weights on [-1, 1] (oracle quadrature helper).
pub fn gauss_legendre_rule(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_and_deriv(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[n - 1 - i] = x;
        weights[n - 1 - i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

fn legendre_and_deriv(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 1..n {
        let kf = k as f64;
        let p2 = ((2.0 * kf + 1.0) * x * p1 - kf * p0) / (kf + 1.0);
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn legendre_constants() {
        // Y_0^0 is constant 1/sqrt(4 pi)
        for &t in &[0.0, 0.7, 1.3, std::f64::consts::PI] {
            assert_relative_eq!(
                assoc_legendre_norm(0, 0, t).unwrap(),
                0.28209479177387814,
                max_relative = 1e-14
            );
        }
        // P_1^0(cos 0) = 1 under normalization sqrt(3/4pi)
        assert_relative_eq!(
            assoc_legendre_norm(1, 0, 0.0).unwrap(),
            0.4886025119029199,
            max_relative = 1e-14
        );
    }

    #[test]
    fn legendre_high_order_matches_closed_form() {
        // frozen from a 50-digit evaluation of Eq-style closed form
        assert_relative_eq!(
            assoc_legendre_norm(8, 4, 1.1).unwrap(),
            -0.3409907572737370416,
            max_relative = 1e-12
        );
        // negative order symmetry
        assert_relative_eq!(
            assoc_legendre_norm(8, -4, 1.1).unwrap(),
            -0.3409907572737370416,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            assoc_legendre_norm(7, -3, 0.9).unwrap(),
            -assoc_legendre_norm(7, 3, 0.9).unwrap(),
            max_relative = 1e-13
        );
    }

    #[test]
    fn legendre_rejects_bad_order() {
        assert!(assoc_legendre_norm(2, 3, 0.5).is_err());
        assert!(ylm(1, -2, 0.5, 0.1).is_err());
    }

    #[test]
    fn ylm_equator_value() {
        // Y_2^0(pi/2, 0) = -1/2 sqrt(5/4pi)
        let v = ylm(2, 0, std::f64::consts::FRAC_PI_2, 0.0).unwrap();
        assert_relative_eq!(v.re, -0.31539156525252005, max_relative = 1e-13);
        assert!(v.im.abs() < 1e-16);
    }

    #[test]
    fn ylm_conjugate_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..1000 {
            let ell = rng.gen_range(0..=16u32);
            let m = rng.gen_range(-(ell as i32)..=ell as i32);
            let theta = rng.gen_range(0.0..std::f64::consts::PI);
            let phi = rng.gen_range(0.0..2.0 * std::f64::consts::PI);
            let a = ylm(ell, -m, theta, phi).unwrap();
            let b = ylm(ell, m, theta, phi).unwrap().conj()
                * if m % 2 == 0 { 1.0 } else { -1.0 };
            assert!((a - b).norm() < 1e-13, "ell={ell} m={m}");
        }
    }

    #[test]
    fn ylm_antipodal_parity() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        for _ in 0..100 {
            let ell = 2 * rng.gen_range(0..=6u32);
            let m = rng.gen_range(-(ell as i32)..=ell as i32);
            let theta = rng.gen_range(0.0..std::f64::consts::PI);
            let phi = rng.gen_range(0.0..std::f64::consts::PI);
            let a = ylm(ell, m, std::f64::consts::PI - theta, phi + std::f64::consts::PI).unwrap();
            let b = ylm(ell, m, theta, phi).unwrap();
            assert!((a - b).norm() < 1e-13);
        }
        // odd degrees flip sign
        let a = ylm(3, 1, std::f64::consts::PI - 0.4, 0.9 + std::f64::consts::PI).unwrap();
        let b = ylm(3, 1, 0.4, 0.9).unwrap();
        assert!((a + b).norm() < 1e-13);
    }

    #[test]
    fn legendre_stability_to_l32() {
        // spot-check the recurrence against a few frozen high-precision values
        // (computed with 50-digit arithmetic from the closed form)
        let cases: [(u32, i32, f64, f64); 3] = [
            (32, 0, 0.3, -0.52102573977378933),
            (32, 16, 1.0, -0.38258212726587358),
            (24, 24, 1.4, 0.47016395622934973),
        ];
        for (ell, m, theta, want) in cases {
            assert_relative_eq!(
                assoc_legendre_norm(ell, m, theta).unwrap(),
                want,
                max_relative = 1e-10
            );
        }
    }

    #[test]
    fn laguerre_small_orders() {
        assert_relative_eq!(laguerre_half(0, 2.7), 1.0);
        assert_relative_eq!(laguerre_half(1, 0.0), 1.5, max_relative = 1e-15);
        // L_4^{1/2} vanishes at the N=3 quadrature nodes
        let spec = RadialBasisSpec::new(3, 1.0).unwrap();
        let rule = gauss_laguerre_rule(3, &spec).unwrap();
        for &x in &rule.nodes {
            assert!(laguerre_half(4, x).abs() < 1e-12, "L_4^(1/2)({x}) != 0");
        }
    }

    #[test]
    fn radial_r0_at_origin() {
        let spec = RadialBasisSpec::new(0, 1.0).unwrap();
        // sqrt(2/Gamma(3/2)), frozen from 50-digit evaluation
        assert_relative_eq!(radial_rn(0, 0.0, &spec), 1.5022510889298850, max_relative = 1e-13);
    }

    #[test]
    fn radial_orthonormality_trapezoid() {
        // independent oracle: fine trapezoid over int R_n R_n' q^2 dq
        let spec = RadialBasisSpec::new(3, 2.3).unwrap();
        let qmax = 20.0 * spec.zeta.sqrt();
        let n_steps = 200_000;
        let h = qmax / n_steps as f64;
        for n in 0..=3u32 {
            for np in n..=3u32 {
                let mut acc = 0.0;
                for i in 0..=n_steps {
                    let q = i as f64 * h;
                    let w = if i == 0 || i == n_steps { 0.5 } else { 1.0 };
                    acc += w * radial_rn(n, q, &spec) * radial_rn(np, q, &spec) * q * q;
                }
                acc *= h;
                let want = if n == np { 1.0 } else { 0.0 };
                assert!((acc - want).abs() < 1e-6, "n={n} n'={np}: {acc}");
            }
        }
    }

    #[test]
    fn radial_decays_at_infinity() {
        let spec = RadialBasisSpec::new(3, 4.0).unwrap();
        for n in 0..=3 {
            assert!(radial_rn(n, 20.0 * spec.zeta.sqrt(), &spec).abs() < 1e-8);
        }
    }

    #[test]
    fn quadrature_single_node() {
        let spec = RadialBasisSpec::new(0, 1.0).unwrap();
        let rule = gauss_laguerre_rule(0, &spec).unwrap();
        assert_eq!(rule.nodes.len(), 1);
        assert_relative_eq!(rule.nodes[0], 1.5, max_relative = 1e-14);
    }

    #[test]
    fn quadrature_shell_ratios_match_reported_bvalues() {
        let spec = RadialBasisSpec::new(3, 1.0).unwrap();
        let rule = gauss_laguerre_rule(3, &spec).unwrap();
        let x_top = rule.nodes[3];
        let reported = [206.0, 847.0, 2018.0, 4000.0];
        for (x, want) in rule.nodes.iter().zip(reported) {
            let b = 4000.0 * x / x_top;
            assert!((b - want).abs() / want < 0.005, "b={b} vs {want}");
        }
    }

    #[test]
    fn quadrature_orthonormality() {
        for &zeta in &[1.0, 444.4] {
            for n_max in 0..=8u32 {
                let spec = RadialBasisSpec::new(n_max, zeta).unwrap();
                let rule = gauss_laguerre_rule(n_max, &spec).unwrap();
                for n in 0..=n_max {
                    for np in 0..=n_max {
                        let s: f64 = rule
                            .q
                            .iter()
                            .zip(&rule.weights)
                            .map(|(&q, &w)| w * radial_rn(n, q, &spec) * radial_rn(np, q, &spec))
                            .sum();
                        let want = if n == np { 1.0 } else { 0.0 };
                        assert!(
                            (s - want).abs() < 1e-10,
                            "zeta={zeta} N={n_max} n={n} n'={np}: {s}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn laplace_beltrami_entries() {
        assert_eq!(laplace_beltrami_diag(0), vec![0.0]);
        assert_eq!(laplace_beltrami_diag(2), vec![0.0, 36.0, 36.0, 36.0, 36.0, 36.0]);
        let d = laplace_beltrami_diag(8);
        assert_eq!(d.len(), num_sh_coeffs(8));
        assert_eq!(d[ShIndex::new(8, 0).unwrap().flat()], 5184.0);
    }

    #[test]
    fn flat_index_bijective() {
        for l_max in (0..=16u32).step_by(2) {
            let idx: Vec<usize> = sh_indices(l_max).map(|i| i.flat()).collect();
            assert_eq!(idx.len(), num_sh_coeffs(l_max));
            for (expect, got) in idx.iter().enumerate() {
                assert_eq!(expect, *got);
            }
        }
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre_rule(8);
        // exact for degree <= 15
        let int_x14: f64 = x.iter().zip(&w).map(|(&x, &w)| w * x.powi(14)).sum();
        assert_relative_eq!(int_x14, 2.0 / 15.0, max_relative = 1e-12);
    }
}
