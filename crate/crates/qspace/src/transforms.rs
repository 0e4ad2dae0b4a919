//! Forward and inverse transforms: the order-recursive spherical harmonic
//! transform with Laplace-Beltrami regularization, least-squares baselines,
//! the separable spherical-polar-Fourier transform with angular and radial
//! regularization, and conditioning diagnostics.

use crate::coeffs::{ShCoeffs, SpfCoeffs};
use crate::error::{QspaceError, Result};
use crate::sampling::{degree_ladder, first_ring, MultiShellGrid, SingleShellGrid};
use crate::sph::{
    assoc_legendre_norm_abs, laplace_beltrami_diag, num_sh_coeffs, radial_rn, sh_indices, ylm,
    ShIndex,
};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use std::f64::consts::PI;

/// Measurements on one shell's grid, canonical ring-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalOnGrid {
    pub values: Vec<Complex64>,
    /// Asserted-real inputs let the transform derive negative orders from
    /// conjugate symmetry instead of solving them.
    pub is_real: bool,
}

impl SignalOnGrid {
    pub fn from_real(values: &[f64]) -> Self {
        SignalOnGrid {
            values: values.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
            is_real: true,
        }
    }

    pub fn from_complex(values: Vec<Complex64>) -> Self {
        SignalOnGrid { values, is_real: false }
    }

    fn check_len(&self, grid: &SingleShellGrid) -> Result<()> {
        if self.values.len() != grid.num_samples() {
            return Err(QspaceError::Validation(format!(
                "signal length {} does not match grid sample count {}",
                self.values.len(),
                grid.num_samples()
            )));
        }
        Ok(())
    }
}

/// Per-shell measurements of a multi-shell acquisition.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiShellSignal {
    pub shells: Vec<SignalOnGrid>,
}

impl MultiShellSignal {
    pub fn from_real_concat(grid: &MultiShellGrid, values: &[f64]) -> Result<Self> {
        if values.len() != grid.total_samples() {
            return Err(QspaceError::Validation(format!(
                "signal length {} does not match grid total {}",
                values.len(),
                grid.total_samples()
            )));
        }
        let mut shells = Vec::with_capacity(grid.shells.len());
        let mut off = 0;
        for sh in &grid.shells {
            let n = sh.grid.num_samples();
            shells.push(SignalOnGrid::from_real(&values[off..off + n]));
            off += n;
        }
        Ok(MultiShellSignal { shells })
    }
}

/// The square linear system relating ring integrals g_m to the order-m
/// coefficients: entries `2 pi * P~_ell^m(theta_j)` over the even-or-odd
/// degree ladder, rows j = ceil(|m|/2)..L/2.
#[derive(Debug, Clone)]
pub struct PmSystem {
    pub m: i32,
    pub ells: Vec<u32>,
    pub first_ring: u32,
    pub matrix: DMatrix<f64>,
}

/// Build the P_m system for a grid.
pub fn build_pm(grid: &SingleShellGrid, m: i32) -> Result<PmSystem> {
    let l_max = grid.l_max;
    if m.unsigned_abs() > l_max {
        return Err(QspaceError::Domain(format!("|m|={} exceeds L={}", m, l_max)));
    }
    let ells = degree_ladder(l_max, m);
    let s = first_ring(m) as usize;
    let thetas = grid.thetas();
    let sign = if m < 0 && m.unsigned_abs() % 2 == 1 { -1.0 } else { 1.0 };
    let matrix = DMatrix::from_fn(thetas.len() - s, ells.len(), |r, c| {
        sign * 2.0 * PI * assoc_legendre_norm_abs(ells[c], m.unsigned_abs(), thetas[s + r])
    });
    Ok(PmSystem { m, ells, first_ring: s as u32, matrix })
}

/// Ring Fourier integrals `G_m(theta_j) = int d(theta_j, phi) e^{-im phi} dphi`
/// estimated from the 4j+1 equispaced samples of each usable ring
/// (j >= ceil(|m|/2)).
///
/// The estimate is exact once the ring's values contain no orders above 2j;
/// inside the recursive transform the residual bookkeeping guarantees that.
pub fn ring_fourier_integrals(
    grid: &SingleShellGrid,
    values: &[Complex64],
    m: i32,
) -> Result<Vec<Complex64>> {
    if values.len() != grid.num_samples() {
        return Err(QspaceError::Validation("signal/grid length mismatch".into()));
    }
    let s = first_ring(m);
    let mut out = Vec::with_capacity(grid.rings.len() - s as usize);
    for ring in &grid.rings[s as usize..] {
        let off = grid.ring_offset(ring.j);
        let count = ring.phis.len();
        let mut acc = Complex64::ZERO;
        for (k, &phi) in ring.phis.iter().enumerate() {
            acc += values[off + k] * Complex64::from_polar(1.0, -(m as f64) * phi);
        }
        out.push(acc * (2.0 * PI / count as f64));
    }
    Ok(out)
}

/// Least-squares solve of a stacked real system via QR.
fn qr_lstsq(a: &DMatrix<f64>, b: &DMatrix<f64>, context: &str) -> Result<DMatrix<f64>> {
    let qr = a.clone().qr();
    let qtb = qr.q().transpose() * b;
    qr.unpack_r()
        .solve_upper_triangular(&qtb)
        .ok_or_else(|| QspaceError::Singular { msg: context.to_string(), cond: None })
}

/// Regularized solver for one order: minimizes the inverse-variance weighted
/// misfit of the unit-normalized system plus the Laplace-Beltrami and radial
/// ridge penalties,
/// `sum_j (4j+1) |ptilde_j c - rho_j|^2 + lambda_l |diag(l(l+1)) c|^2 + ridge |c|^2`,
/// where `rho_j = g_m(theta_j) / 2 pi` is the ring-mean Fourier coefficient
/// with noise variance proportional to 1/(4j+1).
struct OrderSolver {
    /// stacked [weighted ptilde rows; penalty rows], factored through QR
    stacked: DMatrix<f64>,
    row_weights: Vec<f64>,
    n_rows: usize,
    n_pen: usize,
}

impl OrderSolver {
    fn new(grid: &SingleShellGrid, m_abs: u32, lambda_l: f64, ridge: f64) -> Self {
        let ells = degree_ladder(grid.l_max, m_abs as i32);
        let s = first_ring(m_abs as i32) as usize;
        let thetas = grid.thetas();
        let n_rows = thetas.len() - s;
        let n = ells.len();
        // inverse-variance weights of the ring integrals: var(g_m(theta_j))
        // = (2 pi)^2 sigma^2 / (4j+1), so the weighted rows carry
        // sqrt(4j+1)/(2 pi); this also fixes the lambda scale the penalty
        // works against (the per-order data term is 1/(4 pi^2) of the
        // sample-domain misfit)
        let row_weights: Vec<f64> = (s..thetas.len())
            .map(|j| ((4 * j + 1) as f64).sqrt() / (2.0 * PI))
            .collect();
        let has_lb = lambda_l > 0.0;
        let has_ridge = ridge > 0.0;
        let n_pen = if has_lb { n } else { 0 } + if has_ridge { n } else { 0 };
        let mut stacked = DMatrix::zeros(n_rows + n_pen, n);
        for (r, j) in (s..thetas.len()).enumerate() {
            for (c, &ell) in ells.iter().enumerate() {
                stacked[(r, c)] =
                    row_weights[r] * assoc_legendre_norm_abs(ell, m_abs, thetas[j]);
            }
        }
        let mut row = n_rows;
        if has_lb {
            for (c, &ell) in ells.iter().enumerate() {
                let l = ell as f64;
                stacked[(row + c, c)] = lambda_l.sqrt() * l * (l + 1.0);
            }
            row += n;
        }
        if has_ridge {
            for c in 0..n {
                stacked[(row + c, c)] = ridge.sqrt();
            }
        }
        OrderSolver { stacked, row_weights, n_rows, n_pen }
    }

    /// Solve for the coefficients of one order given ring means `rho`.
    fn solve(&self, rho: &[Complex64], m: i32) -> Result<Vec<Complex64>> {
        // negative odd orders flip the sign of the system matrix; fold the
        // sign into the right-hand side and reuse the factorization
        let sign = if m < 0 && m.unsigned_abs() % 2 == 1 { -1.0 } else { 1.0 };
        let mut rhs = DMatrix::zeros(self.n_rows + self.n_pen, 2);
        for (r, v) in rho.iter().enumerate() {
            rhs[(r, 0)] = sign * self.row_weights[r] * v.re;
            rhs[(r, 1)] = sign * self.row_weights[r] * v.im;
        }
        let sol = qr_lstsq(&self.stacked, &rhs, &format!("P_m solve failed at m={m}"))?;
        Ok((0..sol.nrows()).map(|i| Complex64::new(sol[(i, 0)], sol[(i, 1)])).collect())
    }
}

/// Ring-mean Fourier coefficient `rho_j(m)` of the residual values of ring j.
fn ring_mean_dft(ring_vals: &[Complex64], phis: &[f64], m: i32) -> Complex64 {
    let mut acc = Complex64::ZERO;
    for (v, &phi) in ring_vals.iter().zip(phis) {
        acc += v * Complex64::from_polar(1.0, -(m as f64) * phi);
    }
    acc / ring_vals.len() as f64
}

/// Core of the order-recursive transform, shared by the single-shell SHt and
/// the per-shell stage of the SPF transform.
///
/// Orders are processed |m| = L down to 0. After the last order with
/// |m'| = 2j+1 completes, ring j's residual is updated once by subtracting the
/// partial inverse transform of all orders |m'| > 2j at that ring's samples;
/// each subsequent ring-mean DFT of the residual is then alias-free.
fn nsht_with_penalty(
    signal: &SignalOnGrid,
    grid: &SingleShellGrid,
    lambda_l: f64,
    ridge: f64,
) -> Result<ShCoeffs> {
    signal.check_len(grid)?;
    let l_max = grid.l_max;
    let mut resid: Vec<Vec<Complex64>> = grid
        .rings
        .iter()
        .map(|r| {
            let off = grid.ring_offset(r.j);
            signal.values[off..off + r.phis.len()].to_vec()
        })
        .collect();
    let mut coeffs = ShCoeffs::zeros(l_max);
    for mu in (0..=l_max).rev() {
        let s = first_ring(mu as i32) as usize;
        let solver = OrderSolver::new(grid, mu, lambda_l, ridge);
        let rho_plus: Vec<Complex64> = grid.rings[s..]
            .iter()
            .map(|r| ring_mean_dft(&resid[r.j as usize], &r.phis, mu as i32))
            .collect();
        let ells = degree_ladder(l_max, mu as i32);
        let c_plus = solver.solve(&rho_plus, mu as i32)?;
        for (i, &ell) in ells.iter().enumerate() {
            coeffs.set(ell, mu as i32, c_plus[i]);
        }
        if mu > 0 {
            let c_minus: Vec<Complex64> = if signal.is_real {
                let sgn = if mu % 2 == 0 { 1.0 } else { -1.0 };
                c_plus.iter().map(|v| sgn * v.conj()).collect()
            } else {
                let rho_minus: Vec<Complex64> = grid.rings[s..]
                    .iter()
                    .map(|r| ring_mean_dft(&resid[r.j as usize], &r.phis, -(mu as i32)))
                    .collect();
                solver.solve(&rho_minus, -(mu as i32))?
            };
            for (i, &ell) in ells.iter().enumerate() {
                coeffs.set(ell, -(mu as i32), c_minus[i]);
            }
        }
        // ring (mu-1)/2 becomes alias-free once order mu (odd) is done
        if mu % 2 == 1 {
            let j = ((mu - 1) / 2) as usize;
            let ring = &grid.rings[j];
            for (k, &phi) in ring.phis.iter().enumerate() {
                let mut sub = Complex64::ZERO;
                for mp in mu..=l_max {
                    for m in [mp as i32, -(mp as i32)] {
                        let mut radial = Complex64::ZERO;
                        for &ell in &degree_ladder(l_max, m) {
                            let sign = if m < 0 && mp % 2 == 1 { -1.0 } else { 1.0 };
                            radial += coeffs.get(ell, m)
                                * (sign * assoc_legendre_norm_abs(ell, mp, ring.theta));
                        }
                        sub += radial * Complex64::from_polar(1.0, m as f64 * phi);
                    }
                }
                resid[j][k] -= sub;
            }
        }
    }
    Ok(coeffs)
}

/// Order-recursive spherical harmonic transform with Laplace-Beltrami
/// regularization; `lambda = 0` recovers band-limited antipodal signals to
/// machine precision.
pub fn nsht(signal: &SignalOnGrid, grid: &SingleShellGrid, lambda: f64) -> Result<ShCoeffs> {
    if lambda < 0.0 {
        return Err(QspaceError::Validation("lambda must be nonnegative".into()));
    }
    nsht_with_penalty(signal, grid, lambda, 0.0)
}

/// Evaluate the truncated even-degree SH expansion at arbitrary directions.
pub fn inverse_sht(coeffs: &ShCoeffs, points: &[(f64, f64)]) -> Vec<Complex64> {
    points
        .iter()
        .map(|&(theta, phi)| {
            let mut acc = Complex64::ZERO;
            for i in sh_indices(coeffs.l_max) {
                acc += coeffs.get(i.ell, i.m) * ylm(i.ell, i.m, theta, phi).unwrap();
            }
            acc
        })
        .collect()
}

/// Synthesis matrix A of the even-degree SH basis at the given points.
pub fn sh_synthesis_matrix(points: &[(f64, f64)], l_max: u32) -> DMatrix<Complex64> {
    DMatrix::from_fn(points.len(), num_sh_coeffs(l_max), |p, c| {
        let idx: ShIndex = sh_indices(l_max).nth(c).unwrap();
        ylm(idx.ell, idx.m, points[p].0, points[p].1).unwrap()
    })
}

/// 2-norm condition number via singular values.
pub fn condition_number_complex(m: &DMatrix<Complex64>) -> f64 {
    let sv = m.clone().svd(false, false).singular_values;
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for &v in sv.iter() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// 2-norm condition number of a real matrix.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().svd(false, false).singular_values;
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for &v in sv.iter() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Regularized least-squares SHt over an arbitrary point set:
/// `(A^H A + lambda L)^{-1} A^H d`.
pub fn ls_sht(
    values: &[Complex64],
    points: &[(f64, f64)],
    l_max: u32,
    lambda: f64,
) -> Result<ShCoeffs> {
    if values.len() != points.len() || points.is_empty() {
        return Err(QspaceError::Validation("point/value count mismatch or empty".into()));
    }
    let op = ls_sht_operator(points, l_max, lambda)?;
    let d = DVector::from_column_slice(values);
    let c = &op * d;
    ShCoeffs::from_data(l_max, c.iter().copied().collect())
}

/// The least-squares reconstruction operator `(A^H A + lambda L)^{-1} A^H`.
pub fn ls_sht_operator(
    points: &[(f64, f64)],
    l_max: u32,
    lambda: f64,
) -> Result<DMatrix<Complex64>> {
    let a = sh_synthesis_matrix(points, l_max);
    let mut m = a.adjoint() * &a;
    for (i, &p) in laplace_beltrami_diag(l_max).iter().enumerate() {
        m[(i, i)] += Complex64::new(lambda * p, 0.0);
    }
    let ah = a.adjoint();
    let minv = m.clone().lu().try_inverse().ok_or_else(|| QspaceError::Singular {
        msg: "least-squares normal matrix is singular".into(),
        cond: Some(condition_number_complex(&m)),
    })?;
    Ok(minv * ah)
}

// ---------------------------------------------------------------------------
// multi-shell transforms
// ---------------------------------------------------------------------------

fn check_multi(signal: &MultiShellSignal, grid: &MultiShellGrid) -> Result<()> {
    if signal.shells.len() != grid.shells.len() {
        return Err(QspaceError::Validation(format!(
            "signal has {} shells, grid has {}",
            signal.shells.len(),
            grid.shells.len()
        )));
    }
    for (sig, sh) in signal.shells.iter().zip(&grid.shells) {
        sig.check_len(&sh.grid)?;
    }
    Ok(())
}

/// Separable SPF transform: per-shell order-recursive SHt (with angular and
/// radial regularization) followed by the Gauss-Laguerre radial assembly
/// `e_nlm = sum_s w_s R_n(q_s) (c_l^m)_{ns}`.
///
/// Degrees above a shell's band-limit draw contributions only from the shells
/// that support them.
pub fn nspft(
    signal: &MultiShellSignal,
    grid: &MultiShellGrid,
    lambda_l: f64,
    lambda_n: f64,
) -> Result<SpfCoeffs> {
    if lambda_l < 0.0 || lambda_n < 0.0 {
        return Err(QspaceError::Validation("regularization parameters must be nonnegative".into()));
    }
    check_multi(signal, grid)?;
    let spec = grid.radial_spec();
    let l_max = grid.l_max();
    let mut e = SpfCoeffs::zeros(grid.n_max, l_max);
    for (sig, sh) in signal.shells.iter().zip(&grid.shells) {
        let mut c_prev: Option<ShCoeffs> = None;
        for n in 0..=grid.n_max {
            let c = if n > 0 && lambda_n == 0.0 {
                c_prev.clone().unwrap()
            } else {
                let nf = n as f64;
                let ridge = lambda_n * (nf * (nf + 1.0)).powi(2);
                nsht_with_penalty(sig, &sh.grid, lambda_l, ridge)?
            };
            let fac = sh.weight * radial_rn(n, sh.q, &spec);
            for idx in sh_indices(sh.l_max) {
                let i = e.flat(n, idx.ell, idx.m);
                e.data[i] += fac * c.get(idx.ell, idx.m);
            }
            c_prev = Some(c);
        }
    }
    Ok(e)
}

/// Evaluate the SPF expansion at arbitrary q-space points (q, theta, phi).
pub fn inverse_spft(
    coeffs: &SpfCoeffs,
    spec: &crate::sph::RadialBasisSpec,
    qpoints: &[(f64, f64, f64)],
) -> Vec<Complex64> {
    qpoints
        .iter()
        .map(|&(q, theta, phi)| {
            let mut acc = Complex64::ZERO;
            for n in 0..=coeffs.n_max {
                let r = radial_rn(n, q, spec);
                for i in sh_indices(coeffs.l_max) {
                    acc += coeffs.get(n, i.ell, i.m) * r * ylm(i.ell, i.m, theta, phi).unwrap();
                }
            }
            acc
        })
        .collect()
}

/// SPF synthesis matrix B over all grid samples (shell-major rows, n-major
/// columns at a single angular band-limit `l_max = max_s L_s`).
pub fn spf_synthesis_matrix(grid: &MultiShellGrid) -> DMatrix<Complex64> {
    let l_max = grid.l_max();
    let spec = grid.radial_spec();
    let nsh = num_sh_coeffs(l_max);
    let ncols = (grid.n_max as usize + 1) * nsh;
    let mut rows = Vec::with_capacity(grid.total_samples());
    for sh in &grid.shells {
        let rn: Vec<f64> = (0..=grid.n_max).map(|n| radial_rn(n, sh.q, &spec)).collect();
        for (theta, phi) in sh.grid.points() {
            let mut row = vec![Complex64::ZERO; ncols];
            for (ci, idx) in sh_indices(l_max).enumerate() {
                let y = ylm(idx.ell, idx.m, theta, phi).unwrap();
                for n in 0..=grid.n_max {
                    row[n as usize * nsh + ci] = y * rn[n as usize];
                }
            }
            rows.push(row);
        }
    }
    DMatrix::from_fn(rows.len(), ncols, |r, c| rows[r][c])
}

/// Solve info returned alongside least-squares SPF estimates.
#[derive(Debug, Clone, Copy)]
pub struct LsSolveInfo {
    /// Condition number of the regularized normal matrix.
    pub condition: f64,
}

/// Joint regularized least-squares SPFt:
/// `(B^H B + lambda_l L + lambda_n N)^{-1} B^H d` with a single angular
/// band-limit for all shells. The solve proceeds on ill-conditioned systems;
/// the condition estimate is reported alongside the result.
pub fn ls_spft(
    signal: &MultiShellSignal,
    grid: &MultiShellGrid,
    lambda_l: f64,
    lambda_n: f64,
) -> Result<(SpfCoeffs, LsSolveInfo)> {
    check_multi(signal, grid)?;
    let l_max = grid.l_max();
    let b = spf_synthesis_matrix(grid);
    let m = regularized_spf_normal(&b, grid.n_max, l_max, lambda_l, lambda_n);
    let info = LsSolveInfo { condition: condition_number_complex(&m) };
    let minv = m.lu().try_inverse().ok_or(QspaceError::Singular {
        msg: "SPF least-squares normal matrix is exactly singular".into(),
        cond: Some(info.condition),
    })?;
    let d = DVector::from_iterator(
        grid.total_samples(),
        signal.shells.iter().flat_map(|s| s.values.iter().copied()),
    );
    let e = minv * (b.adjoint() * d);
    Ok((SpfCoeffs::from_data(grid.n_max, l_max, e.iter().copied().collect())?, info))
}

fn regularized_spf_normal(
    b: &DMatrix<Complex64>,
    n_max: u32,
    l_max: u32,
    lambda_l: f64,
    lambda_n: f64,
) -> DMatrix<Complex64> {
    let mut m = b.adjoint() * b;
    let lb = laplace_beltrami_diag(l_max);
    let nsh = num_sh_coeffs(l_max);
    for n in 0..=n_max as usize {
        let nf = n as f64;
        let npen = (nf * (nf + 1.0)).powi(2);
        for i in 0..nsh {
            let k = n * nsh + i;
            m[(k, k)] += Complex64::new(lambda_l * lb[i] + lambda_n * npen, 0.0);
        }
    }
    m
}

/// The joint least-squares SPF reconstruction operator.
pub fn ls_spft_operator(
    grid: &MultiShellGrid,
    lambda_l: f64,
    lambda_n: f64,
) -> Result<DMatrix<Complex64>> {
    let b = spf_synthesis_matrix(grid);
    let m = regularized_spf_normal(&b, grid.n_max, grid.l_max(), lambda_l, lambda_n);
    let minv = m.clone().lu().try_inverse().ok_or(QspaceError::Singular {
        msg: "SPF least-squares normal matrix is exactly singular".into(),
        cond: Some(condition_number_complex(&m)),
    })?;
    Ok(minv * b.adjoint())
}

/// The order-recursive SHt as an explicit linear operator (ncoef x nsamp).
pub fn nsht_operator(grid: &SingleShellGrid, lambda: f64) -> Result<DMatrix<Complex64>> {
    nsht_operator_pen(grid, lambda, 0.0)
}

fn nsht_operator_pen(grid: &SingleShellGrid, lambda_l: f64, ridge: f64) -> Result<DMatrix<Complex64>> {
    let n = grid.num_samples();
    let mut op = DMatrix::zeros(num_sh_coeffs(grid.l_max), n);
    for col in 0..n {
        let mut unit = vec![Complex64::ZERO; n];
        unit[col] = Complex64::new(1.0, 0.0);
        let c = nsht_with_penalty(&SignalOnGrid::from_complex(unit), grid, lambda_l, ridge)?;
        for (r, &v) in c.data.iter().enumerate() {
            op[(r, col)] = v;
        }
    }
    Ok(op)
}

/// The separable SPF transform as an explicit linear operator
/// (ncoef x total_samples), assembled from per-shell SHt operators.
pub fn nspft_operator(
    grid: &MultiShellGrid,
    lambda_l: f64,
    lambda_n: f64,
) -> Result<DMatrix<Complex64>> {
    let l_max = grid.l_max();
    let nsh = num_sh_coeffs(l_max);
    let ncoef = (grid.n_max as usize + 1) * nsh;
    let spec = grid.radial_spec();
    let mut op = DMatrix::zeros(ncoef, grid.total_samples());
    let mut off = 0;
    for sh in &grid.shells {
        let nsamp = sh.grid.num_samples();
        let mut t_prev: Option<DMatrix<Complex64>> = None;
        for n in 0..=grid.n_max {
            let t = if n > 0 && lambda_n == 0.0 {
                t_prev.take().unwrap()
            } else {
                let nf = n as f64;
                nsht_operator_pen(&sh.grid, lambda_l, lambda_n * (nf * (nf + 1.0)).powi(2))?
            };
            let fac = sh.weight * radial_rn(n, sh.q, &spec);
            for (row_local, idx) in crate::sph::sh_indices(sh.l_max).enumerate() {
                let row_global = n as usize * nsh + idx.flat();
                for col in 0..nsamp {
                    op[(row_global, off + col)] += fac * t[(row_local, col)];
                }
            }
            t_prev = Some(t);
        }
        off += nsamp;
    }
    Ok(op)
}

// ---------------------------------------------------------------------------
// conditioning diagnostics
// ---------------------------------------------------------------------------

/// Condition numbers of one shell's P_m systems plus the joint LS normal
/// matrix condition.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ConditionReport {
    /// (shell index, order m, system size, condition number)
    pub per_order: Vec<(usize, i32, usize, f64)>,
    pub max_pm_condition: f64,
    /// Condition of the joint least-squares normal matrix (A^H A or B^H B) at
    /// lambda = 0.
    pub ls_normal_condition: f64,
}

/// Conditioning report for a single-shell grid.
pub fn condition_report_single(grid: &SingleShellGrid) -> Result<ConditionReport> {
    let mut per_order = Vec::new();
    let mut max_c: f64 = 0.0;
    for m in 0..=grid.l_max as i32 {
        let pm = build_pm(grid, m)?;
        let c = condition_number(&pm.matrix);
        per_order.push((0, m, pm.ells.len(), c));
        max_c = max_c.max(c);
    }
    let a = sh_synthesis_matrix(&grid.points(), grid.l_max);
    let ls = condition_number_complex(&(a.adjoint() * &a));
    Ok(ConditionReport { per_order, max_pm_condition: max_c, ls_normal_condition: ls })
}

/// Conditioning report for a multi-shell grid.
pub fn condition_report_multi(grid: &MultiShellGrid) -> Result<ConditionReport> {
    let mut per_order = Vec::new();
    let mut max_c: f64 = 0.0;
    for (si, sh) in grid.shells.iter().enumerate() {
        for m in 0..=sh.l_max as i32 {
            let pm = build_pm(&sh.grid, m)?;
            let c = condition_number(&pm.matrix);
            per_order.push((si, m, pm.ells.len(), c));
            max_c = max_c.max(c);
        }
    }
    let b = spf_synthesis_matrix(grid);
    let ls = condition_number_complex(&(b.adjoint() * &b));
    Ok(ConditionReport { per_order, max_pm_condition: max_c, ls_normal_condition: ls })
}
