//! Sampling-grid construction: the iso-latitude single-shell grid with
//! condition-optimized colatitudes, the Gauss-Laguerre multi-shell grid, and
//! the per-b-value band-limit lookup.

use crate::error::{QspaceError, Result};
use crate::sph::{self, assoc_legendre_norm_abs, RadialBasisSpec};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Mutex, OnceLock};

/// One iso-latitude ring: 4j+1 equally spaced longitudes at colatitude theta_j.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ring {
    pub j: u32,
    pub theta: f64,
    pub phis: Vec<f64>,
}

impl Ring {
    fn new(j: u32, theta: f64) -> Self {
        let count = 4 * j + 1;
        let phis = (0..count).map(|k| 2.0 * PI * k as f64 / count as f64).collect();
        Ring { j, theta, phis }
    }
}

/// Iso-latitude sampling grid for one shell at band-limit `l_max`.
///
/// Samples are ordered ring-major (j ascending) then by longitude index; the
/// total count is (L+1)(L+2)/2. `hemisphere_flip` records, per sample, whether
/// the physical measurement direction is the antipode of the grid point; it is
/// metadata for export only, since reconstruction treats
/// d(theta,phi) = d(pi-theta, phi+pi).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleShellGrid {
    pub l_max: u32,
    pub rings: Vec<Ring>,
    pub hemisphere_flip: Vec<bool>,
}

impl SingleShellGrid {
    pub fn num_samples(&self) -> usize {
        sph::num_sh_coeffs(self.l_max)
    }

    /// Colatitude vector theta_0..theta_{L/2}.
    pub fn thetas(&self) -> Vec<f64> {
        self.rings.iter().map(|r| r.theta).collect()
    }

    /// Sample points (theta, phi) in canonical grid order.
    pub fn points(&self) -> Vec<(f64, f64)> {
        self.rings
            .iter()
            .flat_map(|r| r.phis.iter().map(move |&p| (r.theta, p)))
            .collect()
    }

    /// Unit direction cosines of the physical measurement directions
    /// (antipodally flipped where `hemisphere_flip` is set).
    pub fn directions(&self) -> Vec<[f64; 3]> {
        self.points()
            .iter()
            .zip(&self.hemisphere_flip)
            .map(|(&(t, p), &flip)| {
                let d = [t.sin() * p.cos(), t.sin() * p.sin(), t.cos()];
                if flip {
                    [-d[0], -d[1], -d[2]]
                } else {
                    d
                }
            })
            .collect()
    }

    /// Offset of ring j's first sample in the canonical order.
    pub fn ring_offset(&self, j: u32) -> usize {
        let j = j as usize;
        (2 * j).saturating_sub(1) * j
    }

    fn validate(&self) -> Result<()> {
        if self.l_max % 2 != 0 {
            return Err(QspaceError::Validation(format!("band-limit must be even, got {}", self.l_max)));
        }
        if self.rings.len() != (self.l_max / 2 + 1) as usize {
            return Err(QspaceError::Validation("ring count does not match band-limit".into()));
        }
        if self.hemisphere_flip.len() != self.num_samples() {
            return Err(QspaceError::Validation("hemisphere map length mismatch".into()));
        }
        let thetas = self.thetas();
        for (i, &t) in thetas.iter().enumerate() {
            if !(t > 0.0 && t < PI) {
                return Err(QspaceError::Validation(format!("theta_{i} = {t} outside (0, pi)")));
            }
            if thetas[..i].iter().any(|&u| u == t) {
                return Err(QspaceError::Validation(format!("duplicate colatitude {t}")));
            }
        }
        Ok(())
    }
}

/// One shell of a multi-shell grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shell {
    pub q: f64,
    pub b: f64,
    pub weight: f64,
    pub l_max: u32,
    pub grid: SingleShellGrid,
}

/// Gauss-Laguerre multi-shell grid: N+1 shells at q_s = sqrt(zeta x_s), each
/// carrying its own band-limit and iso-latitude grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiShellGrid {
    pub n_max: u32,
    pub zeta: f64,
    pub shells: Vec<Shell>,
}

impl MultiShellGrid {
    pub fn total_samples(&self) -> usize {
        self.shells.iter().map(|s| s.grid.num_samples()).sum()
    }

    pub fn radial_spec(&self) -> RadialBasisSpec {
        RadialBasisSpec { n_max: self.n_max, zeta: self.zeta }
    }

    /// Largest per-shell band-limit (the SPF angular band-limit).
    pub fn l_max(&self) -> u32 {
        self.shells.iter().map(|s| s.l_max).max().unwrap_or(0)
    }
}

/// Band-limit lookup table: per-FA anchor curves of (b, L) pairs.
///
/// The lookup returns the smallest anchored L whose anchor b-value is at least
/// the queried b (up to a small relative slack absorbing the rounding of the
/// published anchor values).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandlimitTable {
    /// (fa, anchors) rows; anchors ascending in b with non-decreasing even L.
    pub rows: Vec<(f64, Vec<(f64, u32)>)>,
    pub default_fa: f64,
    #[serde(default = "default_slack")]
    pub relative_slack: f64,
}

fn default_slack() -> f64 {
    0.01
}

impl Default for BandlimitTable {
    fn default() -> Self {
        let anchors = vec![(0.0, 0), (206.0, 2), (847.0, 4), (2018.0, 6), (4000.0, 8)];
        BandlimitTable {
            rows: vec![(0.4, anchors.clone()), (0.6, anchors.clone()), (0.8, anchors)],
            default_fa: 0.8,
            relative_slack: 0.01,
        }
    }
}

impl BandlimitTable {
    pub fn validate(&self) -> Result<()> {
        if self.rows.is_empty() {
            return Err(QspaceError::Validation("band-limit table has no FA rows".into()));
        }
        for (fa, anchors) in &self.rows {
            if !(0.0..=1.0).contains(fa) {
                return Err(QspaceError::Validation(format!("FA row {fa} outside [0,1]")));
            }
            let mut prev_b = f64::NEG_INFINITY;
            let mut prev_l = 0;
            for &(b, l) in anchors {
                if l % 2 != 0 {
                    return Err(QspaceError::Validation(format!("anchor L={l} is odd")));
                }
                if b < prev_b || l < prev_l {
                    return Err(QspaceError::Validation("anchors must be nondecreasing in b and L".into()));
                }
                prev_b = b;
                prev_l = l;
            }
        }
        Ok(())
    }
}

/// Band-limit required at b-value `b` for anisotropy `fa`.
pub fn bandlimit_for_bvalue(b: f64, fa: f64, table: &BandlimitTable) -> Result<u32> {
    if b < 0.0 {
        return Err(QspaceError::Validation(format!("negative b-value {b}")));
    }
    if !(0.0..=1.0).contains(&fa) {
        return Err(QspaceError::Validation(format!("FA {fa} outside [0,1]")));
    }
    let row = table
        .rows
        .iter()
        .min_by(|a, b2| {
            (a.0 - fa).abs().partial_cmp(&(b2.0 - fa).abs()).unwrap()
        })
        .ok_or_else(|| QspaceError::Validation("empty band-limit table".into()))?;
    for &(ab, l) in &row.1 {
        if b <= ab * (1.0 + table.relative_slack) {
            return Ok(l);
        }
    }
    Err(QspaceError::Validation(format!(
        "b-value {b} beyond the band-limit table range (max anchor {})",
        row.1.last().map(|a| a.0).unwrap_or(0.0)
    )))
}

// ---------------------------------------------------------------------------
// colatitude design
// ---------------------------------------------------------------------------

const N_CANDIDATES: usize = 1000;

fn candidates() -> Vec<f64> {
    // equispaced in (0, pi/2); the exact equator is excluded because
    // P~_l^m(pi/2) = 0 for even l and odd m, which makes every odd-order
    // system singular
    (1..N_CANDIDATES).map(|i| i as f64 * (PI / 2.0) / N_CANDIDATES as f64).collect()
}

/// Even/odd-m degree ladder for order m at band-limit L.
pub(crate) fn degree_ladder(l_max: u32, m: i32) -> Vec<u32> {
    let am = m.unsigned_abs();
    let start = if am % 2 == 0 { am } else { am + 1 };
    (start..=l_max).step_by(2).collect()
}

/// First ring index used by order m: ceil(|m|/2).
pub(crate) fn first_ring(m: i32) -> u32 {
    m.unsigned_abs().div_ceil(2)
}

/// P~ sub-matrix for order m over rows `thetas[first_ring(m)..]` (no 2 pi).
fn ptilde_matrix(thetas: &[f64], l_max: u32, m: u32) -> DMatrix<f64> {
    let ladder = degree_ladder(l_max, m as i32);
    let s = first_ring(m as i32) as usize;
    let rows = thetas.len() - s;
    DMatrix::from_fn(rows, ladder.len(), |r, c| {
        assoc_legendre_norm_abs(ladder[c], m, thetas[s + r])
    })
}

/// 2-norm condition number from the symmetric eigenvalues of P^T P
/// (fast path for the design search).
fn cond_via_gram(p: &DMatrix<f64>) -> f64 {
    let g = p.transpose() * p;
    let eig = g.symmetric_eigenvalues();
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    for &v in eig.iter() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        (hi / lo).sqrt()
    }
}

fn max_cond_over_orders(thetas: &[f64], l_max: u32, orders: &[u32]) -> f64 {
    orders
        .iter()
        .map(|&m| cond_via_gram(&ptilde_matrix(thetas, l_max, m)))
        .fold(0.0, f64::max)
}

/// Deterministic colatitude design for band-limit L.
///
/// Greedy placement from a dense candidate set (the equator ring first, then
/// ring indices descending, minimizing the condition of the newly completed
/// P_m systems), followed by coordinate-descent refinement of all rings until
/// no strict improvement remains.
pub fn design_colatitudes(l_max: u32) -> Result<Vec<f64>> {
    if l_max % 2 != 0 {
        return Err(QspaceError::Validation(format!("band-limit must be even, got {l_max}")));
    }
    static CACHE: OnceLock<Mutex<HashMap<u32, Vec<f64>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(hit) = cache.lock().unwrap().get(&l_max) {
        return Ok(hit.clone());
    }
    let thetas = design_colatitudes_uncached(l_max);
    cache.lock().unwrap().insert(l_max, thetas.clone());
    Ok(thetas)
}

fn design_colatitudes_uncached(l_max: u32) -> Vec<f64> {
    let cand = candidates();
    let k_top = (l_max / 2) as usize;
    if l_max == 0 {
        return vec![cand[N_CANDIDATES / 2 - 1]];
    }
    let all_orders: Vec<u32> = (0..=l_max).collect();
    let mut used = vec![false; cand.len()];
    let mut thetas = vec![0.0; k_top + 1];
    // the ring farthest from the pole takes the last (largest) candidate
    thetas[k_top] = cand[cand.len() - 1];
    used[cand.len() - 1] = true;
    // greedy, ring index descending; orders 2j-1 and 2j complete at step j
    for j in (0..k_top).rev() {
        let new_orders: Vec<u32> = if j == 0 {
            vec![0]
        } else {
            [2 * j as u32 - 1, 2 * j as u32].into_iter().filter(|&m| m <= l_max).collect()
        };
        let mut best: Option<(f64, usize)> = None;
        for (i, &c) in cand.iter().enumerate() {
            if used[i] {
                continue;
            }
            thetas[j] = c;
            // rows below first_ring(m) = j are not touched by the new orders
            let v = max_cond_over_orders(&thetas, l_max, &new_orders);
            if best.map_or(true, |(bv, _)| v < bv - 1e-12) {
                best = Some((v, i));
            }
        }
        let (_, bi) = best.expect("candidate set exhausted");
        thetas[j] = cand[bi];
        used[bi] = true;
    }
    // coordinate-descent refinement over the full objective
    let mut cur = max_cond_over_orders(&thetas, l_max, &all_orders);
    let mut theta_idx: Vec<usize> =
        thetas.iter().map(|t| cand.iter().position(|c| c == t).unwrap()).collect();
    for _ in 0..30 {
        let mut improved = false;
        for j in 0..=k_top {
            let mut best: Option<(f64, usize)> = None;
            let save = thetas[j];
            for (i, &c) in cand.iter().enumerate() {
                if used[i] {
                    continue;
                }
                thetas[j] = c;
                let v = max_cond_over_orders(&thetas, l_max, &all_orders);
                if v < cur - 1e-12 && best.map_or(true, |(bv, _)| v < bv - 1e-12) {
                    best = Some((v, i));
                }
            }
            if let Some((bv, bi)) = best {
                used[theta_idx[j]] = false;
                thetas[j] = cand[bi];
                theta_idx[j] = bi;
                used[bi] = true;
                cur = bv;
                improved = true;
            } else {
                thetas[j] = save;
            }
        }
        if !improved {
            break;
        }
    }
    thetas
}

/// Naive equal-sample iso-latitude grid: equiangular colatitudes including the
/// equator ring. This is the minimal-count grid a practitioner would write
/// down without the conditioning design; its joint least-squares matrix is
/// numerically singular.
pub fn equiangular_colatitudes(l_max: u32) -> Vec<f64> {
    let k_top = l_max / 2;
    (0..=k_top).map(|j| (j + 1) as f64 * PI / (2.0 * (k_top as f64 + 1.0))).collect()
}

/// Build the iso-latitude grid for band-limit L.
///
/// When `thetas` is `None`, the condition-optimized design is used.
pub fn single_shell_grid(l_max: u32, thetas: Option<&[f64]>) -> Result<SingleShellGrid> {
    if l_max % 2 != 0 {
        return Err(QspaceError::Validation(format!("band-limit must be even, got {l_max}")));
    }
    let thetas: Vec<f64> = match thetas {
        Some(t) => t.to_vec(),
        None => design_colatitudes(l_max)?,
    };
    if thetas.len() != (l_max / 2 + 1) as usize {
        return Err(QspaceError::Validation(format!(
            "expected {} colatitudes for L={}, got {}",
            l_max / 2 + 1,
            l_max,
            thetas.len()
        )));
    }
    let rings: Vec<Ring> = thetas.iter().enumerate().map(|(j, &t)| Ring::new(j as u32, t)).collect();
    let n = sph::num_sh_coeffs(l_max);
    let grid = SingleShellGrid { l_max, rings, hemisphere_flip: vec![false; n] };
    grid.validate()?;
    Ok(grid)
}

/// Build the Gauss-Laguerre multi-shell grid for radial order N and maximum
/// b-value `b_max`, with per-shell band-limits looked up at anisotropy `fa`.
pub fn multi_shell_grid(
    n_max: u32,
    b_max: f64,
    fa: f64,
    table: &BandlimitTable,
) -> Result<MultiShellGrid> {
    if b_max <= 0.0 {
        return Err(QspaceError::Validation(format!("b_max must be positive, got {b_max}")));
    }
    table.validate()?;
    // nodes do not depend on zeta; fix zeta so the outermost shell is at b_max
    let unit = sph::gauss_laguerre_rule(n_max, &RadialBasisSpec::new(n_max, 1.0)?)?;
    let x_top = *unit.nodes.last().unwrap();
    let zeta = b_max / x_top;
    let spec = RadialBasisSpec::new(n_max, zeta)?;
    let rule = sph::gauss_laguerre_rule(n_max, &spec)?;
    let mut shells = Vec::with_capacity(rule.nodes.len());
    for s in 0..rule.nodes.len() {
        let b = zeta * rule.nodes[s];
        let l_s = bandlimit_for_bvalue(b, fa, table)?;
        shells.push(Shell {
            q: rule.q[s],
            b,
            weight: rule.weights[s],
            l_max: l_s,
            grid: single_shell_grid(l_s, None)?,
        });
    }
    Ok(MultiShellGrid { n_max, zeta, shells })
}

// ---------------------------------------------------------------------------
// grid file formats
// ---------------------------------------------------------------------------

/// Native JSON container for either grid kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum GridFile {
    Single(SingleShellGrid),
    Multi(MultiShellGrid),
}

impl GridFile {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let g: GridFile = serde_json::from_str(s)?;
        match &g {
            GridFile::Single(sg) => sg.validate()?,
            GridFile::Multi(mg) => {
                for sh in &mg.shells {
                    sh.grid.validate()?;
                }
            }
        }
        Ok(g)
    }

    /// All physical measurement directions with their b-values.
    pub fn directions_with_bvalues(&self, single_shell_b: f64) -> Vec<([f64; 3], f64)> {
        match self {
            GridFile::Single(g) => {
                g.directions().into_iter().map(|d| (d, single_shell_b)).collect()
            }
            GridFile::Multi(g) => g
                .shells
                .iter()
                .flat_map(|s| s.grid.directions().into_iter().map(move |d| (d, s.b)))
                .collect(),
        }
    }
}

/// FSL-style export: three whitespace-separated rows of x, y, z direction
/// cosines (bvec) and one row of b-values (bval).
pub fn export_bvec_bval(dirs_b: &[([f64; 3], f64)]) -> (String, String) {
    let mut rows = [String::new(), String::new(), String::new()];
    let mut bvals = String::new();
    for (i, (d, b)) in dirs_b.iter().enumerate() {
        let sep = if i == 0 { "" } else { " " };
        for ax in 0..3 {
            rows[ax].push_str(&format!("{sep}{:.10}", d[ax]));
        }
        bvals.push_str(&format!("{sep}{:.4}", b));
    }
    (format!("{}\n{}\n{}\n", rows[0], rows[1], rows[2]), format!("{bvals}\n"))
}

/// MRtrix-style scheme file: one `x y z b` line per sample.
pub fn export_mrtrix(dirs_b: &[([f64; 3], f64)]) -> String {
    let mut out = String::new();
    for (d, b) in dirs_b {
        out.push_str(&format!("{:.10} {:.10} {:.10} {:.4}\n", d[0], d[1], d[2], b));
    }
    out
}
