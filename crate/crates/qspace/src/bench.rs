//! Monte-Carlo experiment harness: regularization sweeps of the four
//! reconstruction methods over crossing angles, anisotropies and noise
//! levels, with CSV / gnuplot output.

use crate::error::{QspaceError, Result};
use crate::metrics::nrmse_real;
use crate::noise::MmConfig;
use crate::phantom::{add_rician_noise, gmm_signal_dir, oracle_sh_coeffs, oracle_spf_coeffs, GmmPhantom};
use crate::sampling::{multi_shell_grid, single_shell_grid, BandlimitTable};
use crate::transforms::{
    ls_sht_operator, ls_spft_operator, nsht_operator, nspft_operator, sh_synthesis_matrix,
    spf_synthesis_matrix,
};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// The four benchmarked reconstruction methods. For multi-shell experiments
/// the recursive-transform variants read as nSPFt instead of nSHt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    LsReg,
    LsRegDenoised,
    NshtReg,
    NshtRegDenoised,
}

impl Method {
    pub fn all() -> Vec<Method> {
        vec![Method::LsReg, Method::LsRegDenoised, Method::NshtReg, Method::NshtRegDenoised]
    }

    pub fn label(&self, multi: bool) -> &'static str {
        match (self, multi) {
            (Method::LsReg, _) => "LS-Reg",
            (Method::LsRegDenoised, _) => "LS-Reg-Denoised",
            (Method::NshtReg, false) => "nSHt-Reg",
            (Method::NshtRegDenoised, false) => "nSHt-Reg-Denoised",
            (Method::NshtReg, true) => "nSPFt-Reg",
            (Method::NshtRegDenoised, true) => "nSPFt-Reg-Denoised",
        }
    }

    pub fn from_label(s: &str) -> Result<Method> {
        match s {
            "LS-Reg" => Ok(Method::LsReg),
            "LS-Reg-Denoised" => Ok(Method::LsRegDenoised),
            "nSHt-Reg" | "nSPFt-Reg" => Ok(Method::NshtReg),
            "nSHt-Reg-Denoised" | "nSPFt-Reg-Denoised" => Ok(Method::NshtRegDenoised),
            other => Err(QspaceError::Validation(format!("unknown method {other:?}"))),
        }
    }

    pub fn denoised(&self) -> bool {
        matches!(self, Method::LsRegDenoised | Method::NshtRegDenoised)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    CrossingAngle,
    FaSweep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShellMode {
    Single,
    Multi,
}

/// Full experiment description; identical specs produce identical tables.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSpec {
    pub kind: SweepKind,
    pub shell_mode: ShellMode,
    pub snrs: Vec<f64>,
    pub realizations: usize,
    /// Angular regularization sweep (also the single-shell lambda sweep).
    pub lambda_grid: Vec<f64>,
    /// Radial regularization sweep (multi-shell only).
    pub lambda_n_grid: Vec<f64>,
    pub methods: Vec<Method>,
    /// Sweep values: crossing angles in degrees, or FA values.
    pub sweep_values: Vec<f64>,
    /// Single-shell configuration.
    pub single_l: u32,
    pub single_b: f64,
    /// Multi-shell configuration.
    pub multi_n: u32,
    pub multi_b_max: f64,
    /// Anisotropy used for the band-limit lookup when building grids.
    pub grid_fa: f64,
    pub seed_base: u64,
    pub estimate_sigma: bool,
    pub mm: MmConfig,
}

/// The 25 log-spaced regularization values in [1e-9, 1] plus 0.
pub fn default_lambda_grid() -> Vec<f64> {
    let mut grid = vec![0.0];
    for i in 0..25 {
        grid.push(10f64.powf(-9.0 + 9.0 * i as f64 / 24.0));
    }
    grid
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            kind: SweepKind::CrossingAngle,
            shell_mode: ShellMode::Single,
            snrs: vec![10.0, 20.0, 30.0],
            realizations: 100,
            lambda_grid: default_lambda_grid(),
            lambda_n_grid: default_lambda_grid(),
            methods: Method::all(),
            sweep_values: (0..=6).map(|i| 15.0 * i as f64).collect(),
            single_l: 8,
            single_b: 4000.0,
            multi_n: 3,
            multi_b_max: 4000.0,
            grid_fa: 0.8,
            seed_base: 0x71ab_5eed,
            estimate_sigma: false,
            mm: MmConfig::default(),
        }
    }
}

impl ExperimentSpec {
    /// CI-scale variant: 20 realizations.
    pub fn quick(mut self) -> Self {
        self.realizations = 20;
        self
    }

    pub fn fa_sweep_defaults(mut self) -> Self {
        self.kind = SweepKind::FaSweep;
        self.sweep_values = (0..10).map(|i| 0.5 + 0.05 * i as f64).collect();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.realizations == 0 {
            return Err(QspaceError::Validation("realizations must be >= 1".into()));
        }
        if self.lambda_grid.is_empty() {
            return Err(QspaceError::Validation("lambda grid must be non-empty".into()));
        }
        if self.lambda_grid.iter().any(|&l| l < 0.0) || self.lambda_n_grid.iter().any(|&l| l < 0.0)
        {
            return Err(QspaceError::Validation("lambda values must be nonnegative".into()));
        }
        if self.methods.is_empty() {
            return Err(QspaceError::Validation("no methods selected".into()));
        }
        if self.sweep_values.is_empty() {
            return Err(QspaceError::Validation("no sweep values".into()));
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let spec: ExperimentSpec = serde_json::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }

    fn phantom_for(&self, sweep_value: f64) -> Result<GmmPhantom> {
        match self.kind {
            SweepKind::CrossingAngle => Ok(GmmPhantom::crossing(sweep_value.to_radians())),
            SweepKind::FaSweep => GmmPhantom::single_fiber_fa(sweep_value),
        }
    }
}

/// One aggregated configuration of the sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: String,
    pub snr: f64,
    pub sweep_kind: String,
    pub sweep_value: f64,
    pub lambda: f64,
    pub lambda_n: f64,
    pub nrmse_coeff_mean: f64,
    pub nrmse_coeff_se: f64,
    pub nrmse_spatial_mean: f64,
    pub nrmse_spatial_se: f64,
    pub realizations: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

impl ResultTable {
    /// The (lambda, lambda_n) minimizing the mean coefficient-domain NRMSE
    /// for a method at one (snr, sweep_value) configuration.
    pub fn argmin_lambda(&self, method: &str, snr: f64, sweep_value: f64) -> Option<&ResultRow> {
        self.rows
            .iter()
            .filter(|r| r.method == method && r.snr == snr && r.sweep_value == sweep_value)
            .min_by(|a, b| a.nrmse_coeff_mean.partial_cmp(&b.nrmse_coeff_mean).unwrap())
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "method",
            "snr",
            "sweep_kind",
            "sweep_value",
            "lambda",
            "lambda_n",
            "nrmse_coeff_mean",
            "nrmse_coeff_se",
            "nrmse_spatial_mean",
            "nrmse_spatial_se",
            "realizations",
            "seed",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.method.clone(),
                format!("{}", r.snr),
                r.sweep_kind.clone(),
                format!("{}", r.sweep_value),
                format!("{:e}", r.lambda),
                format!("{:e}", r.lambda_n),
                format!("{:e}", r.nrmse_coeff_mean),
                format!("{:e}", r.nrmse_coeff_se),
                format!("{:e}", r.nrmse_spatial_mean),
                format!("{:e}", r.nrmse_spatial_se),
                format!("{}", r.realizations),
                format!("{}", r.seed),
            ])?;
        }
        String::from_utf8(w.into_inner().map_err(|e| QspaceError::Parse(e.to_string()))?)
            .map_err(|e| QspaceError::Parse(e.to_string()))
    }

    pub fn from_csv_str(s: &str) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(s.as_bytes());
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let f = |i: usize| -> Result<f64> {
                rec.get(i)
                    .ok_or_else(|| QspaceError::Parse("short CSV record".into()))?
                    .parse()
                    .map_err(|e| QspaceError::Parse(format!("bad float: {e}")))
            };
            rows.push(ResultRow {
                method: rec.get(0).unwrap_or_default().to_string(),
                snr: f(1)?,
                sweep_kind: rec.get(2).unwrap_or_default().to_string(),
                sweep_value: f(3)?,
                lambda: f(4)?,
                lambda_n: f(5)?,
                nrmse_coeff_mean: f(6)?,
                nrmse_coeff_se: f(7)?,
                nrmse_spatial_mean: f(8)?,
                nrmse_spatial_se: f(9)?,
                realizations: f(10)? as usize,
                seed: f(11)? as u64,
            });
        }
        Ok(ResultTable { rows })
    }

    /// Gnuplot-friendly whitespace-separated long format with a comment header.
    pub fn to_gnuplot(&self) -> String {
        let mut out = String::from(
            "# method snr sweep_kind sweep_value lambda lambda_n nrmse_coeff_mean nrmse_coeff_se nrmse_spatial_mean nrmse_spatial_se realizations seed\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{} {} {} {} {:e} {:e} {:e} {:e} {:e} {:e} {} {}\n",
                r.method.replace(' ', "_"),
                r.snr,
                r.sweep_kind,
                r.sweep_value,
                r.lambda,
                r.lambda_n,
                r.nrmse_coeff_mean,
                r.nrmse_coeff_se,
                r.nrmse_spatial_mean,
                r.nrmse_spatial_se,
                r.realizations,
                r.seed
            ));
        }
        out
    }

    /// A minimal gnuplot script plotting NRMSE against lambda per method.
    pub fn gnuplot_script(data_file: &str) -> String {
        format!(
            "set logscale x\nset xlabel 'lambda'\nset ylabel 'NRMSE'\nset key outside\n\
             plot for [m in system(\"awk 'NR>1 {{print $1}}' {data_file} | sort -u\")] \\\n    '{data_file}' using 5:($1 eq m ? $7 : 1/0) with linespoints title m\n"
        )
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn realization_seed(base: u64, sweep_idx: usize, snr_idx: usize, r: usize) -> u64 {
    splitmix64(base ^ splitmix64(sweep_idx as u64 ^ splitmix64(snr_idx as u64 ^ splitmix64(r as u64))))
}

/// Cached linear reconstruction: coefficients from data, predictions from
/// coefficients.
struct LinearRecon {
    op: DMatrix<Complex64>,
    lambda: f64,
    lambda_n: f64,
}

fn apply(op: &DMatrix<Complex64>, d: &[f64]) -> Vec<Complex64> {
    let dv = DVector::from_iterator(d.len(), d.iter().map(|&v| Complex64::new(v, 0.0)));
    (op * dv).iter().copied().collect()
}

fn predict(fwd: &DMatrix<Complex64>, c: &[Complex64]) -> Vec<f64> {
    (fwd * DVector::from_column_slice(c)).iter().map(|v| v.re).collect()
}

/// Lean MM loop over cached operators (known or estimated sigma^2, clamped
/// predictions).
fn mm_with_operators(
    d: &[f64],
    recon: &DMatrix<Complex64>,
    fwd: &DMatrix<Complex64>,
    snr: f64,
    estimate_sigma: bool,
    mm: &MmConfig,
) -> Vec<Complex64> {
    use crate::noise::{measurement_update, sigma2_update, NoiseSpec};
    let mut coeffs = apply(recon, d);
    let mut sigma2 = if estimate_sigma {
        // crude residual-based init, refined by the iteration
        let k = predict(fwd, &coeffs);
        let mut resid: Vec<f64> = d.iter().zip(&k).map(|(a, b)| (a - b).abs()).collect();
        resid.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let med = resid[resid.len() / 2];
        (1.4826 * med).powi(2).max(1e-12)
    } else {
        1.0 / (snr * snr)
    };
    for _ in 0..mm.max_iters {
        let mut k = predict(fwd, &coeffs);
        if mm.nonneg {
            for v in &mut k {
                *v = v.max(0.0);
            }
        }
        let spec = NoiseSpec { sigma2, coils: 1 };
        if estimate_sigma {
            sigma2 = sigma2_update(d, &k, &spec, sigma2);
        }
        let d_tilde = measurement_update(d, &k, &NoiseSpec { sigma2, coils: 1 });
        let next = apply(recon, &d_tilde);
        let num: f64 = next.iter().zip(&coeffs).map(|(a, b)| (a - b).norm_sqr()).sum();
        let den: f64 = coeffs.iter().map(|v| v.norm_sqr()).sum();
        coeffs = next;
        if den > 0.0 && (num / den).sqrt() <= mm.tol {
            break;
        }
    }
    coeffs
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    ((mean), (var / n).sqrt())
}

/// Run the single-shell sweep: for each (sweep value, SNR, realization)
/// synthesize the phantom on the grid, add Rician noise, reconstruct with
/// every (method, lambda), and score NRMSE against the quadrature oracle
/// (coefficients) and the noiseless signal (samples).
pub fn run_single_shell_experiment(spec: &ExperimentSpec) -> Result<ResultTable> {
    spec.validate()?;
    let grid = single_shell_grid(spec.single_l, None)?;
    let points = grid.points();
    let fwd = sh_synthesis_matrix(&points, spec.single_l);
    // per-lambda reconstruction operators for both families
    let ls_ops: Vec<LinearRecon> = spec
        .lambda_grid
        .iter()
        .map(|&l| {
            Ok(LinearRecon { op: ls_sht_operator(&points, spec.single_l, l)?, lambda: l, lambda_n: 0.0 })
        })
        .collect::<Result<_>>()?;
    let ns_ops: Vec<LinearRecon> = spec
        .lambda_grid
        .iter()
        .map(|&l| Ok(LinearRecon { op: nsht_operator(&grid, l)?, lambda: l, lambda_n: 0.0 }))
        .collect::<Result<_>>()?;
    let mut table = ResultTable::default();
    for (sweep_idx, &sweep_value) in spec.sweep_values.iter().enumerate() {
        let phantom = spec.phantom_for(sweep_value)?;
        let truth_c = oracle_sh_coeffs(&phantom, spec.single_b, spec.single_l);
        let clean: Vec<f64> =
            points.iter().map(|&(t, p)| gmm_signal_dir(&phantom, spec.single_b, t, p)).collect();
        for (snr_idx, &snr) in spec.snrs.iter().enumerate() {
            let per_real: Vec<Vec<(f64, f64)>> = (0..spec.realizations)
                .into_par_iter()
                .map(|r| {
                    let seed = realization_seed(spec.seed_base, sweep_idx, snr_idx, r);
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    let noisy = add_rician_noise(&clean, phantom.d0, snr, &mut rng);
                    let mut out = Vec::with_capacity(spec.methods.len() * spec.lambda_grid.len());
                    for method in &spec.methods {
                        let ops = match method {
                            Method::LsReg | Method::LsRegDenoised => &ls_ops,
                            Method::NshtReg | Method::NshtRegDenoised => &ns_ops,
                        };
                        for recon in ops {
                            let coeffs = if method.denoised() {
                                mm_with_operators(
                                    &noisy,
                                    &recon.op,
                                    &fwd,
                                    snr,
                                    spec.estimate_sigma,
                                    &spec.mm,
                                )
                            } else {
                                apply(&recon.op, &noisy)
                            };
                            let nc = crate::metrics::nrmse(&coeffs, &truth_c.data)
                                .expect("nonzero truth");
                            let d_hat = predict(&fwd, &coeffs);
                            let nd = nrmse_real(&d_hat, &clean).expect("nonzero truth");
                            out.push((nc, nd));
                        }
                    }
                    out
                })
                .collect();
            // aggregate in deterministic (method, lambda) x realization order
            let mut slot = 0usize;
            for method in &spec.methods {
                for recon in match method {
                    Method::LsReg | Method::LsRegDenoised => &ls_ops,
                    Method::NshtReg | Method::NshtRegDenoised => &ns_ops,
                } {
                    let nc: Vec<f64> = per_real.iter().map(|v| v[slot].0).collect();
                    let nd: Vec<f64> = per_real.iter().map(|v| v[slot].1).collect();
                    let (cm, cs) = mean_and_se(&nc);
                    let (dm, ds) = mean_and_se(&nd);
                    table.rows.push(ResultRow {
                        method: method.label(false).to_string(),
                        snr,
                        sweep_kind: format!("{:?}", spec.kind).to_lowercase(),
                        sweep_value,
                        lambda: recon.lambda,
                        lambda_n: recon.lambda_n,
                        nrmse_coeff_mean: cm,
                        nrmse_coeff_se: cs,
                        nrmse_spatial_mean: dm,
                        nrmse_spatial_se: ds,
                        realizations: spec.realizations,
                        seed: spec.seed_base,
                    });
                    slot += 1;
                }
            }
        }
    }
    Ok(table)
}

/// Run the multi-shell sweep: scores NRMSE of the SPF coefficients against
/// the radial-angular quadrature oracle, plus the spatial NRMSE.
pub fn run_multi_shell_experiment(spec: &ExperimentSpec) -> Result<ResultTable> {
    spec.validate()?;
    let table_cfg = BandlimitTable::default();
    let grid = multi_shell_grid(spec.multi_n, spec.multi_b_max, spec.grid_fa, &table_cfg)?;
    let fwd = spf_synthesis_matrix(&grid);
    let radial = grid.radial_spec();
    let l_max = grid.l_max();
    // (lambda_l, lambda_n) pairs
    let pairs: Vec<(f64, f64)> = spec
        .lambda_grid
        .iter()
        .flat_map(|&ll| spec.lambda_n_grid.iter().map(move |&ln| (ll, ln)))
        .collect();
    let ls_ops: Vec<LinearRecon> = pairs
        .par_iter()
        .map(|&(ll, ln)| {
            Ok(LinearRecon { op: ls_spft_operator(&grid, ll, ln)?, lambda: ll, lambda_n: ln })
        })
        .collect::<Result<_>>()?;
    let ns_ops: Vec<LinearRecon> = pairs
        .par_iter()
        .map(|&(ll, ln)| {
            Ok(LinearRecon { op: nspft_operator(&grid, ll, ln)?, lambda: ll, lambda_n: ln })
        })
        .collect::<Result<_>>()?;
    let qpoints: Vec<(f64, f64, f64)> = grid
        .shells
        .iter()
        .flat_map(|sh| sh.grid.points().into_iter().map(move |(t, p)| (sh.q, t, p)))
        .collect();
    let mut table = ResultTable::default();
    for (sweep_idx, &sweep_value) in spec.sweep_values.iter().enumerate() {
        let phantom = spec.phantom_for(sweep_value)?;
        let truth_e = oracle_spf_coeffs(&phantom, &radial, spec.multi_n, l_max)?;
        let clean: Vec<f64> = qpoints
            .iter()
            .map(|&(q, t, p)| gmm_signal_dir(&phantom, q * q, t, p))
            .collect();
        for (snr_idx, &snr) in spec.snrs.iter().enumerate() {
            let per_real: Vec<Vec<(f64, f64)>> = (0..spec.realizations)
                .into_par_iter()
                .map(|r| {
                    let seed = realization_seed(spec.seed_base, 1000 + sweep_idx, snr_idx, r);
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    let noisy = add_rician_noise(&clean, phantom.d0, snr, &mut rng);
                    let mut out = Vec::with_capacity(spec.methods.len() * pairs.len());
                    for method in &spec.methods {
                        let ops = match method {
                            Method::LsReg | Method::LsRegDenoised => &ls_ops,
                            Method::NshtReg | Method::NshtRegDenoised => &ns_ops,
                        };
                        for recon in ops {
                            let coeffs = if method.denoised() {
                                mm_with_operators(
                                    &noisy,
                                    &recon.op,
                                    &fwd,
                                    snr,
                                    spec.estimate_sigma,
                                    &spec.mm,
                                )
                            } else {
                                apply(&recon.op, &noisy)
                            };
                            let nc = crate::metrics::nrmse(&coeffs, &truth_e.data)
                                .expect("nonzero truth");
                            let d_hat = predict(&fwd, &coeffs);
                            let nd = nrmse_real(&d_hat, &clean).expect("nonzero truth");
                            out.push((nc, nd));
                        }
                    }
                    out
                })
                .collect();
            let mut slot = 0usize;
            for method in &spec.methods {
                for recon in match method {
                    Method::LsReg | Method::LsRegDenoised => &ls_ops,
                    Method::NshtReg | Method::NshtRegDenoised => &ns_ops,
                } {
                    let nc: Vec<f64> = per_real.iter().map(|v| v[slot].0).collect();
                    let nd: Vec<f64> = per_real.iter().map(|v| v[slot].1).collect();
                    let (cm, cs) = mean_and_se(&nc);
                    let (dm, ds) = mean_and_se(&nd);
                    table.rows.push(ResultRow {
                        method: method.label(true).to_string(),
                        snr,
                        sweep_kind: format!("{:?}", spec.kind).to_lowercase(),
                        sweep_value,
                        lambda: recon.lambda,
                        lambda_n: recon.lambda_n,
                        nrmse_coeff_mean: cm,
                        nrmse_coeff_se: cs,
                        nrmse_spatial_mean: dm,
                        nrmse_spatial_se: ds,
                        realizations: spec.realizations,
                        seed: spec.seed_base,
                    });
                    slot += 1;
                }
            }
        }
    }
    Ok(table)
}

/// Run the experiment selected by the spec's shell mode.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ResultTable> {
    match spec.shell_mode {
        ShellMode::Single => run_single_shell_experiment(spec),
        ShellMode::Multi => run_multi_shell_experiment(spec),
    }
}

/// Write the table as CSV and gnuplot data (plus an optional plot script)
/// into a directory.
pub fn emit_results(table: &ResultTable, dir: &std::path::Path, with_script: bool) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut f = std::fs::File::create(dir.join("results.csv"))?;
    f.write_all(table.to_csv()?.as_bytes())?;
    let mut g = std::fs::File::create(dir.join("results.dat"))?;
    g.write_all(table.to_gnuplot().as_bytes())?;
    if with_script {
        let mut s = std::fs::File::create(dir.join("plot.gp"))?;
        s.write_all(ResultTable::gnuplot_script("results.dat").as_bytes())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec() -> ExperimentSpec {
        ExperimentSpec {
            snrs: vec![10.0],
            realizations: 3,
            lambda_grid: vec![0.0, 1e-4],
            lambda_n_grid: vec![0.0],
            sweep_values: vec![90.0],
            single_l: 4,
            single_b: 2000.0,
            multi_n: 1,
            multi_b_max: 900.0,
            ..Default::default()
        }
    }

    #[test]
    fn experiment_is_deterministic() {
        let spec = tiny_spec();
        let a = run_single_shell_experiment(&spec).unwrap();
        let b = run_single_shell_experiment(&spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn csv_round_trip() {
        let spec = tiny_spec();
        let t = run_single_shell_experiment(&spec).unwrap();
        let csv = t.to_csv().unwrap();
        let back = ResultTable::from_csv_str(&csv).unwrap();
        assert_eq!(t.rows.len(), back.rows.len());
        for (a, b) in t.rows.iter().zip(&back.rows) {
            assert_eq!(a.method, b.method);
            assert!((a.nrmse_coeff_mean - b.nrmse_coeff_mean).abs() < 1e-15);
            assert_eq!(a.realizations, b.realizations);
        }
        // empty table emits header only
        let empty = ResultTable::default().to_csv().unwrap();
        assert_eq!(empty.lines().count(), 1);
        assert!(empty.starts_with("method,snr,sweep_kind,sweep_value,lambda,lambda_n,"));
    }

    #[test]
    fn noiseless_limit_hits_truncation_floor() {
        // at very high SNR and lambda = 0 the recursive transform's NRMSE_c
        // equals the band-limit truncation floor of the mixture
        let spec = ExperimentSpec {
            snrs: vec![1e9],
            realizations: 1,
            lambda_grid: vec![0.0],
            sweep_values: vec![90.0],
            methods: vec![Method::NshtReg],
            ..Default::default()
        };
        let t = run_single_shell_experiment(&spec).unwrap();
        assert_eq!(t.rows.len(), 1);
        assert!(t.rows[0].nrmse_coeff_mean < 0.05, "floor {}", t.rows[0].nrmse_coeff_mean);
    }

    #[test]
    fn multi_shell_runs_and_reports() {
        let mut spec = tiny_spec();
        spec.shell_mode = ShellMode::Multi;
        spec.methods = vec![Method::LsReg, Method::NshtReg];
        let t = run_multi_shell_experiment(&spec).unwrap();
        // 2 methods x 2 lambda x 1 lambda_n x 1 snr x 1 sweep
        assert_eq!(t.rows.len(), 4);
        assert!(t.rows.iter().all(|r| r.nrmse_coeff_mean.is_finite()));
        assert!(t.rows.iter().any(|r| r.method == "nSPFt-Reg"));
    }

    #[test]
    fn unknown_method_label_rejected() {
        assert!(Method::from_label("magic").is_err());
        assert!(Method::from_label("nSPFt-Reg").is_ok());
    }

    #[test]
    fn spec_json_rejects_unknown_keys() {
        let bad = r#"{"kind":"crossing_angle","bogus":1}"#;
        assert!(ExperimentSpec::from_json(bad).is_err());
        let good = r#"{"kind":"crossing_angle","realizations":5}"#;
        assert_eq!(ExperimentSpec::from_json(good).unwrap().realizations, 5);
    }
}
