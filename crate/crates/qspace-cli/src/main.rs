//! Command-line toolchain: sampling-grid design and export, phantom
//! simulation, reconstruction/denoising, conditioning reports, and the
//! Monte-Carlo benchmark.
//!
//! Exit codes: 0 success, 1 computation failure, 2 usage/validation error.

use clap::{Args, Parser, Subcommand, ValueEnum};
use qspace::bench::{emit_results, run_experiment, ExperimentSpec};
use qspace::coeffs::{ShCoeffs, SpfCoeffs};
use qspace::error::QspaceError;
use qspace::io::SignalFile;
use qspace::noise::{mm_denoise_multi, mm_denoise_multi_ls, mm_denoise_single, mm_denoise_single_ls, MmConfig, NoiseSpec, NonnegMode};
use qspace::phantom::{add_rician_noise, gmm_signal_dir, GmmPhantom};
use qspace::sampling::{
    export_bvec_bval, export_mrtrix, multi_shell_grid, single_shell_grid, BandlimitTable, GridFile,
};
use qspace::transforms::{
    condition_report_multi, condition_report_single, ls_sht, ls_spft, nsht, nspft,
    MultiShellSignal, SignalOnGrid,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "qspace", version, about = "q-space sampling design and reconstruction")]
struct Cli {
    /// Worker threads for parallel commands (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Design a sampling grid and export it.
    Design(DesignArgs),
    /// Simulate a phantom acquisition on a grid.
    Simulate(SimulateArgs),
    /// Reconstruct coefficients from a stored signal.
    Reconstruct(ReconstructArgs),
    /// Run a benchmark experiment from a spec file.
    Bench(BenchArgs),
    /// Conditioning report for a grid.
    Condition(ConditionArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Single,
    Multi,
}

#[derive(Clone, Copy, ValueEnum)]
enum GridFormat {
    Json,
    Bvec,
    Mrtrix,
}

#[derive(Args)]
struct DesignArgs {
    #[arg(long, value_enum)]
    mode: Mode,
    /// Band-limit for single-shell grids (even).
    #[arg(short = 'L', long = "L", visible_alias = "l")]
    l: Option<u32>,
    /// Radial order for multi-shell grids.
    #[arg(short = 'N', long = "N", visible_alias = "n")]
    n: Option<u32>,
    #[arg(long)]
    bmax: Option<f64>,
    /// Anisotropy for the band-limit lookup.
    #[arg(long, default_value_t = 0.8)]
    fa: f64,
    /// b-value attached to bvec/mrtrix exports of single-shell grids.
    #[arg(long, default_value_t = 4000.0)]
    bval: f64,
    /// Output path (bvec format writes <out> and <out>.bval).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "json")]
    format: GridFormat,
}

#[derive(Args)]
struct SimulateArgs {
    /// Grid JSON produced by `design --format json`.
    #[arg(long)]
    grid: PathBuf,
    /// Phantom JSON ({"fibers": [{fraction, diffusivities, orientation}], "d0": 1.0}).
    #[arg(long)]
    phantom: PathBuf,
    /// b-value of single-shell grids.
    #[arg(long, default_value_t = 4000.0)]
    bval: f64,
    /// Add Rician noise at this SNR (omit for a noiseless signal).
    #[arg(long)]
    snr: Option<f64>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Output signal path (.csv or .bin by extension).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReconMethod {
    Nsht,
    Ls,
    Nspft,
    LsSpf,
}

#[derive(Clone, Copy, ValueEnum)]
enum NonnegCli {
    Clamp,
    Qp,
}

#[derive(Args)]
struct ReconstructArgs {
    #[arg(long)]
    grid: PathBuf,
    #[arg(long)]
    signal: PathBuf,
    #[arg(long, value_enum)]
    method: ReconMethod,
    #[arg(long, default_value_t = 0.0)]
    lambda: f64,
    /// Radial regularization (multi-shell methods).
    #[arg(long, default_value_t = 0.0)]
    lambda_n: f64,
    /// Run the majorize-minimize Rician/NCC denoiser around the transform.
    #[arg(long)]
    denoise: bool,
    #[arg(long, default_value_t = 1)]
    coils: u32,
    /// Known noise variance; required by --denoise unless --estimate-sigma.
    #[arg(long)]
    sigma2: Option<f64>,
    #[arg(long)]
    estimate_sigma: bool,
    #[arg(long, value_enum, default_value = "clamp")]
    nonneg: NonnegCli,
    #[arg(long, default_value_t = 200)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// Coefficient output (.json or .bin by extension).
    #[arg(long)]
    out: PathBuf,
    /// Iteration diagnostics CSV (denoise only).
    #[arg(long)]
    diagnostics: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Experiment spec JSON; defaults apply for missing fields.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// CI-scale run (20 realizations).
    #[arg(long)]
    quick: bool,
    #[arg(long, default_value = "bench-results")]
    out_dir: PathBuf,
    /// Also emit a gnuplot script.
    #[arg(long)]
    plot_script: bool,
}

#[derive(Args)]
struct ConditionArgs {
    #[arg(long)]
    grid: PathBuf,
    /// Emit the full report as JSON instead of a summary.
    #[arg(long)]
    json: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global();
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                QspaceError::Validation(_) | QspaceError::Parse(_) | QspaceError::Domain(_) => {
                    ExitCode::from(2)
                }
                _ => ExitCode::from(1),
            }
        }
    }
}

fn run(cmd: Command) -> Result<(), QspaceError> {
    match cmd {
        Command::Design(a) => design(a),
        Command::Simulate(a) => simulate(a),
        Command::Reconstruct(a) => reconstruct(a),
        Command::Bench(a) => bench(a),
        Command::Condition(a) => condition(a),
    }
}

fn design(a: DesignArgs) -> Result<(), QspaceError> {
    let grid = match a.mode {
        Mode::Single => {
            let l = a.l.ok_or_else(|| QspaceError::Validation("--L required for single mode".into()))?;
            GridFile::Single(single_shell_grid(l, None)?)
        }
        Mode::Multi => {
            let n = a.n.ok_or_else(|| QspaceError::Validation("--N required for multi mode".into()))?;
            let bmax =
                a.bmax.ok_or_else(|| QspaceError::Validation("--bmax required for multi mode".into()))?;
            GridFile::Multi(multi_shell_grid(n, bmax, a.fa, &BandlimitTable::default())?)
        }
    };
    match a.format {
        GridFormat::Json => std::fs::write(&a.out, grid.to_json()?)?,
        GridFormat::Bvec => {
            let (bvec, bval) = export_bvec_bval(&grid.directions_with_bvalues(a.bval));
            std::fs::write(&a.out, bvec)?;
            std::fs::write(a.out.with_extension("bval"), bval)?;
        }
        GridFormat::Mrtrix => {
            std::fs::write(&a.out, export_mrtrix(&grid.directions_with_bvalues(a.bval)))?
        }
    }
    let count = grid.directions_with_bvalues(a.bval).len();
    println!("wrote {} directions to {}", count, a.out.display());
    Ok(())
}

fn simulate(a: SimulateArgs) -> Result<(), QspaceError> {
    let grid = GridFile::from_json(&std::fs::read_to_string(&a.grid)?)?;
    let phantom = GmmPhantom::from_json(&std::fs::read_to_string(&a.phantom)?)?;
    let locations: Vec<(f64, f64, f64)> = match &grid {
        GridFile::Single(g) => {
            let q = a.bval.sqrt();
            g.points().into_iter().map(|(t, p)| (t, p, q)).collect()
        }
        GridFile::Multi(g) => g
            .shells
            .iter()
            .flat_map(|sh| sh.grid.points().into_iter().map(move |(t, p)| (t, p, sh.q)))
            .collect(),
    };
    let mut values: Vec<f64> =
        locations.iter().map(|&(t, p, q)| gmm_signal_dir(&phantom, q * q, t, p)).collect();
    if let Some(snr) = a.snr {
        if snr <= 0.0 {
            return Err(QspaceError::Validation("--snr must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
        values = add_rician_noise(&values, phantom.d0, snr, &mut rng);
    }
    let sig = SignalFile { locations, values };
    write_signal(&sig, &a.out)?;
    println!("wrote {} samples to {}", sig.values.len(), a.out.display());
    Ok(())
}

fn write_signal(sig: &SignalFile, path: &PathBuf) -> Result<(), QspaceError> {
    if path.extension().is_some_and(|e| e == "bin") {
        std::fs::write(path, sig.to_binary())?;
    } else {
        std::fs::write(path, sig.to_csv())?;
    }
    Ok(())
}

fn reconstruct(a: ReconstructArgs) -> Result<(), QspaceError> {
    let grid = GridFile::from_json(&std::fs::read_to_string(&a.grid)?)?;
    let sig = SignalFile::load(&a.signal)?;
    let mm = MmConfig {
        max_iters: a.max_iters,
        tol: a.tol,
        estimate_sigma: a.estimate_sigma,
        nonneg: true,
        nonneg_mode: match a.nonneg {
            NonnegCli::Clamp => NonnegMode::Clamp,
            NonnegCli::Qp => NonnegMode::Qp,
        },
    };
    let spec = if a.denoise {
        let sigma2 = match (a.sigma2, a.estimate_sigma) {
            (Some(s), _) => s,
            (None, true) => 1.0, // placeholder; estimated from residuals
            (None, false) => {
                return Err(QspaceError::Validation(
                    "--denoise needs --sigma2 or --estimate-sigma".into(),
                ))
            }
        };
        Some(NoiseSpec::new(sigma2, a.coils)?)
    } else {
        None
    };
    let mut diagnostics: Option<String> = None;
    match (&grid, a.method) {
        (GridFile::Single(g), ReconMethod::Nsht) => {
            if sig.values.len() != g.num_samples() {
                return Err(QspaceError::Validation("signal/grid sample count mismatch".into()));
            }
            let coeffs: ShCoeffs = if let Some(ns) = spec {
                let (c, d) = mm_denoise_single(&sig.values, g, a.lambda, &ns, &mm)?;
                diagnostics = Some(d.to_csv());
                c
            } else {
                nsht(&SignalOnGrid::from_real(&sig.values), g, a.lambda)?
            };
            write_sh(&coeffs, &a.out)?;
        }
        (GridFile::Single(g), ReconMethod::Ls) => {
            let coeffs: ShCoeffs = if let Some(ns) = spec {
                let (c, d) = mm_denoise_single_ls(&sig.values, g, a.lambda, &ns, &mm)?;
                diagnostics = Some(d.to_csv());
                c
            } else {
                let vals: Vec<qspace::num_complex::Complex64> =
                    sig.values.iter().map(|&v| qspace::num_complex::Complex64::new(v, 0.0)).collect();
                ls_sht(&vals, &g.points(), g.l_max, a.lambda)?
            };
            write_sh(&coeffs, &a.out)?;
        }
        (GridFile::Multi(g), ReconMethod::Nspft) => {
            let coeffs: SpfCoeffs = if let Some(ns) = spec {
                let (c, d) = mm_denoise_multi(&sig.values, g, a.lambda, a.lambda_n, &ns, &mm)?;
                diagnostics = Some(d.to_csv());
                c
            } else {
                let ms = MultiShellSignal::from_real_concat(g, &sig.values)?;
                nspft(&ms, g, a.lambda, a.lambda_n)?
            };
            write_spf(&coeffs, &a.out)?;
        }
        (GridFile::Multi(g), ReconMethod::LsSpf) => {
            let coeffs: SpfCoeffs = if let Some(ns) = spec {
                let (c, d) = mm_denoise_multi_ls(&sig.values, g, a.lambda, a.lambda_n, &ns, &mm)?;
                diagnostics = Some(d.to_csv());
                c
            } else {
                let ms = MultiShellSignal::from_real_concat(g, &sig.values)?;
                let (c, info) = ls_spft(&ms, g, a.lambda, a.lambda_n)?;
                eprintln!("ls-spf normal-matrix condition: {:.3e}", info.condition);
                c
            };
            write_spf(&coeffs, &a.out)?;
        }
        (GridFile::Single(_), ReconMethod::Nspft | ReconMethod::LsSpf) => {
            return Err(QspaceError::Validation("multi-shell method on a single-shell grid".into()))
        }
        (GridFile::Multi(_), ReconMethod::Nsht | ReconMethod::Ls) => {
            return Err(QspaceError::Validation("single-shell method on a multi-shell grid".into()))
        }
    }
    if let (Some(path), Some(csv)) = (&a.diagnostics, &diagnostics) {
        std::fs::write(path, csv)?;
    }
    println!("wrote coefficients to {}", a.out.display());
    Ok(())
}

fn write_sh(c: &ShCoeffs, path: &PathBuf) -> Result<(), QspaceError> {
    if path.extension().is_some_and(|e| e == "bin") {
        std::fs::write(path, c.to_binary())?;
    } else {
        std::fs::write(path, c.to_json()?)?;
    }
    Ok(())
}

fn write_spf(c: &SpfCoeffs, path: &PathBuf) -> Result<(), QspaceError> {
    if path.extension().is_some_and(|e| e == "bin") {
        std::fs::write(path, c.to_binary())?;
    } else {
        std::fs::write(path, c.to_json()?)?;
    }
    Ok(())
}

fn bench(a: BenchArgs) -> Result<(), QspaceError> {
    let mut spec = match &a.spec {
        Some(path) => ExperimentSpec::from_json(&std::fs::read_to_string(path)?)?,
        None => ExperimentSpec::default(),
    };
    if a.quick {
        spec = spec.quick();
    }
    let table = run_experiment(&spec)?;
    emit_results(&table, &a.out_dir, a.plot_script)?;
    println!("wrote {} result rows to {}", table.rows.len(), a.out_dir.display());
    Ok(())
}

fn condition(a: ConditionArgs) -> Result<(), QspaceError> {
    let grid = GridFile::from_json(&std::fs::read_to_string(&a.grid)?)?;
    let report = match &grid {
        GridFile::Single(g) => condition_report_single(g)?,
        GridFile::Multi(g) => condition_report_multi(g)?,
    };
    use std::io::Write;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    // ignore EPIPE so piping into `head` is fine
    let result = if a.json {
        writeln!(
            out,
            "{}",
            serde_json::to_string_pretty(&report).map_err(|e| QspaceError::Parse(e.to_string()))?
        )
    } else {
        writeln!(out, "max P_m condition: {:.4}", report.max_pm_condition)
            .and_then(|_| writeln!(out, "LS normal-matrix condition: {:.4e}", report.ls_normal_condition))
            .and_then(|_| {
                for (shell, m, size, cond) in &report.per_order {
                    writeln!(out, "shell {shell} m {m:>3} size {size}: cond {cond:.4}")?;
                }
                Ok(())
            })
    };
    match result {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        Err(e) => Err(e.into()),
        Ok(()) => Ok(()),
    }
}
