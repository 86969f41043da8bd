//! `sumx`: simulate, denoise, fit, register, score and sweep TXM-XANES stacks.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use sumx::denoise::DenoiserSpec;
use sumx::io::{container_prefix, load_stack, save_stack};
use sumx::metrics::{fpsnr, map_correlation, spsnr, MetricsReport};
use sumx::phantom::{generate, write_shifts, PhantomSpec};
use sumx::pipeline::{sum_denoise, sum_denoise_streaming, Factorization, SumConfig};
use sumx::registration::{correct_jitter, RegistrationOptions};
use sumx::render::render_map;
use sumx::subspace::ThresholdConfig;
use sumx::sweep::{run_sweep, write_rows, SweepConfig};
use sumx::xanes::{chemical_map, ChemicalMap, MapMode, NormWindows, SpectrumLibrary};
use sumx::{denoise, Error};

#[derive(Parser)]
#[command(name = "sumx", version, about = "Subspace denoising and chemical mapping for TXM-XANES stacks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Sum,
    Svd,
    Medfilt3,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Edge,
    Phase,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a phantom from a JSON spec: noisy stack, clean stack and truth/.
    Simulate {
        spec: PathBuf,
        /// Output prefix; writes <out>.json/.f32, <out>_clean.* and truth/ beside it.
        out: PathBuf,
    },
    /// Denoise a stack and write it with a JSON report (<out>.report.json).
    Denoise {
        input: PathBuf,
        out: PathBuf,
        #[arg(long, value_enum, default_value = "sum")]
        method: Method,
        /// identity, blur:R, median2d:W, wavelet:L or nlmeans:P,S,H.
        #[arg(long, default_value = "nlmeans:7,21,0.55")]
        denoiser: String,
        /// auto (SURE) or a fixed number of components.
        #[arg(long, default_value = "auto")]
        rank: String,
        /// auto (estimated from the data) or the noise standard deviation.
        #[arg(long, default_value = "auto")]
        sigma: String,
        /// exact or rsvd:k,p,q,seed.
        #[arg(long, default_value = "exact")]
        factorization: String,
        /// medfilt3 window size.
        #[arg(long, default_value_t = 3)]
        window: usize,
        /// Stream frames from disk (randomized factorization only), this many per block.
        #[arg(long)]
        block_frames: Option<usize>,
    },
    /// Fit every pixel spectrum and write the chemical map, a PNG and fit statistics.
    Fit {
        input: PathBuf,
        library: PathBuf,
        states: PathBuf,
        out: PathBuf,
        #[arg(long, value_enum, default_value = "phase")]
        mode: Mode,
        /// pre_lo,pre_hi,post_lo,post_hi in eV; defaults to the first and last 15% of samples.
        #[arg(long)]
        windows: Option<String>,
    },
    /// Correct frame jitter; writes the aligned stack and <out>.shifts.csv.
    Register {
        input: PathBuf,
        out: PathBuf,
        /// Also report parabolic subpixel shifts.
        #[arg(long)]
        subpixel: bool,
    },
    /// Score an estimate against ground truth; prints JSON.
    Metrics {
        estimate: PathBuf,
        truth: PathBuf,
        /// Peak value for PSNR; defaults to the truth stack's peak.
        #[arg(long)]
        peak: Option<f64>,
        /// Chemical map of the estimate (container written by `fit`).
        #[arg(long, requires = "truth_map")]
        map: Option<PathBuf>,
        /// Ground-truth chemical map (e.g. truth/map).
        #[arg(long, requires = "map")]
        truth_map: Option<PathBuf>,
        /// Also write the JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an experiment grid from a JSON config and write one CSV row per cell.
    Sweep {
        config: PathBuf,
        out: PathBuf,
        /// Write SURE and true-MSE curves of the svd/sum cells to this JSON file.
        #[arg(long)]
        curves: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let data = e.chain().find_map(|c| c.downcast_ref::<Error>()).map_or(true, Error::is_data_error);
            let usage = e.chain().any(|c| c.downcast_ref::<UsageError>().is_some());
            ExitCode::from(if usage || !data { 1 } else { 2 })
        }
    }
}

#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Simulate { spec, out } => simulate(&spec, &out),
        Command::Denoise {
            input,
            out,
            method,
            denoiser,
            rank,
            sigma,
            factorization,
            window,
            block_frames,
        } => {
            let denoiser: DenoiserSpec = denoiser.parse().map_err(|e: Error| usage(e.to_string()))?;
            let threshold = match rank.as_str() {
                "auto" => ThresholdConfig::SureAuto,
                k => ThresholdConfig::FixedRank(
                    k.parse().map_err(|_| usage(format!("--rank must be auto or an integer, got '{k}'")))?,
                ),
            };
            let sigma = match sigma.as_str() {
                "auto" => None,
                s => Some(
                    s.parse::<f64>()
                        .map_err(|_| usage(format!("--sigma must be auto or a number, got '{s}'")))?,
                ),
            };
            let factorization: Factorization = factorization.parse().map_err(|e: Error| usage(e.to_string()))?;
            let cfg = SumConfig {
                denoiser: match method {
                    Method::Svd => DenoiserSpec::Identity,
                    _ => denoiser,
                },
                threshold,
                sigma,
                factorization,
            };
            denoise_cmd(&input, &out, method, &cfg, window, block_frames)
        }
        Command::Fit {
            input,
            library,
            states,
            out,
            mode,
            windows,
        } => {
            let windows = windows
                .map(|w| NormWindows::parse(&w).map_err(|e| usage(e.to_string())))
                .transpose()?;
            let mode = match mode {
                Mode::Edge => MapMode::EdgePosition,
                Mode::Phase => MapMode::PhaseFit,
            };
            fit(&input, &library, &states, &out, mode, windows.as_ref())
        }
        Command::Register { input, out, subpixel } => register(&input, &out, subpixel),
        Command::Metrics {
            estimate,
            truth,
            peak,
            map,
            truth_map,
            out,
        } => metrics(&estimate, &truth, peak, map.as_deref().zip(truth_map.as_deref()), out.as_deref()),
        Command::Sweep { config, out, curves } => sweep(&config, &out, curves.as_deref()),
    }
}

/// `<prefix><suffix>` as a sibling path, e.g. `run/out` + `.report.json`.
fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let prefix = container_prefix(out);
    let mut s = prefix.into_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn simulate(spec_path: &Path, out: &Path) -> Result<()> {
    let spec = PhantomSpec::load(spec_path)?;
    let (noisy, truth) = generate(&spec)?;
    save_stack(&noisy, out)?;
    save_stack(&truth.clean, &sibling(out, "_clean"))?;
    let dir = container_prefix(out).parent().map(|p| p.join("truth")).unwrap_or_else(|| "truth".into());
    truth.save(&dir)?;
    log::info!("wrote {} frames of {}x{}", noisy.frames(), noisy.width(), noisy.height());
    Ok(())
}

fn denoise_cmd(
    input: &Path,
    out: &Path,
    method: Method,
    cfg: &SumConfig,
    window: usize,
    block_frames: Option<usize>,
) -> Result<()> {
    let report_path = sibling(out, ".report.json");
    if let Some(block) = block_frames {
        if matches!(method, Method::Medfilt3) {
            return Err(usage("--block-frames applies to sum and svd only"));
        }
        let report = sum_denoise_streaming(input, out, cfg, block)?;
        return write_json(&report_path, &report);
    }
    let stack = load_stack(input)?;
    match method {
        Method::Sum | Method::Svd => {
            let (den, report) = sum_denoise(&stack, cfg)?;
            save_stack(&den, out)?;
            write_json(&report_path, &report)
        }
        Method::Medfilt3 => {
            let started = Instant::now();
            let den = denoise::medfilt3(&stack, window)?;
            let seconds = started.elapsed().as_secs_f64();
            save_stack(&den, out)?;
            write_json(&report_path, &json!({"method": "medfilt3", "window": window, "total_seconds": seconds}))
        }
    }
}

/// Companion file listing the invalid pixels of a stored map.
fn fit_report_path(out: &Path) -> PathBuf {
    sibling(out, ".fit.json")
}

fn fit(
    input: &Path,
    library: &Path,
    states: &Path,
    out: &Path,
    mode: MapMode,
    windows: Option<&NormWindows>,
) -> Result<()> {
    let stack = load_stack(input)?;
    let lib = SpectrumLibrary::from_files(library, states)?;
    let map = chemical_map(&stack, &lib, mode, windows)?;
    save_stack(&map.to_stack()?, out)?;
    render_map(&map, &sibling(out, ".png"), None)?;
    let invalid: Vec<usize> = (0..map.valid.len()).filter(|&i| !map.valid[i]).collect();
    let mut residuals: Vec<f64> = map.residuals.iter().copied().filter(|r| r.is_finite()).collect();
    residuals.sort_by(f64::total_cmp);
    let stats = if residuals.is_empty() {
        serde_json::Value::Null
    } else {
        json!({
            "mean": residuals.iter().sum::<f64>() / residuals.len() as f64,
            "median": residuals[residuals.len() / 2],
            "max": residuals[residuals.len() - 1],
        })
    };
    write_json(
        &fit_report_path(out),
        &json!({
            "mode": mode,
            "pixels": map.valid.len(),
            "invalid_count": invalid.len(),
            "invalid": invalid,
            "residual": stats,
        }),
    )
}

fn load_map(path: &Path) -> Result<ChemicalMap> {
    let stack = load_stack(path)?;
    let mut valid = vec![true; stack.pixels()];
    let mut mode = MapMode::PhaseFit;
    let report = fit_report_path(path);
    if report.exists() {
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report)?)?;
        if let Some(list) = v["invalid"].as_array() {
            for i in list.iter().filter_map(|x| x.as_u64()) {
                if let Some(slot) = valid.get_mut(i as usize) {
                    *slot = false;
                }
            }
        }
        if let Ok(m) = serde_json::from_value(v["mode"].clone()) {
            mode = m;
        }
    }
    Ok(ChemicalMap {
        width: stack.width(),
        height: stack.height(),
        mode,
        values: stack.frame(0).to_vec(),
        residuals: vec![f64::NAN; stack.pixels()],
        valid,
    })
}

fn register(input: &Path, out: &Path, subpixel: bool) -> Result<()> {
    let stack = load_stack(input)?;
    let (aligned, est) = correct_jitter(&stack, RegistrationOptions { subpixel })?;
    save_stack(&aligned, out)?;
    let shifts: Vec<(i64, i64)> = est.iter().map(|e| (e.dx, e.dy)).collect();
    write_shifts(&sibling(out, ".shifts.csv"), &shifts)?;
    if subpixel {
        let sub: Vec<[f64; 2]> = est.iter().map(|e| [e.subpixel.0, e.subpixel.1]).collect();
        write_json(&sibling(out, ".subpixel.json"), &sub)?;
    }
    Ok(())
}

fn metrics(
    estimate: &Path,
    truth: &Path,
    peak: Option<f64>,
    maps: Option<(&Path, &Path)>,
    out: Option<&Path>,
) -> Result<()> {
    let est = load_stack(estimate)?;
    let gt = load_stack(truth)?;
    let peak = peak.unwrap_or(gt.peak());
    let correlation = match maps {
        Some((a, b)) => Some(map_correlation(&load_map(a)?, &load_map(b)?)?),
        None => None,
    };
    let report = MetricsReport {
        fpsnr: fpsnr(&est, &gt, peak)?,
        spsnr: spsnr(&est, &gt, peak)?,
        peak,
        correlation,
    };
    println!("{}", serde_json::to_string_pretty(&report)?);
    if let Some(path) = out {
        write_json(path, &report)?;
    }
    Ok(())
}

fn sweep(config: &Path, out: &Path, curves: Option<&Path>) -> Result<()> {
    let mut cfg = SweepConfig::load(config)?;
    cfg.sure_curves |= curves.is_some();
    let result = run_sweep(&cfg);
    write_rows(out, &result.rows)?;
    let failed = result.rows.iter().filter(|r| !r.error.is_empty()).count();
    if failed > 0 {
        log::warn!("{failed} of {} cells reported errors", result.rows.len());
    }
    if let Some(path) = curves {
        write_json(path, &result.curves)?;
    }
    Ok(())
}
