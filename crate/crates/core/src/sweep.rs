//! Experiment grids over phantoms, noise levels, methods, jitter, sampling
//! fractions, seeds and registration order. Every cell yields exactly one
//! row; failures are recorded in the row instead of aborting the sweep.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::denoise::{medfilt3, DenoiserSpec};
use crate::error::{Error, Result};
use crate::metrics::{fpsnr, map_correlation, spsnr};
use crate::par;
use crate::phantom::{generate, PhantomSpec, PhantomTruth};
use crate::pipeline::{factorize, sum_denoise, Factorization, SumConfig, SumReport};
use crate::registration::{correct_jitter, shift_recovery_rate, RegistrationOptions};
use crate::stack::{to_matrix, ImageStack};
use crate::subspace::{true_mse_curve, SureReport, ThresholdConfig};
use crate::xanes::{chemical_map, MapMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// No denoising.
    Noisy,
    /// Truncated SVD at the SURE rank.
    Svd,
    Sum,
    Medfilt3,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Noisy => "noisy",
            Method::Svd => "svd",
            Method::Sum => "sum",
            Method::Medfilt3 => "medfilt3",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RegistrationOrder {
    #[default]
    None,
    RegisterThenDenoise,
    DenoiseThenRegister,
}

impl std::fmt::Display for RegistrationOrder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RegistrationOrder::None => "none",
            RegistrationOrder::RegisterThenDenoise => "register-then-denoise",
            RegistrationOrder::DenoiseThenRegister => "denoise-then-register",
        })
    }
}

/// Method parameters shared by all cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodParams {
    #[serde(default)]
    pub denoiser: DenoiserSpec,
    #[serde(default)]
    pub factorization: Factorization,
    #[serde(default = "default_window")]
    pub medfilt_window: usize,
    /// Pass the phantom's σ to the pipeline instead of estimating it.
    #[serde(default = "yes")]
    pub known_sigma: bool,
}

fn default_window() -> usize {
    3
}
fn yes() -> bool {
    true
}

impl Default for MethodParams {
    fn default() -> Self {
        Self {
            denoiser: DenoiserSpec::default(),
            factorization: Factorization::Exact,
            medfilt_window: 3,
            known_sigma: true,
        }
    }
}

/// Applies one method. `sigma` is used when given, otherwise estimated.
pub fn apply_method(
    stack: &ImageStack,
    method: Method,
    params: &MethodParams,
    sigma: Option<f64>,
) -> Result<(ImageStack, Option<SumReport>)> {
    let sum = |denoiser: DenoiserSpec| {
        let cfg = SumConfig {
            denoiser,
            threshold: ThresholdConfig::SureAuto,
            sigma,
            factorization: params.factorization,
        };
        sum_denoise(stack, &cfg).map(|(s, r)| (s, Some(r)))
    };
    match method {
        Method::Noisy => Ok((stack.clone(), None)),
        Method::Svd => sum(DenoiserSpec::Identity),
        Method::Sum => sum(params.denoiser),
        Method::Medfilt3 => Ok((medfilt3(stack, params.medfilt_window)?, None)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedPhantom {
    pub name: String,
    pub spec: PhantomSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub phantoms: Vec<NamedPhantom>,
    pub sigmas: Vec<f64>,
    pub methods: Vec<Method>,
    #[serde(default = "zero_jitter")]
    pub jitter: Vec<usize>,
    #[serde(default = "full_fraction")]
    pub fractions: Vec<f64>,
    #[serde(default = "seed_zero")]
    pub seeds: Vec<u64>,
    #[serde(default = "no_registration")]
    pub registration: Vec<RegistrationOrder>,
    #[serde(default)]
    pub params: MethodParams,
    #[serde(default)]
    pub map_mode: MapMode,
    /// Cells evaluated concurrently; 0 uses all cores.
    #[serde(default)]
    pub workers: usize,
    /// Record SURE and true-MSE curves for the svd and sum cells.
    #[serde(default)]
    pub sure_curves: bool,
}

fn zero_jitter() -> Vec<usize> {
    vec![0]
}
fn full_fraction() -> Vec<f64> {
    vec![1.0]
}
fn seed_zero() -> Vec<u64> {
    vec![0]
}
fn no_registration() -> Vec<RegistrationOrder> {
    vec![RegistrationOrder::None]
}

impl SweepConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: SweepConfig = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in &mut cfg.phantoms {
            if let crate::phantom::LibrarySource::Files { csv, states } = &mut p.spec.library {
                *csv = base.join(&*csv);
                *states = base.join(&*states);
            }
        }
        Ok(cfg)
    }

    /// All cells in row order.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for (pi, _) in self.phantoms.iter().enumerate() {
            for &sigma in &self.sigmas {
                for &method in &self.methods {
                    for &jitter in &self.jitter {
                        for &fraction in &self.fractions {
                            for &seed in &self.seeds {
                                for &registration in &self.registration {
                                    out.push(Cell {
                                        phantom: pi,
                                        sigma,
                                        method,
                                        jitter,
                                        fraction,
                                        seed,
                                        registration,
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub phantom: usize,
    pub sigma: f64,
    pub method: Method,
    pub jitter: usize,
    pub fraction: f64,
    pub seed: u64,
    pub registration: RegistrationOrder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub phantom: String,
    pub sigma: f64,
    pub method: String,
    pub jitter: usize,
    pub fraction: f64,
    pub seed: u64,
    pub registration: String,
    pub frames: usize,
    pub selected_k: Option<usize>,
    pub fpsnr: Option<f64>,
    pub spsnr: Option<f64>,
    pub correlation: Option<f64>,
    pub shift_recovery: Option<f64>,
    pub runtime_seconds: f64,
    /// Empty on success.
    pub error: String,
}

/// SURE and true MSE over the candidate thresholds of one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SureCurve {
    pub phantom: String,
    pub sigma: f64,
    pub seed: u64,
    pub method: String,
    pub report: SureReport,
}

/// Output of a single cell: its row, the estimate and, when requested, the
/// SURE curve.
pub struct CellOutcome {
    pub row: SweepRow,
    pub estimate: Option<ImageStack>,
    pub truth: Option<PhantomTruth>,
    pub curve: Option<SureCurve>,
}

pub struct SweepOutput {
    pub rows: Vec<SweepRow>,
    pub curves: Vec<SureCurve>,
}

/// Runs one cell; never fails, errors land in `row.error`.
pub fn run_cell(cfg: &SweepConfig, cell: &Cell, keep_outputs: bool) -> CellOutcome {
    let named = &cfg.phantoms[cell.phantom];
    let mut row = SweepRow {
        phantom: named.name.clone(),
        sigma: cell.sigma,
        method: cell.method.to_string(),
        jitter: cell.jitter,
        fraction: cell.fraction,
        seed: cell.seed,
        registration: cell.registration.to_string(),
        frames: 0,
        selected_k: None,
        fpsnr: None,
        spsnr: None,
        correlation: None,
        shift_recovery: None,
        runtime_seconds: 0.0,
        error: String::new(),
    };
    let mut spec = named.spec.clone();
    spec.sigma = cell.sigma;
    spec.jitter = cell.jitter;
    spec.fraction = cell.fraction;
    spec.seed = cell.seed;
    let (noisy, truth) = match generate(&spec) {
        Ok(v) => v,
        Err(e) => {
            row.error = format!("simulate: {e}");
            return CellOutcome {
                row,
                estimate: None,
                truth: None,
                curve: None,
            };
        }
    };
    row.frames = noisy.frames();
    let sigma = if cfg.params.known_sigma && cell.sigma > 0.0 {
        Some(cell.sigma)
    } else {
        None
    };
    let started = Instant::now();
    let processed = process(&noisy, cell, &cfg.params, sigma);
    row.runtime_seconds = started.elapsed().as_secs_f64();
    let (estimate, report, shifts) = match processed {
        Ok(v) => v,
        Err(e) => {
            row.error = format!("{}: {e}", cell.method);
            return CellOutcome {
                row,
                estimate: None,
                truth: Some(truth),
                curve: None,
            };
        }
    };
    row.selected_k = report.as_ref().map(|r| r.selected_k);
    let mut errors = Vec::new();
    match fpsnr(&estimate, &truth.clean, truth.clean.peak()) {
        Ok(v) => row.fpsnr = Some(v),
        Err(e) => errors.push(format!("fpsnr: {e}")),
    }
    match spsnr(&estimate, &truth.clean, truth.clean.peak()) {
        Ok(v) => row.spsnr = Some(v),
        Err(e) => errors.push(format!("spsnr: {e}")),
    }
    match chemical_map(&estimate, &truth.library, cfg.map_mode, None)
        .and_then(|m| map_correlation(&m, truth.map(cfg.map_mode)))
    {
        Ok(v) => row.correlation = Some(v),
        Err(e) => errors.push(format!("fit: {e}")),
    }
    if let Some(s) = &shifts {
        row.shift_recovery = shift_recovery_rate(s, &truth.shifts).ok();
    }
    let curve = if cfg.sure_curves && matches!(cell.method, Method::Svd | Method::Sum) {
        match sure_curve(&noisy, &truth, report.as_ref(), &cfg.params.factorization) {
            Ok(report) => Some(SureCurve {
                phantom: named.name.clone(),
                sigma: cell.sigma,
                seed: cell.seed,
                method: cell.method.to_string(),
                report,
            }),
            Err(e) => {
                errors.push(format!("sure curve: {e}"));
                None
            }
        }
    } else {
        None
    };
    row.error = errors.join("; ");
    CellOutcome {
        row,
        estimate: keep_outputs.then_some(estimate),
        truth: keep_outputs.then_some(truth),
        curve,
    }
}

type Processed = (ImageStack, Option<SumReport>, Option<Vec<(i64, i64)>>);

fn process(noisy: &ImageStack, cell: &Cell, params: &MethodParams, sigma: Option<f64>) -> Result<Processed> {
    let register = |s: &ImageStack| -> Result<(ImageStack, Vec<(i64, i64)>)> {
        let (out, est) = correct_jitter(s, RegistrationOptions::default())?;
        Ok((out, est.iter().map(|e| (e.dx, e.dy)).collect()))
    };
    Ok(match cell.registration {
        RegistrationOrder::None => {
            let (out, report) = apply_method(noisy, cell.method, params, sigma)?;
            (out, report, None)
        }
        RegistrationOrder::RegisterThenDenoise => {
            let (aligned, shifts) = register(noisy)?;
            let (out, report) = apply_method(&aligned, cell.method, params, sigma)?;
            (out, report, Some(shifts))
        }
        RegistrationOrder::DenoiseThenRegister => {
            let (den, report) = apply_method(noisy, cell.method, params, sigma)?;
            let (out, shifts) = register(&den)?;
            (out, report, Some(shifts))
        }
    })
}

fn sure_curve(
    noisy: &ImageStack,
    truth: &PhantomTruth,
    report: Option<&SumReport>,
    f: &Factorization,
) -> Result<SureReport> {
    let report = report.ok_or_else(|| Error::InvalidParameter("no selection report".into()))?;
    let d = factorize(noisy, f)?;
    let mut sel = report.selection.clone();
    sel.mse = Some(true_mse_curve(&d, &to_matrix(&truth.clean), &sel.delta)?);
    Ok(sel)
}

/// Runs every cell with at most `cfg.workers` cells in flight.
pub fn run_sweep(cfg: &SweepConfig) -> SweepOutput {
    let cells = cfg.cells();
    let outcomes = par::with_workers(cfg.workers, || par::map_slice(&cells, |c| run_cell(cfg, c, false)));
    let mut rows = Vec::with_capacity(outcomes.len());
    let mut curves = Vec::new();
    for o in outcomes {
        rows.push(o.row);
        curves.extend(o.curve);
    }
    SweepOutput { rows, curves }
}

pub fn write_rows(path: &Path, rows: &[SweepRow]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
