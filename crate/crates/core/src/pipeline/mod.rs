//! The SUM pipeline: factorize the stack matrix, choose the retained
//! subspace by SURE, denoise each retained spatial coefficient image and
//! recombine with the temporal basis.

mod streaming;

pub use streaming::{sum_denoise_streaming, FileSource};

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::denoise::{denoise_coefficient, DenoiserSpec};
use crate::error::{Error, Result};
use crate::par;
use crate::stack::{estimate_noise_sigma, from_matrix, to_matrix, ImageStack, NoiseModel, NoiseSource};
use crate::subspace::{
    randomized_svd, reconstruct, select_rank, svd_thin, SubspaceDecomposition, SureReport,
    ThresholdConfig,
};

/// Smallest sketch rank accepted for randomized factorization.
pub const MIN_RANDOMIZED_RANK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Factorization {
    #[default]
    Exact,
    Randomized {
        rank: usize,
        oversampling: usize,
        power_iters: usize,
        seed: u64,
    },
}

impl Factorization {
    pub fn validate(&self) -> Result<()> {
        if let Factorization::Randomized { rank, .. } = *self {
            if rank < MIN_RANDOMIZED_RANK {
                return Err(Error::InvalidParameter(format!(
                    "randomized rank must be >= {MIN_RANDOMIZED_RANK}, got {rank}"
                )));
            }
        }
        Ok(())
    }
}

impl fmt::Display for Factorization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Factorization::Exact => write!(f, "exact"),
            Factorization::Randomized {
                rank,
                oversampling,
                power_iters,
                seed,
            } => write!(f, "rsvd:{rank},{oversampling},{power_iters},{seed}"),
        }
    }
}

impl FromStr for Factorization {
    type Err = Error;

    /// `exact` or `rsvd:k,p,q,seed`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidParameter(format!("bad factorization '{s}', expected exact or rsvd:k,p,q,seed"));
        if s == "exact" {
            return Ok(Factorization::Exact);
        }
        let args = s.strip_prefix("rsvd:").ok_or_else(bad)?;
        let parts: Vec<&str> = args.split(',').collect();
        if parts.len() != 4 {
            return Err(bad());
        }
        let num = |i: usize| parts[i].trim().parse::<u64>().map_err(|_| bad());
        let f = Factorization::Randomized {
            rank: num(0)? as usize,
            oversampling: num(1)? as usize,
            power_iters: num(2)? as usize,
            seed: num(3)?,
        };
        f.validate()?;
        Ok(f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct SumConfig {
    pub denoiser: DenoiserSpec,
    pub threshold: ThresholdConfig,
    /// Known noise level; estimated from the data when absent.
    pub sigma: Option<f64>,
    pub factorization: Factorization,
}

impl SumConfig {
    /// The truncated-SVD baseline: identity denoiser, SURE-selected rank.
    pub fn svd_baseline() -> Self {
        Self {
            denoiser: DenoiserSpec::Identity,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.denoiser.validate()?;
        self.factorization.validate()?;
        if let Some(s) = self.sigma {
            NoiseModel::given(s)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SumReport {
    pub selected_k: usize,
    pub selected_delta: f64,
    pub sigma: f64,
    pub sigma_source: NoiseSource,
    pub denoiser: String,
    pub factorization: String,
    /// Wall time spent denoising each retained coefficient image.
    pub coefficient_seconds: Vec<f64>,
    pub factorization_seconds: f64,
    pub total_seconds: f64,
    /// Set when no component survived thresholding; the output is all zeros.
    pub empty_subspace: bool,
    pub selection: SureReport,
}

pub(crate) fn resolve_sigma(cfg: &SumConfig, estimate: impl FnOnce() -> Result<NoiseModel>) -> Result<NoiseModel> {
    match cfg.sigma {
        Some(s) => NoiseModel::given(s),
        None => estimate(),
    }
}

/// Selection and coefficient denoising shared by the in-memory and
/// streaming paths. Returns the denoised coefficient vectors.
pub(crate) fn denoise_subspace(
    d: &SubspaceDecomposition,
    noise: NoiseModel,
    cfg: &SumConfig,
    width: usize,
    height: usize,
    started: Instant,
    factorization_seconds: f64,
) -> Result<(Vec<Vec<f64>>, SumReport)> {
    let selection = select_rank(d, noise.sigma, &cfg.threshold)?;
    let k = selection.selected_k.min(d.rank());
    if k == 0 {
        log::warn!("empty subspace: every component fell below the threshold, output is zero");
    }
    let results = par::map_range(k, |i| {
        let t0 = Instant::now();
        let c = denoise_coefficient(&d.coefficient(i), width, height, noise.sigma, &cfg.denoiser);
        c.map(|c| (c, t0.elapsed().as_secs_f64()))
    });
    let mut coeffs = Vec::with_capacity(k);
    let mut timing = Vec::with_capacity(k);
    for r in results {
        let (c, t) = r?;
        coeffs.push(c);
        timing.push(t);
    }
    let report = SumReport {
        selected_k: k,
        selected_delta: selection.selected_delta,
        sigma: noise.sigma,
        sigma_source: noise.source,
        denoiser: cfg.denoiser.to_string(),
        factorization: cfg.factorization.to_string(),
        coefficient_seconds: timing,
        factorization_seconds,
        total_seconds: started.elapsed().as_secs_f64(),
        empty_subspace: k == 0,
        selection,
    };
    Ok((coeffs, report))
}

/// Factorizes the stack matrix as configured.
pub fn factorize(stack: &ImageStack, f: &Factorization) -> Result<SubspaceDecomposition> {
    let a = to_matrix(stack);
    match *f {
        Factorization::Exact => svd_thin(&a),
        Factorization::Randomized {
            rank,
            oversampling,
            power_iters,
            seed,
        } => randomized_svd(&a, rank, oversampling, power_iters, seed),
    }
}

/// Runs SUM on an in-memory stack. The output keeps the input's shape,
/// energies and peak.
pub fn sum_denoise(stack: &ImageStack, cfg: &SumConfig) -> Result<(ImageStack, SumReport)> {
    let started = Instant::now();
    cfg.validate()?;
    let noise = resolve_sigma(cfg, || estimate_noise_sigma(stack))?;
    let d = factorize(stack, &cfg.factorization)?;
    let factorization_seconds = started.elapsed().as_secs_f64();
    let (coeffs, mut report) = denoise_subspace(
        &d,
        noise,
        cfg,
        stack.width(),
        stack.height(),
        started,
        factorization_seconds,
    )?;
    let out = if coeffs.is_empty() {
        vec![0.0; stack.data().len()]
    } else {
        reconstruct(&coeffs, &d, stack.pixels())?.into_values()
    };
    let out = from_matrix(
        crate::stack::StackMatrix::new(stack.pixels(), stack.frames(), out)?,
        stack.width(),
        stack.height(),
    )?;
    let mut out = out.with_peak(stack.peak())?;
    if let Some(e) = stack.energies() {
        out = out.with_energies(e.to_vec())?;
    }
    report.total_seconds = started.elapsed().as_secs_f64();
    Ok((out, report))
}
