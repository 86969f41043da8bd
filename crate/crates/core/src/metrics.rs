//! Evaluation metrics: frame and spectrum PSNR and chemical-map correlation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stack::ImageStack;
use crate::xanes::ChemicalMap;

/// PSNR reported for a zero-error frame or spectrum.
pub const PSNR_CAP_DB: f64 = 100.0;

fn same_shape(a: &ImageStack, b: &ImageStack) -> Result<()> {
    if (a.width(), a.height(), a.frames()) != (b.width(), b.height(), b.frames()) {
        return Err(Error::Dimension(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.width(),
            a.height(),
            a.frames(),
            b.width(),
            b.height(),
            b.frames()
        )));
    }
    Ok(())
}

fn psnr(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        PSNR_CAP_DB
    } else {
        (10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB)
    }
}

fn check_peak(peak: f64) -> Result<()> {
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(Error::InvalidParameter(format!("peak must be > 0, got {peak}")));
    }
    Ok(())
}

/// Mean over frames of `10·log10(peak² / MSE_t)`.
pub fn fpsnr(est: &ImageStack, gt: &ImageStack, peak: f64) -> Result<f64> {
    same_shape(est, gt)?;
    check_peak(peak)?;
    let t = gt.frames();
    let total: f64 = (0..t)
        .map(|k| {
            let mse = est
                .frame(k)
                .iter()
                .zip(gt.frame(k))
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                / gt.pixels() as f64;
            psnr(mse, peak)
        })
        .sum();
    Ok(total / t as f64)
}

/// Mean over pixels of the PSNR of each spectrum.
pub fn spsnr(est: &ImageStack, gt: &ImageStack, peak: f64) -> Result<f64> {
    same_shape(est, gt)?;
    check_peak(peak)?;
    let mut sq = vec![0.0; gt.pixels()];
    for k in 0..gt.frames() {
        for ((s, a), b) in sq.iter_mut().zip(est.frame(k)).zip(gt.frame(k)) {
            *s += (a - b).powi(2);
        }
    }
    let t = gt.frames() as f64;
    Ok(sq.iter().map(|s| psnr(s / t, peak)).sum::<f64>() / sq.len() as f64)
}

/// Pearson correlation over the pixels valid in both maps.
pub fn map_correlation(a: &ChemicalMap, b: &ChemicalMap) -> Result<f64> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(Error::Dimension(format!(
            "maps {}x{} and {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    let pairs: Vec<(f64, f64)> = (0..a.values.len())
        .filter(|&i| a.valid[i] && b.valid[i])
        .map(|i| (a.values[i], b.values[i]))
        .collect();
    if pairs.len() < 2 {
        return Err(Error::DegenerateMap(format!("{} mutually valid pixels", pairs.len())));
    }
    let n = pairs.len() as f64;
    let ma = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let mb = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in &pairs {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::DegenerateMap("constant map".into()));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Metrics of an estimate against ground truth, as emitted in JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub fpsnr: f64,
    pub spsnr: f64,
    pub peak: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correlation: Option<f64>,
}
