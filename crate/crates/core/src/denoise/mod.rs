//! Single-image Gaussian denoisers applied to spatial coefficient images, and
//! the 3-D median-filter stack baseline.

mod blur;
mod median;
mod medfilt3;
mod nlmeans;
mod wavelet;

pub use medfilt3::medfilt3;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A built-in denoiser and its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum DenoiserSpec {
    Identity,
    /// Separable Gaussian with standard deviation `radius / 2` and support
    /// `2·radius + 1`.
    GaussianBlur { radius: usize },
    Median2d { window: usize },
    /// Haar shrinkage with the universal threshold per subband.
    WaveletSoft { levels: usize },
    NlMeans { patch: usize, search: usize, h_factor: f64 },
}

impl Default for DenoiserSpec {
    fn default() -> Self {
        DenoiserSpec::NlMeans {
            patch: 7,
            search: 21,
            h_factor: 0.55,
        }
    }
}

fn check_odd(name: &str, v: usize) -> Result<()> {
    if v == 0 || v % 2 == 0 {
        return Err(Error::InvalidParameter(format!("{name} must be odd and >= 1, got {v}")));
    }
    Ok(())
}

impl DenoiserSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            DenoiserSpec::Identity => Ok(()),
            DenoiserSpec::GaussianBlur { radius } => {
                if radius == 0 {
                    Err(Error::InvalidParameter("blur radius must be >= 1".into()))
                } else {
                    Ok(())
                }
            }
            DenoiserSpec::Median2d { window } => check_odd("median window", window),
            DenoiserSpec::WaveletSoft { levels } => {
                if levels == 0 {
                    Err(Error::InvalidParameter("wavelet levels must be >= 1".into()))
                } else {
                    Ok(())
                }
            }
            DenoiserSpec::NlMeans {
                patch,
                search,
                h_factor,
            } => {
                check_odd("nlmeans patch", patch)?;
                check_odd("nlmeans search", search)?;
                if !(h_factor > 0.0 && h_factor.is_finite()) {
                    return Err(Error::InvalidParameter(format!(
                        "nlmeans h-factor must be > 0, got {h_factor}"
                    )));
                }
                Ok(())
            }
        }
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, DenoiserSpec::Identity)
    }
}

impl fmt::Display for DenoiserSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DenoiserSpec::Identity => write!(f, "identity"),
            DenoiserSpec::GaussianBlur { radius } => write!(f, "blur:{radius}"),
            DenoiserSpec::Median2d { window } => write!(f, "median2d:{window}"),
            DenoiserSpec::WaveletSoft { levels } => write!(f, "wavelet:{levels}"),
            DenoiserSpec::NlMeans {
                patch,
                search,
                h_factor,
            } => write!(f, "nlmeans:{patch},{search},{h_factor}"),
        }
    }
}

impl FromStr for DenoiserSpec {
    type Err = Error;

    /// Parses `identity`, `blur:R`, `median2d:W`, `wavelet:L` or
    /// `nlmeans:P,S,H`; `nlmeans` alone means the defaults.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidParameter(format!("cannot parse denoiser {s:?}"));
        let (kind, args) = match s.split_once(':') {
            Some((k, a)) => (k.trim(), Some(a.trim())),
            None => (s.trim(), None),
        };
        let int = |a: &str| a.trim().parse::<usize>().map_err(|_| bad());
        let spec = match (kind, args) {
            ("identity", None) => DenoiserSpec::Identity,
            ("blur", Some(a)) => DenoiserSpec::GaussianBlur { radius: int(a)? },
            ("median2d", Some(a)) => DenoiserSpec::Median2d { window: int(a)? },
            ("wavelet", Some(a)) => DenoiserSpec::WaveletSoft { levels: int(a)? },
            ("nlmeans", None) => DenoiserSpec::default(),
            ("nlmeans", Some(a)) => {
                let parts: Vec<&str> = a.split(',').collect();
                if parts.len() != 3 {
                    return Err(bad());
                }
                DenoiserSpec::NlMeans {
                    patch: int(parts[0])?,
                    search: int(parts[1])?,
                    h_factor: parts[2].trim().parse().map_err(|_| bad())?,
                }
            }
            _ => return Err(bad()),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Half-sample symmetric reflection of index `i` into `0..n`
/// (`… c b a | a b c … | c b a …`).
pub fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - 1 - m) as usize
    }
}

/// Denoises a 2-D image corrupted by white Gaussian noise of std `sigma`.
pub fn denoise_image(img: ArrayView2<'_, f64>, sigma: f64, spec: &DenoiserSpec) -> Result<Array2<f64>> {
    spec.validate()?;
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!("sigma must be >= 0, got {sigma}")));
    }
    if img.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            index: img.iter().position(|v| !v.is_finite()).unwrap_or(0),
        });
    }
    Ok(match *spec {
        DenoiserSpec::Identity => img.to_owned(),
        DenoiserSpec::GaussianBlur { radius } => blur::gaussian_blur(img, radius),
        DenoiserSpec::Median2d { window } => median::median2d(img, window),
        DenoiserSpec::WaveletSoft { levels } => wavelet::haar_soft(img, sigma, levels),
        DenoiserSpec::NlMeans {
            patch,
            search,
            h_factor,
        } => nlmeans::nl_means(img, sigma, patch, search, h_factor),
    })
}

/// Denoises a coefficient image through the [0, 255] rescaling contract:
/// map linearly onto [0, 255], denoise with the correspondingly scaled σ,
/// map back. The identity kind bypasses the rescaling entirely.
pub fn denoise_coefficient(
    values: &[f64],
    width: usize,
    height: usize,
    sigma: f64,
    spec: &DenoiserSpec,
) -> Result<Vec<f64>> {
    if spec.is_identity() {
        spec.validate()?;
        return Ok(values.to_vec());
    }
    let img = ArrayView2::from_shape((height, width), values)
        .map_err(|e| Error::Dimension(e.to_string()))?;
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scale = if hi > lo { 255.0 / (hi - lo) } else { 1.0 };
    let scaled = img.mapv(|v| (v - lo) * scale);
    let out = denoise_image(scaled.view(), sigma * scale, spec)?;
    Ok(out.iter().map(|v| v / scale + lo).collect())
}
