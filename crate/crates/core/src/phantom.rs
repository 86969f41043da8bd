//! Seeded synthetic TXM-XANES stacks with exact ground truth.
//!
//! A frame is `255 · amplitude(p) · S_label(p)(E_t)`, optionally subsampled in
//! energy, translated per frame (jitter) and corrupted with Gaussian noise.
//! Each random component draws from its own ChaCha8 stream of the spec seed,
//! so frames can be produced in any order.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use ndarray::ArrayView2;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::denoise::{denoise_image, DenoiserSpec};
use crate::error::{Error, Result};
use crate::io::save_stack;
use crate::par;
use crate::stack::{ImageStack, DEFAULT_PEAK};
use crate::xanes::{edge_position, normalize_spectrum, ChemicalMap, MapMode, NormWindows, SpectrumLibrary};

/// Minimum number of energies a phantom may keep.
pub const MIN_FRAMES: usize = 8;
/// Energy range of the built-in library, eV.
pub const BUILTIN_RANGE: (f64, f64) = (8180.0, 8562.0);
/// Sample count of the shipped library file.
pub const BUILTIN_FRAMES: usize = 117;
/// State values (Ni valence) of the built-in references.
pub const BUILTIN_STATES: [f64; 5] = [2.0, 2.25, 2.5, 2.75, 3.0];

const STREAM_LABELS: u64 = 1;
const STREAM_SUBSAMPLE: u64 = 2;
const STREAM_JITTER: u64 = 3;
const STREAM_NOISE: u64 = 1 << 32;
const MORPHOLOGY_SEED: u64 = 7;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// `n` energies evenly spaced over the built-in range.
pub fn builtin_energies(n: usize) -> Vec<f64> {
    let (a, b) = BUILTIN_RANGE;
    if n == 1 {
        return vec![a];
    }
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

/// Five NCM-like Ni K-edge references: sigmoid edges 10 eV apart, a white
/// line that weakens with valence and a damped post-edge oscillation.
pub fn builtin_library(energies: &[f64]) -> Result<SpectrumLibrary> {
    let refs = (0..BUILTIN_STATES.len())
        .map(|p| energies.iter().map(|&e| builtin_reference(p, e)).collect())
        .collect();
    let labels = BUILTIN_STATES.iter().map(|s| format!("Ni{s:.2}")).collect();
    SpectrumLibrary::new(energies.to_vec(), refs, labels, BUILTIN_STATES.to_vec())
}

fn builtin_reference(p: usize, e: f64) -> f64 {
    let pf = p as f64;
    let e0 = 8330.0 + 10.0 * pf;
    let x = e - e0;
    let step = 1.0 / (1.0 + (-x / 4.0).exp());
    let white = (0.5 - 0.3 * pf / 4.0) * (-0.5 * ((x - 9.0) / 5.0).powi(2)).exp();
    let osc = 0.12 * step * (-x.max(0.0) / 50.0).exp() * (x / 12.0 + 0.8 * pf).sin();
    0.1 + 0.55 * (step + white + osc)
}

/// Procedural grayscale morphology in [0, 1]: overlapping smooth blobs, a
/// low-frequency ripple and a fine grain of blurred white noise. The grain
/// gives every frame structure that does not change with energy, which is
/// what registration locks onto. Depends only on the size.
pub fn morphology(width: usize, height: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(MORPHOLOGY_SEED);
    let blobs: Vec<[f64; 4]> = (0..12)
        .map(|_| {
            [
                rng.gen_range(0.1..0.9),
                rng.gen_range(0.1..0.9),
                rng.gen_range(0.08..0.25),
                rng.gen_range(0.3..1.0),
            ]
        })
        .collect();
    let scale = width.max(height) as f64;
    let mut img: Vec<f64> = (0..height)
        .flat_map(|y| (0..width).map(move |x| (x as f64 / scale, y as f64 / scale)))
        .map(|(x, y)| {
            let mut v = 0.3 * (7.0 * x).sin() * (5.0 * y).cos();
            for [cx, cy, r, a] in &blobs {
                let d2 = ((x - cx).powi(2) + (y - cy).powi(2)) / (r * r);
                v += a * (1.0 - d2).max(0.0);
            }
            v
        })
        .collect();
    let grain = morphology_grain(width, height, &mut rng);
    img.iter_mut().zip(&grain).for_each(|(v, g)| *v += GRAIN_WEIGHT * g);
    let lo = img.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = img.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    img.iter_mut().for_each(|v| *v = (*v - lo) / span);
    img
}

/// Grain strength relative to the unit-range blob image.
const GRAIN_WEIGHT: f64 = 0.1;

/// White noise blurred to a one-pixel correlation length, unit variance.
fn morphology_grain(width: usize, height: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let white: Vec<f64> = (0..width * height).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
    let view = ArrayView2::from_shape((height, width), &white).expect("grain shape");
    let blurred = denoise_image(view, 0.0, &DenoiserSpec::GaussianBlur { radius: 2 }).expect("valid blur");
    let n = blurred.len() as f64;
    let mean = blurred.sum() / n;
    let sd = (blurred.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let sd = if sd > 0.0 { sd } else { 1.0 };
    blurred.iter().map(|v| (v - mean) / sd).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum LabelSource {
    /// Nearest of `regions` seeded random sites; region `i` gets label `i mod P`.
    Voronoi {
        regions: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    /// The built-in morphology split at its P−1 interior quantiles.
    Quantile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum LibrarySource {
    /// The built-in references sampled at `frames` energies.
    Builtin {
        #[serde(default = "default_frames")]
        frames: usize,
    },
    /// Library CSV plus states JSON; paths relative to the spec file.
    Files { csv: PathBuf, states: PathBuf },
}

fn default_frames() -> usize {
    BUILTIN_FRAMES
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Amplitude {
    #[default]
    Uniform,
    /// The built-in morphology mapped onto [0.2, 1].
    Morphology,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub width: usize,
    pub height: usize,
    pub labels: LabelSource,
    pub library: LibrarySource,
    #[serde(default)]
    pub amplitude: Amplitude,
    #[serde(default)]
    pub sigma: f64,
    /// Maximum per-frame translation in pixels.
    #[serde(default)]
    pub jitter: usize,
    /// Fraction of energies kept.
    #[serde(default = "one")]
    pub fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

impl PhantomSpec {
    /// Five Voronoi phases over the built-in library.
    pub fn five_phase(width: usize, height: usize, frames: usize, sigma: f64, seed: u64) -> Self {
        Self {
            width,
            height,
            labels: LabelSource::Voronoi {
                regions: BUILTIN_STATES.len(),
                seed: None,
            },
            library: LibrarySource::Builtin { frames },
            amplitude: Amplitude::Uniform,
            sigma,
            jitter: 0,
            fraction: 1.0,
            seed,
        }
    }

    /// Reads a JSON spec; library paths are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut spec: PhantomSpec = serde_json::from_str(&text)?;
        if let LibrarySource::Files { csv, states } = &mut spec.library {
            let base = path.parent().unwrap_or(Path::new(""));
            *csv = base.join(&*csv);
            *states = base.join(&*states);
        }
        Ok(spec)
    }

    pub fn library(&self) -> Result<SpectrumLibrary> {
        match &self.library {
            LibrarySource::Builtin { frames } => builtin_library(&builtin_energies(*frames)),
            LibrarySource::Files { csv, states } => SpectrumLibrary::from_files(csv, states),
        }
    }

    fn validate(&self, lib: &SpectrumLibrary) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.width == 0 || self.height == 0 {
            return bad("phantom size must be positive".into());
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma must be >= 0, got {}", self.sigma));
        }
        if let LabelSource::Voronoi { regions, .. } = self.labels {
            if regions == 0 {
                return bad("voronoi needs at least one region".into());
            }
        }
        kept_frames(lib.energies().len(), self.fraction).map(|_| ())
    }
}

fn kept_frames(t: usize, fraction: f64) -> Result<usize> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidParameter(format!("fraction must lie in (0, 1], got {fraction}")));
    }
    // tolerate representation error such as 0.1 * 50 = 5.000000000000001
    let k = ((fraction * t as f64) - 1e-9).ceil().max(1.0) as usize;
    if k < MIN_FRAMES {
        return Err(Error::InvalidParameter(format!(
            "fraction {fraction} keeps {k} of {t} energies, at least {MIN_FRAMES} required"
        )));
    }
    Ok(k.min(t))
}

/// Indices of the kept frames: the first `⌈f·T⌉` of a seeded permutation,
/// sorted. Smaller fractions with the same seed keep subsets of larger ones.
pub fn subsample_indices(t: usize, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    let k = kept_frames(t, fraction)?;
    let mut order: Vec<usize> = (0..t).collect();
    order.shuffle(&mut stream(seed, STREAM_SUBSAMPLE));
    let mut keep = order[..k].to_vec();
    keep.sort_unstable();
    Ok(keep)
}

/// Keeps a seeded random subset of `⌈f·T⌉` frames in energy order.
pub fn subsample_energies(stack: &ImageStack, fraction: f64, seed: u64) -> Result<ImageStack> {
    if fraction == 1.0 {
        kept_frames(stack.frames(), fraction)?;
        return Ok(stack.clone());
    }
    stack.select_frames(&subsample_indices(stack.frames(), fraction, seed)?)
}

/// Integer translation `out(x, y) = img(x − dx, y − dy)` with reflected fill.
pub fn translate(img: &[f64], width: usize, height: usize, dx: i64, dy: i64) -> Vec<f64> {
    use crate::denoise::reflect;
    let mut out = Vec::with_capacity(img.len());
    for y in 0..height {
        let sy = reflect(y as isize - dy as isize, height);
        for x in 0..width {
            out.push(img[sy * width + reflect(x as isize - dx as isize, width)]);
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct PhantomTruth {
    /// Noise-free, un-jittered stack on the kept energies.
    pub clean: ImageStack,
    /// Row-major label per pixel.
    pub labels: Vec<usize>,
    /// Library sampled on the kept energies.
    pub library: SpectrumLibrary,
    /// State value of each pixel's phase.
    pub state_map: ChemicalMap,
    /// Edge energy of each pixel's phase.
    pub edge_map: ChemicalMap,
    /// Applied `(dx, dy)` per kept frame.
    pub shifts: Vec<(i64, i64)>,
}

impl PhantomTruth {
    pub fn map(&self, mode: MapMode) -> &ChemicalMap {
        match mode {
            MapMode::PhaseFit => &self.state_map,
            MapMode::EdgePosition => &self.edge_map,
        }
    }

    /// Writes labels, both ground-truth maps, the library and `shifts.csv`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let (w, h) = (self.clean.width(), self.clean.height());
        let labels = ImageStack::new(w, h, 1, self.labels.iter().map(|&l| l as f64).collect())?;
        save_stack(&labels, &dir.join("labels"))?;
        save_stack(&self.state_map.to_stack()?, &dir.join("map"))?;
        save_stack(&self.edge_map.to_stack()?, &dir.join("edge_map"))?;
        self.library.save(&dir.join("library.csv"), &dir.join("states.json"))?;
        write_shifts(&dir.join("shifts.csv"), &self.shifts)
    }
}

/// Writes `frame,dx,dy` rows.
pub fn write_shifts(path: &Path, shifts: &[(i64, i64)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["frame", "dx", "dy"])?;
    for (t, (dx, dy)) in shifts.iter().enumerate() {
        w.write_record(&[t.to_string(), dx.to_string(), dy.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a `frame,dx,dy` file.
pub fn read_shifts(path: &Path) -> Result<Vec<(i64, i64)>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.deserialize() {
        let (_, dx, dy): (usize, i64, i64) = rec?;
        out.push((dx, dy));
    }
    Ok(out)
}

fn label_map(spec: &PhantomSpec, p: usize) -> Vec<usize> {
    let (w, h) = (spec.width, spec.height);
    match spec.labels {
        LabelSource::Voronoi { regions, seed } => {
            let mut rng = stream(seed.unwrap_or(spec.seed), STREAM_LABELS);
            let sites: Vec<(f64, f64)> = (0..regions)
                .map(|_| (rng.gen_range(0.0..h as f64), rng.gen_range(0.0..w as f64)))
                .collect();
            (0..h * w)
                .map(|i| {
                    let (y, x) = ((i / w) as f64, (i % w) as f64);
                    let mut best = 0;
                    let mut best_d = f64::INFINITY;
                    for (k, (sy, sx)) in sites.iter().enumerate() {
                        let d = (y - sy).powi(2) + (x - sx).powi(2);
                        if d < best_d {
                            best_d = d;
                            best = k;
                        }
                    }
                    best % p
                })
                .collect()
        }
        LabelSource::Quantile => {
            let img = morphology(w, h);
            let mut sorted = img.clone();
            sorted.sort_by(f64::total_cmp);
            let n = sorted.len();
            let thresholds: Vec<f64> = (1..p).map(|i| sorted[(i * n / p).min(n - 1)]).collect();
            img.iter()
                .map(|v| thresholds.iter().filter(|&&t| *v >= t).count())
                .collect()
        }
    }
}

/// Builds the noisy stack and its ground truth.
pub fn generate(spec: &PhantomSpec) -> Result<(ImageStack, PhantomTruth)> {
    let full_lib = spec.library()?;
    spec.validate(&full_lib)?;
    let keep = subsample_indices(full_lib.energies().len(), spec.fraction, spec.seed)?;
    let energies: Vec<f64> = keep.iter().map(|&i| full_lib.energies()[i]).collect();
    let library = SpectrumLibrary::new(
        energies.clone(),
        (0..full_lib.len())
            .map(|p| keep.iter().map(|&i| full_lib.reference(p)[i]).collect())
            .collect(),
        full_lib.labels().to_vec(),
        full_lib.states().to_vec(),
    )?;
    let p = library.len();
    let (w, h) = (spec.width, spec.height);
    let t = energies.len();
    let labels = label_map(spec, p);
    let amplitude: Vec<f64> = match spec.amplitude {
        Amplitude::Uniform => vec![1.0; w * h],
        Amplitude::Morphology => morphology(w, h).into_iter().map(|v| 0.2 + 0.8 * v).collect(),
    };

    let clean_frames: Vec<Vec<f64>> = par::map_range(t, |k| {
        labels
            .iter()
            .zip(&amplitude)
            .map(|(&l, &a)| (DEFAULT_PEAK * a * library.reference(l)[k]).clamp(0.0, DEFAULT_PEAK))
            .collect()
    });

    let mut shifts = vec![(0i64, 0i64); t];
    if spec.jitter > 0 {
        let a = spec.jitter as i64;
        let mut rng = stream(spec.seed, STREAM_JITTER);
        for s in shifts.iter_mut().skip(1) {
            *s = (rng.gen_range(-a..=a), rng.gen_range(-a..=a));
        }
    }
    let noise = if spec.sigma > 0.0 {
        Some(Normal::new(0.0, spec.sigma).map_err(|e| Error::InvalidParameter(e.to_string()))?)
    } else {
        None
    };
    let noisy_frames: Vec<Vec<f64>> = par::map_range(t, |k| {
        let (dx, dy) = shifts[k];
        let mut f = if (dx, dy) == (0, 0) {
            clean_frames[k].clone()
        } else {
            translate(&clean_frames[k], w, h, dx, dy)
        };
        if let Some(n) = &noise {
            let mut rng = stream(spec.seed, STREAM_NOISE + k as u64);
            f.iter_mut().for_each(|v| *v += n.sample(&mut rng));
        }
        f
    });

    let clean = ImageStack::from_frames(w, h, &clean_frames)?.with_energies(energies.clone())?;
    let noisy = ImageStack::from_frames(w, h, &noisy_frames)?.with_energies(energies.clone())?;

    let state_map = label_map_to_chemical(&labels, w, h, MapMode::PhaseFit, library.states());
    let windows = NormWindows::default_for(&energies)?;
    let edges = (0..p)
        .map(|i| edge_position(&normalize_spectrum(library.reference(i), &energies, &windows)?, &energies))
        .collect::<Result<Vec<f64>>>()?;
    let edge_map = label_map_to_chemical(&labels, w, h, MapMode::EdgePosition, &edges);

    Ok((
        noisy,
        PhantomTruth {
            clean,
            labels,
            library,
            state_map,
            edge_map,
            shifts,
        },
    ))
}

fn label_map_to_chemical(labels: &[usize], w: usize, h: usize, mode: MapMode, values: &[f64]) -> ChemicalMap {
    ChemicalMap {
        width: w,
        height: h,
        mode,
        values: labels.iter().map(|&l| values[l]).collect(),
        residuals: vec![0.0; labels.len()],
        valid: vec![true; labels.len()],
    }
}
