//! XANES spectrum normalization, reference fitting and chemical phase maps.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::stack::{validate_energies, ImageStack};

/// Largest number of references the exact simplex fit accepts.
pub const MAX_REFERENCES: usize = 8;
/// Fraction of the energy samples used by each default normalization window.
pub const DEFAULT_WINDOW_FRACTION: f64 = 0.15;

/// Reference absorption spectra on a common energy axis.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumLibrary {
    energies: Vec<f64>,
    /// One spectrum per reference.
    references: Vec<Vec<f64>>,
    labels: Vec<String>,
    states: Vec<f64>,
}

impl SpectrumLibrary {
    pub fn new(energies: Vec<f64>, references: Vec<Vec<f64>>, labels: Vec<String>, states: Vec<f64>) -> Result<Self> {
        validate_energies(&energies, energies.len())?;
        let p = references.len();
        if p == 0 {
            return Err(Error::InvalidParameter("library needs at least one reference".into()));
        }
        if labels.len() != p || states.len() != p {
            return Err(Error::Dimension(format!(
                "{p} references but {} labels and {} states",
                labels.len(),
                states.len()
            )));
        }
        for r in &references {
            if r.len() != energies.len() {
                return Err(Error::Dimension(format!(
                    "reference has {} samples, energy axis {}",
                    r.len(),
                    energies.len()
                )));
            }
            if let Some(i) = r.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { index: i });
            }
        }
        if let Some(i) = states.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index: i });
        }
        Ok(Self {
            energies,
            references,
            labels,
            states,
        })
    }

    /// Reads `energy,<label1>,<label2>,…` and a JSON object mapping each
    /// label to its state value.
    pub fn from_files(csv_path: &Path, states_path: &Path) -> Result<Self> {
        let text = fs::read_to_string(states_path).map_err(|e| Error::io(states_path, e))?;
        let state_map: HashMap<String, f64> = serde_json::from_str(&text)?;
        let mut rdr = csv::Reader::from_path(csv_path)?;
        let headers = rdr.headers()?.clone();
        if headers.len() < 2 || headers.get(0).map(str::trim) != Some("energy") {
            return Err(Error::Header {
                path: csv_path.to_path_buf(),
                message: "expected header energy,<label>,…".into(),
            });
        }
        let labels: Vec<String> = headers.iter().skip(1).map(|s| s.trim().to_string()).collect();
        let mut states = Vec::with_capacity(labels.len());
        for l in &labels {
            let s = state_map.get(l).ok_or_else(|| Error::Header {
                path: states_path.to_path_buf(),
                message: format!("no state value for reference '{l}'"),
            })?;
            states.push(*s);
        }
        let mut energies = Vec::new();
        let mut references = vec![Vec::new(); labels.len()];
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() != labels.len() + 1 {
                return Err(Error::Header {
                    path: csv_path.to_path_buf(),
                    message: format!("row with {} fields", rec.len()),
                });
            }
            let parse = |s: &str| {
                s.trim().parse::<f64>().map_err(|_| Error::Header {
                    path: csv_path.to_path_buf(),
                    message: format!("bad number '{s}'"),
                })
            };
            energies.push(parse(&rec[0])?);
            for (p, r) in references.iter_mut().enumerate() {
                r.push(parse(&rec[p + 1])?);
            }
        }
        Self::new(energies, references, labels, states)
    }

    /// Writes the CSV and the states JSON.
    pub fn save(&self, csv_path: &Path, states_path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(csv_path)?;
        let mut header = vec!["energy".to_string()];
        header.extend(self.labels.iter().cloned());
        w.write_record(&header)?;
        for (i, e) in self.energies.iter().enumerate() {
            let mut row = vec![format!("{e}")];
            row.extend(self.references.iter().map(|r| format!("{}", r[i])));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io(csv_path, e))?;
        let map: serde_json::Map<String, serde_json::Value> = self
            .labels
            .iter()
            .zip(&self.states)
            .map(|(l, s)| (l.clone(), serde_json::json!(s)))
            .collect();
        let text = serde_json::to_string_pretty(&map)? + "\n";
        fs::write(states_path, text).map_err(|e| Error::io(states_path, e))
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }
    pub fn len(&self) -> usize {
        self.references.len()
    }
    pub fn is_empty(&self) -> bool {
        self.references.is_empty()
    }
    pub fn reference(&self, p: usize) -> &[f64] {
        &self.references[p]
    }
    pub fn labels(&self) -> &[String] {
        &self.labels
    }
    pub fn states(&self) -> &[f64] {
        &self.states
    }

    /// Linear interpolation onto another energy axis; values beyond the
    /// library range are held at the end samples.
    pub fn resample(&self, energies: &[f64]) -> Result<Self> {
        if energies == self.energies.as_slice() {
            return Ok(self.clone());
        }
        validate_energies(energies, energies.len())?;
        let refs = self
            .references
            .iter()
            .map(|r| energies.iter().map(|&e| interp(&self.energies, r, e)).collect())
            .collect();
        Self::new(energies.to_vec(), refs, self.labels.clone(), self.states.clone())
    }

    /// The library with every reference normalized with `windows`.
    pub fn normalized(&self, windows: &NormWindows) -> Result<Self> {
        let refs = self
            .references
            .iter()
            .map(|r| normalize_spectrum(r, &self.energies, windows))
            .collect::<Result<Vec<_>>>()?;
        Self::new(self.energies.clone(), refs, self.labels.clone(), self.states.clone())
    }
}

fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let n = xs.len();
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[n - 1] {
        return ys[n - 1];
    }
    let j = xs.partition_point(|&v| v <= x);
    let (x0, x1) = (xs[j - 1], xs[j]);
    let f = (x - x0) / (x1 - x0);
    ys[j - 1] + f * (ys[j] - ys[j - 1])
}

/// Closed energy interval in eV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub lo: f64,
    pub hi: f64,
}

impl Window {
    fn contains(&self, e: f64) -> bool {
        e >= self.lo && e <= self.hi
    }
}

/// Pre-edge and post-edge baselines for normalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormWindows {
    pub pre: Window,
    pub post: Window,
}

impl NormWindows {
    /// Windows spanning the first and last 15% of the samples, at least two
    /// samples each.
    pub fn default_for(energies: &[f64]) -> Result<Self> {
        let t = energies.len();
        let k = ((DEFAULT_WINDOW_FRACTION * t as f64).ceil() as usize).max(2);
        if 2 * k > t {
            return Err(Error::InvalidParameter(format!(
                "{t} energies are too few for two disjoint windows"
            )));
        }
        Ok(Self {
            pre: Window {
                lo: energies[0],
                hi: energies[k - 1],
            },
            post: Window {
                lo: energies[t - k],
                hi: energies[t - 1],
            },
        })
    }

    /// Parses `pre_lo,pre_hi,post_lo,post_hi`.
    pub fn parse(s: &str) -> Result<Self> {
        let v: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::InvalidParameter(format!("bad windows '{s}'")))?;
        if v.len() != 4 {
            return Err(Error::InvalidParameter(format!(
                "windows need pre_lo,pre_hi,post_lo,post_hi, got '{s}'"
            )));
        }
        Ok(Self {
            pre: Window { lo: v[0], hi: v[1] },
            post: Window { lo: v[2], hi: v[3] },
        })
    }

    fn check(&self, energies: &[f64]) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.pre.lo <= self.pre.hi && self.post.lo <= self.post.hi) {
            return bad(format!("inverted window in {self:?}"));
        }
        if self.pre.hi >= self.post.lo {
            return bad("pre-edge window must lie below the post-edge window".into());
        }
        for (name, w) in [("pre-edge", self.pre), ("post-edge", self.post)] {
            if energies.iter().filter(|&&e| w.contains(e)).count() < 2 {
                return bad(format!("{name} window [{}, {}] holds fewer than 2 samples", w.lo, w.hi));
            }
        }
        Ok(())
    }

    /// Energy where the edge step is measured.
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.pre.hi + self.post.lo)
    }
}

/// Least-squares line `(slope, intercept)` through the samples inside `w`.
fn fit_line(raw: &[f64], energies: &[f64], w: Window) -> (f64, f64) {
    let pts: Vec<(f64, f64)> = energies
        .iter()
        .zip(raw)
        .filter(|(e, _)| w.contains(**e))
        .map(|(&e, &v)| (e, v))
        .collect();
    let n = pts.len() as f64;
    let me = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let mv = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - me).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - me) * (p.1 - mv)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, mv - slope * me)
}

/// Subtracts the pre-edge line and divides by the edge step, so the result
/// is about 0 before the edge and about 1 after it.
pub fn normalize_spectrum(raw: &[f64], energies: &[f64], windows: &NormWindows) -> Result<Vec<f64>> {
    if raw.len() != energies.len() {
        return Err(Error::Dimension(format!(
            "spectrum has {} samples, energy axis {}",
            raw.len(),
            energies.len()
        )));
    }
    windows.check(energies)?;
    let (ap, bp) = fit_line(raw, energies, windows.pre);
    let (aq, bq) = fit_line(raw, energies, windows.post);
    let mid = windows.midpoint();
    let step = (aq * mid + bq) - (ap * mid + bp);
    let scale = raw.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(step.abs() > 1e-12 * scale.max(f64::MIN_POSITIVE)) || !step.is_finite() {
        return Err(Error::FlatSpectrum);
    }
    Ok(raw
        .iter()
        .zip(energies)
        .map(|(v, e)| (v - (ap * e + bp)) / step)
        .collect())
}

/// Energy of the first upward crossing of 0.5, linearly interpolated.
pub fn edge_position(spec: &[f64], energies: &[f64]) -> Result<f64> {
    if spec.len() != energies.len() {
        return Err(Error::Dimension("spectrum and energy axis differ in length".into()));
    }
    for j in 0..spec.len().saturating_sub(1) {
        let (a, b) = (spec[j], spec[j + 1]);
        if a < 0.5 && b >= 0.5 {
            let f = (0.5 - a) / (b - a);
            return Ok(energies[j] + f * (energies[j + 1] - energies[j]));
        }
    }
    Err(Error::NoEdge)
}

/// Result of a simplex-constrained least-squares fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseFit {
    pub weights: Vec<f64>,
    /// `Σ w_p·state_p`.
    pub state: f64,
    /// `‖R·w − spec‖²`.
    pub residual: f64,
    /// The optimum is not unique; `weights` is the minimal-norm solution.
    pub non_unique: bool,
}

/// Precomputed active-set solutions for fitting many spectra against one
/// reference set.
pub struct PhaseFitter {
    refs: Vec<Vec<f64>>,
    states: Vec<f64>,
    supports: Vec<Support>,
    /// `[R; 1ᵀ]` has rank below P, so optimal weights need not be unique.
    rank_deficient: bool,
}

struct Support {
    members: Vec<usize>,
    gram: DMatrix<f64>,
    /// Pseudo-inverse of the KKT matrix `[[2G, 1], [1ᵀ, 0]]`.
    kkt_pinv: DMatrix<f64>,
    singular: bool,
}

impl PhaseFitter {
    pub fn new(lib: &SpectrumLibrary) -> Result<Self> {
        let p = lib.len();
        if p > MAX_REFERENCES {
            return Err(Error::TooManyReferences(p));
        }
        let refs = lib.references.clone();
        let mut supports = Vec::with_capacity((1 << p) - 1);
        for mask in 1usize..(1 << p) {
            let members: Vec<usize> = (0..p).filter(|i| mask >> i & 1 == 1).collect();
            let s = members.len();
            let gram = DMatrix::from_fn(s, s, |i, j| dot(&refs[members[i]], &refs[members[j]]));
            let mut kkt = DMatrix::zeros(s + 1, s + 1);
            for i in 0..s {
                for j in 0..s {
                    kkt[(i, j)] = 2.0 * gram[(i, j)];
                }
                kkt[(i, s)] = 1.0;
                kkt[(s, i)] = 1.0;
            }
            let svd = kkt.clone().svd(true, true);
            let smax = svd.singular_values.max();
            let tol = smax * 1e-12 * (s + 1) as f64;
            let singular = svd.singular_values.iter().any(|&v| v <= tol);
            let kkt_pinv = svd
                .pseudo_inverse(tol)
                .map_err(|e| Error::NonConvergence(e.to_string()))?;
            supports.push(Support {
                members,
                gram,
                kkt_pinv,
                singular,
            });
        }
        let rank_deficient = supports.last().is_some_and(|s| s.singular);
        Ok(Self {
            refs,
            states: lib.states.clone(),
            supports,
            rank_deficient,
        })
    }

    pub fn fit(&self, spec: &[f64]) -> Result<PhaseFit> {
        let t = self.refs[0].len();
        if spec.len() != t {
            return Err(Error::Dimension(format!(
                "spectrum has {} samples, library {t}",
                spec.len()
            )));
        }
        let g: Vec<f64> = self.refs.iter().map(|r| dot(r, spec)).collect();
        let yy = dot(spec, spec);
        let tie = 1e-10 * yy.max(1.0);
        let mut best: Option<(f64, f64, usize, Vec<f64>)> = None;
        for (si, sup) in self.supports.iter().enumerate() {
            let s = sup.members.len();
            let mut rhs = nalgebra::DVector::zeros(s + 1);
            for (i, &m) in sup.members.iter().enumerate() {
                rhs[i] = 2.0 * g[m];
            }
            rhs[s] = 1.0;
            let sol = &sup.kkt_pinv * rhs;
            let w: Vec<f64> = (0..s).map(|i| sol[i]).collect();
            if w.iter().any(|&v| v < -1e-10) || ((w.iter().sum::<f64>()) - 1.0).abs() > 1e-6 {
                continue;
            }
            let mut quad = 0.0;
            let mut lin = 0.0;
            for i in 0..s {
                lin += w[i] * g[sup.members[i]];
                for j in 0..s {
                    quad += w[i] * sup.gram[(i, j)] * w[j];
                }
            }
            let res = yy - 2.0 * lin + quad;
            let wn: f64 = w.iter().map(|v| v * v).sum();
            // equal residuals: the minimal-norm weights win
            let better = match &best {
                None => true,
                Some(b) => res < b.0 - tie || (res <= b.0 + tie && wn < b.1 - 1e-12),
            };
            if better {
                best = Some((res, wn, si, w));
            }
        }
        let (_, _, si, w) = best.ok_or_else(|| Error::NonConvergence("no feasible simplex support".into()))?;
        let sup = &self.supports[si];
        let mut weights = vec![0.0; self.refs.len()];
        for (i, &m) in sup.members.iter().enumerate() {
            weights[m] = w[i].max(0.0);
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|v| *v /= total);
        let residual: f64 = (0..t)
            .map(|k| {
                let fit: f64 = weights.iter().zip(&self.refs).map(|(w, r)| w * r[k]).sum();
                (fit - spec[k]).powi(2)
            })
            .sum();
        let state = weights.iter().zip(&self.states).map(|(w, s)| w * s).sum();
        Ok(PhaseFit {
            weights,
            state,
            residual,
            non_unique: self.rank_deficient || sup.singular,
        })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Fits `spec` as a convex combination of the library references, which must
/// be sampled on the same energies as `spec`.
pub fn fit_phase_fractions(spec: &[f64], lib: &SpectrumLibrary) -> Result<PhaseFit> {
    PhaseFitter::new(lib)?.fit(spec)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum MapMode {
    EdgePosition,
    #[default]
    PhaseFit,
}

impl std::str::FromStr for MapMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "edge" | "edge-position" => Ok(MapMode::EdgePosition),
            "phase" | "phase-fit" => Ok(MapMode::PhaseFit),
            _ => Err(Error::InvalidParameter(format!("unknown map mode '{s}', expected edge or phase"))),
        }
    }
}

impl std::fmt::Display for MapMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MapMode::EdgePosition => "edge-position",
            MapMode::PhaseFit => "phase-fit",
        })
    }
}

/// Per-pixel chemical state (fitted state value or edge energy).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChemicalMap {
    pub width: usize,
    pub height: usize,
    pub mode: MapMode,
    /// Row-major; invalid pixels hold NaN.
    pub values: Vec<f64>,
    /// Fit residual for phase-fit maps, NaN otherwise.
    pub residuals: Vec<f64>,
    pub valid: Vec<bool>,
}

impl ChemicalMap {
    pub fn invalid_count(&self) -> usize {
        self.valid.iter().filter(|v| !**v).count()
    }

    /// The map as a single-frame stack, invalid pixels written as 0.
    pub fn to_stack(&self) -> Result<ImageStack> {
        let data = self
            .values
            .iter()
            .zip(&self.valid)
            .map(|(v, ok)| if *ok { *v } else { 0.0 })
            .collect();
        ImageStack::new(self.width, self.height, 1, data)
    }
}

/// Normalizes and fits every pixel spectrum of `stack`. Pixels whose
/// spectrum is flat or has no edge are marked invalid; more than half
/// invalid is an error.
pub fn chemical_map(
    stack: &ImageStack,
    lib: &SpectrumLibrary,
    mode: MapMode,
    windows: Option<&NormWindows>,
) -> Result<ChemicalMap> {
    let energies = stack
        .energies()
        .ok_or_else(|| Error::InvalidParameter("stack has no energy axis".into()))?;
    let windows = match windows {
        Some(w) => *w,
        None => NormWindows::default_for(energies)?,
    };
    windows.check(energies)?;
    let fitter = match mode {
        MapMode::PhaseFit => Some(PhaseFitter::new(&lib.resample(energies)?.normalized(&windows)?)?),
        MapMode::EdgePosition => None,
    };
    let results = par::map_range(stack.pixels(), |p| -> Result<Option<(f64, f64)>> {
        let spec = match normalize_spectrum(&stack.spectrum(p), energies, &windows) {
            Ok(s) => s,
            Err(Error::FlatSpectrum) => return Ok(None),
            Err(e) => return Err(e),
        };
        match &fitter {
            Some(f) => f.fit(&spec).map(|r| Some((r.state, r.residual))),
            None => match edge_position(&spec, energies) {
                Ok(e) => Ok(Some((e, f64::NAN))),
                Err(Error::NoEdge) => Ok(None),
                Err(e) => Err(e),
            },
        }
    });
    let n = stack.pixels();
    let mut values = Vec::with_capacity(n);
    let mut residuals = Vec::with_capacity(n);
    let mut valid = Vec::with_capacity(n);
    for r in results {
        match r? {
            Some((v, res)) if v.is_finite() => {
                values.push(v);
                residuals.push(res);
                valid.push(true);
            }
            _ => {
                values.push(f64::NAN);
                residuals.push(f64::NAN);
                valid.push(false);
            }
        }
    }
    let invalid = valid.iter().filter(|v| !**v).count();
    if 2 * invalid > n {
        return Err(Error::TooManyInvalid { invalid, total: n });
    }
    Ok(ChemicalMap {
        width: stack.width(),
        height: stack.height(),
        mode,
        values,
        residuals,
        valid,
    })
}
