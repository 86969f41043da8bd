//! Rigid jitter correction by phase correlation.

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::par;
use crate::phantom::translate;
use crate::stack::{median_in_place, ImageStack};

/// Options for [`correct_jitter`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RegistrationOptions {
    /// Refine the integer peak with a parabolic fit. Only the reported
    /// subpixel shifts change; frames are still moved by whole pixels.
    pub subpixel: bool,
}

/// Shift estimates for one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShiftEstimate {
    pub dx: i64,
    pub dy: i64,
    /// Parabolic refinement of `(dx, dy)`, equal to it when disabled.
    pub subpixel: (f64, f64),
}

/// Phase correlation against a fixed reference frame.
pub struct Registrar {
    width: usize,
    height: usize,
    reference: Vec<Complex64>,
    row_fwd: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

fn is_constant(img: &[f64]) -> bool {
    img.iter().all(|&v| v == img[0])
}

impl Registrar {
    pub fn new(reference: &[f64], width: usize, height: usize) -> Result<Self> {
        if reference.len() != width * height || reference.is_empty() {
            return Err(Error::Dimension("reference does not match its size".into()));
        }
        if is_constant(reference) {
            return Err(Error::ConstantInput);
        }
        let mut planner = FftPlanner::new();
        let mut r = Self {
            width,
            height,
            reference: Vec::new(),
            row_fwd: planner.plan_fft_forward(width),
            col_fwd: planner.plan_fft_forward(height),
            row_inv: planner.plan_fft_inverse(width),
            col_inv: planner.plan_fft_inverse(height),
        };
        r.reference = r.spectrum(reference);
        Ok(r)
    }

    fn fft2(&self, data: &mut [Complex64], inverse: bool) {
        let (w, h) = (self.width, self.height);
        let (row, col) = if inverse {
            (&self.row_inv, &self.col_inv)
        } else {
            (&self.row_fwd, &self.col_fwd)
        };
        row.process(data);
        let mut column = vec![Complex64::default(); h];
        for x in 0..w {
            for y in 0..h {
                column[y] = data[y * w + x];
            }
            col.process(&mut column);
            for y in 0..h {
                data[y * w + x] = column[y];
            }
        }
    }

    fn spectrum(&self, img: &[f64]) -> Vec<Complex64> {
        let mean = img.iter().sum::<f64>() / img.len() as f64;
        let mut data: Vec<Complex64> = img.iter().map(|&v| Complex64::new(v - mean, 0.0)).collect();
        self.fft2(&mut data, false);
        data
    }

    /// Translation `(dx, dy)` with `frame(x, y) ≈ reference(x − dx, y − dy)`.
    pub fn estimate(&self, frame: &[f64], subpixel: bool) -> Result<ShiftEstimate> {
        let (w, h) = (self.width, self.height);
        if frame.len() != w * h {
            return Err(Error::Dimension("frame and reference differ in size".into()));
        }
        if is_constant(frame) {
            return Err(Error::ConstantInput);
        }
        let mut cross = self.spectrum(frame);
        let mut peak_mag = 0.0f64;
        for (c, r) in cross.iter_mut().zip(&self.reference) {
            *c *= r.conj();
            peak_mag = peak_mag.max(c.norm());
        }
        let floor = peak_mag * 1e-15;
        for c in cross.iter_mut() {
            let m = c.norm();
            *c = if m > floor { *c / m } else { Complex64::default() };
        }
        self.fft2(&mut cross, true);
        let corr: Vec<f64> = cross.iter().map(|c| c.re).collect();

        let best = corr.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let tol = best.abs() * 1e-12;
        let signed = |i: usize, n: usize| if i > n / 2 { i as i64 - n as i64 } else { i as i64 };
        let mut pick: Option<(i64, i64)> = None;
        for (i, &v) in corr.iter().enumerate() {
            if v < best - tol {
                continue;
            }
            let cand = (signed(i % w, w), signed(i / w, h));
            let key = |s: (i64, i64)| (s.0.abs() + s.1.abs(), s.0, s.1);
            if pick.map_or(true, |p| key(cand) < key(p)) {
                pick = Some(cand);
            }
        }
        let (dx, dy) = pick.expect("non-empty correlation");
        let refined = if subpixel {
            let at = |x: i64, y: i64| corr[(y.rem_euclid(h as i64) * w as i64 + x.rem_euclid(w as i64)) as usize];
            let vertex = |m: f64, c: f64, p: f64| {
                let d = m - 2.0 * c + p;
                if d.abs() > 1e-300 {
                    (0.5 * (m - p) / d).clamp(-0.5, 0.5)
                } else {
                    0.0
                }
            };
            let c = at(dx, dy);
            (
                dx as f64 + vertex(at(dx - 1, dy), c, at(dx + 1, dy)),
                dy as f64 + vertex(at(dx, dy - 1), c, at(dx, dy + 1)),
            )
        } else {
            (dx as f64, dy as f64)
        };
        Ok(ShiftEstimate {
            dx,
            dy,
            subpixel: refined,
        })
    }
}

/// Integer shift of `frame` relative to `reference` by phase correlation.
/// Ties go to the smaller `|dx| + |dy|`, then to the smaller `(dx, dy)`.
pub fn estimate_shift(frame: &[f64], reference: &[f64], width: usize, height: usize) -> Result<(i64, i64)> {
    let e = Registrar::new(reference, width, height)?.estimate(frame, false)?;
    Ok((e.dx, e.dy))
}

/// Pixelwise median over frames.
pub fn temporal_median(stack: &ImageStack) -> Vec<f64> {
    let t = stack.frames();
    par::map_range(stack.pixels(), |p| {
        let mut v: Vec<f64> = (0..t).map(|k| stack.frame(k)[p]).collect();
        median_in_place(&mut v)
    })
}

/// Most reference refinements in [`correct_jitter`].
const MAX_PASSES: usize = 10;

/// Registers every frame to the temporal median and moves it back by the
/// estimated shift. The median of a jittered stack is blurred, so it is
/// recomputed from the corrected frames until the estimates stop changing.
/// Returns the corrected stack and the per-frame estimates. A constant frame
/// is translation invariant and gets a zero shift. Shifts are reported
/// relative to their componentwise median.
pub fn correct_jitter(stack: &ImageStack, opts: RegistrationOptions) -> Result<(ImageStack, Vec<ShiftEstimate>)> {
    if stack.frames() < 2 {
        return Err(Error::Dimension("registration needs at least 2 frames".into()));
    }
    let (w, h) = (stack.width(), stack.height());
    let apply = |estimates: &[ShiftEstimate]| -> Result<ImageStack> {
        let frames: Vec<Vec<f64>> = par::map_range(stack.frames(), |k| {
            let e = estimates[k];
            if (e.dx, e.dy) == (0, 0) {
                stack.frame(k).to_vec()
            } else {
                translate(stack.frame(k), w, h, -e.dx, -e.dy)
            }
        });
        stack.with_data(frames.concat())
    };
    let mut current = stack.clone();
    let mut estimates: Vec<ShiftEstimate> = Vec::new();
    for _ in 0..MAX_PASSES {
        let reg = Registrar::new(&temporal_median(&current), w, h)?;
        let next = par::map_range(stack.frames(), |k| match reg.estimate(stack.frame(k), opts.subpixel) {
            Err(Error::ConstantInput) => Ok(ShiftEstimate {
                dx: 0,
                dy: 0,
                subpixel: (0.0, 0.0),
            }),
            other => other,
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let settled = next.iter().map(|e| (e.dx, e.dy)).eq(estimates.iter().map(|e| (e.dx, e.dy)));
        estimates = next;
        if settled {
            break;
        }
        current = apply(&estimates)?;
    }
    // The median sits at an arbitrary common offset. Removing the median
    // estimate leaves an unjittered stack in place even when single frames
    // are too noisy to register.
    let (ax, ay) = (
        lower_median(estimates.iter().map(|e| e.dx).collect()),
        lower_median(estimates.iter().map(|e| e.dy).collect()),
    );
    for e in estimates.iter_mut() {
        e.dx -= ax;
        e.dy -= ay;
        e.subpixel = (e.subpixel.0 - ax as f64, e.subpixel.1 - ay as f64);
    }
    Ok((apply(&estimates)?, estimates))
}

fn lower_median(mut v: Vec<i64>) -> i64 {
    v.sort_unstable();
    v[(v.len() - 1) / 2]
}

/// Fraction of frames whose integer shift matches the truth exactly, up to
/// one translation common to all frames. Registration against a median has no
/// absolute origin, so the offset is the most frequent estimate − truth
/// difference.
pub fn shift_recovery_rate(estimated: &[(i64, i64)], truth: &[(i64, i64)]) -> Result<f64> {
    if estimated.len() != truth.len() || truth.is_empty() {
        return Err(Error::Dimension("shift lists differ in length".into()));
    }
    let diffs: Vec<(i64, i64)> = estimated.iter().zip(truth).map(|(a, b)| (a.0 - b.0, a.1 - b.1)).collect();
    let best = diffs.iter().map(|d| diffs.iter().filter(|x| *x == d).count()).max().unwrap_or(0);
    Ok(best as f64 / truth.len() as f64)
}
