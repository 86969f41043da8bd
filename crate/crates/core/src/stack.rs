//! Image stacks, their matrix view, and noise-level estimation.

use ndarray::{Array2, ArrayView2, ShapeBuilder};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

/// Default peak value of the nominal 8-bit pixel range.
pub const DEFAULT_PEAK: f64 = 255.0;

/// An M×N×T stack of transmission images.
///
/// Data are stored frame-major and row-major within each frame, so frame `t`
/// occupies `data[t*M*N..(t+1)*M*N]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageStack {
    width: usize,
    height: usize,
    frames: usize,
    data: Vec<f64>,
    energies: Option<Vec<f64>>,
    peak: f64,
}

impl ImageStack {
    pub fn new(width: usize, height: usize, frames: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || frames == 0 {
            return Err(Error::Dimension(format!(
                "stack dimensions must be positive, got {width}x{height}x{frames}"
            )));
        }
        let expected = width * height * frames;
        if data.len() != expected {
            return Err(Error::Dimension(format!(
                "{width}x{height}x{frames} stack needs {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self {
            width,
            height,
            frames,
            data,
            energies: None,
            peak: DEFAULT_PEAK,
        })
    }

    pub fn zeros(width: usize, height: usize, frames: usize) -> Result<Self> {
        Self::new(width, height, frames, vec![0.0; width * height * frames])
    }

    /// Builds a stack from a list of equally sized frames.
    pub fn from_frames(width: usize, height: usize, frames: &[Vec<f64>]) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * frames.len());
        for (t, f) in frames.iter().enumerate() {
            if f.len() != width * height {
                return Err(Error::Dimension(format!(
                    "frame {t} has {} values, expected {}",
                    f.len(),
                    width * height
                )));
            }
            data.extend_from_slice(f);
        }
        Self::new(width, height, frames.len(), data)
    }

    pub fn with_energies(mut self, energies: Vec<f64>) -> Result<Self> {
        validate_energies(&energies, self.frames)?;
        self.energies = Some(energies);
        Ok(self)
    }

    pub fn with_peak(mut self, peak: f64) -> Result<Self> {
        if !(peak.is_finite() && peak > 0.0) {
            return Err(Error::InvalidParameter(format!("peak must be positive, got {peak}")));
        }
        self.peak = peak;
        Ok(self)
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn frames(&self) -> usize {
        self.frames
    }
    pub fn pixels(&self) -> usize {
        self.width * self.height
    }
    pub fn peak(&self) -> f64 {
        self.peak
    }
    pub fn energies(&self) -> Option<&[f64]> {
        self.energies.as_deref()
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }
    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        let n = self.pixels();
        &self.data[t * n..(t + 1) * n]
    }

    /// Frame `t` as a `height × width` array view.
    pub fn frame_view(&self, t: usize) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((self.height, self.width), self.frame(t)).expect("frame shape")
    }

    /// The spectrum (values along the energy axis) of pixel `p`.
    pub fn spectrum(&self, p: usize) -> Vec<f64> {
        let n = self.pixels();
        (0..self.frames).map(|t| self.data[t * n + p]).collect()
    }

    /// Same dimensions and metadata, new values.
    pub fn with_data(&self, data: Vec<f64>) -> Result<Self> {
        let mut out = Self::new(self.width, self.height, self.frames, data)?;
        out.energies = self.energies.clone();
        out.peak = self.peak;
        Ok(out)
    }

    /// Keeps only the listed frames (in the given order).
    pub fn select_frames(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::InvalidParameter("no frames selected".into()));
        }
        let mut data = Vec::with_capacity(indices.len() * self.pixels());
        for &t in indices {
            if t >= self.frames {
                return Err(Error::Dimension(format!("frame {t} out of range")));
            }
            data.extend_from_slice(self.frame(t));
        }
        let mut out = Self::new(self.width, self.height, indices.len(), data)?;
        out.peak = self.peak;
        if let Some(e) = &self.energies {
            out = out.with_energies(indices.iter().map(|&t| e[t]).collect())?;
        }
        Ok(out)
    }

    /// Adds a constant to every value.
    pub fn offset(&self, c: f64) -> Result<Self> {
        self.with_data(self.data.iter().map(|v| v + c).collect())
    }

    /// Multiplies every value by `a`.
    pub fn scaled(&self, a: f64) -> Result<Self> {
        self.with_data(self.data.iter().map(|v| v * a).collect())
    }
}

pub(crate) fn validate_energies(energies: &[f64], frames: usize) -> Result<()> {
    if energies.len() != frames {
        return Err(Error::Dimension(format!(
            "{} energies for {frames} frames",
            energies.len()
        )));
    }
    if let Some(index) = energies.iter().position(|e| !e.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    if let Some(i) = energies.windows(2).position(|w| w[1] <= w[0]) {
        return Err(Error::NonIncreasingEnergies { index: i + 1 });
    }
    Ok(())
}

/// Where a noise level came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseSource {
    Given,
    Estimated,
}

/// Additive Gaussian noise level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub sigma: f64,
    pub source: NoiseSource,
}

impl NoiseModel {
    pub fn given(sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::InvalidParameter(format!("sigma must be >= 0, got {sigma}")));
        }
        Ok(Self {
            sigma,
            source: NoiseSource::Given,
        })
    }
}

/// The (M·N)×T matrix whose column `t` is frame `t` flattened row-major.
///
/// Values are column-major, which is exactly the frame-major stack layout.
#[derive(Debug, Clone, PartialEq)]
pub struct StackMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl StackMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || values.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{rows}x{cols} matrix with {} values",
                values.len()
            )));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn from_array(a: ArrayView2<'_, f64>) -> Self {
        let (rows, cols) = a.dim();
        let mut values = Vec::with_capacity(rows * cols);
        for j in 0..cols {
            values.extend(a.column(j).iter().copied());
        }
        Self { rows, cols, values }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn cols(&self) -> usize {
        self.cols
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
    pub fn column(&self, j: usize) -> &[f64] {
        &self.values[j * self.rows..(j + 1) * self.rows]
    }
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.rows + i]
    }

    /// Column-major `rows × cols` view.
    pub fn view(&self) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((self.rows, self.cols).f(), &self.values).expect("matrix shape")
    }

    pub fn to_array(&self) -> Array2<f64> {
        self.view().to_owned()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

pub fn to_matrix(stack: &ImageStack) -> StackMatrix {
    StackMatrix {
        rows: stack.pixels(),
        cols: stack.frames(),
        values: stack.data.clone(),
    }
}

pub fn from_matrix(m: StackMatrix, width: usize, height: usize) -> Result<ImageStack> {
    if width * height != m.rows {
        return Err(Error::Dimension(format!(
            "matrix has {} rows, cannot reshape to {width}x{height}",
            m.rows
        )));
    }
    ImageStack::new(width, height, m.cols, m.values)
}

/// Noise gain of `x - mean3x3(x)` for white noise: sqrt(1 - 1/9).
const HIGHPASS_GAIN: f64 = 0.942_809_041_582_063_4;
/// Converts a median absolute deviation into a Gaussian standard deviation.
const MAD_TO_SIGMA: f64 = 1.482_602_218_505_602;

/// Robust per-frame noise estimate, aggregated by median over frames.
pub fn estimate_noise_sigma(stack: &ImageStack) -> Result<NoiseModel> {
    if stack.pixels() < 16 {
        return Err(Error::Dimension(format!(
            "noise estimation needs at least 16 pixels per frame, got {}",
            stack.pixels()
        )));
    }
    let (w, h) = (stack.width(), stack.height());
    let mut per_frame = par::map_range(stack.frames(), |t| frame_noise_sigma(stack.frame(t), w, h));
    let sigma = median_in_place(&mut per_frame);
    Ok(NoiseModel {
        sigma,
        source: NoiseSource::Estimated,
    })
}

/// MAD-based sigma for a single frame.
pub fn frame_noise_sigma(frame: &[f64], width: usize, height: usize) -> f64 {
    let mut residual = Vec::with_capacity(frame.len());
    let interior = width >= 3 && height >= 3;
    let (ys, xs) = if interior {
        (1..height - 1, 1..width - 1)
    } else {
        (0..height, 0..width)
    };
    for y in ys {
        for x in xs.clone() {
            let mut sum = 0.0;
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let yy = crate::denoise::reflect(y as isize + dy, height);
                    let xx = crate::denoise::reflect(x as isize + dx, width);
                    sum += frame[yy * width + xx] - frame[y * width + x];
                }
            }
            // x - mean(x + d) computed relative to the center so constant
            // offsets cancel exactly
            residual.push(-sum / 9.0);
        }
    }
    let med = median_in_place(&mut residual.clone());
    let mut dev: Vec<f64> = residual.iter().map(|r| (r - med).abs()).collect();
    MAD_TO_SIGMA * median_in_place(&mut dev) / HIGHPASS_GAIN
}

/// Median of a slice (reorders it). Mean of the two middle values for even
/// lengths; 0 for an empty slice.
pub fn median_in_place(v: &mut [f64]) -> f64 {
    let n = v.len();
    if n == 0 {
        return 0.0;
    }
    let mid = n / 2;
    let (_, m, _) = v.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    let upper = *m;
    if n % 2 == 1 {
        upper
    } else {
        let lower = v[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    fn seeded_stack(w: usize, h: usize, t: usize, seed: u64) -> ImageStack {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.0, 1.0).unwrap();
        ImageStack::new(w, h, t, (0..w * h * t).map(|_| n.sample(&mut rng)).collect()).unwrap()
    }

    #[test]
    fn matrix_columns_are_frames() {
        let s = ImageStack::new(2, 1, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let m = to_matrix(&s);
        assert_eq!((m.rows(), m.cols()), (2, 2));
        assert_eq!(m.column(0), &[1.0, 2.0]);
        assert_eq!(m.column(1), &[3.0, 4.0]);
        assert_eq!(m.get(1, 1), 4.0);
    }

    #[test]
    fn matrix_round_trip_is_bitwise() {
        let s = seeded_stack(8, 8, 5, 3);
        let back = from_matrix(to_matrix(&s), 8, 8).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn matrix_shape_arithmetic() {
        let s = ImageStack::zeros(128, 128, 64).unwrap();
        let m = to_matrix(&s);
        assert_eq!((m.rows(), m.cols()), (16384, 64));
    }

    #[test]
    fn from_matrix_rejects_bad_shape() {
        let m = StackMatrix::new(6, 2, vec![0.0; 12]).unwrap();
        assert!(matches!(from_matrix(m, 4, 2), Err(Error::Dimension(_))));
    }

    #[test]
    fn stack_invariants_enforced() {
        assert!(ImageStack::new(0, 1, 1, vec![]).is_err());
        assert!(ImageStack::new(2, 2, 1, vec![0.0; 3]).is_err());
        assert!(matches!(
            ImageStack::new(1, 1, 2, vec![0.0, f64::NAN]),
            Err(Error::NonFinite { index: 1 })
        ));
        let s = ImageStack::zeros(1, 1, 3).unwrap();
        assert!(matches!(
            s.clone().with_energies(vec![1.0, 2.0, 2.0]),
            Err(Error::NonIncreasingEnergies { index: 2 })
        ));
        assert!(s.with_energies(vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn constant_stack_has_zero_sigma() {
        let s = ImageStack::new(8, 8, 3, vec![42.0; 192]).unwrap();
        assert_eq!(estimate_noise_sigma(&s).unwrap().sigma, 0.0);
    }

    #[test]
    fn sigma_of_white_noise() {
        let s = seeded_stack(128, 128, 4, 11).scaled(7.0).unwrap();
        let est = estimate_noise_sigma(&s).unwrap();
        assert_eq!(est.source, NoiseSource::Estimated);
        assert!((est.sigma - 7.0).abs() < 0.1, "{}", est.sigma);
    }

    #[test]
    fn sigma_translation_and_scale() {
        let s = seeded_stack(32, 32, 3, 5);
        let base = estimate_noise_sigma(&s).unwrap().sigma;
        let shifted = estimate_noise_sigma(&s.offset(1234.5).unwrap()).unwrap().sigma;
        assert!((shifted - base).abs() < 1e-9);
        let scaled = estimate_noise_sigma(&s.scaled(3.5).unwrap()).unwrap().sigma;
        assert!((scaled - 3.5 * base).abs() <= 1e-6 * 3.5 * base);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median_in_place(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median_in_place(&mut [4.0, 1.0, 3.0, 2.0]), 2.5);
        assert_eq!(median_in_place(&mut []), 0.0);
    }

    proptest::proptest! {
        #[test]
        fn matrix_round_trip_any_shape(w in 1usize..12, h in 1usize..12, t in 1usize..6, seed in 0u64..1000) {
            let s = seeded_stack(w, h, t, seed);
            let m = to_matrix(&s);
            proptest::prop_assert_eq!(m.rows(), w * h);
            proptest::prop_assert_eq!(from_matrix(m, w, h).unwrap(), s);
        }
    }
}
