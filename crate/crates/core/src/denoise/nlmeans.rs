//! Non-local means with box-shaped patches, evaluated one search offset at a
//! time through running patch sums.

use ndarray::{Array2, ArrayView2};

use super::reflect;
use crate::par;

/// Output rows handled per parallel work item.
const BAND_ROWS: usize = 32;

/// Weight of a candidate pixel: `exp(−max(0, d²/p² − 2σ²) / (h·σ)²)` where
/// `d²` is the summed squared difference over the p×p patches.
pub(super) fn nl_means(
    img: ArrayView2<'_, f64>,
    sigma: f64,
    patch: usize,
    search: usize,
    h_factor: f64,
) -> Array2<f64> {
    let (h, w) = img.dim();
    if sigma <= 0.0 {
        return img.to_owned();
    }
    let pr = (patch / 2) as isize;
    let sr = (search / 2) as isize;
    let margin = pr + sr;
    let pw = w + 2 * margin as usize;
    let ph = h + 2 * margin as usize;
    let padded: Vec<f64> = (0..ph)
        .flat_map(|y| {
            let yy = reflect(y as isize - margin, h);
            (0..pw).map(move |x| img[[yy, reflect(x as isize - margin, w)]])
        })
        .collect();
    let at = |y: isize, x: isize| padded[(y + margin) as usize * pw + (x + margin) as usize];

    let var2 = 2.0 * sigma * sigma;
    let inv_h2 = 1.0 / (h_factor * sigma).powi(2);
    let inv_area = 1.0 / (patch * patch) as f64;

    let mut out = vec![0.0; h * w];
    par::for_each_chunk_mut(&mut out, BAND_ROWS * w, |band, chunk| {
        let y0 = band * BAND_ROWS;
        let rows = chunk.len() / w;
        let mut acc = vec![0.0; rows * w];
        let mut wsum = vec![0.0; rows * w];
        // squared differences over the band plus patch margin
        let dh = rows + 2 * pr as usize;
        let dw = w + 2 * pr as usize;
        let mut diff = vec![0.0; dh * dw];
        let mut colsum = vec![0.0; dw];
        for oy in -sr..=sr {
            for ox in -sr..=sr {
                for dy in 0..dh {
                    let y = (y0 + dy) as isize - pr;
                    for dx in 0..dw {
                        let x = dx as isize - pr;
                        let d = at(y, x) - at(y + oy, x + ox);
                        diff[dy * dw + dx] = d * d;
                    }
                }
                // vertical running sums over `patch` rows, then horizontal
                for r in 0..rows {
                    if r == 0 {
                        colsum.iter_mut().for_each(|c| *c = 0.0);
                        for dy in 0..patch {
                            for (c, d) in colsum.iter_mut().zip(&diff[dy * dw..(dy + 1) * dw]) {
                                *c += d;
                            }
                        }
                    } else {
                        let add = &diff[(r + patch - 1) * dw..(r + patch) * dw];
                        let sub = &diff[(r - 1) * dw..r * dw];
                        for ((c, a), s) in colsum.iter_mut().zip(add).zip(sub) {
                            *c += a - s;
                        }
                    }
                    let mut run: f64 = colsum[..patch].iter().sum();
                    for x in 0..w {
                        if x > 0 {
                            run += colsum[x + patch - 1] - colsum[x - 1];
                        }
                        let dist = (run.max(0.0) * inv_area - var2).max(0.0);
                        let weight = (-dist * inv_h2).exp();
                        let idx = r * w + x;
                        acc[idx] += weight * at((y0 + r) as isize + oy, x as isize + ox);
                        wsum[idx] += weight;
                    }
                }
            }
        }
        for ((o, a), s) in chunk.iter_mut().zip(&acc).zip(&wsum) {
            *o = a / s;
        }
    });
    Array2::from_shape_vec((h, w), out).expect("shape")
}
