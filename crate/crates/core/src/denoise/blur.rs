use ndarray::{Array2, ArrayView2};

use super::reflect;

pub(super) fn gaussian_blur(img: ArrayView2<'_, f64>, radius: usize) -> Array2<f64> {
    let std = radius as f64 / 2.0;
    let r = radius as isize;
    let mut kernel: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * std * std)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);

    let (h, w) = img.dim();
    let mut tmp = Array2::<f64>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            tmp[[y, x]] = kernel
                .iter()
                .enumerate()
                .map(|(i, k)| k * img[[y, reflect(x as isize + i as isize - r, w)]])
                .sum();
        }
    }
    let mut out = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            out[[y, x]] = kernel
                .iter()
                .enumerate()
                .map(|(i, k)| k * tmp[[reflect(y as isize + i as isize - r, h), x]])
                .sum();
        }
    }
    out
}
