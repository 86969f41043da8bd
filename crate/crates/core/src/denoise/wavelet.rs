use ndarray::{s, Array2, ArrayView2};

use super::reflect;

const INV_SQRT2: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Orthonormal separable Haar shrinkage. Images whose sides are not a
/// multiple of `2^levels` are reflect-padded and cropped back.
pub(super) fn haar_soft(img: ArrayView2<'_, f64>, sigma: f64, levels: usize) -> Array2<f64> {
    let (h, w) = img.dim();
    let block = 1usize << levels.min(30);
    let ph = h.div_ceil(block) * block;
    let pw = w.div_ceil(block) * block;
    let mut a = Array2::from_shape_fn((ph, pw), |(y, x)| img[[reflect(y as isize, h), reflect(x as isize, w)]]);

    let (mut ch, mut cw) = (ph, pw);
    let mut sizes = Vec::new();
    for _ in 0..levels {
        if ch < 2 || cw < 2 {
            break;
        }
        forward_level(&mut a, ch, cw);
        sizes.push((ch, cw));
        let (hh, hw) = (ch / 2, cw / 2);
        let n = (hh * hw) as f64;
        let t = sigma * (2.0 * n.ln()).max(0.0).sqrt();
        for (ys, xs) in [(0..hh, hw..cw), (hh..ch, 0..hw), (hh..ch, hw..cw)] {
            a.slice_mut(s![ys, xs]).mapv_inplace(|c| soft(c, t));
        }
        ch = hh;
        cw = hw;
    }
    for &(ch, cw) in sizes.iter().rev() {
        inverse_level(&mut a, ch, cw);
    }
    a.slice(s![..h, ..w]).to_owned()
}

fn soft(c: f64, t: f64) -> f64 {
    if c > t {
        c - t
    } else if c < -t {
        c + t
    } else {
        0.0
    }
}

fn forward_level(a: &mut Array2<f64>, h: usize, w: usize) {
    let mut buf = vec![0.0; h.max(w)];
    for y in 0..h {
        for i in 0..w / 2 {
            let (p, q) = (a[[y, 2 * i]], a[[y, 2 * i + 1]]);
            buf[i] = (p + q) * INV_SQRT2;
            buf[w / 2 + i] = (p - q) * INV_SQRT2;
        }
        for x in 0..w {
            a[[y, x]] = buf[x];
        }
    }
    for x in 0..w {
        for i in 0..h / 2 {
            let (p, q) = (a[[2 * i, x]], a[[2 * i + 1, x]]);
            buf[i] = (p + q) * INV_SQRT2;
            buf[h / 2 + i] = (p - q) * INV_SQRT2;
        }
        for y in 0..h {
            a[[y, x]] = buf[y];
        }
    }
}

fn inverse_level(a: &mut Array2<f64>, h: usize, w: usize) {
    let mut buf = vec![0.0; h.max(w)];
    for x in 0..w {
        for i in 0..h / 2 {
            let (s, d) = (a[[i, x]], a[[h / 2 + i, x]]);
            buf[2 * i] = (s + d) * INV_SQRT2;
            buf[2 * i + 1] = (s - d) * INV_SQRT2;
        }
        for y in 0..h {
            a[[y, x]] = buf[y];
        }
    }
    for y in 0..h {
        for i in 0..w / 2 {
            let (s, d) = (a[[y, i]], a[[y, w / 2 + i]]);
            buf[2 * i] = (s + d) * INV_SQRT2;
            buf[2 * i + 1] = (s - d) * INV_SQRT2;
        }
        for x in 0..w {
            a[[y, x]] = buf[x];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_threshold_is_perfect_reconstruction() {
        let img = Array2::from_shape_fn((13, 10), |(y, x)| ((y * 7 + x * 3) % 11) as f64);
        let out = haar_soft(img.view(), 0.0, 3);
        for (a, b) in out.iter().zip(img.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn transform_is_orthonormal() {
        let mut a = Array2::from_shape_fn((8, 8), |(y, x)| (y as f64 - 2.5) * (x as f64 + 1.0));
        let e0: f64 = a.iter().map(|v| v * v).sum();
        forward_level(&mut a, 8, 8);
        let e1: f64 = a.iter().map(|v| v * v).sum();
        assert!((e0 - e1).abs() < 1e-9 * e0);
    }
}
