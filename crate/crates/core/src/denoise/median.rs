use ndarray::{Array2, ArrayView2};

use super::reflect;
use crate::stack::median_in_place;

pub(super) fn median2d(img: ArrayView2<'_, f64>, window: usize) -> Array2<f64> {
    let (h, w) = img.dim();
    let r = (window / 2) as isize;
    let mut buf = Vec::with_capacity(window * window);
    Array2::from_shape_fn((h, w), |(y, x)| {
        buf.clear();
        for dy in -r..=r {
            let yy = reflect(y as isize + dy, h);
            for dx in -r..=r {
                buf.push(img[[yy, reflect(x as isize + dx, w)]]);
            }
        }
        median_in_place(&mut buf)
    })
}
