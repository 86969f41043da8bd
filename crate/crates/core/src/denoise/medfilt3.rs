use super::reflect;
use crate::error::{Error, Result};
use crate::par;
use crate::stack::{median_in_place, ImageStack};

/// Per-voxel median over a `window³` neighborhood (x, y, energy) with
/// reflected boundaries.
pub fn medfilt3(stack: &ImageStack, window: usize) -> Result<ImageStack> {
    if window == 0 || window % 2 == 0 {
        return Err(Error::InvalidParameter(format!("medfilt3 window must be odd and >= 1, got {window}")));
    }
    let (w, h, t) = (stack.width(), stack.height(), stack.frames());
    if window > w.min(h).min(t) {
        return Err(Error::Dimension(format!(
            "medfilt3 window {window} exceeds stack dimension {w}x{h}x{t}"
        )));
    }
    if window == 1 {
        return stack.with_data(stack.data().to_vec());
    }
    let r = (window / 2) as isize;
    let data = stack.data();
    let frame_len = w * h;
    let mut out = vec![0.0; data.len()];
    par::for_each_chunk_mut(&mut out, frame_len, |k, chunk| {
        let mut buf = Vec::with_capacity(window * window * window);
        for y in 0..h {
            for x in 0..w {
                buf.clear();
                for dt in -r..=r {
                    let base = reflect(k as isize + dt, t) * frame_len;
                    for dy in -r..=r {
                        let row = base + reflect(y as isize + dy, h) * w;
                        for dx in -r..=r {
                            buf.push(data[row + reflect(x as isize + dx, w)]);
                        }
                    }
                }
                chunk[y * w + x] = median_in_place(&mut buf);
            }
        }
    });
    stack.with_data(out)
}
