//! 8-bit PNG rendering of chemical maps.
//!
//! Values are mapped linearly onto the viridis colormap (dark purple for the
//! minimum, yellow for the maximum), interpolated between the 9 anchors
//! below. Invalid pixels are black.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::error::{Error, Result};
use crate::xanes::ChemicalMap;

const VIRIDIS: [[u8; 3]; 9] = [
    [68, 1, 84],
    [71, 44, 122],
    [59, 81, 139],
    [44, 113, 142],
    [33, 144, 141],
    [39, 173, 129],
    [92, 200, 99],
    [170, 220, 50],
    [253, 231, 37],
];

/// Color for `t` in [0, 1] (clamped).
pub fn colormap(t: f64) -> [u8; 3] {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let x = t * (VIRIDIS.len() - 1) as f64;
    let i = (x.floor() as usize).min(VIRIDIS.len() - 2);
    let f = x - i as f64;
    let (a, b) = (VIRIDIS[i], VIRIDIS[i + 1]);
    std::array::from_fn(|c| (a[c] as f64 + f * (b[c] as f64 - a[c] as f64)).round() as u8)
}

/// RGB pixels of `map`, scaled over `range` or the valid min..max.
pub fn map_rgb(map: &ChemicalMap, range: Option<(f64, f64)>) -> Vec<u8> {
    let (lo, hi) = range.unwrap_or_else(|| {
        map.values
            .iter()
            .zip(&map.valid)
            .filter(|(_, ok)| **ok)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (v, _)| (lo.min(*v), hi.max(*v)))
    });
    let span = if hi > lo { hi - lo } else { 1.0 };
    map.values
        .iter()
        .zip(&map.valid)
        .flat_map(|(v, ok)| if *ok { colormap((v - lo) / span) } else { [0, 0, 0] })
        .collect()
}

pub fn render_map(map: &ChemicalMap, path: &Path, range: Option<(f64, f64)>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), map.width as u32, map.height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut w = enc.write_header()?;
    w.write_image_data(&map_rgb(map, range))?;
    w.finish()?;
    Ok(())
}
