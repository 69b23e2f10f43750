use super::render::MARGIN;
use super::Image;
use crate::error::{Error, Result};

pub const DEFAULT_THICKNESS: usize = 2;

/// [`rasterize_with`] at [`DEFAULT_THICKNESS`].
pub fn rasterize(traces: &[Vec<(f64, f64)>], target_height: usize) -> Result<Image> {
    rasterize_with(traces, target_height, DEFAULT_THICKNESS)
}

/// Draws the traces as connected line segments of `thickness` pixels.
///
/// The bounding box is scaled, aspect preserved, so that its height fills
/// `target_height` less a margin on each side. A box of zero height is
/// scaled by its width and centred vertically; a box of a single point
/// becomes one dot.
pub fn rasterize_with(traces: &[Vec<(f64, f64)>], target_height: usize, thickness: usize) -> Result<Image> {
    let points = || traces.iter().flatten();
    if points().next().is_none() {
        return Err(Error::EmptyTraces);
    }
    if thickness == 0 || target_height < 3 {
        return Err(Error::MalformedImage(format!(
            "cannot rasterize at height {target_height} with thickness {thickness}"
        )));
    }
    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &(x, y) in points() {
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    let (w, h) = (x1 - x0, y1 - y0);
    let margin = MARGIN.min((target_height - 1) / 4);
    let inner = (target_height - 1 - 2 * margin) as f64;
    let scale = if h > 0.0 {
        inner / h
    } else if w > 0.0 {
        inner / w
    } else {
        0.0
    };
    let width = (w * scale).round() as usize + 2 * margin + 1;
    let top = if h > 0.0 { margin as f64 } else { (target_height - 1) as f64 / 2.0 };
    let left = if w > 0.0 { margin as f64 } else { (width - 1) as f64 / 2.0 };
    let map = |(x, y): (f64, f64)| (left + (x - x0) * scale, top + (y - y0) * scale);

    let mut img = Image::blank(target_height, width);
    let half = (thickness - 1) as f64 / 2.0;
    let mut stamp = |(px, py): (f64, f64)| {
        let c0 = (px - half).round() as isize;
        let r0 = (py - half).round() as isize;
        for r in r0..r0 + thickness as isize {
            for c in c0..c0 + thickness as isize {
                if r >= 0 && c >= 0 && (r as usize) < target_height && (c as usize) < width {
                    img.set(r as usize, c as usize, 1.0);
                }
            }
        }
    };
    for trace in traces {
        let Some(&first) = trace.first() else { continue };
        stamp(map(first));
        for seg in trace.windows(2) {
            let (a, b) = (map(seg[0]), map(seg[1]));
            let len = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
            let steps = (len * 4.0).ceil().max(1.0) as usize;
            for k in 1..=steps {
                let t = k as f64 / steps as f64;
                stamp((a.0 + (b.0 - a.0) * t, a.1 + (b.1 - a.1) * t));
            }
        }
    }
    Ok(img)
}
