use super::alpha::{Polygon, Ring};
use super::mask::MaskImage;

/// Distance within which a lattice point counts as lying on an edge.
const ON_EDGE: f64 = 1e-9;

fn rings(polygons: &[Polygon], fill_holes: bool) -> Vec<&Ring> {
    polygons
        .iter()
        .flat_map(|p| std::iter::once(&p.outer).chain(if fill_holes { [].iter() } else { p.holes.iter() }))
        .collect()
}

/// Scanline fill with the even-odd rule. Pixel `(x, y)` is sampled at the
/// integer point `(x, y)`; samples on an edge are included. With
/// `fill_holes` only the outer rings are used.
pub fn rasterize(polygons: &[Polygon], width: usize, height: usize, fill_holes: bool) -> MaskImage {
    let mut mask = MaskImage::new(width, height);
    if width == 0 || height == 0 {
        return mask;
    }
    let rings = rings(polygons, fill_holes);
    let mut xs: Vec<f64> = Vec::new();
    for y in 0..height {
        let yf = y as f64;
        xs.clear();
        for ring in &rings {
            for i in 0..ring.len() {
                let (a, b) = (ring[i], ring[(i + 1) % ring.len()]);
                if (a[1] > yf) != (b[1] > yf) {
                    xs.push(a[0] + (yf - a[1]) * (b[0] - a[0]) / (b[1] - a[1]));
                }
            }
        }
        xs.sort_by(f64::total_cmp);
        for pair in xs.chunks_exact(2) {
            let x0 = pair[0].ceil().max(0.0);
            let x1 = pair[1].floor().min((width - 1) as f64);
            let mut x = x0;
            while x <= x1 {
                mask.set(x as usize, y, true);
                x += 1.0;
            }
        }
    }
    for ring in &rings {
        for i in 0..ring.len() {
            mark_edge(&mut mask, ring[i], ring[(i + 1) % ring.len()]);
        }
    }
    mask
}

/// Sets every in-image lattice point on segment `ab`.
fn mark_edge(mask: &mut MaskImage, a: [f64; 2], b: [f64; 2]) {
    let (w, h) = (mask.width() as f64, mask.height() as f64);
    let set = |mask: &mut MaskImage, x: f64, y: f64| {
        if x >= 0.0 && y >= 0.0 && x < w && y < h {
            mask.set(x as usize, y as usize, true);
        }
    };
    if (a[1] - b[1]).abs() <= ON_EDGE {
        let y = a[1].round();
        if (a[1] - y).abs() <= ON_EDGE {
            let (lo, hi) = (a[0].min(b[0]), a[0].max(b[0]));
            let mut x = (lo - ON_EDGE).ceil().max(0.0);
            while x <= hi + ON_EDGE && x < w {
                set(mask, x, y);
                x += 1.0;
            }
        }
        return;
    }
    let (lo, hi) = (a[1].min(b[1]), a[1].max(b[1]));
    let mut y = (lo - ON_EDGE).ceil().max(0.0);
    while y <= hi + ON_EDGE && y < h {
        let t = ((y - a[1]) / (b[1] - a[1])).clamp(0.0, 1.0);
        let x = a[0] + t * (b[0] - a[0]);
        let xr = x.round();
        if (x - xr).abs() <= ON_EDGE {
            set(mask, xr, y);
        }
        y += 1.0;
    }
}
