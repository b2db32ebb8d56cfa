use super::mask::MaskImage;
use crate::error::{Error, Result};

/// Depth ordering of instances with their visible (inmodal) masks.
#[derive(Debug, Clone, PartialEq)]
pub struct Occlusion {
    /// Instance indices from nearest to farthest.
    pub order: Vec<usize>,
    /// Nearest covering instance per pixel, row-major.
    pub winner: Vec<Option<usize>>,
    pub inmodal: Vec<MaskImage>,
}

/// Orders instances by ascending median depth (ties by index) and gives each
/// pixel to the nearest instance whose amodal mask covers it.
pub fn occlusion_order(amodal: &[MaskImage], depths: &[f64]) -> Result<Occlusion> {
    if amodal.len() != depths.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} masks but {} depths",
            amodal.len(),
            depths.len()
        )));
    }
    if let Some(d) = depths.iter().find(|d| d.is_nan()) {
        return Err(Error::NonFinite(format!("instance depth {d}")));
    }
    let (w, h) = match amodal.first() {
        Some(m) => (m.width(), m.height()),
        None => {
            return Ok(Occlusion {
                order: Vec::new(),
                winner: Vec::new(),
                inmodal: Vec::new(),
            })
        }
    };
    if amodal.iter().any(|m| m.width() != w || m.height() != h) {
        return Err(Error::ShapeMismatch("instance masks differ in size".into()));
    }
    let mut order: Vec<usize> = (0..amodal.len()).collect();
    order.sort_by(|&a, &b| depths[a].total_cmp(&depths[b]).then(a.cmp(&b)));
    let mut winner = vec![None; w * h];
    let mut inmodal = vec![MaskImage::new(w, h); amodal.len()];
    for &i in &order {
        for (px, slot) in winner.iter_mut().enumerate() {
            if slot.is_none() && amodal[i].pixels()[px] {
                *slot = Some(i);
                inmodal[i].set(px % w, px / w, true);
            }
        }
    }
    Ok(Occlusion { order, winner, inmodal })
}
