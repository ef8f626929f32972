//! Statistical patch features standing in for a frozen visual backbone.
//!
//! Each `P×P` patch yields (mean intensity, intensity std, patch row, patch
//! column), intensities scaled to `[0, 1]` and positions to patch centres in
//! `(0, 1)`. Rasters whose sides are not multiples of `P` are padded with
//! white. Only the projection applied afterwards is trainable.

use crate::corpus::GrayImage;
use crate::error::{Error, Result};

pub const PATCH_FEATURES: usize = 4;
const PAD_VALUE: f64 = 255.0;

pub fn patch_grid(h: usize, w: usize, patch: usize) -> (usize, usize) {
    (h.div_ceil(patch), w.div_ceil(patch))
}

pub fn featurize_patches(image: &GrayImage, patch: usize) -> Result<Vec<[f64; PATCH_FEATURES]>> {
    if image.h == 0 || image.w == 0 {
        return Err(Error::Validation("empty raster".into()));
    }
    if patch == 0 {
        return Err(Error::Config("patch size must be positive".into()));
    }
    if image.pixels.len() != image.h * image.w {
        return Err(Error::Validation(format!(
            "raster holds {} pixels for {}x{}",
            image.pixels.len(),
            image.h,
            image.w
        )));
    }
    let (rows, cols) = patch_grid(image.h, image.w, patch);
    let n = (patch * patch) as f64;
    let mut out = Vec::with_capacity(rows * cols);
    for pr in 0..rows {
        for pc in 0..cols {
            let (mut sum, mut sq) = (0.0, 0.0);
            for r in pr * patch..(pr + 1) * patch {
                for c in pc * patch..(pc + 1) * patch {
                    let v = if r < image.h && c < image.w {
                        image.get(r, c) as f64
                    } else {
                        PAD_VALUE
                    };
                    sum += v;
                    sq += v * v;
                }
            }
            let mean = sum / n;
            let var = (sq / n - mean * mean).max(0.0);
            out.push([
                mean / 255.0,
                var.sqrt() / 255.0,
                (pr as f64 + 0.5) / rows as f64,
                (pc as f64 + 0.5) / cols as f64,
            ]);
        }
    }
    Ok(out)
}
