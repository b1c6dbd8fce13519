//! Browser demo: weight-matrix heatmap, hard vs confidence tiling of a
//! gain-jittered synthetic slide, and hue rotation against the value loss.
//!
//! Each `demo_*` function works on plain Rust types and is tested natively;
//! the `#[wasm_bindgen]` wrappers only convert errors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vmstain_core::colorspace::{rotate_hue, value_channel};
use vmstain_core::losses::value_loss;
use vmstain_core::metrics::{histogram_correlation, seam_discontinuity};
use vmstain_core::patchgrid::{split, GridSpec, PatchRecord};
use vmstain_core::tiling::{blend_streaming, build_weight_matrix, hard_tile};
use vmstain_core::{PlanarImage, Result};
use wasm_bindgen::prelude::*;

/// Largest slide side the page may request; keeps the tab responsive.
pub const MAX_SIDE: usize = 1024;

fn rgba(img: &PlanarImage) -> Vec<u8> {
    img.to_rgb8()
        .chunks_exact(3)
        .flat_map(|px| [px[0], px[1], px[2], 255])
        .collect()
}

fn check_side(side: usize) -> Result<()> {
    if side == 0 || side > MAX_SIDE {
        return Err(vmstain_core::Error::config(format!("side must be in 1..={MAX_SIDE}, got {side}")));
    }
    Ok(())
}

/// Synthetic H&E-like slide: pink stroma with purple nuclei-ish blobs.
pub fn synthetic_slide(side: usize, seed: u64) -> Result<PlanarImage> {
    check_side(side)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blobs: Vec<(f64, f64, f64)> = (0..(side * side / 900).max(4))
        .map(|_| {
            let r = rng.random_range(0.0..side as f64);
            let c = rng.random_range(0.0..side as f64);
            (r, c, rng.random_range(3.0..9.0))
        })
        .collect();
    let freq = std::f64::consts::TAU / side as f64 * rng.random_range(1.0..3.0);
    PlanarImage::from_fn(side, side, |r, c| {
        let (rf, cf) = (r as f64, c as f64);
        let stroma = 0.5 + 0.5 * (freq * rf).sin() * (freq * 0.7 * cf).cos();
        let mut px = [0.93 - 0.10 * stroma, 0.72 - 0.25 * stroma, 0.82 - 0.12 * stroma];
        for &(br, bc, rad) in &blobs {
            let d2 = (rf - br).powi(2) + (cf - bc).powi(2);
            if d2 < rad * rad {
                let k = 1.0 - d2 / (rad * rad);
                px = [px[0] - 0.45 * k, px[1] - 0.45 * k, px[2] - 0.2 * k];
            }
        }
        px.map(|v| v.clamp(0.0, 1.0))
    })
}

/// Weight matrix mapped to grayscale, brightest at 1.
pub fn demo_weights(side: usize, n: usize, m: usize) -> Result<(Vec<u8>, Vec<f64>)> {
    check_side(side)?;
    let w = build_weight_matrix(&GridSpec::square(side, n, m)?)?;
    let mut rgba = Vec::with_capacity(4 * side * side);
    for r in 0..side {
        for c in 0..side {
            let g = (w.get(r, c).sqrt() * 255.0).round() as u8;
            rgba.extend([g, g, g, 255]);
        }
    }
    let center = side / 2;
    let stats = vec![w.get(0, 0), w.get(0, center), w.get(center, center), w.spec().patch_count() as f64];
    Ok((rgba, stats))
}

fn jitter(patches: Vec<PatchRecord>, rng: &mut ChaCha8Rng, amount: f64) -> Vec<PatchRecord> {
    patches
        .into_iter()
        .map(|mut p| {
            let g: f64 = rng.random_range(1.0 - amount..=1.0 + amount);
            p.pixels = p.pixels.map_pixels(|px| px.map(|v| v * g));
            p
        })
        .collect()
}

pub struct TilingDemo {
    pub hard: PlanarImage,
    pub blended: PlanarImage,
    pub seam_hard: f64,
    pub seam_blended: f64,
}

/// Tiles the same slide with hard `n x n` tiles and with overlapping
/// stride-`m` patches, each patch scaled by a random gain in `1 ± jitter`.
pub fn demo_tiling(side: usize, n: usize, m: usize, jitter_amount: f64, seed: u64) -> Result<TilingDemo> {
    if !(0.0..=0.5).contains(&jitter_amount) {
        return Err(vmstain_core::Error::config(format!("jitter must be in [0, 0.5], got {jitter_amount}")));
    }
    let slide = synthetic_slide(side, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let hard_spec = GridSpec::square(side, n, n)?;
    let conf_spec = GridSpec::square(side, n, m)?;
    let hard = hard_tile(&jitter(split(&slide, &hard_spec)?, &mut rng, jitter_amount), side, side, n)?.image;
    let blended = blend_streaming(jitter(split(&slide, &conf_spec)?, &mut rng, jitter_amount), &conf_spec)?.image;
    Ok(TilingDemo {
        seam_hard: seam_discontinuity(&hard, n)?,
        seam_blended: seam_discontinuity(&blended, n)?,
        hard,
        blended,
    })
}

pub struct HueDemo {
    pub rotated: PlanarImage,
    pub value: PlanarImage,
    pub value_loss: f64,
    pub hist_corr: f64,
}

/// Rotates the slide's hue; the value channel, and so the value loss, stay put.
pub fn demo_hue(side: usize, degrees: f64, seed: u64) -> Result<HueDemo> {
    let slide = synthetic_slide(side, seed)?;
    let rotated = rotate_hue(&slide, degrees);
    let v = value_channel(&slide);
    let value = PlanarImage::from_fn(side, side, |r, c| [v.get(r, c); 3])?;
    Ok(HueDemo {
        value_loss: value_loss(&slide, &rotated)?,
        hist_corr: histogram_correlation(&slide, &rotated)?,
        rotated,
        value,
    })
}

fn js(e: vmstain_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// RGBA pixels of the synthetic slide.
#[wasm_bindgen]
pub fn slide_rgba(side: usize, seed: u64) -> std::result::Result<Vec<u8>, JsError> {
    synthetic_slide(side, seed).map(|s| rgba(&s)).map_err(js)
}

#[wasm_bindgen]
pub struct WeightView {
    rgba: Vec<u8>,
    stats: Vec<f64>,
}

#[wasm_bindgen]
impl WeightView {
    #[wasm_bindgen(getter)]
    pub fn rgba(&self) -> Vec<u8> {
        self.rgba.clone()
    }

    /// `[corner, edge midpoint, center, patch count]`.
    #[wasm_bindgen(getter)]
    pub fn stats(&self) -> Vec<f64> {
        self.stats.clone()
    }
}

#[wasm_bindgen]
pub fn weight_heatmap(side: usize, n: usize, m: usize) -> std::result::Result<WeightView, JsError> {
    let (rgba, stats) = demo_weights(side, n, m).map_err(js)?;
    Ok(WeightView { rgba, stats })
}

#[wasm_bindgen]
pub struct TilingView {
    hard: Vec<u8>,
    blended: Vec<u8>,
    pub seam_hard: f64,
    pub seam_blended: f64,
}

#[wasm_bindgen]
impl TilingView {
    #[wasm_bindgen(getter)]
    pub fn hard(&self) -> Vec<u8> {
        self.hard.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn blended(&self) -> Vec<u8> {
        self.blended.clone()
    }
}

#[wasm_bindgen]
pub fn compare_tiling(side: usize, n: usize, m: usize, jitter: f64, seed: u64) -> std::result::Result<TilingView, JsError> {
    let d = demo_tiling(side, n, m, jitter, seed).map_err(js)?;
    Ok(TilingView {
        hard: rgba(&d.hard),
        blended: rgba(&d.blended),
        seam_hard: d.seam_hard,
        seam_blended: d.seam_blended,
    })
}

#[wasm_bindgen]
pub struct HueView {
    rotated: Vec<u8>,
    value: Vec<u8>,
    pub value_loss: f64,
    pub hist_corr: f64,
}

#[wasm_bindgen]
impl HueView {
    #[wasm_bindgen(getter)]
    pub fn rotated(&self) -> Vec<u8> {
        self.rotated.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn value(&self) -> Vec<u8> {
        self.value.clone()
    }
}

#[wasm_bindgen]
pub fn rotate_slide_hue(side: usize, degrees: f64, seed: u64) -> std::result::Result<HueView, JsError> {
    let d = demo_hue(side, degrees, seed).map_err(js)?;
    Ok(HueView { rotated: rgba(&d.rotated), value: rgba(&d.value), value_loss: d.value_loss, hist_corr: d.hist_corr })
}
