//! RGB <-> HSV conversion and value-channel extraction.
//!
//! Hue is in degrees `[0, 360)`, saturation and value in `[0, 1]`.
//! Gray pixels (`max == min`) get hue 0 and black pixels get saturation 0, so
//! every converted pixel is in canonical form and can be compared exactly.

use crate::error::{Error, Result};
use crate::image::{Plane, PlanarImage};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RgbPixel {
    pub r: f64,
    pub g: f64,
    pub b: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HsvPixel {
    h: f64,
    s: f64,
    v: f64,
}

impl RgbPixel {
    pub fn new(r: f64, g: f64, b: f64) -> Result<Self> {
        for (name, x) in [("r", r), ("g", g), ("b", b)] {
            if !(x.is_finite() && (0.0..=1.0).contains(&x)) {
                return Err(Error::domain(format!("{name} = {x} is outside [0, 1]")));
            }
        }
        Ok(RgbPixel { r, g, b })
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.r, self.g, self.b]
    }
}

impl HsvPixel {
    /// Validates ranges and normalizes to canonical form
    /// (`v == 0` forces `s = 0`; `s == 0` forces `h = 0`).
    pub fn new(h: f64, s: f64, v: f64) -> Result<Self> {
        if !(h.is_finite() && (0.0..360.0).contains(&h)) {
            return Err(Error::domain(format!("hue {h} is outside [0, 360)")));
        }
        for (name, x) in [("saturation", s), ("value", v)] {
            if !(x.is_finite() && (0.0..=1.0).contains(&x)) {
                return Err(Error::domain(format!("{name} {x} is outside [0, 1]")));
            }
        }
        let s = if v == 0.0 { 0.0 } else { s };
        let h = if s == 0.0 { 0.0 } else { h };
        Ok(HsvPixel { h, s, v })
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn v(&self) -> f64 {
        self.v
    }
}

pub fn rgb_to_hsv(p: RgbPixel) -> HsvPixel {
    let RgbPixel { r, g, b } = p;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;

    let v = max;
    let s = if max == 0.0 { 0.0 } else { delta / max };
    let h = if delta == 0.0 {
        0.0
    } else if r == max {
        let h = (g - b) / delta * 60.0;
        if h < 0.0 {
            h + 360.0
        } else {
            h
        }
    } else if g == max {
        (b - r) / delta * 60.0 + 120.0
    } else {
        (r - g) / delta * 60.0 + 240.0
    };
    // a tiny negative red-branch hue can round up to exactly 360
    let h = if h >= 360.0 { 0.0 } else { h };
    let h = if s == 0.0 { 0.0 } else { h };
    HsvPixel { h, s, v }
}

pub fn hsv_to_rgb(p: HsvPixel) -> RgbPixel {
    let HsvPixel { h, s, v } = p;
    let chroma = v * s;
    let sector = h / 60.0;
    let x = chroma * (1.0 - (sector % 2.0 - 1.0).abs());
    let (r, g, b) = match sector as u32 {
        0 => (chroma, x, 0.0),
        1 => (x, chroma, 0.0),
        2 => (0.0, chroma, x),
        3 => (0.0, x, chroma),
        4 => (x, 0.0, chroma),
        _ => (chroma, 0.0, x),
    };
    let m = v - chroma;
    let clamp = |c: f64| (c + m).clamp(0.0, 1.0);
    RgbPixel { r: clamp(r), g: clamp(g), b: clamp(b) }
}

/// Per-pixel `max(r, g, b)`.
pub fn value_channel(img: &PlanarImage) -> Plane {
    let (r, g, b) = (img.plane(0), img.plane(1), img.plane(2));
    let data = r
        .iter()
        .zip(g)
        .zip(b)
        .map(|((&r, &g), &b)| r.max(g).max(b))
        .collect();
    Plane { height: img.height(), width: img.width(), data }
}

/// Rotates the hue of every pixel by `degrees`, keeping saturation and value.
pub fn rotate_hue(img: &PlanarImage, degrees: f64) -> PlanarImage {
    img.map_pixels(|[r, g, b]| {
        let hsv = rgb_to_hsv(RgbPixel { r, g, b });
        let h = (hsv.h + degrees).rem_euclid(360.0);
        let h = if h >= 360.0 { 0.0 } else { h };
        let rotated = HsvPixel { h, ..hsv };
        hsv_to_rgb(rotated).to_array()
    })
}
