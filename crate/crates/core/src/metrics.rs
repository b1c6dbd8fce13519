//! Histogram correlation, line profiles and a seam-discontinuity score.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::image::{PlanarImage, CHANNELS};

pub const BINS: usize = 256;

/// Per-channel frequency histograms, 256 uniform bins over `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub channels: [[f64; BINS]; CHANNELS],
}

fn bin_of(v: f64) -> usize {
    ((v * BINS as f64) as usize).min(BINS - 1)
}

impl Histogram {
    pub fn of(img: &PlanarImage) -> Result<Self> {
        if img.area() == 0 {
            return Err(Error::contract("histogram of an empty image"));
        }
        let mut channels = [[0.0; BINS]; CHANNELS];
        for (ch, hist) in channels.iter_mut().enumerate() {
            let mut counts = [0u64; BINS];
            for &v in img.plane(ch) {
                counts[bin_of(v)] += 1;
            }
            let total = img.area() as f64;
            for (f, c) in hist.iter_mut().zip(counts) {
                *f = c as f64 / total;
            }
        }
        Ok(Histogram { channels })
    }
}

/// Pearson correlation of two bin vectors; `None` when either has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        cov += dx * dy;
        va += dx * dx;
        vb += dy * dy;
    }
    let denom = (va * vb).sqrt();
    (denom > 0.0).then(|| cov / denom)
}

/// Mean over R, G, B of the Pearson correlation between frequency histograms.
///
/// A zero-variance histogram (all bins equally full) only correlates with an
/// identical histogram, which scores 1; any other pairing is degenerate.
pub fn histogram_correlation(a: &PlanarImage, b: &PlanarImage) -> Result<f64> {
    let (ha, hb) = (Histogram::of(a)?, Histogram::of(b)?);
    let mut sum = 0.0;
    for ch in 0..CHANNELS {
        let (x, y) = (&ha.channels[ch], &hb.channels[ch]);
        sum += match pearson(x, y) {
            Some(r) => r,
            None if x == y => 1.0,
            None => {
                return Err(Error::Degenerate(format!(
                    "channel {ch} histogram has zero variance; correlation undefined"
                )))
            }
        };
    }
    Ok(sum / CHANNELS as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ProfileSample {
    pub index: usize,
    pub row: usize,
    pub col: usize,
    pub rgb: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LineProfile {
    pub samples: Vec<ProfileSample>,
}

impl LineProfile {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,row,col,r,g,b\n");
        for s in &self.samples {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                s.index, s.row, s.col, s.rgb[0], s.rgb[1], s.rgb[2]
            ));
        }
        out
    }
}

/// Nearest-neighbour samples from `from` to `to` (inclusive), one per pixel
/// of the longer axis extent.
pub fn line_profile(img: &PlanarImage, from: (usize, usize), to: (usize, usize)) -> Result<LineProfile> {
    for (name, (r, c)) in [("start", from), ("end", to)] {
        if r >= img.height() || c >= img.width() {
            return Err(Error::contract(format!(
                "{name} point ({r}, {c}) is outside the {}x{} image",
                img.height(),
                img.width()
            )));
        }
    }
    let dr = to.0 as f64 - from.0 as f64;
    let dc = to.1 as f64 - from.1 as f64;
    let steps = dr.abs().max(dc.abs()) as usize;
    if steps == 0 {
        return Err(Error::contract("line profile needs two distinct endpoints"));
    }
    let samples = (0..=steps)
        .map(|i| {
            let t = i as f64 / steps as f64;
            let row = (from.0 as f64 + t * dr).round() as usize;
            let col = (from.1 as f64 + t * dc).round() as usize;
            ProfileSample { index: i, row, col, rgb: img.pixel(row, col) }
        })
        .collect();
    Ok(LineProfile { samples })
}

/// Excess of the mean absolute neighbour difference across hard-tiling
/// boundaries (every `tile` pixels, both axes) over the same mean at all
/// other neighbour pairs, floored at zero. Averaged over channels.
pub fn seam_discontinuity(img: &PlanarImage, tile: usize) -> Result<f64> {
    if tile == 0 {
        return Err(Error::config("tile size must be at least 1"));
    }
    let (h, w) = img.dims();
    let (mut seam_sum, mut seam_n) = (0.0, 0usize);
    let (mut inner_sum, mut inner_n) = (0.0, 0usize);
    for ch in 0..CHANNELS {
        let p = img.plane(ch);
        for r in 0..h {
            for c in 0..w {
                let v = p[r * w + c];
                if c + 1 < w {
                    let d = (p[r * w + c + 1] - v).abs();
                    if (c + 1) % tile == 0 {
                        seam_sum += d;
                        seam_n += 1;
                    } else {
                        inner_sum += d;
                        inner_n += 1;
                    }
                }
                if r + 1 < h {
                    let d = (p[(r + 1) * w + c] - v).abs();
                    if (r + 1) % tile == 0 {
                        seam_sum += d;
                        seam_n += 1;
                    } else {
                        inner_sum += d;
                        inner_n += 1;
                    }
                }
            }
        }
    }
    if seam_n == 0 {
        return Ok(0.0);
    }
    let seam = seam_sum / seam_n as f64;
    let inner = if inner_n == 0 { 0.0 } else { inner_sum / inner_n as f64 };
    Ok((seam - inner).max(0.0))
}
