//! Planar floating-point RGB images.

use crate::error::{Error, Result};

pub const CHANNELS: usize = 3;

/// Three-channel image with values in `[0, 1]`, stored as consecutive
/// row-major planes (R, then G, then B).
#[derive(Clone, Debug, PartialEq)]
pub struct PlanarImage {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

/// Single-channel row-major plane of unconstrained floats.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }
}

/// Maps a `[0, 1]` intensity to 8 bits: `round(x * 255)` clamped, halves away from zero.
pub fn to_u8(x: f64) -> u8 {
    (x * 255.0).round().clamp(0.0, 255.0) as u8
}

pub fn from_u8(x: u8) -> f64 {
    f64::from(x) / 255.0
}

fn check_unit(x: f64) -> Result<()> {
    if x.is_finite() && (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(Error::domain(format!("pixel value {x} is not a finite number in [0, 1]")))
    }
}

impl PlanarImage {
    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Result<Self> {
        for &v in &rgb {
            check_unit(v)?;
        }
        let area = height * width;
        let mut data = Vec::with_capacity(CHANNELS * area);
        for v in rgb {
            data.extend(std::iter::repeat_n(v, area));
        }
        Ok(PlanarImage { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        PlanarImage { height, width, data: vec![0.0; CHANNELS * height * width] }
    }

    /// Builds an image from concatenated R, G, B planes.
    pub fn from_planes(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != CHANNELS * height * width {
            return Err(Error::contract(format!(
                "plane data has {} values, expected {} for {height}x{width}x3",
                data.len(),
                CHANNELS * height * width
            )));
        }
        for &v in &data {
            check_unit(v)?;
        }
        Ok(PlanarImage { height, width, data })
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> [f64; 3],
    ) -> Result<Self> {
        let area = height * width;
        let mut data = vec![0.0; CHANNELS * area];
        for r in 0..height {
            for c in 0..width {
                let px = f(r, c);
                for (ch, v) in px.into_iter().enumerate() {
                    check_unit(v)?;
                    data[ch * area + r * width + c] = v;
                }
            }
        }
        Ok(PlanarImage { height, width, data })
    }

    /// Interleaved 8-bit RGB to planar `[0, 1]`, via `x / 255`.
    pub fn from_rgb8(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        let area = height * width;
        if bytes.len() != CHANNELS * area {
            return Err(Error::contract(format!(
                "rgb8 buffer has {} bytes, expected {}",
                bytes.len(),
                CHANNELS * area
            )));
        }
        let mut data = vec![0.0; CHANNELS * area];
        for (i, px) in bytes.chunks_exact(CHANNELS).enumerate() {
            for ch in 0..CHANNELS {
                data[ch * area + i] = from_u8(px[ch]);
            }
        }
        Ok(PlanarImage { height, width, data })
    }

    /// Interleaved 8-bit RGB bytes.
    pub fn to_rgb8(&self) -> Vec<u8> {
        let area = self.area();
        let mut out = Vec::with_capacity(CHANNELS * area);
        for i in 0..area {
            for ch in 0..CHANNELS {
                out.push(to_u8(self.data[ch * area + i]));
            }
        }
        out
    }

    /// Snaps every value onto the 8-bit grid `k / 255`.
    pub fn quantize_u8(&self) -> Self {
        PlanarImage {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| from_u8(to_u8(v))).collect(),
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn area(&self) -> usize {
        self.height * self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn plane(&self, ch: usize) -> &[f64] {
        let area = self.area();
        &self.data[ch * area..(ch + 1) * area]
    }

    pub(crate) fn plane_mut(&mut self, ch: usize) -> &mut [f64] {
        let area = self.area();
        &mut self.data[ch * area..(ch + 1) * area]
    }

    /// All three planes back to back.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn at(&self, ch: usize, row: usize, col: usize) -> f64 {
        self.data[ch * self.area() + row * self.width + col]
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f64; 3] {
        let area = self.area();
        let i = row * self.width + col;
        [self.data[i], self.data[area + i], self.data[2 * area + i]]
    }

    /// Applies `f` to every pixel; results are clamped into `[0, 1]`.
    pub fn map_pixels(&self, mut f: impl FnMut([f64; 3]) -> [f64; 3]) -> Self {
        let area = self.area();
        let mut data = vec![0.0; CHANNELS * area];
        for i in 0..area {
            let out = f([self.data[i], self.data[area + i], self.data[2 * area + i]]);
            for ch in 0..CHANNELS {
                let v = out[ch];
                data[ch * area + i] = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
            }
        }
        PlanarImage { height: self.height, width: self.width, data }
    }

    /// Copies the `height x width` window whose top-left corner is `(row, col)`.
    pub fn window(&self, row: usize, col: usize, height: usize, width: usize) -> Result<Self> {
        if row + height > self.height || col + width > self.width {
            return Err(Error::contract(format!(
                "window {height}x{width} at ({row}, {col}) exceeds {}x{} image",
                self.height, self.width
            )));
        }
        let mut out = PlanarImage::zeros(height, width);
        for ch in 0..CHANNELS {
            let src = self.plane(ch);
            let dst = out.plane_mut(ch);
            for r in 0..height {
                let s = (row + r) * self.width + col;
                dst[r * width..(r + 1) * width].copy_from_slice(&src[s..s + width]);
            }
        }
        Ok(out)
    }

    /// Grows the image to `height x width` by replicating the last row and column.
    pub fn pad_replicate(&self, height: usize, width: usize) -> Result<Self> {
        if height < self.height || width < self.width || self.area() == 0 {
            return Err(Error::contract(format!(
                "cannot pad {}x{} image to {height}x{width}",
                self.height, self.width
            )));
        }
        let mut out = PlanarImage::zeros(height, width);
        for ch in 0..CHANNELS {
            let src = self.plane(ch);
            let dst = out.plane_mut(ch);
            for r in 0..height {
                let sr = r.min(self.height - 1);
                for c in 0..width {
                    dst[r * width + c] = src[sr * self.width + c.min(self.width - 1)];
                }
            }
        }
        Ok(out)
    }

    /// Keeps the top-left `height x width` region.
    pub fn crop(&self, height: usize, width: usize) -> Result<Self> {
        self.window(0, 0, height, width)
    }

    pub fn max_abs_diff(&self, other: &PlanarImage) -> Result<f64> {
        if self.dims() != other.dims() {
            return Err(Error::contract(format!(
                "image sizes differ: {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_values() {
        assert!(PlanarImage::from_planes(1, 1, vec![0.0, 1.5, 0.0]).is_err());
        assert!(PlanarImage::from_planes(1, 1, vec![0.0, f64::NAN, 0.0]).is_err());
        assert!(PlanarImage::from_planes(1, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn rgb8_round_trip_is_exact() {
        let bytes: Vec<u8> = (0..=255u8).chain(0..=255).chain(0..=255).collect();
        let img = PlanarImage::from_rgb8(16, 16, &bytes).unwrap();
        assert_eq!(img.to_rgb8(), bytes);
        assert_eq!(img.quantize_u8(), img);
    }

    #[test]
    fn rounding_goes_half_away_from_zero() {
        assert_eq!(to_u8(0.5 / 255.0), 1);
        assert_eq!(to_u8(-0.2), 0);
        assert_eq!(to_u8(1.3), 255);
    }

    #[test]
    fn pad_replicates_edges_and_crop_restores() {
        let img = PlanarImage::from_fn(2, 3, |r, c| [r as f64 / 2.0, c as f64 / 3.0, 0.25]).unwrap();
        let padded = img.pad_replicate(4, 5).unwrap();
        assert_eq!(padded.pixel(3, 4), img.pixel(1, 2));
        assert_eq!(padded.pixel(0, 4), img.pixel(0, 2));
        assert_eq!(padded.crop(2, 3).unwrap(), img);
    }
}
