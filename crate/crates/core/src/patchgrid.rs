//! Overlapping patch lattice: planning, cropping and zero-padded placement.
//!
//! Patches of side `n` start every `m` pixels along both axes, so a pixel is
//! covered by up to `(n / m)^2` patches. Images whose sides are not aligned
//! to the lattice are edge-replicated on the bottom/right before cropping;
//! [`GridSpec::fit`] computes that aligned canvas.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{PlanarImage, CHANNELS};

/// Top-left corner of a patch inside the (padded) slide.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Origin {
    pub row: usize,
    pub col: usize,
}

impl Origin {
    pub fn new(row: usize, col: usize) -> Self {
        Origin { row, col }
    }
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(row {}, col {})", self.row, self.col)
    }
}

/// Patch positions along a single axis: `0, m, 2m, ..., len - n`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AxisLattice {
    pub len: usize,
    pub patch: usize,
    pub stride: usize,
}

impl AxisLattice {
    pub fn count(&self) -> usize {
        (self.len - self.patch) / self.stride + 1
    }

    pub fn origins(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.count()).map(move |i| i * self.stride)
    }

    /// Number of patches along this axis whose span contains `x`.
    pub fn coverage(&self, x: usize) -> usize {
        debug_assert!(x < self.len);
        // first origin index o with o*m + n > x, last with o*m <= x
        let first = if x + 1 > self.patch { (x + 1 - self.patch).div_ceil(self.stride) } else { 0 };
        let last = (x / self.stride).min(self.count() - 1);
        last + 1 - first
    }
}

/// An aligned patch lattice over a `height x width` canvas.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub height: usize,
    pub width: usize,
    /// Patch side `n`.
    pub patch: usize,
    /// Origin spacing `m`.
    pub stride: usize,
}

fn check_patch_stride(patch: usize, stride: usize) -> Result<()> {
    if stride == 0 {
        return Err(Error::config("stride m must be at least 1"));
    }
    if patch == 0 {
        return Err(Error::config("patch size n must be at least 1"));
    }
    if !patch.is_multiple_of(stride) {
        return Err(Error::config(format!(
            "n mod m = 0 violated: patch size n = {patch} is not a multiple of stride m = {stride} (n/m must be an integer)"
        )));
    }
    Ok(())
}

impl GridSpec {
    /// Validates an already aligned canvas.
    pub fn new(height: usize, width: usize, patch: usize, stride: usize) -> Result<Self> {
        check_patch_stride(patch, stride)?;
        for (axis, len) in [("height", height), ("width", width)] {
            if patch > len {
                return Err(Error::config(format!(
                    "patch size n = {patch} exceeds image {axis} {len}"
                )));
            }
            if !(len - patch).is_multiple_of(stride) {
                return Err(Error::config(format!(
                    "image {axis} {len} is not aligned: ({len} - {patch}) mod {stride} != 0"
                )));
            }
        }
        Ok(GridSpec { height, width, patch, stride })
    }

    pub fn square(side: usize, patch: usize, stride: usize) -> Result<Self> {
        GridSpec::new(side, side, patch, stride)
    }

    /// Smallest aligned canvas that contains a `height x width` image.
    pub fn fit(height: usize, width: usize, patch: usize, stride: usize) -> Result<Self> {
        check_patch_stride(patch, stride)?;
        let align = |axis: &str, len: usize| {
            if patch > len {
                return Err(Error::config(format!(
                    "patch size n = {patch} exceeds image {axis} {len}"
                )));
            }
            Ok(patch + (len - patch).div_ceil(stride) * stride)
        };
        let h = align("height", height)?;
        let w = align("width", width)?;
        Ok(GridSpec { height: h, width: w, patch, stride })
    }

    pub fn rows(&self) -> AxisLattice {
        AxisLattice { len: self.height, patch: self.patch, stride: self.stride }
    }

    pub fn cols(&self) -> AxisLattice {
        AxisLattice { len: self.width, patch: self.patch, stride: self.stride }
    }

    /// Patch counts along (rows, cols).
    pub fn lattice_dims(&self) -> (usize, usize) {
        (self.rows().count(), self.cols().count())
    }

    pub fn patch_count(&self) -> usize {
        let (r, c) = self.lattice_dims();
        r * c
    }

    /// Row-major position of `origin` in the lattice, if it is a lattice point.
    pub fn lattice_index(&self, origin: Origin) -> Option<usize> {
        let (rows, cols) = self.lattice_dims();
        if !origin.row.is_multiple_of(self.stride) || !origin.col.is_multiple_of(self.stride) {
            return None;
        }
        let (i, j) = (origin.row / self.stride, origin.col / self.stride);
        (i < rows && j < cols).then_some(i * cols + j)
    }

    pub fn origin_at(&self, index: usize) -> Origin {
        let cols = self.cols().count();
        Origin::new(index / cols * self.stride, index % cols * self.stride)
    }
}

/// Patch origins in row-major order.
pub fn plan_grid(spec: &GridSpec) -> Vec<Origin> {
    (0..spec.patch_count()).map(|i| spec.origin_at(i)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatchRecord {
    pub origin: Origin,
    pub pixels: PlanarImage,
}

/// Crops one lattice patch out of an aligned slide.
pub fn extract(wsi: &PlanarImage, spec: &GridSpec, origin: Origin) -> Result<PatchRecord> {
    if wsi.dims() != (spec.height, spec.width) {
        return Err(Error::contract(format!(
            "slide is {}x{} but grid expects {}x{}",
            wsi.height(),
            wsi.width(),
            spec.height,
            spec.width
        )));
    }
    if spec.lattice_index(origin).is_none() {
        return Err(Error::contract(format!("{origin} is not a lattice point")));
    }
    let pixels = wsi.window(origin.row, origin.col, spec.patch, spec.patch)?;
    Ok(PatchRecord { origin, pixels })
}

/// Pads `wsi` up to the grid canvas by edge replication (if needed).
pub fn pad_to_grid(wsi: &PlanarImage, spec: &GridSpec) -> Result<PlanarImage> {
    if wsi.dims() == (spec.height, spec.width) {
        return Ok(wsi.clone());
    }
    if wsi.height() > spec.height || wsi.width() > spec.width {
        return Err(Error::contract(format!(
            "{}x{} slide does not fit the {}x{} grid canvas",
            wsi.height(),
            wsi.width(),
            spec.height,
            spec.width
        )));
    }
    wsi.pad_replicate(spec.height, spec.width)
}

/// Cuts the slide into every lattice patch, in row-major origin order.
/// Slides smaller than the grid canvas are edge-replicated first.
pub fn split(wsi: &PlanarImage, spec: &GridSpec) -> Result<Vec<PatchRecord>> {
    let padded = pad_to_grid(wsi, spec)?;
    plan_grid(spec).into_iter().map(|o| extract(&padded, spec, o)).collect()
}

/// Writes the patch into an otherwise zero `height x width` canvas at its origin.
pub fn place_zero_padded(p: &PatchRecord, height: usize, width: usize) -> Result<PlanarImage> {
    let (ph, pw) = p.pixels.dims();
    let Origin { row, col } = p.origin;
    if row + ph > height || col + pw > width {
        return Err(Error::contract(format!(
            "{ph}x{pw} patch at {} does not fit a {height}x{width} canvas",
            p.origin
        )));
    }
    let mut out = PlanarImage::zeros(height, width);
    for ch in 0..CHANNELS {
        let src = p.pixels.plane(ch);
        let dst = out.plane_mut(ch);
        for r in 0..ph {
            let d = (row + r) * width + col;
            dst[d..d + pw].copy_from_slice(&src[r * pw..(r + 1) * pw]);
        }
    }
    Ok(out)
}
