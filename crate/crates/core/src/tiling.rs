//! Confidence-weighted re-assembly of overlapping patches.
//!
//! Every pixel of the output is `sum_i YP_i(x, y) * W(x, y)` where `YP_i` is
//! patch `i` placed into a zero canvas and `W(x, y) = 1 / coverage(x, y)`.
//! Coverage is separable (row count times column count), so `W` is constant
//! on aligned `m x m` blocks, centrosymmetric, and its covering weights sum
//! to one at every pixel. In the interior `W = (m / n)^2`.
//!
//! [`blend_naive`] evaluates the sum literally with full-size canvases and is
//! the reference. [`BlendAccumulator`] adds each weighted patch straight into
//! one double-precision accumulator; its parallel path splits the accumulator
//! into disjoint row bands and applies contributions in origin order, so the
//! result does not depend on the number of workers.

use std::collections::BTreeSet;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Plane, PlanarImage, CHANNELS};
use crate::patchgrid::{place_zero_padded, plan_grid, GridSpec, Origin, PatchRecord};

#[derive(Clone, Debug, PartialEq)]
pub struct WeightMatrix {
    spec: GridSpec,
    row_coverage: Vec<u32>,
    col_coverage: Vec<u32>,
    // reciprocal[a * (k + 1) + b] = 1 / (a * b), k = n / m
    reciprocal: Vec<f64>,
}

pub fn build_weight_matrix(spec: &GridSpec) -> Result<WeightMatrix> {
    let spec = GridSpec::new(spec.height, spec.width, spec.patch, spec.stride)?;
    let row_coverage = (0..spec.height).map(|x| spec.rows().coverage(x) as u32).collect();
    let col_coverage = (0..spec.width).map(|x| spec.cols().coverage(x) as u32).collect();
    let k = spec.patch / spec.stride;
    let mut reciprocal = vec![0.0; (k + 1) * (k + 1)];
    for a in 1..=k {
        for b in 1..=k {
            reciprocal[a * (k + 1) + b] = 1.0 / (a * b) as f64;
        }
    }
    Ok(WeightMatrix { spec, row_coverage, col_coverage, reciprocal })
}

impl WeightMatrix {
    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn height(&self) -> usize {
        self.spec.height
    }

    pub fn width(&self) -> usize {
        self.spec.width
    }

    /// Number of patches covering `(row, col)`.
    pub fn coverage(&self, row: usize, col: usize) -> u32 {
        self.row_coverage[row] * self.col_coverage[col]
    }

    pub fn row_coverage(&self) -> &[u32] {
        &self.row_coverage
    }

    pub fn col_coverage(&self) -> &[u32] {
        &self.col_coverage
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        let k = self.spec.patch / self.spec.stride;
        self.reciprocal[self.row_coverage[row] as usize * (k + 1) + self.col_coverage[col] as usize]
    }

    pub fn to_plane(&self) -> Plane {
        let (h, w) = (self.height(), self.width());
        let mut data = Vec::with_capacity(h * w);
        for r in 0..h {
            data.extend((0..w).map(|c| self.get(r, c)));
        }
        Plane { height: h, width: w, data }
    }

    pub fn header(&self) -> WeightHeader {
        WeightHeader {
            side: (self.height() == self.width()).then_some(self.height()),
            height: self.height(),
            width: self.width(),
            n: self.spec.patch,
            m: self.spec.stride,
            dtype: "float32".into(),
            byte_order: "little".into(),
        }
    }

    /// Streams the matrix as row-major little-endian `f32`.
    pub fn write_raw_f32<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let mut row_buf = Vec::with_capacity(self.width() * 4);
        for r in 0..self.height() {
            row_buf.clear();
            for c in 0..self.width() {
                row_buf.extend_from_slice(&(self.get(r, c) as f32).to_le_bytes());
            }
            out.write_all(&row_buf)?;
        }
        out.flush()
    }
}

/// JSON sidecar describing a raw weight dump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightHeader {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub side: Option<usize>,
    pub height: usize,
    pub width: usize,
    pub n: usize,
    pub m: usize,
    pub dtype: String,
    pub byte_order: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TiledOutput {
    pub image: PlanarImage,
    pub spec: GridSpec,
    /// Seam-discontinuity score, when the caller asked for one.
    pub seam_report: Option<f64>,
}

fn check_patch(spec: &GridSpec, p: &PatchRecord) -> Result<usize> {
    let idx = spec
        .lattice_index(p.origin)
        .ok_or_else(|| Error::contract(format!("patch {} is not a lattice point", p.origin)))?;
    if p.pixels.dims() != (spec.patch, spec.patch) {
        return Err(Error::contract(format!(
            "patch at {} is {}x{}, expected {}x{}",
            p.origin,
            p.pixels.height(),
            p.pixels.width(),
            spec.patch,
            spec.patch
        )));
    }
    Ok(idx)
}

fn missing_error(spec: &GridSpec, seen: &[bool]) -> Error {
    let gaps: Vec<String> = seen
        .iter()
        .enumerate()
        .filter(|(_, &s)| !s)
        .map(|(i, _)| spec.origin_at(i).to_string())
        .collect();
    const SHOWN: usize = 16;
    let mut msg = format!("{} lattice position(s) missing: ", gaps.len());
    msg.push_str(&gaps.iter().take(SHOWN).cloned().collect::<Vec<_>>().join(", "));
    if gaps.len() > SHOWN {
        msg.push_str(", ...");
    }
    Error::contract(msg)
}

/// Reference blend: places every patch into a full zero canvas, multiplies by
/// the full weight plane and sums the canvases.
pub fn blend_naive(patches: &[PatchRecord], w: &WeightMatrix) -> Result<TiledOutput> {
    let spec = *w.spec();
    let mut seen = vec![false; spec.patch_count()];
    for p in patches {
        let idx = check_patch(&spec, p)?;
        if std::mem::replace(&mut seen[idx], true) {
            return Err(Error::contract(format!("duplicate patch at {}", p.origin)));
        }
    }
    if seen.iter().any(|s| !s) {
        return Err(missing_error(&spec, &seen));
    }

    let weights = w.to_plane();
    let area = spec.height * spec.width;
    let mut sums = vec![0.0; CHANNELS * area];
    for p in patches {
        let placed = place_zero_padded(p, spec.height, spec.width)?;
        for ch in 0..CHANNELS {
            let yp = placed.plane(ch);
            let acc = &mut sums[ch * area..(ch + 1) * area];
            for i in 0..area {
                acc[i] += yp[i] * weights.data[i];
            }
        }
    }
    let image = PlanarImage::from_planes(
        spec.height,
        spec.width,
        sums.into_iter().map(|v| v.clamp(0.0, 1.0)).collect(),
    )?;
    Ok(TiledOutput { image, spec, seam_report: None })
}

/// Single-plane-set accumulator for streamed patches.
///
/// Memory is one `height x width x 3` double buffer plus whatever patches
/// the caller holds; each lattice position must be added exactly once.
pub struct BlendAccumulator {
    weights: WeightMatrix,
    // interleaved RGB, row-major
    sums: Vec<f64>,
    seen: Vec<bool>,
}

impl BlendAccumulator {
    pub fn new(spec: &GridSpec) -> Result<Self> {
        let weights = build_weight_matrix(spec)?;
        let spec = *weights.spec();
        Ok(BlendAccumulator {
            sums: vec![0.0; CHANNELS * spec.height * spec.width],
            seen: vec![false; spec.patch_count()],
            weights,
        })
    }

    pub fn spec(&self) -> &GridSpec {
        self.weights.spec()
    }

    fn claim(&mut self, p: &PatchRecord) -> Result<()> {
        let idx = check_patch(self.weights.spec(), p)?;
        if self.seen[idx] {
            return Err(Error::contract(format!("duplicate patch at {}", p.origin)));
        }
        self.seen[idx] = true;
        Ok(())
    }

    pub fn add(&mut self, p: &PatchRecord) -> Result<()> {
        self.claim(p)?;
        let width = self.spec().width;
        let n = self.spec().patch;
        accumulate_rows(&self.weights, &mut self.sums, 0, width, p, 0..n);
        Ok(())
    }

    /// Adds a batch using disjoint row bands on the current rayon pool.
    ///
    /// Patches are applied in ascending origin order within each band, so
    /// feeding batches in row-major origin order gives results bit-identical
    /// to sequential [`add`](Self::add) calls in that order, for any band count.
    pub fn add_batch(&mut self, batch: &[PatchRecord], bands: usize) -> Result<()> {
        let mut order: Vec<&PatchRecord> = batch.iter().collect();
        order.sort_by_key(|p| p.origin);
        for p in &order {
            self.claim(p)?;
        }
        let spec = *self.spec();
        let bands = bands.clamp(1, spec.height.max(1));
        let band_rows = spec.height.div_ceil(bands);
        let row_len = CHANNELS * spec.width;
        let weights = &self.weights;
        self.sums
            .par_chunks_mut(band_rows * row_len)
            .enumerate()
            .for_each(|(band, chunk)| {
                let top = band * band_rows;
                let bottom = top + chunk.len() / row_len;
                for p in &order {
                    let lo = p.origin.row.max(top);
                    let hi = (p.origin.row + spec.patch).min(bottom);
                    if lo < hi {
                        accumulate_rows(
                            weights,
                            chunk,
                            top,
                            spec.width,
                            p,
                            lo - p.origin.row..hi - p.origin.row,
                        );
                    }
                }
            });
        Ok(())
    }

    pub fn missing(&self) -> Vec<Origin> {
        self.seen
            .iter()
            .enumerate()
            .filter(|(_, &s)| !s)
            .map(|(i, _)| self.spec().origin_at(i))
            .collect()
    }

    pub fn finish(self) -> Result<TiledOutput> {
        let spec = *self.spec();
        if self.seen.iter().any(|s| !s) {
            return Err(missing_error(&spec, &self.seen));
        }
        let area = spec.height * spec.width;
        let mut planes = vec![0.0; CHANNELS * area];
        for (i, px) in self.sums.chunks_exact(CHANNELS).enumerate() {
            for ch in 0..CHANNELS {
                planes[ch * area + i] = px[ch].clamp(0.0, 1.0);
            }
        }
        let image = PlanarImage::from_planes(spec.height, spec.width, planes)?;
        Ok(TiledOutput { image, spec, seam_report: None })
    }
}

/// Adds `W * patch` for the given patch-local rows into `buf`, whose first
/// row is canvas row `buf_top`.
fn accumulate_rows(
    weights: &WeightMatrix,
    buf: &mut [f64],
    buf_top: usize,
    width: usize,
    p: &PatchRecord,
    rows: std::ops::Range<usize>,
) {
    let n = p.pixels.width();
    let planes = [p.pixels.plane(0), p.pixels.plane(1), p.pixels.plane(2)];
    for pr in rows {
        let r = p.origin.row + pr;
        let base = (r - buf_top) * width;
        for pc in 0..n {
            let c = p.origin.col + pc;
            let w = weights.get(r, c);
            let dst = &mut buf[CHANNELS * (base + c)..CHANNELS * (base + c + 1)];
            let src = pr * n + pc;
            for ch in 0..CHANNELS {
                dst[ch] += w * planes[ch][src];
            }
        }
    }
}

/// Blends a patch stream delivered in any order.
pub fn blend_streaming(
    patches: impl IntoIterator<Item = PatchRecord>,
    spec: &GridSpec,
) -> Result<TiledOutput> {
    let mut acc = BlendAccumulator::new(spec)?;
    for p in patches {
        acc.add(&p)?;
    }
    acc.finish()
}

/// Blends on a dedicated pool of `workers` threads. Output is bit-identical
/// for every worker count.
pub fn blend_parallel(patches: &[PatchRecord], spec: &GridSpec, workers: usize) -> Result<TiledOutput> {
    let workers = workers.max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::config(format!("cannot start {workers} workers: {e}")))?;
    let mut acc = BlendAccumulator::new(spec)?;
    pool.install(|| acc.add_batch(patches, workers))?;
    acc.finish()
}

/// Non-overlapping tiling: the lattice with stride equal to the patch size.
pub fn hard_tile(patches: &[PatchRecord], height: usize, width: usize, patch: usize) -> Result<TiledOutput> {
    let spec = GridSpec::new(height, width, patch, patch)?;
    blend_streaming(patches.iter().cloned(), &spec)
}

/// Origins that `patches` does not provide, or provides off-lattice, relative to `spec`.
pub fn lattice_gaps(spec: &GridSpec, origins: impl IntoIterator<Item = Origin>) -> (Vec<Origin>, Vec<Origin>) {
    let expected: BTreeSet<Origin> = plan_grid(spec).into_iter().collect();
    let given: BTreeSet<Origin> = origins.into_iter().collect();
    let missing = expected.difference(&given).copied().collect();
    let extra = given.difference(&expected).copied().collect();
    (missing, extra)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patchgrid::split;

    #[test]
    fn small_grid_weights() {
        let spec = GridSpec::square(8, 4, 2).unwrap();
        let w = build_weight_matrix(&spec).unwrap();
        assert_eq!(w.row_coverage(), &[1, 1, 2, 2, 2, 2, 1, 1]);
        assert_eq!(w.get(0, 0), 1.0);
        assert_eq!(w.get(3, 3), 0.25);
        assert_eq!(w.get(2, 6), 0.5);
    }

    #[test]
    fn no_overlap_means_unit_weights() {
        let spec = GridSpec::square(12, 4, 4).unwrap();
        let w = build_weight_matrix(&spec).unwrap();
        assert!(w.to_plane().data.iter().all(|&x| x == 1.0));
    }

    #[test]
    fn naive_reports_missing_positions() {
        let img = PlanarImage::filled(8, 8, [0.5; 3]).unwrap();
        let spec = GridSpec::square(8, 4, 2).unwrap();
        let mut patches = split(&img, &spec).unwrap();
        patches.remove(4);
        let w = build_weight_matrix(&spec).unwrap();
        let err = blend_naive(&patches, &w).unwrap_err();
        assert!(err.to_string().contains("(row 2, col 2)"), "{err}");
    }

    #[test]
    fn streaming_rejects_duplicates() {
        let img = PlanarImage::filled(8, 8, [0.5; 3]).unwrap();
        let spec = GridSpec::square(8, 4, 2).unwrap();
        let mut patches = split(&img, &spec).unwrap();
        patches.push(patches[0].clone());
        let err = blend_streaming(patches, &spec).unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
    }

    #[test]
    fn streaming_rejects_wrong_size_patch() {
        let spec = GridSpec::square(8, 4, 2).unwrap();
        let mut acc = BlendAccumulator::new(&spec).unwrap();
        let p = PatchRecord { origin: Origin::new(0, 0), pixels: PlanarImage::zeros(3, 4) };
        assert!(acc.add(&p).is_err());
        let p = PatchRecord { origin: Origin::new(1, 0), pixels: PlanarImage::zeros(4, 4) };
        assert!(acc.add(&p).is_err());
    }

    #[test]
    fn constant_patches_blend_to_constant() {
        let img = PlanarImage::filled(16, 16, [0.2, 0.4, 0.7]).unwrap();
        let spec = GridSpec::square(16, 8, 2).unwrap();
        let out = blend_streaming(split(&img, &spec).unwrap(), &spec).unwrap();
        assert!(out.image.max_abs_diff(&img).unwrap() < 1e-15);
    }

    #[test]
    fn raw_export_layout() {
        let spec = GridSpec::square(8, 4, 2).unwrap();
        let w = build_weight_matrix(&spec).unwrap();
        let mut buf = Vec::new();
        w.write_raw_f32(&mut buf).unwrap();
        assert_eq!(buf.len(), 8 * 8 * 4);
        let at = |r: usize, c: usize| {
            let i = 4 * (r * 8 + c);
            f32::from_le_bytes(buf[i..i + 4].try_into().unwrap())
        };
        assert_eq!(at(3, 3), 0.25);
        assert_eq!(at(2, 6), 0.5);
        let header = serde_json::to_value(w.header()).unwrap();
        assert_eq!(header["side"], 8);
        assert_eq!(header["n"], 4);
        assert_eq!(header["m"], 2);
    }
}
