//! Job orchestration: split -> backend -> blend -> metrics, plus the
//! stage-wise entry points used by the CLI.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backends::{apply, BackendSpec};
use crate::error::{Error, Result};
use crate::image::PlanarImage;
use crate::io::{load_image, save_image, sha256_file};
use crate::metrics::{histogram_correlation, seam_discontinuity};
use crate::patchgrid::{extract, pad_to_grid, plan_grid, GridSpec, Origin, PatchRecord};
use crate::protocol::ExternalSession;
use crate::tiling::{lattice_gaps, BlendAccumulator};

pub const DEFAULT_PATCH: usize = 512;
pub const DEFAULT_STRIDE: usize = 128;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricToggles {
    /// Seam discontinuity of the output at multiples of `n`.
    #[serde(default)]
    pub seam: bool,
    /// Histogram correlation between input and output.
    #[serde(default)]
    pub hist_corr: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobConfig {
    pub input: PathBuf,
    pub output: PathBuf,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default)]
    pub backend: BackendSpec,
    #[serde(default)]
    pub metrics: MetricToggles,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub seed: u64,
    /// Where to write the run manifest; defaults to `<output>.manifest.json`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
}

fn default_n() -> usize {
    DEFAULT_PATCH
}

fn default_m() -> usize {
    DEFAULT_STRIDE
}

fn default_workers() -> usize {
    1
}

impl JobConfig {
    pub fn new(input: impl Into<PathBuf>, output: impl Into<PathBuf>) -> Self {
        JobConfig {
            input: input.into(),
            output: output.into(),
            n: DEFAULT_PATCH,
            m: DEFAULT_STRIDE,
            backend: BackendSpec::Identity,
            metrics: MetricToggles::default(),
            workers: 1,
            seed: 0,
            manifest: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: JobConfig = serde_json::from_str(text)
            .map_err(|e| Error::config(format!("job config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        JobConfig::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::config(format!("{}: {msg}", path.display())),
            e => e,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 {
            return Err(Error::config("n and m must both be at least 1"));
        }
        if !self.n.is_multiple_of(self.m) {
            return Err(Error::config(format!(
                "n mod m = 0 violated: n = {} is not a multiple of m = {} (n/m must be an integer)",
                self.n, self.m
            )));
        }
        if self.workers == 0 {
            return Err(Error::config("workers must be at least 1"));
        }
        if self.input == self.output {
            return Err(Error::config("input and output paths must differ"));
        }
        self.backend.validate()
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.manifest.clone().unwrap_or_else(|| self.output.with_extension("manifest.json"))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub load_ms: f64,
    pub split_ms: f64,
    pub transform_ms: f64,
    pub blend_ms: f64,
    pub save_ms: f64,
    pub metrics_ms: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seam: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hist_corr: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: JobConfig,
    /// `[height, width]` of the input.
    pub input_dims: [usize; 2],
    /// `[height, width]` after lattice alignment.
    pub padded_dims: [usize; 2],
    /// Patch counts `[rows, cols]`.
    pub lattice: [usize; 2],
    pub patch_count: usize,
    pub timings: StageTimings,
    pub input_sha256: String,
    pub output_sha256: String,
    pub metrics: RunMetrics,
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

fn build_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::config(format!("cannot start {workers} workers: {e}")))
}

/// Applies a backend to batches of patches, owning any external sessions.
pub struct Transformer<'a> {
    backend: &'a BackendSpec,
    seed: u64,
    sessions: Vec<ExternalSession>,
}

impl<'a> Transformer<'a> {
    pub fn new(backend: &'a BackendSpec, seed: u64, patch: usize) -> Result<Self> {
        backend.validate()?;
        let sessions = match backend {
            BackendSpec::External(ext) => (0..ext.sessions)
                .map(|_| ExternalSession::spawn(ext, patch))
                .collect::<Result<_>>()?,
            _ => Vec::new(),
        };
        Ok(Transformer { backend, seed, sessions })
    }

    /// Transforms `batch` (whose first element has lattice index `first_index`)
    /// and snaps results onto the 8-bit grid. Output order matches input order.
    pub fn run(&mut self, batch: Vec<PatchRecord>, first_index: usize) -> Result<Vec<PatchRecord>> {
        if self.sessions.is_empty() {
            let (backend, seed) = (self.backend, self.seed);
            return batch
                .into_par_iter()
                .map(|p| apply(backend, &p, seed).map(snap))
                .collect();
        }
        let count = self.sessions.len();
        let mut slots: Vec<Option<PatchRecord>> = vec![None; batch.len()];
        let results: Vec<Result<Vec<(usize, PatchRecord)>>> = std::thread::scope(|scope| {
            let handles: Vec<_> = self
                .sessions
                .iter_mut()
                .enumerate()
                .map(|(s, session)| {
                    let batch = &batch;
                    scope.spawn(move || {
                        let mut out = Vec::new();
                        for (i, p) in batch.iter().enumerate() {
                            if (first_index + i) % count == s {
                                out.push((i, snap(session.transform(p)?)));
                            }
                        }
                        Ok(out)
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("session thread panicked")).collect()
        });
        // report the lowest failing origin so the error is deterministic
        let mut first_err: Option<Error> = None;
        for r in results {
            match r {
                Ok(items) => {
                    for (i, p) in items {
                        slots[i] = Some(p);
                    }
                }
                Err(e) => {
                    let better = match (&first_err, e.origin()) {
                        (None, _) => true,
                        (Some(prev), Some(o)) => prev.origin().is_none_or(|po| o < po),
                        _ => false,
                    };
                    if better {
                        first_err = Some(e);
                    }
                }
            }
        }
        if let Some(e) = first_err {
            return Err(e);
        }
        Ok(slots.into_iter().map(|p| p.expect("every slot filled")).collect())
    }

    pub fn close(self) -> Result<()> {
        for s in self.sessions {
            s.close()?;
        }
        Ok(())
    }
}

fn snap(p: PatchRecord) -> PatchRecord {
    PatchRecord { origin: p.origin, pixels: p.pixels.quantize_u8() }
}

/// Result of tiling an in-memory slide.
pub struct Processed {
    pub image: PlanarImage,
    pub spec: GridSpec,
    pub split_ms: f64,
    pub transform_ms: f64,
    pub blend_ms: f64,
}

/// Streams `img` through split -> backend -> blend and crops back to its size.
///
/// Patches move in row-major batches; at most one batch of patches is alive
/// alongside the accumulator.
pub fn process_image(
    img: &PlanarImage,
    n: usize,
    m: usize,
    backend: &BackendSpec,
    seed: u64,
    workers: usize,
) -> Result<Processed> {
    let spec = GridSpec::fit(img.height(), img.width(), n, m).map_err(|e| e.in_stage("plan"))?;
    let padded = pad_to_grid(img, &spec).map_err(|e| e.in_stage("split"))?;
    let pool = build_pool(workers)?;
    let mut transformer = Transformer::new(backend, seed, n).map_err(|e| e.in_stage("transform"))?;
    let mut acc = BlendAccumulator::new(&spec).map_err(|e| e.in_stage("blend"))?;

    let origins = plan_grid(&spec);
    let batch_len = 4 * workers.max(transformer.sessions.len()).max(1);
    let (mut split_ms, mut transform_ms, mut blend_ms) = (0.0, 0.0, 0.0);
    for (b, chunk) in origins.chunks(batch_len).enumerate() {
        let t = Instant::now();
        let patches: Vec<PatchRecord> = pool
            .install(|| chunk.par_iter().map(|&o| extract(&padded, &spec, o)).collect::<Result<_>>())
            .map_err(|e| e.in_stage("split"))?;
        split_ms += ms(t);

        let t = Instant::now();
        let out = pool
            .install(|| transformer.run(patches, b * batch_len))
            .map_err(|e| e.in_stage("transform"))?;
        transform_ms += ms(t);

        let t = Instant::now();
        pool.install(|| acc.add_batch(&out, workers)).map_err(|e| e.in_stage("blend"))?;
        blend_ms += ms(t);
    }
    transformer.close().map_err(|e| e.in_stage("transform"))?;

    let t = Instant::now();
    let tiled = acc.finish().map_err(|e| e.in_stage("blend"))?;
    let image = tiled.image.crop(img.height(), img.width()).map_err(|e| e.in_stage("blend"))?;
    blend_ms += ms(t);
    Ok(Processed { image, spec, split_ms, transform_ms, blend_ms })
}

/// Runs a whole job and writes the output image and its manifest.
pub fn run(config: &JobConfig) -> Result<RunManifest> {
    config.validate()?;
    let t = Instant::now();
    let input = load_image(&config.input).map_err(|e| e.in_stage("load"))?;
    let input_sha256 = sha256_file(&config.input).map_err(|e| e.in_stage("load"))?;
    let load_ms = ms(t);

    let processed = process_image(&input, config.n, config.m, &config.backend, config.seed, config.workers)?;

    let t = Instant::now();
    save_image(&processed.image, &config.output).map_err(|e| e.in_stage("save"))?;
    let output_sha256 = sha256_file(&config.output).map_err(|e| e.in_stage("save"))?;
    let save_ms = ms(t);

    let t = Instant::now();
    let mut metrics = RunMetrics::default();
    if config.metrics.seam {
        metrics.seam = Some(seam_discontinuity(&processed.image, config.n).map_err(|e| e.in_stage("metrics"))?);
    }
    if config.metrics.hist_corr {
        metrics.hist_corr =
            Some(histogram_correlation(&input, &processed.image).map_err(|e| e.in_stage("metrics"))?);
    }
    let metrics_ms = ms(t);

    let spec = processed.spec;
    let (rows, cols) = spec.lattice_dims();
    let manifest = RunManifest {
        config: config.clone(),
        input_dims: [input.height(), input.width()],
        padded_dims: [spec.height, spec.width],
        lattice: [rows, cols],
        patch_count: spec.patch_count(),
        timings: StageTimings {
            load_ms,
            split_ms: processed.split_ms,
            transform_ms: processed.transform_ms,
            blend_ms: processed.blend_ms,
            save_ms,
            metrics_ms,
        },
        input_sha256,
        output_sha256,
        metrics,
    };
    write_json(&config.manifest_path(), &manifest).map_err(|e| e.in_stage("save"))?;
    Ok(manifest)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("manifest serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json { path: path.into(), source })
}

pub const SPLIT_MANIFEST: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Padding {
    pub bottom: usize,
    pub right: usize,
}

/// Describes a directory of patch files produced by [`split_cmd`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitManifest {
    /// `[height, width]` of the source image before padding.
    pub source_dims: [usize; 2],
    pub grid: GridSpec,
    pub padding: Padding,
    pub patch_count: usize,
    pub origins: Vec<Origin>,
}

impl SplitManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let m: SplitManifest = read_json(path)?;
        let grid = GridSpec::new(m.grid.height, m.grid.width, m.grid.patch, m.grid.stride)?;
        let [h, w] = m.source_dims;
        if h > grid.height || w > grid.width || m.padding != (Padding { bottom: grid.height - h, right: grid.width - w }) {
            return Err(Error::contract(format!("{}: padding does not match grid and source size", path.display())));
        }
        if m.patch_count != m.origins.len() || m.patch_count != grid.patch_count() {
            return Err(Error::contract(format!(
                "{}: manifest lists {} origins, patch_count {}, grid needs {}",
                path.display(),
                m.origins.len(),
                m.patch_count,
                grid.patch_count()
            )));
        }
        let (missing, extra) = lattice_gaps(&grid, m.origins.iter().copied());
        if !missing.is_empty() || !extra.is_empty() {
            return Err(Error::contract(format!(
                "{}: origins do not form the grid lattice ({} missing, {} off-lattice)",
                path.display(),
                missing.len(),
                extra.len()
            )));
        }
        Ok(m)
    }
}

pub fn patch_file_name(o: Origin) -> String {
    format!("patch_r{}_c{}.png", o.row, o.col)
}

/// Parses `patch_r{row}_c{col}.png`.
pub fn parse_patch_file_name(name: &str) -> Option<Origin> {
    let rest = name.strip_prefix("patch_r")?.strip_suffix(".png")?;
    let (r, c) = rest.split_once("_c")?;
    let row = r.parse().ok()?;
    let col = c.parse().ok()?;
    (patch_file_name(Origin::new(row, col)) == name).then_some(Origin::new(row, col))
}

/// Writes every patch of `input` as a PNG plus `manifest.json` into `out_dir`.
pub fn split_cmd(input: &Path, n: usize, m: usize, out_dir: &Path) -> Result<SplitManifest> {
    let img = load_image(input).map_err(|e| e.in_stage("load"))?;
    let spec = GridSpec::fit(img.height(), img.width(), n, m)?;
    let padded = pad_to_grid(&img, &spec).map_err(|e| e.in_stage("split"))?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e).in_stage("split"))?;
    let origins = plan_grid(&spec);
    origins
        .par_iter()
        .try_for_each(|&o| {
            let p = extract(&padded, &spec, o)?;
            save_image(&p.pixels, out_dir.join(patch_file_name(o)))
        })
        .map_err(|e| e.in_stage("split"))?;
    let manifest = SplitManifest {
        source_dims: [img.height(), img.width()],
        grid: spec,
        padding: Padding { bottom: spec.height - img.height(), right: spec.width - img.width() },
        patch_count: origins.len(),
        origins,
    };
    write_json(&out_dir.join(SPLIT_MANIFEST), &manifest).map_err(|e| e.in_stage("split"))?;
    Ok(manifest)
}

/// Checks that `dir` holds exactly the manifest's patch files.
pub fn check_patch_dir(manifest: &SplitManifest, dir: &Path) -> Result<()> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut found = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if let Some(o) = entry.file_name().to_str().and_then(parse_patch_file_name) {
            found.push(o);
        }
    }
    let (missing, extra) = lattice_gaps(&manifest.grid, found);
    if missing.is_empty() && extra.is_empty() {
        return Ok(());
    }
    let list = |v: &[Origin]| v.iter().map(|o| patch_file_name(*o)).collect::<Vec<_>>().join(", ");
    let mut msg = format!("patch directory {} does not match the manifest:", dir.display());
    if !missing.is_empty() {
        msg.push_str(&format!(" missing origins {} [{}]", missing.len(), list(&missing)));
    }
    if !extra.is_empty() {
        msg.push_str(&format!(" extra origins {} [{}]", extra.len(), list(&extra)));
    }
    Err(Error::contract(msg))
}

/// Blends the patch files listed in a split manifest, writes the cropped
/// result to `out` and returns it as written (8-bit values).
pub fn tile_cmd(manifest_path: &Path, patches_dir: &Path, out: &Path) -> Result<PlanarImage> {
    let manifest = SplitManifest::load(manifest_path)?;
    check_patch_dir(&manifest, patches_dir)?;
    let mut acc = BlendAccumulator::new(&manifest.grid)?;
    for &o in &manifest.origins {
        let path = patches_dir.join(patch_file_name(o));
        let pixels = load_image(&path).map_err(|e| e.in_stage("tile"))?;
        acc.add(&PatchRecord { origin: o, pixels }).map_err(|e| e.in_stage("tile"))?;
    }
    let tiled = acc.finish().map_err(|e| e.in_stage("tile"))?;
    let [h, w] = manifest.source_dims;
    let image = tiled.image.crop(h, w)?.quantize_u8();
    save_image(&image, out).map_err(|e| e.in_stage("save"))?;
    Ok(image)
}

/// Runs a backend over a split directory, writing transformed patches and a
/// copy of the manifest into `out_dir`.
pub fn apply_cmd(
    manifest_path: &Path,
    patches_dir: &Path,
    backend: &BackendSpec,
    seed: u64,
    workers: usize,
    out_dir: &Path,
) -> Result<()> {
    let manifest = SplitManifest::load(manifest_path)?;
    check_patch_dir(&manifest, patches_dir)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let pool = build_pool(workers)?;
    let mut transformer =
        Transformer::new(backend, seed, manifest.grid.patch).map_err(|e| e.in_stage("transform"))?;
    let batch_len = 4 * workers.max(1);
    for (b, chunk) in manifest.origins.chunks(batch_len).enumerate() {
        let patches = chunk
            .iter()
            .map(|&o| {
                load_image(patches_dir.join(patch_file_name(o))).map(|pixels| PatchRecord { origin: o, pixels })
            })
            .collect::<Result<Vec<_>>>()
            .map_err(|e| e.in_stage("load"))?;
        let out = pool
            .install(|| transformer.run(patches, b * batch_len))
            .map_err(|e| e.in_stage("transform"))?;
        for p in out {
            save_image(&p.pixels, out_dir.join(patch_file_name(p.origin))).map_err(|e| e.in_stage("save"))?;
        }
    }
    transformer.close().map_err(|e| e.in_stage("transform"))?;
    write_json(&out_dir.join(SPLIT_MANIFEST), &manifest)
}
