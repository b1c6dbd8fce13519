//! Per-patch transforms applied between split and blend.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::patchgrid::{Origin, PatchRecord};
use crate::protocol::ExternalSession;

pub const DEFAULT_TIMEOUT_SECS: f64 = 60.0;
pub const DEFAULT_MAX_FRAME_BYTES: usize = 256 << 20;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "BackendRepr", into = "BackendRepr")]
pub enum BackendSpec {
    #[default]
    Identity,
    /// `clamp(matrix * rgb + bias)`
    ColorMatrix { matrix: [[f64; 3]; 3], bias: [f64; 3] },
    /// Multiplies each patch by one gain drawn uniformly from
    /// `[gain_min, gain_max]`, seeded by `seed ^ origin`.
    ContrastJitter {
        gain_min: f64,
        gain_max: f64,
        /// Falls back to the job seed when absent.
        seed: Option<u64>,
    },
    External(ExternalSpec),
}

// Wire form: unit variants become empty structs so unknown keys are rejected.
#[derive(Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum BackendRepr {
    Identity {},
    ColorMatrix {
        matrix: [[f64; 3]; 3],
        #[serde(default)]
        bias: [f64; 3],
    },
    ContrastJitter {
        gain_min: f64,
        gain_max: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    External(ExternalSpec),
}

impl From<BackendRepr> for BackendSpec {
    fn from(r: BackendRepr) -> Self {
        match r {
            BackendRepr::Identity {} => BackendSpec::Identity,
            BackendRepr::ColorMatrix { matrix, bias } => BackendSpec::ColorMatrix { matrix, bias },
            BackendRepr::ContrastJitter { gain_min, gain_max, seed } => {
                BackendSpec::ContrastJitter { gain_min, gain_max, seed }
            }
            BackendRepr::External(e) => BackendSpec::External(e),
        }
    }
}

impl From<BackendSpec> for BackendRepr {
    fn from(s: BackendSpec) -> Self {
        match s {
            BackendSpec::Identity => BackendRepr::Identity {},
            BackendSpec::ColorMatrix { matrix, bias } => BackendRepr::ColorMatrix { matrix, bias },
            BackendSpec::ContrastJitter { gain_min, gain_max, seed } => {
                BackendRepr::ContrastJitter { gain_min, gain_max, seed }
            }
            BackendSpec::External(e) => BackendRepr::External(e),
        }
    }
}

/// A child process speaking the framed patch protocol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalSpec {
    /// Program followed by its arguments.
    pub command: Vec<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    /// Independent child processes; patch `i` goes to session `i % sessions`.
    #[serde(default = "default_sessions")]
    pub sessions: usize,
    #[serde(default = "default_max_frame")]
    pub max_frame_bytes: usize,
}

fn default_timeout() -> f64 {
    DEFAULT_TIMEOUT_SECS
}

fn default_sessions() -> usize {
    1
}

fn default_max_frame() -> usize {
    DEFAULT_MAX_FRAME_BYTES
}

impl ExternalSpec {
    pub fn new(command: Vec<String>) -> Self {
        ExternalSpec {
            command,
            timeout_secs: DEFAULT_TIMEOUT_SECS,
            sessions: 1,
            max_frame_bytes: DEFAULT_MAX_FRAME_BYTES,
        }
    }
}

impl BackendSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            BackendSpec::Identity => Ok(()),
            BackendSpec::ColorMatrix { matrix, bias } => {
                if matrix.iter().flatten().chain(bias).all(|v| v.is_finite()) {
                    Ok(())
                } else {
                    Err(Error::config("color_matrix entries must be finite"))
                }
            }
            BackendSpec::ContrastJitter { gain_min, gain_max, .. } => {
                let ok = *gain_min > 0.0 && gain_min <= gain_max && *gain_max <= 2.0;
                if ok {
                    Ok(())
                } else {
                    Err(Error::config(format!(
                        "contrast_jitter gain range [{gain_min}, {gain_max}] must satisfy 0 < min <= max <= 2"
                    )))
                }
            }
            BackendSpec::External(ext) => {
                if ext.command.is_empty() || ext.command[0].is_empty() {
                    return Err(Error::config("external backend command is empty"));
                }
                if !(ext.timeout_secs.is_finite() && ext.timeout_secs > 0.0) {
                    return Err(Error::config("external timeout_secs must be positive"));
                }
                if ext.sessions == 0 {
                    return Err(Error::config("external sessions must be at least 1"));
                }
                if ext.max_frame_bytes < 64 {
                    return Err(Error::config("external max_frame_bytes is too small"));
                }
                Ok(())
            }
        }
    }

    pub fn is_external(&self) -> bool {
        matches!(self, BackendSpec::External(_))
    }
}

/// Gain used by `contrast_jitter` for the patch at `origin`.
pub fn jitter_gain(seed: u64, origin: Origin, gain_min: f64, gain_max: f64) -> f64 {
    let key = ((origin.row as u64) << 32) | origin.col as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ key);
    if gain_min == gain_max {
        gain_min
    } else {
        rng.random_range(gain_min..=gain_max)
    }
}

/// Applies a built-in backend. `job_seed` feeds `contrast_jitter` specs that
/// carry no seed of their own. External specs start a one-shot session; use
/// [`ExternalSession`] directly to reuse a child across patches.
pub fn apply(backend: &BackendSpec, p: &PatchRecord, job_seed: u64) -> Result<PatchRecord> {
    backend.validate()?;
    let pixels = match backend {
        BackendSpec::Identity => p.pixels.clone(),
        BackendSpec::ColorMatrix { matrix, bias } => p.pixels.map_pixels(|px| {
            let mut out = *bias;
            for (o, row) in out.iter_mut().zip(matrix) {
                *o += row[0] * px[0] + row[1] * px[1] + row[2] * px[2];
            }
            out
        }),
        BackendSpec::ContrastJitter { gain_min, gain_max, seed } => {
            let g = jitter_gain(seed.unwrap_or(job_seed), p.origin, *gain_min, *gain_max);
            p.pixels.map_pixels(|px| px.map(|v| v * g))
        }
        BackendSpec::External(ext) => {
            let mut session = ExternalSession::spawn(ext, p.pixels.height())?;
            let out = session.transform(p)?;
            session.close()?;
            return Ok(out);
        }
    };
    Ok(PatchRecord { origin: p.origin, pixels })
}
