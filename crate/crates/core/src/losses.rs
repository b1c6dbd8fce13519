//! Value-mapping GAN objective terms.
//!
//! All l1 norms are per-element means, so magnitudes do not depend on
//! patch size. Reductions run sequentially in index order.

use serde::{Deserialize, Serialize};

use crate::colorspace::value_channel;
use crate::error::{Error, Result};
use crate::image::{PlanarImage, CHANNELS};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_cycle: f64,
    pub lambda_value: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { lambda_cycle: 10.0, lambda_value: 5.0 }
    }
}

impl LossWeights {
    pub fn new(lambda_cycle: f64, lambda_value: f64) -> Result<Self> {
        for (name, x) in [("lambda_cycle", lambda_cycle), ("lambda_value", lambda_value)] {
            if !(x.is_finite() && x >= 0.0) {
                return Err(Error::config(format!("{name} = {x} must be finite and >= 0")));
            }
        }
        Ok(LossWeights { lambda_cycle, lambda_value })
    }
}

/// Unweighted objective terms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub adv_ab: f64,
    pub adv_ba: f64,
    pub cycle: f64,
    pub value_a: f64,
    pub value_b: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub adv_ab: f64,
    pub adv_ba: f64,
    pub cycle: f64,
    pub value_a: f64,
    pub value_b: f64,
    pub total: f64,
    pub weights: LossWeights,
}

/// `adv_ab + adv_ba + lambda_cycle * cycle + lambda_value * (value_a + value_b)`.
pub fn total_loss(c: LossComponents, weights: LossWeights) -> Result<LossReport> {
    let weights = LossWeights::new(weights.lambda_cycle, weights.lambda_value)?;
    let total = c.adv_ab
        + c.adv_ba
        + weights.lambda_cycle * c.cycle
        + weights.lambda_value * (c.value_a + c.value_b);
    Ok(LossReport {
        adv_ab: c.adv_ab,
        adv_ba: c.adv_ba,
        cycle: c.cycle,
        value_a: c.value_a,
        value_b: c.value_b,
        total,
        weights,
    })
}

fn same_dims(what: &str, a: &PlanarImage, b: &PlanarImage) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::contract(format!(
            "{what}: image sizes differ ({}x{} vs {}x{})",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    Ok(())
}

/// Mean `|max(gx) - max(x)|` over pixels.
pub fn value_loss(x: &PlanarImage, gx: &PlanarImage) -> Result<f64> {
    same_dims("value_loss", x, gx)?;
    let vx = value_channel(x);
    let vg = value_channel(gx);
    if vx.data.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = vx.data.iter().zip(&vg.data).map(|(a, b)| (b - a).abs()).sum();
    Ok(sum / vx.data.len() as f64)
}

fn mean_abs_diff(a: &PlanarImage, b: &PlanarImage) -> f64 {
    let n = a.as_slice().len();
    if n == 0 {
        return 0.0;
    }
    let sum: f64 = a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y).abs()).sum();
    sum / n as f64
}

/// Mean per-element `|aba - a|` plus mean `|bab - b|`.
pub fn cycle_loss(a: &PlanarImage, aba: &PlanarImage, b: &PlanarImage, bab: &PlanarImage) -> Result<f64> {
    same_dims("cycle_loss (A direction)", a, aba)?;
    same_dims("cycle_loss (B direction)", b, bab)?;
    Ok(mean_abs_diff(aba, a) + mean_abs_diff(bab, b))
}

/// Discriminator outputs, each strictly inside `(0, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScorePlane {
    pub height: usize,
    pub width: usize,
    values: Vec<f64>,
}

impl ScorePlane {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width || values.is_empty() {
            return Err(Error::contract(format!(
                "score plane {height}x{width} needs {} values, got {}",
                height * width,
                values.len()
            )));
        }
        if let Some((i, &v)) = values.iter().enumerate().find(|(_, &v)| !(v > 0.0 && v < 1.0)) {
            return Err(Error::domain(format!(
                "discriminator score {v} at index {i} is not strictly inside (0, 1); log is singular"
            )));
        }
        Ok(ScorePlane { height, width, values })
    }

    pub fn filled(height: usize, width: usize, v: f64) -> Result<Self> {
        ScorePlane::new(height, width, vec![v; height * width])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn mean_of(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.values.iter().map(|&v| f(v)).sum::<f64>() / self.values.len() as f64
    }
}

/// `mean ln D(real) + mean ln(1 - D(fake))`, the quantity the discriminator maximizes.
pub fn adversarial_loss_discriminator(scores_real: &ScorePlane, scores_fake: &ScorePlane) -> f64 {
    scores_real.mean_of(f64::ln) + scores_fake.mean_of(|s| (1.0 - s).ln())
}

/// `mean ln(1 - D(fake))`, the quantity the generator minimizes.
pub fn adversarial_loss_generator(scores_fake: &ScorePlane) -> f64 {
    scores_fake.mean_of(|s| (1.0 - s).ln())
}

/// Everything needed to evaluate the full objective for one batch element.
///
/// `G1: A -> B` is judged by `D1`, `G2: B -> A` by `D2`.
pub struct LossInputs<'a> {
    pub real_a: &'a PlanarImage,
    pub real_b: &'a PlanarImage,
    /// `G1(A)`
    pub fake_b: &'a PlanarImage,
    /// `G2(B)`
    pub fake_a: &'a PlanarImage,
    /// `G2(G1(A))`
    pub rec_a: &'a PlanarImage,
    /// `G1(G2(B))`
    pub rec_b: &'a PlanarImage,
    /// `D1(b)`
    pub d1_real: &'a ScorePlane,
    /// `D1(G1(a))`
    pub d1_fake: &'a ScorePlane,
    /// `D2(a)`
    pub d2_real: &'a ScorePlane,
    /// `D2(G2(b))`
    pub d2_fake: &'a ScorePlane,
}

pub fn compute_losses(inputs: &LossInputs<'_>, weights: LossWeights) -> Result<LossReport> {
    let components = LossComponents {
        adv_ab: adversarial_loss_discriminator(inputs.d1_real, inputs.d1_fake),
        adv_ba: adversarial_loss_discriminator(inputs.d2_real, inputs.d2_fake),
        cycle: cycle_loss(inputs.real_a, inputs.rec_a, inputs.real_b, inputs.rec_b)?,
        value_a: value_loss(inputs.real_a, inputs.fake_b)?,
        value_b: value_loss(inputs.real_b, inputs.fake_a)?,
    };
    total_loss(components, weights)
}

/// Gradient of [`value_loss`] with respect to `gx`, planar layout like [`PlanarImage`].
#[derive(Clone, Debug, PartialEq)]
pub struct ValueLossGradient {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
    /// Pixels `(row, col)` whose channel maximum in `gx` is tied within
    /// [`TIE_TOLERANCE`]; the gradient there is one valid subgradient.
    pub ties: Vec<(usize, usize)>,
}

pub const TIE_TOLERANCE: f64 = 1e-6;

impl ValueLossGradient {
    pub fn at(&self, ch: usize, row: usize, col: usize) -> f64 {
        self.data[ch * self.height * self.width + row * self.width + col]
    }
}

/// `sign(max(gx) - max(x)) / pixel_count` on the argmax channel of each
/// `gx` pixel, zero elsewhere.
pub fn value_loss_gradient(x: &PlanarImage, gx: &PlanarImage) -> Result<ValueLossGradient> {
    same_dims("value_loss_gradient", x, gx)?;
    let (height, width) = gx.dims();
    let area = height * width;
    let vx = value_channel(x);
    let mut data = vec![0.0; CHANNELS * area];
    let mut ties = Vec::new();
    let scale = if area == 0 { 0.0 } else { 1.0 / area as f64 };
    for i in 0..area {
        let px = [gx.plane(0)[i], gx.plane(1)[i], gx.plane(2)[i]];
        let mut arg = 0;
        for ch in 1..CHANNELS {
            if px[ch] > px[arg] {
                arg = ch;
            }
        }
        let tied = (0..CHANNELS).any(|ch| ch != arg && px[arg] - px[ch] <= TIE_TOLERANCE);
        if tied {
            ties.push((i / width, i % width));
        }
        let diff = px[arg] - vx.data[i];
        let sign = if diff > 0.0 {
            1.0
        } else if diff < 0.0 {
            -1.0
        } else {
            0.0
        };
        data[arg * area + i] = sign * scale;
    }
    Ok(ValueLossGradient { height, width, data, ties })
}
