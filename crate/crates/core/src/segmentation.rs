//! Organ-wise segmentation: the combined cross-entropy + Dice objective, the
//! per-organ predictor contract, and inference on a region of interest.
//!
//! The objective is
//!
//! ```text
//! L = -sum g log p  -  2 sum p g / (sum p^2 + sum g^2)
//! ```
//!
//! with the Dice term subtracted directly, so a perfect prediction scores
//! about -1 and the loss is bounded below by -1. `p` is clamped to
//! `[1e-7, 1 - 1e-7]` inside the logarithm only. When both `p` and `g` are
//! all zero the Dice term is defined as 0.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::model::ConvNet;
use crate::volume::{self, BoundingBox, Volume, Volume3D, VolumeKind};

pub const PROB_EPS: f64 = 1e-7;

/// Predicted foreground probabilities and the binary ground truth on one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMaskPair {
    p: Volume3D,
    g: Volume3D,
}

impl BinaryMaskPair {
    pub fn new(p: Volume3D, g: Volume3D) -> Result<Self> {
        if p.grid() != g.grid() {
            return Err(Error::invalid("prediction and ground truth grids differ"));
        }
        if p.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("probabilities must lie in [0, 1]"));
        }
        if g.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::invalid("ground truth must be binary"));
        }
        Ok(BinaryMaskPair { p, g })
    }

    pub fn p(&self) -> &Volume3D {
        &self.p
    }

    pub fn g(&self) -> &Volume3D {
        &self.g
    }
}

pub fn ce_dice_loss(pair: &BinaryMaskPair) -> f64 {
    ce_dice_raw(pair.p.data(), pair.g.data())
}

/// Per-voxel derivative of [`ce_dice_loss`] with respect to `p`.
pub fn ce_dice_grad(pair: &BinaryMaskPair) -> Result<Volume3D> {
    let grad = ce_dice_grad_raw(pair.p.data(), pair.g.data());
    Volume::new(*pair.p.grid(), VolumeKind::Intensity, grad)
}

#[inline]
fn clamp_p(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

fn dice_sums(p: &[f64], g: &[f64]) -> (f64, f64) {
    let mut pg = 0.0;
    let mut den = 0.0;
    for (a, b) in p.iter().zip(g) {
        pg += a * b;
        den += a * a + b * b;
    }
    (pg, den)
}

pub(crate) fn ce_dice_raw(p: &[f64], g: &[f64]) -> f64 {
    let ce: f64 = p.iter().zip(g).filter(|(_, &g)| g != 0.0).map(|(&p, &g)| -g * math::ln(clamp_p(p))).sum();
    let (pg, den) = dice_sums(p, g);
    let dice = if den == 0.0 { 0.0 } else { 2.0 * pg / den };
    ce - dice
}

pub(crate) fn ce_dice_grad_raw(p: &[f64], g: &[f64]) -> Vec<f64> {
    let (pg, den) = dice_sums(p, g);
    p.iter()
        .zip(g)
        .map(|(&p, &g)| {
            let ce = if g != 0.0 { -g / clamp_p(p) } else { 0.0 };
            let dice = if den == 0.0 { 0.0 } else { (2.0 * g * den - 2.0 * pg * 2.0 * p) / (den * den) };
            ce - dice
        })
        .collect()
}

/// Maps an image crop to per-voxel foreground probabilities of one organ.
pub trait OrganPredictor {
    fn name(&self) -> String;
    fn predict(&self, crop: &Volume3D) -> Result<Volume3D>;
}

/// Reference predictor for phantoms: a logistic-smoothed indicator of the
/// intensity lying within `half_width` of the organ's nominal intensity,
/// `p = sigmoid((half_width - |I - intensity|) / softness)`. Voxel-local, so
/// its output on a sub-crop equals the restriction of its output on the
/// enclosing crop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntensityBandPredictor {
    pub intensity: f64,
    pub half_width: f64,
    pub softness: f64,
}

impl OrganPredictor for IntensityBandPredictor {
    fn name(&self) -> String {
        format!("intensity-band({})", self.intensity)
    }

    fn predict(&self, crop: &Volume3D) -> Result<Volume3D> {
        if !(self.half_width > 0.0 && self.softness > 0.0) {
            return Err(Error::invalid("intensity band needs positive half_width and softness"));
        }
        crop.map(VolumeKind::Probability, |&v| {
            math::sigmoid((self.half_width - (v - self.intensity).abs()) / self.softness)
        })
    }
}

/// Same probability everywhere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantPredictor(pub f64);

impl OrganPredictor for ConstantPredictor {
    fn name(&self) -> String {
        format!("constant({})", self.0)
    }

    fn predict(&self, crop: &Volume3D) -> Result<Volume3D> {
        Volume::filled(*crop.grid(), VolumeKind::Probability, self.0)
    }
}

/// Trained network: the crop is normalized to zero mean and unit variance,
/// then output channel `channel` is returned.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvNetPredictor {
    pub net: ConvNet,
    pub channel: usize,
}

impl OrganPredictor for ConvNetPredictor {
    fn name(&self) -> String {
        "conv-net".to_string()
    }

    fn predict(&self, crop: &Volume3D) -> Result<Volume3D> {
        let input = volume::normalize(crop)?;
        let mut out = self.net.forward(&input)?;
        if self.channel >= out.len() {
            return Err(Error::invalid(format!("network has no output channel {}", self.channel)));
        }
        Volume::new(*crop.grid(), VolumeKind::Probability, out.swap_remove(self.channel))
    }
}

impl<P: OrganPredictor + ?Sized> OrganPredictor for Box<P> {
    fn name(&self) -> String {
        (**self).name()
    }

    fn predict(&self, crop: &Volume3D) -> Result<Volume3D> {
        (**self).predict(crop)
    }
}

/// Probabilities for one organ over a box of the image grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityCrop {
    pub bbox: BoundingBox,
    pub probs: Volume3D,
}

/// Crop `image` at `bbox` (out-of-image voxels take `pad`) and run the
/// predictor on the crop.
pub fn segment_organ(
    predictor: &dyn OrganPredictor,
    image: &Volume3D,
    bbox: &BoundingBox,
    pad: f64,
) -> Result<ProbabilityCrop> {
    let crop = volume::crop(image, bbox, pad)?;
    let probs = predictor.predict(&crop)?;
    if probs.dims() != crop.dims() {
        return Err(Error::ContractViolation {
            predictor: predictor.name(),
            detail: format!("returned dims {:?} for a {:?} crop", probs.dims(), crop.dims()),
        });
    }
    if probs.kind() != VolumeKind::Probability {
        return Err(Error::ContractViolation {
            predictor: predictor.name(),
            detail: format!("returned a {:?} volume instead of probabilities", probs.kind()),
        });
    }
    Ok(ProbabilityCrop { bbox: *bbox, probs })
}
