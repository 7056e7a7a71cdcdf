//! Gaussian centroid heatmaps and the L2 regression objective.
//!
//! Channel `i` holds `exp(-|x - mu_i|^2 / (2 sigma^2))` evaluated at every
//! voxel center, with distances in mm. An organ without a centroid gets an
//! all-zero channel.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::volume::{Grid, Volume, Volume3D, VolumeKind};

/// One heatmap channel per organ, all on the same grid.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapStack {
    pub organ_ids: Vec<u16>,
    pub sigma_sq: f64,
    channels: Vec<Volume3D>,
}

impl HeatmapStack {
    pub fn new(organ_ids: Vec<u16>, sigma_sq: f64, channels: Vec<Volume3D>) -> Result<Self> {
        if organ_ids.len() != channels.len() {
            return Err(Error::invalid(format!(
                "{} organ ids for {} channels",
                organ_ids.len(),
                channels.len()
            )));
        }
        if let Some(first) = channels.first() {
            if channels.iter().any(|c| c.grid() != first.grid()) {
                return Err(Error::invalid("heatmap channels must share one grid"));
            }
        }
        Ok(HeatmapStack { organ_ids, sigma_sq, channels })
    }

    pub fn channels(&self) -> &[Volume3D] {
        &self.channels
    }

    pub fn channel(&self, organ: u16) -> Option<&Volume3D> {
        self.organ_ids.iter().position(|&id| id == organ).map(|i| &self.channels[i])
    }

    pub fn grid(&self) -> Option<&Grid> {
        self.channels.first().map(|c| c.grid())
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    fn check_same_shape(&self, other: &HeatmapStack) -> Result<()> {
        if self.len() != other.len() || self.grid() != other.grid() {
            return Err(Error::invalid("heatmap stacks differ in channel count or grid"));
        }
        Ok(())
    }
}

/// Gaussian heatmap value for a squared mm distance.
#[inline]
pub fn gaussian(dist_sq: f64, sigma_sq: f64) -> f64 {
    math::exp(-dist_sq / (2.0 * sigma_sq))
}

/// Ground-truth heatmaps. `centroids[i]` is organ `organ_ids[i]`'s center in
/// mm, or `None` when the organ is absent from the scan.
pub fn synthesize_heatmaps(
    organ_ids: &[u16],
    centroids: &[Option<[f64; 3]>],
    grid: &Grid,
    sigma_sq: f64,
) -> Result<HeatmapStack> {
    if !(sigma_sq.is_finite() && sigma_sq > 0.0) {
        return Err(Error::invalid(format!("sigma_sq must be positive, got {sigma_sq}")));
    }
    if organ_ids.len() != centroids.len() {
        return Err(Error::invalid("one centroid slot per organ is required"));
    }
    grid.validate()?;
    let channels = centroids
        .iter()
        .map(|c| match c {
            None => Volume::filled(*grid, VolumeKind::Heatmap, 0.0),
            Some(mu) => Volume::from_fn(*grid, VolumeKind::Heatmap, |ijk| {
                let x = grid.world(ijk);
                let d2 = (0..3).map(|a| (x[a] - mu[a]) * (x[a] - mu[a])).sum::<f64>();
                gaussian(d2, sigma_sq)
            }),
        })
        .collect::<Result<Vec<_>>>()?;
    HeatmapStack::new(organ_ids.to_vec(), sigma_sq, channels)
}

/// Mean squared difference over all voxels and channels.
pub fn l2_loss(truth: &HeatmapStack, pred: &HeatmapStack) -> Result<f64> {
    truth.check_same_shape(pred)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (t, p) in truth.channels.iter().zip(&pred.channels) {
        sum += t.data().iter().zip(p.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        n += t.len();
    }
    if n == 0 {
        return Ok(0.0);
    }
    Ok(sum / n as f64)
}

/// Gradient of [`l2_loss`] with respect to `pred`: `2 (pred - truth) / N`,
/// one buffer per channel.
pub fn l2_loss_grad(truth: &HeatmapStack, pred: &HeatmapStack) -> Result<Vec<Vec<f64>>> {
    truth.check_same_shape(pred)?;
    let n: usize = truth.channels.iter().map(|c| c.len()).sum();
    let scale = 2.0 / n.max(1) as f64;
    Ok(truth
        .channels
        .iter()
        .zip(&pred.channels)
        .map(|(t, p)| t.data().iter().zip(p.data()).map(|(a, b)| scale * (b - a)).collect())
        .collect())
}

/// Raw-buffer form of [`l2_loss`] and its gradient used by the trainer;
/// `targets` and `outputs` are channel-major.
pub(crate) fn l2_loss_and_grad(targets: &[Vec<f64>], outputs: &[Vec<f64>]) -> (f64, Vec<Vec<f64>>) {
    let n: usize = targets.iter().map(|c| c.len()).sum::<usize>().max(1);
    let scale = 2.0 / n as f64;
    let mut sum = 0.0;
    let grads = targets
        .iter()
        .zip(outputs)
        .map(|(t, o)| {
            t.iter()
                .zip(o)
                .map(|(a, b)| {
                    sum += (b - a) * (b - a);
                    scale * (b - a)
                })
                .collect()
        })
        .collect();
    (sum / n as f64, grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn peak_and_e_inverse() {
        let g = Grid::new([11, 11, 11], [1.0; 3]).unwrap();
        let s = synthesize_heatmaps(&[1], &[Some([5.0, 5.0, 5.0])], &g, 150.0).unwrap();
        let c = &s.channels()[0];
        assert_eq!(c.get([5, 5, 5]), 1.0);
        // Voxel (1,1,1) of a 10 mm grid sits 300 mm² from the origin.
        let g = Grid::new([11, 11, 11], [10.0; 3]).unwrap();
        let s = synthesize_heatmaps(&[1], &[Some([0.0; 3])], &g, 150.0).unwrap();
        let v = s.channels()[0].get([1, 1, 1]);
        assert!((v - (-1.0f64).exp()).abs() < 1e-12);
        assert!((v - 0.367879).abs() < 1e-6);
    }

    #[test]
    fn absent_channel_is_zero() {
        let g = Grid::new([4, 4, 4], [3.0; 3]).unwrap();
        let s = synthesize_heatmaps(&[1, 2], &[Some([3.0; 3]), None], &g, 150.0).unwrap();
        assert!(s.channels()[1].data().iter().all(|&v| v == 0.0));
        assert!(synthesize_heatmaps(&[1], &[None], &g, 0.0).is_err());
        assert!(synthesize_heatmaps(&[1], &[None], &g, -3.0).is_err());
    }

    #[test]
    fn l2_closed_forms() {
        let g = Grid::new([3, 2, 2], [1.0; 3]).unwrap();
        let zero = |c| Volume::filled(g, VolumeKind::Heatmap, c).unwrap();
        let t = HeatmapStack::new(vec![1, 2], 150.0, vec![zero(0.0), zero(0.0)]).unwrap();
        let p = HeatmapStack::new(vec![1, 2], 150.0, vec![zero(0.3), zero(0.3)]).unwrap();
        assert!((l2_loss(&t, &p).unwrap() - 0.09).abs() < 1e-15);
        assert_eq!(l2_loss(&t, &t).unwrap(), 0.0);
        assert!(l2_loss_grad(&t, &t).unwrap().iter().flatten().all(|&v| v == 0.0));
        let one = HeatmapStack::new(vec![1], 150.0, vec![zero(0.0)]).unwrap();
        assert!(l2_loss(&t, &one).is_err());
        assert!(l2_loss_grad(&one, &t).is_err());
    }

    #[test]
    fn single_voxel_perturbation_gradient() {
        let g = Grid::new([2, 2, 2], [1.0; 3]).unwrap();
        let base = Volume::filled(g, VolumeKind::Heatmap, 0.4).unwrap();
        let mut bumped = base.data().to_vec();
        bumped[3] += 0.01;
        let t = HeatmapStack::new(vec![1], 150.0, vec![base.clone()]).unwrap();
        let p = HeatmapStack::new(vec![1], 150.0, vec![base.with_data(bumped).unwrap()]).unwrap();
        let grad = l2_loss_grad(&t, &p).unwrap();
        for (i, &v) in grad[0].iter().enumerate() {
            let expect = if i == 3 { 2.0 * 0.01 / 8.0 } else { 0.0 };
            assert!((v - expect).abs() < 1e-15);
        }
    }
}
