//! Fuse per-organ probability crops into one label map.
//!
//! A voxel's candidates are the organs whose crop covers it with probability
//! at or above the decision threshold. No candidate gives background; several
//! candidates resolve to the highest probability, exact ties to the lowest
//! organ id. Crop order never matters.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::volume::{BoundingBox, Grid, LabelMap, Volume, Volume3D, VolumeKind};

#[derive(Debug, Clone, PartialEq)]
pub struct OrganCrop {
    pub organ: u16,
    pub bbox: BoundingBox,
    pub probs: Volume3D,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CropSet {
    pub grid: Grid,
    pub crops: Vec<OrganCrop>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OrganCounts {
    /// Voxels finally labelled with this organ.
    pub voxels: usize,
    /// Voxels where this organ was a candidate.
    pub candidate_voxels: usize,
    /// Candidate voxels shared with at least one other organ.
    pub contested_voxels: usize,
    /// Contested voxels this organ won.
    pub contested_won: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AggregationReport {
    pub organs: BTreeMap<u16, OrganCounts>,
    /// Voxels with two or more candidates.
    pub overlap_voxels: usize,
    pub background_voxels: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregated {
    pub labels: LabelMap,
    /// Probability of the winning organ; 0 on background.
    pub winning_probability: Volume3D,
    pub report: AggregationReport,
}

pub fn aggregate(set: &CropSet, threshold: f64) -> Result<Aggregated> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::invalid(format!("decision threshold must lie in (0, 1), got {threshold}")));
    }
    set.grid.validate()?;
    let mut order: Vec<&OrganCrop> = set.crops.iter().collect();
    order.sort_by_key(|c| c.organ);
    if let Some(w) = order.windows(2).find(|w| w[0].organ == w[1].organ) {
        return Err(Error::invalid(format!("organ {} appears in more than one crop", w[0].organ)));
    }
    for c in &order {
        if c.organ == 0 {
            return Err(Error::invalid("organ id 0 is reserved for background"));
        }
        if c.probs.dims() != c.bbox.size_voxels() || !set.grid.same_spacing(c.bbox.spacing) {
            return Err(Error::invalid(format!("crop of organ {} does not match its box or the target grid", c.organ)));
        }
    }

    let g = &set.grid;
    let n = g.len();
    let mut label = vec![0u16; n];
    let mut best = vec![0.0f64; n];
    let mut candidates = vec![0u8; n];
    let mut report = AggregationReport::default();

    for c in &order {
        let counts = report.organs.entry(c.organ).or_default();
        let Some(clip) = c.bbox.clamp_to(g.dims) else { continue };
        for k in clip.min[2]..clip.max[2] {
            for j in clip.min[1]..clip.max[1] {
                for i in clip.min[0]..clip.max[0] {
                    let p = c.probs.get([
                        (i - c.bbox.min[0]) as usize,
                        (j - c.bbox.min[1]) as usize,
                        (k - c.bbox.min[2]) as usize,
                    ]);
                    if p < threshold {
                        continue;
                    }
                    let v = g.index(i as usize, j as usize, k as usize);
                    counts.candidate_voxels += 1;
                    candidates[v] = candidates[v].saturating_add(1);
                    // Ascending id order plus strict comparison: ties keep the lower id.
                    if label[v] == 0 || p > best[v] {
                        label[v] = c.organ;
                        best[v] = p;
                    }
                }
            }
        }
    }

    // Second pass for contest statistics, now that winners are final.
    for c in &order {
        let Some(clip) = c.bbox.clamp_to(g.dims) else { continue };
        let counts = report.organs.get_mut(&c.organ).expect("inserted above");
        for k in clip.min[2]..clip.max[2] {
            for j in clip.min[1]..clip.max[1] {
                for i in clip.min[0]..clip.max[0] {
                    let v = g.index(i as usize, j as usize, k as usize);
                    if candidates[v] < 2 {
                        continue;
                    }
                    let p = c.probs.get([
                        (i - c.bbox.min[0]) as usize,
                        (j - c.bbox.min[1]) as usize,
                        (k - c.bbox.min[2]) as usize,
                    ]);
                    if p >= threshold {
                        counts.contested_voxels += 1;
                        if label[v] == c.organ {
                            counts.contested_won += 1;
                        }
                    }
                }
            }
        }
    }
    for &l in &label {
        match report.organs.get_mut(&l) {
            Some(c) => c.voxels += 1,
            None => report.background_voxels += 1,
        }
    }
    report.overlap_voxels = candidates.iter().filter(|&&c| c >= 2).count();

    Ok(Aggregated {
        labels: Volume::new(*g, VolumeKind::Label, label)?,
        winning_probability: Volume::new(*g, VolumeKind::Probability, best)?,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn crop(organ: u16, min: [i64; 3], probs: Vec<f64>, dims: [usize; 3]) -> OrganCrop {
        let bbox = BoundingBox::new(min, [min[0] + dims[0] as i64, min[1] + dims[1] as i64, min[2] + dims[2] as i64], [1.0; 3]).unwrap();
        let g = Grid::with_origin(dims, [1.0; 3], [min[0] as f64, min[1] as f64, min[2] as f64]).unwrap();
        OrganCrop { organ, bbox, probs: Volume::new(g, VolumeKind::Probability, probs).unwrap() }
    }

    fn grid() -> Grid {
        Grid::new([3, 1, 1], [1.0; 3]).unwrap()
    }

    #[test]
    fn highest_probability_wins() {
        let set = CropSet {
            grid: grid(),
            crops: vec![crop(1, [0, 0, 0], vec![0.7, 0.7], [2, 1, 1]), crop(2, [1, 0, 0], vec![0.9, 0.2], [2, 1, 1])],
        };
        let a = aggregate(&set, 0.5).unwrap();
        assert_eq!(a.labels.data(), &[1, 2, 0]);
        assert_eq!(a.winning_probability.data(), &[0.7, 0.9, 0.0]);
        assert_eq!(a.report.overlap_voxels, 1);
        assert_eq!(a.report.organs[&2].contested_won, 1);
        assert_eq!(a.report.organs[&1].contested_voxels, 1);
        assert_eq!(a.report.organs[&1].contested_won, 0);
    }

    #[test]
    fn ties_go_to_lower_id() {
        let a = crop(4, [0, 0, 0], vec![0.6; 3], [3, 1, 1]);
        let b = crop(2, [0, 0, 0], vec![0.6; 3], [3, 1, 1]);
        let out = aggregate(&CropSet { grid: grid(), crops: vec![a, b] }, 0.5).unwrap();
        assert_eq!(out.labels.data(), &[2, 2, 2]);
    }

    #[test]
    fn rejects_duplicates_and_bad_threshold() {
        let a = crop(1, [0, 0, 0], vec![0.6; 3], [3, 1, 1]);
        let set = CropSet { grid: grid(), crops: vec![a.clone(), a.clone()] };
        assert!(aggregate(&set, 0.5).is_err());
        let set = CropSet { grid: grid(), crops: vec![a] };
        assert!(aggregate(&set, 1.0).is_err());
        assert!(aggregate(&set, 0.0).is_err());
    }

    #[test]
    fn crops_partly_outside_are_clipped() {
        let a = crop(1, [-1, 0, 0], vec![0.9, 0.9, 0.1], [3, 1, 1]);
        let out = aggregate(&CropSet { grid: grid(), crops: vec![a] }, 0.5).unwrap();
        assert_eq!(out.labels.data(), &[1, 0, 0]);
        assert_eq!(out.report.background_voxels, 2);
    }
}
