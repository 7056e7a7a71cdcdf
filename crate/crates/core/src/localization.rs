//! Heatmaps to organ centroids and bounding boxes.
//!
//! Per organ channel: voxels at or above `tau` are grouped into 26-connected
//! components, the largest component's mid-point is the centroid, and a box of
//! the organ's mean training-set size (plus `margin_v` voxels on every face)
//! is centered on it and clamped to the grid.

use alloc::collections::{BTreeMap, VecDeque};
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::heatmap::HeatmapStack;
use crate::math;
use crate::volume::{BoundingBox, Grid, LabelMap, Volume3D};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OrganStat {
    pub mean_size_mm: [f64; 3],
    pub count: usize,
}

/// Mean tight bounding-box size per organ over a training set.
#[derive(Debug, Clone, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(transparent))]
pub struct OrganStats {
    pub organs: BTreeMap<u16, OrganStat>,
}

impl OrganStats {
    pub fn get(&self, organ: u16) -> Result<&OrganStat> {
        self.organs.get(&organ).ok_or(Error::MissingStatistics { organ })
    }
}

/// Tight voxel box around every voxel labelled `organ`.
pub fn tight_box(labels: &LabelMap, organ: u16) -> Option<BoundingBox> {
    let g = labels.grid();
    let mut min = [i64::MAX; 3];
    let mut max = [i64::MIN; 3];
    let mut any = false;
    for (idx, &l) in labels.data().iter().enumerate() {
        if l == organ {
            any = true;
            let c = g.coords(idx);
            for a in 0..3 {
                min[a] = min[a].min(c[a] as i64);
                max[a] = max[a].max(c[a] as i64 + 1);
            }
        }
    }
    any.then_some(BoundingBox { min, max, spacing: g.spacing })
}

/// Average tight-box size (mm) per catalogued organ. Maps lacking an organ do
/// not contribute to its mean.
pub fn compute_organ_stats<'a, I>(label_maps: I, catalog: &[u16]) -> Result<OrganStats>
where
    I: IntoIterator<Item = &'a LabelMap>,
{
    let mut sums: BTreeMap<u16, ([f64; 3], usize)> = catalog.iter().map(|&id| (id, ([0.0; 3], 0))).collect();
    for map in label_maps {
        for (&id, (sum, count)) in sums.iter_mut() {
            if let Some(b) = tight_box(map, id) {
                let s = b.size_mm();
                (0..3).for_each(|a| sum[a] += s[a]);
                *count += 1;
            }
        }
    }
    let mut organs = BTreeMap::new();
    for (id, (sum, count)) in sums {
        if count == 0 {
            return Err(Error::MissingStatistics { organ: id });
        }
        let n = count as f64;
        organs.insert(id, OrganStat { mean_size_mm: [sum[0] / n, sum[1] / n, sum[2] / n], count });
    }
    Ok(OrganStats { organs })
}

/// How the centroid of the selected supra-threshold component is taken.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum CentroidMode {
    /// Unweighted mean of the component's voxel centers.
    #[default]
    VoxelMean,
    /// Center of the component's bounding box.
    BoxMidpoint,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Detection {
    Found { centroid: [f64; 3], peak: f64 },
    Absent { peak: f64 },
}

impl Detection {
    pub fn peak(&self) -> f64 {
        match *self {
            Detection::Found { peak, .. } | Detection::Absent { peak } => peak,
        }
    }
}

/// Label 26-connected components of `mask`. Returns per-voxel component ids
/// (0 = not in mask, components numbered from 1 in scan order) and the
/// component sizes indexed by `id - 1`.
pub fn connected_components(mask: &[bool], dims: [usize; 3]) -> (Vec<u32>, Vec<usize>) {
    let [w, h, d] = dims;
    let mut comp = vec![0u32; mask.len()];
    let mut sizes = Vec::new();
    let mut queue = VecDeque::new();
    for seed in 0..mask.len() {
        if !mask[seed] || comp[seed] != 0 {
            continue;
        }
        let id = sizes.len() as u32 + 1;
        comp[seed] = id;
        queue.push_back(seed);
        let mut size = 0;
        while let Some(v) = queue.pop_front() {
            size += 1;
            let (x, y, z) = (v % w, (v / w) % h, v / (w * h));
            for nz in z.saturating_sub(1)..=(z + 1).min(d - 1) {
                for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                    for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                        let n = nx + w * (ny + h * nz);
                        if mask[n] && comp[n] == 0 {
                            comp[n] = id;
                            queue.push_back(n);
                        }
                    }
                }
            }
        }
        sizes.push(size);
    }
    (comp, sizes)
}

/// Centroid of one heatmap channel. Absent when no voxel reaches `tau`.
/// Among equally large components the first in scan order wins.
pub fn extract_centroid(channel: &Volume3D, tau: f64, mode: CentroidMode) -> Detection {
    let peak = channel.data().iter().fold(0.0f64, |m, &v| m.max(v));
    let mask: Vec<bool> = channel.data().iter().map(|&v| v >= tau).collect();
    if !mask.iter().any(|&m| m) {
        return Detection::Absent { peak };
    }
    let g = channel.grid();
    let (comp, sizes) = connected_components(&mask, g.dims);
    let mut best = 0;
    for (i, &s) in sizes.iter().enumerate() {
        if s > sizes[best] {
            best = i;
        }
    }
    let target = best as u32 + 1;
    let members = comp.iter().enumerate().filter(|(_, &c)| c == target).map(|(i, _)| g.coords(i));
    let centroid = match mode {
        CentroidMode::VoxelMean => {
            let mut sum = [0.0; 3];
            let mut n = 0usize;
            for c in members {
                let p = g.world(c);
                (0..3).for_each(|a| sum[a] += p[a]);
                n += 1;
            }
            [sum[0] / n as f64, sum[1] / n as f64, sum[2] / n as f64]
        }
        CentroidMode::BoxMidpoint => {
            let mut lo = [usize::MAX; 3];
            let mut hi = [0usize; 3];
            for c in members {
                for a in 0..3 {
                    lo[a] = lo[a].min(c[a]);
                    hi[a] = hi[a].max(c[a]);
                }
            }
            let (a, b) = (g.world(lo), g.world(hi));
            [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0, (a[2] + b[2]) / 2.0]
        }
    };
    Detection::Found { centroid, peak }
}

/// Box of the organ's mean size centered on the voxel nearest `centroid`:
/// `ceil(mean_size / 2 / spacing) + margin_v` voxels on each side, clamped to
/// the grid.
pub fn make_box(centroid: [f64; 3], stats: &OrganStats, organ: u16, margin_v: usize, grid: &Grid) -> Result<BoundingBox> {
    let stat = stats.get(organ)?;
    let center = grid.nearest_voxel(centroid);
    if !grid.contains_voxel(center) {
        return Err(Error::out_of_bounds(format!(
            "centroid {centroid:?} of organ {organ} lies outside the {:?} grid",
            grid.dims
        )));
    }
    let mut min = [0i64; 3];
    let mut max = [0i64; 3];
    for a in 0..3 {
        let half = math::ceil_tol(stat.mean_size_mm[a] / 2.0 / grid.spacing[a]) as i64 + margin_v as i64;
        min[a] = (center[a] - half).max(0);
        max[a] = (center[a] + half + 1).min(grid.dims[a] as i64);
    }
    BoundingBox::new(min, max, grid.spacing)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Status {
    Found,
    Absent,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OrganLocalization {
    pub organ: u16,
    pub status: Status,
    pub centroid_mm: Option<[f64; 3]>,
    #[cfg_attr(feature = "serde", serde(rename = "box"))]
    pub bbox: Option<BoundingBox>,
    pub peak: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LocalizationResult {
    pub organs: Vec<OrganLocalization>,
}

impl LocalizationResult {
    pub fn found(&self) -> impl Iterator<Item = (u16, &BoundingBox)> {
        self.organs.iter().filter_map(|o| o.bbox.as_ref().map(|b| (o.organ, b)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LocalizeParams {
    pub tau: f64,
    pub margin_v: usize,
    pub mode: CentroidMode,
}

impl Default for LocalizeParams {
    fn default() -> Self {
        LocalizeParams { tau: crate::DEFAULT_TAU, margin_v: crate::DEFAULT_MARGIN_V, mode: CentroidMode::VoxelMean }
    }
}

/// Centroid and box for every channel of a predicted stack.
pub fn localize_all(pred: &HeatmapStack, stats: &OrganStats, params: &LocalizeParams) -> Result<LocalizationResult> {
    let mut organs = Vec::with_capacity(pred.len());
    for (&organ, channel) in pred.organ_ids.iter().zip(pred.channels()) {
        let det = extract_centroid(channel, params.tau, params.mode);
        organs.push(match det {
            Detection::Absent { peak } => {
                OrganLocalization { organ, status: Status::Absent, centroid_mm: None, bbox: None, peak }
            }
            Detection::Found { centroid, peak } => OrganLocalization {
                organ,
                status: Status::Found,
                centroid_mm: Some(centroid),
                bbox: Some(make_box(centroid, stats, organ, params.margin_v, channel.grid())?),
                peak,
            },
        });
    }
    Ok(LocalizationResult { organs })
}
