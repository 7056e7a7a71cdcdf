//! Volume data model: grids, typed voxel buffers, bounding boxes and the
//! geometric/intensity preprocessing shared by both pipeline stages.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

const SPACING_TOL: f64 = 1e-9;

/// Voxel lattice: counts along x, y, z, mm per voxel, and the world position
/// (mm) of the center of voxel `(0, 0, 0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Grid {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
}

impl Grid {
    pub fn new(dims: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        Self::with_origin(dims, spacing, [0.0; 3])
    }

    pub fn with_origin(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        let grid = Grid { dims, spacing, origin };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d == 0) {
            return Err(Error::invalid(format!("dims must be positive, got {:?}", self.dims)));
        }
        if self.spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::invalid(format!(
                "spacing must be positive and finite, got {:?}",
                self.spacing
            )));
        }
        if self.origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::invalid("origin must be finite"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.dims[0];
        let rest = idx / self.dims[0];
        [i, rest % self.dims[1], rest / self.dims[1]]
    }

    /// World position (mm) of a voxel center.
    #[inline]
    pub fn world(&self, ijk: [usize; 3]) -> [f64; 3] {
        [
            self.origin[0] + ijk[0] as f64 * self.spacing[0],
            self.origin[1] + ijk[1] as f64 * self.spacing[1],
            self.origin[2] + ijk[2] as f64 * self.spacing[2],
        ]
    }

    /// Continuous voxel coordinate of a world point.
    pub fn continuous_index(&self, p: [f64; 3]) -> [f64; 3] {
        [
            (p[0] - self.origin[0]) / self.spacing[0],
            (p[1] - self.origin[1]) / self.spacing[1],
            (p[2] - self.origin[2]) / self.spacing[2],
        ]
    }

    /// Voxel whose center is nearest to `p`; may lie outside the grid.
    pub fn nearest_voxel(&self, p: [f64; 3]) -> [i64; 3] {
        let c = self.continuous_index(p);
        [
            math::floor(c[0] + 0.5) as i64,
            math::floor(c[1] + 0.5) as i64,
            math::floor(c[2] + 0.5) as i64,
        ]
    }

    pub fn contains_voxel(&self, v: [i64; 3]) -> bool {
        (0..3).all(|a| v[a] >= 0 && (v[a] as usize) < self.dims[a])
    }

    pub fn same_spacing(&self, spacing: [f64; 3]) -> bool {
        same_spacing(self.spacing, spacing)
    }

    /// Grid covering the same world extent at a new spacing, per-axis
    /// `ceil(dims * spacing / target)` voxels, origin unchanged.
    pub fn resampled(&self, target: [f64; 3]) -> Result<Grid> {
        if target.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::invalid(format!(
                "target spacing must be positive and finite, got {target:?}"
            )));
        }
        let mut dims = [0usize; 3];
        for a in 0..3 {
            let n = math::ceil_tol(self.dims[a] as f64 * self.spacing[a] / target[a]);
            dims[a] = (n as usize).max(1);
        }
        Grid::with_origin(dims, target, self.origin)
    }
}

pub(crate) fn same_spacing(a: [f64; 3], b: [f64; 3]) -> bool {
    (0..3).all(|i| (a[i] - b[i]).abs() <= SPACING_TOL * a[i].abs().max(b[i].abs()).max(1.0))
}

/// What the scalars of a volume mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum VolumeKind {
    Intensity,
    Probability,
    Label,
    Heatmap,
}

/// Scalar types a [`Volume`] can hold, with the per-kind value constraints.
pub trait Voxel: Copy + PartialEq + core::fmt::Debug {
    fn valid_for(kind: VolumeKind, value: Self) -> bool;
}

impl Voxel for f64 {
    fn valid_for(kind: VolumeKind, v: f64) -> bool {
        match kind {
            VolumeKind::Intensity => v.is_finite(),
            VolumeKind::Probability | VolumeKind::Heatmap => (0.0..=1.0).contains(&v),
            VolumeKind::Label => v >= 0.0 && v <= u16::MAX as f64 && math::floor(v) == v,
        }
    }
}

impl Voxel for u16 {
    fn valid_for(kind: VolumeKind, _: u16) -> bool {
        kind == VolumeKind::Label
    }
}

impl Voxel for bool {
    fn valid_for(kind: VolumeKind, _: bool) -> bool {
        kind == VolumeKind::Label
    }
}

/// A 3D scalar field on a [`Grid`]. Immutable once built; every operation
/// returns a new volume.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume<T> {
    grid: Grid,
    kind: VolumeKind,
    data: Vec<T>,
}

/// Real-valued volume (intensities, probabilities, heatmaps).
pub type Volume3D = Volume<f64>;
/// Integer label map: 0 is background, `k >= 1` is organ `k`.
pub type LabelMap = Volume<u16>;
/// Binary mask.
pub type Mask = Volume<bool>;

impl<T: Voxel> Volume<T> {
    pub fn new(grid: Grid, kind: VolumeKind, data: Vec<T>) -> Result<Self> {
        grid.validate()?;
        if data.len() != grid.len() {
            return Err(Error::invalid(format!(
                "data length {} does not match dims {:?}",
                data.len(),
                grid.dims
            )));
        }
        if let Some(pos) = data.iter().position(|&v| !T::valid_for(kind, v)) {
            return Err(Error::invalid(format!(
                "value {:?} at index {pos} is not valid for a {kind:?} volume",
                data[pos]
            )));
        }
        Ok(Volume { grid, kind, data })
    }

    pub fn filled(grid: Grid, kind: VolumeKind, value: T) -> Result<Self> {
        let len = grid.len();
        Self::new(grid, kind, alloc::vec![value; len])
    }

    pub fn from_fn(grid: Grid, kind: VolumeKind, mut f: impl FnMut([usize; 3]) -> T) -> Result<Self> {
        grid.validate()?;
        let mut data = Vec::with_capacity(grid.len());
        for k in 0..grid.dims[2] {
            for j in 0..grid.dims[1] {
                for i in 0..grid.dims[0] {
                    data.push(f([i, j, k]));
                }
            }
        }
        Self::new(grid, kind, data)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dims(&self) -> [usize; 3] {
        self.grid.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.grid.spacing
    }

    pub fn kind(&self) -> VolumeKind {
        self.kind
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, ijk: [usize; 3]) -> T {
        self.data[self.grid.index(ijk[0], ijk[1], ijk[2])]
    }

    /// Same grid and kind, new values.
    pub fn with_data(&self, data: Vec<T>) -> Result<Self> {
        Self::new(self.grid, self.kind, data)
    }

    pub fn map<U: Voxel>(&self, kind: VolumeKind, f: impl FnMut(&T) -> U) -> Result<Volume<U>> {
        Volume::new(self.grid, kind, self.data.iter().map(f).collect())
    }
}

impl LabelMap {
    /// Binary mask of voxels carrying `label`.
    pub fn mask_of(&self, label: u16) -> Mask {
        Volume {
            grid: self.grid,
            kind: VolumeKind::Label,
            data: self.data.iter().map(|&v| v == label).collect(),
        }
    }
}

/// Axis-aligned box of voxel indices: `min` inclusive, `max` exclusive, on a
/// grid with the recorded spacing. Corners may lie outside the grid.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BoundingBox {
    pub min: [i64; 3],
    pub max: [i64; 3],
    pub spacing: [f64; 3],
}

impl BoundingBox {
    pub fn new(min: [i64; 3], max: [i64; 3], spacing: [f64; 3]) -> Result<Self> {
        if (0..3).any(|a| min[a] >= max[a]) {
            return Err(Error::invalid(format!("empty box: min {min:?}, max {max:?}")));
        }
        if spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::invalid("box spacing must be positive"));
        }
        Ok(BoundingBox { min, max, spacing })
    }

    /// Box covering a whole grid.
    pub fn full(grid: &Grid) -> Self {
        BoundingBox {
            min: [0; 3],
            max: [grid.dims[0] as i64, grid.dims[1] as i64, grid.dims[2] as i64],
            spacing: grid.spacing,
        }
    }

    pub fn size_voxels(&self) -> [usize; 3] {
        [
            (self.max[0] - self.min[0]) as usize,
            (self.max[1] - self.min[1]) as usize,
            (self.max[2] - self.min[2]) as usize,
        ]
    }

    pub fn size_mm(&self) -> [f64; 3] {
        let s = self.size_voxels();
        [
            s[0] as f64 * self.spacing[0],
            s[1] as f64 * self.spacing[1],
            s[2] as f64 * self.spacing[2],
        ]
    }

    pub fn contains(&self, v: [i64; 3]) -> bool {
        (0..3).all(|a| v[a] >= self.min[a] && v[a] < self.max[a])
    }

    /// Intersection with `[0, dims)`, or `None` if disjoint.
    pub fn clamp_to(&self, dims: [usize; 3]) -> Option<BoundingBox> {
        let mut out = *self;
        for a in 0..3 {
            out.min[a] = self.min[a].max(0);
            out.max[a] = self.max[a].min(dims[a] as i64);
            if out.min[a] >= out.max[a] {
                return None;
            }
        }
        Some(out)
    }

    /// Re-express the box on another grid through world coordinates: the
    /// result holds every target voxel whose center lies inside the world
    /// extent covered by this box's voxel cells.
    pub fn remap(&self, from: &Grid, to: &Grid) -> Result<BoundingBox> {
        if !same_spacing(self.spacing, from.spacing) {
            return Err(Error::invalid("box spacing does not match the source grid"));
        }
        let mut min = [0i64; 3];
        let mut max = [0i64; 3];
        for a in 0..3 {
            let lo = from.origin[a] + (self.min[a] as f64 - 0.5) * from.spacing[a];
            let hi = from.origin[a] + (self.max[a] as f64 - 0.5) * from.spacing[a];
            let lo_c = (lo - to.origin[a]) / to.spacing[a];
            let hi_c = (hi - to.origin[a]) / to.spacing[a];
            min[a] = math::ceil_tol(lo_c) as i64;
            // Centers exactly on the upper cell face belong to the next cell.
            max[a] = math::ceil_tol(hi_c) as i64;
            if max[a] <= min[a] {
                max[a] = min[a] + 1;
            }
        }
        BoundingBox::new(min, max, to.spacing)
    }
}

/// Interpolation used by [`resample`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Interpolation {
    Trilinear,
    Nearest,
}

/// Resample onto a new spacing with the same origin.
///
/// Target voxel `j` sits at source continuous coordinate `j * target / source`
/// on each axis; coordinates past the last source voxel clamp to the edge.
/// Label volumes must use [`Interpolation::Nearest`].
pub fn resample(vol: &Volume3D, target: [f64; 3], mode: Interpolation) -> Result<Volume3D> {
    if vol.kind == VolumeKind::Label && mode == Interpolation::Trilinear {
        return Err(Error::invalid("label volumes must be resampled with nearest interpolation"));
    }
    match mode {
        Interpolation::Nearest => resample_nearest(vol, target),
        Interpolation::Trilinear => {
            let out = vol.grid.resampled(target)?;
            let axes: [Vec<(usize, usize, f64)>; 3] =
                core::array::from_fn(|a| linear_taps(vol.grid.dims[a], vol.grid.spacing[a], out.dims[a], target[a]));
            let src = &vol.data;
            let g = &vol.grid;
            let mut data = Vec::with_capacity(out.len());
            for &(z0, z1, tz) in &axes[2] {
                for &(y0, y1, ty) in &axes[1] {
                    for &(x0, x1, tx) in &axes[0] {
                        let at = |i, j, k| src[g.index(i, j, k)];
                        let c00 = lerp(at(x0, y0, z0), at(x1, y0, z0), tx);
                        let c10 = lerp(at(x0, y1, z0), at(x1, y1, z0), tx);
                        let c01 = lerp(at(x0, y0, z1), at(x1, y0, z1), tx);
                        let c11 = lerp(at(x0, y1, z1), at(x1, y1, z1), tx);
                        data.push(lerp(lerp(c00, c10, ty), lerp(c01, c11, ty), tz));
                    }
                }
            }
            Volume::new(out, vol.kind, data)
        }
    }
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    if t == 0.0 {
        a
    } else {
        a + (b - a) * t
    }
}

fn source_coord(j: usize, src_spacing: f64, dst_spacing: f64, src_len: usize) -> f64 {
    let c = j as f64 * dst_spacing / src_spacing;
    c.clamp(0.0, (src_len - 1) as f64)
}

fn linear_taps(src_len: usize, src_spacing: f64, dst_len: usize, dst_spacing: f64) -> Vec<(usize, usize, f64)> {
    (0..dst_len)
        .map(|j| {
            let c = source_coord(j, src_spacing, dst_spacing, src_len);
            let i0 = math::floor(c) as usize;
            let i1 = (i0 + 1).min(src_len - 1);
            (i0, i1, c - i0 as f64)
        })
        .collect()
}

/// Nearest-neighbour resampling for any voxel type (labels, masks).
pub fn resample_nearest<T: Voxel>(vol: &Volume<T>, target: [f64; 3]) -> Result<Volume<T>> {
    let out = vol.grid.resampled(target)?;
    let axes: [Vec<usize>; 3] = core::array::from_fn(|a| {
        (0..out.dims[a])
            .map(|j| {
                let c = source_coord(j, vol.grid.spacing[a], target[a], vol.grid.dims[a]);
                (math::floor(c + 0.5) as usize).min(vol.grid.dims[a] - 1)
            })
            .collect()
    });
    let mut data = Vec::with_capacity(out.len());
    for &k in &axes[2] {
        for &j in &axes[1] {
            for &i in &axes[0] {
                data.push(vol.data[vol.grid.index(i, j, k)]);
            }
        }
    }
    Volume::new(out, vol.kind, data)
}

/// Zero-mean, unit (population) variance intensities. A constant volume maps
/// to all zeros.
pub fn normalize(vol: &Volume3D) -> Result<Volume3D> {
    if vol.kind != VolumeKind::Intensity {
        return Err(Error::invalid(format!("normalize expects an intensity volume, got {:?}", vol.kind)));
    }
    if vol.len() < 2 {
        return Err(Error::invalid("normalize needs at least two voxels"));
    }
    let n = vol.len() as f64;
    let mean = vol.data.iter().sum::<f64>() / n;
    let var = vol.data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = math::sqrt(var);
    let scale = vol.data.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    if std <= 1e-12 * scale {
        return vol.with_data(alloc::vec![0.0; vol.len()]);
    }
    vol.with_data(vol.data.iter().map(|v| (v - mean) / std).collect())
}

/// Extract the voxels of `bbox`; voxels outside the source are `pad`.
/// The output origin keeps every retained voxel at its world position.
pub fn crop<T: Voxel>(vol: &Volume<T>, bbox: &BoundingBox, pad: T) -> Result<Volume<T>> {
    if !vol.grid.same_spacing(bbox.spacing) {
        return Err(Error::invalid(format!(
            "box spacing {:?} differs from volume spacing {:?}",
            bbox.spacing, vol.grid.spacing
        )));
    }
    if bbox.clamp_to(vol.grid.dims).is_none() {
        return Err(Error::out_of_bounds(format!(
            "box {:?}..{:?} lies entirely outside a {:?} volume",
            bbox.min, bbox.max, vol.grid.dims
        )));
    }
    if !T::valid_for(vol.kind, pad) {
        return Err(Error::invalid(format!("pad value {pad:?} is not valid for a {:?} volume", vol.kind)));
    }
    let size = bbox.size_voxels();
    let origin = core::array::from_fn(|a| vol.grid.origin[a] + bbox.min[a] as f64 * vol.grid.spacing[a]);
    let out = Grid::with_origin(size, vol.grid.spacing, origin)?;
    let g = &vol.grid;
    let mut data = Vec::with_capacity(out.len());
    for k in 0..size[2] as i64 {
        let sk = bbox.min[2] + k;
        for j in 0..size[1] as i64 {
            let sj = bbox.min[1] + j;
            for i in 0..size[0] as i64 {
                let si = bbox.min[0] + i;
                data.push(if g.contains_voxel([si, sj, sk]) {
                    vol.data[g.index(si as usize, sj as usize, sk as usize)]
                } else {
                    pad
                });
            }
        }
    }
    Ok(Volume { grid: out, kind: vol.kind, data })
}

/// Write `src` into a copy of `dst` at `bbox`; parts of the box outside `dst`
/// are dropped.
pub fn paste<T: Voxel>(dst: &Volume<T>, src: &Volume<T>, bbox: &BoundingBox) -> Result<Volume<T>> {
    if src.grid.dims != bbox.size_voxels() {
        return Err(Error::invalid(format!(
            "source dims {:?} do not match box size {:?}",
            src.grid.dims,
            bbox.size_voxels()
        )));
    }
    if !dst.grid.same_spacing(bbox.spacing) || !dst.grid.same_spacing(src.grid.spacing) {
        return Err(Error::invalid("paste requires matching spacings"));
    }
    let mut data = dst.data.clone();
    if let Some(clip) = bbox.clamp_to(dst.grid.dims) {
        for k in clip.min[2]..clip.max[2] {
            for j in clip.min[1]..clip.max[1] {
                for i in clip.min[0]..clip.max[0] {
                    let s = src.grid.index(
                        (i - bbox.min[0]) as usize,
                        (j - bbox.min[1]) as usize,
                        (k - bbox.min[2]) as usize,
                    );
                    data[dst.grid.index(i as usize, j as usize, k as usize)] = src.data[s];
                }
            }
        }
    }
    dst.with_data(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn grid(d: [usize; 3], s: f64) -> Grid {
        Grid::new(d, [s; 3]).unwrap()
    }

    fn ramp(d: [usize; 3], s: f64, f: impl Fn([f64; 3]) -> f64) -> Volume3D {
        let g = grid(d, s);
        Volume::from_fn(g, VolumeKind::Intensity, |ijk| f(g.world(ijk))).unwrap()
    }

    #[test]
    fn rejects_bad_construction() {
        assert!(Grid::new([0, 1, 1], [1.0; 3]).is_err());
        assert!(Grid::new([1, 1, 1], [1.0, -1.0, 1.0]).is_err());
        let g = grid([2, 1, 1], 1.0);
        assert!(Volume::new(g, VolumeKind::Intensity, vec![1.0]).is_err());
        assert!(Volume::new(g, VolumeKind::Probability, vec![0.5, 1.5]).is_err());
        assert!(Volume::new(g, VolumeKind::Label, vec![1.0, 0.5]).is_err());
    }

    #[test]
    fn linearization_is_x_fastest() {
        let g = grid([3, 4, 5], 1.0);
        assert_eq!(g.index(1, 0, 0), 1);
        assert_eq!(g.index(0, 1, 0), 3);
        assert_eq!(g.index(0, 0, 1), 12);
        assert_eq!(g.coords(g.index(2, 3, 4)), [2, 3, 4]);
    }

    #[test]
    fn resample_identity() {
        let v = ramp([5, 4, 3], 1.5, |p| p[0] * 0.3 - p[1] + p[2] * p[2]);
        let r = resample(&v, [1.5; 3], Interpolation::Trilinear).unwrap();
        assert_eq!(r, v);
        let n = resample(&v, [1.5; 3], Interpolation::Nearest).unwrap();
        assert_eq!(n, v);
    }

    #[test]
    fn resample_dims() {
        let v = Volume::filled(grid([60, 60, 60], 1.0), VolumeKind::Intensity, 0.0).unwrap();
        let r = resample(&v, [3.0; 3], Interpolation::Trilinear).unwrap();
        assert_eq!(r.dims(), [20, 20, 20]);
        assert_eq!(r.grid().origin, v.grid().origin);
        let r = resample(&v, [7.0; 3], Interpolation::Nearest).unwrap();
        assert_eq!(r.dims(), [9, 9, 9]);
    }

    #[test]
    fn resample_ramp_is_exact() {
        let v = ramp([20, 6, 6], 1.0, |p| p[0]);
        let r = resample(&v, [2.0; 3], Interpolation::Trilinear).unwrap();
        for (idx, &val) in r.data().iter().enumerate() {
            let w = r.grid().world(r.grid().coords(idx));
            assert!((val - w[0]).abs() < 1e-6, "{val} vs {}", w[0]);
        }
    }

    #[test]
    fn resample_rejects() {
        let v = Volume::filled(grid([4, 4, 4], 1.0), VolumeKind::Label, 1.0).unwrap();
        assert!(resample(&v, [2.0; 3], Interpolation::Trilinear).is_err());
        assert!(resample(&v, [2.0; 3], Interpolation::Nearest).is_ok());
        assert!(resample(&v, [0.0, 1.0, 1.0], Interpolation::Nearest).is_err());
    }

    #[test]
    fn normalize_cases() {
        let c = Volume::filled(grid([3, 3, 3], 1.0), VolumeKind::Intensity, 5.0).unwrap();
        assert!(normalize(&c).unwrap().data().iter().all(|&v| v == 0.0));
        let two = Volume::new(grid([4, 1, 1], 1.0), VolumeKind::Intensity, vec![0.0, 2.0, 0.0, 2.0]).unwrap();
        assert_eq!(normalize(&two).unwrap().data(), &[-1.0, 1.0, -1.0, 1.0]);
        let one = Volume::filled(grid([1, 1, 1], 1.0), VolumeKind::Intensity, 5.0).unwrap();
        assert!(normalize(&one).is_err());
        let p = Volume::filled(grid([2, 1, 1], 1.0), VolumeKind::Probability, 0.5).unwrap();
        assert!(normalize(&p).is_err());
    }

    #[test]
    fn crop_identity_and_padding() {
        let v = ramp([5, 5, 5], 1.0, |p| p[0] + 10.0 * p[1] + 100.0 * p[2]);
        let full = BoundingBox::full(v.grid());
        assert_eq!(crop(&v, &full, -1024.0).unwrap(), v);

        let b = BoundingBox::new([1, 0, 0], [7, 5, 5], [1.0; 3]).unwrap();
        let c = crop(&v, &b, -1024.0).unwrap();
        assert_eq!(c.dims(), [6, 5, 5]);
        assert_eq!(c.grid().origin, [1.0, 0.0, 0.0]);
        for k in 0..5 {
            for j in 0..5 {
                assert_eq!(c.get([4, j, k]), -1024.0);
                assert_eq!(c.get([5, j, k]), -1024.0);
                assert_eq!(c.get([3, j, k]), v.get([4, j, k]));
            }
        }
    }

    #[test]
    fn crop_outside_is_error() {
        let v = Volume::filled(grid([4, 4, 4], 1.0), VolumeKind::Intensity, 1.0).unwrap();
        let b = BoundingBox::new([4, 0, 0], [6, 2, 2], [1.0; 3]).unwrap();
        assert!(matches!(crop(&v, &b, 0.0), Err(Error::OutOfBounds(_))));
        let b = BoundingBox::new([0, 0, 0], [2, 2, 2], [2.0; 3]).unwrap();
        assert!(matches!(crop(&v, &b, 0.0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn paste_cases() {
        let v = ramp([6, 5, 4], 1.0, |p| p[0] - p[1] * p[2]);
        let b = BoundingBox::new([1, 1, 0], [4, 5, 3], [1.0; 3]).unwrap();
        let c = crop(&v, &b, 0.0).unwrap();
        assert_eq!(paste(&v, &c, &b).unwrap(), v);

        let far = BoundingBox::new([10, 10, 10], [13, 14, 13], [1.0; 3]).unwrap();
        assert_eq!(paste(&v, &c, &far).unwrap(), v);

        let wrong = BoundingBox::new([0, 0, 0], [2, 2, 2], [1.0; 3]).unwrap();
        assert!(paste(&v, &c, &wrong).is_err());
    }

    #[test]
    fn remap_three_to_one_mm() {
        let coarse = grid([20, 20, 20], 3.0);
        let fine = grid([60, 60, 60], 1.0);
        let b = BoundingBox::new([2, 3, 4], [5, 6, 7], [3.0; 3]).unwrap();
        let r = b.remap(&coarse, &fine).unwrap();
        // Coarse voxel 2 covers fine voxel centers 5, 6, 7.
        assert_eq!(r.min, [5, 8, 11]);
        assert_eq!(r.max, [14, 17, 20]);
        assert_eq!(r.size_mm(), b.size_mm());
    }
}
