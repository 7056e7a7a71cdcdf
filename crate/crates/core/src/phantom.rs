//! Synthetic CT-like phantoms made of ellipsoidal organs.
//!
//! Labels mark voxels whose center lies inside an organ's ellipsoid; when
//! ellipsoids overlap the organ listed later wins. The image is 0 in the
//! background, the organ's intensity inside it, plus additive Gaussian noise
//! drawn voxel by voxel (x-fastest) from [`crate::rng::Stream`]`::new(seed, 0)`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::volume::{Grid, LabelMap, Volume, Volume3D, VolumeKind};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OrganSpec {
    pub id: u16,
    pub name: String,
    /// World position of the ellipsoid center, mm.
    pub center: [f64; 3],
    /// Semi-axis lengths along x, y, z, mm.
    pub semi_axes: [f64; 3],
    pub intensity: f64,
}

impl OrganSpec {
    pub fn contains(&self, p: [f64; 3]) -> bool {
        let mut s = 0.0;
        for a in 0..3 {
            let t = (p[a] - self.center[a]) / self.semi_axes[a];
            s += t * t;
        }
        s <= 1.0
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PhantomSpec {
    pub grid: Grid,
    pub organs: Vec<OrganSpec>,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl PhantomSpec {
    /// Three ellipsoids of decreasing size (a large "liver", a mid-sized
    /// "kidney", a small "pancreas") on an 80 mm cube at 1 mm. Intensities sit
    /// 80 apart so that noise of sigma 10 rarely blurs one into another.
    pub fn demo() -> Self {
        let organ = |id, name: &str, center, semi_axes, intensity| OrganSpec {
            id,
            name: String::from(name),
            center,
            semi_axes,
            intensity,
        };
        PhantomSpec {
            grid: Grid::new([80, 80, 80], [1.0; 3]).expect("static grid"),
            organs: alloc::vec![
                organ(1, "liver", [36.0, 42.0, 40.0], [13.0, 11.0, 12.0], 100.0),
                organ(2, "kidney", [51.0, 30.0, 42.0], [7.0, 6.0, 9.0], 180.0),
                organ(3, "pancreas", [47.0, 52.0, 38.0], [4.0, 4.0, 5.0], 260.0),
            ],
            noise_sigma: 10.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.organs.is_empty() {
            return Err(Error::invalid("phantom needs at least one organ"));
        }
        let mut ids: Vec<u16> = self.organs.iter().map(|o| o.id).collect();
        ids.sort_unstable();
        if ids.iter().enumerate().any(|(i, &id)| id as usize != i + 1) {
            return Err(Error::invalid(format!("organ ids must be unique and contiguous from 1, got {ids:?}")));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::invalid("noise_sigma must be finite and non-negative"));
        }
        let (lo, hi) = canvas_extent(&self.grid);
        for o in &self.organs {
            if o.semi_axes.iter().any(|&a| !(a.is_finite() && a > 0.0)) {
                return Err(Error::invalid(format!("organ {} ({}) has non-positive semi-axes", o.id, o.name)));
            }
            if !o.intensity.is_finite() || o.center.iter().any(|c| !c.is_finite()) {
                return Err(Error::invalid(format!("organ {} ({}) has non-finite parameters", o.id, o.name)));
            }
            let misses = (0..3).any(|a| o.center[a] + o.semi_axes[a] < lo[a] || o.center[a] - o.semi_axes[a] > hi[a]);
            if misses {
                return Err(Error::invalid(format!("organ {} ({}) does not intersect the canvas", o.id, o.name)));
            }
        }
        Ok(())
    }
}

/// World extent spanned by voxel centers.
fn canvas_extent(grid: &Grid) -> ([f64; 3], [f64; 3]) {
    let hi = grid.world([grid.dims[0] - 1, grid.dims[1] - 1, grid.dims[2] - 1]);
    (grid.origin, hi)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub image: Volume3D,
    pub labels: LabelMap,
    /// `(organ id, center mm)` in catalog order.
    pub centroids: Vec<(u16, [f64; 3])>,
}

pub fn generate_phantom(spec: &PhantomSpec) -> Result<Phantom> {
    spec.validate()?;
    let grid = spec.grid;
    let mut labels = alloc::vec![0u16; grid.len()];
    let mut image = alloc::vec![0.0f64; grid.len()];
    for (idx, (label, value)) in labels.iter_mut().zip(image.iter_mut()).enumerate() {
        let p = grid.world(grid.coords(idx));
        if let Some(o) = spec.organs.iter().rev().find(|o| o.contains(p)) {
            *label = o.id;
            *value = o.intensity;
        }
    }
    if spec.noise_sigma > 0.0 {
        let mut rng = Stream::new(spec.seed, 0);
        for v in image.iter_mut() {
            *v += spec.noise_sigma * rng.normal();
        }
    }
    let mut centroids: Vec<(u16, [f64; 3])> = spec.organs.iter().map(|o| (o.id, o.center)).collect();
    centroids.sort_by_key(|c| c.0);
    Ok(Phantom {
        image: Volume::new(grid, VolumeKind::Intensity, image)?,
        labels: Volume::new(grid, VolumeKind::Label, labels)?,
        centroids,
    })
}

/// Random perturbation applied to each corpus member.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Jitter {
    /// Maximum absolute center shift per axis, mm (uniform).
    pub center_mm: f64,
    /// Maximum relative semi-axis change per axis (uniform in `1 ± f`).
    pub size_fraction: f64,
}

impl Jitter {
    pub const NONE: Jitter = Jitter { center_mm: 0.0, size_fraction: 0.0 };
    /// Jitter used with [`PhantomSpec::demo`].
    pub const DEMO: Jitter = Jitter { center_mm: 2.0, size_fraction: 0.1 };

    /// Every organ stays inside the canvas under the worst-case jitter.
    pub fn validate_for(&self, template: &PhantomSpec) -> Result<()> {
        if !(self.center_mm >= 0.0 && self.center_mm.is_finite()) || !(0.0..1.0).contains(&self.size_fraction) {
            return Err(Error::invalid(format!(
                "jitter must satisfy center_mm >= 0 and 0 <= size_fraction < 1, got {self:?}"
            )));
        }
        let (lo, hi) = canvas_extent(&template.grid);
        for o in &template.organs {
            for a in 0..3 {
                let reach = self.center_mm + o.semi_axes[a] * (1.0 + self.size_fraction);
                if o.center[a] - reach < lo[a] || o.center[a] + reach > hi[a] {
                    return Err(Error::invalid(format!(
                        "organ {} ({}) can leave the canvas along axis {a} under jitter {:?}",
                        o.id, o.name, self
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Spec for corpus member `index`: jittered organs drawn from stream
/// `index` of `seed`, then the member's noise seed from the same stream.
/// Members are independent of each other, so generation order is irrelevant.
pub fn corpus_member(template: &PhantomSpec, jitter: &Jitter, seed: u64, index: u64) -> PhantomSpec {
    let mut rng = Stream::new(seed, index);
    let mut spec = template.clone();
    for o in spec.organs.iter_mut() {
        for a in 0..3 {
            let dc = rng.uniform_in(-1.0, 1.0) * jitter.center_mm;
            let ds = 1.0 + rng.uniform_in(-1.0, 1.0) * jitter.size_fraction;
            o.center[a] += dc;
            o.semi_axes[a] *= ds;
        }
    }
    spec.seed = rng.next_u64();
    spec
}
