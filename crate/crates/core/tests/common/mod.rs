#![allow(dead_code)]

use organloc_core::rng::Stream;
use organloc_core::{Grid, Volume, Volume3D, VolumeKind};

/// `a` and `b` agree to `rel` relative error, or both are below `floor`.
pub fn rel_close(a: f64, b: f64, rel: f64, floor: f64) -> bool {
    let scale = a.abs().max(b.abs());
    scale < floor || (a - b).abs() <= rel * scale
}

pub fn random_dims(rng: &mut Stream, lo: usize, hi: usize) -> [usize; 3] {
    [0, 1, 2].map(|_| lo + rng.below(hi - lo + 1))
}

pub fn random_volume(rng: &mut Stream, dims: [usize; 3], kind: VolumeKind, lo: f64, hi: f64) -> Volume3D {
    let g = Grid::new(dims, [1.0; 3]).unwrap();
    let data = (0..g.len()).map(|_| rng.uniform_in(lo, hi)).collect();
    Volume::new(g, kind, data).unwrap()
}
