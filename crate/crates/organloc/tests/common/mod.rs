#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use organloc::PipelineConfig;
use organloc_core::phantom::{Jitter, OrganSpec, PhantomSpec};
use organloc_core::Grid;

/// Two organs on a 40 mm cube: quick enough for every integration test.
pub fn small_config() -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.corpus.n_volumes = 5;
    cfg.corpus.n_train = 3;
    cfg.corpus.jitter = Jitter { center_mm: 1.0, size_fraction: 0.1 };
    cfg.corpus.template = PhantomSpec {
        grid: Grid::new([40, 40, 40], [1.0; 3]).unwrap(),
        organs: vec![
            OrganSpec { id: 1, name: "big".into(), center: [18.0, 20.0, 20.0], semi_axes: [7.0, 6.0, 6.0], intensity: 100.0 },
            OrganSpec { id: 2, name: "small".into(), center: [28.0, 12.0, 22.0], semi_axes: [3.0, 3.0, 3.0], intensity: 200.0 },
        ],
        noise_sigma: 5.0,
        seed: 0,
    };
    for st in [&mut cfg.training.localizer, &mut cfg.training.segmenter] {
        st.widths = vec![2];
        st.max_steps = 4;
    }
    cfg
}

/// Every file below `dir`, keyed by its relative path.
pub fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}
