//! Phantom corpora on disk: one image, label map and centroid file per
//! member, plus `manifest.json` listing members and their split.

use std::path::{Path, PathBuf};

use organloc_core::phantom::{corpus_member, generate_phantom, Jitter};
use organloc_core::{Grid, LabelMap, Volume3D};
use serde::{Deserialize, Serialize};

use crate::config::CorpusConfig;
use crate::error::{Error, Result};
use crate::io;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub id: u16,
    pub name: String,
    /// Nominal phantom intensity, used by the oracle predictor.
    pub intensity: f64,
}

/// File names are relative to the corpus directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Member {
    pub name: String,
    pub split: Split,
    pub image: String,
    pub labels: String,
    pub centroids: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub grid: Grid,
    pub jitter: Jitter,
    pub organs: Vec<CatalogEntry>,
    pub members: Vec<Member>,
}

impl Manifest {
    pub fn catalog(&self) -> Vec<u16> {
        self.organs.iter().map(|o| o.id).collect()
    }

    pub fn organ(&self, id: u16) -> Option<&CatalogEntry> {
        self.organs.iter().find(|o| o.id == id)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Member> {
        self.members.iter().filter(move |m| m.split == split)
    }
}

/// Centers of the organs present in one member, in mm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Centroids {
    pub organs: Vec<CentroidEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentroidEntry {
    pub id: u16,
    pub center_mm: [f64; 3],
}

impl Centroids {
    /// One slot per catalog organ, `None` for organs missing from the member.
    pub fn slots(&self, catalog: &[u16]) -> Vec<Option<[f64; 3]>> {
        catalog.iter().map(|id| self.organs.iter().find(|c| c.id == *id).map(|c| c.center_mm)).collect()
    }
}

pub struct Case {
    pub name: String,
    pub image: Volume3D,
    pub labels: LabelMap,
    pub centroids: Centroids,
}

pub fn member_name(index: usize) -> String {
    format!("vol_{index:04}")
}

pub fn generate_corpus(dir: &Path, cfg: &CorpusConfig, seed: u64) -> Result<Manifest> {
    if cfg.n_train > cfg.n_volumes {
        return Err(Error::Config(format!("n_train {} exceeds n_volumes {}", cfg.n_train, cfg.n_volumes)));
    }
    cfg.template.validate()?;
    cfg.jitter.validate_for(&cfg.template)?;
    let mut members = Vec::with_capacity(cfg.n_volumes);
    for index in 0..cfg.n_volumes {
        let spec = corpus_member(&cfg.template, &cfg.jitter, seed, index as u64);
        let phantom = generate_phantom(&spec)?;
        let name = member_name(index);
        let member = Member {
            split: if index < cfg.n_train { Split::Train } else { Split::Test },
            image: format!("{name}.img"),
            labels: format!("{name}.lbl"),
            centroids: format!("{name}.centroids.json"),
            name,
        };
        // An organ fully covered by a later one is absent from this member.
        let present = |id: u16| phantom.labels.data().contains(&id);
        let centroids = Centroids {
            organs: phantom
                .centroids
                .iter()
                .filter(|(id, _)| present(*id))
                .map(|&(id, center_mm)| CentroidEntry { id, center_mm })
                .collect(),
        };
        io::write_volume(&dir.join(&member.image), &phantom.image)?;
        io::write_labels(&dir.join(&member.labels), &phantom.labels)?;
        io::write_json(&dir.join(&member.centroids), &centroids)?;
        members.push(member);
    }
    let manifest = Manifest {
        seed,
        grid: cfg.template.grid,
        jitter: cfg.jitter,
        organs: cfg
            .template
            .organs
            .iter()
            .map(|o| CatalogEntry { id: o.id, name: o.name.clone(), intensity: o.intensity })
            .collect(),
        members,
    };
    io::write_json(&dir.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    io::read_json(&dir.join(MANIFEST))
}

fn path_of(dir: &Path, file: &str) -> PathBuf {
    dir.join(file)
}

pub fn load_labels(dir: &Path, member: &Member) -> Result<LabelMap> {
    io::read_labels(&path_of(dir, &member.labels))
}

pub fn load_case(dir: &Path, member: &Member) -> Result<Case> {
    let image = io::read_volume(&path_of(dir, &member.image))?;
    let labels = load_labels(dir, member)?;
    if image.grid() != labels.grid() {
        return Err(Error::format(&path_of(dir, &member.labels), "label grid differs from the image grid"));
    }
    Ok(Case {
        name: member.name.clone(),
        image,
        labels,
        centroids: io::read_json(&path_of(dir, &member.centroids))?,
    })
}
