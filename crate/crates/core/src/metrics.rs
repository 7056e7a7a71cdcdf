//! Dice overlap and corpus-level reports.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::volume::{LabelMap, Mask};

/// `2|P ∩ G| / (|P| + |G|)`; two empty masks score 1.
pub fn dice(pred: &Mask, truth: &Mask) -> Result<f64> {
    if pred.grid().dims != truth.grid().dims {
        return Err(Error::invalid("dice needs masks of identical dims"));
    }
    let (inter, p, g) = overlap_counts(pred.data(), truth.data());
    Ok(dice_from_counts(inter, p, g))
}

pub fn overlap_counts(pred: &[bool], truth: &[bool]) -> (usize, usize, usize) {
    let mut inter = 0;
    let mut p = 0;
    let mut g = 0;
    for (&a, &b) in pred.iter().zip(truth) {
        p += a as usize;
        g += b as usize;
        inter += (a && b) as usize;
    }
    (inter, p, g)
}

pub fn dice_from_counts(inter: usize, p: usize, g: usize) -> f64 {
    if p + g == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (p + g) as f64
    }
}

/// Axis the global ± statistic is taken over.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum GlobalAggregation {
    /// Every (volume, organ) Dice value counts once.
    #[default]
    PerPair,
    /// Organ Dice values are first averaged within each volume.
    PerVolumeMean,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CaseDice {
    pub volume: String,
    pub organ: u16,
    pub dice: f64,
}

/// Box-plot summary of one organ's Dice values across volumes. Quartiles use
/// linear interpolation between order statistics.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OrganSummary {
    pub organ: u16,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DiceReport {
    pub aggregation: GlobalAggregation,
    pub global_mean: f64,
    /// Population standard deviation.
    pub global_std: f64,
    pub organs: Vec<OrganSummary>,
    pub cases: Vec<CaseDice>,
}

/// Population mean and standard deviation; `(0, 0)` for no values.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, math::sqrt(var))
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = math::floor(pos) as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Per-organ Dice for every `(name, prediction, truth)` case.
pub fn evaluate_corpus<'a, I>(cases: I, catalog: &[u16], aggregation: GlobalAggregation) -> Result<DiceReport>
where
    I: IntoIterator<Item = (&'a str, &'a LabelMap, &'a LabelMap)>,
{
    let mut rows = Vec::new();
    let mut per_volume = Vec::new();
    for (name, pred, truth) in cases {
        if pred.grid().dims != truth.grid().dims {
            return Err(Error::invalid(alloc::format!("prediction and truth for {name} have different dims")));
        }
        let mut vol_scores = Vec::with_capacity(catalog.len());
        for &organ in catalog {
            let d = dice(&pred.mask_of(organ), &truth.mask_of(organ))?;
            vol_scores.push(d);
            rows.push(CaseDice { volume: String::from(name), organ, dice: d });
        }
        per_volume.push(mean_std(&vol_scores).0);
    }
    let (global_mean, global_std) = match aggregation {
        GlobalAggregation::PerPair => mean_std(&rows.iter().map(|r| r.dice).collect::<Vec<_>>()),
        GlobalAggregation::PerVolumeMean => mean_std(&per_volume),
    };
    let organs = catalog
        .iter()
        .filter_map(|&organ| {
            let mut vals: Vec<f64> = rows.iter().filter(|r| r.organ == organ).map(|r| r.dice).collect();
            if vals.is_empty() {
                return None;
            }
            let (mean, std) = mean_std(&vals);
            vals.sort_by(f64::total_cmp);
            Some(OrganSummary {
                organ,
                n: vals.len(),
                mean,
                std,
                min: vals[0],
                q1: quantile(&vals, 0.25),
                median: quantile(&vals, 0.5),
                q3: quantile(&vals, 0.75),
                max: vals[vals.len() - 1],
            })
        })
        .collect();
    Ok(DiceReport { aggregation, global_mean, global_std, organs, cases: rows })
}
