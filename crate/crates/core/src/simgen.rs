//! Synthetic annotation populations.
//!
//! Annotators carry a skill class and items a difficulty class and a true
//! label. Every (annotator, item) pair receives one Bernoulli annotation whose
//! success probability comes from [`annotation_probability`]. The full matrix
//! can then be thinned to a fixed replication per item.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SkillClass {
    Expert,
    Random,
    Bad,
    Average,
}

impl SkillClass {
    /// Declaration order, which is also the apportionment tie order.
    pub const ALL: [SkillClass; 4] = [
        SkillClass::Expert,
        SkillClass::Random,
        SkillClass::Bad,
        SkillClass::Average,
    ];

    /// Probability of reproducing the true label on a Normal item.
    /// `None` for Random annotators, whose output ignores the truth.
    pub fn base_accuracy(self) -> Option<f64> {
        match self {
            SkillClass::Expert => Some(0.90),
            SkillClass::Average => Some(0.75),
            SkillClass::Bad => Some(0.25),
            SkillClass::Random => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SkillClass::Expert => "expert",
            SkillClass::Random => "random",
            SkillClass::Bad => "bad",
            SkillClass::Average => "average",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Difficulty {
    Easy,
    Normal,
    Hard,
}

impl Difficulty {
    pub const ALL: [Difficulty; 3] = [Difficulty::Easy, Difficulty::Normal, Difficulty::Hard];

    pub fn multiplier(self) -> f64 {
        match self {
            Difficulty::Easy => 1.2,
            Difficulty::Normal => 1.0,
            Difficulty::Hard => 0.7,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Normal => "normal",
            Difficulty::Hard => "hard",
        }
    }
}

impl fmt::Display for SkillClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for Difficulty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SkillClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SkillClass::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown skill class `{s}`")))
    }
}

impl FromStr for Difficulty {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Difficulty::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown difficulty `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatorProfile {
    pub id: u32,
    pub skill_class: SkillClass,
}

impl AnnotatorProfile {
    pub fn base_accuracy(&self) -> Option<f64> {
        self.skill_class.base_accuracy()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemProfile {
    pub id: u32,
    pub difficulty: Difficulty,
    /// 1 = toxic, 0 = not toxic.
    pub true_label: u8,
}

impl ItemProfile {
    pub fn multiplier(&self) -> f64 {
        self.difficulty.multiplier()
    }
}

/// One observed (item, annotator, value) cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub item_id: u32,
    pub annotator_id: u32,
    pub value: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub n_annotators: u32,
    pub n_items: u32,
    /// expert : random : bad : average
    pub annotator_ratio: [u32; 4],
    /// easy : normal : hard
    pub item_ratio: [u32; 3],
    /// toxic : not toxic
    pub truth_ratio: [u32; 2],
    pub replication: u32,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_annotators: 500,
            n_items: 5000,
            annotator_ratio: [1, 1, 1, 5],
            item_ratio: [1, 2, 1],
            truth_ratio: [1, 1],
            replication: 200,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_annotators == 0 || self.n_items == 0 || self.replication == 0 {
            return Err(Error::InvalidConfig(
                "n_annotators, n_items and replication must be positive".into(),
            ));
        }
        if self.replication > self.n_annotators {
            return Err(Error::InvalidConfig(format!(
                "replication {} exceeds n_annotators {}",
                self.replication, self.n_annotators
            )));
        }
        for (name, parts) in [
            ("annotator_ratio", &self.annotator_ratio[..]),
            ("item_ratio", &self.item_ratio[..]),
            ("truth_ratio", &self.truth_ratio[..]),
        ] {
            if parts.iter().all(|&p| p == 0) {
                return Err(Error::InvalidConfig(format!("{name} has no positive part")));
            }
        }
        Ok(())
    }
}

/// Split `total` into integer counts proportional to `parts`.
///
/// Each share is floored, then the leftover units go to the largest
/// fractional parts; equal fractions are resolved in slice order.
pub fn apportion(total: u32, parts: &[u32]) -> Result<Vec<u32>> {
    let sum: u64 = parts.iter().map(|&p| u64::from(p)).sum();
    if sum == 0 {
        return Err(Error::InvalidConfig("ratio parts are all zero".into()));
    }
    let total64 = u64::from(total);
    // Integer arithmetic: share = total * part / sum, remainder kept exact.
    let mut counts: Vec<u32> = Vec::with_capacity(parts.len());
    let mut remainders: Vec<(u64, usize)> = Vec::with_capacity(parts.len());
    for (i, &p) in parts.iter().enumerate() {
        let num = total64 * u64::from(p);
        counts.push((num / sum) as u32);
        remainders.push((num % sum, i));
    }
    let assigned: u32 = counts.iter().sum();
    let mut leftover = total - assigned;
    // Stable sort keeps declaration order among equal remainders.
    remainders.sort_by_key(|r| std::cmp::Reverse(r.0));
    for &(_, i) in &remainders {
        if leftover == 0 {
            break;
        }
        counts[i] += 1;
        leftover -= 1;
    }
    Ok(counts)
}

fn expand<T: Copy>(classes: &[T], counts: &[u32]) -> Vec<T> {
    classes
        .iter()
        .zip(counts)
        .flat_map(|(&c, &n)| std::iter::repeat_n(c, n as usize))
        .collect()
}

/// Build annotator and item populations with class counts fixed by the
/// configured ratios and class-to-id assignment shuffled by the seed.
pub fn build_population(config: &SimConfig) -> Result<(Vec<AnnotatorProfile>, Vec<ItemProfile>)> {
    config.validate()?;

    let skill_counts = apportion(config.n_annotators, &config.annotator_ratio)?;
    let difficulty_counts = apportion(config.n_items, &config.item_ratio)?;
    let truth_counts = apportion(config.n_items, &config.truth_ratio)?;

    let mut skills = expand(&SkillClass::ALL, &skill_counts);
    let mut difficulties = expand(&Difficulty::ALL, &difficulty_counts);
    let mut truths = expand(&[1u8, 0u8], &truth_counts);

    let seed = rng::derive_seed(config.seed, "population");
    skills.shuffle(&mut rng::stream(seed, &[0]));
    difficulties.shuffle(&mut rng::stream(seed, &[1]));
    truths.shuffle(&mut rng::stream(seed, &[2]));

    let annotators = skills
        .into_iter()
        .enumerate()
        .map(|(id, skill_class)| AnnotatorProfile {
            id: id as u32,
            skill_class,
        })
        .collect();
    let items = difficulties
        .into_iter()
        .zip(truths)
        .enumerate()
        .map(|(id, (difficulty, true_label))| ItemProfile {
            id: id as u32,
            difficulty,
            true_label,
        })
        .collect();
    Ok((annotators, items))
}

/// Probability attached to one annotator/item interaction.
///
/// The two variants have different meanings, so callers must not mix them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AnnotationProbability {
    /// Probability that the emitted value equals the item's true label.
    MatchesTruth(f64),
    /// Probability that the emitted value is 1, regardless of the truth.
    Toxic(f64),
}

impl AnnotationProbability {
    pub fn value(self) -> f64 {
        match self {
            AnnotationProbability::MatchesTruth(p) | AnnotationProbability::Toxic(p) => p,
        }
    }

    /// Probability of emitting 1 for an item with the given true label.
    pub fn p_toxic(self, true_label: u8) -> f64 {
        match self {
            AnnotationProbability::MatchesTruth(p) if true_label == 1 => p,
            AnnotationProbability::MatchesTruth(p) => 1.0 - p,
            AnnotationProbability::Toxic(p) => p,
        }
    }
}

pub fn annotation_probability(
    annotator: &AnnotatorProfile,
    item: &ItemProfile,
) -> AnnotationProbability {
    match annotator.base_accuracy() {
        Some(acc) => AnnotationProbability::MatchesTruth((acc * item.multiplier()).clamp(0.0, 1.0)),
        None => AnnotationProbability::Toxic(0.5),
    }
}

/// Draw the full annotator × item matrix.
///
/// Each cell uses a uniform addressed by `(seed, annotator_id, item_id)`, so
/// the result is independent of iteration order and thread count. Records
/// come back sorted by `(item_id, annotator_id)`.
pub fn generate_annotations(
    annotators: &[AnnotatorProfile],
    items: &[ItemProfile],
    seed: u64,
) -> Vec<AnnotationRecord> {
    let seed = rng::derive_seed(seed, "annotations");
    let mut annotators: Vec<AnnotatorProfile> = annotators.to_vec();
    annotators.sort_by_key(|a| a.id);
    let mut items: Vec<ItemProfile> = items.to_vec();
    items.sort_by_key(|i| i.id);

    items
        .par_iter()
        .flat_map_iter(|item| {
            annotators.iter().map(move |annotator| {
                let p = annotation_probability(annotator, item).p_toxic(item.true_label);
                let u = rng::uniform(seed, &[u64::from(annotator.id), u64::from(item.id)]);
                AnnotationRecord {
                    item_id: item.id,
                    annotator_id: annotator.id,
                    value: u8::from(u < p),
                }
            })
        })
        .collect()
}

/// Keep exactly `replication` records per item, sampled without replacement.
///
/// Items are sampled independently, each from its own seeded stream. For a
/// fixed seed a smaller replication keeps a subset of the records kept by a
/// larger one. The output is sorted by `(item_id, annotator_id)`.
pub fn downsample_replication(
    records: &[AnnotationRecord],
    replication: usize,
    seed: u64,
) -> Result<Vec<AnnotationRecord>> {
    if replication == 0 {
        return Err(Error::InvalidConfig("replication must be positive".into()));
    }
    let mut by_item: BTreeMap<u32, Vec<AnnotationRecord>> = BTreeMap::new();
    for r in records {
        by_item.entry(r.item_id).or_default().push(*r);
    }
    for (&item, rs) in by_item.iter_mut() {
        rs.sort_by_key(|r| r.annotator_id);
        rs.dedup_by_key(|r| r.annotator_id);
        if rs.len() < replication {
            return Err(Error::InsufficientReplication {
                item,
                available: rs.len(),
                requested: replication,
            });
        }
    }

    let seed = rng::derive_seed(seed, "downsample");
    let groups: Vec<(u32, Vec<AnnotationRecord>)> = by_item.into_iter().collect();
    let mut out: Vec<AnnotationRecord> = groups
        .into_par_iter()
        .flat_map_iter(|(item, mut rs)| {
            let mut stream = rng::stream(seed, &[u64::from(item)]);
            rs.shuffle(&mut stream);
            rs.truncate(replication);
            rs
        })
        .collect();
    out.sort();
    Ok(out)
}

/// Group records by item id, preserving record order within each item.
pub fn records_by_item(records: &[AnnotationRecord]) -> BTreeMap<u32, Vec<AnnotationRecord>> {
    let mut out: BTreeMap<u32, Vec<AnnotationRecord>> = BTreeMap::new();
    for r in records {
        out.entry(r.item_id).or_default().push(*r);
    }
    out
}
