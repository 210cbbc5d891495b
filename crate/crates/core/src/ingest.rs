//! Loading public toxicity annotation files into rating tables.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::agreement::RatingTable;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetTag {
    D2017,
    D2022,
    D2023,
}

impl DatasetTag {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetTag::D2017 => "d2017",
            DatasetTag::D2022 => "d2022",
            DatasetTag::D2023 => "d2023",
        }
    }
}

impl fmt::Display for DatasetTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Raw rating scales and their toxic side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    /// 0 or 1.
    Binary01,
    /// −2 very toxic, −1 toxic, 0 unsure, 1 not toxic.
    Likert4,
    /// −1 toxic, 0 unsure, 1 not toxic.
    Likert3,
}

impl Scale {
    pub fn as_str(self) -> &'static str {
        match self {
            Scale::Binary01 => "binary01",
            Scale::Likert4 => "likert4",
            Scale::Likert3 => "likert3",
        }
    }
}

/// Map a raw value to 1 (toxic) or 0. Unsure counts as not toxic.
pub fn binarize(raw: &str, scale: Scale) -> Result<u8> {
    let out_of_domain = || Error::OutOfDomain {
        value: raw.to_string(),
        scale: scale.as_str(),
    };
    let v: f64 = raw.trim().parse().map_err(|_| out_of_domain())?;
    if v.fract() != 0.0 {
        return Err(out_of_domain());
    }
    match (scale, v as i64) {
        (Scale::Binary01, x @ (0 | 1)) => Ok(x as u8),
        (Scale::Likert4, -2 | -1) | (Scale::Likert3, -1) => Ok(1),
        (Scale::Likert4, 0 | 1) | (Scale::Likert3, 0 | 1) => Ok(0),
        _ => Err(out_of_domain()),
    }
}

fn default_comment() -> String {
    "comment_id".into()
}

fn default_rater() -> String {
    "rater_id".into()
}

fn default_value() -> String {
    "toxic_score".into()
}

fn default_delimiter() -> char {
    ','
}

/// Where a dataset lives and how to read it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSchema {
    pub tag: DatasetTag,
    pub path: PathBuf,
    #[serde(default = "default_comment")]
    pub comment_column: String,
    #[serde(default = "default_rater")]
    pub rater_column: String,
    #[serde(default = "default_value")]
    pub value_column: String,
    /// Column holding the rater group, if any.
    #[serde(default)]
    pub group_column: Option<String>,
    /// Group label used when there is no group column.
    #[serde(default)]
    pub group: Option<String>,
    pub scale: Scale,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    /// Keep this many raters per comment.
    #[serde(default)]
    pub sample_raters: Option<usize>,
    /// Restrict to comment ids shared with the other datasets marked the same.
    #[serde(default)]
    pub intersect: bool,
}

impl DatasetSchema {
    pub fn new(tag: DatasetTag, path: impl Into<PathBuf>, scale: Scale) -> Self {
        Self {
            tag,
            path: path.into(),
            comment_column: default_comment(),
            rater_column: default_rater(),
            value_column: default_value(),
            group_column: None,
            group: None,
            scale,
            delimiter: default_delimiter(),
            sample_raters: None,
            intersect: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct UnifiedAnnotation {
    pub dataset: DatasetTag,
    pub comment_id: String,
    pub rater_id: String,
    pub group: String,
    pub raw_value: String,
    pub binary_value: u8,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reject {
    /// 1-based line number, counting the header.
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LoadReport {
    pub annotations: Vec<UnifiedAnnotation>,
    pub rejects: Vec<Reject>,
}

/// Stream a delimited file into unified annotations. Rows that cannot be
/// read or binarized are collected as rejects.
pub fn load_annotations(schema: &DatasetSchema) -> Result<LoadReport> {
    let path = schema.path.as_path();
    if !schema.delimiter.is_ascii() {
        return Err(Error::InvalidConfig(format!(
            "delimiter {:?} is not a single byte",
            schema.delimiter
        )));
    }
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter as u8)
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::csv(path, e))?;
    let headers = reader.headers().map_err(|e| Error::csv(path, e))?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(Error::EmptyInput(format!("{} has no header", path.display())));
    }
    let column = |name: &str| -> Result<usize> {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::MissingColumn {
            path: path.to_path_buf(),
            column: name.to_string(),
        })
    };
    let ci = column(&schema.comment_column)?;
    let ri = column(&schema.rater_column)?;
    let vi = column(&schema.value_column)?;
    let gi = schema.group_column.as_deref().map(column).transpose()?;
    let fixed_group = schema.group.clone().unwrap_or_else(|| "all".into());

    let mut report = LoadReport::default();
    let mut rows = 0u64;
    for (k, rec) in reader.records().enumerate() {
        rows += 1;
        let line = k as u64 + 2;
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                report.rejects.push(Reject { line, reason: e.to_string() });
                continue;
            }
        };
        let field = |i: usize| rec.get(i).map(str::trim);
        let (Some(comment), Some(rater), Some(raw)) = (field(ci), field(ri), field(vi)) else {
            report.rejects.push(Reject {
                line,
                reason: format!("expected {} fields, found {}", headers.len(), rec.len()),
            });
            continue;
        };
        if comment.is_empty() || rater.is_empty() {
            report.rejects.push(Reject {
                line,
                reason: "empty comment or rater id".into(),
            });
            continue;
        }
        let group = match gi {
            Some(i) => match field(i) {
                Some(g) if !g.is_empty() => g.to_string(),
                _ => {
                    report.rejects.push(Reject {
                        line,
                        reason: "missing group".into(),
                    });
                    continue;
                }
            },
            None => fixed_group.clone(),
        };
        match binarize(raw, schema.scale) {
            Ok(b) => report.annotations.push(UnifiedAnnotation {
                dataset: schema.tag,
                comment_id: comment.to_string(),
                rater_id: rater.to_string(),
                group,
                raw_value: raw.to_string(),
                binary_value: b,
            }),
            Err(e) => report.rejects.push(Reject {
                line,
                reason: e.to_string(),
            }),
        }
    }
    if rows == 0 {
        return Err(Error::EmptyInput(format!("{} has no data rows", path.display())));
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CommonIds {
    pub ids: BTreeSet<String>,
    pub warning: Option<String>,
}

/// Comment ids present in every dataset.
pub fn intersect_common(datasets: &[&[UnifiedAnnotation]]) -> Result<CommonIds> {
    if datasets.len() < 2 {
        return Err(Error::InvalidConfig("intersection needs at least two datasets".into()));
    }
    let mut sets = datasets
        .iter()
        .map(|d| d.iter().map(|a| a.comment_id.clone()).collect::<BTreeSet<_>>());
    let first = sets.next().unwrap_or_default();
    let ids = sets.fold(first, |acc, s| acc.intersection(&s).cloned().collect());
    let warning = ids
        .is_empty()
        .then(|| "datasets share no comment ids".to_string());
    if let Some(w) = &warning {
        log::warn!("{w}");
    }
    Ok(CommonIds { ids, warning })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shortfall {
    pub comment_id: String,
    pub available: usize,
    pub requested: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SampledRaters {
    pub annotations: Vec<UnifiedAnnotation>,
    /// Comments with fewer than the requested raters; all their ratings are
    /// kept.
    pub shortfall: Vec<Shortfall>,
}

/// Keep ratings from `k` distinct raters per comment, sampled without
/// replacement. Input order is preserved among kept rows.
pub fn sample_raters(annotations: &[UnifiedAnnotation], k: usize, seed: u64) -> Result<SampledRaters> {
    if k == 0 {
        return Err(Error::InvalidConfig("rater sample size must be >= 1".into()));
    }
    let mut raters: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for a in annotations {
        raters.entry(&a.comment_id).or_default().insert(&a.rater_id);
    }
    let seed = rng::derive_seed(seed, "sample-raters");
    let mut keep: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    let mut shortfall = Vec::new();
    for (comment, set) in raters {
        let mut ids: Vec<&str> = set.into_iter().collect();
        if ids.len() < k {
            shortfall.push(Shortfall {
                comment_id: comment.to_string(),
                available: ids.len(),
                requested: k,
            });
        } else {
            ids.shuffle(&mut rng::stream(seed, &[rng::label_hash(comment)]));
            ids.truncate(k);
        }
        keep.insert(comment, ids.into_iter().collect());
    }
    Ok(SampledRaters {
        annotations: annotations
            .iter()
            .filter(|a| keep[a.comment_id.as_str()].contains(a.rater_id.as_str()))
            .cloned()
            .collect(),
        shortfall,
    })
}

/// One rating table per (dataset, group).
pub fn rating_tables(annotations: &[UnifiedAnnotation]) -> Result<BTreeMap<(DatasetTag, String), RatingTable>> {
    let mut out: BTreeMap<(DatasetTag, String), RatingTable> = BTreeMap::new();
    for a in annotations {
        out.entry((a.dataset, a.group.clone())).or_default().insert(
            a.comment_id.clone(),
            a.rater_id.clone(),
            i64::from(a.binary_value),
        )?;
    }
    Ok(out)
}

/// File-name-safe rendering of a group label.
pub fn group_slug(group: &str) -> String {
    let slug: String = group
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect();
    if slug.is_empty() {
        "all".into()
    } else {
        slug
    }
}

pub fn ratings_file_name(tag: DatasetTag, group: &str) -> String {
    format!("ratings_{}_{}.csv", tag, group_slug(group))
}

/// Everything produced by loading a set of configured datasets.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IngestOutput {
    pub tables: BTreeMap<(DatasetTag, String), RatingTable>,
    /// Rejected rows keyed by dataset name.
    pub rejects: Vec<(String, Reject)>,
    pub shortfall: Vec<(String, Shortfall)>,
    /// Shared comment ids, when two or more dataset tags ask to intersect.
    pub common: Option<CommonIds>,
}

/// Load every named dataset, restrict the ones marked `intersect` to the
/// comment ids shared across their tags, sample raters where configured and
/// build one rating table per (dataset, group).
pub fn ingest_all(schemas: &BTreeMap<String, DatasetSchema>, seed: u64) -> Result<IngestOutput> {
    let mut out = IngestOutput::default();
    let mut loaded = Vec::with_capacity(schemas.len());
    for (name, schema) in schemas {
        let report = load_annotations(schema)?;
        log::info!(
            "{name}: {} ratings, {} rejected rows",
            report.annotations.len(),
            report.rejects.len()
        );
        out.rejects
            .extend(report.rejects.into_iter().map(|r| (name.clone(), r)));
        loaded.push((name, schema, report.annotations));
    }

    let mut by_tag: BTreeMap<DatasetTag, Vec<UnifiedAnnotation>> = BTreeMap::new();
    for (_, schema, ann) in &loaded {
        if schema.intersect {
            by_tag.entry(schema.tag).or_default().extend(ann.iter().cloned());
        }
    }
    if by_tag.len() >= 2 {
        let groups: Vec<&[UnifiedAnnotation]> = by_tag.values().map(Vec::as_slice).collect();
        let common = intersect_common(&groups)?;
        for (_, schema, ann) in loaded.iter_mut() {
            if schema.intersect {
                ann.retain(|a| common.ids.contains(&a.comment_id));
            }
        }
        out.common = Some(common);
    } else if !by_tag.is_empty() {
        log::warn!("intersection needs datasets with at least two tags; skipped");
    }

    let seed = rng::derive_seed(seed, "ingest");
    let mut all = Vec::new();
    for (name, schema, ann) in loaded {
        match schema.sample_raters {
            Some(k) => {
                let sampled = sample_raters(&ann, k, rng::derive_seed(seed, name))?;
                out.shortfall
                    .extend(sampled.shortfall.into_iter().map(|s| (name.clone(), s)));
                all.extend(sampled.annotations);
            }
            None => all.extend(ann),
        }
    }
    out.tables = rating_tables(&all)?;
    Ok(out)
}

pub fn dataset_path_exists(schema: &DatasetSchema) -> bool {
    Path::new(&schema.path).is_file()
}
