//! Chance-corrected agreement: Krippendorff's alpha, Cohen's kappa,
//! cross-replication reliability and per-annotator ΔIRR.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Units mapped to their (rater, category) ratings.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RatingTable {
    units: BTreeMap<String, Vec<(String, i64)>>,
}

impl RatingTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_triples<U, R>(triples: impl IntoIterator<Item = (U, R, i64)>) -> Result<Self>
    where
        U: Into<String>,
        R: Into<String>,
    {
        let mut t = Self::new();
        for (u, r, c) in triples {
            t.insert(u, r, c)?;
        }
        Ok(t)
    }

    /// Add one rating. A rater may rate a unit at most once.
    pub fn insert(&mut self, unit: impl Into<String>, rater: impl Into<String>, category: i64) -> Result<()> {
        let unit = unit.into();
        let rater = rater.into();
        let ratings = self.units.entry(unit.clone()).or_default();
        if ratings.iter().any(|(r, _)| *r == rater) {
            return Err(Error::InputMismatch(format!(
                "rater `{rater}` rates unit `{unit}` more than once"
            )));
        }
        ratings.push((rater, category));
        Ok(())
    }

    pub fn units(&self) -> impl Iterator<Item = (&str, &[(String, i64)])> {
        self.units.iter().map(|(u, r)| (u.as_str(), r.as_slice()))
    }

    pub fn get(&self, unit: &str) -> Option<&[(String, i64)]> {
        self.units.get(unit).map(Vec::as_slice)
    }

    pub fn n_units(&self) -> usize {
        self.units.len()
    }

    pub fn n_ratings(&self) -> usize {
        self.units.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn categories(&self) -> BTreeSet<i64> {
        self.units.values().flatten().map(|(_, c)| *c).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    KrippendorffAlpha,
    CohenKappa,
    Xrr,
    NormalizedXrr,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::KrippendorffAlpha => "alpha",
            Method::CohenKappa => "kappa",
            Method::Xrr => "xrr",
            Method::NormalizedXrr => "normalized_xrr",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgreementScore {
    pub value: f64,
    pub n_units: usize,
    pub method: Method,
}

/// Nominal Krippendorff's alpha from the coincidence matrix.
pub fn krippendorff_alpha(table: &RatingTable) -> Result<AgreementScore> {
    let cats: Vec<i64> = table.categories().into_iter().collect();
    let idx: BTreeMap<i64, usize> = cats.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let k = cats.len();
    let mut o = vec![0.0; k * k];
    let mut n_units = 0;
    for (_, ratings) in table.units() {
        let m = ratings.len();
        if m < 2 {
            continue;
        }
        n_units += 1;
        let mut counts = vec![0usize; k];
        for (_, c) in ratings {
            counts[idx[c]] += 1;
        }
        let w = 1.0 / (m - 1) as f64;
        for a in 0..k {
            for b in 0..k {
                let pairs = if a == b {
                    counts[a] * counts[a].saturating_sub(1)
                } else {
                    counts[a] * counts[b]
                };
                o[a * k + b] += pairs as f64 * w;
            }
        }
    }
    if n_units == 0 {
        return Err(Error::undefined("alpha", "no unit has two or more ratings"));
    }
    let nc: Vec<f64> = (0..k).map(|a| (0..k).map(|b| o[a * k + b]).sum()).collect();
    let n: f64 = nc.iter().sum();
    let mut disagree_o = 0.0;
    let mut disagree_e = 0.0;
    for a in 0..k {
        for b in 0..k {
            if a != b {
                disagree_o += o[a * k + b];
                disagree_e += nc[a] * nc[b];
            }
        }
    }
    let d_e = disagree_e / (n * (n - 1.0));
    if d_e <= 0.0 {
        return Err(Error::undefined("alpha", "only one category observed, expected disagreement is zero"));
    }
    let d_o = disagree_o / n;
    Ok(AgreementScore {
        value: 1.0 - d_o / d_e,
        n_units,
        method: Method::KrippendorffAlpha,
    })
}

pub fn cohen_kappa(pairs: &[(i64, i64)]) -> Result<AgreementScore> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("kappa needs at least one rating pair".into()));
    }
    let n = pairs.len() as f64;
    let mut m1: BTreeMap<i64, f64> = BTreeMap::new();
    let mut m2: BTreeMap<i64, f64> = BTreeMap::new();
    let mut agree = 0.0;
    for &(a, b) in pairs {
        *m1.entry(a).or_default() += 1.0;
        *m2.entry(b).or_default() += 1.0;
        if a == b {
            agree += 1.0;
        }
    }
    let p_o = agree / n;
    let p_e: f64 = m1
        .iter()
        .map(|(c, x)| x / n * m2.get(c).copied().unwrap_or(0.0) / n)
        .sum();
    if p_e >= 1.0 {
        return Err(Error::undefined("kappa", "chance agreement is one"));
    }
    Ok(AgreementScore {
        value: (p_o - p_e) / (1.0 - p_e),
        n_units: pairs.len(),
        method: Method::CohenKappa,
    })
}

/// Binary majority per unit. Exact ties go to 0.
pub fn majority_vote(table: &RatingTable) -> Result<BTreeMap<String, u8>> {
    table
        .units()
        .map(|(u, ratings)| {
            if ratings.is_empty() {
                return Err(Error::EmptyInput(format!("unit `{u}` has no ratings")));
            }
            let ones = ratings.iter().filter(|(_, c)| *c == 1).count();
            Ok((u.to_string(), u8::from(2 * ones > ratings.len())))
        })
        .collect()
}

/// Cross-replication reliability between two rater pools on shared units.
pub fn xrr(x: &RatingTable, y: &RatingTable) -> Result<AgreementScore> {
    let mut agree = 0.0;
    let mut pairs = 0.0;
    let mut px: BTreeMap<i64, f64> = BTreeMap::new();
    let mut py: BTreeMap<i64, f64> = BTreeMap::new();
    let (mut nx, mut ny) = (0.0, 0.0);
    let mut shared = 0;
    for (unit, xs) in x.units() {
        let Some(ys) = y.get(unit) else { continue };
        if xs.is_empty() || ys.is_empty() {
            continue;
        }
        shared += 1;
        for (_, a) in xs {
            *px.entry(*a).or_default() += 1.0;
            nx += 1.0;
            for (_, b) in ys {
                if a == b {
                    agree += 1.0;
                }
            }
        }
        for (_, b) in ys {
            *py.entry(*b).or_default() += 1.0;
            ny += 1.0;
        }
        pairs += (xs.len() * ys.len()) as f64;
    }
    if shared == 0 {
        return Err(Error::InputMismatch("the two pools share no rated units".into()));
    }
    let a_o = agree / pairs;
    let a_e: f64 = px
        .iter()
        .map(|(c, v)| v / nx * py.get(c).copied().unwrap_or(0.0) / ny)
        .sum();
    if a_e >= 1.0 {
        return Err(Error::undefined("xrr", "chance agreement is one"));
    }
    Ok(AgreementScore {
        value: (a_o - a_e) / (1.0 - a_e),
        n_units: shared,
        method: Method::Xrr,
    })
}

/// xRR divided by the geometric mean of the two within-pool alphas.
pub fn normalize_xrr(xrr: f64, alpha_x: f64, alpha_y: f64) -> Result<f64> {
    if alpha_x <= 0.0 || alpha_y <= 0.0 {
        return Err(Error::undefined(
            "normalized_xrr",
            format!("within-pool alpha must be positive, got {alpha_x} and {alpha_y}"),
        ));
    }
    Ok(xrr / (alpha_x * alpha_y).sqrt())
}

pub fn normalized_xrr(x: &RatingTable, y: &RatingTable) -> Result<AgreementScore> {
    let cross = xrr(x, y)?;
    let ax = krippendorff_alpha(x)?;
    let ay = krippendorff_alpha(y)?;
    Ok(AgreementScore {
        value: normalize_xrr(cross.value, ax.value, ay.value)?,
        n_units: cross.n_units,
        method: Method::NormalizedXrr,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Prediction {
    pub annotator_id: String,
    pub comment_id: String,
    pub human_label: u8,
    pub model_label: u8,
}

/// Human and model labels keyed by (annotator, comment).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PredictionPairs {
    rows: Vec<Prediction>,
}

impl PredictionPairs {
    pub fn new(mut rows: Vec<Prediction>) -> Result<Self> {
        rows.sort();
        for w in rows.windows(2) {
            if w[0].annotator_id == w[1].annotator_id && w[0].comment_id == w[1].comment_id {
                return Err(Error::InputMismatch(format!(
                    "duplicate prediction for annotator `{}` on comment `{}`",
                    w[0].annotator_id, w[0].comment_id
                )));
            }
        }
        if let Some(p) = rows.iter().find(|p| p.human_label > 1 || p.model_label > 1) {
            return Err(Error::OutOfDomain {
                value: format!("{}/{}", p.human_label, p.model_label),
                scale: "binary01",
            });
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[Prediction] {
        &self.rows
    }

    pub fn annotators(&self) -> BTreeSet<&str> {
        self.rows.iter().map(|p| p.annotator_id.as_str()).collect()
    }

    fn for_annotator<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a Prediction> + 'a {
        self.rows.iter().filter(move |p| p.annotator_id == id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IrrCoefficient {
    #[default]
    Alpha,
    Kappa,
}

impl FromStr for IrrCoefficient {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alpha" => Ok(IrrCoefficient::Alpha),
            "kappa" => Ok(IrrCoefficient::Kappa),
            other => Err(Error::InvalidConfig(format!("unknown coefficient `{other}`"))),
        }
    }
}

/// Human-vs-model agreement for one annotator's comments.
pub fn annotator_irr<'a>(
    preds: impl Iterator<Item = &'a Prediction>,
    coefficient: IrrCoefficient,
) -> Result<AgreementScore> {
    match coefficient {
        IrrCoefficient::Alpha => {
            let mut t = RatingTable::new();
            for p in preds {
                t.insert(p.comment_id.clone(), "human", i64::from(p.human_label))?;
                t.insert(p.comment_id.clone(), "model", i64::from(p.model_label))?;
            }
            krippendorff_alpha(&t)
        }
        IrrCoefficient::Kappa => {
            let pairs: Vec<(i64, i64)> = preds
                .map(|p| (i64::from(p.human_label), i64::from(p.model_label)))
                .collect();
            cohen_kappa(&pairs)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnotatorDelta {
    pub soft: f64,
    pub fewshot: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DeltaIrrReport {
    pub per_annotator: BTreeMap<String, AnnotatorDelta>,
    /// Annotators whose coefficient is undefined in either system.
    pub excluded: Vec<(String, String)>,
    pub mean: Option<f64>,
}

/// Per-annotator IRR under soft-tuned predictions minus IRR under few-shot
/// predictions.
pub fn delta_irr(soft: &PredictionPairs, fewshot: &PredictionPairs, coefficient: IrrCoefficient) -> Result<DeltaIrrReport> {
    let (a, b) = (soft.annotators(), fewshot.annotators());
    if a != b {
        let odd: Vec<&str> = a.symmetric_difference(&b).copied().collect();
        return Err(Error::InputMismatch(format!(
            "annotators present in only one prediction file: {}",
            odd.join(", ")
        )));
    }
    let mut report = DeltaIrrReport::default();
    for id in a {
        let s = annotator_irr(soft.for_annotator(id), coefficient);
        let f = annotator_irr(fewshot.for_annotator(id), coefficient);
        match (s, f) {
            (Ok(s), Ok(f)) => {
                report.per_annotator.insert(
                    id.to_string(),
                    AnnotatorDelta {
                        soft: s.value,
                        fewshot: f.value,
                        delta: s.value - f.value,
                    },
                );
            }
            (Err(e), _) | (_, Err(e)) => report.excluded.push((id.to_string(), e.to_string())),
        }
    }
    if !report.per_annotator.is_empty() {
        let sum: f64 = report.per_annotator.values().map(|d| d.delta).sum();
        report.mean = Some(sum / report.per_annotator.len() as f64);
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum LandisKoch {
    Poor,
    Slight,
    Fair,
    Moderate,
    Substantial,
    AlmostPerfect,
}

impl LandisKoch {
    pub fn as_str(self) -> &'static str {
        match self {
            LandisKoch::Poor => "Poor",
            LandisKoch::Slight => "Slight",
            LandisKoch::Fair => "Fair",
            LandisKoch::Moderate => "Moderate",
            LandisKoch::Substantial => "Substantial",
            LandisKoch::AlmostPerfect => "Almost Perfect",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Band {
    pub band: LandisKoch,
    pub over_unity: bool,
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.band.as_str())?;
        if self.over_unity {
            f.write_str(" (>1)")?;
        }
        Ok(())
    }
}

/// Landis–Koch band for a score. Non-finite scores map to Poor.
pub fn interpret_band(score: f64) -> Band {
    let band = if score.is_nan() || score < 0.0 {
        LandisKoch::Poor
    } else if score <= 0.20 {
        LandisKoch::Slight
    } else if score <= 0.40 {
        LandisKoch::Fair
    } else if score <= 0.60 {
        LandisKoch::Moderate
    } else if score <= 0.80 {
        LandisKoch::Substantial
    } else {
        LandisKoch::AlmostPerfect
    };
    Band {
        band,
        over_unity: score > 1.0,
    }
}
