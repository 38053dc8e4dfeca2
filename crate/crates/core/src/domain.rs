//! Data universe: schemas, encoded records, datasets, public-data supports and
//! distributions over a support.
//!
//! Records are dense vectors of category indices, so the product domain is
//! never materialized except by [`Support::full_domain`], which refuses to
//! enumerate more than a caller-supplied cap.

use std::collections::HashMap;
use std::fs;
use std::ops::Deref;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `|sum(weights) - 1|` accepted as normalized.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

/// Log-sum-exp offsets at or below this are treated as already normalized,
/// which keeps `normalize` idempotent bit for bit.
const LSE_IDEMPOTENCE_SLACK: f64 = 1e-12;

/// One categorical attribute of the schema.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    pub cardinality: u32,
    /// Bin edges for a numeric raw column: `cardinality + 1` increasing
    /// values. Bins are right-open except the last, which is closed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bins: Option<Vec<f64>>,
    /// Vocabulary for a string raw column; position is the category index.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub categories: Option<Vec<String>>,
    /// Category index that receives missing raw values (`?` or empty).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub missing: Option<u32>,
}

impl Attribute {
    /// A plain attribute whose raw values are already category indices.
    pub fn indexed(name: impl Into<String>, cardinality: u32) -> Self {
        Self {
            name: name.into(),
            cardinality,
            bins: None,
            categories: None,
            missing: None,
        }
    }

    /// Bin index for a raw numeric value, or `None` when it lies outside
    /// every bin or the attribute has no bins.
    pub fn bin_index(&self, value: f64) -> Option<u32> {
        let edges = self.bins.as_ref()?;
        let (first, last) = (edges[0], edges[edges.len() - 1]);
        if value.is_nan() || value < first || value > last {
            return None;
        }
        if value == last {
            return Some(self.cardinality - 1);
        }
        let upper = edges.partition_point(|&e| e <= value);
        Some((upper - 1) as u32)
    }

    /// Category index of a raw string value under the vocabulary.
    pub fn category_index(&self, value: &str) -> Option<u32> {
        self.categories
            .as_ref()?
            .iter()
            .position(|c| c == value)
            .map(|i| i as u32)
    }

    fn validate(&self) -> Result<()> {
        if self.cardinality == 0 {
            return Err(Error::InvalidSchema(format!(
                "attribute {:?} has cardinality 0",
                self.name
            )));
        }
        if self.bins.is_some() && self.categories.is_some() {
            return Err(Error::InvalidSchema(format!(
                "attribute {:?} declares both bins and categories",
                self.name
            )));
        }
        if let Some(edges) = &self.bins {
            if edges.len() != self.cardinality as usize + 1 {
                return Err(Error::InvalidSchema(format!(
                    "attribute {:?}: {} bin edges for cardinality {}",
                    self.name,
                    edges.len(),
                    self.cardinality
                )));
            }
            if edges.iter().any(|e| !e.is_finite()) || edges.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidSchema(format!(
                    "attribute {:?}: bin edges must be finite and strictly increasing",
                    self.name
                )));
            }
        }
        if let Some(cats) = &self.categories {
            if cats.len() != self.cardinality as usize {
                return Err(Error::InvalidSchema(format!(
                    "attribute {:?}: {} categories for cardinality {}",
                    self.name,
                    cats.len(),
                    self.cardinality
                )));
            }
            let mut seen = std::collections::HashSet::new();
            if let Some(dup) = cats.iter().find(|c| !seen.insert(c.as_str())) {
                return Err(Error::InvalidSchema(format!(
                    "attribute {:?}: duplicate category {dup:?}",
                    self.name
                )));
            }
        }
        if let Some(m) = self.missing {
            if m >= self.cardinality {
                return Err(Error::InvalidSchema(format!(
                    "attribute {:?}: missing index {m} out of range",
                    self.name
                )));
            }
        }
        Ok(())
    }
}

#[derive(Deserialize)]
struct SchemaFile {
    #[serde(default)]
    version: Option<u32>,
    attributes: Vec<Attribute>,
}

/// Ordered list of categorical attributes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SchemaFile")]
pub struct Schema {
    #[serde(skip_serializing_if = "Option::is_none")]
    version: Option<u32>,
    attributes: Vec<Attribute>,
}

impl TryFrom<SchemaFile> for Schema {
    type Error = Error;

    fn try_from(file: SchemaFile) -> Result<Self> {
        let mut schema = Schema::new(file.attributes)?;
        schema.version = file.version;
        Ok(schema)
    }
}

impl Schema {
    pub fn new(attributes: Vec<Attribute>) -> Result<Self> {
        if attributes.is_empty() {
            return Err(Error::InvalidSchema("no attributes".into()));
        }
        let mut names = std::collections::HashSet::new();
        for attr in &attributes {
            attr.validate()?;
            if !names.insert(attr.name.as_str()) {
                return Err(Error::InvalidSchema(format!(
                    "duplicate attribute name {:?}",
                    attr.name
                )));
            }
        }
        Ok(Self {
            version: None,
            attributes,
        })
    }

    /// Schema of plain indexed attributes named `a0, a1, ...`.
    pub fn from_cardinalities(cards: &[u32]) -> Result<Self> {
        Self::new(
            cards
                .iter()
                .enumerate()
                .map(|(i, &c)| Attribute::indexed(format!("a{i}"), c))
                .collect(),
        )
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn attributes(&self) -> &[Attribute] {
        &self.attributes
    }

    pub fn attribute(&self, index: usize) -> &Attribute {
        &self.attributes[index]
    }

    /// Number of attributes `d`.
    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a.name == name)
    }

    pub fn cardinality(&self, index: usize) -> u32 {
        self.attributes[index].cardinality
    }

    pub fn cardinalities(&self) -> Vec<u32> {
        self.attributes.iter().map(|a| a.cardinality).collect()
    }

    /// Sum of cardinalities (the one-hot dimension of the domain).
    pub fn dimension(&self) -> u64 {
        self.attributes.iter().map(|a| a.cardinality as u64).sum()
    }

    /// `log10` of the product of cardinalities.
    pub fn log10_domain_size(&self) -> f64 {
        self.attributes
            .iter()
            .map(|a| (a.cardinality as f64).log10())
            .sum()
    }

    /// Product of cardinalities, or `None` when it does not fit in `u64`.
    pub fn domain_size(&self) -> Option<u64> {
        self.attributes
            .iter()
            .try_fold(1u64, |acc, a| acc.checked_mul(a.cardinality as u64))
    }

    pub fn validate_record(&self, record: &Record) -> Result<()> {
        if record.len() != self.len() {
            return Err(Error::InvalidRecord(format!(
                "record has {} values, schema has {} attributes",
                record.len(),
                self.len()
            )));
        }
        for (i, (&v, attr)) in record.iter().zip(&self.attributes).enumerate() {
            if v >= attr.cardinality {
                return Err(Error::InvalidRecord(format!(
                    "value {v} at position {i} ({:?}) exceeds cardinality {}",
                    attr.name, attr.cardinality
                )));
            }
        }
        Ok(())
    }
}

/// A record: one category index per schema attribute.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Record(Vec<u32>);

impl Record {
    pub fn new(values: Vec<u32>) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &[u32] {
        &self.0
    }
}

impl Deref for Record {
    type Target = [u32];

    fn deref(&self) -> &[u32] {
        &self.0
    }
}

impl From<Vec<u32>> for Record {
    fn from(values: Vec<u32>) -> Self {
        Self(values)
    }
}

/// A nonempty list of records valid under a shared schema.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    schema: Arc<Schema>,
    rows: Vec<Record>,
}

impl Dataset {
    pub fn new(schema: Arc<Schema>, rows: Vec<Record>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyDataset);
        }
        for row in &rows {
            schema.validate_record(row)?;
        }
        Ok(Self { schema, rows })
    }

    /// Convenience constructor from raw index vectors.
    pub fn from_rows(schema: Arc<Schema>, rows: Vec<Vec<u32>>) -> Result<Self> {
        Self::new(schema, rows.into_iter().map(Record::new).collect())
    }

    pub fn schema(&self) -> &Arc<Schema> {
        &self.schema
    }

    pub fn rows(&self) -> &[Record] {
        &self.rows
    }

    /// Number of rows `n`.
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn into_rows(self) -> Vec<Record> {
        self.rows
    }
}

/// Distinct records of a source dataset with their multiplicities.
#[derive(Clone, Debug, PartialEq)]
pub struct Support {
    schema: Arc<Schema>,
    points: Vec<Record>,
    origin_counts: Vec<u64>,
}

impl Support {
    /// Deduplicates `dataset`, keeping points in order of first occurrence.
    pub fn from_dataset(dataset: &Dataset) -> Self {
        let mut index: HashMap<&Record, usize> = HashMap::with_capacity(dataset.len());
        let mut points = Vec::new();
        let mut origin_counts = Vec::new();
        for row in dataset.rows() {
            match index.get(row) {
                Some(&i) => origin_counts[i] += 1,
                None => {
                    index.insert(row, points.len());
                    points.push(row.clone());
                    origin_counts.push(1);
                }
            }
        }
        Self {
            schema: dataset.schema.clone(),
            points,
            origin_counts,
        }
    }

    /// Every point of the product domain in lexicographic order (first
    /// attribute slowest). Fails when the domain has more than `cap` points.
    pub fn full_domain(schema: Arc<Schema>, cap: u64) -> Result<Self> {
        let size = match schema.domain_size() {
            Some(s) if s <= cap => s,
            Some(s) => {
                return Err(Error::DomainTooLarge {
                    size: s.to_string(),
                    cap,
                })
            }
            None => {
                return Err(Error::DomainTooLarge {
                    size: format!("10^{:.2}", schema.log10_domain_size()),
                    cap,
                })
            }
        };
        let cards = schema.cardinalities();
        let mut points = Vec::with_capacity(size as usize);
        let mut current = vec![0u32; cards.len()];
        for _ in 0..size {
            points.push(Record::new(current.clone()));
            for pos in (0..cards.len()).rev() {
                current[pos] += 1;
                if current[pos] < cards[pos] {
                    break;
                }
                current[pos] = 0;
            }
        }
        Ok(Self {
            schema,
            origin_counts: vec![1; points.len()],
            points,
        })
    }

    pub fn schema(&self) -> &Arc<Schema> {
        &self.schema
    }

    pub fn points(&self) -> &[Record] {
        &self.points
    }

    pub fn origin_counts(&self) -> &[u64] {
        &self.origin_counts
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Weights over the points of a support, stored as log-weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Distribution {
    support: Arc<Support>,
    log_weights: Vec<f64>,
}

impl Distribution {
    /// Wraps raw log-weights; call [`Distribution::normalize`] before use.
    pub fn from_log_weights(support: Arc<Support>, log_weights: Vec<f64>) -> Result<Self> {
        if log_weights.len() != support.len() {
            return Err(Error::InvalidParameter(format!(
                "{} log-weights for a support of {} points",
                log_weights.len(),
                support.len()
            )));
        }
        Ok(Self {
            support,
            log_weights,
        })
    }

    /// Builds a normalized distribution from nonnegative linear weights.
    pub fn from_weights(support: Arc<Support>, weights: &[f64]) -> Result<Self> {
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidParameter("weights must be nonnegative".into()));
        }
        let logs = weights.iter().map(|w| w.ln()).collect();
        Self::from_log_weights(support, logs)?.normalize()
    }

    pub fn uniform(support: Arc<Support>) -> Result<Self> {
        if support.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let lw = (1.0 / support.len() as f64).ln();
        Ok(Self {
            log_weights: vec![lw; support.len()],
            support,
        })
    }

    pub fn support(&self) -> &Arc<Support> {
        &self.support
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    pub(crate) fn log_weights_mut(&mut self) -> &mut [f64] {
        &mut self.log_weights
    }

    /// Linear weights `exp(log_weight)`.
    pub fn weights(&self) -> Vec<f64> {
        self.log_weights.iter().map(|l| l.exp()).collect()
    }

    pub fn weight_sum(&self) -> f64 {
        self.log_weights.iter().map(|l| l.exp()).sum()
    }

    pub fn is_normalized(&self) -> bool {
        (self.weight_sum() - 1.0).abs() <= NORMALIZATION_TOLERANCE
    }

    pub fn ensure_normalized(&self) -> Result<()> {
        let sum = self.weight_sum();
        if (sum - 1.0).abs() <= NORMALIZATION_TOLERANCE {
            Ok(())
        } else {
            Err(Error::Unnormalized { sum })
        }
    }

    /// Log-sum-exp renormalization.
    pub fn normalize(mut self) -> Result<Self> {
        normalize_log_weights(&mut self.log_weights)?;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.log_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_weights.is_empty()
    }
}

/// Shifts `log_weights` so that their exponentials sum to one.
pub(crate) fn normalize_log_weights(log_weights: &mut [f64]) -> Result<()> {
    if log_weights
        .iter()
        .any(|l| l.is_nan() || *l == f64::INFINITY)
    {
        return Err(Error::DegenerateDistribution);
    }
    let max = log_weights
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::DegenerateDistribution);
    }
    let sum: f64 = log_weights.iter().map(|l| (l - max).exp()).sum();
    let lse = max + sum.ln();
    if lse.abs() > LSE_IDEMPOTENCE_SLACK {
        for l in log_weights.iter_mut() {
            *l -= lse;
        }
    }
    Ok(())
}

/// Normalizes a distribution.
pub fn normalize(dist: Distribution) -> Result<Distribution> {
    dist.normalize()
}

/// The empirical distribution of `dataset` over its deduplicated support.
pub fn empirical_distribution(dataset: &Dataset) -> Result<Distribution> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let support = Arc::new(Support::from_dataset(dataset));
    let n = dataset.len() as f64;
    let log_weights = support
        .origin_counts()
        .iter()
        .map(|&c| (c as f64 / n).ln())
        .collect();
    Ok(Distribution {
        support,
        log_weights,
    })
}
