//! CSV loading against a schema, public/private splits with controlled
//! sampling bias, and public-data subsampling.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{Attribute, Dataset, Record, Schema};
use crate::error::{Error, Result};

const MISSING_TOKENS: [&str; 2] = ["?", ""];

fn encode_raw(attr: &Attribute, raw: &str, row: usize) -> Result<u32> {
    let value = raw.trim();
    if MISSING_TOKENS.contains(&value) {
        if let Some(m) = attr.missing {
            return Ok(m);
        }
    }
    if attr.bins.is_some() {
        let x: f64 = value.parse().map_err(|_| Error::BadValue {
            row,
            column: attr.name.clone(),
            message: format!("{value:?} is not a number"),
        })?;
        return attr.bin_index(x).ok_or_else(|| Error::OutsideBins {
            row,
            column: attr.name.clone(),
            value: value.to_string(),
        });
    }
    if attr.categories.is_some() {
        return attr.category_index(value).ok_or_else(|| Error::UnknownCategory {
            row,
            column: attr.name.clone(),
            value: value.to_string(),
        });
    }
    encode_index(attr, value, row)
}

fn encode_index(attr: &Attribute, raw: &str, row: usize) -> Result<u32> {
    let value = raw.trim();
    match value.parse::<u32>() {
        Ok(i) if i < attr.cardinality => Ok(i),
        _ => Err(Error::UnknownCategory {
            row,
            column: attr.name.clone(),
            value: value.to_string(),
        }),
    }
}

fn load_with<R: Read>(
    reader: R,
    schema: Arc<Schema>,
    encode: fn(&Attribute, &str, usize) -> Result<u32>,
) -> Result<Dataset> {
    let mut csv = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = csv.headers()?.clone();
    let columns = schema
        .attributes()
        .iter()
        .map(|a| {
            headers
                .iter()
                .position(|h| h.trim() == a.name)
                .ok_or_else(|| Error::MissingColumn {
                    column: a.name.clone(),
                })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    for (i, rec) in csv.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let values = schema
            .attributes()
            .iter()
            .zip(&columns)
            .map(|(attr, &col)| {
                let raw = rec.get(col).ok_or_else(|| Error::BadValue {
                    row,
                    column: attr.name.clone(),
                    message: "row is too short".into(),
                })?;
                encode(attr, raw, row)
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(Record::new(values));
    }
    Dataset::new(schema, rows)
}

/// Reads raw values (category labels, numbers to bin, or plain indices) and
/// encodes them under `schema`. Columns are matched by header name in any
/// order; extra columns are ignored. Rows are numbered from 1 in errors.
pub fn load_csv_from<R: Read>(reader: R, schema: Arc<Schema>) -> Result<Dataset> {
    load_with(reader, schema, encode_raw)
}

pub fn load_csv(path: impl AsRef<Path>, schema: Arc<Schema>) -> Result<Dataset> {
    load_csv_from(File::open(path)?, schema)
}

/// Reads a CSV of category indices, as written by [`write_csv`].
pub fn load_encoded_csv_from<R: Read>(reader: R, schema: Arc<Schema>) -> Result<Dataset> {
    load_with(reader, schema, encode_index)
}

pub fn load_encoded_csv(path: impl AsRef<Path>, schema: Arc<Schema>) -> Result<Dataset> {
    load_encoded_csv_from(File::open(path)?, schema)
}

/// Writes a headered CSV of category indices.
pub fn write_csv_to<W: Write>(dataset: &Dataset, writer: W) -> Result<()> {
    write_records_to(dataset.schema(), dataset.rows(), writer)
}

pub fn write_records_to<W: Write>(schema: &Schema, rows: &[Record], writer: W) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(schema.attributes().iter().map(|a| a.name.as_str()))?;
    for row in rows {
        csv.write_record(row.iter().map(|v| v.to_string()))?;
    }
    csv.flush()?;
    Ok(())
}

pub fn write_csv(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    write_csv_to(dataset, File::create(path)?)
}

/// Oversampling of one stratum in the public draw.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasSpec {
    pub attribute: String,
    /// Category label (or index) defining the stratum.
    pub value: String,
    /// Added to the stratum's base rate `r` in the public draw.
    pub delta: f64,
}

fn default_private_fraction() -> f64 {
    0.9
}

fn default_public_fraction() -> f64 {
    0.1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    #[serde(default = "default_private_fraction")]
    pub private_fraction: f64,
    #[serde(default = "default_public_fraction")]
    pub public_fraction: f64,
    #[serde(default)]
    pub bias: Option<BiasSpec>,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            private_fraction: default_private_fraction(),
            public_fraction: default_public_fraction(),
            bias: None,
        }
    }
}

impl SplitSpec {
    pub fn with_bias(attribute: &str, value: &str, delta: f64) -> Self {
        Self {
            bias: Some(BiasSpec {
                attribute: attribute.into(),
                value: value.into(),
                delta,
            }),
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug)]
pub struct Split {
    pub private: Dataset,
    pub public: Dataset,
    /// Stratum share `r` in the source data, when bias is configured.
    pub base_rate: Option<f64>,
}

fn resolve_stratum(schema: &Schema, bias: &BiasSpec) -> Result<(usize, u32)> {
    let attr = schema.index_of(&bias.attribute).ok_or_else(|| {
        Error::InvalidParameter(format!("unknown bias attribute {:?}", bias.attribute))
    })?;
    let a = schema.attribute(attr);
    let value = a
        .category_index(&bias.value)
        .or_else(|| bias.value.parse::<u32>().ok().filter(|&v| v < a.cardinality))
        .ok_or_else(|| {
            Error::InvalidParameter(format!(
                "unknown value {:?} for attribute {:?}",
                bias.value, bias.attribute
            ))
        })?;
    Ok((attr, value))
}

/// Share of rows whose `attribute` equals `value`.
pub fn stratum_rate(dataset: &Dataset, attribute: usize, value: u32) -> f64 {
    let hits = dataset.rows().iter().filter(|r| r[attribute] == value).count();
    hits as f64 / dataset.len() as f64
}

fn draw_size(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64).round() as usize).max(1)
}

/// Samples a private and a public dataset with replacement from `source`.
/// The private draw comes first and never depends on the bias settings.
/// With bias, each public draw lands in the stratum with probability
/// `r + delta`, uniformly within the chosen side.
pub fn biased_split<R: Rng + ?Sized>(source: &Dataset, spec: &SplitSpec, rng: &mut R) -> Result<Split> {
    if !(spec.private_fraction > 0.0 && spec.public_fraction > 0.0) {
        return Err(Error::InvalidParameter("split fractions must be positive".into()));
    }
    let n = source.len();
    let rows = source.rows();
    let schema = source.schema().clone();

    let private_rows = (0..draw_size(spec.private_fraction, n))
        .map(|_| rows[rng.random_range(0..n)].clone())
        .collect();
    let private = Dataset::new(schema.clone(), private_rows)?;

    let public_size = draw_size(spec.public_fraction, n);
    let (public_rows, base_rate) = match &spec.bias {
        None => (
            (0..public_size)
                .map(|_| rows[rng.random_range(0..n)].clone())
                .collect::<Vec<_>>(),
            None,
        ),
        Some(bias) => {
            let (attr, value) = resolve_stratum(&schema, bias)?;
            let (inside, outside): (Vec<&Record>, Vec<&Record>) =
                rows.iter().partition(|r| r[attr] == value);
            let r = inside.len() as f64 / n as f64;
            let mut p = r + bias.delta;
            if !(-1e-12..=1.0 + 1e-12).contains(&p) {
                return Err(Error::InvalidParameter(format!(
                    "r + delta = {p} is outside [0, 1]"
                )));
            }
            if p < 1e-12 {
                p = 0.0;
            } else if p > 1.0 - 1e-12 {
                p = 1.0;
            }
            if p > 0.0 && inside.is_empty() {
                return Err(Error::EmptyStratum(format!(
                    "no rows with {} = {:?}",
                    bias.attribute, bias.value
                )));
            }
            if p < 1.0 && outside.is_empty() {
                return Err(Error::EmptyStratum(format!(
                    "every row has {} = {:?}",
                    bias.attribute, bias.value
                )));
            }
            let drawn = (0..public_size)
                .map(|_| {
                    let side = if rng.random_bool(p) { &inside } else { &outside };
                    side[rng.random_range(0..side.len())].clone()
                })
                .collect();
            (drawn, Some(r))
        }
    };
    let public = Dataset::new(schema, public_rows)?;
    Ok(Split {
        private,
        public,
        base_rate,
    })
}

/// Uniform sample without replacement of `round(p * m)` rows (at least one),
/// kept in source order.
pub fn subsample_public<R: Rng + ?Sized>(public: &Dataset, p: f64, rng: &mut R) -> Result<Dataset> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "subsample fraction must be in (0, 1], got {p}"
        )));
    }
    let m = public.len();
    let k = draw_size(p, m).min(m);
    let mut picked = index::sample(rng, m, k).into_vec();
    picked.sort_unstable();
    let rows = picked.into_iter().map(|i| public.rows()[i].clone()).collect();
    Dataset::new(public.schema().clone(), rows)
}
