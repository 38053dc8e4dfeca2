//! k-way marginal workloads and linear-query evaluation.
//!
//! A [`QuerySet`] is a flat, stably indexed list of marginal queries grouped
//! by workload. Within a workload the queries are ordered by the mixed-radix
//! index of their target tuple (last attribute fastest), so answers for a
//! whole workload come from a single histogram pass.

use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{Dataset, Distribution, Record, Schema, Support};
use crate::error::{Error, Result};

/// Subset counts above this are sampled by rejection instead of enumeration.
const ENUMERATION_LIMIT: u128 = 2_000_000;

/// Predicate "record matches `target` on attributes `attrs`".
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MarginalQuery {
    attrs: Vec<usize>,
    target: Vec<u32>,
}

impl MarginalQuery {
    pub fn new(schema: &Schema, attrs: Vec<usize>, target: Vec<u32>) -> Result<Self> {
        if attrs.len() != target.len() {
            return Err(Error::InvalidQuery(format!(
                "{} attributes but {} target values",
                attrs.len(),
                target.len()
            )));
        }
        validate_attr_set(schema, &attrs)?;
        for (&a, &y) in attrs.iter().zip(&target) {
            if y >= schema.cardinality(a) {
                return Err(Error::InvalidQuery(format!(
                    "target {y} out of range for attribute {a} (cardinality {})",
                    schema.cardinality(a)
                )));
            }
        }
        Ok(Self { attrs, target })
    }

    pub fn attrs(&self) -> &[usize] {
        &self.attrs
    }

    pub fn target(&self) -> &[u32] {
        &self.target
    }

    /// `phi(x)`.
    pub fn matches(&self, record: &[u32]) -> bool {
        self.attrs
            .iter()
            .zip(&self.target)
            .all(|(&a, &y)| record[a] == y)
    }

    fn check_schema(&self, schema: &Schema) -> Result<()> {
        if let Some(&last) = self.attrs.last() {
            if last >= schema.len() {
                return Err(Error::SchemaMismatch(format!(
                    "query touches attribute {last} but schema has {}",
                    schema.len()
                )));
            }
        }
        for (&a, &y) in self.attrs.iter().zip(&self.target) {
            if y >= schema.cardinality(a) {
                return Err(Error::SchemaMismatch(format!(
                    "query target {y} exceeds cardinality of attribute {a}"
                )));
            }
        }
        Ok(())
    }
}

fn validate_attr_set(schema: &Schema, attrs: &[usize]) -> Result<()> {
    if attrs.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidQuery(format!(
            "attribute set {attrs:?} is not strictly increasing"
        )));
    }
    if let Some(&last) = attrs.last() {
        if last >= schema.len() {
            return Err(Error::InvalidQuery(format!(
                "attribute index {last} out of range for {} attributes",
                schema.len()
            )));
        }
    }
    Ok(())
}

/// All marginal queries over one attribute subset.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Workload {
    attrs: Vec<usize>,
}

impl Workload {
    pub fn new(schema: &Schema, attrs: Vec<usize>) -> Result<Self> {
        validate_attr_set(schema, &attrs)?;
        Ok(Self { attrs })
    }

    pub fn attrs(&self) -> &[usize] {
        &self.attrs
    }

    /// Number of queries, the product of the attribute cardinalities.
    pub fn size(&self, schema: &Schema) -> usize {
        self.attrs
            .iter()
            .map(|&a| schema.cardinality(a) as usize)
            .product()
    }

    /// Enumerates the workload's queries in cell order.
    pub fn queries<'a>(&'a self, schema: &'a Schema) -> impl Iterator<Item = MarginalQuery> + 'a {
        (0..self.size(schema)).map(move |cell| MarginalQuery {
            attrs: self.attrs.clone(),
            target: self.decode(schema, cell),
        })
    }

    fn strides(&self, schema: &Schema) -> Vec<usize> {
        let mut strides = vec![1usize; self.attrs.len()];
        for j in (0..self.attrs.len().saturating_sub(1)).rev() {
            strides[j] = strides[j + 1] * schema.cardinality(self.attrs[j + 1]) as usize;
        }
        strides
    }

    fn decode(&self, schema: &Schema, mut cell: usize) -> Vec<u32> {
        let mut target = vec![0u32; self.attrs.len()];
        for j in (0..self.attrs.len()).rev() {
            let card = schema.cardinality(self.attrs[j]) as usize;
            target[j] = (cell % card) as u32;
            cell /= card;
        }
        target
    }
}

/// Serializable description of a query set, enough to rebuild it exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuerySetSpec {
    pub k: usize,
    pub workloads: Vec<Vec<usize>>,
}

/// Flat indexed list of marginal queries grouped by workload.
#[derive(Clone, Debug)]
pub struct QuerySet {
    schema: Arc<Schema>,
    k: usize,
    workloads: Vec<Workload>,
    strides: Vec<Vec<usize>>,
    /// `offsets[w]` is the index of workload `w`'s first query; the last
    /// entry is the total count.
    offsets: Vec<usize>,
}

impl QuerySet {
    /// All workloads must have the same arity `k`. An empty list is allowed
    /// and rejected later by the operations that need queries.
    pub fn new(schema: Arc<Schema>, workloads: Vec<Workload>) -> Result<Self> {
        let k = workloads.first().map_or(0, |w| w.attrs.len());
        let mut offsets = Vec::with_capacity(workloads.len() + 1);
        let mut strides = Vec::with_capacity(workloads.len());
        let mut total = 0usize;
        for w in &workloads {
            validate_attr_set(&schema, &w.attrs)?;
            if w.attrs.len() != k {
                return Err(Error::InvalidQuery(format!(
                    "mixed workload arities {k} and {}",
                    w.attrs.len()
                )));
            }
            offsets.push(total);
            total += w.size(&schema);
            strides.push(w.strides(&schema));
        }
        offsets.push(total);
        Ok(Self {
            schema,
            k,
            workloads,
            strides,
            offsets,
        })
    }

    pub fn from_spec(schema: Arc<Schema>, spec: &QuerySetSpec) -> Result<Self> {
        let workloads = spec
            .workloads
            .iter()
            .map(|attrs| Workload::new(&schema, attrs.clone()))
            .collect::<Result<Vec<_>>>()?;
        if workloads.iter().any(|w| w.attrs.len() != spec.k) {
            return Err(Error::InvalidQuery(format!(
                "workload arity differs from k = {}",
                spec.k
            )));
        }
        let mut qs = Self::new(schema, workloads)?;
        qs.k = spec.k;
        Ok(qs)
    }

    pub fn spec(&self) -> QuerySetSpec {
        QuerySetSpec {
            k: self.k,
            workloads: self.workloads.iter().map(|w| w.attrs.clone()).collect(),
        }
    }

    pub fn schema(&self) -> &Arc<Schema> {
        &self.schema
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn workloads(&self) -> &[Workload] {
        &self.workloads
    }

    /// Total number of queries `|Q|`.
    pub fn len(&self) -> usize {
        *self.offsets.last().unwrap_or(&0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Index range of workload `w`'s queries.
    pub fn workload_range(&self, w: usize) -> std::ops::Range<usize> {
        self.offsets[w]..self.offsets[w + 1]
    }

    /// (workload, cell) position of query `index`.
    pub fn locate(&self, index: usize) -> (usize, usize) {
        assert!(index < self.len(), "query index {index} out of range");
        let w = self.offsets.partition_point(|&o| o <= index) - 1;
        (w, index - self.offsets[w])
    }

    pub fn query(&self, index: usize) -> MarginalQuery {
        let (w, cell) = self.locate(index);
        let workload = &self.workloads[w];
        MarginalQuery {
            attrs: workload.attrs.clone(),
            target: workload.decode(&self.schema, cell),
        }
    }

    fn cell_of(&self, w: usize, record: &[u32]) -> usize {
        self.workloads[w]
            .attrs
            .iter()
            .zip(&self.strides[w])
            .map(|(&a, &s)| record[a] as usize * s)
            .sum()
    }

    /// Indices of the support points matching query `index`.
    pub fn matching_points(&self, index: usize, points: &[Record]) -> Vec<u32> {
        let (w, cell) = self.locate(index);
        points
            .iter()
            .enumerate()
            .filter(|(_, p)| self.cell_of(w, p) == cell)
            .map(|(i, _)| i as u32)
            .collect()
    }

    fn check_schema(&self, other: &Schema) -> Result<()> {
        if *self.schema != *other {
            return Err(Error::SchemaMismatch(
                "query set and data use different schemas".into(),
            ));
        }
        Ok(())
    }

    /// `q(D)` for every query, from one histogram per workload.
    pub fn answers_on_dataset(&self, dataset: &Dataset) -> Result<Vec<f64>> {
        self.check_schema(dataset.schema())?;
        let n = dataset.len() as f64;
        let per_workload: Vec<Vec<f64>> = (0..self.workloads.len())
            .into_par_iter()
            .map(|w| {
                let mut counts = vec![0u64; self.workload_range(w).len()];
                for row in dataset.rows() {
                    counts[self.cell_of(w, row)] += 1;
                }
                counts.into_iter().map(|c| c as f64 / n).collect()
            })
            .collect();
        Ok(per_workload.concat())
    }

    /// `q(A)` for every query given linear weights over `points`.
    pub fn answers_on_weights(&self, points: &[Record], weights: &[f64]) -> Vec<f64> {
        debug_assert_eq!(points.len(), weights.len());
        let per_workload: Vec<Vec<f64>> = (0..self.workloads.len())
            .into_par_iter()
            .map(|w| {
                let mut hist = vec![0.0f64; self.workload_range(w).len()];
                for (p, &wt) in points.iter().zip(weights) {
                    hist[self.cell_of(w, p)] += wt;
                }
                hist
            })
            .collect();
        per_workload.concat()
    }

    pub fn answers_on_distribution(&self, dist: &Distribution) -> Result<Vec<f64>> {
        self.check_schema(dist.support().schema())?;
        dist.ensure_normalized()?;
        Ok(self.answers_on_weights(dist.support().points(), &dist.weights()))
    }
}

/// Lazily materialized 0/1 matrix of query predicates over a support, stored
/// sparsely as the matching point indices of each touched query.
#[derive(Debug)]
pub struct AnswerMatrix {
    support: Arc<Support>,
    rows: HashMap<usize, Vec<u32>>,
}

impl AnswerMatrix {
    pub fn new(support: Arc<Support>) -> Self {
        Self {
            support,
            rows: HashMap::new(),
        }
    }

    pub fn support(&self) -> &Arc<Support> {
        &self.support
    }

    /// Matching support indices of query `index`, computed on first use.
    pub fn row(&mut self, qs: &QuerySet, index: usize) -> &[u32] {
        let support = &self.support;
        self.rows
            .entry(index)
            .or_insert_with(|| qs.matching_points(index, support.points()))
    }

    pub fn entry(&mut self, qs: &QuerySet, index: usize, point: usize) -> bool {
        self.row(qs, index).binary_search(&(point as u32)).is_ok()
    }

    /// Row dotted with `weights`.
    pub fn answer(&mut self, qs: &QuerySet, index: usize, weights: &[f64]) -> f64 {
        self.row(qs, index)
            .iter()
            .map(|&i| weights[i as usize])
            .sum()
    }

    /// Number of materialized rows.
    pub fn cached_rows(&self) -> usize {
        self.rows.len()
    }
}

/// `q(D)`: fraction of rows matching the query.
pub fn evaluate_on_dataset(q: &MarginalQuery, dataset: &Dataset) -> Result<f64> {
    q.check_schema(dataset.schema())?;
    let hits = dataset.rows().iter().filter(|r| q.matches(r)).count();
    Ok(hits as f64 / dataset.len() as f64)
}

/// `q(A)`: probability mass of matching support points.
pub fn evaluate_on_distribution(q: &MarginalQuery, dist: &Distribution) -> Result<f64> {
    q.check_schema(dist.support().schema())?;
    dist.ensure_normalized()?;
    Ok(dist
        .support()
        .points()
        .iter()
        .zip(dist.log_weights())
        .filter(|(p, _)| q.matches(p))
        .map(|(_, l)| l.exp())
        .sum())
}

/// `C(d, k)`, saturating at `u128::MAX`.
pub fn binomial(d: usize, k: usize) -> u128 {
    if k > d {
        return 0;
    }
    let k = k.min(d - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = match acc.checked_mul((d - i) as u128) {
            Some(v) => v / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    acc
}

fn all_subsets(d: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current: Vec<usize> = (0..k).collect();
    if k == 0 || k > d {
        return out;
    }
    loop {
        out.push(current.clone());
        let mut i = k;
        while i > 0 && current[i - 1] == d - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return out;
        }
        current[i - 1] += 1;
        for j in i..k {
            current[j] = current[j - 1] + 1;
        }
    }
}

/// `count` distinct attribute subsets of size `k`, drawn uniformly without
/// replacement under `seed` and returned in lexicographic order. Asking for
/// every subset returns all of them.
pub fn build_workloads(schema: &Schema, k: usize, count: usize, seed: u64) -> Result<Vec<Workload>> {
    let d = schema.len();
    if k == 0 || k > d {
        return Err(Error::InvalidParameter(format!(
            "k = {k} must be in 1..={d}"
        )));
    }
    let available = binomial(d, k);
    if count as u128 > available {
        return Err(Error::TooManyWorkloads {
            requested: count as u64,
            available: available.min(u64::MAX as u128) as u64,
            k,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut subsets = if count as u128 == available {
        all_subsets(d, k)
    } else if available <= ENUMERATION_LIMIT {
        let all = all_subsets(d, k);
        index::sample(&mut rng, all.len(), count)
            .into_iter()
            .map(|i| all[i].clone())
            .collect()
    } else {
        let mut seen = HashSet::with_capacity(count);
        let mut picked = Vec::with_capacity(count);
        while picked.len() < count {
            let mut s = index::sample(&mut rng, d, k).into_vec();
            s.sort_unstable();
            if seen.insert(s.clone()) {
                picked.push(s);
            }
        }
        picked
    };
    subsets.sort();
    Ok(subsets.into_iter().map(|attrs| Workload { attrs }).collect())
}

/// Max, mean and mean-squared absolute error over a query set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorMetrics {
    pub max: f64,
    pub mean: f64,
    pub mse: f64,
}

impl ErrorMetrics {
    pub fn from_answers(truth: &[f64], approx: &[f64]) -> Result<Self> {
        if truth.is_empty() {
            return Err(Error::EmptyQuerySet);
        }
        let (mut max, mut sum, mut sq) = (0.0f64, 0.0, 0.0);
        for (t, a) in truth.iter().zip(approx) {
            let e = (t - a).abs();
            max = max.max(e);
            sum += e;
            sq += e * e;
        }
        let n = truth.len() as f64;
        Ok(Self {
            max,
            mean: sum / n,
            mse: sq / n,
        })
    }
}

/// Index and value of the largest `|truth - approx|`, lowest index on ties.
pub fn worst_from_answers(truth: &[f64], approx: &[f64]) -> Result<(usize, f64)> {
    if truth.is_empty() {
        return Err(Error::EmptyQuerySet);
    }
    let mut best = (0usize, f64::NEG_INFINITY);
    for (i, (t, a)) in truth.iter().zip(approx).enumerate() {
        let e = (t - a).abs();
        if e > best.1 {
            best = (i, e);
        }
    }
    Ok(best)
}

pub fn worst_error(qs: &QuerySet, dataset: &Dataset, dist: &Distribution) -> Result<(usize, f64)> {
    if qs.is_empty() {
        return Err(Error::EmptyQuerySet);
    }
    worst_from_answers(&qs.answers_on_dataset(dataset)?, &qs.answers_on_distribution(dist)?)
}

pub fn error_metrics(qs: &QuerySet, dataset: &Dataset, dist: &Distribution) -> Result<ErrorMetrics> {
    if qs.is_empty() {
        return Err(Error::EmptyQuerySet);
    }
    ErrorMetrics::from_answers(&qs.answers_on_dataset(dataset)?, &qs.answers_on_distribution(dist)?)
}
