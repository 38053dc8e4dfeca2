//! Differentially private release of k-way marginal workloads.
//!
//! A private dataset is summarized by reweighting the support of a related
//! public dataset with multiplicative weights, driven by privately selected
//! and privately measured queries. A full-domain baseline, zCDP accounting,
//! a best-mixture-error estimator for judging public data, and CSV ingestion
//! with biased public/private splits round out the toolkit.

pub mod accounting;
pub mod domain;
pub mod engine;
pub mod error;
pub mod ingest;
pub mod mechanisms;
pub mod queries;

pub use accounting::{BudgetLedger, Conversion, PrivacyBudget};
pub use domain::{empirical_distribution, normalize, Dataset, Distribution, Record, Schema, Support};
pub use engine::{mwem_run, pmwpub_run, BudgetSpec, RunConfig, RunReport};
pub use error::{Error, Result};
pub use queries::{build_workloads, ErrorMetrics, MarginalQuery, QuerySet, Workload};
