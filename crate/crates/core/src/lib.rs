//! Ranking diagnostic labels against free-text patient reports.
//!
//! * [`llrank`]: likelihood ranking with a report-free prior correction.
//! * [`genmap`]: generate-then-map baseline using word overlap.
//! * [`metrics`]: Hit@k, Macro-F1@k and method comparison tables.
//! * [`icdmap`]: ICD-9/10 to ICD-11 conversion with a review queue.
//! * [`provider`]: language model backends (lookup table, HTTP).
//! * [`corpus`]: reports, label catalogs and prompt templates.

pub mod corpus;
pub mod genmap;
pub mod icdmap;
pub mod llrank;
pub mod metrics;
pub mod provider;
pub mod ranking;

use sha2::{Digest, Sha256};

pub(crate) fn sha256_hex(data: &[u8]) -> String {
    hex::encode(Sha256::digest(data))
}
