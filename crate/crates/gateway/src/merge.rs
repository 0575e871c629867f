//! Consolidation of per-target rankings into one deduplicated list.

use std::collections::BTreeMap;

use bdl_core::dc::{fingerprint, Fingerprint, MetadataRecord};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use serde::ser::SerializeStruct;
use serde::{Serialize, Serializer};

use crate::broadcast::{OutcomeStatus, ProviderOutcome};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct Source {
    pub provider: String,
    pub identifier: String,
    /// 0-based position in that provider's list.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergedResult {
    pub fingerprint: Fingerprint,
    pub record: MetadataRecord,
    pub sources: Vec<Source>,
    /// Σ 1/(rank + 1) over the sources, exact.
    pub score: BigRational,
}

impl MergedResult {
    pub fn score_f64(&self) -> f64 {
        self.score.to_f64().unwrap_or(f64::MAX)
    }
}

/// `score` is written as a number, plus `scoreExact` as a fraction such as
/// `"3/2"`.
impl Serialize for MergedResult {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("MergedResult", 5)?;
        st.serialize_field("fingerprint", &self.fingerprint)?;
        st.serialize_field("record", &self.record)?;
        st.serialize_field("sources", &self.sources)?;
        st.serialize_field("score", &self.score_f64())?;
        st.serialize_field("scoreExact", &self.score.to_string())?;
        st.end()
    }
}

struct Group {
    sources: Vec<Source>,
    candidates: Vec<(String, String, MetadataRecord)>,
}

/// Groups ok-outcome hits by fingerprint and ranks groups by summed
/// reciprocal rank, then fingerprint. Order of `outcomes` does not matter.
pub fn merge(outcomes: &[ProviderOutcome]) -> Vec<MergedResult> {
    let mut groups: BTreeMap<Fingerprint, Group> = BTreeMap::new();
    for outcome in outcomes.iter().filter(|o| o.status == OutcomeStatus::Ok) {
        for (rank, hit) in outcome.records.iter().enumerate() {
            let group = groups
                .entry(fingerprint(&hit.metadata))
                .or_insert_with(|| Group { sources: Vec::new(), candidates: Vec::new() });
            group.sources.push(Source { provider: outcome.provider_id.clone(), identifier: hit.identifier.clone(), rank });
            group.candidates.push((outcome.provider_id.clone(), hit.identifier.clone(), hit.metadata.clone()));
        }
    }
    let mut results: Vec<MergedResult> = groups
        .into_iter()
        .map(|(fp, mut g)| {
            g.sources.sort();
            let score = g.sources.iter().fold(BigRational::zero(), |acc, s| {
                acc + BigRational::new(BigInt::from(1), BigInt::from(s.rank + 1))
            });
            // most statements, then smallest provider id, identifier, record
            g.candidates.sort_by(|a, b| {
                b.2.len()
                    .cmp(&a.2.len())
                    .then_with(|| a.0.cmp(&b.0))
                    .then_with(|| a.1.cmp(&b.1))
                    .then_with(|| format!("{:?}", a.2).cmp(&format!("{:?}", b.2)))
            });
            let record = g.candidates.swap_remove(0).2;
            MergedResult { fingerprint: fp, record, sources: g.sources, score }
        })
        .collect();
    results.sort_by(|a, b| b.score.cmp(&a.score).then_with(|| a.fingerprint.cmp(&b.fingerprint)));
    results
}
