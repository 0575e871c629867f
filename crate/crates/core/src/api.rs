//! JSON bodies of the `/search` endpoint shared by data providers, the union
//! index and the gateway's broadcast client.

use serde::{Deserialize, Serialize};

use crate::dc::MetadataRecord;
use crate::harvest::Datestamp;

fn default_max() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchRequest {
    pub query: String,
    #[serde(default)]
    pub start: usize,
    #[serde(default = "default_max")]
    pub max: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchHit {
    pub identifier: String,
    pub datestamp: Datestamp,
    pub metadata: MetadataRecord,
    /// Only the union index scores its hits.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchResponse {
    pub provider: String,
    pub total: usize,
    pub records: Vec<SearchHit>,
}

/// Error body for a rejected request. `offset` is set for query syntax errors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<usize>,
    /// Validator findings for a rejected record.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub violations: Vec<String>,
}

impl ErrorBody {
    pub fn new(error: impl Into<String>) -> Self {
        ErrorBody { error: error.into(), offset: None, violations: Vec::new() }
    }
}

impl From<&crate::query::SyntaxError> for ErrorBody {
    fn from(e: &crate::query::SyntaxError) -> Self {
        ErrorBody { error: e.to_string(), offset: Some(e.offset), violations: Vec::new() }
    }
}
