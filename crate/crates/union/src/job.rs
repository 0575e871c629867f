use std::collections::BTreeSet;

use bdl_core::harvest::Datestamp;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Harvest,
    Search,
}

fn default_poll_interval() -> u64 {
    3600
}

/// A registered data provider.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ProviderDescriptor {
    pub provider_id: String,
    pub base_url: String,
    pub modes: BTreeSet<Mode>,
    /// Seconds between scheduled incremental harvests.
    #[serde(default = "default_poll_interval")]
    pub poll_interval: u64,
}

impl ProviderDescriptor {
    pub fn new(provider_id: impl Into<String>, base_url: impl Into<String>, modes: &[Mode]) -> Self {
        ProviderDescriptor {
            provider_id: provider_id.into(),
            base_url: base_url.into(),
            modes: modes.iter().copied().collect(),
            poll_interval: default_poll_interval(),
        }
    }

    pub fn has_mode(&self, mode: Mode) -> bool {
        self.modes.contains(&mode)
    }

    /// Checks the descriptor's own invariants.
    pub fn check(&self) -> Result<(), String> {
        if !bdl_core::dc::is_valid_token(&self.provider_id) {
            return Err(format!("providerId `{}` is not a token", self.provider_id));
        }
        if self.provider_id == "union" {
            return Err("providerId `union` is reserved".into());
        }
        if self.modes.is_empty() {
            return Err("modes must not be empty".into());
        }
        if self.poll_interval == 0 {
            return Err("pollInterval must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JobKind {
    Full,
    Incremental,
    FileIngest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Queued,
    Running,
    Succeeded,
    Failed,
}

impl JobState {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobState::Succeeded | JobState::Failed)
    }

    /// queued → running → succeeded | failed
    pub fn can_become(self, next: JobState) -> bool {
        matches!(
            (self, next),
            (JobState::Queued, JobState::Running) | (JobState::Running, JobState::Succeeded | JobState::Failed)
        )
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobCounts {
    pub fetched: u64,
    pub upserted: u64,
    pub deleted: u64,
    pub skipped: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct HarvestJob {
    pub job_id: u64,
    pub provider_id: String,
    pub kind: JobKind,
    pub state: JobState,
    pub counts: JobCounts,
    pub error_log: Vec<String>,
    pub created_at: Datestamp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished_at: Option<Datestamp>,
}

impl HarvestJob {
    pub fn new(job_id: u64, provider_id: impl Into<String>, kind: JobKind, now: Datestamp) -> Self {
        HarvestJob {
            job_id,
            provider_id: provider_id.into(),
            kind,
            state: JobState::Queued,
            counts: JobCounts::default(),
            error_log: Vec::new(),
            created_at: now,
            finished_at: None,
        }
    }

    /// Moves to `next`; panics on an illegal transition.
    pub fn transition(&mut self, next: JobState) {
        assert!(self.state.can_become(next), "illegal job transition {:?} -> {:?}", self.state, next);
        self.state = next;
    }
}
