use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub const DEFAULT_MAX_DOCUMENT_BYTES: usize = 64 * 1024 * 1024;

fn default_listen() -> String {
    "127.0.0.1:8081".into()
}
fn default_page_size() -> usize {
    bdl_core::harvest::DEFAULT_PAGE_SIZE
}
fn default_max_document() -> usize {
    DEFAULT_MAX_DOCUMENT_BYTES
}
fn default_snapshot_every() -> usize {
    1000
}
fn yes() -> bool {
    true
}

/// Repository configuration, read from a TOML file.
///
/// ```toml
/// repositoryId = "rep1"
/// displayName = "Repositório Um"
/// adminContact = "admin@rep1.example"
/// listenAddress = "127.0.0.1:8081"
/// dataDir = "/var/lib/rep1"
/// ```
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct RepositoryConfig {
    pub repository_id: String,
    pub display_name: String,
    pub admin_contact: String,
    #[serde(default = "default_listen")]
    pub listen_address: String,
    #[serde(default = "default_page_size")]
    pub page_size: usize,
    pub data_dir: PathBuf,
    #[serde(default = "default_max_document")]
    pub max_document_bytes: usize,
    #[serde(default = "default_snapshot_every")]
    pub snapshot_every: usize,
    /// fsync the operations log after every write.
    #[serde(default = "yes")]
    pub sync_writes: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("invalid configuration: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

impl RepositoryConfig {
    pub fn new(repository_id: impl Into<String>, data_dir: impl Into<PathBuf>) -> Self {
        let repository_id = repository_id.into();
        RepositoryConfig {
            display_name: repository_id.clone(),
            admin_contact: format!("admin@{repository_id}.invalid"),
            repository_id,
            listen_address: default_listen(),
            page_size: default_page_size(),
            data_dir: data_dir.into(),
            max_document_bytes: DEFAULT_MAX_DOCUMENT_BYTES,
            snapshot_every: default_snapshot_every(),
            sync_writes: true,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: RepositoryConfig = toml::from_str(text)?;
        config.check()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Read { path: path.display().to_string(), source })?;
        Self::from_toml(&text)
    }

    pub fn check(&self) -> Result<(), ConfigError> {
        if !bdl_core::dc::is_valid_token(&self.repository_id) {
            return Err(ConfigError::Invalid(format!("repositoryId `{}` is not a token", self.repository_id)));
        }
        if self.page_size == 0 {
            return Err(ConfigError::Invalid("pageSize must be at least 1".into()));
        }
        Ok(())
    }
}
