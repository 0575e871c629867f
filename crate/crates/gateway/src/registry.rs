//! The provider registry, persisted as a JSON document.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use bdl_union::ProviderDescriptor;
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

#[derive(Debug, Default, Serialize, Deserialize)]
struct RegistryDoc {
    providers: Vec<ProviderDescriptor>,
}

#[derive(Debug, thiserror::Error)]
pub enum RegistryError {
    #[error("provider `{0}` is already registered")]
    Duplicate(String),
    #[error("no provider `{0}`")]
    Unknown(String),
    #[error("invalid descriptor: {0}")]
    Invalid(String),
    #[error("registry file {path}: {message}")]
    Storage { path: String, message: String },
}

/// Ordered provider descriptors. Readers take cheap snapshots; mutations
/// are serialized and rewrite the file atomically before becoming visible.
pub struct Registry {
    path: Option<PathBuf>,
    write: Mutex<()>,
    current: RwLock<Arc<Vec<ProviderDescriptor>>>,
}

impl Registry {
    pub fn in_memory() -> Self {
        Registry { path: None, write: Mutex::new(()), current: RwLock::new(Arc::new(Vec::new())) }
    }

    /// Loads the registry file; a missing file is an empty registry.
    pub fn load(path: impl Into<PathBuf>) -> Result<Self, RegistryError> {
        let path = path.into();
        let storage = |message: String| RegistryError::Storage { path: path.display().to_string(), message };
        let doc: RegistryDoc = match std::fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes).map_err(|e| storage(e.to_string()))?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => RegistryDoc::default(),
            Err(e) => return Err(storage(e.to_string())),
        };
        let mut seen = std::collections::HashSet::new();
        for d in &doc.providers {
            d.check().map_err(RegistryError::Invalid)?;
            if !seen.insert(d.provider_id.as_str()) {
                return Err(RegistryError::Duplicate(d.provider_id.clone()));
            }
        }
        Ok(Registry { path: Some(path), write: Mutex::new(()), current: RwLock::new(Arc::new(doc.providers)) })
    }

    pub fn list(&self) -> Arc<Vec<ProviderDescriptor>> {
        self.current.read().clone()
    }

    pub fn get(&self, provider_id: &str) -> Option<ProviderDescriptor> {
        self.list().iter().find(|d| d.provider_id == provider_id).cloned()
    }

    pub fn add(&self, descriptor: ProviderDescriptor) -> Result<Arc<Vec<ProviderDescriptor>>, RegistryError> {
        descriptor.check().map_err(RegistryError::Invalid)?;
        let _guard = self.write.lock();
        let mut next = (*self.list()).clone();
        if next.iter().any(|d| d.provider_id == descriptor.provider_id) {
            return Err(RegistryError::Duplicate(descriptor.provider_id));
        }
        next.push(descriptor);
        self.publish(next)
    }

    pub fn remove(&self, provider_id: &str) -> Result<Arc<Vec<ProviderDescriptor>>, RegistryError> {
        let _guard = self.write.lock();
        let mut next = (*self.list()).clone();
        let before = next.len();
        next.retain(|d| d.provider_id != provider_id);
        if next.len() == before {
            return Err(RegistryError::Unknown(provider_id.to_string()));
        }
        self.publish(next)
    }

    fn publish(&self, next: Vec<ProviderDescriptor>) -> Result<Arc<Vec<ProviderDescriptor>>, RegistryError> {
        if let Some(path) = &self.path {
            write_atomically(path, &RegistryDoc { providers: next.clone() }).map_err(|e| RegistryError::Storage {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
        }
        let next = Arc::new(next);
        *self.current.write() = next.clone();
        Ok(next)
    }
}

fn write_atomically(path: &Path, doc: &RegistryDoc) -> std::io::Result<()> {
    use std::io::Write;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        serde_json::to_writer_pretty(&mut f, doc)?;
        f.write_all(b"\n")?;
        f.sync_all()?;
    }
    std::fs::rename(tmp, path)
}
