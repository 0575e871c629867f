//! A data-provider repository: author submission, document storage,
//! tombstoning, the harvest endpoint and local search.

pub mod config;
pub mod http;
pub mod store;

pub use config::RepositoryConfig;
pub use http::{router, ProviderServer, ProviderService};
pub use store::{Document, Repository, StoreError};
