//! The single search interface: provider registry, broadcast search over
//! providers and the union index, and result consolidation.

pub mod broadcast;
pub mod gateway;
pub mod http;
pub mod merge;
pub mod registry;

pub use broadcast::{broadcast, Deadlines, OutcomeStatus, ProviderOutcome, SearchTarget};
pub use http::GatewayServer;
pub use gateway::{Gateway, GatewayConfig, UnifiedResponse};
pub use merge::{merge, MergedResult, Source};
pub use registry::{Registry, RegistryError};
