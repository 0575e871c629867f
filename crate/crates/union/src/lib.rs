//! The union metadata index and the harvester that fills it.

pub mod harvester;
pub mod http;
pub mod index;
pub mod job;

pub use harvester::{Harvester, HarvestTransport, HttpTransport, RetryPolicy, StartError};
pub use index::{ApplyOutcome, IndexOptions, IndexedEntry, UnionHit, UnionIndex};
pub use job::{HarvestJob, JobCounts, JobKind, JobState, Mode, ProviderDescriptor};
