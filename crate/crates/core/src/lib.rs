//! Record model, query language, codecs and harvest protocol for a federated
//! digital-library gateway.

pub mod api;
pub mod clock;
pub mod codec;
pub mod corpus;
pub mod dc;
pub mod harvest;
pub mod journal;
pub mod query;
