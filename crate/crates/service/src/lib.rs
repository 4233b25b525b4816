//! HTTP service over convlens sessions: upload an export, poll the
//! structuring job, query the structured state, and author compositions.

pub mod api;
pub mod config;
pub mod error;
pub mod store;

pub use api::router;
pub use config::{BackendMode, RunnerMode, ServiceConfig};
pub use error::ApiError;
pub use store::{SessionMeta, Status, Store};
