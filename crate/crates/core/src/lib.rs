//! Storage-aware hierarchical index toolkit.
//!
//! Given a sorted key-value dataset and a storage device profile (round-trip
//! latency plus bandwidth), this crate searches for the index structure
//! (layer count, per-layer regressor family, per-layer precision) that
//! minimizes the modeled end-to-end point-lookup time, then persists the
//! chosen structure and serves lookups and range scans against it through a
//! range-readable store.
//!
//! Module map:
//! - [`storage`]: device profiles, the transfer cost function, byte stores.
//! - [`regressor`]: layer fitting, fetch bounds, range prediction.
//! - [`optimizer`]: the lookup-time objective and the structure search.
//! - [`format`]: the on-disk index layout and dataset ingestion.
//! - [`engine`]: point lookup and range scan over a persisted index.

pub mod engine;
pub mod error;
pub mod format;
pub mod optimizer;
pub mod regressor;
pub mod storage;

pub use error::{Error, Result};
