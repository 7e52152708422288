//! Command-line tool and HTTP service over `bbs-core`.

pub mod error;
pub mod jobs;
pub mod ops;
pub mod server;

pub use error::ApiError;
