//! Inequality suites over Cantor fixtures, their reports, and the pieces of
//! the `nhcz` command line tool.

pub mod config;
pub mod instance;
pub mod report;
pub mod stability;
pub mod suite;
pub mod trends;

pub use config::SuiteConfig;
pub use report::{CheckReport, SuiteReport};
pub use suite::run_suite;
