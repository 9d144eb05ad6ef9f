//! Dataset construction: grid-stack files, daily-to-monthly aggregation,
//! training-split normalization, context windows, and a synthetic generator
//! with known ground-truth dependence for desk-scale testing.

pub mod aggregate;
mod dataset;
mod error;
pub mod format;
pub mod months;
pub mod stats;
pub mod synth;

pub use dataset::{ClimateDataset, NormStats, Split, Splits, INDEX_NAME};
pub use error::{DataError, Result};
pub use format::GridStack;
pub use months::MonthStamp;
pub use synth::{synthesize_dataset, SynthSpec};
