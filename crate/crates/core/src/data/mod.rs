//! Tabular ingestion: schema, per-field index encoding, splits and batches.

mod batch;
mod encode;
mod schema;
mod split;
pub mod synth;

pub use batch::{Batch, BatchIterator};
pub use encode::{bucketize, EncodedExample, Encoder};
pub use schema::{FeatureSchema, FieldDescriptor, FieldKind, Task};
pub use split::{split_dataset, DatasetSplits};
