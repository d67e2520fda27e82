//! Activation interchange format, sample metadata, splitting and balance checks.

mod activation;
mod manifest;
mod record;
mod split;

pub use activation::{ActivationMatrix, LabeledSamples, Scope, SliceKey, Stream};
pub use manifest::{
    load_dataset, read_manifest, read_records, write_dataset, write_records, Dataset,
    DatasetManifest, ManifestEntry, ModelDescriptor, Pooling, RowQuery, Slice, SCHEMA_VERSION,
};
pub use record::{SampleRecord, Split, POSITION_SEPARATOR};
pub use split::{
    assign_splits, check_balance, split_counts, BalanceEntry, BalanceReport,
    DEFAULT_BALANCE_TOLERANCE, MIN_GROUPS_PER_TASK,
};
