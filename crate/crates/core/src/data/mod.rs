//! Interaction ingestion, filtering, dense id assignment and splitting.

mod bundle;
mod ingest;
mod preprocess;
mod split;
pub mod synthetic;

pub use bundle::{read_bundle, read_meta, write_bundle, BundleMeta, BUNDLE_VERSION};
pub use ingest::{ingest, ingest_reader, InputFormat, Interner, RawEvent, RawEvents};
pub use preprocess::{
    preprocess, Catalog, DatasetStats, FilterMode, InteractionLog, PreprocessConfig,
};
pub use split::{split, Partition, SplitDataset, UserHistory};

/// Dense item id; `1..=item_count`, with [`PAD`] reserved.
pub type ItemId = u32;

/// Padding id, never a real item.
pub const PAD: ItemId = 0;
