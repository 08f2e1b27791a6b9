//! Ingestion, cleaning, protocol splitting and synthetic data.

mod cache;
mod preprocess;
mod schema;
mod split;
mod synth;
mod table;

pub use cache::{read_cache, write_cache, CACHE_VERSION};
pub use preprocess::{preprocess, to_raw, Dataset, PreprocessReport};
pub use schema::{ColumnKind, ColumnSpec, Schema, SCHEMA_VERSION};
pub use split::{protocol_split, subsample, MinMaxScaler, Split};
pub use synth::{synth_generate, SYNTH_MIN_WIDTH};
pub use table::{load_csv, read_csv, ColumnData, RawColumn, RawTable, RejectReport};
