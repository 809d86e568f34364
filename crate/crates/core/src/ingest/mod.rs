//! Raw records to fixed-width feature vectors.

pub mod encode;
pub mod flatten;
pub mod reindex;
pub mod schema;
pub mod store;

pub use encode::{encode_row, FeatureVector, MISSING};
pub use flatten::{flatten_record, flatten_value, FlatRow, Leaf};
pub use reindex::{reindex_day, reindex_rows};
pub use schema::{build_schema, SchemaBuilder, SchemaHints, SchemaManifest, Variable, VariableKind};
pub use store::{prepare_day, EncodedDay};
