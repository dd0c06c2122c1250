//! Biomarker schema, patient records, synthetic generation, CSV I/O and the
//! preprocessing steps that turn records into token streams.

mod csv_io;
mod generate;
mod prep;
mod schema;

pub use csv_io::{load_csv, read_csv, save_csv, write_csv};
pub use generate::{generate_synthetic, GeneratorConfig};
pub use prep::{
    apply_normalizer, fit_normalizer, full_sequence, partition_halves, shuffle_order_augment, split_75_25,
    NormStats, NormalizedRecord, OrderedView, Token, TokenStreams, TOKEN_DIM, validate_permutation,
};
pub use schema::{
    BiomarkerDef, BiomarkerSchema, Category, Dataset, EyeValues, Label, ParentClass,
    PatientRecord, Unit, NUM_BIOMARKERS, NUM_PARENT_CLASSES,
};
