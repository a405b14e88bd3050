//! Datasets, their on-disk format, missingness generation, splitting, and a
//! synthetic generator with known latent structure.

mod dataset;
mod io;
mod missing;
mod split;
mod synth;

pub use dataset::{MultiViewDataset, Split};
pub use io::{
    decode_matrix, encode_matrix, import_csv, load_dataset, parse_csv, read_matrix,
    write_dataset, write_matrix, Manifest, MANIFEST_NAME,
};
pub use missing::{apply_missingness, MissingnessSpec};
pub use split::{parse_ratios, split_dataset, DEFAULT_RATIOS};
pub use synth::{generate_synthetic, synthetic_view_dim, SyntheticData, SyntheticTruth};
