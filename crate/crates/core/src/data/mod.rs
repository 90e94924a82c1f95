//! Recordings, labels, file I/O, fold splitting, and synthetic data.

pub mod folds;
pub mod recording;
pub mod ssef;
pub mod stage;
pub mod synth;

pub use folds::{split_folds, FoldSplit};
pub use recording::{ChunkSet, Recording, RhythmSpan};
pub use ssef::{read_ssef, sidecar_path, write_ssef};
pub use stage::{map_stages, Label, LabelScheme, SleepStage, N_CLASSES};
pub use synth::{generate_synthetic, SyntheticSpec};
