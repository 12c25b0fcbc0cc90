//! Preprocessing (normalize → equalize → resize), label binarization,
//! training-time augmentation, synthetic cohort generation with planted
//! per-label texture signals, patient-wise splitting, and dataset I/O.

mod augment;
mod cohort;
mod image;
mod io;
mod labels;

use thiserror::Error;

pub use augment::{augment, MAX_ROTATION_DEG};
pub use cohort::{generate_cohort, split_patientwise, Cohort, CohortSpec, SplitIndices, Study};
pub use image::{
    equalize_histogram, flip_horizontal, ks_to_uniform, normalize_image, resize, rotate_image,
    GrayImage, PixelGrid,
};
pub use io::{
    load_cohort, read_pgm, save_cohort, write_pgm, METADATA_FILENAME, METADATA_HEADER,
};
pub use labels::{
    binarize_labels, AgeBin, BinaryLabelVector, CardiomegalyGrade, Sex, SeverityGrade,
    StudyGrades, SubgroupKey, LABEL_NAMES,
};

/// Failure modes of dataset construction and I/O.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid cohort spec: {0}")]
    InvalidSpec(String),
    #[error("unknown grade {value:?} for label {label}")]
    UnknownGrade { label: String, value: String },
    #[error("unknown sex {0:?}")]
    UnknownSex(String),
    #[error("age {0} outside the supported range [0, 100)")]
    InvalidAge(u32),
    #[error("metadata header mismatch: found {found:?}")]
    HeaderMismatch { found: String },
    #[error("malformed PGM: {0}")]
    MalformedPgm(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
