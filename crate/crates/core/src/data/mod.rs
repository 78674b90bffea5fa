//! Feature files, annotations and synthetic datasets.

mod annotations;
mod synthetic;
mod tdf;

pub use annotations::{read_annotations, write_annotations, AnnotationSet, VideoAnnotation};
pub use synthetic::{generate_synthetic, SyntheticDataset, SyntheticSpec};
pub use tdf::{
    decode_feature_file, encode_feature_file, read_feature_file, write_feature_file,
    FeatureFileError, FORMAT_VERSION, MAGIC,
};
