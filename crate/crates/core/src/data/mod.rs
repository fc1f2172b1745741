//! Annotations, augmentation, splits and dataset IO.

pub mod annotation;
pub mod augment;
pub mod dataset;
pub mod split;

pub use annotation::{
    filter_dataset, filter_documents, parse_annotation, ConeAnnotation, DropTally, ImageBounds, KeypointRemap,
};
pub use augment::{random_boundary_crop, rotate_augment, BoundaryCrop, Rotation};
pub use dataset::{
    decode_sample, image_id, load_split, read_manifest, to_training_sample, write_atomic, write_crop_dataset, Sample,
    TrainingSample,
};
pub use split::{split_dataset, DatasetItem, DatasetManifest, Split};
