//! File formats: binary matrix container, PLY point clouds, bone sequences,
//! run configuration and frame export.

mod bones;
mod cloud;
mod config;
mod container;
mod export;
mod features;
mod ply;

pub use bones::{decode_bone_sequence, encode_bone_sequence, parse_bone_sequence, write_bone_sequence, QUATERNION_TOLERANCE};
pub use cloud::{parse_point_cloud, write_point_cloud, PointCloud};
pub use config::{
    AblationOptions, CoverageMode, InputPaths, MatchingOptions, OptimizerOptions, OutputOptions, RunConfig, SimOptions,
};
pub use container::{read_matrix, write_matrix, Precision, RawMatrix, HEADER_LEN, MAGIC};
pub use export::{export_frames, import_frames, read_manifest, FrameFormat, FrameManifest, MANIFEST};
pub use features::{field_from_matrix, field_to_matrix, read_features, read_field, write_features, write_field};
pub use ply::{read_ply, write_ply};
