//! Files in and out: images, the generated corpus, run configuration.

pub mod config;
pub mod dataset;
pub mod image;

pub use config::{read_sidecar, sidecar_path, write_sidecar, PathsConfig, RunConfig, RunMeta, SanityConfig, CONFIG_SCHEMA, TOOL_VERSION};
pub use dataset::{generate_dataset, render_scene, BoundingBox, Dataset, DatasetConfig, DatasetSummary, LabeledImage, Scene, BACKGROUNDS, SHAPES, SPLITS};
pub use image::{load_image, normalize, preprocess, resize_and_crop, read_map_csv, save_image, write_map_csv, write_map_png, PreprocessConfig};
