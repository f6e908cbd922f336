//! Synthetic MODIS-like land-cover data: seasonal class templates, scene
//! generation, the 5x5 homogeneity filter, patch sampling and the on-disk
//! dataset format.

pub mod classes;
pub mod error;
pub mod filter;
pub mod patches;
pub mod scene;
pub mod store;

pub use classes::{class_by_id, roster, ClassSpec, BANDS};
pub use error::{DataError, Result};
pub use filter::homogeneity_filter;
pub use patches::{extract_patches, PatchDataset, PatchSet, Split, SplitCounts, PATCH};
pub use scene::{generate_scene, SceneConfig, SceneCube};
pub use store::{read_dataset, write_dataset, DatasetManifest, DatasetSpec};
