//! Instruction samples, the on-disk manifest, part annotation and projection,
//! instruction generation, and the synthetic scene generator.

pub mod annotation;
pub mod catalog;
pub mod graspnet;
pub mod instructions;
pub mod manifest;
pub mod sample;
pub mod scene;
pub mod synthetic;

use std::path::PathBuf;

use thiserror::Error;

use crate::geometry::GeometryError;

pub use annotation::{
    assign_grasps_to_parts, project_grasp_to_rect, project_part_to_mask, CameraView, Grasp6D,
    MaskProjection, PartAnnotation,
};
pub use instructions::{
    generate_instructions, GeneratedInstruction, GenerationOutput, InstructionForm, OpenAiClient,
    TemplateBank, TextGenerator,
};
pub use manifest::{load_generic, load_samples, scene_split, GenericSample, Split};
pub use sample::{mentions, InstructionKind, InstructionSample, Provenance, TargetLevel};
pub use scene::{SceneObject, SceneSpec};
pub use synthetic::{build_synthetic_dataset, SyntheticConfig};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error("missing image file {0}")]
    MissingImage(PathBuf),
    #[error("invalid sample {id}: {message}")]
    InvalidSample { id: String, message: String },
    #[error("could not place all objects in scene {scene_index} after the attempt limit")]
    InfeasiblePacking { scene_index: usize },
    #[error("part list is empty")]
    NoParts,
    #[error("part {0} has no points")]
    EmptyPart(usize),
    #[error("invalid camera view: {0}")]
    InvalidView(String),
    #[error("grasp center lies behind the camera")]
    BehindCamera,
    #[error("invalid config: {0}")]
    Config(String),
    #[error("text generation failed: {0}")]
    Generation(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

impl DatasetError {
    pub(crate) fn io(path: impl Into<PathBuf>, err: impl std::fmt::Display) -> Self {
        DatasetError::Io {
            path: path.into(),
            message: err.to_string(),
        }
    }
}
