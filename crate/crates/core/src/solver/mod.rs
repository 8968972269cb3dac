//! Adam, the per-image encoder loop (one attribute group optimized at a
//! time, the rest frozen) and the dataset-level prototype loop.

mod adam;
mod attribute;
mod dataset;
mod prototype;
mod state;


use thiserror::Error;

use crate::grad::GradError;
use crate::mesh::MeshError;
use crate::objective::ObjectiveError;
use crate::render::RenderError;

pub use adam::{adam_step, AdamConfig, AdamMoments, StepOutcome};
pub use attribute::{
    attribute_loop, current_atlas, evaluate, render_state, GroupRates, GroupSteps, PhaseEvent, PrototypeContext,
    RenderSettingsDef, Sample, Schedule, SolverConfig,
};
pub use dataset::{fit_dataset, mean_vertex_norm, ConvergenceRow, DatasetConfig, DatasetFit, ImageFailure};
pub use prototype::{prototype_update, prototype_update_masked, PrototypeParams, UpdateStats};
pub use state::{Group, GroupMoments, ReconState, TextureMode, TextureParams};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("parameter block has {params} entries but gradient has {grads}")]
    ShapeMismatch { params: usize, grads: usize },
    #[error("learning rate must be positive, got {0}")]
    LearningRate(f64),
    #[error("loss became non-finite ({value}) while optimizing `{group}` at step {step}")]
    NonFiniteLoss { group: state::Group, step: usize, value: f64 },
    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error("image is {}x{} but the solver expects {}x{}", got.0, got.1, expected.0, expected.1)]
    Resolution { expected: (usize, usize), got: (usize, usize) },
    #[error("expected {expected} vertex offsets, got {got}")]
    VertexCount { expected: usize, got: usize },
    #[error("{samples} samples but {states} initial states")]
    StateCount { samples: usize, states: usize },
    #[error("no images to fit")]
    NoImages,
    #[error("every image failed in epoch {epoch}")]
    AllFailed { epoch: usize },
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Grad(#[from] GradError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
}
