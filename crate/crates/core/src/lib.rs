//! Single-image mesh reconstruction by analysis-by-synthesis: a reverse-mode
//! tape, an ellipsoid prototype mesh, a soft rasterizer with spherical
//! harmonics shading, the reconstruction losses, and a solver that optimizes
//! camera, shape, texture and light one group at a time.
//!
//! Everything is generic over the scalar type; the aliases below fix it to
//! `f64`, which is what the finite-difference checks assume.

pub mod grad;
pub mod real;
pub mod mesh;
pub mod camera;
pub mod appearance;
pub mod render;
pub mod objective;
pub mod solver;
pub mod gradcheck;

pub use real::Real;

pub type Tape = grad::Tape<f64>;
pub type Mesh = mesh::Mesh<f64>;
pub type CameraParams = camera::CameraParams<f64>;
pub type Intrinsics = camera::Intrinsics<f64>;
pub type ShLight = appearance::ShLight<f64>;
pub type TextureAtlas = appearance::TextureAtlas<f64>;
pub type TextureFlow = appearance::TextureFlow<f64>;
pub type RenderSettings = render::RenderSettings<f64>;
pub type Frame = render::Frame<f64>;
pub type LossWeights = objective::LossWeights<f64>;
pub type LossReport = objective::LossReport<f64>;
pub type Sample = solver::Sample<f64>;
pub type ReconState = solver::ReconState<f64>;
pub type SolverConfig = solver::SolverConfig<f64>;
pub type DatasetConfig = solver::DatasetConfig<f64>;
pub type DatasetFit = solver::DatasetFit<f64>;
pub type PrototypeContext = solver::PrototypeContext<f64>;
