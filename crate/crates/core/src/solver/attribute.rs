use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, StepOutcome};
use super::state::{Group, ReconState, TextureParams};
use super::SolverError;
use crate::appearance::{flow_to_atlas, front_back_uv, TextureAtlas, TextureFlow};
use crate::camera::{CameraParams, Intrinsics};
use crate::grad::{GradError, Node, Tape};
use crate::mesh::{compose_shape, laplacian_coordinates_values, LaplacianStencil, Mesh};
use crate::objective::{
    loss_deform, loss_flatten, loss_img, loss_iou, loss_laplacian, loss_sym, total_loss, DeformNorm, LossNodes,
    LossReport, LossWeights,
};
use crate::real::Real;
use crate::render::{render, render_frame, Frame, RenderInputs, RenderSettings, Scene};

/// Image + foreground mask, both `height × width`, values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    pub id: String,
    pub width: usize,
    pub height: usize,
    /// `H×W×3`
    pub image: Vec<T>,
    /// `H×W`, binary
    pub mask: Vec<T>,
}

/// Per-group learning rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupRates<T> {
    pub camera: T,
    pub shape: T,
    pub texture: T,
    pub light: T,
}

impl<T: Copy> GroupRates<T> {
    pub fn get(&self, g: Group) -> T {
        match g {
            Group::Camera => self.camera,
            Group::Shape => self.shape,
            Group::Texture => self.texture,
            Group::Light => self.light,
        }
    }
}

impl<T: Real> Default for GroupRates<T> {
    fn default() -> Self {
        Self {
            camera: T::lit(1e-2),
            shape: T::lit(1e-2),
            texture: T::lit(5e-2),
            light: T::lit(1e-2),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule<T> {
    /// outer cycles over the group order per image
    pub cycles: usize,
    /// Adam steps per group per cycle
    pub steps: GroupSteps,
    pub order: Vec<Group>,
    pub rates: GroupRates<T>,
}

/// Inner Adam steps per group; zero skips a group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupSteps {
    pub camera: usize,
    pub shape: usize,
    pub texture: usize,
    pub light: usize,
}

impl GroupSteps {
    pub fn uniform(k: usize) -> Self {
        Self {
            camera: k,
            shape: k,
            texture: k,
            light: k,
        }
    }

    pub fn get(&self, g: Group) -> usize {
        match g {
            Group::Camera => self.camera,
            Group::Shape => self.shape,
            Group::Texture => self.texture,
            Group::Light => self.light,
        }
    }
}

impl<T: Real> Default for Schedule<T> {
    fn default() -> Self {
        Self {
            cycles: 4,
            steps: GroupSteps::uniform(20),
            order: Group::ALL.to_vec(),
            rates: GroupRates::default(),
        }
    }
}

impl<T> Schedule<T> {
    pub fn validate(&self) -> Result<(), SolverError> {
        let mut seen = [false; 4];
        for g in &self.order {
            let i = Group::ALL.iter().position(|x| x == g).unwrap_or(0);
            if seen[i] {
                return Err(SolverError::Schedule(format!("group `{g}` appears twice in the order")));
            }
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(SolverError::Schedule(
                "group order must be a permutation of camera, shape, texture, light".into(),
            ));
        }
        Ok(())
    }
}

/// Everything about one reconstruction except the per-image state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig<T> {
    pub intrinsics: Intrinsics<T>,
    pub render: RenderSettingsDef<T>,
    pub weights: LossWeights<T>,
    pub deform_norm: DeformNorm,
    pub adam: AdamConfig<T>,
    pub schedule: Schedule<T>,
    pub texture_mode: super::state::TextureMode,
    pub init_camera: CameraParams<T>,
}

/// Serializable mirror of [`RenderSettings`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderSettingsDef<T> {
    pub sigma: T,
    pub cutoff: T,
}

impl<T: Copy> From<RenderSettingsDef<T>> for RenderSettings<T> {
    fn from(d: RenderSettingsDef<T>) -> Self {
        RenderSettings {
            sigma: d.sigma,
            cutoff: d.cutoff,
        }
    }
}

impl<T: Real> Default for RenderSettingsDef<T> {
    fn default() -> Self {
        let d = RenderSettings::<T>::default();
        Self {
            sigma: d.sigma,
            cutoff: d.cutoff,
        }
    }
}

impl<T: Real> SolverConfig<T> {
    pub fn new(intrinsics: Intrinsics<T>) -> Self {
        Self {
            intrinsics,
            render: RenderSettingsDef::default(),
            weights: LossWeights::default(),
            deform_norm: DeformNorm::default(),
            adam: AdamConfig::default(),
            schedule: Schedule::default(),
            texture_mode: Default::default(),
            init_camera: CameraParams::default(),
        }
    }

    /// Fresh state: zero offsets, DC light, mid-gray atlas or identity flow
    /// at the image resolution, camera from the config.
    pub fn initial_state(&self, vertex_count: usize) -> ReconState<T> {
        let (h, w) = (self.intrinsics.height, self.intrinsics.width);
        let texture = match self.texture_mode {
            super::state::TextureMode::Atlas => TextureParams::Atlas(TextureAtlas::uniform(2 * h, w, [T::lit(0.5); 3])),
            super::state::TextureMode::Flow => TextureParams::Flow(TextureFlow::identity(h, w)),
        };
        ReconState::new(self.init_camera, vertex_count, texture)
    }
}

/// Prototype mesh with the quantities derived from it that the losses need.
#[derive(Debug, Clone)]
pub struct PrototypeContext<T> {
    pub mesh: Mesh<T>,
    pub stencil: LaplacianStencil<T>,
    pub deltas: Vec<[T; 3]>,
    pub uv: Vec<[T; 2]>,
}

impl<T: Real> PrototypeContext<T> {
    /// uv comes from the chart of this mesh and stays fixed afterwards.
    pub fn new(mesh: Mesh<T>) -> Self {
        let uv = front_back_uv(mesh.vertices());
        Self::with_uv(mesh, uv)
    }

    pub fn with_uv(mesh: Mesh<T>, uv: Vec<[T; 2]>) -> Self {
        let stencil = mesh.laplacian_stencil();
        let deltas = laplacian_coordinates_values(mesh.vertices(), mesh.neighbors());
        Self { mesh, stencil, deltas, uv }
    }

    /// Same topology and uv with new prototype positions.
    pub fn moved(&self, vertices: Vec<[T; 3]>) -> Result<Self, SolverError> {
        let mesh = self.mesh.with_vertices(vertices)?;
        let deltas = laplacian_coordinates_values(mesh.vertices(), mesh.neighbors());
        Ok(Self {
            mesh,
            stencil: self.stencil.clone(),
            deltas,
            uv: self.uv.clone(),
        })
    }
}

/// Texels of the atlas the state currently renders with.
pub fn current_atlas<T: Real>(state: &ReconState<T>, sample: &Sample<T>) -> Result<TextureAtlas<T>, SolverError> {
    match &state.texture {
        TextureParams::Atlas(a) => Ok(a.clone()),
        TextureParams::Flow(f) => {
            let mut tape = Tape::new();
            let raw = tape.constant(f.raw.clone(), &[f.height, f.width, 2])?;
            let atlas = flow_to_atlas(&mut tape, raw, &sample.image, sample.height, sample.width)?;
            Ok(TextureAtlas {
                height: 2 * f.height,
                width: f.width,
                texels: tape.value(atlas).to_vec(),
            })
        }
    }
}

/// Forward render of `S̄ + ΔS` with the given atlas.
pub fn render_state<T: Real>(
    state: &ReconState<T>,
    atlas: &TextureAtlas<T>,
    proto: &PrototypeContext<T>,
    config: &SolverConfig<T>,
) -> Result<Frame<T>, SolverError> {
    let positions: Vec<[T; 3]> = proto
        .mesh
        .vertices()
        .iter()
        .zip(&state.offsets)
        .map(|(p, d)| [p[0] + d[0], p[1] + d[1], p[2] + d[2]])
        .collect();
    let scene = Scene {
        faces: proto.mesh.faces(),
        uv: &proto.uv,
        intrinsics: &config.intrinsics,
        settings: config.render.into(),
    };
    Ok(render_frame(
        &positions,
        &atlas.texels,
        [atlas.height, atlas.width],
        state.camera.to_vector(),
        state.light.coeffs,
        &scene,
    )?)
}

pub(crate) struct Built {
    pub total: Node,
    pub nodes: LossNodes,
    pub leaf: Option<Node>,
    pub degenerate: usize,
}

/// Records the render and all losses for one state. Only the `active`
/// group's leaf requires gradients.
pub(crate) fn build<T: Real>(
    tape: &mut Tape<T>,
    state: &ReconState<T>,
    sample: &Sample<T>,
    proto: &PrototypeContext<T>,
    config: &SolverConfig<T>,
    active: Option<Group>,
) -> Result<Built, SolverError> {
    let is = |g: Group| active == Some(g);
    let v = proto.mesh.vertex_count();
    let camera = tape.leaf(state.camera.to_vector().to_vec(), &[5], is(Group::Camera))?;
    let offsets = tape.leaf(state.offsets.iter().flatten().copied().collect(), &[v, 3], is(Group::Shape))?;
    let tex_leaf = tape.leaf(state.texture.values().to_vec(), &state.texture.leaf_shape(), is(Group::Texture))?;
    let texels = match &state.texture {
        TextureParams::Atlas(_) => tex_leaf,
        TextureParams::Flow(_) => flow_to_atlas(tape, tex_leaf, &sample.image, sample.height, sample.width)?,
    };
    let light = tape.leaf(state.light.coeffs.to_vec(), &[9], is(Group::Light))?;
    let positions = compose_shape(tape, proto.mesh.vertices(), offsets)?;

    let scene = Scene {
        faces: proto.mesh.faces(),
        uv: &proto.uv,
        intrinsics: &config.intrinsics,
        settings: config.render.into(),
    };
    let out = render(
        tape,
        RenderInputs {
            positions,
            texels,
            camera,
            light,
        },
        &scene,
    )?;
    let img = loss_img(tape, &sample.image, &sample.mask, out.image, out.mask)?;
    let (iou, _) = loss_iou(tape, &sample.mask, out.mask)?;
    let lpl = loss_laplacian(tape, positions, &proto.stencil, &proto.deltas)?;
    let (flat, _) = loss_flatten(tape, positions, proto.mesh.faces(), proto.mesh.face_pairs())?;
    let sym = loss_sym(tape, positions, proto.mesh.mirror_pairs())?;
    let deform = loss_deform(tape, offsets, config.deform_norm)?;
    let nodes = LossNodes {
        img,
        iou,
        lpl,
        flat,
        sym,
        deform,
    };
    let total = nodes.combine(tape, &config.weights)?;
    let leaf = active.map(|g| match g {
        Group::Camera => camera,
        Group::Shape => offsets,
        Group::Texture => tex_leaf,
        Group::Light => light,
    });
    let degenerate = out.degenerate_faces;
    Ok(Built {
        total,
        nodes,
        leaf,
        degenerate,
    })
}

/// Loss report for the current state without taking a step.
pub fn evaluate<T: Real>(
    state: &ReconState<T>,
    sample: &Sample<T>,
    proto: &PrototypeContext<T>,
    config: &SolverConfig<T>,
    step: usize,
) -> Result<LossReport<T>, SolverError> {
    let mut tape = Tape::new();
    let b = build(&mut tape, state, sample, proto, config, None)?;
    Ok(total_loss(&b.nodes.components(&tape), &config.weights, step, b.degenerate)?)
}

fn write_back<T: Real>(state: &mut ReconState<T>, g: Group, values: Vec<T>) {
    match g {
        Group::Camera => {
            let v = [values[0], values[1], values[2], values[3], values[4]];
            state.camera = CameraParams::from_vector(v).reprojected();
        }
        Group::Shape => {
            for (row, c) in state.offsets.iter_mut().zip(values.chunks(3)) {
                *row = [c[0], c[1], c[2]];
            }
        }
        Group::Texture => {
            let is_atlas = matches!(state.texture, TextureParams::Atlas(_));
            let dst = state.texture.values_mut();
            dst.copy_from_slice(&values);
            if is_atlas {
                for t in dst {
                    *t = t.max(T::zero()).min(T::one());
                }
            }
        }
        Group::Light => state.light.coeffs.copy_from_slice(&values),
    }
}

fn current_values<T: Real>(state: &ReconState<T>, g: Group) -> Vec<T> {
    match g {
        Group::Camera => state.camera.to_vector().to_vec(),
        Group::Shape => state.offsets.iter().flatten().copied().collect(),
        Group::Texture => state.texture.values().to_vec(),
        Group::Light => state.light.coeffs.to_vec(),
    }
}

/// Called after each group phase with the states before and after it.
pub struct PhaseEvent<'a, T> {
    pub cycle: usize,
    pub group: Group,
    pub before: &'a ReconState<T>,
    pub after: &'a ReconState<T>,
}

/// The Encoder Loop: for each cycle and each group in order, only that
/// group requires gradients while `k` Adam steps run; the other groups stay
/// untouched. One loss report is recorded per cycle.
pub fn attribute_loop<T: Real>(
    state: &mut ReconState<T>,
    sample: &Sample<T>,
    proto: &PrototypeContext<T>,
    config: &SolverConfig<T>,
    mut observer: Option<&mut dyn FnMut(&PhaseEvent<'_, T>)>,
) -> Result<Vec<LossReport<T>>, SolverError> {
    config.schedule.validate()?;
    if sample.width != config.intrinsics.width || sample.height != config.intrinsics.height {
        return Err(SolverError::Resolution {
            expected: (config.intrinsics.width, config.intrinsics.height),
            got: (sample.width, sample.height),
        });
    }
    if state.offsets.len() != proto.mesh.vertex_count() {
        return Err(SolverError::VertexCount {
            expected: proto.mesh.vertex_count(),
            got: state.offsets.len(),
        });
    }
    let mut reports = Vec::with_capacity(config.schedule.cycles);
    let mut step = 0usize;
    for cycle in 0..config.schedule.cycles {
        for &group in &config.schedule.order {
            let before = observer.as_ref().map(|_| state.clone());
            let k = config.schedule.steps.get(group);
            for _ in 0..k {
                let mut tape = Tape::new();
                let b = match build(&mut tape, state, sample, proto, config, Some(group)) {
                    Err(SolverError::Grad(GradError::NonFinite { .. })) => {
                        return Err(SolverError::NonFiniteLoss {
                            group,
                            step,
                            value: f64::NAN,
                        })
                    }
                    other => other?,
                };
                let loss = tape.scalar_value(b.total);
                if !loss.is_finite() {
                    return Err(SolverError::NonFiniteLoss {
                        group,
                        step,
                        value: loss.to_f64_lossy(),
                    });
                }
                let leaf = b.leaf.expect("active group has a leaf");
                let grads = tape.backward(b.total)?;
                let mut values = current_values(state, group);
                let g = grads.get_or_zeros(leaf, values.len());
                let outcome = adam_step(
                    &mut values,
                    &g,
                    state.moments.get_mut(group),
                    config.schedule.rates.get(group),
                    &config.adam,
                )?;
                match outcome {
                    StepOutcome::Applied => write_back(state, group, values),
                    StepOutcome::Skipped => state.skipped_steps += 1,
                }
                step += 1;
            }
            if let (Some(obs), Some(before)) = (observer.as_mut(), before.as_ref()) {
                obs(&PhaseEvent {
                    cycle,
                    group,
                    before,
                    after: state,
                });
            }
        }
        let report = evaluate(state, sample, proto, config, step)?;
        reports.push(report);
    }
    Ok(reports)
}
