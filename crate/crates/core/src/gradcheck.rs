//! Finite-difference suite over the whole differentiable stack: tape
//! primitives, camera projection, appearance, losses and the full
//! render-through-loss pipeline. All checks run in `f64`.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::appearance::{flow_to_atlas, front_back_uv, sample_atlas, shade_rows, TextureFlow};
use crate::camera::{project, CameraParams, Intrinsics};
use crate::grad::{grad_check, CustomOp, GradError, GradResult, Node, Tape};
use crate::mesh::{compose_shape, icosahedron, laplacian_coordinates_values, make_ellipsoid, vertex_normals};
use crate::objective::{loss_deform, loss_flatten, loss_img, loss_iou, loss_laplacian, loss_sym, DeformNorm, LossNodes, LossWeights};
use crate::render::{render, RenderInputs, RenderSettings, Scene};

type F = f64;
type Builder = Arc<dyn Fn(&mut Tape<F>, Node) -> GradResult<Node> + Send + Sync>;

pub const PRIMITIVE_TOL: F = 1e-6;
pub const COMPOSITION_TOL: F = 1e-3;
pub const RENDER_TOL: F = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Component {
    Primitive,
    Camera,
    Appearance,
    Loss,
    Render,
}

impl Component {
    pub fn tolerance(self) -> F {
        match self {
            Component::Primitive => PRIMITIVE_TOL,
            Component::Camera | Component::Appearance | Component::Loss => COMPOSITION_TOL,
            Component::Render => RENDER_TOL,
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Component::Primitive => "primitives",
            Component::Camera => "camera",
            Component::Appearance => "appearance",
            Component::Loss => "losses",
            Component::Render => "render",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseResult {
    pub component: Component,
    pub name: String,
    pub max_rel_error: F,
    pub points: usize,
}

impl CaseResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.component.tolerance()
    }
}

#[derive(Debug, Clone, Default)]
pub struct GradcheckReport {
    pub cases: Vec<CaseResult>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        !self.cases.is_empty() && self.cases.iter().all(CaseResult::passed)
    }

    /// Worst error per component, in component order.
    pub fn by_component(&self) -> Vec<(Component, F, bool)> {
        let mut out: Vec<(Component, F, bool)> = Vec::new();
        for c in &self.cases {
            match out.iter_mut().find(|e| e.0 == c.component) {
                Some(e) => {
                    e.1 = e.1.max(c.max_rel_error);
                    e.2 &= c.passed();
                }
                None => out.push((c.component, c.max_rel_error, c.passed())),
            }
        }
        out.sort_by_key(|e| e.0);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SuiteOptions {
    pub seed: u64,
    /// random points per primitive
    pub points: usize,
    /// adds an op whose adjoint is wrong on purpose, to prove the harness
    /// can fail
    pub broken_fixture: bool,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            points: 100,
            broken_fixture: false,
        }
    }
}

/// Doubles its input but reports the adjoint of tripling.
struct BrokenDoubler;

impl CustomOp<F> for BrokenDoubler {
    fn name(&self) -> &str {
        "broken_doubler"
    }

    fn output_shape(&self, shapes: &[&[usize]]) -> GradResult<Vec<usize>> {
        Ok(shapes[0].to_vec())
    }

    fn forward(&self, inputs: &[&[F]]) -> Vec<F> {
        inputs[0].iter().map(|x| 2.0 * x).collect()
    }

    fn backward(&self, _inputs: &[&[F]], _output: &[F], grad_out: &[F]) -> Vec<Vec<F>> {
        vec![grad_out.iter().map(|g| 3.0 * g).collect()]
    }
}

fn ramp(tape: &mut Tape<F>, len: usize, seed: F) -> GradResult<Node> {
    tape.constant((0..len).map(|i| 0.3 + 0.17 * i as F + seed).collect(), &[len])
}

fn b(f: impl Fn(&mut Tape<F>, Node) -> GradResult<Node> + Send + Sync + 'static) -> Builder {
    Arc::new(f)
}

/// Each primitive as a scalar function of a 4-vector, with the sampling
/// range and the kink locations to stay clear of.
fn primitive_cases() -> Vec<(&'static str, Builder, (F, F), Vec<F>)> {
    let c: Vec<F> = (0..4).map(|i| 0.3 + 0.17 * i as F - 0.4).collect();
    vec![
        ("add", b(|t, x| { let c = ramp(t, 4, 0.1)?; let y = t.add(x, c)?; let y = t.square(y)?; t.sum(y) }), (-2.0, 2.0), vec![]),
        ("sub", b(|t, x| { let c = ramp(t, 4, 0.2)?; let y = t.sub(c, x)?; let y = t.square(y)?; t.sum(y) }), (-2.0, 2.0), vec![]),
        ("mul", b(|t, x| { let y = t.mul(x, x)?; let z = t.mul(y, x)?; t.sum(z) }), (-2.0, 2.0), vec![]),
        ("div", b(|t, x| { let c = ramp(t, 4, 0.0)?; let y = t.div(c, x)?; t.sum(y) }), (0.5, 2.0), vec![]),
        ("neg", b(|t, x| { let y = t.neg(x)?; let y = t.mul(y, x)?; t.sum(y) }), (-2.0, 2.0), vec![]),
        ("abs", b(|t, x| { let y = t.abs(x)?; let y = t.mul(y, x)?; t.sum(y) }), (0.2, 2.0), vec![]),
        ("sqrt", b(|t, x| { let y = t.sqrt(x)?; t.sum(y) }), (0.2, 3.0), vec![]),
        ("square", b(|t, x| { let y = t.square(x)?; t.sum(y) }), (-2.0, 2.0), vec![]),
        ("sin", b(|t, x| { let y = t.sin(x)?; t.sum(y) }), (-3.0, 3.0), vec![]),
        ("cos", b(|t, x| { let y = t.cos(x)?; t.sum(y) }), (-3.0, 3.0), vec![]),
        ("tanh", b(|t, x| { let y = t.tanh(x)?; t.sum(y) }), (-2.0, 2.0), vec![]),
        ("sigmoid", b(|t, x| { let y = t.sigmoid(x)?; t.sum(y) }), (-4.0, 4.0), vec![]),
        ("log_sigmoid", b(|t, x| { let y = t.log_sigmoid(x)?; t.sum(y) }), (-4.0, 4.0), vec![]),
        ("exp", b(|t, x| { let y = t.exp(x)?; t.sum(y) }), (-2.0, 2.0), vec![]),
        ("ln", b(|t, x| { let y = t.ln(x)?; t.sum(y) }), (0.3, 3.0), vec![]),
        ("clamp", b(|t, x| { let y = t.clamp(x, -0.5, 0.5)?; let y = t.square(y)?; t.sum(y) }), (-1.0, 1.0), vec![-0.5, 0.5]),
        ("min2", b(|t, x| { let c = ramp(t, 4, -0.4)?; let y = t.min2(x, c)?; let y = t.square(y)?; t.sum(y) }), (-2.0, 2.0), c.clone()),
        ("max2", b(|t, x| { let c = ramp(t, 4, -0.4)?; let y = t.max2(x, c)?; let y = t.square(y)?; t.sum(y) }), (-2.0, 2.0), c),
        ("scale", b(|t, x| { let y = t.scale(x, -1.7)?; let y = t.add_scalar(y, 0.3)?; let y = t.square(y)?; t.sum(y) }), (-2.0, 2.0), vec![]),
        ("mean", b(|t, x| { let y = t.square(x)?; t.mean(y) }), (-2.0, 2.0), vec![]),
        ("sum_axis", b(|t, x| { let y = t.reshape(x, &[2, 2])?; let s = t.sum_axis(y, 0, false)?; let s = t.square(s)?; t.sum(s) }), (-2.0, 2.0), vec![]),
        ("select", b(|t, x| { let y = t.select(x, 0, &[3, 0, 3, 1])?; let w = ramp(t, 4, 0.5)?; let y = t.mul(y, w)?; let y = t.square(y)?; t.sum(y) }), (-2.0, 2.0), vec![]),
        ("scatter_add", b(|t, x| { let y = t.scatter_add(x, &[1, 1, 0, 2], 3)?; let y = t.square(y)?; t.sum(y) }), (-2.0, 2.0), vec![]),
        ("concat", b(|t, x| { let y = t.concat(&[x, x], 0)?; let w = ramp(t, 8, 0.1)?; let y = t.mul(y, w)?; let y = t.square(y)?; t.sum(y) }), (-2.0, 2.0), vec![]),
        ("broadcast", b(|t, x| { let y = t.broadcast(x, &[3, 4])?; let w = ramp(t, 12, 0.1)?; let w = t.reshape(w, &[3, 4])?; let y = t.mul(y, w)?; let y = t.square(y)?; t.sum(y) }), (-2.0, 2.0), vec![]),
    ]
}

fn check(f: &Builder, x: &[F], shape: &[usize], step: F) -> GradResult<F> {
    let r = grad_check(|t, n| f(t, n), x, shape, step)?;
    Ok(r.max_rel_error)
}

fn push(report: &mut GradcheckReport, component: Component, name: &str, err: F, points: usize) {
    report.cases.push(CaseResult {
        component,
        name: name.to_string(),
        max_rel_error: err,
        points,
    });
}

fn primitives(report: &mut GradcheckReport, rng: &mut ChaCha8Rng, opts: &SuiteOptions) -> GradResult<()> {
    let mut cases = primitive_cases();
    if opts.broken_fixture {
        cases.push((
            "broken_doubler",
            b(|t, x| { let y = t.custom(&[x], Arc::new(BrokenDoubler))?; t.sum(y) }),
            (-1.0, 1.0),
            vec![],
        ));
    }
    for (name, f, (lo, hi), kinks) in cases {
        let mut worst: F = 0.0;
        let mut done = 0;
        while done < opts.points.max(1) {
            let x: Vec<F> = (0..4).map(|_| rng.gen_range(lo..hi)).collect();
            let near = x
                .iter()
                .enumerate()
                .any(|(i, v)| kinks.iter().any(|k| (v - k).abs() < 1e-3) || (name.ends_with('2') && (v - kinks[i]).abs() < 1e-3));
            if near {
                continue;
            }
            worst = worst.max(check(&f, &x, &[4], 1e-5)?);
            done += 1;
        }
        push(report, Component::Primitive, name, worst, done);
    }
    Ok(())
}

fn jitter(rng: &mut ChaCha8Rng, n: usize, lo: F, hi: F) -> Vec<F> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

fn camera_case(report: &mut GradcheckReport, rng: &mut ChaCha8Rng) -> GradResult<()> {
    let mesh = make_ellipsoid::<F>(1, [0.45, 0.95, 0.25]);
    let pos = mesh.flat_vertices();
    let v = mesh.vertex_count();
    let intr = Intrinsics::new(50.0, 16, 16).map_err(custom("camera"))?;
    let wx: Vec<F> = jitter(rng, v, -1.0, 1.0);
    let wy: Vec<F> = jitter(rng, v, -1.0, 1.0);
    let cam = CameraParams::new(2.4, 33.0, 14.0).to_vector();
    let mut c = cam;
    c[3] = 0.05;
    c[4] = -0.04;
    let f = b(move |t, camera| {
        let p = t.constant(pos.clone(), &[v, 3])?;
        let proj = project(t, p, camera, &intr)?;
        let a = t.constant(wx.clone(), &[v])?;
        let bb = t.constant(wy.clone(), &[v])?;
        let x = t.mul(proj.x, a)?;
        let y = t.mul(proj.y, bb)?;
        let x = t.square(x)?;
        let s = t.add(x, y)?;
        t.mean(s)
    });
    push(report, Component::Camera, "pixel loss / camera", check(&f, &c, &[5], 1e-5)?, 5);
    Ok(())
}

fn custom(name: &'static str) -> impl Fn(crate::camera::CameraError) -> GradError {
    move |e| GradError::Custom {
        name: name.to_string(),
        message: e.to_string(),
    }
}

fn unit_rows(rng: &mut ChaCha8Rng, n: usize) -> Vec<F> {
    let mut out = Vec::with_capacity(3 * n);
    for _ in 0..n {
        let r = jitter(rng, 3, -1.0, 1.0);
        let l = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt().max(0.2);
        out.extend(r.iter().map(|x| x / l));
    }
    out
}

fn appearance(report: &mut GradcheckReport, rng: &mut ChaCha8Rng) -> GradResult<()> {
    let n = 6;
    let normals = unit_rows(rng, n);
    let albedo = jitter(rng, 3 * n, 0.1, 0.9);
    // strong DC term keeps irradiance away from the clamp at zero
    let mut light = jitter(rng, 9, -0.3, 0.3);
    light[0] = 3.0;

    let (nn, ll) = (normals.clone(), light.clone());
    let f = b(move |t, a| {
        let nr = t.constant(nn.clone(), &[n, 3])?;
        let l = t.constant(ll.clone(), &[9])?;
        let s = shade_rows(t, a, nr, l)?;
        let s = t.square(s)?;
        t.sum(s)
    });
    push(report, Component::Appearance, "shade / albedo", check(&f, &albedo, &[n, 3], 1e-5)?, 3 * n);

    let (aa, ll) = (albedo.clone(), light.clone());
    let f = b(move |t, nr| {
        let a = t.constant(aa.clone(), &[n, 3])?;
        let l = t.constant(ll.clone(), &[9])?;
        let s = shade_rows(t, a, nr, l)?;
        let s = t.square(s)?;
        t.sum(s)
    });
    push(report, Component::Appearance, "shade / normals", check(&f, &normals, &[n, 3], 1e-5)?, 3 * n);

    let (aa, nn) = (albedo.clone(), normals.clone());
    let f = b(move |t, l| {
        let a = t.constant(aa.clone(), &[n, 3])?;
        let nr = t.constant(nn.clone(), &[n, 3])?;
        let s = shade_rows(t, a, nr, l)?;
        let s = t.square(s)?;
        t.sum(s)
    });
    push(report, Component::Appearance, "shade / light", check(&f, &light, &[9], 1e-5)?, 9);

    let (h, w) = (6, 5);
    let texels = jitter(rng, h * w * 3, 0.0, 1.0);
    // keep uv off texel boundaries where bilinear weights have kinks
    let uv: Vec<F> = (0..2 * n)
        .map(|i| {
            let size = if i % 2 == 0 { w } else { h } as F;
            let cell = rng.gen_range(0..(size as usize - 1)) as F;
            (cell + 0.5 + rng.gen_range(0.1..0.9)) / size
        })
        .collect();
    let (uu, vv): (Vec<F>, Vec<F>) = (uv.iter().step_by(2).copied().collect(), uv.iter().skip(1).step_by(2).copied().collect());
    let weights = jitter(rng, 3 * n, -1.0, 1.0);

    let (u2, v2, w2) = (uu.clone(), vv.clone(), weights.clone());
    let f = b(move |t, tx| {
        let u = t.constant(u2.clone(), &[n])?;
        let v = t.constant(v2.clone(), &[n])?;
        let s = sample_atlas(t, tx, u, v)?;
        let wt = t.constant(w2.clone(), &[n, 3])?;
        let s = t.mul(s, wt)?;
        let s = t.square(s)?;
        t.sum(s)
    });
    push(report, Component::Appearance, "atlas sample / texels", check(&f, &texels, &[h, w, 3], 1e-5)?, texels.len());

    let (t2, v2, w2) = (texels.clone(), vv.clone(), weights.clone());
    let f = b(move |t, u| {
        let tx = t.constant(t2.clone(), &[h, w, 3])?;
        let v = t.constant(v2.clone(), &[n])?;
        let s = sample_atlas(t, tx, u, v)?;
        let wt = t.constant(w2.clone(), &[n, 3])?;
        let s = t.mul(s, wt)?;
        let s = t.square(s)?;
        t.sum(s)
    });
    push(report, Component::Appearance, "atlas sample / uv", check(&f, &uu, &[n], 1e-6)?, n);

    let (fh, fw) = (3, 4);
    let source = jitter(rng, 7 * 6 * 3, 0.0, 1.0);
    let mut raw = TextureFlow::<F>::identity(fh, fw).raw;
    for r in raw.iter_mut() {
        *r += rng.gen_range(-0.05..0.05);
    }
    let wts = jitter(rng, 2 * fh * fw * 3, -1.0, 1.0);
    let f = b(move |t, flow| {
        let a = flow_to_atlas(t, flow, &source, 7, 6)?;
        let wt = t.constant(wts.clone(), &[2 * fh, fw, 3])?;
        let s = t.mul(a, wt)?;
        let s = t.square(s)?;
        t.sum(s)
    });
    push(report, Component::Appearance, "texture flow / raw flow", check(&f, &raw, &[fh, fw, 2], 1e-6)?, raw.len());
    Ok(())
}

fn losses(report: &mut GradcheckReport, rng: &mut ChaCha8Rng) -> GradResult<()> {
    let (h, w) = (5, 4);
    let target = jitter(rng, h * w * 3, 0.0, 1.0);
    let target_mask: Vec<F> = (0..h * w).map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).collect();
    let image = jitter(rng, h * w * 3, 0.0, 1.0);
    let mask = jitter(rng, h * w, 0.05, 0.95);

    let (tg, tm, m2) = (target.clone(), target_mask.clone(), mask.clone());
    let f = b(move |t, img| {
        let m = t.constant(m2.clone(), &[h, w])?;
        loss_img(t, &tg, &tm, img, m)
    });
    push(report, Component::Loss, "image / rendering", check(&f, &image, &[h, w, 3], 1e-5)?, image.len());

    let (tg, tm, i2) = (target.clone(), target_mask.clone(), image.clone());
    let f = b(move |t, m| {
        let img = t.constant(i2.clone(), &[h, w, 3])?;
        loss_img(t, &tg, &tm, img, m)
    });
    push(report, Component::Loss, "image / mask", check(&f, &mask, &[h, w], 1e-5)?, mask.len());

    let tm = target_mask.clone();
    let f = b(move |t, m| Ok(loss_iou(t, &tm, m)?.0));
    push(report, Component::Loss, "soft iou / mask", check(&f, &mask, &[h, w], 1e-5)?, mask.len());

    let mesh = make_ellipsoid::<F>(1, [0.45, 0.95, 0.25]);
    let v = mesh.vertex_count();
    let moved: Vec<F> = mesh
        .flat_vertices()
        .iter()
        .map(|x| x + rng.gen_range(-0.04..0.04))
        .collect();
    let stencil = mesh.laplacian_stencil();
    let deltas = laplacian_coordinates_values(mesh.vertices(), mesh.neighbors());
    let f = b(move |t, p| loss_laplacian(t, p, &stencil, &deltas));
    push(report, Component::Loss, "laplacian / positions", check(&f, &moved, &[v, 3], 1e-5)?, moved.len());

    let (faces, pairs) = (mesh.faces().to_vec(), mesh.face_pairs().to_vec());
    let f = b(move |t, p| Ok(loss_flatten(t, p, &faces, &pairs)?.0));
    push(report, Component::Loss, "flatten / positions", check(&f, &moved, &[v, 3], 1e-5)?, moved.len());

    // |z + z'| has a kink at zero; the jittered shape sits well away from it
    let mirror = mesh.mirror_pairs().to_vec();
    let f = b(move |t, p| loss_sym(t, p, &mirror));
    push(report, Component::Loss, "symmetry / positions", check(&f, &moved, &[v, 3], 1e-7)?, moved.len());

    let offsets = jitter(rng, v * 3, -0.1, 0.1);
    for (name, norm) in [("deform per-vertex / offsets", DeformNorm::PerVertex), ("deform global / offsets", DeformNorm::Global)] {
        let f = b(move |t, o| loss_deform(t, o, norm));
        push(report, Component::Loss, name, check(&f, &offsets, &[v, 3], 1e-6)?, offsets.len());
    }

    let base = mesh.vertices().to_vec();
    let faces = mesh.faces().to_vec();
    let f = b(move |t, o| {
        let p = compose_shape(t, &base, o).map_err(|e| GradError::Custom {
            name: "compose_shape".into(),
            message: e.to_string(),
        })?;
        let n = vertex_normals(t, p, &faces, v)?;
        let wt = t.constant((0..3 * v).map(|i| ((i * 5) % 7) as F / 7.0 - 0.4).collect(), &[v, 3])?;
        let s = t.mul(n, wt)?;
        t.sum(s)
    });
    push(report, Component::Loss, "vertex normals / offsets", check(&f, &offsets, &[v, 3], 1e-6)?, offsets.len());
    Ok(())
}

struct RenderFixture {
    positions: Vec<F>,
    faces: Vec<[usize; 3]>,
    uv: Vec<[F; 2]>,
    texels: Vec<F>,
    light: Vec<F>,
    camera: Vec<F>,
    target: Vec<F>,
    target_mask: Vec<F>,
    intrinsics: Intrinsics<F>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Wrt {
    Positions,
    Camera,
    Texels,
    Light,
}

impl RenderFixture {
    fn new(rng: &mut ChaCha8Rng) -> GradResult<Self> {
        let (verts, faces) = icosahedron::<F>();
        let uv = front_back_uv(&verts);
        let scale = 0.6 / (1.0 + 1.25f64).sqrt() * 1.2;
        let positions = verts.iter().flatten().map(|c| c * scale).collect();
        let intrinsics = Intrinsics::new(50.0, 16, 16).map_err(custom("render"))?;
        let target_mask = (0..256)
            .map(|i| {
                let (r, c) = ((i / 16) as F - 7.5, (i % 16) as F - 7.5);
                if r * r / 36.0 + c * c / 20.0 <= 1.0 {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        Ok(Self {
            positions,
            faces,
            uv,
            texels: jitter(rng, 4 * 4 * 3, 0.2, 0.8),
            light: vec![2.2, 0.3, 0.5, -0.2, 0.1, 0.05, 0.1, -0.1, 0.05],
            camera: CameraParams::new(2.5, 20.0, 10.0).to_vector().to_vec(),
            target: jitter(rng, 256 * 3, 0.0, 1.0),
            target_mask,
            intrinsics,
        })
    }

    fn loss(&self, t: &mut Tape<F>, x: Node, wrt: Wrt) -> GradResult<Node> {
        let mut leaf = |which: Wrt, values: &[F], shape: &[usize]| -> GradResult<Node> {
            if which == wrt {
                Ok(x)
            } else {
                t.constant(values.to_vec(), shape)
            }
        };
        let positions = leaf(Wrt::Positions, &self.positions, &[12, 3])?;
        let texels = leaf(Wrt::Texels, &self.texels, &[4, 4, 3])?;
        let camera = leaf(Wrt::Camera, &self.camera, &[5])?;
        let light = leaf(Wrt::Light, &self.light, &[9])?;
        let scene = Scene {
            faces: &self.faces,
            uv: &self.uv,
            intrinsics: &self.intrinsics,
            settings: RenderSettings::default(),
        };
        let out = render(
            t,
            RenderInputs {
                positions,
                texels,
                camera,
                light,
            },
            &scene,
        )
        .map_err(GradError::from)?;
        let img = loss_img(t, &self.target, &self.target_mask, out.image, out.mask)?;
        let (iou, _) = loss_iou(t, &self.target_mask, out.mask)?;
        let zero = t.scalar(0.0)?;
        let nodes = LossNodes {
            img,
            iou,
            lpl: zero,
            flat: zero,
            sym: zero,
            deform: zero,
        };
        nodes.combine(t, &LossWeights::default())
    }
}

fn render_cases(report: &mut GradcheckReport, rng: &mut ChaCha8Rng) -> GradResult<()> {
    let fx = Arc::new(RenderFixture::new(rng)?);
    for (name, wrt, x, shape) in [
        ("render+loss / positions", Wrt::Positions, fx.positions.clone(), vec![12, 3]),
        ("render+loss / camera", Wrt::Camera, fx.camera.clone(), vec![5]),
        ("render+loss / texels", Wrt::Texels, fx.texels.clone(), vec![4, 4, 3]),
        ("render+loss / light", Wrt::Light, fx.light.clone(), vec![9]),
    ] {
        let fx = fx.clone();
        let f = b(move |t, n| fx.loss(t, n, wrt));
        push(report, Component::Render, name, check(&f, &x, &shape, 1e-6)?, x.len());
    }
    Ok(())
}

/// Runs every check. Only numeric failures inside the tape are returned as
/// errors; tolerance failures are reported in the result.
pub fn run_gradcheck(opts: &SuiteOptions) -> GradResult<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradcheckReport::default();
    primitives(&mut report, &mut rng, opts)?;
    camera_case(&mut report, &mut rng)?;
    appearance(&mut report, &mut rng)?;
    losses(&mut report, &mut rng)?;
    render_cases(&mut report, &mut rng)?;
    Ok(report)
}
