//! Soft rasterizer.
//!
//! The silhouette aggregates per-face coverage `D = sigmoid(sd / σ)` over
//! candidate faces as `1 − ∏(1 − D)`, evaluated in log space. Color comes
//! from the nearest front-facing face under a hard depth test, shaded with
//! SH lighting in view space and modulated by that face's coverage. The
//! depth ordering is recomputed every call and is not differentiated.
//!
//! Everything differentiable is built from tape primitives, vectorized over
//! (pixel, face) candidate pairs.

use thiserror::Error;

use crate::appearance::{sample_atlas, shade_rows};
use crate::camera::{dot_rows, project, Intrinsics};
use crate::grad::{GradError, GradResult, Node, Tape};
use crate::mesh::vertex_normals;
use crate::real::Real;


/// Screen-space triangles with |area| below this are skipped.
pub const AREA_GUARD: f64 = 1e-12;
/// Added under the square root of the edge distance so its derivative stays
/// finite when a pixel center lies on an edge.
const DIST_EPS: f64 = 1e-18;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("sharpness must be positive and finite, got {0}")]
    BadSigma(f64),
    #[error("nothing to draw: {degenerate} of {faces} faces degenerate, {behind} of {vertices} vertices behind the near plane")]
    AllDegenerate {
        faces: usize,
        degenerate: usize,
        vertices: usize,
        behind: usize,
    },
    #[error("uv table has {got} rows for {expected} vertices")]
    UvCount { expected: usize, got: usize },
    #[error(transparent)]
    Grad(#[from] GradError),
}

impl From<RenderError> for GradError {
    fn from(e: RenderError) -> Self {
        match e {
            RenderError::Grad(g) => g,
            other => GradError::Custom {
                name: "render".into(),
                message: other.to_string(),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderSettings<T> {
    /// silhouette sharpness σ in NDC units
    pub sigma: T,
    /// candidate padding around each face's screen box, in multiples of σ
    pub cutoff: T,
}

impl<T: Real> Default for RenderSettings<T> {
    fn default() -> Self {
        Self {
            sigma: T::lit(0.02),
            cutoff: T::lit(3.0),
        }
    }
}

/// Fixed (non-differentiable) scene description.
#[derive(Debug, Clone, Copy)]
pub struct Scene<'a, T> {
    pub faces: &'a [[usize; 3]],
    pub uv: &'a [[T; 2]],
    pub intrinsics: &'a Intrinsics<T>,
    pub settings: RenderSettings<T>,
}

/// Tape inputs: `V×3` positions, `Ht×Wt×3` texels, camera 5-vector, 9 SH
/// coefficients.
#[derive(Debug, Clone, Copy)]
pub struct RenderInputs {
    pub positions: Node,
    pub texels: Node,
    pub camera: Node,
    pub light: Node,
}

#[derive(Debug, Clone)]
pub struct RenderOutput {
    /// `H×W×3`
    pub image: Node,
    /// `H×W`
    pub mask: Node,
    /// visible face per pixel, row-major
    pub pixel_face: Vec<Option<usize>>,
    pub degenerate_faces: usize,
    pub near_clamped: usize,
}

/// Pixel center in NDC, row 0 at the top.
pub fn pixel_center<T: Real>(row: usize, col: usize, width: usize, height: usize) -> [T; 2] {
    [
        T::lit((col as f64 + 0.5) / width as f64 * 2.0 - 1.0),
        T::lit(1.0 - (row as f64 + 0.5) / height as f64 * 2.0),
    ]
}

fn edge<T: Real>(a: [T; 2], b: [T; 2], p: [T; 2]) -> T {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

fn segment_distance<T: Real>(p: [T; 2], a: [T; 2], b: [T; 2]) -> T {
    let d = [b[0] - a[0], b[1] - a[1]];
    let w = [p[0] - a[0], p[1] - a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    let t = ((w[0] * d[0] + w[1] * d[1]) / len2).max(T::zero()).min(T::one());
    let e = [w[0] - t * d[0], w[1] - t * d[1]];
    (e[0] * e[0] + e[1] * e[1]).sqrt()
}

/// Twice the signed area, positive for counter-clockwise triangles (y up).
pub fn signed_area2<T: Real>(tri: [[T; 2]; 3]) -> T {
    edge(tri[0], tri[1], tri[2])
}

fn inside<T: Real>(p: [T; 2], tri: [[T; 2]; 3]) -> bool {
    let e0 = edge(tri[0], tri[1], p);
    let e1 = edge(tri[1], tri[2], p);
    let e2 = edge(tri[2], tri[0], p);
    let z = T::zero();
    (e0 >= z && e1 >= z && e2 >= z) || (e0 <= z && e1 <= z && e2 <= z)
}

/// Distance from `p` to the triangle boundary, positive inside. Either
/// winding is accepted; `None` for degenerate triangles.
pub fn signed_distance<T: Real>(p: [T; 2], tri: [[T; 2]; 3]) -> Option<T> {
    if signed_area2(tri).abs() < T::lit(AREA_GUARD) {
        return None;
    }
    let d = segment_distance(p, tri[0], tri[1])
        .min(segment_distance(p, tri[1], tri[2]))
        .min(segment_distance(p, tri[2], tri[0]));
    Some(if inside(p, tri) { d } else { -d })
}

/// Candidate (pixel, face) pairs and per-face bookkeeping for one frame.
#[derive(Debug, Clone, Default)]
struct Candidates<T> {
    pixel: Vec<usize>,
    face: Vec<usize>,
    px: Vec<T>,
    py: Vec<T>,
    sign: Vec<T>,
    degenerate: usize,
}

fn screen_triangle<T: Real>(xs: &[T], ys: &[T], f: [usize; 3]) -> [[T; 2]; 3] {
    f.map(|v| [xs[v], ys[v]])
}

fn pixel_span<T: Real>(lo: T, hi: T, n: usize, flip: bool) -> std::ops::Range<usize> {
    // centers at c_i = (i + 0.5)·2/n − 1 (or its negation for rows)
    let (lo, hi) = if flip { (-hi, -lo) } else { (lo, hi) };
    let to_index = |c: T| (c + T::one()) * T::lit(n as f64 / 2.0) - T::lit(0.5);
    let first = to_index(lo).ceil().max(T::zero());
    let last = to_index(hi).floor().min(T::lit(n as f64 - 1.0));
    if !(first <= last) {
        return 0..0;
    }
    first.to_f64_lossy() as usize..last.to_f64_lossy() as usize + 1
}

fn find_candidates<T: Real>(
    xs: &[T],
    ys: &[T],
    faces: &[[usize; 3]],
    width: usize,
    height: usize,
    pad: T,
) -> Candidates<T> {
    let mut c = Candidates::default();
    for (fi, &f) in faces.iter().enumerate() {
        let tri = screen_triangle(xs, ys, f);
        if signed_area2(tri).abs() < T::lit(AREA_GUARD) {
            c.degenerate += 1;
            continue;
        }
        let min_x = tri[0][0].min(tri[1][0]).min(tri[2][0]) - pad;
        let max_x = tri[0][0].max(tri[1][0]).max(tri[2][0]) + pad;
        let min_y = tri[0][1].min(tri[1][1]).min(tri[2][1]) - pad;
        let max_y = tri[0][1].max(tri[1][1]).max(tri[2][1]) + pad;
        for row in pixel_span(min_y, max_y, height, true) {
            for col in pixel_span(min_x, max_x, width, false) {
                let p = pixel_center::<T>(row, col, width, height);
                c.pixel.push(row * width + col);
                c.face.push(fi);
                c.px.push(p[0]);
                c.py.push(p[1]);
                c.sign.push(if inside(p, tri) { T::one() } else { -T::one() });
            }
        }
    }
    c
}

struct Corners {
    ax: Node,
    ay: Node,
    bx: Node,
    by: Node,
    cx: Node,
    cy: Node,
}

fn gather_corners<T: Real>(
    tape: &mut Tape<T>,
    x: Node,
    y: Node,
    faces: &[[usize; 3]],
    face_ids: &[usize],
) -> GradResult<Corners> {
    let idx = |k: usize| -> Vec<usize> { face_ids.iter().map(|&f| faces[f][k]).collect() };
    let (ia, ib, ic) = (idx(0), idx(1), idx(2));
    Ok(Corners {
        ax: tape.select(x, 0, &ia)?,
        ay: tape.select(y, 0, &ia)?,
        bx: tape.select(x, 0, &ib)?,
        by: tape.select(y, 0, &ib)?,
        cx: tape.select(x, 0, &ic)?,
        cy: tape.select(y, 0, &ic)?,
    })
}

fn segment_distance_sq<T: Real>(
    tape: &mut Tape<T>,
    px: Node,
    py: Node,
    a: (Node, Node),
    b: (Node, Node),
) -> GradResult<Node> {
    let dx = tape.sub(b.0, a.0)?;
    let dy = tape.sub(b.1, a.1)?;
    let wx = tape.sub(px, a.0)?;
    let wy = tape.sub(py, a.1)?;
    let dx2 = tape.square(dx)?;
    let dy2 = tape.square(dy)?;
    let len2 = tape.add(dx2, dy2)?;
    let wdx = tape.mul(wx, dx)?;
    let wdy = tape.mul(wy, dy)?;
    let proj = tape.add(wdx, wdy)?;
    let t = tape.div(proj, len2)?;
    let t = tape.clamp(t, T::zero(), T::one())?;
    let tdx = tape.mul(t, dx)?;
    let tdy = tape.mul(t, dy)?;
    let ex = tape.sub(wx, tdx)?;
    let ey = tape.sub(wy, tdy)?;
    let ex2 = tape.square(ex)?;
    let ey2 = tape.square(ey)?;
    tape.add(ex2, ey2)
}

/// Signed distances for all candidate pairs.
fn pair_signed_distance<T: Real>(
    tape: &mut Tape<T>,
    corners: &Corners,
    px: Node,
    py: Node,
    sign: Node,
) -> GradResult<Node> {
    let a = (corners.ax, corners.ay);
    let b = (corners.bx, corners.by);
    let c = (corners.cx, corners.cy);
    let d_ab = segment_distance_sq(tape, px, py, a, b)?;
    let d_bc = segment_distance_sq(tape, px, py, b, c)?;
    let d_ca = segment_distance_sq(tape, px, py, c, a)?;
    let m = tape.min2(d_ab, d_bc)?;
    let m = tape.min2(m, d_ca)?;
    let m = tape.add_scalar(m, T::lit(DIST_EPS))?;
    let dist = tape.sqrt(m)?;
    tape.mul(dist, sign)
}

/// Pixels inside the silhouette support and the tape values needed to color
/// them.
struct Silhouette<T> {
    mask: Node,
    sd: Node,
    candidates: Candidates<T>,
    corners: Corners,
}

fn silhouette<T: Real>(
    tape: &mut Tape<T>,
    x: Node,
    y: Node,
    faces: &[[usize; 3]],
    intrinsics: &Intrinsics<T>,
    settings: RenderSettings<T>,
) -> Result<Silhouette<T>, RenderError> {
    let sigma = settings.sigma;
    if !(sigma > T::zero() && sigma.is_finite()) {
        return Err(RenderError::BadSigma(sigma.to_f64_lossy()));
    }
    let (w, h) = (intrinsics.width, intrinsics.height);
    let xs = tape.value(x).to_vec();
    let ys = tape.value(y).to_vec();
    let candidates = find_candidates(&xs, &ys, faces, w, h, settings.cutoff * sigma);
    let n = candidates.pixel.len();
    let corners = gather_corners(tape, x, y, faces, &candidates.face)?;
    let px = tape.constant(candidates.px.clone(), &[n])?;
    let py = tape.constant(candidates.py.clone(), &[n])?;
    let sign = tape.constant(candidates.sign.clone(), &[n])?;
    let sd = pair_signed_distance(tape, &corners, px, py, sign)?;
    let z = tape.scale(sd, -T::one() / sigma)?;
    let log_miss = tape.log_sigmoid(z)?;
    let per_pixel = tape.scatter_add(log_miss, &candidates.pixel, w * h)?;
    let miss = tape.exp(per_pixel)?;
    let one = tape.scalar(T::one())?;
    let mask = tape.sub(one, miss)?;
    let mask = tape.reshape(mask, &[h, w])?;
    Ok(Silhouette {
        mask,
        sd,
        candidates,
        corners,
    })
}

/// Soft silhouette `1 − ∏(1 − sigmoid(sd/σ))` of already projected vertices
/// (`x`, `y` of length V in NDC) → `H×W`, plus the degenerate-face count.
pub fn soft_silhouette<T: Real>(
    tape: &mut Tape<T>,
    x: Node,
    y: Node,
    faces: &[[usize; 3]],
    intrinsics: &Intrinsics<T>,
    settings: RenderSettings<T>,
) -> Result<(Node, usize), RenderError> {
    let s = silhouette(tape, x, y, faces, intrinsics, settings)?;
    Ok((s.mask, s.candidates.degenerate))
}

/// Hard depth test over front-facing faces containing each candidate pixel.
/// Returns the winning candidate index per pixel.
fn depth_test<T: Real>(
    candidates: &Candidates<T>,
    xs: &[T],
    ys: &[T],
    depth: &[T],
    faces: &[[usize; 3]],
    pixels: usize,
) -> Vec<Option<usize>> {
    let mut best: Vec<Option<(T, usize)>> = vec![None; pixels];
    for k in 0..candidates.pixel.len() {
        if candidates.sign[k] <= T::zero() {
            continue;
        }
        let f = faces[candidates.face[k]];
        let tri = screen_triangle(xs, ys, f);
        let area = signed_area2(tri);
        if !(area > T::lit(AREA_GUARD)) {
            continue;
        }
        let p = [candidates.px[k], candidates.py[k]];
        let wa = edge(tri[1], tri[2], p) / area;
        let wb = edge(tri[2], tri[0], p) / area;
        let wc = edge(tri[0], tri[1], p) / area;
        let z = wa * depth[f[0]] + wb * depth[f[1]] + wc * depth[f[2]];
        let slot = &mut best[candidates.pixel[k]];
        match slot {
            Some((bz, _)) if !(z < *bz) => {}
            _ => *slot = Some((z, k)),
        }
    }
    best.into_iter().map(|b| b.map(|(_, k)| k)).collect()
}

fn interpolate<T: Real>(
    tape: &mut Tape<T>,
    attr: Node,
    corner_idx: [&[usize]; 3],
    weights: [Node; 3],
) -> GradResult<Node> {
    let q = corner_idx[0].len();
    let mut acc: Option<Node> = None;
    for k in 0..3 {
        let g = tape.select(attr, 0, corner_idx[k])?;
        let w = tape.reshape(weights[k], &[q, 1])?;
        let term = tape.mul(g, w)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, term)?,
            None => term,
        });
    }
    Ok(acc.expect("three corners"))
}

fn cross_edge<T: Real>(tape: &mut Tape<T>, a: (Node, Node), b: (Node, Node), p: (Node, Node)) -> GradResult<Node> {
    // (b − a) × (p − a), same orientation as `edge`
    let bx = tape.sub(b.0, a.0)?;
    let by = tape.sub(b.1, a.1)?;
    let wx = tape.sub(p.0, a.0)?;
    let wy = tape.sub(p.1, a.1)?;
    let l = tape.mul(bx, wy)?;
    let r = tape.mul(by, wx)?;
    tape.sub(l, r)
}

/// Full differentiable render.
pub fn render<T: Real>(tape: &mut Tape<T>, inputs: RenderInputs, scene: &Scene<'_, T>) -> Result<RenderOutput, RenderError> {
    let intr = scene.intrinsics;
    let (w, h) = (intr.width, intr.height);
    let v = tape.shape(inputs.positions)[0];
    if scene.uv.len() != v {
        return Err(RenderError::UvCount {
            expected: v,
            got: scene.uv.len(),
        });
    }
    let proj = project(tape, inputs.positions, inputs.camera, intr)?;
    let sil = silhouette(tape, proj.x, proj.y, scene.faces, intr, scene.settings)?;
    let faces = scene.faces;
    if sil.candidates.degenerate == faces.len() || proj.near_clamped == v {
        return Err(RenderError::AllDegenerate {
            faces: faces.len(),
            degenerate: sil.candidates.degenerate,
            vertices: v,
            behind: proj.near_clamped,
        });
    }

    let xs = tape.value(proj.x).to_vec();
    let ys = tape.value(proj.y).to_vec();
    let depth = tape.value(proj.depth).to_vec();
    let winners = depth_test(&sil.candidates, &xs, &ys, &depth, faces, w * h);
    let chosen: Vec<usize> = winners.iter().flatten().copied().collect();
    let pixel_face: Vec<Option<usize>> = winners
        .iter()
        .map(|k| k.map(|k| sil.candidates.face[k]))
        .collect();

    let image = if chosen.is_empty() {
        tape.constant(vec![T::zero(); h * w * 3], &[h, w, 3])?
    } else {
        let q = chosen.len();
        let c = &sil.corners;
        let pick = |tape: &mut Tape<T>, n: Node| tape.select(n, 0, &chosen);
        let a = (pick(tape, c.ax)?, pick(tape, c.ay)?);
        let b = (pick(tape, c.bx)?, pick(tape, c.by)?);
        let cc = (pick(tape, c.cx)?, pick(tape, c.cy)?);
        let p = (
            tape.constant(chosen.iter().map(|&k| sil.candidates.px[k]).collect(), &[q])?,
            tape.constant(chosen.iter().map(|&k| sil.candidates.py[k]).collect(), &[q])?,
        );
        let area = cross_edge(tape, a, b, cc)?;
        let ea = cross_edge(tape, b, cc, p)?;
        let eb = cross_edge(tape, cc, a, p)?;
        let ec = cross_edge(tape, a, b, p)?;
        let wa = tape.div(ea, area)?;
        let wb = tape.div(eb, area)?;
        let wc = tape.div(ec, area)?;

        let fids: Vec<usize> = chosen.iter().map(|&k| sil.candidates.face[k]).collect();
        let ia: Vec<usize> = fids.iter().map(|&f| faces[f][0]).collect();
        let ib: Vec<usize> = fids.iter().map(|&f| faces[f][1]).collect();
        let ic: Vec<usize> = fids.iter().map(|&f| faces[f][2]).collect();

        let uv = tape.constant(scene.uv.iter().flatten().copied().collect(), &[v, 2])?;
        let uv_q = interpolate(tape, uv, [&ia, &ib, &ic], [wa, wb, wc])?;
        let u = tape.select(uv_q, 1, &[0])?;
        let u = tape.reshape(u, &[q])?;
        let vv = tape.select(uv_q, 1, &[1])?;
        let vv = tape.reshape(vv, &[q])?;
        let albedo = sample_atlas(tape, inputs.texels, u, vv)?;

        let normals = vertex_normals(tape, inputs.positions, faces, v)?;
        let view_cols = [proj.basis.right, proj.basis.up, proj.basis.back]
            .into_iter()
            .map(|axis| {
                let d = dot_rows(tape, normals, axis)?;
                tape.reshape(d, &[v, 1])
            })
            .collect::<GradResult<Vec<_>>>()?;
        let view_normals = tape.concat(&view_cols, 1)?;
        let n_q = interpolate(tape, view_normals, [&ia, &ib, &ic], [wa, wb, wc])?;
        let n_sq = tape.square(n_q)?;
        let n_len = tape.sum_axis(n_sq, 1, true)?;
        let n_len = tape.sqrt(n_len)?;
        let n_q = tape.div(n_q, n_len)?;

        let shaded = shade_rows(tape, albedo, n_q, inputs.light)?;
        let sd_q = tape.select(sil.sd, 0, &chosen)?;
        let z = tape.scale(sd_q, T::one() / scene.settings.sigma)?;
        let cover = tape.sigmoid(z)?;
        let cover = tape.reshape(cover, &[q, 1])?;
        let color = tape.mul(shaded, cover)?;
        let color = tape.clamp(color, T::zero(), T::one())?;
        let pixels: Vec<usize> = chosen.iter().map(|&k| sil.candidates.pixel[k]).collect();
        let img = tape.scatter_add(color, &pixels, h * w)?;
        tape.reshape(img, &[h, w, 3])?
    };

    Ok(RenderOutput {
        image,
        mask: sil.mask,
        pixel_face,
        degenerate_faces: sil.candidates.degenerate,
        near_clamped: proj.near_clamped,
    })
}

/// Forward-only render result.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame<T> {
    pub width: usize,
    pub height: usize,
    /// `H×W×3`, row-major
    pub image: Vec<T>,
    /// `H×W`
    pub mask: Vec<T>,
    pub pixel_face: Vec<Option<usize>>,
}

/// Renders constant inputs without keeping the tape.
pub fn render_frame<T: Real>(
    positions: &[[T; 3]],
    texels: &[T],
    atlas_shape: [usize; 2],
    camera: [T; 5],
    light: [T; 9],
    scene: &Scene<'_, T>,
) -> Result<Frame<T>, RenderError> {
    let mut tape = Tape::new();
    let inputs = RenderInputs {
        positions: tape.constant(positions.iter().flatten().copied().collect(), &[positions.len(), 3])?,
        texels: tape.constant(texels.to_vec(), &[atlas_shape[0], atlas_shape[1], 3])?,
        camera: tape.constant(camera.to_vec(), &[5])?,
        light: tape.constant(light.to_vec(), &[9])?,
    };
    let out = render(&mut tape, inputs, scene)?;
    Ok(Frame {
        width: scene.intrinsics.width,
        height: scene.intrinsics.height,
        image: tape.value(out.image).to_vec(),
        mask: tape.value(out.mask).to_vec(),
        pixel_face: out.pixel_face,
    })
}
