use serde::{Deserialize, Serialize};

use crate::grad::{GradError, GradResult, Node, Tape};
use crate::real::Real;

/// Albedo texels, row-major `height × width × 3`, row 0 at v = 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextureAtlas<T> {
    pub height: usize,
    pub width: usize,
    pub texels: Vec<T>,
}

impl<T: Real> TextureAtlas<T> {
    pub fn uniform(height: usize, width: usize, color: [T; 3]) -> Self {
        Self {
            height,
            width,
            texels: (0..height * width).flat_map(|_| color).collect(),
        }
    }

    pub fn texel(&self, row: usize, col: usize) -> [T; 3] {
        let i = 3 * (row * self.width + col);
        [self.texels[i], self.texels[i + 1], self.texels[i + 2]]
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.height, self.width, 3]
    }

    /// Clamps every texel into [0, 1].
    pub fn clamp_unit(&mut self) {
        for t in &mut self.texels {
            *t = t.max(T::zero()).min(T::one());
        }
    }
}

/// Raw (pre-tanh) flow, `height × width × 2`, sampling a source image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextureFlow<T> {
    pub height: usize,
    pub width: usize,
    pub raw: Vec<T>,
}

impl<T: Real> TextureFlow<T> {
    /// Flow whose activated coordinates hit the source texel centers of a
    /// same-sized grid, so the top atlas half reproduces the source.
    pub fn identity(height: usize, width: usize) -> Self {
        let center = |i: usize, n: usize| T::lit((2.0 * i as f64 + 1.0) / n as f64 - 1.0).atanh();
        let mut raw = Vec::with_capacity(height * width * 2);
        for r in 0..height {
            for c in 0..width {
                raw.push(center(c, width));
                raw.push(center(r, height));
            }
        }
        Self { height, width, raw }
    }
}

#[derive(Debug, Clone, Copy)]
struct Corners<T> {
    idx: [usize; 4],
    tx: T,
    ty: T,
}

fn corners<T: Real>(fx: T, fy: T, h: usize, w: usize) -> Corners<T> {
    let split = |f: T, n: usize| -> (usize, usize, T) {
        if n == 1 {
            return (0, 0, T::zero());
        }
        let i0 = (f.floor().to_f64_lossy() as usize).min(n - 2);
        (i0, i0 + 1, f - T::lit(i0 as f64))
    };
    let (x0, x1, tx) = split(fx, w);
    let (y0, y1, ty) = split(fy, h);
    Corners {
        idx: [y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1],
        tx,
        ty,
    }
}

fn texel_coord<T: Real>(u: T, n: usize) -> T {
    let f = u.max(T::zero()).min(T::one()) * T::lit(n as f64) - T::lit(0.5);
    f.max(T::zero()).min(T::lit((n - 1) as f64))
}

/// Bilinear lookup; texel centers sit at `(i + 0.5) / n`.
pub fn sample_atlas_values<T: Real>(atlas: &TextureAtlas<T>, uv: [T; 2]) -> [T; 3] {
    let fx = texel_coord(uv[0], atlas.width);
    let fy = texel_coord(uv[1], atlas.height);
    let c = corners(fx, fy, atlas.height, atlas.width);
    let w = [
        (T::one() - c.tx) * (T::one() - c.ty),
        c.tx * (T::one() - c.ty),
        (T::one() - c.tx) * c.ty,
        c.tx * c.ty,
    ];
    let mut out = [T::zero(); 3];
    for (k, &i) in c.idx.iter().enumerate() {
        for d in 0..3 {
            out[d] = out[d] + w[k] * atlas.texels[3 * i + d];
        }
    }
    out
}

/// Bilinear gather from a `(h·w) × C` grid at continuous texel coordinates
/// `fx`, `fy` (length N, already inside `[0, w−1] × [0, h−1]`) → `N × C`.
fn bilinear_gather<T: Real>(tape: &mut Tape<T>, grid: Node, h: usize, w: usize, fx: Node, fy: Node) -> GradResult<Node> {
    let n = tape.shape(fx)[0];
    let xs = tape.value(fx).to_vec();
    let ys = tape.value(fy).to_vec();
    let mut idx: [Vec<usize>; 4] = Default::default();
    let mut base_x = Vec::with_capacity(n);
    let mut base_y = Vec::with_capacity(n);
    for (&x, &y) in xs.iter().zip(&ys) {
        let c = corners(x, y, h, w);
        for k in 0..4 {
            idx[k].push(c.idx[k]);
        }
        base_x.push(x - c.tx);
        base_y.push(y - c.ty);
    }
    let bx = tape.constant(base_x, &[n])?;
    let by = tape.constant(base_y, &[n])?;
    let tx = tape.sub(fx, bx)?;
    let ty = tape.sub(fy, by)?;
    let one = tape.scalar(T::one())?;
    let sx = tape.sub(one, tx)?;
    let sy = tape.sub(one, ty)?;
    let weights = [
        tape.mul(sx, sy)?,
        tape.mul(tx, sy)?,
        tape.mul(sx, ty)?,
        tape.mul(tx, ty)?,
    ];
    let mut acc: Option<Node> = None;
    for k in 0..4 {
        let g = tape.select(grid, 0, &idx[k])?;
        let wk = tape.reshape(weights[k], &[n, 1])?;
        let term = tape.mul(g, wk)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, term)?,
            None => term,
        });
    }
    Ok(acc.expect("four corners"))
}

fn unit_to_texel<T: Real>(tape: &mut Tape<T>, u: Node, n: usize) -> GradResult<Node> {
    let uc = tape.clamp(u, T::zero(), T::one())?;
    let scaled = tape.scale(uc, T::lit(n as f64))?;
    let shifted = tape.add_scalar(scaled, T::lit(-0.5))?;
    tape.clamp(shifted, T::zero(), T::lit((n - 1) as f64))
}

/// Differentiable bilinear atlas lookup: texels `Ht × Wt × 3`, `u`, `v` of
/// length N → `N × 3`.
pub fn sample_atlas<T: Real>(tape: &mut Tape<T>, texels: Node, u: Node, v: Node) -> GradResult<Node> {
    let shape = tape.shape(texels).to_vec();
    if shape.len() != 3 || shape[2] != 3 {
        return Err(GradError::ShapeMismatch {
            op: "sample_atlas",
            lhs: shape,
            rhs: vec![0, 0, 3],
        });
    }
    let (h, w) = (shape[0], shape[1]);
    let grid = tape.reshape(texels, &[h * w, 3])?;
    let fx = unit_to_texel(tape, u, w)?;
    let fy = unit_to_texel(tape, v, h)?;
    bilinear_gather(tape, grid, h, w, fx, fy)
}

/// Warps `source` (`src_h × src_w × 3`) through `tanh(raw_flow)` with
/// grid-sample semantics ((−1, −1) is the top-left corner, pixel centers at
/// `(2i + 1)/n − 1`, border clamped), then stacks the result over its
/// row-reversed copy → `2Hf × Wf × 3`.
pub fn flow_to_atlas<T: Real>(
    tape: &mut Tape<T>,
    raw_flow: Node,
    source: &[T],
    src_h: usize,
    src_w: usize,
) -> GradResult<Node> {
    let shape = tape.shape(raw_flow).to_vec();
    if shape.len() != 3 || shape[2] != 2 || source.len() != src_h * src_w * 3 {
        return Err(GradError::ShapeMismatch {
            op: "flow_to_atlas",
            lhs: shape,
            rhs: vec![src_h, src_w, 3],
        });
    }
    let (hf, wf) = (shape[0], shape[1]);
    let n = hf * wf;
    let coords = tape.tanh(raw_flow)?;
    let coords = tape.reshape(coords, &[n, 2])?;
    let gx = tape.select(coords, 1, &[0])?;
    let gx = tape.reshape(gx, &[n])?;
    let gy = tape.select(coords, 1, &[1])?;
    let gy = tape.reshape(gy, &[n])?;
    let to_pixel = |tape: &mut Tape<T>, g: Node, size: usize| -> GradResult<Node> {
        let p = tape.add_scalar(g, T::one())?;
        let p = tape.scale(p, T::lit(size as f64 / 2.0))?;
        let p = tape.add_scalar(p, T::lit(-0.5))?;
        tape.clamp(p, T::zero(), T::lit((size - 1) as f64))
    };
    let fx = to_pixel(tape, gx, src_w)?;
    let fy = to_pixel(tape, gy, src_h)?;
    let grid = tape.constant(source.to_vec(), &[src_h * src_w, 3])?;
    let sampled = bilinear_gather(tape, grid, src_h, src_w, fx, fy)?;
    let top = tape.reshape(sampled, &[hf, wf, 3])?;
    let reversed: Vec<usize> = (0..hf).rev().collect();
    let bottom = tape.select(top, 0, &reversed)?;
    tape.concat(&[top, bottom], 0)
}

/// Front/back orthographic chart. Coordinates are normalized by the
/// bounding half-extents; the z ≥ 0 side maps to the top half of the atlas,
/// the z < 0 side to the bottom half with rows mirrored, matching the
/// mirrored atlas layout of [`flow_to_atlas`].
pub fn front_back_uv<T: Real>(vertices: &[[T; 3]]) -> Vec<[T; 2]> {
    let mut half = [T::zero(); 2];
    for v in vertices {
        for d in 0..2 {
            half[d] = half[d].max(v[d].abs());
        }
    }
    let half = half.map(|h| if h > T::zero() { h } else { T::one() });
    let unit = |x: T| x.max(T::zero()).min(T::one());
    let two = T::lit(2.0);
    vertices
        .iter()
        .map(|v| {
            let u = unit((v[0] / half[0] + T::one()) / two);
            let t = unit((T::one() - v[1] / half[1]) / two);
            let v = if v[2] >= T::zero() { t / two } else { T::one() - t / two };
            [u, v]
        })
        .collect()
}
