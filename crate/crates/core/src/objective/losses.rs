use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grad::{GradError, GradResult, Node, Tape};
use crate::mesh::{face_normals, laplacian_coordinates, FacePair, LaplacianStencil};
use crate::real::Real;

/// Guard inside the per-vertex norm of the deformation loss.
pub const DEFORM_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObjectiveError {
    #[error("loss term `{term}` is not finite ({value})")]
    NonFinite { term: &'static str, value: f64 },
    #[error("negative loss weight `{0}`")]
    NegativeWeight(&'static str),
    #[error(transparent)]
    Grad(#[from] GradError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights<T> {
    pub rec: T,
    /// carried for completeness; its term is always zero here
    pub att: T,
    /// carried for completeness; its term is always zero here
    pub adv: T,
    pub reg: T,
    pub lpl: T,
    pub flat: T,
}

impl<T: Real> Default for LossWeights<T> {
    fn default() -> Self {
        Self {
            rec: T::lit(2.0),
            att: T::lit(1.0),
            adv: T::lit(1e-5),
            reg: T::lit(0.1),
            lpl: T::lit(0.1),
            flat: T::lit(0.01),
        }
    }
}

impl<T: Real> LossWeights<T> {
    pub fn validate(&self) -> Result<(), ObjectiveError> {
        let named = [
            ("rec", self.rec),
            ("att", self.att),
            ("adv", self.adv),
            ("reg", self.reg),
            ("lpl", self.lpl),
            ("flat", self.flat),
        ];
        for (name, w) in named {
            if !(w >= T::zero()) {
                return Err(ObjectiveError::NegativeWeight(name));
            }
        }
        Ok(())
    }
}

/// How `L_deform` reads ‖ΔS‖₂.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeformNorm {
    /// mean over vertices of the per-vertex Euclidean norm
    #[default]
    PerVertex,
    /// Frobenius norm of the whole offset field
    Global,
}

/// Values of the individual loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossComponents<T> {
    pub img: T,
    pub iou: T,
    pub lpl: T,
    pub flat: T,
    pub sym: T,
    pub deform: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport<T> {
    pub step: usize,
    pub img: T,
    pub iou: T,
    pub lpl: T,
    pub flat: T,
    pub sym: T,
    pub deform: T,
    pub total: T,
    pub degenerate_faces: usize,
}

/// `λ_rec(img + iou) + λ_att·0 + λ_adv·0 + λ_reg(sym + deform + λ_lpl·lpl + λ_flat·flat)`.
pub fn weighted_total<T: Real>(c: &LossComponents<T>, w: &LossWeights<T>) -> T {
    let zero = T::zero();
    w.rec * (c.img + c.iou)
        + w.att * zero
        + w.adv * zero
        + w.reg * (c.sym + c.deform + w.lpl * c.lpl + w.flat * c.flat)
}

pub fn total_loss<T: Real>(
    c: &LossComponents<T>,
    w: &LossWeights<T>,
    step: usize,
    degenerate_faces: usize,
) -> Result<LossReport<T>, ObjectiveError> {
    let named = [
        ("img", c.img),
        ("iou", c.iou),
        ("lpl", c.lpl),
        ("flat", c.flat),
        ("sym", c.sym),
        ("deform", c.deform),
    ];
    for (term, v) in named {
        if !v.is_finite() {
            return Err(ObjectiveError::NonFinite {
                term,
                value: v.to_f64_lossy(),
            });
        }
    }
    Ok(LossReport {
        step,
        img: c.img,
        iou: c.iou,
        lpl: c.lpl,
        flat: c.flat,
        sym: c.sym,
        deform: c.deform,
        total: weighted_total(c, w),
        degenerate_faces,
    })
}

/// Tape nodes for each term, combined in the same order as [`weighted_total`].
#[derive(Debug, Clone, Copy)]
pub struct LossNodes {
    pub img: Node,
    pub iou: Node,
    pub lpl: Node,
    pub flat: Node,
    pub sym: Node,
    pub deform: Node,
}

impl LossNodes {
    pub fn combine<T: Real>(&self, tape: &mut Tape<T>, w: &LossWeights<T>) -> GradResult<Node> {
        let rec = tape.add(self.img, self.iou)?;
        let rec = tape.scale(rec, w.rec)?;
        let lpl = tape.scale(self.lpl, w.lpl)?;
        let flat = tape.scale(self.flat, w.flat)?;
        let reg = tape.add(self.sym, self.deform)?;
        let reg = tape.add(reg, lpl)?;
        let reg = tape.add(reg, flat)?;
        let reg = tape.scale(reg, w.reg)?;
        tape.add(rec, reg)
    }

    pub fn components<T: Real>(&self, tape: &Tape<T>) -> LossComponents<T> {
        LossComponents {
            img: tape.scalar_value(self.img),
            iou: tape.scalar_value(self.iou),
            lpl: tape.scalar_value(self.lpl),
            flat: tape.scalar_value(self.flat),
            sym: tape.scalar_value(self.sym),
            deform: tape.scalar_value(self.deform),
        }
    }
}

fn check_same(op: &'static str, a: &[usize], b: &[usize]) -> GradResult<()> {
    if a != b {
        return Err(GradError::ShapeMismatch {
            op,
            lhs: a.to_vec(),
            rhs: b.to_vec(),
        });
    }
    Ok(())
}

/// `mean |I⊙M − Î⊙M̂|` over pixels × channels. `target` is `H×W×3`,
/// `target_mask` `H×W`; `image`/`mask` are the rendered nodes.
pub fn loss_img<T: Real>(
    tape: &mut Tape<T>,
    target: &[T],
    target_mask: &[T],
    image: Node,
    mask: Node,
) -> GradResult<Node> {
    let shape = tape.shape(image).to_vec();
    let mshape = tape.shape(mask).to_vec();
    check_same("loss_img", &shape[..shape.len().saturating_sub(1)], &mshape)?;
    let (h, w) = (mshape[0], mshape[1]);
    if target.len() != h * w * 3 || target_mask.len() != h * w {
        return Err(GradError::ShapeMismatch {
            op: "loss_img target",
            lhs: vec![target.len(), target_mask.len()],
            rhs: vec![h * w * 3, h * w],
        });
    }
    let masked: Vec<T> = target
        .chunks(3)
        .zip(target_mask)
        .flat_map(|(px, &m)| [px[0] * m, px[1] * m, px[2] * m])
        .collect();
    let want = tape.constant(masked, &[h, w, 3])?;
    let m = tape.reshape(mask, &[h, w, 1])?;
    let got = tape.mul(image, m)?;
    let diff = tape.sub(got, want)?;
    let diff = tape.abs(diff)?;
    tape.mean(diff)
}

/// Soft IoU loss `1 − Σ M·M̂ / Σ (M + M̂ − M·M̂)`. When both masks are empty
/// the loss is the constant 0 and the flag is set.
pub fn loss_iou<T: Real>(tape: &mut Tape<T>, target_mask: &[T], mask: Node) -> GradResult<(Node, bool)> {
    let shape = tape.shape(mask).to_vec();
    let m = tape.constant(target_mask.to_vec(), &shape)?;
    let inter = tape.mul(m, mask)?;
    let sum_both = tape.add(m, mask)?;
    let union = tape.sub(sum_both, inter)?;
    let union = tape.sum(union)?;
    if !(tape.scalar_value(union) > T::lit(1e-12)) {
        return Ok((tape.scalar(T::zero())?, true));
    }
    let inter = tape.sum(inter)?;
    let ratio = tape.div(inter, union)?;
    let one = tape.scalar(T::one())?;
    Ok((tape.sub(one, ratio)?, false))
}

/// Mean squared distance between the Laplacian coordinates of `positions`
/// and the precomputed coordinates of the prototype.
pub fn loss_laplacian<T: Real>(
    tape: &mut Tape<T>,
    positions: Node,
    stencil: &LaplacianStencil<T>,
    prototype_deltas: &[[T; 3]],
) -> GradResult<Node> {
    let v = prototype_deltas.len();
    let before = tape.constant(prototype_deltas.iter().flatten().copied().collect(), &[v, 3])?;
    let after = laplacian_coordinates(tape, positions, stencil)?;
    let d = tape.sub(after, before)?;
    let sq = tape.square(d)?;
    let per_vertex = tape.sum_axis(sq, 1, false)?;
    tape.mean(per_vertex)
}

/// `mean (cos Δθ + 1)²` with `cos Δθ = −⟨n_a, n_b⟩` over adjacent face pairs.
/// Pairs touching a degenerate face are skipped; the count is returned.
pub fn loss_flatten<T: Real>(
    tape: &mut Tape<T>,
    positions: Node,
    faces: &[[usize; 3]],
    pairs: &[FacePair],
) -> GradResult<(Node, usize)> {
    let normals = face_normals(tape, positions, faces)?;
    let lengths: Vec<T> = tape
        .value(normals.scaled)
        .chunks(3)
        .map(|n| (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt())
        .collect();
    let ok = |f: usize| lengths[f] > T::lit(2.0 * crate::mesh::AREA_EPS);
    let (valid, skipped): (Vec<&FacePair>, Vec<&FacePair>) = pairs.iter().partition(|p| ok(p.a) && ok(p.b));
    if valid.is_empty() {
        return Ok((tape.scalar(T::zero())?, skipped.len()));
    }
    let ia: Vec<usize> = valid.iter().map(|p| p.a).collect();
    let ib: Vec<usize> = valid.iter().map(|p| p.b).collect();
    let na = tape.select(normals.normals, 0, &ia)?;
    let nb = tape.select(normals.normals, 0, &ib)?;
    let prod = tape.mul(na, nb)?;
    let dot = tape.sum_axis(prod, 1, false)?;
    let one = tape.scalar(T::one())?;
    let shifted = tape.sub(one, dot)?;
    let sq = tape.square(shifted)?;
    Ok((tape.mean(sq)?, skipped.len()))
}

/// `mean |z(p) + z(p̃)|` over vertices.
pub fn loss_sym<T: Real>(tape: &mut Tape<T>, positions: Node, mirror: &[usize]) -> GradResult<Node> {
    let z = tape.select(positions, 1, &[2])?;
    let zm = tape.select(z, 0, mirror)?;
    let s = tape.add(z, zm)?;
    let a = tape.abs(s)?;
    tape.mean(a)
}

pub fn loss_deform<T: Real>(tape: &mut Tape<T>, offsets: Node, norm: DeformNorm) -> GradResult<Node> {
    let sq = tape.square(offsets)?;
    match norm {
        DeformNorm::PerVertex => {
            let s = tape.sum_axis(sq, 1, false)?;
            let s = tape.add_scalar(s, T::lit(DEFORM_EPS))?;
            let n = tape.sqrt(s)?;
            tape.mean(n)
        }
        DeformNorm::Global => {
            let s = tape.sum(sq)?;
            let s = tape.add_scalar(s, T::lit(DEFORM_EPS))?;
            tape.sqrt(s)
        }
    }
}
