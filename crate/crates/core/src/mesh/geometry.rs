use super::{cross3, MeshError, AREA_EPS};
use crate::grad::{GradResult, Node, Tape};
use crate::real::Real;

/// S = S̄ + ΔS. The template enters as a constant, so gradients reach the
/// offsets only.
pub fn compose_shape<T: Real>(
    tape: &mut Tape<T>,
    template: &[[T; 3]],
    offsets: Node,
) -> Result<Node, MeshError> {
    let got = tape.shape(offsets).to_vec();
    if got != [template.len(), 3] {
        return Err(MeshError::DimensionMismatch {
            expected: template.len(),
            got: got.first().copied().unwrap_or(0),
        });
    }
    let base = tape.constant(template.iter().flatten().copied().collect(), &[template.len(), 3])?;
    Ok(tape.add(base, offsets)?)
}

/// Flattened uniform-weight Laplacian: row `owners[k]` receives
/// `weights[k] · x[neighbors[k]]`.
#[derive(Debug, Clone)]
pub struct LaplacianStencil<T> {
    owners: Vec<usize>,
    neighbors: Vec<usize>,
    weights: Vec<T>,
    vertex_count: usize,
}

impl<T: Real> LaplacianStencil<T> {
    pub fn new(neighbors: &[Vec<usize>]) -> Self {
        let mut owners = Vec::new();
        let mut nbrs = Vec::new();
        let mut weights = Vec::new();
        for (p, list) in neighbors.iter().enumerate() {
            let w = T::one() / T::lit(list.len() as f64);
            for &q in list {
                owners.push(p);
                nbrs.push(q);
                weights.push(w);
            }
        }
        Self {
            owners,
            neighbors: nbrs,
            weights,
            vertex_count: neighbors.len(),
        }
    }
}

/// δ_p = p − mean of p's neighbors, for `V×3` positions on the tape.
pub fn laplacian_coordinates<T: Real>(
    tape: &mut Tape<T>,
    positions: Node,
    stencil: &LaplacianStencil<T>,
) -> GradResult<Node> {
    let gathered = tape.select(positions, 0, &stencil.neighbors)?;
    let w = tape.constant(stencil.weights.clone(), &[stencil.weights.len(), 1])?;
    let weighted = tape.mul(gathered, w)?;
    let means = tape.scatter_add(weighted, &stencil.owners, stencil.vertex_count)?;
    tape.sub(positions, means)
}

/// Plain-array Laplacian coordinates.
pub fn laplacian_coordinates_values<T: Real>(positions: &[[T; 3]], neighbors: &[Vec<usize>]) -> Vec<[T; 3]> {
    positions
        .iter()
        .zip(neighbors)
        .map(|(p, list)| {
            let n = T::lit(list.len() as f64);
            let mut mean = [T::zero(); 3];
            for &q in list {
                for d in 0..3 {
                    mean[d] = mean[d] + positions[q][d];
                }
            }
            [p[0] - mean[0] / n, p[1] - mean[1] / n, p[2] - mean[2] / n]
        })
        .collect()
}

/// Unit face normals on the tape plus the number of degenerate faces whose
/// normal was replaced by +z.
#[derive(Debug, Clone, Copy)]
pub struct FaceNormals {
    pub normals: Node,
    pub degenerate: usize,
    /// unnormalized cross products (twice the face area in magnitude)
    pub scaled: Node,
}

fn cross_rows<T: Real>(tape: &mut Tape<T>, a: Node, b: Node) -> GradResult<Node> {
    let a_yzx = tape.select(a, 1, &[1, 2, 0])?;
    let b_zxy = tape.select(b, 1, &[2, 0, 1])?;
    let a_zxy = tape.select(a, 1, &[2, 0, 1])?;
    let b_yzx = tape.select(b, 1, &[1, 2, 0])?;
    let l = tape.mul(a_yzx, b_zxy)?;
    let r = tape.mul(a_zxy, b_yzx)?;
    tape.sub(l, r)
}

fn normalize_rows<T: Real>(tape: &mut Tape<T>, x: Node) -> GradResult<(Node, Vec<bool>)> {
    let sq = tape.square(x)?;
    let s = tape.sum_axis(sq, 1, true)?;
    let norm = tape.sqrt(s)?;
    let degenerate: Vec<bool> = tape
        .value(norm)
        .iter()
        .map(|&n| !(n > T::lit(2.0 * AREA_EPS)))
        .collect();
    let unit = tape.div(x, norm)?;
    if !degenerate.iter().any(|&d| d) {
        return Ok((unit, degenerate));
    }
    let rows = degenerate.len();
    let keep: Vec<T> = degenerate.iter().map(|&d| if d { T::zero() } else { T::one() }).collect();
    let fallback: Vec<T> = degenerate
        .iter()
        .flat_map(|&d| [T::zero(), T::zero(), if d { T::one() } else { T::zero() }])
        .collect();
    let keep = tape.constant(keep, &[rows, 1])?;
    let fallback = tape.constant(fallback, &[rows, 3])?;
    let kept = tape.mul(unit, keep)?;
    Ok((tape.add(kept, fallback)?, degenerate))
}

/// Normalized cross product of the edge vectors in winding order.
pub fn face_normals<T: Real>(tape: &mut Tape<T>, positions: Node, faces: &[[usize; 3]]) -> GradResult<FaceNormals> {
    let (ia, ib, ic) = split_corners(faces);
    let a = tape.select(positions, 0, &ia)?;
    let b = tape.select(positions, 0, &ib)?;
    let c = tape.select(positions, 0, &ic)?;
    let e1 = tape.sub(b, a)?;
    let e2 = tape.sub(c, a)?;
    let scaled = cross_rows(tape, e1, e2)?;
    let (normals, degenerate) = normalize_rows(tape, scaled)?;
    Ok(FaceNormals {
        normals,
        degenerate: degenerate.iter().filter(|&&d| d).count(),
        scaled,
    })
}

/// Area-weighted vertex normals, normalized.
pub fn vertex_normals<T: Real>(
    tape: &mut Tape<T>,
    positions: Node,
    faces: &[[usize; 3]],
    vertex_count: usize,
) -> GradResult<Node> {
    let fnormals = face_normals(tape, positions, faces)?;
    let (ia, ib, ic) = split_corners(faces);
    let stacked = tape.concat(&[fnormals.scaled, fnormals.scaled, fnormals.scaled], 0)?;
    let owners: Vec<usize> = ia.into_iter().chain(ib).chain(ic).collect();
    let summed = tape.scatter_add(stacked, &owners, vertex_count)?;
    Ok(normalize_rows(tape, summed)?.0)
}

fn split_corners(faces: &[[usize; 3]]) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    (
        faces.iter().map(|f| f[0]).collect(),
        faces.iter().map(|f| f[1]).collect(),
        faces.iter().map(|f| f[2]).collect(),
    )
}

/// Plain-array unit face normals; degenerate faces get +z.
pub fn face_normals_values<T: Real>(positions: &[[T; 3]], faces: &[[usize; 3]]) -> Vec<[T; 3]> {
    faces
        .iter()
        .map(|&[a, b, c]| {
            let n = cross3(super::sub3(positions[b], positions[a]), super::sub3(positions[c], positions[a]));
            let len = super::norm3(n);
            if len > T::lit(2.0 * AREA_EPS) {
                [n[0] / len, n[1] / len, n[2] / len]
            } else {
                [T::zero(), T::zero(), T::one()]
            }
        })
        .collect()
}
