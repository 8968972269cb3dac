//! Triangle meshes, the ellipsoid prototype, differential-geometry queries and
//! Wavefront OBJ interchange.

mod ellipsoid;
mod geometry;
mod obj;

use std::collections::BTreeMap;

use thiserror::Error;

use crate::grad::GradError;
use crate::real::Real;

pub use ellipsoid::{icosahedron, make_ellipsoid, DEFAULT_RADII};
pub use geometry::{
    compose_shape, face_normals, face_normals_values, laplacian_coordinates,
    laplacian_coordinates_values, vertex_normals, FaceNormals, LaplacianStencil,
};
pub use obj::{obj_read, obj_write, parse_obj, write_obj, ObjData, ObjError};

/// Faces with area at or below this are degenerate.
pub const AREA_EPS: f64 = 1e-12;
/// Tolerance used to pair a vertex with its depth reflection.
pub const MIRROR_TOL: f64 = 1e-6;
/// Vertices this close to the z = 0 plane are their own mirror partner.
pub const SELF_MIRROR_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("face {face} references vertex {index} but the mesh has {count} vertices")]
    IndexOutOfRange {
        face: usize,
        index: usize,
        count: usize,
    },
    #[error("face {face} is degenerate (area {area:e})")]
    DegenerateFace { face: usize, area: f64 },
    #[error("vertex {vertex} has no neighbors")]
    IsolatedVertex { vertex: usize },
    #[error("expected {expected} vertices, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Obj(#[from] ObjError),
    #[error(transparent)]
    Grad(#[from] GradError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Two faces sharing an edge. `edge` is stored with the lower index first.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FacePair {
    pub a: usize,
    pub b: usize,
    pub edge: [usize; 2],
}

/// Immutable triangle mesh with cached adjacency.
///
/// Faces wind counter-clockwise seen from outside. Topology never changes
/// after construction; [`Mesh::with_vertices`] swaps positions only.
#[derive(Debug, Clone)]
pub struct Mesh<T> {
    vertices: Vec<[T; 3]>,
    faces: Vec<[usize; 3]>,
    neighbors: Vec<Vec<usize>>,
    face_pairs: Vec<FacePair>,
    mirror: Vec<usize>,
    edge_count: usize,
    boundary_edges: usize,
}

pub(crate) fn triangle_area<T: Real>(a: [T; 3], b: [T; 3], c: [T; 3]) -> T {
    let e1 = sub3(b, a);
    let e2 = sub3(c, a);
    norm3(cross3(e1, e2)) * T::lit(0.5)
}

pub(crate) fn sub3<T: Real>(a: [T; 3], b: [T; 3]) -> [T; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn cross3<T: Real>(a: [T; 3], b: [T; 3]) -> [T; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn dot3<T: Real>(a: [T; 3], b: [T; 3]) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn norm3<T: Real>(a: [T; 3]) -> T {
    dot3(a, a).sqrt()
}

impl<T: Real> Mesh<T> {
    /// Validates indices and areas, then derives adjacency and the mirror table.
    pub fn new(vertices: Vec<[T; 3]>, faces: Vec<[usize; 3]>) -> Result<Self, MeshError> {
        let count = vertices.len();
        for (f, face) in faces.iter().enumerate() {
            if let Some(&index) = face.iter().find(|&&i| i >= count) {
                return Err(MeshError::IndexOutOfRange { face: f, index, count });
            }
            let area = triangle_area(vertices[face[0]], vertices[face[1]], vertices[face[2]]);
            if !(area > T::lit(AREA_EPS)) {
                return Err(MeshError::DegenerateFace {
                    face: f,
                    area: area.to_f64_lossy(),
                });
            }
        }

        let mut neighbors = vec![Vec::new(); count];
        let mut edges: BTreeMap<[usize; 2], Vec<usize>> = BTreeMap::new();
        for (f, &[a, b, c]) in faces.iter().enumerate() {
            for (p, q) in [(a, b), (b, c), (c, a)] {
                neighbors[p].push(q);
                neighbors[q].push(p);
                edges.entry([p.min(q), p.max(q)]).or_default().push(f);
            }
        }
        for (v, list) in neighbors.iter_mut().enumerate() {
            list.sort_unstable();
            list.dedup();
            if list.is_empty() {
                return Err(MeshError::IsolatedVertex { vertex: v });
            }
        }

        let mut face_pairs = Vec::new();
        let mut boundary_edges = 0;
        for (edge, owners) in &edges {
            if owners.len() == 1 {
                boundary_edges += 1;
            }
            for w in owners.windows(2) {
                face_pairs.push(FacePair {
                    a: w[0],
                    b: w[1],
                    edge: *edge,
                });
            }
        }

        let mirror = mirror_table(&vertices);
        Ok(Self {
            vertices,
            faces,
            neighbors,
            face_pairs,
            mirror,
            edge_count: edges.len(),
            boundary_edges,
        })
    }

    pub fn vertices(&self) -> &[[T; 3]] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    /// K(p): sorted indices of vertices sharing an edge with `p`.
    pub fn neighbors(&self) -> &[Vec<usize>] {
        &self.neighbors
    }

    pub fn face_pairs(&self) -> &[FacePair] {
        &self.face_pairs
    }

    /// Index of the depth-reflected partner of every vertex.
    pub fn mirror_pairs(&self) -> &[usize] {
        &self.mirror
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn euler_characteristic(&self) -> isize {
        self.vertices.len() as isize - self.edge_count as isize + self.faces.len() as isize
    }

    /// Every edge is shared by exactly two faces.
    pub fn is_closed_manifold(&self) -> bool {
        self.boundary_edges == 0 && self.face_pairs.len() == self.edge_count
    }

    /// Row-major `V×3` copy of the positions.
    pub fn flat_vertices(&self) -> Vec<T> {
        self.vertices.iter().flatten().copied().collect()
    }

    /// Same topology and mirror table with new positions.
    pub fn with_vertices(&self, vertices: Vec<[T; 3]>) -> Result<Self, MeshError> {
        if vertices.len() != self.vertices.len() {
            return Err(MeshError::DimensionMismatch {
                expected: self.vertices.len(),
                got: vertices.len(),
            });
        }
        Ok(Self {
            vertices,
            ..self.clone()
        })
    }

    pub fn laplacian_stencil(&self) -> LaplacianStencil<T> {
        LaplacianStencil::new(&self.neighbors)
    }
}

/// Pairs each vertex with the vertex at (x, y, −z). Vertices near z = 0 and
/// vertices with no partner map to themselves, so the table is an involution.
fn mirror_table<T: Real>(vertices: &[[T; 3]]) -> Vec<usize> {
    let tol = T::lit(MIRROR_TOL);
    let mut order: Vec<usize> = (0..vertices.len()).collect();
    order.sort_by(|&a, &b| {
        vertices[a][0]
            .partial_cmp(&vertices[b][0])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let xs: Vec<T> = order.iter().map(|&i| vertices[i][0]).collect();

    let mut mirror: Vec<usize> = (0..vertices.len()).collect();
    for (v, p) in vertices.iter().enumerate() {
        if p[2].abs() < T::lit(SELF_MIRROR_EPS) || mirror[v] != v {
            continue;
        }
        let start = xs.partition_point(|&x| x < p[0] - tol);
        let mut best: Option<(usize, T)> = None;
        for &cand in order[start..].iter() {
            let q = vertices[cand];
            if q[0] > p[0] + tol {
                break;
            }
            if cand == v || mirror[cand] != cand {
                continue;
            }
            let d = (q[0] - p[0])
                .abs()
                .max((q[1] - p[1]).abs())
                .max((q[2] + p[2]).abs());
            if d <= tol && best.map_or(true, |(_, bd)| d < bd) {
                best = Some((cand, d));
            }
        }
        if let Some((cand, _)) = best {
            mirror[v] = cand;
            mirror[cand] = v;
        }
    }
    mirror
}
