use std::collections::HashMap;

use super::{cross3, dot3, sub3, Mesh};
use crate::real::Real;

/// Default prototype radii: elongated along y like a standing figure.
pub const DEFAULT_RADII: [f64; 3] = [0.45, 0.95, 0.25];

fn normalize<T: Real>(v: [T; 3]) -> [T; 3] {
    let n = dot3(v, v).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

/// Regular icosahedron inscribed in the unit sphere, symmetric under z → −z.
pub fn icosahedron<T: Real>() -> (Vec<[T; 3]>, Vec<[usize; 3]>) {
    let t = T::lit((1.0 + 5f64.sqrt()) / 2.0);
    let o = T::one();
    let z = T::zero();
    let raw = [
        [-o, t, z],
        [o, t, z],
        [-o, -t, z],
        [o, -t, z],
        [z, -o, t],
        [z, o, t],
        [z, -o, -t],
        [z, o, -t],
        [t, z, -o],
        [t, z, o],
        [-t, z, -o],
        [-t, z, o],
    ];
    let vertices = raw.iter().map(|&v| normalize(v)).collect();
    let faces = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    (vertices, faces)
}

/// Midpoint subdivision on the unit sphere. Shared edge midpoints are keyed
/// by their endpoint pair so each is created once.
fn subdivide<T: Real>(vertices: &mut Vec<[T; 3]>, faces: &[[usize; 3]]) -> Vec<[usize; 3]> {
    let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
    let mut midpoint = |a: usize, b: usize, vertices: &mut Vec<[T; 3]>| -> usize {
        let key = (a.min(b), a.max(b));
        *midpoints.entry(key).or_insert_with(|| {
            let (p, q) = (vertices[key.0], vertices[key.1]);
            vertices.push(normalize([p[0] + q[0], p[1] + q[1], p[2] + q[2]]));
            vertices.len() - 1
        })
    };
    let mut out = Vec::with_capacity(faces.len() * 4);
    for &[a, b, c] in faces {
        let ab = midpoint(a, b, vertices);
        let bc = midpoint(b, c, vertices);
        let ca = midpoint(c, a, vertices);
        out.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
    }
    out
}

/// Icosphere with `subdivisions` refinement levels, scaled per axis by `radii`.
///
/// Level k has `10·4^k + 2` vertices and `20·4^k` faces; level 3 gives the
/// 642-vertex / 1280-face prototype.
pub fn make_ellipsoid<T: Real>(subdivisions: usize, radii: [T; 3]) -> Mesh<T> {
    assert!(radii.iter().all(|&r| r > T::zero()), "radii must be positive");
    let (mut vertices, mut faces) = icosahedron::<T>();
    for _ in 0..subdivisions {
        faces = subdivide(&mut vertices, &faces);
    }
    // outward counter-clockwise winding
    for face in faces.iter_mut() {
        let [a, b, c] = *face;
        let n = cross3(sub3(vertices[b], vertices[a]), sub3(vertices[c], vertices[a]));
        let centroid = [
            vertices[a][0] + vertices[b][0] + vertices[c][0],
            vertices[a][1] + vertices[b][1] + vertices[c][1],
            vertices[a][2] + vertices[b][2] + vertices[c][2],
        ];
        if dot3(n, centroid) < T::zero() {
            face.swap(1, 2);
        }
    }
    let scaled = vertices
        .into_iter()
        .map(|v| [v[0] * radii[0], v[1] * radii[1], v[2] * radii[2]])
        .collect();
    Mesh::new(scaled, faces).expect("icosphere construction is valid")
}
