//! The five-parameter camera and differentiable perspective projection.
//!
//! The camera orbits the origin: `eye = distance · (cos φ sin θ, sin φ, cos φ cos θ)`
//! with azimuth θ and elevation φ, looking at the origin with +y up. On the
//! tape a camera is a 5-vector `[distance, azimuth (rad), elevation (rad),
//! offset_x, offset_y]`; [`CameraParams`] is the degree-valued form used in
//! files and reports.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grad::{GradResult, Node, Tape};
use crate::real::Real;

/// Elevation is clamped to ± this many degrees inside the view transform.
pub const ELEVATION_LIMIT_DEG: f64 = 89.9;
/// View depth below which a vertex is clamped (and counted).
pub const NEAR_PLANE: f64 = 0.05;
/// Distance floor applied after each optimizer step.
pub const MIN_DISTANCE: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CameraError {
    #[error("field of view must lie in (0, 180) degrees, got {0}")]
    FieldOfView(f64),
    #[error("image must be at least 8×8 pixels, got {width}×{height}")]
    ImageTooSmall { width: usize, height: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraParams<T> {
    pub distance: T,
    /// degrees
    pub azimuth: T,
    /// degrees
    pub elevation: T,
    pub offset_x: T,
    pub offset_y: T,
}

/// Wraps an angle in degrees into (−180, 180]. In-range values are returned
/// untouched.
pub fn wrap_degrees<T: Real>(angle: T) -> T {
    let half = T::lit(180.0);
    let full = T::lit(360.0);
    if angle > -half && angle <= half {
        return angle;
    }
    let mut r = angle % full;
    if r <= -half {
        r = r + full;
    } else if r > half {
        r = r - full;
    }
    r
}

impl<T: Real> CameraParams<T> {
    pub fn new(distance: T, azimuth: T, elevation: T) -> Self {
        Self {
            distance,
            azimuth,
            elevation,
            offset_x: T::zero(),
            offset_y: T::zero(),
        }
    }

    /// Tape layout `[distance, azimuth rad, elevation rad, offset_x, offset_y]`,
    /// with the azimuth wrapped first.
    pub fn to_vector(&self) -> [T; 5] {
        [
            self.distance,
            wrap_degrees(self.azimuth).to_radians(),
            self.elevation.to_radians(),
            self.offset_x,
            self.offset_y,
        ]
    }

    pub fn from_vector(v: [T; 5]) -> Self {
        Self {
            distance: v[0],
            azimuth: wrap_degrees(v[1].to_degrees()),
            elevation: v[2].to_degrees(),
            offset_x: v[3],
            offset_y: v[4],
        }
    }

    pub fn eye_position(&self) -> [T; 3] {
        let th = self.azimuth.to_radians();
        let ph = self
            .elevation
            .max(T::lit(-ELEVATION_LIMIT_DEG))
            .min(T::lit(ELEVATION_LIMIT_DEG))
            .to_radians();
        [
            self.distance * ph.cos() * th.sin(),
            self.distance * ph.sin(),
            self.distance * ph.cos() * th.cos(),
        ]
    }

    /// Same parameters with the distance floor and angle wrapping applied.
    pub fn reprojected(mut self) -> Self {
        self.distance = self.distance.max(T::lit(MIN_DISTANCE));
        self.azimuth = wrap_degrees(self.azimuth);
        self
    }
}

impl<T: Real> Default for CameraParams<T> {
    fn default() -> Self {
        Self::new(T::lit(2.5), T::zero(), T::zero())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics<T> {
    /// vertical field of view, degrees
    pub fov_y: T,
    pub width: usize,
    pub height: usize,
}

impl<T: Real> Intrinsics<T> {
    pub fn new(fov_y: T, width: usize, height: usize) -> Result<Self, CameraError> {
        let k = Self { fov_y, width, height };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        if !(self.fov_y > T::zero() && self.fov_y < T::lit(180.0)) {
            return Err(CameraError::FieldOfView(self.fov_y.to_f64_lossy()));
        }
        if self.width < 8 || self.height < 8 {
            return Err(CameraError::ImageTooSmall {
                width: self.width,
                height: self.height,
            });
        }
        Ok(())
    }

    pub fn focal(&self) -> T {
        T::one() / (self.fov_y.to_radians() * T::lit(0.5)).tan()
    }

    pub fn aspect(&self) -> T {
        T::lit(self.width as f64) / T::lit(self.height as f64)
    }
}

/// Camera frame on the tape: `right`, `up` and `back` (eye direction) as
/// 3-vectors, all functions of the camera parameters.
#[derive(Debug, Clone, Copy)]
pub struct CameraBasis {
    pub right: Node,
    pub up: Node,
    pub back: Node,
}

#[derive(Debug, Clone, Copy)]
pub struct Projection {
    /// NDC x per vertex, offset included
    pub x: Node,
    /// NDC y per vertex, offset included
    pub y: Node,
    /// view-space depth per vertex (positive in front of the camera)
    pub depth: Node,
    /// `V×3` stack of (x, y, depth)
    pub ndc: Node,
    pub basis: CameraBasis,
    /// vertices clamped to the near plane
    pub near_clamped: usize,
}

/// Orthonormal camera frame from the tape camera vector.
pub fn camera_basis<T: Real>(tape: &mut Tape<T>, camera: Node) -> GradResult<CameraBasis> {
    let limit = T::lit(ELEVATION_LIMIT_DEG).to_radians();
    let az = tape.select(camera, 0, &[1])?;
    let el_raw = tape.select(camera, 0, &[2])?;
    let el = tape.clamp(el_raw, -limit, limit)?;
    let st = tape.sin(az)?;
    let ct = tape.cos(az)?;
    let sp = tape.sin(el)?;
    let cp = tape.cos(el)?;

    let cp_st = tape.mul(cp, st)?;
    let cp_ct = tape.mul(cp, ct)?;
    let back = tape.concat(&[cp_st, sp, cp_ct], 0)?;

    let zero = tape.constant(vec![T::zero()], &[1])?;
    let neg_st = tape.neg(st)?;
    let right = tape.concat(&[ct, zero, neg_st], 0)?;

    let sp_st = tape.mul(sp, st)?;
    let sp_ct = tape.mul(sp, ct)?;
    let a = tape.neg(sp_st)?;
    let c = tape.neg(sp_ct)?;
    let up = tape.concat(&[a, cp, c], 0)?;
    Ok(CameraBasis { right, up, back })
}

/// Row-wise dot product of `V×3` positions with a 3-vector.
pub(crate) fn dot_rows<T: Real>(tape: &mut Tape<T>, rows: Node, axis: Node) -> GradResult<Node> {
    let prod = tape.mul(rows, axis)?;
    tape.sum_axis(prod, 1, false)
}

/// Look-at view transform, perspective divide, aspect correction, then the
/// additive NDC offset.
pub fn project<T: Real>(
    tape: &mut Tape<T>,
    positions: Node,
    camera: Node,
    intrinsics: &Intrinsics<T>,
) -> GradResult<Projection> {
    let basis = camera_basis(tape, camera)?;
    let distance = tape.select(camera, 0, &[0])?;
    let ox = tape.select(camera, 0, &[3])?;
    let oy = tape.select(camera, 0, &[4])?;

    let xv = dot_rows(tape, positions, basis.right)?;
    let yv = dot_rows(tape, positions, basis.up)?;
    let zv = dot_rows(tape, positions, basis.back)?;
    let raw_depth = tape.sub(distance, zv)?;
    let near = T::lit(NEAR_PLANE);
    let near_clamped = tape.value(raw_depth).iter().filter(|&&d| d < near).count();
    let depth = if near_clamped > 0 {
        let floor = tape.scalar(near)?;
        tape.max2(raw_depth, floor)?
    } else {
        raw_depth
    };

    let focal = intrinsics.focal();
    let px = tape.div(xv, depth)?;
    let px = tape.scale(px, focal / intrinsics.aspect())?;
    let x = tape.add(px, ox)?;
    let py = tape.div(yv, depth)?;
    let py = tape.scale(py, focal)?;
    let y = tape.add(py, oy)?;

    let v = tape.shape(x)[0];
    let cols = [x, y, depth]
        .into_iter()
        .map(|c| tape.reshape(c, &[v, 1]))
        .collect::<GradResult<Vec<_>>>()?;
    let ndc = tape.concat(&cols, 1)?;
    Ok(Projection {
        x,
        y,
        depth,
        ndc,
        basis,
        near_clamped,
    })
}

/// Convenience: project constant positions with constant camera parameters.
pub fn project_values<T: Real>(
    positions: &[[T; 3]],
    camera: &CameraParams<T>,
    intrinsics: &Intrinsics<T>,
) -> GradResult<Vec<[T; 3]>> {
    let mut tape = Tape::new();
    let p = tape.constant(positions.iter().flatten().copied().collect(), &[positions.len(), 3])?;
    let c = tape.constant(camera.to_vector().to_vec(), &[5])?;
    let proj = project(&mut tape, p, c, intrinsics)?;
    Ok(tape
        .value(proj.ndc)
        .chunks(3)
        .map(|r| [r[0], r[1], r[2]])
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grad::grad_check;
    use crate::mesh::{make_ellipsoid, DEFAULT_RADII};

    type F = f64;

    fn intr() -> Intrinsics<F> {
        Intrinsics::new(30.0, 64, 64).unwrap()
    }

    /// Independent look-at built from cross products of eye and up.
    fn oracle_project(p: [F; 3], c: &CameraParams<F>, k: &Intrinsics<F>) -> [F; 3] {
        let eye = c.eye_position();
        let n = (eye[0] * eye[0] + eye[1] * eye[1] + eye[2] * eye[2]).sqrt();
        let back = eye.map(|e| e / n);
        let up0 = [0.0, 1.0, 0.0];
        let r = [
            up0[1] * back[2] - up0[2] * back[1],
            up0[2] * back[0] - up0[0] * back[2],
            up0[0] * back[1] - up0[1] * back[0],
        ];
        let rn = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
        let right = r.map(|x| x / rn);
        let up = [
            back[1] * right[2] - back[2] * right[1],
            back[2] * right[0] - back[0] * right[2],
            back[0] * right[1] - back[1] * right[0],
        ];
        let rel = [p[0] - eye[0], p[1] - eye[1], p[2] - eye[2]];
        let dot = |a: [F; 3], b: [F; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
        let depth = -dot(rel, back);
        let f = 1.0 / (k.fov_y.to_radians() / 2.0).tan();
        [
            f / k.aspect() * dot(rel, right) / depth + c.offset_x,
            f * dot(rel, up) / depth + c.offset_y,
            depth,
        ]
    }

    #[test]
    fn eye_position_anchors() {
        let e = CameraParams::<F>::new(2.5, 0.0, 0.0).eye_position();
        assert_eq!(e, [0.0, 0.0, 2.5]);
        let e = CameraParams::<F>::new(1.0, 90.0, 0.0).eye_position();
        assert!((e[0] - 1.0).abs() < 1e-15 && e[1].abs() < 1e-15 && e[2].abs() < 1e-15);
    }

    #[test]
    fn top_down_view_stays_finite() {
        let c = CameraParams::<F>::new(2.0, 0.0, 90.0);
        let out = project_values(&[[0.1, 0.2, 0.3]], &c, &intr()).unwrap();
        assert!(out[0].iter().all(|v| v.is_finite()));
    }

    #[test]
    fn origin_projects_to_offset() {
        let mut c = CameraParams::<F>::new(3.0, 37.0, -12.0);
        c.offset_x = 0.2;
        c.offset_y = -0.1;
        let out = project_values(&[[0.0, 0.0, 0.0]], &c, &intr()).unwrap();
        assert!((out[0][0] - 0.2).abs() < 1e-15);
        assert!((out[0][1] + 0.1).abs() < 1e-15);
        assert!((out[0][2] - 3.0).abs() < 1e-15);
    }

    #[test]
    fn matches_independent_look_at() {
        let m = make_ellipsoid::<F>(1, DEFAULT_RADII);
        let k = Intrinsics::new(30.0, 128, 64).unwrap();
        for c in [
            CameraParams::new(2.5, 0.0, 0.0),
            CameraParams { distance: 3.1, azimuth: -130.0, elevation: 20.0, offset_x: 0.05, offset_y: -0.2 },
            CameraParams::new(2.0, 75.0, -45.0),
        ] {
            let ours = project_values(m.vertices(), &c, &k).unwrap();
            for (p, got) in m.vertices().iter().zip(ours) {
                let want = oracle_project(*p, &c, &k);
                for d in 0..3 {
                    assert!((got[d] - want[d]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn doubling_distance_halves_small_extent() {
        let pts = [[0.01, 0.0, 0.0], [-0.01, 0.0, 0.0]];
        let k = intr();
        let extent = |d: F| {
            let c = CameraParams::new(d, 0.0, 0.0);
            let a = oracle_project(pts[0], &c, &k);
            let b = oracle_project(pts[1], &c, &k);
            a[0] - b[0]
        };
        let near = project_values(&pts, &CameraParams::new(2.0, 0.0, 0.0), &k).unwrap();
        let far = project_values(&pts, &CameraParams::new(4.0, 0.0, 0.0), &k).unwrap();
        let e1 = near[0][0] - near[1][0];
        let e2 = far[0][0] - far[1][0];
        assert!((e1 - extent(2.0)).abs() < 1e-14 && (e2 - extent(4.0)).abs() < 1e-14);
        assert!((e2 / e1 - 0.5).abs() < 1e-3);
    }

    #[test]
    fn opposite_azimuths_negate_mirror_pair_x() {
        let m = make_ellipsoid::<F>(2, DEFAULT_RADII);
        let k = intr();
        let mirror = m.mirror_pairs();
        // depth-mirror pairs swap sides between θ and 180° − θ
        let a = project_values(m.vertices(), &CameraParams::new(2.5, 35.0, 0.0), &k).unwrap();
        let b = project_values(m.vertices(), &CameraParams::new(2.5, 145.0, 0.0), &k).unwrap();
        for (p, &q) in mirror.iter().enumerate() {
            assert!((a[p][0] + b[q][0]).abs() < 1e-12);
            assert!((a[p][1] - b[q][1]).abs() < 1e-12);
        }
        // pairs reflected in x swap sides between θ and −θ
        let c = project_values(m.vertices(), &CameraParams::new(2.5, -35.0, 0.0), &k).unwrap();
        for (p, v) in m.vertices().iter().enumerate() {
            let xp = m
                .vertices()
                .iter()
                .position(|q| (q[0] + v[0]).abs() < 1e-9 && (q[1] - v[1]).abs() < 1e-9 && (q[2] - v[2]).abs() < 1e-9)
                .unwrap();
            assert!((a[p][0] + c[xp][0]).abs() < 1e-12);
            assert!((a[p][1] - c[xp][1]).abs() < 1e-12);
        }
    }

    #[test]
    fn azimuth_full_turn_is_bit_exact() {
        let m = make_ellipsoid::<F>(1, DEFAULT_RADII);
        let k = intr();
        for az in [0.0, 30.0, 45.5, -170.0, 180.0] {
            let a = project_values(m.vertices(), &CameraParams::new(2.5, az, 10.0), &k).unwrap();
            let b = project_values(m.vertices(), &CameraParams::new(2.5, az + 360.0, 10.0), &k).unwrap();
            assert_eq!(a, b, "azimuth {az}");
        }
        assert_eq!(wrap_degrees(-180.0f64), 180.0);
        assert_eq!(wrap_degrees(540.0f64), 180.0);
        assert_eq!(wrap_degrees(-190.0f64), 170.0);
    }

    #[test]
    fn offset_jacobian_is_identity() {
        let m = make_ellipsoid::<F>(0, DEFAULT_RADII);
        let k = intr();
        let mut tape = Tape::new();
        let p = tape.constant(m.flat_vertices(), &[12, 3]).unwrap();
        let c = tape.leaf(CameraParams::new(2.5, 20.0, 5.0).to_vector().to_vec(), &[5], true).unwrap();
        let proj = project(&mut tape, p, c, &k).unwrap();
        for v in 0..12 {
            let xv = tape.select(proj.x, 0, &[v]).unwrap();
            let sx = tape.sum(xv).unwrap();
            let g = tape.backward(sx).unwrap();
            let gc = g.get(c).unwrap();
            assert_eq!((gc[3], gc[4]), (1.0, 0.0));
            let yv = tape.select(proj.y, 0, &[v]).unwrap();
            let sy = tape.sum(yv).unwrap();
            let g = tape.backward(sy).unwrap();
            let gc = g.get(c).unwrap();
            assert_eq!((gc[3], gc[4]), (0.0, 1.0));
        }
    }

    #[test]
    fn projection_gradients_match_central_differences() {
        let m = make_ellipsoid::<F>(0, DEFAULT_RADII);
        let k = Intrinsics::new(30.0, 96, 64).unwrap();
        let verts = m.flat_vertices();
        let w: Vec<F> = (0..36).map(|i| ((i * 3 % 5) as F - 2.0) * 0.3).collect();
        let cam = CameraParams { distance: 2.7, azimuth: 25.0, elevation: 8.0, offset_x: 0.1, offset_y: -0.05 };
        let r = grad_check(
            |t, c| {
                let p = t.constant(verts.clone(), &[12, 3])?;
                let proj = project(t, p, c, &k)?;
                let wn = t.constant(w.clone(), &[12, 3])?;
                let y = t.mul(proj.ndc, wn)?;
                t.sum(y)
            },
            &cam.to_vector(),
            &[5],
            1e-6,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-6, "{}", r.max_rel_error);
        let cv = cam.to_vector().to_vec();
        let r = grad_check(
            |t, p| {
                let c = t.constant(cv.clone(), &[5])?;
                let proj = project(t, p, c, &k)?;
                let wn = t.constant(w.clone(), &[12, 3])?;
                let y = t.mul(proj.ndc, wn)?;
                t.sum(y)
            },
            &verts,
            &[12, 3],
            1e-6,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-6, "{}", r.max_rel_error);
    }

    #[test]
    fn near_plane_clamps_and_counts() {
        let c = CameraParams::<F>::new(1.0, 0.0, 0.0);
        let mut tape = Tape::new();
        let p = tape.constant(vec![0.0, 0.0, 0.99, 0.0, 0.0, 0.0], &[2, 3]).unwrap();
        let cv = tape.constant(c.to_vector().to_vec(), &[5]).unwrap();
        let proj = project(&mut tape, p, cv, &intr()).unwrap();
        assert_eq!(proj.near_clamped, 1);
        assert_eq!(tape.value(proj.depth)[0], NEAR_PLANE);
    }

    #[test]
    fn intrinsics_validation() {
        assert!(Intrinsics::<F>::new(0.0, 64, 64).is_err());
        assert!(Intrinsics::<F>::new(180.0, 64, 64).is_err());
        assert!(Intrinsics::<F>::new(30.0, 4, 64).is_err());
    }
}
