use serde::{Deserialize, Serialize};

use crate::grad::{GradResult, Node, Tape};
use crate::real::Real;

/// Real spherical-harmonics normalization constants, bands 0..2.
///
/// C0 = 1/(2√π), C1 = √3/(2√π), C2 = √15/(2√π), C3 = √5/(4√π), C4 = √15/(4√π).
pub const SH_C0: f64 = 0.282_094_791_773_878_14;
pub const SH_C1: f64 = 0.488_602_511_902_919_9;
pub const SH_C2: f64 = 1.092_548_430_592_079_2;
pub const SH_C3: f64 = 0.315_391_565_252_520_05;
pub const SH_C4: f64 = 0.546_274_215_296_039_6;

/// Normals further than this from unit length are flagged when renormalized.
pub const UNIT_TOLERANCE: f64 = 1e-3;

/// Nine SH lighting coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShLight<T> {
    pub coeffs: [T; 9],
}

impl<T: Real> ShLight<T> {
    /// Constant light with shading factor exactly 1 everywhere.
    pub fn dc_only() -> Self {
        let mut coeffs = [T::zero(); 9];
        coeffs[0] = T::one() / T::lit(SH_C0);
        Self { coeffs }
    }
}

impl<T: Real> Default for ShLight<T> {
    fn default() -> Self {
        Self::dc_only()
    }
}

/// Basis ordered Y00; Y1−1, Y10, Y11; Y2−2, Y2−1, Y20, Y21, Y22.
pub fn sh_basis<T: Real>(normal: [T; 3]) -> [T; 9] {
    sh_basis_checked(normal).0
}

/// [`sh_basis`] plus whether the input had to be renormalized by more than
/// [`UNIT_TOLERANCE`].
pub fn sh_basis_checked<T: Real>(normal: [T; 3]) -> ([T; 9], bool) {
    let len = (normal[0] * normal[0] + normal[1] * normal[1] + normal[2] * normal[2]).sqrt();
    let flagged = (len - T::one()).abs() > T::lit(UNIT_TOLERANCE);
    let [x, y, z] = if (len - T::one()).abs() > T::lit(1e-6) && len > T::zero() {
        normal.map(|c| c / len)
    } else {
        normal
    };
    let c = |v: f64| T::lit(v);
    (
        [
            c(SH_C0),
            c(SH_C1) * y,
            c(SH_C1) * z,
            c(SH_C1) * x,
            c(SH_C2) * x * y,
            c(SH_C2) * y * z,
            c(SH_C3) * (T::lit(3.0) * z * z - T::one()),
            c(SH_C2) * x * z,
            c(SH_C4) * (x * x - y * y),
        ],
        flagged,
    )
}

/// `albedo · max(⟨basis(normal), coeffs⟩, 0)`.
pub fn shade<T: Real>(albedo: [T; 3], normal: [T; 3], light: &ShLight<T>) -> [T; 3] {
    let b = sh_basis(normal);
    let irradiance: T = b.iter().zip(&light.coeffs).map(|(&a, &c)| a * c).sum();
    let s = irradiance.max(T::zero());
    albedo.map(|a| a * s)
}

/// SH basis rows for `N×3` unit normals on the tape → `N×9`.
pub fn sh_basis_rows<T: Real>(tape: &mut Tape<T>, normals: Node) -> GradResult<Node> {
    let n = tape.shape(normals)[0];
    let x = tape.select(normals, 1, &[0])?;
    let y = tape.select(normals, 1, &[1])?;
    let z = tape.select(normals, 1, &[2])?;
    let c0 = tape.constant(vec![T::lit(SH_C0); n], &[n, 1])?;
    let y1 = tape.scale(y, T::lit(SH_C1))?;
    let z1 = tape.scale(z, T::lit(SH_C1))?;
    let x1 = tape.scale(x, T::lit(SH_C1))?;
    let xy = tape.mul(x, y)?;
    let xy = tape.scale(xy, T::lit(SH_C2))?;
    let yz = tape.mul(y, z)?;
    let yz = tape.scale(yz, T::lit(SH_C2))?;
    let zz = tape.square(z)?;
    let zz = tape.scale(zz, T::lit(3.0 * SH_C3))?;
    let z20 = tape.add_scalar(zz, T::lit(-SH_C3))?;
    let xz = tape.mul(x, z)?;
    let xz = tape.scale(xz, T::lit(SH_C2))?;
    let xx = tape.square(x)?;
    let yy = tape.square(y)?;
    let d = tape.sub(xx, yy)?;
    let x2y2 = tape.scale(d, T::lit(SH_C4))?;
    tape.concat(&[c0, y1, z1, x1, xy, yz, z20, xz, x2y2], 1)
}

/// Clamped irradiance `max(⟨basis, light⟩, 0)` per row → `N×1`.
pub fn irradiance<T: Real>(tape: &mut Tape<T>, normals: Node, light: Node) -> GradResult<Node> {
    let basis = sh_basis_rows(tape, normals)?;
    let prod = tape.mul(basis, light)?;
    let e = tape.sum_axis(prod, 1, true)?;
    tape.clamp(e, T::zero(), T::infinity())
}

/// Differentiable [`shade`] over rows: `N×3` albedo, `N×3` unit normals, 9 coefficients.
pub fn shade_rows<T: Real>(tape: &mut Tape<T>, albedo: Node, normals: Node, light: Node) -> GradResult<Node> {
    let e = irradiance(tape, normals, light)?;
    tape.mul(albedo, e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grad::grad_check;

    type F = f64;

    fn fibonacci_sphere(n: usize) -> Vec<[F; 3]> {
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        (0..n)
            .map(|i| {
                let y = 1.0 - 2.0 * (i as F + 0.5) / n as F;
                let r = (1.0 - y * y).sqrt();
                let th = golden * i as F;
                [r * th.cos(), y, r * th.sin()]
            })
            .collect()
    }

    #[test]
    fn constant_term() {
        for n in [[0.0, 0.0, 1.0], [0.6, 0.8, 0.0], [-1.0, 0.0, 0.0]] {
            assert!((sh_basis::<F>(n)[0] - 0.282_094_791_8).abs() < 1e-10);
        }
        assert!((SH_C0 - 1.0 / (2.0 * std::f64::consts::PI.sqrt())).abs() < 1e-16);
        assert!((SH_C1 - 3f64.sqrt() / (2.0 * std::f64::consts::PI.sqrt())).abs() < 1e-15);
        assert!((SH_C2 - 15f64.sqrt() / (2.0 * std::f64::consts::PI.sqrt())).abs() < 1e-15);
        assert!((SH_C3 - 5f64.sqrt() / (4.0 * std::f64::consts::PI.sqrt())).abs() < 1e-15);
        assert!((SH_C4 - 15f64.sqrt() / (4.0 * std::f64::consts::PI.sqrt())).abs() < 1e-15);
    }

    #[test]
    fn axis_aligned_normal_keeps_only_z_band_one() {
        let b = sh_basis::<F>([0.0, 0.0, 1.0]);
        assert_eq!(b[1], 0.0);
        assert_eq!(b[3], 0.0);
        assert!(b[2] > 0.0);
    }

    #[test]
    fn band_one_cross_terms_are_orthogonal() {
        let pts = fibonacci_sphere(1000);
        let mean: F = pts.iter().map(|&n| {
            let b = sh_basis(n);
            b[3] * b[1]
        }).sum::<F>() / pts.len() as F;
        assert!(mean.abs() < 1e-3, "{mean}");
        // and Y00 is normalized: mean of Y00² times 4π is 1
        let norm: F = pts.iter().map(|&n| sh_basis(n)[0].powi(2)).sum::<F>() / 1000.0 * 4.0 * std::f64::consts::PI;
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn off_unit_normal_is_renormalized_and_flagged() {
        let (b, flagged) = sh_basis_checked::<F>([0.0, 0.0, 2.0]);
        assert!(flagged);
        assert_eq!(b, sh_basis([0.0, 0.0, 1.0]));
        let (_, flagged) = sh_basis_checked::<F>([0.0, 0.0, 1.0 + 1e-5]);
        assert!(!flagged);
    }

    #[test]
    fn shade_anchors() {
        let albedo = [0.2, 0.5, 0.9];
        let n = [0.3, -0.4, (1.0f64 - 0.25).sqrt()];
        let lit = shade(albedo, n, &ShLight::dc_only());
        for (a, b) in lit.iter().zip(albedo) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(shade(albedo, n, &ShLight { coeffs: [0.0; 9] }), [0.0; 3]);

        let mut coeffs = [0.0; 9];
        coeffs[1] = 1.5;
        let light = ShLight { coeffs };
        let up = sh_basis::<F>([0.0, 1.0, 0.0])[1] * 1.5;
        let down = sh_basis::<F>([0.0, -1.0, 0.0])[1] * 1.5;
        assert!(up > 0.0 && down < 0.0);
        assert_eq!(shade([1.0; 3], [0.0, -1.0, 0.0], &light), [0.0; 3]);
        assert!((shade([1.0; 3], [0.0, 1.0, 0.0], &light)[0] - up).abs() < 1e-15);
    }

    #[test]
    fn shading_is_homogeneous_above_the_clamp() {
        let light = ShLight { coeffs: [2.0, 0.3, 0.5, -0.2, 0.1, 0.0, 0.05, -0.1, 0.2] };
        let doubled = ShLight { coeffs: light.coeffs.map(|c| 2.0 * c) };
        for n in fibonacci_sphere(50) {
            let a = shade([0.4, 0.6, 0.8], n, &light);
            let b = shade([0.4, 0.6, 0.8], n, &doubled);
            if a[0] > 0.0 {
                for d in 0..3 {
                    assert!((b[d] - 2.0 * a[d]).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn tape_shading_matches_plain_and_central_differences() {
        let normals: Vec<[F; 3]> = fibonacci_sphere(7);
        let light = [1.8, 0.4, 0.9, -0.3, 0.2, 0.1, 0.15, -0.25, 0.3];
        let albedo: Vec<F> = (0..21).map(|i| 0.1 + 0.04 * i as F).collect();
        let mut tape = Tape::<F>::new();
        let a = tape.constant(albedo.clone(), &[7, 3]).unwrap();
        let n = tape.constant(normals.iter().flatten().copied().collect(), &[7, 3]).unwrap();
        let l = tape.constant(light.to_vec(), &[9]).unwrap();
        let c = shade_rows(&mut tape, a, n, l).unwrap();
        for i in 0..7 {
            let want = shade([albedo[3 * i], albedo[3 * i + 1], albedo[3 * i + 2]], normals[i], &ShLight { coeffs: light });
            for d in 0..3 {
                assert!((tape.value(c)[3 * i + d] - want[d]).abs() < 1e-14);
            }
        }

        let flat_normals: Vec<F> = normals.iter().flatten().copied().collect();
        let r = grad_check(
            |t, l| {
                let a = t.constant(albedo.clone(), &[7, 3])?;
                let n = t.constant(flat_normals.clone(), &[7, 3])?;
                let c = shade_rows(t, a, n, l)?;
                t.sum(c)
            },
            &light,
            &[9],
            1e-5,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-3);
        let r = grad_check(
            |t, n| {
                let a = t.constant(albedo.clone(), &[7, 3])?;
                let l = t.constant(light.to_vec(), &[9])?;
                let c = shade_rows(t, a, n, l)?;
                t.sum(c)
            },
            &flat_normals,
            &[7, 3],
            1e-5,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-3);
    }
}
