use proptest::prelude::*;
use recon_core::appearance::{flow_to_atlas, front_back_uv, sample_atlas, sh_basis, shade, ShLight};
use recon_core::camera::{project, project_values, CameraParams, Intrinsics};
use recon_core::mesh::{laplacian_coordinates_values, make_ellipsoid};
use recon_core::objective::{loss_deform, loss_laplacian, loss_sym, DeformNorm};
use recon_core::render::{render_frame, RenderSettings, Scene};
use recon_core::{Mesh, Tape};

fn unit(v: [f64; 3]) -> Option<[f64; 3]> {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    (n > 1e-3).then(|| [v[0] / n, v[1] / n, v[2] / n])
}

fn mesh(k: usize, radii: [f64; 3]) -> Mesh {
    make_ellipsoid(k, radii)
}

fn radii() -> impl Strategy<Value = [f64; 3]> {
    [0.2f64..1.2, 0.2f64..1.2, 0.2f64..1.2]
}

fn bumped(m: &Mesh, amp: f64, phase: f64) -> Vec<[f64; 3]> {
    m.vertices()
        .iter()
        .map(|&[x, y, z]| {
            let s = 1.0 + amp * (3.0 * y + phase).sin();
            [x * s, y, z * s]
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn prototypes_are_closed_with_euler_two(k in 0usize..4, r in radii()) {
        let m = mesh(k, r);
        prop_assert_eq!(m.euler_characteristic(), 2);
        prop_assert_eq!(2 * m.edge_count(), 3 * m.face_count());
        let mirror = m.mirror_pairs();
        prop_assert!((0..m.vertex_count()).all(|i| mirror[mirror[i]] == i));
    }

    #[test]
    fn full_turn_of_azimuth_projects_identically(
        az_halves in -720i32..720,
        el in -60i32..60,
        dist in 1.5f64..4.0,
        r in radii(),
    ) {
        let m = mesh(1, r);
        let intr = Intrinsics::new(50.0, 32, 48).unwrap();
        let az = az_halves as f64 * 0.5;
        let a = CameraParams::new(dist, az, el as f64).reprojected();
        let b = CameraParams::new(dist, az + 360.0, el as f64).reprojected();
        let pa = project_values(m.vertices(), &a, &intr).unwrap();
        let pb = project_values(m.vertices(), &b, &intr).unwrap();
        for (p, q) in pa.iter().zip(&pb) {
            prop_assert_eq!(p[0].to_bits(), q[0].to_bits());
            prop_assert_eq!(p[1].to_bits(), q[1].to_bits());
        }
    }

    #[test]
    fn ndc_offsets_enter_additively(
        cam in [1.5f64..4.0, -3.0f64..3.0, -1.0f64..1.0, -0.3f64..0.3, -0.3f64..0.3],
        vertex in 0usize..42,
    ) {
        let m = mesh(1, [0.45, 0.95, 0.25]);
        let intr = Intrinsics::new(50.0, 32, 32).unwrap();
        let mut t = Tape::new();
        let p = t.constant(m.flat_vertices(), &[m.vertex_count(), 3]).unwrap();
        let c = t.leaf(cam.to_vec(), &[5], true).unwrap();
        let proj = project(&mut t, p, c, &intr).unwrap();
        for (axis, node) in [(3, proj.x), (4, proj.y)] {
            let v = t.select(node, 0, &[vertex]).unwrap();
            let l = t.sum(v).unwrap();
            let g = t.backward(l).unwrap().get_or_zeros(c, 5);
            prop_assert_eq!(g[axis], 1.0);
            prop_assert_eq!(g[7 - axis], 0.0);
        }
    }

    #[test]
    fn shading_scales_with_the_light(
        albedo in [0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0],
        n in [-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0],
        coeffs in prop::array::uniform9(-0.5f64..0.5),
        scale in 0.1f64..5.0,
    ) {
        let Some(n) = unit(n) else { return Ok(()) };
        let mut light = ShLight::dc_only();
        for (c, d) in light.coeffs.iter_mut().zip(coeffs) {
            *c += d;
        }
        let e: f64 = sh_basis(n).iter().zip(&light.coeffs).map(|(b, c)| b * c).sum();
        prop_assume!(e > 1e-6);
        let mut scaled = light;
        for c in scaled.coeffs.iter_mut() {
            *c *= scale;
        }
        let (a, b) = (shade(albedo, n, &light), shade(albedo, n, &scaled));
        for ch in 0..3 {
            prop_assert!((b[ch] - scale * a[ch]).abs() <= 1e-12 * (1.0 + b[ch].abs()));
        }
    }

    #[test]
    fn bilinear_weights_sum_to_one(u in 0.1f64..0.9, v in 0.1f64..0.9, channel in 0usize..3) {
        let (h, w) = (6, 5);
        let mut t = Tape::new();
        let texels = t.leaf((0..h * w * 3).map(|i| (i % 7) as f64 / 7.0).collect(), &[h, w, 3], true).unwrap();
        let un = t.constant(vec![u], &[1]).unwrap();
        let vn = t.constant(vec![v], &[1]).unwrap();
        let s = sample_atlas(&mut t, texels, un, vn).unwrap();
        let c = t.select(s, 1, &[channel]).unwrap();
        let l = t.sum(c).unwrap();
        let g = t.backward(l).unwrap().get_or_zeros(texels, h * w * 3);
        let total: f64 = g.iter().skip(channel).step_by(3).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!(g.iter().enumerate().all(|(i, &x)| i % 3 == channel || x == 0.0));
    }

    #[test]
    fn flow_atlas_halves_mirror_exactly(flow in prop::collection::vec(-2.0f64..2.0, 4 * 3 * 2), seed in 0u64..100) {
        let (hf, wf, sh, sw) = (4, 3, 5, 6);
        let source: Vec<f64> = (0..sh * sw * 3).map(|i| ((i as u64 * 31 + seed) % 17) as f64 / 17.0).collect();
        let mut t = Tape::new();
        let f = t.leaf(flow, &[hf, wf, 2], true).unwrap();
        let a = flow_to_atlas(&mut t, f, &source, sh, sw).unwrap();
        prop_assert_eq!(t.shape(a), &[2 * hf, wf, 3][..]);
        let vals = t.value(a);
        let row = |r: usize| &vals[r * wf * 3..(r + 1) * wf * 3];
        for r in 0..hf {
            prop_assert_eq!(row(r), row(2 * hf - 1 - r));
        }
    }

    #[test]
    fn laplacian_and_symmetry_ignore_in_plane_translation(
        dx in -1.0f64..1.0,
        dy in -1.0f64..1.0,
        amp in 0.0f64..0.3,
        phase in 0.0f64..6.0,
    ) {
        let m = mesh(1, [0.45, 0.95, 0.25]);
        let stencil = m.laplacian_stencil();
        let deltas = laplacian_coordinates_values(m.vertices(), m.neighbors());
        let shape = bumped(&m, amp, phase);
        let moved: Vec<[f64; 3]> = shape.iter().map(|p| [p[0] + dx, p[1] + dy, p[2]]).collect();
        let eval = |pos: &[[f64; 3]]| {
            let mut t = Tape::new();
            let p = t.constant(pos.iter().flatten().copied().collect(), &[pos.len(), 3]).unwrap();
            let lpl = loss_laplacian(&mut t, p, &stencil, &deltas).unwrap();
            let sym = loss_sym(&mut t, p, m.mirror_pairs()).unwrap();
            let def = loss_deform(&mut t, p, DeformNorm::PerVertex).unwrap();
            (t.scalar_value(lpl), t.scalar_value(sym), t.scalar_value(def))
        };
        let (a, b) = (eval(&shape), eval(&moved));
        prop_assert!(a.0 >= 0.0 && a.1 >= 0.0 && a.2 >= 0.0);
        prop_assert!((a.0 - b.0).abs() <= 1e-12);
        prop_assert!((a.1 - b.1).abs() <= 1e-12);
        if dx.abs() + dy.abs() > 0.1 {
            prop_assert!((a.2 - b.2).abs() > 1e-6);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn renders_repeat_and_stay_black_off_the_mesh(
        az in -180.0f64..180.0,
        el in -40.0f64..40.0,
        dist in 2.0f64..3.5,
        amp in 0.0f64..0.2,
    ) {
        let m = mesh(1, [0.45, 0.95, 0.25]);
        let positions = bumped(&m, amp, 1.0);
        let uv = front_back_uv(m.vertices());
        let intr = Intrinsics::new(50.0, 20, 24).unwrap();
        let scene = Scene {
            faces: m.faces(),
            uv: &uv,
            intrinsics: &intr,
            settings: RenderSettings::default(),
        };
        let (ah, aw) = (8, 4);
        let texels: Vec<f64> = (0..ah * aw * 3).map(|i| 0.2 + 0.6 * ((i % 5) as f64 / 5.0)).collect();
        let cam = CameraParams::new(dist, az, el).to_vector();
        let light = ShLight::dc_only().coeffs;
        let a = render_frame(&positions, &texels, [ah, aw], cam, light, &scene).unwrap();
        let b = render_frame(&positions, &texels, [ah, aw], cam, light, &scene).unwrap();
        prop_assert_eq!(&a, &b);
        for (i, f) in a.pixel_face.iter().enumerate() {
            if f.is_none() {
                prop_assert!(a.image[3 * i..3 * i + 3].iter().all(|&c| c == 0.0));
            }
        }
        prop_assert!(a.mask.iter().all(|&m| (0.0..=1.0).contains(&m)));
    }
}
