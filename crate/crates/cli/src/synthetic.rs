use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use recon_core::camera::CameraParams;
use recon_core::mesh::make_ellipsoid;
use recon_core::solver::{render_state, ReconState, SolverConfig, TextureParams};
use recon_core::{PrototypeContext, Sample, ShLight, TextureAtlas};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::CliError;

/// Ground truth behind a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTruth {
    pub shape: Vec<[f64; 3]>,
    pub faces: Vec<[usize; 3]>,
    pub cameras: Vec<CameraParams<f64>>,
    pub light: ShLight,
    pub atlas: TextureAtlas,
}

#[derive(Debug, Clone)]
pub struct SyntheticSet {
    pub samples: Vec<Sample>,
    pub truth: SyntheticTruth,
}

/// The common target shape: the prototype widened in x, thickened in z and
/// given a belly bulge, all mirror-symmetric in z.
pub fn deformed_shape(base: &[[f64; 3]]) -> Vec<[f64; 3]> {
    base.iter()
        .map(|&[x, y, z]| {
            let bulge = 1.0 + 0.25 * (-(y + 0.15) * (y + 0.15) / 0.08).exp();
            [1.25 * x * bulge, 0.9 * y, 1.5 * z * bulge]
        })
        .collect()
}

/// Smooth, left/right and top/bottom asymmetric colors from a few random
/// low-frequency waves.
pub fn synthetic_atlas(height: usize, width: usize, seed: u64) -> TextureAtlas {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let waves: Vec<[f64; 4]> = (0..9)
        .map(|_| {
            [
                rng.gen_range(0.5..2.5),
                rng.gen_range(0.5..2.5),
                rng.gen_range(0.0..std::f64::consts::TAU),
                rng.gen_range(0.1..0.2),
            ]
        })
        .collect();
    let mut a = TextureAtlas::uniform(height, width, [0.0; 3]);
    for r in 0..height {
        for c in 0..width {
            let (u, v) = ((c as f64 + 0.5) / width as f64, (r as f64 + 0.5) / height as f64);
            for ch in 0..3 {
                let mut x = 0.25 + 0.25 * ch as f64 + 0.2 * u;
                for w in &waves[3 * ch..3 * ch + 3] {
                    x += w[3] * (std::f64::consts::TAU * (w[0] * u + w[1] * v) + w[2]).sin();
                }
                a.texels[(r * width + c) * 3 + ch] = x.clamp(0.05, 0.95);
            }
        }
    }
    a
}

pub fn synthetic_light() -> ShLight {
    let mut l = ShLight::dc_only();
    l.coeffs[0] *= 0.85;
    l.coeffs[1] = 0.25;
    l.coeffs[2] = 0.2;
    l.coeffs[3] = -0.15;
    l
}

/// Evenly spaced azimuths starting at `start`.
pub fn ring_cameras(count: usize, start: f64, distance: f64, elevation: f64) -> Vec<CameraParams<f64>> {
    (0..count)
        .map(|i| CameraParams::new(distance, start + 360.0 * i as f64 / count as f64, elevation).reprojected())
        .collect()
}

/// Renders `shape` (same topology as `proto`) under each camera.
pub fn render_set(
    proto: &PrototypeContext,
    shape: &[[f64; 3]],
    cameras: &[CameraParams<f64>],
    atlas: &TextureAtlas,
    light: ShLight,
    solver: &SolverConfig<f64>,
) -> Result<Vec<Sample>, CliError> {
    let offsets: Vec<[f64; 3]> = proto
        .mesh
        .vertices()
        .iter()
        .zip(shape)
        .map(|(p, s)| [s[0] - p[0], s[1] - p[1], s[2] - p[2]])
        .collect();
    let (w, h) = (solver.intrinsics.width, solver.intrinsics.height);
    cameras
        .iter()
        .enumerate()
        .map(|(i, cam)| {
            let mut state = ReconState::new(*cam, offsets.len(), TextureParams::Atlas(atlas.clone()));
            state.offsets = offsets.clone();
            state.light = light;
            let frame = render_state(&state, atlas, proto, solver)?;
            let mask: Vec<f64> = frame.mask.iter().map(|&m| if m >= 0.5 { 1.0 } else { 0.0 }).collect();
            let image = frame
                .image
                .chunks(3)
                .zip(&mask)
                .flat_map(|(px, &m)| [px[0] * m, px[1] * m, px[2] * m])
                .collect();
            Ok(Sample {
                id: format!("view_{i:03}"),
                width: w,
                height: h,
                image,
                mask,
            })
        })
        .collect()
}

/// `count` views of the deformed ellipsoid around a ring, at the config's
/// resolution and prototype.
pub fn make_synthetic(config: &RunConfig, count: usize) -> Result<SyntheticSet, CliError> {
    let solver = config.solver_config()?;
    let proto = PrototypeContext::new(make_ellipsoid(config.subdivisions, config.radii));
    let shape = deformed_shape(proto.mesh.vertices());
    let cameras = ring_cameras(count, 15.0, 2.5, 10.0);
    let atlas = synthetic_atlas(2 * config.height, config.width, config.seed);
    let light = synthetic_light();
    let samples = render_set(&proto, &shape, &cameras, &atlas, light, &solver)?;
    Ok(SyntheticSet {
        samples,
        truth: SyntheticTruth {
            shape,
            faces: proto.mesh.faces().to_vec(),
            cameras,
            light,
            atlas,
        },
    })
}
