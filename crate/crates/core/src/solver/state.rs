use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::adam::AdamMoments;
use crate::appearance::{ShLight, TextureAtlas, TextureFlow};
use crate::camera::CameraParams;
use crate::real::Real;

/// The four attribute groups, each owning one parameter block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Camera,
    Shape,
    Texture,
    Light,
}

impl Group {
    pub const ALL: [Group; 4] = [Group::Camera, Group::Shape, Group::Texture, Group::Light];

    pub fn name(self) -> &'static str {
        match self {
            Group::Camera => "camera",
            Group::Shape => "shape",
            Group::Texture => "texture",
            Group::Light => "light",
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Group {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Group::ALL
            .into_iter()
            .find(|g| g.name() == s.trim())
            .ok_or_else(|| format!("unknown attribute group `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TextureMode {
    #[default]
    Atlas,
    Flow,
}

impl FromStr for TextureMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "atlas" => Ok(TextureMode::Atlas),
            "flow" => Ok(TextureMode::Flow),
            other => Err(format!("unknown texture mode `{other}` (atlas|flow)")),
        }
    }
}

impl fmt::Display for TextureMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TextureMode::Atlas => "atlas",
            TextureMode::Flow => "flow",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum TextureParams<T> {
    Atlas(TextureAtlas<T>),
    Flow(TextureFlow<T>),
}

impl<T> TextureParams<T> {
    pub fn values(&self) -> &[T] {
        match self {
            TextureParams::Atlas(a) => &a.texels,
            TextureParams::Flow(f) => &f.raw,
        }
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        match self {
            TextureParams::Atlas(a) => &mut a.texels,
            TextureParams::Flow(f) => &mut f.raw,
        }
    }

    /// Shape of the leaf tensor: `H×W×3` texels or `H×W×2` raw flow.
    pub fn leaf_shape(&self) -> [usize; 3] {
        match self {
            TextureParams::Atlas(a) => [a.height, a.width, 3],
            TextureParams::Flow(f) => [f.height, f.width, 2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroupMoments<T> {
    pub camera: AdamMoments<T>,
    pub shape: AdamMoments<T>,
    pub texture: AdamMoments<T>,
    pub light: AdamMoments<T>,
}

impl<T> GroupMoments<T> {
    pub fn get_mut(&mut self, g: Group) -> &mut AdamMoments<T> {
        match g {
            Group::Camera => &mut self.camera,
            Group::Shape => &mut self.shape,
            Group::Texture => &mut self.texture,
            Group::Light => &mut self.light,
        }
    }
}

/// Per-image latent attributes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconState<T> {
    pub camera: CameraParams<T>,
    /// ΔS, one row per prototype vertex
    pub offsets: Vec<[T; 3]>,
    pub texture: TextureParams<T>,
    pub light: ShLight<T>,
    #[serde(skip)]
    pub moments: GroupMoments<T>,
    /// optimizer steps dropped for non-finite gradients
    #[serde(default)]
    pub skipped_steps: usize,
}

impl<T: Real> ReconState<T> {
    pub fn new(camera: CameraParams<T>, vertex_count: usize, texture: TextureParams<T>) -> Self {
        Self {
            camera,
            offsets: vec![[T::zero(); 3]; vertex_count],
            texture,
            light: ShLight::dc_only(),
            moments: GroupMoments::default(),
            skipped_steps: 0,
        }
    }

    /// Exact bit patterns of one group's parameters.
    pub fn fingerprint(&self, g: Group) -> Vec<u64> {
        let bits = |v: &[T]| -> Vec<u64> { v.iter().map(|x| x.to_f64_lossy().to_bits()).collect() };
        match g {
            Group::Camera => bits(&[
                self.camera.distance,
                self.camera.azimuth,
                self.camera.elevation,
                self.camera.offset_x,
                self.camera.offset_y,
            ]),
            Group::Shape => bits(&self.offsets.iter().flatten().copied().collect::<Vec<_>>()),
            Group::Texture => bits(self.texture.values()),
            Group::Light => bits(&self.light.coeffs),
        }
    }
}
