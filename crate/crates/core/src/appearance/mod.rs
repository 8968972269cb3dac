//! Spherical-harmonics lighting and texture representations.
//!
//! Two texture modes exist: a directly optimized [`TextureAtlas`] and a
//! [`TextureFlow`] that warps the input photo into a mirrored atlas.

mod sh;
mod texture;

pub use sh::{
    irradiance, sh_basis, sh_basis_checked, sh_basis_rows, shade, shade_rows, ShLight, SH_C0, SH_C1, SH_C2, SH_C3,
    SH_C4, UNIT_TOLERANCE,
};
pub use texture::{flow_to_atlas, front_back_uv, sample_atlas, sample_atlas_values, TextureAtlas, TextureFlow};
