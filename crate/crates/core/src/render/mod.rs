//! Differentiable image formation: pose, projection, normals, visibility,
//! spherical-harmonics shading and image sampling.

mod camera;
mod image;
pub(crate) mod normals;
mod raster;
mod sh;
mod state;

pub use self::image::{linear_to_srgb, srgb_to_linear, Image};
pub use camera::{
    project, rotation_derivatives, rotation_matrix, CameraIntrinsics, Pose, MIN_DEPTH,
};
pub(crate) use camera::{project_jacobian, project_unchecked};
pub use normals::{vertex_normals, vertex_normals_backward, VertexNormals, FALLBACK_NORMAL};
pub use raster::{rasterize_preview, Canvas, PREVIEW_BACKGROUND};
pub use sh::{sh_basis, shade, Illumination, SH_COUNT};
pub(crate) use sh::sh_gradient;
pub use state::{render_geometry, render_state, visibility, Level, RenderState};
pub(crate) use state::to_points;
