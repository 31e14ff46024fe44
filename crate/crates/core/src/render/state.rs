//! Point-based image formation for one model level.

use nalgebra::{DVector, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::camera::{project_unchecked, CameraIntrinsics, Pose, MIN_DEPTH};
use super::normals::vertex_normals;
use super::sh::{sh_eval, Illumination, SH_COUNT};
use crate::error::Result;
use crate::gradients::ParamVector;
use crate::model::MultiLevelModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Base,
    Final,
}

impl std::str::FromStr for Level {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "base" => Ok(Level::Base),
            "final" => Ok(Level::Final),
            other => Err(crate::Error::InvalidInput(format!("unknown level '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderState {
    pub level: Level,
    /// Model-space positions.
    pub vertices: Vec<Vector3<f64>>,
    pub reflectance: Vec<Vector3<f64>>,
    pub cam_vertices: Vec<Vector3<f64>>,
    pub normals: Vec<Vector3<f64>>,
    pub pixels: Vec<Vector2<f64>>,
    pub sh: Vec<[f64; SH_COUNT]>,
    /// Per-channel `sum_b gamma_b H_b(n)`.
    pub irradiance: Vec<Vector3<f64>>,
    pub colors: Vec<Vector3<f64>>,
    pub visible: Vec<bool>,
    pub degenerate_normals: usize,
}

impl RenderState {
    pub fn visible_count(&self) -> usize {
        self.visible.iter().filter(|&&v| v).count()
    }

    pub fn visible_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.visible.iter().enumerate().filter(|(_, &v)| v).map(|(i, _)| i)
    }
}

pub(crate) fn to_points(flat: &DVector<f64>) -> Vec<Vector3<f64>> {
    flat.as_slice()
        .chunks_exact(3)
        .map(|c| Vector3::new(c[0], c[1], c[2]))
        .collect()
}

/// A vertex is visible when its normal faces the camera, it lies in front of
/// the camera and it projects inside the image.
pub fn visibility(
    normals: &[Vector3<f64>],
    cam_vertices: &[Vector3<f64>],
    pixels: &[Vector2<f64>],
    k: &CameraIntrinsics,
) -> Vec<bool> {
    normals
        .iter()
        .zip(cam_vertices)
        .zip(pixels)
        .map(|((n, v), u)| n.dot(v) < 0.0 && v.z > MIN_DEPTH && k.contains(u))
        .collect()
}

/// Renders explicit model-space geometry and reflectance.
pub fn render_geometry(
    level: Level,
    vertices: Vec<Vector3<f64>>,
    reflectance: Vec<Vector3<f64>>,
    triangles: &[[usize; 3]],
    pose: &Pose,
    light: &Illumination,
    k: &CameraIntrinsics,
) -> RenderState {
    let rot = pose.rotation();
    let cam_vertices: Vec<Vector3<f64>> = vertices.iter().map(|v| rot * v + pose.t).collect();
    let vn = vertex_normals(&cam_vertices, triangles);
    let pixels: Vec<Vector2<f64>> = cam_vertices.iter().map(|v| project_unchecked(v, k)).collect();
    let sh: Vec<[f64; SH_COUNT]> = vn.normals.iter().map(sh_eval).collect();
    let irradiance: Vec<Vector3<f64>> = sh.iter().map(|b| light.irradiance(b)).collect();
    let colors = reflectance
        .iter()
        .zip(&irradiance)
        .map(|(r, e)| r.component_mul(e))
        .collect();
    let visible = visibility(&vn.normals, &cam_vertices, &pixels, k);
    RenderState {
        level,
        vertices,
        reflectance,
        cam_vertices,
        normals: vn.normals,
        pixels,
        sh,
        irradiance,
        colors,
        visible,
        degenerate_normals: vn.degenerate,
    }
}

/// Evaluates the requested level of the model and renders it with that
/// level's own illumination.
pub fn render_state(
    model: &MultiLevelModel,
    params: &ParamVector,
    k: &CameraIntrinsics,
    level: Level,
) -> Result<RenderState> {
    params.check_dims(model)?;
    let (v, r) = match level {
        Level::Base => (
            model.base.eval_geometry(&params.alpha)?,
            model.base.eval_reflectance(&params.beta)?,
        ),
        Level::Final => model.eval_final(&params.alpha, &params.beta, &params.delta_g, &params.delta_r)?,
    };
    Ok(render_geometry(
        level,
        to_points(&v),
        to_points(&r),
        model.topology.triangles(),
        &params.pose(),
        params.illumination(level),
        k,
    ))
}
