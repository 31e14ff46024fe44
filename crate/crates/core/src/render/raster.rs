//! Z-buffered triangle rasterization for previews and synthetic images.
//! Not differentiable; the fitter only uses the point-based path.

use nalgebra::{Vector2, Vector3};

use super::camera::{project_unchecked, CameraIntrinsics, MIN_DEPTH};
use super::image::Image;
use super::state::{render_state, Level};
use crate::error::{Error, Result};
use crate::gradients::ParamVector;
use crate::model::MultiLevelModel;

pub const PREVIEW_BACKGROUND: f64 = 0.5;

/// Depth buffer paired with a color target.
pub struct Canvas {
    pub image: Image,
    depth: Vec<f64>,
    covered: Vec<bool>,
}

impl Canvas {
    pub fn new(background: Image) -> Self {
        let n = background.width() * background.height();
        Canvas {
            image: background,
            depth: vec![f64::INFINITY; n],
            covered: vec![false; n],
        }
    }

    /// Pixels written by at least one triangle.
    pub fn covered_count(&self) -> usize {
        self.covered.iter().filter(|&&c| c).count()
    }

    /// Draws triangles with per-vertex colors interpolated linearly in screen
    /// space. Triangles with a vertex behind the camera are skipped.
    pub fn draw(
        &mut self,
        cam_vertices: &[Vector3<f64>],
        colors: &[Vector3<f64>],
        triangles: &[[usize; 3]],
        k: &CameraIntrinsics,
    ) {
        let (w, h) = (self.image.width(), self.image.height());
        for &[a, b, c] in triangles {
            let z = [cam_vertices[a].z, cam_vertices[b].z, cam_vertices[c].z];
            if z.iter().any(|&d| d <= MIN_DEPTH) {
                continue;
            }
            let p: [Vector2<f64>; 3] = [
                project_unchecked(&cam_vertices[a], k),
                project_unchecked(&cam_vertices[b], k),
                project_unchecked(&cam_vertices[c], k),
            ];
            let area = edge(&p[0], &p[1], &p[2]);
            if area.abs() < 1e-12 {
                continue;
            }
            let min_x = p.iter().map(|q| q.x).fold(f64::INFINITY, f64::min).ceil().max(0.0);
            let max_x = p.iter().map(|q| q.x).fold(f64::NEG_INFINITY, f64::max).floor().min((w - 1) as f64);
            let min_y = p.iter().map(|q| q.y).fold(f64::INFINITY, f64::min).ceil().max(0.0);
            let max_y = p.iter().map(|q| q.y).fold(f64::NEG_INFINITY, f64::max).floor().min((h - 1) as f64);
            if min_x > max_x || min_y > max_y {
                continue;
            }
            let col = [colors[a], colors[b], colors[c]];
            for y in min_y as usize..=max_y as usize {
                for x in min_x as usize..=max_x as usize {
                    let q = Vector2::new(x as f64, y as f64);
                    let l0 = edge(&p[1], &p[2], &q) / area;
                    let l1 = edge(&p[2], &p[0], &q) / area;
                    let l2 = 1.0 - l0 - l1;
                    const TOL: f64 = -1e-9;
                    if l0 < TOL || l1 < TOL || l2 < TOL {
                        continue;
                    }
                    // interpolate 1/z in screen space
                    let inv_z = l0 / z[0] + l1 / z[1] + l2 / z[2];
                    let depth = 1.0 / inv_z;
                    let idx = y * w + x;
                    if depth < self.depth[idx] {
                        self.depth[idx] = depth;
                        self.covered[idx] = true;
                        self.image.set(x, y, col[0] * l0 + col[1] * l1 + col[2] * l2);
                    }
                }
            }
        }
    }
}

fn edge(a: &Vector2<f64>, b: &Vector2<f64>, p: &Vector2<f64>) -> f64 {
    (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x)
}

/// Shaded model preview over `background` (flat gray when absent).
pub fn rasterize_preview(
    model: &MultiLevelModel,
    params: &ParamVector,
    k: &CameraIntrinsics,
    level: Level,
    background: Option<&Image>,
) -> Result<Image> {
    let bg = match background {
        Some(img) => {
            if img.width() != k.width || img.height() != k.height {
                return Err(Error::InvalidInput(format!(
                    "background is {}x{}, camera expects {}x{}",
                    img.width(),
                    img.height(),
                    k.width,
                    k.height
                )));
            }
            img.clone()
        }
        None => Image::new(k.width, k.height, Vector3::repeat(PREVIEW_BACKGROUND)),
    };
    let state = render_state(model, params, k, level)?;
    let mut canvas = Canvas::new(bg);
    if state.visible_count() > 0 {
        canvas.draw(&state.cam_vertices, &state.colors, model.topology.triangles(), k);
    }
    Ok(canvas.image)
}
