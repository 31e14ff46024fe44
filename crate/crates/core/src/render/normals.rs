//! Area-weighted vertex normals and their reverse-mode derivative.

use log::debug;
use nalgebra::Vector3;

/// Below this length the accumulated face-normal sum is considered degenerate.
const DEGENERATE_LEN: f64 = 1e-14;

pub const FALLBACK_NORMAL: Vector3<f64> = Vector3::new(0.0, 0.0, 1.0);

#[derive(Debug, Clone, PartialEq)]
pub struct VertexNormals {
    pub normals: Vec<Vector3<f64>>,
    /// Vertices that fell back to [`FALLBACK_NORMAL`].
    pub degenerate: usize,
}

/// Un-normalized sums of incident face normals. The cross product has length
/// twice the triangle area, so the sum is area weighted.
fn accumulate(points: &[Vector3<f64>], triangles: &[[usize; 3]]) -> Vec<Vector3<f64>> {
    let mut acc = vec![Vector3::zeros(); points.len()];
    for &[a, b, c] in triangles {
        let f = (points[b] - points[a]).cross(&(points[c] - points[a]));
        acc[a] += f;
        acc[b] += f;
        acc[c] += f;
    }
    acc
}

pub fn vertex_normals(points: &[Vector3<f64>], triangles: &[[usize; 3]]) -> VertexNormals {
    let mut degenerate = 0;
    let normals = accumulate(points, triangles)
        .into_iter()
        .map(|m| {
            let len = m.norm();
            if len < DEGENERATE_LEN {
                degenerate += 1;
                FALLBACK_NORMAL
            } else {
                m / len
            }
        })
        .collect();
    if degenerate > 0 {
        debug!("{degenerate} vertices have a degenerate normal");
    }
    VertexNormals {
        normals,
        degenerate,
    }
}

/// Given dE/d(normal_i), returns dE/d(point_i). Degenerate vertices pass no
/// gradient.
pub fn vertex_normals_backward(
    points: &[Vector3<f64>],
    triangles: &[[usize; 3]],
    grad_normals: &[Vector3<f64>],
) -> Vec<Vector3<f64>> {
    let acc = accumulate(points, triangles);
    // through the normalization n = m / |m|
    let grad_acc: Vec<Vector3<f64>> = acc
        .iter()
        .zip(grad_normals)
        .map(|(m, g)| {
            let len = m.norm();
            if len < DEGENERATE_LEN {
                Vector3::zeros()
            } else {
                let n = m / len;
                (g - n * n.dot(g)) / len
            }
        })
        .collect();
    let mut grad_points = vec![Vector3::zeros(); points.len()];
    for &[a, b, c] in triangles {
        let gf = grad_acc[a] + grad_acc[b] + grad_acc[c];
        if gf == Vector3::zeros() {
            continue;
        }
        let e1 = points[b] - points[a];
        let e2 = points[c] - points[a];
        // f = e1 x e2: dE/de1 = e2 x gf, dE/de2 = gf x e1
        let g1 = e2.cross(&gf);
        let g2 = gf.cross(&e1);
        grad_points[a] -= g1 + g2;
        grad_points[b] += g1;
        grad_points[c] += g2;
    }
    grad_points
}
