//! Procedural stand-in for a scan-derived morphable model.
//!
//! The template is the front cap of an ellipsoid with a nose-like protrusion,
//! tessellated as a regular (lat, lon) grid. Basis fields are smooth random
//! cosine series multiplied by a window that vanishes on the mesh border, so
//! every face in the model space shares the same rim.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{
    AnchorKind, BaseModel, CorrectiveMap, LandmarkAnchor, MeshTopology, MultiLevelModel, Variant,
};
use crate::error::{Error, Result};

/// Smallest vertex budget that still fits an 8x8 grid.
pub const MIN_VERTICES: usize = 64;

const SEMI_AXES: [f64; 3] = [0.8, 1.0, 0.85];
const MAX_LON: f64 = 55.0 * PI / 180.0;
const MAX_LAT: f64 = 45.0 * PI / 180.0;
const NOSE_HEIGHT: f64 = 0.22;
const SKIN: [f64; 3] = [0.72, 0.52, 0.42];
const GEOM_MODE_RMS: f64 = 0.03;
const REFL_MODE_RMS: f64 = 0.03;
const SIGMA_DECAY: f64 = 0.85;
const CORRECTIVE_INIT_SCALE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_vertices: usize,
    pub m_s: usize,
    pub m_e: usize,
    pub m_r: usize,
    pub c: usize,
    pub variant: Variant,
    /// Width of hidden layers for the non-linear variants; 0 means `c`.
    pub hidden_dim: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 1,
            n_vertices: 500,
            m_s: 8,
            m_e: 4,
            m_r: 8,
            c: 6,
            variant: Variant::Linear,
            hidden_dim: 0,
        }
    }
}

/// Largest `rows x cols` grid with `rows * cols <= n`, `rows >= 8` and
/// `1 <= cols / rows <= 1.6`; exact factorizations win ties.
fn grid_shape(n: usize) -> Option<(usize, usize)> {
    let mut best: Option<(usize, usize)> = None;
    for rows in 8..=n {
        if rows * rows > n {
            break;
        }
        let max_cols = ((rows as f64) * 1.6).floor() as usize;
        let cols = (n / rows).min(max_cols);
        if cols < rows {
            continue;
        }
        let better = match best {
            None => true,
            Some((r, c)) => rows * cols > r * c || (rows * cols == r * c && rows > r),
        };
        if better {
            best = Some((rows, cols));
        }
    }
    best
}

struct Grid {
    rows: usize,
    cols: usize,
}

impl Grid {
    fn len(&self) -> usize {
        self.rows * self.cols
    }

    fn index(&self, row: usize, col: usize) -> usize {
        row * self.cols + col
    }

    /// Normalized surface coordinates in `[-1, 1]^2`: u left to right, v top
    /// (forehead) to bottom (chin).
    fn uv(&self, i: usize) -> (f64, f64) {
        let (row, col) = (i / self.cols, i % self.cols);
        let u = -1.0 + 2.0 * col as f64 / (self.cols - 1) as f64;
        let v = -1.0 + 2.0 * row as f64 / (self.rows - 1) as f64;
        (u, v)
    }

    /// Distance (in grid steps) to the nearest border row or column.
    fn ring(&self, i: usize) -> usize {
        let (row, col) = (i / self.cols, i % self.cols);
        row.min(col).min(self.rows - 1 - row).min(self.cols - 1 - col)
    }

    fn nearest(&self, u: f64, v: f64, filter: impl Fn(usize) -> bool) -> usize {
        (0..self.len())
            .filter(|&i| filter(i))
            .min_by(|&a, &b| {
                let da = dist2_uv(self.uv(a), (u, v));
                let db = dist2_uv(self.uv(b), (u, v));
                da.total_cmp(&db).then(a.cmp(&b))
            })
            .expect("grid is nonempty")
    }
}

fn dist2_uv(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)
}

fn gaussian(u: f64, v: f64, cu: f64, cv: f64, su: f64, sv: f64) -> f64 {
    (-0.5 * (((u - cu) / su).powi(2) + ((v - cv) / sv).powi(2))).exp()
}

fn window(u: f64, v: f64) -> f64 {
    ((1.0 - u * u) * (1.0 - v * v)).powi(2)
}

fn surface_point(u: f64, v: f64) -> Vector3<f64> {
    let lon = u * MAX_LON;
    let lat = v * MAX_LAT;
    let [a, b, c] = SEMI_AXES;
    let nose = NOSE_HEIGHT * gaussian(u, v, 0.0, 0.02, 0.12, 0.18);
    Vector3::new(
        a * lat.cos() * lon.sin(),
        b * lat.sin(),
        -c * lat.cos() * lon.cos() - nose,
    )
}

/// Reflectance of the template's bare skin (the mean at the cap border).
pub const HEAD_SKIN: [f64; 3] = SKIN;

/// Closed ellipsoid matching the template head, scaled by `scale`, with
/// outward-wound triangles. Used to continue synthetic faces past the cap.
pub fn head_proxy(segments: usize, scale: f64) -> (Vec<Vector3<f64>>, Vec<[usize; 3]>) {
    let rings = segments.max(4);
    let sectors = 2 * rings;
    let [a, b, c] = SEMI_AXES;
    let mut points = vec![Vector3::new(0.0, -b * scale, 0.0)];
    for r in 1..rings {
        let lat = -FRAC_PI_2 + PI * r as f64 / rings as f64;
        for s in 0..sectors {
            let lon = 2.0 * PI * s as f64 / sectors as f64;
            points.push(scale * Vector3::new(a * lat.cos() * lon.sin(), b * lat.sin(), -c * lat.cos() * lon.cos()));
        }
    }
    points.push(Vector3::new(0.0, b * scale, 0.0));
    let last = points.len() - 1;
    let at = |r: usize, s: usize| 1 + (r - 1) * sectors + s % sectors;
    let mut tris = Vec::new();
    for s in 0..sectors {
        tris.push([0, at(1, s), at(1, s + 1)]);
        tris.push([last, at(rings - 1, s + 1), at(rings - 1, s)]);
        for r in 1..rings - 1 {
            tris.push([at(r, s), at(r + 1, s), at(r + 1, s + 1)]);
            tris.push([at(r, s), at(r + 1, s + 1), at(r, s + 1)]);
        }
    }
    // the ellipsoid is convex and centered at the origin: outward means the
    // face normal agrees with the centroid direction
    for t in &mut tris {
        let [p, q, r] = [points[t[0]], points[t[1]], points[t[2]]];
        if (q - p).cross(&(r - p)).dot(&(p + q + r)) < 0.0 {
            t.swap(1, 2);
        }
    }
    (points, tris)
}

/// Facial feature albedo blobs: (center u, center v, sigma u, sigma v, rgb).
const FEATURES: [(f64, f64, f64, f64, [f64; 3]); 5] = [
    (-0.37, -0.47, 0.2, 0.05, [0.32, 0.22, 0.18]),
    (0.37, -0.47, 0.2, 0.05, [0.32, 0.22, 0.18]),
    (-0.35, -0.28, 0.1, 0.05, [0.25, 0.25, 0.3]),
    (0.35, -0.28, 0.1, 0.05, [0.25, 0.25, 0.3]),
    (0.0, 0.38, 0.22, 0.07, [0.66, 0.3, 0.3]),
];

fn feature_weight(u: f64, v: f64) -> (f64, [f64; 3]) {
    let mut color = SKIN;
    let mut total = 0.0_f64;
    for &(cu, cv, su, sv, rgb) in &FEATURES {
        let w = gaussian(u, v, cu, cv, su, sv);
        for ch in 0..3 {
            color[ch] += w * (rgb[ch] - SKIN[ch]);
        }
        total = total.max(w);
    }
    (total, color)
}

/// Random smooth scalar field on the grid: a low-order cosine series.
fn smooth_field(rng: &mut ChaCha8Rng, grid: &Grid, order: usize) -> Vec<f64> {
    let mut coeffs = vec![vec![0.0; order + 1]; order + 1];
    for (p, row) in coeffs.iter_mut().enumerate() {
        for (q, c) in row.iter_mut().enumerate() {
            let g: f64 = rng.sample(StandardNormal);
            *c = g / (1.0 + (p + q) as f64);
        }
    }
    (0..grid.len())
        .map(|i| {
            let (u, v) = grid.uv(i);
            let mut s = 0.0;
            for (p, row) in coeffs.iter().enumerate() {
                for (q, c) in row.iter().enumerate() {
                    s += c * (p as f64 * FRAC_PI_2 * (u + 1.0)).cos()
                        * (q as f64 * FRAC_PI_2 * (v + 1.0)).cos();
                }
            }
            s
        })
        .collect()
}

/// One basis column: three smooth fields (one per coordinate or channel),
/// windowed and rescaled to the requested RMS per-vertex magnitude.
fn basis_column(
    rng: &mut ChaCha8Rng,
    grid: &Grid,
    order: usize,
    rms: f64,
    extra_window: impl Fn(f64, f64) -> f64,
) -> Vec<f64> {
    let fields: Vec<Vec<f64>> = (0..3).map(|_| smooth_field(rng, grid, order)).collect();
    let mut col = vec![0.0; 3 * grid.len()];
    for i in 0..grid.len() {
        let (u, v) = grid.uv(i);
        let w = window(u, v) * extra_window(u, v);
        for k in 0..3 {
            col[3 * i + k] = w * fields[k][i];
        }
    }
    let norm2: f64 = col.iter().map(|x| x * x).sum::<f64>() / grid.len() as f64;
    let scale = if norm2 > 0.0 { rms / norm2.sqrt() } else { 0.0 };
    col.iter_mut().for_each(|x| *x *= scale);
    col
}

/// Builds a deterministic synthetic multi-level face model.
pub fn synth_model(cfg: &SynthConfig) -> Result<MultiLevelModel> {
    if cfg.m_s == 0 || cfg.m_r == 0 {
        return Err(Error::InvalidInput("model dimensions must be >= 1".into()));
    }
    let (rows, cols) = grid_shape(cfg.n_vertices).ok_or_else(|| {
        Error::InvalidInput(format!(
            "{} vertices are too few to mesh (need at least {MIN_VERTICES})",
            cfg.n_vertices
        ))
    })?;
    let grid = Grid { rows, cols };
    let n = grid.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut a_g = DVector::zeros(3 * n);
    let mut a_r = DVector::zeros(3 * n);
    let albedo_variation = smooth_field(&mut rng, &grid, 2);
    for i in 0..n {
        let (u, v) = grid.uv(i);
        let p = surface_point(u, v);
        a_g.fixed_rows_mut::<3>(3 * i).copy_from(&p);
        let (_, color) = feature_weight(u, v);
        let shift = 0.04 * window(u, v) * albedo_variation[i].tanh();
        for ch in 0..3 {
            a_r[3 * i + ch] = (color[ch] + shift).clamp(0.02, 0.98);
        }
    }

    let triangles = triangulate(&grid, &a_g);

    let k_g = cfg.m_s + cfg.m_e;
    let mut b_g = DMatrix::zeros(3 * n, k_g);
    for k in 0..cfg.m_s {
        let col = basis_column(&mut rng, &grid, 2, GEOM_MODE_RMS, |_, _| 1.0);
        b_g.column_mut(k).copy_from_slice(&col);
    }
    for k in 0..cfg.m_e {
        // expression modes concentrate around the mouth and eyes
        let col = basis_column(&mut rng, &grid, 3, GEOM_MODE_RMS, |u, v| {
            gaussian(u, v, 0.0, 0.38, 0.35, 0.18) + gaussian(u, v, 0.0, -0.35, 0.6, 0.12)
        });
        b_g.column_mut(cfg.m_s + k).copy_from_slice(&col);
    }
    let mut b_r = DMatrix::zeros(3 * n, cfg.m_r);
    for k in 0..cfg.m_r {
        let col = basis_column(&mut rng, &grid, 2, REFL_MODE_RMS, |_, _| 1.0);
        b_r.column_mut(k).copy_from_slice(&col);
    }
    let sigma_g = DVector::from_fn(k_g, |k, _| SIGMA_DECAY.powi(k as i32));
    let sigma_r = DVector::from_fn(cfg.m_r, |k, _| SIGMA_DECAY.powi(k as i32));

    let (anchors, contour) = landmark_layout(&grid);
    let skin_mask: Vec<usize> = (0..n)
        .filter(|&i| {
            let (u, v) = grid.uv(i);
            let (feature, _) = feature_weight(u, v);
            let chin = v > 0.55 && u.abs() < 0.75;
            feature < 0.1 && !chin
        })
        .collect();

    let topology = MeshTopology::new(n, triangles, anchors, skin_mask, contour)?;
    let base = BaseModel {
        a_g,
        a_r,
        b_g,
        b_r,
        sigma_g,
        sigma_r,
        m_s: cfg.m_s,
        m_e: cfg.m_e,
        m_r: cfg.m_r,
    };
    let (geom_corr, refl_corr) = init_correctives(3 * n, cfg.variant, cfg.c, cfg.hidden_dim, &mut rng);
    let model = MultiLevelModel {
        topology,
        base,
        geom_corr,
        refl_corr,
        seed: cfg.seed,
    };
    model.validate()?;
    Ok(model)
}

/// Fresh geometry and reflectance correctives with code dimension `c`
/// (disabled for `c == 0`); a `hidden_dim` of 0 means `c`.
pub(crate) fn init_correctives<R: Rng>(
    output_dim: usize,
    variant: Variant,
    c: usize,
    hidden_dim: usize,
    rng: &mut R,
) -> (CorrectiveMap, CorrectiveMap) {
    if c == 0 {
        return (CorrectiveMap::disabled(output_dim), CorrectiveMap::disabled(output_dim));
    }
    let hidden = if hidden_dim == 0 { c } else { hidden_dim };
    let g = CorrectiveMap::random(variant, c, hidden, output_dim, CORRECTIVE_INIT_SCALE, rng);
    let r = CorrectiveMap::random(variant, c, hidden, output_dim, CORRECTIVE_INIT_SCALE, rng);
    (g, r)
}

/// Two triangles per grid quad, wound so normals point away from the head.
fn triangulate(grid: &Grid, a_g: &DVector<f64>) -> Vec<[usize; 3]> {
    let mut tris = Vec::with_capacity(2 * (grid.rows - 1) * (grid.cols - 1));
    for r in 0..grid.rows - 1 {
        for c in 0..grid.cols - 1 {
            let a = grid.index(r, c);
            let b = grid.index(r, c + 1);
            let d = grid.index(r + 1, c);
            let e = grid.index(r + 1, c + 1);
            tris.push([a, b, d]);
            tris.push([b, e, d]);
        }
    }
    // orient using the triangle nearest the face center
    let center = grid.index(grid.rows / 2, grid.cols / 2);
    let t = tris.iter().find(|t| t.contains(&center)).copied().unwrap_or(tris[0]);
    let p = |i: usize| Vector3::new(a_g[3 * i], a_g[3 * i + 1], a_g[3 * i + 2]);
    let normal = (p(t[1]) - p(t[0])).cross(&(p(t[2]) - p(t[0])));
    let outward = p(t[0]);
    if normal.dot(&outward) < 0.0 {
        for t in &mut tris {
            t.swap(1, 2);
        }
    }
    tris
}

/// 49 fixed interior anchors (brows, nose, eyes, mouth) and 17 sliding jaw
/// anchors, plus the contour candidate set the sliding ones search.
fn landmark_layout(grid: &Grid) -> (Vec<LandmarkAnchor>, Vec<usize>) {
    let contour: Vec<usize> = (0..grid.len())
        .filter(|&i| grid.ring(i) < 2 && grid.uv(i).1 > -0.4)
        .collect();

    let mut anchors = Vec::with_capacity(66);
    // jaw line: down the left side, along the chin, up the right side
    let jaw: Vec<(f64, f64)> = {
        let path_len = 1.3 + 2.0 + 1.3;
        (0..17)
            .map(|k| {
                let s = path_len * k as f64 / 16.0;
                if s < 1.3 {
                    (-1.0, -0.3 + s)
                } else if s < 3.3 {
                    (-1.0 + (s - 1.3), 1.0)
                } else {
                    (1.0, 1.0 - (s - 3.3))
                }
            })
            .collect()
    };
    for (u, v) in jaw {
        let vertex = grid.nearest(u, v, |i| grid.ring(i) == 1);
        anchors.push(LandmarkAnchor {
            kind: AnchorKind::Sliding,
            vertex,
        });
    }

    let mut fixed: Vec<(f64, f64)> = Vec::with_capacity(49);
    for side in [-1.0, 1.0] {
        for k in 0..5 {
            fixed.push((side * (0.15 + 0.11 * k as f64), -0.47));
        }
    }
    for k in 0..4 {
        fixed.push((0.0, -0.3 + 0.1 * k as f64));
    }
    for k in 0..5 {
        fixed.push((-0.16 + 0.08 * k as f64, 0.12));
    }
    for side in [-1.0, 1.0] {
        for k in 0..6 {
            let a = 2.0 * PI * k as f64 / 6.0;
            fixed.push((side * 0.35 + 0.12 * a.cos(), -0.28 + 0.06 * a.sin()));
        }
    }
    for k in 0..12 {
        let a = 2.0 * PI * k as f64 / 12.0;
        fixed.push((0.25 * a.cos(), 0.38 + 0.1 * a.sin()));
    }
    for k in 0..6 {
        let a = 2.0 * PI * k as f64 / 6.0;
        fixed.push((0.14 * a.cos(), 0.38 + 0.04 * a.sin()));
    }
    for (u, v) in fixed {
        let vertex = grid.nearest(u, v, |i| grid.ring(i) >= 2);
        anchors.push(LandmarkAnchor {
            kind: AnchorKind::Fixed,
            vertex,
        });
    }
    (anchors, contour)
}
