//! Sparse 2D landmark supervision: fixed anchors and sliding contour points
//! re-assigned to the mesh vertex nearest their viewing ray.

use std::fmt::Write as _;
use std::path::Path;

use log::warn;
use nalgebra::{Vector2, Vector3};

use crate::error::{Error, Result};
use crate::model::{AnchorKind, LandmarkAnchor};
use crate::render::{CameraIntrinsics, RenderState};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Landmark {
    pub position: Vector2<f64>,
    pub confidence: f64,
    pub kind: AnchorKind,
    /// Current corresponding vertex `k_f`.
    pub vertex: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LandmarkSet {
    pub entries: Vec<Landmark>,
}

impl LandmarkSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn validate(&self, vertex_count: usize) -> Result<()> {
        for (i, lm) in self.entries.iter().enumerate() {
            if !(0.0..=1.0).contains(&lm.confidence) {
                return Err(Error::InvalidInput(format!(
                    "landmark {i}: confidence {} outside [0, 1]",
                    lm.confidence
                )));
            }
            if lm.vertex >= vertex_count {
                return Err(Error::InvalidInput(format!(
                    "landmark {i}: anchor {} >= vertex count {vertex_count}",
                    lm.vertex
                )));
            }
            if !lm.position.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite(format!("landmark {i} position")));
            }
        }
        Ok(())
    }

    /// Current `k_f` of every sliding landmark, in file order.
    pub fn sliding_vertices(&self) -> Vec<usize> {
        self.entries
            .iter()
            .filter(|l| l.kind == AnchorKind::Sliding)
            .map(|l| l.vertex)
            .collect()
    }

    /// Parses the text format `x y confidence kind [anchor_index]`. Missing
    /// anchor indices are taken from `anchors` by line order.
    pub fn parse(text: &str, anchors: Option<&[LandmarkAnchor]>, origin: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |msg: String| Error::format(origin, format!("line {}: {msg}", lineno + 1));
            let fields: Vec<&str> = line.split_whitespace().collect();
            if !(4..=5).contains(&fields.len()) {
                return Err(bad(format!("expected 4 or 5 fields, found {}", fields.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("'{s}': {e}")));
            let (x, y, confidence) = (num(fields[0])?, num(fields[1])?, num(fields[2])?);
            let kind = match fields[3] {
                "fixed" => AnchorKind::Fixed,
                "sliding" => AnchorKind::Sliding,
                other => return Err(bad(format!("unknown landmark kind '{other}'"))),
            };
            let index = entries.len();
            let vertex = match fields.get(4) {
                Some(s) => s.parse::<usize>().map_err(|e| bad(format!("'{s}': {e}")))?,
                None => anchors
                    .and_then(|a| a.get(index))
                    .map(|a| a.vertex)
                    .ok_or_else(|| bad("no anchor index and no model anchor for this landmark".into()))?,
            };
            entries.push(Landmark {
                position: Vector2::new(x, y),
                confidence,
                kind,
                vertex,
            });
        }
        Ok(LandmarkSet { entries })
    }

    pub fn load(path: &Path, anchors: Option<&[LandmarkAnchor]>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, anchors, path)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# x y confidence kind anchor_index\n");
        for lm in &self.entries {
            let kind = match lm.kind {
                AnchorKind::Fixed => "fixed",
                AnchorKind::Sliding => "sliding",
            };
            let _ = writeln!(
                out,
                "{} {} {} {} {}",
                lm.position.x, lm.position.y, lm.confidence, kind, lm.vertex
            );
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Camera-space viewing ray through pixel `f`: origin at the camera center,
/// unit direction.
pub fn backproject_ray(f: &Vector2<f64>, k: &CameraIntrinsics) -> (Vector3<f64>, Vector3<f64>) {
    let d = Vector3::new((f.x - k.cx) / k.focal, (f.y - k.cy) / k.focal, 1.0);
    (Vector3::zeros(), d.normalize())
}

/// Squared distance from `p` to the line through the origin along unit `dir`.
pub fn ray_distance2(p: &Vector3<f64>, dir: &Vector3<f64>) -> f64 {
    let along = p.dot(dir);
    (p - dir * along).norm_squared()
}

/// Outcome of one sliding-correspondence round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlidingAssignment {
    /// New `k_f` for every landmark (fixed ones unchanged).
    pub vertices: Vec<usize>,
    /// Sliding landmarks left unchanged because no candidate existed.
    pub skipped: usize,
}

/// For each sliding landmark, picks the candidate vertex of `state` (the base
/// level) closest to the landmark's viewing ray. Candidates are the visible
/// contour vertices, or all contour vertices when none is visible; ties go to
/// the lowest index.
pub fn sliding_assignment(
    state: &RenderState,
    lms: &LandmarkSet,
    contour_candidates: &[usize],
    k: &CameraIntrinsics,
) -> SlidingAssignment {
    let mut visible: Vec<usize> = contour_candidates
        .iter()
        .copied()
        .filter(|&i| state.visible.get(i).copied().unwrap_or(false))
        .collect();
    if visible.is_empty() {
        visible = contour_candidates.to_vec();
    }
    visible.sort_unstable();
    let mut skipped = 0;
    let vertices = lms
        .entries
        .iter()
        .map(|lm| {
            if lm.kind == AnchorKind::Fixed {
                return lm.vertex;
            }
            let (_, dir) = backproject_ray(&lm.position, k);
            let best = visible
                .iter()
                .map(|&i| (i, ray_distance2(&state.cam_vertices[i], &dir)))
                .fold(None, |acc: Option<(usize, f64)>, (i, d)| match acc {
                    Some((_, bd)) if bd <= d => acc,
                    _ => Some((i, d)),
                });
            match best {
                Some((i, _)) => i,
                None => {
                    skipped += 1;
                    lm.vertex
                }
            }
        })
        .collect();
    if skipped > 0 {
        warn!("{skipped} sliding landmarks had no contour candidate");
    }
    SlidingAssignment { vertices, skipped }
}

/// Applies [`sliding_assignment`] in place; returns how many `k_f` changed.
pub fn update_sliding_indices(
    state: &RenderState,
    lms: &mut LandmarkSet,
    contour_candidates: &[usize],
    k: &CameraIntrinsics,
) -> usize {
    let assignment = sliding_assignment(state, lms, contour_candidates, k);
    let mut changed = 0;
    for (lm, v) in lms.entries.iter_mut().zip(assignment.vertices) {
        if lm.vertex != v {
            changed += 1;
            lm.vertex = v;
        }
    }
    changed
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::{project, render_geometry, Illumination, Level, Pose};

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::default_for(64, 64)
    }

    #[test]
    fn ray_through_principal_point_is_optical_axis() {
        let k = k();
        let (o, d) = backproject_ray(&Vector2::new(k.cx, k.cy), &k);
        assert_eq!(o, Vector3::zeros());
        assert_eq!(d, Vector3::new(0.0, 0.0, 1.0));
        let (_, d) = backproject_ray(&Vector2::new(k.cx + k.focal, k.cy), &k);
        assert!((d - Vector3::new(1.0, 0.0, 1.0).normalize()).norm() < 1e-15);
    }

    #[test]
    fn ray_points_project_back_to_the_pixel() {
        let k = k();
        let f = Vector2::new(13.25, 50.5);
        let (o, d) = backproject_ray(&f, &k);
        for s in [0.1, 1.0, 25.0] {
            let p = project(&(o + d * s), &k).unwrap();
            assert!((p - f).norm() < 1e-10);
        }
    }

    fn scene(points: Vec<Vector3<f64>>) -> RenderState {
        let n = points.len();
        render_geometry(
            Level::Base,
            points,
            vec![Vector3::repeat(0.5); n],
            &[],
            &Pose::default(),
            &Illumination::ambient([1.0; 3]),
            &k(),
        )
    }

    fn sliding_at(p: Vector2<f64>) -> LandmarkSet {
        LandmarkSet {
            entries: vec![Landmark {
                position: p,
                confidence: 1.0,
                kind: AnchorKind::Sliding,
                vertex: 0,
            }],
        }
    }

    #[test]
    fn landmark_on_a_projection_selects_that_vertex() {
        let pts = vec![
            Vector3::new(0.1, 0.0, 3.0),
            Vector3::new(-0.2, 0.1, 3.0),
            Vector3::new(0.3, 0.3, 3.5),
        ];
        let s = scene(pts);
        let target = s.pixels[2];
        let mut lms = sliding_at(target);
        update_sliding_indices(&s, &mut lms, &[0, 1, 2], &k());
        assert_eq!(lms.entries[0].vertex, 2);
    }

    #[test]
    fn equidistant_candidates_pick_lowest_index() {
        let pts = vec![
            Vector3::new(0.0, 0.0, 3.0),
            Vector3::new(0.2, 0.0, 3.0),
            Vector3::new(-0.2, 0.0, 3.0),
        ];
        let s = scene(pts);
        let k = k();
        let lms = sliding_at(Vector2::new(k.cx, k.cy));
        let a = sliding_assignment(&s, &lms, &[2, 1], &k);
        assert_eq!(a.vertices, vec![1]);
    }

    #[test]
    fn fixed_landmarks_never_move() {
        let s = scene(vec![Vector3::new(0.0, 0.0, 3.0), Vector3::new(0.5, 0.0, 3.0)]);
        let mut lms = LandmarkSet {
            entries: vec![Landmark {
                position: Vector2::new(0.0, 0.0),
                confidence: 1.0,
                kind: AnchorKind::Fixed,
                vertex: 1,
            }],
        };
        assert_eq!(update_sliding_indices(&s, &mut lms, &[0], &k()), 0);
        assert_eq!(lms.entries[0].vertex, 1);
    }

    #[test]
    fn parse_with_and_without_anchor_indices() {
        let anchors = [
            LandmarkAnchor {
                kind: AnchorKind::Sliding,
                vertex: 4,
            },
            LandmarkAnchor {
                kind: AnchorKind::Fixed,
                vertex: 9,
            },
        ];
        let text = "# header\n1.5 2.5 0.9 sliding\n3 4 1 fixed 11 # trailing\n";
        let lms = LandmarkSet::parse(text, Some(&anchors), Path::new("x.lms")).unwrap();
        assert_eq!(lms.len(), 2);
        assert_eq!(lms.entries[0].vertex, 4);
        assert_eq!(lms.entries[1].vertex, 11);
        assert_eq!(lms.entries[0].kind, AnchorKind::Sliding);
        let again = LandmarkSet::parse(&lms.to_text(), None, Path::new("y.lms")).unwrap();
        assert_eq!(again, lms);
    }

    #[test]
    fn parse_errors_name_the_line() {
        let err = LandmarkSet::parse("1 2 1 wobbly 0\n", None, Path::new("a.lms")).unwrap_err();
        assert!(err.to_string().contains("line 1"));
        assert!(LandmarkSet::parse("1 2 1 fixed\n", None, Path::new("a.lms")).is_err());
        let lms = LandmarkSet::parse("1 2 1.5 fixed 0\n", None, Path::new("a.lms")).unwrap();
        assert!(lms.validate(10).is_err());
    }
}
