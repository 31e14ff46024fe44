//! Synthetic training corpora: random in-base faces plus a fixed geometry
//! bump and a dark reflectance patch that the base cannot express.

use nalgebra::{DVector, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::canonical_translation;
use crate::error::Result;
use crate::gradients::ParamVector;
use crate::landmarks::{Landmark, LandmarkSet};
use crate::model::{head_proxy, MultiLevelModel, HEAD_SKIN};
use crate::render::{
    render_geometry, to_points, vertex_normals, CameraIntrinsics, Canvas, Illumination, Image, Level,
    RenderState, PREVIEW_BACKGROUND,
};

/// Smooth outward bump. `center` is a fraction of the mean-face bounding box
/// (x right, y down); `radius` and `height` are fractions of the face height.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BumpSpec {
    pub center: [f64; 2],
    pub radius: f64,
    pub height: f64,
}

impl Default for BumpSpec {
    fn default() -> Self {
        BumpSpec {
            center: [0.72, 0.22],
            radius: 0.1,
            height: 0.05,
        }
    }
}

/// Reflectance darkening: reflectance is multiplied by a factor blending from
/// `scale` at the center to 1 with a Gaussian falloff.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchSpec {
    pub center: [f64; 2],
    pub radius: f64,
    pub scale: [f64; 3],
}

impl Default for PatchSpec {
    fn default() -> Self {
        PatchSpec {
            center: [0.5, 0.9],
            radius: 0.12,
            scale: [0.35, 0.3, 0.3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub seed: u64,
    pub count: usize,
    pub width: usize,
    pub height: usize,
    pub bump: Option<BumpSpec>,
    pub patch: Option<PatchSpec>,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            seed: 1,
            count: 20,
            width: 64,
            height: 64,
            bump: Some(BumpSpec::default()),
            patch: Some(PatchSpec::default()),
        }
    }
}

impl CorpusConfig {
    pub fn intrinsics(&self) -> CameraIntrinsics {
        CameraIntrinsics::default_for(self.width, self.height)
    }
}

#[derive(Debug, Clone)]
pub struct CorpusSample {
    pub image: Image,
    pub landmarks: LandmarkSet,
    /// In-base ground truth (corrective codes zero).
    pub params: ParamVector,
    /// Rendered model-space geometry, bump included.
    pub geometry: DVector<f64>,
    /// Rendered reflectance, patch included.
    pub reflectance: DVector<f64>,
}

struct FaceFrame {
    lo: Vector2<f64>,
    size: Vector2<f64>,
}

impl FaceFrame {
    fn of(model: &MultiLevelModel) -> Self {
        let pts = to_points(&model.base.a_g);
        let mut lo = Vector2::repeat(f64::INFINITY);
        let mut hi = Vector2::repeat(f64::NEG_INFINITY);
        for p in &pts {
            lo = lo.inf(&p.xy());
            hi = hi.sup(&p.xy());
        }
        FaceFrame { lo, size: hi - lo }
    }

    /// Mean-face vertex nearest (in the image plane) to a bounding-box point.
    fn anchor(&self, model: &MultiLevelModel, center: [f64; 2]) -> Vector3<f64> {
        let target = self.lo + self.size.component_mul(&Vector2::new(center[0], center[1]));
        to_points(&model.base.a_g)
            .into_iter()
            .min_by(|a, b| (a.xy() - target).norm_squared().total_cmp(&(b.xy() - target).norm_squared()))
            .expect("model has vertices")
    }

    fn falloff(&self, model: &MultiLevelModel, center: [f64; 2], radius: f64) -> Vec<f64> {
        let c = self.anchor(model, center);
        let s = radius * self.size.y;
        to_points(&model.base.a_g)
            .iter()
            .map(|p| (-(p - c).norm_squared() / (2.0 * s * s)).exp())
            .collect()
    }
}

const HEAD_PROXY_SEGMENTS: usize = 24;
/// Slightly inside the face surface so the face wins where they overlap.
const HEAD_PROXY_SCALE: f64 = 0.995;

/// Per-vertex displacement of the bump along the mean-face normals.
pub fn bump_field(model: &MultiLevelModel, spec: &BumpSpec) -> DVector<f64> {
    let frame = FaceFrame::of(model);
    let weights = frame.falloff(model, spec.center, spec.radius);
    let normals = vertex_normals(&to_points(&model.base.a_g), model.topology.triangles()).normals;
    let h = spec.height * frame.size.y;
    DVector::from_iterator(
        3 * normals.len(),
        normals.iter().zip(&weights).flat_map(|(n, w)| (n * (h * w)).iter().copied().collect::<Vec<_>>()),
    )
}

/// Per-vertex reflectance multipliers of the patch.
pub fn patch_factors(model: &MultiLevelModel, spec: &PatchSpec) -> Vec<Vector3<f64>> {
    let frame = FaceFrame::of(model);
    frame
        .falloff(model, spec.center, spec.radius)
        .into_iter()
        .map(|w| Vector3::from_fn(|c, _| 1.0 - w * (1.0 - spec.scale[c])))
        .collect()
}

/// Ground-truth render state of a sample (point-based, base level).
pub fn corpus_gt_state(model: &MultiLevelModel, sample: &CorpusSample, k: &CameraIntrinsics) -> RenderState {
    render_geometry(
        Level::Base,
        to_points(&sample.geometry),
        to_points(&sample.reflectance),
        model.topology.triangles(),
        &sample.params.pose(),
        &sample.params.gamma_b,
        k,
    )
}

fn random_params(model: &MultiLevelModel, k: &CameraIntrinsics, rng: &mut ChaCha8Rng) -> ParamVector {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut p = ParamVector::zeros(model);
    for (a, s) in p.alpha.iter_mut().zip(model.base.sigma_g.iter()) {
        *a = 0.6 * s * normal.sample(rng);
    }
    for (b, s) in p.beta.iter_mut().zip(model.base.sigma_r.iter()) {
        *b = 0.6 * s * normal.sample(rng);
    }
    p.omega = Vector3::from_fn(|_, _| 0.08 * normal.sample(rng));
    p.t = canonical_translation(model, k)
        + Vector3::new(0.05 * normal.sample(rng), 0.05 * normal.sample(rng), 0.15 * normal.sample(rng));
    let mut gamma = nalgebra::SMatrix::<f64, 9, 3>::zeros();
    let band1: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.4..0.4));
    let band2: [f64; 5] = std::array::from_fn(|_| rng.random_range(-0.15..0.15));
    for c in 0..3 {
        let tint = rng.random_range(0.93..1.07);
        gamma[(0, c)] = rng.random_range(2.6..3.0);
        for b in 0..3 {
            gamma[(1 + b, c)] = band1[b] * tint;
        }
        for b in 0..5 {
            gamma[(4 + b, c)] = band2[b] * tint;
        }
    }
    p.gamma_b = Illumination { gamma };
    p.gamma_f = p.gamma_b;
    p
}

/// Renders one corpus sample from in-base ground-truth parameters: the
/// bump and patch of `cfg` are added, and the face is painted over a
/// skin-colored head so that border vertices sample face-like colors.
/// Landmarks are the projected anchors (confidence 1).
pub fn render_sample(model: &MultiLevelModel, cfg: &CorpusConfig, params: ParamVector) -> Result<CorpusSample> {
    let k = cfg.intrinsics();
    params.check_dims(model)?;
    let mut geometry = model.base.eval_geometry(&params.alpha)?;
    if let Some(b) = &cfg.bump {
        geometry += bump_field(model, b);
    }
    let mut reflectance = model.base.eval_reflectance(&params.beta)?;
    if let Some(p) = &cfg.patch {
        for (i, m) in patch_factors(model, p).iter().enumerate() {
            for c in 0..3 {
                reflectance[3 * i + c] *= m[c];
            }
        }
    }
    let (proxy_pts, proxy_tris) = head_proxy(HEAD_PROXY_SEGMENTS, HEAD_PROXY_SCALE);
    let head = render_geometry(
        Level::Base,
        proxy_pts.clone(),
        vec![Vector3::from(HEAD_SKIN); proxy_pts.len()],
        &proxy_tris,
        &params.pose(),
        &params.gamma_b,
        &k,
    );
    let mut canvas = Canvas::new(Image::new(k.width, k.height, Vector3::repeat(PREVIEW_BACKGROUND)));
    canvas.draw(&head.cam_vertices, &head.colors, &proxy_tris, &k);
    let mut sample = CorpusSample {
        image: Image::new(1, 1, Vector3::zeros()),
        landmarks: LandmarkSet::default(),
        params,
        geometry,
        reflectance,
    };
    let face = corpus_gt_state(model, &sample, &k);
    // fresh depth buffer: the face is painted over the head regardless of depth
    let mut canvas = Canvas::new(canvas.image);
    canvas.draw(&face.cam_vertices, &face.colors, model.topology.triangles(), &k);
    sample.image = canvas.image;
    sample.landmarks = LandmarkSet {
        entries: model
            .topology
            .landmark_anchors
            .iter()
            .map(|a| Landmark {
                position: face.pixels[a.vertex],
                confidence: 1.0,
                kind: a.kind,
                vertex: a.vertex,
            })
            .collect(),
    };
    Ok(sample)
}

/// Renders `cfg.count` samples with seeded random in-base parameters.
pub fn synth_corpus(model: &MultiLevelModel, cfg: &CorpusConfig) -> Result<Vec<CorpusSample>> {
    model.validate()?;
    let k = cfg.intrinsics();
    k.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let params: Vec<ParamVector> = (0..cfg.count).map(|_| random_params(model, &k, &mut rng)).collect();
    params.into_iter().map(|p| render_sample(model, cfg, p)).collect()
}
