//! Individual energy terms. Each `*_acc` variant optionally accumulates
//! `scale * d(term)` into caller-owned buffers while computing the value with
//! exactly the same arithmetic as the plain variant.

use nalgebra::{DVector, Vector2, Vector3};

use super::{empty_visible, ChromaWeights, GloSamples, Weights};
use crate::landmarks::LandmarkSet;
use crate::model::{BaseModel, MeshTopology};
use crate::render::{Image, RenderState};

type V2 = Vector2<f64>;
type V3 = Vector3<f64>;

/// Smoothed l2,1 photometric term of one level, normalized by the total
/// vertex count. `acc` receives d/d(pixel) and d/d(color).
pub(crate) fn photo_level_acc(
    state: &RenderState,
    visible: &[bool],
    image: &Image,
    eps: f64,
    acc: Option<(f64, &mut [V2], &mut [V3])>,
) -> f64 {
    let n = state.vertices.len();
    let eps2 = eps * eps;
    let mut sum = 0.0;
    let mut any = false;
    match acc {
        None => {
            for i in (0..n).filter(|&i| visible[i]) {
                any = true;
                let d = image.sample(&state.pixels[i]) - state.colors[i];
                sum += (d.norm_squared() + eps2).sqrt();
            }
        }
        Some((scale, g_u, g_c)) => {
            let s = scale / n as f64;
            for i in (0..n).filter(|&i| visible[i]) {
                any = true;
                let (sample, jac) = image.sample_with_gradient(&state.pixels[i]);
                let d = sample - state.colors[i];
                let e = (d.norm_squared() + eps2).sqrt();
                sum += e;
                let gd = d * (s / e);
                g_u[i] += jac.transpose() * gd;
                g_c[i] -= gd;
            }
        }
    }
    if !any {
        empty_visible(match state.level {
            crate::render::Level::Base => "base",
            crate::render::Level::Final => "final",
        });
        return 0.0;
    }
    sum / n as f64
}

/// One level's photometric term using that state's own visibility.
pub fn e_photo_level(state: &RenderState, image: &Image, weights: &Weights) -> f64 {
    photo_level_acc(state, &state.visible, image, weights.eps_l21, None)
}

/// Two-level photometric term (base only when `photo_final` is off).
pub fn e_photo(base: &RenderState, final_: &RenderState, image: &Image, weights: &Weights) -> f64 {
    let b = e_photo_level(base, image, weights);
    if weights.photo_final {
        b + e_photo_level(final_, image, weights)
    } else {
        b
    }
}

pub(crate) fn sparse_acc(
    base: &RenderState,
    lms: &LandmarkSet,
    acc: Option<(f64, &mut [V2])>,
) -> f64 {
    if lms.is_empty() {
        return 0.0;
    }
    let inv = 1.0 / lms.len() as f64;
    let mut sum = 0.0;
    let mut acc = acc;
    for lm in &lms.entries {
        let d = lm.position - base.pixels[lm.vertex];
        sum += lm.confidence * d.norm_squared();
        if let Some((scale, g_u)) = acc.as_mut() {
            g_u[lm.vertex] -= d * (2.0 * lm.confidence * inv * *scale);
        }
    }
    sum * inv
}

/// Mean confidence-weighted squared pixel distance between landmarks and the
/// base-level projections of their anchor vertices.
pub fn e_sparse(base: &RenderState, lms: &LandmarkSet) -> f64 {
    sparse_acc(base, lms, None)
}

pub(crate) fn std_acc(
    alpha: &DVector<f64>,
    beta: &DVector<f64>,
    base: &BaseModel,
    w_rstd: f64,
    acc: Option<(f64, &mut DVector<f64>, &mut DVector<f64>)>,
) -> f64 {
    let zg: f64 = alpha.iter().zip(base.sigma_g.iter()).map(|(a, s)| (a / s).powi(2)).sum();
    let zr: f64 = beta.iter().zip(base.sigma_r.iter()).map(|(b, s)| (b / s).powi(2)).sum();
    if let Some((scale, ga, gb)) = acc {
        for k in 0..alpha.len() {
            ga[k] += scale * 2.0 * alpha[k] / (base.sigma_g[k] * base.sigma_g[k]);
        }
        for k in 0..beta.len() {
            gb[k] += scale * w_rstd * 2.0 * beta[k] / (base.sigma_r[k] * base.sigma_r[k]);
        }
    }
    zg + w_rstd * zr
}

/// Tikhonov prior on the base coefficients (z-scores).
pub fn e_std(alpha: &DVector<f64>, beta: &DVector<f64>, base: &BaseModel, weights: &Weights) -> f64 {
    std_acc(alpha, beta, base, weights.w_rstd, None)
}

pub(crate) fn smo_acc(
    field: &[V3],
    topology: &MeshTopology,
    w_smo: f64,
    acc: Option<(f64, &mut [V3])>,
) -> f64 {
    if w_smo == 0.0 {
        return 0.0;
    }
    let n = field.len() as f64;
    let mut acc = acc;
    let mut sum = 0.0;
    for (i, ring) in topology.one_ring().iter().enumerate() {
        if ring.is_empty() {
            continue;
        }
        let inv = 1.0 / ring.len() as f64;
        let mean = ring.iter().fold(V3::zeros(), |a, &j| a + field[j]) * inv;
        let lap = field[i] - mean;
        sum += lap.norm_squared();
        if let Some((scale, g)) = acc.as_mut() {
            let gl = lap * (2.0 * w_smo / n * *scale);
            g[i] += gl;
            for &j in ring {
                g[j] -= gl * inv;
            }
        }
    }
    w_smo / n * sum
}

/// Umbrella-Laplacian smoothness of the geometry correction field.
pub fn e_smo(field: &[V3], topology: &MeshTopology, weights: &Weights) -> f64 {
    smo_acc(field, topology, weights.w_smo, None)
}

pub(crate) fn ref_acc(
    r: &[V3],
    chroma: &ChromaWeights,
    weights: &Weights,
    acc: Option<(f64, &mut [V3])>,
) -> f64 {
    if weights.w_ref == 0.0 {
        return 0.0;
    }
    let n = r.len() as f64;
    let half_p = 0.5 * weights.p_exp;
    let mut acc = acc;
    let mut sum = 0.0;
    for (&(i, j), &w) in chroma.edges.iter().zip(&chroma.weights) {
        let d = r[i] - r[j];
        let q = d.norm_squared() + weights.eps_p;
        // both directed pairs (i, j) and (j, i)
        sum += 2.0 * w * q.powf(half_p);
        if let Some((scale, g)) = acc.as_mut() {
            let gd = d * (2.0 * w * weights.p_exp * q.powf(half_p - 1.0) * weights.w_ref / n * *scale);
            g[i] += gd;
            g[j] -= gd;
        }
    }
    weights.w_ref / n * sum
}

/// Edge-weighted sparsity prior on final-level reflectance differences.
pub fn e_ref(r: &[V3], chroma: &ChromaWeights, weights: &Weights) -> f64 {
    ref_acc(r, chroma, weights, None)
}

pub(crate) fn glo_acc(
    r: &[V3],
    samples: &GloSamples,
    w_glo: f64,
    acc: Option<(f64, &mut [V3])>,
) -> f64 {
    if w_glo == 0.0 || samples.mask_size == 0 {
        return 0.0;
    }
    let inv = 1.0 / samples.mask_size as f64;
    let mut acc = acc;
    let mut sum = 0.0;
    for (i, g) in &samples.pairs {
        for &j in g {
            let d = r[*i] - r[j];
            sum += d.norm_squared();
            if let Some((scale, gr)) = acc.as_mut() {
                let gd = d * (2.0 * w_glo * inv * *scale);
                gr[*i] += gd;
                gr[j] -= gd;
            }
        }
    }
    w_glo * inv * sum
}

/// Reflectance constancy between random skin-vertex pairs.
pub fn e_glo(r: &[V3], samples: &GloSamples, weights: &Weights) -> f64 {
    glo_acc(r, samples, weights.w_glo, None)
}

pub(crate) fn sta_acc(field: &[V3], w_sta: f64, acc: Option<(f64, &mut [V3])>) -> f64 {
    if w_sta == 0.0 {
        return 0.0;
    }
    let n = field.len() as f64;
    let sum: f64 = field.iter().map(|f| f.norm_squared()).sum();
    if let Some((scale, g)) = acc {
        for (gi, f) in g.iter_mut().zip(field) {
            *gi += f * (2.0 * w_sta / n * scale);
        }
    }
    w_sta / n * sum
}

/// Penalizes large geometry corrections.
pub fn e_sta(field: &[V3], weights: &Weights) -> f64 {
    sta_acc(field, weights.w_sta, None)
}

/// Mean Euclidean RGB distance over visible vertices (0 when none is visible).
pub fn photometric_error(state: &RenderState, image: &Image) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in state.visible_indices() {
        sum += (image.sample(&state.pixels[i]) - state.colors[i]).norm();
        count += 1;
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::{glo_samples, GLO_SAMPLES};
    use crate::landmarks::Landmark;
    use crate::model::AnchorKind;
    use crate::render::Level;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn state(pixels: Vec<V2>, colors: Vec<V3>, visible: Vec<bool>) -> RenderState {
        let n = pixels.len();
        RenderState {
            level: Level::Base,
            vertices: vec![V3::zeros(); n],
            reflectance: colors.clone(),
            cam_vertices: vec![V3::new(0.0, 0.0, 1.0); n],
            normals: vec![V3::new(0.0, 0.0, -1.0); n],
            pixels,
            sh: vec![[0.0; 9]; n],
            irradiance: vec![V3::repeat(1.0); n],
            colors,
            visible,
            degenerate_normals: 0,
        }
    }

    /// Two-triangle strip: 0-1-2, 1-3-2.
    fn quad() -> MeshTopology {
        MeshTopology::new(4, vec![[0, 1, 2], [1, 3, 2]], vec![], vec![0, 1], vec![0]).unwrap()
    }

    fn hexagon() -> MeshTopology {
        // center 0, ring 1..=5
        let tris = (1..=5).map(|k| [0, k, k % 5 + 1]).collect();
        MeshTopology::new(6, tris, vec![], vec![0], vec![1]).unwrap()
    }

    #[test]
    fn photo_black_image_white_colors() {
        let img = Image::new(8, 8, V3::zeros());
        let s = state(vec![V2::new(2.0, 3.0); 5], vec![V3::repeat(1.0); 5], vec![true; 5]);
        let w = Weights::default();
        let e = e_photo(&s, &s, &img, &w);
        assert!((e - 2.0 * (3.0 + w.eps_l21 * w.eps_l21).sqrt()).abs() < 1e-14);
    }

    #[test]
    fn photo_matches_explicit_sum_and_divides_by_n() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let img = Image::from_fn(10, 10, |_, _| V3::new(rng.random(), rng.random(), rng.random()));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 12;
        let pixels: Vec<V2> = (0..n).map(|_| V2::new(rng.random_range(0.0..9.0), rng.random_range(0.0..9.0))).collect();
        let colors: Vec<V3> = (0..n).map(|_| V3::new(rng.random(), rng.random(), rng.random())).collect();
        let visible: Vec<bool> = (0..n).map(|i| i % 3 != 0).collect();
        let s = state(pixels.clone(), colors.clone(), visible.clone());
        let eps = 1e-4;
        let mut expected = 0.0;
        for i in 0..n {
            if !visible[i] {
                continue;
            }
            // direct four-tap bilinear formula
            let (x, y) = (pixels[i].x, pixels[i].y);
            let (x0, y0) = (x.floor() as usize, y.floor() as usize);
            let (fx, fy) = (x - x0 as f64, y - y0 as f64);
            let v = img.get(x0, y0) * ((1.0 - fx) * (1.0 - fy))
                + img.get(x0 + 1, y0) * (fx * (1.0 - fy))
                + img.get(x0, y0 + 1) * ((1.0 - fx) * fy)
                + img.get(x0 + 1, y0 + 1) * (fx * fy);
            let d = v - colors[i];
            expected += (d.x * d.x + d.y * d.y + d.z * d.z + eps * eps).sqrt();
        }
        expected /= n as f64;
        let got = photo_level_acc(&s, &visible, &img, eps, None);
        assert!((got - expected).abs() < 1e-13);
    }

    #[test]
    fn photometric_error_uniform_offset() {
        let img = Image::new(8, 8, V3::new(0.5, 0.2, 0.3));
        let s = state(vec![V2::new(4.0, 4.0); 3], vec![V3::new(0.4, 0.2, 0.3); 3], vec![true, true, false]);
        assert!((photometric_error(&s, &img) - 0.1).abs() < 1e-12);
        let exact = state(vec![V2::new(1.0, 1.0)], vec![V3::new(0.5, 0.2, 0.3)], vec![true]);
        assert_eq!(photometric_error(&exact, &img), 0.0);
    }

    fn lm(x: f64, y: f64, c: f64, vertex: usize) -> Landmark {
        Landmark {
            position: V2::new(x, y),
            confidence: c,
            kind: AnchorKind::Fixed,
            vertex,
        }
    }

    #[test]
    fn sparse_cases() {
        let s = state(vec![V2::new(1.0, 2.0), V2::new(5.0, 5.0)], vec![V3::zeros(); 2], vec![true; 2]);
        let exact = LandmarkSet {
            entries: vec![lm(1.0, 2.0, 1.0, 0), lm(5.0, 5.0, 0.7, 1)],
        };
        assert_eq!(e_sparse(&s, &exact), 0.0);
        let one = LandmarkSet {
            entries: vec![lm(4.0, 6.0, 1.0, 0)],
        };
        assert_eq!(e_sparse(&s, &one), 25.0);
        let gated = LandmarkSet {
            entries: vec![lm(40.0, 6.0, 0.0, 0), lm(-3.0, 9.0, 0.0, 1)],
        };
        assert_eq!(e_sparse(&s, &gated), 0.0);
    }

    fn base_model(m: usize, r: usize) -> BaseModel {
        BaseModel {
            a_g: DVector::zeros(3),
            a_r: DVector::zeros(3),
            b_g: nalgebra::DMatrix::zeros(3, m),
            b_r: nalgebra::DMatrix::zeros(3, r),
            sigma_g: DVector::from_fn(m, |k, _| 0.5 + k as f64),
            sigma_r: DVector::from_fn(r, |k, _| 2.0 / (1.0 + k as f64)),
            m_s: m - 1,
            m_e: 1,
            m_r: r,
        }
    }

    #[test]
    fn std_cases() {
        let b = base_model(5, 3);
        let w = Weights::default();
        assert_eq!(e_std(&DVector::zeros(5), &DVector::zeros(3), &b, &w), 0.0);
        assert_eq!(e_std(&b.sigma_g, &DVector::zeros(3), &b, &w), 5.0);
        let alpha = DVector::from_vec(vec![0.3, -1.0, 2.0, 0.1, 0.0]);
        let beta = DVector::from_vec(vec![1.0, -0.5, 0.25]);
        let mut expected = 0.0;
        for k in 0..5 {
            expected += alpha[k] * alpha[k] / (b.sigma_g[k] * b.sigma_g[k]);
        }
        let mut er = 0.0;
        for k in 0..3 {
            er += beta[k] * beta[k] / (b.sigma_r[k] * b.sigma_r[k]);
        }
        expected += w.w_rstd * er;
        assert!((e_std(&alpha, &beta, &b, &w) - expected).abs() < 1e-14);
    }

    #[test]
    fn smo_cases() {
        let topo = hexagon();
        let w = Weights::default();
        assert_eq!(e_smo(&[V3::zeros(); 6], &topo, &w), 0.0);
        assert_eq!(e_smo(&[V3::new(0.25, -1.0, 0.5); 6], &topo, &w), 0.0);
        let field: Vec<V3> = (0..6).map(|i| V3::new(i as f64, (i * i) as f64 * 0.1, 1.0 - i as f64)).collect();
        // hand expansion: center sees all five ring vertices; ring vertex k sees
        // the center and its two ring neighbours
        let mut expected = 0.0;
        let c = field[0] - (field[1] + field[2] + field[3] + field[4] + field[5]) / 5.0;
        expected += c.norm_squared();
        for k in 1..=5 {
            let prev = if k == 1 { 5 } else { k - 1 };
            let next = if k == 5 { 1 } else { k + 1 };
            let l = field[k] - (field[0] + field[prev] + field[next]) / 3.0;
            expected += l.norm_squared();
        }
        expected *= w.w_smo / 6.0;
        let got = e_smo(&field, &topo, &w);
        assert!((got - expected).abs() < 1e-12 * expected);
    }

    #[test]
    fn ref_cases() {
        let w = Weights {
            w_ref: 1.0,
            ..Weights::default()
        };
        let topo = quad();
        let chroma = ChromaWeights::uniform(&topo, 1.0);
        let flat = e_ref(&[V3::repeat(0.4); 4], &chroma, &w);
        // 5 undirected edges, both directions, floor eps^(p/2) each
        let floor = 10.0 * w.eps_p.powf(0.45) / 4.0;
        assert!((flat - floor).abs() < 1e-15);
        assert!(flat < 1e-3);

        let two = ChromaWeights {
            edges: vec![(0, 1)],
            weights: vec![1.0],
        };
        let r = [V3::new(1.0, 0.0, 0.0), V3::zeros()];
        let expected = 2.0 / 2.0 * (1.0 + w.eps_p).powf(0.45);
        assert!((e_ref(&r, &two, &w) - expected).abs() < 1e-15);
    }

    #[test]
    fn ref_matches_double_sum_and_is_edge_symmetric() {
        let topo = hexagon();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let r: Vec<V3> = (0..6).map(|_| V3::new(rng.random(), rng.random(), rng.random())).collect();
        let edges = topo.edges();
        let weights: Vec<f64> = edges.iter().map(|_| rng.random_range(0.1..1.0)).collect();
        let chroma = ChromaWeights {
            edges: edges.clone(),
            weights: weights.clone(),
        };
        let w = Weights::default();
        let wij = |a: usize, b: usize| {
            let key = (a.min(b), a.max(b));
            weights[edges.iter().position(|&e| e == key).unwrap()]
        };
        let mut expected = 0.0;
        for i in 0..6 {
            for &j in &topo.one_ring()[i] {
                expected += wij(i, j) * ((r[i] - r[j]).norm_squared() + w.eps_p).powf(0.45);
            }
        }
        expected *= w.w_ref / 6.0;
        assert!((e_ref(&r, &chroma, &w) - expected).abs() < 1e-12 * expected);
        let swapped = ChromaWeights {
            edges: edges.iter().map(|&(a, b)| (b, a)).collect(),
            weights,
        };
        assert!((e_ref(&r, &swapped, &w) - expected).abs() < 1e-12 * expected);
    }

    #[test]
    fn glo_cases() {
        let w = Weights::default();
        let samples = GloSamples {
            mask_size: 2,
            pairs: vec![(0, [1; GLO_SAMPLES]), (1, [0; GLO_SAMPLES])],
        };
        let r = [V3::new(0.5, 0.0, 0.0), V3::zeros()];
        assert!((e_glo(&r, &samples, &w) - 1.5 * w.w_glo).abs() < 1e-12);
        assert_eq!(e_glo(&[V3::repeat(0.3); 2], &samples, &w), 0.0);

        let drawn = glo_samples(&[2, 5, 7, 9], 3);
        assert_eq!(drawn, glo_samples(&[2, 5, 7, 9], 3));
        for (i, g) in &drawn.pairs {
            assert!(g.iter().all(|j| j != i && [2, 5, 7, 9].contains(j)));
        }
    }

    #[test]
    fn sta_cases() {
        let w = Weights::default();
        assert_eq!(e_sta(&[V3::zeros(); 7], &w), 0.0);
        let mut f = vec![V3::zeros(); 7];
        f[3] = V3::new(1.0, 0.0, 0.0);
        assert!((e_sta(&f, &w) - w.w_sta / 7.0).abs() < 1e-16);
    }
}
