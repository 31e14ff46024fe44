//! Reverse-mode gradient of the total energy with respect to the per-image
//! unknowns and (training mode) the corrective parameters, plus the
//! finite-difference oracle used to verify it.

mod check;
mod fd;
mod params;

pub use check::{gradcheck, gradcheck_instance, BlockCheck, GradCheckConfig, GradCheckReport, Instance};
pub use fd::{finite_diff, finite_diff_layers, FdStep};
pub use params::{Block, GradientVector, ParamRecord, ParamVector};

use nalgebra::{DVector, Matrix3, Vector2, Vector3};

use crate::energy::terms::{glo_acc, photo_level_acc, ref_acc, smo_acc, sparse_acc, sta_acc, std_acc};
use crate::energy::{EnergyReport, Problem};
use crate::error::{Error, Result};
use crate::model::{ForwardTrace, LayerGrad, MultiLevelModel};
use crate::render::{
    project_jacobian, render_geometry, rotation_derivatives, sh_gradient, to_points,
    vertex_normals_backward, CameraIntrinsics, Illumination, Level, RenderState, SH_COUNT,
};

type V2 = Vector2<f64>;
type V3 = Vector3<f64>;

/// Whether corrective-parameter gradients are requested as well.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Fit,
    Train,
}

/// Both levels rendered at one parameter vector, with the corrective forward
/// traces needed for backpropagation.
#[derive(Debug, Clone)]
pub struct Scene {
    pub base: RenderState,
    pub final_: Option<RenderState>,
    trace_g: ForwardTrace,
    trace_r: ForwardTrace,
}

impl Scene {
    pub fn render(
        model: &MultiLevelModel,
        params: &ParamVector,
        k: &CameraIntrinsics,
        with_final: bool,
    ) -> Result<Self> {
        params.check_dims(model)?;
        let vb = model.base.eval_geometry(&params.alpha)?;
        let rb = model.base.eval_reflectance(&params.beta)?;
        let trace_g = model.geom_corr.forward(&params.delta_g)?;
        let trace_r = model.refl_corr.forward(&params.delta_r)?;
        let tris = model.topology.triangles();
        let pose = params.pose();
        let final_ = with_final.then(|| {
            render_geometry(
                Level::Final,
                to_points(&(&vb + &trace_g.output)),
                to_points(&(&rb + &trace_r.output)),
                tris,
                &pose,
                &params.gamma_f,
                k,
            )
        });
        let base = render_geometry(Level::Base, to_points(&vb), to_points(&rb), tris, &pose, &params.gamma_b, k);
        Ok(Scene {
            base,
            final_,
            trace_g,
            trace_r,
        })
    }

    /// The final-level state, or the base state when the final level was not
    /// rendered.
    pub fn final_or_base(&self) -> &RenderState {
        self.final_.as_ref().unwrap_or(&self.base)
    }
}

/// Deliberate gradient corruptions, used to show the checker catches them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub(crate) enum Fault {
    #[default]
    None,
    ProjectionJacobian,
}

/// Energy report plus (optionally) its gradient.
pub fn grad_total(
    problem: &Problem,
    params: &ParamVector,
    mode: Mode,
) -> Result<(EnergyReport, GradientVector)> {
    let (report, grad) = evaluate(problem, params, Some(mode))?;
    Ok((report, grad.expect("gradient requested")))
}

pub(crate) fn evaluate(
    problem: &Problem,
    params: &ParamVector,
    mode: Option<Mode>,
) -> Result<(EnergyReport, Option<GradientVector>)> {
    let scene = Scene::render(problem.model, params, problem.k, problem.weights.uses_final())?;
    evaluate_scene(problem, params, &scene, mode)
}

/// Evaluates the energy on a pre-rendered scene (which must have been
/// rendered from `params`).
pub fn evaluate_scene(
    problem: &Problem,
    params: &ParamVector,
    scene: &Scene,
    mode: Option<Mode>,
) -> Result<(EnergyReport, Option<GradientVector>)> {
    evaluate_impl(problem, params, scene, mode, Fault::None)
}

/// Per-level upstream gradients: d/d(pixel) and d/d(color) per vertex.
struct LevelGrad {
    g_u: Vec<V2>,
    g_c: Vec<V3>,
}

impl LevelGrad {
    fn new(n: usize) -> Self {
        LevelGrad {
            g_u: vec![V2::zeros(); n],
            g_c: vec![V3::zeros(); n],
        }
    }
}

/// Level backward result in model space.
struct LevelBack {
    g_v: Vec<V3>,
    g_r: Vec<V3>,
    g_gamma: Illumination,
    g_omega: V3,
    g_t: V3,
}

pub(crate) fn evaluate_impl(
    problem: &Problem,
    params: &ParamVector,
    scene: &Scene,
    mode: Option<Mode>,
    fault: Fault,
) -> Result<(EnergyReport, Option<GradientVector>)> {
    let model = problem.model;
    let w = problem.weights;
    let n = model.vertex_count();
    let grad = mode.is_some();
    let base = &scene.base;
    let final_ = match (&scene.final_, w.uses_final()) {
        (Some(f), _) => Some(f),
        (None, false) => None,
        (None, true) => {
            return Err(Error::InvalidInput("scene lacks the final level required by the weights".into()))
        }
    };
    let (vis_b, vis_f): (&[bool], Option<&[bool]>) = match problem.visibility {
        Some(v) => {
            crate::error::check_len("frozen base visibility", n, v.base.len())?;
            crate::error::check_len("frozen final visibility", n, v.final_.len())?;
            (&v.base, final_.map(|_| &v.final_[..]))
        }
        None => (&base.visible, final_.map(|f| &f.visible[..])),
    };

    let mut lg_b = LevelGrad::new(if grad { n } else { 0 });
    let mut lg_f = LevelGrad::new(if grad && final_.is_some() { n } else { 0 });
    let mut g_alpha = DVector::zeros(params.alpha.len());
    let mut g_beta = DVector::zeros(params.beta.len());
    let mut g_field_g = vec![V3::zeros(); if grad && final_.is_some() { n } else { 0 }];
    let mut g_rf = vec![V3::zeros(); if grad && final_.is_some() { n } else { 0 }];

    let mut report = EnergyReport {
        photo_base: photo_level_acc(
            base,
            vis_b,
            problem.image,
            w.eps_l21,
            grad.then_some((w.w_photo, &mut lg_b.g_u[..], &mut lg_b.g_c[..])),
        ),
        ..EnergyReport::default()
    };
    if let (Some(f), true) = (final_, w.photo_final) {
        report.photo_final = photo_level_acc(
            f,
            vis_f.expect("final visibility"),
            problem.image,
            w.eps_l21,
            grad.then_some((w.w_photo, &mut lg_f.g_u[..], &mut lg_f.g_c[..])),
        );
    }
    if let Some(lms) = problem.landmarks {
        report.sparse = sparse_acc(base, lms, grad.then_some((1.0, &mut lg_b.g_u[..])));
    }
    report.std = std_acc(
        &params.alpha,
        &params.beta,
        &model.base,
        w.w_rstd,
        grad.then_some((w.w_reg, &mut g_alpha, &mut g_beta)),
    );
    if let Some(f) = final_ {
        let field = to_points(&scene.trace_g.output);
        report.smo = smo_acc(&field, &model.topology, w.w_smo, grad.then_some((w.w_reg, &mut g_field_g[..])));
        report.sta = sta_acc(&field, w.w_sta, grad.then_some((w.w_reg, &mut g_field_g[..])));
        report.ref_ = ref_acc(&f.reflectance, problem.chroma, w, grad.then_some((w.w_reg, &mut g_rf[..])));
        report.glo = glo_acc(&f.reflectance, problem.glo, w.w_glo, grad.then_some((w.w_reg, &mut g_rf[..])));
    }
    for (name, v) in report.terms() {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("energy term {name}")));
        }
    }
    let report = report.assemble(w);
    let Some(mode) = mode else {
        return Ok((report, None));
    };

    let tris = model.topology.triangles();
    let pose = params.pose();
    let rot = pose.rotation();
    let d_rot = rotation_derivatives(&pose.omega);
    let mut out = params.zeros_like();

    let back_b = level_backward(base, &lg_b, tris, &rot, &d_rot, &params.gamma_b, problem.k, fault);
    out.omega += back_b.g_omega;
    out.t += back_b.g_t;
    out.gamma_b = back_b.g_gamma;
    let mut g_vb = flatten(&back_b.g_v);
    let mut g_rb = flatten(&back_b.g_r);

    let mut g_fg = DVector::zeros(model.geom_corr.output_dim());
    let mut g_fr = DVector::zeros(model.refl_corr.output_dim());
    if let Some(f) = final_ {
        let back_f = level_backward(f, &lg_f, tris, &rot, &d_rot, &params.gamma_f, problem.k, fault);
        out.omega += back_f.g_omega;
        out.t += back_f.g_t;
        out.gamma_f = back_f.g_gamma;
        // v^f = v^b + F_g: the final-level geometry gradient reaches both
        for i in 0..n {
            let gv = back_f.g_v[i];
            let gfield = gv + g_field_g[i];
            let gr = back_f.g_r[i] + g_rf[i];
            for c in 0..3 {
                g_vb[3 * i + c] += gv[c];
                g_fg[3 * i + c] = gfield[c];
                g_rb[3 * i + c] += gr[c];
                g_fr[3 * i + c] = gr[c];
            }
        }
    }
    out.alpha = g_alpha + model.base.b_g.tr_mul(&g_vb);
    out.beta = g_beta + model.base.b_r.tr_mul(&g_rb);
    let want_theta = mode == Mode::Train;
    let (g_dg, theta_g) = model.geom_corr.backward(&scene.trace_g, &g_fg, want_theta);
    let (g_dr, theta_r) = model.refl_corr.backward(&scene.trace_r, &g_fr, want_theta);
    out.delta_g = g_dg;
    out.delta_r = g_dr;

    let gradient = GradientVector {
        params: out,
        theta_g,
        theta_r,
    };
    if !gradient.is_finite() {
        let flat = gradient.params.to_flat();
        let culprit = gradient
            .params
            .layout()
            .into_iter()
            .find(|(_, r)| flat[r.clone()].iter().any(|v| !v.is_finite()))
            .map_or("corrective parameters", |(b, _)| b.name());
        return Err(Error::NonFinite(format!("gradient block {culprit}")));
    }
    Ok((report, Some(gradient)))
}

fn flatten(v: &[V3]) -> DVector<f64> {
    DVector::from_iterator(3 * v.len(), v.iter().flat_map(|p| [p.x, p.y, p.z]))
}

/// Chains per-vertex pixel and color gradients back through shading,
/// normals, projection and the rigid transform.
#[allow(clippy::too_many_arguments)]
fn level_backward(
    state: &RenderState,
    lg: &LevelGrad,
    triangles: &[[usize; 3]],
    rot: &Matrix3<f64>,
    d_rot: &[Matrix3<f64>; 3],
    light: &Illumination,
    k: &CameraIntrinsics,
    fault: Fault,
) -> LevelBack {
    let n = state.vertices.len();
    let mut g_r = vec![V3::zeros(); n];
    let mut g_n = vec![V3::zeros(); n];
    let mut g_gamma = Illumination {
        gamma: nalgebra::SMatrix::zeros(),
    };
    let mut g_cam = vec![V3::zeros(); n];
    for i in 0..n {
        let gc = lg.g_c[i];
        if gc != V3::zeros() {
            let r = state.reflectance[i];
            let h = &state.sh[i];
            g_r[i] = gc.component_mul(&state.irradiance[i]);
            let gcr = gc.component_mul(&r);
            let sh_grad = sh_gradient(&state.normals[i]);
            let mut gn = V3::zeros();
            for b in 0..SH_COUNT {
                let mut g_h = 0.0;
                for c in 0..3 {
                    g_gamma.gamma[(b, c)] += gcr[c] * h[b];
                    g_h += gcr[c] * light.gamma[(b, c)];
                }
                gn += sh_grad[b] * g_h;
            }
            g_n[i] = gn;
        }
        let gu = lg.g_u[i];
        if gu != V2::zeros() {
            let mut jac = project_jacobian(&state.cam_vertices[i], k);
            if fault == Fault::ProjectionJacobian {
                jac[(0, 0)] *= 1.01;
            }
            g_cam[i] += jac.transpose() * gu;
        }
    }
    let from_normals = vertex_normals_backward(&state.cam_vertices, triangles, &g_n);
    let mut g_v = Vec::with_capacity(n);
    let mut g_omega = V3::zeros();
    let mut g_t = V3::zeros();
    for i in 0..n {
        let g = g_cam[i] + from_normals[i];
        g_t += g;
        let v = state.vertices[i];
        for (a, dr) in d_rot.iter().enumerate() {
            g_omega[a] += g.dot(&(dr * v));
        }
        g_v.push(rot.tr_mul(&g));
    }
    LevelBack {
        g_v,
        g_r,
        g_gamma,
        g_omega,
        g_t,
    }
}

/// Convenience: gradient of the Θ parameters flattened like
/// [`crate::model::CorrectiveMap::to_flat`].
pub fn flat_layer_grads(layers: &[LayerGrad]) -> Vec<f64> {
    let mut out = Vec::new();
    crate::model::flatten_layers(layers, &mut out);
    out
}
