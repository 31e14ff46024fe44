//! Randomized analytic-vs-numeric gradient comparison.

use std::cell::{Cell, RefCell};
use std::fmt::Write as _;
use std::time::Instant;

use nalgebra::{DVector, SMatrix, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{evaluate_impl, finite_diff, finite_diff_layers, flat_layer_grads, Fault, FdStep, Mode, ParamVector, Scene};
use crate::energy::{
    chroma_weights, e_total, glo_samples, ChromaWeights, FrozenVisibility, GloSamples, Problem, Weights,
};
use crate::error::Result;
use crate::fitter::canonical_translation;
use crate::landmarks::{Landmark, LandmarkSet};
use crate::model::{synth_model, AffineLayer, AnchorKind, MultiLevelModel, SynthConfig};
use crate::render::{project_unchecked, to_points, CameraIntrinsics, Illumination, Image};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckConfig {
    pub seed: u64,
    pub model: SynthConfig,
    pub width: usize,
    pub height: usize,
    pub tol: f64,
    /// Components whose gradient magnitude is below this are not compared.
    pub threshold: f64,
    pub step_relative: f64,
    pub step_absolute: f64,
    pub fourth_order: bool,
    /// Also check the corrective-parameter gradients.
    pub check_theta: bool,
    /// Replace the image by a black one.
    pub zero_image: bool,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            seed: 1,
            model: SynthConfig::default(),
            width: 64,
            height: 64,
            tol: 1e-3,
            threshold: 1e-6,
            step_relative: FdStep::default().relative,
            // Corrective weights are ~1e-3, where a 1e-7 step leaves the
            // central difference dominated by rounding of the energy sum.
            step_absolute: 1e-5,
            // the sparsity norm is strongly curved for near-equal neighbours
            fourth_order: true,
            check_theta: true,
            zero_image: false,
        }
    }
}

impl GradCheckConfig {
    pub fn step(&self) -> FdStep {
        FdStep {
            relative: self.step_relative,
            absolute: self.step_absolute,
            fourth_order: self.fourth_order,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockCheck {
    pub block: String,
    pub components: usize,
    pub checked: usize,
    /// Components whose stencil crossed a switching point (excluded).
    pub switching: usize,
    pub max_rel: f64,
    pub mean_rel: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub seed: u64,
    pub tol: f64,
    pub energy: f64,
    pub blocks: Vec<BlockCheck>,
    pub passed: bool,
    pub seconds: f64,
}

impl GradCheckReport {
    pub fn table(&self) -> String {
        let mut s = format!(
            "gradcheck seed={} energy={:.6e} tol={:e}\n{:<10} {:>8} {:>8} {:>6} {:>12} {:>12}  status\n",
            self.seed, self.energy, self.tol, "block", "size", "checked", "switch", "max_rel", "mean_rel"
        );
        for b in &self.blocks {
            let _ = writeln!(
                s,
                "{:<10} {:>8} {:>8} {:>6} {:>12.3e} {:>12.3e}  {}",
                b.block,
                b.components,
                b.checked,
                b.switching,
                b.max_rel,
                b.mean_rel,
                if b.passed { "ok" } else { "FAIL" }
            );
        }
        let _ = writeln!(s, "overall: {} ({:.1} s)", if self.passed { "PASS" } else { "FAIL" }, self.seconds);
        s
    }
}

/// A self-contained random energy instance.
#[derive(Debug, Clone)]
pub struct Instance {
    pub model: MultiLevelModel,
    pub params: ParamVector,
    pub image: Image,
    pub k: CameraIntrinsics,
    pub landmarks: LandmarkSet,
    pub weights: Weights,
    pub chroma: ChromaWeights,
    pub glo: GloSamples,
}

impl Instance {
    pub fn problem(&self) -> Problem<'_> {
        Problem {
            model: &self.model,
            image: &self.image,
            k: &self.k,
            landmarks: Some(&self.landmarks),
            weights: &self.weights,
            chroma: &self.chroma,
            glo: &self.glo,
            visibility: None,
        }
    }
}

/// Smooth random color field in roughly [0.1, 0.9].
fn smooth_image(rng: &mut impl Rng, width: usize, height: usize) -> Image {
    let waves: Vec<[f64; 4]> = (0..9)
        .map(|_| {
            [
                rng.random_range(0.5..2.5),
                rng.random_range(0.5..2.5),
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.05..0.13),
            ]
        })
        .collect();
    Image::from_fn(width, height, |x, y| {
        let (u, v) = (x as f64 / width as f64, y as f64 / height as f64);
        let mut c = Vector3::repeat(0.5);
        for (k, w) in waves.iter().enumerate() {
            c[k % 3] += w[3] * (std::f64::consts::TAU * (w[0] * u + w[1] * v) + w[2]).sin();
        }
        c
    })
}

/// Random desk-scale instance with every energy term active.
pub fn gradcheck_instance(cfg: &GradCheckConfig) -> Result<Instance> {
    let model = synth_model(&SynthConfig {
        seed: cfg.seed,
        ..cfg.model.clone()
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(0x9e37_79b9).wrapping_add(17));
    let k = CameraIntrinsics::default_for(cfg.width, cfg.height);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut params = ParamVector::zeros(&model);
    for (a, s) in params.alpha.iter_mut().zip(model.base.sigma_g.iter()) {
        *a = 0.5 * s * normal.sample(&mut rng);
    }
    for (b, s) in params.beta.iter_mut().zip(model.base.sigma_r.iter()) {
        *b = 0.5 * s * normal.sample(&mut rng);
    }
    params.delta_g.iter_mut().for_each(|d| *d = normal.sample(&mut rng));
    params.delta_r.iter_mut().for_each(|d| *d = normal.sample(&mut rng));
    params.omega = Vector3::from_fn(|_, _| 0.15 * normal.sample(&mut rng));
    params.t = canonical_translation(&model, &k) + Vector3::from_fn(|_, _| 0.05 * normal.sample(&mut rng));
    let light = |rng: &mut ChaCha8Rng| {
        let mut gamma = SMatrix::<f64, 9, 3>::zeros();
        for c in 0..3 {
            gamma[(0, c)] = rng.random_range(2.2..3.0);
            for b in 1..9 {
                gamma[(b, c)] = rng.random_range(-0.3..0.3);
            }
        }
        Illumination { gamma }
    };
    params.gamma_b = light(&mut rng);
    params.gamma_f = light(&mut rng);

    let image = if cfg.zero_image {
        Image::new(cfg.width, cfg.height, Vector3::zeros())
    } else {
        smooth_image(&mut rng, cfg.width, cfg.height)
    };
    let weights = Weights::finetune();
    let scene = Scene::render(&model, &params, &k, true)?;
    let chroma = chroma_weights(&image, scene.final_or_base(), &model.topology, &weights);
    let glo = glo_samples(&model.topology.skin_mask, cfg.seed);
    let landmarks = LandmarkSet {
        entries: model
            .topology
            .landmark_anchors
            .iter()
            .map(|a| Landmark {
                position: scene.base.pixels[a.vertex]
                    + Vector2::new(normal.sample(&mut rng), normal.sample(&mut rng)) * 1.5,
                confidence: rng.random_range(0.5..1.0),
                kind: a.kind,
                vertex: a.vertex,
            })
            .collect(),
    };
    debug_assert!(landmarks.entries.iter().any(|l| l.kind == AnchorKind::Sliding));
    Ok(Instance {
        model,
        params,
        image,
        k,
        landmarks,
        weights,
        chroma,
        glo,
    })
}

fn compare(block: &str, analytic: &[f64], numeric: &[f64], switching: &[bool], cfg: &GradCheckConfig) -> BlockCheck {
    let mut checked = 0;
    let mut max_rel: f64 = 0.0;
    let mut sum = 0.0;
    for ((a, f), _) in analytic.iter().zip(numeric).zip(switching).filter(|(_, &s)| !s) {
        let m = a.abs().max(f.abs());
        if m > cfg.threshold {
            let rel = (a - f).abs() / m;
            checked += 1;
            sum += rel;
            max_rel = max_rel.max(rel);
        }
    }
    let mean_rel = if checked > 0 { sum / checked as f64 } else { 0.0 };
    BlockCheck {
        block: block.to_string(),
        components: analytic.len(),
        checked,
        switching: switching.iter().filter(|&&s| s).count(),
        max_rel,
        mean_rel,
        passed: max_rel < cfg.tol && analytic.iter().chain(numeric).all(|v| v.is_finite()),
    }
}

/// Discrete state the frozen energy is only piecewise smooth in: the
/// bilinear cell of every frozen-visible vertex on both levels and the
/// activation pattern of the corrective maps.
fn switch_key(model: &MultiLevelModel, params: &ParamVector, k: &CameraIntrinsics, frozen: &FrozenVisibility) -> Vec<i64> {
    let pose = params.pose();
    let rot = pose.rotation();
    let mut key = Vec::new();
    let mut cells = |v: &DVector<f64>, visible: &[bool]| {
        for (p, _) in to_points(v).iter().zip(visible).filter(|(_, &vis)| vis) {
            let u = project_unchecked(&(rot * p + pose.t), k);
            key.push(u.x.floor() as i64);
            key.push(u.y.floor() as i64);
        }
    };
    if let Ok(vb) = model.base.eval_geometry(&params.alpha) {
        cells(&vb, &frozen.base);
        if let Ok(corr) = model.geom_corr.eval(&params.delta_g) {
            cells(&(vb + corr), &frozen.final_);
        }
    }
    for (map, code) in [(&model.geom_corr, &params.delta_g), (&model.refl_corr, &params.delta_r)] {
        if let Ok(trace) = map.forward(code) {
            key.extend(trace.activation_pattern().into_iter().map(i64::from));
        }
    }
    key
}

/// Step reductions (by 4x each) tried on a coordinate whose stencil crossed a
/// switching point.
const REFINE_ROUNDS: usize = 4;

/// Central difference along one coordinate with ever smaller steps until the
/// stencil stays on one smooth piece; `None` when it never does. `eval`
/// returns the energy at a coordinate value and whether that point is on
/// another piece than the expansion point.
fn refine(step: &FdStep, x0: f64, mut eval: impl FnMut(f64) -> (f64, bool)) -> Option<f64> {
    let mut s = *step;
    for _ in 0..REFINE_ROUNDS {
        s.relative /= 4.0;
        s.absolute /= 4.0;
        let x = Cell::new(x0);
        let crossed = Cell::new(false);
        let d = s.derivative(x0, |v| x.set(v), || {
            let (e, c) = eval(x.get());
            crossed.set(crossed.get() | c);
            e
        });
        if !crossed.get() {
            return Some(d);
        }
    }
    None
}

fn layers_of(model: &mut MultiLevelModel, geometry: bool) -> &mut Vec<AffineLayer> {
    if geometry {
        &mut model.geom_corr.layers
    } else {
        &mut model.refl_corr.layers
    }
}

/// Entry `i` of the layers in [`flat_layer_grads`] order.
fn layer_slot(layers: &mut [AffineLayer], mut i: usize) -> &mut f64 {
    for layer in layers {
        let (w, b) = (layer.weights.len(), layer.bias.len());
        if i < w {
            return &mut layer.weights.as_mut_slice()[i];
        }
        if i < w + b {
            return &mut layer.bias.as_mut_slice()[i - w];
        }
        i -= w + b;
    }
    panic!("layer entry out of range")
}

/// Splits per-evaluation switching flags into per-coordinate flags.
fn per_coordinate(flags: Vec<bool>, step: &FdStep) -> Vec<bool> {
    flags
        .chunks(step.evaluations_per_coordinate())
        .map(|c| c.iter().any(|&f| f))
        .collect()
}

/// Compares the analytic gradient of a random instance against central
/// differences of the same energy with visibility frozen at the expansion
/// point, block by block.
pub fn gradcheck(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    gradcheck_with(cfg, Fault::None)
}

pub(crate) fn gradcheck_with(cfg: &GradCheckConfig, fault: Fault) -> Result<GradCheckReport> {
    let start = Instant::now();
    let inst = gradcheck_instance(cfg)?;
    let scene = Scene::render(&inst.model, &inst.params, &inst.k, true)?;
    let frozen = FrozenVisibility {
        base: scene.base.visible.clone(),
        final_: scene.final_or_base().visible.clone(),
    };
    let problem = Problem {
        visibility: Some(&frozen),
        ..inst.problem()
    };
    let (report, grad) = evaluate_impl(&problem, &inst.params, &scene, Some(Mode::Train), fault)?;
    let grad = grad.expect("gradient requested");
    let step = cfg.step();
    let key0 = switch_key(&inst.model, &inst.params, &inst.k, &frozen);
    let crossed = |model: &MultiLevelModel, p: &ParamVector| switch_key(model, p, &inst.k, &frozen) != key0;
    let flags = RefCell::new(Vec::new());
    let energy = |p: &ParamVector| {
        flags.borrow_mut().push(crossed(&inst.model, p));
        e_total(&problem, p).map(|r| r.total).unwrap_or(f64::NAN)
    };
    let mut n_flat = finite_diff(energy, &inst.params, step).to_flat();
    let x0 = inst.params.to_flat();
    let mut switching = per_coordinate(flags.take(), &step);
    for (i, s) in switching.iter_mut().enumerate().filter(|(_, s)| **s) {
        let refined = refine(&step, x0[i], |v| {
            let mut x = x0.clone();
            x[i] = v;
            let mut p = inst.params.clone();
            p.set_flat(&x).expect("same layout");
            let e = e_total(&problem, &p).map(|r| r.total).unwrap_or(f64::NAN);
            (e, crossed(&inst.model, &p))
        });
        if let Some(d) = refined {
            n_flat[i] = d;
            *s = false;
        }
    }

    let a_flat = grad.params.to_flat();
    let mut blocks: Vec<BlockCheck> = grad
        .params
        .layout()
        .into_iter()
        .map(|(b, r)| compare(b.name(), &a_flat[r.clone()], &n_flat[r.clone()], &switching[r], cfg))
        .collect();

    if cfg.check_theta {
        let analytic = [&grad.theta_g, &grad.theta_r];
        for (name, geometry) in [("theta_g", true), ("theta_r", false)] {
            let mut probe = inst.model.clone();
            let mut layers = layers_of(&mut probe, geometry).clone();
            let fd = finite_diff_layers(&mut layers, step, |ls| {
                layers_of(&mut probe, geometry).clone_from_slice(ls);
                flags.borrow_mut().push(crossed(&probe, &inst.params));
                let p = Problem { model: &probe, ..problem };
                e_total(&p, &inst.params).map(|r| r.total).unwrap_or(f64::NAN)
            });
            layers_of(&mut probe, geometry).clone_from_slice(&layers);
            let mut numeric = flat_layer_grads(&fd);
            let mut switching = per_coordinate(flags.take(), &step);
            let start: Vec<f64> = flat_layer_grads(&layers);
            for (i, s) in switching.iter_mut().enumerate().filter(|(_, s)| **s) {
                let refined = refine(&step, start[i], |v| {
                    *layer_slot(layers_of(&mut probe, geometry), i) = v;
                    let p = Problem { model: &probe, ..problem };
                    let e = e_total(&p, &inst.params).map(|r| r.total).unwrap_or(f64::NAN);
                    let c = crossed(&probe, &inst.params);
                    *layer_slot(layers_of(&mut probe, geometry), i) = start[i];
                    (e, c)
                });
                if let Some(d) = refined {
                    numeric[i] = d;
                    *s = false;
                }
            }
            let an = flat_layer_grads(analytic[usize::from(!geometry)].as_deref().unwrap_or_default());
            blocks.push(compare(name, &an, &numeric, &switching, cfg));
        }
    }
    let passed = blocks.iter().all(|b| b.passed);
    Ok(GradCheckReport {
        seed: cfg.seed,
        tol: cfg.tol,
        energy: report.total,
        blocks,
        passed,
        seconds: start.elapsed().as_secs_f64(),
    })
}
