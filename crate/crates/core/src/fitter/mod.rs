//! Per-image fitting and corpus-level corrective training with AdaDelta.

mod adadelta;
mod corpus;
mod train;

pub use adadelta::AdaDelta;
pub use corpus::{
    bump_field, corpus_gt_state, patch_factors, render_sample, synth_corpus, BumpSpec, CorpusConfig, CorpusSample,
    PatchSpec,
};
pub use train::{train_correctives, thread_pool, CorpusItem, TrainLogEntry, TrainResult};

use std::time::Instant;

use log::{info, warn};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::energy::{
    chroma_weights, glo_samples, photometric_error, ChromaWeights, EnergyReport, GloSamples, Problem, Weights,
};
use crate::error::{Error, Result};
use crate::gradients::{evaluate_scene, Block, GradientVector, Mode, ParamVector, Scene};
use crate::landmarks::{update_sliding_indices, LandmarkSet};
use crate::model::MultiLevelModel;
use crate::render::{render_state, CameraIntrinsics, Illumination, Image, Level};

/// Fraction of the image height the mean face spans at initialization.
pub const FACE_HEIGHT_FRACTION: f64 = 0.6;

/// An energy above this multiple of the stage's initial energy aborts.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Pretrain,
    Finetune,
}

impl std::str::FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pretrain" => Ok(Stage::Pretrain),
            "finetune" => Ok(Stage::Finetune),
            other => Err(Error::InvalidInput(format!("unknown stage '{other}'"))),
        }
    }
}

/// Iteration budget, learning rates and weights of one stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub iterations: usize,
    /// Rate of the base unknowns (coefficients, pose, illumination).
    pub lr_base: f64,
    /// Rate of the geometry corrective code (and its layers in training).
    pub lr_geom: f64,
    /// Rate of the reflectance corrective code (and its layers in training).
    pub lr_refl: f64,
    pub weights: Weights,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub pretrain: StageConfig,
    pub finetune: StageConfig,
    pub batch_size: usize,
    /// Extra factor on the corrective-layer rates during training.
    pub corrective_lr_multiplier: f64,
    pub rho: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            pretrain: StageConfig {
                iterations: 2000,
                lr_base: 1.0,
                lr_geom: 0.5,
                lr_refl: 1.0,
                weights: Weights::pretrain(),
            },
            finetune: StageConfig {
                iterations: 3000,
                lr_base: 0.1,
                lr_geom: 0.5,
                lr_refl: 1.0,
                weights: Weights::finetune(),
            },
            batch_size: 5,
            corrective_lr_multiplier: 1.0,
            rho: 0.95,
            eps: 1e-6,
            seed: 0,
        }
    }
}

impl Schedule {
    pub fn stage(&self, stage: Stage) -> &StageConfig {
        match stage {
            Stage::Pretrain => &self.pretrain,
            Stage::Finetune => &self.finetune,
        }
    }

    /// Only the given stage runs; the other gets zero iterations.
    pub fn only(mut self, stage: Stage) -> Self {
        match stage {
            Stage::Pretrain => self.finetune.iterations = 0,
            Stage::Finetune => self.pretrain.iterations = 0,
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, s) in [("pretrain", &self.pretrain), ("finetune", &self.finetune)] {
            for (what, lr) in [("lr_base", s.lr_base), ("lr_geom", s.lr_geom), ("lr_refl", s.lr_refl)] {
                if !(lr.is_finite() && lr > 0.0) {
                    return Err(Error::InvalidInput(format!("{name}.{what} must be > 0, got {lr}")));
                }
            }
            s.weights.validate()?;
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidInput("batch_size must be >= 1".into()));
        }
        if !(self.corrective_lr_multiplier.is_finite() && self.corrective_lr_multiplier > 0.0) {
            return Err(Error::InvalidInput("corrective_lr_multiplier must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.rho) || self.eps <= 0.0 {
            return Err(Error::InvalidInput("AdaDelta needs rho in [0, 1) and eps > 0".into()));
        }
        Ok(())
    }
}

/// Which unknowns a stage updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Scope {
    /// Base unknowns and base illumination.
    Pretrain,
    /// Everything of the image.
    FitAll,
    /// Corrective codes and final illumination only (base held fixed).
    TrainFinal,
}

/// Per-coordinate learning rates laid out like [`ParamVector::to_flat`].
pub(crate) fn block_rates(params: &ParamVector, cfg: &StageConfig, scope: Scope, final_frozen: bool) -> Vec<f64> {
    let mut rates = vec![0.0; params.dim()];
    for (block, range) in params.layout() {
        let lr = match (scope, block) {
            (Scope::Pretrain, Block::Alpha | Block::Beta | Block::Omega | Block::T | Block::GammaB) => cfg.lr_base,
            (Scope::Pretrain, _) => 0.0,
            (Scope::FitAll, Block::DeltaG) => cfg.lr_geom,
            (Scope::FitAll, Block::DeltaR) => cfg.lr_refl,
            (Scope::FitAll, _) => cfg.lr_base,
            (Scope::TrainFinal, Block::DeltaG) => cfg.lr_geom,
            (Scope::TrainFinal, Block::DeltaR) => cfg.lr_refl,
            (Scope::TrainFinal, Block::GammaF) if !final_frozen => cfg.lr_base,
            (Scope::TrainFinal, _) => 0.0,
        };
        rates[range].fill(lr);
    }
    rates
}

/// Translation that centers the mean face on the optical axis at the depth
/// where it spans [`FACE_HEIGHT_FRACTION`] of the image height.
pub fn canonical_translation(model: &MultiLevelModel, k: &CameraIntrinsics) -> Vector3<f64> {
    let pts = crate::render::to_points(&model.base.a_g);
    let n = pts.len().max(1) as f64;
    let centroid = pts.iter().fold(Vector3::zeros(), |a, p| a + p) / n;
    let (lo, hi) = pts
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.y), hi.max(p.y)));
    let extent = (hi - lo).max(1e-9);
    let depth = k.focal * extent / (FACE_HEIGHT_FRACTION * k.height as f64);
    Vector3::new(-centroid.x, -centroid.y, depth - centroid.z)
}

/// Canonical start: neutral face, identity rotation, canonical translation,
/// and gray ambient light matching the mean image intensity under the face.
pub fn init_params(model: &MultiLevelModel, image: &Image, k: &CameraIntrinsics) -> Result<ParamVector> {
    let mut params = ParamVector::zeros(model);
    params.t = canonical_translation(model, k);
    params.gamma_b = Illumination::ambient([1.0; 3]);
    params.gamma_f = params.gamma_b;
    let state = render_state(model, &params, k, Level::Base)?;
    let (mut shaded, mut observed, mut count) = (0.0, 0.0, 0usize);
    for i in state.visible_indices() {
        shaded += state.colors[i].sum();
        observed += image.sample(&state.pixels[i]).sum();
        count += 1;
    }
    let gray = if count > 0 && shaded > 0.0 {
        observed / shaded
    } else {
        warn!("initial face is not visible; using unit irradiance");
        1.0 / crate::render::sh_basis(&Vector3::z())?[0]
    };
    params.gamma_b = Illumination::ambient([gray; 3]);
    params.gamma_f = params.gamma_b;
    Ok(params)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FitStats {
    pub pretrain_iterations: usize,
    pub finetune_iterations: usize,
    /// Wall-clock timings are not serialized so result files stay
    /// reproducible.
    #[serde(skip)]
    pub pretrain_seconds: f64,
    #[serde(skip)]
    pub finetune_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: ParamVector,
    /// Energy before each step plus the energy at the returned parameters
    /// (`iterations + 1` entries), each under its stage's weights.
    pub trajectory: Vec<EnergyReport>,
    /// Stage of every trajectory entry.
    pub stages: Vec<Stage>,
    pub photometric_error_base: f64,
    pub photometric_error_final: f64,
    /// Sliding-landmark vertices in effect at every trajectory entry.
    pub sliding_history: Vec<Vec<usize>>,
    pub stats: FitStats,
}

impl FitResult {
    /// Lowest total energy seen up to each entry.
    pub fn best_so_far(&self) -> Vec<f64> {
        self.trajectory
            .iter()
            .scan(f64::INFINITY, |best, r| {
                *best = best.min(r.total);
                Some(*best)
            })
            .collect()
    }
}

/// Mutable per-image optimization state shared by fitting and training.
pub(crate) struct ImageTask<'a> {
    pub model_k: &'a CameraIntrinsics,
    pub image: &'a Image,
    pub landmarks: Option<LandmarkSet>,
    pub glo: GloSamples,
    pub chroma: Option<ChromaWeights>,
    pub params: ParamVector,
}

impl ImageTask<'_> {
    /// Refreshes sliding correspondences and edge weights at the current
    /// parameters, then evaluates the energy (and gradient when `mode` is
    /// set).
    pub fn evaluate(
        &mut self,
        model: &MultiLevelModel,
        weights: &Weights,
        mode: Option<Mode>,
    ) -> Result<(EnergyReport, Option<GradientVector>, Scene)> {
        let k = self.model_k;
        let scene = Scene::render(model, &self.params, k, weights.uses_final())?;
        if let Some(lms) = self.landmarks.as_mut() {
            update_sliding_indices(&scene.base, lms, &model.topology.contour_candidates, k);
        }
        let chroma = if weights.w_ref > 0.0 && weights.w_reg > 0.0 {
            chroma_weights(self.image, scene.final_or_base(), &model.topology, weights)
        } else {
            self.chroma.take().unwrap_or_else(|| ChromaWeights::uniform(&model.topology, 1.0))
        };
        let problem = Problem {
            model,
            image: self.image,
            k,
            landmarks: self.landmarks.as_ref(),
            weights,
            chroma: &chroma,
            glo: &self.glo,
            visibility: None,
        };
        let (report, grad) = evaluate_scene(&problem, &self.params, &scene, mode)?;
        self.chroma = Some(chroma);
        Ok((report, grad, scene))
    }

    pub fn sliding(&self) -> Vec<usize> {
        self.landmarks.as_ref().map(|l| l.sliding_vertices()).unwrap_or_default()
    }
}

pub(crate) fn check_divergence(
    report: &EnergyReport,
    initial: f64,
    iteration: usize,
    trajectory: &[EnergyReport],
) -> Result<()> {
    if !report.is_finite() || report.total > DIVERGENCE_FACTOR * initial.abs().max(f64::MIN_POSITIVE) {
        let mut trajectory = trajectory.to_vec();
        trajectory.push(*report);
        return Err(Error::Diverged {
            iteration,
            energy: report.total,
            initial,
            trajectory,
        });
    }
    Ok(())
}

/// Two-stage fit of one image: base unknowns under the pretraining weights,
/// then every unknown under the fine-tuning weights (correctives fixed).
pub fn fit_image(
    model: &MultiLevelModel,
    image: &Image,
    landmarks: Option<&LandmarkSet>,
    k: &CameraIntrinsics,
    schedule: &Schedule,
) -> Result<FitResult> {
    schedule.validate()?;
    model.validate()?;
    k.validate()?;
    if image.width() != k.width || image.height() != k.height {
        return Err(Error::InvalidInput(format!(
            "image is {}x{}, camera expects {}x{}",
            image.width(),
            image.height(),
            k.width,
            k.height
        )));
    }
    if let Some(l) = landmarks {
        l.validate(model.vertex_count())?;
    } else {
        warn!("no landmarks given; the sparse term is dropped");
    }
    let mut task = ImageTask {
        model_k: k,
        image,
        landmarks: landmarks.cloned(),
        glo: glo_samples(&model.topology.skin_mask, schedule.seed),
        chroma: None,
        params: init_params(model, image, k)?,
    };
    let mut result = FitResult {
        params: task.params.clone(),
        trajectory: Vec::new(),
        stages: Vec::new(),
        photometric_error_base: 0.0,
        photometric_error_final: 0.0,
        sliding_history: Vec::new(),
        stats: FitStats::default(),
    };
    for stage in [Stage::Pretrain, Stage::Finetune] {
        let cfg = schedule.stage(stage);
        if stage == Stage::Finetune {
            // the final level starts from the base illumination
            task.params.gamma_f = task.params.gamma_b;
        }
        let scope = if stage == Stage::Pretrain { Scope::Pretrain } else { Scope::FitAll };
        let rates = block_rates(&task.params, cfg, scope, false);
        let mut opt = AdaDelta::new(task.params.dim(), schedule.rho, schedule.eps);
        let start = Instant::now();
        let mut initial = f64::NAN;
        for it in 0..cfg.iterations {
            let (report, grad, _) = task.evaluate(model, &cfg.weights, Some(Mode::Fit))?;
            if it == 0 {
                initial = report.total;
            }
            check_divergence(&report, initial, result.trajectory.len(), &result.trajectory)?;
            result.trajectory.push(report);
            result.stages.push(stage);
            result.sliding_history.push(task.sliding());
            let grad = grad.expect("gradient requested");
            let mut x = task.params.to_flat();
            opt.step(&mut x, &grad.params.to_flat(), &rates);
            task.params.set_flat(&x)?;
        }
        let secs = start.elapsed().as_secs_f64();
        match stage {
            Stage::Pretrain => {
                result.stats.pretrain_iterations = cfg.iterations;
                result.stats.pretrain_seconds = secs;
            }
            Stage::Finetune => {
                result.stats.finetune_iterations = cfg.iterations;
                result.stats.finetune_seconds = secs;
            }
        }
        if cfg.iterations > 0 {
            info!(
                "{:?}: {} iterations, energy {:.6e} -> {:.6e}",
                stage,
                cfg.iterations,
                initial,
                result.trajectory.last().map_or(f64::NAN, |r| r.total)
            );
        }
    }
    let last_stage = if schedule.finetune.iterations > 0 || schedule.pretrain.iterations == 0 {
        Stage::Finetune
    } else {
        Stage::Pretrain
    };
    let (report, _, scene) = task.evaluate(model, &schedule.stage(last_stage).weights, None)?;
    if let Some(&initial) = result.trajectory.first().map(|r| &r.total) {
        check_divergence(&report, initial, result.trajectory.len(), &result.trajectory)?;
    }
    result.trajectory.push(report);
    result.stages.push(last_stage);
    result.sliding_history.push(task.sliding());

    result.photometric_error_base = photometric_error(&scene.base, image);
    result.photometric_error_final = match &scene.final_ {
        Some(f) => photometric_error(f, image),
        None => photometric_error(&render_state(model, &task.params, k, Level::Final)?, image),
    };
    result.params = task.params;
    Ok(result)
}

