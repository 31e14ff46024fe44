//! Joint learning of the corrective maps over an image corpus.

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{block_rates, check_divergence, fit_image, init_params, AdaDelta, ImageTask, Schedule, Scope, Stage};
use crate::energy::{glo_samples, photometric_error, EnergyReport};
use crate::error::{Error, Result};
use crate::gradients::{flat_layer_grads, Mode, ParamVector};
use crate::landmarks::LandmarkSet;
use crate::model::{LayerGrad, MultiLevelModel};
use crate::render::{render_state, CameraIntrinsics, Image, Level};

/// One training image with its (optional) landmarks.
#[derive(Debug, Clone)]
pub struct CorpusItem {
    pub image: Image,
    pub landmarks: Option<LandmarkSet>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogEntry {
    pub epoch: usize,
    pub mean_total: f64,
    pub mean_photo_final: f64,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub model: MultiLevelModel,
    /// Per-image unknowns (initialization for skipped images).
    pub params: Vec<ParamVector>,
    pub errors_base: Vec<Option<f64>>,
    pub errors_final: Vec<Option<f64>>,
    /// Images without visible vertices at initialization.
    pub skipped: Vec<usize>,
    pub log: Vec<TrainLogEntry>,
}

impl TrainResult {
    fn mean(v: &[Option<f64>]) -> f64 {
        let vals: Vec<f64> = v.iter().flatten().copied().collect();
        vals.iter().sum::<f64>() / vals.len().max(1) as f64
    }

    pub fn mean_error_base(&self) -> f64 {
        Self::mean(&self.errors_base)
    }

    pub fn mean_error_final(&self) -> f64 {
        Self::mean(&self.errors_final)
    }
}

/// Thread pool honoring `FACEFIT_THREADS` (all cores when unset).
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let threads = match std::env::var("FACEFIT_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|e| Error::InvalidInput(format!("FACEFIT_THREADS='{v}': {e}")))?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))
}

/// Mean of per-image layer gradients, summed in batch order.
fn average(grads: &[Vec<f64>]) -> Vec<f64> {
    let mut acc = vec![0.0; grads.first().map_or(0, |g| g.len())];
    for g in grads {
        for (a, v) in acc.iter_mut().zip(g) {
            *a += v;
        }
    }
    let inv = 1.0 / grads.len().max(1) as f64;
    acc.iter_mut().for_each(|a| *a *= inv);
    acc
}

/// Stage 1 fits every image's base unknowns independently. Stage 2 visits the
/// corpus in seeded random batches; each image takes one step on its
/// corrective codes and final illumination, then the shared corrective
/// layers take one step on the batch-averaged gradient.
pub fn train_correctives(
    model: &MultiLevelModel,
    corpus: &[CorpusItem],
    k: &CameraIntrinsics,
    schedule: &Schedule,
) -> Result<TrainResult> {
    if corpus.is_empty() {
        return Err(Error::InvalidInput("training corpus is empty".into()));
    }
    schedule.validate()?;
    model.validate()?;
    let pool = thread_pool()?;
    let pre = schedule.clone().only(Stage::Pretrain);

    let stage1: Vec<Result<(ParamVector, bool)>> = pool.install(|| {
        corpus
            .par_iter()
            .enumerate()
            .map(|(i, item)| {
                let init = init_params(model, &item.image, k)?;
                if render_state(model, &init, k, Level::Base)?.visible_count() == 0 {
                    warn!("image {i}: no visible vertices at initialization, skipped");
                    return Ok((init, false));
                }
                Ok((fit_image(model, &item.image, item.landmarks.as_ref(), k, &pre)?.params, true))
            })
            .collect()
    });
    let mut params = Vec::with_capacity(corpus.len());
    let mut skipped = Vec::new();
    for (i, r) in stage1.into_iter().enumerate() {
        let (p, ok) = r?;
        if !ok {
            skipped.push(i);
        }
        params.push(p);
    }
    info!("stage 1 done: {} images fitted, {} skipped", corpus.len() - skipped.len(), skipped.len());

    let mut model = model.clone();
    let geom_frozen = model.geom_corr.is_disabled();
    let refl_frozen = model.refl_corr.is_disabled();
    let cfg = &schedule.finetune;
    let weights = cfg.weights;
    let active: Vec<usize> = (0..corpus.len()).filter(|i| !skipped.contains(i)).collect();
    let glo = glo_samples(&model.topology.skin_mask, schedule.seed);
    let mut slots: Vec<Option<(ImageTask, AdaDelta)>> = corpus
        .iter()
        .zip(&params)
        .enumerate()
        .map(|(i, (item, p))| {
            if skipped.contains(&i) {
                return None;
            }
            let mut p = p.clone();
            p.gamma_f = p.gamma_b;
            let dim = p.dim();
            Some((
                ImageTask {
                    model_k: k,
                    image: &item.image,
                    landmarks: item.landmarks.clone(),
                    glo: glo.clone(),
                    chroma: None,
                    params: p,
                },
                AdaDelta::new(dim, schedule.rho, schedule.eps),
            ))
        })
        .collect();
    let rates = block_rates(&params[0], cfg, Scope::TrainFinal, geom_frozen && refl_frozen);
    let lr_theta_g = if geom_frozen { 0.0 } else { cfg.lr_geom * schedule.corrective_lr_multiplier };
    let lr_theta_r = if refl_frozen { 0.0 } else { cfg.lr_refl * schedule.corrective_lr_multiplier };
    let mut theta_g = model.geom_corr.to_flat();
    let mut theta_r = model.refl_corr.to_flat();
    let mut opt_g = AdaDelta::new(theta_g.len(), schedule.rho, schedule.eps);
    let mut opt_r = AdaDelta::new(theta_r.len(), schedule.rho, schedule.eps);
    let rates_g = vec![lr_theta_g; theta_g.len()];
    let rates_r = vec![lr_theta_r; theta_r.len()];

    let nothing_to_learn = rates.iter().all(|&r| r == 0.0) && lr_theta_g == 0.0 && lr_theta_r == 0.0;
    let epochs = if nothing_to_learn || active.is_empty() { 0 } else { cfg.iterations };
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed ^ 0x7472_6169_6e);
    let mut log = Vec::with_capacity(epochs);
    let mut history: Vec<EnergyReport> = Vec::new();
    let mut initial = f64::NAN;
    for epoch in 0..epochs {
        let mut order = active.clone();
        order.shuffle(&mut rng);
        let (mut sum_total, mut sum_photo) = (0.0, 0.0);
        for batch in order.chunks(schedule.batch_size) {
            let mut taken: Vec<(ImageTask, AdaDelta)> =
                batch.iter().map(|&i| slots[i].take().expect("task present")).collect();
            let outs: Vec<Result<(EnergyReport, Vec<f64>, Vec<f64>)>> = pool.install(|| {
                taken
                    .par_iter_mut()
                    .map(|(task, opt)| {
                        let (report, grad, _) = task.evaluate(&model, &weights, Some(Mode::Train))?;
                        let grad = grad.expect("gradient requested");
                        let mut x = task.params.to_flat();
                        opt.step(&mut x, &grad.params.to_flat(), &rates);
                        task.params.set_flat(&x)?;
                        let flat = |g: &Option<Vec<LayerGrad>>| flat_layer_grads(g.as_deref().unwrap_or_default());
                        Ok((report, flat(&grad.theta_g), flat(&grad.theta_r)))
                    })
                    .collect()
            });
            for (&i, t) in batch.iter().zip(taken) {
                slots[i] = Some(t);
            }
            let mut gg = Vec::with_capacity(outs.len());
            let mut gr = Vec::with_capacity(outs.len());
            for out in outs {
                let (report, g, r) = out?;
                sum_total += report.total;
                sum_photo += report.photo_final;
                gg.push(g);
                gr.push(r);
            }
            opt_g.step(&mut theta_g, &average(&gg), &rates_g);
            opt_r.step(&mut theta_r, &average(&gr), &rates_r);
            model.geom_corr.set_flat(&theta_g)?;
            model.refl_corr.set_flat(&theta_r)?;
        }
        let n = active.len() as f64;
        let entry = TrainLogEntry {
            epoch,
            mean_total: sum_total / n,
            mean_photo_final: sum_photo / n,
        };
        if epoch == 0 {
            initial = entry.mean_total;
        }
        let summary = EnergyReport {
            total: entry.mean_total,
            ..EnergyReport::default()
        };
        check_divergence(&summary, initial, epoch, &history)?;
        history.push(summary);
        if epoch % 500 == 0 || epoch + 1 == epochs {
            info!("epoch {epoch}: mean energy {:.6e}", entry.mean_total);
        }
        log.push(entry);
    }

    let finals: Vec<Result<(usize, ParamVector, f64, f64)>> = pool.install(|| {
        slots
            .par_iter()
            .enumerate()
            .filter_map(|(i, s)| s.as_ref().map(|(t, _)| (i, t)))
            .map(|(i, task)| {
                let base = render_state(&model, &task.params, k, Level::Base)?;
                let fin = render_state(&model, &task.params, k, Level::Final)?;
                Ok((
                    i,
                    task.params.clone(),
                    photometric_error(&base, task.image),
                    photometric_error(&fin, task.image),
                ))
            })
            .collect()
    });
    let mut errors_base = vec![None; corpus.len()];
    let mut errors_final = vec![None; corpus.len()];
    for r in finals {
        let (i, p, eb, ef) = r?;
        params[i] = p;
        errors_base[i] = Some(eb);
        errors_final[i] = Some(ef);
    }
    Ok(TrainResult {
        model,
        params,
        errors_base,
        errors_final,
        skipped,
        log,
    })
}

