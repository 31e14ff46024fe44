//! Corpus directories: `images/%05d.png`, `landmarks/%05d.lms`,
//! `gt/%05d.json` and `manifest.json`.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{read_json, write_bytes, write_json};
use crate::error::{Error, Result};
use crate::fitter::{thread_pool, CorpusConfig, CorpusItem, CorpusSample};
use crate::gradients::ParamVector;
use crate::landmarks::LandmarkSet;
use crate::model::LandmarkAnchor;
use crate::render::{CameraIntrinsics, Image};

pub const CORPUS_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusManifest {
    pub version: u32,
    pub count: usize,
    pub intrinsics: CameraIntrinsics,
    /// Generator settings for synthetic corpora.
    pub config: Option<CorpusConfig>,
    /// Seed of the model the corpus was rendered with.
    pub model_seed: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct LoadedCorpus {
    pub manifest: CorpusManifest,
    pub items: Vec<CorpusItem>,
    /// Ground-truth parameters where `gt/` provides them.
    pub ground_truth: Vec<Option<ParamVector>>,
}

fn paths(dir: &Path, i: usize) -> (PathBuf, PathBuf, PathBuf) {
    (
        dir.join("images").join(format!("{i:05}.png")),
        dir.join("landmarks").join(format!("{i:05}.lms")),
        dir.join("gt").join(format!("{i:05}.json")),
    )
}

/// Writes a rendered corpus. Files are written in parallel; their contents
/// do not depend on the schedule.
pub fn write_corpus(dir: &Path, cfg: &CorpusConfig, model_seed: u64, samples: &[CorpusSample]) -> Result<()> {
    let manifest = CorpusManifest {
        version: CORPUS_VERSION,
        count: samples.len(),
        intrinsics: cfg.intrinsics(),
        config: Some(cfg.clone()),
        model_seed: Some(model_seed),
    };
    for sub in ["images", "landmarks", "gt"] {
        let d = dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let results: Vec<Result<()>> = thread_pool()?.install(|| {
        samples
            .par_iter()
            .enumerate()
            .map(|(i, s)| {
                let (img, lms, gt) = paths(dir, i);
                s.image.save(&img)?;
                write_bytes(&lms, s.landmarks.to_text().as_bytes())?;
                write_json(&gt, &s.params)
            })
            .collect()
    });
    results.into_iter().collect::<Result<()>>()?;
    write_json(&dir.join("manifest.json"), &manifest)
}

/// Reads a corpus directory. Landmark files are optional per image, as are
/// ground-truth files; `anchors` resolves landmark lines without indices.
pub fn load_corpus(dir: &Path, anchors: Option<&[LandmarkAnchor]>) -> Result<LoadedCorpus> {
    let manifest: CorpusManifest = read_json(&dir.join("manifest.json"))?;
    if manifest.version != CORPUS_VERSION {
        return Err(Error::format(
            dir.join("manifest.json"),
            format!("unsupported corpus version {}", manifest.version),
        ));
    }
    let k = manifest.intrinsics;
    let loaded: Vec<Result<(CorpusItem, Option<ParamVector>)>> = thread_pool()?.install(|| {
        (0..manifest.count)
            .into_par_iter()
            .map(|i| {
                let (img, lms, gt) = paths(dir, i);
                let image = Image::load(&img)?;
                if image.width() != k.width || image.height() != k.height {
                    return Err(Error::format(
                        &img,
                        format!(
                            "image is {}x{}, manifest says {}x{}",
                            image.width(),
                            image.height(),
                            k.width,
                            k.height
                        ),
                    ));
                }
                let landmarks = if lms.exists() {
                    Some(LandmarkSet::load(&lms, anchors)?)
                } else {
                    None
                };
                let params = if gt.exists() { Some(read_json(&gt)?) } else { None };
                Ok((CorpusItem { image, landmarks }, params))
            })
            .collect()
    });
    let mut items = Vec::with_capacity(manifest.count);
    let mut ground_truth = Vec::with_capacity(manifest.count);
    for r in loaded {
        let (item, gt) = r?;
        items.push(item);
        ground_truth.push(gt);
    }
    Ok(LoadedCorpus {
        manifest,
        items,
        ground_truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fitter::synth_corpus;
    use crate::model::{synth_model, SynthConfig};

    #[test]
    fn corpus_roundtrip_keeps_params_landmarks_and_images() {
        let model = synth_model(&SynthConfig {
            n_vertices: 120,
            ..SynthConfig::default()
        })
        .unwrap();
        let cfg = CorpusConfig {
            count: 3,
            width: 32,
            height: 32,
            ..CorpusConfig::default()
        };
        let samples = synth_corpus(&model, &cfg).unwrap();
        let tmp = tempfile::tempdir().unwrap();
        write_corpus(tmp.path(), &cfg, model.seed, &samples).unwrap();
        let back = load_corpus(tmp.path(), Some(&model.topology.landmark_anchors)).unwrap();
        assert_eq!(back.manifest.count, 3);
        assert_eq!(back.manifest.config.as_ref(), Some(&cfg));
        for ((item, gt), s) in back.items.iter().zip(&back.ground_truth).zip(&samples) {
            assert_eq!(gt.as_ref(), Some(&s.params));
            assert_eq!(item.landmarks.as_ref(), Some(&s.landmarks));
            for (a, b) in item.image.pixels().iter().zip(s.image.pixels()) {
                assert!((a - b).amax() < 1e-4);
            }
        }
        assert!(tmp.path().join("images/00002.png").exists());
        assert!(tmp.path().join("landmarks/00000.lms").exists());
    }

    #[test]
    fn missing_image_names_the_file() {
        let tmp = tempfile::tempdir().unwrap();
        write_json(
            &tmp.path().join("manifest.json"),
            &CorpusManifest {
                version: CORPUS_VERSION,
                count: 1,
                intrinsics: CameraIntrinsics::default_for(8, 8),
                config: None,
                model_seed: None,
            },
        )
        .unwrap();
        let err = load_corpus(tmp.path(), None).unwrap_err().to_string();
        assert!(err.contains("00000.png"), "{err}");
    }
}
