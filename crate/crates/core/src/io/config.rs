//! Run configuration file (JSON). Every field is optional and unknown keys
//! are rejected; relative paths resolve against the file's directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::read_json;
use crate::energy::Weights;
use crate::error::{Error, Result};
use crate::fitter::{Schedule, StageConfig};
use crate::render::CameraIntrinsics;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StageOverrides {
    pub iterations: Option<usize>,
    pub lr_base: Option<f64>,
    pub lr_geom: Option<f64>,
    pub lr_refl: Option<f64>,
    /// Energy weight overrides by name (`w_photo`, `photo_final`, ...).
    pub weights: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntrinsicsOverrides {
    pub focal: Option<f64>,
    pub cx: Option<f64>,
    pub cy: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub pretrain: StageOverrides,
    pub finetune: StageOverrides,
    pub batch_size: Option<usize>,
    pub corrective_lr_multiplier: Option<f64>,
    pub rho: Option<f64>,
    pub eps: Option<f64>,
    pub intrinsics: IntrinsicsOverrides,
}

impl StageOverrides {
    fn apply(&self, stage: &mut StageConfig, name: &str) -> Result<()> {
        if let Some(v) = self.iterations {
            stage.iterations = v;
        }
        for (slot, v) in [
            (&mut stage.lr_base, self.lr_base),
            (&mut stage.lr_geom, self.lr_geom),
            (&mut stage.lr_refl, self.lr_refl),
        ] {
            if let Some(v) = v {
                *slot = v;
            }
        }
        let mut w: Weights = stage.weights;
        for (key, value) in &self.weights {
            let text = match value {
                serde_json::Value::Number(n) => n.to_string(),
                serde_json::Value::Bool(b) => b.to_string(),
                other => {
                    return Err(Error::InvalidInput(format!(
                        "{name}.weights.{key}: expected a number or boolean, got {other}"
                    )))
                }
            };
            w.set(key, &text)?;
        }
        stage.weights = w;
        Ok(())
    }
}

impl RunConfig {
    /// Reads a config file and checks that every referenced path exists.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: RunConfig = read_json(path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for (key, p) in [("model", &mut cfg.model), ("corpus", &mut cfg.corpus)] {
            if let Some(p) = p {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
                if !p.exists() {
                    return Err(Error::format(path, format!("{key} path {} does not exist", p.display())));
                }
            }
        }
        if let Some(p) = cfg.out.as_mut().filter(|p| p.is_relative()) {
            *p = base.join(&*p);
        }
        Ok(cfg)
    }

    /// Overlays the config on `schedule` and validates the result.
    pub fn apply(&self, schedule: &mut Schedule) -> Result<()> {
        self.pretrain.apply(&mut schedule.pretrain, "pretrain")?;
        self.finetune.apply(&mut schedule.finetune, "finetune")?;
        if let Some(v) = self.batch_size {
            schedule.batch_size = v;
        }
        if let Some(v) = self.corrective_lr_multiplier {
            schedule.corrective_lr_multiplier = v;
        }
        if let Some(v) = self.rho {
            schedule.rho = v;
        }
        if let Some(v) = self.eps {
            schedule.eps = v;
        }
        if let Some(v) = self.seed {
            schedule.seed = v;
        }
        schedule.validate()
    }

    /// Default intrinsics for the image size with the config's overrides.
    pub fn intrinsics(&self, width: usize, height: usize) -> Result<CameraIntrinsics> {
        let mut k = CameraIntrinsics::default_for(width, height);
        if let Some(f) = self.intrinsics.focal {
            k.focal = f;
        }
        if let Some(c) = self.intrinsics.cx {
            k.cx = c;
        }
        if let Some(c) = self.intrinsics.cy {
            k.cy = c;
        }
        k.validate()?;
        Ok(k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, text: &str) -> PathBuf {
        let p = dir.join("run.json");
        std::fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn overrides_reach_the_schedule() {
        let tmp = tempfile::tempdir().unwrap();
        let p = write(
            tmp.path(),
            r#"{"seed": 9, "finetune": {"iterations": 7, "lr_geom": 0.25, "weights": {"w_glo": 0, "photo_final": false}},
                "intrinsics": {"focal": 50}}"#,
        );
        let cfg = RunConfig::load(&p).unwrap();
        let mut s = Schedule::default();
        cfg.apply(&mut s).unwrap();
        assert_eq!((s.seed, s.finetune.iterations, s.finetune.lr_geom), (9, 7, 0.25));
        assert_eq!(s.finetune.weights.w_glo, 0.0);
        assert!(!s.finetune.weights.photo_final);
        assert_eq!(s.pretrain, Schedule::default().pretrain);
        assert_eq!(cfg.intrinsics(64, 48).unwrap().focal, 50.0);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        for text in [
            r#"{"sed": 1}"#,
            r#"{"finetune": {"iteration": 3}}"#,
        ] {
            let err = RunConfig::load(&write(tmp.path(), text)).unwrap_err().to_string();
            assert!(err.contains("unknown field"), "{err}");
        }
        let cfg = RunConfig::load(&write(tmp.path(), r#"{"pretrain": {"weights": {"w_phot": 1}}}"#)).unwrap();
        assert!(cfg.apply(&mut Schedule::default()).is_err());
    }

    #[test]
    fn referenced_paths_must_exist() {
        let tmp = tempfile::tempdir().unwrap();
        let err = RunConfig::load(&write(tmp.path(), r#"{"model": "nowhere"}"#)).unwrap_err().to_string();
        assert!(err.contains("nowhere"), "{err}");
        std::fs::create_dir(tmp.path().join("m")).unwrap();
        let cfg = RunConfig::load(&write(tmp.path(), r#"{"model": "m"}"#)).unwrap();
        assert_eq!(cfg.model.unwrap(), tmp.path().join("m"));
    }

    #[test]
    fn invalid_rates_fail_validation() {
        let cfg = RunConfig {
            finetune: StageOverrides {
                lr_base: Some(0.0),
                ..StageOverrides::default()
            },
            ..RunConfig::default()
        };
        assert!(cfg.apply(&mut Schedule::default()).is_err());
    }
}
