use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Term weights and smoothing constants of the energy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Weights {
    pub w_photo: f64,
    pub w_reg: f64,
    pub w_rstd: f64,
    pub w_smo: f64,
    pub w_ref: f64,
    pub w_glo: f64,
    pub w_sta: f64,
    /// Falloff of the reflectance edge weights.
    pub chroma_alpha: f64,
    /// Exponent of the reflectance sparsity norm.
    pub p_exp: f64,
    pub eps_l21: f64,
    pub eps_p: f64,
    /// Whether the final level contributes a photometric term.
    pub photo_final: bool,
    /// Compare intensity-normalized colors in the edge weights instead of raw RGB.
    pub chroma_normalized: bool,
}

impl Default for Weights {
    fn default() -> Self {
        Self::finetune()
    }
}

impl Weights {
    /// Joint fine-tuning of base and correctives.
    pub fn finetune() -> Self {
        Weights {
            w_photo: 0.2,
            w_reg: 0.003,
            w_rstd: 0.002,
            w_smo: 3.2e4,
            w_ref: 13.0,
            w_glo: 80.0,
            w_sta: 0.08,
            chroma_alpha: 50.0,
            p_exp: 0.9,
            eps_l21: 1e-4,
            eps_p: 1e-8,
            photo_final: true,
            chroma_normalized: false,
        }
    }

    /// Base-only pretraining: photometric term on the base level only and no
    /// corrective regularizers.
    pub fn pretrain() -> Self {
        Weights {
            w_photo: 1.9,
            w_reg: 3e-5,
            w_rstd: 2e-3,
            w_smo: 0.0,
            w_ref: 0.0,
            w_glo: 0.0,
            w_sta: 0.0,
            photo_final: false,
            ..Self::finetune()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("w_photo", self.w_photo),
            ("w_reg", self.w_reg),
            ("w_rstd", self.w_rstd),
            ("w_smo", self.w_smo),
            ("w_ref", self.w_ref),
            ("w_glo", self.w_glo),
            ("w_sta", self.w_sta),
            ("chroma_alpha", self.chroma_alpha),
        ];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidInput(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !(self.p_exp > 0.0 && self.p_exp <= 1.0) {
            return Err(Error::InvalidInput(format!("p_exp must lie in (0, 1], got {}", self.p_exp)));
        }
        if !(self.eps_l21 > 0.0 && self.eps_p > 0.0) {
            return Err(Error::InvalidInput("smoothing epsilons must be > 0".into()));
        }
        Ok(())
    }

    /// Whether any term needs the final-level state.
    pub fn uses_final(&self) -> bool {
        self.photo_final
            || self.w_reg > 0.0
                && (self.w_smo > 0.0 || self.w_ref > 0.0 || self.w_glo > 0.0 || self.w_sta > 0.0)
    }

    /// Sets one field by name; unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |e: String| Error::InvalidInput(format!("weight '{key}': {e}"));
        let num = || value.parse::<f64>().map_err(|e| bad(e.to_string()));
        let flag = || value.parse::<bool>().map_err(|e| bad(e.to_string()));
        match key {
            "w_photo" => self.w_photo = num()?,
            "w_reg" => self.w_reg = num()?,
            "w_rstd" => self.w_rstd = num()?,
            "w_smo" => self.w_smo = num()?,
            "w_ref" => self.w_ref = num()?,
            "w_glo" => self.w_glo = num()?,
            "w_sta" => self.w_sta = num()?,
            "chroma_alpha" => self.chroma_alpha = num()?,
            "p_exp" => self.p_exp = num()?,
            "eps_l21" => self.eps_l21 = num()?,
            "eps_p" => self.eps_p = num()?,
            "photo_final" => self.photo_final = flag()?,
            "chroma_normalized" => self.chroma_normalized = flag()?,
            _ => return Err(Error::InvalidInput(format!("unknown weight key '{key}'"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines ('#' comments) on top of `self`.
    pub fn apply_config(mut self, text: &str, origin: &Path) -> Result<Self> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::format(origin, format!("line {}: expected key=value", lineno + 1)))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| Error::format(origin, format!("line {}: {e}", lineno + 1)))?;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn load(path: &Path, base: Self) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        base.apply_config(&text, path)
    }
}
