//! Per-image unknowns and their flat layout.

use std::ops::Range;

use nalgebra::{DVector, SMatrix, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{check_finite, check_len, Result};
use crate::model::{LayerGrad, MultiLevelModel};
use crate::render::{Illumination, Level, Pose, SH_COUNT};

/// Named parameter blocks, in flat-layout order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Block {
    Alpha,
    Beta,
    DeltaG,
    DeltaR,
    Omega,
    T,
    GammaB,
    GammaF,
}

impl Block {
    pub const ALL: [Block; 8] = [
        Block::Alpha,
        Block::Beta,
        Block::DeltaG,
        Block::DeltaR,
        Block::Omega,
        Block::T,
        Block::GammaB,
        Block::GammaF,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Block::Alpha => "alpha",
            Block::Beta => "beta",
            Block::DeltaG => "delta_g",
            Block::DeltaR => "delta_r",
            Block::Omega => "omega",
            Block::T => "t",
            Block::GammaB => "gamma_b",
            Block::GammaF => "gamma_f",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub alpha: DVector<f64>,
    pub beta: DVector<f64>,
    pub delta_g: DVector<f64>,
    pub delta_r: DVector<f64>,
    pub omega: Vector3<f64>,
    pub t: Vector3<f64>,
    pub gamma_b: Illumination,
    pub gamma_f: Illumination,
}

impl ParamVector {
    pub fn zeros(model: &MultiLevelModel) -> Self {
        let c = model.corrective_dim();
        ParamVector {
            alpha: DVector::zeros(model.base.geometry_dim()),
            beta: DVector::zeros(model.base.m_r),
            delta_g: DVector::zeros(c),
            delta_r: DVector::zeros(c),
            omega: Vector3::zeros(),
            t: Vector3::zeros(),
            gamma_b: Illumination::ambient([0.0; 3]),
            gamma_f: Illumination::ambient([0.0; 3]),
        }
    }

    pub fn check_dims(&self, model: &MultiLevelModel) -> Result<()> {
        check_len("alpha", model.base.geometry_dim(), self.alpha.len())?;
        check_len("beta", model.base.m_r, self.beta.len())?;
        check_len("delta_g", model.corrective_dim(), self.delta_g.len())?;
        check_len("delta_r", model.corrective_dim(), self.delta_r.len())?;
        check_finite("parameters", &self.to_flat())
    }

    pub fn pose(&self) -> Pose {
        Pose {
            omega: self.omega,
            t: self.t,
        }
    }

    pub fn illumination(&self, level: Level) -> &Illumination {
        match level {
            Level::Base => &self.gamma_b,
            Level::Final => &self.gamma_f,
        }
    }

    fn block_len(&self, block: Block) -> usize {
        match block {
            Block::Alpha => self.alpha.len(),
            Block::Beta => self.beta.len(),
            Block::DeltaG => self.delta_g.len(),
            Block::DeltaR => self.delta_r.len(),
            Block::Omega | Block::T => 3,
            Block::GammaB | Block::GammaF => 3 * SH_COUNT,
        }
    }

    /// Flat index range of every block.
    pub fn layout(&self) -> Vec<(Block, Range<usize>)> {
        let mut at = 0;
        Block::ALL
            .iter()
            .map(|&b| {
                let len = self.block_len(b);
                let r = at..at + len;
                at += len;
                (b, r)
            })
            .collect()
    }

    /// `(m_s + m_e) + m_r + 2C + 6 + 54`.
    pub fn dim(&self) -> usize {
        Block::ALL.iter().map(|&b| self.block_len(b)).sum()
    }

    fn block_slice(&self, block: Block) -> &[f64] {
        match block {
            Block::Alpha => self.alpha.as_slice(),
            Block::Beta => self.beta.as_slice(),
            Block::DeltaG => self.delta_g.as_slice(),
            Block::DeltaR => self.delta_r.as_slice(),
            Block::Omega => self.omega.as_slice(),
            Block::T => self.t.as_slice(),
            Block::GammaB => self.gamma_b.gamma.as_slice(),
            Block::GammaF => self.gamma_f.gamma.as_slice(),
        }
    }

    fn block_slice_mut(&mut self, block: Block) -> &mut [f64] {
        match block {
            Block::Alpha => self.alpha.as_mut_slice(),
            Block::Beta => self.beta.as_mut_slice(),
            Block::DeltaG => self.delta_g.as_mut_slice(),
            Block::DeltaR => self.delta_r.as_mut_slice(),
            Block::Omega => self.omega.as_mut_slice(),
            Block::T => self.t.as_mut_slice(),
            Block::GammaB => self.gamma_b.gamma.as_mut_slice(),
            Block::GammaF => self.gamma_f.gamma.as_mut_slice(),
        }
    }

    /// Gamma blocks are flattened column-major (SH index fastest, then channel).
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        for b in Block::ALL {
            out.extend_from_slice(self.block_slice(b));
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        check_len("flat parameter vector", self.dim(), flat.len())?;
        for (b, r) in self.layout() {
            self.block_slice_mut(b).copy_from_slice(&flat[r]);
        }
        Ok(())
    }

    pub fn block(&self, block: Block) -> &[f64] {
        self.block_slice(block)
    }

    pub fn block_mut(&mut self, block: Block) -> &mut [f64] {
        self.block_slice_mut(block)
    }

    /// Same shape, all zeros.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for b in Block::ALL {
            z.block_slice_mut(b).fill(0.0);
        }
        z
    }
}

/// dE/dx laid out like [`ParamVector`], plus optional corrective-parameter
/// gradients (training mode).
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector {
    pub params: ParamVector,
    pub theta_g: Option<Vec<LayerGrad>>,
    pub theta_r: Option<Vec<LayerGrad>>,
}

impl GradientVector {
    pub fn is_finite(&self) -> bool {
        let layers_ok = |l: &Option<Vec<LayerGrad>>| {
            l.as_ref().is_none_or(|ls| {
                ls.iter()
                    .all(|g| g.weights.iter().chain(g.bias.iter()).all(|v| v.is_finite()))
            })
        };
        self.params.to_flat().iter().all(|v| v.is_finite())
            && layers_ok(&self.theta_g)
            && layers_ok(&self.theta_r)
    }
}

/// JSON form of a [`ParamVector`] with plain arrays; gamma rows are SH
/// coefficients, columns RGB.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamRecord {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub delta_g: Vec<f64>,
    pub delta_r: Vec<f64>,
    pub omega: [f64; 3],
    pub t: [f64; 3],
    pub gamma_b: Vec<[f64; 3]>,
    pub gamma_f: Vec<[f64; 3]>,
}

fn gamma_rows(light: &Illumination) -> Vec<[f64; 3]> {
    (0..SH_COUNT)
        .map(|b| [light.gamma[(b, 0)], light.gamma[(b, 1)], light.gamma[(b, 2)]])
        .collect()
}

fn gamma_from_rows(rows: &[[f64; 3]]) -> Result<Illumination> {
    check_len("illumination coefficients", SH_COUNT, rows.len())?;
    Ok(Illumination {
        gamma: SMatrix::<f64, SH_COUNT, 3>::from_fn(|b, ch| rows[b][ch]),
    })
}

impl From<&ParamVector> for ParamRecord {
    fn from(p: &ParamVector) -> Self {
        ParamRecord {
            alpha: p.alpha.as_slice().to_vec(),
            beta: p.beta.as_slice().to_vec(),
            delta_g: p.delta_g.as_slice().to_vec(),
            delta_r: p.delta_r.as_slice().to_vec(),
            omega: [p.omega.x, p.omega.y, p.omega.z],
            t: [p.t.x, p.t.y, p.t.z],
            gamma_b: gamma_rows(&p.gamma_b),
            gamma_f: gamma_rows(&p.gamma_f),
        }
    }
}

impl TryFrom<&ParamRecord> for ParamVector {
    type Error = crate::Error;

    fn try_from(r: &ParamRecord) -> Result<Self> {
        Ok(ParamVector {
            alpha: DVector::from_vec(r.alpha.clone()),
            beta: DVector::from_vec(r.beta.clone()),
            delta_g: DVector::from_vec(r.delta_g.clone()),
            delta_r: DVector::from_vec(r.delta_r.clone()),
            omega: Vector3::from(r.omega),
            t: Vector3::from(r.t),
            gamma_b: gamma_from_rows(&r.gamma_b)?,
            gamma_f: gamma_from_rows(&r.gamma_f)?,
        })
    }
}

impl Serialize for ParamVector {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        ParamRecord::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for ParamVector {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let rec = ParamRecord::deserialize(d)?;
        ParamVector::try_from(&rec).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{synth_model, SynthConfig};
    use proptest::prelude::*;

    fn model() -> MultiLevelModel {
        synth_model(&SynthConfig {
            n_vertices: 100,
            ..SynthConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn dimension_accounting() {
        let m = model();
        let p = ParamVector::zeros(&m);
        // (8 + 4) + 8 + 2 * 6 + 6 + 54
        assert_eq!(p.dim(), 12 + 8 + 12 + 6 + 54);
        let layout = p.layout();
        assert_eq!(layout.last().unwrap().1.end, p.dim());
        assert_eq!(layout[4], (Block::Omega, 32..35));
    }

    proptest! {
        #[test]
        fn flat_and_json_roundtrip(values in proptest::collection::vec(-10.0f64..10.0, 92)) {
            let m = model();
            let mut p = ParamVector::zeros(&m);
            p.set_flat(&values).unwrap();
            prop_assert_eq!(p.to_flat(), values);
            let json = serde_json::to_string(&p).unwrap();
            let back: ParamVector = serde_json::from_str(&json).unwrap();
            prop_assert_eq!(back, p);
        }
    }
}
