//! The self-supervised fitting energy: dense two-level photometric term,
//! sparse landmarks and the statistical / corrective regularizers.

pub(crate) mod terms;
mod weights;

pub use terms::{
    e_glo, e_photo, e_photo_level, e_ref, e_smo, e_sparse, e_sta, e_std, photometric_error,
};
pub use weights::Weights;

use std::collections::BTreeMap;

use log::debug;
use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::gradients::{evaluate, ParamVector};
use crate::landmarks::LandmarkSet;
use crate::model::{MeshTopology, MultiLevelModel};
use crate::render::{CameraIntrinsics, Image, RenderState};

/// Per-term energies of one evaluation. Regularizer terms already include
/// their own weight (`w_smo`, `w_ref`, ...), `std` includes `w_rstd`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnergyReport {
    pub photo_base: f64,
    pub photo_final: f64,
    pub sparse: f64,
    pub std: f64,
    pub smo: f64,
    #[serde(rename = "ref")]
    pub ref_: f64,
    pub glo: f64,
    pub sta: f64,
    pub w_photo: f64,
    pub w_reg: f64,
    pub data: f64,
    pub reg: f64,
    pub total: f64,
}

impl EnergyReport {
    /// Fills `data`, `reg` and `total` from the individual terms.
    pub fn assemble(mut self, weights: &Weights) -> Self {
        self.w_photo = weights.w_photo;
        self.w_reg = weights.w_reg;
        self.data = self.sparse + weights.w_photo * (self.photo_base + self.photo_final);
        self.reg = self.std + self.smo + self.ref_ + self.glo + self.sta;
        self.total = self.data + weights.w_reg * self.reg;
        self
    }

    pub fn is_finite(&self) -> bool {
        self.terms().iter().all(|(_, v)| v.is_finite())
    }

    /// Named values in a fixed order (CSV column order).
    pub fn terms(&self) -> [(&'static str, f64); 11] {
        [
            ("photo_base", self.photo_base),
            ("photo_final", self.photo_final),
            ("sparse", self.sparse),
            ("std", self.std),
            ("smo", self.smo),
            ("ref", self.ref_),
            ("glo", self.glo),
            ("sta", self.sta),
            ("data", self.data),
            ("reg", self.reg),
            ("total", self.total),
        ]
    }
}

/// Edge weights `w_ij` of the reflectance sparsity prior, one per undirected
/// mesh edge. Held constant during differentiation.
#[derive(Debug, Clone, PartialEq)]
pub struct ChromaWeights {
    pub edges: Vec<(usize, usize)>,
    pub weights: Vec<f64>,
}

impl ChromaWeights {
    pub fn uniform(topology: &MeshTopology, value: f64) -> Self {
        let edges = topology.edges();
        let weights = vec![value; edges.len()];
        ChromaWeights { edges, weights }
    }
}

/// `w_ij = exp(-chroma_alpha * |I(u_i) - I(u_j)|)` sampled at the projections
/// of `state`; edges with an invisible endpoint take the maximal distance 1.
pub fn chroma_weights(
    image: &Image,
    state: &RenderState,
    topology: &MeshTopology,
    weights: &Weights,
) -> ChromaWeights {
    let edges = topology.edges();
    let color = |i: usize| {
        let c = image.sample(&state.pixels[i]);
        if weights.chroma_normalized {
            c / (c.sum().max(1e-6))
        } else {
            c
        }
    };
    let w = edges
        .iter()
        .map(|&(i, j)| {
            let dist = if state.visible[i] && state.visible[j] {
                (color(i) - color(j)).norm()
            } else {
                1.0
            };
            (-weights.chroma_alpha * dist).exp()
        })
        .collect();
    ChromaWeights { edges, weights: w }
}

/// Number of reflectance-constancy partners drawn per skin vertex.
pub const GLO_SAMPLES: usize = 6;

/// Fixed random partners `G_i` for every skin-mask vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct GloSamples {
    pub mask_size: usize,
    pub pairs: Vec<(usize, [usize; GLO_SAMPLES])>,
}

pub fn glo_samples(mask: &[usize], seed: u64) -> GloSamples {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x676c_6f62);
    let pairs = mask
        .iter()
        .map(|&i| {
            let mut g = [i; GLO_SAMPLES];
            if mask.len() > 1 {
                for slot in &mut g {
                    *slot = loop {
                        let j = *mask.choose(&mut rng).expect("nonempty mask");
                        if j != i {
                            break j;
                        }
                    };
                }
            }
            (i, g)
        })
        .collect();
    GloSamples {
        mask_size: mask.len(),
        pairs,
    }
}

/// Visibility sets to use instead of the ones computed from the evaluated
/// state (finite differences keep them fixed at the expansion point).
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenVisibility {
    pub base: Vec<bool>,
    pub final_: Vec<bool>,
}

/// Everything the energy depends on besides the per-image unknowns.
#[derive(Debug, Clone, Copy)]
pub struct Problem<'a> {
    pub model: &'a MultiLevelModel,
    pub image: &'a Image,
    pub k: &'a CameraIntrinsics,
    pub landmarks: Option<&'a LandmarkSet>,
    pub weights: &'a Weights,
    pub chroma: &'a ChromaWeights,
    pub glo: &'a GloSamples,
    pub visibility: Option<&'a FrozenVisibility>,
}

/// Total energy and its breakdown. Shares its code path with
/// [`crate::gradients::grad_total`], so the values agree bit for bit.
pub fn e_total(problem: &Problem, params: &ParamVector) -> Result<EnergyReport> {
    Ok(evaluate(problem, params, None)?.0)
}

/// Per-term values keyed by name, handy for logs.
pub fn report_map(report: &EnergyReport) -> BTreeMap<&'static str, f64> {
    report.terms().into_iter().collect()
}

pub(crate) fn empty_visible(level: &str) {
    debug!("no visible vertices on the {level} level; photometric term is 0");
}
