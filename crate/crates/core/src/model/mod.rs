//! Multi-level face model: affine base plus learned correctives.

mod base;
mod corrective;
mod synth;
mod topology;

pub use base::BaseModel;
pub use corrective::{
    flatten_layers, AffineLayer, CorrectiveMap, ForwardTrace, LayerGrad, Variant, HIDDEN_BIAS_INIT,
};
pub use synth::{head_proxy, synth_model, SynthConfig, HEAD_SKIN, MIN_VERTICES};
pub use topology::{AnchorKind, LandmarkAnchor, MeshTopology};

use nalgebra::DVector;
use rand::SeedableRng;

use crate::error::{check_len, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MultiLevelModel {
    pub topology: MeshTopology,
    pub base: BaseModel,
    pub geom_corr: CorrectiveMap,
    pub refl_corr: CorrectiveMap,
    /// Seed the model was generated with (0 when not synthetic).
    pub seed: u64,
}

impl MultiLevelModel {
    pub fn validate(&self) -> Result<()> {
        self.topology.validate()?;
        self.base.validate()?;
        self.geom_corr.validate()?;
        self.refl_corr.validate()?;
        let n3 = 3 * self.topology.vertex_count();
        check_len("geometry mean length", n3, self.base.a_g.len())?;
        check_len("geometry corrective output", n3, self.geom_corr.output_dim())?;
        check_len("reflectance corrective output", n3, self.refl_corr.output_dim())?;
        check_len(
            "corrective code dimension",
            self.geom_corr.input_dim(),
            self.refl_corr.input_dim(),
        )?;
        Ok(())
    }

    pub fn vertex_count(&self) -> usize {
        self.topology.vertex_count()
    }

    /// Corrective code dimension C.
    pub fn corrective_dim(&self) -> usize {
        self.geom_corr.input_dim()
    }

    /// Same base model with freshly initialised correctives.
    pub fn with_correctives(&self, variant: Variant, c: usize, hidden_dim: usize, seed: u64) -> Result<Self> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let (geom_corr, refl_corr) = synth::init_correctives(3 * self.vertex_count(), variant, c, hidden_dim, &mut rng);
        let model = MultiLevelModel {
            geom_corr,
            refl_corr,
            ..self.clone()
        };
        model.validate()?;
        Ok(model)
    }

    /// Final-level geometry and reflectance: base plus corrective offsets.
    pub fn eval_final(
        &self,
        alpha: &DVector<f64>,
        beta: &DVector<f64>,
        delta_g: &DVector<f64>,
        delta_r: &DVector<f64>,
    ) -> Result<(DVector<f64>, DVector<f64>)> {
        let v = self.base.eval_geometry(alpha)? + self.geom_corr.eval(delta_g)?;
        let r = self.base.eval_reflectance(beta)? + self.refl_corr.eval(delta_r)?;
        Ok((v, r))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn desk_model() -> MultiLevelModel {
        synth_model(&SynthConfig {
            seed: 7,
            n_vertices: 120,
            m_s: 3,
            m_e: 2,
            m_r: 3,
            c: 4,
            ..SynthConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn neutral_face_at_zero_coefficients() {
        let m = desk_model();
        let z = |n| DVector::zeros(n);
        let (v, r) = m.eval_final(&z(5), &z(3), &z(4), &z(4)).unwrap();
        assert_eq!(v, m.base.a_g);
        assert_eq!(r, m.base.a_r);
    }

    #[test]
    fn zero_code_adds_only_the_corrective_bias() {
        let m = desk_model();
        let alpha = DVector::from_vec(vec![0.3, -0.2, 0.1, 0.5, -0.4]);
        let (v, _) = m
            .eval_final(&alpha, &DVector::zeros(3), &DVector::zeros(4), &DVector::zeros(4))
            .unwrap();
        let vb = m.base.eval_geometry(&alpha).unwrap();
        assert_eq!(v, &vb + &m.geom_corr.layers[0].bias);
        assert_eq!(v, vb);
    }

    #[test]
    fn final_is_sum_of_independent_parts() {
        let mut m = desk_model();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for layer in m.geom_corr.layers.iter_mut().chain(m.refl_corr.layers.iter_mut()) {
            layer.weights.apply(|w| *w = rng.random_range(-0.1..0.1));
            layer.bias.apply(|b| *b = rng.random_range(-0.1..0.1));
        }
        let mut rv = |n| DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let (alpha, beta, dg, dr) = (rv(5), rv(3), rv(4), rv(4));
        let (v, r) = m.eval_final(&alpha, &beta, &dg, &dr).unwrap();
        let n3 = 3 * m.vertex_count();
        for row in 0..n3 {
            let mut vb = m.base.a_g[row];
            for k in 0..5 {
                vb += alpha[k] * m.base.b_g[(row, k)];
            }
            let mut corr = m.geom_corr.layers[0].bias[row];
            for k in 0..4 {
                corr += m.geom_corr.layers[0].weights[(row, k)] * dg[k];
            }
            assert!((v[row] - (vb + corr)).abs() < 1e-12);
            let mut rb = m.base.a_r[row];
            for k in 0..3 {
                rb += beta[k] * m.base.b_r[(row, k)];
            }
            let mut corr = m.refl_corr.layers[0].bias[row];
            for k in 0..4 {
                corr += m.refl_corr.layers[0].weights[(row, k)] * dr[k];
            }
            assert!((r[row] - (rb + corr)).abs() < 1e-12);
        }
    }
}
