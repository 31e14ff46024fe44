//! Affine (mean + linear basis) geometry and reflectance model.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_finite, check_len, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BaseModel {
    /// Mean geometry, stacked xyz per vertex.
    pub a_g: DVector<f64>,
    /// Mean reflectance, stacked linear RGB per vertex.
    pub a_r: DVector<f64>,
    /// Geometry basis, one column per shape/expression mode (3N x (m_s + m_e)).
    pub b_g: DMatrix<f64>,
    /// Reflectance basis (3N x m_r).
    pub b_r: DMatrix<f64>,
    pub sigma_g: DVector<f64>,
    pub sigma_r: DVector<f64>,
    pub m_s: usize,
    pub m_e: usize,
    pub m_r: usize,
}

impl BaseModel {
    pub fn validate(&self) -> Result<()> {
        let len3 = self.a_g.len();
        if len3 == 0 || len3 % 3 != 0 {
            return Err(Error::InvalidModel(format!(
                "geometry mean length {len3} is not a positive multiple of 3"
            )));
        }
        check_len("reflectance mean", len3, self.a_r.len())?;
        check_len("geometry basis rows", len3, self.b_g.nrows())?;
        check_len("reflectance basis rows", len3, self.b_r.nrows())?;
        check_len("geometry basis columns", self.m_s + self.m_e, self.b_g.ncols())?;
        check_len("reflectance basis columns", self.m_r, self.b_r.ncols())?;
        check_len("sigma_g", self.m_s + self.m_e, self.sigma_g.len())?;
        check_len("sigma_r", self.m_r, self.sigma_r.len())?;
        if self.sigma_g.iter().chain(self.sigma_r.iter()).any(|&s| !(s > 0.0)) {
            return Err(Error::InvalidModel("standard deviations must be > 0".into()));
        }
        check_finite("geometry mean", self.a_g.as_slice())?;
        check_finite("reflectance mean", self.a_r.as_slice())?;
        check_finite("geometry basis", self.b_g.as_slice())?;
        check_finite("reflectance basis", self.b_r.as_slice())?;
        Ok(())
    }

    pub fn vertex_count(&self) -> usize {
        self.a_g.len() / 3
    }

    pub fn geometry_dim(&self) -> usize {
        self.m_s + self.m_e
    }

    /// `a_g + B_g alpha`.
    pub fn eval_geometry(&self, alpha: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("alpha", self.geometry_dim(), alpha.len())?;
        check_finite("alpha", alpha.as_slice())?;
        Ok(&self.a_g + &self.b_g * alpha)
    }

    /// `a_r + B_r beta`.
    pub fn eval_reflectance(&self, beta: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("beta", self.m_r, beta.len())?;
        check_finite("beta", beta.as_slice())?;
        Ok(&self.a_r + &self.b_r * beta)
    }
}
