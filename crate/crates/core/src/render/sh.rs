//! Real spherical harmonics (bands 0-2) and diffuse SH shading.

use nalgebra::{SMatrix, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{check_finite, Error, Result};

pub const SH_COUNT: usize = 9;

// Normalization constants of the real SH basis.
const C0: f64 = 0.282_094_791_773_878_14; // 1 / (2 sqrt(pi))
const C1: f64 = 0.488_602_511_902_919_9; // sqrt(3 / (4 pi))
const C2: f64 = 1.092_548_430_592_079_2; // sqrt(15 / pi) / 2
const C3: f64 = 0.315_391_565_252_520_05; // sqrt(5 / pi) / 4
const C4: f64 = 0.546_274_215_296_039_6; // sqrt(15 / pi) / 4

/// Lighting coefficients: one row per SH function, one column per RGB channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Illumination {
    pub gamma: SMatrix<f64, SH_COUNT, 3>,
}

impl Illumination {
    /// Ambient-only lighting with the given band-0 coefficient per channel.
    pub fn ambient(rgb: [f64; 3]) -> Self {
        let mut gamma = SMatrix::<f64, SH_COUNT, 3>::zeros();
        for ch in 0..3 {
            gamma[(0, ch)] = rgb[ch];
        }
        Illumination { gamma }
    }

    pub fn validate(&self) -> Result<()> {
        check_finite("illumination", self.gamma.as_slice())
    }

    /// Per-channel irradiance `sum_b gamma_b H_b(n)`.
    pub fn irradiance(&self, basis: &[f64; SH_COUNT]) -> Vector3<f64> {
        let mut e = Vector3::zeros();
        for ch in 0..3 {
            e[ch] = (0..SH_COUNT).map(|b| self.gamma[(b, ch)] * basis[b]).sum();
        }
        e
    }
}

/// Order: Y00; Y1-1, Y10, Y11; Y2-2, Y2-1, Y20, Y21, Y22. Rejects non-unit
/// normals.
pub fn sh_basis(n: &Vector3<f64>) -> Result<[f64; SH_COUNT]> {
    check_finite("normal", n.as_slice())?;
    if (n.norm() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!(
            "spherical harmonics need a unit normal, got length {}",
            n.norm()
        )));
    }
    Ok(sh_eval(n))
}

pub(crate) fn sh_eval(n: &Vector3<f64>) -> [f64; SH_COUNT] {
    let (x, y, z) = (n.x, n.y, n.z);
    [
        C0,
        C1 * y,
        C1 * z,
        C1 * x,
        C2 * x * y,
        C2 * y * z,
        C3 * (3.0 * z * z - 1.0),
        C2 * x * z,
        C4 * (x * x - y * y),
    ]
}

/// Gradient of each basis polynomial with respect to the normal components.
pub(crate) fn sh_gradient(n: &Vector3<f64>) -> [Vector3<f64>; SH_COUNT] {
    let (x, y, z) = (n.x, n.y, n.z);
    [
        Vector3::zeros(),
        Vector3::new(0.0, C1, 0.0),
        Vector3::new(0.0, 0.0, C1),
        Vector3::new(C1, 0.0, 0.0),
        Vector3::new(C2 * y, C2 * x, 0.0),
        Vector3::new(0.0, C2 * z, C2 * y),
        Vector3::new(0.0, 0.0, 6.0 * C3 * z),
        Vector3::new(C2 * z, 0.0, C2 * x),
        Vector3::new(2.0 * C4 * x, -2.0 * C4 * y, 0.0),
    ]
}

/// Diffuse shading `r ⊙ sum_b gamma_b H_b(n)`.
pub fn shade(r: &Vector3<f64>, n: &Vector3<f64>, light: &Illumination) -> Result<Vector3<f64>> {
    let basis = sh_basis(n)?;
    Ok(r.component_mul(&light.irradiance(&basis)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
        loop {
            let v = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let l = v.norm();
            if l > 1e-3 && l <= 1.0 {
                return v / l;
            }
        }
    }

    #[test]
    fn analytic_constants() {
        assert!((C0 - 1.0 / (2.0 * PI.sqrt())).abs() < 1e-15);
        assert!((C1 - (3.0 / (4.0 * PI)).sqrt()).abs() < 1e-15);
        let h = sh_basis(&Vector3::new(0.0, 0.0, 1.0)).unwrap();
        assert!((h[0] - 0.282_094_8).abs() < 1e-7);
        assert!((h[2] - 0.488_602_5).abs() < 1e-7);
        assert_eq!(h[1], 0.0);
        assert_eq!(h[3], 0.0);
    }

    #[test]
    fn rejects_non_unit() {
        assert!(sh_basis(&Vector3::new(0.0, 0.0, 2.0)).is_err());
        assert!(sh_basis(&Vector3::new(f64::NAN, 0.0, 1.0)).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let n = random_unit(&mut rng);
            let g = sh_gradient(&n);
            for k in 0..3 {
                let h = 1e-6;
                let mut np = n;
                np[k] += h;
                let mut nm = n;
                nm[k] -= h;
                let (hp, hm) = (sh_eval(&np), sh_eval(&nm));
                for b in 0..SH_COUNT {
                    let fd = (hp[b] - hm[b]) / (2.0 * h);
                    assert!((fd - g[b][k]).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn constant_irradiance_and_black_albedo() {
        let light = Illumination::ambient([1.5, 2.0, 0.5]);
        let n = Vector3::new(0.6, 0.0, 0.8);
        let r = Vector3::new(0.2, 0.4, 0.6);
        let c = shade(&r, &n, &light).unwrap();
        for ch in 0..3 {
            assert!((c[ch] - r[ch] * light.gamma[(0, ch)] * C0).abs() < 1e-15);
        }
        assert_eq!(shade(&Vector3::zeros(), &n, &light).unwrap(), Vector3::zeros());
    }

    #[test]
    fn shading_matches_explicit_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let gamma = SMatrix::<f64, SH_COUNT, 3>::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let light = Illumination { gamma };
        let n = random_unit(&mut rng);
        let r = Vector3::new(0.3, 0.5, 0.7);
        let c = shade(&r, &n, &light).unwrap();
        let (x, y, z) = (n.x, n.y, n.z);
        let pi = PI;
        let h = [
            0.5 / pi.sqrt(),
            (3.0 / (4.0 * pi)).sqrt() * y,
            (3.0 / (4.0 * pi)).sqrt() * z,
            (3.0 / (4.0 * pi)).sqrt() * x,
            0.5 * (15.0 / pi).sqrt() * x * y,
            0.5 * (15.0 / pi).sqrt() * y * z,
            0.25 * (5.0 / pi).sqrt() * (2.0 * z * z - x * x - y * y),
            0.5 * (15.0 / pi).sqrt() * x * z,
            0.25 * (15.0 / pi).sqrt() * (x * x - y * y),
        ];
        for ch in 0..3 {
            let mut s = 0.0;
            for b in 0..9 {
                s += gamma[(b, ch)] * h[b];
            }
            assert!((c[ch] - r[ch] * s).abs() < 1e-12);
        }
    }
}
