//! Central finite differences, the reference for the analytic gradient.

use crate::model::{AffineLayer, LayerGrad};

use super::ParamVector;

/// Per-coordinate step `max(relative * |x|, absolute)`; `fourth_order`
/// selects the five-point central stencil instead of the three-point one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdStep {
    pub relative: f64,
    pub absolute: f64,
    pub fourth_order: bool,
}

impl Default for FdStep {
    fn default() -> Self {
        FdStep {
            relative: 1e-5,
            absolute: 1e-7,
            fourth_order: false,
        }
    }
}

impl FdStep {
    pub fn at(&self, x: f64) -> f64 {
        (self.relative * x.abs()).max(self.absolute)
    }

    /// Function evaluations spent per coordinate, in coordinate order.
    pub fn evaluations_per_coordinate(&self) -> usize {
        if self.fourth_order {
            4
        } else {
            2
        }
    }
}

impl FdStep {
    /// Central difference of `f` along one coordinate; `set` writes the
    /// probe value of that coordinate before each evaluation.
    pub(crate) fn derivative(&self, x0: f64, mut set: impl FnMut(f64), mut f: impl FnMut() -> f64) -> f64 {
        let h = self.at(x0);
        let mut at = |dx: f64| {
            set(x0 + dx);
            f()
        };
        let d = if self.fourth_order {
            let (p1, m1, p2, m2) = (at(h), at(-h), at(2.0 * h), at(-2.0 * h));
            (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h)
        } else {
            (at(h) - at(-h)) / (2.0 * h)
        };
        set(x0);
        d
    }
}

fn central(x: &mut [f64], i: usize, step: FdStep, f: &mut impl FnMut(&[f64]) -> f64) -> f64 {
    let x0 = x[i];
    let cell = std::cell::RefCell::new(x);
    step.derivative(x0, |v| cell.borrow_mut()[i] = v, || f(&cell.borrow()))
}

/// Central-difference gradient of `f` at `params`, laid out like the input.
pub fn finite_diff(f: impl Fn(&ParamVector) -> f64, params: &ParamVector, step: FdStep) -> ParamVector {
    let mut flat = params.to_flat();
    let mut probe = params.clone();
    let mut eval = |x: &[f64]| {
        probe.set_flat(x).expect("same layout");
        f(&probe)
    };
    let grad: Vec<f64> = (0..flat.len())
        .map(|i| central(&mut flat, i, step, &mut eval))
        .collect();
    let mut out = params.clone();
    out.set_flat(&grad).expect("same layout");
    out
}

fn slot(layers: &mut [AffineLayer], l: usize, bias: bool, i: usize) -> &mut f64 {
    if bias {
        &mut layers[l].bias.as_mut_slice()[i]
    } else {
        &mut layers[l].weights.as_mut_slice()[i]
    }
}

/// Central-difference gradient with respect to every entry of `layers`.
/// `f` sees the perturbed layers in place; they are restored on return.
pub fn finite_diff_layers(
    layers: &mut [AffineLayer],
    step: FdStep,
    mut f: impl FnMut(&[AffineLayer]) -> f64,
) -> Vec<LayerGrad> {
    let mut grads: Vec<LayerGrad> = layers
        .iter()
        .map(|l| AffineLayer::zeros(l.weights.nrows(), l.weights.ncols()))
        .collect();
    for l in 0..layers.len() {
        for bias in [false, true] {
            let len = if bias { layers[l].bias.len() } else { layers[l].weights.len() };
            for i in 0..len {
                let x0 = *slot(layers, l, bias, i);
                let cell = std::cell::RefCell::new(&mut *layers);
                let d = step.derivative(
                    x0,
                    |v| *slot(&mut cell.borrow_mut(), l, bias, i) = v,
                    || f(&cell.borrow()),
                );
                *slot(&mut grads, l, bias, i) = d;
            }
        }
    }
    grads
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn quadratic_is_exact_up_to_rounding() {
        let layers = vec![AffineLayer {
            weights: DMatrix::from_row_slice(2, 2, &[1.0, -2.0, 0.5, 3.0]),
            bias: DVector::from_vec(vec![0.25, -1.0]),
        }];
        let mut probe = layers.clone();
        let g = finite_diff_layers(&mut probe, FdStep::default(), |ls| {
            ls[0].weights.iter().chain(ls[0].bias.iter()).map(|v| v * v).sum()
        });
        assert_eq!(probe, layers);
        for (a, b) in g[0].weights.iter().zip(layers[0].weights.iter()) {
            assert!((a - 2.0 * b).abs() < 1e-8);
        }
        for (a, b) in g[0].bias.iter().zip(layers[0].bias.iter()) {
            assert!((a - 2.0 * b).abs() < 1e-8);
        }
    }

    #[test]
    fn fourth_order_stencil_is_exact_on_quartics() {
        let mut layers = vec![AffineLayer {
            weights: DMatrix::from_element(1, 1, 0.7),
            bias: DVector::from_element(1, 0.0),
        }];
        let step = FdStep {
            relative: 1e-2,
            absolute: 1e-2,
            fourth_order: true,
        };
        let g = finite_diff_layers(&mut layers, step, |ls| ls[0].weights[(0, 0)].powi(4));
        assert!((g[0].weights[(0, 0)] - 4.0 * 0.7f64.powi(3)).abs() < 1e-10);
    }

    #[test]
    fn linear_function_is_exact() {
        let mut layers = vec![AffineLayer {
            weights: DMatrix::from_element(1, 3, 2.0),
            bias: DVector::from_element(1, 7.0),
        }];
        let g = finite_diff_layers(&mut layers, FdStep::default(), |ls| {
            3.0 * ls[0].weights[(0, 1)] - 0.5 * ls[0].bias[0]
        });
        assert!((g[0].weights[(0, 1)] - 3.0).abs() < 1e-9);
        assert_eq!(g[0].weights[(0, 0)], 0.0);
        assert!((g[0].bias[0] + 0.5).abs() < 1e-9);
    }
}
