/// AdaDelta with a per-coordinate learning-rate scale. A coordinate with
/// rate 0 is frozen: neither it nor its accumulators change.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaDelta {
    pub rho: f64,
    pub eps: f64,
    sq_grad: Vec<f64>,
    sq_step: Vec<f64>,
}

impl AdaDelta {
    pub fn new(dim: usize, rho: f64, eps: f64) -> Self {
        AdaDelta {
            rho,
            eps,
            sq_grad: vec![0.0; dim],
            sq_step: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.sq_grad.len()
    }

    /// `x -= rate * sqrt(E[dx^2] + eps) / sqrt(E[g^2] + eps) * g`, with the
    /// running averages updated around the unscaled step.
    pub fn step(&mut self, x: &mut [f64], grad: &[f64], rates: &[f64]) {
        assert_eq!(x.len(), self.dim());
        assert_eq!(grad.len(), self.dim());
        assert_eq!(rates.len(), self.dim());
        let (rho, eps) = (self.rho, self.eps);
        for i in 0..x.len() {
            if rates[i] == 0.0 {
                continue;
            }
            let g = grad[i];
            self.sq_grad[i] = rho * self.sq_grad[i] + (1.0 - rho) * g * g;
            let dx = (self.sq_step[i] + eps).sqrt() / (self.sq_grad[i] + eps).sqrt() * g;
            self.sq_step[i] = rho * self.sq_step[i] + (1.0 - rho) * dx * dx;
            x[i] -= rates[i] * dx;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_changes_nothing() {
        let mut opt = AdaDelta::new(2, 0.95, 1e-6);
        let mut x = [1.5, -2.0];
        for _ in 0..10 {
            opt.step(&mut x, &[0.0, 0.0], &[1.0, 1.0]);
        }
        assert_eq!(x, [1.5, -2.0]);
    }

    #[test]
    fn first_step_by_hand() {
        let (rho, eps, g) = (0.95_f64, 1e-6_f64, 2.0_f64);
        let mut opt = AdaDelta::new(1, rho, eps);
        let mut x = [1.0];
        opt.step(&mut x, &[g], &[0.5]);
        let eg = (1.0 - rho) * g * g;
        let dx = eps.sqrt() / (eg + eps).sqrt() * g;
        assert_eq!(x[0], 1.0 - 0.5 * dx);
        // second step uses the updated step accumulator
        let ex = (1.0 - rho) * dx * dx;
        let eg2 = rho * eg + (1.0 - rho) * g * g;
        let dx2 = (ex + eps).sqrt() / (eg2 + eps).sqrt() * g;
        let before = x[0];
        opt.step(&mut x, &[g], &[0.5]);
        assert_eq!(x[0], before - 0.5 * dx2);
    }

    #[test]
    fn constant_gradient_moves_monotonically_downhill() {
        let mut opt = AdaDelta::new(3, 0.95, 1e-6);
        let mut x = [0.0; 3];
        let mut prev = x;
        for _ in 0..200 {
            opt.step(&mut x, &[1.0, -3.0, 0.5], &[1.0, 1.0, 0.0]);
            assert!(x[0] < prev[0] && x[1] > prev[1] && x[2] == 0.0);
            prev = x;
        }
    }
}
