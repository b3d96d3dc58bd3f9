use super::AutodiffError;

/// Adam with bias correction over a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn n_params(&self) -> usize {
        self.m.len()
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    /// Applies one update in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<(), AutodiffError> {
        if params.len() != self.m.len() {
            return Err(AutodiffError::SizeMismatch {
                what: "adam params",
                expected: self.m.len(),
                got: params.len(),
            });
        }
        if grads.len() != self.m.len() {
            return Err(AutodiffError::SizeMismatch {
                what: "adam grads",
                expected: self.m.len(),
                got: grads.len(),
            });
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut a = AdamState::new(1, 1e-3);
        let mut p = [0.0];
        a.step(&mut p, &[1.0]).unwrap();
        assert!((p[0] + 1e-3).abs() < 1e-9);
        assert_eq!(a.step_count(), 1);
        let mut b = AdamState::new(1, 1e-3);
        let mut q = [0.0];
        b.step(&mut q, &[250.0]).unwrap();
        assert!((q[0] + 1e-3).abs() < 1e-9);
    }

    #[test]
    fn zero_grad_leaves_params() {
        let mut a = AdamState::new(2, 1e-3);
        let mut p = [0.5, -0.25];
        a.step(&mut p, &[1.0, 1.0]).unwrap();
        let before = p;
        let m_before = a.first_moment().to_vec();
        a.step(&mut p, &[0.0, 0.0]).unwrap();
        // moments decay but the bias-corrected first moment is still nonzero,
        // so a fresh state is the clean check
        assert!(a.first_moment()[0].abs() < m_before[0].abs());
        let mut fresh = AdamState::new(2, 1e-3);
        let mut p2 = before;
        fresh.step(&mut p2, &[0.0, 0.0]).unwrap();
        assert_eq!(p2, before);
    }

    #[test]
    fn minimizes_a_parabola() {
        let mut a = AdamState::new(1, 0.1);
        let mut x = [1.0];
        for _ in 0..100 {
            let g = [2.0 * x[0]];
            a.step(&mut x, &g).unwrap();
        }
        // independent scalar reference
        let (mut xr, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for t in 1..=100 {
            let g = 2.0 * xr;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            xr -= 0.1 * mh / (vh.sqrt() + 1e-8);
        }
        assert!(x[0].abs() < 0.05, "x = {}", x[0]);
        assert!((x[0] - xr).abs() < 1e-12);
    }

    #[test]
    fn size_mismatch_is_an_error() {
        let mut a = AdamState::new(2, 1e-3);
        let mut p = [0.0; 3];
        assert!(matches!(
            a.step(&mut p, &[0.0; 3]),
            Err(AutodiffError::SizeMismatch { .. })
        ));
        let mut p = [0.0; 2];
        assert!(a.step(&mut p, &[0.0]).is_err());
        assert_eq!(a.step_count(), 0);
    }
}
