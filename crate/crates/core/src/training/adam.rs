//! Adam optimizer with bias correction, plus global gradient-norm
//! clipping. Optimizer state is kept per parameter tensor, addressed by the
//! tensor's position in the model's canonical traversal order.

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First/second-moment state for a fixed list of parameter tensors.
#[derive(Debug, Clone)]
pub struct Adam {
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    /// State for tensors of the given sizes, in canonical order.
    pub fn new(sizes: &[usize]) -> Self {
        Adam {
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn num_slots(&self) -> usize {
        self.m.len()
    }

    /// Starts one optimization step; call before updating the tensors.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// Applies the update for tensor `slot` in-place. `begin_step` must
    /// have been called at least once.
    pub fn update(&mut self, slot: usize, lr: f64, data: &mut [f64], grad: &[f64]) {
        assert!(self.step > 0, "begin_step must precede update");
        assert_eq!(data.len(), grad.len(), "grad size mismatch in slot {slot}");
        let m = &mut self.m[slot];
        let v = &mut self.v[slot];
        assert_eq!(data.len(), m.len(), "state size mismatch in slot {slot}");
        let bc1 = 1.0 - ADAM_BETA1.powi(self.step as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.step as i32);
        for i in 0..data.len() {
            m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * grad[i];
            v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * grad[i] * grad[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            data[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
}

/// Scales `grads` so their joint Euclidean norm is at most `max_norm`;
/// returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let sq: f64 = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|&x| x * x)
        .sum();
    let norm = sq.sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            for x in g.iter_mut() {
                *x *= s;
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        // With constant gradient g, bias correction makes the first update
        // exactly lr * g / (|g| + eps) ~= lr * sign(g).
        let mut adam = Adam::new(&[3]);
        let mut p = vec![1.0, -2.0, 0.5];
        let g = vec![10.0, -0.3, 4.0];
        adam.begin_step();
        adam.update(0, 0.001, &mut p, &g);
        for (i, (&before, &gi)) in [1.0, -2.0, 0.5].iter().zip(&g).enumerate() {
            let expect = before - 0.001 * gi.signum();
            assert!(
                (p[i] - expect).abs() < 1e-6,
                "param {i}: {} vs {expect}",
                p[i]
            );
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut adam = Adam::new(&[4]);
        let mut p = vec![0.3, -0.7, 2.0, 0.0];
        let orig = p.clone();
        for _ in 0..5 {
            adam.begin_step();
            adam.update(0, 0.01, &mut p, &[0.0; 4]);
        }
        assert_eq!(p, orig);
    }

    #[test]
    fn converges_on_a_quadratic() {
        let mut adam = Adam::new(&[2]);
        let mut p = vec![3.0, -4.0];
        for _ in 0..2000 {
            let g: Vec<f64> = p.iter().map(|&x| 2.0 * x).collect();
            adam.begin_step();
            adam.update(0, 0.05, &mut p, &g);
        }
        assert!(p[0].abs() < 1e-3 && p[1].abs() < 1e-3, "{p:?}");
    }

    #[test]
    fn clipping_rescales_only_when_too_large() {
        let mut grads = vec![vec![3.0, 0.0], vec![4.0]];
        let norm = clip_global_norm(&mut grads, 5.0);
        assert!((norm - 5.0).abs() < 1e-12);
        assert_eq!(grads, vec![vec![3.0, 0.0], vec![4.0]]);

        let mut grads = vec![vec![6.0, 0.0], vec![8.0]];
        let norm = clip_global_norm(&mut grads, 5.0);
        assert!((norm - 10.0).abs() < 1e-12);
        let clipped: f64 = grads.iter().flatten().map(|&x| x * x).sum::<f64>().sqrt();
        assert!((clipped - 5.0).abs() < 1e-9, "clipped norm {clipped}");
    }
}
