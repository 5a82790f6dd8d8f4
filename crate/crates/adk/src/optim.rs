//! Optimization: Adam with bias correction, and a reduce-on-plateau
//! learning-rate schedule driven by validation loss.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Adam optimizer state: first/second gradient moments per parameter tensor
/// plus the shared step counter.
#[derive(Debug, Clone)]
pub struct AdamState<T: Scalar> {
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    t: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl<T: Scalar> AdamState<T> {
    /// Fresh state with zero moments, shaped after `params`.
    /// Defaults: beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor<T>>) -> Self {
        let m: Vec<Tensor<T>> = params
            .into_iter()
            .map(|p| Tensor::zeros(p.shape().to_vec()).expect("param shape is valid"))
            .collect();
        AdamState {
            v: m.clone(),
            m,
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// Rebuild state from checkpointed moments and step counter.
    pub fn from_parts(m: Vec<Tensor<T>>, v: Vec<Tensor<T>>, t: u64) -> Result<Self> {
        if m.len() != v.len() {
            return Err(Error::Checkpoint(format!(
                "moment counts differ: {} vs {}",
                m.len(),
                v.len()
            )));
        }
        for (a, b) in m.iter().zip(&v) {
            if a.shape() != b.shape() {
                return Err(Error::Checkpoint(format!(
                    "moment shapes differ: {:?} vs {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
        }
        Ok(AdamState {
            m,
            v,
            t,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Moment tensors in parameter order (first, second).
    pub fn moments(&self) -> (&[Tensor<T>], &[Tensor<T>]) {
        (&self.m, &self.v)
    }

    /// One Adam update in place. `params`, `grads`, and the stored moments
    /// must align index-by-index with matching shapes.
    pub fn step<'a>(
        &mut self,
        params: impl IntoIterator<Item = &'a mut Tensor<T>>,
        grads: &[Tensor<T>],
        lr: f64,
    ) -> Result<()> {
        let params: Vec<&'a mut Tensor<T>> = params.into_iter().collect();
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Usage(format!(
                "optimizer tracks {} tensors, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.t += 1;
        let b1 = T::from_f64(self.beta1);
        let b2 = T::from_f64(self.beta2);
        let one = T::one();
        let eps = T::from_f64(self.eps);
        // Bias corrections depend only on t, so a resumed run recomputes
        // exactly the same values.
        let c1 = T::from_f64(1.0 - self.beta1.powi(self.t as i32));
        let c2 = T::from_f64(1.0 - self.beta2.powi(self.t as i32));
        let step = T::from_f64(lr);
        for ((p, g), (m, v)) in params
            .into_iter()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(Error::ShapeMismatch {
                    op: "adam_step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            for ((pv, &gv), (mv, vv)) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
            {
                *mv = b1 * *mv + (one - b1) * gv;
                *vv = b2 * *vv + (one - b2) * gv * gv;
                let m_hat = *mv / c1;
                let v_hat = *vv / c2;
                *pv = *pv - step * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Reduce-on-plateau learning-rate schedule: when the observed validation
/// loss fails to improve on the best seen for `patience` consecutive
/// observations, the rate is multiplied by `factor` (floored at `min_lr`).
/// The schedule is a pure function of the observation history.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauSchedule {
    lr: f32,
    best: Option<f32>,
    wait: u32,
    patience: u32,
    factor: f32,
    min_lr: f32,
}

impl PlateauSchedule {
    pub fn new(initial_lr: f32, patience: u32, factor: f32, min_lr: f32) -> Self {
        PlateauSchedule {
            lr: initial_lr,
            best: None,
            wait: 0,
            patience,
            factor,
            min_lr,
        }
    }

    /// Rebuild from checkpointed state.
    pub fn from_parts(
        lr: f32,
        best: Option<f32>,
        wait: u32,
        patience: u32,
        factor: f32,
        min_lr: f32,
    ) -> Self {
        PlateauSchedule {
            lr,
            best,
            wait,
            patience,
            factor,
            min_lr,
        }
    }

    pub fn lr(&self) -> f32 {
        self.lr
    }

    pub fn best(&self) -> Option<f32> {
        self.best
    }

    pub fn wait(&self) -> u32 {
        self.wait
    }

    pub fn patience(&self) -> u32 {
        self.patience
    }

    pub fn factor(&self) -> f32 {
        self.factor
    }

    pub fn min_lr(&self) -> f32 {
        self.min_lr
    }

    /// Record one validation loss; returns the rate to use from now on.
    pub fn observe(&mut self, val_loss: f32) -> f32 {
        match self.best {
            Some(best) if val_loss >= best => {
                self.wait += 1;
                if self.wait >= self.patience {
                    self.lr = (self.lr * self.factor).max(self.min_lr);
                    self.wait = 0;
                }
            }
            _ => {
                self.best = Some(val_loss);
                self.wait = 0;
            }
        }
        self.lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Textbook Adam on plain scalars, kept deliberately independent of the
    /// tensor implementation.
    struct ScalarAdam {
        m: f64,
        v: f64,
        t: u32,
    }

    impl ScalarAdam {
        fn step(&mut self, p: f64, g: f64, lr: f64) -> f64 {
            self.t += 1;
            self.m = 0.9 * self.m + 0.1 * g;
            self.v = 0.999 * self.v + 0.001 * g * g;
            let m_hat = self.m / (1.0 - 0.9f64.powi(self.t as i32));
            let v_hat = self.v / (1.0 - 0.999f64.powi(self.t as i32));
            p - lr * m_hat / (v_hat.sqrt() + 1e-8)
        }
    }

    #[test]
    fn adam_matches_scalar_reference_over_ten_steps() {
        let mut params = vec![Tensor::new(vec![2], vec![0.5f64, -1.2]).unwrap()];
        let mut state = AdamState::new(&params);
        let mut refs = [
            (0.5, ScalarAdam { m: 0.0, v: 0.0, t: 0 }),
            (-1.2, ScalarAdam { m: 0.0, v: 0.0, t: 0 }),
        ];
        for step in 0..10 {
            // Varying synthetic gradients exercise both moments.
            let g0 = (step as f64 * 0.7).sin() + 0.3;
            let g1 = (step as f64 * 1.3).cos() - 0.1;
            let grads = vec![Tensor::new(vec![2], vec![g0, g1]).unwrap()];
            state.step(&mut params, &grads, 1e-2).unwrap();
            refs[0].0 = refs[0].1.step(refs[0].0, g0, 1e-2);
            refs[1].0 = refs[1].1.step(refs[1].0, g1, 1e-2);
            assert!((params[0].data()[0] - refs[0].0).abs() < 1e-12);
            assert!((params[0].data()[1] - refs[1].0).abs() < 1e-12);
        }
        assert_eq!(state.step_count(), 10);
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut params = vec![Tensor::scalar(5.0f64)];
        let mut state = AdamState::new(&params);
        for _ in 0..400 {
            let p = params[0].data()[0];
            let grads = vec![Tensor::scalar(2.0 * (p - 3.0))];
            state.step(&mut params, &grads, 0.05).unwrap();
        }
        assert!((params[0].data()[0] - 3.0).abs() < 1e-2);
    }

    #[test]
    fn adam_rejects_mismatched_lengths() {
        let mut params = vec![Tensor::scalar(1.0f32)];
        let mut state = AdamState::new(&params);
        assert!(state.step(&mut params, &[], 1e-3).is_err());
    }

    #[test]
    fn plateau_halves_after_patience_misses() {
        let mut sched = PlateauSchedule::new(1e-2, 3, 0.5, 1e-6);
        assert_eq!(sched.observe(1.0), 1e-2); // first observation sets best
        assert_eq!(sched.observe(0.9), 1e-2); // improvement
        assert_eq!(sched.observe(0.95), 1e-2); // miss 1
        assert_eq!(sched.observe(0.95), 1e-2); // miss 2
        assert_eq!(sched.observe(0.9), 5e-3); // miss 3 (ties don't improve)
        // Counter resets after a reduction.
        assert_eq!(sched.observe(0.95), 5e-3);
        assert_eq!(sched.observe(0.95), 5e-3);
        assert_eq!(sched.observe(0.95), 2.5e-3);
    }

    #[test]
    fn plateau_floors_at_min_lr() {
        let mut sched = PlateauSchedule::new(4e-6, 1, 0.5, 1e-6);
        sched.observe(1.0);
        for _ in 0..10 {
            sched.observe(2.0);
        }
        assert_eq!(sched.lr(), 1e-6);
    }

    #[test]
    fn improvement_resets_wait_counter() {
        let mut sched = PlateauSchedule::new(1e-2, 2, 0.5, 1e-6);
        sched.observe(1.0);
        sched.observe(1.1); // miss 1
        sched.observe(0.8); // improvement resets
        sched.observe(0.9); // miss 1
        assert_eq!(sched.lr(), 1e-2);
        sched.observe(0.9); // miss 2 -> reduce
        assert_eq!(sched.lr(), 5e-3);
    }
}
