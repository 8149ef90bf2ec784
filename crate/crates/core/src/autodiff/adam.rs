use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const DEFAULT_BETAS: (f64, f64) = (0.9, 0.999);
pub const DEFAULT_EPS: f64 = 1e-8;

/// Adam with bias correction. Moments are index-aligned with the parameter
/// list passed to [`AdamState::new`].
#[derive(Clone, Debug)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new<'a>(shapes: impl IntoIterator<Item = &'a [usize]>) -> Self {
        let (m, v): (Vec<_>, Vec<_>) = shapes
            .into_iter()
            .map(|s| (Tensor::zeros(s), Tensor::zeros(s)))
            .unzip();
        AdamState {
            beta1: DEFAULT_BETAS.0,
            beta2: DEFAULT_BETAS.1,
            eps: DEFAULT_EPS,
            step: 0,
            m,
            v,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, i: usize) -> &Tensor {
        &self.m[i]
    }

    pub fn second_moment(&self, i: usize) -> &Tensor {
        &self.v[i]
    }

    /// One update of every parameter in place.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[&Tensor], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::invalid(format!(
                "adam: {} params, {} grads, state for {}",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != self.m[i].shape() || g.shape() != self.m[i].shape() {
                return Err(Error::invalid(format!(
                    "adam: parameter {i} shape {:?}, gradient {:?}, state {:?}",
                    p.shape(),
                    g.shape(),
                    self.m[i].shape()
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (((pj, &gj), mj), vj) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mj = b1 * *mj + (1.0 - b1) * gj;
                *vj = b2 * *vj + (1.0 - b2) * gj * gj;
                let mhat = *mj / c1;
                let vhat = *vj / c2;
                *pj -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_and_decays_moments() {
        let mut p = Tensor::row(vec![1.0, -2.0]);
        let mut st = AdamState::new([p.shape()]);
        st.step(&mut [&mut p], &[&Tensor::row(vec![1.0, 1.0])], 0.1)
            .unwrap();
        let before = p.clone();
        let m0 = st.first_moment(0).clone();
        st.step(&mut [&mut p], &[&Tensor::row(vec![0.0, 0.0])], 0.1)
            .unwrap();
        // The bias-corrected first moment is still non-zero, so the
        // parameter keeps moving; only a fresh state stays put.
        assert!(st.first_moment(0).data()[0].abs() < m0.data()[0].abs());

        let mut q = before.clone();
        let mut fresh = AdamState::new([q.shape()]);
        fresh
            .step(&mut [&mut q], &[&Tensor::row(vec![0.0, 0.0])], 0.1)
            .unwrap();
        assert_eq!(q, before);
        assert_eq!(fresh.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient() {
        // m̂ = g, v̂ = g², so the update is lr·g/(|g|+eps).
        for g in [0.3, 5.0, 1e-3] {
            let mut p = Tensor::row(vec![1.0]);
            let mut st = AdamState::new([p.shape()]);
            st.step(&mut [&mut p], &[&Tensor::row(vec![g])], 0.1).unwrap();
            let expected = 1.0 - 0.1 * g / (g + 1e-8);
            assert!((p.data()[0] - expected).abs() < 1e-15);
            assert!((p.data()[0] - 0.9).abs() < 1e-5);
        }
    }

    #[test]
    fn shape_mismatch_is_error() {
        let mut p = Tensor::row(vec![1.0, 2.0]);
        let mut st = AdamState::new([p.shape()]);
        assert!(st.step(&mut [&mut p], &[&Tensor::row(vec![1.0])], 0.1).is_err());
    }
}
