use crate::nn::Module;
use crate::tensor::{Real, Tensor};
use crate::{Error, Result};

/// Adam with bias correction.
pub struct Adam<T: Real> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Completed steps.
    pub t: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

pub const DEFAULT_LR: f64 = 5e-5;

impl<T: Real> Adam<T> {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn first_moments(&self) -> &[Vec<T>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Vec<T>] {
        &self.v
    }

    /// Applies one update to `params` from the given gradients (`None` is a
    /// zero gradient). Nothing changes if any gradient is non-finite.
    pub fn step_tensors(&mut self, params: &mut [&mut Tensor<T>], grads: &[Option<Vec<T>>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Invalid(format!("{} params but {} gradients", params.len(), grads.len())));
        }
        for (p, g) in params.iter().zip(grads) {
            if let Some(g) = g {
                if g.len() != p.numel() {
                    return Err(Error::shape("adam", format!("gradient of length {} for {:?}", g.len(), p.shape())));
                }
                if g.iter().any(|x| !x.is_finite()) {
                    return Err(Error::NonFinite { op: "adam" });
                }
            }
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![T::zero(); p.numel()]).collect();
            self.v = self.m.clone();
        } else if self.m.len() != params.len() || self.m.iter().zip(params.iter()).any(|(m, p)| m.len() != p.numel()) {
            return Err(Error::Invalid("parameter set changed between optimizer steps".into()));
        }
        self.t += 1;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let c1 = T::one() - T::of(self.beta1.powi(self.t as i32));
        let c2 = T::one() - T::of(self.beta2.powi(self.t as i32));
        let (lr, eps) = (T::of(self.lr), T::of(self.eps));
        for (i, p) in params.iter_mut().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let mut data = p.to_vec();
            for j in 0..data.len() {
                let g = grads[i].as_ref().map_or(T::zero(), |g| g[j]);
                m[j] = b1 * m[j] + (T::one() - b1) * g;
                v[j] = b2 * v[j] + (T::one() - b2) * g * g;
                let mhat = m[j] / c1;
                let vhat = v[j] / c2;
                data[j] -= lr * mhat / (vhat.sqrt() + eps);
            }
            **p = Tensor::param(p.shape(), data)?;
        }
        Ok(())
    }

    /// Updates every parameter of `module` from its accumulated gradients.
    pub fn step(&mut self, module: &mut impl Module<T>) -> Result<()> {
        let grads: Vec<Option<Vec<T>>> = module.named_params().iter().map(|(_, t)| t.grad()).collect();
        let mut params: Vec<Tensor<T>> = module.named_params().into_iter().map(|(_, t)| t).collect();
        let mut refs: Vec<&mut Tensor<T>> = params.iter_mut().collect();
        self.step_tensors(&mut refs, &grads)?;
        let mut it = params.into_iter();
        module.visit_mut("", &mut |_, t| {
            if let Some(p) = it.next() {
                *t = p;
            }
        });
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_sign() {
        let mut p = Tensor::<f64>::param(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        let mut adam = Adam::new(0.01);
        adam.step_tensors(&mut [&mut p], &[Some(vec![3.0, -0.2, 1e-3])]).unwrap();
        let d: Vec<f64> = p.data().iter().zip([1.0, -2.0, 0.5]).map(|(a, b)| a - b).collect();
        assert!((d[0] + 0.01).abs() < 1e-8);
        assert!((d[1] - 0.01).abs() < 1e-7);
        assert!((d[2] + 0.01).abs() < 1e-7);
    }

    #[test]
    fn zero_gradient_leaves_params_and_advances_t() {
        let mut p = Tensor::<f64>::param(&[2], vec![1.0, 2.0]).unwrap();
        let mut adam = Adam::new(0.1);
        adam.step_tensors(&mut [&mut p], &[None]).unwrap();
        adam.step_tensors(&mut [&mut p], &[Some(vec![0.0, 0.0])]).unwrap();
        assert_eq!(p.data(), &[1.0, 2.0]);
        assert_eq!(adam.t, 2);
    }

    #[test]
    fn non_finite_gradient_aborts_without_change() {
        let mut p = Tensor::<f64>::param(&[2], vec![1.0, 2.0]).unwrap();
        let mut adam = Adam::new(0.1);
        let err = adam.step_tensors(&mut [&mut p], &[Some(vec![f64::NAN, 0.0])]);
        assert!(matches!(err, Err(Error::NonFinite { .. })));
        assert_eq!(adam.t, 0);
        assert_eq!(p.data(), &[1.0, 2.0]);
    }

    #[test]
    fn zero_lr_is_bitwise_identity() {
        let vals = vec![0.123_456_79_f32, -7.5e-3, 3.0];
        let mut p = Tensor::param(&[3], vals.clone()).unwrap();
        let mut adam = Adam::new(0.0);
        for _ in 0..5 {
            adam.step_tensors(&mut [&mut p], &[Some(vec![0.3, -1.0, 2.0])]).unwrap();
        }
        assert_eq!(p.data(), vals.as_slice());
    }
}
