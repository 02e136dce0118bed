use super::expect_map;
use crate::nn::{join, Activation, Init, Module, INIT_STD};
use crate::tensor::{Conv2dSpec, Real, Tensor};
use crate::{Error, Result};

/// One stride-1 SAME convolution with bias and an activation.
pub struct ConvBranch<T: Real> {
    /// `[k, k, C, C]`
    pub kernel: Tensor<T>,
    pub bias: Tensor<T>,
    pub activation: Activation,
}

impl<T: Real> ConvBranch<T> {
    pub fn new(init: &mut Init, channels: usize, kernel_size: usize) -> Result<Self> {
        if kernel_size.is_multiple_of(2) {
            return Err(Error::Config(format!("conv kernel size must be odd, got {kernel_size}")));
        }
        Ok(ConvBranch {
            kernel: init.trunc_normal(&[kernel_size, kernel_size, channels, channels], INIT_STD)?,
            bias: init.constant(&[channels], 0.0)?,
            activation: Activation::Gelu,
        })
    }

    pub fn channels(&self) -> usize {
        self.bias.numel()
    }

    pub fn forward(&self, v: &Tensor<T>) -> Result<Tensor<T>> {
        expect_map("conv_branch", v, self.channels())?;
        let y = v.conv2d(&self.kernel, Conv2dSpec::default())?.add(&self.bias)?;
        self.activation.apply(&y)
    }
}

impl<T: Real> Module<T> for ConvBranch<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        f(&join(prefix, "kernel"), &self.kernel);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&join(prefix, "kernel"), &mut self.kernel);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..shape.iter().product()).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn identity_one_by_one_kernel_is_identity() {
        let mut b: ConvBranch<f64> = ConvBranch::new(&mut Init::new(0), 3, 1).unwrap();
        let eye = [1., 0., 0., 0., 1., 0., 0., 0., 1.];
        b.kernel = Tensor::from_f64(&[1, 1, 3, 3], &eye).unwrap();
        b.activation = Activation::Identity;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = Tensor::from_vec(&[4, 5, 3], random(&[4, 5, 3], &mut rng)).unwrap();
        assert_eq!(b.forward(&v).unwrap().data(), v.data());
    }

    #[test]
    fn zero_kernel_leaves_bias() {
        let mut b: ConvBranch<f64> = ConvBranch::new(&mut Init::new(0), 2, 3).unwrap();
        b.kernel = Tensor::zeros(&[3, 3, 2, 2]);
        b.bias = Tensor::full(&[2], 5.0).unwrap();
        b.activation = Activation::Identity;
        let v = Tensor::full(&[3, 3, 2], 0.7).unwrap();
        let y = b.forward(&v).unwrap();
        assert!(y.data().iter().all(|&x| x == 5.0));
    }

    #[test]
    fn matches_nested_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (h, w, c, k) = (5usize, 5usize, 2usize, 3usize);
        let x = random(&[h, w, c], &mut rng);
        let ker = random(&[k, k, c, c], &mut rng);
        let bias = random(&[c], &mut rng);
        let mut b: ConvBranch<f64> = ConvBranch::new(&mut Init::new(0), c, k).unwrap();
        b.kernel = Tensor::from_vec(&[k, k, c, c], ker.clone()).unwrap();
        b.bias = Tensor::from_vec(&[c], bias.clone()).unwrap();
        b.activation = Activation::Identity;
        let y = b.forward(&Tensor::from_vec(&[h, w, c], x.clone()).unwrap()).unwrap();

        for i in 0..h {
            for j in 0..w {
                for co in 0..c {
                    let mut s = bias[co];
                    for m in 0..k {
                        for n in 0..k {
                            let (ii, jj) = (i as isize + m as isize - 1, j as isize + n as isize - 1);
                            if ii < 0 || jj < 0 || ii >= h as isize || jj >= w as isize {
                                continue;
                            }
                            for ci in 0..c {
                                s += x[(ii as usize * w + jj as usize) * c + ci] * ker[((m * k + n) * c + ci) * c + co];
                            }
                        }
                    }
                    assert!((y.data()[(i * w + j) * c + co] - s).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn channel_mismatch_is_an_error() {
        let b: ConvBranch<f64> = ConvBranch::new(&mut Init::new(0), 4, 3).unwrap();
        assert!(b.forward(&Tensor::zeros(&[2, 2, 3])).is_err());
    }
}
