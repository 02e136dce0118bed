use super::expect_map;
use crate::nn::{join, Activation, Init, Linear, Module};
use crate::tensor::{Real, Tensor};
use crate::Result;

/// Position-wise two-layer channel MLP, `C -> hidden -> C`.
pub struct MlpBranch<T: Real> {
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
    pub activation: Activation,
}

impl<T: Real> MlpBranch<T> {
    pub fn new(init: &mut Init, channels: usize, hidden: usize) -> Result<Self> {
        Ok(MlpBranch {
            fc1: Linear::new(init, channels, hidden, true)?,
            fc2: Linear::new(init, hidden, channels, true)?,
            activation: Activation::Gelu,
        })
    }

    pub fn forward(&self, v: &Tensor<T>) -> Result<Tensor<T>> {
        let c = self.fc1.d_in();
        let (h, w) = expect_map("mlp_branch", v, c)?;
        let x = v.reshape(&[h * w, c])?;
        let hidden = self.activation.apply(&self.fc1.forward(&x)?)?;
        self.fc2.forward(&hidden)?.reshape(&[h, w, c])
    }
}

impl<T: Real> Module<T> for MlpBranch<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.fc1.visit(&join(prefix, "fc1"), f);
        self.fc2.visit(&join(prefix, "fc2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.fc1.visit_mut(&join(prefix, "fc1"), f);
        self.fc2.visit_mut(&join(prefix, "fc2"), f);
    }
}
