use super::expect_map;
use crate::nn::{join, Init, Linear, Module, INIT_STD};
use crate::tensor::{Real, Tensor};
use crate::{Error, Result};

/// Full (non-windowed) multi-head self-attention over all `H * W` tokens.
///
/// The query/key/value maps hold every head side by side: columns
/// `h*d .. (h+1)*d` of `w_q` are the query projection of head `h`.
pub struct MsaBranch<T: Real> {
    pub heads: usize,
    pub w_q: Tensor<T>,
    pub w_k: Tensor<T>,
    pub w_v: Tensor<T>,
    pub out: Linear<T>,
}

impl<T: Real> MsaBranch<T> {
    pub fn new(init: &mut Init, channels: usize, heads: usize) -> Result<Self> {
        if heads == 0 || !channels.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "{heads} attention heads do not divide {channels} channels"
            )));
        }
        Ok(MsaBranch {
            heads,
            w_q: init.trunc_normal(&[channels, channels], INIT_STD)?,
            w_k: init.trunc_normal(&[channels, channels], INIT_STD)?,
            w_v: init.trunc_normal(&[channels, channels], INIT_STD)?,
            out: Linear::new(init, channels, channels, true)?,
        })
    }

    pub fn channels(&self) -> usize {
        self.w_q.shape()[0]
    }

    pub fn head_dim(&self) -> usize {
        self.channels() / self.heads
    }

    pub fn forward(&self, v: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_with_attention(v)?.0)
    }

    /// Output plus the `[N, N]` attention matrix of every head.
    pub fn forward_with_attention(&self, v: &Tensor<T>) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
        let c = self.channels();
        let (h, w) = expect_map("msa_branch", v, c)?;
        let x = v.reshape(&[h * w, c])?;
        let q = x.matmul(&self.w_q)?;
        let k = x.matmul(&self.w_k)?;
        let val = x.matmul(&self.w_v)?;
        let d = self.head_dim();
        let scale = 1.0 / (d as f64).sqrt();
        let mut outputs = Vec::with_capacity(self.heads);
        let mut maps = Vec::with_capacity(self.heads);
        for head in 0..self.heads {
            let qh = q.slice(1, head * d, d)?;
            let kh = k.slice(1, head * d, d)?;
            let vh = val.slice(1, head * d, d)?;
            let attn = qh.matmul(&kh.transpose()?)?.scale(scale)?.softmax(1)?;
            outputs.push(attn.matmul(&vh)?);
            maps.push(attn);
        }
        let merged = if outputs.len() == 1 {
            outputs.pop().expect("one head")
        } else {
            Tensor::concat(&outputs, 1)?
        };
        let y = self.out.forward(&merged)?.reshape(&[h, w, c])?;
        Ok((y, maps))
    }
}

impl<T: Real> Module<T> for MsaBranch<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        f(&join(prefix, "w_q"), &self.w_q);
        f(&join(prefix, "w_k"), &self.w_k);
        f(&join(prefix, "w_v"), &self.w_v);
        self.out.visit(&join(prefix, "out"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&join(prefix, "w_q"), &mut self.w_q);
        f(&join(prefix, "w_k"), &mut self.w_k);
        f(&join(prefix, "w_v"), &mut self.w_v);
        self.out.visit_mut(&join(prefix, "out"), f);
    }
}
