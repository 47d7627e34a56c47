//! Dense-layer parameter block shared by every trainable module.

use crate::error::Result;
use crate::tensor::{glorot_uniform, kernels, Graph, NodeId, Tensor};
use rand_chacha::ChaCha8Rng;

/// Weights [out, in] and bias [out] of one fully-connected layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub w: Tensor<f32>,
    pub b: Tensor<f32>,
}

impl DenseLayer {
    /// Glorot-uniform weights, zero bias.
    pub fn init(n_out: usize, n_in: usize, rng: &mut ChaCha8Rng) -> Self {
        DenseLayer {
            w: glorot_uniform(vec![n_out, n_in], n_in, n_out, rng),
            b: Tensor::zeros(vec![n_out]),
        }
    }

    pub fn zeros(n_out: usize, n_in: usize) -> Self {
        DenseLayer {
            w: Tensor::zeros(vec![n_out, n_in]),
            b: Tensor::zeros(vec![n_out]),
        }
    }

    pub fn n_in(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn n_out(&self) -> usize {
        self.w.shape()[0]
    }

    /// Tape-free forward for inference paths.
    pub fn forward_into(&self, x: &[f32], batch: usize, out: &mut [f32]) {
        kernels::dense_forward(
            x,
            self.w.data(),
            Some(self.b.data()),
            batch,
            self.n_in(),
            self.n_out(),
            out,
        );
    }

    pub fn forward(&self, x: &[f32], batch: usize) -> Vec<f32> {
        let mut out = vec![0.0; batch * self.n_out()];
        self.forward_into(x, batch, &mut out);
        out
    }

    /// Insert this layer into a tape; returns (output, weight leaf, bias leaf)
    /// so gradients can be pulled out after backward.
    pub fn graph(
        &self,
        g: &mut Graph<f32>,
        x: NodeId,
        trainable: bool,
    ) -> Result<(NodeId, NodeId, NodeId)> {
        let w = g.leaf(self.w.clone(), trainable);
        let b = g.leaf(self.b.clone(), trainable);
        let y = g.dense(x, w, b)?;
        Ok((y, w, b))
    }
}

/// Derive an independent seed for stream `stream` of a base seed
/// (splitmix64 finalizer).
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline]
pub fn relu_inplace(x: &mut [f32]) {
    for v in x.iter_mut() {
        *v = v.max(0.0);
    }
}

#[inline]
pub fn sigmoid_inplace(x: &mut [f32]) {
    for v in x.iter_mut() {
        *v = 1.0 / (1.0 + (-*v).exp());
    }
}
