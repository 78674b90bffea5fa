//! Parameterized building blocks shared by the pyramid and the heads.

use rand_chacha::ChaCha8Rng;
use tridet_autograd::{Tensor, Var};

use crate::error::Result;
use crate::params::{kaiming_uniform, Bound, ParamId, ParamStore};

/// Pointwise affine map `x·W + b` applied to every instant.
#[derive(Debug, Clone)]
pub struct Affine {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Affine {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        input: usize,
        output: usize,
    ) -> Self {
        Self {
            weight: store.add(
                format!("{name}.weight"),
                kaiming_uniform(rng, &[input, output], input),
            ),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(vec![output])),
            input,
            output,
        }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        Ok(x.matmul(p.get(self.weight))?.add_row(p.get(self.bias))?)
    }
}

/// Depth-wise temporal convolution with bias.
#[derive(Debug, Clone)]
pub struct DepthwiseConv {
    pub kernel: ParamId,
    pub bias: ParamId,
    pub window: usize,
}

impl DepthwiseConv {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        dim: usize,
        window: usize,
    ) -> Self {
        Self {
            kernel: store.add(
                format!("{name}.kernel"),
                kaiming_uniform(rng, &[window, dim], window),
            ),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(vec![dim])),
            window,
        }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        Ok(x.dwconv1d(p.get(self.kernel))?.add_row(p.get(self.bias))?)
    }
}

/// Dense temporal convolution with bias.
#[derive(Debug, Clone)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Conv {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        input: usize,
        output: usize,
        kernel: usize,
    ) -> Self {
        Self {
            weight: store.add(
                format!("{name}.weight"),
                kaiming_uniform(rng, &[kernel, input, output], kernel * input),
            ),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(vec![output])),
        }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        Ok(x.conv1d(p.get(self.weight))?.add_row(p.get(self.bias))?)
    }
}

/// Per-channel scale and shift following a normalization.
#[derive(Debug, Clone)]
pub struct ChannelAffine {
    pub scale: ParamId,
    pub shift: ParamId,
}

impl ChannelAffine {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self {
            scale: store.add(format!("{name}.scale"), Tensor::full(vec![dim], 1.0)),
            shift: store.add(format!("{name}.shift"), Tensor::zeros(vec![dim])),
        }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        Ok(x.mul_row(p.get(self.scale))?.add_row(p.get(self.shift))?)
    }
}
