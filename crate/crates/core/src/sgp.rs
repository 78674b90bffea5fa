//! Scalable-granularity perception layer.
//!
//! The SGP block replaces self-attention with two purely convolutional
//! branches: an instant-level branch that gates each instant's projection by
//! a video-level context vector, and a window-level branch that mixes a
//! short and a `k`-times wider depth-wise convolution, gated by a third
//! depth-wise convolution.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tridet_autograd::Var;

use crate::error::{Error, Result};
use crate::layers::{Affine, ChannelAffine, DepthwiseConv};
use crate::params::{Bound, ParamStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SgpConfig {
    pub dim: usize,
    /// Window `w` of the short depth-wise convolutions (odd).
    pub window: usize,
    /// Scale `k` of the wide convolution, whose window is `round_odd(k·w)`.
    pub scale_factor: f64,
    /// Group count of the group normalization before the FFN.
    pub groups: usize,
    /// FFN hidden width as a multiple of `dim`.
    pub ffn_mult: usize,
}

impl Default for SgpConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            window: 3,
            scale_factor: 1.5,
            groups: 8,
            ffn_mult: 4,
        }
    }
}

/// Rounds to the nearest integer, bumps even results up by one, floors at 1.
pub fn round_odd(x: f64) -> usize {
    let m = x.round().max(0.0) as usize;
    let m = if m % 2 == 0 { m + 1 } else { m };
    m.max(1)
}

impl SgpConfig {
    pub fn wide_window(&self) -> usize {
        round_odd(self.scale_factor * self.window as f64)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::config("sgp.dim must be positive"));
        }
        if self.window % 2 == 0 {
            return Err(Error::config(format!(
                "sgp.window must be odd, got {}",
                self.window
            )));
        }
        if !(self.scale_factor.is_finite() && self.scale_factor > 0.0) {
            return Err(Error::config(format!(
                "sgp.scale_factor must be positive, got {}",
                self.scale_factor
            )));
        }
        if self.groups == 0 || self.dim % self.groups != 0 {
            return Err(Error::config(format!(
                "sgp.groups = {} does not divide sgp.dim = {}",
                self.groups, self.dim
            )));
        }
        if self.ffn_mult == 0 {
            return Err(Error::config("sgp.ffn_mult must be positive"));
        }
        Ok(())
    }
}

/// One SGP layer in transformer macro-architecture:
/// `x₁ = x + SGP(LN(x))`, `out = x₁ + FFN(GN(x₁))`.
#[derive(Debug, Clone)]
pub struct SgpLayer {
    pub cfg: SgpConfig,
    ln: ChannelAffine,
    fc: Affine,
    global_fc: Affine,
    psi: DepthwiseConv,
    conv_w: DepthwiseConv,
    conv_kw: DepthwiseConv,
    gn: ChannelAffine,
    ffn_in: Affine,
    ffn_out: Affine,
}

impl SgpLayer {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        cfg: &SgpConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.dim;
        let hidden = cfg.ffn_mult * d;
        Ok(Self {
            ln: ChannelAffine::new(store, &format!("{name}.ln"), d),
            fc: Affine::new(store, rng, &format!("{name}.fc"), d, d),
            global_fc: Affine::new(store, rng, &format!("{name}.global_fc"), d, d),
            psi: DepthwiseConv::new(store, rng, &format!("{name}.psi"), d, cfg.window),
            conv_w: DepthwiseConv::new(store, rng, &format!("{name}.conv_w"), d, cfg.window),
            conv_kw: DepthwiseConv::new(
                store,
                rng,
                &format!("{name}.conv_kw"),
                d,
                cfg.wide_window(),
            ),
            gn: ChannelAffine::new(store, &format!("{name}.gn"), d),
            ffn_in: Affine::new(store, rng, &format!("{name}.ffn_in"), d, hidden),
            ffn_out: Affine::new(store, rng, &format!("{name}.ffn_out"), hidden, d),
            cfg: cfg.clone(),
        })
    }

    /// Window of the wide depth-wise convolution actually instantiated.
    pub fn wide_window(&self) -> usize {
        self.conv_kw.window
    }

    fn check_dim(&self, x: Var<'_>) -> Result<usize> {
        let shape = x.shape();
        if shape.len() != 2 || shape[1] != self.cfg.dim {
            return Err(Error::config(format!(
                "SGP layer expects T×{} input, got {shape:?}",
                self.cfg.dim
            )));
        }
        Ok(shape[0])
    }

    /// `φ(X)⊙FC(X) + ψ(X)⊙(Conv_w(X) + Conv_kw(X)) + X`
    /// with `φ(X) = ReLU(FC(AvgPool(X)))` broadcast over time and `ψ = Conv_w`.
    pub fn sgp_forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let t = self.check_dim(x)?;
        let phi = self
            .global_fc
            .forward(p, x.avgpool_all()?)?
            .relu()
            .broadcast_rows(t)?;
        let instant = phi.mul(self.fc.forward(p, x)?)?;
        let psi = self.psi.forward(p, x)?;
        let window = self
            .conv_w
            .forward(p, x)?
            .add(self.conv_kw.forward(p, x)?)?;
        Ok(instant.add(psi.mul(window)?)?.add(x)?)
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        self.check_dim(x)?;
        let normed = self.ln.forward(p, x.layernorm()?)?;
        let x1 = x.add(self.sgp_forward(p, normed)?)?;
        let g = self.gn.forward(p, x1.groupnorm(self.cfg.groups)?)?;
        let ffn = self.ffn_out.forward(p, self.ffn_in.forward(p, g)?.relu())?;
        Ok(x1.add(ffn)?)
    }
}
