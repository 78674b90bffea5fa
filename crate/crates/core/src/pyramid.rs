//! Multi-level SGP feature pyramid and two-stream fusion.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tridet_autograd::{Tape, Tensor, Var};

use crate::error::{Error, Result};
use crate::layers::Affine;
use crate::params::{Bound, ParamStore};
use crate::sequence::{FeatureSequence, Level};
use crate::sgp::{SgpConfig, SgpLayer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PyramidConfig {
    pub num_levels: usize,
    /// Width of the raw input features before embedding.
    pub input_dim: usize,
    pub sgp: SgpConfig,
}

impl Default for PyramidConfig {
    fn default() -> Self {
        Self {
            num_levels: 5,
            input_dim: 32,
            sgp: SgpConfig::default(),
        }
    }
}

impl PyramidConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_levels == 0 {
            return Err(Error::config("pyramid.num_levels must be at least 1"));
        }
        if self.input_dim == 0 {
            return Err(Error::config("pyramid.input_dim must be positive"));
        }
        self.sgp.validate()
    }

    /// Shortest input that still yields one instant at the coarsest level.
    pub fn min_length(&self) -> usize {
        1 << (self.num_levels - 1)
    }
}

/// How the temporal-level and spatial-level streams are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionMode {
    /// Temporal stream only.
    #[default]
    Single,
    /// Embedded streams are summed before a single shared pyramid.
    EarlyAdd,
    /// Two pyramids; classification reads the temporal one, regression
    /// reads their per-level sum.
    DecoupledAdd,
}

/// Embedding projection followed by one SGP layer per pyramid level.
#[derive(Debug, Clone)]
pub struct StreamEncoder {
    pub cfg: PyramidConfig,
    embed: Affine,
    layers: Vec<SgpLayer>,
}

impl StreamEncoder {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        cfg: &PyramidConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let embed = Affine::new(
            store,
            rng,
            &format!("{name}.embed"),
            cfg.input_dim,
            cfg.sgp.dim,
        );
        let layers = (0..cfg.num_levels)
            .map(|l| SgpLayer::new(store, rng, &format!("{name}.level{l}"), &cfg.sgp))
            .collect::<Result<_>>()?;
        Ok(Self {
            cfg: cfg.clone(),
            embed,
            layers,
        })
    }

    pub fn layers(&self) -> &[SgpLayer] {
        &self.layers
    }

    pub fn embed<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let shape = x.shape();
        if shape.len() != 2 || shape[1] != self.cfg.input_dim {
            return Err(Error::config(format!(
                "encoder expects T×{} features, got {shape:?}",
                self.cfg.input_dim
            )));
        }
        self.embed.forward(p, x)
    }

    /// Builds the pyramid from already-embedded features: level 1 is the
    /// first SGP layer's output, and every further level applies its SGP
    /// layer to the stride-2 max-pooled previous level.
    pub fn pyramid<'t>(
        &self,
        p: &Bound<'t>,
        embedded: Var<'t>,
        base_stride: usize,
    ) -> Result<Vec<Level<'t>>> {
        let t = embedded.shape()[0];
        if t < self.cfg.min_length() {
            return Err(Error::config(format!(
                "sequence of {t} instants is too short for {} levels; need at least {}",
                self.cfg.num_levels,
                self.cfg.min_length()
            )));
        }
        let mut levels = Vec::with_capacity(self.layers.len());
        let mut x = embedded;
        for (l, layer) in self.layers.iter().enumerate() {
            if l > 0 {
                x = x.maxpool_stride2()?;
            }
            x = layer.forward(p, x)?;
            levels.push(Level {
                features: x,
                stride: base_stride << l,
            });
        }
        Ok(levels)
    }

    pub fn forward<'t>(
        &self,
        p: &Bound<'t>,
        x: Var<'t>,
        base_stride: usize,
    ) -> Result<Vec<Level<'t>>> {
        let e = self.embed(p, x)?;
        self.pyramid(p, e, base_stride)
    }
}

/// Evaluates an encoder on a plain sequence and returns every level.
pub fn build_pyramid(
    store: &ParamStore,
    encoder: &StreamEncoder,
    x: &FeatureSequence,
) -> Result<Vec<FeatureSequence>> {
    let tape = Tape::new();
    let p = store.bind(&tape);
    let input = tape.constant(x.features.clone());
    encoder
        .forward(&p, input, x.stride)?
        .into_iter()
        .map(|lvl| FeatureSequence::new(lvl.features.value(), lvl.stride, x.stream))
        .collect()
}

/// Decoupled fusion: the classification stream is the temporal pyramid
/// itself and the regression stream is the per-level sum of both pyramids.
/// Without a spatial pyramid both outputs are the temporal pyramid.
pub fn fuse_decoupled<'t>(
    temporal: &[Level<'t>],
    spatial: Option<&[Level<'t>]>,
) -> Result<(Vec<Level<'t>>, Vec<Level<'t>>)> {
    let Some(spatial) = spatial else {
        return Ok((temporal.to_vec(), temporal.to_vec()));
    };
    if spatial.len() != temporal.len() {
        return Err(Error::config(format!(
            "cannot fuse {} temporal levels with {} spatial levels",
            temporal.len(),
            spatial.len()
        )));
    }
    let mut reg = Vec::with_capacity(temporal.len());
    for (l, (a, b)) in temporal.iter().zip(spatial).enumerate() {
        let (sa, sb) = (a.features.shape(), b.features.shape());
        if sa != sb || a.stride != b.stride {
            return Err(Error::Fusion {
                level: l + 1,
                temporal: sa,
                spatial: sb,
            });
        }
        reg.push(Level {
            features: a.features.add(b.features)?,
            stride: a.stride,
        });
    }
    Ok((temporal.to_vec(), reg))
}

/// Nearest-index resampling onto `target_len` instants: output row `i`
/// copies source row `round(i·T/target_len)` (clamped to the last row).
pub fn resample_nearest(seq: &FeatureSequence, target_len: usize) -> Result<FeatureSequence> {
    if target_len < 1 {
        return Err(Error::config("resample target length must be at least 1"));
    }
    let src = seq.len();
    let d = seq.dim();
    let mut data = Vec::with_capacity(target_len * d);
    for i in 0..target_len {
        let j = ((i as f64 * src as f64 / target_len as f64).round() as usize).min(src - 1);
        data.extend_from_slice(seq.features.row(j));
    }
    let stride = (seq.stride * src).div_ceil(target_len).max(1);
    FeatureSequence::new(Tensor::new(vec![target_len, d], data)?, stride, seq.stream)
}
