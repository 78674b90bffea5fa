//! The full detector: stream encoders, fusion, classification and
//! regression heads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tridet_autograd::{Tape, Tensor, Var};

use crate::error::{Error, Result};
use crate::heads::{
    ClassificationHead, DirectRegressionHead, HeadConfig, RegressionKind, TridentHead,
};
use crate::layers::ChannelAffine;
use crate::params::{Bound, ParamStore};
use crate::pyramid::{fuse_decoupled, resample_nearest, FusionMode, PyramidConfig, StreamEncoder};
use crate::sequence::{FeatureSequence, Level, Stream};
use crate::sgp::SgpConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub pyramid: PyramidConfig,
    /// Spatial-level stream encoder; required by the two-stream fusion modes.
    pub spatial: Option<PyramidConfig>,
    pub fusion: FusionMode,
    pub head: HeadConfig,
    /// Layer-normalize every pyramid level (with a learned per-channel
    /// affine) before it reaches the heads.
    pub neck_norm: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            pyramid: PyramidConfig::default(),
            spatial: None,
            fusion: FusionMode::Single,
            head: HeadConfig::default(),
            neck_norm: true,
        }
    }
}

impl ModelConfig {
    /// Spatial-stream defaults: unit window and unit scale.
    pub fn default_spatial(&self, input_dim: usize) -> PyramidConfig {
        PyramidConfig {
            num_levels: self.pyramid.num_levels,
            input_dim,
            sgp: SgpConfig {
                window: 1,
                scale_factor: 1.0,
                ..self.pyramid.sgp.clone()
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.pyramid.validate()?;
        self.head.validate()?;
        match (self.fusion, &self.spatial) {
            (FusionMode::Single, _) => {}
            (_, None) => {
                return Err(Error::config(format!(
                    "model.fusion = {:?} requires a [model.spatial] section",
                    self.fusion
                )))
            }
            (_, Some(s)) => {
                s.validate()?;
                if s.sgp.dim != self.pyramid.sgp.dim || s.num_levels != self.pyramid.num_levels {
                    return Err(Error::config(
                        "model.spatial must match model.pyramid in sgp.dim and num_levels",
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum Regression {
    Trident(TridentHead),
    Direct(DirectRegressionHead),
}

/// One video's features: the temporal-level stream and, for two-stream
/// models, the spatial-level stream.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoFeatures {
    pub temporal: FeatureSequence,
    pub spatial: Option<FeatureSequence>,
}

impl VideoFeatures {
    pub fn single(features: Tensor) -> Result<Self> {
        Ok(Self {
            temporal: FeatureSequence::temporal(features)?,
            spatial: None,
        })
    }

    pub fn len(&self) -> usize {
        self.temporal.len()
    }

    pub fn is_empty(&self) -> bool {
        self.temporal.is_empty()
    }
}

/// Per-level predictions on a tape. Distances are in level units.
#[derive(Debug, Clone, Copy)]
pub struct LevelPrediction<'t> {
    /// `T_l × C` class logits.
    pub cls: Var<'t>,
    /// `T_l × C'` start distances.
    pub d_st: Var<'t>,
    /// `T_l × C'` end distances.
    pub d_et: Var<'t>,
}

/// Detached per-level predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelValues {
    pub cls: Tensor,
    pub d_st: Tensor,
    pub d_et: Tensor,
}

impl From<&LevelPrediction<'_>> for LevelValues {
    fn from(p: &LevelPrediction<'_>) -> Self {
        Self {
            cls: p.cls.value(),
            d_st: p.d_st.value(),
            d_et: p.d_et.value(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Detector {
    pub cfg: ModelConfig,
    pub params: ParamStore,
    temporal: StreamEncoder,
    spatial: Option<StreamEncoder>,
    /// Per level: normalization of the classification stream, and of the
    /// regression stream when the two differ.
    neck: Vec<(ChannelAffine, Option<ChannelAffine>)>,
    cls: ClassificationHead,
    reg: Regression,
}

impl Detector {
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let temporal = StreamEncoder::new(&mut params, &mut rng, "temporal", &cfg.pyramid)?;
        let spatial = match (cfg.fusion, &cfg.spatial) {
            (FusionMode::Single, _) | (_, None) => None,
            (_, Some(s)) => Some(StreamEncoder::new(&mut params, &mut rng, "spatial", s)?),
        };
        let dim = cfg.pyramid.sgp.dim;
        let levels = cfg.pyramid.num_levels;
        let two_streams = matches!(cfg.fusion, FusionMode::DecoupledAdd) && spatial.is_some();
        let neck = if cfg.neck_norm {
            (0..levels)
                .map(|l| {
                    let c = ChannelAffine::new(&mut params, &format!("neck.level{l}.cls"), dim);
                    let r = two_streams.then(|| {
                        ChannelAffine::new(&mut params, &format!("neck.level{l}.reg"), dim)
                    });
                    (c, r)
                })
                .collect()
        } else {
            Vec::new()
        };
        let cls = ClassificationHead::new(&mut params, &mut rng, dim, levels, &cfg.head);
        let reg = match cfg.head.regression {
            RegressionKind::Trident => Regression::Trident(TridentHead::new(
                &mut params,
                &mut rng,
                dim,
                levels,
                &cfg.head,
            )),
            RegressionKind::Direct => Regression::Direct(DirectRegressionHead::new(
                &mut params,
                &mut rng,
                dim,
                levels,
                &cfg.head,
            )),
        };
        Ok(Self {
            cfg: cfg.clone(),
            params,
            temporal,
            spatial,
            neck,
            cls,
            reg,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.cfg.head.num_classes
    }

    pub fn num_levels(&self) -> usize {
        self.cfg.pyramid.num_levels
    }

    pub fn classification_head(&self) -> &ClassificationHead {
        &self.cls
    }

    pub fn trident_head(&self) -> Option<&TridentHead> {
        match &self.reg {
            Regression::Trident(h) => Some(h),
            Regression::Direct(_) => None,
        }
    }

    /// Lengths of every pyramid level for an input of `t` instants.
    pub fn level_lengths(&self, t: usize) -> Vec<usize> {
        (0..self.num_levels()).map(|l| t.div_ceil(1 << l)).collect()
    }

    /// Classification and regression pyramids for one video.
    pub fn pyramids<'t>(
        &self,
        p: &Bound<'t>,
        tape: &'t Tape,
        video: &VideoFeatures,
    ) -> Result<(Vec<Level<'t>>, Vec<Level<'t>>)> {
        self.pyramids_from(p, tape, video, None)
    }

    /// As [`Self::pyramids`], optionally reading the temporal features from
    /// an existing tape variable instead of `video.temporal`.
    pub fn pyramids_from<'t>(
        &self,
        p: &Bound<'t>,
        tape: &'t Tape,
        video: &VideoFeatures,
        temporal: Option<Var<'t>>,
    ) -> Result<(Vec<Level<'t>>, Vec<Level<'t>>)> {
        let x = match temporal {
            Some(v) if v.shape() != video.temporal.features.shape() => {
                return Err(Error::config(format!(
                    "temporal input has shape {:?}, expected {:?}",
                    v.shape(),
                    video.temporal.features.shape()
                )));
            }
            Some(v) => v,
            None => tape.constant(video.temporal.features.clone()),
        };
        let Some(enc_s) = &self.spatial else {
            let levels = self.temporal.forward(p, x, 1)?;
            return Ok((levels.clone(), levels));
        };
        let spatial = video.spatial.as_ref().ok_or_else(|| {
            Error::config(format!(
                "fusion mode {:?} needs spatial-level features",
                self.cfg.fusion
            ))
        })?;
        if spatial.stream != Stream::SpatialLevel {
            return Err(Error::config(
                "second feature stream must be tagged spatial-level",
            ));
        }
        let spatial = if spatial.len() == video.len() {
            spatial.clone()
        } else {
            resample_nearest(spatial, video.len())?
        };
        let xs = tape.constant(spatial.features);
        match self.cfg.fusion {
            FusionMode::EarlyAdd => {
                let e = self.temporal.embed(p, x)?.add(enc_s.embed(p, xs)?)?;
                let levels = self.temporal.pyramid(p, e, 1)?;
                Ok((levels.clone(), levels))
            }
            _ => {
                let t = self.temporal.forward(p, x, 1)?;
                let s = enc_s.forward(p, xs, 1)?;
                fuse_decoupled(&t, Some(&s))
            }
        }
    }

    pub fn forward<'t>(
        &self,
        p: &Bound<'t>,
        tape: &'t Tape,
        video: &VideoFeatures,
    ) -> Result<Vec<LevelPrediction<'t>>> {
        self.forward_from(p, tape, video, None)
    }

    /// As [`Self::forward`] with the temporal input optionally on the tape.
    pub fn forward_from<'t>(
        &self,
        p: &Bound<'t>,
        tape: &'t Tape,
        video: &VideoFeatures,
        temporal: Option<Var<'t>>,
    ) -> Result<Vec<LevelPrediction<'t>>> {
        let (cls_levels, reg_levels) = self.pyramids_from(p, tape, video, temporal)?;
        cls_levels
            .iter()
            .zip(&reg_levels)
            .enumerate()
            .map(|(l, (c, r))| {
                let (c, r) = match self.neck.get(l) {
                    None => (c.features, r.features),
                    Some((nc, nr)) => {
                        let c_n = nc.forward(p, c.features.layernorm()?)?;
                        let r_n = match nr {
                            Some(nr) => nr.forward(p, r.features.layernorm()?)?,
                            None => c_n,
                        };
                        (c_n, r_n)
                    }
                };
                let cls = self.cls.forward(p, l, c)?;
                let (d_st, d_et) = match &self.reg {
                    Regression::Trident(h) => {
                        let out = h.forward(p, l, r)?;
                        h.distances(&out)?
                    }
                    Regression::Direct(h) => h.forward(p, l, r)?,
                };
                Ok(LevelPrediction { cls, d_st, d_et })
            })
            .collect()
    }

    /// Forward pass on a private tape, returning plain values.
    pub fn predict(&self, video: &VideoFeatures) -> Result<Vec<LevelValues>> {
        let tape = Tape::new();
        let p = self.params.bind(&tape);
        Ok(self
            .forward(&p, &tape, video)?
            .iter()
            .map(LevelValues::from)
            .collect())
    }
}
