use serde::{Deserialize, Serialize};
use tridet_autograd::{Tensor, Var};

use crate::error::{Error, Result};

/// Which backbone a feature sequence comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stream {
    TemporalLevel,
    SpatialLevel,
}

impl Stream {
    pub fn tag(self) -> u8 {
        match self {
            Stream::TemporalLevel => 0,
            Stream::SpatialLevel => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Stream::TemporalLevel),
            1 => Some(Stream::SpatialLevel),
            _ => None,
        }
    }
}

/// `T×D` features with the number of base instants covered by each step.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub features: Tensor,
    pub stride: usize,
    pub stream: Stream,
}

impl FeatureSequence {
    pub fn new(features: Tensor, stride: usize, stream: Stream) -> Result<Self> {
        if features.shape().len() != 2 {
            return Err(Error::config(format!(
                "feature sequence must be T×D, got {:?}",
                features.shape()
            )));
        }
        if stride == 0 {
            return Err(Error::config("stride must be positive"));
        }
        Ok(Self {
            features,
            stride,
            stream,
        })
    }

    pub fn temporal(features: Tensor) -> Result<Self> {
        Self::new(features, 1, Stream::TemporalLevel)
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }
}

/// One pyramid level recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct Level<'t> {
    pub features: Var<'t>,
    /// Base instants per step: `2^(l−1)` times the input stride.
    pub stride: usize,
}

impl Level<'_> {
    pub fn len(&self) -> usize {
        self.features.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
