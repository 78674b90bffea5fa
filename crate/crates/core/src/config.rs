//! Run configuration (TOML).
//!
//! Every section is optional and falls back to the defaults below. The
//! per-dataset hyperparameters commonly used with this detector are:
//!
//! | setting | short clips | long, dense videos |
//! |---------|-------------|--------------------|
//! | `model.head.num_bins` (B) | 16 | 14 |
//! | `model.pyramid.sgp.window` (w) | 1 | 11 |
//! | `model.pyramid.sgp.scale_factor` (k) | 1.5 | 1.0 |
//!
//! The shipped defaults target the synthetic suite instead.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::SyntheticSpec;
use crate::diagnostics::RankLossConfig;
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::inference::InferenceConfig;
use crate::loss::LossConfig;
use crate::model::ModelConfig;
use crate::optim::AdamWConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub warmup_epochs: usize,
    /// Cosine annealing after warmup; constant rate otherwise.
    pub cosine: bool,
    pub batch_size: usize,
    /// Global gradient-norm clip; `0` disables clipping.
    pub max_grad_norm: f64,
    pub optimizer: AdamWConfig,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            warmup_epochs: 5,
            cosine: true,
            batch_size: 2,
            max_grad_norm: 1.0,
            optimizer: AdamWConfig {
                lr: 2e-3,
                ..AdamWConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssignmentSection {
    /// Center-sampling radius in units of the level stride.
    pub radius: f64,
}

impl Default for AssignmentSection {
    fn default() -> Self {
        Self { radius: 1.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Annotation JSON.
    pub annotations: Option<PathBuf>,
    /// Directory holding `<video id>.tdf` (and optional
    /// `<video id>.spatial.tdf`) feature files.
    pub features: Option<PathBuf>,
    /// Generate the dataset in memory instead of reading files.
    pub synthetic: Option<SyntheticSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsConfig {
    pub rank_loss: RankLossConfig,
    pub mixing_trials: usize,
    pub mixing_points: usize,
    pub mixing_dim: usize,
    pub modulus_rows: usize,
    pub modulus_dims: Vec<usize>,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            rank_loss: RankLossConfig::default(),
            mixing_trials: 1000,
            mixing_points: 16,
            mixing_dim: 8,
            modulus_rows: 1000,
            modulus_dims: vec![3, 8, 64],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub training: TrainingConfig,
    pub assignment: AssignmentSection,
    pub loss: LossConfig,
    pub inference: InferenceConfig,
    pub eval: EvalConfig,
    pub data: DataConfig,
    pub diagnostics: DiagnosticsConfig,
}

fn within<T>(section: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("[{section}] {m}")),
        other => other,
    })
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(format!("config parse error: {e}")))
    }

    /// Reads a config file and resolves relative data paths against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.data.annotations, &mut cfg.data.features]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Range checks on every section; does not touch the file system.
    pub fn validate(&self) -> Result<()> {
        within("model", self.model.validate())?;
        let t = &self.training;
        if t.batch_size == 0 {
            return Err(Error::config("[training] batch_size must be at least 1"));
        }
        if !(t.optimizer.lr > 0.0) || !(t.optimizer.weight_decay >= 0.0) {
            return Err(Error::config(
                "[training] optimizer.lr must be positive and weight_decay nonnegative",
            ));
        }
        if !(t.max_grad_norm >= 0.0) {
            return Err(Error::config(
                "[training] max_grad_norm must be nonnegative",
            ));
        }
        if !(self.assignment.radius > 0.0) {
            return Err(Error::config("[assignment] radius must be positive"));
        }
        within("loss", self.loss.validate())?;
        within("inference", self.inference.validate())?;
        within("eval", self.eval.validate())?;
        if let Some(spec) = &self.data.synthetic {
            within("data", spec.validate())?;
            if spec.dim != self.model.pyramid.input_dim {
                return Err(Error::config(format!(
                    "[data] synthetic.dim = {} but model.pyramid.input_dim = {}",
                    spec.dim, self.model.pyramid.input_dim
                )));
            }
            if spec.num_classes != self.model.head.num_classes {
                return Err(Error::config(format!(
                    "[data] synthetic.num_classes = {} but model.head.num_classes = {}",
                    spec.num_classes, self.model.head.num_classes
                )));
            }
        }
        within("diagnostics", self.diagnostics.rank_loss.validate())?;
        Ok(())
    }

    /// Validation plus existence of every referenced path.
    pub fn validate_data(&self) -> Result<()> {
        self.validate()?;
        if self.data.synthetic.is_some() {
            return Ok(());
        }
        for (key, p) in [
            ("annotations", &self.data.annotations),
            ("features", &self.data.features),
        ] {
            match p {
                None => {
                    return Err(Error::config(format!(
                        "[data] {key} is required without [data.synthetic]"
                    )))
                }
                Some(p) if !p.exists() => {
                    return Err(Error::config(format!(
                        "[data] {key}: {} does not exist",
                        p.display()
                    )))
                }
                Some(_) => {}
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_default() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn toml_round_trip() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn field_addressed_errors() {
        let cases = [
            ("[model.pyramid.sgp]\nwindow = 4\n", "sgp.window"),
            ("[model.head]\nnum_bins = 0\n", "head.num_bins"),
            (
                "[eval]\niou_thresholds = [0.5, 1.5]\n",
                "eval.iou_thresholds[1]",
            ),
        ];
        for (text, needle) in cases {
            let err = RunConfig::from_toml(text)
                .and_then(|c| c.validate())
                .unwrap_err();
            assert!(err.to_string().contains(needle), "{err}");
        }
    }

    #[test]
    fn missing_paths_rejected() {
        let cfg = RunConfig::from_toml(
            "[data]\nannotations = \"/nonexistent/a.json\"\nfeatures = \"/tmp\"\n",
        )
        .unwrap();
        let err = cfg.validate_data().unwrap_err();
        assert!(err.to_string().contains("[data] annotations"), "{err}");
    }
}
