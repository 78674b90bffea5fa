//! Annotation JSON.
//!
//! ```json
//! {"classes": ["run", "jump"],
//!  "videos": [{"id": "v0", "duration": 256, "fps": 2.0,
//!              "segments": [{"start": 16, "end": 48, "label": "run"}]}]}
//! ```
//!
//! Times are in base instants unless the video carries `fps`, in which case
//! they are seconds and are multiplied by `fps` on ingest.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::assign::ActionSegment;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSegment {
    start: f64,
    end: f64,
    label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawVideo {
    id: String,
    duration: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fps: Option<f64>,
    segments: Vec<RawSegment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAnnotations {
    classes: Vec<String>,
    videos: Vec<RawVideo>,
}

/// One video's ground truth in base instants.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoAnnotation {
    pub id: String,
    pub duration: f64,
    pub segments: Vec<ActionSegment>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationSet {
    pub classes: Vec<String>,
    pub videos: Vec<VideoAnnotation>,
}

impl AnnotationSet {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// Checks every segment against its video's duration and the class
    /// vocabulary.
    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::Annotation("class vocabulary is empty".into()));
        }
        for v in &self.videos {
            if !(v.duration > 0.0 && v.duration.is_finite()) {
                return Err(Error::Annotation(format!(
                    "video {}: duration must be positive",
                    v.id
                )));
            }
            for (i, s) in v.segments.iter().enumerate() {
                s.validate()
                    .map_err(|e| Error::Annotation(format!("video {}: segment {i}: {e}", v.id)))?;
                if s.end > v.duration {
                    return Err(Error::Annotation(format!(
                        "video {}: segment {i} ends at {} beyond duration {}",
                        v.id, s.end, v.duration
                    )));
                }
                if s.class > self.classes.len() {
                    return Err(Error::Annotation(format!(
                        "video {}: segment {i} has class id {} outside the vocabulary",
                        v.id, s.class
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: RawAnnotations = serde_json::from_str(text)
            .map_err(|e| Error::Annotation(format!("malformed JSON: {e}")))?;
        let mut videos = Vec::with_capacity(raw.videos.len());
        for v in raw.videos {
            let scale = match v.fps {
                Some(f) if f > 0.0 && f.is_finite() => f,
                Some(f) => {
                    return Err(Error::Annotation(format!(
                        "video {}: fps {f} must be positive",
                        v.id
                    )))
                }
                None => 1.0,
            };
            let mut segments = Vec::with_capacity(v.segments.len());
            for s in &v.segments {
                let class = raw
                    .classes
                    .iter()
                    .position(|c| *c == s.label)
                    .ok_or_else(|| {
                        Error::Annotation(format!("video {}: unknown label {:?}", v.id, s.label))
                    })?;
                if s.start >= s.end {
                    return Err(Error::Annotation(format!(
                        "video {}: segment [{}, {}] has start ≥ end",
                        v.id, s.start, s.end
                    )));
                }
                segments.push(ActionSegment {
                    start: s.start * scale,
                    end: s.end * scale,
                    class: class + 1,
                });
            }
            videos.push(VideoAnnotation {
                id: v.id,
                duration: v.duration * scale,
                segments,
            });
        }
        let set = Self {
            classes: raw.classes,
            videos,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn to_json(&self) -> String {
        let raw = RawAnnotations {
            classes: self.classes.clone(),
            videos: self
                .videos
                .iter()
                .map(|v| RawVideo {
                    id: v.id.clone(),
                    duration: v.duration,
                    fps: None,
                    segments: v
                        .segments
                        .iter()
                        .map(|s| RawSegment {
                            start: s.start,
                            end: s.end,
                            label: self.classes[s.class - 1].clone(),
                        })
                        .collect(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&raw).expect("annotations serialize")
    }
}

pub fn read_annotations(path: &Path) -> Result<AnnotationSet> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    AnnotationSet::from_json(&text)
}

pub fn write_annotations(set: &AnnotationSet, path: &Path) -> Result<()> {
    std::fs::write(path, set.to_json())
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}
