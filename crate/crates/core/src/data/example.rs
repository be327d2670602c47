use serde::{Deserialize, Serialize};

use crate::model::{ModelConfig, RoIFeature};
use crate::vocab::TaskType;

/// One training or evaluation record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultimodalExample {
    pub task: TaskType,
    #[serde(rename = "event", default, skip_serializing_if = "Option::is_none")]
    pub event_text: Option<String>,
    #[serde(rename = "target", default)]
    pub target_text: String,
    #[serde(default)]
    pub rois: Vec<RoIFeature>,
    /// `(roi_index, attribute_label)`
    #[serde(default)]
    pub attributes: Vec<(usize, usize)>,
    /// `(subject_roi, object_roi, relation_label)`
    #[serde(default)]
    pub relations: Vec<(usize, usize, usize)>,
    #[serde(default)]
    pub source_id: String,
    /// Originating knowledge-base relation for distilled candidates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relation: Option<String>,
}

/// An example with its average per-token cross-entropy (nats).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredExample {
    #[serde(flatten)]
    pub example: MultimodalExample,
    pub avg_ce: f32,
}

impl MultimodalExample {
    /// Structural checks independent of any model configuration.
    pub fn validate(&self) -> Result<(), String> {
        let n = self.rois.len();
        if self.task.is_generation() && self.target_text.trim().is_empty() {
            return Err("target: empty target for a generation task".into());
        }
        let d = self.rois.first().map(|r| r.feat.len());
        let c = self.rois.first().map(|r| r.class_probs.len());
        for (i, roi) in self.rois.iter().enumerate() {
            if Some(roi.feat.len()) != d {
                return Err(format!("rois[{i}].feat: width {} differs from rois[0]", roi.feat.len()));
            }
            if Some(roi.class_probs.len()) != c {
                return Err(format!("rois[{i}].class_probs: length differs from rois[0]"));
            }
            if roi.feat.iter().any(|x| !x.is_finite()) {
                return Err(format!("rois[{i}].feat: non-finite value"));
            }
            roi.check_distribution()
                .map_err(|m| format!("rois[{i}].class_probs: {m}"))?;
        }
        for (k, &(r, _)) in self.attributes.iter().enumerate() {
            if r >= n {
                return Err(format!("attributes[{k}]: roi index {r} out of range for {n} rois"));
            }
        }
        for (k, &(s, o, _)) in self.relations.iter().enumerate() {
            if s >= n || o >= n {
                return Err(format!("relations[{k}]: roi pair ({s}, {o}) out of range for {n} rois"));
            }
            if s == o {
                return Err(format!("relations[{k}]: subject and object are the same roi"));
            }
        }
        Ok(())
    }

    /// Checks feature widths and label ranges against a model configuration.
    pub fn validate_for(&self, cfg: &ModelConfig) -> Result<(), String> {
        for (i, roi) in self.rois.iter().enumerate() {
            if roi.feat.len() != cfg.d_visual {
                return Err(format!(
                    "rois[{i}].feat: width {} but model expects {}",
                    roi.feat.len(),
                    cfg.d_visual
                ));
            }
            if roi.class_probs.len() != cfg.n_classes {
                return Err(format!(
                    "rois[{i}].class_probs: {} classes but model expects {}",
                    roi.class_probs.len(),
                    cfg.n_classes
                ));
            }
        }
        if let Some((k, a)) = self.attributes.iter().enumerate().find(|(_, a)| a.1 >= cfg.n_attr) {
            return Err(format!("attributes[{k}]: label {} >= n_attr {}", a.1, cfg.n_attr));
        }
        if let Some((k, r)) = self.relations.iter().enumerate().find(|(_, r)| r.2 >= cfg.n_rel) {
            return Err(format!("relations[{k}]: label {} >= n_rel {}", r.2, cfg.n_rel));
        }
        Ok(())
    }
}
