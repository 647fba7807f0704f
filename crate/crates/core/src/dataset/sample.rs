use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::DatasetError;
use crate::geometry::io::{rect_from_row_col, rect_to_row_col};
use crate::geometry::GraspRect;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetLevel {
    Object,
    Part,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstructionKind {
    Explicit,
    Implicit,
}

impl TargetLevel {
    pub fn name(self) -> &'static str {
        match self {
            TargetLevel::Object => "object",
            TargetLevel::Part => "part",
        }
    }
}

impl InstructionKind {
    pub fn name(self) -> &'static str {
        match self {
            InstructionKind::Explicit => "explicit",
            InstructionKind::Implicit => "implicit",
        }
    }
}

/// Where an instruction's text came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    /// `"template"` or `"llm"`.
    pub source: String,
    /// The external generator was configured but failed, so templates were used.
    #[serde(default)]
    pub fallback: bool,
    /// Set by a human reviewer; never set by the pipeline itself.
    #[serde(default)]
    pub reviewed: bool,
}

impl Provenance {
    pub fn template() -> Self {
        Provenance {
            source: "template".into(),
            fallback: false,
            reviewed: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstructionSample {
    pub sample_id: String,
    pub scene_id: String,
    /// Relative to the dataset root.
    pub image_path: PathBuf,
    pub depth_path: Option<PathBuf>,
    pub instruction: String,
    pub target_name: String,
    pub target_level: TargetLevel,
    pub instruction_kind: InstructionKind,
    pub gt_rects: Vec<GraspRect<f64>>,
    /// Pixel box `(x0, y0, x1, y1)` around the target object, when known.
    pub target_bbox: Option<[f64; 4]>,
    pub provenance: Option<Provenance>,
}

/// Serialized form: rectangles as eight numbers in `(row, col)` order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct SampleRecord {
    pub sample_id: String,
    pub scene_id: String,
    pub image_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_path: Option<PathBuf>,
    pub instruction: String,
    pub target_name: String,
    pub target_level: TargetLevel,
    pub instruction_kind: InstructionKind,
    pub gt_rects: Vec<[f64; 8]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_bbox: Option<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

/// Whether `name` occurs in `text`, ignoring case and runs of whitespace.
pub fn mentions(text: &str, name: &str) -> bool {
    let norm = |s: &str| s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    let name = norm(name);
    !name.is_empty() && norm(text).contains(&name)
}

impl InstructionSample {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |message: String| DatasetError::InvalidSample {
            id: self.sample_id.clone(),
            message,
        };
        if self.target_name.trim().is_empty() {
            return Err(bad("empty target name".into()));
        }
        if self.gt_rects.is_empty() {
            return Err(bad("no ground-truth rectangles".into()));
        }
        let named = mentions(&self.instruction, &self.target_name);
        match self.instruction_kind {
            InstructionKind::Explicit if !named => Err(bad(format!(
                "explicit instruction does not contain '{}'",
                self.target_name
            ))),
            InstructionKind::Implicit if named => Err(bad(format!(
                "implicit instruction names '{}'",
                self.target_name
            ))),
            _ => Ok(()),
        }
    }

    pub(crate) fn to_record(&self) -> SampleRecord {
        SampleRecord {
            sample_id: self.sample_id.clone(),
            scene_id: self.scene_id.clone(),
            image_path: self.image_path.clone(),
            depth_path: self.depth_path.clone(),
            instruction: self.instruction.clone(),
            target_name: self.target_name.clone(),
            target_level: self.target_level,
            instruction_kind: self.instruction_kind,
            gt_rects: self.gt_rects.iter().map(rect_to_row_col).collect(),
            target_bbox: self.target_bbox,
            provenance: self.provenance.clone(),
        }
    }

    pub(crate) fn from_record(r: SampleRecord) -> Result<Self, DatasetError> {
        let gt_rects = r
            .gt_rects
            .iter()
            .map(rect_from_row_col)
            .collect::<Result<Vec<_>, _>>()?;
        let s = InstructionSample {
            sample_id: r.sample_id,
            scene_id: r.scene_id,
            image_path: r.image_path,
            depth_path: r.depth_path,
            instruction: r.instruction,
            target_name: r.target_name,
            target_level: r.target_level,
            instruction_kind: r.instruction_kind,
            gt_rects,
            target_bbox: r.target_bbox,
            provenance: r.provenance,
        };
        s.validate()?;
        Ok(s)
    }

    /// JSON line for the manifest.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&self.to_record()).expect("sample serializes")
    }
}
