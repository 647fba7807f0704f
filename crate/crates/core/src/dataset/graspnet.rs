//! On-disk layout of a GraspNet-1Billion style release. Only scanning is
//! implemented; converting its 6-DoF labels goes through [`super::annotation`].
//!
//! ```text
//! root/scenes/scene_0000/<camera>/rgb/0000.png
//! root/scenes/scene_0000/<camera>/depth/0000.png
//! root/scenes/scene_0000/<camera>/annotations/0000.xml
//! root/scenes/scene_0000/<camera>/camK.npy
//! root/grasp_label/000_labels.npz
//! root/models/000/
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::annotation::Grasp6D;
use super::DatasetError;

/// Grasps scoring below this are dropped on import.
pub const DEFAULT_SCORE_CUTOFF: f64 = 0.5;

#[derive(Debug, Clone)]
pub struct GraspNetLayout {
    pub root: PathBuf,
    /// `"realsense"` or `"kinect"`.
    pub camera: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SceneEntry {
    pub scene_id: String,
    pub frames: Vec<String>,
}

impl GraspNetLayout {
    pub fn new(root: impl Into<PathBuf>, camera: impl Into<String>) -> Self {
        GraspNetLayout {
            root: root.into(),
            camera: camera.into(),
        }
    }

    pub fn scene_dir(&self, scene_id: &str) -> PathBuf {
        self.root.join("scenes").join(scene_id).join(&self.camera)
    }

    pub fn rgb_path(&self, scene_id: &str, frame: &str) -> PathBuf {
        self.scene_dir(scene_id).join("rgb").join(format!("{frame}.png"))
    }

    pub fn depth_path(&self, scene_id: &str, frame: &str) -> PathBuf {
        self.scene_dir(scene_id).join("depth").join(format!("{frame}.png"))
    }

    pub fn annotation_path(&self, scene_id: &str, frame: &str) -> PathBuf {
        self.scene_dir(scene_id).join("annotations").join(format!("{frame}.xml"))
    }

    pub fn grasp_label_path(&self, object_index: usize) -> PathBuf {
        self.root.join("grasp_label").join(format!("{object_index:03}_labels.npz"))
    }

    /// Scenes under `root/scenes` with the frames whose RGB image exists.
    pub fn scan(&self) -> Result<Vec<SceneEntry>, DatasetError> {
        let scenes = self.root.join("scenes");
        let mut ids = list_dir(&scenes)?;
        ids.retain(|n| n.starts_with("scene_"));
        let mut out = Vec::new();
        for scene_id in ids {
            let rgb = self.scene_dir(&scene_id).join("rgb");
            let mut frames: Vec<String> = if rgb.is_dir() {
                list_dir(&rgb)?
                    .into_iter()
                    .filter_map(|f| f.strip_suffix(".png").map(str::to_string))
                    .collect()
            } else {
                Vec::new()
            };
            frames.sort();
            out.push(SceneEntry { scene_id, frames });
        }
        Ok(out)
    }
}

fn list_dir(dir: &Path) -> Result<Vec<String>, DatasetError> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .map_err(|e| DatasetError::io(dir, e))?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().into_string().ok())
        .collect();
    names.sort();
    Ok(names)
}

/// Drops grasps whose confidence is below `cutoff`.
pub fn filter_by_score(grasps: Vec<Grasp6D>, cutoff: f64) -> Vec<Grasp6D> {
    grasps.into_iter().filter(|g| g.score >= cutoff).collect()
}
