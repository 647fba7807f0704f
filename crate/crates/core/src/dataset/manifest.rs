//! Line-delimited manifests and the scene-level train/test split.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::sample::{InstructionSample, SampleRecord};
use super::DatasetError;

pub const SAMPLES_FILE: &str = "manifest.jsonl";
pub const GENERIC_FILE: &str = "generic.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// Instruction-following sample without a grasp target (text loss only).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenericSample {
    pub scene_id: String,
    pub image_path: std::path::PathBuf,
    pub prompt: String,
    pub response: String,
}

fn scene_hash(id: &str) -> [u8; 32] {
    Sha256::digest(id.as_bytes()).into()
}

/// Train scene ids: the first `round(fraction * n)` scenes in hash order.
pub fn scene_split<'a>(scene_ids: impl IntoIterator<Item = &'a str>, fraction: f64) -> HashSet<String> {
    let unique: BTreeSet<&str> = scene_ids.into_iter().collect();
    let mut ids: Vec<&str> = unique.into_iter().collect();
    ids.sort_by_key(|id| (scene_hash(id), id.to_string()));
    let n_train = (fraction.clamp(0.0, 1.0) * ids.len() as f64).round() as usize;
    ids[..n_train].iter().map(|s| s.to_string()).collect()
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>, DatasetError> {
    let f = fs::File::open(path).map_err(|e| DatasetError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| DatasetError::io(path, e))?;
        if !line.trim().is_empty() {
            out.push((i + 1, line));
        }
    }
    Ok(out)
}

/// Reads every sample in the manifest, validating each record.
pub fn read_manifest(root: &Path) -> Result<Vec<InstructionSample>, DatasetError> {
    let path = root.join(SAMPLES_FILE);
    let mut out = Vec::new();
    for (line, text) in read_lines(&path)? {
        let rec: SampleRecord = serde_json::from_str(&text).map_err(|e| DatasetError::Manifest {
            line,
            message: e.to_string(),
        })?;
        let s = InstructionSample::from_record(rec).map_err(|e| DatasetError::Manifest {
            line,
            message: e.to_string(),
        })?;
        out.push(s);
    }
    Ok(out)
}

pub fn write_manifest(root: &Path, samples: &[InstructionSample]) -> Result<(), DatasetError> {
    let path = root.join(SAMPLES_FILE);
    let mut f = fs::File::create(&path).map_err(|e| DatasetError::io(&path, e))?;
    for s in samples {
        writeln!(f, "{}", s.to_json_line()).map_err(|e| DatasetError::io(&path, e))?;
    }
    Ok(())
}

/// Samples of one split; files referenced by each sample must exist.
pub fn load_samples(root: &Path, split: Split, fraction: f64) -> Result<Vec<InstructionSample>, DatasetError> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(DatasetError::Config(format!("split fraction {fraction} outside [0, 1]")));
    }
    let all = read_manifest(root)?;
    let train = scene_split(all.iter().map(|s| s.scene_id.as_str()), fraction);
    let mut out = Vec::new();
    for s in all {
        if train.contains(&s.scene_id) != (split == Split::Train) {
            continue;
        }
        for p in std::iter::once(&s.image_path).chain(s.depth_path.as_ref()) {
            if !root.join(p).is_file() {
                return Err(DatasetError::MissingImage(root.join(p)));
            }
        }
        out.push(s);
    }
    Ok(out)
}

/// Generic samples whose scenes fall in the training split; empty when the file is absent.
pub fn load_generic(root: &Path, train_scenes: &HashSet<String>) -> Result<Vec<GenericSample>, DatasetError> {
    let path = root.join(GENERIC_FILE);
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for (line, text) in read_lines(&path)? {
        let g: GenericSample = serde_json::from_str(&text).map_err(|e| DatasetError::Manifest {
            line,
            message: e.to_string(),
        })?;
        if train_scenes.contains(&g.scene_id) {
            out.push(g);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_sizes() {
        let ids: Vec<String> = (0..100).map(|i| format!("scene_{i:04}")).collect();
        let train = scene_split(ids.iter().map(String::as_str), 0.9);
        assert_eq!(train.len(), 90);
        assert_eq!(scene_split(ids.iter().map(String::as_str), 1.0).len(), 100);
        assert_eq!(train, scene_split(ids.iter().rev().map(String::as_str), 0.9));
    }

    #[test]
    fn malformed_line_is_located() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(SAMPLES_FILE), "\n{not json}\n").unwrap();
        match read_manifest(dir.path()) {
            Err(DatasetError::Manifest { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }
}
