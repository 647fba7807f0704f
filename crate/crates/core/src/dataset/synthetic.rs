//! Deterministic synthetic dataset: rendered scenes, analytic grasps and
//! templated instructions.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::catalog::{Color, CATALOG};
use super::instructions::{FunctionClass, InstructionForm, TemplateBank};
use super::manifest::{write_manifest, GenericSample, GENERIC_FILE};
use super::sample::{InstructionKind, InstructionSample, Provenance, TargetLevel};
use super::scene::SceneSpec;
use super::DatasetError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub scenes: usize,
    pub seed: u64,
    pub image_size: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub explicit_per_target: usize,
    pub implicit_per_target: usize,
    pub generic_per_scene: usize,
    pub with_depth: bool,
    pub max_attempts: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            scenes: 200,
            seed: 7,
            image_size: 64,
            min_objects: 2,
            max_objects: 3,
            explicit_per_target: 1,
            implicit_per_target: 1,
            generic_per_scene: 2,
            with_depth: true,
            max_attempts: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub config: SyntheticConfig,
    pub samples: usize,
    pub generic_samples: usize,
}

pub const EXPLICIT_TEMPLATES: &[&str] = &[
    "pick up the {t} .",
    "grasp the {t} .",
    "hand me the {t} .",
    "please grab the {t} .",
    "give me the {t} .",
    "can you pass me the {t} ?",
    "take the {t} .",
    "i want the {t} .",
];

pub const COLOR_CUES: &[&str] = &["the {c} one .", "i mean the {c} one .", "it is the {c} one ."];

pub const PART_CUES: &[&str] = &[
    "hold it by {p} .",
    "grab it by {p} .",
    "take it by {p} .",
    "pick it up by {p} .",
];

fn pick<'a, R: Rng>(rng: &mut R, v: &'a [&'a str]) -> &'a str {
    v.choose(rng).expect("non-empty")
}

/// Implicit text for an object (and optionally one of its parts): a function
/// request, a colour cue and, for parts, a description of the part.
pub fn implicit_instruction<R: Rng>(
    rng: &mut R,
    bank: &TemplateBank,
    object: &super::catalog::ObjectSpec,
    color: Color,
    part: Option<usize>,
) -> String {
    let function = pick(rng, object.functions);
    let form = if rng.random_bool(0.5) {
        InstructionForm::Question
    } else {
        InstructionForm::Instruction
    };
    let mut text = bank.sample(rng, FunctionClass::Base, form, function);
    text.push(' ');
    text.push_str(&pick(rng, COLOR_CUES).replace("{c}", color.name()));
    if let Some(k) = part {
        text.push(' ');
        text.push_str(&pick(rng, PART_CUES).replace("{p}", pick(rng, object.parts[k].phrases)));
    }
    text
}

fn generic_for<R: Rng>(rng: &mut R, scene: &SceneSpec) -> (String, String) {
    match rng.random_range(0..3) {
        0 => {
            let o = scene.objects.choose(rng).expect("scene has objects");
            (
                format!("what color is the {} ?", o.object_type),
                format!("it is {} .", o.color.name()),
            )
        }
        1 => (
            "how many objects are on the table ?".into(),
            format!("there are {} objects .", scene.objects.len()),
        ),
        _ => {
            let color = *Color::ALL.choose(rng).expect("colors");
            let ty = CATALOG.choose(rng).expect("catalog").name;
            let present = scene.objects.iter().any(|o| o.color == color && o.object_type == ty);
            (
                format!("is there a {} {ty} ?", color.name()),
                if present { "yes .".into() } else { "no .".into() },
            )
        }
    }
}

fn save_png<P, C>(img: &image::ImageBuffer<P, C>, path: &Path) -> Result<(), DatasetError>
where
    P: image::PixelWithColorType,
    [P::Subpixel]: image::EncodableLayout,
    C: std::ops::Deref<Target = [P::Subpixel]>,
{
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| DatasetError::io(path, e))
}

/// Writes `manifest.jsonl`, `generic.jsonl`, `scenes.jsonl`, `dataset.json`
/// and the `images/` and `depth/` folders under `out`.
pub fn build_synthetic_dataset(cfg: &SyntheticConfig, out: &Path) -> Result<DatasetSummary, DatasetError> {
    if cfg.scenes == 0 || cfg.min_objects == 0 || cfg.min_objects > cfg.max_objects || cfg.max_objects > CATALOG.len() {
        return Err(DatasetError::Config(format!(
            "need scenes > 0 and 1 <= min_objects <= max_objects <= {}",
            CATALOG.len()
        )));
    }
    if cfg.image_size < 32 {
        return Err(DatasetError::Config("image_size must be at least 32".into()));
    }
    for d in ["images", "depth"] {
        fs::create_dir_all(out.join(d)).map_err(|e| DatasetError::io(out.join(d), e))?;
    }
    let bank = TemplateBank::default();
    let mut samples = Vec::new();
    let mut generic = Vec::new();
    let mut scene_lines = String::new();
    for index in 0..cfg.scenes {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(index as u64);
        let count = rng.random_range(cfg.min_objects..=cfg.max_objects);
        let scene = SceneSpec::generate(&mut rng, cfg.image_size, count, cfg.seed, index, cfg.max_attempts)?;
        let scene_id = format!("scene_{index:04}");
        let image_path = PathBuf::from("images").join(format!("{scene_id}.png"));
        save_png(&scene.render_rgb(&mut rng), &out.join(&image_path))?;
        let depth_path = if cfg.with_depth {
            let p = PathBuf::from("depth").join(format!("{scene_id}.png"));
            save_png(&scene.render_depth(), &out.join(&p))?;
            Some(p)
        } else {
            None
        };
        scene_lines.push_str(&serde_json::to_string(&scene).expect("scene serializes"));
        scene_lines.push('\n');

        for (i, obj) in scene.objects.iter().enumerate() {
            let spec = obj.spec();
            let grasps = scene.object_grasps(i);
            let bbox = scene.object_bbox(i);
            let targets = std::iter::once((TargetLevel::Object, None))
                .chain((0..spec.parts.len()).map(|k| (TargetLevel::Part, Some(k))));
            for (level, part) in targets {
                let rects: Vec<_> = match part {
                    None => grasps.iter().flatten().cloned().collect(),
                    Some(k) => grasps[k].clone(),
                };
                if rects.is_empty() {
                    continue;
                }
                let target = match part {
                    None => obj.target_name(),
                    Some(k) => obj.part_target_name(k),
                };
                let mut push = |kind: InstructionKind, instruction: String| {
                    let s = InstructionSample {
                        sample_id: format!("{scene_id}_{:03}", samples.len() % 1000),
                        scene_id: scene_id.clone(),
                        image_path: image_path.clone(),
                        depth_path: depth_path.clone(),
                        instruction,
                        target_name: target.clone(),
                        target_level: level,
                        instruction_kind: kind,
                        gt_rects: rects.clone(),
                        target_bbox: Some(bbox),
                        provenance: Some(Provenance::template()),
                    };
                    samples.push(s);
                };
                for _ in 0..cfg.explicit_per_target {
                    let t = pick(&mut rng, EXPLICIT_TEMPLATES).replace("{t}", &target);
                    push(InstructionKind::Explicit, t);
                }
                for _ in 0..cfg.implicit_per_target {
                    let t = implicit_instruction(&mut rng, &bank, spec, obj.color, part);
                    push(InstructionKind::Implicit, t);
                }
            }
        }
        for _ in 0..cfg.generic_per_scene {
            let (prompt, response) = generic_for(&mut rng, &scene);
            generic.push(GenericSample {
                scene_id: scene_id.clone(),
                image_path: image_path.clone(),
                prompt,
                response,
            });
        }
    }
    // ids are unique within a scene; make them globally readable
    let mut per_scene = std::collections::HashMap::<String, usize>::new();
    for s in &mut samples {
        let n = per_scene.entry(s.scene_id.clone()).or_default();
        s.sample_id = format!("{}_{:02}", s.scene_id, n);
        *n += 1;
        s.validate()?;
    }
    write_manifest(out, &samples)?;
    let generic_text: String = generic
        .iter()
        .map(|g| serde_json::to_string(g).expect("generic serializes") + "\n")
        .collect();
    fs::write(out.join(GENERIC_FILE), generic_text).map_err(|e| DatasetError::io(out.join(GENERIC_FILE), e))?;
    fs::write(out.join("scenes.jsonl"), scene_lines).map_err(|e| DatasetError::io(out.join("scenes.jsonl"), e))?;
    let summary = DatasetSummary {
        config: cfg.clone(),
        samples: samples.len(),
        generic_samples: generic.len(),
    };
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    fs::write(out.join("dataset.json"), json).map_err(|e| DatasetError::io(out.join("dataset.json"), e))?;
    Ok(summary)
}
