//! Token accuracy, R@k over the four instruction cells, reports and annotated images.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use graspreason_core::dataset::{mentions, InstructionKind, InstructionSample, TargetLevel};
use graspreason_core::geometry::{pose_to_rect, GraspPose, GraspRect, RectMetric};
use image::{Rgb, RgbImage};
use imageproc::drawing::draw_line_segment_mut;
use serde::{Deserialize, Serialize};

use crate::data::ImageCache;
use crate::error::{ModelError, Result};
use crate::model::GraspPredictor;
use crate::vlm::extract_target_span;
use crate::vocab::Vocabulary;

pub const REPORT_FILE: &str = "report.jsonl";
pub const TABLE_FILE: &str = "report.txt";
pub const FAILURES_FILE: &str = "failures.jsonl";

fn normalize(s: &str) -> String {
    s.split_whitespace().map(str::to_lowercase).collect::<Vec<_>>().join(" ")
}

/// True iff a target span is found and its text equals the sample's target
/// name after whitespace and case normalisation.
pub fn token_accuracy(pred: &[u32], sample: &InstructionSample, vocab: &Vocabulary) -> bool {
    match extract_target_span(pred, vocab.spt()) {
        Ok(e) => normalize(&vocab.decode(&pred[e.span.start..e.span.end])) == normalize(&sample.target_name),
        Err(_) => false,
    }
}

/// One row of the report: an instruction kind crossed with a target level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub model: String,
    pub kind: InstructionKind,
    pub level: TargetLevel,
    pub count: usize,
    /// Absent for predictors that do not generate text.
    pub token_correct: Option<usize>,
    pub token_accuracy: Option<f64>,
    pub hits: BTreeMap<usize, usize>,
    pub r_at_k: BTreeMap<usize, f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub sample_id: String,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub cells: Vec<CellReport>,
    pub failures: Vec<FailureRecord>,
}

impl EvalReport {
    pub fn cell(&self, kind: InstructionKind, level: TargetLevel) -> Option<&CellReport> {
        self.cells.iter().find(|c| c.kind == kind && c.level == level)
    }

    pub fn r_at(&self, kind: InstructionKind, level: TargetLevel, k: usize) -> Option<f64> {
        self.cell(kind, level)?.r_at_k.get(&k).copied()
    }

    pub fn token_accuracy(&self, kind: InstructionKind) -> Option<f64> {
        let (mut n, mut ok) = (0, 0);
        for c in self.cells.iter().filter(|c| c.kind == kind) {
            n += c.count;
            ok += c.token_correct?;
        }
        (n > 0).then(|| ok as f64 / n as f64)
    }

    /// Writes the per-cell records, the table and the failure list.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| ModelError::io(dir, e))?;
        let mut lines = String::new();
        for c in &self.cells {
            lines.push_str(&serde_json::to_string(c).expect("cell serializes"));
            lines.push('\n');
        }
        let mut fails = String::new();
        for f in &self.failures {
            fails.push_str(&serde_json::to_string(f).expect("failure serializes"));
            fails.push('\n');
        }
        for (name, body) in [(REPORT_FILE, lines), (TABLE_FILE, format_table(&self.cells)), (FAILURES_FILE, fails)] {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(|e| ModelError::io(&p, e))?;
        }
        Ok(())
    }

    /// Reads the cells written by [`EvalReport::write`].
    pub fn read_cells(dir: &Path) -> Result<Vec<CellReport>> {
        let p = dir.join(REPORT_FILE);
        let text = std::fs::read_to_string(&p).map_err(|e| ModelError::io(&p, e))?;
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| ModelError::io(&p, e)))
            .collect()
    }
}

fn pct(v: Option<f64>) -> String {
    v.map_or("-".into(), |v| format!("{:.2}", 100.0 * v))
}

/// Text table with one line per model and cell.
pub fn format_table(cells: &[CellReport]) -> String {
    let ks: Vec<usize> = {
        let mut ks: Vec<usize> = cells.iter().flat_map(|c| c.r_at_k.keys().copied()).collect();
        ks.sort_unstable();
        ks.dedup();
        ks
    };
    let mut out = format!("{:<12} {:<9} {:<7} {:>6} {:>8}", "model", "kind", "level", "n", "token%");
    for k in &ks {
        let _ = write!(out, " {:>8}", format!("R@{k}%"));
    }
    out.push('\n');
    for c in cells {
        let _ = write!(out, "{:<12} {:<9} {:<7} {:>6} {:>8}", c.model, c.kind.name(), c.level.name(), c.count, pct(c.token_accuracy));
        for k in &ks {
            let _ = write!(out, " {:>8}", pct(c.r_at_k.get(k).copied()));
        }
        out.push('\n');
    }
    out
}

const CELLS: [(InstructionKind, TargetLevel); 4] = [
    (InstructionKind::Explicit, TargetLevel::Object),
    (InstructionKind::Explicit, TargetLevel::Part),
    (InstructionKind::Implicit, TargetLevel::Object),
    (InstructionKind::Implicit, TargetLevel::Part),
];

#[derive(Default)]
struct Acc {
    count: usize,
    token: usize,
    hits: BTreeMap<usize, usize>,
}

/// Runs `predictor` on every sample. Samples are visited in id order, so the
/// report depends only on weights and data. Per-sample errors become
/// failures and count as misses.
pub fn evaluate_model(
    predictor: &dyn GraspPredictor,
    samples: &[InstructionSample],
    cache: &ImageCache,
    k_list: &[usize],
    metric: &RectMetric,
) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(ModelError::Domain("evaluation needs at least one sample".into()));
    }
    if k_list.is_empty() || k_list.contains(&0) {
        return Err(ModelError::Domain("k_list must hold positive values".into()));
    }
    let k_max = *k_list.iter().max().expect("non-empty");
    let mut order: Vec<&InstructionSample> = samples.iter().collect();
    order.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    let text = predictor.vocab();
    let mut acc: BTreeMap<(InstructionKind, TargetLevel), Acc> = BTreeMap::new();
    let mut failures = Vec::new();
    for s in order {
        let cell = acc.entry((s.instruction_kind, s.target_level)).or_default();
        cell.count += 1;
        let scene = cache.for_sample(s)?;
        let pred = match predictor.predict(&scene, &s.instruction, s.target_bbox, k_max) {
            Ok(p) => p,
            Err(e) => {
                failures.push(FailureRecord {
                    sample_id: s.sample_id.clone(),
                    kind: match e {
                        ModelError::Grounding(_) => "grounding".into(),
                        _ => "error".into(),
                    },
                    detail: Some(e.to_string()),
                });
                continue;
            }
        };
        if let Some(vocab) = text {
            let ok = pred.response_ids.as_deref().is_some_and(|ids| token_accuracy(ids, s, vocab));
            if ok {
                cell.token += 1;
            } else {
                failures.push(FailureRecord {
                    sample_id: s.sample_id.clone(),
                    kind: pred.failure.clone().unwrap_or_else(|| "wrong_target".into()),
                    detail: pred.response_text.clone(),
                });
            }
        } else if let Some(kind) = &pred.failure {
            failures.push(FailureRecord {
                sample_id: s.sample_id.clone(),
                kind: kind.clone(),
                detail: pred.response_text.clone(),
            });
        }
        for &k in k_list {
            if metric.any_valid_in_top_k(&pred.poses, &s.gt_rects, k)? {
                *cell.hits.entry(k).or_default() += 1;
            }
        }
    }
    let cells = CELLS
        .iter()
        .filter_map(|key| acc.get(key).map(|a| (key, a)))
        .map(|(&(kind, level), a)| CellReport {
            model: predictor.name().to_string(),
            kind,
            level,
            count: a.count,
            token_correct: text.map(|_| a.token),
            token_accuracy: text.map(|_| a.token as f64 / a.count as f64),
            hits: k_list.iter().map(|&k| (k, a.hits.get(&k).copied().unwrap_or(0))).collect(),
            r_at_k: k_list.iter().map(|&k| (k, a.hits.get(&k).copied().unwrap_or(0) as f64 / a.count as f64)).collect(),
        })
        .collect();
    Ok(EvalReport {
        model: predictor.name().to_string(),
        cells,
        failures,
    })
}

/// 3x5 glyphs for the quality labels.
fn glyph(c: char) -> Option<[u8; 5]> {
    Some(match c {
        '0' => [7, 5, 5, 5, 7],
        '1' => [2, 6, 2, 2, 7],
        '2' => [7, 1, 7, 4, 7],
        '3' => [7, 1, 7, 1, 7],
        '4' => [5, 5, 7, 1, 1],
        '5' => [7, 4, 7, 1, 7],
        '6' => [7, 4, 7, 5, 7],
        '7' => [7, 1, 1, 1, 1],
        '8' => [7, 5, 7, 5, 7],
        '9' => [7, 5, 7, 1, 7],
        '.' => [0, 0, 0, 0, 2],
        _ => return None,
    })
}

fn draw_text(img: &mut RgbImage, x: i32, y: i32, text: &str, color: Rgb<u8>) {
    let (w, h) = img.dimensions();
    for (i, c) in text.chars().enumerate() {
        let Some(rows) = glyph(c) else { continue };
        for (r, bits) in rows.iter().enumerate() {
            for b in 0..3 {
                if bits & (4 >> b) != 0 {
                    let (px, py) = (x + 4 * i as i32 + b, y + r as i32);
                    if px >= 0 && py >= 0 && (px as u32) < w && (py as u32) < h {
                        img.put_pixel(px as u32, py as u32, color);
                    }
                }
            }
        }
    }
}

pub const PRED_COLOR: Rgb<u8> = Rgb([255, 40, 40]);
pub const GT_COLOR: Rgb<u8> = Rgb([40, 200, 40]);

fn draw_quad(img: &mut RgbImage, q: &[(i32, i32); 4], color: Rgb<u8>, closing_only: bool) {
    for i in 0..4 {
        // ground truth: only the two jaw edges, so the styles stay apart
        if closing_only && i % 2 == 0 {
            continue;
        }
        let (a, b) = (q[i], q[(i + 1) % 4]);
        draw_line_segment_mut(img, (a.0 as f32, a.1 as f32), (b.0 as f32, b.1 as f32), color);
    }
}

fn quad(rect: &GraspRect<f64>, upscale: f64) -> [(i32, i32); 4] {
    let c = rect.corners();
    std::array::from_fn(|i| ((c[i].x * upscale).round() as i32, (c[i].y * upscale).round() as i32))
}

/// Draws predictions (closed red rectangles with quality labels) and ground
/// truth (green jaw edges) on a copy of `image` enlarged `upscale` times.
/// Returns the image and the pixel corners of each prediction.
pub fn render_annotated(
    image: &RgbImage,
    poses: &[GraspPose<f64>],
    gts: Option<&[GraspRect<f64>]>,
    jaw_ratio: f64,
    upscale: u32,
) -> Result<(RgbImage, Vec<[(i32, i32); 4]>)> {
    let upscale = upscale.max(1);
    let (w, h) = image.dimensions();
    let mut out = if upscale == 1 {
        image.clone()
    } else {
        image::imageops::resize(image, w * upscale, h * upscale, image::imageops::FilterType::Nearest)
    };
    let s = upscale as f64;
    for gt in gts.unwrap_or(&[]) {
        draw_quad(&mut out, &quad(gt, s), GT_COLOR, true);
    }
    let mut corners = Vec::with_capacity(poses.len());
    for p in poses {
        if p.x() < 0.0 || p.y() < 0.0 || p.x() >= w as f64 || p.y() >= h as f64 {
            log::warn!("pose at ({:.1}, {:.1}) lies outside the {w}x{h} image; drawn clipped", p.x(), p.y());
        }
        let q = quad(&pose_to_rect(p, jaw_ratio)?, s);
        draw_quad(&mut out, &q, PRED_COLOR, false);
        let top = q.iter().min_by_key(|c| (c.1, c.0)).expect("four corners");
        draw_text(&mut out, top.0, top.1 - 7, &format!("{:.2}", p.quality()), PRED_COLOR);
        corners.push(q);
    }
    Ok((out, corners))
}

/// Whether `text` names `target` (used to label annotated predictions).
pub fn names_target(text: &str, target: &str) -> bool {
    mentions(text, target)
}
