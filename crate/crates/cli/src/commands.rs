//! One function per subcommand.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use candle_core::{DType, Device};
use graspreason_core::dataset::{
    build_synthetic_dataset, generate_instructions, graspnet::GraspNetLayout, load_generic, load_samples, scene_split,
    OpenAiClient, Split, SyntheticConfig, TemplateBank, TextGenerator,
};
use graspreason_core::geometry::{GraspPose, RectMetric};
use graspreason_model::baselines::{
    clip_items, detector_items, train_grasp_only, BBox, GraspOnlyModel, Grounder, HttpGrounder, ModularPipeline, OracleGrounder,
    JAW_RATIO,
};
use graspreason_model::config::KeyValues;
use graspreason_model::data::{load_scene_input, ImageCache};
use graspreason_model::eval::{evaluate_model, format_table, render_annotated, EvalReport, TABLE_FILE};
use graspreason_model::model::{GraspPredictor, ModelConfig, ModelKind, ReasoningModel, CONFIG_FILE};
use graspreason_model::train::{build_vocab, prepare_generic_samples, prepare_grasp_samples, train as train_model, TrainData};
use image::RgbImage;
use serde::Serialize;

use crate::config::RunConfig;
use crate::manifest::ManifestWriter;
use crate::{BuildArgs, CliError, CliResult, EvalArgs, GenArgs, GrounderArgs, ImportArgs, PredictArgs, ReportArgs, TrainArgs};

const DTYPE: DType = DType::F32;

pub fn dataset_build(a: &BuildArgs, argv: &[String]) -> CliResult<()> {
    if !a.synthetic {
        log::info!("no source given; building the synthetic dataset");
    }
    let mut m = ManifestWriter::in_dir(&a.out, "dataset build", argv)?;
    let cfg = SyntheticConfig {
        scenes: a.scenes,
        seed: a.seed,
        image_size: a.image_size,
        with_depth: !a.no_depth,
        ..SyntheticConfig::default()
    };
    let summary = build_synthetic_dataset(&cfg, &a.out)?;
    println!("{} samples, {} generic samples in {}", summary.samples, summary.generic_samples, a.out.display());
    let snapshot = serde_json::to_value(&cfg)
        .expect("config serializes")
        .as_object()
        .expect("struct")
        .iter()
        .map(|(k, v)| (k.clone(), v.to_string()))
        .collect();
    m.config(snapshot).seed(a.seed);
    m.finish()?;
    Ok(())
}

pub fn import_graspnet(a: &ImportArgs, argv: &[String]) -> CliResult<()> {
    let out = a.out.clone().unwrap_or_else(|| a.root.clone());
    let mut m = ManifestWriter::in_dir(&out, "dataset import-graspnet", argv)?;
    let layout = GraspNetLayout::new(&a.root, &a.camera);
    let scenes = layout.scan()?;
    let frames: usize = scenes.iter().map(|s| s.frames.len()).sum();
    if frames == 0 {
        return Err(CliError::Data(format!("no RGB frames under {}/scenes/*/{}/rgb", a.root.display(), a.camera)));
    }
    std::fs::create_dir_all(&out).map_err(|e| CliError::Data(format!("{}: {e}", out.display())))?;
    let index = out.join("graspnet_index.json");
    let text = serde_json::to_string_pretty(&scenes).expect("index serializes");
    std::fs::write(&index, text).map_err(|e| CliError::Data(format!("{}: {e}", index.display())))?;
    println!("{} scenes, {frames} frames indexed in {}", scenes.len(), index.display());
    m.config(BTreeMap::from([("root".into(), a.root.display().to_string()), ("camera".into(), a.camera.clone())]));
    m.finish()?;
    Ok(())
}

#[derive(Serialize)]
struct InstructionLine<'a> {
    target: &'a str,
    text: &'a str,
    form: graspreason_core::dataset::InstructionForm,
    provenance: &'a graspreason_core::dataset::Provenance,
}

pub fn gen_instructions(a: &GenArgs) -> CliResult<()> {
    let client = a.llm_endpoint.as_ref().map(|e| OpenAiClient::new(e.clone(), a.llm_model.clone()));
    let llm = client.as_ref().map(|c| c as &dyn TextGenerator);
    let out = generate_instructions(&a.description, &a.parts, &a.target, llm, &TemplateBank::default())?;
    let body: String = out
        .items
        .iter()
        .map(|i| {
            let line = InstructionLine { target: &a.target, text: &i.text, form: i.form, provenance: &out.provenance };
            serde_json::to_string(&line).expect("line serializes") + "\n"
        })
        .collect();
    match &a.out {
        Some(p) => std::fs::write(p, body).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?,
        None => print!("{body}"),
    }
    Ok(())
}

pub fn train(a: &TrainArgs, argv: &[String]) -> CliResult<()> {
    let path = a.config.as_ref().ok_or_else(|| CliError::Config("train needs --config FILE".into()))?;
    let cfg = RunConfig::read(path)?;
    let mut manifest = ManifestWriter::in_dir(&a.out, "train", argv)?;
    manifest.config(cfg.snapshot()).seed(cfg.seed);

    let samples = load_samples(&a.data, Split::Train, cfg.train.split_fraction)?;
    if samples.is_empty() {
        return Err(CliError::Data(format!("{} has no training samples", a.data.display())));
    }
    let scenes = scene_split(samples.iter().map(|s| s.scene_id.as_str()), 1.0);
    let generic = load_generic(&a.data, &scenes)?;
    let vocab = build_vocab(&samples, &generic);
    let cache = ImageCache::new(&a.data, cfg.model.image_size, cfg.model.use_depth, DTYPE, Device::Cpu);
    log::info!("{} training samples from {} scenes, {} generic, vocabulary {}", samples.len(), scenes.len(), generic.len(), vocab.len());

    let started = Instant::now();
    let mut model = ReasoningModel::new(cfg.model.clone(), vocab.clone(), DTYPE, Device::Cpu)?;
    model.apply_adapters()?;
    let grasp = prepare_grasp_samples(&model, &samples, &cache)?;
    let gen = prepare_generic_samples(&model, &generic);
    let data = TrainData { grasp: &grasp, generic: &gen, cache: &cache };
    let out = a.out.join(ModelKind::Reasoning.name());
    train_model(&mut model, &data, &cfg.train, Some(&out), &mut |r, _| {
        if r.step % 100 == 0 {
            log::info!("step {} epoch {} l_text {:.4} l_grasp {:?}", r.step, r.epoch, r.l_text, r.l_grasp);
        }
    })?;
    println!("reasoning model trained in {:.0} s -> {}", started.elapsed().as_secs_f64(), out.join("model").display());

    for &kind in &cfg.baselines {
        let started = Instant::now();
        let mut mc = cfg.model.clone();
        mc.kind = kind;
        let mut b = GraspOnlyModel::new(mc, vocab.clone(), DTYPE, Device::Cpu)?;
        let items = match kind {
            ModelKind::ClipStyle => clip_items(&b, &samples, &cache)?,
            _ => detector_items(&b, &samples, &cache)?,
        };
        let out = a.out.join(kind.name());
        train_grasp_only(&mut b, &items, &cache, &cfg.train, Some(&out), &mut |r| {
            if r.step % 100 == 0 {
                log::info!("{} step {} l_grasp {:?}", kind.name(), r.step, r.l_grasp);
            }
        })?;
        println!("{} baseline trained in {:.0} s -> {}", kind.name(), started.elapsed().as_secs_f64(), out.join("model").display());
    }
    manifest.finish()?;
    Ok(())
}

/// A checkpoint directory, or a training output that holds one in `model/`.
pub fn resolve_checkpoint(dir: &Path) -> CliResult<PathBuf> {
    for c in [dir.to_path_buf(), dir.join("model")] {
        if c.join(CONFIG_FILE).is_file() {
            return Ok(c);
        }
    }
    Err(CliError::Data(format!("{} is not a checkpoint (no {CONFIG_FILE})", dir.display())))
}

enum AnyGrounder {
    Oracle(OracleGrounder),
    Http(HttpGrounder),
}

impl Grounder for AnyGrounder {
    fn ground(&self, image: &RgbImage, prompt: &str, hint: Option<BBox>) -> graspreason_model::Result<String> {
        match self {
            AnyGrounder::Oracle(g) => g.ground(image, prompt, hint),
            AnyGrounder::Http(g) => g.ground(image, prompt, hint),
        }
    }
}

fn grounder(a: &GrounderArgs) -> CliResult<AnyGrounder> {
    match a.grounder.as_str() {
        "oracle" => Ok(AnyGrounder::Oracle(OracleGrounder)),
        "http" => {
            let ep = a
                .grounder_endpoint
                .clone()
                .ok_or_else(|| CliError::Config("--grounder http needs --grounder-endpoint".into()))?;
            Ok(AnyGrounder::Http(HttpGrounder::new(ep, a.grounder_model.clone())))
        }
        g => Err(CliError::Config(format!("unknown grounder {g}; expected oracle or http"))),
    }
}

/// Loads any checkpoint kind as a predictor; detectors run as the modular pipeline.
pub fn load_predictor(ckpt: &Path, g: &GrounderArgs) -> CliResult<(Box<dyn GraspPredictor>, ModelConfig)> {
    let cfg = ModelConfig::from_kv(&KeyValues::read(&ckpt.join(CONFIG_FILE))?)?;
    let p: Box<dyn GraspPredictor> = match cfg.kind {
        ModelKind::Reasoning => Box::new(ReasoningModel::load(ckpt, DTYPE, Device::Cpu)?),
        ModelKind::ClipStyle => Box::new(GraspOnlyModel::load(ckpt, DTYPE, Device::Cpu)?),
        ModelKind::Detector => {
            let mut pipe = ModularPipeline::new(grounder(g)?, GraspOnlyModel::load(ckpt, DTYPE, Device::Cpu)?);
            if let Some(p) = &g.prompt_template {
                pipe.prompt_template = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            }
            Box::new(pipe)
        }
    };
    Ok((p, cfg))
}

pub fn eval(a: &EvalArgs, argv: &[String]) -> CliResult<()> {
    let split = match a.split.as_str() {
        "test" => Split::Test,
        "train" => Split::Train,
        s => return Err(CliError::Config(format!("--split {s}: expected test or train"))),
    };
    let mut manifest = ManifestWriter::in_dir(&a.out, "eval", argv)?;
    let ckpt = resolve_checkpoint(&a.model)?;
    let (predictor, cfg) = load_predictor(&ckpt, &a.grounder)?;
    let samples = load_samples(&a.data, split, a.split_fraction)?;
    let cache = ImageCache::new(&a.data, cfg.image_size, cfg.use_depth, DTYPE, Device::Cpu);
    let report = evaluate_model(predictor.as_ref(), &samples, &cache, &a.k, &RectMetric::default())?;
    report.write(&a.out)?;
    print!("{}", format_table(&report.cells));
    if a.annotate {
        annotate_all(predictor.as_ref(), &samples, &cache, &a.data, &a.out.join("annotated"), *a.k.iter().max().unwrap_or(&1))?;
    }
    let mut snapshot: BTreeMap<String, String> = cfg.to_kv().0.into_iter().map(|(k, v)| (format!("model.{k}"), v)).collect();
    snapshot.insert("checkpoint".into(), ckpt.display().to_string());
    snapshot.insert("split".into(), a.split.clone());
    snapshot.insert("split_fraction".into(), a.split_fraction.to_string());
    snapshot.insert("k".into(), a.k.iter().map(usize::to_string).collect::<Vec<_>>().join(","));
    manifest.config(snapshot).seed(cfg.seed);
    manifest.finish()?;
    Ok(())
}

fn annotate_all(
    predictor: &dyn GraspPredictor,
    samples: &[graspreason_core::dataset::InstructionSample],
    cache: &ImageCache,
    root: &Path,
    dir: &Path,
    k: usize,
) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    for s in samples {
        let scene = cache.for_sample(s)?;
        let pred = match predictor.predict(&scene, &s.instruction, s.target_bbox, k) {
            Ok(p) => p,
            Err(e) => {
                log::warn!("{}: {e}", s.sample_id);
                continue;
            }
        };
        let p = root.join(&s.image_path);
        let img = image::open(&p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?.to_rgb8();
        let (out, _) = render_annotated(&img, &pred.poses, Some(&s.gt_rects), JAW_RATIO, 4)?;
        let f = dir.join(format!("{}.png", s.sample_id));
        out.save(&f).map_err(|e| CliError::Runtime(format!("{}: {e}", f.display())))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct PredictionRecord<'a> {
    instruction: &'a str,
    response: Option<&'a str>,
    target: Option<&'a str>,
    failure: Option<&'a str>,
    poses: &'a [GraspPose<f64>],
}

pub fn predict(a: &PredictArgs, argv: &[String]) -> CliResult<()> {
    let stem = a.out.file_stem().and_then(|s| s.to_str()).unwrap_or("prediction").to_string();
    let mut manifest = ManifestWriter::begin(a.out.with_file_name(format!("{stem}.run_manifest.json")), "predict", argv)?;
    let ckpt = resolve_checkpoint(&a.model)?;
    let (predictor, cfg) = load_predictor(&ckpt, &a.grounder)?;
    if cfg.use_depth {
        return Err(CliError::Config("predict takes a single RGB image; this checkpoint expects depth".into()));
    }
    let hint = match &a.bbox {
        None => None,
        Some(v) if v.len() == 4 => Some([v[0], v[1], v[2], v[3]]),
        Some(v) => return Err(CliError::Config(format!("--bbox needs four numbers, got {}", v.len()))),
    };
    let scene = load_scene_input(Path::new(""), &a.image, None, cfg.image_size, false, DTYPE, &Device::Cpu)?;
    let pred = predictor.predict(&scene, &a.instruction, hint, a.k)?;
    let img = image::open(&a.image).map_err(|e| CliError::Data(format!("{}: {e}", a.image.display())))?.to_rgb8();
    let (out, _) = render_annotated(&img, &pred.poses, None, JAW_RATIO, a.upscale)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    }
    out.save(&a.out).map_err(|e| CliError::Runtime(format!("{}: {e}", a.out.display())))?;
    let rec = PredictionRecord {
        instruction: &a.instruction,
        response: pred.response_text.as_deref(),
        target: pred.target.as_deref(),
        failure: pred.failure.as_deref(),
        poses: &pred.poses,
    };
    let json = a.out.with_extension("json");
    std::fs::write(&json, serde_json::to_string_pretty(&rec).expect("record serializes") + "\n")
        .map_err(|e| CliError::Data(format!("{}: {e}", json.display())))?;
    match (&pred.target, &pred.response_text) {
        (Some(t), _) => println!("target: {t}"),
        (None, Some(r)) => println!("response: {r}"),
        _ => {}
    }
    println!("{} grasps drawn in {}", pred.poses.len(), a.out.display());
    let mut snapshot: BTreeMap<String, String> = cfg.to_kv().0.into_iter().map(|(k, v)| (format!("model.{k}"), v)).collect();
    snapshot.insert("checkpoint".into(), ckpt.display().to_string());
    manifest.config(snapshot).seed(cfg.seed);
    manifest.finish()?;
    Ok(())
}

pub fn report(a: &ReportArgs) -> CliResult<()> {
    let mut cells = Vec::new();
    for d in &a.eval {
        let c = EvalReport::read_cells(d)?;
        // the stored table must agree with the records it was rendered from
        if let Ok(table) = std::fs::read_to_string(d.join(TABLE_FILE)) {
            if table != format_table(&c) {
                return Err(CliError::Data(format!("{} does not match {}", d.join(TABLE_FILE).display(), d.display())));
            }
        }
        cells.extend(c);
    }
    let table = format_table(&cells);
    print!("{table}");
    if let Some(p) = &a.out {
        std::fs::write(p, &table).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
    }
    Ok(())
}
