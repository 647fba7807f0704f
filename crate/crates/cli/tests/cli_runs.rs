//! Drives the command line on a tiny dataset.

use std::path::Path;
use std::sync::OnceLock;

use graspreason_cli::dispatch;
use graspreason_cli::manifest::{read_manifest, MANIFEST_FILE};
use graspreason_core::geometry::default_width_max;
use graspreason_model::eval::TABLE_FILE;
use tempfile::TempDir;

fn cli(args: &[&str]) -> i32 {
    let mut argv = vec!["graspreason"];
    argv.extend_from_slice(args);
    dispatch(argv)
}

fn s(p: &Path) -> String {
    p.display().to_string()
}

fn tiny_conf(dir: &Path) -> String {
    let text = format!(
        "baselines = clip_style\nseed = 5\n\
         model.image_size = 32\nmodel.hidden_dim = 16\nmodel.layers = 1\nmodel.heads = 2\nmodel.mlp_ratio = 2\n\
         model.vision_patch = 16\nmodel.max_seq = 64\nmodel.adapter_rank = 4\nmodel.adapter_alpha = 4\n\
         model.fusion_dim = 8\nmodel.base_channels = 2\nmodel.residual_blocks = 1\nmodel.first_kernel = 3\n\
         model.width_max = {}\nmodel.text_dim = 8\nmodel.max_new_tokens = 16\nmodel.peak_distance = 2\n\
         train.epochs = 2\ntrain.freeze_epoch = 2\ntrain.batch_size = 4\ntrain.split_fraction = 0.8\n",
        default_width_max(32)
    );
    let p = dir.join("tiny.conf");
    std::fs::write(&p, text).unwrap();
    s(&p)
}

/// Dataset, training output and one evaluation, shared by the tests.
struct Run {
    dir: TempDir,
}

impl Run {
    fn path(&self, p: &str) -> String {
        s(&self.dir.path().join(p))
    }
}

fn run() -> &'static Run {
    static RUN: OnceLock<Run> = OnceLock::new();
    RUN.get_or_init(|| {
        let r = Run { dir: tempfile::tempdir().unwrap() };
        assert_eq!(cli(&["dataset", "build", "--synthetic", "--scenes", "5", "--seed", "3", "--image-size", "32", "--no-depth", "--out", &r.path("data")]), 0);
        let conf = tiny_conf(r.dir.path());
        assert_eq!(cli(&["train", "--config", &conf, "--data", &r.path("data"), "--out", &r.path("run")]), 0);
        assert_eq!(
            cli(&["eval", "--model", &r.path("run/reasoning"), "--data", &r.path("data"), "--out", &r.path("eval"), "--split-fraction", "0.8"]),
            0
        );
        r
    })
}

#[test]
fn train_without_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(cli(&["train", "--data", &s(dir.path()), "--out", &s(&dir.path().join("o"))]), 2);
    let err = graspreason_cli::commands::train(
        &graspreason_cli::TrainArgs { config: None, data: dir.path().into(), out: dir.path().join("o") },
        &[],
    )
    .unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("--config"), "{err}");
}

#[test]
fn unknown_subcommands_and_flags_exit_two() {
    assert_eq!(cli(&["frobnicate"]), 2);
    assert_eq!(cli(&["eval", "--bogus"]), 2);
    assert_eq!(cli(&["--help"]), 0);
}

#[test]
fn missing_data_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let conf = tiny_conf(dir.path());
    assert_eq!(cli(&["train", "--config", &conf, "--data", &s(&dir.path().join("nowhere")), "--out", &s(&dir.path().join("o"))]), 3);
    assert_eq!(cli(&["report", &s(&dir.path().join("nowhere"))]), 3);
}

#[test]
fn typo_in_config_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.conf");
    std::fs::write(&p, "model.hiden_dim = 16\n").unwrap();
    assert_eq!(cli(&["train", "--config", &s(&p), "--data", &s(dir.path()), "--out", &s(&dir.path().join("o"))]), 2);
}

#[test]
fn every_command_leaves_a_manifest() {
    let r = run();
    for (dir, command) in [("data", "dataset build"), ("run", "train"), ("eval", "eval")] {
        let m = read_manifest(&r.dir.path().join(dir).join(MANIFEST_FILE)).unwrap();
        assert_eq!(m.command, command);
        assert!(m.finished_unix >= m.started_unix);
        assert_eq!(m.argv[0], "graspreason");
    }
    let m = read_manifest(&r.dir.path().join("run").join(MANIFEST_FILE)).unwrap();
    assert_eq!(m.seed, Some(5));
    assert_eq!(m.config["model.hidden_dim"], "16");
    assert!(r.dir.path().join("run/reasoning/model").is_dir());
    assert!(r.dir.path().join("run/clip_style/model").is_dir());
    assert!(r.dir.path().join("run/reasoning/metrics.jsonl").is_file());
}

#[test]
fn reruns_into_a_used_directory_are_refused() {
    let r = run();
    let code = cli(&["eval", "--model", &r.path("run/reasoning"), "--data", &r.path("data"), "--out", &r.path("eval"), "--split-fraction", "0.8"]);
    assert_eq!(code, 2);
}

#[test]
fn report_checks_the_stored_table() {
    let r = run();
    let out = r.dir.path().join("table.txt");
    assert_eq!(cli(&["report", &r.path("eval"), "--out", &s(&out)]), 0);
    assert_eq!(std::fs::read_to_string(&out).unwrap(), std::fs::read_to_string(r.dir.path().join("eval").join(TABLE_FILE)).unwrap());

    let tampered = r.dir.path().join("tampered");
    std::fs::create_dir_all(&tampered).unwrap();
    for e in std::fs::read_dir(r.dir.path().join("eval")).unwrap() {
        let e = e.unwrap();
        std::fs::copy(e.path(), tampered.join(e.file_name())).unwrap();
    }
    let t = tampered.join(TABLE_FILE);
    let text = std::fs::read_to_string(&t).unwrap().replacen("reasoning", "reasonin ", 1);
    std::fs::write(&t, text).unwrap();
    assert_eq!(cli(&["report", &s(&tampered)]), 3);
}

#[test]
fn predict_writes_image_json_and_manifest() {
    let r = run();
    let image = std::fs::read_dir(r.dir.path().join("data"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.is_dir() && p.file_name().unwrap() != "run")
        .and_then(|d| walk_png(&d))
        .expect("a scene image");
    let out = r.dir.path().join("pred").join("grasp.png");
    std::fs::create_dir_all(out.parent().unwrap()).unwrap();
    let code = cli(&["predict", "--model", &r.path("run/reasoning"), "--image", &s(&image), "--instruction", "pick up the red mug", "--out", &s(&out), "--upscale", "2"]);
    assert_eq!(code, 0);
    assert!(out.is_file());
    let rec: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.with_extension("json")).unwrap()).unwrap();
    assert!(rec.is_object());
    assert!(out.with_file_name(format!("grasp.{MANIFEST_FILE}")).is_file());
}

fn walk_png(dir: &Path) -> Option<std::path::PathBuf> {
    let mut entries: Vec<_> = std::fs::read_dir(dir).ok()?.map(|e| e.unwrap().path()).collect();
    entries.sort();
    for p in entries {
        if p.extension().is_some_and(|e| e == "png") && !p.to_string_lossy().contains("depth") {
            return Some(p);
        }
        if p.is_dir() {
            if let Some(f) = walk_png(&p) {
                return Some(f);
            }
        }
    }
    None
}
