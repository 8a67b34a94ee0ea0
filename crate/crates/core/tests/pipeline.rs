use std::collections::BTreeMap;
use std::path::Path;

use cam_forge::metrics::MetricOptions;
use cam_forge::pipeline::{
    cmd_eval, cmd_fuse, cmd_infer, cmd_run, cmd_schedule, cmd_synth, cmd_train, eval_mask_dirs, Report, RunConfig,
    Variant,
};

fn small(out: &Path) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.paths.out_dir = out.to_path_buf();
    cfg.corpus.num_images = 20;
    cfg.held_out = 6;
    cfg.train_pairs = 12;
    cfg.train.epochs = 3;
    cfg.train.batch_size = 4;
    cfg.seed = 5;
    cfg
}

/// Every file under `dir` except the timing log, by relative path.
fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "timing.json" {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn step_by_step_pipeline_writes_a_valid_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    let index = cmd_synth(&cfg).unwrap();
    assert_eq!(index.images.len(), 20);
    cmd_fuse(&cfg).unwrap();
    let record = cmd_train(&cfg).unwrap();
    assert_eq!(record.pairs.len(), 12);
    assert_eq!(record.epochs.len(), 3);
    cmd_infer(&cfg).unwrap();
    let report = cmd_eval(&cfg).unwrap();
    report.validate().unwrap();
    assert_eq!(report.evaluated_images.len(), 6);
    assert_eq!(report.num_classes, 6);

    let text = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
    let parsed: Report = serde_json::from_str(&text).unwrap();
    assert_eq!(parsed, report);
    let raw: serde_json::Value = serde_json::from_str(&text).unwrap();
    for v in Variant::ALL {
        assert!(raw["variants"][v.name()]["miou"].is_number(), "{} missing", v.name());
    }
    assert!(raw["config"].get("paths").is_none());
    assert!(raw.get("wall_clock").is_none());
    let timing: BTreeMap<String, f64> =
        serde_json::from_slice(&std::fs::read(dir.path().join("timing.json")).unwrap()).unwrap();
    assert!(timing.contains_key("train") && timing.contains_key("eval"));

    // Training never saw the held-out images.
    let held: Vec<&String> = report.evaluated_images.iter().collect();
    assert!(record.pairs.iter().all(|(id, _)| !held.contains(&id)));

    let manifest = cmd_schedule(&cfg).unwrap();
    assert_eq!(manifest.epochs.iter().map(|e| e.factor).collect::<Vec<_>>(), [8, 8, 4, 4, 2, 2, 1]);
    assert_eq!(manifest.epochs[0].height, 4);
    let sample = dir
        .path()
        .join("schedule/epoch_001/masks")
        .join(format!("{}.png", manifest.images[0]));
    assert_eq!(cam_forge::io::read_mask_png(sample).unwrap().shape(), (4, 4));
}

#[test]
fn reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = cmd_run(&small(a.path())).unwrap();
    let rb = cmd_run(&small(b.path())).unwrap();
    assert_eq!(ra, rb);
    let first = snapshot(a.path());
    assert_eq!(first, snapshot(b.path()));
    // Overwriting in place gives the same bytes too.
    cmd_run(&small(a.path())).unwrap();
    assert_eq!(first, snapshot(a.path()));
}

#[test]
fn ground_truth_against_itself_scores_100() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    cmd_synth(&cfg).unwrap();
    let gt = cfg.corpus_dir().join("gt");
    let r = eval_mask_dirs(&gt, &gt, None, MetricOptions::default()).unwrap();
    assert_eq!(r.images.len(), 20);
    assert_eq!((r.metrics.miou, r.metrics.mean_precision, r.metrics.mean_recall), (100.0, 100.0, 100.0));
}

#[test]
fn mask_dir_eval_needs_matching_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    cmd_synth(&cfg).unwrap();
    let empty = dir.path().join("empty");
    std::fs::create_dir_all(&empty).unwrap();
    let gt = cfg.corpus_dir().join("gt");
    let err = eval_mask_dirs(&empty, &gt, None, MetricOptions::default()).unwrap_err();
    assert_eq!(err.exit_code(), 5);
}

#[test]
fn invalid_config_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.bg_threshold = 1.5;
    assert_eq!(cmd_synth(&cfg).unwrap_err().exit_code(), 3);
    let mut cfg = small(dir.path());
    cfg.corpus.height = 30;
    assert_eq!(cmd_synth(&cfg).unwrap_err().exit_code(), 3);
}
