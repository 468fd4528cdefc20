use std::path::Path;

use clicklift_core::dataio::{read_labels, Stage};
use clicklift_core::error::Error;
use clicklift_core::pipeline::{
    parse_stages, run_pipeline, write_synthetic_dataset, PipelineConfig, PipelineStage, SyntheticDatasetOptions,
    Workspace, REPORT_JSON, REPORT_TXT,
};
use clicklift_core::synthgen::RandomSceneOptions;

fn dataset(dir: &Path, seed: u64, frames: usize) -> PipelineConfig {
    let opts = SyntheticDatasetOptions {
        scene: RandomSceneOptions {
            seed,
            num_frames: frames,
            num_instances: 6,
            ..Default::default()
        },
        ..Default::default()
    };
    PipelineConfig::load(&write_synthetic_dataset(&opts, dir).unwrap()).unwrap()
}

#[test]
fn full_run_writes_every_stage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dataset(dir.path(), 1, 3);
    let summary = run_pipeline(&cfg, &PipelineStage::ALL).unwrap();
    assert_eq!(summary.stages.len(), 4);
    let plg = &summary.stages[0];
    assert_eq!(plg.total, 18);
    assert_eq!(plg.changed, 18);
    for stage in ["plg", "tsu", "ile"] {
        for f in ["000000", "000001", "000002"] {
            let labels = read_labels(&cfg.paths.output.join(stage).join(format!("{f}.labels"))).unwrap();
            assert_eq!(labels.stage.name(), stage);
        }
    }
    assert!(cfg.paths.output.join("plg/000000.outcomes.json").exists());
    assert!(cfg.paths.output.join("ile/000002.updates.json").exists());
    let report = summary.report.unwrap();
    assert_eq!(report.stage, "ile");
    assert!(report.semantic.miou.unwrap() > 0.8, "{report:?}");
    assert!(report.instance.map.unwrap() > 0.5, "{report:?}");
    assert!(report.mean_instance_iou.unwrap() > 0.9);
    let table = std::fs::read_to_string(cfg.paths.output.join(REPORT_TXT)).unwrap();
    assert!(table.contains("mAP") && table.contains("mIoU"));
    assert!(cfg.paths.output.join(REPORT_JSON).exists());
}

#[test]
fn ground_truth_scores_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = dataset(dir.path(), 2, 1);
    cfg.eval_input = Stage::Gt;
    let report = run_pipeline(&cfg, &[PipelineStage::Eval]).unwrap().report.unwrap();
    assert_eq!(report.semantic.miou, Some(1.0));
    assert_eq!(report.instance.map, Some(1.0));
}

#[test]
fn eval_after_plg_reads_plg_labels() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dataset(dir.path(), 3, 2);
    let summary = run_pipeline(&cfg, &parse_stages("plg,eval").unwrap()).unwrap();
    assert_eq!(summary.report.unwrap().stage, "plg");
    assert!(!cfg.paths.output.join("tsu").exists());
}

#[test]
fn missing_predictions_name_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dataset(dir.path(), 4, 3);
    std::fs::remove_dir_all(&cfg.paths.predictions).unwrap();
    let err = run_pipeline(&cfg, &PipelineStage::ALL).unwrap_err();
    match &err {
        Error::MissingInput { stage, path } => {
            assert_eq!(stage, "tsu");
            assert!(path.starts_with(&cfg.paths.predictions), "{}", path.display());
        }
        other => panic!("unexpected {other}"),
    }
    assert!(err.to_string().contains("predictions"));
    // the finished stage keeps its output
    assert!(cfg.paths.output.join("plg/000002.labels").exists());
}

#[test]
fn tsu_alone_needs_plg_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dataset(dir.path(), 5, 2);
    let err = run_pipeline(&cfg, &[PipelineStage::Tsu]).unwrap_err();
    match err {
        Error::MissingInput { stage, path } => {
            assert_eq!(stage, "tsu");
            assert!(path.ends_with("plg/000000.labels"));
        }
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn missing_clicks_and_masks_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dataset(dir.path(), 6, 1);
    std::fs::remove_file(&cfg.paths.clicks).unwrap();
    assert!(matches!(
        run_pipeline(&cfg, &[PipelineStage::Plg]),
        Err(Error::MissingInput { ref path, .. }) if *path == cfg.paths.clicks
    ));
    let mut cfg = cfg;
    cfg.paths.masks = dir.path().join("nowhere");
    assert!(matches!(
        run_pipeline(&cfg, &[PipelineStage::Plg]),
        Err(Error::MissingInput { ref path, .. }) if path.ends_with("nowhere")
    ));
}

#[test]
fn runs_are_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dataset(dir.path(), 7, 3);
    let ws = Workspace::open(cfg.clone()).unwrap();
    ws.run(&PipelineStage::ALL).unwrap();
    let first: Vec<Vec<u8>> = ["plg", "tsu", "ile"]
        .iter()
        .map(|s| std::fs::read(cfg.paths.output.join(s).join("000002.labels")).unwrap())
        .collect();
    let report = std::fs::read(cfg.paths.output.join(REPORT_JSON)).unwrap();
    ws.run(&PipelineStage::ALL).unwrap();
    for (s, bytes) in ["plg", "tsu", "ile"].iter().zip(&first) {
        assert_eq!(
            &std::fs::read(cfg.paths.output.join(s).join("000002.labels")).unwrap(),
            bytes
        );
    }
    assert_eq!(std::fs::read(cfg.paths.output.join(REPORT_JSON)).unwrap(), report);
}
