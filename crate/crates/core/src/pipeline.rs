//! Stage orchestration over a sequence on disk: PLG, TSU, ILE and evaluation,
//! with a JSON configuration layered over built-in defaults.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::clicksim::{simulate_frame_clicks, ClickAnnotation};
use crate::dataio::{
    read_clicks, read_json, read_labels, read_predictions, write_clicks, write_json, write_labels, write_predictions,
    PointCloudFrame, PredictedInstanceRecord, PredictionSet, PseudoLabelSet, Sequence, Stage,
};
use crate::error::{Error, Result};
use crate::ile::{enhance_frame, IleConfig, InstanceUpdate};
use crate::maskprovider::{load_mask_dir, FileMaskProvider, MaskNoise, MaskProvider, SyntheticOracle};
use crate::metrics::{instance_ap, label_quality, scene_from_labels, semantic_miou, EvalReport};
use crate::plg::{generate_pseudo_label, FrameContext, PlgConfig, PlgOutcome};
use crate::synthgen::{generate_sequence, random_scene, write_sequence, RandomSceneOptions};
use crate::teacher::{synthesize_instances, synthesize_predictions};
use crate::tsu::{build_voting_space, update_labels, AdjacentFrame, TsuConfig};

pub const DEFAULT_CONFIG: &str = include_str!("../../../configs/default_pipeline.json");
pub const CONFIG_FILE: &str = "config.json";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TXT: &str = "report.txt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathsConfig {
    pub manifest: PathBuf,
    /// JSON Lines, one click per line.
    pub clicks: PathBuf,
    pub masks: PathBuf,
    /// `<frame_id>.pred` files.
    pub predictions: PathBuf,
    /// `<frame_id>.json` predicted-instance lists.
    pub instances: PathBuf,
    pub output: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MaskSource {
    File,
    Synthetic(MaskNoise),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClickConfig {
    pub error_range: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsConfig {
    pub iou_thresholds: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: PathsConfig,
    pub mask_source: MaskSource,
    pub clicks: ClickConfig,
    pub plg: PlgConfig,
    pub tsu: TsuConfig,
    pub ile: IleConfig,
    pub metrics: MetricsConfig,
    pub seed: u64,
    /// Labels ILE reads when TSU is not part of the run.
    pub ile_input: Stage,
    /// Labels evaluation reads when no label stage is part of the run.
    pub eval_input: Stage,
}

fn default_value() -> Value {
    serde_json::from_str(DEFAULT_CONFIG).expect("built-in default configuration is valid JSON")
}

/// Objects merge key by key; anything else in `overlay` replaces `base`.
pub fn merge_json(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge_json(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        serde_json::from_value(default_value()).expect("built-in default configuration deserializes")
    }
}

impl PipelineConfig {
    /// Layers `overlay` over the defaults. Relative paths stay relative.
    pub fn from_overlay(overlay: Value) -> Result<Self> {
        let mut v = default_value();
        merge_json(&mut v, overlay);
        let cfg: PipelineConfig =
            serde_json::from_value(v).map_err(|e| Error::Config(format!("invalid pipeline configuration: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a configuration file; relative paths resolve against its
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let overlay: Value = serde_json::from_str(&text).map_err(|e| Error::format(path, 0, e.to_string()))?;
        let mut cfg = Self::from_overlay(overlay)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.paths.resolve_against(base);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.plg.validate()?;
        self.tsu.validate()?;
        self.ile.validate()?;
        if !(self.clicks.error_range >= 0.0 && self.clicks.error_range.is_finite()) {
            return Err(Error::Config(
                "click error range must be finite and non-negative".into(),
            ));
        }
        if self.metrics.iou_thresholds.is_empty()
            || self.metrics.iou_thresholds.iter().any(|t| !(*t > 0.0 && *t <= 1.0))
        {
            return Err(Error::Config("IoU thresholds must be non-empty and in (0, 1]".into()));
        }
        if matches!(self.ile_input, Stage::Ile) {
            return Err(Error::Config("ILE cannot read its own output".into()));
        }
        Ok(())
    }

    /// PLG settings with the prompt radius widened to the click error range.
    pub fn effective_plg(&self) -> PlgConfig {
        let mut plg = self.plg.clone();
        plg.prompt_radius = plg.prompt_radius.max(self.clicks.error_range);
        plg
    }

    pub fn stage_dir(&self, stage: PipelineStage) -> PathBuf {
        self.paths.output.join(stage.name())
    }
}

impl PathsConfig {
    pub fn resolve_against(&mut self, base: &Path) {
        for p in [
            &mut self.manifest,
            &mut self.clicks,
            &mut self.masks,
            &mut self.predictions,
            &mut self.instances,
            &mut self.output,
        ] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PipelineStage {
    Plg,
    Tsu,
    Ile,
    Eval,
}

impl PipelineStage {
    pub const ALL: [PipelineStage; 4] = [
        PipelineStage::Plg,
        PipelineStage::Tsu,
        PipelineStage::Ile,
        PipelineStage::Eval,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PipelineStage::Plg => "plg",
            PipelineStage::Tsu => "tsu",
            PipelineStage::Ile => "ile",
            PipelineStage::Eval => "eval",
        }
    }

    fn label_stage(self) -> Option<Stage> {
        match self {
            PipelineStage::Plg => Some(Stage::Plg),
            PipelineStage::Tsu => Some(Stage::Tsu),
            PipelineStage::Ile => Some(Stage::Ile),
            PipelineStage::Eval => None,
        }
    }
}

impl fmt::Display for PipelineStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PipelineStage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "plg" => Ok(PipelineStage::Plg),
            "tsu" => Ok(PipelineStage::Tsu),
            "ile" => Ok(PipelineStage::Ile),
            "eval" => Ok(PipelineStage::Eval),
            other => Err(Error::Config(format!("unknown stage `{other}`"))),
        }
    }
}

/// Parses a comma-separated stage list into execution order, dropping
/// duplicates.
pub fn parse_stages(list: &str) -> Result<Vec<PipelineStage>> {
    let mut stages = list
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(str::parse)
        .collect::<Result<Vec<PipelineStage>>>()?;
    if stages.is_empty() {
        return Err(Error::Config("no stages requested".into()));
    }
    stages.sort();
    stages.dedup();
    Ok(stages)
}

/// Label stage a step reads: the latest requested stage before it, else the
/// configured fallback.
fn input_stage(requested: &[PipelineStage], before: PipelineStage, fallback: Stage) -> Stage {
    requested
        .iter()
        .filter(|s| **s < before)
        .filter_map(|s| s.label_stage())
        .next_back()
        .unwrap_or(fallback)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageSummary {
    pub stage: PipelineStage,
    pub frames: usize,
    pub input: Option<Stage>,
    /// Stage-specific counter: accepted clicks, relabelled points or
    /// replaced instances.
    pub changed: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineSummary {
    pub stages: Vec<StageSummary>,
    pub report: Option<EvalReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClickResult {
    pub instance_id: i32,
    pub class_id: i32,
    #[serde(flatten)]
    pub outcome: PlgOutcome,
}

fn require(stage: &str, path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingInput {
            stage: stage.to_string(),
            path: path.to_path_buf(),
        })
    }
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Opened sequence plus every frame, loaded once per run.
pub struct Workspace {
    pub cfg: PipelineConfig,
    pub sequence: Sequence,
    pub frames: Vec<PointCloudFrame>,
}

impl Workspace {
    pub fn open(cfg: PipelineConfig) -> Result<Self> {
        require("load", &cfg.paths.manifest)?;
        let sequence = Sequence::open(&cfg.paths.manifest)?;
        let frames = (0..sequence.len())
            .into_par_iter()
            .map(|i| sequence.load_frame(i))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { cfg, sequence, frames })
    }

    pub fn num_classes(&self) -> usize {
        self.sequence.manifest.classes.len()
    }

    pub fn frame_ids(&self) -> Vec<&str> {
        self.frames.iter().map(|f| f.frame_id.as_str()).collect()
    }

    pub fn labels_path(&self, stage: Stage, index: usize) -> PathBuf {
        let frame = &self.sequence.manifest.frames[index];
        match stage {
            Stage::Gt => match &frame.gt_file {
                Some(f) => self.sequence.resolve(f),
                None => self.cfg.paths.manifest.clone(),
            },
            s => self
                .cfg
                .paths
                .output
                .join(s.name())
                .join(format!("{}.labels", frame.frame_id)),
        }
    }

    pub fn predictions_path(&self, index: usize) -> PathBuf {
        self.cfg
            .paths
            .predictions
            .join(format!("{}.pred", self.frames[index].frame_id))
    }

    pub fn instances_path(&self, index: usize) -> PathBuf {
        self.cfg
            .paths
            .instances
            .join(format!("{}.json", self.frames[index].frame_id))
    }

    pub fn gt(&self, consumer: &str, index: usize) -> Result<&PseudoLabelSet> {
        self.frames[index].gt.as_ref().ok_or_else(|| Error::MissingInput {
            stage: consumer.to_string(),
            path: self.labels_path(Stage::Gt, index),
        })
    }

    /// Reads the labels `consumer` needs for frame `index`.
    pub fn read_stage_labels(&self, consumer: &str, stage: Stage, index: usize) -> Result<PseudoLabelSet> {
        if stage == Stage::Gt {
            return self.gt(consumer, index).cloned();
        }
        let path = self.labels_path(stage, index);
        require(consumer, &path)?;
        let labels = read_labels(&path)?;
        if labels.len() != self.frames[index].len() {
            return Err(Error::format(
                &path,
                0,
                format!("{} labels for {} points", labels.len(), self.frames[index].len()),
            ));
        }
        Ok(labels)
    }

    pub fn mask_provider(&self) -> Result<Box<dyn MaskProvider + Send + Sync>> {
        require("plg", &self.cfg.paths.masks)?;
        let ids = self.frame_ids();
        Ok(match self.cfg.mask_source {
            MaskSource::File => Box::new(FileMaskProvider::from_dir(&self.cfg.paths.masks, ids)?),
            MaskSource::Synthetic(noise) => {
                Box::new(SyntheticOracle::new(load_mask_dir(&self.cfg.paths.masks, ids)?, noise))
            }
        })
    }

    /// Clicks grouped per frame, in file order.
    fn clicks_by_frame(&self) -> Result<Vec<Vec<ClickAnnotation>>> {
        require("plg", &self.cfg.paths.clicks)?;
        let mut grouped = vec![Vec::new(); self.frames.len()];
        for click in read_clicks(&self.cfg.paths.clicks)? {
            let index = self
                .sequence
                .manifest
                .frame_index(&click.frame_id)
                .ok_or_else(|| Error::Lookup(format!("click refers to unknown frame `{}`", click.frame_id)))?;
            click.validate(self.num_classes())?;
            grouped[index].push(click);
        }
        Ok(grouped)
    }

    pub fn run_plg(&self) -> Result<StageSummary> {
        let provider = self.mask_provider()?;
        let clicks = self.clicks_by_frame()?;
        let plg = self.cfg.effective_plg();
        let calibration = self.sequence.manifest.calibration.clone();
        let results = self
            .frames
            .par_iter()
            .zip(&clicks)
            .map(|(frame, clicks)| {
                let ctx = FrameContext::new(frame.frame_id.clone(), frame.positions(), calibration.clone())?;
                let mut labels = PseudoLabelSet::ignored(Stage::Plg, frame.len());
                let mut results = Vec::with_capacity(clicks.len());
                for click in clicks {
                    let outcome = generate_pseudo_label(&ctx, click, provider.as_ref(), &plg)?;
                    // earlier clicks keep the points they claimed
                    for &i in &outcome.label_indices {
                        if labels.instance_ids[i] == crate::dataio::IGNORE {
                            labels.class_ids[i] = click.class_id;
                            labels.instance_ids[i] = click.instance_id;
                            labels.confidences[i] = 1.0;
                        }
                    }
                    results.push(ClickResult {
                        instance_id: click.instance_id,
                        class_id: click.class_id,
                        outcome,
                    });
                }
                Ok((labels, results))
            })
            .collect::<Result<Vec<_>>>()?;

        let dir = self.cfg.stage_dir(PipelineStage::Plg);
        create_dir(&dir)?;
        let (mut accepted, mut total) = (0, 0);
        for (index, (labels, outcomes)) in results.iter().enumerate() {
            write_labels(&self.labels_path(Stage::Plg, index), labels)?;
            write_json(
                &dir.join(format!("{}.outcomes.json", self.frames[index].frame_id)),
                outcomes,
            )?;
            accepted += outcomes.iter().filter(|r| r.outcome.is_accepted()).count();
            total += outcomes.len();
        }
        Ok(StageSummary {
            stage: PipelineStage::Plg,
            frames: self.frames.len(),
            input: None,
            changed: accepted,
            total,
        })
    }

    fn load_predictions(&self, consumer: &str, index: usize) -> Result<PredictionSet> {
        let path = self.predictions_path(index);
        require(consumer, &path)?;
        let pred = read_predictions(&path)?;
        if pred.len() != self.frames[index].len() || pred.num_classes != self.num_classes() {
            return Err(Error::format(
                &path,
                0,
                format!(
                    "{} x {} scores for {} points and {} classes",
                    pred.len(),
                    pred.num_classes,
                    self.frames[index].len(),
                    self.num_classes()
                ),
            ));
        }
        Ok(pred)
    }

    pub fn run_tsu(&self, input: Stage) -> Result<StageSummary> {
        let n_adj = self.cfg.tsu.adjacent_frames;
        let needed: Vec<usize> = if n_adj == 0 {
            Vec::new()
        } else {
            (0..self.frames.len().saturating_sub(1)).collect()
        };
        let predictions: HashMap<usize, PredictionSet> = needed
            .iter()
            .map(|&i| Ok((i, self.load_predictions("tsu", i)?)))
            .collect::<Result<_>>()?;
        let positions: Vec<Vec<_>> = self.frames.iter().map(PointCloudFrame::positions).collect();
        let inputs = (0..self.frames.len())
            .map(|t| self.read_stage_labels("tsu", input, t))
            .collect::<Result<Vec<_>>>()?;
        let updated = (0..self.frames.len())
            .into_par_iter()
            .map(|t| {
                let adjacent: Vec<AdjacentFrame<'_>> = (t.saturating_sub(n_adj)..t)
                    .map(|j| AdjacentFrame {
                        points: &positions[j],
                        predictions: &predictions[&j],
                        pose: self.frames[j].pose,
                    })
                    .collect();
                let space = build_voting_space(&adjacent, &self.frames[t].pose, self.num_classes(), &self.cfg.tsu)?;
                update_labels(&positions[t], &inputs[t], &space)
            })
            .collect::<Result<Vec<_>>>()?;

        create_dir(&self.cfg.stage_dir(PipelineStage::Tsu))?;
        let mut changed = 0;
        for (t, labels) in updated.iter().enumerate() {
            write_labels(&self.labels_path(Stage::Tsu, t), labels)?;
            changed += labels
                .class_ids
                .iter()
                .zip(&inputs[t].class_ids)
                .filter(|(a, b)| a != b)
                .count();
        }
        Ok(StageSummary {
            stage: PipelineStage::Tsu,
            frames: self.frames.len(),
            input: Some(input),
            changed,
            total: positions.iter().map(Vec::len).sum(),
        })
    }

    pub fn run_ile(&self, input: Stage) -> Result<StageSummary> {
        let work = (0..self.frames.len())
            .map(|t| {
                let labels = self.read_stage_labels("ile", input, t)?;
                let path = self.instances_path(t);
                require("ile", &path)?;
                let predicted: Vec<PredictedInstanceRecord> = read_json(&path)?;
                Ok((labels, predicted))
            })
            .collect::<Result<Vec<_>>>()?;
        let results = work
            .par_iter()
            .enumerate()
            .map(|(t, (labels, predicted))| {
                enhance_frame(&self.frames[t].positions(), labels, predicted, &self.cfg.ile)
            })
            .collect::<Result<Vec<(PseudoLabelSet, Vec<InstanceUpdate>)>>>()?;

        let dir = self.cfg.stage_dir(PipelineStage::Ile);
        create_dir(&dir)?;
        let (mut replaced, mut total) = (0, 0);
        for (t, (labels, updates)) in results.iter().enumerate() {
            write_labels(&self.labels_path(Stage::Ile, t), labels)?;
            write_json(&dir.join(format!("{}.updates.json", self.frames[t].frame_id)), updates)?;
            replaced += updates.iter().filter(|u| u.replaced).count();
            total += updates.len();
        }
        Ok(StageSummary {
            stage: PipelineStage::Ile,
            frames: self.frames.len(),
            input: Some(input),
            changed: replaced,
            total,
        })
    }

    /// Scores `input` labels against ground truth over the whole sequence.
    pub fn evaluate(&self, input: Stage) -> Result<EvalReport> {
        let labels = (0..self.frames.len())
            .map(|t| self.read_stage_labels("eval", input, t))
            .collect::<Result<Vec<_>>>()?;
        self.evaluate_labels(input.name(), &labels)
    }

    /// Scores one label set per frame against ground truth.
    pub fn evaluate_labels(&self, stage: &str, labels: &[PseudoLabelSet]) -> Result<EvalReport> {
        if labels.len() != self.frames.len() {
            return Err(Error::Input(format!(
                "{} label sets for {} frames",
                labels.len(),
                self.frames.len()
            )));
        }
        let num_classes = self.num_classes();
        let mut pred_classes = Vec::new();
        let mut gt_classes = Vec::new();
        let mut scenes = Vec::with_capacity(self.frames.len());
        let mut ious = Vec::new();
        for (t, labels) in labels.iter().enumerate() {
            let gt = self.gt("eval", t)?;
            if labels.len() != gt.len() {
                return Err(Error::Input(format!(
                    "frame #{t}: {} labels for {} points",
                    labels.len(),
                    gt.len()
                )));
            }
            pred_classes.extend_from_slice(&labels.class_ids);
            gt_classes.extend_from_slice(&gt.class_ids);
            scenes.push(scene_from_labels(labels, gt));
            ious.extend(
                label_quality(labels, gt, num_classes)?
                    .instances
                    .into_iter()
                    .map(|q| q.iou),
            );
        }
        let semantic = semantic_miou(&pred_classes, &gt_classes, num_classes)?;
        let instance = instance_ap(&scenes, num_classes, &self.cfg.metrics.iou_thresholds)?;
        Ok(EvalReport {
            stage: stage.to_string(),
            classes: self.sequence.manifest.classes.clone(),
            frames: self.frames.len(),
            instance,
            semantic,
            mean_instance_iou: (!ious.is_empty()).then(|| ious.iter().sum::<f64>() / ious.len() as f64),
        })
    }

    pub fn run_eval(&self, input: Stage) -> Result<(StageSummary, EvalReport)> {
        let report = self.evaluate(input)?;
        create_dir(&self.cfg.paths.output)?;
        write_json(&self.cfg.paths.output.join(REPORT_JSON), &report)?;
        let txt = self.cfg.paths.output.join(REPORT_TXT);
        std::fs::write(&txt, report.to_table()).map_err(|e| Error::io(&txt, e))?;
        let summary = StageSummary {
            stage: PipelineStage::Eval,
            frames: self.frames.len(),
            input: Some(input),
            changed: 0,
            total: 0,
        };
        Ok((summary, report))
    }

    /// Runs `stages` in order. A failing stage returns its error; outputs of
    /// stages that already finished stay on disk.
    pub fn run(&self, stages: &[PipelineStage]) -> Result<PipelineSummary> {
        let mut requested = stages.to_vec();
        requested.sort();
        requested.dedup();
        let mut summary = PipelineSummary {
            stages: Vec::new(),
            report: None,
        };
        for &stage in &requested {
            let s = match stage {
                PipelineStage::Plg => self.run_plg()?,
                PipelineStage::Tsu => self.run_tsu(input_stage(&requested, stage, Stage::Plg))?,
                PipelineStage::Ile => self.run_ile(input_stage(&requested, stage, self.cfg.ile_input))?,
                PipelineStage::Eval => {
                    let (s, report) = self.run_eval(input_stage(&requested, stage, self.cfg.eval_input))?;
                    summary.report = Some(report);
                    s
                }
            };
            match s.stage {
                PipelineStage::Eval => log::info!("eval done over {} frames", s.frames),
                _ => log::info!(
                    "{} done: {} of {} over {} frames",
                    s.stage,
                    s.changed,
                    s.total,
                    s.frames
                ),
            }
            summary.stages.push(s);
        }
        Ok(summary)
    }
}

pub fn run_pipeline(cfg: &PipelineConfig, stages: &[PipelineStage]) -> Result<PipelineSummary> {
    Workspace::open(cfg.clone())?.run(stages)
}

/// Writes one simulated click per ground-truth instance to the configured
/// clicks file and returns the clicks.
pub fn simulate_clicks(cfg: &PipelineConfig) -> Result<Vec<ClickAnnotation>> {
    let ws = Workspace::open(cfg.clone())?;
    let per_frame = (0..ws.frames.len())
        .into_par_iter()
        .map(|t| {
            let frame = &ws.frames[t];
            let gt = ws.gt("simulate-clicks", t)?;
            simulate_frame_clicks(
                &frame.frame_id,
                t,
                &frame.positions(),
                gt,
                cfg.clicks.error_range,
                cfg.seed,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let clicks: Vec<ClickAnnotation> = per_frame.into_iter().flatten().collect();
    if let Some(dir) = cfg.paths.clicks.parent() {
        create_dir(dir)?;
    }
    write_clicks(&cfg.paths.clicks, &clicks)?;
    Ok(clicks)
}

/// Knobs for [`write_synthetic_dataset`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDatasetOptions {
    pub scene: RandomSceneOptions,
    /// Share of point scores that favour a wrong class.
    pub prediction_corruption: f64,
    /// Share of predicted instances that are degraded.
    pub instance_corruption: f64,
    pub click_error_range: f64,
    pub mask_noise: MaskNoise,
}

impl Default for SyntheticDatasetOptions {
    fn default() -> Self {
        Self {
            scene: RandomSceneOptions::default(),
            prediction_corruption: 0.1,
            instance_corruption: 0.1,
            click_error_range: 0.0,
            mask_noise: MaskNoise::EXACT,
        }
    }
}

/// Generates a random scene and writes a ready-to-run dataset into `dir`:
/// sequence, masks, per-point predictions, predicted instances, simulated
/// clicks and a `config.json` pointing at them. Returns the config path.
pub fn write_synthetic_dataset(opts: &SyntheticDatasetOptions, dir: &Path) -> Result<PathBuf> {
    let spec = random_scene(&opts.scene)?;
    let seq = generate_sequence(&spec)?;
    write_sequence(&seq, dir)?;

    let defaults = PipelineConfig::default();
    let pred_dir = dir.join(&defaults.paths.predictions);
    let inst_dir = dir.join(&defaults.paths.instances);
    create_dir(&pred_dir)?;
    create_dir(&inst_dir)?;
    let num_classes = spec.classes.len();
    for (t, frame) in seq.frames.iter().enumerate() {
        let pred = synthesize_predictions(&frame.gt, num_classes, opts.prediction_corruption, spec.seed, t)?;
        write_predictions(&pred_dir.join(format!("{}.pred", frame.frame_id)), &pred)?;
        let inst = synthesize_instances(&frame.gt, opts.instance_corruption, spec.seed, t)?;
        write_json(&inst_dir.join(format!("{}.json", frame.frame_id)), &inst)?;
    }

    let overlay = serde_json::json!({
        "mask_source": { "kind": "synthetic", "bleed_pixels": opts.mask_noise.bleed_pixels,
                         "composite_merge": opts.mask_noise.composite_merge },
        "clicks": { "error_range": opts.click_error_range },
        "seed": opts.scene.seed,
    });
    let config_path = dir.join(CONFIG_FILE);
    write_json(&config_path, &overlay)?;
    simulate_clicks(&PipelineConfig::load(&config_path)?)?;
    Ok(config_path)
}
