//! Semantic mIoU, instance AP over IoU thresholds and pseudo-label quality.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataio::{PseudoLabelSet, IGNORE};
use crate::error::{Error, Result};
use crate::ile::iou;

/// `0.50, 0.55, ..., 0.95`.
pub fn default_thresholds() -> Vec<f64> {
    (0..10).map(|k| 0.5 + 0.05 * k as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticReport {
    /// `None` for classes absent from both prediction and ground truth.
    pub per_class_iou: Vec<Option<f64>>,
    /// `None` when no class was evaluated.
    pub miou: Option<f64>,
    pub counts: Vec<ClassCounts>,
}

impl SemanticReport {
    pub fn is_empty(&self) -> bool {
        self.miou.is_none()
    }
}

fn check_class(c: i32, num_classes: usize, what: &str) -> Result<()> {
    if c < IGNORE || c >= num_classes as i32 {
        return Err(Error::Input(format!("{what} class id {c} out of range")));
    }
    Ok(())
}

/// Point-wise IoU per class, skipping points whose ground truth is `-1`.
pub fn semantic_miou(pred: &[i32], gt: &[i32], num_classes: usize) -> Result<SemanticReport> {
    if pred.len() != gt.len() {
        return Err(Error::Input(format!(
            "{} predictions for {} ground-truth points",
            pred.len(),
            gt.len()
        )));
    }
    let mut counts = vec![ClassCounts { tp: 0, fp: 0, fn_: 0 }; num_classes];
    for (&p, &g) in pred.iter().zip(gt) {
        check_class(p, num_classes, "predicted")?;
        check_class(g, num_classes, "ground-truth")?;
        if g == IGNORE {
            continue;
        }
        if p == g {
            counts[g as usize].tp += 1;
        } else {
            counts[g as usize].fn_ += 1;
            if p != IGNORE {
                counts[p as usize].fp += 1;
            }
        }
    }
    let per_class_iou: Vec<Option<f64>> = counts
        .iter()
        .map(|c| {
            let denom = c.tp + c.fp + c.fn_;
            (denom > 0).then(|| c.tp as f64 / denom as f64)
        })
        .collect();
    Ok(SemanticReport {
        miou: mean_defined(&per_class_iou),
        per_class_iou,
        counts,
    })
}

fn mean_defined(values: &[Option<f64>]) -> Option<f64> {
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredInstance {
    pub class_id: i32,
    pub score: f64,
    pub indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GtInstance {
    pub class_id: i32,
    pub indices: Vec<usize>,
}

/// Predictions and ground truth of one frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ApScene {
    pub predictions: Vec<ScoredInstance>,
    pub ground_truth: Vec<GtInstance>,
    /// Points left out of every IoU.
    pub ignored: HashSet<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceReport {
    pub thresholds: Vec<f64>,
    /// `None` for classes without ground-truth instances.
    pub per_class_ap: Vec<Option<f64>>,
    /// `[class][threshold]`.
    pub per_class_threshold_ap: Vec<Vec<Option<f64>>>,
    pub map: Option<f64>,
    /// `[class][threshold]`.
    pub counts: Vec<Vec<ClassCounts>>,
}

/// Area under the precision-recall curve with a non-increasing precision
/// envelope, given detections in score order.
pub fn average_precision(is_tp: &[bool], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    let mut precision = Vec::with_capacity(is_tp.len());
    let mut recall = Vec::with_capacity(is_tp.len());
    let mut tp = 0usize;
    for (k, &hit) in is_tp.iter().enumerate() {
        tp += usize::from(hit);
        precision.push(tp as f64 / (k + 1) as f64);
        recall.push(tp as f64 / num_gt as f64);
    }
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for k in 0..precision.len() {
        ap += (recall[k] - prev_recall) * precision[k];
        prev_recall = recall[k];
    }
    ap
}

fn without_ignored(indices: &[usize], ignored: &HashSet<usize>) -> Vec<usize> {
    let mut v: Vec<usize> = indices.iter().copied().filter(|i| !ignored.contains(i)).collect();
    v.sort_unstable();
    v.dedup();
    v
}

/// Instance AP per class, averaged over `thresholds`, with greedy
/// score-ordered matching. Classes without ground truth are left out of mAP.
pub fn instance_ap(scenes: &[ApScene], num_classes: usize, thresholds: &[f64]) -> Result<InstanceReport> {
    if thresholds.is_empty() || thresholds.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) {
        return Err(Error::Config("IoU thresholds must be non-empty and in (0, 1]".into()));
    }
    for scene in scenes {
        for p in &scene.predictions {
            if p.indices.is_empty() {
                return Err(Error::Input("predicted instance with no points".into()));
            }
            if p.class_id < 0 || p.class_id >= num_classes as i32 || !p.score.is_finite() {
                return Err(Error::Input(format!(
                    "invalid predicted instance (class {}, score {})",
                    p.class_id, p.score
                )));
            }
        }
        for g in &scene.ground_truth {
            if g.indices.is_empty() {
                return Err(Error::Input("ground-truth instance with no points".into()));
            }
            if g.class_id < 0 || g.class_id >= num_classes as i32 {
                return Err(Error::Input(format!(
                    "ground-truth class id {} out of range",
                    g.class_id
                )));
            }
        }
    }

    let mut per_class_ap = Vec::with_capacity(num_classes);
    let mut per_class_threshold_ap = Vec::with_capacity(num_classes);
    let mut counts = Vec::with_capacity(num_classes);
    for class in 0..num_classes as i32 {
        // (score, scene, position); IoU against every same-class GT in the scene
        let mut preds: Vec<(f64, usize, usize)> = Vec::new();
        let mut ious: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
        let mut num_gt = 0usize;
        for (s, scene) in scenes.iter().enumerate() {
            let gts: Vec<Vec<usize>> = scene
                .ground_truth
                .iter()
                .filter(|g| g.class_id == class)
                .map(|g| without_ignored(&g.indices, &scene.ignored))
                .collect();
            num_gt += gts.len();
            for (k, p) in scene
                .predictions
                .iter()
                .enumerate()
                .filter(|(_, p)| p.class_id == class)
            {
                let pi = without_ignored(&p.indices, &scene.ignored);
                ious.insert((s, k), gts.iter().map(|g| iou(&pi, g)).collect());
                preds.push((p.score, s, k));
            }
        }
        preds.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

        let mut aps = Vec::with_capacity(thresholds.len());
        let mut class_counts = Vec::with_capacity(thresholds.len());
        for &tau in thresholds {
            let mut matched: BTreeMap<usize, Vec<bool>> = BTreeMap::new();
            let mut hits = Vec::with_capacity(preds.len());
            for &(_, s, k) in &preds {
                let row = &ious[&(s, k)];
                let taken = matched.entry(s).or_insert_with(|| vec![false; row.len()]);
                let best = (0..row.len())
                    .filter(|&g| !taken[g])
                    .fold(None, |best: Option<usize>, g| match best {
                        Some(b) if row[b] >= row[g] => Some(b),
                        _ => Some(g),
                    });
                let hit = matches!(best, Some(g) if row[g] >= tau);
                if hit {
                    taken[best.unwrap()] = true;
                }
                hits.push(hit);
            }
            let tp = hits.iter().filter(|&&h| h).count() as u64;
            class_counts.push(ClassCounts {
                tp,
                fp: hits.len() as u64 - tp,
                fn_: num_gt as u64 - tp,
            });
            aps.push((num_gt > 0).then(|| average_precision(&hits, num_gt)));
        }
        per_class_ap.push((num_gt > 0).then(|| aps.iter().flatten().sum::<f64>() / thresholds.len() as f64));
        per_class_threshold_ap.push(aps);
        counts.push(class_counts);
    }
    Ok(InstanceReport {
        thresholds: thresholds.to_vec(),
        map: mean_defined(&per_class_ap),
        per_class_ap,
        per_class_threshold_ap,
        counts,
    })
}

/// Instances of a label set as `(instance id, class, ascending indices)`.
/// The class of an instance is the most frequent class among its points.
pub fn instances_of(labels: &PseudoLabelSet) -> Vec<(i32, i32, Vec<usize>)> {
    let mut members: BTreeMap<i32, Vec<usize>> = BTreeMap::new();
    for (i, (&id, &c)) in labels.instance_ids.iter().zip(&labels.class_ids).enumerate() {
        if id >= 0 && c >= 0 {
            members.entry(id).or_default().push(i);
        }
    }
    members
        .into_iter()
        .map(|(id, idx)| {
            let mut freq: BTreeMap<i32, usize> = BTreeMap::new();
            for &i in &idx {
                *freq.entry(labels.class_ids[i]).or_default() += 1;
            }
            let class = freq
                .into_iter()
                .fold((IGNORE, 0), |b, (c, n)| if n > b.1 { (c, n) } else { b })
                .0;
            (id, class, idx)
        })
        .collect()
}

/// Builds an AP scene from a label set and ground truth. Instance scores are
/// the mean point confidence.
pub fn scene_from_labels(pseudo: &PseudoLabelSet, gt: &PseudoLabelSet) -> ApScene {
    let predictions = instances_of(pseudo)
        .into_iter()
        .map(|(_, class_id, indices)| {
            let score = indices.iter().map(|&i| pseudo.confidences[i] as f64).sum::<f64>() / indices.len() as f64;
            ScoredInstance {
                class_id,
                score,
                indices,
            }
        })
        .collect();
    let ground_truth = instances_of(gt)
        .into_iter()
        .map(|(_, class_id, indices)| GtInstance { class_id, indices })
        .collect();
    let ignored = gt
        .class_ids
        .iter()
        .enumerate()
        .filter(|(_, &c)| c == IGNORE)
        .map(|(i, _)| i)
        .collect();
    ApScene {
        predictions,
        ground_truth,
        ignored,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceQuality {
    pub instance_id: i32,
    /// IoU against the best-overlapping ground-truth instance.
    pub iou: f64,
    pub gt_instance_id: Option<i32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelQuality {
    pub semantic: SemanticReport,
    pub instances: Vec<InstanceQuality>,
    pub mean_instance_iou: Option<f64>,
}

/// Semantic IoU of pseudo classes against ground truth plus the IoU of each
/// pseudo instance with its best-matching ground-truth instance.
pub fn label_quality(pseudo: &PseudoLabelSet, gt: &PseudoLabelSet, num_classes: usize) -> Result<LabelQuality> {
    let semantic = semantic_miou(&pseudo.class_ids, &gt.class_ids, num_classes)?;
    let gt_instances = instances_of(gt);
    let instances: Vec<InstanceQuality> = instances_of(pseudo)
        .into_iter()
        .map(|(id, _, idx)| {
            let best = gt_instances.iter().map(|(gid, _, g)| (*gid, iou(&idx, g))).fold(
                None,
                |b: Option<(i32, f64)>, (gid, v)| match b {
                    Some((_, bv)) if bv >= v => b,
                    _ => Some((gid, v)),
                },
            );
            InstanceQuality {
                instance_id: id,
                iou: best.map_or(0.0, |b| b.1),
                gt_instance_id: best.map(|b| b.0),
            }
        })
        .collect();
    let mean_instance_iou =
        (!instances.is_empty()).then(|| instances.iter().map(|q| q.iou).sum::<f64>() / instances.len() as f64);
    Ok(LabelQuality {
        semantic,
        instances,
        mean_instance_iou,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub stage: String,
    pub classes: Vec<String>,
    pub frames: usize,
    pub instance: InstanceReport,
    pub semantic: SemanticReport,
    /// Mean over labelled instances of the IoU with their best ground-truth
    /// match.
    #[serde(default)]
    pub mean_instance_iou: Option<f64>,
}

impl EvalReport {
    /// Plain-text table: instance AP block then semantic IoU block, in
    /// percent.
    pub fn to_table(&self) -> String {
        let pct = |v: Option<f64>, digits: usize| match v {
            Some(x) => format!("{:.*}", digits, 100.0 * x),
            None => "-".to_string(),
        };
        let short: Vec<String> = self.classes.iter().map(|c| abbreviate(c)).collect();
        let mut head = vec![format!("{:<8}", "Stage"), format!("{:>7}", "mAP")];
        head.extend(short.iter().map(|c| format!("{c:>7}")));
        head.push(format!("{:>8}", "mIoU"));
        head.extend(short.iter().map(|c| format!("{c:>8}")));
        let mut row = vec![
            format!("{:<8}", self.stage),
            format!("{:>7}", pct(self.instance.map, 2)),
        ];
        row.extend(self.instance.per_class_ap.iter().map(|v| format!("{:>7}", pct(*v, 2))));
        row.push(format!("{:>8}", pct(self.semantic.miou, 3)));
        row.extend(self.semantic.per_class_iou.iter().map(|v| format!("{:>8}", pct(*v, 3))));

        let ap_cols = 1 + short.len();
        let mut out = String::new();
        let ap_width: usize = head[1..=ap_cols].iter().map(|s| s.len() + 1).sum();
        let _ = writeln!(
            out,
            "{:<8} {:<ap_width$}| Semantic Segmentation (IoU)",
            "", "Instance Segmentation (AP)"
        );
        let join = |cells: &[String]| {
            let mut line = cells[0].clone();
            for (k, c) in cells[1..].iter().enumerate() {
                line.push(' ');
                if k == ap_cols {
                    line.push_str("| ");
                }
                line.push_str(c);
            }
            line
        };
        let _ = writeln!(out, "{}", join(&head));
        let _ = writeln!(out, "{}", "-".repeat(join(&head).len()));
        let _ = writeln!(out, "{}", join(&row));
        out
    }
}

fn abbreviate(name: &str) -> String {
    let mut chars = name.chars();
    match chars.next() {
        Some(first) => {
            let rest: String = chars.take(2).collect();
            format!("{}{}.", first.to_uppercase(), rest)
        }
        None => String::new(),
    }
}
