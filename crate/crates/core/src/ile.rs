//! Offline label enhancement: a pseudo-labelled instance is swapped for the
//! predicted instance that overlaps it best, provided that prediction is both
//! confident and overlapping enough.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataio::{PredictedInstanceRecord, PseudoLabelSet, Stage, IGNORE};
use crate::error::{Error, Result};
use crate::geometry::Point3;
use crate::tsu::ThresholdScaling;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IleConfig {
    /// Minimum prediction score `T_s2`.
    pub score_threshold: f64,
    /// Minimum overlap `T_IoU`.
    pub iou_threshold: f64,
    pub distance_normalizer: f64,
    /// Scale the score threshold with the instance's mean BEV range.
    pub distance_adjust: bool,
    pub scaling: ThresholdScaling,
    /// `[min, max]` for the adjusted score threshold.
    pub score_clamp: [f64; 2],
}

impl IleConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| v > 0.0 && v <= 1.0;
        if !unit(self.score_threshold) {
            return Err(Error::Config(format!(
                "ILE score threshold must be in (0, 1], got {}",
                self.score_threshold
            )));
        }
        if !unit(self.iou_threshold) {
            return Err(Error::Config(format!(
                "ILE IoU threshold must be in (0, 1], got {}",
                self.iou_threshold
            )));
        }
        if !(self.distance_normalizer > 0.0 && self.distance_normalizer.is_finite()) {
            return Err(Error::Config("ILE distance normalizer must be positive".into()));
        }
        if !(self.score_clamp[0] <= self.score_clamp[1]) {
            return Err(Error::Config("ILE score clamp has min > max".into()));
        }
        Ok(())
    }

    /// Score threshold for an instance at the given mean range.
    pub fn score_threshold_at(&self, range: f64) -> f64 {
        if self.distance_adjust {
            self.scaling
                .apply(self.score_threshold, range, self.distance_normalizer)
                .clamp(self.score_clamp[0], self.score_clamp[1])
        } else {
            self.score_threshold
        }
    }
}

/// A predicted instance mask with its confidence.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictedInstance {
    /// Ascending, unique.
    pub indices: Vec<usize>,
    pub score: f64,
}

impl PredictedInstance {
    pub fn new(mut indices: Vec<usize>, score: f64) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Input("predicted instance has no points".into()));
        }
        if !score.is_finite() {
            return Err(Error::Input("predicted instance score is not finite".into()));
        }
        indices.sort_unstable();
        indices.dedup();
        Ok(Self { indices, score })
    }
}

fn sorted_unique(v: &[usize]) -> std::borrow::Cow<'_, [usize]> {
    if v.windows(2).all(|w| w[0] < w[1]) {
        std::borrow::Cow::Borrowed(v)
    } else {
        let mut owned = v.to_vec();
        owned.sort_unstable();
        owned.dedup();
        std::borrow::Cow::Owned(owned)
    }
}

fn intersection_size(a: &[usize], b: &[usize]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// `|a ∩ b| / |a ∪ b|` over point index sets; 0 when both are empty.
pub fn iou(a: &[usize], b: &[usize]) -> f64 {
    let (a, b) = (sorted_unique(a), sorted_unique(b));
    let inter = intersection_size(&a, &b);
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IleOutcome {
    /// The original label or the chosen candidate's indices, verbatim.
    pub labels: Vec<usize>,
    pub replaced: bool,
    /// Position of the best-overlapping candidate.
    pub chosen: Option<usize>,
    pub iou: f64,
    /// Score threshold after distance adjustment.
    pub score_threshold: f64,
}

/// Best candidate by IoU, ties by higher score then earlier position.
pub fn best_candidate(label: &[usize], candidates: &[PredictedInstance]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (k, cand) in candidates.iter().enumerate() {
        let v = iou(label, &cand.indices);
        let better = match best {
            None => true,
            Some((b, bv)) => v > bv || (v == bv && cand.score > candidates[b].score),
        };
        if better {
            best = Some((k, v));
        }
    }
    best
}

/// Replaces `label` by the best-overlapping candidate iff its score reaches
/// the (optionally range-adjusted) score threshold and its IoU reaches the
/// IoU threshold.
pub fn ile_update(
    label: &[usize],
    candidates: &[PredictedInstance],
    instance_range: f64,
    cfg: &IleConfig,
) -> Result<IleOutcome> {
    cfg.validate()?;
    let label = sorted_unique(label).into_owned();
    let score_threshold = cfg.score_threshold_at(instance_range);
    let Some((k, overlap)) = best_candidate(&label, candidates) else {
        return Ok(IleOutcome {
            labels: label,
            replaced: false,
            chosen: None,
            iou: 0.0,
            score_threshold,
        });
    };
    let cand = &candidates[k];
    let replaced = cand.score >= score_threshold && overlap >= cfg.iou_threshold;
    Ok(IleOutcome {
        labels: if replaced { cand.indices.clone() } else { label },
        replaced,
        chosen: Some(k),
        iou: overlap,
        score_threshold,
    })
}

/// Mean BEV range of a set of points.
pub fn mean_range(points: &[Point3], indices: &[usize]) -> f64 {
    if indices.is_empty() {
        return 0.0;
    }
    indices.iter().map(|&i| points[i].bev_range()).sum::<f64>() / indices.len() as f64
}

/// Per-instance result of [`enhance_frame`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstanceUpdate {
    pub instance_id: i32,
    pub replaced: bool,
    pub iou: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub candidate_instance_id: Option<i32>,
}

/// Applies [`ile_update`] to every labelled instance of a frame.
///
/// A replaced instance keeps its class and instance id: points that left the
/// instance become ignored, points that joined it take its class with the
/// candidate score as confidence. Instances are visited in ascending id
/// order.
pub fn enhance_frame(
    points: &[Point3],
    labels: &PseudoLabelSet,
    predicted: &[PredictedInstanceRecord],
    cfg: &IleConfig,
) -> Result<(PseudoLabelSet, Vec<InstanceUpdate>)> {
    if labels.len() != points.len() {
        return Err(Error::Input(format!(
            "{} labels for {} points",
            labels.len(),
            points.len()
        )));
    }
    let candidates = predicted
        .iter()
        .map(|r| {
            if let Some(&bad) = r.point_indices.iter().find(|&&i| i >= points.len()) {
                return Err(Error::Input(format!(
                    "predicted instance {} references point {bad} of {}",
                    r.instance_id,
                    points.len()
                )));
            }
            PredictedInstance::new(r.point_indices.clone(), r.score)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut members: BTreeMap<i32, Vec<usize>> = BTreeMap::new();
    for (i, &id) in labels.instance_ids.iter().enumerate() {
        if id >= 0 && labels.class_ids[i] >= 0 {
            members.entry(id).or_default().push(i);
        }
    }

    let mut out = labels.clone();
    out.stage = Stage::Ile;
    let mut updates = Vec::with_capacity(members.len());
    for (&id, indices) in &members {
        let class_id = majority_class(indices.iter().map(|&i| labels.class_ids[i]));
        let outcome = ile_update(indices, &candidates, mean_range(points, indices), cfg)?;
        if outcome.replaced {
            let kept = &outcome.labels;
            for &i in indices {
                if kept.binary_search(&i).is_err() && out.instance_ids[i] == id {
                    out.class_ids[i] = IGNORE;
                    out.instance_ids[i] = IGNORE;
                    out.confidences[i] = 0.0;
                }
            }
            let score = candidates[outcome.chosen.expect("replaced implies a candidate")].score as f32;
            for &i in kept {
                out.class_ids[i] = class_id;
                out.instance_ids[i] = id;
                out.confidences[i] = score.clamp(0.0, 1.0);
            }
        }
        updates.push(InstanceUpdate {
            instance_id: id,
            replaced: outcome.replaced,
            iou: outcome.iou,
            candidate_instance_id: outcome.chosen.map(|k| predicted[k].instance_id),
        });
    }
    Ok((out, updates))
}

/// Most frequent value, lowest on ties.
fn majority_class(classes: impl Iterator<Item = i32>) -> i32 {
    let mut counts: BTreeMap<i32, usize> = BTreeMap::new();
    for c in classes {
        *counts.entry(c).or_default() += 1;
    }
    counts
        .into_iter()
        .fold((IGNORE, 0usize), |best, (c, n)| if n > best.1 { (c, n) } else { best })
        .0
}
