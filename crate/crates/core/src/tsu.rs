//! Temporal label updating through a voxel voting space.
//!
//! Predictions from the preceding sweeps are moved into the current frame,
//! voxelized and pooled per voxel. Each voxel resolves to one class or to
//! `-1`; current-frame points in resolved voxels take that class, all other
//! points keep their label.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{PredictionSet, PseudoLabelSet, Stage, IGNORE};
use crate::error::{Error, Result};
use crate::geometry::{transform_frame, Point3, Pose, VoxelIndex};

/// Smallest distance used when thresholds scale inversely with range.
pub const MIN_SCALING_DISTANCE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VoteMode {
    /// Plurality of per-point argmax classes.
    Hard,
    /// Argmax of the mean score vector.
    Soft,
}

/// How a base threshold follows the BEV distance to the ego vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdScaling {
    /// `T' = dist / D * T`: thresholds grow with distance.
    Proportional,
    /// `T' = D / max(dist, eps) * T`: thresholds shrink with distance.
    Inverse,
}

impl ThresholdScaling {
    pub fn apply(self, base: f64, distance: f64, normalizer: f64) -> f64 {
        match self {
            ThresholdScaling::Proportional => distance / normalizer * base,
            ThresholdScaling::Inverse => normalizer / distance.max(MIN_SCALING_DISTANCE) * base,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsuConfig {
    pub voxel_size: f64,
    /// Distance `D` at which dynamic thresholds equal their base values.
    pub distance_normalizer: f64,
    pub vote_threshold: f64,
    pub score_threshold: f64,
    pub mode: VoteMode,
    pub dynamic_count: bool,
    pub dynamic_score: bool,
    pub scaling: ThresholdScaling,
    /// Number of preceding sweeps voting on each frame.
    pub adjacent_frames: usize,
    /// `[min, max]` applied to a dynamic vote threshold; min is at least 1.
    pub vote_clamp: [f64; 2],
    /// `[min, max]` applied to a dynamic score threshold.
    pub score_clamp: [f64; 2],
}

impl TsuConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.voxel_size) {
            return Err(Error::Config(format!(
                "voxel size must be positive, got {}",
                self.voxel_size
            )));
        }
        if !positive(self.distance_normalizer) {
            return Err(Error::Config("distance normalizer must be positive".into()));
        }
        if !(self.vote_threshold >= 1.0) {
            return Err(Error::Config("vote threshold must be >= 1".into()));
        }
        if !(self.score_threshold > 0.0 && self.score_threshold <= 1.0) {
            return Err(Error::Config("score threshold must be in (0, 1]".into()));
        }
        for (name, [lo, hi]) in [("vote", self.vote_clamp), ("score", self.score_clamp)] {
            if !(lo <= hi) {
                return Err(Error::Config(format!("{name} clamp has min > max")));
            }
        }
        Ok(())
    }
}

/// Planar distance between a voxel and the ego voxel, in meters.
pub fn voxel_distance(voxel: &VoxelIndex, ego: &VoxelIndex, voxel_size: f64) -> f64 {
    let dx = (voxel.ix - ego.ix) as f64;
    let dy = (voxel.iy - ego.iy) as f64;
    voxel_size * (dx * dx + dy * dy).sqrt()
}

/// Vote-count and score thresholds for one voxel.
pub fn dynamic_thresholds(voxel: &VoxelIndex, ego: &VoxelIndex, cfg: &TsuConfig) -> (f64, f64) {
    let dist = voxel_distance(voxel, ego, cfg.voxel_size);
    let vote = if cfg.dynamic_count {
        let t = cfg.scaling.apply(cfg.vote_threshold, dist, cfg.distance_normalizer);
        t.clamp(cfg.vote_clamp[0].max(1.0), cfg.vote_clamp[1].max(1.0))
    } else {
        cfg.vote_threshold
    };
    let score = if cfg.dynamic_score {
        let t = cfg.scaling.apply(cfg.score_threshold, dist, cfg.distance_normalizer);
        t.clamp(cfg.score_clamp[0], cfg.score_clamp[1])
    } else {
        cfg.score_threshold
    };
    (vote, score)
}

/// Index of the largest value if it is unique.
fn unique_argmax<T: PartialOrd + Copy>(values: &[T]) -> Option<usize> {
    let mut best = 0usize;
    let mut tied = false;
    for i in 1..values.len() {
        if values[i] > values[best] {
            best = i;
            tied = false;
        } else if values[i] == values[best] {
            tied = true;
        }
    }
    (!values.is_empty() && !tied).then_some(best)
}

/// Pooled statistics of one voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct VotingCell {
    pub index: VoxelIndex,
    pub count: u32,
    pub score_sum: Vec<f64>,
    /// Per-class count of points whose argmax is that class.
    pub class_votes: Vec<u32>,
    pub label: i32,
}

impl VotingCell {
    pub fn new(index: VoxelIndex, num_classes: usize) -> Self {
        Self {
            index,
            count: 0,
            score_sum: vec![0.0; num_classes],
            class_votes: vec![0; num_classes],
            label: IGNORE,
        }
    }

    pub fn add(&mut self, scores: &[f32]) {
        self.count += 1;
        for (acc, &s) in self.score_sum.iter_mut().zip(scores) {
            *acc += s as f64;
        }
        // per-point argmax, lowest class on ties
        let top = scores
            .iter()
            .enumerate()
            .fold(0usize, |best, (c, &s)| if s > scores[best] { c } else { best });
        self.class_votes[top] += 1;
    }

    /// Adds another cell's contributions.
    pub fn merge(&mut self, other: &VotingCell) {
        self.count += other.count;
        for (a, b) in self.score_sum.iter_mut().zip(&other.score_sum) {
            *a += b;
        }
        for (a, b) in self.class_votes.iter_mut().zip(&other.class_votes) {
            *a += b;
        }
    }

    pub fn mean_scores(&self) -> Vec<f64> {
        let n = self.count as f64;
        self.score_sum.iter().map(|s| s / n).collect()
    }

    /// Label under the given thresholds. The score gate is strict
    /// (`mean > score_threshold`); the count gate is `n >= vote_threshold`.
    /// Ties for the top class resolve to `-1`.
    pub fn resolve(&self, mode: VoteMode, vote_threshold: f64, score_threshold: f64) -> i32 {
        if self.count == 0 || (self.count as f64) < vote_threshold {
            return IGNORE;
        }
        let mean = self.mean_scores();
        let winner = match mode {
            VoteMode::Soft => unique_argmax(&mean),
            VoteMode::Hard => unique_argmax(&self.class_votes),
        };
        match winner {
            Some(c) if mean[c] > score_threshold => c as i32,
            _ => IGNORE,
        }
    }
}

/// One preceding sweep and its per-point predictions.
#[derive(Debug, Clone, Copy)]
pub struct AdjacentFrame<'a> {
    pub points: &'a [Point3],
    pub predictions: &'a PredictionSet,
    pub pose: Pose,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelVotingSpace {
    pub voxel_size: f64,
    pub num_classes: usize,
    pub ego: VoxelIndex,
    pub cells: BTreeMap<VoxelIndex, VotingCell>,
}

impl VoxelVotingSpace {
    pub fn empty(voxel_size: f64, num_classes: usize) -> Self {
        Self {
            voxel_size,
            num_classes,
            ego: VoxelIndex::containing(&Point3::ORIGIN, voxel_size),
            cells: BTreeMap::new(),
        }
    }

    pub fn label_at(&self, voxel: &VoxelIndex) -> i32 {
        self.cells.get(voxel).map_or(IGNORE, |c| c.label)
    }

    /// Recomputes every cell label from its statistics.
    pub fn resolve(&mut self, cfg: &TsuConfig) {
        let ego = self.ego;
        self.cells.par_iter_mut().for_each(|(index, cell)| {
            let (vote, score) = dynamic_thresholds(index, &ego, cfg);
            cell.label = cell.resolve(cfg.mode, vote, score);
        });
    }
}

/// Builds and resolves the voting space for the frame at `current_pose`.
///
/// Contributions are accumulated in (frame, point) order so the floating
/// point sums do not depend on the thread pool.
pub fn build_voting_space(
    adjacent: &[AdjacentFrame<'_>],
    current_pose: &Pose,
    num_classes: usize,
    cfg: &TsuConfig,
) -> Result<VoxelVotingSpace> {
    cfg.validate()?;
    if adjacent.len() > cfg.adjacent_frames {
        return Err(Error::Input(format!(
            "{} adjacent frames supplied, configuration allows {}",
            adjacent.len(),
            cfg.adjacent_frames
        )));
    }
    for (k, frame) in adjacent.iter().enumerate() {
        if frame.predictions.num_classes != num_classes {
            return Err(Error::Input(format!(
                "adjacent frame {k}: predictions have {} classes, expected {num_classes}",
                frame.predictions.num_classes
            )));
        }
        if frame.predictions.len() != frame.points.len() {
            return Err(Error::Input(format!(
                "adjacent frame {k}: {} predictions for {} points",
                frame.predictions.len(),
                frame.points.len()
            )));
        }
    }

    let voxelized: Vec<Vec<VoxelIndex>> = adjacent
        .par_iter()
        .map(|frame| {
            let moved = transform_frame(frame.points, &frame.pose, current_pose)?;
            Ok(moved
                .iter()
                .map(|p| VoxelIndex::containing(p, cfg.voxel_size))
                .collect())
        })
        .collect::<Result<_>>()?;

    let mut space = VoxelVotingSpace::empty(cfg.voxel_size, num_classes);
    for (frame, voxels) in adjacent.iter().zip(&voxelized) {
        for (i, voxel) in voxels.iter().enumerate() {
            space
                .cells
                .entry(*voxel)
                .or_insert_with(|| VotingCell::new(*voxel, num_classes))
                .add(frame.predictions.point(i));
        }
    }
    space.resolve(cfg);
    Ok(space)
}

/// Overwrites the class of every current point whose voxel resolved to a
/// class; instance ids and confidences pass through.
pub fn update_labels(points: &[Point3], labels: &PseudoLabelSet, space: &VoxelVotingSpace) -> Result<PseudoLabelSet> {
    if labels.len() != points.len() {
        return Err(Error::Input(format!(
            "{} labels for {} points",
            labels.len(),
            points.len()
        )));
    }
    let class_ids = points
        .par_iter()
        .zip(labels.class_ids.par_iter())
        .map(
            |(p, &old)| match space.label_at(&VoxelIndex::containing(p, space.voxel_size)) {
                IGNORE => old,
                voted => voted,
            },
        )
        .collect();
    Ok(PseudoLabelSet {
        stage: Stage::Tsu,
        class_ids,
        instance_ids: labels.instance_ids.clone(),
        confidences: labels.confidences.clone(),
    })
}
