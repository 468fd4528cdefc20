//! Stand-ins for network outputs, derived from ground truth with controlled
//! corruption: per-point class scores, predicted instances, and noisy
//! pseudo labels.

use rand::Rng;

use crate::dataio::{PredictedInstanceRecord, PredictionSet, PseudoLabelSet, IGNORE};
use crate::error::{Error, Result};
use crate::metrics::instances_of;
use crate::rng::keyed_rng;

const SCORE_STREAM: u64 = 0x7363_6f72_6573;
const INSTANCE_STREAM: u64 = 0x696e_7374;
const LABEL_STREAM: u64 = 0x6c61_6265_6c73;

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::Config(format!("corruption rate must be in [0, 1], got {rate}")));
    }
    Ok(())
}

/// Per-point scores. A clean labelled point scores its class in
/// `[0.7, 1.0]` and every other class in `[0, 0.3]`; background scores all
/// classes low. A corrupted point puts the high score on a random wrong
/// class (any class, for background).
pub fn synthesize_predictions(
    gt: &PseudoLabelSet,
    num_classes: usize,
    corruption: f64,
    seed: u64,
    frame_index: usize,
) -> Result<PredictionSet> {
    check_rate(corruption)?;
    if num_classes == 0 {
        return Err(Error::Config("predictions need at least one class".into()));
    }
    let mut rng = keyed_rng(seed, &[SCORE_STREAM, frame_index as u64]);
    let mut scores = Vec::with_capacity(gt.len() * num_classes);
    for &c in &gt.class_ids {
        let mut row: Vec<f32> = (0..num_classes).map(|_| rng.gen_range(0.0..0.3)).collect();
        let corrupt = rng.gen_bool(corruption);
        let high = match (c, corrupt) {
            (IGNORE, false) => None,
            (IGNORE, true) => Some(rng.gen_range(0..num_classes)),
            (c, false) => Some(c as usize),
            (c, true) if num_classes > 1 => {
                let k = rng.gen_range(0..num_classes - 1);
                Some(if k >= c as usize { k + 1 } else { k })
            }
            (c, true) => Some(c as usize),
        };
        if let Some(h) = high {
            row[h] = rng.gen_range(0.7..1.0);
        }
        scores.extend(row);
    }
    Ok(PredictionSet { num_classes, scores })
}

/// One predicted instance per ground-truth instance. Clean predictions keep
/// each point with probability 0.95 and score in `[0.6, 1.0]`; corrupted ones
/// keep about half the points and score in `[0.3, 0.7]`.
pub fn synthesize_instances(
    gt: &PseudoLabelSet,
    corruption: f64,
    seed: u64,
    frame_index: usize,
) -> Result<Vec<PredictedInstanceRecord>> {
    check_rate(corruption)?;
    let mut out = Vec::new();
    for (id, class_id, indices) in instances_of(gt) {
        let mut rng = keyed_rng(seed, &[INSTANCE_STREAM, frame_index as u64, id as u64]);
        let corrupt = rng.gen_bool(corruption);
        let keep = if corrupt { 0.5 } else { 0.95 };
        let mut point_indices: Vec<usize> = indices.iter().copied().filter(|_| rng.gen_bool(keep)).collect();
        if point_indices.is_empty() {
            point_indices.push(indices[0]);
        }
        let score = if corrupt {
            rng.gen_range(0.3..0.7)
        } else {
            rng.gen_range(0.6..1.0)
        };
        out.push(PredictedInstanceRecord {
            instance_id: id,
            class_id,
            score,
            point_indices,
        });
    }
    Ok(out)
}

/// Replaces the class of a `rate` share of labelled points by a different
/// class or by `-1`. Unlabelled points are untouched.
pub fn corrupt_labels(
    labels: &PseudoLabelSet,
    num_classes: usize,
    rate: f64,
    seed: u64,
    frame_index: usize,
) -> Result<PseudoLabelSet> {
    check_rate(rate)?;
    let mut rng = keyed_rng(seed, &[LABEL_STREAM, frame_index as u64]);
    let mut out = labels.clone();
    for c in out.class_ids.iter_mut() {
        if *c == IGNORE || !rng.gen_bool(rate) {
            continue;
        }
        // pick uniformly among {-1} and the other classes
        let k = rng.gen_range(0..num_classes) as i32;
        *c = if k == *c { IGNORE } else { k };
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::Stage;

    fn gt(n: usize) -> PseudoLabelSet {
        let mut g = PseudoLabelSet::ignored(Stage::Gt, n);
        for i in 0..n {
            if i % 3 != 0 {
                g.class_ids[i] = (i % 3) as i32;
                g.instance_ids[i] = (i % 3) as i32;
            }
        }
        g
    }

    #[test]
    fn clean_predictions_follow_ground_truth() {
        let g = gt(300);
        let p = synthesize_predictions(&g, 3, 0.0, 1, 0).unwrap();
        p.validate().unwrap();
        for i in 0..g.len() {
            let row = p.point(i);
            match g.class_ids[i] {
                IGNORE => assert!(row.iter().all(|&s| s < 0.3)),
                c => assert!(row[c as usize] >= 0.7),
            }
        }
    }

    #[test]
    fn corruption_rate_is_respected() {
        let g = gt(30_000);
        let p = synthesize_predictions(&g, 3, 0.1, 2, 0).unwrap();
        let wrong = (0..g.len())
            .filter(|&i| g.class_ids[i] >= 0)
            .filter(|&i| {
                let row = p.point(i);
                row[g.class_ids[i] as usize] < 0.7
            })
            .count();
        let labelled = g.class_ids.iter().filter(|&&c| c >= 0).count();
        let share = wrong as f64 / labelled as f64;
        assert!((share - 0.1).abs() < 0.01, "{share}");

        let y = corrupt_labels(&g, 3, 0.3, 2, 0).unwrap();
        let changed = (0..g.len()).filter(|&i| y.class_ids[i] != g.class_ids[i]).count();
        assert!((changed as f64 / labelled as f64 - 0.3).abs() < 0.02);
        assert!((0..g.len()).all(|i| g.class_ids[i] != IGNORE || y.class_ids[i] == IGNORE));
    }

    #[test]
    fn instances_are_deterministic_and_non_empty() {
        let g = gt(90);
        let a = synthesize_instances(&g, 0.5, 4, 3).unwrap();
        assert_eq!(a, synthesize_instances(&g, 0.5, 4, 3).unwrap());
        assert_eq!(a.len(), 2);
        assert!(a.iter().all(|r| !r.point_indices.is_empty()));
        assert!(synthesize_instances(&g, 1.5, 4, 3).is_err());
    }
}
