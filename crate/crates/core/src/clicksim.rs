//! Simulated single-click annotation on the BEV plane.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::PseudoLabelSet;
use crate::error::{Error, Result};
use crate::geometry::{bev_centroid, Point3};
use crate::rng::keyed_rng;

/// One click per object instance, placed in BEV meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClickAnnotation {
    pub frame_id: String,
    pub instance_id: i32,
    pub class_id: i32,
    pub bev: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolved_point_index: Option<usize>,
}

impl ClickAnnotation {
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if self.class_id < 0 || self.class_id as usize >= num_classes {
            return Err(Error::Input(format!("click class id {} out of range", self.class_id)));
        }
        if !self.bev.iter().all(|v| v.is_finite()) {
            return Err(Error::Input("click BEV position is not finite".into()));
        }
        Ok(())
    }
}

/// Picks the clicked point of an instance and returns its index into
/// `instance_points`.
///
/// With `error_range == 0` this is the point nearest (in BEV) to the
/// instance's BEV centroid, lowest index on ties. Otherwise a point is drawn
/// uniformly among those within `error_range` of the centroid, falling back to
/// the nearest point when the disc is empty.
pub fn simulate_click(instance_points: &[Point3], error_range: f64, seed: u64) -> Result<usize> {
    if !(error_range >= 0.0 && error_range.is_finite()) {
        return Err(Error::Input(format!("error range must be >= 0, got {error_range}")));
    }
    let (cx, cy) = bev_centroid(instance_points)?;
    let dist: Vec<f64> = instance_points.iter().map(|p| p.bev_distance(cx, cy)).collect();

    let nearest = dist
        .iter()
        .enumerate()
        .fold(0usize, |best, (i, &d)| if d < dist[best] { i } else { best });
    if error_range == 0.0 {
        return Ok(nearest);
    }
    let inside: Vec<usize> = (0..dist.len()).filter(|&i| dist[i] <= error_range).collect();
    if inside.is_empty() {
        return Ok(nearest);
    }
    let mut rng = keyed_rng(seed, &[0x63_6c69_636b]);
    Ok(inside[rng.gen_range(0..inside.len())])
}

/// One click per ground-truth instance of a frame, in ascending instance id
/// order. Each instance gets its own RNG stream keyed by `(seed, frame,
/// instance)`.
pub fn simulate_frame_clicks(
    frame_id: &str,
    frame_index: usize,
    points: &[Point3],
    gt: &PseudoLabelSet,
    error_range: f64,
    seed: u64,
) -> Result<Vec<ClickAnnotation>> {
    let mut clicks = Vec::new();
    for instance_id in gt.instance_ids_present() {
        let members = gt.instance_points(instance_id);
        let class_id = gt.class_ids[members[0]];
        if class_id < 0 {
            continue;
        }
        let member_points: Vec<Point3> = members.iter().map(|&i| points[i]).collect();
        let instance_seed = crate::rng::mix(seed, &[frame_index as u64, instance_id as u64]);
        let chosen = members[simulate_click(&member_points, error_range, instance_seed)?];
        clicks.push(ClickAnnotation {
            frame_id: frame_id.to_string(),
            instance_id,
            class_id,
            bev: [points[chosen].x, points[chosen].y],
            resolved_point_index: Some(chosen),
        });
    }
    Ok(clicks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn single_point_instance() {
        let pts = [Point3::new(4.0, 5.0, 1.0)];
        for range in [0.0, 0.3, 10.0] {
            assert_eq!(simulate_click(&pts, range, 7).unwrap(), 0);
        }
    }

    #[test]
    fn tie_breaks_to_lowest_index() {
        let pts = [Point3::new(0.0, 0.0, 1.0), Point3::new(2.0, 0.0, 0.0)];
        assert_eq!(simulate_click(&pts, 0.0, 0).unwrap(), 0);
        let swapped = [pts[1], pts[0]];
        assert_eq!(simulate_click(&swapped, 0.0, 0).unwrap(), 0);
    }

    #[test]
    fn errors() {
        assert!(simulate_click(&[], 0.0, 0).is_err());
        assert!(simulate_click(&[Point3::ORIGIN], -0.1, 0).is_err());
    }

    #[test]
    fn falls_back_to_nearest_when_disc_is_empty() {
        // centroid (1, 0); both points 1 m away, disc radius 0.5
        let pts = [Point3::new(0.0, 0.0, 0.0), Point3::new(2.0, 0.0, 0.0)];
        assert_eq!(simulate_click(&pts, 0.5, 3).unwrap(), 0);
    }

    #[test]
    fn clicks_stay_inside_error_disc() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<Point3> = (0..400)
            .map(|_| {
                Point3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(0.0..2.0),
                )
            })
            .collect();
        let (cx, cy) = bev_centroid(&pts).unwrap();
        let mut distinct = std::collections::HashSet::new();
        for seed in 0..1000 {
            let i = simulate_click(&pts, 0.5, seed).unwrap();
            assert!(pts[i].bev_distance(cx, cy) <= 0.5);
            distinct.insert(i);
        }
        assert!(distinct.len() > 20, "sampling should spread over the disc");
    }

    #[test]
    fn frame_clicks_one_per_instance() {
        let pts = vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(10.0, 0.0, 0.0),
            Point3::new(10.2, 0.0, 0.0),
            Point3::new(50.0, 0.0, 0.0),
        ];
        let gt = PseudoLabelSet {
            stage: crate::dataio::Stage::Gt,
            class_ids: vec![-1, 0, 0, 1],
            instance_ids: vec![-1, 4, 4, 2],
            confidences: vec![1.0; 4],
        };
        let clicks = simulate_frame_clicks("f", 0, &pts, &gt, 0.0, 0).unwrap();
        assert_eq!(clicks.len(), 2);
        assert_eq!((clicks[0].instance_id, clicks[0].class_id), (2, 1));
        assert_eq!(clicks[1].resolved_point_index, Some(1));
        assert_eq!(clicks[1].bev, [10.0, 0.0]);
    }

    proptest! {
        #[test]
        fn zero_range_is_permutation_invariant(raw in prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64), 1..30), rot in 0usize..30) {
            let pts: Vec<Point3> = raw.iter().map(|&(x, y)| Point3::new(x, y, 0.0)).collect();
            let chosen = pts[simulate_click(&pts, 0.0, 0).unwrap()];
            let mut rotated = pts.clone();
            let k = rot % pts.len();
            rotated.rotate_left(k);
            let chosen_rot = rotated[simulate_click(&rotated, 0.0, 0).unwrap()];
            // same BEV distance; identical point unless there is an exact tie
            let (cx, cy) = bev_centroid(&pts).unwrap();
            prop_assert!((chosen.bev_distance(cx, cy) - chosen_rot.bev_distance(cx, cy)).abs() < 1e-9);
        }

        #[test]
        fn selected_point_belongs_to_instance(raw in prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64), 1..30), range in 0.0..3.0f64, seed in any::<u64>()) {
            let pts: Vec<Point3> = raw.iter().map(|&(x, y)| Point3::new(x, y, 0.0)).collect();
            let i = simulate_click(&pts, range, seed).unwrap();
            prop_assert!(i < pts.len());
        }
    }
}
