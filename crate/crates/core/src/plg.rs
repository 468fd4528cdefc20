//! Click-to-label lifting: project a prompt into the image, fetch its 2D
//! mask, lift the mask back onto the point cloud, cluster the lifted points,
//! keep the cluster holding the prompt and check it against per-class
//! geometric bounds. Failed prompts are retried with the next candidate point
//! under the click.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::clicksim::ClickAnnotation;
use crate::error::{Error, Result};
use crate::geometry::{project_points, Calibration, Pixel, Point3};
use crate::maskprovider::{get_mask, Mask2D, MaskProvider, MaskRequest};

/// Radius below which the prompt search never shrinks, meters.
pub const MIN_PROMPT_RADIUS: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassBounds {
    pub name: String,
    pub min_extent: [f64; 3],
    pub max_extent: [f64; 3],
    pub min_points: usize,
    pub max_volume: f64,
    /// Largest allowed spread of camera depth over the cluster.
    pub max_depth_spread: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometricConstraints {
    pub eps: f64,
    pub min_pts: usize,
    /// Indexed by class id.
    pub classes: Vec<ClassBounds>,
}

impl GeometricConstraints {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::Config(format!("cluster eps must be positive, got {}", self.eps)));
        }
        if self.min_pts == 0 {
            return Err(Error::Config("cluster min_pts must be at least 1".into()));
        }
        for b in &self.classes {
            for axis in 0..3 {
                if !(b.min_extent[axis] <= b.max_extent[axis]) {
                    return Err(Error::Config(format!(
                        "class `{}`: extent bound {axis} has min > max",
                        b.name
                    )));
                }
            }
            if b.max_volume.is_nan() || b.max_depth_spread.is_nan() {
                return Err(Error::Config(format!("class `{}`: NaN bound", b.name)));
            }
        }
        Ok(())
    }

    pub fn for_class(&self, class_id: i32) -> Result<&ClassBounds> {
        usize::try_from(class_id)
            .ok()
            .and_then(|c| self.classes.get(c))
            .ok_or_else(|| Error::Config(format!("no geometric constraints for class id {class_id}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlgConfig {
    pub constraints: GeometricConstraints,
    /// Prompt budget per click.
    pub max_prompts: usize,
    /// BEV radius around the click searched for prompt points.
    pub prompt_radius: f64,
}

impl PlgConfig {
    pub fn validate(&self) -> Result<()> {
        self.constraints.validate()?;
        if self.max_prompts == 0 {
            return Err(Error::Config("max_prompts must be at least 1".into()));
        }
        if !(self.prompt_radius >= 0.0) {
            return Err(Error::Config("prompt_radius must be >= 0".into()));
        }
        Ok(())
    }

    pub fn effective_prompt_radius(&self) -> f64 {
        self.prompt_radius.max(MIN_PROMPT_RADIUS)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    /// Ascending point indices.
    pub indices: Vec<usize>,
    /// Axis-aligned `max - min` per axis.
    pub extents: [f64; 3],
    pub count: usize,
    /// Mean BEV distance of the members from the frame origin.
    pub mean_range: f64,
    /// False for components smaller than `min_pts` (noise).
    pub eligible: bool,
}

impl Cluster {
    fn from_members(indices: Vec<usize>, points: &[Point3], min_pts: usize) -> Self {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        let mut range_sum = 0.0;
        for &i in &indices {
            let p = points[i];
            for (axis, v) in [p.x, p.y, p.z].into_iter().enumerate() {
                lo[axis] = lo[axis].min(v);
                hi[axis] = hi[axis].max(v);
            }
            range_sum += p.bev_range();
        }
        let count = indices.len();
        Self {
            extents: [hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]],
            count,
            mean_range: range_sum / count as f64,
            eligible: count >= min_pts,
            indices,
        }
    }

    pub fn volume(&self) -> f64 {
        self.extents.iter().product()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConstraintKind {
    Count,
    ExtentX,
    ExtentY,
    ExtentZ,
    Volume,
    Depth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RejectReason {
    NoMask,
    EmptyLift,
    /// The prompt point is in no eligible cluster.
    NoCluster,
    Constraint(ConstraintKind),
}

impl RejectReason {
    pub fn code(&self) -> &'static str {
        match self {
            RejectReason::NoMask => "no_mask",
            RejectReason::EmptyLift => "empty_lift",
            RejectReason::NoCluster => "no_cluster",
            RejectReason::Constraint(ConstraintKind::Count) => "constraint_count",
            RejectReason::Constraint(ConstraintKind::ExtentX) => "constraint_extent_x",
            RejectReason::Constraint(ConstraintKind::ExtentY) => "constraint_extent_y",
            RejectReason::Constraint(ConstraintKind::ExtentZ) => "constraint_extent_z",
            RejectReason::Constraint(ConstraintKind::Volume) => "constraint_volume",
            RejectReason::Constraint(ConstraintKind::Depth) => "constraint_depth",
        }
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl Serialize for RejectReason {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.code())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PlgStatus {
    Accepted,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlgOutcome {
    pub status: PlgStatus,
    /// Ascending; empty iff rejected.
    pub label_indices: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rejection_reason: Option<RejectReason>,
    pub prompts_tried: usize,
}

impl PlgOutcome {
    fn rejected(reason: RejectReason, prompts_tried: usize) -> Self {
        Self {
            status: PlgStatus::Rejected,
            label_indices: Vec::new(),
            rejection_reason: Some(reason),
            prompts_tried,
        }
    }

    pub fn is_accepted(&self) -> bool {
        self.status == PlgStatus::Accepted
    }
}

/// Per-frame projection state shared by every click on the frame.
#[derive(Debug, Clone)]
pub struct FrameContext {
    pub frame_id: String,
    pub points: Vec<Point3>,
    pub calibration: Calibration,
    /// Projections in point order, for points that land in the image.
    pub projected: Vec<(usize, Pixel)>,
    /// Projection of every point, `None` when out of view.
    pub pixel_of: Vec<Option<Pixel>>,
}

impl FrameContext {
    pub fn new(frame_id: impl Into<String>, points: Vec<Point3>, calibration: Calibration) -> Result<Self> {
        let projected = project_points(&points, &calibration)?;
        let mut pixel_of = vec![None; points.len()];
        for &(i, px) in &projected {
            pixel_of[i] = Some(px);
        }
        Ok(Self {
            frame_id: frame_id.into(),
            points,
            calibration,
            projected,
            pixel_of,
        })
    }

    pub fn image_size(&self) -> (u32, u32) {
        (self.calibration.image_width, self.calibration.image_height)
    }

    pub fn depths(&self) -> Vec<Option<f64>> {
        self.pixel_of.iter().map(|p| p.map(|px| px.depth)).collect()
    }

    /// Points whose BEV position lies within `radius` of `(x, y)`, nearest
    /// first, ties by index.
    pub fn candidates_near(&self, x: f64, y: f64, radius: f64) -> Vec<usize> {
        let mut near: Vec<(f64, usize)> = self
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| (p.bev_distance(x, y), i))
            .filter(|(d, _)| *d <= radius)
            .collect();
        near.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        near.into_iter().map(|(_, i)| i).collect()
    }
}

/// Indices of projected points whose pixel cell is inside the mask.
pub fn color_lift(mask: &Mask2D, projections: &[(usize, Pixel)], image_size: (u32, u32)) -> Result<Vec<usize>> {
    if (mask.width(), mask.height()) != image_size {
        return Err(Error::Input(format!(
            "mask is {}x{} but the image is {}x{}",
            mask.width(),
            mask.height(),
            image_size.0,
            image_size.1
        )));
    }
    Ok(projections
        .iter()
        .filter(|(_, px)| {
            let (u, v) = px.cell();
            mask.contains(u, v)
        })
        .map(|&(i, _)| i)
        .collect())
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // smaller root wins so labels do not depend on visit order
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Euclidean connected components: two points are linked when their 3D
/// distance is at most `eps`. Components smaller than `min_pts` are returned
/// with `eligible = false`. Output is sorted by smallest member index.
pub fn cluster(indices: &[usize], points: &[Point3], eps: f64, min_pts: usize) -> Result<Vec<Cluster>> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Config(format!("cluster eps must be positive, got {eps}")));
    }
    if min_pts == 0 {
        return Err(Error::Config("cluster min_pts must be at least 1".into()));
    }
    let mut members: Vec<usize> = indices.to_vec();
    members.sort_unstable();
    members.dedup();
    if let Some(&bad) = members.iter().find(|&&i| i >= points.len()) {
        return Err(Error::Input(format!("point index {bad} out of range")));
    }

    let cell_of = |p: &Point3| {
        (
            (p.x / eps).floor() as i64,
            (p.y / eps).floor() as i64,
            (p.z / eps).floor() as i64,
        )
    };
    let mut grid: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
    for (local, &i) in members.iter().enumerate() {
        grid.entry(cell_of(&points[i])).or_default().push(local);
    }

    let eps2 = eps * eps;
    let mut sets = DisjointSet::new(members.len());
    for (local, &i) in members.iter().enumerate() {
        let p = points[i];
        let (cx, cy, cz) = cell_of(&p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let Some(bucket) = grid.get(&(cx + dx, cy + dy, cz + dz)) else {
                        continue;
                    };
                    for &other in bucket {
                        if other > local && p.distance_squared(&points[members[other]]) <= eps2 {
                            sets.union(local, other);
                        }
                    }
                }
            }
        }
    }

    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot_of_root: HashMap<usize, usize> = HashMap::new();
    for local in 0..members.len() {
        let root = sets.find(local);
        let slot = *slot_of_root.entry(root).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[slot].push(members[local]);
    }
    Ok(groups
        .into_iter()
        .map(|g| Cluster::from_members(g, points, min_pts))
        .collect())
}

/// Checks a cluster against one class's bounds, in the fixed order count,
/// extent x/y/z, volume, depth. Returns the first violated bound.
pub fn check_bounds(cluster: &Cluster, bounds: &ClassBounds, depth_spread: f64) -> Option<ConstraintKind> {
    if cluster.count < bounds.min_points {
        return Some(ConstraintKind::Count);
    }
    let axes = [
        ConstraintKind::ExtentX,
        ConstraintKind::ExtentY,
        ConstraintKind::ExtentZ,
    ];
    for (axis, kind) in axes.into_iter().enumerate() {
        let e = cluster.extents[axis];
        if e < bounds.min_extent[axis] || e > bounds.max_extent[axis] {
            return Some(kind);
        }
    }
    if cluster.volume() > bounds.max_volume {
        return Some(ConstraintKind::Volume);
    }
    if depth_spread > bounds.max_depth_spread {
        return Some(ConstraintKind::Depth);
    }
    None
}

fn depth_spread(cluster: &Cluster, depths: &[Option<f64>]) -> f64 {
    let (lo, hi) = cluster
        .indices
        .iter()
        .filter_map(|&i| depths.get(i).copied().flatten())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| (lo.min(d), hi.max(d)));
    if lo.is_finite() {
        hi - lo
    } else {
        0.0
    }
}

/// Finds the cluster holding `anchor` and accepts it if it meets the bounds
/// of `class_id`. `depths` holds the camera depth of every frame point.
pub fn select_and_filter<'c>(
    clusters: &'c [Cluster],
    anchor: usize,
    constraints: &GeometricConstraints,
    class_id: i32,
    depths: &[Option<f64>],
) -> Result<std::result::Result<&'c Cluster, RejectReason>> {
    let bounds = constraints.for_class(class_id)?;
    let Some(found) = clusters.iter().find(|c| c.indices.binary_search(&anchor).is_ok()) else {
        return Ok(Err(RejectReason::NoCluster));
    };
    if !found.eligible {
        return Ok(Err(RejectReason::NoCluster));
    }
    Ok(match check_bounds(found, bounds, depth_spread(found, depths)) {
        Some(kind) => Err(RejectReason::Constraint(kind)),
        None => Ok(found),
    })
}

/// Runs the prompt loop for a single click.
pub fn generate_pseudo_label(
    ctx: &FrameContext,
    click: &ClickAnnotation,
    provider: &dyn MaskProvider,
    cfg: &PlgConfig,
) -> Result<PlgOutcome> {
    cfg.validate()?;
    cfg.constraints.for_class(click.class_id)?;
    let depths = ctx.depths();
    let candidates = ctx.candidates_near(click.bev[0], click.bev[1], cfg.effective_prompt_radius());

    let mut tried = 0usize;
    let mut last_reason = RejectReason::NoMask;
    for anchor in candidates {
        if tried == cfg.max_prompts {
            break;
        }
        let Some(pixel) = ctx.pixel_of[anchor] else {
            continue;
        };
        tried += 1;
        let request = MaskRequest {
            frame_id: ctx.frame_id.clone(),
            pixel: pixel.cell(),
            class_id: click.class_id,
        };
        let Some(mask) = get_mask(provider, &request)? else {
            last_reason = RejectReason::NoMask;
            continue;
        };
        let lifted = color_lift(&mask, &ctx.projected, ctx.image_size())?;
        if lifted.is_empty() {
            last_reason = RejectReason::EmptyLift;
            continue;
        }
        let clusters = cluster(&lifted, &ctx.points, cfg.constraints.eps, cfg.constraints.min_pts)?;
        match select_and_filter(&clusters, anchor, &cfg.constraints, click.class_id, &depths)? {
            Ok(accepted) => {
                return Ok(PlgOutcome {
                    status: PlgStatus::Accepted,
                    label_indices: accepted.indices.clone(),
                    rejection_reason: None,
                    prompts_tried: tried,
                })
            }
            Err(reason) => last_reason = reason,
        }
    }
    Ok(PlgOutcome::rejected(last_reason, tried))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maskprovider::{FrameMasks, MaskEntry, MaskNoise, SyntheticOracle};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn bounds(name: &str, min: [f64; 3], max: [f64; 3], min_points: usize) -> ClassBounds {
        ClassBounds {
            name: name.into(),
            min_extent: min,
            max_extent: max,
            min_points,
            max_volume: 100.0,
            max_depth_spread: 10.0,
        }
    }

    fn constraints() -> GeometricConstraints {
        GeometricConstraints {
            eps: 0.5,
            min_pts: 3,
            classes: vec![
                bounds("vehicle", [0.5, 0.5, 0.5], [8.0, 3.0, 3.0], 10),
                bounds("pedestrian", [0.0; 3], [1.2, 1.2, 2.2], 5),
            ],
        }
    }

    /// O(n^2) reference: BFS over the explicit adjacency relation.
    fn brute_components(indices: &[usize], points: &[Point3], eps: f64) -> Vec<Vec<usize>> {
        let mut ids = indices.to_vec();
        ids.sort_unstable();
        ids.dedup();
        let mut seen = vec![false; ids.len()];
        let mut out = Vec::new();
        for s in 0..ids.len() {
            if seen[s] {
                continue;
            }
            seen[s] = true;
            let mut comp = vec![ids[s]];
            let mut stack = vec![s];
            while let Some(a) = stack.pop() {
                for b in 0..ids.len() {
                    if !seen[b] && points[ids[a]].distance(&points[ids[b]]) <= eps {
                        seen[b] = true;
                        comp.push(ids[b]);
                        stack.push(b);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out.sort();
        out
    }

    #[test]
    fn cluster_examples() {
        let pts = [
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(0.1, 0.0, 0.0),
            Point3::new(10.1, 0.0, 0.0),
        ];
        let c = cluster(&[0, 1], &pts, 0.5, 1).unwrap();
        assert_eq!(c.len(), 1);
        let c = cluster(&[0, 2], &pts, 0.5, 1).unwrap();
        assert_eq!(c.len(), 2);
        let c = cluster(&[0, 1, 2], &pts, 0.5, 2).unwrap();
        assert!(c[0].eligible && !c[1].eligible);
        assert!(cluster(&[0], &pts, 0.0, 1).is_err());
        assert!(cluster(&[0], &pts, 0.5, 0).is_err());
        assert!(cluster(&[7], &pts, 0.5, 1).is_err());
    }

    #[test]
    fn cluster_matches_brute_force() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<Point3> = (0..50)
            .map(|_| {
                Point3::new(
                    rng.gen_range(0.0..4.0),
                    rng.gen_range(0.0..4.0),
                    rng.gen_range(0.0..1.0),
                )
            })
            .collect();
        let idx: Vec<usize> = (0..50).collect();
        let mut got: Vec<Vec<usize>> = cluster(&idx, &pts, 0.6, 1)
            .unwrap()
            .into_iter()
            .map(|c| c.indices)
            .collect();
        got.sort();
        assert_eq!(got, brute_components(&idx, &pts, 0.6));
    }

    #[test]
    fn color_lift_cases() {
        let proj = vec![
            (
                0,
                Pixel {
                    u: 1.5,
                    v: 1.2,
                    depth: 3.0,
                },
            ),
            (
                4,
                Pixel {
                    u: 3.0,
                    v: 0.0,
                    depth: 3.0,
                },
            ),
            (
                7,
                Pixel {
                    u: 2.99,
                    v: 0.5,
                    depth: 3.0,
                },
            ),
        ];
        let full = Mask2D::from_bitmap(4, 2, &[true; 8]);
        assert_eq!(color_lift(&full, &proj, (4, 2)).unwrap(), vec![0, 4, 7]);
        assert!(color_lift(&Mask2D::empty(4, 2), &proj, (4, 2)).unwrap().is_empty());
        // brute force: pixel (3, 0) and (0, 0) in the mask, only point 4 floors into them
        let two = Mask2D::from_pixels(4, 2, [(3, 0), (0, 0)]);
        let expected: Vec<usize> = proj
            .iter()
            .filter(|(_, px)| [(3u32, 0u32), (0, 0)].contains(&(px.u as u32, px.v as u32)))
            .map(|(i, _)| *i)
            .collect();
        assert_eq!(color_lift(&two, &proj, (4, 2)).unwrap(), expected);
        assert_eq!(expected, vec![4]);
        assert!(color_lift(&two, &proj, (5, 2)).is_err());
    }

    fn box_cluster(dx: f64, dy: f64, dz: f64, n: usize) -> Cluster {
        let mut pts = vec![Point3::new(10.0, 0.0, 0.0), Point3::new(10.0 + dx, dy, dz)];
        while pts.len() < n {
            pts.push(Point3::new(10.0 + dx / 2.0, dy / 2.0, dz / 2.0));
        }
        Cluster::from_members((0..n).collect(), &pts, 1)
    }

    #[test]
    fn select_and_filter_cases() {
        let c = constraints();
        let car = vec![box_cluster(4.2, 1.9, 1.5, 200)];
        let depths = vec![Some(10.0); 200];
        assert!(select_and_filter(&car, 0, &c, 0, &depths).unwrap().is_ok());
        assert_eq!(
            select_and_filter(&car, 0, &c, 1, &depths).unwrap().unwrap_err(),
            RejectReason::Constraint(ConstraintKind::ExtentX)
        );
        let tiny = vec![box_cluster(4.2, 1.9, 1.5, 9)];
        assert_eq!(
            select_and_filter(&tiny, 0, &c, 0, &depths).unwrap().unwrap_err(),
            RejectReason::Constraint(ConstraintKind::Count)
        );
        assert_eq!(
            select_and_filter(&car, 999, &c, 0, &depths).unwrap().unwrap_err(),
            RejectReason::NoCluster
        );
        let mut spread = depths.clone();
        spread[1] = Some(25.0);
        assert_eq!(
            select_and_filter(&car, 0, &c, 0, &spread).unwrap().unwrap_err(),
            RejectReason::Constraint(ConstraintKind::Depth)
        );
        assert!(select_and_filter(&car, 0, &c, 5, &depths).is_err());
    }

    /// Two pixel-aligned point blobs in front of an identity-like camera: a
    /// 1 m cube of points at x=10 and a wall behind it at x=14.
    fn scene() -> (FrameContext, SyntheticOracle, Vec<usize>) {
        let calib = Calibration::forward_pinhole(200, 100, 100.0, 0.0);
        let mut points = Vec::new();
        let mut object = Vec::new();
        for i in 0..6 {
            for j in 0..6 {
                object.push(points.len());
                points.push(Point3::new(10.0, -0.5 + 0.2 * i as f64, -0.5 + 0.2 * j as f64));
                points.push(Point3::new(10.2, -0.5 + 0.2 * i as f64, -0.5 + 0.2 * j as f64));
                object.push(points.len() - 1);
            }
        }
        for i in 0..30 {
            for j in 0..12 {
                points.push(Point3::new(14.0, -3.0 + 0.2 * i as f64, -1.2 + 0.2 * j as f64));
            }
        }
        let ctx = FrameContext::new("f0", points, calib).unwrap();
        let (w, h) = ctx.image_size();
        let mask = Mask2D::from_pixels(w, h, object.iter().filter_map(|&i| ctx.pixel_of[i]).map(|p| p.cell()));
        let mut frames = HashMap::new();
        frames.insert(
            "f0".to_string(),
            FrameMasks {
                width: w,
                height: h,
                entries: vec![MaskEntry {
                    instance_id: 0,
                    class_id: 0,
                    part: 0,
                    prompt: None,
                    mask,
                }],
            },
        );
        (ctx, SyntheticOracle::new(frames, MaskNoise::EXACT), object)
    }

    fn cfg() -> PlgConfig {
        let mut c = constraints();
        c.eps = 0.3;
        c.classes[0].min_extent = [0.1, 0.5, 0.5];
        PlgConfig {
            constraints: c,
            max_prompts: 5,
            prompt_radius: 0.0,
        }
    }

    fn click_at(p: Point3) -> ClickAnnotation {
        ClickAnnotation {
            frame_id: "f0".into(),
            instance_id: 0,
            class_id: 0,
            bev: [p.x, p.y],
            resolved_point_index: None,
        }
    }

    #[test]
    fn clean_click_recovers_object() {
        let (ctx, oracle, object) = scene();
        let out = generate_pseudo_label(&ctx, &click_at(ctx.points[object[14]]), &oracle, &cfg()).unwrap();
        assert!(out.is_accepted(), "{out:?}");
        let mut expected = object.clone();
        expected.sort_unstable();
        assert_eq!(out.label_indices, expected);
        assert_eq!(out.prompts_tried, 1);
    }

    #[test]
    fn bleed_onto_wall_is_cut_by_clustering() {
        let (ctx, oracle, object) = scene();
        let frames = {
            let mut m = HashMap::new();
            let (w, h) = ctx.image_size();
            let mask = Mask2D::from_pixels(w, h, object.iter().filter_map(|&i| ctx.pixel_of[i]).map(|p| p.cell()));
            m.insert(
                "f0".to_string(),
                FrameMasks {
                    width: w,
                    height: h,
                    entries: vec![MaskEntry {
                        instance_id: 0,
                        class_id: 0,
                        part: 0,
                        prompt: None,
                        mask,
                    }],
                },
            );
            m
        };
        let bleed = SyntheticOracle::new(
            frames,
            MaskNoise {
                bleed_pixels: 6,
                composite_merge: true,
            },
        );
        let px = ctx.pixel_of[object[14]].unwrap().cell();
        let request = MaskRequest {
            frame_id: "f0".into(),
            pixel: px,
            class_id: 0,
        };
        let leaked = color_lift(
            &get_mask(&bleed, &request).unwrap().unwrap(),
            &ctx.projected,
            ctx.image_size(),
        )
        .unwrap();
        assert!(leaked.len() > object.len(), "bleed should pick up wall points");
        let out = generate_pseudo_label(&ctx, &click_at(ctx.points[object[14]]), &bleed, &cfg()).unwrap();
        assert!(out.is_accepted());
        assert_eq!(out.label_indices.len(), object.len());
        drop(oracle);
    }

    #[test]
    fn out_of_view_click_is_no_mask() {
        let (ctx, oracle, _) = scene();
        let behind = click_at(Point3::new(-20.0, 0.0, 0.0));
        let out = generate_pseudo_label(&ctx, &behind, &oracle, &cfg()).unwrap();
        assert_eq!(out.rejection_reason, Some(RejectReason::NoMask));
        assert_eq!(out.prompts_tried, 0);
        assert!(out.label_indices.is_empty());
    }

    #[test]
    fn wall_click_has_no_mask_and_respects_budget() {
        let (ctx, oracle, _) = scene();
        let mut c = cfg();
        c.prompt_radius = 1.0;
        c.max_prompts = 3;
        let out = generate_pseudo_label(&ctx, &click_at(Point3::new(14.0, 2.5, 0.0)), &oracle, &c).unwrap();
        assert_eq!(out.status, PlgStatus::Rejected);
        assert_eq!(out.prompts_tried, 3);
        assert_eq!(out.rejection_reason, Some(RejectReason::NoMask));
    }

    #[test]
    fn constraint_failure_reports_last_reason() {
        let (ctx, oracle, object) = scene();
        let mut c = cfg();
        c.constraints.classes[0].max_extent = [0.15, 8.0, 8.0];
        let out = generate_pseudo_label(&ctx, &click_at(ctx.points[object[0]]), &oracle, &c).unwrap();
        assert_eq!(
            out.rejection_reason,
            Some(RejectReason::Constraint(ConstraintKind::ExtentX))
        );
        assert!(out.label_indices.is_empty());
    }

    fn arb_cloud() -> impl Strategy<Value = Vec<Point3>> {
        prop::collection::vec((0.0..3.0f64, 0.0..3.0f64, 0.0..1.0f64), 1..80)
            .prop_map(|v| v.into_iter().map(|(x, y, z)| Point3::new(x, y, z)).collect())
    }

    proptest! {
        #[test]
        fn cluster_partition_equals_oracle(pts in arb_cloud(), eps in 0.1..1.0f64) {
            let idx: Vec<usize> = (0..pts.len()).collect();
            let mut got: Vec<Vec<usize>> = cluster(&idx, &pts, eps, 1).unwrap().into_iter().map(|c| c.indices).collect();
            got.sort();
            prop_assert_eq!(got, brute_components(&idx, &pts, eps));
        }

        #[test]
        fn cluster_order_independent(pts in arb_cloud(), eps in 0.1..1.0f64) {
            let idx: Vec<usize> = (0..pts.len()).collect();
            let mut rev = idx.clone();
            rev.reverse();
            prop_assert_eq!(cluster(&idx, &pts, eps, 2).unwrap(), cluster(&rev, &pts, eps, 2).unwrap());
        }

        #[test]
        fn enlarging_bounds_keeps_acceptance(shrink in 0.0..1.0f64, grow in 1.0..3.0f64, which in 0usize..36) {
            let (ctx, oracle, object) = scene();
            let mut tight = cfg();
            tight.constraints.classes[0].max_extent = [0.5 + shrink, 1.2, 1.2];
            let click = click_at(ctx.points[object[which]]);
            let before = generate_pseudo_label(&ctx, &click, &oracle, &tight).unwrap();
            let mut loose = tight.clone();
            let b = &mut loose.constraints.classes[0];
            b.max_extent = b.max_extent.map(|v| v * grow);
            b.min_extent = b.min_extent.map(|v| v / grow);
            b.max_volume *= grow;
            b.max_depth_spread *= grow;
            let after = generate_pseudo_label(&ctx, &click, &oracle, &loose).unwrap();
            if before.is_accepted() {
                prop_assert!(after.is_accepted());
            }
            if after.is_accepted() {
                // accepted labels live inside the lifted set and a single cluster
                prop_assert!(after.label_indices.iter().all(|i| object.contains(i)));
            }
        }
    }
}
