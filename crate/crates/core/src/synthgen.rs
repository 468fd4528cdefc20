//! Deterministic synthetic LiDAR sequences with per-point ground truth and
//! per-frame instance masks.
//!
//! Scenes are built from oriented boxes: object parts, wall slabs, and a
//! ground rectangle. Each surface facing the sensor is sampled on a 0.2 m
//! grid with a range-dependent density, points hidden behind another box are
//! dropped, and the survivors are expressed in the ego frame of the sweep.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{self, FrameEntry, LidarPoint, PseudoLabelSet, SequenceManifest, Stage};
use crate::error::{Error, Result};
use crate::geometry::{project_points, Calibration, Point3, Pose};
use crate::maskprovider::{mask_path, FrameMasks, Mask2D, MaskEntry};
use crate::rng::keyed_rng;

const CELL: f64 = 0.2;
const OVERLAP_TOLERANCE: f64 = 1e-9;

pub fn default_classes() -> Vec<String> {
    ["vehicle", "pedestrian", "cyclist"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

pub const VEHICLE: i32 = 0;
pub const PEDESTRIAN: i32 = 1;
pub const CYCLIST: i32 = 2;

/// Planar motion with constant velocity and yaw rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub start: [f64; 2],
    #[serde(default)]
    pub yaw: f64,
    #[serde(default)]
    pub velocity: [f64; 2],
    #[serde(default)]
    pub yaw_rate: f64,
}

impl Trajectory {
    pub fn fixed(x: f64, y: f64, yaw: f64) -> Self {
        Self {
            start: [x, y],
            yaw,
            velocity: [0.0, 0.0],
            yaw_rate: 0.0,
        }
    }

    /// `(x, y, yaw)` at time `t`.
    pub fn at(&self, t: f64) -> (f64, f64, f64) {
        (
            self.start[0] + self.velocity[0] * t,
            self.start[1] + self.velocity[1] * t,
            self.yaw + self.yaw_rate * t,
        )
    }
}

/// A box in its instance frame: `offset` is the bottom centre.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxPart {
    #[serde(default)]
    pub offset: [f64; 3],
    /// Length (x), width (y), height (z).
    pub extents: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub class_id: i32,
    pub parts: Vec<BoxPart>,
    pub trajectory: Trajectory,
    /// Height of the instance frame above the ground.
    #[serde(default = "default_clearance")]
    pub clearance: f64,
}

fn default_clearance() -> f64 {
    0.4
}

impl InstanceSpec {
    pub fn single(class_id: i32, extents: [f64; 3], trajectory: Trajectory) -> Self {
        Self {
            class_id,
            parts: vec![BoxPart {
                offset: [0.0; 3],
                extents,
            }],
            trajectory,
            clearance: default_clearance(),
        }
    }

    pub fn vehicle(trajectory: Trajectory) -> Self {
        Self::single(VEHICLE, [4.5, 1.9, 1.5], trajectory)
    }

    pub fn pedestrian(trajectory: Trajectory) -> Self {
        Self::single(PEDESTRIAN, [0.6, 0.6, 1.7], trajectory)
    }

    /// Bicycle (part 0) with a rider (part 1) on top.
    pub fn cyclist(trajectory: Trajectory) -> Self {
        Self {
            class_id: CYCLIST,
            parts: vec![
                BoxPart {
                    offset: [0.0; 3],
                    extents: [1.7, 0.5, 1.0],
                },
                BoxPart {
                    offset: [-0.2, 0.0, 1.0],
                    extents: [0.6, 0.5, 0.8],
                },
            ],
            trajectory,
            clearance: default_clearance(),
        }
    }
}

/// Points per square meter at BEV range `r`:
/// `near * min(1, (reference_range / r) ^ falloff)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityProfile {
    pub near: f64,
    pub reference_range: f64,
    pub falloff: f64,
}

impl DensityProfile {
    pub fn at(&self, range: f64) -> f64 {
        if range <= self.reference_range {
            self.near
        } else {
            self.near * (self.reference_range / range).powf(self.falloff)
        }
    }
}

impl Default for DensityProfile {
    fn default() -> Self {
        Self {
            near: 100.0,
            reference_range: 10.0,
            falloff: 1.0,
        }
    }
}

/// A static wall slab in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WallSpec {
    pub center: [f64; 2],
    #[serde(default)]
    pub yaw: f64,
    pub extents: [f64; 3],
    /// Multiplier on the density profile.
    #[serde(default = "default_wall_density")]
    pub density_scale: f64,
}

fn default_wall_density() -> f64 {
    0.25
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundSpec {
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
    #[serde(default = "default_ground_density")]
    pub density_scale: f64,
}

fn default_ground_density() -> f64 {
    0.05
}

const CORRIDOR_HALF_WIDTH: f64 = 12.0;
const WALL_THICKNESS: f64 = 0.3;
const CORRIDOR_INNER: f64 = CORRIDOR_HALF_WIDTH - WALL_THICKNESS / 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Background {
    #[serde(default)]
    pub ground: Option<GroundSpec>,
    #[serde(default)]
    pub walls: Vec<WallSpec>,
}

impl Background {
    /// Ground between two long walls at `y = +-12 m`.
    pub fn corridor() -> Self {
        let wall = |y: f64| WallSpec {
            center: [20.0, y],
            yaw: 0.0,
            extents: [80.0, WALL_THICKNESS, 3.5],
            density_scale: default_wall_density(),
        };
        Self {
            ground: Some(GroundSpec {
                x_range: [-20.0, 60.0],
                y_range: [-CORRIDOR_INNER, CORRIDOR_INNER],
                density_scale: default_ground_density(),
            }),
            walls: vec![wall(CORRIDOR_HALF_WIDTH), wall(-CORRIDOR_HALF_WIDTH)],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub num_frames: usize,
    #[serde(default = "default_interval")]
    pub frame_interval: f64,
    #[serde(default = "default_classes")]
    pub classes: Vec<String>,
    #[serde(default)]
    pub instances: Vec<InstanceSpec>,
    pub ego: Trajectory,
    #[serde(default)]
    pub density: DensityProfile,
    #[serde(default)]
    pub background: Background,
    /// LiDAR height above the ego origin; the camera sits at the same spot.
    #[serde(default = "default_sensor_height")]
    pub sensor_height: f64,
    #[serde(default = "default_max_range")]
    pub max_range: f64,
    pub camera: Calibration,
    /// Pixel radius each projected point covers in the instance masks.
    #[serde(default = "default_mask_dilation")]
    pub mask_dilation: u32,
    #[serde(default = "default_sequence_id")]
    pub sequence_id: String,
}

fn default_interval() -> f64 {
    0.1
}
fn default_sensor_height() -> f64 {
    2.0
}
fn default_max_range() -> f64 {
    75.0
}
fn default_mask_dilation() -> u32 {
    1
}
fn default_sequence_id() -> String {
    "synthetic".into()
}

pub fn default_camera() -> Calibration {
    Calibration::forward_pinhole(800, 320, 320.0, default_sensor_height())
}

impl SceneSpec {
    /// Static ego at the origin, corridor background, default camera.
    pub fn new(seed: u64, num_frames: usize, instances: Vec<InstanceSpec>) -> Self {
        Self {
            seed,
            num_frames,
            frame_interval: default_interval(),
            classes: default_classes(),
            instances,
            ego: Trajectory::fixed(0.0, 0.0, 0.0),
            density: DensityProfile::default(),
            background: Background::corridor(),
            sensor_height: default_sensor_height(),
            max_range: default_max_range(),
            camera: default_camera(),
            mask_dilation: default_mask_dilation(),
            sequence_id: default_sequence_id(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let spec_err = |m: String| Err(Error::Spec(m));
        if self.num_frames == 0 {
            return spec_err("scene needs at least one frame".into());
        }
        if !(self.frame_interval > 0.0) {
            return spec_err("frame interval must be positive".into());
        }
        let d = &self.density;
        if !(d.near > 0.0 && d.near.is_finite() && d.reference_range > 0.0 && d.falloff >= 0.0) {
            return spec_err("density profile must be positive and non-increasing".into());
        }
        self.camera.validate()?;
        for (k, inst) in self.instances.iter().enumerate() {
            if inst.class_id < 0 || inst.class_id as usize >= self.classes.len() {
                return spec_err(format!("instance {k}: class id {} not in class list", inst.class_id));
            }
            if inst.parts.is_empty() {
                return spec_err(format!("instance {k} has no parts"));
            }
            if inst.parts.iter().any(|p| p.extents.iter().any(|e| !(*e > 0.0))) {
                return spec_err(format!("instance {k}: box extents must be positive"));
            }
        }
        for (k, w) in self.background.walls.iter().enumerate() {
            if w.extents.iter().any(|e| !(*e > 0.0)) || !(w.density_scale >= 0.0) {
                return spec_err(format!("wall {k}: extents must be positive"));
            }
        }
        Ok(())
    }

    pub fn ego_pose(&self, frame: usize) -> Pose {
        let (x, y, yaw) = self.ego.at(frame as f64 * self.frame_interval);
        Pose::from_yaw_translation(yaw, x, y, 0.0)
    }

    /// World-frame boxes of instance `k` at `frame`.
    fn instance_boxes(&self, k: usize, frame: usize) -> Vec<WorldBox> {
        let inst = &self.instances[k];
        let (x, y, yaw) = inst.trajectory.at(frame as f64 * self.frame_interval);
        let (s, c) = yaw.sin_cos();
        inst.parts
            .iter()
            .map(|p| WorldBox {
                center: [
                    x + c * p.offset[0] - s * p.offset[1],
                    y + s * p.offset[0] + c * p.offset[1],
                ],
                z0: inst.clearance + p.offset[2],
                yaw,
                extents: p.extents,
            })
            .collect()
    }

    fn wall_boxes(&self) -> Vec<WorldBox> {
        self.background
            .walls
            .iter()
            .map(|w| WorldBox {
                center: w.center,
                z0: 0.0,
                yaw: w.yaw,
                extents: w.extents,
            })
            .collect()
    }
}

/// Oriented box standing on `z0`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct WorldBox {
    center: [f64; 2],
    z0: f64,
    yaw: f64,
    extents: [f64; 3],
}

/// A rectangle `origin + a*u + b*v`, `a, b` in `[0, 1]`, with outward normal.
struct Face {
    origin: [f64; 3],
    u: [f64; 3],
    v: [f64; 3],
    normal: [f64; 3],
}

fn add(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}
fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}
fn scale(a: [f64; 3], k: f64) -> [f64; 3] {
    [a[0] * k, a[1] * k, a[2] * k]
}
fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}
fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

impl WorldBox {
    fn axes(&self) -> ([f64; 3], [f64; 3]) {
        let (s, c) = self.yaw.sin_cos();
        ([c, s, 0.0], [-s, c, 0.0])
    }

    fn faces(&self) -> Vec<Face> {
        let (ex, ey) = self.axes();
        let ez = [0.0, 0.0, 1.0];
        let [l, w, h] = self.extents;
        let base = [self.center[0], self.center[1], self.z0];
        let corner = add(add(base, scale(ex, -l / 2.0)), scale(ey, -w / 2.0));
        let (lx, wy, hz) = (scale(ex, l), scale(ey, w), scale(ez, h));
        vec![
            Face {
                origin: add(corner, lx),
                u: wy,
                v: hz,
                normal: ex,
            },
            Face {
                origin: corner,
                u: wy,
                v: hz,
                normal: scale(ex, -1.0),
            },
            Face {
                origin: add(corner, wy),
                u: lx,
                v: hz,
                normal: ey,
            },
            Face {
                origin: corner,
                u: lx,
                v: hz,
                normal: scale(ey, -1.0),
            },
            Face {
                origin: add(corner, hz),
                u: lx,
                v: wy,
                normal: ez,
            },
            Face {
                origin: corner,
                u: lx,
                v: wy,
                normal: scale(ez, -1.0),
            },
        ]
    }

    /// Whether the open segment `from -> to` passes through the box.
    fn blocks(&self, from: [f64; 3], to: [f64; 3]) -> bool {
        let (ex, ey) = self.axes();
        let centre = [self.center[0], self.center[1], self.z0 + self.extents[2] / 2.0];
        let local = |p: [f64; 3]| {
            let d = sub(p, centre);
            [dot(d, ex), dot(d, ey), d[2]]
        };
        let (a, b) = (local(from), local(to));
        let dir = sub(b, a);
        let (mut t0, mut t1) = (1e-9, 1.0 - 1e-9);
        for axis in 0..3 {
            let half = self.extents[axis] / 2.0;
            if dir[axis].abs() < 1e-15 {
                if a[axis].abs() >= half {
                    return false;
                }
            } else {
                let ta = (-half - a[axis]) / dir[axis];
                let tb = (half - a[axis]) / dir[axis];
                let (lo, hi) = if ta < tb { (ta, tb) } else { (tb, ta) };
                t0 = f64::max(t0, lo);
                t1 = f64::min(t1, hi);
                if t0 >= t1 {
                    return false;
                }
            }
        }
        true
    }

    fn corners_2d(&self) -> [[f64; 2]; 4] {
        let (ex, ey) = self.axes();
        let (hl, hw) = (self.extents[0] / 2.0, self.extents[1] / 2.0);
        let c = self.center;
        let at = |a: f64, b: f64| [c[0] + ex[0] * a + ey[0] * b, c[1] + ex[1] * a + ey[1] * b];
        [at(hl, hw), at(-hl, hw), at(-hl, -hw), at(hl, -hw)]
    }

    /// Separating-axis test in BEV plus the z interval.
    fn overlaps(&self, other: &WorldBox) -> bool {
        let z_overlap = f64::min(self.z0 + self.extents[2], other.z0 + other.extents[2]) - f64::max(self.z0, other.z0);
        if z_overlap <= OVERLAP_TOLERANCE {
            return false;
        }
        let (a, b) = (self.corners_2d(), other.corners_2d());
        let mut axes = Vec::with_capacity(4);
        for bx in [self, other] {
            let (ex, ey) = bx.axes();
            axes.push([ex[0], ex[1]]);
            axes.push([ey[0], ey[1]]);
        }
        for n in axes {
            let proj = |pts: &[[f64; 2]; 4]| {
                pts.iter()
                    .map(|p| p[0] * n[0] + p[1] * n[1])
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
            };
            let ((a0, a1), (b0, b1)) = (proj(&a), proj(&b));
            if f64::min(a1, b1) - f64::max(a0, b0) <= OVERLAP_TOLERANCE {
                return false;
            }
        }
        true
    }
}

/// Who produced a point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Owner {
    Instance { instance: usize, part: usize },
    Wall(usize),
    Ground,
}

/// One generated sweep.
#[derive(Debug, Clone)]
pub struct SyntheticFrame {
    pub frame_id: String,
    pub timestamp: f64,
    pub pose: Pose,
    /// Ego-frame points.
    pub points: Vec<LidarPoint>,
    pub owners: Vec<Owner>,
    pub gt: PseudoLabelSet,
    pub masks: FrameMasks,
}

impl SyntheticFrame {
    pub fn positions(&self) -> Vec<Point3> {
        self.points.iter().map(LidarPoint::position).collect()
    }

    /// Indices of the points of one instance.
    pub fn instance_points(&self, instance: usize) -> Vec<usize> {
        self.gt.instance_points(instance as i32)
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticSequence {
    pub spec: SceneSpec,
    pub frames: Vec<SyntheticFrame>,
    /// Instances with no point in any frame.
    pub unobservable: Vec<i32>,
}

struct Sampler<'a> {
    sensor: [f64; 3],
    density: &'a DensityProfile,
    max_range: f64,
    occluders: &'a [WorldBox],
    out: Vec<([f64; 3], Owner)>,
}

impl Sampler<'_> {
    fn sample_face(
        &mut self,
        face: &Face,
        density_scale: f64,
        owner: Owner,
        skip_box: Option<usize>,
        rng: &mut impl Rng,
    ) {
        let centre = add(face.origin, add(scale(face.u, 0.5), scale(face.v, 0.5)));
        if dot(face.normal, sub(self.sensor, centre)) <= 0.0 {
            return;
        }
        let (lu, lv) = (norm(face.u), norm(face.v));
        let (nu, nv) = (
            (lu / CELL).ceil().max(1.0) as usize,
            (lv / CELL).ceil().max(1.0) as usize,
        );
        let (du, dv) = (1.0 / nu as f64, 1.0 / nv as f64);
        let cell_area = lu * lv * du * dv;
        for i in 0..nu {
            for j in 0..nv {
                let c = add(
                    face.origin,
                    add(
                        scale(face.u, (i as f64 + 0.5) * du),
                        scale(face.v, (j as f64 + 0.5) * dv),
                    ),
                );
                let range = ((c[0] - self.sensor[0]).powi(2) + (c[1] - self.sensor[1]).powi(2)).sqrt();
                if range > self.max_range {
                    continue;
                }
                let expected = self.density.at(range) * density_scale * cell_area;
                let mut count = expected.floor() as usize;
                if rng.gen::<f64>() < expected.fract() {
                    count += 1;
                }
                for _ in 0..count {
                    let a = (i as f64 + rng.gen::<f64>()) * du;
                    let b = (j as f64 + rng.gen::<f64>()) * dv;
                    let p = add(face.origin, add(scale(face.u, a), scale(face.v, b)));
                    let hidden = self
                        .occluders
                        .iter()
                        .enumerate()
                        .any(|(k, bx)| Some(k) != skip_box && bx.blocks(self.sensor, p));
                    if !hidden {
                        self.out.push((p, owner));
                    }
                }
            }
        }
    }
}

/// Generates every frame of a scene. Frames are independent and built in
/// parallel; each draws from its own keyed random stream.
pub fn generate_sequence(spec: &SceneSpec) -> Result<SyntheticSequence> {
    spec.validate()?;
    check_overlaps(spec)?;
    let frames: Vec<SyntheticFrame> = (0..spec.num_frames)
        .into_par_iter()
        .map(|f| generate_frame(spec, f))
        .collect::<Result<_>>()?;
    let unobservable = (0..spec.instances.len() as i32)
        .filter(|&id| frames.iter().all(|fr| !fr.gt.instance_ids.contains(&id)))
        .collect();
    Ok(SyntheticSequence {
        spec: spec.clone(),
        frames,
        unobservable,
    })
}

fn check_overlaps(spec: &SceneSpec) -> Result<()> {
    let walls = spec.wall_boxes();
    for f in 0..spec.num_frames {
        let boxes: Vec<Vec<WorldBox>> = (0..spec.instances.len()).map(|k| spec.instance_boxes(k, f)).collect();
        for a in 0..boxes.len() {
            for pa in &boxes[a] {
                for b in a + 1..boxes.len() {
                    if boxes[b].iter().any(|pb| pa.overlaps(pb)) {
                        return Err(Error::Spec(format!("instances {a} and {b} overlap in frame {f}")));
                    }
                }
                if let Some(w) = walls.iter().position(|w| pa.overlaps(w)) {
                    return Err(Error::Spec(format!("instance {a} overlaps wall {w} in frame {f}")));
                }
            }
        }
    }
    Ok(())
}

fn frame_id(index: usize) -> String {
    format!("{index:06}")
}

fn generate_frame(spec: &SceneSpec, f: usize) -> Result<SyntheticFrame> {
    let pose = spec.ego_pose(f);
    let sensor = pose.apply(&Point3::new(0.0, 0.0, spec.sensor_height));
    let sensor = [sensor.x, sensor.y, sensor.z];

    let mut boxes = Vec::new();
    let mut box_owner = Vec::new();
    for k in 0..spec.instances.len() {
        for (part, bx) in spec.instance_boxes(k, f).into_iter().enumerate() {
            boxes.push(bx);
            box_owner.push(Owner::Instance { instance: k, part });
        }
    }
    for (w, bx) in spec.wall_boxes().into_iter().enumerate() {
        boxes.push(bx);
        box_owner.push(Owner::Wall(w));
    }

    let mut sampler = Sampler {
        sensor,
        density: &spec.density,
        max_range: spec.max_range,
        occluders: &boxes,
        out: Vec::new(),
    };
    for (b, bx) in boxes.iter().enumerate() {
        let (scale_factor, entity) = match box_owner[b] {
            Owner::Instance { instance, part } => (1.0, 1 + (instance as u64) * 16 + part as u64),
            Owner::Wall(w) => (spec.background.walls[w].density_scale, 1 << 40 | w as u64),
            Owner::Ground => unreachable!(),
        };
        for (face_index, face) in bx.faces().iter().enumerate() {
            let mut rng = keyed_rng(spec.seed, &[f as u64, entity, face_index as u64]);
            sampler.sample_face(face, scale_factor, box_owner[b], Some(b), &mut rng);
        }
    }
    if let Some(g) = &spec.background.ground {
        let face = Face {
            origin: [g.x_range[0], g.y_range[0], 0.0],
            u: [g.x_range[1] - g.x_range[0], 0.0, 0.0],
            v: [0.0, g.y_range[1] - g.y_range[0], 0.0],
            normal: [0.0, 0.0, 1.0],
        };
        let mut rng = keyed_rng(spec.seed, &[f as u64, 1 << 41]);
        sampler.sample_face(&face, g.density_scale, Owner::Ground, None, &mut rng);
    }

    let to_ego = pose.inverse()?;
    let mut intensity_rng = keyed_rng(spec.seed, &[f as u64, 1 << 42]);
    let mut points = Vec::with_capacity(sampler.out.len());
    let mut owners = Vec::with_capacity(sampler.out.len());
    for (p, owner) in sampler.out {
        let q = to_ego.apply(&Point3::new(p[0], p[1], p[2]));
        points.push(LidarPoint {
            x: q.x as f32,
            y: q.y as f32,
            z: q.z as f32,
            intensity: intensity_rng.gen::<f32>(),
        });
        owners.push(owner);
    }

    let mut gt = PseudoLabelSet::ignored(Stage::Gt, points.len());
    for (i, owner) in owners.iter().enumerate() {
        if let Owner::Instance { instance, .. } = owner {
            gt.class_ids[i] = spec.instances[*instance].class_id;
            gt.instance_ids[i] = *instance as i32;
        }
        gt.confidences[i] = 1.0;
    }
    let positions: Vec<Point3> = points.iter().map(LidarPoint::position).collect();
    let masks = render_masks(spec, &positions, &owners)?;
    Ok(SyntheticFrame {
        frame_id: frame_id(f),
        timestamp: f as f64 * spec.frame_interval,
        pose,
        points,
        owners,
        gt,
        masks,
    })
}

/// Z-buffered splat of every projected point. A point's own pixel takes
/// precedence over the dilated neighbourhood of other points.
fn render_masks(spec: &SceneSpec, positions: &[Point3], owners: &[Owner]) -> Result<FrameMasks> {
    let cam = &spec.camera;
    let (w, h) = (cam.image_width, cam.image_height);
    let projected = project_points(positions, cam)?;
    let n = (w as usize) * (h as usize);
    let mut depth = vec![f64::INFINITY; n];
    let mut owner: Vec<Option<Owner>> = vec![None; n];
    let mut direct = vec![false; n];
    for &(i, px) in &projected {
        let (u, v) = px.cell();
        let slot = v as usize * w as usize + u as usize;
        if px.depth < depth[slot] {
            depth[slot] = px.depth;
            owner[slot] = Some(owners[i]);
            direct[slot] = true;
        }
    }
    let r = spec.mask_dilation as i64;
    if r > 0 {
        let mut fill_depth = vec![f64::INFINITY; n];
        let mut fill_owner: Vec<Option<Owner>> = vec![None; n];
        for &(i, px) in &projected {
            let (u, v) = px.cell();
            for dv in -r..=r {
                for du in -r..=r {
                    let (x, y) = (u as i64 + du, v as i64 + dv);
                    if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
                        continue;
                    }
                    let slot = y as usize * w as usize + x as usize;
                    if !direct[slot] && px.depth < fill_depth[slot] {
                        fill_depth[slot] = px.depth;
                        fill_owner[slot] = Some(owners[i]);
                    }
                }
            }
        }
        for slot in 0..n {
            if !direct[slot] {
                owner[slot] = fill_owner[slot];
            }
        }
    }

    let mut pixels: BTreeMap<(usize, usize), Vec<(u32, u32)>> = BTreeMap::new();
    for (slot, o) in owner.iter().enumerate() {
        if let Some(Owner::Instance { instance, part }) = o {
            pixels
                .entry((*instance, *part))
                .or_default()
                .push(((slot % w as usize) as u32, (slot / w as usize) as u32));
        }
    }
    let entries = pixels
        .into_iter()
        .map(|((instance, part), px)| MaskEntry {
            instance_id: instance as i32,
            class_id: spec.instances[instance].class_id,
            part: part as u32,
            prompt: None,
            mask: Mask2D::from_pixels(w, h, px),
        })
        .collect();
    Ok(FrameMasks {
        width: w,
        height: h,
        entries,
    })
}

/// Relative file locations used by [`write_sequence`].
pub const MANIFEST_FILE: &str = "manifest.json";
pub const POINTS_DIR: &str = "points";
pub const GT_DIR: &str = "gt";
pub const MASKS_DIR: &str = "masks";

/// Writes the manifest, point files, ground-truth labels and masks under
/// `dir` and returns the manifest path.
pub fn write_sequence(seq: &SyntheticSequence, dir: &Path) -> Result<PathBuf> {
    for sub in [POINTS_DIR, GT_DIR, MASKS_DIR] {
        let p = dir.join(sub);
        std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let mut frames = Vec::with_capacity(seq.frames.len());
    for frame in &seq.frames {
        let point_file = format!("{POINTS_DIR}/{}.bin", frame.frame_id);
        let gt_file = format!("{GT_DIR}/{}.labels", frame.frame_id);
        dataio::write_frame(&dir.join(&point_file), &frame.points)?;
        dataio::write_labels(&dir.join(&gt_file), &frame.gt)?;
        frame.masks.write(&mask_path(&dir.join(MASKS_DIR), &frame.frame_id))?;
        frames.push(FrameEntry {
            frame_id: frame.frame_id.clone(),
            point_file,
            pose: frame.pose,
            timestamp: frame.timestamp,
            gt_file: Some(gt_file),
        });
    }
    let manifest = SequenceManifest {
        sequence_id: seq.spec.sequence_id.clone(),
        frames,
        calibration: seq.spec.camera.clone(),
        classes: seq.spec.classes.clone(),
    };
    let path = dir.join(MANIFEST_FILE);
    dataio::write_json(&path, &manifest)?;
    Ok(path)
}

/// Knobs for [`random_scene`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomSceneOptions {
    pub seed: u64,
    pub num_frames: usize,
    pub num_instances: usize,
    /// Share of instances placed next to a wall.
    pub wall_adjacent: f64,
    /// Share of instances that move.
    pub moving: f64,
    pub ego_speed: f64,
    /// Keep instances angularly separated (seen from the first sweep) so
    /// none hides another.
    pub separate_bearings: bool,
}

impl Default for RandomSceneOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            num_frames: 1,
            num_instances: 10,
            wall_adjacent: 0.3,
            moving: 0.0,
            ego_speed: 0.0,
            separate_bearings: true,
        }
    }
}

/// `|y| / x` limit for instance corners, inside the camera's field of view.
const HALF_FOV_MARGIN: f64 = 1.0;
const BEARING_PAD: f64 = 0.02;

fn bearing_interval(boxes: &[WorldBox]) -> (f64, f64) {
    boxes
        .iter()
        .flat_map(|b| b.corners_2d())
        .map(|c| c[1].atan2(c[0]))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), a| (lo.min(a), hi.max(a)))
}

/// A random corridor scene in front of the ego vehicle. Instances are drawn
/// in view of the camera, never overlap, and keep at least 1 m from each
/// other; wall-adjacent ones sit 0.8-1.0 m from a wall.
pub fn random_scene(opts: &RandomSceneOptions) -> Result<SceneSpec> {
    for restart in 0..50u64 {
        if let Some(spec) = try_random_scene(opts, restart) {
            return Ok(spec);
        }
    }
    Err(Error::Spec(format!("could not place {} instances", opts.num_instances)))
}

fn class_for_slot(slot: usize) -> i32 {
    match slot % 10 {
        0..=2 => VEHICLE,
        3..=5 => CYCLIST,
        _ => PEDESTRIAN,
    }
}

fn try_random_scene(opts: &RandomSceneOptions, restart: u64) -> Option<SceneSpec> {
    let mut rng = keyed_rng(opts.seed, &[0x73_6365_6e65, restart]);
    let mut spec = SceneSpec::new(opts.seed, opts.num_frames, Vec::new());
    spec.ego.velocity = [opts.ego_speed, 0.0];
    let walls = spec.wall_boxes();
    let mut taken: Vec<(f64, f64)> = Vec::new();
    let mut attempts = 0usize;
    while spec.instances.len() < opts.num_instances {
        attempts += 1;
        if attempts > 3_000 {
            return None;
        }
        let class = class_for_slot(spec.instances.len());
        let adjacent = rng.gen_bool(opts.wall_adjacent.clamp(0.0, 1.0));
        // pedestrians face anywhere; vehicles and cyclists travel along the corridor
        let (yaw_spread, x_range) = match class {
            VEHICLE => (0.17, (12.0, 38.0)),
            CYCLIST => (0.3, (6.0, 30.0)),
            _ => (std::f64::consts::PI, (6.0, 30.0)),
        };
        let heading = if class != PEDESTRIAN && rng.gen_bool(0.5) {
            std::f64::consts::PI
        } else {
            0.0
        };
        let yaw = heading + rng.gen_range(-yaw_spread..=yaw_spread);
        let x = rng.gen_range(x_range.0..x_range.1);
        let mut inst = match class {
            VEHICLE => {
                let mut v = InstanceSpec::vehicle(Trajectory::fixed(0.0, 0.0, yaw));
                v.parts[0].extents = [
                    rng.gen_range(3.8..5.0),
                    rng.gen_range(1.7..2.0),
                    rng.gen_range(1.35..1.5),
                ];
                v
            }
            PEDESTRIAN => InstanceSpec::pedestrian(Trajectory::fixed(0.0, 0.0, yaw)),
            _ => InstanceSpec::cyclist(Trajectory::fixed(0.0, 0.0, yaw)),
        };
        let half_span = {
            let probe = SceneSpec {
                instances: vec![inst.clone()],
                ..spec.clone()
            };
            probe
                .instance_boxes(0, 0)
                .iter()
                .flat_map(|b| b.corners_2d())
                .map(|c| c[1].abs())
                .fold(0.0, f64::max)
        };
        let y = if adjacent {
            let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            side * (CORRIDOR_INNER - rng.gen_range(0.8..1.0) - half_span)
        } else {
            let limit = CORRIDOR_INNER - 1.0 - half_span;
            rng.gen_range(-limit..limit)
        };
        inst.trajectory.start = [x, y];
        if rng.gen_bool(opts.moving.clamp(0.0, 1.0)) {
            let speed = match class {
                VEHICLE => rng.gen_range(1.0..4.0),
                PEDESTRIAN => rng.gen_range(0.5..1.5),
                _ => rng.gen_range(1.0..3.0),
            };
            inst.trajectory.velocity = [speed * yaw.cos(), speed * yaw.sin()];
        }

        let mut candidate = spec.clone();
        candidate.instances.push(inst);
        let k = candidate.instances.len() - 1;
        let clear = (0..spec.num_frames).all(|f| {
            let mine = candidate.instance_boxes(k, f);
            let clash = (0..k).any(|j| {
                candidate.instance_boxes(j, f).iter().any(|o| {
                    mine.iter().any(|b| {
                        let grown = WorldBox {
                            extents: [b.extents[0] + 2.0, b.extents[1] + 2.0, b.extents[2]],
                            z0: o.z0,
                            ..*b
                        };
                        grown.overlaps(o)
                    })
                })
            });
            !clash && !mine.iter().any(|b| walls.iter().any(|w| b.overlaps(w)))
        });
        let first = candidate.instance_boxes(k, 0);
        let (lo, hi) = bearing_interval(&first);
        let in_view = first
            .iter()
            .flat_map(|b| b.corners_2d())
            .all(|c| c[0] > 4.0 && (c[1] / c[0]).abs() < HALF_FOV_MARGIN);
        let separated =
            !opts.separate_bearings || taken.iter().all(|&(a, b)| hi + BEARING_PAD < a || lo - BEARING_PAD > b);
        if clear && in_view && separated {
            taken.push((lo, hi));
            spec = candidate;
        }
    }
    Some(spec)
}
