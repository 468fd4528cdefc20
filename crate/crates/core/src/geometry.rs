//! Coordinate machinery: pinhole projection, ego-pose alignment between
//! sweeps, voxelization and BEV reductions.
//!
//! Everything here is computed in `f64`. Matrices are stored row-major, both
//! in memory and on disk.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const ORIGIN: Point3 = Point3 { x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn distance(&self, other: &Point3) -> f64 {
        self.distance_squared(other).sqrt()
    }

    pub fn distance_squared(&self, other: &Point3) -> f64 {
        let (dx, dy, dz) = (self.x - other.x, self.y - other.y, self.z - other.z);
        dx * dx + dy * dy + dz * dz
    }

    /// Planar distance, z ignored.
    pub fn bev_distance(&self, x: f64, y: f64) -> f64 {
        ((self.x - x).powi(2) + (self.y - y).powi(2)).sqrt()
    }

    /// Planar distance from the frame origin.
    pub fn bev_range(&self) -> f64 {
        self.x.hypot(self.y)
    }
}

/// Continuous image coordinates of a projected point plus its camera depth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pixel {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

impl Pixel {
    /// Integer pixel containing this projection.
    pub fn cell(&self) -> (u32, u32) {
        (self.u.floor() as u32, self.v.floor() as u32)
    }
}

/// Pinhole camera model. The extrinsic maps point-cloud coordinates into the
/// camera frame (x right, y down, z forward).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub intrinsic: [[f64; 3]; 3],
    pub extrinsic: [[f64; 4]; 4],
    pub image_width: u32,
    pub image_height: u32,
}

impl Calibration {
    /// A forward-looking camera mounted at `(0, 0, mount_height)` in the
    /// point-cloud frame, optical axis along +x.
    pub fn forward_pinhole(image_width: u32, image_height: u32, focal: f64, mount_height: f64) -> Self {
        let cx = image_width as f64 / 2.0;
        let cy = image_height as f64 / 2.0;
        // camera x = -y, camera y = -z, camera z = x
        let extrinsic = [
            [0.0, -1.0, 0.0, 0.0],
            [0.0, 0.0, -1.0, mount_height],
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ];
        Self {
            intrinsic: [[focal, 0.0, cx], [0.0, focal, cy], [0.0, 0.0, 1.0]],
            extrinsic,
            image_width,
            image_height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_width == 0 || self.image_height == 0 {
            return Err(Error::Config(format!(
                "image size {}x{} must be at least 1x1",
                self.image_width, self.image_height
            )));
        }
        let all_finite = self.intrinsic.iter().flatten().all(|v| v.is_finite())
            && self.extrinsic.iter().flatten().all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::Config("calibration contains non-finite entries".into()));
        }
        if self.intrinsic_matrix().try_inverse().is_none() || self.intrinsic_matrix().determinant().abs() < 1e-12 {
            return Err(Error::Config("intrinsic matrix is not invertible".into()));
        }
        if self.extrinsic[3] != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::Config("extrinsic bottom row must be (0, 0, 0, 1)".into()));
        }
        Ok(())
    }

    fn intrinsic_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_row_slice(&self.intrinsic.concat())
    }

    fn extrinsic_matrix(&self) -> Matrix4<f64> {
        Matrix4::from_row_slice(&self.extrinsic.concat())
    }

    pub fn contains_pixel(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u < self.image_width as f64 && v < self.image_height as f64
    }
}

/// Rigid ego-to-world transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 16]", into = "[f64; 16]")]
pub struct Pose {
    matrix: Matrix4<f64>,
}

impl Pose {
    const ORTHONORMAL_TOLERANCE: f64 = 1e-6;

    pub fn identity() -> Self {
        Self {
            matrix: Matrix4::identity(),
        }
    }

    pub fn translation(x: f64, y: f64, z: f64) -> Self {
        Self::from_yaw_translation(0.0, x, y, z)
    }

    /// Rotation about +z by `yaw` radians followed by a translation.
    pub fn from_yaw_translation(yaw: f64, x: f64, y: f64, z: f64) -> Self {
        let (s, c) = yaw.sin_cos();
        #[rustfmt::skip]
        let matrix = Matrix4::new(
            c, -s, 0.0, x,
            s, c, 0.0, y,
            0.0, 0.0, 1.0, z,
            0.0, 0.0, 0.0, 1.0,
        );
        Self { matrix }
    }

    /// Builds a pose from 16 row-major values, checking the rigid-transform
    /// invariants.
    pub fn from_row_major(values: [f64; 16]) -> Result<Self> {
        let pose = Self {
            matrix: Matrix4::from_row_slice(&values),
        };
        pose.validate()?;
        Ok(pose)
    }

    pub fn to_row_major(&self) -> [f64; 16] {
        let mut out = [0.0; 16];
        for r in 0..4 {
            for c in 0..4 {
                out[r * 4 + c] = self.matrix[(r, c)];
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.matrix;
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("pose contains non-finite entries".into()));
        }
        if m.row(3).iter().copied().ne([0.0, 0.0, 0.0, 1.0]) {
            return Err(Error::Config("pose bottom row must be (0, 0, 0, 1)".into()));
        }
        let rotation = m.fixed_view::<3, 3>(0, 0);
        let gram = rotation.transpose() * rotation;
        let deviation = (gram - Matrix3::identity()).abs().max();
        if deviation > Self::ORTHONORMAL_TOLERANCE {
            return Err(Error::Config(format!(
                "pose rotation block is not orthonormal (deviation {deviation:e})"
            )));
        }
        Ok(())
    }

    pub fn inverse(&self) -> Result<Pose> {
        self.matrix
            .try_inverse()
            .map(|matrix| Pose { matrix })
            .ok_or_else(|| Error::Config("pose matrix is singular".into()))
    }

    pub fn compose(&self, rhs: &Pose) -> Pose {
        Pose {
            matrix: self.matrix * rhs.matrix,
        }
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        let v = self.matrix * Vector4::new(p.x, p.y, p.z, 1.0);
        Point3::new(v.x, v.y, v.z)
    }

    pub fn translation_part(&self) -> Point3 {
        Point3::new(self.matrix[(0, 3)], self.matrix[(1, 3)], self.matrix[(2, 3)])
    }
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl TryFrom<[f64; 16]> for Pose {
    type Error = Error;

    fn try_from(values: [f64; 16]) -> Result<Self> {
        Pose::from_row_major(values)
    }
}

impl From<Pose> for [f64; 16] {
    fn from(pose: Pose) -> Self {
        pose.to_row_major()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VoxelIndex {
    pub ix: i64,
    pub iy: i64,
    pub iz: i64,
}

impl VoxelIndex {
    pub const fn new(ix: i64, iy: i64, iz: i64) -> Self {
        Self { ix, iy, iz }
    }

    /// Voxel containing `p`, using `floor(coord / voxel_size)` on every axis.
    pub fn containing(p: &Point3, voxel_size: f64) -> Self {
        Self {
            ix: (p.x / voxel_size).floor() as i64,
            iy: (p.y / voxel_size).floor() as i64,
            iz: (p.z / voxel_size).floor() as i64,
        }
    }
}

/// Partition of a point list into voxels. Member lists are ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub voxel_size: f64,
    pub cells: BTreeMap<VoxelIndex, Vec<usize>>,
}

impl VoxelGrid {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn get(&self, index: &VoxelIndex) -> Option<&[usize]> {
        self.cells.get(index).map(Vec::as_slice)
    }
}

fn check_points(points: &[Point3]) -> Result<()> {
    match points.iter().position(|p| !p.is_finite()) {
        Some(i) => Err(Error::Input(format!("point {i} has a non-finite coordinate"))),
        None => Ok(()),
    }
}

/// Projects points into the camera image. Only points in front of the
/// camera (`depth > 0`) that land in `[0, width) x [0, height)` are returned,
/// in input order.
pub fn project_points(points: &[Point3], calib: &Calibration) -> Result<Vec<(usize, Pixel)>> {
    calib.validate()?;
    check_points(points)?;
    let intrinsic = calib.intrinsic_matrix();
    let extrinsic = calib.extrinsic_matrix();

    let mut out = Vec::new();
    for (i, p) in points.iter().enumerate() {
        let cam = extrinsic * Vector4::new(p.x, p.y, p.z, 1.0);
        let depth = cam.z;
        if depth <= 0.0 {
            continue;
        }
        let uvw = intrinsic * Vector3::new(cam.x, cam.y, cam.z);
        let (u, v) = (uvw.x / depth, uvw.y / depth);
        if calib.contains_pixel(u, v) {
            out.push((i, Pixel { u, v, depth }));
        }
    }
    Ok(out)
}

/// Expresses points recorded at `pose_adj` in the frame of `pose_cur`
/// (`T_cur^-1 * T_adj * p`).
pub fn transform_frame(points: &[Point3], pose_adj: &Pose, pose_cur: &Pose) -> Result<Vec<Point3>> {
    let relative = relative_pose(pose_adj, pose_cur)?;
    Ok(points.iter().map(|p| relative.apply(p)).collect())
}

/// `T_cur^-1 * T_adj`.
pub fn relative_pose(pose_adj: &Pose, pose_cur: &Pose) -> Result<Pose> {
    pose_adj.validate()?;
    pose_cur.validate()?;
    Ok(pose_cur.inverse()?.compose(pose_adj))
}

pub fn voxelize(points: &[Point3], voxel_size: f64) -> Result<VoxelGrid> {
    if !(voxel_size > 0.0 && voxel_size.is_finite()) {
        return Err(Error::Config(format!("voxel size must be positive, got {voxel_size}")));
    }
    check_points(points)?;
    let mut cells: BTreeMap<VoxelIndex, Vec<usize>> = BTreeMap::new();
    for (i, p) in points.iter().enumerate() {
        cells.entry(VoxelIndex::containing(p, voxel_size)).or_default().push(i);
    }
    Ok(VoxelGrid { voxel_size, cells })
}

/// Mean `(x, y)` of a non-empty point set.
pub fn bev_centroid(points: &[Point3]) -> Result<(f64, f64)> {
    if points.is_empty() {
        return Err(Error::Input("centroid of an empty point set".into()));
    }
    let n = points.len() as f64;
    let (sx, sy) = points.iter().fold((0.0, 0.0), |(sx, sy), p| (sx + p.x, sy + p.y));
    Ok((sx / n, sy / n))
}
