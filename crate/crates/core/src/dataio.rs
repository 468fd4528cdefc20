//! On-disk formats.
//!
//! Bulk per-point arrays use fixed little-endian binary layouts:
//!
//! | file        | layout                                                        |
//! |-------------|---------------------------------------------------------------|
//! | points      | `"YOCL"`, `u32` count, count x (`f32` x, y, z, intensity)     |
//! | labels      | `u32` count, `u8` stage, count x (`i32` class, `i32` instance, `f32` confidence) |
//! | predictions | `u32` count, `u16` classes, count x classes x `f32` score      |
//!
//! Manifests, clicks, masks, predicted instances and configs are UTF-8 JSON
//! (clicks are JSON lines).

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::clicksim::ClickAnnotation;
use crate::error::{Error, Result};
use crate::geometry::{Calibration, Point3, Pose};

pub const FRAME_MAGIC: &[u8; 4] = b"YOCL";
const FRAME_HEADER_LEN: usize = 8;
const FRAME_RECORD_LEN: usize = 16;
const LABEL_HEADER_LEN: usize = 5;
const LABEL_RECORD_LEN: usize = 12;
const PREDICTION_HEADER_LEN: usize = 6;

/// One LiDAR return as stored on disk.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LidarPoint {
    pub x: f32,
    pub y: f32,
    pub z: f32,
    pub intensity: f32,
}

impl LidarPoint {
    pub fn position(&self) -> Point3 {
        Point3::new(self.x as f64, self.y as f64, self.z as f64)
    }
}

/// Which pipeline step produced a label file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Plg,
    Tsu,
    Ile,
    /// Ground truth written by the synthetic generator.
    Gt,
}

impl Stage {
    pub fn code(self) -> u8 {
        match self {
            Stage::Plg => 0,
            Stage::Tsu => 1,
            Stage::Ile => 2,
            Stage::Gt => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Stage> {
        match code {
            0 => Some(Stage::Plg),
            1 => Some(Stage::Tsu),
            2 => Some(Stage::Ile),
            3 => Some(Stage::Gt),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::Plg => "plg",
            Stage::Tsu => "tsu",
            Stage::Ile => "ile",
            Stage::Gt => "gt",
        }
    }
}

impl std::str::FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plg" => Ok(Stage::Plg),
            "tsu" => Ok(Stage::Tsu),
            "ile" => Ok(Stage::Ile),
            "gt" => Ok(Stage::Gt),
            other => Err(Error::Config(format!("unknown stage `{other}`"))),
        }
    }
}

pub const IGNORE: i32 = -1;

/// Per-point class, instance and confidence. `-1` marks an ignored class or
/// the absence of an instance.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabelSet {
    pub stage: Stage,
    pub class_ids: Vec<i32>,
    pub instance_ids: Vec<i32>,
    pub confidences: Vec<f32>,
}

impl PseudoLabelSet {
    pub fn ignored(stage: Stage, len: usize) -> Self {
        Self {
            stage,
            class_ids: vec![IGNORE; len],
            instance_ids: vec![IGNORE; len],
            confidences: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.class_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.class_ids.is_empty()
    }

    /// Point indices carrying `instance_id`, ascending.
    pub fn instance_points(&self, instance_id: i32) -> Vec<usize> {
        self.instance_ids
            .iter()
            .enumerate()
            .filter(|(_, &id)| id == instance_id)
            .map(|(i, _)| i)
            .collect()
    }

    /// Distinct non-negative instance ids, ascending.
    pub fn instance_ids_present(&self) -> Vec<i32> {
        let mut ids: Vec<i32> = self.instance_ids.iter().copied().filter(|&id| id >= 0).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn validate(&self, num_classes: usize) -> Result<()> {
        let n = self.class_ids.len();
        if self.instance_ids.len() != n || self.confidences.len() != n {
            return Err(Error::Input("label arrays have different lengths".into()));
        }
        for i in 0..n {
            let c = self.class_ids[i];
            if c < IGNORE || (c >= 0 && c as usize >= num_classes) {
                return Err(Error::Input(format!("point {i}: class id {c} out of range")));
            }
            if self.instance_ids[i] < IGNORE {
                return Err(Error::Input(format!(
                    "point {i}: instance id {} < -1",
                    self.instance_ids[i]
                )));
            }
            let conf = self.confidences[i];
            if !(0.0..=1.0).contains(&conf) {
                return Err(Error::Input(format!("point {i}: confidence {conf} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Per-point class score vectors, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    pub num_classes: usize,
    pub scores: Vec<f32>,
}

impl PredictionSet {
    pub fn len(&self) -> usize {
        self.scores.len().checked_div(self.num_classes).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn point(&self, i: usize) -> &[f32] {
        &self.scores[i * self.num_classes..(i + 1) * self.num_classes]
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || !self.scores.len().is_multiple_of(self.num_classes) {
            return Err(Error::Input("prediction scores do not tile into class vectors".into()));
        }
        if let Some(i) = self.scores.iter().position(|s| !(0.0..=1.0).contains(s)) {
            return Err(Error::Input(format!("score #{i} outside [0, 1]")));
        }
        Ok(())
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(bytes).map_err(|e| Error::io(path, e))
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

fn f32_at(bytes: &[u8], at: usize) -> f32 {
    f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

fn i32_at(bytes: &[u8], at: usize) -> i32 {
    i32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

/// Checks that a payload of `count` fixed-size records follows the header.
fn check_payload(path: &Path, bytes: &[u8], header: usize, count: usize, record: usize) -> Result<()> {
    let expected = header + count * record;
    if bytes.len() < expected {
        let complete = (bytes.len() - header) / record;
        return Err(Error::format(
            path,
            (header + complete * record) as u64,
            format!("truncated payload: header announces {count} records, found {complete}"),
        ));
    }
    if bytes.len() > expected {
        return Err(Error::format(
            path,
            expected as u64,
            format!(
                "count mismatch: {} trailing bytes after {count} records",
                bytes.len() - expected
            ),
        ));
    }
    Ok(())
}

pub fn encode_frame(points: &[LidarPoint]) -> Vec<u8> {
    let mut out = Vec::with_capacity(FRAME_HEADER_LEN + points.len() * FRAME_RECORD_LEN);
    out.extend_from_slice(FRAME_MAGIC);
    out.extend_from_slice(&(points.len() as u32).to_le_bytes());
    for p in points {
        for v in [p.x, p.y, p.z, p.intensity] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// `path` is only used to label errors.
pub fn decode_frame(bytes: &[u8], path: &Path) -> Result<Vec<LidarPoint>> {
    if bytes.len() < 4 || &bytes[..4] != FRAME_MAGIC {
        return Err(Error::format(path, 0, "bad magic, expected \"YOCL\""));
    }
    if bytes.len() < FRAME_HEADER_LEN {
        return Err(Error::format(path, bytes.len() as u64, "truncated header"));
    }
    let count = u32_at(bytes, 4) as usize;
    check_payload(path, bytes, FRAME_HEADER_LEN, count, FRAME_RECORD_LEN)?;
    let points = bytes[FRAME_HEADER_LEN..]
        .chunks_exact(FRAME_RECORD_LEN)
        .map(|rec| LidarPoint {
            x: f32_at(rec, 0),
            y: f32_at(rec, 4),
            z: f32_at(rec, 8),
            intensity: f32_at(rec, 12),
        })
        .collect();
    Ok(points)
}

pub fn write_frame(path: &Path, points: &[LidarPoint]) -> Result<()> {
    write_bytes(path, &encode_frame(points))
}

pub fn read_frame(path: &Path) -> Result<Vec<LidarPoint>> {
    decode_frame(&read_bytes(path)?, path)
}

pub fn encode_labels(labels: &PseudoLabelSet) -> Vec<u8> {
    let n = labels.len();
    let mut out = Vec::with_capacity(LABEL_HEADER_LEN + n * LABEL_RECORD_LEN);
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.push(labels.stage.code());
    for i in 0..n {
        out.extend_from_slice(&labels.class_ids[i].to_le_bytes());
        out.extend_from_slice(&labels.instance_ids[i].to_le_bytes());
        out.extend_from_slice(&labels.confidences[i].to_le_bytes());
    }
    out
}

pub fn decode_labels(bytes: &[u8], path: &Path) -> Result<PseudoLabelSet> {
    if bytes.len() < LABEL_HEADER_LEN {
        return Err(Error::format(path, bytes.len() as u64, "truncated header"));
    }
    let count = u32_at(bytes, 0) as usize;
    let stage =
        Stage::from_code(bytes[4]).ok_or_else(|| Error::format(path, 4, format!("unknown stage code {}", bytes[4])))?;
    check_payload(path, bytes, LABEL_HEADER_LEN, count, LABEL_RECORD_LEN)?;
    let mut labels = PseudoLabelSet {
        stage,
        class_ids: Vec::with_capacity(count),
        instance_ids: Vec::with_capacity(count),
        confidences: Vec::with_capacity(count),
    };
    for (k, rec) in bytes[LABEL_HEADER_LEN..].chunks_exact(LABEL_RECORD_LEN).enumerate() {
        let offset = (LABEL_HEADER_LEN + k * LABEL_RECORD_LEN) as u64;
        let (class, instance, conf) = (i32_at(rec, 0), i32_at(rec, 4), f32_at(rec, 8));
        if class < IGNORE {
            return Err(Error::format(path, offset, format!("class id {class} < -1")));
        }
        if instance < IGNORE {
            return Err(Error::format(path, offset + 4, format!("instance id {instance} < -1")));
        }
        if !(0.0..=1.0).contains(&conf) {
            return Err(Error::format(
                path,
                offset + 8,
                format!("confidence {conf} outside [0, 1]"),
            ));
        }
        labels.class_ids.push(class);
        labels.instance_ids.push(instance);
        labels.confidences.push(conf);
    }
    Ok(labels)
}

pub fn write_labels(path: &Path, labels: &PseudoLabelSet) -> Result<()> {
    write_bytes(path, &encode_labels(labels))
}

pub fn read_labels(path: &Path) -> Result<PseudoLabelSet> {
    decode_labels(&read_bytes(path)?, path)
}

pub fn encode_predictions(pred: &PredictionSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(PREDICTION_HEADER_LEN + pred.scores.len() * 4);
    out.extend_from_slice(&(pred.len() as u32).to_le_bytes());
    out.extend_from_slice(&(pred.num_classes as u16).to_le_bytes());
    for s in &pred.scores {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out
}

pub fn decode_predictions(bytes: &[u8], path: &Path) -> Result<PredictionSet> {
    if bytes.len() < PREDICTION_HEADER_LEN {
        return Err(Error::format(path, bytes.len() as u64, "truncated header"));
    }
    let count = u32_at(bytes, 0) as usize;
    let num_classes = u16::from_le_bytes([bytes[4], bytes[5]]) as usize;
    if num_classes == 0 {
        return Err(Error::format(path, 4, "class count must be at least 1"));
    }
    check_payload(path, bytes, PREDICTION_HEADER_LEN, count, num_classes * 4)?;
    let mut scores = Vec::with_capacity(count * num_classes);
    for (k, rec) in bytes[PREDICTION_HEADER_LEN..].chunks_exact(4).enumerate() {
        let s = f32_at(rec, 0);
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::format(
                path,
                (PREDICTION_HEADER_LEN + 4 * k) as u64,
                format!("score {s} outside [0, 1]"),
            ));
        }
        scores.push(s);
    }
    Ok(PredictionSet { num_classes, scores })
}

pub fn write_predictions(path: &Path, pred: &PredictionSet) -> Result<()> {
    write_bytes(path, &encode_predictions(pred))
}

pub fn read_predictions(path: &Path) -> Result<PredictionSet> {
    decode_predictions(&read_bytes(path)?, path)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::format(path, 0, format!("line {} column {}: {e}", e.line(), e.column())))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable value");
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

/// Clicks are stored one JSON object per line.
pub fn write_clicks(path: &Path, clicks: &[ClickAnnotation]) -> Result<()> {
    let mut text = String::new();
    for click in clicks {
        text.push_str(&serde_json::to_string(click).expect("serializable click"));
        text.push('\n');
    }
    write_bytes(path, text.as_bytes())
}

pub fn read_clicks(path: &Path) -> Result<Vec<ClickAnnotation>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut clicks = Vec::new();
    let mut offset = 0u64;
    for (lineno, line) in text.lines().enumerate() {
        if !line.trim().is_empty() {
            let click: ClickAnnotation = serde_json::from_str(line)
                .map_err(|e| Error::format(path, offset, format!("line {}: {e}", lineno + 1)))?;
            clicks.push(click);
        }
        offset += line.len() as u64 + 1;
    }
    Ok(clicks)
}

/// Run-length encoded mask as stored in a mask file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskRecord {
    pub instance_id: i32,
    pub class_id: i32,
    /// Sub-part of a composite instance (rider / bicycle); 0 for simple ones.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub part: u32,
    /// Prompt pixel that produced this mask, for externally computed masks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<[u32; 2]>,
    /// `[start, len, start, len, ...]` over row-major pixel order.
    pub rle: Vec<u32>,
}

fn is_zero(v: &u32) -> bool {
    *v == 0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskFile {
    pub width: u32,
    pub height: u32,
    pub instances: Vec<MaskRecord>,
}

/// One record of a predicted-instance file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedInstanceRecord {
    pub instance_id: i32,
    pub class_id: i32,
    pub score: f64,
    pub point_indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameEntry {
    pub frame_id: String,
    pub point_file: String,
    pub pose: Pose,
    pub timestamp: f64,
    /// Ground-truth label file, when the sequence has one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_file: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceManifest {
    pub sequence_id: String,
    pub frames: Vec<FrameEntry>,
    pub calibration: Calibration,
    pub classes: Vec<String>,
}

impl SequenceManifest {
    pub fn validate(&self) -> Result<()> {
        self.calibration.validate()?;
        let mut seen = HashSet::new();
        for f in &self.frames {
            if !seen.insert(f.frame_id.as_str()) {
                return Err(Error::Input(format!("duplicate frame id `{}`", f.frame_id)));
            }
        }
        for w in self.frames.windows(2) {
            if !(w[1].timestamp > w[0].timestamp) {
                return Err(Error::Input(format!(
                    "frame `{}` timestamp does not increase over `{}`",
                    w[1].frame_id, w[0].frame_id
                )));
            }
        }
        if self.classes.is_empty() {
            return Err(Error::Input("manifest lists no classes".into()));
        }
        Ok(())
    }

    pub fn frame_index(&self, frame_id: &str) -> Option<usize> {
        self.frames.iter().position(|f| f.frame_id == frame_id)
    }
}

/// A loaded sweep.
#[derive(Debug, Clone)]
pub struct PointCloudFrame {
    pub frame_id: String,
    pub points: Vec<LidarPoint>,
    pub pose: Pose,
    pub timestamp: f64,
    pub gt: Option<PseudoLabelSet>,
}

impl PointCloudFrame {
    pub fn positions(&self) -> Vec<Point3> {
        self.points.iter().map(LidarPoint::position).collect()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// A manifest plus the directory its relative paths resolve against.
#[derive(Debug, Clone)]
pub struct Sequence {
    pub root: PathBuf,
    pub manifest: SequenceManifest,
}

impl Sequence {
    pub fn open(manifest_path: &Path) -> Result<Self> {
        let manifest: SequenceManifest = read_json(manifest_path)?;
        manifest.validate()?;
        let root = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { root, manifest })
    }

    pub fn len(&self) -> usize {
        self.manifest.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.frames.is_empty()
    }

    pub fn resolve(&self, relative: &str) -> PathBuf {
        self.root.join(relative)
    }

    pub fn load_frame(&self, index: usize) -> Result<PointCloudFrame> {
        let entry = self
            .manifest
            .frames
            .get(index)
            .ok_or_else(|| Error::Lookup(format!("frame #{index} not in sequence")))?;
        let points = read_frame(&self.resolve(&entry.point_file))?;
        let gt = match &entry.gt_file {
            Some(file) => {
                let path = self.resolve(file);
                let gt = read_labels(&path)?;
                if gt.len() != points.len() {
                    return Err(Error::format(
                        &path,
                        0,
                        format!("{} labels for {} points", gt.len(), points.len()),
                    ));
                }
                Some(gt)
            }
            None => None,
        };
        Ok(PointCloudFrame {
            frame_id: entry.frame_id.clone(),
            points,
            pose: entry.pose,
            timestamp: entry.timestamp,
            gt,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(path: &str) -> PathBuf {
        PathBuf::from(path)
    }

    #[test]
    fn empty_frame_is_eight_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.bin");
        write_frame(&path, &[]).unwrap();
        assert_eq!(fs::metadata(&path).unwrap().len(), 8);
        assert!(read_frame(&path).unwrap().is_empty());
    }

    #[test]
    fn three_point_frame_size() {
        let pts = vec![LidarPoint::default(); 3];
        assert_eq!(encode_frame(&pts).len(), 8 + 3 * 16);
    }

    #[test]
    fn corrupt_magic_reports_offset_zero() {
        let mut bytes = encode_frame(&[LidarPoint::default()]);
        bytes[..4].copy_from_slice(b"XXXX");
        match decode_frame(&bytes, &p("f.bin")) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn frame_truncation_and_trailing_bytes() {
        let bytes = encode_frame(&[LidarPoint::default(); 2]);
        match decode_frame(&bytes[..30], &p("f.bin")) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 24),
            other => panic!("unexpected {other:?}"),
        }
        let mut longer = bytes.clone();
        longer.push(0);
        match decode_frame(&longer, &p("f.bin")) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 40),
            other => panic!("unexpected {other:?}"),
        }
        assert!(decode_frame(&bytes[..6], &p("f.bin")).is_err());
    }

    #[test]
    fn label_sizes_and_errors() {
        let all_ignored = PseudoLabelSet::ignored(Stage::Plg, 4);
        let back = decode_labels(&encode_labels(&all_ignored), &p("l")).unwrap();
        assert_eq!(back, all_ignored);

        let mixed = PseudoLabelSet {
            stage: Stage::Tsu,
            class_ids: vec![0, 1, -1, 2, 0],
            instance_ids: vec![3, 3, -1, 7, 0],
            confidences: vec![1.0, 0.5, 0.0, 0.25, 0.75],
        };
        let bytes = encode_labels(&mixed);
        assert_eq!(bytes.len(), 4 + 1 + 5 * 12);
        assert_eq!(decode_labels(&bytes, &p("l")).unwrap(), mixed);

        // header count 10 with 9 records
        let mut nine = PseudoLabelSet::ignored(Stage::Ile, 9);
        nine.class_ids[0] = 1;
        let mut bytes = encode_labels(&nine);
        bytes[..4].copy_from_slice(&10u32.to_le_bytes());
        assert!(matches!(
            decode_labels(&bytes, &p("l")),
            Err(Error::Format { offset: 113, .. })
        ));

        let mut bad_stage = encode_labels(&mixed);
        bad_stage[4] = 9;
        assert!(matches!(
            decode_labels(&bad_stage, &p("l")),
            Err(Error::Format { offset: 4, .. })
        ));
    }

    #[test]
    fn prediction_errors() {
        let pred = PredictionSet {
            num_classes: 2,
            scores: vec![0.5, 0.5, 1.0, 0.0],
        };
        let mut bytes = encode_predictions(&pred);
        assert_eq!(decode_predictions(&bytes, &p("x")).unwrap(), pred);
        bytes[10..14].copy_from_slice(&2.0f32.to_le_bytes());
        assert!(matches!(
            decode_predictions(&bytes, &p("x")),
            Err(Error::Format { offset: 10, .. })
        ));
        assert!(decode_predictions(&bytes[..7], &p("x")).is_err());
    }

    #[test]
    fn clicks_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clicks.jsonl");
        let clicks = vec![
            ClickAnnotation {
                frame_id: "f0".into(),
                instance_id: 3,
                class_id: 0,
                bev: [1.5, -2.0],
                resolved_point_index: Some(17),
            },
            ClickAnnotation {
                frame_id: "f1".into(),
                instance_id: 4,
                class_id: 2,
                bev: [0.0, 0.25],
                resolved_point_index: None,
            },
        ];
        write_clicks(&path, &clicks).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.lines().nth(1).unwrap().starts_with("{\"frame_id\":\"f1\""));
        assert_eq!(read_clicks(&path).unwrap(), clicks);

        fs::write(&path, "{\"frame_id\":\"f0\"}\n").unwrap();
        assert!(matches!(read_clicks(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn manifest_validation() {
        let entry = |id: &str, t: f64| FrameEntry {
            frame_id: id.into(),
            point_file: format!("{id}.bin"),
            pose: Pose::identity(),
            timestamp: t,
            gt_file: None,
        };
        let mut m = SequenceManifest {
            sequence_id: "s".into(),
            frames: vec![entry("a", 0.0), entry("b", 0.1)],
            calibration: Calibration::forward_pinhole(64, 32, 32.0, 2.0),
            classes: vec!["vehicle".into()],
        };
        m.validate().unwrap();
        m.frames[1].timestamp = 0.0;
        assert!(m.validate().is_err());
        m.frames[1] = entry("a", 0.2);
        assert!(m.validate().is_err());
    }

    fn arb_labels() -> impl Strategy<Value = PseudoLabelSet> {
        prop::collection::vec((-1i32..5, -1i32..100, 0.0f32..=1.0), 0..50).prop_map(|recs| PseudoLabelSet {
            stage: Stage::Tsu,
            class_ids: recs.iter().map(|r| r.0).collect(),
            instance_ids: recs.iter().map(|r| r.1).collect(),
            confidences: recs.iter().map(|r| r.2).collect(),
        })
    }

    proptest! {
        #[test]
        fn frame_round_trip(pts in prop::collection::vec((any::<f32>(), any::<f32>(), any::<f32>(), any::<f32>()), 0..40)) {
            let pts: Vec<LidarPoint> = pts.into_iter().map(|(x, y, z, intensity)| LidarPoint { x, y, z, intensity }).collect();
            let back = decode_frame(&encode_frame(&pts), &p("f")).unwrap();
            // compare bit patterns so NaN payloads count too
            let bits = |v: &[LidarPoint]| v.iter().map(|q| [q.x.to_bits(), q.y.to_bits(), q.z.to_bits(), q.intensity.to_bits()]).collect::<Vec<_>>();
            prop_assert_eq!(bits(&back), bits(&pts));
        }

        #[test]
        fn labels_round_trip(labels in arb_labels()) {
            prop_assert_eq!(decode_labels(&encode_labels(&labels), &p("l")).unwrap(), labels);
        }

        #[test]
        fn readers_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..200)) {
            let _ = decode_frame(&bytes, &p("f"));
            let _ = decode_labels(&bytes, &p("l"));
            let _ = decode_predictions(&bytes, &p("p"));
        }
    }
}
