//! 2D instance masks and the providers that answer point prompts with them.
//!
//! A provider stands in for a promptable segmenter. Two implementations ship:
//! [`FileMaskProvider`] serves externally computed masks from mask files and
//! [`SyntheticOracle`] derives masks from ground-truth projections with
//! controllable error modes.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataio::{self, MaskFile, MaskRecord};
use crate::error::{Error, Result};

/// Binary image mask stored as sorted, non-overlapping runs over row-major
/// pixel order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask2D {
    width: u32,
    height: u32,
    runs: Vec<(u32, u32)>,
}

impl Mask2D {
    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            runs: Vec::new(),
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn runs(&self) -> &[(u32, u32)] {
        &self.runs
    }

    fn pixel_count(&self) -> u64 {
        self.width as u64 * self.height as u64
    }

    pub fn from_bitmap(width: u32, height: u32, bits: &[bool]) -> Self {
        assert_eq!(bits.len() as u64, width as u64 * height as u64, "bitmap size");
        let mut runs = Vec::new();
        let mut i = 0usize;
        while i < bits.len() {
            if bits[i] {
                let start = i;
                while i < bits.len() && bits[i] {
                    i += 1;
                }
                runs.push((start as u32, (i - start) as u32));
            } else {
                i += 1;
            }
        }
        Self { width, height, runs }
    }

    pub fn to_bitmap(&self) -> Vec<bool> {
        let mut bits = vec![false; self.pixel_count() as usize];
        for &(start, len) in &self.runs {
            bits[start as usize..(start + len) as usize].fill(true);
        }
        bits
    }

    pub fn from_pixels(width: u32, height: u32, pixels: impl IntoIterator<Item = (u32, u32)>) -> Self {
        let mut bits = vec![false; width as usize * height as usize];
        for (x, y) in pixels {
            if x < width && y < height {
                bits[y as usize * width as usize + x as usize] = true;
            }
        }
        Self::from_bitmap(width, height, &bits)
    }

    /// Decodes `[start, len, ...]`, rejecting unsorted, overlapping, empty or
    /// out-of-bounds runs.
    pub fn from_rle(width: u32, height: u32, rle: &[u32]) -> Result<Self> {
        if !rle.len().is_multiple_of(2) {
            return Err(Error::Input("RLE has an odd number of entries".into()));
        }
        let total = width as u64 * height as u64;
        let mut runs = Vec::with_capacity(rle.len() / 2);
        let mut next_free = 0u64;
        for pair in rle.chunks_exact(2) {
            let (start, len) = (pair[0] as u64, pair[1] as u64);
            if len == 0 {
                return Err(Error::Input(format!("zero-length run at {start}")));
            }
            if start < next_free {
                return Err(Error::Input(format!(
                    "run at {start} is unsorted or overlaps its predecessor"
                )));
            }
            if start + len > total {
                return Err(Error::Input(format!("run at {start} exceeds the {total}-pixel image")));
            }
            next_free = start + len;
            runs.push((pair[0], pair[1]));
        }
        Ok(Self { width, height, runs })
    }

    pub fn to_rle(&self) -> Vec<u32> {
        self.runs.iter().flat_map(|&(s, l)| [s, l]).collect()
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        if x >= self.width || y >= self.height {
            return false;
        }
        let idx = y * self.width + x;
        // last run starting at or before idx
        let pos = self.runs.partition_point(|&(s, _)| s <= idx);
        pos > 0 && {
            let (s, l) = self.runs[pos - 1];
            idx < s + l
        }
    }

    pub fn area(&self) -> u64 {
        self.runs.iter().map(|&(_, l)| l as u64).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.runs.is_empty()
    }

    pub fn union(&self, other: &Mask2D) -> Mask2D {
        assert_eq!((self.width, self.height), (other.width, other.height), "mask size");
        let mut bits = self.to_bitmap();
        for &(s, l) in &other.runs {
            bits[s as usize..(s + l) as usize].fill(true);
        }
        Mask2D::from_bitmap(self.width, self.height, &bits)
    }

    /// Grows the mask by `radius` pixels in every direction (square
    /// structuring element), clipped to the image.
    pub fn dilate(&self, radius: u32) -> Mask2D {
        if radius == 0 || self.is_empty() {
            return self.clone();
        }
        let (w, h, r) = (self.width as usize, self.height as usize, radius as usize);
        let src = self.to_bitmap();
        let mut horiz = vec![false; src.len()];
        for y in 0..h {
            let row = &src[y * w..(y + 1) * w];
            for (x, &on) in row.iter().enumerate() {
                if on {
                    let lo = x.saturating_sub(r);
                    let hi = (x + r).min(w - 1);
                    horiz[y * w + lo..=y * w + hi].fill(true);
                }
            }
        }
        let mut out = vec![false; src.len()];
        for y in 0..h {
            for x in 0..w {
                if horiz[y * w + x] {
                    let lo = y.saturating_sub(r);
                    let hi = (y + r).min(h - 1);
                    for yy in lo..=hi {
                        out[yy * w + x] = true;
                    }
                }
            }
        }
        Mask2D::from_bitmap(self.width, self.height, &out)
    }
}

/// A point prompt on one frame's image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskRequest {
    pub frame_id: String,
    pub pixel: (u32, u32),
    pub class_id: i32,
}

/// One stored mask of a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskEntry {
    pub instance_id: i32,
    pub class_id: i32,
    pub part: u32,
    pub prompt: Option<(u32, u32)>,
    pub mask: Mask2D,
}

/// All masks of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMasks {
    pub width: u32,
    pub height: u32,
    pub entries: Vec<MaskEntry>,
}

impl FrameMasks {
    pub fn from_file(file: &MaskFile) -> Result<Self> {
        let entries = file
            .instances
            .iter()
            .map(|rec| {
                Ok(MaskEntry {
                    instance_id: rec.instance_id,
                    class_id: rec.class_id,
                    part: rec.part,
                    prompt: rec.prompt.map(|[u, v]| (u, v)),
                    mask: Mask2D::from_rle(file.width, file.height, &rec.rle)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            width: file.width,
            height: file.height,
            entries,
        })
    }

    pub fn to_file(&self) -> MaskFile {
        MaskFile {
            width: self.width,
            height: self.height,
            instances: self
                .entries
                .iter()
                .map(|e| MaskRecord {
                    instance_id: e.instance_id,
                    class_id: e.class_id,
                    part: e.part,
                    prompt: e.prompt.map(|(u, v)| [u, v]),
                    rle: e.mask.to_rle(),
                })
                .collect(),
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file: MaskFile = dataio::read_json(path)?;
        Self::from_file(&file).map_err(|e| Error::format(path, 0, e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        dataio::write_json(path, &self.to_file())
    }

    fn union_of_instance(&self, instance_id: i32, prompted: bool) -> Mask2D {
        self.entries
            .iter()
            .filter(|e| e.instance_id == instance_id && e.prompt.is_some() == prompted)
            .fold(Mask2D::empty(self.width, self.height), |acc, e| acc.union(&e.mask))
    }
}

/// Loads `<dir>/<frame_id>.json` for every frame id.
pub fn load_mask_dir<'a>(
    dir: &Path,
    frame_ids: impl IntoIterator<Item = &'a str>,
) -> Result<HashMap<String, FrameMasks>> {
    frame_ids
        .into_iter()
        .map(|id| Ok((id.to_string(), FrameMasks::read(&mask_path(dir, id))?)))
        .collect()
}

pub fn mask_path(dir: &Path, frame_id: &str) -> std::path::PathBuf {
    dir.join(format!("{frame_id}.json"))
}

pub trait MaskProvider: Send + Sync {
    /// Image size of a frame; lookup error for unknown frames.
    fn image_size(&self, frame_id: &str) -> Result<(u32, u32)>;

    /// Provider-specific mask for a prompt. Callers go through [`get_mask`],
    /// which validates the request and the result.
    fn provide(&self, request: &MaskRequest) -> Result<Option<Mask2D>>;
}

/// Validated mask lookup: the prompt must be inside the image and any
/// returned mask must contain the prompt pixel.
pub fn get_mask(provider: &dyn MaskProvider, request: &MaskRequest) -> Result<Option<Mask2D>> {
    let (w, h) = provider.image_size(&request.frame_id)?;
    let (u, v) = request.pixel;
    if u >= w || v >= h {
        return Err(Error::Input(format!(
            "prompt pixel ({u}, {v}) outside the {w}x{h} image"
        )));
    }
    let mask = provider.provide(request)?;
    if let Some(mask) = &mask {
        if (mask.width(), mask.height()) != (w, h) {
            return Err(Error::ContractViolation(format!(
                "mask is {}x{} but frame `{}` is {w}x{h}",
                mask.width(),
                mask.height(),
                request.frame_id
            )));
        }
        if !mask.contains(u, v) {
            return Err(Error::ContractViolation(format!(
                "mask for frame `{}` does not contain its prompt pixel ({u}, {v})",
                request.frame_id
            )));
        }
    }
    Ok(mask)
}

fn frame_lookup<'a>(frames: &'a HashMap<String, FrameMasks>, frame_id: &str) -> Result<&'a FrameMasks> {
    frames
        .get(frame_id)
        .ok_or_else(|| Error::Lookup(format!("no masks for frame `{frame_id}`")))
}

/// Serves stored masks. An entry recorded with a `prompt` pixel answers
/// exactly that prompt; entries without one answer any prompt they contain,
/// merged over all parts of their instance.
#[derive(Debug, Clone, Default)]
pub struct FileMaskProvider {
    frames: HashMap<String, FrameMasks>,
}

impl FileMaskProvider {
    pub fn new(frames: HashMap<String, FrameMasks>) -> Self {
        Self { frames }
    }

    pub fn from_dir<'a>(dir: &Path, frame_ids: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        Ok(Self::new(load_mask_dir(dir, frame_ids)?))
    }
}

impl MaskProvider for FileMaskProvider {
    fn image_size(&self, frame_id: &str) -> Result<(u32, u32)> {
        frame_lookup(&self.frames, frame_id).map(|f| (f.width, f.height))
    }

    fn provide(&self, request: &MaskRequest) -> Result<Option<Mask2D>> {
        let frame = frame_lookup(&self.frames, &request.frame_id)?;
        let (u, v) = request.pixel;
        if let Some(entry) = frame.entries.iter().find(|e| e.prompt == Some((u, v))) {
            return Ok(Some(entry.mask.clone()));
        }
        let hit = frame
            .entries
            .iter()
            .find(|e| e.prompt.is_none() && e.mask.contains(u, v));
        Ok(hit.map(|e| frame.union_of_instance(e.instance_id, false)))
    }
}

/// Error modes of the synthetic oracle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MaskNoise {
    /// Dilation radius in pixels applied to every returned mask.
    #[serde(default)]
    pub bleed_pixels: u32,
    /// Return all parts of a composite instance (true) or only the part under
    /// the prompt (false).
    #[serde(default = "default_true")]
    pub composite_merge: bool,
}

fn default_true() -> bool {
    true
}

impl MaskNoise {
    pub const EXACT: MaskNoise = MaskNoise {
        bleed_pixels: 0,
        composite_merge: true,
    };
}

/// Answers prompts from ground-truth masks: a prompt on an instance returns
/// that instance's mask, a prompt on background returns no mask.
#[derive(Debug, Clone)]
pub struct SyntheticOracle {
    frames: HashMap<String, FrameMasks>,
    noise: MaskNoise,
}

impl SyntheticOracle {
    pub fn new(frames: HashMap<String, FrameMasks>, noise: MaskNoise) -> Self {
        Self { frames, noise }
    }

    pub fn noise(&self) -> MaskNoise {
        self.noise
    }
}

impl MaskProvider for SyntheticOracle {
    fn image_size(&self, frame_id: &str) -> Result<(u32, u32)> {
        frame_lookup(&self.frames, frame_id).map(|f| (f.width, f.height))
    }

    fn provide(&self, request: &MaskRequest) -> Result<Option<Mask2D>> {
        let frame = frame_lookup(&self.frames, &request.frame_id)?;
        let (u, v) = request.pixel;
        let Some(hit) = frame.entries.iter().find(|e| e.mask.contains(u, v)) else {
            return Ok(None);
        };
        let base = if self.noise.composite_merge {
            frame
                .entries
                .iter()
                .filter(|e| e.instance_id == hit.instance_id)
                .fold(Mask2D::empty(frame.width, frame.height), |acc, e| acc.union(&e.mask))
        } else {
            hit.mask.clone()
        };
        Ok(Some(base.dilate(self.noise.bleed_pixels)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rect(w: u32, h: u32, x0: u32, y0: u32, x1: u32, y1: u32) -> Mask2D {
        Mask2D::from_pixels(w, h, (x0..x1).flat_map(|x| (y0..y1).map(move |y| (x, y))))
    }

    fn frames_with(entries: Vec<MaskEntry>) -> HashMap<String, FrameMasks> {
        let mut frames = HashMap::new();
        frames.insert(
            "f0".to_string(),
            FrameMasks {
                width: 40,
                height: 30,
                entries,
            },
        );
        frames
    }

    fn entry(instance_id: i32, part: u32, mask: Mask2D) -> MaskEntry {
        MaskEntry {
            instance_id,
            class_id: 2,
            part,
            prompt: None,
            mask,
        }
    }

    fn req(u: u32, v: u32) -> MaskRequest {
        MaskRequest {
            frame_id: "f0".into(),
            pixel: (u, v),
            class_id: 0,
        }
    }

    #[test]
    fn rle_validation() {
        assert!(Mask2D::from_rle(4, 4, &[0, 2, 1, 2]).is_err());
        assert!(Mask2D::from_rle(4, 4, &[5, 2, 0, 1]).is_err());
        assert!(Mask2D::from_rle(4, 4, &[15, 2]).is_err());
        assert!(Mask2D::from_rle(4, 4, &[3, 0]).is_err());
        assert!(Mask2D::from_rle(4, 4, &[3]).is_err());
        let m = Mask2D::from_rle(4, 4, &[0, 2, 2, 1, 15, 1]).unwrap();
        assert_eq!(m.area(), 4);
        assert!(m.contains(2, 0) && m.contains(3, 3) && !m.contains(3, 0));
    }

    #[test]
    fn dilation_grows_area() {
        let m = rect(40, 30, 10, 10, 14, 16);
        assert_eq!(m.dilate(0), m);
        let grown = m.dilate(3);
        // square element on an interior rectangle: (4+6) x (6+6)
        assert_eq!(grown.area(), 10 * 12);
        assert!(grown.area() > m.area());
        let corner = rect(40, 30, 0, 0, 1, 1).dilate(2);
        assert_eq!(corner.area(), 9);
    }

    #[test]
    fn oracle_exact_and_background() {
        let car = rect(40, 30, 5, 5, 15, 12);
        let oracle = SyntheticOracle::new(frames_with(vec![entry(1, 0, car.clone())]), MaskNoise::EXACT);
        assert_eq!(get_mask(&oracle, &req(6, 6)).unwrap(), Some(car));
        assert_eq!(get_mask(&oracle, &req(30, 20)).unwrap(), None);
        assert!(matches!(get_mask(&oracle, &req(40, 0)), Err(Error::Input(_))));
        let mut other = req(1, 1);
        other.frame_id = "nope".into();
        assert!(matches!(get_mask(&oracle, &other), Err(Error::Lookup(_))));
    }

    #[test]
    fn oracle_bleed_and_composite() {
        let rider = rect(40, 30, 10, 5, 14, 10);
        let bike = rect(40, 30, 8, 10, 16, 14);
        let frames = frames_with(vec![entry(3, 0, rider.clone()), entry(3, 1, bike.clone())]);

        let merged = SyntheticOracle::new(frames.clone(), MaskNoise::EXACT);
        let m = get_mask(&merged, &req(11, 6)).unwrap().unwrap();
        assert_eq!(m, rider.union(&bike));

        let split = SyntheticOracle::new(
            frames.clone(),
            MaskNoise {
                bleed_pixels: 0,
                composite_merge: false,
            },
        );
        let m = get_mask(&split, &req(11, 6)).unwrap().unwrap();
        assert_eq!(m, rider);
        assert!(!m.contains(9, 12));

        let bleed = SyntheticOracle::new(
            frames,
            MaskNoise {
                bleed_pixels: 3,
                composite_merge: true,
            },
        );
        let m = get_mask(&bleed, &req(11, 6)).unwrap().unwrap();
        assert!(m.area() > rider.union(&bike).area());
    }

    #[test]
    fn file_provider_contract() {
        let stored = rect(40, 30, 20, 20, 25, 25);
        let mut e = entry(1, 0, stored.clone());
        e.prompt = Some((2, 2));
        let bad = FileMaskProvider::new(frames_with(vec![e]));
        assert!(matches!(get_mask(&bad, &req(2, 2)), Err(Error::ContractViolation(_))));

        let good = FileMaskProvider::new(frames_with(vec![entry(1, 0, stored.clone())]));
        assert_eq!(get_mask(&good, &req(21, 21)).unwrap(), Some(stored));
        assert_eq!(get_mask(&good, &req(2, 2)).unwrap(), None);
    }

    #[test]
    fn mask_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let frame = FrameMasks {
            width: 40,
            height: 30,
            entries: vec![entry(1, 0, rect(40, 30, 1, 1, 5, 5)), {
                let mut e = entry(2, 1, rect(40, 30, 7, 7, 8, 9));
                e.prompt = Some((7, 7));
                e
            }],
        };
        let path = mask_path(dir.path(), "f0");
        frame.write(&path).unwrap();
        assert_eq!(FrameMasks::read(&path).unwrap(), frame);
        let loaded = load_mask_dir(dir.path(), ["f0"]).unwrap();
        assert_eq!(loaded["f0"], frame);
    }

    proptest! {
        #[test]
        fn rle_decode_encode_identity(bits in prop::collection::vec(any::<bool>(), 48)) {
            let m = Mask2D::from_bitmap(8, 6, &bits);
            prop_assert_eq!(m.to_bitmap(), bits.clone());
            let back = Mask2D::from_rle(8, 6, &m.to_rle()).unwrap();
            prop_assert_eq!(&back, &m);
            for (i, &b) in bits.iter().enumerate() {
                prop_assert_eq!(m.contains(i as u32 % 8, i as u32 / 8), b);
            }
        }

        #[test]
        fn returned_masks_contain_prompt(x0 in 0u32..30, y0 in 0u32..20, bleed in 0u32..4, u in 0u32..40, v in 0u32..30) {
            let m = rect(40, 30, x0, y0, x0 + 6, y0 + 5);
            let oracle = SyntheticOracle::new(frames_with(vec![entry(1, 0, m)]), MaskNoise { bleed_pixels: bleed, composite_merge: true });
            if let Some(mask) = get_mask(&oracle, &req(u, v)).unwrap() {
                prop_assert!(mask.contains(u, v));
            }
        }
    }
}
