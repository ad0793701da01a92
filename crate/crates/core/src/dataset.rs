//! Feature-track datasets, ground truth, and their file formats.
//!
//! Dataset file layout: a text header terminated by `end_header\n`, then a
//! little-endian binary frame table (`u64` frame id, `u64` byte offset, `u32`
//! observation count per frame) followed by the frame records. Each
//! observation is `f32 x, f32 y, f32 × 128 descriptor, u32 truth id`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;
use std::sync::Mutex;

use nalgebra::{Quaternion, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::descriptor::{Descriptor, DESCRIPTOR_LEN};
use crate::lie::Se3Pose;
use crate::multiview::{CameraIntrinsics, ImageSize};

/// Truth id of an observation whose landmark is not known.
pub const UNKNOWN_TRUTH: u32 = u32::MAX;
/// Truth id of an injected outlier observation.
pub const OUTLIER_TRUTH: u32 = u32::MAX - 1;

const MAGIC: &str = "SUBMAP-SLAM-TRACKS";
const VERSION: u32 = 1;
const OBS_BYTES: usize = 4 * (2 + DESCRIPTOR_LEN + 1);
const TABLE_ENTRY_BYTES: usize = 8 + 8 + 4;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("dataset format: {0}")]
    Format(String),
    #[error("frame index {index} out of range ({len} frames)")]
    FrameOutOfRange { index: usize, len: usize },
    #[error("frame ids must strictly increase (frame {index})")]
    NonIncreasingIds { index: usize },
    #[error("observation outside the image in frame {frame}")]
    PixelOutOfBounds { frame: u64 },
    #[error("dataset has no frames")]
    Empty,
    #[error("ground truth: {0}")]
    GroundTruth(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureObservation {
    pub pixel: Vector2<f64>,
    pub descriptor: Descriptor,
    pub truth_id: u32,
}

impl FeatureObservation {
    pub fn is_labeled_outlier(&self) -> bool {
        self.truth_id == OUTLIER_TRUTH
    }

    pub fn truth(&self) -> Option<u32> {
        (self.truth_id < OUTLIER_TRUTH).then_some(self.truth_id)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub id: u64,
    pub observations: Vec<FeatureObservation>,
}

/// Random access to the frames of a sequence.
pub trait FrameSource: Send + Sync {
    fn intrinsics(&self) -> CameraIntrinsics;
    fn image_size(&self) -> ImageSize;
    fn len(&self) -> usize;
    fn frame(&self, index: usize) -> Result<Frame, DatasetError>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Fully in-memory dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTrackDataset {
    pub intrinsics: CameraIntrinsics,
    pub image_size: ImageSize,
    pub frames: Vec<Frame>,
}

impl FeatureTrackDataset {
    pub fn from_source(source: &dyn FrameSource) -> Result<Self, DatasetError> {
        let frames = (0..source.len()).map(|i| source.frame(i)).collect::<Result<_, _>>()?;
        Ok(Self {
            intrinsics: source.intrinsics(),
            image_size: source.image_size(),
            frames,
        })
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        for (i, w) in self.frames.windows(2).enumerate() {
            if w[1].id <= w[0].id {
                return Err(DatasetError::NonIncreasingIds { index: i + 1 });
            }
        }
        for f in &self.frames {
            if f.observations.iter().any(|o| !self.image_size.contains(&o.pixel)) {
                return Err(DatasetError::PixelOutOfBounds { frame: f.id });
            }
        }
        Ok(())
    }
}

impl FrameSource for FeatureTrackDataset {
    fn intrinsics(&self) -> CameraIntrinsics {
        self.intrinsics
    }

    fn image_size(&self) -> ImageSize {
        self.image_size
    }

    fn len(&self) -> usize {
        self.frames.len()
    }

    fn frame(&self, index: usize) -> Result<Frame, DatasetError> {
        self.frames
            .get(index)
            .cloned()
            .ok_or(DatasetError::FrameOutOfRange { index, len: self.frames.len() })
    }
}

/// Stream every frame of `source` to `path`.
pub fn write_dataset(path: &Path, source: &dyn FrameSource) -> Result<(), DatasetError> {
    let mut w = BufWriter::new(File::create(path)?);
    let k = source.intrinsics();
    let size = source.image_size();
    let n = source.len();
    let header = format!(
        "{MAGIC}\nversion {VERSION}\nfocal {}\nprincipal_point {} {}\nimage_size {} {}\nframes {n}\nend_header\n",
        k.focal, k.principal_point.x, k.principal_point.y, size.width, size.height
    );
    w.write_all(header.as_bytes())?;
    let table_start = header.len() as u64;
    w.write_all(&vec![0u8; n * TABLE_ENTRY_BYTES])?;
    let mut table = Vec::with_capacity(n);
    let mut offset = 0u64;
    let mut last_id: Option<u64> = None;
    for i in 0..n {
        let frame = source.frame(i)?;
        if last_id.is_some_and(|l| frame.id <= l) {
            return Err(DatasetError::NonIncreasingIds { index: i });
        }
        last_id = Some(frame.id);
        table.push((frame.id, offset, frame.observations.len() as u32));
        for o in &frame.observations {
            w.write_all(&(o.pixel.x as f32).to_le_bytes())?;
            w.write_all(&(o.pixel.y as f32).to_le_bytes())?;
            for v in o.descriptor {
                w.write_all(&v.to_le_bytes())?;
            }
            w.write_all(&o.truth_id.to_le_bytes())?;
        }
        offset += (frame.observations.len() * OBS_BYTES) as u64;
    }
    w.seek(SeekFrom::Start(table_start))?;
    for (id, off, count) in table {
        w.write_all(&id.to_le_bytes())?;
        w.write_all(&off.to_le_bytes())?;
        w.write_all(&count.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Seekable reader that loads frames on demand.
#[derive(Debug)]
pub struct DatasetReader {
    intrinsics: CameraIntrinsics,
    image_size: ImageSize,
    table: Vec<(u64, u64, u32)>,
    data_start: u64,
    file: Mutex<BufReader<File>>,
}

fn header_value<'a>(line: &'a str, key: &str) -> Result<&'a str, DatasetError> {
    line.strip_prefix(key)
        .and_then(|rest| rest.strip_prefix(' '))
        .ok_or_else(|| DatasetError::Format(format!("expected `{key}`, found `{line}`")))
}

fn parse<T: std::str::FromStr>(s: &str, what: &str) -> Result<T, DatasetError> {
    s.trim()
        .parse()
        .map_err(|_| DatasetError::Format(format!("cannot parse {what} from `{s}`")))
}

impl DatasetReader {
    pub fn open(path: &Path) -> Result<Self, DatasetError> {
        let mut r = BufReader::new(File::open(path)?);
        let mut lines = Vec::new();
        let mut consumed = 0u64;
        loop {
            let mut line = String::new();
            let n = r.read_line(&mut line)?;
            if n == 0 {
                return Err(DatasetError::Format("truncated header".into()));
            }
            consumed += n as u64;
            let line = line.trim_end_matches('\n').to_string();
            if line == "end_header" {
                break;
            }
            lines.push(line);
            if lines.len() > 16 {
                return Err(DatasetError::Format("header too long".into()));
            }
        }
        if lines.len() != 6 || lines[0] != MAGIC {
            return Err(DatasetError::Format("not a feature-track dataset".into()));
        }
        let version: u32 = parse(header_value(&lines[1], "version")?, "version")?;
        if version != VERSION {
            return Err(DatasetError::Format(format!("unsupported version {version}")));
        }
        let focal: f64 = parse(header_value(&lines[2], "focal")?, "focal")?;
        let pp: Vec<&str> = header_value(&lines[3], "principal_point")?.split(' ').collect();
        let sz: Vec<&str> = header_value(&lines[4], "image_size")?.split(' ').collect();
        if pp.len() != 2 || sz.len() != 2 {
            return Err(DatasetError::Format("malformed intrinsics".into()));
        }
        let intrinsics = CameraIntrinsics::new(focal, parse(pp[0], "cx")?, parse(pp[1], "cy")?);
        let image_size = ImageSize::new(parse(sz[0], "width")?, parse(sz[1], "height")?);
        if !intrinsics.is_valid(&image_size) {
            return Err(DatasetError::Format("invalid intrinsics".into()));
        }
        let n: usize = parse(header_value(&lines[5], "frames")?, "frame count")?;
        let mut table = Vec::with_capacity(n);
        let mut buf = vec![0u8; TABLE_ENTRY_BYTES];
        for i in 0..n {
            r.read_exact(&mut buf)?;
            let id = u64::from_le_bytes(buf[0..8].try_into().unwrap());
            let off = u64::from_le_bytes(buf[8..16].try_into().unwrap());
            let count = u32::from_le_bytes(buf[16..20].try_into().unwrap());
            if let Some(&(prev, _, _)) = table.last() {
                if id <= prev {
                    return Err(DatasetError::NonIncreasingIds { index: i });
                }
            }
            table.push((id, off, count));
        }
        let data_start = consumed + (n * TABLE_ENTRY_BYTES) as u64;
        let file_len = r.get_ref().metadata()?.len();
        for &(_, off, count) in &table {
            if data_start + off + count as u64 * OBS_BYTES as u64 > file_len {
                return Err(DatasetError::Format("frame table points past end of file".into()));
            }
        }
        Ok(Self {
            intrinsics,
            image_size,
            table,
            data_start,
            file: Mutex::new(r),
        })
    }
}

impl FrameSource for DatasetReader {
    fn intrinsics(&self) -> CameraIntrinsics {
        self.intrinsics
    }

    fn image_size(&self) -> ImageSize {
        self.image_size
    }

    fn len(&self) -> usize {
        self.table.len()
    }

    fn frame(&self, index: usize) -> Result<Frame, DatasetError> {
        let &(id, off, count) = self
            .table
            .get(index)
            .ok_or(DatasetError::FrameOutOfRange { index, len: self.table.len() })?;
        let mut bytes = vec![0u8; count as usize * OBS_BYTES];
        {
            let mut f = self.file.lock().expect("dataset reader poisoned");
            f.seek(SeekFrom::Start(self.data_start + off))?;
            f.read_exact(&mut bytes)?;
        }
        let f32_at = |b: &[u8], i: usize| f32::from_le_bytes(b[4 * i..4 * i + 4].try_into().unwrap());
        let mut observations = Vec::with_capacity(count as usize);
        for chunk in bytes.chunks_exact(OBS_BYTES) {
            let pixel = Vector2::new(f32_at(chunk, 0) as f64, f32_at(chunk, 1) as f64);
            if !self.image_size.contains(&pixel) {
                return Err(DatasetError::PixelOutOfBounds { frame: id });
            }
            let mut descriptor = [0f32; DESCRIPTOR_LEN];
            for (k, d) in descriptor.iter_mut().enumerate() {
                *d = f32_at(chunk, 2 + k);
            }
            let truth_id = u32::from_le_bytes(chunk[OBS_BYTES - 4..].try_into().unwrap());
            observations.push(FeatureObservation {
                pixel,
                descriptor,
                truth_id,
            });
        }
        Ok(Frame { id, observations })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthLandmark {
    pub id: u32,
    pub position: Vector3<f64>,
}

/// Camera pose stored as a unit quaternion `[w, x, y, z]` and translation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct PoseRecord {
    frame: u64,
    quaternion: [f64; 4],
    translation: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub intrinsics: CameraIntrinsics,
    pub image_size: ImageSize,
    /// Frame id and camera-from-world pose of every frame.
    pub poses: Vec<(u64, Se3Pose)>,
    pub landmarks: Vec<TruthLandmark>,
}

#[derive(Serialize, Deserialize)]
struct GroundTruthFile {
    intrinsics: CameraIntrinsics,
    image_size: ImageSize,
    poses: Vec<PoseRecord>,
    landmarks: Vec<TruthLandmark>,
}

impl GroundTruth {
    pub fn landmark_map(&self) -> std::collections::HashMap<u32, Vector3<f64>> {
        self.landmarks.iter().map(|l| (l.id, l.position)).collect()
    }

    pub fn to_json(&self) -> Result<String, DatasetError> {
        let file = GroundTruthFile {
            intrinsics: self.intrinsics,
            image_size: self.image_size,
            poses: self
                .poses
                .iter()
                .map(|(frame, p)| {
                    let q = p.quaternion();
                    PoseRecord {
                        frame: *frame,
                        quaternion: [q.w, q.i, q.j, q.k],
                        translation: [p.translation.x, p.translation.y, p.translation.z],
                    }
                })
                .collect(),
            landmarks: self.landmarks.clone(),
        };
        serde_json::to_string(&file).map_err(|e| DatasetError::GroundTruth(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, DatasetError> {
        let file: GroundTruthFile = serde_json::from_str(text).map_err(|e| DatasetError::GroundTruth(e.to_string()))?;
        let poses = file
            .poses
            .iter()
            .map(|r| {
                let [w, x, y, z] = r.quaternion;
                let q = UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z));
                (
                    r.frame,
                    Se3Pose::new(
                        q.to_rotation_matrix().into_inner(),
                        Vector3::new(r.translation[0], r.translation[1], r.translation[2]),
                    ),
                )
            })
            .collect();
        Ok(Self {
            intrinsics: file.intrinsics,
            image_size: file.image_size,
            poses,
            landmarks: file.landmarks,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample(seed: u64) -> FeatureTrackDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frames = (0..5)
            .map(|i| Frame {
                id: 10 + 2 * i,
                observations: (0..rng.random_range(0..20))
                    .map(|_| FeatureObservation {
                        pixel: Vector2::new(rng.random_range(0.0..640.0f32) as f64, rng.random_range(0.0..480.0f32) as f64),
                        descriptor: std::array::from_fn(|_| rng.random_range(-1.0..1.0)),
                        truth_id: rng.random_range(0..100),
                    })
                    .collect(),
            })
            .collect();
        FeatureTrackDataset {
            intrinsics: CameraIntrinsics::new(500.25, 320.0, 240.5),
            image_size: ImageSize::new(640, 480),
            frames,
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tracks.bin");
        let data = sample(1);
        write_dataset(&path, &data).unwrap();
        let reader = DatasetReader::open(&path).unwrap();
        assert_eq!(reader.len(), 5);
        assert_eq!(reader.intrinsics(), data.intrinsics);
        let back = FeatureTrackDataset::from_source(&reader).unwrap();
        assert_eq!(back, data);
        // Random access in any order.
        assert_eq!(reader.frame(3).unwrap(), data.frames[3]);
        assert!(matches!(reader.frame(9), Err(DatasetError::FrameOutOfRange { .. })));
    }

    #[test]
    fn corrupt_files_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        std::fs::write(&path, "nonsense\n").unwrap();
        assert!(DatasetReader::open(&path).is_err());
        let data = sample(2);
        write_dataset(&path, &data).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 10]).unwrap();
        assert!(DatasetReader::open(&path).is_err());
    }

    #[test]
    fn validation() {
        let mut data = sample(3);
        assert!(data.validate().is_ok());
        data.frames[2].id = data.frames[1].id;
        assert!(matches!(data.validate(), Err(DatasetError::NonIncreasingIds { index: 2 })));
    }

    #[test]
    fn ground_truth_json_round_trip() {
        let pose = Se3Pose::new(
            crate::lie::so3_exp(&Vector3::new(0.1, 0.2, -0.3)),
            Vector3::new(1.0, 2.0, 3.0),
        );
        let gt = GroundTruth {
            intrinsics: CameraIntrinsics::new(1000.0, 320.0, 240.0),
            image_size: ImageSize::new(640, 480),
            poses: vec![(0, pose), (1, Se3Pose::identity())],
            landmarks: vec![TruthLandmark {
                id: 4,
                position: Vector3::new(1.0, 2.0, 3.0),
            }],
        };
        let back = GroundTruth::from_json(&gt.to_json().unwrap()).unwrap();
        assert_eq!(back.landmarks, gt.landmarks);
        let (dr, dt) = back.poses[0].1.distance(&pose);
        assert!(dr < 1e-12 && dt < 1e-12);
    }
}
