//! Fused global map and its export formats: a binary little-endian PLY point
//! cloud and a plain-text trajectory.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::UNKNOWN_TRUTH;
use crate::lie::Se3Pose;

#[derive(Debug, Error)]
pub enum MapIoError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapLandmark {
    pub position: Vector3<f64>,
    pub submap: u32,
    pub truth_id: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEntry {
    pub frame: u64,
    /// Camera-from-world pose in the global frame.
    pub pose: Se3Pose,
    pub submap: u32,
    /// False when relocalization against the final submap failed and the
    /// tracking estimate was kept.
    pub relocalized: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GlobalMap {
    pub landmarks: Vec<MapLandmark>,
    pub trajectory: Vec<TrajectoryEntry>,
}

impl GlobalMap {
    pub fn truth_labeled(&self) -> impl Iterator<Item = &MapLandmark> {
        self.landmarks.iter().filter(|l| l.truth_id < crate::dataset::OUTLIER_TRUTH)
    }
}

const PLY_HEADER_TAIL: &str = "property double x\nproperty double y\nproperty double z\nproperty uint submap_id\nproperty uint truth_id\nend_header\n";

pub fn write_ply<W: Write>(mut w: W, landmarks: &[MapLandmark]) -> Result<(), MapIoError> {
    write!(
        w,
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\n{PLY_HEADER_TAIL}",
        landmarks.len()
    )?;
    for l in landmarks {
        for v in [l.position.x, l.position.y, l.position.z] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&l.submap.to_le_bytes())?;
        w.write_all(&l.truth_id.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_ply<R: Read>(r: R) -> Result<Vec<MapLandmark>, MapIoError> {
    let mut r = BufReader::new(r);
    let mut header = Vec::new();
    loop {
        let mut line = String::new();
        if r.read_line(&mut line)? == 0 {
            return Err(MapIoError::Format("truncated PLY header".into()));
        }
        let line = line.trim_end().to_string();
        let done = line == "end_header";
        header.push(line);
        if done {
            break;
        }
        if header.len() > 32 {
            return Err(MapIoError::Format("PLY header too long".into()));
        }
    }
    if header.first().map(String::as_str) != Some("ply")
        || header.get(1).map(String::as_str) != Some("format binary_little_endian 1.0")
    {
        return Err(MapIoError::Format("expected a binary little-endian PLY".into()));
    }
    let count: usize = header
        .get(2)
        .and_then(|l| l.strip_prefix("element vertex "))
        .and_then(|n| n.parse().ok())
        .ok_or_else(|| MapIoError::Format("missing vertex count".into()))?;
    let props: Vec<&str> = header[3..].iter().map(String::as_str).collect();
    let expected: Vec<&str> = PLY_HEADER_TAIL.lines().collect();
    let with_truth = props == expected;
    if !with_truth && props != expected[..4].iter().chain(&expected[5..]).copied().collect::<Vec<_>>() {
        return Err(MapIoError::Format("unsupported PLY vertex properties".into()));
    }
    let stride = 24 + 4 + if with_truth { 4 } else { 0 };
    let mut buf = vec![0u8; stride];
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        r.read_exact(&mut buf)?;
        let f = |i: usize| f64::from_le_bytes(buf[8 * i..8 * i + 8].try_into().unwrap());
        out.push(MapLandmark {
            position: Vector3::new(f(0), f(1), f(2)),
            submap: u32::from_le_bytes(buf[24..28].try_into().unwrap()),
            truth_id: if with_truth {
                u32::from_le_bytes(buf[28..32].try_into().unwrap())
            } else {
                UNKNOWN_TRUTH
            },
        });
    }
    Ok(out)
}

pub fn write_trajectory<W: Write>(mut w: W, entries: &[TrajectoryEntry]) -> Result<(), MapIoError> {
    writeln!(w, "# frame qw qx qy qz tx ty tz submap relocalized")?;
    for e in entries {
        let q = e.pose.quaternion();
        let t = e.pose.translation;
        writeln!(
            w,
            "{} {} {} {} {} {} {} {} {} {}",
            e.frame,
            q.w,
            q.i,
            q.j,
            q.k,
            t.x,
            t.y,
            t.z,
            e.submap,
            u8::from(e.relocalized)
        )?;
    }
    Ok(())
}

pub fn read_trajectory<R: Read>(r: R) -> Result<Vec<TrajectoryEntry>, MapIoError> {
    let mut out = Vec::new();
    for (n, line) in BufReader::new(r).lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        let bad = || MapIoError::Format(format!("trajectory line {}: `{line}`", n + 1));
        if f.len() != 10 {
            return Err(bad());
        }
        let num = |i: usize| f[i].parse::<f64>().map_err(|_| bad());
        let q = UnitQuaternion::from_quaternion(Quaternion::new(num(1)?, num(2)?, num(3)?, num(4)?));
        out.push(TrajectoryEntry {
            frame: f[0].parse().map_err(|_| bad())?,
            pose: Se3Pose::new(
                q.to_rotation_matrix().into_inner(),
                Vector3::new(num(5)?, num(6)?, num(7)?),
            ),
            submap: f[8].parse().map_err(|_| bad())?,
            relocalized: match f[9] {
                "1" => true,
                "0" => false,
                _ => return Err(bad()),
            },
        });
    }
    Ok(out)
}

pub fn save_ply(path: &Path, landmarks: &[MapLandmark]) -> Result<(), MapIoError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_ply(&mut w, landmarks)?;
    w.flush()?;
    Ok(())
}

pub fn load_ply(path: &Path) -> Result<Vec<MapLandmark>, MapIoError> {
    read_ply(File::open(path)?)
}

pub fn save_trajectory(path: &Path, entries: &[TrajectoryEntry]) -> Result<(), MapIoError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_trajectory(&mut w, entries)?;
    w.flush()?;
    Ok(())
}

pub fn load_trajectory(path: &Path) -> Result<Vec<TrajectoryEntry>, MapIoError> {
    read_trajectory(File::open(path)?)
}
