//! On-disk formats for scans, IMU streams and trajectories.
//!
//! * Native scans: little-endian records `x y z intensity` (f32), `ring`
//!   (u16), `rel_time` (f32), 22 bytes each.
//! * KITTI scans: little-endian f32 quadruples `x y z intensity`; ring and
//!   time are reconstructed from the point direction.
//! * IMU: text lines `t wx wy wz ax ay az`.
//! * Trajectories: text lines `t tx ty tz qx qy qz qw`.
//! * Frame times: one timestamp per line.

use std::fmt::Write as _;
use std::path::Path;

use log::warn;
use nalgebra::{Quaternion, UnitQuaternion};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{StampedPose, Trajectory};
use crate::features::{RawScan, ScanPoint};
use crate::imu::ImuSample;
use crate::lie::{Mat3, Rotation, Transform, Vec3};

pub const NATIVE_RECORD_BYTES: usize = 22;
pub const KITTI_RECORD_BYTES: usize = 16;

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, s: &str) -> Result<()> {
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

fn f32_at(b: &[u8], i: usize) -> f32 {
    f32::from_le_bytes(b[i..i + 4].try_into().expect("4 bytes"))
}

pub fn encode_scan_native(scan: &RawScan) -> Vec<u8> {
    let mut buf = Vec::with_capacity(scan.len() * NATIVE_RECORD_BYTES);
    for p in &scan.points {
        for v in p.pos.iter() {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        buf.extend_from_slice(&p.intensity.to_le_bytes());
        buf.extend_from_slice(&p.ring.to_le_bytes());
        buf.extend_from_slice(&p.time.to_le_bytes());
    }
    buf
}

pub fn decode_scan_native(bytes: &[u8], path: &Path) -> Result<RawScan> {
    if !bytes.len().is_multiple_of(NATIVE_RECORD_BYTES) {
        return Err(Error::Malformed {
            path: path.to_path_buf(),
            offset: (bytes.len() / NATIVE_RECORD_BYTES * NATIVE_RECORD_BYTES) as u64,
            reason: format!("trailing partial record of {} bytes", bytes.len() % NATIVE_RECORD_BYTES),
        });
    }
    let points = bytes
        .chunks_exact(NATIVE_RECORD_BYTES)
        .map(|c| ScanPoint {
            pos: Vec3::new(f32_at(c, 0) as f64, f32_at(c, 4) as f64, f32_at(c, 8) as f64),
            intensity: f32_at(c, 12),
            ring: u16::from_le_bytes([c[16], c[17]]),
            time: f32_at(c, 18),
        })
        .collect();
    Ok(RawScan { points })
}

pub fn write_scan_native(path: &Path, scan: &RawScan) -> Result<()> {
    std::fs::write(path, encode_scan_native(scan)).map_err(|e| Error::io(path, e))
}

pub fn read_scan_native(path: &Path) -> Result<RawScan> {
    let bytes = read_bytes(path)?;
    if bytes.is_empty() {
        warn!("{}: empty scan", path.display());
    }
    decode_scan_native(&bytes, path)
}

/// Spinning-LiDAR geometry used to recover ring and time from KITTI points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorModel {
    pub rings: u16,
    pub min_elevation_deg: f64,
    pub max_elevation_deg: f64,
}

impl SensorModel {
    pub fn vlp16() -> Self {
        SensorModel {
            rings: 16,
            min_elevation_deg: -15.0,
            max_elevation_deg: 15.0,
        }
    }

    pub fn hdl64() -> Self {
        SensorModel {
            rings: 64,
            min_elevation_deg: -24.9,
            max_elevation_deg: 2.0,
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "vlp16" => Ok(Self::vlp16()),
            "hdl64" => Ok(Self::hdl64()),
            other => Err(Error::Config(format!("unknown sensor model '{other}'"))),
        }
    }

    /// Ring index from the elevation of `p`; `None` outside the field of view.
    pub fn ring_of(&self, p: &Vec3) -> Option<u16> {
        let el = p.z.atan2(p.xy().norm()).to_degrees();
        let span = self.max_elevation_deg - self.min_elevation_deg;
        let step = span / (self.rings.max(2) - 1) as f64;
        let k = ((el - self.min_elevation_deg) / step).round();
        (k >= 0.0 && k < self.rings as f64 && (el - self.min_elevation_deg - k * step).abs() <= step)
            .then_some(k as u16)
    }

    /// Sweep fraction of a point from its azimuth; the head spins clockwise
    /// seen from above and a sweep starts facing backwards.
    pub fn time_of(&self, p: &Vec3) -> f32 {
        let az = p.y.atan2(p.x);
        let s = (std::f64::consts::PI - az) / std::f64::consts::TAU;
        (s.rem_euclid(1.0) as f32).min(1.0 - f32::EPSILON)
    }
}

pub fn decode_scan_kitti(bytes: &[u8], path: &Path, model: &SensorModel) -> Result<RawScan> {
    if !bytes.len().is_multiple_of(KITTI_RECORD_BYTES) {
        return Err(Error::Malformed {
            path: path.to_path_buf(),
            offset: (bytes.len() / KITTI_RECORD_BYTES * KITTI_RECORD_BYTES) as u64,
            reason: "trailing partial float32 quadruple".into(),
        });
    }
    let mut dropped = 0;
    let mut points = Vec::with_capacity(bytes.len() / KITTI_RECORD_BYTES);
    for c in bytes.chunks_exact(KITTI_RECORD_BYTES) {
        let pos = Vec3::new(f32_at(c, 0) as f64, f32_at(c, 4) as f64, f32_at(c, 8) as f64);
        match model.ring_of(&pos) {
            Some(ring) => points.push(ScanPoint {
                pos,
                intensity: f32_at(c, 12),
                ring,
                time: model.time_of(&pos),
            }),
            None => dropped += 1,
        }
    }
    if dropped > 0 {
        warn!("{}: {dropped} points outside the sensor model", path.display());
    }
    Ok(RawScan { points })
}

pub fn read_scan_kitti(path: &Path, model: &SensorModel) -> Result<RawScan> {
    let bytes = read_bytes(path)?;
    if bytes.is_empty() {
        warn!("{}: empty scan", path.display());
    }
    decode_scan_kitti(&bytes, path, model)
}

/// Iterates non-empty, non-comment lines with their byte offsets.
fn data_lines(text: &str) -> impl Iterator<Item = (u64, &str)> {
    let mut offset = 0u64;
    text.split_inclusive('\n').filter_map(move |line| {
        let start = offset;
        offset += line.len() as u64;
        let t = line.trim();
        (!t.is_empty() && !t.starts_with('#')).then_some((start, t))
    })
}

fn parse_fields<const N: usize>(line: &str, offset: u64, path: &Path) -> Result<[f64; N]> {
    let malformed = |reason: String| Error::Malformed {
        path: path.to_path_buf(),
        offset,
        reason,
    };
    let mut out = [0.0; N];
    let mut it = line.split(|c: char| c.is_whitespace() || c == ',').filter(|s| !s.is_empty());
    for (k, v) in out.iter_mut().enumerate() {
        let tok = it
            .next()
            .ok_or_else(|| malformed(format!("expected {N} fields, found {k}")))?;
        *v = tok
            .parse::<f64>()
            .map_err(|_| malformed(format!("field {} is not a number: '{tok}'", k + 1)))?;
        if !v.is_finite() {
            return Err(malformed(format!("field {} is not finite", k + 1)));
        }
    }
    if it.next().is_some() {
        return Err(malformed(format!("more than {N} fields")));
    }
    Ok(out)
}

pub fn read_imu(path: &Path) -> Result<Vec<ImuSample>> {
    let text = read_text(path)?;
    data_lines(&text)
        .map(|(off, line)| {
            let f = parse_fields::<7>(line, off, path)?;
            Ok(ImuSample::new(
                f[0],
                Vec3::new(f[1], f[2], f[3]),
                Vec3::new(f[4], f[5], f[6]),
            ))
        })
        .collect()
}

pub fn write_imu(path: &Path, samples: &[ImuSample]) -> Result<()> {
    let mut s = String::with_capacity(samples.len() * 120);
    for m in samples {
        let _ = writeln!(
            s,
            "{:.9} {:.12e} {:.12e} {:.12e} {:.12e} {:.12e} {:.12e}",
            m.t, m.gyro.x, m.gyro.y, m.gyro.z, m.accel.x, m.accel.y, m.accel.z
        );
    }
    write_text(path, &s)
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory> {
    parse_trajectory(&read_text(path)?, path)
}

/// Parses `t x y z qx qy qz qw` lines; `path` only labels errors.
pub fn parse_trajectory(text: &str, path: &Path) -> Result<Trajectory> {
    let poses = data_lines(text)
        .map(|(off, line)| {
            let f = parse_fields::<8>(line, off, path)?;
            let q = Quaternion::new(f[7], f[4], f[5], f[6]);
            if q.norm() < 1e-9 {
                return Err(Error::Malformed {
                    path: path.to_path_buf(),
                    offset: off,
                    reason: "zero quaternion".into(),
                });
            }
            let rot = Rotation::from_quaternion(&UnitQuaternion::from_quaternion(q));
            Ok(StampedPose {
                t: f[0],
                pose: Transform::new(rot, Vec3::new(f[1], f[2], f[3])),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Trajectory::new(poses)
}

pub fn format_trajectory(traj: &Trajectory) -> String {
    let mut s = String::with_capacity(traj.len() * 120);
    for p in traj.poses() {
        let q = p.pose.rot.to_quaternion();
        let q = q.as_ref();
        let _ = writeln!(
            s,
            "{:.9} {:.9} {:.9} {:.9} {:.12} {:.12} {:.12} {:.12}",
            p.t, p.pose.trans.x, p.pose.trans.y, p.pose.trans.z, q.i, q.j, q.k, q.w
        );
    }
    s
}

pub fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<()> {
    write_text(path, &format_trajectory(traj))
}

pub fn read_times(path: &Path) -> Result<Vec<f64>> {
    let text = read_text(path)?;
    data_lines(&text)
        .map(|(off, line)| Ok(parse_fields::<1>(line, off, path)?[0]))
        .collect()
}

pub fn write_times(path: &Path, times: &[f64]) -> Result<()> {
    let mut s = String::new();
    for t in times {
        let _ = writeln!(s, "{t:.9}");
    }
    write_text(path, &s)
}

fn parse_3x4(f: &[f64; 12]) -> Transform {
    let r = Mat3::new(f[0], f[1], f[2], f[4], f[5], f[6], f[8], f[9], f[10]);
    Transform::new(
        Rotation::from_matrix_unchecked(r).normalized(),
        Vec3::new(f[3], f[7], f[11]),
    )
}

/// KITTI ground truth (3x4 camera poses, one per line) expressed for the
/// LiDAR using the camera-from-LiDAR calibration `tr`.
pub fn read_kitti_poses(path: &Path, times: &[f64], tr: &Transform) -> Result<Trajectory> {
    let text = read_text(path)?;
    let tr_inv = tr.inverse();
    let poses = data_lines(&text)
        .zip(times)
        .map(|((off, line), &t)| {
            let cam = parse_3x4(&parse_fields::<12>(line, off, path)?);
            Ok(StampedPose {
                t,
                pose: tr_inv * cam * *tr,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Trajectory::new(poses)
}

/// Reads the `Tr:` entry of a KITTI `calib.txt`.
pub fn read_kitti_calibration(path: &Path) -> Result<Transform> {
    let text = read_text(path)?;
    for (off, line) in data_lines(&text) {
        if let Some(rest) = line.strip_prefix("Tr:") {
            return Ok(parse_3x4(&parse_fields::<12>(rest.trim(), off, path)?));
        }
    }
    Err(Error::Malformed {
        path: path.to_path_buf(),
        offset: text.len() as u64,
        reason: "no 'Tr:' entry".into(),
    })
}
