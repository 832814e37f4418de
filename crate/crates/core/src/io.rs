//! Trajectory persistence: a JSON manifest plus one raw little-endian f64
//! file per snapshot, in the documented row-major node order (axis 1
//! slowest). Loading verifies the format version, file sizes, and content
//! checksums, and is a bit-exact inverse of saving.

use crate::flow::{FlowError, Provenance, Trajectory};
use crate::grid::{GridError, GridSpec, ScalarField};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug)]
pub enum IoError {
    Io(std::io::Error),
    Json(serde_json::Error),
    VersionMismatch { found: u32, expected: u32 },
    ChecksumMismatch { file: String },
    Truncated { file: String, expected_bytes: u64, got: u64 },
    Manifest(String),
    Grid(GridError),
    Flow(FlowError),
}

impl fmt::Display for IoError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IoError::Io(e) => write!(f, "io error: {e}"),
            IoError::Json(e) => write!(f, "json error: {e}"),
            IoError::VersionMismatch { found, expected } => {
                write!(f, "manifest format version {found} (this build reads {expected})")
            }
            IoError::ChecksumMismatch { file } => {
                write!(f, "checksum mismatch for snapshot file {file}")
            }
            IoError::Truncated { file, expected_bytes, got } => write!(
                f,
                "snapshot file {file} holds {got} bytes, expected {expected_bytes}"
            ),
            IoError::Manifest(m) => write!(f, "malformed manifest: {m}"),
            IoError::Grid(e) => write!(f, "{e}"),
            IoError::Flow(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for IoError {}

impl From<std::io::Error> for IoError {
    fn from(e: std::io::Error) -> Self {
        IoError::Io(e)
    }
}

impl From<serde_json::Error> for IoError {
    fn from(e: serde_json::Error) -> Self {
        IoError::Json(e)
    }
}

impl From<GridError> for IoError {
    fn from(e: GridError) -> Self {
        IoError::Grid(e)
    }
}

impl From<FlowError> for IoError {
    fn from(e: FlowError) -> Self {
        IoError::Flow(e)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct GridDescriptor {
    pub dim: usize,
    pub half_width: f64,
    pub nodes_per_axis: usize,
}

impl GridDescriptor {
    pub fn from_spec(spec: &GridSpec) -> Self {
        GridDescriptor {
            dim: spec.dim(),
            half_width: spec.half_width(),
            nodes_per_axis: spec.nodes_per_axis(),
        }
    }

    pub fn to_spec(self) -> Result<GridSpec, GridError> {
        GridSpec::new(self.dim, self.half_width, self.nodes_per_axis)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryManifest {
    pub format_version: u32,
    pub grid: GridDescriptor,
    pub theta0: f64,
    pub times: Vec<f64>,
    pub snapshot_files: Vec<String>,
    pub checksums: Vec<String>,
    pub provenance: Provenance,
}

// FNV-1a, 64-bit: deterministic, dependency-free content checksums.
fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

fn snapshot_bytes(field: &ScalarField) -> Vec<u8> {
    let mut out = Vec::with_capacity(field.values().len() * 8);
    for v in field.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Write the manifest and one raw f64 file per snapshot into `dir`
/// (created if absent).
pub fn save_trajectory(traj: &Trajectory, dir: &Path) -> Result<TrajectoryManifest, IoError> {
    fs::create_dir_all(dir)?;
    let mut snapshot_files = Vec::with_capacity(traj.len());
    let mut checksums = Vec::with_capacity(traj.len());
    for k in 0..traj.len() {
        let name = format!("snapshot_{k:06}.f64le");
        let bytes = snapshot_bytes(traj.snapshot(k));
        checksums.push(format!("{:016x}", fnv1a64(&bytes)));
        fs::write(dir.join(&name), &bytes)?;
        snapshot_files.push(name);
    }
    let manifest = TrajectoryManifest {
        format_version: FORMAT_VERSION,
        grid: GridDescriptor::from_spec(traj.grid()),
        theta0: traj.theta0(),
        times: traj.times().to_vec(),
        snapshot_files,
        checksums,
        provenance: traj.provenance().clone(),
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(dir.join(MANIFEST_NAME), json)?;
    Ok(manifest)
}

/// Exact inverse of `save_trajectory`: verifies version, per-file sizes,
/// and checksums before reconstructing the trajectory.
pub fn load_trajectory(dir: &Path) -> Result<Trajectory, IoError> {
    let manifest_path = dir.join(MANIFEST_NAME);
    let manifest: TrajectoryManifest =
        serde_json::from_str(&fs::read_to_string(&manifest_path)?)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(IoError::VersionMismatch {
            found: manifest.format_version,
            expected: FORMAT_VERSION,
        });
    }
    if manifest.times.len() != manifest.snapshot_files.len() {
        return Err(IoError::Manifest(format!(
            "{} times but {} snapshot files",
            manifest.times.len(),
            manifest.snapshot_files.len()
        )));
    }
    if manifest.checksums.len() != manifest.snapshot_files.len() {
        return Err(IoError::Manifest(format!(
            "{} checksums but {} snapshot files",
            manifest.checksums.len(),
            manifest.snapshot_files.len()
        )));
    }
    let grid = manifest.grid.to_spec()?;
    let expected_bytes = (grid.node_count() * 8) as u64;

    let mut snapshots = Vec::with_capacity(manifest.snapshot_files.len());
    for (file, checksum) in manifest.snapshot_files.iter().zip(&manifest.checksums) {
        let path = dir.join(file);
        let mut bytes = Vec::new();
        fs::File::open(&path)?.read_to_end(&mut bytes)?;
        if bytes.len() as u64 != expected_bytes {
            return Err(IoError::Truncated {
                file: file.clone(),
                expected_bytes,
                got: bytes.len() as u64,
            });
        }
        let found = format!("{:016x}", fnv1a64(&bytes));
        if &found != checksum {
            return Err(IoError::ChecksumMismatch { file: file.clone() });
        }
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        snapshots.push(ScalarField::from_values(grid, values)?);
    }
    Ok(Trajectory::new(grid, manifest.theta0, manifest.times, snapshots, manifest.provenance)?)
}

/// Directory layout helper: where a run stores its trajectory.
pub fn trajectory_dir(out_dir: &Path) -> PathBuf {
    out_dir.join("trajectory")
}
