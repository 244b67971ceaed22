//! Checkpoint, atlas and dataset files.
//!
//! JSON floats are written in shortest round-trip form and parsed exactly,
//! so a checkpoint reloads bit-identical.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use cpaseed_core::data::{Dataset, Frame};
use cpaseed_core::geometry::PartitionAtlas;
use cpaseed_core::net::AdamState;
use cpaseed_core::CpaGraph;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;

pub const CHECKPOINT_FORMAT: &str = "cpaseed-checkpoint";
pub const ATLAS_FORMAT: &str = "cpaseed-atlas";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: expected format `{expected}` v{FORMAT_VERSION}, found `{found}` v{version}")]
    Format { path: PathBuf, expected: &'static str, found: String, version: u32 },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io { path: path.to_path_buf(), source }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|source| IoError::Json { path: path.to_path_buf(), source })?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(io_err(path))
}

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| IoError::Json { path: path.to_path_buf(), source })
}

/// A network with its optimizer state, as saved at the end of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    /// Completed training epochs.
    pub epoch: u32,
    pub seed: u64,
    pub fingerprint: u64,
    pub net: CpaGraph,
    #[serde(default)]
    pub adam: Option<AdamState>,
    #[serde(default)]
    pub config: Option<ExperimentConfig>,
}

impl Checkpoint {
    pub fn new(net: CpaGraph, epoch: u32, seed: u64) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: FORMAT_VERSION,
            epoch,
            seed,
            fingerprint: net.fingerprint(),
            net,
            adam: None,
            config: None,
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), IoError> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        let ck: Checkpoint = read_json(path)?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != FORMAT_VERSION {
            return Err(IoError::Format {
                path: path.to_path_buf(),
                expected: CHECKPOINT_FORMAT,
                found: ck.format,
                version: ck.version,
            });
        }
        if ck.net.fingerprint() != ck.fingerprint {
            return Err(IoError::Invalid {
                path: path.to_path_buf(),
                message: "network does not match the stored fingerprint".into(),
            });
        }
        Ok(ck)
    }
}

/// An atlas with a self-describing header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtlasFile {
    pub format: String,
    pub version: u32,
    pub region_count: usize,
    #[serde(default)]
    pub epoch: Option<u32>,
    pub atlas: PartitionAtlas,
}

impl AtlasFile {
    pub fn new(atlas: PartitionAtlas, epoch: Option<u32>) -> Self {
        AtlasFile { format: ATLAS_FORMAT.into(), version: FORMAT_VERSION, region_count: atlas.count(), epoch, atlas }
    }

    pub fn save(&self, path: &Path) -> Result<(), IoError> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        let file: AtlasFile = read_json(path)?;
        if file.format != ATLAS_FORMAT || file.version != FORMAT_VERSION {
            return Err(IoError::Format {
                path: path.to_path_buf(),
                expected: ATLAS_FORMAT,
                found: file.format,
                version: file.version,
            });
        }
        if file.region_count != file.atlas.count() {
            return Err(IoError::Invalid {
                path: path.to_path_buf(),
                message: format!("header says {} regions, atlas has {}", file.region_count, file.atlas.count()),
            });
        }
        Ok(file)
    }
}

#[derive(Serialize, Deserialize)]
struct DataRow {
    x1: f64,
    x2: f64,
    label: usize,
}

/// Writes `x1,x2,label` rows.
pub fn write_dataset_csv(ds: &Dataset, path: &Path) -> Result<(), IoError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let csv_err = |source| IoError::Csv { path: path.to_path_buf(), source };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for (p, &label) in ds.points.iter().zip(&ds.labels) {
        w.serialize(DataRow { x1: p[0], x2: p[1], label }).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))
}

/// Reads `x1,x2,label` rows; the class count is one past the largest label.
pub fn read_dataset_csv(path: &Path) -> Result<Dataset, IoError> {
    let csv_err = |source| IoError::Csv { path: path.to_path_buf(), source };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for row in r.deserialize() {
        let row: DataRow = row.map_err(csv_err)?;
        points.push([row.x1, row.x2]);
        labels.push(row.label);
    }
    if points.is_empty() {
        return Err(IoError::Invalid { path: path.to_path_buf(), message: "no rows".into() });
    }
    let name = path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    let classes = labels.iter().max().map_or(0, |m| m + 1).max(2);
    Ok(Dataset { name, points, labels, classes, seed: 0, frame: Frame::IDENTITY })
}

#[cfg(test)]
mod tests {
    use super::*;
    use cpaseed_core::data::gen_two_moons;
    use cpaseed_core::geometry::{enumerate_regions, ConvexPolygon, Tolerances};
    use cpaseed_core::net::{build_mlp, AdamState, NetSpec, Norm};
    use cpaseed_core::Rng;

    #[test]
    fn checkpoint_reloads_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let spec = NetSpec { norm: Norm::BatchNorm, ..NetSpec::default() };
        let net = build_mlp(&spec, 7, 3, &mut Rng::seed_from_u64(5)).unwrap();
        let mut ck = Checkpoint::new(net.clone(), 12, 3);
        ck.adam = Some(AdamState::new(&net));
        ck.config = Some(ExperimentConfig::default());
        let path = dir.path().join("ck.json");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.net.fingerprint(), net.fingerprint());
    }

    #[test]
    fn tampered_checkpoint_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let net = build_mlp(&NetSpec::default(), 3, 1, &mut Rng::seed_from_u64(1)).unwrap();
        let mut ck = Checkpoint::new(net, 0, 0);
        ck.fingerprint ^= 1;
        let path = dir.path().join("ck.json");
        ck.save(&path).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(IoError::Invalid { .. })));
        let other = dir.path().join("other.json");
        fs::write(&other, "{\"format\": \"nope\"}").unwrap();
        assert!(Checkpoint::load(&other).is_err());
    }

    #[test]
    fn atlas_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let net = build_mlp(&NetSpec::default(), 5, 2, &mut Rng::seed_from_u64(2)).unwrap();
        let atlas = enumerate_regions(&net, &ConvexPolygon::square([0.0, 0.0], 1.0), &Tolerances::default()).unwrap();
        let file = AtlasFile::new(atlas, Some(50));
        let path = dir.path().join("atlas.json");
        file.save(&path).unwrap();
        assert_eq!(AtlasFile::load(&path).unwrap(), file);
    }

    #[test]
    fn dataset_csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = gen_two_moons(50, 0.1, 4).unwrap();
        let path = dir.path().join("moons.csv");
        write_dataset_csv(&ds, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("x1,x2,label\n"));
        let back = read_dataset_csv(&path).unwrap();
        assert_eq!(back.points, ds.points);
        assert_eq!(back.labels, ds.labels);
        assert_eq!(back.classes, 2);
    }
}
