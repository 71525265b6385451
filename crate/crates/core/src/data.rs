//! Imitation samples from expert rollouts and their JSON-lines storage.
//!
//! A dataset is a header line followed by one sample per line, optionally
//! gzip-compressed, with a small JSON index stored next to it at
//! `<path>.index.json`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use jointdrive_sim::{
    generate, rollout_labels_many, HighLevelBehavior, Pose, Scenario, Vec2, World, WorldSnapshot, DT,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CoreError, DataError, Result};
use crate::raster::GridSpec;

pub const DATASET_VERSION: u32 = 1;
const FORMAT_TAG: &str = "jointdrive-dataset";

/// Another vehicle seen from the ego at the sample instant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OtherAgent {
    pub id: u32,
    /// Pose relative to the ego frame.
    pub pose: Pose,
    pub distance: f64,
    /// Future waypoints in this vehicle's own frame.
    pub label: Vec<Vec2>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub scenario_seed: u64,
    pub scenario_index: u64,
    pub tick: u64,
    pub snapshot: WorldSnapshot,
    pub behavior: HighLevelBehavior,
    /// GNSS target in the ego frame.
    pub gnss: Vec2,
    /// Future ego waypoints in the ego frame.
    pub ego_label: Vec<Vec2>,
    /// Nearest visible vehicles in ascending distance, at most `max_others`.
    pub others: Vec<OtherAgent>,
}

impl Sample {
    pub fn horizon(&self) -> usize {
        self.ego_label.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub seed: u64,
    pub scenarios: u64,
    pub first_index: u64,
    /// Ticks between recorded frames.
    pub frame_stride: u64,
    /// Ticks skipped at the start of each scenario.
    pub warmup: u64,
    pub horizon: usize,
    pub dt_wp: f64,
    pub max_others: usize,
    /// Frames are no longer recorded once the ego is this close to its route end.
    pub end_margin: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            seed: 0,
            scenarios: 200,
            first_index: 0,
            frame_stride: 25,
            warmup: 5,
            horizon: 10,
            dt_wp: 0.5,
            max_others: 9,
            end_margin: 5.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub version: u32,
    pub count: usize,
    pub gzip: bool,
    /// Generation settings, for provenance.
    pub generation: Option<GenConfig>,
    /// SHA-256 of the uncompressed JSON-lines payload.
    pub sha256: String,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
}

/// Records one scenario's frames under the expert.
pub fn samples_from_scenario(scenario: &Scenario, index: u64, cfg: &GenConfig, grid: &GridSpec) -> Result<Vec<Sample>> {
    let mut world = World::new(scenario)?;
    let ego = scenario.ego_id;
    let ticks = (scenario.duration / DT).round() as u64;
    let mut out = Vec::new();
    while world.tick() < ticks {
        let tick = world.tick();
        let (s, len, _) = world.route_status(ego)?;
        if len - s < cfg.end_margin {
            break;
        }
        if tick >= cfg.warmup && (tick - cfg.warmup) % cfg.frame_stride.max(1) == 0 {
            out.push(sample_at(&world, scenario, index, cfg, grid)?);
        }
        world.step_expert()?;
    }
    Ok(out)
}

fn sample_at(world: &World, scenario: &Scenario, index: u64, cfg: &GenConfig, grid: &GridSpec) -> Result<Sample> {
    let ego = scenario.ego_id;
    let ego_state = *world.vehicle(ego).ok_or(CoreError::MissingVehicle(ego))?;
    let ego_pose = ego_state.pose();
    let mut visible: Vec<(u32, Pose, f64)> = world
        .vehicles()
        .iter()
        .filter(|v| v.id != ego)
        .map(|v| (v.id, ego_pose.relative(&v.pose()), v.position().dist(ego_state.position())))
        .filter(|(_, rel, _)| grid.contains(rel.position()))
        .collect();
    visible.sort_by(|a, b| a.2.total_cmp(&b.2).then(a.0.cmp(&b.0)));
    visible.truncate(cfg.max_others);
    let mut ids = vec![ego];
    ids.extend(visible.iter().map(|v| v.0));
    let mut labels = rollout_labels_many(world, &ids, cfg.horizon, cfg.dt_wp)?;
    let ego_label = labels.remove(0);
    let others = visible
        .into_iter()
        .zip(labels)
        .map(|((id, pose, distance), label)| OtherAgent {
            id,
            pose,
            distance,
            label,
        })
        .collect();
    Ok(Sample {
        scenario_seed: scenario.seed,
        scenario_index: index,
        tick: world.tick(),
        snapshot: world.snapshot(ego)?,
        behavior: world.expert(ego)?.behavior,
        gnss: ego_pose.to_local(world.gnss_target(ego)?),
        ego_label,
        others,
    })
}

/// Generates the configured scenario range in index order.
pub fn generate_samples(cfg: &GenConfig, grid: &GridSpec) -> Result<Vec<Sample>> {
    if cfg.scenarios == 0 {
        return Err(CoreError::Config("at least one scenario is required".into()));
    }
    let mut out = Vec::new();
    for index in cfg.first_index..cfg.first_index + cfg.scenarios {
        let scenario = generate(cfg.seed, index);
        out.extend(samples_from_scenario(&scenario, index, cfg, grid)?);
    }
    Ok(out)
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn index_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".index.json");
    PathBuf::from(p)
}

fn is_gzip_path(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "gz")
}

/// Writes samples (gzip when the path ends in `.gz`) plus the index file.
pub fn write_dataset(path: &Path, samples: &[Sample], generation: Option<&GenConfig>) -> Result<DatasetIndex> {
    let mut payload = Vec::new();
    serde_json::to_writer(
        &mut payload,
        &Header {
            format: FORMAT_TAG.into(),
            version: DATASET_VERSION,
        },
    )?;
    payload.push(b'\n');
    for s in samples {
        serde_json::to_writer(&mut payload, s)?;
        payload.push(b'\n');
    }
    let gzip = is_gzip_path(path);
    let mut w = BufWriter::new(File::create(path)?);
    if gzip {
        let mut enc = GzEncoder::new(&mut w, Compression::default());
        enc.write_all(&payload)?;
        enc.finish()?;
    } else {
        w.write_all(&payload)?;
    }
    w.flush()?;
    let index = DatasetIndex {
        version: DATASET_VERSION,
        count: samples.len(),
        gzip,
        generation: generation.cloned(),
        sha256: hex(&Sha256::digest(&payload)),
    };
    std::fs::write(index_path(path), serde_json::to_vec_pretty(&index)?)?;
    Ok(index)
}

fn open_reader(path: &Path) -> Result<Box<dyn BufRead>> {
    let mut f = File::open(path)?;
    let mut magic = [0u8; 2];
    let n = f.read(&mut magic)?;
    let f = File::open(path)?;
    Ok(if n == 2 && magic == [0x1f, 0x8b] {
        Box::new(BufReader::new(MultiGzDecoder::new(f)))
    } else {
        Box::new(BufReader::new(f))
    })
}

/// Reads a dataset, checking the header version and, when an index file
/// exists, the sample count.
pub fn read_dataset(path: &Path) -> Result<Vec<Sample>> {
    let mut reader = open_reader(path)?;
    let mut samples = Vec::new();
    let mut line = String::new();
    let mut lineno = 0;
    let mut header_seen = false;
    loop {
        line.clear();
        lineno += 1;
        let n = match reader.read_line(&mut line) {
            Ok(n) => n,
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => {
                return Err(DataError::Truncated { line: lineno }.into())
            }
            Err(e) if e.kind() == std::io::ErrorKind::InvalidData => {
                return Err(DataError::Corrupt {
                    line: lineno,
                    msg: e.to_string(),
                }
                .into())
            }
            Err(e) => return Err(e.into()),
        };
        if n == 0 {
            break;
        }
        let complete = line.ends_with('\n');
        let text = line.trim_end();
        if text.is_empty() && complete {
            continue;
        }
        if !header_seen {
            let h: Header = serde_json::from_str(text).map_err(|e| match complete {
                true => DataError::Corrupt {
                    line: lineno,
                    msg: format!("bad header: {e}"),
                },
                false => DataError::Truncated { line: lineno },
            })?;
            if h.format != FORMAT_TAG {
                return Err(DataError::Corrupt {
                    line: lineno,
                    msg: format!("unknown format tag {:?}", h.format),
                }
                .into());
            }
            if h.version != DATASET_VERSION {
                return Err(DataError::Version {
                    found: h.version,
                    expected: DATASET_VERSION,
                }
                .into());
            }
            header_seen = true;
            continue;
        }
        match serde_json::from_str::<Sample>(text) {
            Ok(s) => samples.push(s),
            Err(_) if !complete => return Err(DataError::Truncated { line: lineno }.into()),
            Err(e) => {
                return Err(DataError::Corrupt {
                    line: lineno,
                    msg: e.to_string(),
                }
                .into())
            }
        }
    }
    if !header_seen {
        return Err(DataError::Truncated { line: 1 }.into());
    }
    let ipath = index_path(path);
    if ipath.exists() {
        let index: DatasetIndex = serde_json::from_slice(&std::fs::read(ipath)?)?;
        if index.version != DATASET_VERSION {
            return Err(DataError::Version {
                found: index.version,
                expected: DATASET_VERSION,
            }
            .into());
        }
        if index.count != samples.len() {
            return Err(DataError::CountMismatch {
                index: index.count,
                actual: samples.len(),
            }
            .into());
        }
    }
    Ok(samples)
}
