use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DemoKind, StepRecord, HISTORY, HORIZON};
use crate::gridsim::{Action, Heading, Hit, Observation, Pose, SensorConfig};
use crate::mapper::{decode_map, encode_map, Frame, MapDescription};
use crate::rewards::{label_episode, RewardConfig, RewardLabel};
use crate::{Error, Result};

pub const INDEX_FILE: &str = "index.jsonl";
pub const BLOB_FILE: &str = "blob.bin";
pub const META_FILE: &str = "meta.json";
const DATASET_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub version: u32,
    pub num_categories: usize,
    pub sensor: SensorConfig,
    pub ego_window: usize,
    pub episodes: usize,
    pub records: usize,
    pub reward: Option<RewardConfig>,
}

impl DatasetMeta {
    pub fn new(num_categories: usize, sensor: SensorConfig, ego_window: usize) -> Self {
        DatasetMeta { version: DATASET_VERSION, num_categories, sensor, ego_window, episodes: 0, records: 0, reward: None }
    }
}

/// One line of `index.jsonl`. Map and frames live in the blob at the given
/// byte ranges.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordHeader {
    pub episode: u64,
    pub t: u32,
    pub world_seed: u64,
    pub kind: Option<DemoKind>,
    pub goal: u8,
    pub pose: Pose,
    pub actions: [Action; HORIZON],
    pub description: MapDescription,
    pub dist: f64,
    pub dist_after: f64,
    pub map_offset: u64,
    pub map_len: u64,
    pub frames_offset: u64,
    pub frames_len: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rtg: Option<f64>,
}

impl RecordHeader {
    pub fn label(&self) -> Option<RewardLabel> {
        Some(RewardLabel { raw: self.raw?, r: self.r?, rtg: self.rtg? })
    }
}

/// Append-only writer.
pub struct DatasetWriter {
    dir: PathBuf,
    meta: DatasetMeta,
    index: BufWriter<File>,
    blob: BufWriter<File>,
    offset: u64,
    last_episode: Option<u64>,
}

impl DatasetWriter {
    pub fn create(dir: &Path, meta: DatasetMeta) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(DatasetWriter {
            dir: dir.to_path_buf(),
            meta: DatasetMeta { episodes: 0, records: 0, ..meta },
            index: BufWriter::new(File::create(dir.join(INDEX_FILE))?),
            blob: BufWriter::new(File::create(dir.join(BLOB_FILE))?),
            offset: 0,
            last_episode: None,
        })
    }

    pub fn append(&mut self, rec: &StepRecord) -> Result<()> {
        if rec.frames.len() != HISTORY || rec.frames.iter().any(|f| f.depth.len() != self.meta.sensor.rays) {
            return Err(Error::Precondition("record frames do not match the dataset sensor".into()));
        }
        let map = encode_map(&rec.map);
        let frames = encode_frames(&rec.frames);
        self.blob.write_all(&map)?;
        self.blob.write_all(&frames)?;
        let header = RecordHeader {
            episode: rec.episode,
            t: rec.t,
            world_seed: rec.world_seed,
            kind: rec.kind,
            goal: rec.goal,
            pose: rec.pose,
            actions: rec.actions,
            description: rec.description.clone(),
            dist: rec.dist,
            dist_after: rec.dist_after,
            map_offset: self.offset,
            map_len: map.len() as u64,
            frames_offset: self.offset + map.len() as u64,
            frames_len: frames.len() as u64,
            raw: rec.label.map(|l| l.raw),
            r: rec.label.map(|l| l.r),
            rtg: rec.label.map(|l| l.rtg),
        };
        self.offset += (map.len() + frames.len()) as u64;
        serde_json::to_writer(&mut self.index, &header)?;
        self.index.write_all(b"\n")?;
        if self.last_episode != Some(rec.episode) {
            self.meta.episodes += 1;
            self.last_episode = Some(rec.episode);
        }
        self.meta.records += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<DatasetMeta> {
        self.index.flush()?;
        self.blob.flush()?;
        fs::write(self.dir.join(META_FILE), serde_json::to_string_pretty(&self.meta)? + "\n")?;
        Ok(self.meta)
    }
}

fn encode_frames(frames: &[Observation]) -> Vec<u8> {
    let mut out = Vec::new();
    for f in frames {
        out.extend_from_slice(&f.pose.cell.0.to_le_bytes());
        out.extend_from_slice(&f.pose.cell.1.to_le_bytes());
        out.push(f.pose.heading.quarter_turns());
        for (d, h) in f.depth.iter().zip(&f.hits) {
            out.extend_from_slice(&d.to_le_bytes());
            let (cat, dist) = h.map_or((0, 0.0), |h| (h.category, h.distance));
            out.push(cat);
            out.extend_from_slice(&dist.to_le_bytes());
        }
    }
    out
}

fn decode_frames(bytes: &[u8], sensor: &SensorConfig) -> Result<Vec<Observation>> {
    let per_frame = 9 + sensor.rays * 9;
    if bytes.len() != per_frame * HISTORY {
        return Err(Error::Format(format!("frame payload of {} bytes, expected {}", bytes.len(), per_frame * HISTORY)));
    }
    let f32_at = |b: &[u8], i: usize| f32::from_le_bytes(b[i..i + 4].try_into().unwrap());
    let i32_at = |b: &[u8], i: usize| i32::from_le_bytes(b[i..i + 4].try_into().unwrap());
    Ok(bytes
        .chunks_exact(per_frame)
        .map(|b| {
            let pose = Pose::new(i32_at(b, 0), i32_at(b, 4), Heading::from_quarter_turns(b[8]));
            let mut depth = Vec::with_capacity(sensor.rays);
            let mut hits = Vec::with_capacity(sensor.rays);
            for r in 0..sensor.rays {
                let o = 9 + r * 9;
                depth.push(f32_at(b, o));
                hits.push(match b[o + 4] {
                    0 => None,
                    category => Some(Hit { category, distance: f32_at(b, o + 5) }),
                });
            }
            Observation { pose, sensor: *sensor, depth, hits }
        })
        .collect())
}

/// Read side: the index is parsed up front and the blob is held in memory.
pub struct Dataset {
    pub meta: DatasetMeta,
    pub headers: Vec<RecordHeader>,
    blob: Vec<u8>,
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Self> {
        let meta: DatasetMeta = serde_json::from_str(&fs::read_to_string(dir.join(META_FILE))?)?;
        if meta.version != DATASET_VERSION {
            return Err(Error::Format(format!("unsupported dataset version {}", meta.version)));
        }
        let mut headers = Vec::with_capacity(meta.records);
        for line in BufReader::new(File::open(dir.join(INDEX_FILE))?).lines() {
            let line = line?;
            if !line.trim().is_empty() {
                headers.push(serde_json::from_str(&line)?);
            }
        }
        let blob = fs::read(dir.join(BLOB_FILE))?;
        Ok(Dataset { meta, headers, blob })
    }

    pub fn len(&self) -> usize {
        self.headers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.headers.is_empty()
    }

    pub fn is_labelled(&self) -> bool {
        self.headers.iter().all(|h| h.label().is_some())
    }

    fn slice(&self, offset: u64, len: u64) -> Result<&[u8]> {
        let (a, b) = (offset as usize, (offset + len) as usize);
        self.blob.get(a..b).ok_or_else(|| Error::Format(format!("blob range {a}..{b} out of bounds")))
    }

    pub fn record(&self, i: usize) -> Result<StepRecord> {
        let h = &self.headers[i];
        let (map, used) = decode_map(self.slice(h.map_offset, h.map_len)?, Frame::Egocentric, h.pose.cell)?;
        if used as u64 != h.map_len {
            return Err(Error::Format(format!("record {i}: map length mismatch")));
        }
        let frames = decode_frames(self.slice(h.frames_offset, h.frames_len)?, &self.meta.sensor)?;
        Ok(StepRecord {
            episode: h.episode,
            t: h.t,
            world_seed: h.world_seed,
            kind: h.kind,
            goal: h.goal,
            pose: h.pose,
            map,
            frames,
            actions: h.actions,
            description: h.description.clone(),
            dist: h.dist,
            dist_after: h.dist_after,
            label: h.label(),
        })
    }

    pub fn records(&self) -> Result<Vec<StepRecord>> {
        (0..self.len()).map(|i| self.record(i)).collect()
    }
}

/// Computes reward labels per episode and rewrites the index (and meta)
/// in place. Returns the number of labelled records.
pub fn label_dataset(dir: &Path, cfg: &RewardConfig) -> Result<usize> {
    let mut ds = Dataset::open(dir)?;
    let mut start = 0;
    while start < ds.headers.len() {
        let ep = ds.headers[start].episode;
        let end = start + ds.headers[start..].iter().take_while(|h| h.episode == ep).count();
        let group = &ds.headers[start..end];
        if group.iter().enumerate().any(|(k, h)| h.t as usize != k) {
            return Err(Error::Format(format!("episode {ep}: records are not consecutive steps")));
        }
        let mut d: Vec<f64> = group.iter().map(|h| h.dist).collect();
        d.push(group[group.len() - 1].dist_after);
        let labels = label_episode(&d, cfg)?;
        for (h, l) in ds.headers[start..end].iter_mut().zip(labels) {
            h.raw = Some(l.raw);
            h.r = Some(l.r);
            h.rtg = Some(l.rtg);
        }
        start = end;
    }
    let mut index = BufWriter::new(File::create(dir.join(INDEX_FILE))?);
    for h in &ds.headers {
        serde_json::to_writer(&mut index, h)?;
        index.write_all(b"\n")?;
    }
    index.flush()?;
    ds.meta.reward = Some(*cfg);
    fs::write(dir.join(META_FILE), serde_json::to_string_pretty(&ds.meta)? + "\n")?;
    Ok(ds.headers.len())
}
