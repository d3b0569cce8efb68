//! Dataset directories: `meta.json` plus one payload file per frame.
//!
//! JSONL payload: a header line
//! `{"frame_id", "sequence_id", "index_in_sequence", "num_points", "gt_boxes", "track_ids"}`
//! followed by one `[x, y, z, reflectance]` line per point.
//!
//! Binary payload (little-endian): magic `AAL3`, `u16` version, `u64`
//! frame id, sequence id and index, then two length-prefixed `f32` arrays
//! (`u32` element count): points as `x y z r` quadruples and boxes as
//! `cx cy cz l w h yaw class` octuples, then a `u32` count of `u64` track ids.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Box3D, Point, PointCloud};
use crate::synthetic::{Frame, SceneConfig};

pub const META_FILE: &str = "meta.json";
pub const BINARY_MAGIC: &[u8; 4] = b"AAL3";
pub const BINARY_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameFormat {
    #[default]
    Jsonl,
    Binary,
}

impl FrameFormat {
    fn extension(self) -> &'static str {
        match self {
            FrameFormat::Jsonl => "jsonl",
            FrameFormat::Binary => "bin",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameEntry {
    pub frame_id: u64,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub schema_version: u32,
    pub format: FrameFormat,
    pub num_classes: usize,
    pub class_names: Vec<String>,
    pub frames: Vec<FrameEntry>,
    /// Generator settings when the dataset is synthetic.
    #[serde(default)]
    pub scene: Option<SceneConfig>,
}

#[derive(Serialize, Deserialize)]
struct JsonlHeader {
    frame_id: u64,
    sequence_id: u64,
    index_in_sequence: u64,
    num_points: usize,
    gt_boxes: Vec<Box3D>,
    #[serde(default)]
    track_ids: Vec<u64>,
}

fn frame_file_name(frame_id: u64, format: FrameFormat) -> String {
    format!("frames/{frame_id:06}.{}", format.extension())
}

/// Writes `frames` and their metadata under `dir`, creating it if needed.
pub fn write_dataset(
    dir: &Path,
    frames: &[Frame],
    class_names: &[String],
    scene: Option<&SceneConfig>,
    format: FrameFormat,
) -> Result<DatasetMeta> {
    let frames_dir = dir.join("frames");
    fs::create_dir_all(&frames_dir).map_err(|e| Error::io(&frames_dir, e))?;
    let mut entries = Vec::with_capacity(frames.len());
    for f in frames {
        let name = frame_file_name(f.frame_id, format);
        let path = dir.join(&name);
        let bytes = match format {
            FrameFormat::Jsonl => encode_jsonl(f)?,
            FrameFormat::Binary => encode_binary(f),
        };
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        entries.push(FrameEntry {
            frame_id: f.frame_id,
            file: name,
        });
    }
    let meta = DatasetMeta {
        schema_version: 1,
        format,
        num_classes: class_names.len(),
        class_names: class_names.to_vec(),
        frames: entries,
        scene: scene.cloned(),
    };
    let path = dir.join(META_FILE);
    let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, &meta)?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| Error::io(&path, e))?;
    Ok(meta)
}

/// Reads a dataset directory written by [`write_dataset`].
pub fn read_dataset(dir: &Path) -> Result<(DatasetMeta, Vec<Frame>)> {
    let meta_path = dir.join(META_FILE);
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: DatasetMeta =
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", meta_path.display())))?;
    if meta.schema_version != 1 {
        return Err(Error::Data(format!(
            "{}: unsupported schema_version {}",
            meta_path.display(),
            meta.schema_version
        )));
    }
    if meta.num_classes != meta.class_names.len() {
        return Err(Error::Data(format!("{}: num_classes disagrees with class_names", meta_path.display())));
    }
    let mut frames = Vec::with_capacity(meta.frames.len());
    for entry in &meta.frames {
        let path = dir.join(&entry.file);
        let frame = match meta.format {
            FrameFormat::Jsonl => decode_jsonl(&path)?,
            FrameFormat::Binary => {
                let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
                decode_binary(&bytes).map_err(|m| Error::Data(format!("{}: {m}", path.display())))?
            }
        };
        if frame.frame_id != entry.frame_id {
            return Err(Error::Data(format!(
                "{}: holds frame {} but meta.json lists {}",
                path.display(),
                frame.frame_id,
                entry.frame_id
            )));
        }
        if let Some(b) = frame.gt_boxes.iter().find(|b| b.class_id >= meta.num_classes) {
            return Err(Error::Data(format!("{}: box class {} out of range", path.display(), b.class_id)));
        }
        frames.push(frame);
    }
    Ok((meta, frames))
}

fn encode_jsonl(f: &Frame) -> Result<Vec<u8>> {
    let header = JsonlHeader {
        frame_id: f.frame_id,
        sequence_id: f.sequence_id,
        index_in_sequence: f.index_in_sequence,
        num_points: f.cloud.len(),
        gt_boxes: f.gt_boxes.clone(),
        track_ids: f.track_ids.clone(),
    };
    let mut out = serde_json::to_vec(&header)?;
    out.push(b'\n');
    for p in &f.cloud.points {
        serde_json::to_writer(&mut out, &[p.x, p.y, p.z, p.reflectance])?;
        out.push(b'\n');
    }
    Ok(out)
}

fn decode_jsonl(path: &Path) -> Result<Frame> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let record_err = |line: usize, message: String| Error::Record {
        path: PathBuf::from(path),
        line,
        message,
    };
    let mut lines = BufReader::new(file).lines();
    let first = lines
        .next()
        .ok_or_else(|| record_err(1, "empty frame file".into()))?
        .map_err(|e| Error::io(path, e))?;
    let header: JsonlHeader = serde_json::from_str(&first).map_err(|e| record_err(1, e.to_string()))?;
    let mut points = Vec::with_capacity(header.num_points);
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let v: [f64; 4] = serde_json::from_str(&line).map_err(|e| record_err(i + 2, e.to_string()))?;
        points.push(Point::new(v[0], v[1], v[2], v[3]));
    }
    if points.len() != header.num_points {
        return Err(record_err(
            1,
            format!("header declares {} points, file holds {}", header.num_points, points.len()),
        ));
    }
    Ok(Frame {
        frame_id: header.frame_id,
        sequence_id: header.sequence_id,
        index_in_sequence: header.index_in_sequence,
        cloud: PointCloud::new(points),
        gt_boxes: header.gt_boxes,
        track_ids: header.track_ids,
    })
}

pub fn encode_binary(f: &Frame) -> Vec<u8> {
    let mut out = Vec::with_capacity(40 + 16 * f.cloud.len() + 32 * f.gt_boxes.len());
    out.extend_from_slice(BINARY_MAGIC);
    out.extend_from_slice(&BINARY_VERSION.to_le_bytes());
    for v in [f.frame_id, f.sequence_id, f.index_in_sequence] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let put_f32s = |out: &mut Vec<u8>, values: &[f32]| {
        out.extend_from_slice(&(values.len() as u32).to_le_bytes());
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    };
    let points: Vec<f32> = f
        .cloud
        .points
        .iter()
        .flat_map(|p| [p.x as f32, p.y as f32, p.z as f32, p.reflectance as f32])
        .collect();
    put_f32s(&mut out, &points);
    let boxes: Vec<f32> = f
        .gt_boxes
        .iter()
        .flat_map(|b| {
            [
                b.center[0] as f32,
                b.center[1] as f32,
                b.center[2] as f32,
                b.dims[0] as f32,
                b.dims[1] as f32,
                b.dims[2] as f32,
                b.yaw as f32,
                b.class_id as f32,
            ]
        })
        .collect();
    put_f32s(&mut out, &boxes);
    out.extend_from_slice(&(f.track_ids.len() as u32).to_le_bytes());
    for t in &f.track_ids {
        out.extend_from_slice(&t.to_le_bytes());
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format!("truncated payload at byte {}", self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f32s(&mut self) -> std::result::Result<Vec<f32>, String> {
        let n = self.u32()? as usize;
        let raw = self.take(n.checked_mul(4).ok_or("array length overflow")?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }
}

pub fn decode_binary(bytes: &[u8]) -> std::result::Result<Frame, String> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4)? != BINARY_MAGIC {
        return Err("bad magic, expected AAL3".into());
    }
    let version = u16::from_le_bytes(c.take(2)?.try_into().expect("2 bytes"));
    if version != BINARY_VERSION {
        return Err(format!("unsupported binary version {version}"));
    }
    let (frame_id, sequence_id, index_in_sequence) = (c.u64()?, c.u64()?, c.u64()?);
    let points = c.f32s()?;
    if points.len() % 4 != 0 {
        return Err("point array length is not a multiple of 4".into());
    }
    let boxes = c.f32s()?;
    if boxes.len() % 8 != 0 {
        return Err("box array length is not a multiple of 8".into());
    }
    let n_tracks = c.u32()? as usize;
    let track_ids = (0..n_tracks).map(|_| c.u64()).collect::<std::result::Result<Vec<_>, _>>()?;
    if c.pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - c.pos));
    }
    let d = |v: f32| v as f64;
    Ok(Frame {
        frame_id,
        sequence_id,
        index_in_sequence,
        cloud: PointCloud::new(
            points
                .chunks_exact(4)
                .map(|p| Point::new(d(p[0]), d(p[1]), d(p[2]), d(p[3])))
                .collect(),
        ),
        gt_boxes: boxes
            .chunks_exact(8)
            .map(|b| Box3D {
                center: [d(b[0]), d(b[1]), d(b[2])],
                dims: [d(b[3]), d(b[4]), d(b[5])],
                yaw: d(b[6]),
                class_id: b[7] as usize,
            })
            .collect(),
        track_ids,
    })
}
