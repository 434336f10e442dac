//! On-disk formats.
//!
//! Masks are `.gbm` files: the magic `GBM1`, then little-endian `u32`
//! version (1), `T`, `H`, `W`, then `T*H*W` bytes in `(t, y, x)` order, each
//! `round(p * 255)`. Clip `i` of video `v` lives at `<root>/v/clip_<i>.gbm`.
//!
//! Tubelets and detections are JSON Lines, ground truth a JSON array and
//! video lengths a JSON object of frame counts.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FrameBox, ScoreVector, Track, Tubelet, TubeletId};
use crate::scorer::GroundTruthInstance;
use crate::volume::{ClipMask, Dims};

pub const GBM_MAGIC: &[u8; 4] = b"GBM1";
pub const GBM_VERSION: u32 = 1;
const HEADER_LEN: usize = 20;

pub fn quantize(p: f32) -> u8 {
    (p.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn encode_gbm(mask: &ClipMask) -> Vec<u8> {
    let d = mask.dims();
    let mut out = Vec::with_capacity(HEADER_LEN + d.len());
    out.extend_from_slice(GBM_MAGIC);
    for v in [GBM_VERSION, d.t as u32, d.h as u32, d.w as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend(mask.as_slice().iter().map(|&p| quantize(p)));
    out
}

fn header_err(offset: usize, reason: impl Into<String>) -> Error {
    Error::MaskHeader {
        offset,
        reason: reason.into(),
    }
}

pub fn decode_gbm(bytes: &[u8]) -> Result<ClipMask> {
    if bytes.len() < 4 {
        return Err(header_err(bytes.len(), "truncated magic"));
    }
    if &bytes[..4] != GBM_MAGIC {
        return Err(header_err(0, format!("bad magic {:?}", &bytes[..4])));
    }
    let field = |offset: usize, name: &str| -> Result<u32> {
        bytes
            .get(offset..offset + 4)
            .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
            .ok_or_else(|| header_err(bytes.len(), format!("truncated {name} field")))
    };
    let version = field(4, "version")?;
    if version != GBM_VERSION {
        return Err(header_err(4, format!("unsupported version {version}")));
    }
    let mut dims = [0usize; 3];
    for (k, name) in ["T", "H", "W"].iter().enumerate() {
        let offset = 8 + 4 * k;
        let v = field(offset, name)?;
        if v == 0 {
            return Err(header_err(offset, format!("{name} is zero")));
        }
        dims[k] = v as usize;
    }
    let d = Dims::new(dims[0], dims[1], dims[2]);
    let body = &bytes[HEADER_LEN..];
    if body.len() != d.len() {
        return Err(header_err(
            HEADER_LEN + body.len().min(d.len()),
            format!("expected {} voxel bytes, found {}", d.len(), body.len()),
        ));
    }
    ClipMask::from_vec(d, body.iter().map(|&b| b as f32 / 255.0).collect())
}

pub fn clip_path(root: &Path, video_id: &str, index: usize) -> PathBuf {
    root.join(video_id).join(format!("clip_{index}.gbm"))
}

pub fn read_gbm(path: &Path) -> Result<ClipMask> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_gbm(&bytes)
}

pub fn write_gbm(path: &Path, mask: &ClipMask) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, encode_gbm(mask)).map_err(|e| Error::io(path, e))
}

/// Clip indices present under `<root>/<video_id>/`, ascending.
pub fn list_clips(root: &Path, video_id: &str) -> Result<Vec<usize>> {
    let dir = root.join(video_id);
    let mut out = Vec::new();
    for entry in std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
        let entry = entry.map_err(|e| Error::io(&dir, e))?;
        let name = entry.file_name();
        let index = name
            .to_str()
            .and_then(|n| n.strip_prefix("clip_"))
            .and_then(|n| n.strip_suffix(".gbm"))
            .and_then(|n| n.parse::<usize>().ok());
        out.extend(index);
    }
    out.sort_unstable();
    Ok(out)
}

/// Subdirectories of `root`, taken as video ids, sorted.
pub fn list_videos(root: &Path) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        if entry.path().is_dir() {
            out.extend(entry.file_name().to_str().map(String::from));
        }
    }
    out.sort();
    Ok(out)
}

/// JSON Lines form of a tubelet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TubeletRecord {
    pub id: TubeletId,
    pub start_frame: u32,
    pub end_frame: u32,
    pub boxes: Vec<FrameBox>,
    pub scores: Vec<ScoreVector>,
}

impl From<&Tubelet> for TubeletRecord {
    fn from(t: &Tubelet) -> Self {
        TubeletRecord {
            id: t.id.clone(),
            start_frame: t.start_frame(),
            end_frame: t.end_frame(),
            boxes: t.boxes().to_vec(),
            scores: t.frame_scores().to_vec(),
        }
    }
}

impl TryFrom<TubeletRecord> for Tubelet {
    type Error = Error;

    fn try_from(r: TubeletRecord) -> Result<Tubelet> {
        let t = Tubelet::new(r.id, r.start_frame, r.boxes, r.scores)?;
        if t.end_frame() != r.end_frame {
            return Err(Error::InvalidTrack(format!(
                "{}: end_frame {} disagrees with {} boxes",
                t.id,
                r.end_frame,
                t.len()
            )));
        }
        Ok(t)
    }
}

pub fn write_jsonl<T: Serialize>(items: impl IntoIterator<Item = T>, writer: impl Write) -> Result<()> {
    let mut w = BufWriter::new(writer);
    for item in items {
        serde_json::to_writer(&mut w, &item)?;
        w.write_all(b"\n").map_err(|e| Error::io("<jsonl>", e))?;
    }
    w.flush().map_err(|e| Error::io("<jsonl>", e))
}

/// Blank lines are skipped; errors carry the 1-based line number.
pub fn read_jsonl<T: DeserializeOwned>(reader: impl Read) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (n, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| Error::io("<jsonl>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| Error::Parse(format!("line {}: {e}", n + 1)))?;
        out.push(item);
    }
    Ok(out)
}

pub fn read_jsonl_path<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    read_jsonl(File::open(path).map_err(|e| Error::io(path, e))?)
}

pub fn write_jsonl_path<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    write_jsonl(items, File::create(path).map_err(|e| Error::io(path, e))?)
}

pub fn read_tubelets(path: &Path) -> Result<Vec<Tubelet>> {
    read_jsonl_path::<TubeletRecord>(path)?
        .into_iter()
        .map(Tubelet::try_from)
        .collect()
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_reader(BufReader::new(f))?)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_ground_truth(path: &Path) -> Result<Vec<GroundTruthInstance>> {
    read_json(path)
}

/// `videos.json`: video id to length in frames.
pub fn read_video_lengths(path: &Path) -> Result<BTreeMap<String, u32>> {
    read_json(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask() -> ClipMask {
        ClipMask::from_fn(Dims::new(2, 3, 4), |t, y, x| (t * 12 + y * 4 + x) as f32 / 23.0)
    }

    #[test]
    fn gbm_layout() {
        let bytes = encode_gbm(&mask());
        assert_eq!(&bytes[..4], b"GBM1");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &2u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &3u32.to_le_bytes());
        assert_eq!(&bytes[16..20], &4u32.to_le_bytes());
        assert_eq!(bytes.len(), 20 + 24);
        assert_eq!(bytes[20], 0);
        assert_eq!(bytes[43], 255);
        // row-major (t, y, x)
        assert_eq!(bytes[20 + 5], quantize(5.0 / 23.0));
    }

    #[test]
    fn gbm_round_trip_is_quantized() {
        let m = mask();
        let back = decode_gbm(&encode_gbm(&m)).unwrap();
        assert_eq!(back.dims(), m.dims());
        for (a, b) in m.as_slice().iter().zip(back.as_slice()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
        assert_eq!(encode_gbm(&back), encode_gbm(&m));
    }

    #[test]
    fn gbm_header_errors_name_offsets() {
        let good = encode_gbm(&mask());
        let offset = |bytes: &[u8]| match decode_gbm(bytes) {
            Err(Error::MaskHeader { offset, .. }) => offset,
            other => panic!("expected header error, got {other:?}"),
        };
        let mut bad = good.clone();
        bad[0] = b'X';
        assert_eq!(offset(&bad), 0);
        let mut bad = good.clone();
        bad[4] = 2;
        assert_eq!(offset(&bad), 4);
        let mut bad = good.clone();
        bad[12..16].copy_from_slice(&0u32.to_le_bytes());
        assert_eq!(offset(&bad), 12);
        assert_eq!(offset(&good[..10]), 10);
        assert_eq!(offset(&good[..30]), 30);
    }

    #[test]
    fn tubelet_jsonl_round_trip() {
        let boxes = vec![
            FrameBox::new(32, 1, 2, 5, 6).unwrap(),
            FrameBox::new(33, 2, 2, 6, 6).unwrap(),
        ];
        let t = Tubelet::with_constant_scores(
            TubeletId::new("cam/1", 2, 0),
            boxes,
            ScoreVector::new(vec![0.2, 0.8]).unwrap(),
        )
        .unwrap();
        let mut buf = Vec::new();
        write_jsonl([TubeletRecord::from(&t)], &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains("\"id\":\"cam/1/2/0\""));
        let back: Vec<TubeletRecord> = read_jsonl(&buf[..]).unwrap();
        assert_eq!(Tubelet::try_from(back[0].clone()).unwrap(), t);
        let err = read_jsonl::<TubeletRecord>("\n{}\n".as_bytes()).unwrap_err();
        assert!(err.to_string().starts_with("line 2"));
    }
}
