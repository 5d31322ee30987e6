//! Backbone feature sequences: the binary on-disk format, dataset
//! manifests, and pooling into fixed-length sub-action rows.
//!
//! Feature files are little-endian: magic `TAEN`, `u32` version (1),
//! `u32` T, `u32` d_feat, then T·d_feat `f32` values in row-major order.
//! Values are promoted to `f64` on load.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TaenError};
use crate::linalg::Matrix;

pub const FEATURE_MAGIC: &[u8; 4] = b"TAEN";
pub const FEATURE_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

/// Raw backbone features of one video, shape T×d_feat.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoFeatures {
    pub video_id: String,
    pub frames: Matrix,
}

impl VideoFeatures {
    pub fn new(video_id: impl Into<String>, frames: Matrix) -> Result<Self> {
        if frames.rows() == 0 || frames.cols() == 0 {
            return Err(TaenError::Shape(format!(
                "feature matrix must be non-empty, got {}x{}",
                frames.rows(),
                frames.cols()
            )));
        }
        check_finite(&frames)?;
        Ok(VideoFeatures {
            video_id: video_id.into(),
            frames,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.frames.cols()
    }

    /// Smallest and largest entry.
    pub fn value_range(&self) -> (f64, f64) {
        self.frames
            .as_slice()
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}

fn check_finite(m: &Matrix) -> Result<()> {
    for (r, row) in m.iter_rows().enumerate() {
        if let Some((c, v)) = row.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(TaenError::NonFinite {
                row: r,
                col: c,
                value: *v,
            });
        }
    }
    Ok(())
}

/// Serialize features into the binary format. Values are narrowed to `f32`.
pub fn encode_features(frames: &Matrix) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER_LEN + 4 * frames.as_slice().len());
    buf.extend_from_slice(FEATURE_MAGIC);
    buf.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(frames.rows() as u32).to_le_bytes());
    buf.extend_from_slice(&(frames.cols() as u32).to_le_bytes());
    for v in frames.as_slice() {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    buf
}

pub fn decode_features(video_id: &str, bytes: &[u8]) -> Result<VideoFeatures> {
    if bytes.len() < 4 || &bytes[..4] != FEATURE_MAGIC {
        return Err(TaenError::BadMagic { expected: "TAEN" });
    }
    if bytes.len() < HEADER_LEN {
        return Err(TaenError::MalformedHeader {
            offset: bytes.len(),
            reason: format!("header needs {HEADER_LEN} bytes, file has {}", bytes.len()),
        });
    }
    let read_u32 = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
    let version = read_u32(4);
    if version != FEATURE_VERSION {
        return Err(TaenError::UnsupportedVersion {
            found: version,
            expected: FEATURE_VERSION,
        });
    }
    let t = read_u32(8) as usize;
    let d = read_u32(12) as usize;
    if t == 0 {
        return Err(TaenError::MalformedHeader {
            offset: 8,
            reason: "T must be at least 1".into(),
        });
    }
    if d == 0 {
        return Err(TaenError::MalformedHeader {
            offset: 12,
            reason: "d_feat must be at least 1".into(),
        });
    }
    let expected = t
        .checked_mul(d)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| TaenError::MalformedHeader {
            offset: 8,
            reason: format!("T={t} x d_feat={d} overflows"),
        })?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() < expected {
        return Err(TaenError::Truncated {
            expected,
            found: payload.len(),
            row: payload.len() / 4 / d,
        });
    }
    if payload.len() > expected {
        return Err(TaenError::TrailingBytes {
            offset: HEADER_LEN + expected,
            trailing: payload.len() - expected,
        });
    }
    let data: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    VideoFeatures::new(video_id, Matrix::from_vec(t, d, data)?)
}

pub fn write_features(path: impl AsRef<Path>, frames: &Matrix) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_features(frames)).map_err(|e| TaenError::io(path, e))
}

/// Load a feature file; the video id is taken from the file stem.
pub fn load_features(path: impl AsRef<Path>) -> Result<VideoFeatures> {
    let path = path.as_ref();
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    load_features_as(path, &id)
}

pub fn load_features_as(path: &Path, video_id: &str) -> Result<VideoFeatures> {
    let bytes = fs::read(path).map_err(|e| TaenError::io(path, e))?;
    decode_features(video_id, &bytes)
}

/// A video reduced to `a` sub-action rows.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledVideo {
    pub video_id: String,
    pub segments: Matrix,
    pub label: Option<usize>,
}

impl PooledVideo {
    pub fn subactions(&self) -> usize {
        self.segments.rows()
    }
}

/// Sizes of the `a` contiguous blocks that partition `t` frames. Earlier
/// blocks take the remainder; when `t < a` the trailing blocks are empty.
pub fn block_sizes(t: usize, a: usize) -> Vec<usize> {
    let base = t / a;
    let extra = t % a;
    (0..a).map(|i| base + usize::from(i < extra)).collect()
}

/// Average-pool frames into `a` sub-action rows. Empty blocks (only when
/// T < a) repeat the last non-empty row.
pub fn segment_pool(vf: &VideoFeatures, a: usize) -> Result<PooledVideo> {
    if a < 2 {
        return Err(TaenError::InvalidArgument(format!(
            "segment_pool needs a >= 2 sub-actions, got {a}"
        )));
    }
    Ok(pool_blocks(vf, a))
}

/// Pooling without the `a >= 2` precondition; `a == 1` yields the
/// temporal mean, used by single-vector ablations.
pub(crate) fn pool_blocks(vf: &VideoFeatures, a: usize) -> PooledVideo {
    let d = vf.dim();
    let mut out = Matrix::zeros(a, d);
    let mut start = 0;
    for (i, size) in block_sizes(vf.len(), a).into_iter().enumerate() {
        if size == 0 {
            let prev = out.row(i - 1).to_vec();
            out.row_mut(i).copy_from_slice(&prev);
            continue;
        }
        let row = out.row_mut(i);
        for t in start..start + size {
            for (o, v) in row.iter_mut().zip(vf.frames.row(t)) {
                *o += v;
            }
        }
        let inv = size as f64;
        row.iter_mut().for_each(|o| *o /= inv);
        start += size;
    }
    PooledVideo {
        video_id: vf.video_id.clone(),
        segments: out,
        label: None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GtSegment {
    pub start: f64,
    pub end: f64,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub video_id: String,
    pub feature_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_segments: Option<Vec<GtSegment>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub class_names: Vec<String>,
}

impl DatasetManifest {
    pub fn from_json(text: &str) -> Result<Self> {
        let m: DatasetManifest = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| TaenError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| TaenError::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for e in &self.entries {
            if !ids.insert(e.video_id.as_str()) {
                return Err(TaenError::Manifest(format!(
                    "duplicate video_id {:?}",
                    e.video_id
                )));
            }
            for s in e.gt_segments.iter().flatten() {
                if !(0.0 <= s.start && s.start < s.end && s.end <= 1.0) {
                    return Err(TaenError::Manifest(format!(
                        "video {:?}: gt segment [{}, {}] outside 0 <= start < end <= 1",
                        e.video_id, s.start, s.end
                    )));
                }
            }
        }
        let mut names = HashSet::new();
        for n in &self.class_names {
            if !names.insert(n.as_str()) {
                return Err(TaenError::Manifest(format!("duplicate class name {n:?}")));
            }
        }
        Ok(())
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|n| n == name)
    }
}

/// Ground-truth segment with its label resolved to a class index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledSegment {
    pub start: f64,
    pub end: f64,
    pub class: usize,
}

/// A manifest with all of its feature files loaded.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub videos: Vec<VideoFeatures>,
    pub labels: Vec<Option<usize>>,
    pub segments: Vec<Vec<LabeledSegment>>,
    pub d_feat: usize,
}

impl Dataset {
    /// Resolve labels and check dimensions for already-loaded videos
    /// (same order as `manifest.entries`).
    pub fn from_parts(manifest: DatasetManifest, videos: Vec<VideoFeatures>) -> Result<Self> {
        manifest.validate()?;
        if videos.len() != manifest.entries.len() {
            return Err(TaenError::Manifest(format!(
                "{} entries but {} feature sequences",
                manifest.entries.len(),
                videos.len()
            )));
        }
        let lookup: HashMap<&str, usize> = manifest
            .class_names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.as_str(), i))
            .collect();
        let resolve = |video_id: &str, label: &str| {
            lookup
                .get(label)
                .copied()
                .ok_or_else(|| TaenError::UnknownLabel {
                    video_id: video_id.to_string(),
                    label: label.to_string(),
                })
        };
        let mut labels = Vec::with_capacity(videos.len());
        let mut segments = Vec::with_capacity(videos.len());
        for e in &manifest.entries {
            labels.push(e.label.as_deref().map(|l| resolve(&e.video_id, l)).transpose()?);
            let segs = e
                .gt_segments
                .iter()
                .flatten()
                .map(|s| {
                    Ok(LabeledSegment {
                        start: s.start,
                        end: s.end,
                        class: resolve(&e.video_id, &s.label)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            segments.push(segs);
        }
        let d_feat = match videos.first() {
            Some(v) => v.dim(),
            None => 0,
        };
        if let Some(other) = videos.iter().find(|v| v.dim() != d_feat) {
            return Err(TaenError::InconsistentDim {
                first_id: videos[0].video_id.clone(),
                first_dim: d_feat,
                other_id: other.video_id.clone(),
                other_dim: other.dim(),
            });
        }
        Ok(Dataset {
            manifest,
            videos,
            labels,
            segments,
            d_feat,
        })
    }

    pub fn len(&self) -> usize {
        self.videos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.manifest.class_names.len()
    }

    /// Indices of labeled videos per class, in manifest order.
    pub fn videos_by_class(&self) -> BTreeMap<usize, Vec<usize>> {
        let mut map: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, l) in self.labels.iter().enumerate() {
            if let Some(c) = l {
                map.entry(*c).or_default().push(i);
            }
        }
        map
    }
}

/// Load a manifest and every feature file it references. Relative feature
/// paths resolve against the manifest's directory. Files are read in
/// parallel; the result is identical to sequential loading.
pub fn load_dataset(manifest_path: impl AsRef<Path>) -> Result<Dataset> {
    let manifest_path = manifest_path.as_ref();
    let manifest = DatasetManifest::read(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let videos = manifest
        .entries
        .par_iter()
        .map(|e| {
            let path = base.join(&e.feature_path);
            if !path.is_file() {
                return Err(TaenError::MissingFeatures {
                    video_id: e.video_id.clone(),
                    path,
                });
            }
            load_features_as(&path, &e.video_id)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::from_parts(manifest, videos)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vf(rows: &[Vec<f64>]) -> VideoFeatures {
        VideoFeatures::new("v", Matrix::from_rows(rows).unwrap()).unwrap()
    }

    #[test]
    fn roundtrip_4x3() {
        let m = Matrix::from_vec(4, 3, (0..12).map(|i| i as f64 * 0.5 - 1.0).collect()).unwrap();
        let back = decode_features("x", &encode_features(&m)).unwrap();
        assert_eq!(back.frames, m);
        assert_eq!((back.len(), back.dim()), (4, 3));
    }

    #[test]
    fn truncated_payload_names_row() {
        let m = Matrix::from_vec(4, 3, vec![1.0; 12]).unwrap();
        let bytes = encode_features(&m);
        let cut = &bytes[..HEADER_LEN + 10 * 4];
        match decode_features("x", cut) {
            Err(TaenError::Truncated { row, .. }) => assert_eq!(row, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn nan_names_row() {
        let mut m = Matrix::from_vec(4, 3, vec![1.0; 12]).unwrap();
        m.set(2, 1, f64::NAN);
        match decode_features("x", &encode_features(&m)) {
            Err(TaenError::NonFinite { row, col, .. }) => assert_eq!((row, col), (2, 1)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn header_errors_are_distinct() {
        assert!(matches!(
            decode_features("x", b"NOPE0000"),
            Err(TaenError::BadMagic { .. })
        ));
        assert!(matches!(
            decode_features("x", b"TAEN\x01\x00"),
            Err(TaenError::MalformedHeader { .. })
        ));
        let mut bytes = encode_features(&Matrix::zeros(1, 1));
        bytes[4] = 2;
        assert!(matches!(
            decode_features("x", &bytes),
            Err(TaenError::UnsupportedVersion { found: 2, .. })
        ));
        let mut bytes = encode_features(&Matrix::zeros(1, 1));
        bytes.push(0);
        assert!(matches!(
            decode_features("x", &bytes),
            Err(TaenError::TrailingBytes { .. })
        ));
    }

    #[test]
    fn pool_even_split() {
        let v = vf(&[vec![0.0, 1.0], vec![2.0, 3.0], vec![4.0, 5.0], vec![6.0, 7.0]]);
        let p = segment_pool(&v, 2).unwrap();
        assert_eq!(p.segments.row(0), &[1.0, 2.0]);
        assert_eq!(p.segments.row(1), &[5.0, 6.0]);
    }

    #[test]
    fn pool_uneven_split_front_loads() {
        let v = vf(&[vec![1.0], vec![2.0], vec![6.0], vec![10.0], vec![20.0]]);
        assert_eq!(block_sizes(5, 2), vec![3, 2]);
        let p = segment_pool(&v, 2).unwrap();
        assert_eq!(p.segments.row(0), &[3.0]);
        assert_eq!(p.segments.row(1), &[15.0]);
    }

    #[test]
    fn pool_replicates_short_videos() {
        let p = segment_pool(&vf(&[vec![1.5, -2.0]]), 3).unwrap();
        for i in 0..3 {
            assert_eq!(p.segments.row(i), &[1.5, -2.0]);
        }
        let p = segment_pool(&vf(&[vec![1.0], vec![2.0]]), 3).unwrap();
        assert_eq!(p.segments.as_slice(), &[1.0, 2.0, 2.0]);
    }

    #[test]
    fn pool_rejects_single_subaction() {
        assert!(segment_pool(&vf(&[vec![1.0]]), 1).is_err());
    }

    #[test]
    fn manifest_rejects_bad_segments_and_duplicates() {
        let dup = r#"{"entries":[{"video_id":"a","feature_path":"a.taen"},
                     {"video_id":"a","feature_path":"b.taen"}],"class_names":[]}"#;
        assert!(DatasetManifest::from_json(dup).is_err());
        let seg = r#"{"entries":[{"video_id":"a","feature_path":"a.taen",
                     "gt_segments":[{"start":0.5,"end":0.5,"label":"x"}]}],"class_names":["x"]}"#;
        assert!(DatasetManifest::from_json(seg).is_err());
        let unknown = r#"{"entries":[],"class_names":[],"extra":1}"#;
        assert!(DatasetManifest::from_json(unknown).is_err());
    }
}
