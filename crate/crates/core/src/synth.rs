//! Synthetic feature datasets whose classes are known trajectories.
//!
//! Every class owns `a_true` anchor vectors. A video of T frames walks
//! through its class anchors in order, interpolating linearly, with i.i.d.
//! Gaussian noise on every coordinate. Anchors are
//! `√ρ·g_shared + √(1-ρ)·g_class` with standard normal `g`, so
//! coordinates have unit variance and anchors of different classes have
//! cosine similarity ≈ ρ (`shared_fraction`).
//!
//! With `reversed_twins`, classes come in pairs whose anchors are the same
//! vectors in opposite order: any order-agnostic summary of a video
//! cannot tell the twins apart.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detection::{write_proposals, Proposal};
use crate::error::{Result, TaenError};
use crate::features::{
    self, Dataset, DatasetManifest, GtSegment, ManifestEntry, VideoFeatures,
};
use crate::linalg::{self, Matrix};

/// Largest per-coordinate noise for which the nearest-anchor baseline is
/// documented to reach ≥ 99% accuracy (d_feat ≥ 64, T ≥ 2·a_true,
/// shared_fraction ≤ 0.5). [`SynthReport::nearest_anchor_accuracy`]
/// measures it on every generated set.
pub const NOISE_CRITICAL: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UntrimmedConfig {
    pub t_min: usize,
    pub t_max: usize,
    pub segments_min: usize,
    pub segments_max: usize,
    /// Segment length as a fraction of video duration.
    pub seg_len_min: f64,
    pub seg_len_max: f64,
    /// Max absolute boundary shift of jittered proposals.
    pub jitter: f64,
    pub jittered_per_gt: usize,
    pub distractors: usize,
}

impl Default for UntrimmedConfig {
    fn default() -> Self {
        UntrimmedConfig {
            t_min: 120,
            t_max: 200,
            segments_min: 1,
            segments_max: 3,
            seg_len_min: 0.12,
            seg_len_max: 0.25,
            jitter: 0.05,
            jittered_per_gt: 2,
            distractors: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub train_classes: usize,
    pub test_classes: usize,
    pub videos_per_class: usize,
    pub d_feat: usize,
    pub t_min: usize,
    pub t_max: usize,
    pub a_true: usize,
    pub noise_std: f64,
    /// Inter-class separation control ρ ∈ [0, 1).
    pub shared_fraction: f64,
    pub reversed_twins: bool,
    pub seed: u64,
    /// When set, the test split is untrimmed and a proposals file is emitted.
    pub untrimmed: Option<UntrimmedConfig>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            train_classes: 20,
            test_classes: 5,
            videos_per_class: 20,
            d_feat: 128,
            t_min: 20,
            t_max: 40,
            a_true: 5,
            noise_std: 0.5,
            shared_fraction: 0.1,
            reversed_twins: false,
            seed: 0,
            untrimmed: None,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TaenError::Config(m.to_string()));
        if self.train_classes == 0 || self.test_classes == 0 {
            return bad("both splits need at least one class");
        }
        if self.videos_per_class == 0 || self.d_feat == 0 || self.a_true < 2 {
            return bad("videos_per_class and d_feat must be positive, a_true >= 2");
        }
        if self.t_min == 0 || self.t_min > self.t_max {
            return bad("need 1 <= t_min <= t_max");
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad("noise_std must be finite and >= 0");
        }
        if !(0.0..1.0).contains(&self.shared_fraction) {
            return bad("shared_fraction must lie in [0, 1)");
        }
        if self.reversed_twins && (!self.train_classes.is_multiple_of(2) || !self.test_classes.is_multiple_of(2)) {
            return bad("reversed_twins needs an even number of classes in each split");
        }
        if let Some(u) = &self.untrimmed {
            if u.t_min == 0 || u.t_min > u.t_max {
                return bad("untrimmed: need 1 <= t_min <= t_max");
            }
            if u.segments_min == 0 || u.segments_min > u.segments_max {
                return bad("untrimmed: need 1 <= segments_min <= segments_max");
            }
            if !(0.0 < u.seg_len_min && u.seg_len_min <= u.seg_len_max) {
                return bad("untrimmed: need 0 < seg_len_min <= seg_len_max");
            }
            if u.seg_len_max * u.segments_max as f64 > 1.0 {
                return bad("untrimmed: segments_max * seg_len_max must not exceed 1");
            }
            if !(0.0..0.5).contains(&u.jitter) {
                return bad("untrimmed: jitter must lie in [0, 0.5)");
            }
        }
        Ok(())
    }

    fn total_classes(&self) -> usize {
        self.train_classes + self.test_classes
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthReport {
    /// Mean cosine similarity between anchors of different classes.
    pub mean_interclass_cosine: f64,
    /// Nearest-anchor accuracy on raw features over all trimmed clips.
    pub nearest_anchor_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub train: Dataset,
    pub test: Dataset,
    pub proposals: Option<Vec<Proposal>>,
    /// Per class (train classes first), a_true anchors.
    pub anchors: Vec<Matrix>,
    pub report: SynthReport,
}

fn gaussian(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

fn make_anchors(cfg: &SynthConfig) -> Vec<Matrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d = cfg.d_feat;
    let shared = gaussian(&mut rng, d);
    let (ws, wu) = (cfg.shared_fraction.sqrt(), (1.0 - cfg.shared_fraction).sqrt());
    let mut anchors = Vec::with_capacity(cfg.total_classes());
    for c in 0..cfg.total_classes() {
        if cfg.reversed_twins && c % 2 == 1 {
            let twin: &Matrix = &anchors[c - 1];
            anchors.push(twin.reversed_rows());
            continue;
        }
        let mut m = Matrix::zeros(cfg.a_true, d);
        for i in 0..cfg.a_true {
            let g = gaussian(&mut rng, d);
            for (k, o) in m.row_mut(i).iter_mut().enumerate() {
                *o = ws * shared[k] + wu * g[k];
            }
        }
        anchors.push(m);
    }
    anchors
}

/// Noise-free frame `t` of `t_len` along an anchor path.
fn path_point(anchors: &Matrix, t: usize, t_len: usize, out: &mut [f64]) {
    let segs = anchors.rows() - 1;
    let u = if t_len <= 1 {
        0.0
    } else {
        t as f64 / (t_len - 1) as f64 * segs as f64
    };
    let i = (u.floor() as usize).min(segs - 1);
    let frac = u - i as f64;
    for ((o, a), b) in out.iter_mut().zip(anchors.row(i)).zip(anchors.row(i + 1)) {
        *o = (1.0 - frac) * a + frac * b;
    }
}

fn round_f32(m: &mut Matrix) {
    m.as_mut_slice().iter_mut().for_each(|v| *v = *v as f32 as f64);
}

/// A trimmed clip of `t_len` frames following `anchors`.
fn clip(anchors: &Matrix, t_len: usize, noise: f64, rng: &mut ChaCha8Rng) -> Matrix {
    let d = anchors.cols();
    let mut m = Matrix::zeros(t_len, d);
    let normal = Normal::new(0.0, noise.max(0.0)).unwrap();
    for t in 0..t_len {
        path_point(anchors, t, t_len, m.row_mut(t));
        if noise > 0.0 {
            m.row_mut(t).iter_mut().for_each(|v| *v += normal.sample(rng));
        }
    }
    m
}

fn video_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

struct Untrimmed {
    frames: Matrix,
    segments: Vec<(f64, f64)>,
    proposals: Vec<(f64, f64, f64)>,
}

fn untrimmed_video(anchors: &Matrix, cfg: &SynthConfig, u: &UntrimmedConfig, rng: &mut ChaCha8Rng) -> Untrimmed {
    let t_len = rng.random_range(u.t_min..=u.t_max);
    let d = anchors.cols();
    let normal = Normal::new(0.0, cfg.noise_std.max(0.0)).unwrap();
    let mut frames = Matrix::zeros(t_len, d);
    if cfg.noise_std > 0.0 {
        frames
            .as_mut_slice()
            .iter_mut()
            .for_each(|v| *v = normal.sample(rng));
    }
    let n_seg = rng.random_range(u.segments_min..=u.segments_max);
    let zone = 1.0 / n_seg as f64;
    let mut segments = Vec::with_capacity(n_seg);
    for z in 0..n_seg {
        let len = rng.random_range(u.seg_len_min..=u.seg_len_max).min(zone);
        let offset = rng.random_range(0.0..=(zone - len));
        let lo = ((z as f64 * zone + offset) * t_len as f64).round() as usize;
        let hi = (((z as f64 * zone + offset + len) * t_len as f64).round() as usize)
            .clamp(lo + 1, t_len);
        let seg_len = hi - lo;
        let c = clip(anchors, seg_len, cfg.noise_std, rng);
        for t in 0..seg_len {
            frames.row_mut(lo + t).copy_from_slice(c.row(t));
        }
        segments.push((lo as f64 / t_len as f64, hi as f64 / t_len as f64));
    }
    let mut proposals: Vec<(f64, f64, f64)> = segments.iter().map(|&(s, e)| (s, e, 1.0)).collect();
    if u.jitter > 0.0 {
        for &(s, e) in &segments {
            for _ in 0..u.jittered_per_gt {
                let js = (s + rng.random_range(-u.jitter..=u.jitter)).clamp(0.0, 1.0);
                let je = (e + rng.random_range(-u.jitter..=u.jitter)).clamp(0.0, 1.0);
                if js < je {
                    proposals.push((js, je, rng.random_range(0.5..0.95)));
                }
            }
        }
    }
    for _ in 0..u.distractors {
        let len = rng.random_range(0.05..0.3);
        let s = rng.random_range(0.0..(1.0 - len));
        proposals.push((s, s + len, rng.random_range(0.0..0.6)));
    }
    Untrimmed {
        frames,
        segments,
        proposals,
    }
}

/// Generate both splits in memory. Features are rounded to `f32` so they
/// equal what [`write_synthetic`] puts on disk.
pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let anchors = make_anchors(cfg);
    let per = cfg.videos_per_class;
    let split_names = |prefix: &str, n: usize| -> Vec<String> {
        (0..n).map(|c| format!("{prefix}_{c:03}")).collect()
    };
    let train_names = split_names("train", cfg.train_classes);
    let test_names = split_names("test", cfg.test_classes);

    let trimmed = |class_offset: usize, names: &[String], prefix: &str| -> Result<Dataset> {
        let jobs: Vec<(usize, usize)> = (0..names.len())
            .flat_map(|c| (0..per).map(move |v| (c, v)))
            .collect();
        let videos = jobs
            .par_iter()
            .map(|&(c, v)| {
                let global = (class_offset + c) * per + v;
                let mut rng = video_rng(cfg.seed, global);
                let t_len = rng.random_range(cfg.t_min..=cfg.t_max);
                let mut m = clip(&anchors[class_offset + c], t_len, cfg.noise_std, &mut rng);
                round_f32(&mut m);
                VideoFeatures::new(format!("{prefix}_c{c:03}_v{v:03}"), m)
            })
            .collect::<Result<Vec<_>>>()?;
        let entries = jobs
            .iter()
            .zip(&videos)
            .map(|(&(c, _), vf)| ManifestEntry {
                video_id: vf.video_id.clone(),
                feature_path: PathBuf::from(format!("features/{}.taen", vf.video_id)),
                label: Some(names[c].clone()),
                gt_segments: None,
            })
            .collect();
        Dataset::from_parts(
            DatasetManifest {
                entries,
                class_names: names.to_vec(),
            },
            videos,
        )
    };

    let train = trimmed(0, &train_names, "train")?;
    let (test, proposals) = match &cfg.untrimmed {
        None => (trimmed(cfg.train_classes, &test_names, "test")?, None),
        Some(u) => {
            let jobs: Vec<(usize, usize)> = (0..cfg.test_classes)
                .flat_map(|c| (0..per).map(move |v| (c, v)))
                .collect();
            let made: Vec<(String, Untrimmed)> = jobs
                .par_iter()
                .map(|&(c, v)| {
                    let global = (cfg.train_classes + c) * per + v;
                    let mut rng = video_rng(cfg.seed, global);
                    let mut un = untrimmed_video(&anchors[cfg.train_classes + c], cfg, u, &mut rng);
                    round_f32(&mut un.frames);
                    (format!("untrimmed_c{c:03}_v{v:03}"), un)
                })
                .collect();
            let mut entries = Vec::new();
            let mut videos = Vec::new();
            let mut props = Vec::new();
            for ((c, _), (id, un)) in jobs.iter().zip(made) {
                entries.push(ManifestEntry {
                    video_id: id.clone(),
                    feature_path: PathBuf::from(format!("features/{id}.taen")),
                    label: None,
                    gt_segments: Some(
                        un.segments
                            .iter()
                            .map(|&(start, end)| GtSegment {
                                start,
                                end,
                                label: test_names[*c].clone(),
                            })
                            .collect(),
                    ),
                });
                props.extend(un.proposals.iter().map(|&(start, end, score)| Proposal {
                    video_id: id.clone(),
                    start,
                    end,
                    score,
                }));
                videos.push(VideoFeatures::new(id, un.frames)?);
            }
            let ds = Dataset::from_parts(
                DatasetManifest {
                    entries,
                    class_names: test_names.clone(),
                },
                videos,
            )?;
            (ds, Some(props))
        }
    };

    let report = SynthReport {
        mean_interclass_cosine: mean_interclass_cosine(&anchors, cfg.reversed_twins),
        nearest_anchor_accuracy: nearest_anchor_accuracy(&train, &anchors[..cfg.train_classes], cfg.a_true),
    };
    Ok(SynthData {
        train,
        test,
        proposals,
        anchors,
        report,
    })
}

/// Mean cosine between anchors of distinct classes (twins excluded).
pub fn mean_interclass_cosine(anchors: &[Matrix], twins: bool) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for c in 0..anchors.len() {
        for c2 in c + 1..anchors.len() {
            if twins && c / 2 == c2 / 2 {
                continue;
            }
            for a in anchors[c].iter_rows() {
                for b in anchors[c2].iter_rows() {
                    sum += linalg::dot(a, b) / (linalg::norm(a) * linalg::norm(b));
                    n += 1;
                }
            }
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Classify every labeled video by the class whose noise-free path, sampled
/// at the same T and pooled the same way, is nearest in squared distance.
pub fn nearest_anchor_accuracy(split: &Dataset, anchors: &[Matrix], a: usize) -> f64 {
    let labeled: Vec<(usize, usize)> = split
        .labels
        .iter()
        .enumerate()
        .filter_map(|(i, l)| l.map(|c| (i, c)))
        .collect();
    if labeled.is_empty() {
        return 0.0;
    }
    let hits: usize = labeled
        .par_iter()
        .map(|&(i, label)| {
            let vf = &split.videos[i];
            let pooled = features::pool_blocks(vf, a).segments;
            let mut best = (usize::MAX, f64::INFINITY);
            for (c, anc) in anchors.iter().enumerate() {
                let mut tmpl = Matrix::zeros(vf.len(), vf.dim());
                for t in 0..vf.len() {
                    path_point(anc, t, vf.len(), tmpl.row_mut(t));
                }
                let tv = VideoFeatures {
                    video_id: String::new(),
                    frames: tmpl,
                };
                let tp = features::pool_blocks(&tv, a).segments;
                let d: f64 = pooled
                    .as_slice()
                    .iter()
                    .zip(tp.as_slice())
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum();
                if d < best.1 {
                    best = (c, d);
                }
            }
            usize::from(best.0 == label)
        })
        .sum();
    hits as f64 / labeled.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthPaths {
    pub train_manifest: PathBuf,
    pub test_manifest: PathBuf,
    pub proposals: Option<PathBuf>,
}

/// Write features, `train.json`, `test.json` and (untrimmed) `proposals.json`.
pub fn write_synthetic(data: &SynthData, out: &Path) -> Result<SynthPaths> {
    let feat_dir = out.join("features");
    fs::create_dir_all(&feat_dir).map_err(|e| TaenError::io(&feat_dir, e))?;
    for ds in [&data.train, &data.test] {
        ds.videos
            .par_iter()
            .zip(&ds.manifest.entries)
            .map(|(vf, e)| features::write_features(out.join(&e.feature_path), &vf.frames))
            .collect::<Result<Vec<_>>>()?;
    }
    let train_manifest = out.join("train.json");
    let test_manifest = out.join("test.json");
    data.train.manifest.write(&train_manifest)?;
    data.test.manifest.write(&test_manifest)?;
    let proposals = match &data.proposals {
        Some(p) => {
            let path = out.join("proposals.json");
            write_proposals(&path, p)?;
            Some(path)
        }
        None => None,
    };
    Ok(SynthPaths {
        train_manifest,
        test_manifest,
        proposals,
    })
}

/// Generate and write in one go.
pub fn gen_synthetic_dataset(cfg: &SynthConfig, out: &Path) -> Result<(SynthPaths, SynthReport)> {
    let data = generate(cfg)?;
    let paths = write_synthetic(&data, out)?;
    Ok((paths, data.report))
}

/// Untrimmed variant: the test split holds untrimmed videos with ground
/// truth segments and a proposals file is written alongside.
pub fn gen_synthetic_untrimmed(cfg: &SynthConfig, out: &Path) -> Result<(SynthPaths, SynthReport)> {
    let mut cfg = cfg.clone();
    cfg.untrimmed.get_or_insert_with(UntrimmedConfig::default);
    gen_synthetic_dataset(&cfg, out)
}
