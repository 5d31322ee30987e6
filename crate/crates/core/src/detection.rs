//! Few-shot temporal detection over externally supplied proposals:
//! crop, embed, score against the support trajectories, reject
//! background, suppress duplicates, and evaluate with average precision.
//!
//! Temporal coordinates are fractions of video duration in [0, 1].

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Model;
use crate::episodic::{episode_rng, mean_trajectory};
use crate::error::{Result, TaenError};
use crate::features::{Dataset, VideoFeatures};
use crate::linalg::Matrix;
use crate::loss::trajectory_distance;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Proposal {
    pub video_id: String,
    pub start: f64,
    pub end: f64,
    pub score: f64,
}

pub fn read_proposals(path: impl AsRef<Path>) -> Result<Vec<Proposal>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| TaenError::io(path, e))?;
    let props: Vec<Proposal> = serde_json::from_str(&text)?;
    for p in &props {
        if p.start.partial_cmp(&p.end) != Some(std::cmp::Ordering::Less) || !(0.0..=1.0).contains(&p.score) {
            return Err(TaenError::Manifest(format!(
                "invalid proposal for {}: [{}, {}] score {}",
                p.video_id, p.start, p.end, p.score
            )));
        }
    }
    Ok(props)
}

pub fn write_proposals(path: impl AsRef<Path>, props: &[Proposal]) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(props)?;
    fs::write(path, text).map_err(|e| TaenError::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub video_id: String,
    pub start: f64,
    pub end: f64,
    pub slot: usize,
    pub score: f64,
}

/// Keep proposals whose proposer score is at least `threshold`.
pub fn filter_proposals(proposals: &[Proposal], threshold: f64) -> Vec<Proposal> {
    proposals
        .iter()
        .filter(|p| p.score >= threshold)
        .cloned()
        .collect()
}

// Absorbs representation error in products like 0.3 * 10.
const INDEX_SLACK: f64 = 1e-9;

/// Frame rows `⌊start·T⌋ ..= ⌈end·T⌉ - 1`, clamped to the video; falls
/// back to the single row at `⌊start·T⌋` when that range is empty.
pub fn crop_range(t: usize, start: f64, end: f64) -> (usize, usize) {
    let tf = t as f64;
    let lo = ((start * tf + INDEX_SLACK).floor().max(0.0) as usize).min(t - 1);
    let hi = ((end * tf - INDEX_SLACK).ceil().max(0.0) as usize).min(t);
    if hi <= lo {
        (lo, lo + 1)
    } else {
        (lo, hi)
    }
}

pub fn crop_segment(vf: &VideoFeatures, start: f64, end: f64) -> VideoFeatures {
    let (lo, hi) = crop_range(vf.len(), start, end);
    VideoFeatures {
        video_id: vf.video_id.clone(),
        frames: vf.frames.slice_rows(lo, hi),
    }
}

pub fn crop_features(vf: &VideoFeatures, p: &Proposal) -> VideoFeatures {
    crop_segment(vf, p.start, p.end)
}

/// Gaussian kernel on a trajectory distance.
pub fn probability_from_distance(d: f64, sigma: f64) -> f64 {
    (-(d * d) / (2.0 * sigma * sigma)).exp()
}

pub fn proposal_probability(e: &Matrix, r: &Matrix, sigma: f64) -> Result<f64> {
    Ok(probability_from_distance(trajectory_distance(e, r)?, sigma))
}

/// Most probable support slot and its probability; ties go to the lowest slot.
pub fn assign_and_score(e: &Matrix, supports: &[Matrix], sigma: f64) -> Result<(usize, f64)> {
    if supports.is_empty() {
        return Err(TaenError::InvalidArgument("no support trajectories".into()));
    }
    let mut best = (0, f64::NEG_INFINITY);
    for (slot, s) in supports.iter().enumerate() {
        let p = proposal_probability(e, s, sigma)?;
        if p > best.1 {
            best = (slot, p);
        }
    }
    Ok(best)
}

pub fn temporal_iou(a: (f64, f64), b: (f64, f64)) -> f64 {
    let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
    let union = (a.1 - a.0) + (b.1 - b.0) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

fn by_rank(a: &Detection, b: &Detection) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then(a.start.partial_cmp(&b.start).unwrap_or(Ordering::Equal))
}

/// Greedy suppression within each (video, slot) group. A detection
/// survives iff its tIoU with every kept detection of its group is below
/// `threshold`. Output is grouped by video then slot, each group by rank.
pub fn nms(detections: &[Detection], threshold: f64) -> Vec<Detection> {
    let mut groups: BTreeMap<(&str, usize), Vec<&Detection>> = BTreeMap::new();
    for d in detections {
        groups.entry((d.video_id.as_str(), d.slot)).or_default().push(d);
    }
    let mut out = Vec::new();
    for (_, mut group) in groups {
        group.sort_by(|a, b| by_rank(a, b));
        let mut kept: Vec<&Detection> = Vec::new();
        for d in group {
            if kept
                .iter()
                .all(|k| temporal_iou((k.start, k.end), (d.start, d.end)) < threshold)
            {
                kept.push(d);
            }
        }
        out.extend(kept.into_iter().cloned());
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub video_id: String,
    pub start: f64,
    pub end: f64,
    pub slot: usize,
}

/// Average precision of the detections for `slot`, or `None` if that slot
/// has no ground truth. Each detection, in rank order, claims the
/// highest-tIoU unmatched ground truth of the same video and slot with
/// tIoU ≥ `threshold`; AP sums precision at each hit times 1/#gt.
pub fn average_precision(
    detections: &[Detection],
    ground_truth: &[GroundTruth],
    slot: usize,
    threshold: f64,
) -> Option<f64> {
    let gts: Vec<&GroundTruth> = ground_truth.iter().filter(|g| g.slot == slot).collect();
    if gts.is_empty() {
        return None;
    }
    let mut dets: Vec<&Detection> = detections.iter().filter(|d| d.slot == slot).collect();
    dets.sort_by(|a, b| by_rank(a, b));
    let mut matched = vec![false; gts.len()];
    let mut hits = 0usize;
    let mut ap = 0.0;
    let recall_step = 1.0 / gts.len() as f64;
    for (rank, d) in dets.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (gi, g) in gts.iter().enumerate() {
            if matched[gi] || g.video_id != d.video_id {
                continue;
            }
            let iou = temporal_iou((g.start, g.end), (d.start, d.end));
            if iou >= threshold && best.is_none_or(|(_, b)| iou > b) {
                best = Some((gi, iou));
            }
        }
        if let Some((gi, _)) = best {
            matched[gi] = true;
            hits += 1;
            ap += hits as f64 / (rank + 1) as f64 * recall_step;
        }
    }
    Some(ap)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapResult {
    pub map: f64,
    pub per_slot: Vec<f64>,
    /// Slots without ground truth; they contribute AP 0.
    pub missing_gt: Vec<usize>,
}

pub fn mean_average_precision(
    detections: &[Detection],
    ground_truth: &[GroundTruth],
    slots: usize,
    threshold: f64,
) -> MapResult {
    let mut per_slot = Vec::with_capacity(slots);
    let mut missing_gt = Vec::new();
    for s in 0..slots {
        match average_precision(detections, ground_truth, s, threshold) {
            Some(ap) => per_slot.push(ap),
            None => {
                missing_gt.push(s);
                per_slot.push(0.0);
            }
        }
    }
    let map = if slots == 0 {
        0.0
    } else {
        per_slot.iter().sum::<f64>() / slots as f64
    };
    MapResult {
        map,
        per_slot,
        missing_gt,
    }
}

/// tIoU thresholds 0.50, 0.55, ..., 0.95.
pub fn tiou_grid() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectionOptions {
    pub way: usize,
    pub shot: usize,
    pub episodes: usize,
    pub seed: u64,
    pub proposal_thresh: f64,
    pub conf_thresh: f64,
    pub nms_thresh: f64,
    /// Overrides the checkpoint's kernel width when set.
    pub sigma: Option<f64>,
}

impl Default for DetectionOptions {
    fn default() -> Self {
        DetectionOptions {
            way: 5,
            shot: 1,
            episodes: 100,
            seed: 0,
            proposal_thresh: 0.2,
            conf_thresh: 0.3,
            nms_thresh: 0.5,
            sigma: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionReport {
    pub thresholds: Vec<f64>,
    /// Episode-averaged mAP per threshold.
    pub map: Vec<f64>,
    pub map_at_50: f64,
    pub avg_map: f64,
    pub episodes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionEpisode {
    pub slot_classes: Vec<usize>,
    /// Support video indices per slot.
    pub support: Vec<Vec<usize>>,
    /// Remaining videos of the episode classes.
    pub queries: Vec<usize>,
}

/// Videos containing at least one ground-truth segment of each class.
pub fn segment_pool(split: &Dataset) -> BTreeMap<usize, Vec<usize>> {
    let mut pool: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (v, segs) in split.segments.iter().enumerate() {
        let mut classes: Vec<usize> = segs.iter().map(|s| s.class).collect();
        classes.sort_unstable();
        classes.dedup();
        for c in classes {
            pool.entry(c).or_default().push(v);
        }
    }
    pool
}

pub fn sample_detection_episode(
    pool: &BTreeMap<usize, Vec<usize>>,
    way: usize,
    shot: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<DetectionEpisode> {
    let eligible: Vec<usize> = pool
        .iter()
        .filter(|(_, v)| v.len() > shot)
        .map(|(c, _)| *c)
        .collect();
    if way == 0 || shot == 0 || eligible.len() < way {
        return Err(TaenError::InsufficientData(format!(
            "{way}-way {shot}-shot detection needs {way} classes with > {shot} videos, found {}",
            eligible.len()
        )));
    }
    let mut classes: Vec<usize> = eligible.choose_multiple(rng, way).copied().collect();
    classes.shuffle(rng);
    let mut support = Vec::with_capacity(way);
    let mut used = std::collections::BTreeSet::new();
    for c in &classes {
        let avail: Vec<usize> = pool[c].iter().copied().filter(|v| !used.contains(v)).collect();
        if avail.len() < shot {
            return Err(TaenError::InsufficientData(format!(
                "class {c} has too few unused videos for {shot} shots"
            )));
        }
        let picked: Vec<usize> = avail.choose_multiple(rng, shot).copied().collect();
        used.extend(picked.iter().copied());
        support.push(picked);
    }
    let mut queries: Vec<usize> = classes
        .iter()
        .flat_map(|c| pool[c].iter().copied())
        .filter(|v| !used.contains(v))
        .collect();
    queries.sort_unstable();
    queries.dedup();
    Ok(DetectionEpisode {
        slot_classes: classes,
        support,
        queries,
    })
}

struct ScoredProposal {
    start: f64,
    end: f64,
    traj: Matrix,
}

/// Episodic few-shot detection. Support trajectories come from the first
/// ground-truth segment of the slot class in each support video; every
/// query video's proposals (after the proposer-score filter) are
/// classified, thresholded on confidence, and suppressed per class.
pub fn evaluate_detection(
    model: &Model,
    split: &Dataset,
    proposals: &[Proposal],
    opts: &DetectionOptions,
) -> Result<DetectionReport> {
    let sigma = opts.sigma.unwrap_or(model.weights.sigma);
    if sigma.is_nan() || sigma <= 0.0 {
        return Err(TaenError::Config("sigma must be positive".into()));
    }
    let index: HashMap<&str, usize> = split
        .manifest
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| (e.video_id.as_str(), i))
        .collect();
    let mut per_video: Vec<Vec<Proposal>> = vec![Vec::new(); split.len()];
    for p in filter_proposals(proposals, opts.proposal_thresh) {
        if let Some(&v) = index.get(p.video_id.as_str()) {
            per_video[v].push(p);
        }
    }
    let scored: Vec<Vec<ScoredProposal>> = per_video
        .par_iter()
        .enumerate()
        .map(|(v, props)| {
            props
                .iter()
                .map(|p| {
                    let crop = crop_features(&split.videos[v], p);
                    Ok(ScoredProposal {
                        start: p.start,
                        end: p.end,
                        traj: model.embed(&crop)?.points,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let pool = segment_pool(split);
    let grid = tiou_grid();
    let per_episode = (0..opts.episodes)
        .into_par_iter()
        .map(|i| {
            let mut rng = episode_rng(opts.seed, i as u64);
            let ep = sample_detection_episode(&pool, opts.way, opts.shot, &mut rng)?;
            let supports = ep
                .support
                .iter()
                .zip(&ep.slot_classes)
                .map(|(vids, &c)| {
                    let trajs = vids
                        .iter()
                        .map(|&v| {
                            let seg = split.segments[v].iter().find(|s| s.class == c).unwrap();
                            let crop = crop_segment(&split.videos[v], seg.start, seg.end);
                            model.embed(&crop).map(|t| t.points)
                        })
                        .collect::<Result<Vec<_>>>()?;
                    mean_trajectory(&trajs.iter().collect::<Vec<_>>())
                })
                .collect::<Result<Vec<_>>>()?;
            let mut dets = Vec::new();
            let mut gts = Vec::new();
            for &q in &ep.queries {
                let vid = &split.manifest.entries[q].video_id;
                for sp in &scored[q] {
                    let (slot, score) = assign_and_score(&sp.traj, &supports, sigma)?;
                    if score >= opts.conf_thresh {
                        dets.push(Detection {
                            video_id: vid.clone(),
                            start: sp.start,
                            end: sp.end,
                            slot,
                            score,
                        });
                    }
                }
                for seg in &split.segments[q] {
                    if let Some(slot) = ep.slot_classes.iter().position(|c| *c == seg.class) {
                        gts.push(GroundTruth {
                            video_id: vid.clone(),
                            start: seg.start,
                            end: seg.end,
                            slot,
                        });
                    }
                }
            }
            let kept = nms(&dets, opts.nms_thresh);
            Ok(grid
                .iter()
                .map(|&t| mean_average_precision(&kept, &gts, opts.way, t).map)
                .collect::<Vec<f64>>())
        })
        .collect::<Result<Vec<_>>>()?;

    let n = per_episode.len().max(1) as f64;
    let map: Vec<f64> = (0..grid.len())
        .map(|j| per_episode.iter().map(|ep| ep[j]).sum::<f64>() / n)
        .collect();
    Ok(DetectionReport {
        map_at_50: map[0],
        avg_map: map.iter().sum::<f64>() / map.len() as f64,
        thresholds: grid,
        map,
        episodes: opts.episodes,
    })
}
