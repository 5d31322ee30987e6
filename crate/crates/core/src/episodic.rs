//! n-way k-shot classification episodes over a split of novel classes.
//!
//! Every episode draws its randomness from a generator keyed by
//! (seed, episode index), so results do not depend on how episodes are
//! scheduled across threads.

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::checkpoint::Model;
use crate::error::{Result, TaenError};
use crate::features::Dataset;
use crate::linalg::{self, Matrix};
use crate::loss::{self, LossWeights, MotionSign};

/// Class index → member video indices.
pub type ClassPool = BTreeMap<usize, Vec<usize>>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Episode {
    pub way: usize,
    pub shot: usize,
    /// Class occupying each slot.
    pub slot_classes: Vec<usize>,
    /// `support[slot]` holds `shot` video indices.
    pub support: Vec<Vec<usize>>,
    pub query: usize,
    pub query_slot: usize,
}

pub fn episode_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

pub fn sample_episode(pool: &ClassPool, way: usize, shot: usize, rng: &mut ChaCha8Rng) -> Result<Episode> {
    if way == 0 || shot == 0 {
        return Err(TaenError::InvalidArgument(format!(
            "way and shot must be positive (got {way}-way {shot}-shot)"
        )));
    }
    let supportable: Vec<usize> = pool
        .iter()
        .filter(|(_, v)| v.len() >= shot)
        .map(|(c, _)| *c)
        .collect();
    let queryable: Vec<usize> = pool
        .iter()
        .filter(|(_, v)| v.len() > shot)
        .map(|(c, _)| *c)
        .collect();
    if supportable.len() < way {
        return Err(TaenError::InsufficientData(format!(
            "{way}-way {shot}-shot needs {way} classes with >= {shot} videos, found {}",
            supportable.len()
        )));
    }
    let &query_class = queryable.choose(rng).ok_or_else(|| {
        TaenError::InsufficientData(format!(
            "no class has more than {shot} videos, so none can supply a query"
        ))
    })?;
    let others: Vec<usize> = supportable.into_iter().filter(|c| *c != query_class).collect();
    let mut classes: Vec<usize> = others.choose_multiple(rng, way - 1).copied().collect();
    classes.push(query_class);
    classes.shuffle(rng);
    let query_slot = classes.iter().position(|c| *c == query_class).unwrap();
    let mut support = Vec::with_capacity(way);
    let mut query = 0;
    for (slot, c) in classes.iter().enumerate() {
        let members = &pool[c];
        if slot == query_slot {
            let picked: Vec<usize> = members.choose_multiple(rng, shot + 1).copied().collect();
            query = picked[shot];
            support.push(picked[..shot].to_vec());
        } else {
            support.push(members.choose_multiple(rng, shot).copied().collect());
        }
    }
    Ok(Episode {
        way,
        shot,
        slot_classes: classes,
        support,
        query,
        query_slot,
    })
}

/// Average the points at each sub-action index and project back onto
/// the sphere.
pub fn mean_trajectory(trajs: &[&Matrix]) -> Result<Matrix> {
    let first = trajs
        .first()
        .ok_or_else(|| TaenError::InvalidArgument("no trajectories to average".into()))?;
    let mut sum = Matrix::zeros(first.rows(), first.cols());
    for t in trajs {
        if t.rows() != first.rows() || t.cols() != first.cols() {
            return Err(TaenError::Shape("support trajectories differ in shape".into()));
        }
        linalg::axpy(1.0, t.as_slice(), sum.as_mut_slice());
    }
    let mut out = Matrix::zeros(first.rows(), first.cols());
    for r in 0..sum.rows() {
        linalg::normalize_into(sum.row(r), out.row_mut(r));
    }
    Ok(out)
}

/// One averaged trajectory per episode slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportTrajectories {
    pub slots: Vec<Matrix>,
}

/// Support trajectories from precomputed per-video embeddings.
pub fn supports_from(embedded: &[Matrix], episode: &Episode) -> Result<SupportTrajectories> {
    let slots = episode
        .support
        .iter()
        .map(|vids| {
            let ts: Vec<&Matrix> = vids.iter().map(|&v| &embedded[v]).collect();
            mean_trajectory(&ts)
        })
        .collect::<Result<_>>()?;
    Ok(SupportTrajectories { slots })
}

/// Embed the episode's support videos from `split` and average per slot.
pub fn support_trajectories(model: &Model, split: &Dataset, episode: &Episode) -> Result<SupportTrajectories> {
    let slots = episode
        .support
        .iter()
        .map(|vids| {
            let ts = vids
                .iter()
                .map(|&v| model.embed(&split.videos[v]).map(|t| t.points))
                .collect::<Result<Vec<_>>>()?;
            mean_trajectory(&ts.iter().collect::<Vec<_>>())
        })
        .collect::<Result<_>>()?;
    Ok(SupportTrajectories { slots })
}

/// Nearest support by test distance; ties go to the lowest slot.
pub fn classify_query(
    query: &Matrix,
    supports: &SupportTrajectories,
    weights: &LossWeights,
    sign: MotionSign,
) -> Result<(usize, Vec<f64>)> {
    let dists = supports
        .slots
        .iter()
        .map(|s| loss::test_distance(query, s, weights, sign))
        .collect::<Result<Vec<_>>>()?;
    Ok((argmin(&dists), dists))
}

pub(crate) fn argmin(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate().skip(1) {
        if *x < xs[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AccuracyReport {
    pub way: usize,
    pub shot: usize,
    pub episodes: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl AccuracyReport {
    /// Accuracy with a 95% Wald interval clamped to [0, 1].
    pub fn new(way: usize, shot: usize, correct: usize, episodes: usize) -> Self {
        let p = if episodes == 0 {
            0.0
        } else {
            correct as f64 / episodes as f64
        };
        let half = if episodes == 0 {
            0.0
        } else {
            1.96 * (p * (1.0 - p) / episodes as f64).sqrt()
        };
        AccuracyReport {
            way,
            shot,
            episodes,
            correct,
            accuracy: p,
            ci_low: (p - half).max(0.0),
            ci_high: (p + half).min(1.0),
        }
    }

    pub fn contains(&self, p: f64) -> bool {
        self.ci_low <= p && p <= self.ci_high
    }
}

/// Run `episodes` episodes with an arbitrary classifier returning the
/// predicted slot.
pub fn evaluate_with<F>(
    pool: &ClassPool,
    way: usize,
    shot: usize,
    episodes: usize,
    seed: u64,
    classify: F,
) -> Result<AccuracyReport>
where
    F: Fn(&Episode, &mut ChaCha8Rng) -> Result<usize> + Sync,
{
    let hits = (0..episodes)
        .into_par_iter()
        .map(|i| {
            let mut rng = episode_rng(seed, i as u64);
            let ep = sample_episode(pool, way, shot, &mut rng)?;
            Ok(classify(&ep, &mut rng)? == ep.query_slot)
        })
        .collect::<Result<Vec<bool>>>()?;
    let correct = hits.iter().filter(|h| **h).count();
    Ok(AccuracyReport::new(way, shot, correct, episodes))
}

/// Labeled videos of a split grouped by class.
pub fn class_pool(split: &Dataset) -> ClassPool {
    split.videos_by_class()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub way: usize,
    pub shot: usize,
    pub episodes: usize,
    pub seed: u64,
    pub sign: MotionSign,
}

/// Few-shot accuracy of `model` on `split`. Each video is embedded once;
/// episodes reuse those embeddings.
pub fn evaluate_classification(model: &Model, split: &Dataset, opts: &EvalOptions) -> Result<AccuracyReport> {
    let embedded: Vec<Matrix> = model
        .embed_all(&split.videos)?
        .into_iter()
        .map(|t| t.points)
        .collect();
    evaluate_embedded(&embedded, &class_pool(split), &model.weights, opts)
}

pub fn evaluate_embedded(
    embedded: &[Matrix],
    pool: &ClassPool,
    weights: &LossWeights,
    opts: &EvalOptions,
) -> Result<AccuracyReport> {
    evaluate_with(pool, opts.way, opts.shot, opts.episodes, opts.seed, |ep, _| {
        let supports = supports_from(embedded, ep)?;
        Ok(classify_query(&embedded[ep.query], &supports, weights, opts.sign)?.0)
    })
}

/// Backbone baseline without any learned embedding: each video becomes
/// the temporal max of its raw features, k shots are averaged, and the
/// query goes to the nearest support by cosine distance.
pub fn max_pool_baseline(split: &Dataset, way: usize, shot: usize, episodes: usize, seed: u64) -> Result<AccuracyReport> {
    let pooled: Vec<Matrix> = split
        .videos
        .iter()
        .map(|v| {
            let mut m = vec![f64::NEG_INFINITY; v.dim()];
            for row in v.frames.iter_rows() {
                for (o, x) in m.iter_mut().zip(row) {
                    *o = o.max(*x);
                }
            }
            Matrix::from_vec(1, v.dim(), linalg::normalized(&m))
        })
        .collect::<Result<_>>()?;
    let weights = LossWeights {
        w_aff: 1.0,
        w_mot: 0.0,
        ..Default::default()
    };
    let opts = EvalOptions {
        way,
        shot,
        episodes,
        seed,
        sign: MotionSign::AlignedIsCloser,
    };
    evaluate_embedded(&pooled, &class_pool(split), &weights, &opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn pool(sizes: &[usize]) -> ClassPool {
        let mut next = 0;
        sizes
            .iter()
            .enumerate()
            .map(|(c, &n)| {
                let v: Vec<usize> = (next..next + n).collect();
                next += n;
                (c, v)
            })
            .collect()
    }

    #[test]
    fn episode_counts_and_disjointness() {
        let p = pool(&[3, 3, 3, 3, 3, 3]);
        let ep = sample_episode(&p, 5, 1, &mut episode_rng(1, 0)).unwrap();
        assert_eq!(ep.support.len(), 5);
        assert!(ep.support.iter().all(|s| s.len() == 1));
        let mut all: Vec<usize> = ep.support.concat();
        assert!(!all.contains(&ep.query));
        all.push(ep.query);
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), 6);
        assert!(p[&ep.slot_classes[ep.query_slot]].contains(&ep.query));
    }

    #[test]
    fn episodes_reproducible() {
        let p = pool(&[4, 5, 6, 4, 7]);
        for i in 0..20 {
            let a = sample_episode(&p, 3, 2, &mut episode_rng(9, i)).unwrap();
            let b = sample_episode(&p, 3, 2, &mut episode_rng(9, i)).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn insufficient_data_errors() {
        // Every class has exactly k videos: nobody can supply a query.
        let p = pool(&[2, 2, 2]);
        assert!(matches!(
            sample_episode(&p, 2, 2, &mut episode_rng(0, 0)),
            Err(TaenError::InsufficientData(_))
        ));
        let p = pool(&[3, 3]);
        assert!(sample_episode(&p, 3, 1, &mut episode_rng(0, 0)).is_err());
        // Only class 0 can host the query; the rest still support.
        let p = pool(&[3, 2, 2]);
        let ep = sample_episode(&p, 3, 2, &mut episode_rng(0, 3)).unwrap();
        assert_eq!(ep.slot_classes[ep.query_slot], 0);
    }

    #[test]
    fn mean_trajectory_examples() {
        let a = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![0.0, 1.0]]).unwrap();
        assert_eq!(mean_trajectory(&[&a]).unwrap(), a);
        assert_eq!(mean_trajectory(&[&a, &a]).unwrap(), a);
        let m = mean_trajectory(&[&a, &b]).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((m.get(0, 0) - h).abs() < 1e-15 && (m.get(0, 1) - h).abs() < 1e-15);
    }

    #[test]
    fn classify_ties_and_exact_match() {
        let w = LossWeights {
            w_mot: 0.0,
            ..Default::default()
        };
        let q = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let other = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let s = SupportTrajectories {
            slots: vec![other.clone(), q.clone(), other.clone()],
        };
        let (slot, d) = classify_query(&q, &s, &w, MotionSign::AlignedIsCloser).unwrap();
        assert_eq!(slot, 1);
        assert_eq!(d[1], 0.0);
        let dup = SupportTrajectories {
            slots: vec![other.clone(), other],
        };
        assert_eq!(classify_query(&q, &dup, &w, MotionSign::AlignedIsCloser).unwrap().0, 0);
    }

    /// Two slots in the plane, distances worked by hand.
    #[test]
    fn two_way_hand_instance() {
        let w = LossWeights {
            w_aff: 1.0,
            w_mot: 0.5,
            ..Default::default()
        };
        let q = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        // Slot 0: same points, reversed order. aff = 1 + 1 = 2, Δ_q = (-1, 1),
        // Δ_s = (1, -1), ⟨Δ_q, Δ_s⟩ = -2 -> 2 - 0.5*(-2) = 3.
        let s0 = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        // Slot 1: (1,0) then (-1,0). aff = 0 + 1 = 1, Δ_s = (-2, 0),
        // ⟨Δ_q, Δ_s⟩ = 2 -> 1 - 0.5*2 = 0.
        let s1 = Matrix::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap();
        let s = SupportTrajectories { slots: vec![s0, s1] };
        let (slot, d) = classify_query(&q, &s, &w, MotionSign::AlignedIsCloser).unwrap();
        assert_eq!(d, vec![3.0, 0.0]);
        assert_eq!(slot, 1);
        let (slot, d) = classify_query(&q, &s, &w, MotionSign::Literal).unwrap();
        assert_eq!(d, vec![1.0, 2.0]);
        assert_eq!(slot, 0);
    }

    #[test]
    fn wald_interval() {
        let r = AccuracyReport::new(5, 1, 50, 100);
        assert!((r.ci_high - r.ci_low - 2.0 * 1.96 * 0.05).abs() < 1e-12);
        let perfect = AccuracyReport::new(5, 1, 10, 10);
        assert_eq!((perfect.ci_low, perfect.ci_high), (1.0, 1.0));
    }

    #[test]
    fn stub_classifiers() {
        let p = pool(&[4; 8]);
        let chance = evaluate_with(&p, 5, 1, 10_000, 3, |ep, rng| Ok(rng.random_range(0..ep.way)))
            .unwrap();
        assert!(chance.contains(0.2), "{chance:?}");
        let oracle = evaluate_with(&p, 5, 1, 500, 3, |ep, _| Ok(ep.query_slot)).unwrap();
        assert_eq!(oracle.accuracy, 1.0);
    }
}
