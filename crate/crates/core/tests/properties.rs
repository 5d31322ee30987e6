use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use taen_core::detection::{average_precision, nms, temporal_iou, Detection, GroundTruth};
use taen_core::embednet::{self, init_params, MlpParams};
use taen_core::episodic::{classify_query, SupportTrajectories};
use taen_core::features::{block_sizes, decode_features, encode_features, segment_pool, PooledVideo};
use taen_core::linalg::{self, Matrix};
use taen_core::loss::{self, LossWeights, MotionSign};
use taen_core::prototypes::{init_prototypes, PrototypeBank};
use taen_core::VideoFeatures;

fn gaussian_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

fn unit_rows(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let mut m = gaussian_matrix(rows, cols, rng);
    for i in 0..rows {
        let r = linalg::normalized(m.row(i));
        m.row_mut(i).copy_from_slice(&r);
    }
    m
}

fn video(frames: Matrix) -> VideoFeatures {
    VideoFeatures::new("v", frames).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn pooling_preserves_global_mean(t in 1usize..60, a in 2usize..9, d in 1usize..5, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frames = gaussian_matrix(t, d, &mut rng);
        let pooled = segment_pool(&video(frames.clone()), a).unwrap();
        let sizes = block_sizes(t, a);
        prop_assert_eq!(pooled.segments.rows(), a);
        prop_assert_eq!(sizes.iter().sum::<usize>(), t);
        for j in 0..d {
            let global: f64 = frames.iter_rows().map(|r| r[j]).sum::<f64>() / t as f64;
            let weighted: f64 = (0..a).map(|i| sizes[i] as f64 * pooled.segments.get(i, j)).sum::<f64>() / t as f64;
            prop_assert!((global - weighted).abs() < 1e-10);
        }
    }

    #[test]
    fn pooling_commutes_with_reversal(blocks in 1usize..6, a in 2usize..7, d in 1usize..4, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frames = gaussian_matrix(blocks * a, d, &mut rng);
        let fwd = segment_pool(&video(frames.clone()), a).unwrap().segments;
        let rev = segment_pool(&video(frames.reversed_rows()), a).unwrap().segments;
        let expect = fwd.reversed_rows();
        for (x, y) in rev.as_slice().iter().zip(expect.as_slice()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn feature_encoding_is_bit_exact(t in 1usize..20, d in 1usize..10, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..t * d).map(|_| (rng.random::<f32>() * 200.0 - 100.0) as f64).collect();
        let frames = Matrix::from_vec(t, d, data).unwrap();
        let bytes = encode_features(&frames);
        let back = decode_features("v", &bytes).unwrap();
        prop_assert_eq!(back.frames.as_slice(), frames.as_slice());
        prop_assert_eq!(encode_features(&back.frames), bytes);
    }

    #[test]
    fn forward_is_deterministic_and_unit(seed: u64, a in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = init_params(&[5, 6, 6, 4], seed).unwrap();
        params.layers_mut().last_mut().unwrap().biases.fill(0.05);
        let pooled = PooledVideo { video_id: "v".into(), segments: gaussian_matrix(a, 5, &mut rng), label: None };
        let t1 = embednet::embed(&params, &pooled).unwrap();
        let t2 = embednet::embed(&params.clone(), &pooled).unwrap();
        prop_assert_eq!(t1.points.as_slice(), t2.points.as_slice());
        for r in t1.points.iter_rows() {
            prop_assert!((linalg::norm(r) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn cosine_distance_is_symmetric(seed: u64, d in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = unit_rows(2, d, &mut rng);
        prop_assert_eq!(loss::cosine_distance(m.row(0), m.row(1)), loss::cosine_distance(m.row(1), m.row(0)));
    }

    #[test]
    fn trajectory_distance_is_mean_affiliation(seed: u64, a in 1usize..7, d in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = unit_rows(a, d, &mut rng);
        let r = unit_rows(a, d, &mut rng);
        let td = loss::trajectory_distance(&e, &r).unwrap();
        let aff = loss::affiliation_loss(&e, &r, None).unwrap();
        prop_assert!((td - aff / a as f64).abs() < 1e-12);
    }

    #[test]
    fn diversity_ignores_class_and_subaction_order(seed: u64, c in 2usize..5, a in 1usize..5, d in 1usize..5) {
        let bank = init_prototypes(c, a.max(2), d, seed).unwrap();
        let a = bank.subactions();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let mut classes: Vec<usize> = (0..c).collect();
        let mut subs: Vec<usize> = (0..a).collect();
        for i in (1..c).rev() { classes.swap(i, rng.random_range(0..=i)); }
        for i in (1..a).rev() { subs.swap(i, rng.random_range(0..=i)); }
        let mut raw = Vec::with_capacity(c * a * d);
        for &cl in &classes {
            for &s in &subs {
                raw.extend_from_slice(bank.raw_row(cl, s));
            }
        }
        let permuted = PrototypeBank::from_raw(c, a, d, raw).unwrap();
        let (x, y) = (loss::diversity_loss(&bank), loss::diversity_loss(&permuted));
        prop_assert!((x - y).abs() < 1e-12 * (1.0 + x.abs()));
    }

    #[test]
    fn motion_reversal_identities(seed: u64, a in 2usize..7, d in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = unit_rows(a, d, &mut rng);
        let r = unit_rows(a, d, &mut rng);
        let m = loss::motion_loss(&e, &r).unwrap();
        // Reversing both flips every difference twice.
        let both = loss::motion_loss(&e.reversed_rows(), &r.reversed_rows()).unwrap();
        prop_assert!((m - both).abs() < 1e-12);
        // Against a constant-step reference, reversing E alone negates the loss.
        let step: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let base: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let lin = Matrix::from_rows(
            &(0..a).map(|i| base.iter().zip(&step).map(|(b, s)| b + i as f64 * s).collect()).collect::<Vec<_>>(),
        ).unwrap();
        let fwd = loss::motion_loss(&e, &lin).unwrap();
        let rev = loss::motion_loss(&e.reversed_rows(), &lin).unwrap();
        prop_assert!((fwd + rev).abs() < 1e-12);
    }

    #[test]
    fn total_loss_decomposes(seed: u64, c in 2usize..4, a in 2usize..5, d in 1usize..5, n in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bank = init_prototypes(c, a, d, seed).unwrap();
        let items: Vec<_> = (0..n)
            .map(|i| (taen_core::Trajectory { video_id: format!("{i}"), points: unit_rows(a, d, &mut rng) }, rng.random_range(0..c)))
            .collect();
        let w = LossWeights { w_aff: 0.7, w_mot: 0.3, w_div: 2.5, ..Default::default() };
        let r = loss::total_loss(&items, &bank, &w).unwrap();
        let recon = w.w_aff * r.affiliation + w.w_mot * r.motion + w.w_div * r.diversity;
        prop_assert!((r.total - recon).abs() < 1e-12);
    }

    #[test]
    fn classification_follows_slot_permutation(seed: u64, n in 2usize..6, a in 2usize..5, d in 2usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = unit_rows(a, d, &mut rng);
        let slots: Vec<Matrix> = (0..n).map(|_| unit_rows(a, d, &mut rng)).collect();
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() { perm.swap(i, rng.random_range(0..=i)); }
        let w = LossWeights::default();
        for sign in [MotionSign::AlignedIsCloser, MotionSign::Literal] {
            let (s0, d0) = classify_query(&q, &SupportTrajectories { slots: slots.clone() }, &w, sign).unwrap();
            let permuted = perm.iter().map(|&p| slots[p].clone()).collect();
            let (s1, d1) = classify_query(&q, &SupportTrajectories { slots: permuted }, &w, sign).unwrap();
            for (j, &p) in perm.iter().enumerate() {
                prop_assert_eq!(d1[j], d0[p]);
            }
            // Continuous random data has no ties, so the winner moves with its slot.
            prop_assert_eq!(perm[s1], s0);
        }
    }
}

/// Greedy NMS written as directly as possible: repeatedly take the best
/// survivor anywhere, then drop everything it suppresses.
fn nms_oracle(dets: &[Detection], thr: f64) -> Vec<Detection> {
    let mut alive: Vec<bool> = vec![true; dets.len()];
    let mut out = Vec::new();
    loop {
        let mut best: Option<usize> = None;
        for i in 0..dets.len() {
            if !alive[i] {
                continue;
            }
            best = match best {
                None => Some(i),
                Some(b) => {
                    let (x, y) = (&dets[i], &dets[b]);
                    if x.score > y.score || (x.score == y.score && x.start < y.start) { Some(i) } else { Some(b) }
                }
            };
        }
        let Some(b) = best else { break };
        alive[b] = false;
        let kb = &dets[b];
        for i in 0..dets.len() {
            let d = &dets[i];
            if alive[i] && d.video_id == kb.video_id && d.slot == kb.slot && temporal_iou((kb.start, kb.end), (d.start, d.end)) >= thr {
                alive[i] = false;
            }
        }
        out.push(kb.clone());
    }
    out
}

fn sort_key(d: &Detection) -> (String, usize, u64, u64, u64) {
    (d.video_id.clone(), d.slot, d.start.to_bits(), d.end.to_bits(), d.score.to_bits())
}

fn random_detections(rng: &mut ChaCha8Rng, n: usize) -> Vec<Detection> {
    (0..n)
        .map(|_| {
            // Coarse grid values so exact ties and tIoU = threshold both occur.
            let s = rng.random_range(0..8) as f64 / 10.0;
            let len = rng.random_range(1..5) as f64 / 10.0;
            Detection {
                video_id: ["a", "b"][rng.random_range(0..2)].into(),
                start: s,
                end: s + len,
                slot: rng.random_range(0..2),
                score: rng.random_range(0..5) as f64 / 4.0,
            }
        })
        .collect()
}

#[test]
fn nms_matches_bruteforce_greedy_up_to_eight() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for n in 0..=8 {
        for _ in 0..400 {
            let dets = random_detections(&mut rng, n);
            for thr in [0.3, 0.5, 0.7] {
                let mut got = nms(&dets, thr);
                let mut want = nms_oracle(&dets, thr);
                got.sort_by_key(sort_key);
                want.sort_by_key(sort_key);
                assert_eq!(got, want, "n={n} thr={thr} dets={dets:?}");
                for (i, x) in got.iter().enumerate() {
                    for y in &got[i + 1..] {
                        if x.video_id == y.video_id && x.slot == y.slot {
                            assert!(temporal_iou((x.start, x.end), (y.start, y.end)) < thr);
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn ap_is_bounded_and_rank_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..300 {
        let n = rng.random_range(0..10);
        let dets = random_detections(&mut rng, n);
        let gt: Vec<GroundTruth> = (0..rng.random_range(1..4))
            .map(|_| {
                let s = rng.random_range(0..8) as f64 / 10.0;
                GroundTruth { video_id: ["a", "b"][rng.random_range(0..2)].into(), start: s, end: s + 0.2, slot: 0 }
            })
            .collect();
        let warped: Vec<Detection> = dets
            .iter()
            .map(|d| Detection { score: (3.0 * d.score).exp() - 7.0 + d.score.powi(3), ..d.clone() })
            .collect();
        for thr in [0.1, 0.5] {
            let ap = average_precision(&dets, &gt, 0, thr).unwrap();
            assert!((0.0..=1.0).contains(&ap));
            assert_eq!(ap, average_precision(&warped, &gt, 0, thr).unwrap());
        }
    }
}

/// Loss = sum of all trajectory entries, differentiated through the full
/// network including the row normalization.
#[test]
fn embedding_gradients_match_finite_differences() {
    let h = 1e-6;
    let mut worst = 0.0f64;
    for trial in 0..30u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + trial);
        let dims = [rng.random_range(2..=6), rng.random_range(2..=5), rng.random_range(2..=5), rng.random_range(2..=4)];
        let a = rng.random_range(1..=3);
        let mut params = init_params(&dims, trial).unwrap();
        for l in params.layers_mut() {
            for b in &mut l.biases {
                *b = rng.random_range(-0.3..0.3);
            }
        }
        let pooled = PooledVideo { video_id: "g".into(), segments: gaussian_matrix(a, dims[0], &mut rng), label: None };
        let sum = |p: &MlpParams| -> f64 { embednet::embed(p, &pooled).unwrap().points.as_slice().iter().sum() };
        let (traj, cache) = embednet::forward(&params, &pooled).unwrap();
        let ones = Matrix::from_vec(a, dims[3], vec![1.0; a * dims[3]]).unwrap();
        let (grads, _) = embednet::backward(&params, &cache, &ones).unwrap();
        assert_eq!(traj.points.rows(), a);
        let mut rel = |g: f64, fd: f64| {
            worst = worst.max((g - fd).abs() / g.abs().max(fd.abs()).max(1e-4));
        };
        for (li, g) in grads.iter().enumerate() {
            for k in 0..params.layers()[li].weights.as_slice().len() {
                let x = params.layers()[li].weights.as_slice()[k];
                let mut p = params.clone();
                p.layers_mut()[li].weights.as_mut_slice()[k] = x + h;
                let up = sum(&p);
                p.layers_mut()[li].weights.as_mut_slice()[k] = x - h;
                let dn = sum(&p);
                rel(g.weights.as_slice()[k], (up - dn) / ((x + h) - (x - h)));
            }
            for k in 0..params.layers()[li].biases.len() {
                let x = params.layers()[li].biases[k];
                let mut p = params.clone();
                p.layers_mut()[li].biases[k] = x + h;
                let up = sum(&p);
                p.layers_mut()[li].biases[k] = x - h;
                let dn = sum(&p);
                rel(g.biases[k], (up - dn) / ((x + h) - (x - h)));
            }
        }
    }
    assert!(worst < 1e-4, "max relative error {worst:e}");
}

/// With w_div = 0 a class absent from the batch receives exactly no gradient.
#[test]
fn absent_classes_get_no_gradient_without_diversity() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (c, a, d, e) = (4, 3, 5, 4);
    let mut params = init_params(&[d, 6, 6, e], 1).unwrap();
    params.layers_mut().last_mut().unwrap().biases.fill(0.1);
    let bank = init_prototypes(c, a, e, 2).unwrap();
    let batch: Vec<PooledVideo> = [0usize, 2, 0]
        .iter()
        .map(|&l| PooledVideo { video_id: "b".into(), segments: gaussian_matrix(a, d, &mut rng), label: Some(l) })
        .collect();
    let refs: Vec<&PooledVideo> = batch.iter().collect();
    let no_div = LossWeights { w_div: 0.0, ..Default::default() };
    let (_, g) = loss::loss_gradients(&refs, &params, &bank, &no_div).unwrap();
    for class in [1, 3] {
        for i in 0..a {
            assert!(g.bank.raw_row(class, i).iter().all(|&x| x == 0.0));
        }
    }
    assert!(g.bank.raw_row(0, 0).iter().any(|&x| x != 0.0));
    let (_, g) = loss::loss_gradients(&refs, &params, &bank, &LossWeights::default()).unwrap();
    assert!(g.bank.raw_row(1, 0).iter().any(|&x| x != 0.0));
    // Diversity alone never reaches the embedding.
    let div_only = LossWeights { w_aff: 0.0, w_mot: 0.0, ..Default::default() };
    let (_, g) = loss::loss_gradients(&refs, &params, &bank, &div_only).unwrap();
    assert!(g.mlp.iter().all(|l| l.weights.as_slice().iter().chain(&l.biases).all(|&x| x == 0.0)));
}
