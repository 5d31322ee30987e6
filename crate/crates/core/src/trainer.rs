//! Mini-batch SGD with momentum over the MLP and the prototype bank,
//! plus finite-difference gradient checking.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Model;
use crate::detection::crop_segment;
use crate::embednet::{self, init_params, Layer, MlpParams};
use crate::error::{Result, TaenError};
use crate::features::{pool_blocks, Dataset, PooledVideo};
use crate::linalg::Matrix;
use crate::loss::{self, Gradients, LossReport, LossWeights};
use crate::prototypes::{init_bank, PrototypeBank};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Sub-actions per video.
    pub a: usize,
    /// Embedding dimension.
    pub e: usize,
    /// Hidden widths; `None` means two layers of width d_feat/2.
    pub hidden: Option<Vec<usize>>,
    pub weights: LossWeights,
    /// Write a checkpoint every this many epochs (0 disables).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 30,
            learning_rate: 5e-4,
            momentum: 0.9,
            epochs: 30,
            seed: 0,
            a: 5,
            e: 2048,
            hidden: None,
            weights: LossWeights::default(),
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(TaenError::Config("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(TaenError::Config("learning_rate must be finite and >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(TaenError::Config("momentum must lie in [0, 1)".into()));
        }
        if self.a == 0 || self.e == 0 {
            return Err(TaenError::Config("a and e must be positive".into()));
        }
        if let Some(h) = &self.hidden {
            if h.contains(&0) {
                return Err(TaenError::Config("hidden widths must be positive".into()));
            }
        }
        self.weights.validate(self.a)
    }

    pub fn dims(&self, d_feat: usize) -> Vec<usize> {
        let mut dims = vec![d_feat];
        match &self.hidden {
            Some(h) => dims.extend(h),
            None => dims.extend([(d_feat / 2).max(1); 2]),
        }
        dims.push(self.e);
        dims
    }
}

/// Momentum buffers, one per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub mlp: Vec<Layer>,
    pub bank: Matrix,
}

impl OptimState {
    pub fn new(params: &MlpParams, bank: &PrototypeBank) -> Self {
        OptimState {
            mlp: params.zero_grads(),
            bank: Matrix::zeros(bank.raw().rows(), bank.raw().cols()),
        }
    }
}

fn momentum_update(p: &mut [f64], v: &mut [f64], g: &[f64], lr: f64, m: f64) {
    for ((p, v), g) in p.iter_mut().zip(v.iter_mut()).zip(g) {
        *v = m * *v + g;
        *p -= lr * *v;
    }
}

/// `v <- m v + g; p <- p - lr v` on every tensor.
pub fn sgd_step(
    params: &mut MlpParams,
    bank: &mut PrototypeBank,
    grads: &Gradients,
    state: &mut OptimState,
    lr: f64,
    momentum: f64,
) -> Result<()> {
    let shapes_ok = grads.mlp.len() == params.layers().len()
        && state.mlp.len() == params.layers().len()
        && params.layers().iter().zip(&grads.mlp).zip(&state.mlp).all(|((p, g), v)| {
            p.weights.rows() == g.weights.rows()
                && p.weights.cols() == g.weights.cols()
                && v.weights.rows() == p.weights.rows()
                && v.weights.cols() == p.weights.cols()
        })
        && grads.bank.raw().as_slice().len() == bank.raw().as_slice().len()
        && state.bank.as_slice().len() == bank.raw().as_slice().len();
    if !shapes_ok {
        return Err(TaenError::Shape("gradient/state shapes do not match parameters".into()));
    }
    for ((p, g), v) in params.layers_mut().iter_mut().zip(&grads.mlp).zip(&mut state.mlp) {
        momentum_update(
            p.weights.as_mut_slice(),
            v.weights.as_mut_slice(),
            g.weights.as_slice(),
            lr,
            momentum,
        );
        momentum_update(&mut p.biases, &mut v.biases, &g.biases, lr, momentum);
    }
    momentum_update(
        bank.raw_mut().as_mut_slice(),
        state.bank.as_mut_slice(),
        grads.bank.raw().as_slice(),
        lr,
        momentum,
    );
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub epoch: usize,
    pub report: LossReport,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub log: Vec<StepLog>,
}

impl TrainOutcome {
    /// Mean total loss per epoch.
    pub fn epoch_means(&self) -> Vec<f64> {
        let epochs = self.log.last().map_or(0, |s| s.epoch + 1);
        let mut sums = vec![(0.0, 0usize); epochs];
        for s in &self.log {
            sums[s.epoch].0 += s.report.total;
            sums[s.epoch].1 += 1;
        }
        sums.into_iter().map(|(s, n)| s / n as f64).collect()
    }
}

/// Labeled training clips: trimmed videos as they are, untrimmed videos
/// cut at their ground-truth segments.
pub fn training_clips(dataset: &Dataset, a: usize) -> Vec<PooledVideo> {
    let mut clips = Vec::new();
    for (i, vf) in dataset.videos.iter().enumerate() {
        if dataset.segments[i].is_empty() {
            if let Some(label) = dataset.labels[i] {
                let mut p = pool_blocks(vf, a);
                p.label = Some(label);
                clips.push(p);
            }
        } else {
            for seg in &dataset.segments[i] {
                let crop = crop_segment(vf, seg.start, seg.end);
                let mut p = pool_blocks(&crop, a);
                p.label = Some(seg.class);
                clips.push(p);
            }
        }
    }
    clips
}

const BANK_SEED_SALT: u64 = 0x7072_6f74_6f73_0001;

pub fn init_model(d_feat: usize, class_names: Vec<String>, config: &TrainConfig) -> Result<Model> {
    let params = init_params(&config.dims(d_feat), config.seed)?;
    let bank = init_bank(
        class_names.len(),
        config.a,
        config.e,
        config.seed ^ BANK_SEED_SALT,
        false,
    )?;
    Ok(Model {
        params,
        bank,
        class_names,
        weights: config.weights,
        seed: config.seed,
        config: Some(config.clone()),
    })
}

pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    train_with(dataset, config, |_, _| Ok(()))
}

/// Train; `on_checkpoint(epoch, model)` fires every `checkpoint_every`
/// epochs with an f32-rounded snapshot.
pub fn train_with(
    dataset: &Dataset,
    config: &TrainConfig,
    mut on_checkpoint: impl FnMut(usize, &Model) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(TaenError::InsufficientData("training set is empty".into()));
    }
    let clips = training_clips(dataset, config.a);
    let mut seen: Vec<usize> = clips.iter().filter_map(|c| c.label).collect();
    seen.sort_unstable();
    seen.dedup();
    if seen.len() < 2 || dataset.num_classes() < 2 {
        return Err(TaenError::InsufficientData(format!(
            "training needs labeled videos from >= 2 classes, found {}",
            seen.len()
        )));
    }
    let mut model = init_model(dataset.d_feat, dataset.manifest.class_names.clone(), config)?;
    let mut state = OptimState::new(&model.params, &model.bank);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..clips.len()).collect();
    let mut log = Vec::new();
    let mut step = 0;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&PooledVideo> = chunk.iter().map(|&i| &clips[i]).collect();
            let (report, grads) =
                loss::loss_gradients(&batch, &model.params, &model.bank, &config.weights)?;
            if !report.total.is_finite() {
                return Err(TaenError::Numeric(format!(
                    "loss became non-finite at step {step}"
                )));
            }
            sgd_step(
                &mut model.params,
                &mut model.bank,
                &grads,
                &mut state,
                config.learning_rate,
                config.momentum,
            )?;
            log.push(StepLog {
                step,
                epoch,
                report,
            });
            step += 1;
        }
        if config.checkpoint_every > 0 && (epoch + 1) % config.checkpoint_every == 0 {
            let mut snap = model.clone();
            snap.round_to_f32();
            on_checkpoint(epoch + 1, &snap)?;
        }
    }
    model.round_to_f32();
    Ok(TrainOutcome { model, log })
}

/// Parameters for [`grad_check`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradCheckConfig {
    pub trials: usize,
    pub seed: u64,
    pub step: f64,
    pub max_classes: usize,
    pub max_subactions: usize,
    pub max_embed: usize,
    pub max_feat: usize,
    pub max_batch: usize,
    pub weights: LossWeights,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            trials: 20,
            seed: 0,
            step: 1e-6,
            max_classes: 4,
            max_subactions: 4,
            max_embed: 6,
            max_feat: 8,
            max_batch: 3,
            weights: LossWeights::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub trials: usize,
    pub max_rel_error: f64,
    pub per_trial: Vec<f64>,
}

/// A random tiny problem: parameters, bank, and a labeled batch.
#[derive(Debug, Clone)]
pub struct GradInstance {
    pub params: MlpParams,
    pub bank: PrototypeBank,
    pub batch: Vec<PooledVideo>,
}

impl GradInstance {
    /// Instance `trial` of the family keyed by `seed`; trials are
    /// independent streams, so nearby seeds do not share instances.
    pub fn random(cfg: &GradCheckConfig, seed: u64, trial: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(trial);
        let classes = rng.random_range(2..=cfg.max_classes.max(2));
        let a = rng.random_range(2..=cfg.max_subactions.max(2));
        let e = rng.random_range(2..=cfg.max_embed.max(2));
        let d = rng.random_range(2..=cfg.max_feat.max(2));
        let h1 = rng.random_range(2..=6);
        let h2 = rng.random_range(2..=6);
        let params = init_params(&[d, h1, h2, e], rng.random())?;
        let mut params = params;
        // Non-zero biases so the check covers them meaningfully.
        for l in params.layers_mut() {
            for b in &mut l.biases {
                *b = rng.random_range(-0.3..0.3);
            }
        }
        let bank = init_bank(classes, a, e, rng.random(), false)?;
        let n = rng.random_range(1..=cfg.max_batch.max(1));
        let batch = (0..n)
            .map(|i| {
                let data = (0..a * d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                Ok(PooledVideo {
                    video_id: format!("g{i}"),
                    segments: Matrix::from_vec(a, d, data)?,
                    label: Some(rng.random_range(0..classes)),
                })
            })
            .collect::<Result<_>>()?;
        Ok(GradInstance {
            params,
            bank,
            batch,
        })
    }

    pub fn num_params(&self) -> usize {
        self.params.num_params() + self.bank.raw().as_slice().len()
    }

    pub fn loss(&self, params: &MlpParams, bank: &PrototypeBank, w: &LossWeights) -> Result<f64> {
        let items = self
            .batch
            .iter()
            .map(|p| Ok((embednet::embed(params, p)?, p.label.unwrap())))
            .collect::<Result<Vec<_>>>()?;
        Ok(loss::total_loss(&items, bank, w)?.total)
    }

    pub fn analytic(&self, w: &LossWeights) -> Result<Gradients> {
        let refs: Vec<&PooledVideo> = self.batch.iter().collect();
        Ok(loss::loss_gradients(&refs, &self.params, &self.bank, w)?.1)
    }

    /// Max relative error between `grads` and central differences at
    /// `step`. Relative error is `|g - fd| / max(|g|, |fd|, REL_FLOOR)`.
    pub fn max_rel_error(&self, grads: &Gradients, w: &LossWeights, step: f64) -> Result<f64> {
        let mut worst = 0.0f64;
        // Both probes start from the original value; the divisor is the
        // realized spacing so rounding in x +- h does not bias the quotient.
        let mut probe = |analytic: f64, x: f64, eval: &mut dyn FnMut(f64) -> Result<f64>| -> Result<()> {
            let (hi, lo) = (x + step, x - step);
            let fd = (eval(hi)? - eval(lo)?) / (hi - lo);
            let denom = analytic.abs().max(fd.abs()).max(REL_FLOOR);
            worst = worst.max((analytic - fd).abs() / denom);
            Ok(())
        };
        for li in 0..self.params.layers().len() {
            let n_w = self.params.layers()[li].weights.as_slice().len();
            for k in 0..n_w {
                let x = self.params.layers()[li].weights.as_slice()[k];
                let mut p = self.params.clone();
                probe(grads.mlp[li].weights.as_slice()[k], x, &mut |v| {
                    p.layers_mut()[li].weights.as_mut_slice()[k] = v;
                    self.loss(&p, &self.bank, w)
                })?;
            }
            for k in 0..self.params.layers()[li].biases.len() {
                let x = self.params.layers()[li].biases[k];
                let mut p = self.params.clone();
                probe(grads.mlp[li].biases[k], x, &mut |v| {
                    p.layers_mut()[li].biases[k] = v;
                    self.loss(&p, &self.bank, w)
                })?;
            }
        }
        for k in 0..self.bank.raw().as_slice().len() {
            let x = self.bank.raw().as_slice()[k];
            let mut b = self.bank.clone();
            probe(grads.bank.raw().as_slice()[k], x, &mut |v| {
                b.raw_mut().as_mut_slice()[k] = v;
                self.loss(&self.params, &b, w)
            })?;
        }
        Ok(worst)
    }
}

/// Gradients smaller than this are compared in absolute terms.
pub const REL_FLOOR: f64 = 1e-4;

/// Largest total parameter count [`grad_check`] accepts.
pub const GRAD_CHECK_MAX_PARAMS: usize = 10_000;

pub fn grad_check(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    grad_check_with(cfg, |inst| inst.analytic(&cfg.weights))
}

/// Like [`grad_check`] but with a caller-supplied analytic gradient.
pub fn grad_check_with(
    cfg: &GradCheckConfig,
    analytic: impl Fn(&GradInstance) -> Result<Gradients>,
) -> Result<GradCheckReport> {
    let mut per_trial = Vec::with_capacity(cfg.trials);
    for t in 0..cfg.trials {
        let inst = GradInstance::random(cfg, cfg.seed, t as u64)?;
        if inst.num_params() > GRAD_CHECK_MAX_PARAMS {
            return Err(TaenError::Config(format!(
                "gradient check instance has {} parameters (limit {GRAD_CHECK_MAX_PARAMS})",
                inst.num_params()
            )));
        }
        let grads = analytic(&inst)?;
        per_trial.push(inst.max_rel_error(&grads, &cfg.weights, cfg.step)?);
    }
    Ok(GradCheckReport {
        trials: cfg.trials,
        max_rel_error: per_trial.iter().copied().fold(0.0, f64::max),
        per_trial,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prototypes::init_prototypes;

    fn scalar_problem() -> (MlpParams, PrototypeBank, OptimState) {
        let layer = Layer {
            weights: Matrix::zeros(1, 1),
            biases: vec![0.0],
        };
        let params = MlpParams::from_layers(vec![layer]).unwrap();
        let bank = PrototypeBank::from_raw(2, 1, 1, vec![0.0, 0.0]).unwrap();
        let state = OptimState::new(&params, &bank);
        (params, bank, state)
    }

    fn grads_of(value: f64, params: &MlpParams, bank: &PrototypeBank) -> Gradients {
        let mut mlp = params.zero_grads();
        mlp[0].weights.as_mut_slice()[0] = value;
        let mut b = bank.zeros_like();
        b.raw_mut().as_mut_slice().fill(value);
        Gradients { mlp, bank: b }
    }

    #[test]
    fn momentum_two_steps() {
        let (mut p, mut b, mut s) = scalar_problem();
        let g = grads_of(1.0, &p, &b);
        sgd_step(&mut p, &mut b, &g, &mut s, 1.0, 0.9).unwrap();
        assert_eq!(p.layers()[0].weights.get(0, 0), -1.0);
        assert_eq!(s.mlp[0].weights.get(0, 0), 1.0);
        sgd_step(&mut p, &mut b, &g, &mut s, 1.0, 0.9).unwrap();
        assert!((s.mlp[0].weights.get(0, 0) - 1.9).abs() < 1e-15);
        assert!((p.layers()[0].weights.get(0, 0) + 2.9).abs() < 1e-15);
        assert!(b.raw().as_slice().iter().all(|v| (v + 2.9).abs() < 1e-15));
    }

    #[test]
    fn plain_sgd_and_zero_gradient() {
        let (mut p, mut b, mut s) = scalar_problem();
        let g = grads_of(2.0, &p, &b);
        for k in 1..=3 {
            sgd_step(&mut p, &mut b, &g, &mut s, 0.25, 0.0).unwrap();
            assert_eq!(p.layers()[0].weights.get(0, 0), -0.5 * k as f64);
        }
        let (mut p, mut b, mut s) = scalar_problem();
        let before = (p.clone(), b.clone());
        let g = grads_of(0.0, &p, &b);
        sgd_step(&mut p, &mut b, &g, &mut s, 0.1, 0.9).unwrap();
        assert_eq!((p, b), before);
    }

    #[test]
    fn sgd_rejects_mismatched_shapes() {
        let (mut p, mut b, mut s) = scalar_problem();
        let other = init_params(&[2, 2], 0).unwrap();
        let g = Gradients {
            mlp: other.zero_grads(),
            bank: init_prototypes(2, 2, 2, 0).unwrap(),
        };
        assert!(sgd_step(&mut p, &mut b, &g, &mut s, 0.1, 0.9).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = [
            TrainConfig {
                batch_size: 0,
                ..Default::default()
            },
            TrainConfig {
                momentum: 1.0,
                ..Default::default()
            },
            TrainConfig {
                learning_rate: -1.0,
                ..Default::default()
            },
            TrainConfig {
                a: 1,
                ..Default::default()
            },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
        assert_eq!(TrainConfig::default().dims(128), vec![128, 64, 64, 2048]);
    }

    #[test]
    fn config_json_rejects_unknown_keys() {
        assert!(serde_json::from_str::<TrainConfig>(r#"{"batch_size": 4, "bogus": 1}"#).is_err());
        let c: TrainConfig = serde_json::from_str(r#"{"epochs": 3}"#).unwrap();
        assert_eq!(c.epochs, 3);
        assert_eq!(c.batch_size, 30);
    }

    #[test]
    fn gradcheck_passes_and_catches_corruption() {
        let cfg = GradCheckConfig {
            trials: 4,
            ..Default::default()
        };
        let ok = grad_check(&cfg).unwrap();
        assert!(ok.max_rel_error < 1e-4, "{ok:?}");
        let doubled = grad_check_with(&cfg, |inst| {
            let mut g = inst.analytic(&cfg.weights)?;
            for l in &mut g.mlp {
                l.weights.as_mut_slice().iter_mut().for_each(|v| *v *= 2.0);
            }
            Ok(g)
        })
        .unwrap();
        assert!(doubled.max_rel_error > 0.3, "{doubled:?}");
    }
}
