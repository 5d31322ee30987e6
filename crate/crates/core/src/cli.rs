//! Command-line front end: argument parsing, run configs, ablation and
//! sweep harnesses, and CSV report rendering.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::Model;
use crate::detection::{self, DetectionOptions, DetectionReport};
use crate::episodic::{self, AccuracyReport, EvalOptions};
use crate::error::{ErrorKind, Result, TaenError};
use crate::features::{self, Dataset};
use crate::loss::MotionSign;
use crate::synth::{self, SynthConfig};
use crate::trainer::{self, GradCheckConfig, TrainConfig};

pub const VERSION: &str = concat!("v", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Parser)]
#[command(name = "taen", version, about = "Few-shot action recognition with sub-action trajectories")]
pub struct Cli {
    /// Single-threaded execution.
    #[arg(long, global = true)]
    pub deterministic: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train an embedding and prototype bank.
    Train(TrainArgs),
    /// Few-shot classification accuracy.
    EvalCls(EvalClsArgs),
    /// Few-shot temporal detection mAP.
    EvalDet(EvalDetArgs),
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Compare analytical and finite-difference gradients.
    Gradcheck(GradcheckArgs),
    /// Train and evaluate loss-term ablations.
    Ablate(AblateArgs),
    /// Accuracy over sub-actions, ways, or shots.
    Sweep(SweepArgs),
    /// Summarize a feature file.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training log CSV (default: <out>.log.csv).
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Hinge affiliation loss with the configured margin.
    #[arg(long)]
    pub margin: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    Subactions,
    Ways,
    Shots,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SignArg {
    AlignedIsCloser,
    Literal,
}

impl From<SignArg> for MotionSign {
    fn from(s: SignArg) -> Self {
        match s {
            SignArg::AlignedIsCloser => MotionSign::AlignedIsCloser,
            SignArg::Literal => MotionSign::Literal,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalClsArgs {
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub way: usize,
    /// Shot count, range (`1..5`), or list (`1,5`).
    #[arg(long, default_value = "1")]
    pub shot: String,
    #[arg(long, default_value_t = 20_000)]
    pub episodes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "aligned-is-closer")]
    pub motion_sign: SignArg,
    /// Also report the raw-feature max-pool baseline.
    #[arg(long)]
    pub baseline: bool,
    /// Sweep ways (2..10) or sub-actions (retrains; needs --train-manifest).
    #[arg(long, value_enum)]
    pub sweep: Option<SweepAxis>,
    #[arg(long)]
    pub train_manifest: Option<PathBuf>,
    /// Training config for sub-action sweeps.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalDetArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub proposals: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub way: usize,
    #[arg(long, default_value_t = 1)]
    pub shot: usize,
    #[arg(long, default_value_t = 100)]
    pub episodes: usize,
    #[arg(long, default_value_t = 0.3)]
    pub conf_thresh: f64,
    #[arg(long, default_value_t = 0.5)]
    pub nms: f64,
    #[arg(long, default_value_t = 0.2)]
    pub proposal_thresh: f64,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Untrimmed test split with proposals (default untrimmed settings).
    #[arg(long)]
    pub untrimmed: bool,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub step: Option<f64>,
    /// Failure threshold on the max relative error.
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_enum)]
    pub axis: SweepAxis,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub features: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub way: usize,
    pub shots: Vec<usize>,
    pub episodes: usize,
    pub seed: u64,
    pub motion_sign: MotionSign,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            way: 5,
            shots: vec![1, 5],
            episodes: 2000,
            seed: 0,
            motion_sign: MotionSign::AlignedIsCloser,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepGrid {
    pub subactions: Vec<usize>,
    pub ways: Vec<usize>,
    pub shots: Vec<usize>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        SweepGrid {
            subactions: (1..=8).collect(),
            ways: (2..=10).collect(),
            shots: (1..=5).collect(),
        }
    }
}

/// Config document for `ablate` and `sweep`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub train_manifest: PathBuf,
    pub test_manifest: PathBuf,
    /// Evaluate this checkpoint instead of training, where the axis allows.
    #[serde(default)]
    pub ckpt: Option<PathBuf>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub sweep: SweepGrid,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.eval.way < 1 || self.eval.shots.is_empty() || self.eval.shots.contains(&0) {
            return Err(TaenError::Config("eval needs way >= 1 and positive shots".into()));
        }
        if self.eval.episodes == 0 {
            return Err(TaenError::Config("eval.episodes must be positive".into()));
        }
        Ok(())
    }

    /// Parse JSON and resolve manifest paths relative to the config file.
    pub fn read(path: &Path) -> Result<Self> {
        let mut rc: RunConfig = read_json(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        rc.train_manifest = base.join(&rc.train_manifest);
        rc.test_manifest = base.join(&rc.test_manifest);
        rc.ckpt = rc.ckpt.map(|c| base.join(c));
        rc.validate()?;
        Ok(rc)
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| TaenError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| TaenError::Config(format!("{}: {e}", path.display())))
}

/// First 16 hex digits of SHA-256 over the compact JSON form.
pub fn config_hash<T: Serialize>(cfg: &T) -> String {
    let json = serde_json::to_string(cfg).unwrap_or_default();
    let digest = Sha256::digest(json.as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Comment lines that open every report: tool version, config hash,
/// and the config itself.
pub fn report_header<T: Serialize>(cfg: &T) -> String {
    format!(
        "# taen {VERSION} config_hash={}\n# config: {}\n",
        config_hash(cfg),
        serde_json::to_string(cfg).unwrap_or_default()
    )
}

/// `"3"`, `"1..5"` (inclusive), or `"1,3,5"`.
pub fn parse_shots(s: &str) -> Result<Vec<usize>> {
    let bad = || TaenError::Config(format!("cannot parse shot list {s:?}"));
    let v: Vec<usize> = if let Some((a, b)) = s.split_once("..") {
        let a: usize = a.trim().parse().map_err(|_| bad())?;
        let b: usize = b.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
        (a..=b).collect()
    } else {
        s.split(',')
            .map(|x| x.trim().parse().map_err(|_| bad()))
            .collect::<Result<_>>()?
    };
    if v.is_empty() || v.contains(&0) {
        return Err(bad());
    }
    Ok(v)
}

pub fn accuracy_csv(rows: &[AccuracyReport]) -> String {
    let mut s = String::from("shot,way,accuracy,ci_low,ci_high\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{}", r.shot, r.way, r.accuracy, r.ci_low, r.ci_high);
    }
    s
}

pub fn detection_csv(r: &DetectionReport) -> String {
    let mut s = String::from("tiou,mAP\n");
    for (t, m) in r.thresholds.iter().zip(&r.map) {
        let _ = writeln!(s, "{t:.2},{m}");
    }
    let _ = writeln!(s, "\nmAP@0.5,avg_mAP\n{},{}", r.map_at_50, r.avg_map);
    s
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantRow {
    pub variant: String,
    pub report: AccuracyReport,
}

pub const ABLATION_VARIANTS: [&str; 4] = ["full", "w_aff=0", "w_div=0", "w_mot=0"];

pub fn ablation_config(base: &TrainConfig, variant: &str) -> TrainConfig {
    let mut c = base.clone();
    match variant {
        "w_aff=0" => c.weights.w_aff = 0.0,
        "w_div=0" => c.weights.w_div = 0.0,
        "w_mot=0" => c.weights.w_mot = 0.0,
        _ => {}
    }
    c
}

fn eval_shots(model: &Model, test: &Dataset, eval: &EvalConfig, way: usize) -> Result<Vec<AccuracyReport>> {
    let embedded: Vec<_> = model
        .embed_all(&test.videos)?
        .into_iter()
        .map(|t| t.points)
        .collect();
    let pool = episodic::class_pool(test);
    eval.shots
        .iter()
        .map(|&shot| {
            let opts = EvalOptions {
                way,
                shot,
                episodes: eval.episodes,
                seed: eval.seed,
                sign: eval.motion_sign,
            };
            episodic::evaluate_embedded(&embedded, &pool, &model.weights, &opts)
        })
        .collect()
}

/// Full model plus one-term-zeroed variants, all trained from the same
/// seed, evaluated at every configured shot.
pub fn ablate(run: &RunConfig, train: &Dataset, test: &Dataset) -> Result<Vec<VariantRow>> {
    let mut rows = Vec::new();
    for v in ABLATION_VARIANTS {
        let cfg = ablation_config(&run.train, v);
        let model = trainer::train(train, &cfg)?.model;
        for report in eval_shots(&model, test, &run.eval, run.eval.way)? {
            rows.push(VariantRow {
                variant: v.to_string(),
                report,
            });
        }
    }
    Ok(rows)
}

pub fn ablation_csv(rows: &[VariantRow]) -> String {
    let mut s = String::from("variant,shot,way,accuracy,ci_low,ci_high\n");
    for r in rows {
        let a = &r.report;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.variant, a.shot, a.way, a.accuracy, a.ci_low, a.ci_high
        );
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub value: usize,
    pub report: AccuracyReport,
}

/// Training config for a sub-action count; a single point has no motion.
pub fn subaction_config(base: &TrainConfig, a: usize) -> TrainConfig {
    let mut c = base.clone();
    c.a = a;
    if a < 2 {
        c.weights.w_mot = 0.0;
    }
    c
}

pub fn sweep(run: &RunConfig, axis: SweepAxis, train: Option<&Dataset>, test: &Dataset) -> Result<Vec<SweepRow>> {
    let trained = |cfg: &TrainConfig| -> Result<Model> {
        let train = train.ok_or_else(|| TaenError::Config("this sweep needs a training manifest".into()))?;
        Ok(trainer::train(train, cfg)?.model)
    };
    let base_model = || -> Result<Model> {
        match &run.ckpt {
            Some(p) => Model::load(p),
            None => trained(&run.train),
        }
    };
    let mut rows = Vec::new();
    match axis {
        SweepAxis::Subactions => {
            for &a in &run.sweep.subactions {
                let model = trained(&subaction_config(&run.train, a))?;
                for report in eval_shots(&model, test, &run.eval, run.eval.way)? {
                    rows.push(SweepRow { axis, value: a, report });
                }
            }
        }
        SweepAxis::Ways => {
            let model = base_model()?;
            for &n in &run.sweep.ways {
                for report in eval_shots(&model, test, &run.eval, n)? {
                    rows.push(SweepRow { axis, value: n, report });
                }
            }
        }
        SweepAxis::Shots => {
            let model = base_model()?;
            let eval = EvalConfig {
                shots: run.sweep.shots.clone(),
                ..run.eval.clone()
            };
            for report in eval_shots(&model, test, &eval, run.eval.way)? {
                rows.push(SweepRow {
                    axis,
                    value: report.shot,
                    report,
                });
            }
        }
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("axis,value,shot,way,accuracy,ci_low,ci_high\n");
    for r in rows {
        let a = &r.report;
        let axis = match r.axis {
            SweepAxis::Subactions => "subactions",
            SweepAxis::Ways => "ways",
            SweepAxis::Shots => "shots",
        };
        let _ = writeln!(
            s,
            "{axis},{},{},{},{},{},{}",
            r.value, a.shot, a.way, a.accuracy, a.ci_low, a.ci_high
        );
    }
    s
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| TaenError::io(p, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn train_log_csv(config: &TrainConfig, log: &[trainer::StepLog]) -> String {
    let mut s = report_header(config);
    s.push_str("step,epoch,total,aff,mot,div\n");
    for l in log {
        let r = &l.report;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            l.step, l.epoch, r.total, r.affiliation, r.motion, r.diversity
        );
    }
    s
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Inspect(a) => {
            let vf = features::load_features(&a.features)?;
            let (lo, hi) = vf.value_range();
            println!("T={} d_feat={} min={lo} max={hi}", vf.len(), vf.dim());
        }
        Command::Train(a) => {
            let mut cfg: TrainConfig = match &a.config {
                Some(p) => read_json(p)?,
                None => TrainConfig::default(),
            };
            if a.margin {
                cfg.weights.margin = true;
            }
            cfg.validate()?;
            let ds = features::load_dataset(&a.manifest)?;
            let out = a.out.clone();
            let outcome = trainer::train_with(&ds, &cfg, |epoch, snap| {
                snap.save(with_suffix(&out, &format!(".epoch{epoch}")))
            })?;
            outcome.model.save(&a.out)?;
            let log_path = a.log.unwrap_or_else(|| with_suffix(&a.out, ".log.csv"));
            emit(Some(&log_path), &train_log_csv(&cfg, &outcome.log))?;
            if let Some(last) = outcome.log.last() {
                eprintln!(
                    "trained {} steps; final loss {:.6}; wrote {}",
                    outcome.log.len(),
                    last.report.total,
                    a.out.display()
                );
            }
        }
        Command::EvalCls(a) => eval_cls(a)?,
        Command::EvalDet(a) => {
            let model = Model::load(&a.ckpt)?;
            let split = features::load_dataset(&a.manifest)?;
            let props = detection::read_proposals(&a.proposals)?;
            let opts = DetectionOptions {
                way: a.way,
                shot: a.shot,
                episodes: a.episodes,
                seed: a.seed,
                proposal_thresh: a.proposal_thresh,
                conf_thresh: a.conf_thresh,
                nms_thresh: a.nms,
                sigma: a.sigma,
            };
            let report = detection::evaluate_detection(&model, &split, &props, &opts)?;
            let text = report_header(&opts) + &detection_csv(&report);
            emit(a.out.as_deref(), &text)?;
        }
        Command::Synth(a) => {
            let mut cfg: SynthConfig = match &a.config {
                Some(p) => read_json(p)?,
                None => SynthConfig::default(),
            };
            if a.untrimmed {
                cfg.untrimmed.get_or_insert_with(Default::default);
            }
            let (paths, report) = synth::gen_synthetic_dataset(&cfg, &a.out)?;
            let summary = serde_json::json!({
                "version": VERSION,
                "config_hash": config_hash(&cfg),
                "config": cfg,
                "report": report,
            });
            let text = serde_json::to_string_pretty(&summary)?;
            let p = a.out.join("synth_report.json");
            fs::write(&p, &text).map_err(|e| TaenError::io(&p, e))?;
            println!("{text}");
            eprintln!("wrote {} and {}", paths.train_manifest.display(), paths.test_manifest.display());
        }
        Command::Gradcheck(a) => {
            let mut cfg: GradCheckConfig = match &a.config {
                Some(p) => read_json(p)?,
                None => GradCheckConfig::default(),
            };
            if let Some(t) = a.trials {
                cfg.trials = t;
            }
            if let Some(s) = a.step {
                cfg.step = s;
            }
            let report = trainer::grad_check(&cfg)?;
            println!("trials={} max_rel_error={:e}", report.trials, report.max_rel_error);
            if report.max_rel_error.is_nan() || report.max_rel_error >= a.tolerance {
                return Err(TaenError::Numeric(format!(
                    "max relative error {:e} exceeds {:e}",
                    report.max_rel_error, a.tolerance
                )));
            }
        }
        Command::Ablate(a) => {
            let run = RunConfig::read(&a.config)?;
            let train = features::load_dataset(&run.train_manifest)?;
            let test = features::load_dataset(&run.test_manifest)?;
            let rows = ablate(&run, &train, &test)?;
            emit(a.out.as_deref(), &(report_header(&run) + &ablation_csv(&rows)))?;
        }
        Command::Sweep(a) => {
            let run = RunConfig::read(&a.config)?;
            let train = if a.axis == SweepAxis::Subactions || run.ckpt.is_none() {
                Some(features::load_dataset(&run.train_manifest)?)
            } else {
                None
            };
            let test = features::load_dataset(&run.test_manifest)?;
            let rows = sweep(&run, a.axis, train.as_ref(), &test)?;
            emit(a.out.as_deref(), &(report_header(&run) + &sweep_csv(&rows)))?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct EvalEcho<'a> {
    ckpt: Option<&'a Path>,
    manifest: &'a Path,
    way: usize,
    shots: &'a [usize],
    episodes: usize,
    seed: u64,
    motion_sign: MotionSign,
}

fn eval_cls(a: EvalClsArgs) -> Result<()> {
    let shots = parse_shots(&a.shot)?;
    let eval = EvalConfig {
        way: a.way,
        shots: shots.clone(),
        episodes: a.episodes,
        seed: a.seed,
        motion_sign: a.motion_sign.into(),
    };
    let test = features::load_dataset(&a.manifest)?;
    if let Some(axis) = a.sweep {
        let train_cfg: TrainConfig = match &a.config {
            Some(p) => read_json(p)?,
            None => TrainConfig::default(),
        };
        let run = RunConfig {
            train_manifest: a.train_manifest.clone().unwrap_or_default(),
            test_manifest: a.manifest.clone(),
            ckpt: a.ckpt.clone(),
            train: train_cfg,
            eval,
            sweep: SweepGrid::default(),
        };
        run.validate()?;
        let train = match (&a.train_manifest, axis, &a.ckpt) {
            (Some(p), _, _) => Some(features::load_dataset(p)?),
            (None, SweepAxis::Subactions, _) | (None, _, None) => {
                return Err(TaenError::Config(
                    "this sweep needs --train-manifest (or --ckpt for ways/shots)".into(),
                ))
            }
            _ => None,
        };
        let rows = sweep(&run, axis, train.as_ref(), &test)?;
        return emit(a.out.as_deref(), &(report_header(&run) + &sweep_csv(&rows)));
    }
    let ckpt = a
        .ckpt
        .as_ref()
        .ok_or_else(|| TaenError::Config("eval-cls needs --ckpt".into()))?;
    let model = Model::load(ckpt)?;
    let rows = eval_shots(&model, &test, &eval, a.way)?;
    let echo = EvalEcho {
        ckpt: Some(ckpt),
        manifest: &a.manifest,
        way: a.way,
        shots: &shots,
        episodes: a.episodes,
        seed: a.seed,
        motion_sign: eval.motion_sign,
    };
    let mut text = report_header(&echo) + &accuracy_csv(&rows);
    if a.baseline {
        let base = shots
            .iter()
            .map(|&k| episodic::max_pool_baseline(&test, a.way, k, a.episodes, a.seed))
            .collect::<Result<Vec<_>>>()?;
        text.push_str("\n# max-pool baseline\n");
        text.push_str(&accuracy_csv(&base));
    }
    emit(a.out.as_deref(), &text)
}

pub fn exit_code(err: &TaenError) -> i32 {
    match err.kind() {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numeric => 4,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shot_specs() {
        assert_eq!(parse_shots("3").unwrap(), vec![3]);
        assert_eq!(parse_shots("1..5").unwrap(), vec![1, 2, 3, 4, 5]);
        assert_eq!(parse_shots("1,5").unwrap(), vec![1, 5]);
        assert!(parse_shots("0").is_err());
        assert!(parse_shots("x").is_err());
    }

    #[test]
    fn run_config_rejects_unknown_keys() {
        let ok = r#"{"train_manifest":"a.json","test_manifest":"b.json"}"#;
        assert!(serde_json::from_str::<RunConfig>(ok).is_ok());
        let bad = r#"{"train_manifest":"a.json","test_manifest":"b.json","typo":1}"#;
        assert!(serde_json::from_str::<RunConfig>(bad).is_err());
        let nested = r#"{"train_manifest":"a","test_manifest":"b","eval":{"wya":3}}"#;
        assert!(serde_json::from_str::<RunConfig>(nested).is_err());
    }

    #[test]
    fn subaction_one_drops_motion() {
        let c = subaction_config(&TrainConfig::default(), 1);
        assert_eq!(c.weights.w_mot, 0.0);
        assert!(c.validate().is_ok());
        assert_eq!(subaction_config(&TrainConfig::default(), 3).weights.w_mot, 0.5);
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = TrainConfig::default();
        let mut b = a.clone();
        assert_eq!(config_hash(&a), config_hash(&b));
        b.seed = 1;
        assert_ne!(config_hash(&a), config_hash(&b));
        assert_eq!(config_hash(&a).len(), 16);
    }

    #[test]
    fn exit_codes_are_distinct() {
        let c = exit_code(&TaenError::Config("x".into()));
        let d = exit_code(&TaenError::Manifest("x".into()));
        let n = exit_code(&TaenError::Numeric("x".into()));
        assert!(c != d && d != n && c != n && c != 0);
    }
}
