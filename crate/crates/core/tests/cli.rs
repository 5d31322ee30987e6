use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn taen(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_taen"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn taen")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

const SYNTH: &str = r#"{"train_classes":4,"test_classes":3,"videos_per_class":8,"d_feat":16}"#;
const UNTRIMMED: &str = r#"{"train_classes":4,"test_classes":3,"videos_per_class":8,"d_feat":16,
    "untrimmed":{"t_min":60,"t_max":80,"jittered_per_gt":1,"distractors":2}}"#;
const TRAIN: &str = r#"{"epochs":3,"e":8,"batch_size":8,"seed":2}"#;

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("synth.json"), SYNTH).unwrap();
    fs::write(dir.path().join("train.json"), TRAIN).unwrap();
    fs::write(dir.path().join("untrimmed.json"), UNTRIMMED).unwrap();
    ok(&taen(&["synth", "--out", "data", "--config", "synth.json"], dir.path()));
    ok(&taen(&["synth", "--out", "udata", "--config", "untrimmed.json"], dir.path()));
    dir
}

#[test]
fn end_to_end_pipeline_is_deterministic() {
    let dir = workspace();
    let d = dir.path();
    for ckpt in ["a.ckpt", "b.ckpt"] {
        ok(&taen(
            &["--deterministic", "train", "--manifest", "data/train.json", "--out", ckpt, "--config", "train.json"],
            d,
        ));
    }
    assert_eq!(fs::read(d.join("a.ckpt")).unwrap(), fs::read(d.join("b.ckpt")).unwrap());
    let log = fs::read_to_string(d.join("a.ckpt.log.csv")).unwrap();
    assert!(log.starts_with("# taen v"));
    assert!(log.contains("config_hash="));
    assert!(log.lines().any(|l| l == "step,epoch,total,aff,mot,div"));

    let cls = |name: &str| {
        ok(&taen(
            &[
                "--deterministic", "eval-cls", "--ckpt", name, "--manifest", "data/test.json",
                "--way", "3", "--shot", "1..2", "--episodes", "200", "--seed", "5",
            ],
            d,
        ))
    };
    let (x, y) = (cls("a.ckpt"), cls("b.ckpt"));
    assert!(x.contains("shot,way,accuracy,ci_low,ci_high\n1,3,"));
    assert!(x.contains("\n2,3,"));
    // Headers name the checkpoint path; the numbers must agree.
    let body = |s: &str| s.lines().filter(|l| !l.starts_with('#')).collect::<Vec<_>>().join("\n");
    assert_eq!(body(&x), body(&y));

    let det = ok(&taen(
        &[
            "eval-det", "--ckpt", "a.ckpt", "--manifest", "udata/test.json",
            "--proposals", "udata/proposals.json", "--way", "3", "--episodes", "4",
        ],
        d,
    ));
    assert!(det.contains("tiou,mAP\n0.50,"));
    assert!(det.contains("mAP@0.5,avg_mAP\n"));
    let grid = det.lines().skip_while(|l| *l != "tiou,mAP").skip(1).take_while(|l| !l.is_empty());
    assert_eq!(grid.count(), 10);

    let feature = fs::read_dir(d.join("data/features")).unwrap().next().unwrap().unwrap().path();
    let inspect = ok(&taen(&["inspect", "--features", feature.to_str().unwrap()], d));
    assert!(inspect.starts_with("T=") && inspect.contains("d_feat=16"));
}

#[test]
fn exit_codes_distinguish_config_data_and_numeric() {
    let dir = workspace();
    let d = dir.path();
    fs::write(d.join("bad.json"), r#"{"epochs":1,"lerning_rate":0.1}"#).unwrap();
    let out = taen(&["train", "--manifest", "data/train.json", "--out", "x.ckpt", "--config", "bad.json"], d);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lerning_rate"));

    let out = taen(&["train", "--manifest", "missing.json", "--out", "x.ckpt"], d);
    assert_eq!(out.status.code(), Some(3));

    fs::write(d.join("junk.taen"), b"not a feature file").unwrap();
    let out = taen(&["inspect", "--features", "junk.taen"], d);
    assert_eq!(out.status.code(), Some(3));

    let out = taen(&["gradcheck", "--trials", "2", "--tolerance", "0"], d);
    assert_eq!(out.status.code(), Some(4));
    ok(&taen(&["gradcheck", "--trials", "3"], d));

    let out = taen(&["eval-cls", "--manifest", "data/test.json", "--shot", "0"], d);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sweep_and_ablation_reports() {
    let dir = workspace();
    let d = dir.path();
    let run = r#"{"train_manifest":"data/train.json","test_manifest":"data/test.json",
        "train":{"epochs":1,"e":8,"batch_size":8},
        "eval":{"way":3,"shots":[1],"episodes":50},
        "sweep":{"subactions":[1,3],"ways":[2,3],"shots":[1,2]}}"#;
    fs::write(d.join("run.json"), run).unwrap();
    let ab = ok(&taen(&["ablate", "--config", "run.json"], d));
    assert!(ab.contains("variant,shot,way,accuracy,ci_low,ci_high"));
    for v in ["full,", "w_aff=0,", "w_div=0,", "w_mot=0,"] {
        assert!(ab.lines().any(|l| l.starts_with(v)), "missing {v}");
    }
    let sw = ok(&taen(&["sweep", "--config", "run.json", "--axis", "subactions"], d));
    assert!(sw.contains("\nsubactions,1,1,3,"));
    assert!(sw.contains("\nsubactions,3,1,3,"));
    let sw = ok(&taen(&["sweep", "--config", "run.json", "--axis", "ways", "--out", "ways.csv"], d));
    assert!(sw.is_empty());
    let ways = fs::read_to_string(d.join("ways.csv")).unwrap();
    assert!(ways.contains("\nways,2,1,2,") && ways.contains("\nways,3,1,3,"));
}
