use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sdf_yolo::data::load_manifest;
use sdf_yolo::eval::EvalReport;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_sdf-yolo"));
    c.env_remove("SDF_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(dir).unwrap().display().to_string(), fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

/// Three 640 px regions: annotated train, annotated val, empty train.
fn small_data(dir: &Path) {
    let cfg = dir.join("synth.toml");
    fs::write(&cfg, "[synth]\nsplits = [\"train\", \"val\", \"train\"]\n").unwrap();
    let o = run(&[
        "synth",
        "--config",
        p(&cfg),
        "--seed",
        "7",
        "--regions",
        "3",
        "--region-size",
        "640",
        "--blobs",
        "2",
        "--empty",
        "1",
        "--out",
        p(&dir.join("data")),
    ]);
    assert!(o.status.success(), "{}", text(&o));
}

/// Initial-weight checkpoint from a zero-epoch run.
fn fresh_checkpoint(dir: &Path) -> std::path::PathBuf {
    let o = run(&["train", "--toy", "--epochs", "0", "--data", p(&dir.join("data")), "--out", p(&dir.join("run"))]);
    assert!(o.status.success(), "{}", text(&o));
    dir.join("run/best.ckpt")
}

#[test]
fn synth_is_reproducible_and_reloads() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = run(&["synth", "--seed", "7", "--regions", "4", "--region-size", "640", "--out", p(out)]);
        assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    }
    assert!(tree(&a) == tree(&b));
    assert_eq!(load_manifest(&a.join("manifest.json")).unwrap().len(), 4);

    let empty = dir.path().join("empty");
    let o = run(&["synth", "--regions", "0", "--out", p(&empty)]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    assert!(load_manifest(&empty.join("manifest.json")).unwrap().is_empty());
}

#[test]
fn train_reports_missing_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere");
    let o = run(&["train", "--toy", "--data", p(&missing), "--out", p(&dir.path().join("run"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o).contains(p(&missing.join("manifest.json"))), "{}", text(&o));

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[train]\nepochz = 3\n").unwrap();
    let o = run(&["train", "--config", p(&bad)]);
    assert_eq!(o.status.code(), Some(2), "{}", text(&o));
    assert_eq!(run(&["train", "--epochs", "x"]).status.code(), Some(2));
}

#[test]
fn short_training_run_logs_every_epoch() {
    let dir = tempfile::tempdir().unwrap();
    small_data(dir.path());
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "seed = 4\n[train]\nbatch_size = 2\nsteps_per_epoch = 1\nval_split = \"train\"\n[model]\nwidth_multiple = 0.25\nhead_channels = 32\n").unwrap();
    let mut logs = Vec::new();
    for run_dir in ["r1", "r2"] {
        let out = dir.path().join(run_dir);
        let o = run(&["train", "--config", p(&cfg), "--epochs", "2", "--data", p(&dir.path().join("data")), "--out", p(&out)]);
        assert_eq!(o.status.code(), Some(0), "{}", text(&o));
        assert!(text(&o).contains("best val AP@0.5"));
        logs.push(fs::read_to_string(out.join("train_log.jsonl")).unwrap());
    }
    assert_eq!(logs[0].lines().count(), 2);
    assert_eq!(logs[0], logs[1]);
}

#[test]
fn infer_header_flags_and_pass_count() {
    let dir = tempfile::tempdir().unwrap();
    small_data(dir.path());
    let ck = fresh_checkpoint(dir.path());
    let data = dir.path().join("data");
    let infer = |extra: &[&str], csv: &str| {
        let mut args = vec!["infer", "--checkpoint", p(&ck), "--data", p(&data), "--split", "train"];
        let out = dir.path().join(csv);
        let out_s = out.to_str().unwrap().to_string();
        args.extend_from_slice(&["--out", &out_s]);
        args.extend_from_slice(extra);
        let o = bin().args(&args).output().unwrap();
        (o, out)
    };

    let (o, csv) = infer(&[], "a.csv");
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    let t = text(&o);
    assert!(t.contains("conf_threshold=0.45 nms_iou=0.4 min_size=35px tta_flip=on"), "{t}");
    assert!(t.contains("forward passes 4"), "{t}");
    assert!(fs::read_to_string(&csv).unwrap().starts_with("region_id,"));

    let (o, _) = infer(&["--no-tta"], "b.csv");
    assert!(text(&o).contains("forward passes 2") && text(&o).contains("tta_flip=off"), "{}", text(&o));

    let cfg = dir.path().join("inf.toml");
    fs::write(&cfg, "[inference]\nconf_threshold = 0.6\nmin_size = 20.0\n").unwrap();
    let (o, _) = infer(&["--config", p(&cfg), "--conf", "0.5"], "c.csv");
    assert!(text(&o).contains("conf_threshold=0.5 nms_iou=0.4 min_size=20px"), "{}", text(&o));

    let (o, _) = infer(&["--conf", "1.01"], "d.csv");
    assert_eq!(o.status.code(), Some(2), "{}", text(&o));

    // worker count does not change the output
    let one = dir.path().join("one.csv");
    let o = bin()
        .env("SDF_THREADS", "1")
        .args(["infer", "--checkpoint", p(&ck), "--data", p(&data), "--split", "train", "--out", p(&one)])
        .output()
        .unwrap();
    assert!(o.status.success());
    assert_eq!(fs::read(&one).unwrap(), fs::read(&csv).unwrap());
    let o = bin().env("SDF_THREADS", "zero").args(["gradcheck"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn eval_scores_csv_against_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    small_data(dir.path());
    let data = dir.path().join("data");
    let recs = load_manifest(&data.join("manifest.json")).unwrap();
    let mut perfect = String::from("region_id,center_x,center_y,width,height,score\n");
    for r in recs.iter().filter(|r| r.split.as_str() == "train") {
        for a in &r.annotations {
            perfect.push_str(&format!("{},{},{},50,50,1\n", r.region_id(), a.x, a.y));
        }
    }
    let eval = |csv: &str, name: &str| {
        let f = dir.path().join(format!("{name}.csv"));
        fs::write(&f, csv).unwrap();
        let out = dir.path().join(name);
        let o = run(&["eval", "--detections", p(&f), "--data", p(&data), "--split", "train", "--out", p(&out)]);
        (o, out)
    };

    let (o, out) = eval(&perfect, "perfect");
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    let rep = EvalReport::load(&out.join("report.json")).unwrap();
    assert_eq!((rep.precision, rep.recall, rep.f1, rep.ap), (1.0, 1.0, 1.0, 1.0));
    assert!(fs::read_to_string(out.join("froc.csv")).unwrap().starts_with("fppi,sensitivity\n"));
    let shown = run(&["report", p(&out.join("report.json"))]);
    assert_eq!(text(&shown), rep.render());

    let (o, out) = eval("region_id,center_x,center_y,width,height,score\n", "none");
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    let rep = EvalReport::load(&out.join("report.json")).unwrap();
    assert_eq!((rep.recall, rep.ap), (0.0, 0.0));

    let (o, _) = eval("region_id,center_x,center_y,width,height,score\nregion_999,1,1,50,50,0.9\n", "unknown");
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o).contains("region_999"), "{}", text(&o));
}

#[test]
fn gradcheck_table_and_fault_injection() {
    let o = run(&["gradcheck"]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    let out = String::from_utf8(o.stdout).unwrap();
    let rows: Vec<&str> = out.lines().skip(1).collect();
    let names: Vec<&str> = rows.iter().map(|l| l.split_whitespace().next().unwrap()).collect();
    assert_eq!(names, ["ConvBlock", "C3k2", "SPPF", "C2PSA", "CoordAtt", "DetectHead"]);
    assert!(rows.iter().all(|l| l.ends_with("pass")));

    let o = run(&["gradcheck", "--corrupt-backward"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("ConvBlock"));
}

#[test]
fn shipped_config_parses() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/toy.toml");
    let cfg = sdf_yolo::cli::RunConfig::load(&path).unwrap();
    assert_eq!(cfg.model.width_multiple, 0.25);
    cfg.train.validate().unwrap();
    cfg.inference.validate().unwrap();
    assert_eq!(cfg.inference, sdf_yolo::inference::InferenceConfig::default());
    let again = sdf_yolo::cli::RunConfig::parse(&cfg.to_toml().unwrap()).unwrap();
    assert_eq!(again, cfg);
}
