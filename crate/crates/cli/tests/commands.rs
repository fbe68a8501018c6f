use std::path::Path;
use std::process::{Command, Output};

fn tun(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tun")).args(args).env("RUST_LOG", "warn").output().expect("run tun")
}

fn ok(args: &[&str]) -> String {
    let out = tun(args);
    assert!(out.status.success(), "tun {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn pd_of_a_square() {
    let dir = tempfile::tempdir().unwrap();
    let cloud = dir.path().join("sq.csv");
    std::fs::write(&cloud, "x,y\n0,0\n1,0\n1,1\n0,1\n").unwrap();
    let csv = ok(&["pd", "--input", p(&cloud)]);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("birth,death,dim"));
    let h1: Vec<&str> = lines.filter(|l| l.ends_with(",1")).collect();
    assert_eq!(h1, ["0.5,0.7071067811865476,1"]);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.csv");
    assert_eq!(tun(&["pd", "--input", p(&missing)]).status.code(), Some(2));
    assert_eq!(tun(&["frobnicate"]).status.code(), Some(2));
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "1,2\nabc\n").unwrap();
    assert_eq!(tun(&["pd", "--input", p(&bad)]).status.code(), Some(2));
    let ckpt = dir.path().join("x.ckpt");
    std::fs::write(&ckpt, "junk").unwrap();
    let pd = dir.path().join("pd.csv");
    std::fs::write(&pd, "birth,death,dim\n0.1,0.5,1\n").unwrap();
    let out = tun(&["predict", "--ckpt", p(&ckpt), "--input", p(&pd)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("incompatible checkpoint"));
}

#[test]
fn pipeline_on_a_small_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let spec = d.join("spec.json");
    std::fs::write(&spec, r#"{"circle": 3, "figure_eight": 3, "split": {"train": 4, "val": 1, "test": 1}}"#).unwrap();
    let corpus = d.join("corpus");
    let summary = ok(&["generate", "--spec", p(&spec), "--out", p(&corpus), "--seed", "3"]);
    assert!(summary.starts_with("6 samples"));

    let bundles = ok(&["featurize", "--corpus", p(&corpus), "--split", "train"]);
    assert_eq!(bundles.lines().count(), 4);
    let first: serde_json::Value = serde_json::from_str(bundles.lines().next().unwrap()).unwrap();
    assert_eq!(first["pd_feats"].as_array().unwrap().len(), 32);
    assert_eq!(first["aux"].as_array().unwrap().len(), 14);

    let cfg = d.join("cfg.json");
    std::fs::write(&cfg, r#"{"n_pc": 32, "max_epochs": 2}"#).unwrap();
    let ckpt = d.join("m.ckpt");
    ok(&["--config", p(&cfg), "train", "--corpus", p(&corpus), "--out", p(&ckpt)]);
    let log = std::fs::read_to_string(d.join("m.log.csv")).unwrap();
    assert_eq!(log.lines().next(), Some("epoch,train_loss,val_loss,val_f1,lr"));
    assert_eq!(log.lines().count(), 3);

    let report = ok(&["evaluate", "--corpus", p(&corpus), "--ckpt", p(&ckpt), "--split", "train"]);
    assert_eq!(report.lines().next(), Some("dataset,method,f1,acc,pre,rec,tp,tn,fp,fn"));
    assert!(report.lines().nth(1).unwrap().starts_with("synthetic,tun,"));
    let report = ok(&["evaluate", "--corpus", p(&corpus), "--method", "topk", "--k", "1", "--dataset", "toy"]);
    assert!(report.lines().nth(1).unwrap().starts_with("toy,top1,"));

    let sample = d.join("s.json");
    let line = std::fs::read_to_string(corpus.join("corpus.jsonl")).unwrap().lines().next().unwrap().to_string();
    std::fs::write(&sample, &line).unwrap();
    let n_points = serde_json::from_str::<serde_json::Value>(&line).unwrap()["diagram"].as_array().unwrap().len();

    let base = ok(&["baseline", "--method", "cs", "--bootstrap", "20", "--seed", "1", "--input", p(&sample)]);
    assert_eq!(base.lines().next(), Some("birth,death,label_pred"));
    assert_eq!(base.lines().count(), n_points + 1);

    let pred = d.join("pred.csv");
    ok(&["predict", "--ckpt", p(&ckpt), "--input", p(&sample), "--out", p(&pred)]);
    let text = std::fs::read_to_string(&pred).unwrap();
    assert_eq!(text.lines().next(), Some("birth,death,prob_significant,label_pred"));
    assert_eq!(text.lines().count(), n_points.min(32) + 1);

    let svg = d.join("plot.svg");
    ok(&["render", "--input", p(&sample), "--pred", p(&pred), "--out", p(&svg)]);
    let a = std::fs::read(&svg).unwrap();
    ok(&["render", "--input", p(&sample), "--pred", p(&pred), "--out", p(&svg)]);
    assert_eq!(a, std::fs::read(&svg).unwrap());
    assert!(String::from_utf8(a).unwrap().starts_with("<svg"));
}

#[test]
fn predict_from_csv_inputs_requires_cloud_for_full_model() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let spec = d.join("spec.json");
    std::fs::write(&spec, r#"{"circle": 3, "split": {"train": 2, "val": 1, "test": 0}}"#).unwrap();
    let corpus = d.join("corpus");
    ok(&["generate", "--spec", p(&spec), "--out", p(&corpus), "--seed", "1"]);
    let cfg = d.join("cfg.json");
    std::fs::write(&cfg, r#"{"n_pc": 16, "max_epochs": 1}"#).unwrap();
    let ckpt = d.join("m.ckpt");
    ok(&["--config", p(&cfg), "train", "--corpus", p(&corpus), "--out", p(&ckpt)]);

    let cloud = d.join("cloud.csv");
    let pts: String = (0..40)
        .map(|i| {
            let t = i as f64 / 40.0 * std::f64::consts::TAU;
            format!("{},{}\n", t.cos(), t.sin())
        })
        .collect();
    std::fs::write(&cloud, format!("x,y\n{pts}")).unwrap();
    let pd = d.join("pd.csv");
    std::fs::write(&pd, ok(&["pd", "--input", p(&cloud)])).unwrap();
    assert_eq!(tun(&["predict", "--ckpt", p(&ckpt), "--input", p(&pd)]).status.code(), Some(2));
    let out = ok(&["predict", "--ckpt", p(&ckpt), "--input", p(&pd), p(&cloud)]);
    assert_eq!(out.lines().count(), 2, "a regular polygon has one loop: {out}");
}
