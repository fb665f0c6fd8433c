use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn sapcovid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sapcovid")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> serde_json::Value {
    let out = sapcovid(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap_or(serde_json::Value::Null)
}

fn code(args: &[&str]) -> i32 {
    sapcovid(args).status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Prepared {
    _dir: tempfile::TempDir,
    root: PathBuf,
    manifest: PathBuf,
    feats: PathBuf,
}

fn prepare() -> Prepared {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let fx = root.join("fx");
    ok(&["fixture", "generate", "--shape", "small", "--out", s(&fx), "--seed", "3"]);
    let reports = root.join("bands.csv");
    ok(&["bandwidth", "scan", "--manifest", s(&fx.join("manifest.csv")), "--out", s(&reports)]);
    let manifest = root.join("filtered.csv");
    let stats = root.join("stats.json");
    ok(&[
        "dataset", "filter", "--manifest", s(&fx.join("manifest.csv")), "--reports", s(&reports), "--out",
        s(&manifest), "--stats", s(&stats),
    ]);
    let feats = root.join("feats");
    ok(&["features", "extract", "--manifest", s(&manifest), "--kind", "mfcc,spectrogram", "--out", s(&feats)]);
    Prepared {
        _dir: dir,
        root,
        manifest,
        feats,
    }
}

fn first_dev_id(manifest: &Path) -> String {
    let mut rdr = csv::Reader::from_path(manifest).unwrap();
    rdr.records()
        .map(|r| r.unwrap())
        .find(|r| &r[3] == "dev")
        .map(|r| r[0].to_string())
        .unwrap()
}

fn train_args<'a>(p: &'a Prepared, out: &'a str) -> Vec<String> {
    [
        "train", "--manifest", s(&p.manifest), "--features", s(&p.feats.join("mfcc")), "--feature", "mfcc",
        "--pooling", "sap", "--k", "128", "--steps", "40", "--eval-every", "20", "--batch-size", "4", "--seed", "7",
        "--out", out,
    ]
    .iter()
    .map(|a| a.to_string())
    .collect()
}

#[test]
fn full_pipeline() {
    let p = prepare();
    let stats: serde_json::Value = serde_json::from_str(&fs::read_to_string(p.root.join("stats.json")).unwrap()).unwrap();
    assert_eq!(stats["before"]["train"]["total"], 24);
    assert_eq!(stats["after"]["train"]["total"], 22);
    assert_eq!(stats["after"]["dev"]["total"], 15);
    assert_eq!(stats["after"]["test"]["total"], 8);
    let dev_id = first_dev_id(&p.manifest);
    assert!(p.feats.join(format!("mfcc/{dev_id}.feat")).is_file());
    assert!(p.feats.join(format!("mfcc/{dev_id}.json")).is_file());
    let n_feat = fs::read_dir(p.feats.join("mfcc"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "feat"))
        .count();
    assert_eq!(n_feat, 22 + 15 + 8);

    let ckpt = p.root.join("a.ckpt");
    let args = train_args(&p, s(&ckpt));
    let summary = ok(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert!(summary["best_dev_uar"].as_f64().is_some());
    let history = fs::read_to_string(p.root.join("a.ckpt.history.csv")).unwrap();
    assert_eq!(history.lines().count(), 3);

    let report = ok(&[
        "evaluate", "--ckpt", s(&ckpt), "--manifest", s(&p.manifest), "--features", s(&p.feats.join("mfcc")),
    ]);
    assert_eq!(report["uar"].as_f64(), summary["best_dev_uar"].as_f64());
    // blind split has no labels to score against
    assert_eq!(
        code(&[
            "evaluate", "--ckpt", s(&ckpt), "--manifest", s(&p.manifest), "--features", s(&p.feats.join("mfcc")),
            "--split", "test",
        ]),
        2
    );

    let wav = p.root.join(format!("fx/{dev_id}.wav"));
    let att = p.root.join("att");
    let info = ok(&[
        "attention", "--ckpts", &format!("{},{}", s(&ckpt), s(&ckpt)), "--wav", s(&wav), "--feature", "mfcc", "--out",
        s(&att),
    ]);
    assert!(info["png"].as_str().unwrap().ends_with(&format!("{dev_id}_attention.png")));
    let mut rdr = csv::Reader::from_path(att.join(format!("{dev_id}_attention.csv"))).unwrap();
    let total: f64 = rdr.records().map(|r| r.unwrap()[1].parse::<f64>().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-6);

    let aug = p.root.join("aug");
    let st = ok(&["augment", "--manifest", s(&p.manifest), "--out-dir", s(&aug), "--seed", "1"]);
    assert_eq!(st["train"]["total"], 44);
    assert_eq!(st["dev"]["total"], 15);
    assert!(aug.join("manifest.csv").is_file());
}

#[test]
fn cnn_training_and_sweep() {
    let p = prepare();
    let spec = s(&p.feats.join("spectrogram")).to_string();
    let base = [
        "train", "--manifest", s(&p.manifest), "--features", &spec, "--feature", "spectrogram", "--family", "cnn",
        "--steps", "20", "--eval-every", "10", "--batch-size", "4", "--out",
    ];
    let out = p.root.join("cnn.ckpt");
    let mut args = base.to_vec();
    args.push(s(&out));
    // default warmup (1400 steps) exceeds a 20-step run
    assert_eq!(code(&args), 2);

    let cfg = p.root.join("exp.toml");
    fs::write(&cfg, "seed = 11\n[train]\ncnn_warmup_steps = 5\n").unwrap();
    args.extend(["--config", s(&cfg)]);
    ok(&args);

    let table = p.root.join("sweep.csv");
    let res = ok(&[
        "sweep", "--manifest", s(&p.manifest), "--features-root", s(&p.feats), "--features", "mfcc", "--poolings",
        "mean,sap", "--ks", "128", "--steps", "20", "--eval-every", "10", "--jobs", "2", "--out", s(&table),
    ]);
    assert_eq!(res["n_cells"], 2);
    let text = fs::read_to_string(&table).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "feature,pooling,k=128");
    assert!(lines[1].starts_with("mfcc,mean,") && lines[2].starts_with("mfcc,sap,"));
    assert!(text.contains('*'));
    assert!(p.root.join("sweep_cells.csv").is_file());
}

#[test]
fn same_seed_same_bytes() {
    let p = prepare();
    let (a, b) = (p.root.join("a.ckpt"), p.root.join("b.ckpt"));
    for out in [&a, &b] {
        let args = train_args(&p, s(out));
        ok(&args.iter().map(String::as_str).collect::<Vec<_>>());
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(
        fs::read(p.root.join("a.ckpt.history.csv")).unwrap(),
        fs::read(p.root.join("b.ckpt.history.csv")).unwrap()
    );
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&[]), 2);
    assert_eq!(code(&["--version"]), 0);
    assert_eq!(code(&["dataset", "stats", "--manifest", s(&d.join("absent.csv"))]), 1);

    let dup = d.join("dup.csv");
    fs::write(&dup, "id,wav_path,label,split\na,a.wav,positive,train\na,b.wav,negative,dev\n").unwrap();
    assert_eq!(code(&["dataset", "stats", "--manifest", s(&dup)]), 2);

    let good = d.join("m.csv");
    fs::write(&good, "id,wav_path,label,split\na,a.wav,positive,train\nb,b.wav,negative,dev\n").unwrap();
    let train = |extra: &[&str]| {
        let mut a = vec!["train", "--manifest", s(&good), "--features", s(d), "--out", "x.ckpt", "--steps", "20"];
        a.extend_from_slice(extra);
        code(&a)
    };
    assert_eq!(train(&["--k", "100", "--eval-every", "10"]), 2);
    assert_eq!(train(&["--eval-every", "7"]), 2);
    // no feature files on disk
    assert_eq!(train(&["--eval-every", "10"]), 2);
    assert_eq!(train(&["--eval-every", "10", "--feature", "nosuchtag"]), 2);

    let cfg = d.join("bad.toml");
    fs::write(&cfg, "[model]\nwidth = 3\n").unwrap();
    assert_eq!(code(&["--config", s(&cfg), "dataset", "stats", "--manifest", s(&good)]), 2);
}
