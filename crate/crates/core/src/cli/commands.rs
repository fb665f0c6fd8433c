use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{check_k, ExperimentConfig};
use super::sweep::{run_sweep, write_cells, write_table, SweepPlan};
use super::*;
use crate::analysis::{collect_attention, export_trace};
use crate::audio_io::{detect_bandwidth, normalize_amplitude, read_wav, BandReport, WavClip};
use crate::augment::{augment_manifest, AUG_SUFFIX};
use crate::dataset::fixture::{generate_fixture, FixtureSpec};
use crate::dataset::{load_manifest, write_manifest, Manifest, Split};
use crate::interchange::{read_feat_with, write_feat, write_sidecar, FeatSidecar, FeatureMatrix, TagRegistry};
use crate::metrics::MetricsReport;
use crate::model::{read_checkpoint, write_checkpoint, Architecture, Classifier, CnnConfig, HeadConfig};
use crate::spectral::{FeatureKind, SpectralExtractor};
use crate::training::{evaluate, train, write_history, Example};

pub(super) fn dispatch(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = Some(s);
    }
    if let Some(s) = cfg.seed {
        cfg.train.seed = s;
        cfg.augment.seed = s;
    }
    match cli.command {
        Command::Features(FeaturesCmd::Extract(a)) => extract(a),
        Command::Bandwidth(BandwidthCmd::Scan(a)) => scan(&cfg, a),
        Command::Dataset(DatasetCmd::Filter(a)) => filter(&cfg, a),
        Command::Dataset(DatasetCmd::Stats(a)) => print_json(&load_manifest(&a.manifest)?.stats()),
        Command::Augment(a) => augment(&cfg, a),
        Command::Train(a) => train_cmd(cfg, a),
        Command::Evaluate(a) => evaluate_cmd(&cfg, a),
        Command::Sweep(a) => sweep_cmd(cfg, a),
        Command::Attention(a) => attention(&cfg, a),
        Command::Fixture(FixtureCmd::Generate(a)) => fixture(&cfg, a),
    }
}

fn print_json<T: Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    ValidationError(msg.into()).into()
}

fn load_clip(path: &Path) -> Result<WavClip> {
    read_wav(path).with_context(|| format!("reading {}", path.display()))
}

/// Where the features of utterance `id` live inside a per-tag directory.
pub fn feat_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.feat"))
}

/// Copy of `m` with every wav path made absolute, so it can be written anywhere.
fn absolutize(m: &Manifest) -> Result<Manifest> {
    let entries = m
        .entries()
        .iter()
        .map(|e| {
            let mut e = e.clone();
            e.wav_path = std::path::absolute(m.resolve_wav(&e))?.to_string_lossy().into_owned();
            Ok(e)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Manifest::new(entries)?)
}

fn parse_kinds(s: &str) -> Result<Vec<FeatureKind>> {
    if s.trim() == "all" {
        return Ok(FeatureKind::ALL.to_vec());
    }
    s.split(',')
        .map(|k| k.trim().parse::<FeatureKind>().map_err(|e| invalid(e.to_string())))
        .collect()
}

fn extract(a: ExtractArgs) -> Result<()> {
    let kinds = parse_kinds(&a.kind)?;
    let jobs: Vec<(String, PathBuf)> = match (&a.manifest, &a.wav) {
        (Some(m), _) => {
            let m = load_manifest(m)?;
            m.entries().iter().map(|e| (e.id.clone(), m.resolve_wav(e))).collect()
        }
        (None, Some(w)) => {
            let id = w.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            vec![(id, w.clone())]
        }
        (None, None) => return Err(invalid("one of --manifest or --wav is required")),
    };
    for k in &kinds {
        fs::create_dir_all(a.out.join(k.tag()))?;
    }
    let ex = SpectralExtractor::default();
    jobs.par_iter().try_for_each(|(id, wav)| -> Result<()> {
        let (clip, _) = normalize_amplitude(&load_clip(wav)?);
        for &k in &kinds {
            let m = ex.extract(k, &clip).with_context(|| format!("{k} features for {id}"))?;
            let path = feat_path(&a.out.join(k.tag()), id);
            write_feat(&m, &path)?;
            write_sidecar(
                &path,
                &FeatSidecar {
                    extractor: format!("sapcovid {k}"),
                    extractor_version: env!("CARGO_PKG_VERSION").into(),
                    source_wav: Some(wav.to_string_lossy().into_owned()),
                    note: None,
                },
            )?;
        }
        Ok(())
    })?;
    info!("extracted {} kinds for {} recordings", kinds.len(), jobs.len());
    print_json(&serde_json::json!({
        "recordings": jobs.len(),
        "kinds": kinds.iter().map(|k| k.tag()).collect::<Vec<_>>(),
        "out": a.out,
    }))
}

#[derive(Debug, Serialize, Deserialize)]
struct ReportRow {
    id: String,
    split: String,
    label: String,
    high_band_ratio: f64,
    is_narrowband: bool,
}

fn scan_manifest(m: &Manifest, cutoff_hz: f64, threshold: f64) -> Result<Vec<ReportRow>> {
    m.entries()
        .par_iter()
        .map(|e| {
            let r = detect_bandwidth(&load_clip(&m.resolve_wav(e))?, cutoff_hz, threshold)?;
            Ok(ReportRow {
                id: e.id.clone(),
                split: e.split.to_string(),
                label: e.label.as_str().into(),
                high_band_ratio: r.high_band_ratio,
                is_narrowband: r.is_narrowband,
            })
        })
        .collect()
}

fn narrowband_counts(rows: &[ReportRow]) -> BTreeMap<&str, usize> {
    let mut counts = BTreeMap::new();
    for r in rows {
        *counts.entry(r.split.as_str()).or_insert(0) += usize::from(r.is_narrowband);
    }
    counts
}

fn scan(cfg: &ExperimentConfig, a: ScanArgs) -> Result<()> {
    let cutoff = a.cutoff_hz.unwrap_or(cfg.bandwidth.cutoff_hz);
    let threshold = a.threshold.unwrap_or(cfg.bandwidth.threshold);
    let m = load_manifest(&a.manifest)?;
    let rows = scan_manifest(&m, cutoff, threshold)?;
    let mut w = csv::Writer::from_path(&a.out)?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    print_json(&serde_json::json!({
        "scanned": rows.len(),
        "cutoff_hz": cutoff,
        "threshold": threshold,
        "narrowband": narrowband_counts(&rows),
    }))
}

fn filter(cfg: &ExperimentConfig, a: FilterArgs) -> Result<()> {
    let cutoff = a.cutoff_hz.unwrap_or(cfg.bandwidth.cutoff_hz);
    let threshold = a.threshold.unwrap_or(cfg.bandwidth.threshold);
    let m = load_manifest(&a.manifest)?;
    let rows = match &a.reports {
        Some(p) => csv::Reader::from_path(p)?
            .deserialize()
            .collect::<Result<Vec<ReportRow>, _>>()
            .with_context(|| format!("reading {}", p.display()))?,
        None => scan_manifest(&m, cutoff, threshold)?,
    };
    let reports: HashMap<String, BandReport> = rows
        .into_iter()
        .map(|r| {
            let rep = BandReport {
                high_band_ratio: r.high_band_ratio,
                is_narrowband: r.is_narrowband,
                cutoff_hz: cutoff,
            };
            (r.id, rep)
        })
        .collect();
    let kept = absolutize(&m.filter_narrowband(&reports)?)?;
    write_manifest(&kept, &a.out)?;
    let (before, after) = (m.stats(), kept.stats());
    let removed: BTreeMap<&str, usize> = [Split::Train, Split::Dev]
        .into_iter()
        .map(|s| (s.as_str(), before.get(s).total - after.get(s).total))
        .collect();
    let summary = serde_json::json!({ "before": before, "after": after, "removed": removed });
    if let Some(p) = &a.stats {
        fs::write(p, serde_json::to_string_pretty(&summary)?)?;
    }
    print_json(&summary)
}

fn augment(cfg: &ExperimentConfig, a: AugmentArgs) -> Result<()> {
    let m = load_manifest(&a.manifest)?;
    let out = augment_manifest(&m, &cfg.augment, &a.out_dir)?;
    write_manifest(&out, a.out_dir.join("manifest.csv"))?;
    print_json(&out.stats())
}

/// Labeled examples of one split, read from `<dir>/<id>.feat`.
pub(super) fn load_examples(
    m: &Manifest,
    split: Split,
    dir: &Path,
    tag: &str,
    registry: &TagRegistry,
) -> Result<Vec<Example>> {
    let entries: Vec<_> = m.split(split).collect();
    let missing: Vec<PathBuf> = entries
        .iter()
        .map(|e| feat_path(dir, &e.id))
        .filter(|p| !p.is_file())
        .collect();
    if let Some(first) = missing.first() {
        return Err(invalid(format!(
            "{} {split} feature files missing (first: {})",
            missing.len(),
            first.display()
        )));
    }
    entries
        .par_iter()
        .map(|e| {
            let label = e
                .label
                .class()
                .ok_or_else(|| invalid(format!("{split} item `{}` has no label", e.id)))?;
            let path = feat_path(dir, &e.id);
            let features = read_feat_with(&path, registry).with_context(|| format!("reading {}", path.display()))?;
            if features.source_tag() != tag {
                return Err(invalid(format!(
                    "{} holds `{}` features, expected `{tag}`",
                    path.display(),
                    features.source_tag()
                )));
            }
            Ok(Example {
                id: e.id.clone(),
                features,
                label,
            })
        })
        .collect()
}

/// Applies the experiment's bandwidth-filter and augmentation switches.
pub(super) fn select_entries(m: &Manifest, bandwidth_filter: bool, augmentation: bool) -> Result<Manifest> {
    let mut kept = Vec::with_capacity(m.len());
    for e in m.entries() {
        if !augmentation && e.id.ends_with(AUG_SUFFIX) {
            continue;
        }
        if bandwidth_filter && e.split != Split::Test {
            match e.is_narrowband {
                Some(true) => continue,
                Some(false) => {}
                None => {
                    return Err(invalid(format!(
                        "`{}` has no narrow-band annotation; run `dataset filter` first",
                        e.id
                    )))
                }
            }
        }
        kept.push(e.clone());
    }
    let dropped_aug = m.entries().iter().filter(|e| e.id.ends_with(AUG_SUFFIX)).count();
    if !augmentation && dropped_aug > 0 {
        warn!("ignoring {dropped_aug} augmented recordings; pass --augmentation to train on them");
    }
    let out = Manifest::new(kept)?;
    Ok(match m.base_dir() {
        Some(d) => out.with_base_dir(d),
        None => out,
    })
}

fn architecture(cfg: &ExperimentConfig, dim: usize) -> Result<Architecture> {
    let s = &cfg.model;
    check_k(s.family, s.k)?;
    Ok(match s.family {
        Family::Head => Architecture::Head(HeadConfig {
            input_dim: dim,
            k: s.k,
            pooling: s.pooling,
            dropout_p: s.dropout_p,
        }),
        Family::Cnn => {
            let c = CnnConfig {
                dropout_p: s.dropout_p,
                ..CnnConfig::default()
            };
            if s.pooling != Pooling::Sap {
                return Err(invalid("the cnn family always pools with sap"));
            }
            if dim != c.input_bins {
                return Err(invalid(format!(
                    "the cnn family needs {}-bin spectrogram features, `{}` has dim {dim}",
                    c.input_bins, s.feature
                )));
            }
            Architecture::Cnn(c)
        }
    })
}

fn feature_dim(registry: &TagRegistry, tag: &str) -> Result<usize> {
    registry
        .dim_of(tag)
        .ok_or_else(|| invalid(format!("unknown feature tag `{tag}`; declare it under [tags]")))
}

fn train_cmd(mut cfg: ExperimentConfig, a: TrainArgs) -> Result<()> {
    if let Some(f) = a.feature {
        cfg.model.feature = f;
    }
    if let Some(p) = a.pooling {
        cfg.model.pooling = p;
    }
    if let Some(k) = a.k {
        cfg.model.k = k;
    }
    if let Some(f) = a.family {
        cfg.model.family = f;
    }
    if let Some(s) = a.steps {
        cfg.train.total_steps = s;
    }
    if let Some(e) = a.eval_every {
        cfg.train.eval_every = e;
    }
    if let Some(b) = a.batch_size {
        cfg.train.batch_size = b;
    }
    cfg.train.balanced_sampling |= a.balanced_sampling;
    cfg.bandwidth_filter |= a.bandwidth_filter;
    cfg.augmentation |= a.augmentation;
    cfg.train.validate(cfg.model.family)?;

    let registry = cfg.registry();
    let tag = cfg.model.feature.clone();
    let arch = architecture(&cfg, feature_dim(&registry, &tag)?)?;
    let m = select_entries(&load_manifest(&a.manifest)?, cfg.bandwidth_filter, cfg.augmentation)?;
    let train_set = load_examples(&m, Split::Train, &a.features, &tag, &registry)?;
    let dev_set = load_examples(&m, Split::Dev, &a.features, &tag, &registry)?;
    info!("training {} on {} train / {} dev items", cfg.model.family, train_set.len(), dev_set.len());

    let model = Classifier::new(arch, &tag, cfg.train.seed);
    let out = train(model, &train_set, &dev_set, &cfg.train)?;
    write_checkpoint(&out.best, &a.out)?;
    let history = a.history.unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".history.csv");
        p.into()
    });
    write_history(&out.history, &history)?;
    print_json(&serde_json::json!({
        "checkpoint": a.out,
        "history": history,
        "best_step": out.best.meta.step,
        "best_dev_uar": out.best.meta.dev_uar,
        "first_batch_loss": out.first_batch_loss,
    }))
}

fn evaluate_cmd(cfg: &ExperimentConfig, a: EvaluateArgs) -> Result<()> {
    let ckpt = read_checkpoint(&a.ckpt).with_context(|| format!("reading {}", a.ckpt.display()))?;
    let m = load_manifest(&a.manifest)?;
    let set = load_examples(&m, a.split.into(), &a.features, ckpt.model.feature(), &cfg.registry())?;
    let (_, confusion) = evaluate(&ckpt.model, &set)?;
    let report = MetricsReport::from_confusion(&confusion)?;
    let json = report.to_json();
    if let Some(p) = &a.out {
        fs::write(p, &json)?;
    }
    println!("{json}");
    Ok(())
}

fn sweep_cmd(mut cfg: ExperimentConfig, a: SweepArgs) -> Result<()> {
    if let Some(f) = a.features {
        cfg.sweep.features = f;
    }
    if let Some(p) = a.poolings {
        cfg.sweep.poolings = p;
    }
    if let Some(k) = a.ks {
        cfg.sweep.ks = k;
    }
    if let Some(j) = a.jobs {
        cfg.sweep.jobs = j;
    }
    if let Some(s) = a.steps {
        cfg.train.total_steps = s;
    }
    if let Some(e) = a.eval_every {
        cfg.train.eval_every = e;
    }
    cfg.train.validate(Family::Head)?;
    for &k in &cfg.sweep.ks {
        check_k(Family::Head, k)?;
    }
    if cfg.sweep.features.is_empty() || cfg.sweep.poolings.is_empty() || cfg.sweep.ks.is_empty() {
        return Err(invalid("sweep needs at least one feature, pooling and k"));
    }
    let registry = cfg.registry();
    let m = select_entries(&load_manifest(&a.manifest)?, cfg.bandwidth_filter, cfg.augmentation)?;
    let mut data = HashMap::new();
    let mut dims = HashMap::new();
    for tag in &cfg.sweep.features {
        dims.insert(tag.clone(), feature_dim(&registry, tag)?);
        let dir = a.features_root.join(tag);
        let tr = load_examples(&m, Split::Train, &dir, tag, &registry)?;
        let dv = load_examples(&m, Split::Dev, &dir, tag, &registry)?;
        data.insert(tag.clone(), (tr, dv));
    }
    let plan = SweepPlan {
        features: cfg.sweep.features.clone(),
        poolings: cfg.sweep.poolings.clone(),
        ks: cfg.sweep.ks.clone(),
        dims,
        dropout_p: cfg.model.dropout_p,
        train: cfg.train.clone(),
    };
    let cells = run_sweep(&plan, &data, cfg.sweep.jobs)?;
    write_table(&plan, &cells, &a.out)?;
    let stem = a.out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "sweep".into());
    let cells_path = a.out.with_file_name(format!("{stem}_cells.csv"));
    write_cells(&cells, &cells_path)?;
    print_json(&serde_json::json!({ "table": a.out, "cells": cells_path, "n_cells": cells.len() }))
}

fn attention(cfg: &ExperimentConfig, a: AttentionArgs) -> Result<()> {
    let registry = cfg.registry();
    let ckpts = a
        .ckpts
        .iter()
        .map(|p| read_checkpoint(p).with_context(|| format!("reading {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    if let Some(c) = ckpts.iter().find(|c| c.model.feature() != a.feature) {
        return Err(invalid(format!(
            "checkpoint trained on `{}`, --feature is `{}`",
            c.model.feature(),
            a.feature
        )));
    }
    let (clip, _) = normalize_amplitude(&load_clip(&a.wav)?);
    let id = a.wav.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let ex = SpectralExtractor::default();
    let spectrogram = ex.spectrogram_257(&clip)?;
    let features: FeatureMatrix = match (a.feature.parse::<FeatureKind>(), &a.feat) {
        (_, Some(p)) => read_feat_with(p, &registry).with_context(|| format!("reading {}", p.display()))?,
        (Ok(k), None) => ex.extract(k, &clip)?,
        (Err(_), None) => return Err(invalid(format!("`{}` is not spectral; pass --feat", a.feature))),
    };
    let trace = collect_attention(&ckpts, &id, &features)?;
    print_json(&export_trace(&trace, &spectrogram, &a.out)?)
}

fn fixture(cfg: &ExperimentConfig, a: FixtureArgs) -> Result<()> {
    let seed = cfg.seed();
    let mut spec = match a.shape {
        FixtureShape::Corpus => FixtureSpec::corpus_shaped(seed),
        FixtureShape::Small => FixtureSpec::small(seed),
    };
    if let Some(d) = a.duration_s {
        if !(d > 0.0 && d.is_finite()) {
            return Err(invalid(format!("--duration-s must be positive, got {d}")));
        }
        spec.duration_s = d;
    }
    let m = generate_fixture(&spec, &a.out)?;
    print_json(&m.stats())
}
