//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fail.

mod common;

use std::collections::HashMap;
use std::f64::consts::{LN_2, PI};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sapcovid::analysis::{collect_attention, export_trace};
use sapcovid::audio_io::{
    detect_bandwidth, read_wav, write_wav, BandReport, WavClip, DEFAULT_CUTOFF_HZ, DEFAULT_NARROWBAND_THRESHOLD,
};
use sapcovid::augment::{augment_manifest, pitch_randomize, AugmentSpec, AUG_SUFFIX};
use sapcovid::dataset::fixture::{generate_fixture, lowpass_brickwall, white_noise, FixtureSpec};
use sapcovid::dataset::{Label, Split};
use sapcovid::interchange::{decode_feat, encode_feat, read_feat_with, write_feat, FeatError, FeatureMatrix, TagRegistry};
use sapcovid::metrics::Class;
use sapcovid::model::{build_loss, Architecture, Checkpoint, CheckpointMeta, Classifier, Mode, PoolingLayer, Pooling};
use sapcovid::spectral::{FeatureKind, SpectralExtractor};
use sapcovid::tensor::{
    finite_diff_check, finite_diff_check_vs_f64, GradBuffer, GradCheckOptions, GradCheckReport, ParamStore, Real, Tensor,
};
use sapcovid::training::{adamw_step, lr_at, separable_task, train, AdamWConfig, OptimState, TrainConfig};
use sapcovid::model::Family;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn sap_mean_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (t, k) = (rng.random_range(1..=50), rng.random_range(1..=64));
        let data: Vec<f64> = (0..t * k).map(|_| rng.random_range(-3.0..3.0)).collect();
        let x = Tensor::new(vec![t, k], data).map_err(|e| e.to_string())?;
        let (sap, alpha) = PoolingLayer::sap(vec![0.0; k]).pool(&x).map_err(|e| e.to_string())?;
        let (mean, _) = PoolingLayer::<f64>::mean().pool(&x).map_err(|e| e.to_string())?;
        let alpha = alpha.ok_or("no attention weights")?;
        if alpha.iter().any(|a| (a - 1.0 / t as f64).abs() > 1e-12) {
            return Err("zero query did not give uniform weights".into());
        }
        worst = sap.iter().zip(&mean).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
    }
    check(worst < 1e-6, format!("100 matrices, max |SAP - mean| = {worst:.2e} (tol 1e-6)"))
}

/// Random point in parameter space, every entry touched.
fn random_params<F: Real>(arch: &Architecture, seed: u64) -> ParamStore<F> {
    let mut p: ParamStore<F> = arch.init_params(seed).cast();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5);
    let ids: Vec<_> = p.ids().collect();
    for id in ids {
        let fan = p.get(id).len().max(1) as f64;
        let scale = if fan > 1000.0 { 0.05 } else { 0.5 };
        for v in p.get_mut(id).data_mut() {
            *v = F::from_f64_lossy(rng.random_range(-scale..scale));
        }
    }
    p
}

fn gradcheck_input(arch: &Architecture, t: usize) -> Result<Tensor<f64>, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let d = arch.input_dim();
    Tensor::new(vec![t, d], (0..t * d).map(|_| rng.random_range(-1.0..1.0)).collect()).map_err(|e| e.to_string())
}

fn checked(report: GradCheckReport) -> Result<f64, String> {
    if report.entries_checked() == 0 {
        return Err("nothing checked".into());
    }
    Ok(report.max_rel_err())
}

fn gradcheck_f64(arch: &Architecture, t: usize, opts: &GradCheckOptions) -> Result<f64, String> {
    let x = gradcheck_input(arch, t)?;
    let params = random_params::<f64>(arch, 4);
    let report = finite_diff_check(
        &params,
        |g, p| build_loss(arch, p, g, x.clone(), Class::Positive, Mode::Eval),
        opts,
    )
    .map_err(|e| e.to_string())?;
    checked(report)
}

/// 32-bit backprop against differences of the same graph at 64-bit, taken
/// at the identical (f32-representable) point.
fn gradcheck_f32(arch: &Architecture, t: usize, opts: &GradCheckOptions) -> Result<f64, String> {
    let x32: Tensor<f32> = gradcheck_input(arch, t)?.cast();
    let x64: Tensor<f64> = x32.cast();
    let params = random_params::<f32>(arch, 4);
    let report = finite_diff_check_vs_f64(
        &params,
        |g, p| build_loss(arch, p, g, x32.clone(), Class::Positive, Mode::Eval),
        |g, p| build_loss(arch, p, g, x64.clone(), Class::Positive, Mode::Eval),
        opts,
    )
    .map_err(|e| e.to_string())?;
    checked(report)
}

fn gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let cases = [
        ("head/mean", Architecture::head(12, 8, Pooling::Mean), 9, None),
        ("head/sap", Architecture::head(12, 8, Pooling::Sap), 9, None),
        ("cnn/sap", Architecture::cnn(), 40, Some(12)),
    ];
    let mut parts = Vec::new();
    let mut ok = true;
    for (name, arch, t, sample) in cases {
        let o64 = GradCheckOptions {
            eps: 1e-5,
            rel_floor: 1e-6,
            max_entries_per_param: sample,
            seed: 3,
        };
        let o32 = GradCheckOptions {
            rel_floor: 1e-3,
            ..o64
        };
        let e64 = gradcheck_f64(&arch, t, &o64)?;
        let e32 = gradcheck_f32(&arch, t, &o32)?;
        ok &= e64 < 1e-5 && e32 < 1e-2;
        parts.push(format!("{name} f64 {e64:.1e} f32 {e32:.1e}"));
    }
    let secs = start.elapsed().as_secs_f64();
    ok &= secs < 60.0;
    check(ok, format!("{}; {secs:.1} s (tol 1e-5 / 1e-2, < 60 s)", parts.join(", ")))
}

fn feature_dimensions() -> Outcome {
    let ex = SpectralExtractor::default();
    let mut worst = 0.0f64;
    for seed in 0..10u64 {
        let x: Vec<f32> = common::noise(8_000 + 517 * seed as usize, 700 + seed, 0.2)
            .into_iter()
            .map(|v| v.clamp(-1.0, 1.0))
            .collect();
        let clip = WavClip::from_samples(x).map_err(|e| e.to_string())?;
        let mats: Vec<FeatureMatrix> = FeatureKind::ALL
            .iter()
            .map(|&k| ex.extract(k, &clip))
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        let dims: Vec<usize> = mats.iter().map(FeatureMatrix::dim).collect();
        if dims != [257, 80, 39, 240] {
            return Err(format!("dims {dims:?}"));
        }
        if mats.iter().any(|m| m.n_frames() != mats[0].n_frames()) {
            return Err(format!("frame counts differ on clip {seed}"));
        }
        let oracle = common::mfcc_oracle(clip.samples());
        if oracle.len() != mats[2].n_frames() {
            return Err("oracle frame count differs".into());
        }
        for (t, row) in oracle.iter().enumerate() {
            worst = worst.max(common::max_abs_diff(row, mats[2].row(t)));
        }
    }
    check(
        worst < 1e-4,
        format!("257/80/39/240 with equal T on 10 clips; MFCC vs reference max err {worst:.2e} (tol 1e-4)"),
    )
}

fn bandwidth_filter(tmp: &Path) -> Outcome {
    let dir = tmp.join("band200");
    std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    let mut correct = 0;
    for i in 0..200u64 {
        let narrow = i >= 100;
        let x = white_noise(16_000, 9_000 + i, 0.2);
        let x = if narrow { lowpass_brickwall(&x, 4_000.0) } else { x };
        let path = dir.join(format!("{i}.wav"));
        write_wav(&path, &WavClip::from_samples(x).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        let clip = read_wav(&path).map_err(|e| e.to_string())?;
        let r = detect_bandwidth(&clip, DEFAULT_CUTOFF_HZ, DEFAULT_NARROWBAND_THRESHOLD).map_err(|e| e.to_string())?;
        correct += usize::from(r.is_narrowband == narrow);
    }

    let fx = tmp.join("corpus");
    let m = generate_fixture(&FixtureSpec::corpus_shaped(2021), &fx).map_err(|e| e.to_string())?;
    let reports: HashMap<String, BandReport> = m
        .entries()
        .iter()
        .map(|e| {
            let clip = read_wav(m.resolve_wav(e)).map_err(|e| e.to_string())?;
            let r = detect_bandwidth(&clip, DEFAULT_CUTOFF_HZ, DEFAULT_NARROWBAND_THRESHOLD).map_err(|e| e.to_string())?;
            Ok((e.id.clone(), r))
        })
        .collect::<Result<_, String>>()?;
    let kept = m.filter_narrowband(&reports).map_err(|e| e.to_string())?;
    let (b, a) = (m.stats(), kept.stats());
    let counts = [
        b.get(Split::Train).total,
        a.get(Split::Train).total,
        b.get(Split::Train).positive,
        a.get(Split::Train).positive,
        b.get(Split::Dev).total,
        a.get(Split::Dev).total,
        b.get(Split::Dev).positive,
        a.get(Split::Dev).positive,
        a.get(Split::Test).total,
    ];
    let test_same = m.split(Split::Test).eq(kept.split(Split::Test));
    check(
        correct == 200 && counts == [315, 299, 72, 56, 295, 282, 142, 129, 283] && test_same,
        format!(
            "{correct}/200 correct; train {}->{} ({}->{} pos), dev {}->{} ({}->{} pos), test {} untouched={test_same}",
            counts[0], counts[1], counts[2], counts[3], counts[4], counts[5], counts[6], counts[7], counts[8]
        ),
    )
}

fn schedule_and_optimizer() -> Outcome {
    let cfg = TrainConfig::default();
    let got: Vec<f64> = [0, 1400, 5700, 10_000]
        .iter()
        .map(|&s| lr_at(s, &cfg, Family::Cnn))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let want = [0.0, 2e-4, 1e-4, 0.0];
    let lr_ok = got.iter().zip(&want).all(|(g, w)| (g - w).abs() < 1e-15);

    let mut p = ParamStore::new();
    let id = p.add("theta", Tensor::vector(vec![1.5f64]));
    let acfg = AdamWConfig::default();
    let mut st = OptimState::new(&p, acfg);
    let (lr, g1, g2) = (0.1, 0.5, -0.25);
    adamw_step(&mut p, &GradBuffer::from_vecs(vec![vec![g1]]), &mut st, lr).map_err(|e| e.to_string())?;
    adamw_step(&mut p, &GradBuffer::from_vecs(vec![vec![g2]]), &mut st, lr).map_err(|e| e.to_string())?;
    // two steps evaluated by hand
    let (b1, b2, eps, wd) = (0.9, 0.999, 1e-8, 0.01);
    let mut theta = 1.5f64;
    let (m1, v1) = ((1.0 - b1) * g1, (1.0 - b2) * g1 * g1);
    theta -= lr * (m1 / (1.0 - b1)) / ((v1 / (1.0 - b2)).sqrt() + eps) + lr * wd * theta;
    let (m2, v2) = (b1 * m1 + (1.0 - b1) * g2, b2 * v1 + (1.0 - b2) * g2 * g2);
    theta -= lr * (m2 / (1.0 - b1 * b1)) / ((v2 / (1.0 - b2 * b2)).sqrt() + eps) + lr * wd * theta;
    let err = (p.get(id).data()[0] - theta).abs();
    check(
        lr_ok && err < 1e-12,
        format!("lr_at(cnn) = {got:?}; two AdamW steps off by {err:.1e} (tol 1e-12)"),
    )
}

fn learning_sanity() -> Outcome {
    let start = Instant::now();
    let (tr, dev) = separable_task(96, 48, 16, 2024);
    let cfg = TrainConfig {
        total_steps: 2000,
        eval_every: 200,
        seed: 5,
        ..TrainConfig::default()
    };
    let out = train(Classifier::new(Architecture::head(16, 128, Pooling::Sap), "synthetic", 5), &tr, &dev, &cfg)
        .map_err(|e| e.to_string())?;
    let best = out.best.meta.dev_uar.unwrap_or(0.0);
    let secs = start.elapsed().as_secs_f64();
    let dl = (out.first_batch_loss - LN_2).abs();
    check(
        best >= 0.95 && dl <= 0.2 && secs < 300.0,
        format!(
            "best dev UAR {best:.3} at step {} (>= 0.95 in 2000 steps); first-batch loss {:.4} (ln 2 +- 0.2); {secs:.1} s",
            out.best.meta.step, out.first_batch_loss
        ),
    )
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_sapcovid"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr).trim()))
    }
}

fn determinism(tmp: &Path) -> Outcome {
    let p = |s: &str| tmp.join("det").join(s).to_string_lossy().into_owned();
    run_cli(&["fixture", "generate", "--shape", "small", "--out", &p("fx"), "--seed", "8"])?;
    run_cli(&["features", "extract", "--manifest", &p("fx/manifest.csv"), "--kind", "fbank", "--out", &p("feats")])?;
    for run in ["a", "b"] {
        run_cli(&[
            "train", "--manifest", &p("fx/manifest.csv"), "--features", &p("feats/fbank"), "--feature", "fbank",
            "--pooling", "sap", "--k", "256", "--steps", "60", "--eval-every", "20", "--batch-size", "4", "--seed",
            "42", "--out", &p(&format!("{run}.ckpt")), "--history", &p(&format!("{run}.csv")),
        ])?;
    }
    let read = |s: &str| std::fs::read(p(s)).map_err(|e| e.to_string());
    let (ca, cb, ha, hb) = (read("a.ckpt")?, read("b.ckpt")?, read("a.csv")?, read("b.csv")?);
    check(
        ca == cb && ha == hb,
        format!(
            "two `train` runs: checkpoints {} ({} bytes), histories {}",
            if ca == cb { "identical" } else { "differ" },
            ca.len(),
            if ha == hb { "identical" } else { "differ" }
        ),
    )
}

fn interchange(tmp: &Path) -> Outcome {
    let dir = tmp.join("feat");
    std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let reg = TagRegistry::default();
    let mut exact = 0;
    for i in 0..1000 {
        let (t, d) = (rng.random_range(1..=40), rng.random_range(1..=48));
        let data: Vec<f32> = (0..t * d)
            .map(|_| loop {
                let v = f32::from_bits(rng.random());
                if v.is_finite() {
                    break v;
                }
            })
            .collect();
        let m = FeatureMatrix::new(t, d, 10.0, data, &format!("enc{}", i % 7)).map_err(|e| e.to_string())?;
        let path = dir.join(format!("{i}.feat"));
        write_feat(&m, &path).map_err(|e| e.to_string())?;
        let back = read_feat_with(&path, &reg).map_err(|e| e.to_string())?;
        let same_bits = back.data().iter().zip(m.data()).all(|(a, b)| a.to_bits() == b.to_bits());
        exact += usize::from(
            same_bits
                && back.n_frames() == t
                && back.dim() == d
                && back.source_tag() == m.source_tag()
                && back.frame_shift_ms().to_bits() == m.frame_shift_ms().to_bits(),
        );
    }

    let builtin = FeatureMatrix::new(3, 100, 10.0, vec![0.0; 300], "cpc").is_err();
    let mut custom = TagRegistry::default();
    custom.register("wav2vec", 512);
    let bytes = encode_feat(&FeatureMatrix::new(2, 64, 20.0, vec![1.0; 128], "wav2vec").map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let registered = matches!(decode_feat(&bytes, &custom), Err(FeatError::DimMismatch { .. }));
    check(
        exact == 1000 && builtin && registered,
        format!("{exact}/1000 bit-exact roundtrips; cpc@100 rejected={builtin}, wav2vec@64 vs 512 rejected={registered}"),
    )
}

fn augmentation(tmp: &Path) -> Outcome {
    let fx = tmp.join("augfx");
    let m = generate_fixture(&FixtureSpec::small(6), &fx).map_err(|e| e.to_string())?;
    let out = augment_manifest(&m, &AugmentSpec::default(), &tmp.join("augout")).map_err(|e| e.to_string())?;
    let n = m.stats().get(Split::Train).total;
    let doubled = out.stats().get(Split::Train).total == 2 * n;
    let labels_kept = m.split(Split::Train).all(|e| {
        out.get(&format!("{}{AUG_SUFFIX}", e.id)).is_some_and(|t| t.label == e.label && t.split == Split::Train)
    });
    let untouched = [Split::Dev, Split::Test].iter().all(|&s| {
        m.split(s).count() == out.split(s).count()
            && m.split(s).zip(out.split(s)).all(|(a, b)| a.id == b.id && a.label == b.label)
    });
    let unknown_kept = out.split(Split::Test).all(|e| e.label == Label::Unknown);

    let n_tone = 16_000;
    let tone: Vec<f32> = (0..n_tone).map(|i| (0.8 * (2.0 * PI * 440.0 * i as f64 / 16_000.0).sin()) as f32).collect();
    let shifted = pitch_randomize(&WavClip::from_samples(tone).map_err(|e| e.to_string())?, 1200.0);
    let peak = peak_hz(shifted.samples());
    let bin = 16_000.0 / shifted.len() as f64;
    check(
        doubled && labels_kept && untouched && unknown_kept && (peak - 880.0).abs() <= bin,
        format!(
            "train {n} -> {}, labels kept={labels_kept}, dev/test untouched={untouched}; +1200 cents peak {peak:.1} Hz (880 +- {bin:.0})",
            out.stats().get(Split::Train).total
        ),
    )
}

fn peak_hz(x: &[f32]) -> f64 {
    let n = x.len();
    let w = common::periodic_hann(n);
    let frame: Vec<f64> = x.iter().zip(&w).map(|(&s, w)| f64::from(s) * w).collect();
    // scan the band of interest with a direct DFT
    let power = |k: usize| {
        let (mut re, mut im) = (0.0, 0.0);
        for (i, v) in frame.iter().enumerate() {
            let a = -2.0 * PI * ((k * i) % n) as f64 / n as f64;
            re += v * a.cos();
            im += v * a.sin();
        }
        re * re + im * im
    };
    let lo = 100 * n / 16_000;
    let hi = 2_000 * n / 16_000;
    let k = (lo..hi).max_by(|&a, &b| power(a).total_cmp(&power(b))).unwrap_or(0);
    k as f64 * 16_000.0 / n as f64
}

fn ckpt(model: Classifier, seed: u64) -> Checkpoint {
    Checkpoint {
        model,
        meta: CheckpointMeta {
            seed,
            step: 0,
            dev_uar: None,
        },
    }
}

fn attention_traces(tmp: &Path) -> Outcome {
    let fx = tmp.join("attfx");
    let m = generate_fixture(&FixtureSpec::small(12), &fx).map_err(|e| e.to_string())?;
    let ex = SpectralExtractor::default();
    let head = ckpt(Classifier::new(Architecture::head(39, 128, Pooling::Sap), "mfcc", 3), 3);
    let cnn = ckpt(Classifier::new(Architecture::cnn(), "spectrogram", 4), 4);
    let out_dir = tmp.join("att");

    let mut worst_sum = 0.0f64;
    let mut worst_avg = 0.0f64;
    let mut worst_up = 0.0f64;
    let mut exported = 0;
    for e in m.split(Split::Dev).take(6) {
        let clip = read_wav(m.resolve_wav(e)).map_err(|e| e.to_string())?;
        let spec = ex.extract(FeatureKind::Spectrogram, &clip).map_err(|e| e.to_string())?;
        let mfcc = ex.extract(FeatureKind::Mfcc, &clip).map_err(|e| e.to_string())?;
        for (c, feats) in [(&head, &mfcc), (&cnn, &spec)] {
            let single = collect_attention(std::slice::from_ref(c), &e.id, feats).map_err(|e| e.to_string())?;
            let five = collect_attention(&vec![c.clone(); 5], &e.id, feats).map_err(|e| e.to_string())?;
            worst_avg = single.weights.iter().zip(&five.weights).map(|(a, b)| (a - b).abs()).fold(worst_avg, f64::max);

            let info = export_trace(&five, &spec, &out_dir.join(c.model.feature())).map_err(|e| e.to_string())?;
            let mut rdr = csv::Reader::from_path(&info.csv).map_err(|e| e.to_string())?;
            let total: f64 = rdr
                .records()
                .map(|r| r.map_err(|e| e.to_string()).and_then(|r| r[1].parse::<f64>().map_err(|e| e.to_string())))
                .sum::<Result<f64, String>>()?;
            worst_sum = worst_sum.max((total - 1.0).abs());
            exported += 1;

            if c.model.arch().family() == Family::Cnn {
                let alpha = c.model.predict(feats).map_err(|e| e.to_string())?.attention.ok_or("no attention")?;
                let a_total: f64 = alpha.iter().map(|&a| f64::from(a)).sum();
                let per = c.model.arch().frames_per_weight();
                for (j, &a) in alpha.iter().enumerate() {
                    let block: f64 = single.weights[j * per..(j + 1) * per].iter().sum();
                    worst_up = worst_up.max((block - f64::from(a) / a_total).abs());
                }
                worst_up = worst_up.max((single.total() - 1.0).abs());
            }
        }
    }
    check(
        worst_sum < 1e-6 && worst_avg < 1e-12 && worst_up < 1e-9,
        format!(
            "{exported} exported traces, max |sum - 1| {worst_sum:.1e}; 5-copy average vs single {worst_avg:.1e}; CNN upsampling mass error {worst_up:.1e}"
        ),
    )
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let t = tmp.path();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("SAP-mean equivalence", Box::new(sap_mean_equivalence)),
        ("gradient fidelity", Box::new(gradient_fidelity)),
        ("feature dimensions", Box::new(feature_dimensions)),
        ("bandwidth filter", Box::new(|| bandwidth_filter(t))),
        ("schedule and optimizer", Box::new(schedule_and_optimizer)),
        ("learning sanity", Box::new(learning_sanity)),
        ("determinism", Box::new(|| determinism(t))),
        ("interchange", Box::new(|| interchange(t))),
        ("augmentation", Box::new(|| augmentation(t))),
        ("attention traces", Box::new(|| attention_traces(t))),
    ];
    let mut failed = 0;
    for (name, f) in &criteria {
        match f() {
            Ok(d) => println!("PASS  {name}: {d}"),
            Err(d) => {
                failed += 1;
                println!("FAIL  {name}: {d}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
