//! Acceptance suite. Each test prints one `PASS`/`FAIL` line with the
//! measured values before asserting. Tests are serialized so wall-clock
//! budgets are not shared with other tests on the same cores.

use std::path::{Path, PathBuf};
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

use coughpipe::augment::{expand_cough_set, interpolate_pair, Provenance};
use coughpipe::cluster::{kmeans, select_k, silhouette_mean, KMeansOptions};
use coughpipe::cnn::{architecture, bce_loss, Cnn, CnnConfig, CnnParameters, Mode};
use coughpipe::dsp::{FftPlan, SpectralAnalyzer, SpectralConfig};
use coughpipe::metrics::f1_score;
use coughpipe::pipeline::{ablation, cluster_command, run_pipeline, PipelineConfig};
use coughpipe::rng::substream;
use coughpipe::synthgen::{gen_corpus, SynthSpec};
use coughpipe::AudioClip;
use rand::Rng;

const CORPUS_SEED: u64 = 7;

fn serial() -> MutexGuard<'static, ()> {
    static LOCK: Mutex<()> = Mutex::new(());
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

/// Default synthetic corpus: 4 burst classes of 50 coughs, 450 backgrounds.
fn corpus() -> &'static Path {
    static MANIFEST: OnceLock<PathBuf> = OnceLock::new();
    MANIFEST.get_or_init(|| {
        let spec = SynthSpec {
            seed: CORPUS_SEED,
            ..SynthSpec::default()
        };
        gen_corpus(&spec, scratch("corpus")).unwrap()
    })
}

/// Shorter schedule for the checks that train many times.
fn short_schedule() -> CnnConfig {
    CnnConfig {
        max_epochs: 60,
        patience: 15,
        ..CnnConfig::default()
    }
}

// Written to the raw handle so the line shows up without --nocapture.
fn report(n: u32, name: &str, ok: bool, detail: String) {
    use std::io::Write;
    let line = format!("acceptance {n} {name}: {} ({detail})\n", if ok { "PASS" } else { "FAIL" });
    let _ = std::io::stdout().lock().write_all(line.as_bytes());
}

fn single_threaded<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(f)
}

#[test]
fn architecture_audit() {
    let _g = serial();
    let t = Instant::now();
    let layers = architecture(&CnnConfig::default()).unwrap();
    let expected_table = [
        ("conv1d", "(None, 78, 128)"),
        ("max_pooling1d", "(None, 39, 128)"),
        ("conv1d", "(None, 37, 64)"),
        ("max_pooling1d", "(None, 18, 64)"),
        ("conv1d", "(None, 16, 32)"),
        ("max_pooling1d", "(None, 8, 32)"),
        ("conv1d", "(None, 6, 16)"),
        ("max_pooling1d", "(None, 3, 16)"),
        ("flatten", "(None, 48)"),
        ("dropout", "(None, 48)"),
        ("dense", "(None, 64)"),
        ("dropout", "(None, 64)"),
        ("dense", "(None, 32)"),
        ("dropout", "(None, 32)"),
        ("dense", "(None, 1)"),
    ];
    let shapes: Vec<String> = layers.iter().map(|l| l.output.to_string()).collect();
    let expected_shapes: Vec<&str> = expected_table.iter().map(|r| r.1).collect();
    let non_dropout = expected_table.iter().filter(|r| r.0 != "dropout").count();
    let params = CnnParameters::zeros(&layers);
    let counts = params.layer_counts();
    let elapsed = t.elapsed();
    let ok = shapes == expected_shapes
        && non_dropout == 12
        && counts == [512, 24640, 6176, 1552, 3136, 2080, 33]
        && params.len() == 38_129
        && elapsed < Duration::from_secs(1);
    report(
        1,
        "architecture_audit",
        ok,
        format!("{} layers, params {:?} total {}, {:?}", shapes.len(), counts, params.len(), elapsed),
    );
    assert!(ok);
}

#[test]
fn gradient_check() {
    let _g = serial();
    let t = Instant::now();
    let cfg = CnnConfig::default();
    let net = Cnn::new(&cfg).unwrap();
    let mut rng = substream(2024, 0);
    let mut params = net.init_params(&mut rng);
    for slot in params.slots.clone() {
        for b in &mut params.data[slot.bias] {
            *b = rng.gen_range(-0.05..0.05);
        }
    }
    let batch: Vec<Vec<f64>> = (0..4)
        .map(|_| (0..cfg.input_len).map(|_| rng.gen_range(-2.0..2.0)).collect())
        .collect();
    let labels = [1u8, 0, 1, 0];
    let mask_rng = substream(2024, 1);
    // Cloning the dropout stream reproduces the same masks on every call.
    let loss = |p: &CnnParameters| {
        let mut r = mask_rng.clone();
        bce_loss(&net.forward(p, &batch, Mode::Train(&mut r)).unwrap().probs, &labels)
    };
    let mut r = mask_rng.clone();
    let pass = net.forward(&params, &batch, Mode::Train(&mut r)).unwrap();
    let grads = net.backward(&params, &batch, &labels, &pass).unwrap();

    // Coordinates whose one-sided differences disagree straddle a ReLU or
    // pooling switch, where the loss is not differentiable; those are redrawn.
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut redrawn = 0;
    for slot in params.slots.clone() {
        for (range, wanted) in [(slot.weight.clone(), 7), (slot.bias.clone(), 3)] {
            let mut done = 0;
            while done < wanted && redrawn < 500 {
                let i = rng.gen_range(range.clone());
                let f0 = loss(&params);
                let mut p = params.clone();
                p.data[i] += h;
                let fp = loss(&p);
                p.data[i] -= 2.0 * h;
                let fm = loss(&p);
                let (fwd, bwd) = ((fp - f0) / h, (f0 - fm) / h);
                if (fwd - bwd).abs() > 1e-3 * fwd.abs().max(bwd.abs()).max(1e-3) {
                    redrawn += 1;
                    continue;
                }
                let numeric = (fp - fm) / (2.0 * h);
                let analytic = grads.data[i];
                let scale = analytic.abs().max(numeric.abs());
                if scale > 1e-8 {
                    worst = worst.max((analytic - numeric).abs() / scale);
                }
                done += 1;
                checked += 1;
            }
        }
    }
    let elapsed = t.elapsed();
    let ok = checked >= 50 && worst < 1e-4 && elapsed < Duration::from_secs(30);
    report(
        2,
        "gradient_check",
        ok,
        format!("{checked} params over 7 layers, worst relative error {worst:.2e}, {redrawn} redrawn, {elapsed:?}"),
    );
    assert!(ok);
}

fn naive_dft(x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    let mut re = vec![0.0; n];
    let mut im = vec![0.0; n];
    for k in 0..n {
        for (t, &v) in x.iter().enumerate() {
            // Reduce k*t mod n first so the angle stays small and exact.
            let ang = -2.0 * std::f64::consts::PI * ((k * t) % n) as f64 / n as f64;
            re[k] += v * ang.cos();
            im[k] += v * ang.sin();
        }
    }
    (re, im)
}

#[test]
fn dsp_oracles() {
    let _g = serial();
    let t = Instant::now();
    let mut rng = substream(3, 0);
    let mut fft_err: f64 = 0.0;
    let mut parseval_err: f64 = 0.0;
    for n in [256, 2048] {
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (nre, nim) = naive_dft(&x);
        let mut re = x.clone();
        let mut im = vec![0.0; n];
        FftPlan::new(n).forward(&mut re, &mut im);
        let diff: f64 = (0..n).map(|k| (re[k] - nre[k]).powi(2) + (im[k] - nim[k]).powi(2)).sum::<f64>();
        let norm: f64 = (0..n).map(|k| nre[k].powi(2) + nim[k].powi(2)).sum::<f64>();
        fft_err = fft_err.max((diff / norm).sqrt());
        let time_energy: f64 = x.iter().map(|v| v * v).sum();
        let freq_energy: f64 = (0..n).map(|k| re[k].powi(2) + im[k].powi(2)).sum::<f64>() / n as f64;
        parseval_err = parseval_err.max((time_energy - freq_energy).abs() / time_energy);
    }

    // Orthonormality of the DCT-II basis, built here from the closed form.
    let n = 40;
    let basis = |k: usize, t: usize| {
        let s = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
        s * (std::f64::consts::PI * (t as f64 + 0.5) * k as f64 / n as f64).cos()
    };
    let lib = coughpipe::dsp::dct_ii_matrix(n);
    let mut ortho_err: f64 = 0.0;
    for a in 0..n {
        for b in 0..n {
            let dot: f64 = (0..n).map(|t| lib[a * n + t] * lib[b * n + t]).sum();
            ortho_err = ortho_err.max((dot - f64::from(u8::from(a == b))).abs());
        }
        for t in 0..n {
            ortho_err = ortho_err.max((lib[a * n + t] - basis(a, t)).abs());
        }
    }

    // MFCC equals the DCT of the library's own log-mel spectrogram.
    let samples: Vec<f64> = (0..16_000)
        .map(|i| 0.3 * (2.0 * std::f64::consts::PI * 440.0 * i as f64 / 16_000.0).sin() + rng.gen_range(-0.05..0.05))
        .collect();
    let clip = AudioClip::new(samples, 16_000);
    let cfg = SpectralConfig::default();
    let analyzer = SpectralAnalyzer::new(&cfg, 16_000).unwrap();
    let log_mel = analyzer.log_mel(&clip).unwrap();
    let mfcc = analyzer.mfcc(&clip).unwrap();
    let mut mfcc_err: f64 = 0.0;
    for (f, row) in log_mel.rows().enumerate() {
        for k in 0..cfg.n_mfcc {
            let expect: f64 = (0..cfg.n_mels).map(|m| basis(k, m) * row[m]).sum();
            mfcc_err = mfcc_err.max((mfcc.row(f)[k] - expect).abs());
        }
    }
    let elapsed = t.elapsed();
    let ok = fft_err < 1e-8 && ortho_err < 1e-10 && mfcc_err < 1e-12 && parseval_err < 1e-8 && elapsed < Duration::from_secs(30);
    report(
        3,
        "dsp_oracles",
        ok,
        format!(
            "fft {fft_err:.1e}, dct orthonormality {ortho_err:.1e}, mfcc composition {mfcc_err:.1e}, parseval {parseval_err:.1e}, {elapsed:?}"
        ),
    );
    assert!(ok);
}

#[test]
fn augmentation_audit() {
    let _g = serial();
    let mut rng = substream(4, 0);
    let clips: Vec<AudioClip> = (0..223)
        .map(|_| AudioClip::new((0..800).map(|_| rng.gen_range(-0.5..0.5)).collect(), 16_000))
        .collect();
    let expanded = expand_cough_set(&clips, 0.01, 4).unwrap();
    let per_kind: Vec<usize> = Provenance::ALL
        .iter()
        .map(|p| expanded.iter().filter(|a| a.provenance == *p).count())
        .collect();
    let lengths_kept = expanded.iter().all(|a| a.clip.len() == 800 && a.clip.sample_rate == 16_000);

    let ramp = AudioClip::new((0..1001).map(|i| -0.4 + 0.0008 * i as f64).collect(), 16_000);
    let (even, odd) = interpolate_pair(&ramp).unwrap();
    let ramp_err = (1..ramp.len() - 1)
        .map(|i| (even.samples[i] - ramp.samples[i]).abs().max((odd.samples[i] - ramp.samples[i]).abs()))
        .fold(0.0, f64::max);

    let silence = AudioClip::new(vec![0.0; 160_000], 16_000);
    let noisy = coughpipe::augment::add_gaussian_noise(&silence, 0.01, &mut substream(4, 1)).unwrap();
    let mean = noisy.samples.iter().sum::<f64>() / noisy.len() as f64;
    let std = (noisy.samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (noisy.len() - 1) as f64).sqrt();

    let ok = expanded.len() == 892
        && per_kind == [223; 4]
        && lengths_kept
        && ramp_err < 1e-12
        && (0.0095..=0.0105).contains(&std);
    report(
        4,
        "augmentation_audit",
        ok,
        format!("223 -> {} ({per_kind:?}), ramp interior error {ramp_err:.1e}, noise std {std:.5}", expanded.len()),
    );
    assert!(ok);
}

#[test]
fn end_to_end_training() {
    let _g = serial();
    let manifest = corpus();
    let mut cfg = PipelineConfig::new(manifest, scratch("e2e"));
    cfg.seed = CORPUS_SEED;
    let t = Instant::now();
    let out = single_threaded(|| run_pipeline(&cfg)).unwrap();
    let elapsed = t.elapsed();
    let m = &out.metrics.models[0];
    let ok = m.accuracy >= 0.95 && m.f1 >= 0.90 && elapsed <= Duration::from_secs(300);
    report(
        5,
        "end_to_end_training",
        ok,
        format!(
            "test accuracy {:.4}, f1 {:.4}, {} epochs, {:.1}s single-threaded",
            m.accuracy,
            m.f1,
            out.metrics.training.stopped_epoch,
            elapsed.as_secs_f64()
        ),
    );
    assert!(ok);
}

#[test]
fn ablation_direction() {
    let _g = serial();
    let manifest = corpus();
    let mut lines = Vec::new();
    let mut ok = true;
    for seed in [1, 2, 3] {
        let dir = scratch(&format!("ablation_{seed}"));
        let mut cfg = PipelineConfig::new(manifest, &dir);
        cfg.seed = seed;
        cfg.cnn = short_schedule();
        let out = ablation(&cfg).unwrap();
        let f1: Vec<f64> = out.rows.iter().map(|r| r.metrics.f1).collect();
        let csv = std::fs::read_to_string(dir.join("ablation.csv")).unwrap();
        let csv_shape = csv.lines().count() == 4 && csv.lines().all(|l| l.split(',').count() == 5);
        let shared = out.val_ids.windows(2).all(|w| w[0] == w[1]) && out.test_ids.windows(2).all(|w| w[0] == w[1]);
        ok &= f1[2] >= f1[0] - 0.02 && csv_shape && shared;
        lines.push(format!("seed {seed}: f1 original {:.4} noise {:.4} noise_interp {:.4}", f1[0], f1[1], f1[2]));
    }
    report(6, "ablation_direction", ok, lines.join("; "));
    assert!(ok);
}

fn brute_force_wcss(points: &[Vec<f64>]) -> f64 {
    let n = points.len();
    let mut best = f64::INFINITY;
    for mask in 1..(1u32 << n) - 1 {
        let mut total = 0.0;
        for side in [true, false] {
            let members: Vec<&Vec<f64>> = (0..n).filter(|&i| (mask >> i & 1 == 1) == side).map(|i| &points[i]).collect();
            let d = members[0].len();
            let centroid: Vec<f64> = (0..d).map(|j| members.iter().map(|p| p[j]).sum::<f64>() / members.len() as f64).collect();
            total += members
                .iter()
                .map(|p| p.iter().zip(&centroid).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
                .sum::<f64>();
        }
        best = best.min(total);
    }
    best
}

fn naive_silhouette(points: &[Vec<f64>], labels: &[usize]) -> f64 {
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let k = labels.iter().max().unwrap() + 1;
    let mut total = 0.0;
    for i in 0..points.len() {
        let mean_to = |c: usize| {
            let others: Vec<usize> = (0..points.len()).filter(|&j| j != i && labels[j] == c).collect();
            others.iter().map(|&j| dist(&points[i], &points[j])).sum::<f64>() / others.len() as f64
        };
        if labels.iter().filter(|&&l| l == labels[i]).count() == 1 {
            continue;
        }
        let a = mean_to(labels[i]);
        let b = (0..k).filter(|&c| c != labels[i]).map(mean_to).fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        total += if m == 0.0 { 0.0 } else { (b - a) / m };
    }
    total / points.len() as f64
}

fn blobs(centers: &[[f64; 2]], per: usize, spread: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = substream(seed, 0);
    centers
        .iter()
        .flat_map(|c| {
            (0..per)
                .map(|_| vec![c[0] + rng.gen_range(-spread..spread), c[1] + rng.gen_range(-spread..spread)])
                .collect::<Vec<_>>()
        })
        .collect()
}

#[test]
fn clustering() {
    let _g = serial();
    let t = Instant::now();
    let opts = KMeansOptions::default();

    let mut worst_wcss: f64 = 0.0;
    for seed in 0..2000u64 {
        let mut rng = substream(seed, 77);
        let n = rng.gen_range(3..=8);
        let d = rng.gen_range(1..=3);
        let pts: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.gen_range(-5.0..5.0)).collect()).collect();
        let got = kmeans(&pts, 2, seed, &opts).unwrap().wcss;
        worst_wcss = worst_wcss.max(got - brute_force_wcss(&pts));
    }

    let mut worst_sil: f64 = 0.0;
    for seed in 0..300u64 {
        let mut rng = substream(seed, 78);
        let n = rng.gen_range(4..=20);
        let k = rng.gen_range(2..=3.min(n - 1));
        let pts: Vec<Vec<f64>> = (0..n).map(|_| (0..2).map(|_| rng.gen_range(-3.0..3.0)).collect()).collect();
        let mut labels: Vec<usize> = (0..n).map(|i| i % k).collect();
        for i in (1..n).rev() {
            labels.swap(i, rng.gen_range(0..=i));
        }
        worst_sil = worst_sil.max((silhouette_mean(&pts, &labels).unwrap() - naive_silhouette(&pts, &labels)).abs());
    }

    let dir = scratch("cluster");
    let mut cfg = PipelineConfig::new(corpus(), &dir);
    cfg.seed = CORPUS_SEED;
    let corpus_out = cluster_command(&cfg).unwrap();
    let agreement = corpus_out.burst_agreement.unwrap_or(0.0);
    let counts_sum: usize = corpus_out.report.cluster_counts.iter().sum();

    let two = blobs(&[[0.0, 0.0], [10.0, 10.0]], 30, 1.0, 5);
    let ids: Vec<String> = (0..two.len()).map(|i| format!("p{i}")).collect();
    let two_k = select_k(&two, &ids, 5, &opts).unwrap().k_selected;

    let elapsed = t.elapsed();
    let ok = worst_wcss <= 1e-9
        && worst_sil <= 1e-12
        && corpus_out.report.k_selected == 4
        && agreement >= 0.8
        && counts_sum == corpus_out.n_points
        && two_k == 2
        && elapsed < Duration::from_secs(60);
    report(
        7,
        "clustering",
        ok,
        format!(
            "wcss gap {worst_wcss:.1e}, silhouette error {worst_sil:.1e}, corpus k {} agreement {agreement:.4}, two blobs k {two_k}, {elapsed:?}",
            corpus_out.report.k_selected
        ),
    );
    assert!(ok);
}

#[test]
fn metrics_consistency() {
    let _g = serial();
    let f1 = f1_score(0.9708, 0.9583);
    let ok = (f1 - 0.9645).abs() <= 5e-4;
    report(8, "metrics_consistency", ok, format!("f1(0.9708, 0.9583) = {f1:.5}"));
    assert!(ok);
}

#[test]
fn determinism() {
    let _g = serial();
    let manifest = corpus();
    let run = |name: &str, threads: usize| {
        let dir = scratch(name);
        let mut cfg = PipelineConfig::new(manifest, &dir);
        cfg.seed = 11;
        cfg.cnn = short_schedule();
        cfg.forest = Some(Default::default());
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_pipeline(&cfg))
            .unwrap();
        ["metrics.json", "weights.bin", "standardizer.json"].map(|f| std::fs::read(dir.join(f)).unwrap())
    };
    let a = run("determinism_a", 1);
    let b = run("determinism_b", 3);
    let same: Vec<bool> = a.iter().zip(&b).map(|(x, y)| x == y).collect();
    let ok = same.iter().all(|&s| s);
    report(
        9,
        "determinism",
        ok,
        format!("metrics.json / weights.bin / standardizer.json identical: {same:?} (1 vs 3 threads)"),
    );
    assert!(ok);
}
