//! Seeded synthetic corpus: cough-like clips made of 1 to 4 decaying noise
//! bursts, and three kinds of background clip (tonal, clicks, pink noise).

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio_io::{write_wav, AudioClip, AudioError, CANONICAL_RATE};
use crate::dsp::FftPlan;
use crate::features::{write_manifest, Activity, FeatureError, Label, ManifestRow};
use crate::rng::{streams, substream, BoxMuller};

pub const BURST_MIN_SECS: f64 = 0.25;
pub const BURST_MAX_SECS: f64 = 0.45;
pub const GAP_MIN_SECS: f64 = 0.05;
pub const GAP_MAX_SECS: f64 = 0.15;
/// Silence kept at each end of a cough clip.
pub const MARGIN_SECS: f64 = 0.025;
/// Nominal per-burst budget used by the feasibility check.
pub const BURST_BUDGET_SECS: f64 = 0.35;
/// Exponential time constant of the burst envelope.
pub const DECAY_SECS: f64 = 0.04;
pub const ATTACK_SECS: f64 = 0.003;
/// Standard deviation of the Gaussian floor under cough, tonal and click clips.
pub const NOISE_FLOOR: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("{n_bursts} bursts need {needed:.3} s but the clip is {clip_len:.3} s")]
    SpecInfeasible { n_bursts: usize, needed: f64, clip_len: f64 },
    #[error("invalid synth spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Manifest(#[from] FeatureError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackgroundKind {
    Tonal,
    Clicks,
    PinkNoise,
}

impl BackgroundKind {
    pub const ALL: [BackgroundKind; 3] = [BackgroundKind::Tonal, BackgroundKind::Clicks, BackgroundKind::PinkNoise];

    pub fn as_str(self) -> &'static str {
        match self {
            BackgroundKind::Tonal => "tonal",
            BackgroundKind::Clicks => "clicks",
            BackgroundKind::PinkNoise => "pink_noise",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    /// Cough clips generated for each entry of `burst_counts`.
    pub n_cough_per_burst: usize,
    pub burst_counts: Vec<u8>,
    pub n_background_per_kind: usize,
    pub clip_len: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_cough_per_burst: 50,
            burst_counts: vec![1, 2, 3, 4],
            n_background_per_kind: 150,
            clip_len: 1.5,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if !(1.0..=2.0).contains(&self.clip_len) {
            return Err(SynthError::InvalidSpec(format!(
                "clip_len {} outside [1, 2] s",
                self.clip_len
            )));
        }
        for &b in &self.burst_counts {
            if !(1..=4).contains(&b) {
                return Err(SynthError::InvalidSpec(format!("burst count {b} outside 1..=4")));
            }
            check_budget(b as usize, self.clip_len)?;
        }
        Ok(())
    }
}

/// Second-order section in direct form I (RBJ cookbook coefficients).
#[derive(Debug, Clone)]
pub struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
    x: [f64; 2],
    y: [f64; 2],
}

impl Biquad {
    fn from_raw(b: [f64; 3], a0: f64, a1: f64, a2: f64) -> Self {
        Biquad {
            b: [b[0] / a0, b[1] / a0, b[2] / a0],
            a: [a1 / a0, a2 / a0],
            x: [0.0; 2],
            y: [0.0; 2],
        }
    }

    pub fn lowpass(cutoff: f64, sample_rate: f64, q: f64) -> Self {
        let w0 = 2.0 * PI * cutoff / sample_rate;
        let (s, c) = w0.sin_cos();
        let alpha = s / (2.0 * q);
        Self::from_raw([(1.0 - c) / 2.0, 1.0 - c, (1.0 - c) / 2.0], 1.0 + alpha, -2.0 * c, 1.0 - alpha)
    }

    pub fn highpass(cutoff: f64, sample_rate: f64, q: f64) -> Self {
        let w0 = 2.0 * PI * cutoff / sample_rate;
        let (s, c) = w0.sin_cos();
        let alpha = s / (2.0 * q);
        Self::from_raw([(1.0 + c) / 2.0, -(1.0 + c), (1.0 + c) / 2.0], 1.0 + alpha, -2.0 * c, 1.0 - alpha)
    }

    pub fn process(&mut self, v: f64) -> f64 {
        let out = self.b[0] * v + self.b[1] * self.x[0] + self.b[2] * self.x[1] - self.a[0] * self.y[0] - self.a[1] * self.y[1];
        self.x = [v, self.x[0]];
        self.y = [out, self.y[0]];
        out
    }
}

/// Timing of the bursts inside one clip, in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BurstPlan {
    pub durations: Vec<f64>,
    /// One gap between each pair of consecutive bursts.
    pub gaps: Vec<f64>,
}

impl BurstPlan {
    pub fn span(&self) -> f64 {
        self.durations.iter().sum::<f64>() + self.gaps.iter().sum::<f64>()
    }
}

/// A cough clip together with the `[start, end)` second ranges of its bursts.
#[derive(Debug, Clone)]
pub struct CoughClip {
    pub clip: AudioClip,
    pub bursts: Vec<(f64, f64)>,
}

fn check_budget(n_bursts: usize, clip_len: f64) -> Result<(), SynthError> {
    let needed = n_bursts as f64 * BURST_BUDGET_SECS + 2.0 * MARGIN_SECS;
    if needed > clip_len + 1e-12 {
        return Err(SynthError::SpecInfeasible {
            n_bursts,
            needed,
            clip_len,
        });
    }
    Ok(())
}

fn secs_to_samples(s: f64) -> usize {
    (s * CANONICAL_RATE as f64).round() as usize
}

fn noise_floor<R: Rng>(rng: &mut R, n: usize, bm: &mut BoxMuller) -> Vec<f64> {
    (0..n).map(|_| NOISE_FLOOR * bm.sample(rng)).collect()
}

/// Band-limited noise with a short linear attack and an exponential decay,
/// scaled so its largest magnitude is `peak`.
fn burst<R: Rng>(rng: &mut R, bm: &mut BoxMuller, len: usize, peak: f64) -> Vec<f64> {
    let fs = CANONICAL_RATE as f64;
    let mut hp = Biquad::highpass(300.0, fs, std::f64::consts::FRAC_1_SQRT_2);
    let mut lp = Biquad::lowpass(3000.0, fs, std::f64::consts::FRAC_1_SQRT_2);
    let attack = secs_to_samples(ATTACK_SECS).max(1);
    let mut out: Vec<f64> = (0..len)
        .map(|i| {
            let v = lp.process(hp.process(bm.sample(rng)));
            let t = i as f64 / fs;
            let env = if i < attack {
                (i + 1) as f64 / attack as f64
            } else {
                (-(t - ATTACK_SECS) / DECAY_SECS).exp()
            };
            v * env
        })
        .collect();
    let max = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max > 0.0 {
        out.iter_mut().for_each(|v| *v *= peak / max);
    }
    out
}

/// Renders an explicit plan. The first burst starts at a random offset that
/// keeps both margins clear.
pub fn gen_cough_planned<R: Rng>(rng: &mut R, plan: &BurstPlan, clip_len: f64) -> Result<CoughClip, SynthError> {
    let n = plan.durations.len();
    if n == 0 || plan.gaps.len() + 1 != n {
        return Err(SynthError::InvalidSpec(format!(
            "{} bursts need {} gaps, got {}",
            n,
            n.saturating_sub(1),
            plan.gaps.len()
        )));
    }
    let needed = plan.span() + 2.0 * MARGIN_SECS;
    if needed > clip_len + 1e-12 {
        return Err(SynthError::SpecInfeasible {
            n_bursts: n,
            needed,
            clip_len,
        });
    }
    let total = secs_to_samples(clip_len);
    let mut bm = BoxMuller::new();
    let slack = clip_len - needed;
    let mut t = MARGIN_SECS + rng.gen::<f64>() * slack;
    let peak = rng.gen_range(0.5..=0.9);
    let mut samples = noise_floor(rng, total, &mut bm);
    let mut bursts = Vec::with_capacity(n);
    for (i, &d) in plan.durations.iter().enumerate() {
        let start = secs_to_samples(t);
        let len = secs_to_samples(d).min(total - start);
        // Bursts within a clip vary a little around the clip's peak level.
        let level = peak * rng.gen_range(0.8..=1.0);
        for (s, v) in samples[start..start + len].iter_mut().zip(burst(rng, &mut bm, len, level)) {
            *s += v;
        }
        bursts.push((start as f64 / CANONICAL_RATE as f64, (start + len) as f64 / CANONICAL_RATE as f64));
        t += d + plan.gaps.get(i).copied().unwrap_or(0.0);
    }
    samples.iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0));
    Ok(CoughClip {
        clip: AudioClip::new(samples, CANONICAL_RATE),
        bursts,
    })
}

/// Random burst plan: durations and gaps drawn from their ranges, then
/// scaled down together if they would not fit between the margins.
pub fn random_plan<R: Rng>(rng: &mut R, n_bursts: usize, clip_len: f64) -> Result<BurstPlan, SynthError> {
    if n_bursts == 0 {
        return Err(SynthError::InvalidSpec("at least one burst required".into()));
    }
    check_budget(n_bursts, clip_len)?;
    let mut plan = BurstPlan {
        durations: (0..n_bursts).map(|_| rng.gen_range(BURST_MIN_SECS..=BURST_MAX_SECS)).collect(),
        gaps: (1..n_bursts).map(|_| rng.gen_range(GAP_MIN_SECS..=GAP_MAX_SECS)).collect(),
    };
    let room = clip_len - 2.0 * MARGIN_SECS;
    let span = plan.span();
    if span > room {
        let f = room / span * (1.0 - 1e-9);
        plan.durations.iter_mut().for_each(|d| *d *= f);
        plan.gaps.iter_mut().for_each(|g| *g *= f);
    }
    Ok(plan)
}

pub fn gen_cough_detailed<R: Rng>(rng: &mut R, n_bursts: usize, clip_len: f64) -> Result<CoughClip, SynthError> {
    let plan = random_plan(rng, n_bursts, clip_len)?;
    gen_cough_planned(rng, &plan, clip_len)
}

pub fn gen_cough<R: Rng>(rng: &mut R, n_bursts: usize, clip_len: f64) -> Result<AudioClip, SynthError> {
    gen_cough_detailed(rng, n_bursts, clip_len).map(|c| c.clip)
}

fn tonal<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let n_tones = rng.gen_range(2..=4);
    let mut freqs: Vec<f64> = Vec::with_capacity(n_tones);
    while freqs.len() < n_tones {
        let f = rng.gen_range(150.0..2000.0);
        if freqs.iter().all(|g: &f64| (g - f).abs() >= 150.0) {
            freqs.push(f);
        }
    }
    let level = (rng.gen_range(0.01f64.ln()..0.08f64.ln())).exp();
    let weights: Vec<f64> = (0..n_tones).map(|_| rng.gen_range(0.5..1.0)).collect();
    let wsum: f64 = weights.iter().sum();
    let phases: Vec<f64> = (0..n_tones).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
    let fs = CANONICAL_RATE as f64;
    (0..n)
        .map(|i| {
            let t = i as f64 / fs;
            freqs
                .iter()
                .zip(&weights)
                .zip(&phases)
                .map(|((f, w), p)| level * w / wsum * (2.0 * PI * f * t + p).sin())
                .sum()
        })
        .collect()
}

fn clicks<R: Rng>(rng: &mut R, bm: &mut BoxMuller, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for _ in 0..rng.gen_range(5..=20) {
        let len = secs_to_samples(rng.gen_range(0.001..0.008)).max(2);
        let start = rng.gen_range(0..n - len);
        let amp = rng.gen_range(0.1..0.5);
        let tau = len as f64 / 4.0;
        for i in 0..len {
            out[start + i] += amp * (-(i as f64) / tau).exp() * bm.sample(rng).clamp(-1.0, 1.0);
        }
    }
    out
}

/// White noise shaped by `1 / sqrt(k)` in the frequency domain, so power falls
/// as `1 / f`, then scaled to a peak drawn log-uniformly from [0.02, 0.2].
fn pink<R: Rng>(rng: &mut R, bm: &mut BoxMuller, n: usize) -> Vec<f64> {
    let size = n.next_power_of_two();
    let plan = FftPlan::new(size);
    let mut re: Vec<f64> = (0..size).map(|_| bm.sample(rng)).collect();
    let mut im = vec![0.0; size];
    plan.forward(&mut re, &mut im);
    re[0] = 0.0;
    im[0] = 0.0;
    for k in 1..size {
        let bin = k.min(size - k) as f64;
        let g = 1.0 / bin.sqrt();
        re[k] *= g;
        im[k] *= g;
    }
    plan.inverse(&mut re, &mut im);
    re.truncate(n);
    let max = re.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let peak = (rng.gen_range(0.02f64.ln()..0.2f64.ln())).exp();
    re.iter_mut().for_each(|v| *v *= peak / max);
    re
}

pub fn gen_background<R: Rng>(rng: &mut R, kind: BackgroundKind, clip_len: f64) -> AudioClip {
    let n = secs_to_samples(clip_len);
    let mut bm = BoxMuller::new();
    let mut samples = match kind {
        BackgroundKind::Tonal => tonal(rng, n),
        BackgroundKind::Clicks => clicks(rng, &mut bm, n),
        BackgroundKind::PinkNoise => pink(rng, &mut bm, n),
    };
    if kind != BackgroundKind::PinkNoise {
        for (s, f) in samples.iter_mut().zip(noise_floor(rng, n, &mut bm)) {
            *s += f;
        }
    }
    samples.iter_mut().for_each(|v| *v = v.clamp(-0.5, 0.5));
    AudioClip::new(samples, CANONICAL_RATE)
}

/// Noise-floor recording of `total_secs` with single-burst coughs planted at
/// evenly spread, jittered positions. Returns the planted `[start, end)`
/// intervals in seconds.
pub fn gen_planted<R: Rng>(rng: &mut R, total_secs: f64, n_coughs: usize) -> Result<(AudioClip, Vec<(f64, f64)>), SynthError> {
    let slot = total_secs / n_coughs.max(1) as f64;
    if slot < 3.0 {
        return Err(SynthError::InvalidSpec(format!(
            "{n_coughs} coughs do not fit in {total_secs} s with 3 s spacing"
        )));
    }
    let total = secs_to_samples(total_secs);
    let mut bm = BoxMuller::new();
    let mut samples = noise_floor(rng, total, &mut bm);
    let mut planted = Vec::with_capacity(n_coughs);
    for i in 0..n_coughs {
        let c = gen_cough_detailed(rng, 1, 1.0)?;
        let offset = i as f64 * slot + slot / 2.0 - 0.5 + rng.gen_range(-0.5..0.5);
        let start = secs_to_samples(offset);
        for (s, v) in samples[start..].iter_mut().zip(&c.clip.samples) {
            *s = (*s + v).clamp(-1.0, 1.0);
        }
        let (b0, b1) = c.bursts[0];
        planted.push((offset + b0, offset + b1));
    }
    Ok((AudioClip::new(samples, CANONICAL_RATE), planted))
}

/// Stream used by [`write_planted`], above any corpus job index.
const PLANTED_STREAM: u64 = streams::SYNTH + (1 << 40);

/// Writes a planted-cough recording to `path` and its intervals next to it as
/// `<stem>.json`.
pub fn write_planted(seed: u64, total_secs: f64, n_coughs: usize, path: &Path) -> Result<Vec<(f64, f64)>, SynthError> {
    let mut rng = substream(seed, PLANTED_STREAM);
    let (clip, planted) = gen_planted(&mut rng, total_secs, n_coughs)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| SynthError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    write_wav(path, &clip)?;
    let json_path = path.with_extension("json");
    let body = serde_json::to_string_pretty(&serde_json::json!({ "intervals": planted })).expect("serializable");
    std::fs::write(&json_path, body + "\n").map_err(|source| SynthError::Io { path: json_path, source })?;
    Ok(planted)
}

enum Job {
    Cough { bursts: u8, index: usize },
    Background { kind: BackgroundKind, index: usize },
}

impl Job {
    fn file_name(&self) -> String {
        match self {
            Job::Cough { bursts, index } => format!("cough_b{bursts}_{index:04}.wav"),
            Job::Background { kind, index } => format!("bg_{}_{index:04}.wav", kind.as_str()),
        }
    }
}

/// Writes every clip under `out_dir/clips/` and the manifest to
/// `out_dir/manifest.csv`, returning the manifest path. Clip `i` draws from
/// its own substream, so output bytes do not depend on thread count.
pub fn gen_corpus(spec: &SynthSpec, out_dir: impl AsRef<Path>) -> Result<PathBuf, SynthError> {
    spec.validate()?;
    let out_dir = out_dir.as_ref();
    let clip_dir = out_dir.join("clips");
    std::fs::create_dir_all(&clip_dir).map_err(|source| SynthError::Io {
        path: clip_dir.clone(),
        source,
    })?;
    let mut jobs = Vec::new();
    for &bursts in &spec.burst_counts {
        for index in 0..spec.n_cough_per_burst {
            jobs.push(Job::Cough { bursts, index });
        }
    }
    for kind in BackgroundKind::ALL {
        for index in 0..spec.n_background_per_kind {
            jobs.push(Job::Background { kind, index });
        }
    }
    let rows = jobs
        .par_iter()
        .enumerate()
        .map(|(i, job)| {
            let mut rng = substream(spec.seed, streams::SYNTH + i as u64);
            let (clip, label, burst_count) = match *job {
                Job::Cough { bursts, .. } => (gen_cough(&mut rng, bursts as usize, spec.clip_len)?, Label::Cough, Some(bursts)),
                Job::Background { kind, .. } => (gen_background(&mut rng, kind, spec.clip_len), Label::NonCough, None),
            };
            let rel = PathBuf::from("clips").join(job.file_name());
            write_wav(out_dir.join(&rel), &clip)?;
            Ok(ManifestRow {
                path: rel,
                label,
                activity: Activity::Unknown,
                subject: "synthetic".into(),
                burst_count,
            })
        })
        .collect::<Result<Vec<_>, SynthError>>()?;
    let manifest = out_dir.join("manifest.csv");
    write_manifest(&manifest, &rows)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn rms(x: &[f64]) -> f64 {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt()
    }

    #[test]
    fn infeasible_plans_are_rejected() {
        let mut rng = substream(1, 0);
        let plan = BurstPlan {
            durations: vec![0.45; 4],
            gaps: vec![0.15; 3],
        };
        assert!(matches!(
            gen_cough_planned(&mut rng, &plan, 1.5),
            Err(SynthError::SpecInfeasible { n_bursts: 4, .. })
        ));
        assert!(matches!(
            gen_cough(&mut rng, 4, 1.0),
            Err(SynthError::SpecInfeasible { .. })
        ));
        assert!(gen_cough(&mut rng, 4, 1.5).is_ok());
    }

    #[test]
    fn bursts_dominate_gaps() {
        for seed in 0..40 {
            let mut rng = substream(seed, 0);
            let n = 1 + (seed as usize % 4);
            let c = gen_cough_detailed(&mut rng, n, 1.5).unwrap();
            let fs = CANONICAL_RATE as f64;
            let mut inside = Vec::new();
            let mut outside = Vec::new();
            for (i, &v) in c.clip.samples.iter().enumerate() {
                let t = i as f64 / fs;
                if c.bursts.iter().any(|&(a, b)| t >= a && t < b) {
                    inside.push(v);
                } else {
                    outside.push(v);
                }
            }
            assert_eq!(c.bursts.len(), n);
            assert!(rms(&inside) >= 5.0 * rms(&outside), "seed {seed}");
            let peak = c.clip.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!((0.39..=0.91).contains(&peak), "peak {peak}");
        }
    }

    #[test]
    fn same_seed_same_clip() {
        let a = gen_cough(&mut substream(4, 2), 3, 1.5).unwrap();
        let b = gen_cough(&mut substream(4, 2), 3, 1.5).unwrap();
        assert_eq!(a, b);
        for kind in BackgroundKind::ALL {
            assert_eq!(
                gen_background(&mut substream(9, 1), kind, 1.5),
                gen_background(&mut substream(9, 1), kind, 1.5)
            );
        }
    }

    fn magnitude_spectrum(x: &[f64]) -> Vec<f64> {
        let n = x.len().next_power_of_two();
        let plan = FftPlan::new(n);
        let mut re = x.to_vec();
        re.resize(n, 0.0);
        let mut im = vec![0.0; n];
        plan.forward(&mut re, &mut im);
        (0..n / 2).map(|k| re[k].hypot(im[k])).collect()
    }

    #[test]
    fn tonal_clip_has_two_to_four_peaks() {
        for seed in 0..20 {
            let clip = gen_background(&mut substream(seed, 5), BackgroundKind::Tonal, 1.5);
            // Hann-windowed DFT; a peak is a local maximum above 10% of the largest.
            let n = clip.samples.len();
            let w: Vec<f64> = clip
                .samples
                .iter()
                .enumerate()
                .map(|(i, v)| v * (0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()))
                .collect();
            let mag = magnitude_spectrum(&w);
            let top = mag.iter().cloned().fold(0.0, f64::max);
            let peaks = (1..mag.len() - 1)
                .filter(|&k| mag[k] > 0.1 * top && mag[k] > mag[k - 1] && mag[k] >= mag[k + 1])
                .count();
            assert!((2..=4).contains(&peaks), "seed {seed}: {peaks} peaks");
        }
    }

    #[test]
    fn pink_noise_octaves_halve() {
        let clip = gen_background(&mut substream(3, 3), BackgroundKind::PinkNoise, 2.0);
        let n = clip.samples.len().next_power_of_two();
        let mag = magnitude_spectrum(&clip.samples);
        let hz = CANONICAL_RATE as f64 / n as f64;
        // Mean power per bin in octaves starting at 62.5 Hz.
        let mut bands = Vec::new();
        let mut lo = 62.5;
        while lo * 2.0 <= 4000.0 {
            let (a, b) = ((lo / hz) as usize, (2.0 * lo / hz) as usize);
            bands.push(mag[a..b].iter().map(|m| m * m).sum::<f64>() / (b - a) as f64);
            lo *= 2.0;
        }
        for w in bands.windows(2) {
            let ratio = w[0] / w[1];
            assert!((1.5..=2.5).contains(&ratio), "{bands:?}");
        }
    }

    #[test]
    fn backgrounds_stay_within_half_scale() {
        for seed in 0..10 {
            for kind in BackgroundKind::ALL {
                let c = gen_background(&mut substream(seed, 8), kind, 1.5);
                assert!(c.samples.iter().all(|v| v.abs() <= 0.5));
                assert_eq!(c.samples.len(), 24_000);
            }
        }
    }

    #[test]
    fn biquads_pass_and_reject() {
        let fs = 16_000.0;
        let gain = |mut f: Biquad, hz: f64| {
            let x: Vec<f64> = (0..16_000).map(|i| (2.0 * PI * hz * i as f64 / fs).sin()).collect();
            let y: Vec<f64> = x.iter().map(|&v| f.process(v)).collect();
            rms(&y[8000..]) / rms(&x[8000..])
        };
        assert!(gain(Biquad::lowpass(3000.0, fs, 0.707), 300.0) > 0.95);
        assert!(gain(Biquad::lowpass(3000.0, fs, 0.707), 7000.0) < 0.15);
        assert!(gain(Biquad::highpass(300.0, fs, 0.707), 3000.0) > 0.95);
        assert!(gain(Biquad::highpass(300.0, fs, 0.707), 40.0) < 0.05);
    }

    #[test]
    fn planted_intervals_are_apart() {
        let mut rng = substream(2, 0);
        let (clip, planted) = gen_planted(&mut rng, 60.0, 3).unwrap();
        assert_eq!(clip.samples.len(), 960_000);
        assert_eq!(planted.len(), 3);
        for w in planted.windows(2) {
            assert!(w[1].0 - w[0].1 > 3.0);
        }
        let _ = rng.gen::<u8>();
    }
}
