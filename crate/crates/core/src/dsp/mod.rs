//! Spectral kernels: framing, Hann window, power spectrum, mel filterbank,
//! log-mel spectrogram, orthonormal DCT-II and MFCC.

mod fft;
mod mel;

use std::f64::consts::{PI, TAU};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio_io::AudioClip;

pub use fft::FftPlan;
pub use mel::{hz_to_mel, mel_filterbank, mel_to_hz, MelFilterbank, TriangleFilter};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DspError {
    #[error("invalid spectral config: {0}")]
    InvalidConfig(String),
    #[error("mel points {point} and {} both map to FFT bin {bin}; frame too short for this many bands", point + 1)]
    DegenerateFilter { point: usize, bin: usize },
}

/// Analysis parameters shared by the log-mel and MFCC front ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectralConfig {
    pub frame_len: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub n_mfcc: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub log_floor: f64,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        Self {
            frame_len: 2048,
            hop: 512,
            n_mels: 40,
            n_mfcc: 40,
            fmin: 0.0,
            fmax: 8000.0,
            log_floor: 1e-10,
        }
    }
}

impl SpectralConfig {
    pub fn validate(&self, sample_rate: u32) -> Result<(), DspError> {
        let bad = |msg: String| Err(DspError::InvalidConfig(msg));
        if !self.frame_len.is_power_of_two() {
            return bad(format!("frame_len {} is not a power of two", self.frame_len));
        }
        if self.hop == 0 || self.hop > self.frame_len {
            return bad(format!("hop {} not in 1..={}", self.hop, self.frame_len));
        }
        let nyquist = sample_rate as f64 / 2.0;
        if !(self.fmin >= 0.0 && self.fmin < self.fmax && self.fmax <= nyquist) {
            return bad(format!(
                "need 0 <= fmin < fmax <= {nyquist}, got fmin={} fmax={}",
                self.fmin, self.fmax
            ));
        }
        let n_bins = self.frame_len / 2 + 1;
        if !(1 <= self.n_mfcc && self.n_mfcc <= self.n_mels && self.n_mels <= n_bins) {
            return bad(format!(
                "need 1 <= n_mfcc ({}) <= n_mels ({}) <= {n_bins}",
                self.n_mfcc, self.n_mels
            ));
        }
        if !(self.log_floor > 0.0 && self.log_floor.is_finite()) {
            return bad(format!("log_floor {} must be positive", self.log_floor));
        }
        Ok(())
    }

    /// Number of frames produced for a signal of `n` samples.
    pub fn frame_count(&self, n: usize) -> usize {
        if n < self.frame_len {
            1
        } else {
            (n - self.frame_len) / self.hop + 1
        }
    }
}

/// Splits a signal into `frame_len` frames spaced by `hop`.
///
/// No centering pad is applied and an incomplete tail is dropped; a signal
/// shorter than one frame is zero-padded into a single frame.
pub fn frame_signal(samples: &[f64], cfg: &SpectralConfig) -> Vec<Vec<f64>> {
    if samples.len() < cfg.frame_len {
        let mut frame = samples.to_vec();
        frame.resize(cfg.frame_len, 0.0);
        return vec![frame];
    }
    (0..cfg.frame_count(samples.len()))
        .map(|i| samples[i * cfg.hop..i * cfg.hop + cfg.frame_len].to_vec())
        .collect()
}

/// Periodic Hann window `0.5 (1 - cos(2 pi k / n))`.
pub fn hann_window(n: usize) -> Vec<f64> {
    assert!(n >= 1, "window length must be positive");
    (0..n)
        .map(|k| 0.5 * (1.0 - (TAU * k as f64 / n as f64).cos()))
        .collect()
}

/// `|DFT(frame)[b]|^2` for `b` in `0..=n/2`.
pub fn power_spectrum(frame: &[f64]) -> Vec<f64> {
    power_spectrum_with(&FftPlan::new(frame.len()), frame)
}

fn power_spectrum_with(plan: &FftPlan, frame: &[f64]) -> Vec<f64> {
    let mut re = frame.to_vec();
    let mut im = vec![0.0; frame.len()];
    plan.forward(&mut re, &mut im);
    (0..=frame.len() / 2)
        .map(|b| re[b] * re[b] + im[b] * im[b])
        .collect()
}

/// Row-major `[n][n]` orthonormal DCT-II matrix.
pub fn dct_ii_matrix(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    let (s0, sk) = ((1.0 / n as f64).sqrt(), (2.0 / n as f64).sqrt());
    for k in 0..n {
        let scale = if k == 0 { s0 } else { sk };
        for t in 0..n {
            m[k * n + t] = scale * (PI * (t as f64 + 0.5) * k as f64 / n as f64).cos();
        }
    }
    m
}

/// Orthonormal DCT-II: energy preserving, constant input maps to DC only.
pub fn dct_ii_orthonormal(v: &[f64]) -> Vec<f64> {
    let n = v.len();
    let m = dct_ii_matrix(n);
    (0..n)
        .map(|k| m[k * n..(k + 1) * n].iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectrumKind {
    FftPower,
    LogMel,
    Mfcc,
}

/// Frame-major matrix `[n_frames][n_bins]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub kind: SpectrumKind,
    pub n_frames: usize,
    pub n_bins: usize,
    pub data: Vec<f64>,
}

impl Spectrogram {
    pub fn row(&self, frame: usize) -> &[f64] {
        &self.data[frame * self.n_bins..(frame + 1) * self.n_bins]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.n_bins)
    }

    /// Per-bin arithmetic mean over frames.
    pub fn column_means(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.n_bins];
        for row in self.rows() {
            acc.iter_mut().zip(row).for_each(|(a, v)| *a += v);
        }
        let n = self.n_frames as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }

    /// One frame per line, bins as comma-separated columns, no header.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in self.rows() {
            for (i, v) in row.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write!(out, "{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

/// Cached window, FFT plan, filterbank and DCT for one config and rate.
#[derive(Debug, Clone)]
pub struct SpectralAnalyzer {
    cfg: SpectralConfig,
    sample_rate: u32,
    window: Vec<f64>,
    plan: FftPlan,
    filterbank: MelFilterbank,
    dct: Vec<f64>,
}

impl SpectralAnalyzer {
    pub fn new(cfg: &SpectralConfig, sample_rate: u32) -> Result<Self, DspError> {
        let filterbank = MelFilterbank::new(cfg, sample_rate)?;
        Ok(Self {
            cfg: cfg.clone(),
            sample_rate,
            window: hann_window(cfg.frame_len),
            plan: FftPlan::new(cfg.frame_len),
            filterbank,
            dct: dct_ii_matrix(cfg.n_mels),
        })
    }

    pub fn config(&self) -> &SpectralConfig {
        &self.cfg
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.filterbank
    }

    fn check_rate(&self, clip: &AudioClip) -> Result<(), DspError> {
        if clip.sample_rate != self.sample_rate {
            return Err(DspError::InvalidConfig(format!(
                "clip rate {} differs from analyzer rate {}",
                clip.sample_rate, self.sample_rate
            )));
        }
        Ok(())
    }

    pub fn power_spectrogram(&self, clip: &AudioClip) -> Result<Spectrogram, DspError> {
        self.check_rate(clip)?;
        let n_bins = self.cfg.frame_len / 2 + 1;
        let frames = frame_signal(&clip.samples, &self.cfg);
        let mut data = Vec::with_capacity(frames.len() * n_bins);
        for mut frame in frames {
            frame.iter_mut().zip(&self.window).for_each(|(x, w)| *x *= w);
            data.extend(power_spectrum_with(&self.plan, &frame));
        }
        Ok(Spectrogram {
            kind: SpectrumKind::FftPower,
            n_frames: data.len() / n_bins,
            n_bins,
            data,
        })
    }

    /// Window, power spectrum, mel filterbank, then `ln(x + log_floor)`.
    pub fn log_mel(&self, clip: &AudioClip) -> Result<Spectrogram, DspError> {
        let power = self.power_spectrogram(clip)?;
        let n_mels = self.cfg.n_mels;
        let mut data = Vec::with_capacity(power.n_frames * n_mels);
        for row in power.rows() {
            data.extend(
                self.filterbank
                    .apply(row)
                    .into_iter()
                    .map(|e| (e + self.cfg.log_floor).ln()),
            );
        }
        Ok(Spectrogram {
            kind: SpectrumKind::LogMel,
            n_frames: power.n_frames,
            n_bins: n_mels,
            data,
        })
    }

    /// First `n_mfcc` DCT-II coefficients of each log-mel row.
    pub fn mfcc_from_log_mel(&self, log_mel: &Spectrogram) -> Spectrogram {
        let (n_mels, n_mfcc) = (self.cfg.n_mels, self.cfg.n_mfcc);
        let mut data = Vec::with_capacity(log_mel.n_frames * n_mfcc);
        for row in log_mel.rows() {
            for k in 0..n_mfcc {
                let basis = &self.dct[k * n_mels..(k + 1) * n_mels];
                data.push(basis.iter().zip(row).map(|(a, b)| a * b).sum());
            }
        }
        Spectrogram {
            kind: SpectrumKind::Mfcc,
            n_frames: log_mel.n_frames,
            n_bins: n_mfcc,
            data,
        }
    }

    pub fn mfcc(&self, clip: &AudioClip) -> Result<Spectrogram, DspError> {
        Ok(self.mfcc_from_log_mel(&self.log_mel(clip)?))
    }
}

pub fn log_mel_spectrogram(clip: &AudioClip, cfg: &SpectralConfig) -> Result<Spectrogram, DspError> {
    SpectralAnalyzer::new(cfg, clip.sample_rate)?.log_mel(clip)
}

pub fn mfcc(clip: &AudioClip, cfg: &SpectralConfig) -> Result<Spectrogram, DspError> {
    SpectralAnalyzer::new(cfg, clip.sample_rate)?.mfcc(clip)
}
