//! WAV decoding/encoding and sample-rate canonicalization.
//!
//! Everything downstream consumes [`AudioClip`]s holding mono `f64` samples in
//! `[-1, 1]` at [`CANONICAL_RATE`].

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

/// Sample rate every clip is converted to before analysis.
pub const CANONICAL_RATE: u32 = 16_000;

const PCM_SCALE: f64 = 32768.0;
const FORMAT_PCM: u16 = 1;
const FORMAT_IEEE_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("malformed WAV container: {0}")]
    MalformedContainer(String),
    #[error("unsupported WAV encoding: {0}")]
    UnsupportedEncoding(String),
    #[error("audio contains no samples")]
    EmptyAudio,
    #[error("invalid clip: {0}")]
    InvalidClip(String),
    #[error("I/O failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Mono audio buffer with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub source_id: Option<String>,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Self {
            samples,
            sample_rate,
            source_id: None,
        }
    }

    pub fn with_source(mut self, id: impl Into<String>) -> Self {
        self.source_id = Some(id.into());
        self
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Checks the invariants every downstream consumer relies on.
    pub fn validate(&self) -> Result<(), AudioError> {
        if self.sample_rate == 0 {
            return Err(AudioError::InvalidClip("sample rate is zero".into()));
        }
        if self.samples.is_empty() {
            return Err(AudioError::EmptyAudio);
        }
        if let Some(i) = self
            .samples
            .iter()
            .position(|s| !s.is_finite() || s.abs() > 1.0)
        {
            return Err(AudioError::InvalidClip(format!(
                "sample {i} = {} outside [-1, 1]",
                self.samples[i]
            )));
        }
        Ok(())
    }

    /// Sub-clip `[start, end)` in samples, sharing the rate and source id.
    pub fn slice(&self, start: usize, end: usize) -> AudioClip {
        AudioClip {
            samples: self.samples[start..end].to_vec(),
            sample_rate: self.sample_rate,
            source_id: self.source_id.clone(),
        }
    }
}

/// Per-sample average of two channels.
pub fn downmix(left: &[f64], right: &[f64]) -> Vec<f64> {
    left.iter()
        .zip(right)
        .map(|(l, r)| 0.5 * (l + r))
        .collect()
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip, AudioError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| AudioError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let clip = decode_wav(&bytes)?;
    Ok(clip.with_source(path.display().to_string()))
}

struct Format {
    encoding: u16,
    channels: u16,
    sample_rate: u32,
    bits: u16,
    block_align: u16,
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

fn parse_fmt(body: &[u8]) -> Result<Format, AudioError> {
    if body.len() < 16 {
        return Err(AudioError::MalformedContainer(format!(
            "fmt chunk is {} bytes, need at least 16",
            body.len()
        )));
    }
    let mut encoding = u16_at(body, 0);
    if encoding == FORMAT_EXTENSIBLE {
        if body.len() < 40 {
            return Err(AudioError::MalformedContainer(
                "extensible fmt chunk too short".into(),
            ));
        }
        // The sub-format GUID starts at offset 24; its first two bytes carry
        // the plain format tag.
        encoding = u16_at(body, 24);
    }
    Ok(Format {
        encoding,
        channels: u16_at(body, 2),
        sample_rate: u32_at(body, 4),
        block_align: u16_at(body, 12),
        bits: u16_at(body, 14),
    })
}

/// Decodes an in-memory RIFF/WAVE file.
///
/// 16-bit PCM is scaled by 1/32768 and 32-bit float is taken as-is (clamped
/// to `[-1, 1]`). Stereo is averaged to mono. The sample rate is preserved.
pub fn decode_wav(bytes: &[u8]) -> Result<AudioClip, AudioError> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(AudioError::MalformedContainer(
            "missing RIFF/WAVE header".into(),
        ));
    }
    let riff_len = u32_at(bytes, 4) as usize;
    if riff_len + 8 > bytes.len() {
        return Err(AudioError::MalformedContainer(format!(
            "RIFF size {} exceeds file length {}",
            riff_len + 8,
            bytes.len()
        )));
    }
    let end = riff_len + 8;

    let mut format = None;
    let mut data = None;
    let mut at = 12;
    while at + 8 <= end {
        let id = &bytes[at..at + 4];
        let size = u32_at(bytes, at + 4) as usize;
        let body_start = at + 8;
        let body_end = body_start
            .checked_add(size)
            .filter(|&e| e <= end)
            .ok_or_else(|| {
                AudioError::MalformedContainer(format!(
                    "chunk {:?} of {size} bytes overruns the container",
                    String::from_utf8_lossy(id)
                ))
            })?;
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => format = Some(parse_fmt(body)?),
            b"data" => data = Some(body),
            _ => {}
        }
        // Chunks are word aligned.
        at = body_end + (size & 1);
    }

    let format =
        format.ok_or_else(|| AudioError::MalformedContainer("no fmt chunk".into()))?;
    let data = data.ok_or_else(|| AudioError::MalformedContainer("no data chunk".into()))?;

    if format.channels != 1 && format.channels != 2 {
        return Err(AudioError::UnsupportedEncoding(format!(
            "{} channels",
            format.channels
        )));
    }
    if format.sample_rate == 0 {
        return Err(AudioError::MalformedContainer("sample rate is zero".into()));
    }
    let bytes_per_sample = match (format.encoding, format.bits) {
        (FORMAT_PCM, 16) => 2,
        (FORMAT_IEEE_FLOAT, 32) => 4,
        (enc, bits) => {
            return Err(AudioError::UnsupportedEncoding(format!(
                "format tag {enc} with {bits} bits per sample"
            )))
        }
    };
    let frame_bytes = bytes_per_sample * format.channels as usize;
    if format.block_align as usize != frame_bytes {
        return Err(AudioError::MalformedContainer(format!(
            "block align {} does not match {frame_bytes}",
            format.block_align
        )));
    }
    if data.len() % frame_bytes != 0 {
        return Err(AudioError::MalformedContainer(format!(
            "data chunk length {} is not a multiple of the frame size {frame_bytes}",
            data.len()
        )));
    }

    let decode_one = |chunk: &[u8]| -> Result<f64, AudioError> {
        if bytes_per_sample == 2 {
            Ok(i16::from_le_bytes([chunk[0], chunk[1]]) as f64 / PCM_SCALE)
        } else {
            let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]) as f64;
            if !v.is_finite() {
                return Err(AudioError::MalformedContainer("non-finite float sample".into()));
            }
            Ok(v.clamp(-1.0, 1.0))
        }
    };

    let interleaved = data
        .chunks_exact(bytes_per_sample)
        .map(decode_one)
        .collect::<Result<Vec<f64>, _>>()?;
    if interleaved.is_empty() {
        return Err(AudioError::EmptyAudio);
    }
    let samples = if format.channels == 2 {
        let (left, right): (Vec<f64>, Vec<f64>) =
            interleaved.chunks_exact(2).map(|f| (f[0], f[1])).unzip();
        downmix(&left, &right)
    } else {
        interleaved
    };
    Ok(AudioClip::new(samples, format.sample_rate))
}

/// Quantizes a sample to signed 16-bit PCM.
pub fn quantize_pcm16(sample: f64) -> i16 {
    (sample.clamp(-1.0, 1.0) * PCM_SCALE)
        .round()
        .clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

/// Encodes a clip as 16-bit PCM mono little-endian WAV at the clip's rate.
pub fn encode_wav(clip: &AudioClip) -> Vec<u8> {
    let data_len = clip.samples.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&FORMAT_PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&clip.sample_rate.to_le_bytes());
    out.extend_from_slice(&(clip.sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in &clip.samples {
        out.extend_from_slice(&quantize_pcm16(s).to_le_bytes());
    }
    out
}

pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip) -> Result<(), AudioError> {
    clip.validate()?;
    let path = path.as_ref();
    fs::write(path, encode_wav(clip)).map_err(|source| AudioError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Linear-interpolation resampler.
///
/// Output sample `i` sits at source position `i * source_rate / target_rate`;
/// positions past the last source sample hold the last value. Equal rates
/// return the clip unchanged.
pub fn resample_linear(clip: &AudioClip, target_rate: u32) -> AudioClip {
    assert!(target_rate > 0, "target rate must be positive");
    if clip.sample_rate == target_rate || clip.samples.is_empty() {
        return AudioClip {
            sample_rate: target_rate,
            ..clip.clone()
        };
    }
    let n = clip.samples.len();
    let out_len = ((n as u64 * target_rate as u64) as f64 / clip.sample_rate as f64).round()
        as usize;
    let step = clip.sample_rate as f64 / target_rate as f64;
    let last = n - 1;
    let samples = (0..out_len)
        .map(|i| {
            let pos = i as f64 * step;
            let lo = pos.floor() as usize;
            if lo >= last {
                return clip.samples[last];
            }
            let frac = pos - lo as f64;
            clip.samples[lo] + frac * (clip.samples[lo + 1] - clip.samples[lo])
        })
        .collect();
    AudioClip {
        samples,
        sample_rate: target_rate,
        source_id: clip.source_id.clone(),
    }
}

/// Resamples to [`CANONICAL_RATE`] and checks the clip invariants.
pub fn canonicalize(clip: AudioClip) -> Result<AudioClip, AudioError> {
    clip.validate()?;
    Ok(if clip.sample_rate == CANONICAL_RATE {
        clip
    } else {
        resample_linear(&clip, CANONICAL_RATE)
    })
}
