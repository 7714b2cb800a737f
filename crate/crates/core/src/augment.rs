//! Cough-class augmentation: additive Gaussian noise and the even/odd
//! decimate-and-interpolate pair.

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio_io::AudioClip;
use crate::rng::{self, BoxMuller};

/// Noise standard deviation applied to cough clips.
pub const DEFAULT_NOISE_SCALE: f64 = 0.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AugmentError {
    #[error("interpolation needs at least 4 samples, clip has {0}")]
    TooShort(usize),
    #[error("no clips to augment")]
    NoInput,
    #[error("noise scale must be finite and non-negative, got {0}")]
    InvalidScale(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Original,
    Noise,
    InterpEven,
    InterpOdd,
}

impl Provenance {
    pub const ALL: [Provenance; 4] = [
        Provenance::Original,
        Provenance::Noise,
        Provenance::InterpEven,
        Provenance::InterpOdd,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Original => "original",
            Provenance::Noise => "noise",
            Provenance::InterpEven => "interp_even",
            Provenance::InterpOdd => "interp_odd",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.as_str() == s)
    }
}

impl std::fmt::Display for Provenance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// `out[i] = clamp(in[i] + n[i], -1, 1)` with `n[i] ~ N(0, scale^2)`.
pub fn add_gaussian_noise<R: RngCore + ?Sized>(
    clip: &AudioClip,
    scale: f64,
    rng: &mut R,
) -> Result<AudioClip, AugmentError> {
    if !(scale >= 0.0 && scale.is_finite()) {
        return Err(AugmentError::InvalidScale(scale));
    }
    if scale == 0.0 {
        return Ok(clip.clone());
    }
    let mut normal = BoxMuller::new();
    let samples = clip
        .samples
        .iter()
        .map(|&x| (x + scale * normal.sample(rng)).clamp(-1.0, 1.0))
        .collect();
    Ok(AudioClip {
        samples,
        ..clip.clone()
    })
}

/// Reconstructs the clip twice: once from its even-indexed samples and once
/// from its odd-indexed samples, filling the dropped positions by linear
/// interpolation between kept neighbours. Edges with a single kept
/// neighbour hold that sample. Both outputs keep the input length.
pub fn interpolate_pair(clip: &AudioClip) -> Result<(AudioClip, AudioClip), AugmentError> {
    let x = &clip.samples;
    let n = x.len();
    if n < 4 {
        return Err(AugmentError::TooShort(n));
    }
    let rebuild = |parity: usize| -> Vec<f64> {
        (0..n)
            .map(|i| {
                if i % 2 == parity {
                    return x[i];
                }
                let left = i.checked_sub(1);
                let right = (i + 1 < n).then_some(i + 1);
                match (left, right) {
                    (Some(l), Some(r)) => 0.5 * (x[l] + x[r]),
                    (Some(l), None) => x[l],
                    (None, Some(r)) => x[r],
                    (None, None) => unreachable!("n >= 4"),
                }
            })
            .collect()
    };
    let with = |samples| AudioClip {
        samples,
        ..clip.clone()
    };
    Ok((with(rebuild(0)), with(rebuild(1))))
}

/// Which augmentations to apply on top of the originals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentPlan {
    pub noise: bool,
    pub interp: bool,
    pub noise_scale: f64,
    /// Optional Gaussian noise added after interpolation. Off by default.
    pub interp_noise: Option<f64>,
}

impl Default for AugmentPlan {
    fn default() -> Self {
        Self {
            noise: true,
            interp: true,
            noise_scale: DEFAULT_NOISE_SCALE,
            interp_noise: None,
        }
    }
}

impl AugmentPlan {
    pub fn original_only() -> Self {
        Self {
            noise: false,
            interp: false,
            ..Self::default()
        }
    }

    pub fn noise_only() -> Self {
        Self {
            interp: false,
            ..Self::default()
        }
    }

    /// Number of clips produced per input clip, including the original.
    pub fn multiplier(&self) -> usize {
        1 + usize::from(self.noise) + 2 * usize::from(self.interp)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedClip {
    pub clip: AudioClip,
    pub provenance: Provenance,
    /// Index of the source clip in the input list.
    pub origin: usize,
}

/// Applies `plan` to every clip. Clip `i` draws its noise from the substream
/// `(seed, AUGMENT + i)`, so the result does not depend on scheduling.
/// Output is grouped per source clip in provenance order.
pub fn expand_with_plan(
    clips: &[AudioClip],
    plan: &AugmentPlan,
    seed: u64,
) -> Result<Vec<AugmentedClip>, AugmentError> {
    if clips.is_empty() {
        return Err(AugmentError::NoInput);
    }
    let per_clip = clips
        .par_iter()
        .enumerate()
        .map(|(i, clip)| {
            let mut rng = rng::substream(seed, rng::streams::AUGMENT + i as u64);
            let tag = |clip, provenance| AugmentedClip {
                clip,
                provenance,
                origin: i,
            };
            let mut out = Vec::with_capacity(plan.multiplier());
            out.push(tag(clip.clone(), Provenance::Original));
            if plan.noise {
                out.push(tag(
                    add_gaussian_noise(clip, plan.noise_scale, &mut rng)?,
                    Provenance::Noise,
                ));
            }
            if plan.interp {
                let (mut even, mut odd) = interpolate_pair(clip)?;
                if let Some(scale) = plan.interp_noise {
                    even = add_gaussian_noise(&even, scale, &mut rng)?;
                    odd = add_gaussian_noise(&odd, scale, &mut rng)?;
                }
                out.push(tag(even, Provenance::InterpEven));
                out.push(tag(odd, Provenance::InterpOdd));
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>, AugmentError>>()?;
    Ok(per_clip.into_iter().flatten().collect())
}

/// Full four-way expansion: original, noise, even and odd reconstructions.
pub fn expand_cough_set(
    clips: &[AudioClip],
    noise_scale: f64,
    seed: u64,
) -> Result<Vec<AugmentedClip>, AugmentError> {
    let plan = AugmentPlan {
        noise_scale,
        ..AugmentPlan::default()
    };
    expand_with_plan(clips, &plan, seed)
}
