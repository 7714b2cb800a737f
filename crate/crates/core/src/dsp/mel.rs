//! Mel scale conversions and the triangular filterbank.

use super::{DspError, SpectralConfig};

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// One triangular filter stored as its nonzero span.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleFilter {
    pub start_bin: usize,
    pub weights: Vec<f64>,
    /// Frequency of the peak bin in Hz.
    pub center_hz: f64,
}

/// `n_mels` peak-normalized triangles over `frame_len/2 + 1` FFT bins.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    pub n_bins: usize,
    pub filters: Vec<TriangleFilter>,
}

impl MelFilterbank {
    /// Builds the filterbank for `cfg` at `sample_rate`.
    ///
    /// `n_mels + 2` points equally spaced in mel between `fmin` and `fmax` are
    /// snapped to the nearest FFT bin; filter `i` rises linearly from point
    /// `i` to a peak of 1.0 at point `i + 1` and falls to zero at point
    /// `i + 2`. Two adjacent points landing on the same bin is an error.
    pub fn new(cfg: &SpectralConfig, sample_rate: u32) -> Result<Self, DspError> {
        cfg.validate(sample_rate)?;
        let n_bins = cfg.frame_len / 2 + 1;
        let bin_hz = sample_rate as f64 / cfg.frame_len as f64;
        let (mel_lo, mel_hi) = (hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax));
        let points = cfg.n_mels + 2;
        let bins: Vec<usize> = (0..points)
            .map(|i| {
                let mel = mel_lo + (mel_hi - mel_lo) * i as f64 / (points - 1) as f64;
                ((mel_to_hz(mel) / bin_hz).round() as usize).min(n_bins - 1)
            })
            .collect();
        if let Some(i) = bins.windows(2).position(|w| w[0] == w[1]) {
            return Err(DspError::DegenerateFilter {
                point: i,
                bin: bins[i],
            });
        }
        let filters = bins
            .windows(3)
            .map(|w| {
                let (lo, center, hi) = (w[0], w[1], w[2]);
                let weights = (lo..=hi)
                    .map(|k| {
                        if k <= center {
                            (k - lo) as f64 / (center - lo) as f64
                        } else {
                            (hi - k) as f64 / (hi - center) as f64
                        }
                    })
                    .collect();
                TriangleFilter {
                    start_bin: lo,
                    weights,
                    center_hz: center as f64 * bin_hz,
                }
            })
            .collect();
        Ok(Self { n_bins, filters })
    }

    pub fn n_mels(&self) -> usize {
        self.filters.len()
    }

    /// Dense `[n_mels][n_bins]` weight matrix.
    pub fn dense(&self) -> Vec<Vec<f64>> {
        self.filters
            .iter()
            .map(|f| {
                let mut row = vec![0.0; self.n_bins];
                row[f.start_bin..f.start_bin + f.weights.len()].copy_from_slice(&f.weights);
                row
            })
            .collect()
    }

    /// Band energies `W * power`.
    pub fn apply(&self, power: &[f64]) -> Vec<f64> {
        debug_assert_eq!(power.len(), self.n_bins);
        self.filters
            .iter()
            .map(|f| {
                f.weights
                    .iter()
                    .zip(&power[f.start_bin..])
                    .map(|(w, p)| w * p)
                    .sum()
            })
            .collect()
    }
}

/// Convenience wrapper returning the dense matrix.
pub fn mel_filterbank(cfg: &SpectralConfig, sample_rate: u32) -> Result<Vec<Vec<f64>>, DspError> {
    Ok(MelFilterbank::new(cfg, sample_rate)?.dense())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mel_reference_points() {
        assert_eq!(hz_to_mel(0.0), 0.0);
        // 2595 * log10(2)
        assert!((hz_to_mel(700.0) - 781.1727).abs() < 1e-3);
        for f in [100.0, 1000.0, 7999.0] {
            assert!((mel_to_hz(hz_to_mel(f)) - f).abs() <= 1e-9 * f);
        }
    }

    #[test]
    fn default_bank_shape_and_peaks() {
        let cfg = SpectralConfig::default();
        let dense = mel_filterbank(&cfg, 16000).unwrap();
        assert_eq!(dense.len(), 40);
        assert!(dense.iter().all(|r| r.len() == 1025));
        for row in &dense {
            let max = row.iter().cloned().fold(f64::MIN, f64::max);
            assert_eq!(max, 1.0);
            assert!(row.iter().all(|&w| (0.0..=1.0).contains(&w)));
        }
    }

    #[test]
    fn no_spectral_gap_inside_band() {
        let cfg = SpectralConfig::default();
        let dense = mel_filterbank(&cfg, 16000).unwrap();
        let bin_hz = 16000.0 / 2048.0;
        for b in 0..1025 {
            let f = b as f64 * bin_hz;
            if f > cfg.fmin && f < cfg.fmax {
                let col: f64 = dense.iter().map(|r| r[b]).sum();
                assert!(col > 0.0, "bin {b} ({f} Hz) uncovered");
            }
        }
    }

    #[test]
    fn too_many_mels_is_degenerate() {
        let cfg = SpectralConfig {
            frame_len: 256,
            hop: 128,
            n_mels: 100,
            n_mfcc: 13,
            ..SpectralConfig::default()
        };
        assert!(matches!(
            MelFilterbank::new(&cfg, 16000),
            Err(DspError::DegenerateFilter { .. })
        ));
    }
}
