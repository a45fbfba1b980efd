//! MFCC front-end with regression deltas.

use std::f64::consts::PI;

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use super::FeatureMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub window_ms: f64,
    pub shift_ms: f64,
    pub n_mels: usize,
    pub n_ceps: usize,
    /// Cepstral lifter coefficient; 0 disables liftering.
    pub lifter: f64,
    pub preemphasis: f64,
    pub low_freq: f64,
    /// Upper filterbank edge; `None` means Nyquist.
    pub high_freq: Option<f64>,
    pub delta_window: usize,
    /// Subtract the per-utterance mean of the static coefficients.
    pub mean_normalize: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            window_ms: 25.0,
            shift_ms: 10.0,
            n_mels: 26,
            n_ceps: 13,
            lifter: 0.0,
            preemphasis: 0.97,
            low_freq: 20.0,
            high_freq: None,
            delta_window: 2,
            mean_normalize: false,
        }
    }
}

/// Number of complete analysis windows in `n_samples`.
pub fn frame_count(n_samples: usize, window: usize, hop: usize) -> usize {
    if n_samples < window || hop == 0 {
        0
    } else {
        (n_samples - window) / hop + 1
    }
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

/// Triangular filters on the HTK mel scale, one row of `n_fft / 2 + 1` weights each.
fn mel_filterbank(n_mels: usize, n_fft: usize, sample_rate: f64, low: f64, high: f64) -> Vec<Vec<f64>> {
    let n_bins = n_fft / 2 + 1;
    let mel_low = hz_to_mel(low);
    let mel_high = hz_to_mel(high);
    let centers: Vec<f64> = (0..n_mels + 2)
        .map(|m| mel_low + (mel_high - mel_low) * m as f64 / (n_mels + 1) as f64)
        .collect();
    let bin_mel: Vec<f64> = (0..n_bins)
        .map(|k| hz_to_mel(k as f64 * sample_rate / n_fft as f64))
        .collect();
    (0..n_mels)
        .map(|m| {
            let (left, center, right) = (centers[m], centers[m + 1], centers[m + 2]);
            bin_mel
                .iter()
                .map(|&mel| {
                    if mel <= left || mel >= right {
                        0.0
                    } else if mel <= center {
                        (mel - left) / (center - left)
                    } else {
                        (right - mel) / (right - center)
                    }
                })
                .collect()
        })
        .collect()
}

/// 13 static MFCCs (c0 included) plus first and second regression deltas.
pub fn extract_features(
    utterance_id: &str,
    samples: &[f32],
    sample_rate: u32,
    config: &FeatureConfig,
) -> Result<FeatureMatrix> {
    if sample_rate < 8000 {
        return Err(Error::InvalidInput(format!(
            "sample rate {sample_rate} Hz is below 8000 Hz"
        )));
    }
    if let Some(pos) = samples.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFinite(format!("waveform sample {pos}")));
    }
    let sr = f64::from(sample_rate);
    let window = (config.window_ms * sr / 1000.0).round() as usize;
    let hop = (config.shift_ms * sr / 1000.0).round() as usize;
    if window == 0 || hop == 0 {
        return Err(Error::InvalidInput("window and shift must be positive".into()));
    }
    let n_frames = frame_count(samples.len(), window, hop);
    if n_frames == 0 {
        return Err(Error::UtteranceTooShort {
            n_samples: samples.len(),
            window,
        });
    }
    let high = config.high_freq.unwrap_or(sr / 2.0).min(sr / 2.0);
    if config.low_freq < 0.0 || config.low_freq >= high {
        return Err(Error::InvalidInput(format!(
            "filterbank range [{}, {high}] is empty",
            config.low_freq
        )));
    }
    if config.n_ceps == 0 || config.n_ceps > config.n_mels {
        return Err(Error::InvalidInput(format!(
            "need 1 <= n_ceps <= n_mels, got {} and {}",
            config.n_ceps, config.n_mels
        )));
    }

    let n_fft = window.next_power_of_two();
    let filters = mel_filterbank(config.n_mels, n_fft, sr, config.low_freq, high);
    let hamming: Vec<f64> = (0..window)
        .map(|n| 0.54 - 0.46 * (2.0 * PI * n as f64 / (window - 1).max(1) as f64).cos())
        .collect();
    let dct_scale0 = (1.0 / config.n_mels as f64).sqrt();
    let dct_scale = (2.0 / config.n_mels as f64).sqrt();
    let lifter: Vec<f64> = (0..config.n_ceps)
        .map(|c| {
            if config.lifter > 0.0 {
                1.0 + 0.5 * config.lifter * (PI * c as f64 / config.lifter).sin()
            } else {
                1.0
            }
        })
        .collect();

    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);
    let mut buffer = vec![Complex::new(0.0, 0.0); n_fft];
    let mut frame = vec![0.0f64; window];
    let mut statics = Vec::with_capacity(n_frames);
    for t in 0..n_frames {
        let start = t * hop;
        for (n, slot) in frame.iter_mut().enumerate() {
            *slot = f64::from(samples[start + n]);
        }
        if config.preemphasis != 0.0 {
            for n in (1..window).rev() {
                frame[n] -= config.preemphasis * frame[n - 1];
            }
            frame[0] *= 1.0 - config.preemphasis;
        }
        for (n, slot) in buffer.iter_mut().enumerate() {
            *slot = if n < window {
                Complex::new(frame[n] * hamming[n], 0.0)
            } else {
                Complex::new(0.0, 0.0)
            };
        }
        fft.process(&mut buffer);
        let power: Vec<f64> = buffer[..n_fft / 2 + 1].iter().map(|c| c.norm_sqr()).collect();
        let log_mel: Vec<f64> = filters
            .iter()
            .map(|w| {
                let e: f64 = w.iter().zip(&power).map(|(a, b)| a * b).sum();
                e.max(1e-10).ln()
            })
            .collect();
        let ceps: Vec<f64> = (0..config.n_ceps)
            .map(|c| {
                let scale = if c == 0 { dct_scale0 } else { dct_scale };
                let s: f64 = log_mel
                    .iter()
                    .enumerate()
                    .map(|(m, v)| v * (PI * c as f64 * (m as f64 + 0.5) / config.n_mels as f64).cos())
                    .sum();
                s * scale * lifter[c]
            })
            .collect();
        statics.push(ceps);
    }

    if config.mean_normalize {
        let mut mean = vec![0.0; config.n_ceps];
        for row in &statics {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n_frames as f64);
        for row in &mut statics {
            for (v, m) in row.iter_mut().zip(&mean) {
                *v -= m;
            }
        }
    }

    let statics = FeatureMatrix::from_rows(utterance_id, &statics)?.with_frame_shift(config.shift_ms);
    add_deltas(&statics, config.delta_window)
}

fn regression_delta(rows: &[Vec<f64>], window: usize) -> Vec<Vec<f64>> {
    let n = rows.len();
    let dim = rows[0].len();
    let denom: f64 = 2.0 * (1..=window).map(|k| (k * k) as f64).sum::<f64>();
    (0..n)
        .map(|t| {
            let mut out = vec![0.0; dim];
            for k in 1..=window {
                let fwd = &rows[(t + k).min(n - 1)];
                let bwd = &rows[t.saturating_sub(k)];
                for d in 0..dim {
                    out[d] += k as f64 * (fwd[d] - bwd[d]);
                }
            }
            out.iter_mut().for_each(|v| *v /= denom);
            out
        })
        .collect()
}

/// Appends regression deltas and delta-deltas with edge replication.
pub fn add_deltas(statics: &FeatureMatrix, window: usize) -> Result<FeatureMatrix> {
    if statics.n_frames() < 1 {
        return Err(Error::InvalidInput("add_deltas needs at least one frame".into()));
    }
    if window == 0 {
        return Err(Error::InvalidInput("delta window must be positive".into()));
    }
    let rows = statics.to_f64_rows();
    let delta = regression_delta(&rows, window);
    let delta2 = regression_delta(&delta, window);
    let stacked: Vec<Vec<f64>> = rows
        .into_iter()
        .zip(delta)
        .zip(delta2)
        .map(|((mut s, d), dd)| {
            s.extend(d);
            s.extend(dd);
            s
        })
        .collect();
    Ok(FeatureMatrix::from_rows(statics.utterance_id.clone(), &stacked)?
        .with_frame_shift(statics.frame_shift_ms))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_second_at_16k_gives_98_frames() {
        let samples: Vec<f32> = (0..16000).map(|n| (n as f32 * 0.01).sin()).collect();
        let m = extract_features("u", &samples, 16000, &FeatureConfig::default()).unwrap();
        assert_eq!(m.n_frames(), (16000 - 400) / 160 + 1);
        assert_eq!(m.n_frames(), 98);
        assert_eq!(m.dim(), 39);
    }

    #[test]
    fn silence_gives_constant_frames_and_zero_deltas() {
        let m = extract_features("u", &vec![0.0; 8000], 16000, &FeatureConfig::default()).unwrap();
        let first = m.row(0).to_vec();
        for n in 0..m.n_frames() {
            assert_eq!(m.row(n), first.as_slice());
            assert!(m.row(n)[13..].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn extraction_is_deterministic() {
        let samples: Vec<f32> = (0..4000).map(|n| ((n * 7919) % 613) as f32 / 613.0 - 0.5).collect();
        let a = extract_features("u", &samples, 16000, &FeatureConfig::default()).unwrap();
        let b = extract_features("u", &samples, 16000, &FeatureConfig::default()).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn short_and_non_finite_waveforms_are_rejected() {
        let cfg = FeatureConfig::default();
        assert!(matches!(
            extract_features("u", &[0.0; 399], 16000, &cfg),
            Err(Error::UtteranceTooShort { .. })
        ));
        let mut bad = vec![0.0f32; 800];
        bad[10] = f32::NAN;
        assert!(matches!(extract_features("u", &bad, 16000, &cfg), Err(Error::NonFinite(_))));
        assert!(extract_features("u", &[0.0; 800], 4000, &cfg).is_err());
    }

    #[test]
    fn ramp_has_unit_interior_delta() {
        let rows: Vec<Vec<f64>> = (0..10).map(|t| vec![t as f64; 13]).collect();
        let m = FeatureMatrix::from_rows("r", &rows).unwrap();
        let out = add_deltas(&m, 2).unwrap();
        assert_eq!(out.dim(), 39);
        for t in 2..8 {
            for d in 13..26 {
                assert_eq!(out.row(t)[d], 1.0);
            }
        }
    }

    #[test]
    fn single_frame_and_constant_inputs_have_zero_deltas() {
        let one = FeatureMatrix::from_rows("s", &[vec![3.0; 13]]).unwrap();
        let out = add_deltas(&one, 2).unwrap();
        assert!(out.row(0)[13..].iter().all(|&v| v == 0.0));

        let constant = FeatureMatrix::from_rows("c", &vec![vec![-1.5; 13]; 7]).unwrap();
        let out = add_deltas(&constant, 2).unwrap();
        for t in 0..7 {
            assert!(out.row(t)[13..].iter().all(|&v| v == 0.0));
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn frame_count_matches_closed_form(len in 0usize..5000, window in 1usize..600, hop in 1usize..300) {
                let expected = if len >= window { (len - window) / hop + 1 } else { 0 };
                prop_assert_eq!(frame_count(len, window, hop), expected);
                // every counted frame fits, and one more would not
                if expected > 0 {
                    prop_assert!((expected - 1) * hop + window <= len);
                    prop_assert!(expected * hop + window > len);
                }
            }

            #[test]
            fn delta_output_is_triple_width(n in 1usize..20, dim in 1usize..6, c in -5.0f64..5.0) {
                let rows = vec![vec![c; dim]; n];
                let out = add_deltas(&FeatureMatrix::from_rows("p", &rows).unwrap(), 2).unwrap();
                prop_assert_eq!(out.dim(), 3 * dim);
                for t in 0..n {
                    prop_assert!(out.row(t)[dim..].iter().all(|&v| v == 0.0));
                }
            }
        }
    }
}
