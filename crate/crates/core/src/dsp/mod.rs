//! Windowing, STFT/iSTFT, magnitudes, convolution and resampling.
//!
//! Everything here operates on mono buffers of `f64` samples. The STFT uses
//! hopped frames with no center padding: the first frame starts at sample 0,
//! so frame `l` sees only samples up to `l * hop + window_len - 1`.

mod convolve;
mod resample;
pub mod wav;

pub use convolve::convolve;
pub use resample::resample;

use num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

/// A mono waveform with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBuffer {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl SampleBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        assert!(sample_rate > 0, "sample rate must be positive");
        SampleBuffer {
            samples,
            sample_rate,
        }
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

    /// Sum of squared samples divided by length.
    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s * s).sum::<f64>()
    }

    /// Truncate or zero-pad at the tail to exactly `len` samples.
    pub fn fit_to_len(&mut self, len: usize) {
        self.samples.resize(len, 0.0);
    }
}

/// STFT framing parameters. Defaults follow the 16 kHz pipeline:
/// 20 ms Hann window, 10 ms hop, 320-point FFT, 161 bins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StftConfig {
    pub window_len: usize,
    pub hop: usize,
    pub fft_len: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        StftConfig {
            window_len: 320,
            hop: 160,
            fft_len: 320,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_len < 2 {
            return Err(Error::invalid("window_len must be >= 2"));
        }
        if self.hop == 0 || self.hop > self.window_len {
            return Err(Error::invalid("hop must satisfy 0 < hop <= window_len"));
        }
        if self.fft_len < self.window_len {
            return Err(Error::invalid("fft_len must be >= window_len"));
        }
        Ok(())
    }

    /// Number of one-sided spectral bins.
    pub fn bins(&self) -> usize {
        self.fft_len / 2 + 1
    }

    /// Number of frames for an input of `n` samples (no center padding).
    pub fn frames_for_len(&self, n: usize) -> Option<usize> {
        if n < self.window_len {
            None
        } else {
            Some((n - self.window_len) / self.hop + 1)
        }
    }
}

/// T x K complex time-frequency matrix, frame-major.
#[derive(Debug, Clone)]
pub struct ComplexSpectrogram {
    pub frames: usize,
    pub bins: usize,
    pub data: Vec<Complex<f64>>,
    pub config: StftConfig,
    pub sample_rate: u32,
}

impl ComplexSpectrogram {
    pub fn at(&self, frame: usize, bin: usize) -> Complex<f64> {
        self.data[frame * self.bins + bin]
    }

    pub fn frame(&self, frame: usize) -> &[Complex<f64>] {
        &self.data[frame * self.bins..(frame + 1) * self.bins]
    }
}

/// T x K nonnegative magnitude matrix, frame-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MagnitudeSpectrogram {
    pub frames: usize,
    pub bins: usize,
    pub data: Vec<f64>,
}

impl MagnitudeSpectrogram {
    pub fn zeros(frames: usize, bins: usize) -> Self {
        MagnitudeSpectrogram {
            frames,
            bins,
            data: vec![0.0; frames * bins],
        }
    }

    pub fn at(&self, frame: usize, bin: usize) -> f64 {
        self.data[frame * self.bins + bin]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.frames == other.frames && self.bins == other.bins
    }
}

/// Periodic (DFT-even) Hann window: `w[i] = 0.5 - 0.5 cos(2 pi i / len)`.
///
/// At 50% hop the shifted copies of `w` sum to exactly 1 at every interior
/// sample, which is what makes the overlap-add inverse below exact.
pub fn hann_window(len: usize) -> Result<Vec<f64>> {
    if len < 2 {
        return Err(Error::invalid("hann window length must be >= 2"));
    }
    Ok((0..len)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / len as f64).cos())
        .collect())
}

/// Forward STFT. Frames are `window_len` samples, hopped by `hop`, windowed
/// with a periodic Hann window and zero-padded to `fft_len`. Only the
/// nonnegative frequencies are kept (`fft_len/2 + 1` bins).
pub fn stft(x: &SampleBuffer, cfg: &StftConfig) -> Result<ComplexSpectrogram> {
    cfg.validate()?;
    let frames = cfg
        .frames_for_len(x.len())
        .ok_or_else(|| Error::invalid(format!("input too short for STFT: {} samples", x.len())))?;
    let window = hann_window(cfg.window_len)?;
    let bins = cfg.bins();

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(cfg.fft_len);
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.fft_len];
    let mut data = Vec::with_capacity(frames * bins);

    for l in 0..frames {
        let start = l * cfg.hop;
        for i in 0..cfg.fft_len {
            buf[i] = if i < cfg.window_len {
                Complex::new(x.samples[start + i] * window[i], 0.0)
            } else {
                Complex::new(0.0, 0.0)
            };
        }
        fft.process(&mut buf);
        data.extend_from_slice(&buf[..bins]);
    }

    Ok(ComplexSpectrogram {
        frames,
        bins,
        data,
        config: *cfg,
        sample_rate: x.sample_rate,
    })
}

/// Inverse STFT by weighted overlap-add. Each frame is inverted, multiplied
/// by the analysis window again and accumulated; the result is divided by
/// the accumulated squared window. Interior samples of an unmodified
/// `stft -> istft` round trip match the input to FFT precision.
pub fn istft(spec: &ComplexSpectrogram) -> Result<SampleBuffer> {
    let cfg = &spec.config;
    cfg.validate()?;
    if spec.bins != cfg.bins() {
        return Err(Error::invalid(format!(
            "spectrogram has {} bins, config implies {}",
            spec.bins,
            cfg.bins()
        )));
    }
    if spec.data.len() != spec.frames * spec.bins {
        return Err(Error::invalid("spectrogram data length mismatch"));
    }

    let window = hann_window(cfg.window_len)?;
    let out_len = (spec.frames.saturating_sub(1)) * cfg.hop + cfg.window_len;
    let mut acc = vec![0.0; out_len];
    let mut wsum = vec![0.0; out_len];

    let mut planner = FftPlanner::<f64>::new();
    let ifft = planner.plan_fft_inverse(cfg.fft_len);
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.fft_len];
    let scale = 1.0 / cfg.fft_len as f64;

    for l in 0..spec.frames {
        let row = spec.frame(l);
        buf[..spec.bins].copy_from_slice(row);
        // Rebuild the negative frequencies by conjugate symmetry.
        for k in 1..cfg.fft_len - spec.bins + 1 {
            buf[cfg.fft_len - k] = row[k].conj();
        }
        ifft.process(&mut buf);
        let start = l * cfg.hop;
        for i in 0..cfg.window_len {
            acc[start + i] += buf[i].re * scale * window[i];
            wsum[start + i] += window[i] * window[i];
        }
    }

    for (a, w) in acc.iter_mut().zip(wsum.iter()) {
        if *w > 1e-12 {
            *a /= *w;
        }
    }

    Ok(SampleBuffer::new(acc, spec.sample_rate))
}

/// Entrywise modulus.
pub fn magnitude(spec: &ComplexSpectrogram) -> MagnitudeSpectrogram {
    MagnitudeSpectrogram {
        frames: spec.frames,
        bins: spec.bins,
        data: spec.data.iter().map(|c| c.norm()).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_buffer(n: usize, seed: u64) -> SampleBuffer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SampleBuffer::new((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(), 16000)
    }

    #[test]
    fn hann_len4_closed_form() {
        let w = hann_window(4).unwrap();
        let expect = [0.0, 0.5, 1.0, 0.5];
        for (a, b) in w.iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn hann_len320_midpoint_is_one() {
        let w = hann_window(320).unwrap();
        assert!((w[160] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn hann_too_short_rejected() {
        assert!(hann_window(1).is_err());
    }

    #[test]
    fn hann_overlap_add_constant_at_half_hop() {
        // Periodic Hann at 50% hop: shifted copies of w sum to exactly 1 at
        // every interior sample. This is the condition the WOLA inverse
        // relies on; the squared-window sum is handled by normalization.
        let len = 320;
        let hop = len / 2;
        let w = hann_window(len).unwrap();
        for i in 0..hop {
            let s = w[i] + w[i + hop];
            assert!((s - 1.0).abs() < 1e-12, "sum {} at {}", s, i);
        }
    }

    #[test]
    fn stft_shape_default_config() {
        let x = random_buffer(64000, 1);
        let spec = stft(&x, &StftConfig::default()).unwrap();
        assert_eq!(spec.frames, 399);
        assert_eq!(spec.bins, 161);
    }

    #[test]
    fn stft_zero_input_zero_output() {
        let x = SampleBuffer::new(vec![0.0; 4000], 16000);
        let spec = stft(&x, &StftConfig::default()).unwrap();
        assert!(spec.data.iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn stft_too_short_rejected() {
        let x = SampleBuffer::new(vec![0.0; 100], 16000);
        assert!(stft(&x, &StftConfig::default()).is_err());
    }

    #[test]
    fn stft_sine_peaks_in_expected_bin() {
        // 1 kHz at 16 kHz with a 320-point FFT lands exactly in bin 20.
        let n = 16000;
        let x = SampleBuffer::new(
            (0..n)
                .map(|i| (2.0 * std::f64::consts::PI * 1000.0 * i as f64 / 16000.0).sin())
                .collect(),
            16000,
        );
        let spec = stft(&x, &StftConfig::default()).unwrap();
        for l in 0..spec.frames {
            let total: f64 = spec.frame(l).iter().map(|c| c.norm_sqr()).sum();
            let near: f64 = (19..=21).map(|k| spec.at(l, k).norm_sqr()).sum();
            assert!(near / total > 0.99, "frame {}: {}", l, near / total);
        }
    }

    #[test]
    fn istft_round_trip_interior() {
        let cfg = StftConfig::default();
        let x = random_buffer(16000, 7);
        let spec = stft(&x, &cfg).unwrap();
        let y = istft(&spec).unwrap();
        let max = x.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in cfg.window_len..y.len() - cfg.window_len {
            assert!(
                (y.samples[i] - x.samples[i]).abs() / max < 1e-6,
                "sample {} differs: {} vs {}",
                i,
                y.samples[i],
                x.samples[i]
            );
        }
    }

    #[test]
    fn istft_zero_spectrogram_zero_waveform() {
        let cfg = StftConfig::default();
        let spec = ComplexSpectrogram {
            frames: 10,
            bins: cfg.bins(),
            data: vec![Complex::new(0.0, 0.0); 10 * cfg.bins()],
            config: cfg,
            sample_rate: 16000,
        };
        let y = istft(&spec).unwrap();
        assert!(y.samples.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn istft_single_frame_is_time_localized() {
        let cfg = StftConfig::default();
        let x = random_buffer(16000, 3);
        let mut spec = stft(&x, &cfg).unwrap();
        let keep = 40;
        for l in 0..spec.frames {
            if l != keep {
                for k in 0..spec.bins {
                    spec.data[l * spec.bins + k] = Complex::new(0.0, 0.0);
                }
            }
        }
        let y = istft(&spec).unwrap();
        let start = keep * cfg.hop;
        for (i, &v) in y.samples.iter().enumerate() {
            if i < start || i >= start + cfg.window_len {
                assert!(v.abs() < 1e-9, "energy outside window at {}", i);
            }
        }
    }

    #[test]
    fn istft_bad_config_rejected() {
        let spec = ComplexSpectrogram {
            frames: 4,
            bins: 161,
            data: vec![Complex::new(0.0, 0.0); 4 * 161],
            config: StftConfig {
                window_len: 320,
                hop: 160,
                fft_len: 256,
            },
            sample_rate: 16000,
        };
        assert!(istft(&spec).is_err());
    }

    #[test]
    fn magnitude_three_four_five() {
        let cfg = StftConfig::default();
        let mut data = vec![Complex::new(0.0, 0.0); cfg.bins()];
        data[0] = Complex::new(3.0, 4.0);
        let spec = ComplexSpectrogram {
            frames: 1,
            bins: cfg.bins(),
            data,
            config: cfg,
            sample_rate: 16000,
        };
        let mag = magnitude(&spec);
        assert_eq!(mag.at(0, 0), 5.0);
        assert!(mag.data[1..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn parseval_consistency() {
        // One-sided sum with conjugate bins counted twice equals N * windowed
        // frame energy.
        let cfg = StftConfig::default();
        let x = random_buffer(8000, 11);
        let w = hann_window(cfg.window_len).unwrap();
        let spec = stft(&x, &cfg).unwrap();

        let mut spec_energy = 0.0;
        for l in 0..spec.frames {
            let row = spec.frame(l);
            let mut e = row[0].norm_sqr() + row[spec.bins - 1].norm_sqr();
            for k in 1..spec.bins - 1 {
                e += 2.0 * row[k].norm_sqr();
            }
            spec_energy += e / cfg.fft_len as f64;
        }

        let mut windowed_energy = 0.0;
        for l in 0..spec.frames {
            let start = l * cfg.hop;
            for i in 0..cfg.window_len {
                let v = x.samples[start + i] * w[i];
                windowed_energy += v * v;
            }
        }

        assert!(
            (spec_energy - windowed_energy).abs() / windowed_energy < 1e-6,
            "{} vs {}",
            spec_energy,
            windowed_energy
        );
    }

    #[test]
    fn magnitude_is_one_lipschitz() {
        // | |a| - |b| | <= |a - b| on random complex pairs.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let a = Complex::new(rng.gen_range(-2.0f64..2.0), rng.gen_range(-2.0..2.0));
            let b = Complex::new(rng.gen_range(-2.0f64..2.0), rng.gen_range(-2.0..2.0));
            assert!((a.norm() - b.norm()).abs() <= (a - b).norm() + 1e-12);
        }
    }
}
