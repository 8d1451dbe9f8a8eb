//! Cuboid-room acoustics: Sabine/Eyring predictions, image-source RIR
//! simulation, and exponential sine sweep measurement.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::wav::{read_wav, write_wav, WavFormat};
use crate::dsp::{convolve, SampleBuffer};
use crate::error::{Error, Result};

/// Half-width of the fractional-delay interpolation kernel, in samples.
const FRAC_DELAY_HALF: usize = 8;

/// Where the direct path sits in a deconvolved RIR: 2.5 ms of pre-roll.
pub const DIRECT_PATH_OFFSET_SECS: f64 = 0.0025;

/// Longest tail kept by [`deconvolve_rir`].
const MAX_MEASURED_RIR_SECS: f64 = 3.0;

fn default_speed_of_sound() -> f64 {
    343.0
}

fn default_scattering() -> f64 {
    0.7
}

/// A cuboid room with uniform energy absorption on all six surfaces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoomSpec {
    pub length: f64,
    pub width: f64,
    pub height: f64,
    /// Mean energy absorption coefficient, in (0, 1].
    pub absorption: f64,
    #[serde(default = "default_speed_of_sound")]
    pub speed_of_sound: f64,
    /// Blend between purely specular absorption (0: per-reflection counts)
    /// and the diffuse-field rate (1: absorption accrues per mean free path
    /// traveled). Purely specular shoebox decay is dominated by slow axial
    /// paths and overshoots the Eyring prediction, by over 30% in elongated
    /// rooms; the default keeps the Schroeder estimate within ~10% of it.
    #[serde(default = "default_scattering")]
    pub scattering: f64,
}

impl RoomSpec {
    pub fn new(length: f64, width: f64, height: f64, absorption: f64) -> Result<Self> {
        let room = RoomSpec {
            length,
            width,
            height,
            absorption,
            speed_of_sound: default_speed_of_sound(),
            scattering: default_scattering(),
        };
        room.validate()?;
        Ok(room)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length > 0.0 && self.width > 0.0 && self.height > 0.0) {
            return Err(Error::invalid("room dimensions must be positive"));
        }
        if !(self.absorption > 0.0 && self.absorption <= 1.0) {
            return Err(Error::invalid("absorption must be in (0, 1]"));
        }
        if !(self.speed_of_sound > 0.0) {
            return Err(Error::invalid("speed of sound must be positive"));
        }
        if !(0.0..=1.0).contains(&self.scattering) {
            return Err(Error::invalid("scattering must be in [0, 1]"));
        }
        Ok(())
    }

    /// Mean free path 4V/S of the diffuse field.
    pub fn mean_free_path(&self) -> f64 {
        4.0 * self.volume() / self.surface_area()
    }

    pub fn volume(&self) -> f64 {
        self.length * self.width * self.height
    }

    pub fn surface_area(&self) -> f64 {
        2.0 * (self.length * self.width + self.length * self.height + self.width * self.height)
    }

    fn contains(&self, p: [f64; 3]) -> bool {
        p[0] > 0.0
            && p[0] < self.length
            && p[1] > 0.0
            && p[1] < self.width
            && p[2] > 0.0
            && p[2] < self.height
    }
}

/// Source and receiver positions in room coordinates (meters).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceReceiverGeometry {
    pub source: [f64; 3],
    pub receiver: [f64; 3],
}

impl SourceReceiverGeometry {
    pub fn new(source: [f64; 3], receiver: [f64; 3]) -> Self {
        SourceReceiverGeometry { source, receiver }
    }

    pub fn distance(&self) -> f64 {
        let d: f64 = (0..3)
            .map(|i| (self.source[i] - self.receiver[i]).powi(2))
            .sum();
        d.sqrt()
    }

    pub fn validate(&self, room: &RoomSpec) -> Result<()> {
        if !room.contains(self.source) || !room.contains(self.receiver) {
            return Err(Error::invalid(
                "source and receiver must be strictly inside the room",
            ));
        }
        if self.distance() <= 0.0 {
            return Err(Error::invalid("source/receiver distance must be positive"));
        }
        Ok(())
    }

    /// Place a receiver at a seeded interior position and the source at the
    /// given distance and horizontal angle (degrees, measured against a
    /// seeded base azimuth). Retries placement until both points clear the
    /// walls; fails if the room cannot accommodate the distance.
    pub fn from_distance_angle(
        room: &RoomSpec,
        distance: f64,
        angle_deg: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if distance <= 0.0 {
            return Err(Error::invalid("distance must be positive"));
        }
        let margin = 0.4_f64
            .min(room.length / 5.0)
            .min(room.width / 5.0)
            .min(room.height / 5.0);
        for _ in 0..200 {
            let receiver = [
                rng.gen_range(margin..room.length - margin),
                rng.gen_range(margin..room.width - margin),
                rng.gen_range((0.4 * room.height)..(0.7 * room.height)),
            ];
            let base = rng.gen_range(0.0..std::f64::consts::TAU);
            let theta = base + angle_deg.to_radians();
            let source = [
                receiver[0] + distance * theta.cos(),
                receiver[1] + distance * theta.sin(),
                receiver[2],
            ];
            let geo = SourceReceiverGeometry { source, receiver };
            if room.contains(source) && room.contains(receiver) {
                return Ok(geo);
            }
        }
        Err(Error::invalid(format!(
            "cannot place source {} m from receiver inside {:.2}x{:.2}x{:.2} room",
            distance, room.length, room.width, room.height
        )))
    }
}

/// Where an impulse response came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RirProvenance {
    Simulated {
        room: RoomSpec,
        geometry: SourceReceiverGeometry,
        seed: u64,
    },
    Measured {
        label: String,
    },
}

/// An impulse response with provenance and (once labeled) its T60.
#[derive(Debug, Clone)]
pub struct Rir {
    pub h: SampleBuffer,
    pub provenance: RirProvenance,
    pub ground_truth_t60: Option<f64>,
}

impl Rir {
    pub fn sample_rate(&self) -> u32 {
        self.h.sample_rate
    }
}

/// Sabine prediction `T60 = 0.161 V / (alpha S)`.
pub fn sabine_t60(room: &RoomSpec) -> f64 {
    0.161 * room.volume() / (room.absorption * room.surface_area())
}

/// Eyring prediction `T60 = 0.161 V / (-S ln(1 - alpha))`.
pub fn eyring_t60(room: &RoomSpec) -> f64 {
    if room.absorption >= 1.0 {
        return 0.0;
    }
    0.161 * room.volume() / (-room.surface_area() * (1.0 - room.absorption).ln())
}

/// Solve the Eyring relation for the uniform absorption that yields
/// `target_t60` in a room of the given dimensions.
pub fn absorption_for_target(
    length: f64,
    width: f64,
    height: f64,
    target_t60: f64,
) -> Result<f64> {
    if target_t60 <= 0.0 {
        return Err(Error::invalid("target T60 must be positive"));
    }
    let volume = length * width * height;
    let surface = 2.0 * (length * width + length * height + width * height);
    let alpha = 1.0 - (-0.161 * volume / (surface * target_t60)).exp();
    if alpha >= 0.999 {
        return Err(Error::UnreachableTarget(format!(
            "T60 = {} s needs absorption {:.4} >= 0.999 in a {:.2}x{:.2}x{:.2} room",
            target_t60, alpha, length, width, height
        )));
    }
    Ok(alpha.clamp(f64::MIN_POSITIVE, 1.0))
}

/// Hann-windowed sinc taps for a fractional delay, centered at `delay`
/// samples. Returns the first integer tap index and the tap values.
fn frac_delay_taps(delay: f64) -> (isize, [f64; 2 * FRAC_DELAY_HALF]) {
    let first = delay.ceil() as isize - FRAC_DELAY_HALF as isize;
    let mut taps = [0.0; 2 * FRAC_DELAY_HALF];
    let width = FRAC_DELAY_HALF as f64;
    for (i, t) in taps.iter_mut().enumerate() {
        let x = first as f64 + i as f64 - delay;
        let u = x / width;
        if u.abs() < 1.0 {
            let w = 0.5 + 0.5 * (std::f64::consts::PI * u).cos();
            let s = if x.abs() < 1e-12 {
                1.0
            } else {
                (std::f64::consts::PI * x).sin() / (std::f64::consts::PI * x)
            };
            *t = w * s;
        }
    }
    (first, taps)
}

/// Image-source simulation over the rectangular mirror lattice.
///
/// Each reflected image contributes an impulse at delay `|r|/c` with
/// amplitude `(1 - alpha)^(n_eff / 2) / (4 pi |r|)`, placed with the
/// windowed-sinc kernel above. The absorption exponent `n_eff` blends the
/// specular reflection count with the diffuse-field count `|r| / (4V/S)`
/// according to `room.scattering`. The response is truncated at 1.25x the
/// Eyring T60 (plus the direct-path delay and kernel margin) and finished
/// with a 100 Hz second-order high-pass, without which the all-positive
/// image amplitudes pile up into a low-frequency tail that corrupts the
/// decay.
pub fn simulate_rir(
    room: &RoomSpec,
    geometry: &SourceReceiverGeometry,
    sample_rate: u32,
    seed: u64,
) -> Result<Rir> {
    room.validate()?;
    geometry.validate(room)?;
    if sample_rate < 8000 {
        return Err(Error::invalid("sample rate must be at least 8 kHz"));
    }

    let fs = sample_rate as f64;
    let c = room.speed_of_sound;
    let t60 = eyring_t60(room);
    let direct_secs = geometry.distance() / c;
    let duration = 1.25 * t60 + direct_secs + 2.0 * FRAC_DELAY_HALF as f64 / fs + 0.002;
    let n_samples = (duration * fs).ceil() as usize;
    let mut h = vec![0.0; n_samples];

    // ln(beta) with beta = sqrt(1 - alpha), the pressure factor per hit.
    let log_beta = 0.5 * (1.0 - room.absorption).ln(); // -inf for alpha = 1
    let mfp = room.mean_free_path();
    let scattering = room.scattering;
    let max_dist = c * duration;
    let dims = [room.length, room.width, room.height];
    let src = geometry.source;
    let rcv = geometry.receiver;
    let bounds: Vec<i64> = dims
        .iter()
        .map(|d| (max_dist / (2.0 * d)).ceil() as i64)
        .collect();

    for mx in -bounds[0]..=bounds[0] {
        for my in -bounds[1]..=bounds[1] {
            for mz in -bounds[2]..=bounds[2] {
                for q in 0..2i64 {
                    for j in 0..2i64 {
                        for k in 0..2i64 {
                            let dx = (1 - 2 * q) as f64 * src[0] - rcv[0]
                                + 2.0 * mx as f64 * dims[0];
                            let dy = (1 - 2 * j) as f64 * src[1] - rcv[1]
                                + 2.0 * my as f64 * dims[1];
                            let dz = (1 - 2 * k) as f64 * src[2] - rcv[2]
                                + 2.0 * mz as f64 * dims[2];
                            let dist = (dx * dx + dy * dy + dz * dz).sqrt();
                            if dist > max_dist {
                                continue;
                            }
                            let order = ((mx - q).abs() + mx.abs())
                                + ((my - j).abs() + my.abs())
                                + ((mz - k).abs() + mz.abs());
                            let refl = if order == 0 {
                                1.0
                            } else {
                                let n_eff = (1.0 - scattering) * order as f64
                                    + scattering * dist / mfp;
                                (log_beta * n_eff).exp()
                            };
                            if refl == 0.0 {
                                continue;
                            }
                            let delay = dist / c * fs;
                            let gain = refl / (4.0 * std::f64::consts::PI * dist.max(0.01));
                            let (first, taps) = frac_delay_taps(delay);
                            for (i, &t) in taps.iter().enumerate() {
                                let idx = first + i as isize;
                                if idx >= 0 && (idx as usize) < n_samples {
                                    h[idx as usize] += gain * t;
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    highpass_100hz(&mut h, fs);

    Ok(Rir {
        h: SampleBuffer::new(h, sample_rate),
        provenance: RirProvenance::Simulated {
            room: *room,
            geometry: *geometry,
            seed,
        },
        ground_truth_t60: None,
    })
}

/// Second-order Butterworth high-pass at 100 Hz, applied in place.
fn highpass_100hz(h: &mut [f64], fs: f64) {
    let k = (std::f64::consts::PI * 100.0 / fs).tan();
    let norm = 1.0 / (1.0 + std::f64::consts::SQRT_2 * k + k * k);
    let b0 = norm;
    let b1 = -2.0 * norm;
    let b2 = norm;
    let a1 = 2.0 * (k * k - 1.0) * norm;
    let a2 = (1.0 - std::f64::consts::SQRT_2 * k + k * k) * norm;
    let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
    for v in h.iter_mut() {
        let x0 = *v;
        let y0 = b0 * x0 + b1 * x1 + b2 * x2 - a1 * y1 - a2 * y2;
        x2 = x1;
        x1 = x0;
        y2 = y1;
        y1 = y0;
        *v = y0;
    }
}

/// Exponential sine sweep parameters (Farina-style measurement).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EssConfig {
    pub f_start: f64,
    pub f_end: f64,
    pub duration: f64,
    pub sample_rate: u32,
}

impl Default for EssConfig {
    fn default() -> Self {
        EssConfig {
            f_start: 20.0,
            f_end: 20000.0,
            duration: 20.0,
            sample_rate: 48000,
        }
    }
}

impl EssConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.f_start > 0.0 && self.f_start < self.f_end) {
            return Err(Error::invalid("need 0 < f_start < f_end"));
        }
        if self.f_end > self.sample_rate as f64 / 2.0 {
            return Err(Error::invalid("f_end must not exceed Nyquist"));
        }
        if self.duration <= 0.0 {
            return Err(Error::invalid("duration must be positive"));
        }
        Ok(())
    }
}

/// Generate the sweep `x(t) = sin(2 pi f1 L (e^{t/L} - 1))` with
/// `L = T / ln(f2/f1)`, plus its matched inverse filter.
///
/// The inverse filter is the time-reversed sweep with an `e^{-t/L}`
/// amplitude envelope (+6 dB/octave compensation), lightly equalized at the
/// band edges so that `x * inv` is an impulse whose spectrum is flat from
/// f_start up to a short rolloff below f_end. A finite sweep undershoots
/// its asymptotic spectral level over the first Fresnel zone at f_start;
/// without the equalization that deficit alone keeps the deconvolution
/// sidelobes above -60 dB. The boost is capped at 10x.
///
/// The deconvolution peak of `x * inv` is normalized to 1 and sits at
/// sample `sweep_len + round(0.2 * fs) - 1`.
pub fn generate_ess(cfg: &EssConfig) -> Result<(SampleBuffer, SampleBuffer)> {
    use num_complex::Complex;
    use rustfft::FftPlanner;

    cfg.validate()?;
    let fs = cfg.sample_rate as f64;
    let n = (cfg.duration * fs).round() as usize;
    let sweep_rate = cfg.duration / (cfg.f_end / cfg.f_start).ln(); // L
    let phase_scale = 2.0 * std::f64::consts::PI * cfg.f_start * sweep_rate;

    let mut sweep = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / fs;
        sweep.push((phase_scale * ((t / sweep_rate).exp() - 1.0)).sin());
    }

    // Fade-in over half a period of f_start; fade-out while the sweep covers
    // the top 3% of the band. Longer fades would smear the band edges.
    let fade_in = ((0.5 / cfg.f_start) * fs).round() as usize;
    let fade_out = (sweep_rate * (1.0 / 0.97f64).ln() * fs).round() as usize;
    apply_fades(&mut sweep, fade_in.clamp(4, n / 2), fade_out.clamp(4, n / 2));

    let sweep = SampleBuffer::new(sweep, cfg.sample_rate);
    let inverse = inverse_from_sweep(&sweep, cfg.f_start, cfg.f_end)?;
    Ok((sweep, inverse))
}

/// Matched inverse filter for an exponential sweep covering
/// `[f_start, f_end]`: the time-reversed sweep with the `e^{-t/L}`
/// envelope, equalized at the band edges (see [`generate_ess`]). Works on
/// recorded sweeps too, since the equalization is computed from the sweep
/// itself.
pub fn inverse_from_sweep(
    sweep: &SampleBuffer,
    f_start: f64,
    f_end: f64,
) -> Result<SampleBuffer> {
    use num_complex::Complex;
    use rustfft::FftPlanner;

    if !(f_start > 0.0 && f_start < f_end) {
        return Err(Error::invalid("need 0 < f_start < f_end"));
    }
    let n = sweep.len();
    if n < 16 {
        return Err(Error::invalid("sweep too short"));
    }
    let rate = sweep.sample_rate;
    let fs = rate as f64;
    let duration = n as f64 / fs;
    let sweep_rate = duration / (f_end / f_start).ln();
    let sweep = &sweep.samples;

    let mut env_inverse = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / fs;
        env_inverse.push(sweep[n - 1 - i] * (-t / sweep_rate).exp());
    }

    // Equalize against the self-deconvolution spectrum.
    let wrap = (0.2 * fs).round() as usize;
    let size = (2 * n + 4 * wrap).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(size);
    let ifft = planner.plan_fft_inverse(size);

    let mut spec_x = vec![Complex::new(0.0, 0.0); size];
    let mut spec_v = vec![Complex::new(0.0, 0.0); size];
    for i in 0..n {
        spec_x[i].re = sweep[i];
        spec_v[i].re = env_inverse[i];
    }
    fft.process(&mut spec_x);
    fft.process(&mut spec_v);

    // Reference magnitude of x * inv in the middle of the band.
    let bin_hz = fs / size as f64;
    let k_lo = (1000.0 / bin_hz) as usize;
    let k_hi = (2000.0 / bin_hz) as usize;
    let mut mids: Vec<f64> = (k_lo..k_hi)
        .map(|k| (spec_x[k] * spec_v[k]).norm())
        .collect();
    let mid = mids.len() / 2;
    let (_, ref_mag, _) = mids.select_nth_unstable_by(mid, |a, b| a.partial_cmp(b).unwrap());
    let ref_mag = (*ref_mag).max(f64::MIN_POSITIVE);

    let half = size / 2;
    let (lo0, lo1) = (0.7 * f_start, f_start);
    let (hi0, hi1) = (0.97 * f_end, f_end);
    for k in 0..=half {
        let f = k as f64 * bin_hz;
        let target = if f < lo0 || f > hi1 {
            0.0
        } else if f < lo1 {
            0.5 - 0.5 * (std::f64::consts::PI * (f - lo0) / (lo1 - lo0)).cos()
        } else if f > hi0 {
            0.5 + 0.5 * (std::f64::consts::PI * (f - hi0) / (hi1 - hi0)).cos()
        } else {
            1.0
        };
        let gain = if target > 0.0 {
            let mag = (spec_x[k] * spec_v[k]).norm() / ref_mag;
            target / mag.max(target / 10.0)
        } else {
            0.0
        };
        spec_v[k] *= gain;
        if k > 0 && k < size - k {
            spec_v[size - k] *= gain;
        }
    }

    // Deconvolution peak height for normalization.
    let mut prod: Vec<Complex<f64>> = spec_x
        .iter()
        .zip(spec_v.iter())
        .map(|(a, b)| a * b)
        .collect();
    ifft.process(&mut prod);
    let peak = prod
        .iter()
        .map(|c| c.re.abs())
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE)
        / size as f64;

    ifft.process(&mut spec_v);
    let scale = 1.0 / (size as f64 * peak);
    // The zero-phase equalization kernel spills slightly into negative time;
    // prepend the wrapped tail so nothing is lost.
    let mut inverse = Vec::with_capacity(n + 2 * wrap);
    for c in &spec_v[size - wrap..] {
        inverse.push(c.re * scale);
    }
    for c in &spec_v[..n + wrap] {
        inverse.push(c.re * scale);
    }

    Ok(SampleBuffer::new(inverse, rate))
}

fn apply_fades(x: &mut [f64], fade_in: usize, fade_out: usize) {
    let n = x.len();
    for i in 0..fade_in {
        let w = 0.5 - 0.5 * (std::f64::consts::PI * i as f64 / fade_in as f64).cos();
        x[i] *= w;
    }
    for i in 0..fade_out {
        let w = 0.5 - 0.5 * (std::f64::consts::PI * i as f64 / fade_out as f64).cos();
        x[n - 1 - i] *= w;
    }
}

/// Deconvolve a sweep recording into an impulse response.
///
/// The recording is convolved with the inverse filter; the strongest peak is
/// taken as the direct path and aligned to [`DIRECT_PATH_OFFSET_SECS`]. Only
/// the causal part (from that pre-roll onward) is returned, which excludes
/// harmonic-distortion images that land before the linear peak. The output
/// is normalized to unit peak.
pub fn deconvolve_rir(recording: &SampleBuffer, inverse_filter: &SampleBuffer) -> Result<Rir> {
    if recording.sample_rate != inverse_filter.sample_rate {
        return Err(Error::invalid("recording and inverse filter rates differ"));
    }
    let y = convolve(recording, inverse_filter)?;
    let fs = y.sample_rate as f64;

    let (peak_idx, peak_val) = y
        .samples
        .iter()
        .enumerate()
        .map(|(i, v)| (i, v.abs()))
        .fold((0, 0.0), |acc, cur| if cur.1 > acc.1 { cur } else { acc });
    if peak_val == 0.0 {
        return Err(Error::MeasurementFailed("deconvolution is all zero".into()));
    }
    let mut mags: Vec<f64> = y.samples.iter().map(|v| v.abs()).collect();
    let mid = mags.len() / 2;
    let (_, median, _) = mags.select_nth_unstable_by(mid, |a, b| a.partial_cmp(b).unwrap());
    let median = (*median).max(f64::MIN_POSITIVE);
    if peak_val / median < 10.0 {
        // less than 20 dB of crest over the median
        return Err(Error::MeasurementFailed(format!(
            "no detectable direct path: peak only {:.1} dB above median",
            20.0 * (peak_val / median).log10()
        )));
    }

    let offset = (DIRECT_PATH_OFFSET_SECS * fs).round() as usize;
    let start = peak_idx.saturating_sub(offset);
    let end = (peak_idx + (MAX_MEASURED_RIR_SECS * fs) as usize).min(y.samples.len());
    let h: Vec<f64> = y.samples[start..end]
        .iter()
        .map(|v| v / peak_val)
        .collect();

    Ok(Rir {
        h: SampleBuffer::new(h, recording.sample_rate),
        provenance: RirProvenance::Measured {
            label: "deconvolved".into(),
        },
        ground_truth_t60: None,
    })
}

/// Flat sidecar record stored next to every exported RIR.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct RirSidecar {
    pub sample_rate: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub room: Option<RoomSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub geometry: Option<SourceReceiverGeometry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ground_truth_t60: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eyring_target_t60: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit_slope_db_per_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit_r_squared: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit_range_db: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

impl RirSidecar {
    pub fn from_rir(rir: &Rir) -> Self {
        let mut sidecar = RirSidecar {
            sample_rate: rir.sample_rate(),
            ground_truth_t60: rir.ground_truth_t60,
            ..Default::default()
        };
        match &rir.provenance {
            RirProvenance::Simulated {
                room,
                geometry,
                seed,
            } => {
                sidecar.room = Some(*room);
                sidecar.geometry = Some(*geometry);
                sidecar.seed = Some(*seed);
            }
            RirProvenance::Measured { label } => {
                sidecar.label = Some(label.clone());
            }
        }
        sidecar
    }
}

/// Write `<stem>.wav` (float32) and `<stem>.json` for an RIR.
pub fn save_rir(stem: &Path, rir: &Rir, sidecar: &RirSidecar) -> Result<()> {
    write_wav(&stem.with_extension("wav"), &rir.h, WavFormat::Float32)?;
    let json = serde_json::to_string_pretty(sidecar)?;
    std::fs::write(stem.with_extension("json"), json)?;
    Ok(())
}

/// Load an RIR written by [`save_rir`].
pub fn load_rir(stem: &Path) -> Result<(Rir, RirSidecar)> {
    let h = read_wav(&stem.with_extension("wav"))?;
    let sidecar: RirSidecar =
        serde_json::from_str(&std::fs::read_to_string(stem.with_extension("json"))?)?;
    let provenance = match (&sidecar.room, &sidecar.geometry) {
        (Some(room), Some(geometry)) => RirProvenance::Simulated {
            room: *room,
            geometry: *geometry,
            seed: sidecar.seed.unwrap_or(0),
        },
        _ => RirProvenance::Measured {
            label: sidecar.label.clone().unwrap_or_else(|| "unknown".into()),
        },
    };
    Ok((
        Rir {
            h,
            provenance,
            ground_truth_t60: sidecar.ground_truth_t60,
        },
        sidecar,
    ))
}
