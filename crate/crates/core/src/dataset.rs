//! Noisy-reverberant corpus synthesis: speech and noise surrogates,
//! SNR-controlled mixing, fixed-length chunking, ideal-ratio-mask targets,
//! and a manifest that reproduces every sample bit for bit.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::wav::{read_wav, write_wav, WavFormat};
use crate::dsp::{convolve, magnitude, resample, stft, MagnitudeSpectrogram, SampleBuffer, StftConfig};
use crate::error::{Error, Result};
use crate::hash::sha256_hex;
use crate::room::Rir;
use crate::train::TrainSample;

const IRM_EPS: f64 = 1e-8;

/// Speech-shaped surrogate: voiced stretches (glottal pulse train through
/// 2-3 drifting formant resonators, pitch 80-250 Hz), unvoiced fricative
/// bursts, and silences at roughly a fifth of the time. Deterministic per
/// seed.
pub fn synth_speech(duration: f64, sample_rate: u32, seed: u64) -> Result<SampleBuffer> {
    if duration <= 0.0 {
        return Err(Error::invalid("duration must be positive"));
    }
    let fs = sample_rate as f64;
    let n = (duration * fs).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![0.0f64; n];

    let base_pitch = rng.gen_range(90.0..220.0);
    let mut pos = 0usize;
    while pos < n {
        let draw: f64 = rng.gen();
        if draw < 0.55 {
            // voiced segment
            let seg_len = (rng.gen_range(0.15..0.45) * fs) as usize;
            let end = (pos + seg_len).min(n);
            let pitch0 = (base_pitch * rng.gen_range(0.85f64..1.15)).clamp(80.0, 250.0);
            let pitch1 = (pitch0 * rng.gen_range(0.85..1.15)).clamp(80.0, 250.0);
            let formants0 = [
                rng.gen_range(300.0..900.0),
                rng.gen_range(900.0..2400.0),
                rng.gen_range(2400.0..3400.0),
            ];
            let formants1 = [
                rng.gen_range(300.0..900.0),
                rng.gen_range(900.0..2400.0),
                rng.gen_range(2400.0..3400.0),
            ];
            voiced_segment(
                &mut out[pos..end],
                fs,
                (pitch0, pitch1),
                formants0,
                formants1,
                &mut rng,
            );
            pos = end;
        } else if draw < 0.8 {
            // unvoiced burst: bandpassed noise
            let seg_len = (rng.gen_range(0.06..0.18) * fs) as usize;
            let end = (pos + seg_len).min(n);
            let center = rng.gen_range(2000.0f64..5000.0).min(0.45 * fs);
            let mut reso = Resonator::new(center, 900.0, fs);
            for v in out[pos..end].iter_mut() {
                *v = 0.03 * reso.tick(rng.gen_range(-1.0..1.0));
            }
            fade_edges(&mut out[pos..end], (0.005 * fs) as usize);
            pos = end;
        } else {
            // pause
            let seg_len = (rng.gen_range(0.08..0.35) * fs) as usize;
            pos = (pos + seg_len).min(n);
        }
    }

    // normalize to a fixed RMS over active samples
    let active: Vec<f64> = out.iter().copied().filter(|v| v.abs() > 1e-9).collect();
    if !active.is_empty() {
        let rms = (active.iter().map(|v| v * v).sum::<f64>() / active.len() as f64).sqrt();
        let gain = 0.1 / rms.max(1e-12);
        for v in out.iter_mut() {
            *v = (*v * gain).clamp(-1.0, 1.0);
        }
    }
    Ok(SampleBuffer::new(out, sample_rate))
}

fn voiced_segment(
    out: &mut [f64],
    fs: f64,
    pitch: (f64, f64),
    formants0: [f64; 3],
    formants1: [f64; 3],
    rng: &mut ChaCha8Rng,
) {
    let n = out.len();
    if n == 0 {
        return;
    }
    // glottal excitation: pulse train with jitter and a -6 dB/oct tilt
    let mut excitation = vec![0.0f64; n];
    let mut t = 0.0f64;
    while (t as usize) < n {
        let frac = t / n as f64;
        let f0 = pitch.0 + (pitch.1 - pitch.0) * frac;
        let idx = t as usize;
        excitation[idx] = 1.0;
        let jitter = rng.gen_range(0.98..1.02);
        t += fs / (f0 * jitter);
    }
    // two leaky integrators: roughly -12 dB/oct glottal tilt
    let mut tilt1 = 0.0;
    let mut tilt2 = 0.0;
    for v in excitation.iter_mut() {
        tilt1 = 0.96 * tilt1 + *v;
        tilt2 = 0.9 * tilt2 + tilt1;
        *v = 0.1 * tilt2;
    }

    // three drifting formant resonators in parallel
    let mut resonators: Vec<Resonator> = formants0
        .iter()
        .map(|&f| Resonator::new(f, 120.0, fs))
        .collect();
    let update_every = (0.01 * fs) as usize;
    let gains = [1.0, 0.6, 0.35];
    for (i, v) in out.iter_mut().enumerate() {
        if update_every > 0 && i % update_every == 0 {
            let frac = i as f64 / n as f64;
            for (r, (f0, f1)) in resonators
                .iter_mut()
                .zip(formants0.iter().zip(formants1.iter()))
            {
                r.retune(f0 + (f1 - f0) * frac, 120.0, fs);
            }
        }
        let x = excitation[i];
        let mut acc = 0.0;
        for (r, g) in resonators.iter_mut().zip(gains.iter()) {
            acc += g * r.tick(x);
        }
        *v = 0.02 * acc;
    }
    fade_edges(out, (0.01 * fs) as usize);
}

fn fade_edges(x: &mut [f64], ramp: usize) {
    let n = x.len();
    let ramp = ramp.min(n / 2);
    for i in 0..ramp {
        let w = i as f64 / ramp as f64;
        x[i] *= w;
        x[n - 1 - i] *= w;
    }
}

/// Two-pole resonator with unit peak gain scaling.
struct Resonator {
    b0: f64,
    a1: f64,
    a2: f64,
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn new(freq: f64, bandwidth: f64, fs: f64) -> Self {
        let mut r = Resonator {
            b0: 0.0,
            a1: 0.0,
            a2: 0.0,
            y1: 0.0,
            y2: 0.0,
        };
        r.retune(freq, bandwidth, fs);
        r
    }

    fn retune(&mut self, freq: f64, bandwidth: f64, fs: f64) {
        let r = (-std::f64::consts::PI * bandwidth / fs).exp();
        let theta = 2.0 * std::f64::consts::PI * freq / fs;
        self.a1 = 2.0 * r * theta.cos();
        self.a2 = -r * r;
        self.b0 = (1.0 - r) * (1.0 - r);
    }

    fn tick(&mut self, x: f64) -> f64 {
        let y = self.b0 * x + self.a1 * self.y1 + self.a2 * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

/// Noise-surrogate families standing in for an environmental-noise corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    White,
    Pink,
    /// Low-frequency rumble with a slow level wobble.
    Fan,
    /// Speech-shaped band noise with syllabic amplitude modulation.
    Babble,
}

pub const NOISE_KINDS: [NoiseKind; 4] = [
    NoiseKind::White,
    NoiseKind::Pink,
    NoiseKind::Fan,
    NoiseKind::Babble,
];

/// Deterministic noise surrogate of the given family.
pub fn synth_noise(
    kind: NoiseKind,
    duration: f64,
    sample_rate: u32,
    seed: u64,
) -> Result<SampleBuffer> {
    if duration <= 0.0 {
        return Err(Error::invalid("duration must be positive"));
    }
    let fs = sample_rate as f64;
    let n = (duration * fs).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![0.0f64; n];
    match kind {
        NoiseKind::White => {
            for v in out.iter_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
        }
        NoiseKind::Pink => {
            // Paul Kellet's economy pink filter
            let (mut b0, mut b1, mut b2) = (0.0, 0.0, 0.0);
            for v in out.iter_mut() {
                let white = rng.gen_range(-1.0..1.0);
                b0 = 0.99765 * b0 + white * 0.0990460;
                b1 = 0.96300 * b1 + white * 0.2965164;
                b2 = 0.57000 * b2 + white * 1.0526913;
                *v = 0.2 * (b0 + b1 + b2 + white * 0.1848);
            }
        }
        NoiseKind::Fan => {
            let mut lp = 0.0;
            let mod_rate = rng.gen_range(0.3..1.2);
            for (i, v) in out.iter_mut().enumerate() {
                let white = rng.gen_range(-1.0..1.0);
                lp = 0.995 * lp + 0.005 * white;
                let wobble =
                    1.0 + 0.3 * (2.0 * std::f64::consts::PI * mod_rate * i as f64 / fs).sin();
                *v = 40.0 * lp * wobble;
            }
        }
        NoiseKind::Babble => {
            let mut reso = Resonator::new(rng.gen_range(400.0..1200.0), 500.0, fs);
            let mod_rate = rng.gen_range(2.0..6.0);
            let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            for (i, v) in out.iter_mut().enumerate() {
                let white = rng.gen_range(-1.0..1.0);
                let env = 0.6
                    + 0.4
                        * (2.0 * std::f64::consts::PI * mod_rate * i as f64 / fs + phase)
                            .sin()
                            .powi(2);
                *v = 3.0 * reso.tick(white) * env;
            }
        }
    }
    // normalize to unit RMS
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    for v in out.iter_mut() {
        *v /= rms.max(1e-12);
    }
    Ok(SampleBuffer::new(out, sample_rate))
}

/// Scale `n` so that `10 log10(P_x / P_n')` equals `snr_db` over the whole
/// buffers, then return `(x + n', n')`.
pub fn mix_at_snr(
    x: &SampleBuffer,
    n: &SampleBuffer,
    snr_db: f64,
) -> Result<(SampleBuffer, SampleBuffer)> {
    if x.len() != n.len() || x.sample_rate != n.sample_rate {
        return Err(Error::invalid("mix_at_snr needs matching buffers"));
    }
    let px = x.power();
    let pn = n.power();
    if px <= 0.0 || pn <= 0.0 {
        return Err(Error::invalid("mix_at_snr needs nonzero-power inputs"));
    }
    let gain = (px / (pn * 10f64.powf(snr_db / 10.0))).sqrt();
    let scaled: Vec<f64> = n.samples.iter().map(|v| v * gain).collect();
    let mixed: Vec<f64> = x
        .samples
        .iter()
        .zip(scaled.iter())
        .map(|(a, b)| a + b)
        .collect();
    Ok((
        SampleBuffer::new(mixed, x.sample_rate),
        SampleBuffer::new(scaled, x.sample_rate),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    /// `|X| / (|X| + |N| + eps)`: the pair sums to one.
    #[default]
    MagnitudeRatio,
    /// `sqrt(|X|^2 / (|X|^2 + |N|^2 + eps))`.
    EnergyRatio,
}

/// Ideal-ratio-mask targets for one (speech, noise) magnitude pair.
#[derive(Debug, Clone)]
pub struct IrmTargets {
    pub m_speech: MagnitudeSpectrogram,
    pub m_noise: MagnitudeSpectrogram,
}

pub fn compute_irm(
    mag_x: &MagnitudeSpectrogram,
    mag_n: &MagnitudeSpectrogram,
    kind: MaskKind,
) -> Result<IrmTargets> {
    if !mag_x.same_shape(mag_n) {
        return Err(Error::invalid("compute_irm: shape mismatch"));
    }
    let mut m_speech = MagnitudeSpectrogram::zeros(mag_x.frames, mag_x.bins);
    let mut m_noise = MagnitudeSpectrogram::zeros(mag_x.frames, mag_x.bins);
    for i in 0..mag_x.data.len() {
        let (x, n) = (mag_x.data[i], mag_n.data[i]);
        match kind {
            MaskKind::MagnitudeRatio => {
                let denom = x + n + IRM_EPS;
                m_speech.data[i] = x / denom;
                m_noise.data[i] = n / denom;
            }
            MaskKind::EnergyRatio => {
                let denom = x * x + n * n + IRM_EPS;
                m_speech.data[i] = (x * x / denom).sqrt();
                m_noise.data[i] = (n * n / denom).sqrt();
            }
        }
    }
    Ok(IrmTargets { m_speech, m_noise })
}

/// Where clean speech for a mixture comes from.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SpeechSource {
    /// `count` seeded surrogate utterances.
    Synthetic { count: usize },
    /// User-supplied mono WAV folder.
    Folder { path: PathBuf },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum NoiseSource {
    Synthetic,
    Folder { path: PathBuf },
}

/// Which RIR reverberates the noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseRirPolicy {
    /// A different RIR simulated in the same room as the speech RIR
    /// (falls back to any other RIR, then to the speech RIR itself).
    #[default]
    DifferentSameRoom,
    /// The speech RIR.
    SameAsSpeech,
    /// Any RIR from the pool.
    Any,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub sample_rate: u32,
    /// Chunk length in seconds; shorter material is zero-padded at the
    /// tail, longer is cut to its leading span.
    pub duration: f64,
    pub snr_grid_db: Vec<f64>,
    pub speech: SpeechSource,
    pub noise: NoiseSource,
    #[serde(default)]
    pub noise_rir_policy: NoiseRirPolicy,
    #[serde(default)]
    pub mask_kind: MaskKind,
    pub seed: u64,
    pub split: String,
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 || self.duration <= 0.0 {
            return Err(Error::config("sample_rate and duration must be positive"));
        }
        if self.snr_grid_db.is_empty() {
            return Err(Error::config("snr grid must be nonempty"));
        }
        if let SpeechSource::Synthetic { count: 0 } = self.speech {
            return Err(Error::config("need at least one speech utterance"));
        }
        Ok(())
    }
}

/// The draws behind one materialized sample.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MixtureSpec {
    pub index: usize,
    pub speech_ref: String,
    pub noise_ref: String,
    pub speech_rir: String,
    pub noise_rir: String,
    pub snr_db: f64,
    pub t60_label: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub config: DatasetConfig,
    pub stft: StftConfig,
    pub mixtures: Vec<MixtureSpec>,
    /// SHA-256 over all sample WAV bytes, in order.
    pub content_hash: String,
}

/// Per-sample label record stored next to the WAV triplet.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleRecord {
    pub index: usize,
    pub t60: f64,
    pub snr_db: f64,
    pub speech_ref: String,
    pub noise_ref: String,
    pub speech_rir: String,
    pub noise_rir: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

fn list_wavs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|e| e == "wav").unwrap_or(false))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::config(format!("no .wav files in {}", dir.display())));
    }
    Ok(files)
}

fn room_key(rir: &Rir) -> Option<String> {
    match &rir.provenance {
        crate::room::RirProvenance::Simulated { room, .. } => Some(format!(
            "{:.4}x{:.4}x{:.4}@{:.6}",
            room.length, room.width, room.height, room.absorption
        )),
        _ => None,
    }
}

/// Plan the mixture grid: the cartesian product of speech utterances, RIRs
/// and SNRs, with noise and noise-RIR draws recorded per sample.
pub fn plan_mixtures(
    config: &DatasetConfig,
    rirs: &[(String, Rir)],
) -> Result<Vec<MixtureSpec>> {
    config.validate()?;
    if rirs.is_empty() {
        return Err(Error::config("empty RIR pool"));
    }
    for (name, rir) in rirs {
        if rir.ground_truth_t60.is_none() {
            return Err(Error::config(format!(
                "RIR {} has no ground-truth T60 label",
                name
            )));
        }
    }
    let speech_refs: Vec<String> = match &config.speech {
        SpeechSource::Synthetic { count } => (0..*count)
            .map(|i| format!("synth:{}", config.seed.wrapping_add(i as u64)))
            .collect(),
        SpeechSource::Folder { path } => list_wavs(path)?
            .into_iter()
            .map(|p| format!("wav:{}", p.display()))
            .collect(),
    };
    let noise_refs: Vec<String> = match &config.noise {
        NoiseSource::Synthetic => Vec::new(), // drawn per sample
        NoiseSource::Folder { path } => list_wavs(path)?
            .into_iter()
            .map(|p| format!("wav:{}", p.display()))
            .collect(),
    };

    let rooms: BTreeMap<String, Vec<usize>> = {
        let mut map: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, (_, rir)) in rirs.iter().enumerate() {
            if let Some(key) = room_key(rir) {
                map.entry(key).or_default().push(i);
            }
        }
        map
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut mixtures = Vec::new();
    let mut index = 0usize;
    for speech_ref in &speech_refs {
        for (rir_idx, (rir_name, rir)) in rirs.iter().enumerate() {
            for &snr in &config.snr_grid_db {
                let sample_seed: u64 = rng.gen();
                let noise_ref = match &config.noise {
                    NoiseSource::Synthetic => {
                        let kind = NOISE_KINDS[rng.gen_range(0..NOISE_KINDS.len())];
                        format!("synthnoise:{:?}:{}", kind, sample_seed)
                    }
                    NoiseSource::Folder { .. } => {
                        noise_refs[rng.gen_range(0..noise_refs.len())].clone()
                    }
                };
                let noise_rir = match config.noise_rir_policy {
                    NoiseRirPolicy::SameAsSpeech => rir_name.clone(),
                    NoiseRirPolicy::Any => rirs[rng.gen_range(0..rirs.len())].0.clone(),
                    NoiseRirPolicy::DifferentSameRoom => {
                        let candidates: Vec<usize> = room_key(rir)
                            .and_then(|k| rooms.get(&k).cloned())
                            .unwrap_or_default()
                            .into_iter()
                            .filter(|&i| i != rir_idx)
                            .collect();
                        if !candidates.is_empty() {
                            rirs[candidates[rng.gen_range(0..candidates.len())]].0.clone()
                        } else if rirs.len() > 1 {
                            // no partner in this room: any other RIR
                            let mut j = rng.gen_range(0..rirs.len());
                            if j == rir_idx {
                                j = (j + 1) % rirs.len();
                            }
                            rirs[j].0.clone()
                        } else {
                            rir_name.clone()
                        }
                    }
                };
                mixtures.push(MixtureSpec {
                    index,
                    speech_ref: speech_ref.clone(),
                    noise_ref,
                    speech_rir: rir_name.clone(),
                    noise_rir,
                    snr_db: snr,
                    t60_label: rir.ground_truth_t60.unwrap(),
                    seed: sample_seed,
                });
                index += 1;
            }
        }
    }
    Ok(mixtures)
}

fn load_source(reference: &str, duration: f64, sample_rate: u32) -> Result<SampleBuffer> {
    if let Some(seed) = reference.strip_prefix("synth:") {
        let seed: u64 = seed
            .parse()
            .map_err(|_| Error::config(format!("bad synth ref {}", reference)))?;
        return synth_speech(duration, sample_rate, seed);
    }
    if let Some(rest) = reference.strip_prefix("synthnoise:") {
        let (kind, seed) = rest
            .split_once(':')
            .ok_or_else(|| Error::config(format!("bad noise ref {}", reference)))?;
        let seed: u64 = seed
            .parse()
            .map_err(|_| Error::config(format!("bad noise ref {}", reference)))?;
        let kind = match kind {
            "White" => NoiseKind::White,
            "Pink" => NoiseKind::Pink,
            "Fan" => NoiseKind::Fan,
            "Babble" => NoiseKind::Babble,
            other => return Err(Error::config(format!("unknown noise kind {}", other))),
        };
        return synth_noise(kind, duration, sample_rate, seed);
    }
    if let Some(path) = reference.strip_prefix("wav:") {
        let buf = read_wav(Path::new(path))?;
        return resample(&buf, sample_rate);
    }
    Err(Error::config(format!("unknown source ref {}", reference)))
}

/// Cut to the leading `duration` seconds, zero-padding short material.
pub fn chunk_to_duration(mut buf: SampleBuffer, duration: f64) -> SampleBuffer {
    let len = (duration * buf.sample_rate as f64).round() as usize;
    buf.fit_to_len(len);
    buf
}

/// One materialized sample: mixture, reverberant speech, scaled reverberant
/// noise (`y = x + n` exactly), with the speech RIR's T60 label.
pub struct Sample {
    pub y: SampleBuffer,
    pub x: SampleBuffer,
    pub n: SampleBuffer,
    pub t60: f64,
}

pub fn materialize_sample(
    spec: &MixtureSpec,
    config: &DatasetConfig,
    rirs: &BTreeMap<&str, &Rir>,
) -> Result<Sample> {
    let speech_rir = rirs
        .get(spec.speech_rir.as_str())
        .ok_or_else(|| Error::config(format!("unknown RIR {}", spec.speech_rir)))?;
    let noise_rir = rirs
        .get(spec.noise_rir.as_str())
        .ok_or_else(|| Error::config(format!("unknown RIR {}", spec.noise_rir)))?;

    let speech = load_source(&spec.speech_ref, config.duration, config.sample_rate)?;
    let noise = load_source(&spec.noise_ref, config.duration, config.sample_rate)?;

    let x = chunk_to_duration(convolve(&speech, &speech_rir.h)?, config.duration);
    let n_rev = chunk_to_duration(convolve(&noise, &noise_rir.h)?, config.duration);
    let (y, n_scaled) = mix_at_snr(&x, &n_rev, spec.snr_db)?;
    Ok(Sample {
        y,
        x,
        n: n_scaled,
        t60: spec.t60_label,
    })
}

fn sample_stem(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("sample_{:05}", index))
}

/// Write one materialized sample (WAV triplet + label record).
pub fn write_sample(
    out_dir: &Path,
    spec: &MixtureSpec,
    sample: &Sample,
    config_hash: Option<&str>,
) -> Result<()> {
    let stem = sample_stem(&out_dir.join("samples"), spec.index);
    for (suffix, buf) in [("y", &sample.y), ("x", &sample.x), ("n", &sample.n)] {
        write_wav(
            &stem.with_extension(format!("{suffix}.wav")),
            buf,
            WavFormat::Float32,
        )?;
    }
    let record = SampleRecord {
        index: spec.index,
        t60: sample.t60,
        snr_db: spec.snr_db,
        speech_ref: spec.speech_ref.clone(),
        noise_ref: spec.noise_ref.clone(),
        speech_rir: spec.speech_rir.clone(),
        noise_rir: spec.noise_rir.clone(),
        config_hash: config_hash.map(|s| s.to_string()),
    };
    std::fs::write(
        stem.with_extension("json"),
        serde_json::to_string_pretty(&record)?,
    )?;
    Ok(())
}

/// Hash every sample's WAV bytes in index order and write the manifest.
/// The hash depends only on file contents, so materialization order (and
/// parallelism) cannot change it.
pub fn finalize_manifest(
    config: &DatasetConfig,
    stft_config: &StftConfig,
    mixtures: Vec<MixtureSpec>,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    let samples_dir = out_dir.join("samples");
    let mut hasher_input = Vec::new();
    for spec in &mixtures {
        let stem = sample_stem(&samples_dir, spec.index);
        for suffix in ["y", "x", "n"] {
            hasher_input
                .extend_from_slice(&std::fs::read(stem.with_extension(format!("{suffix}.wav")))?);
        }
    }
    let manifest = DatasetManifest {
        config: config.clone(),
        stft: *stft_config,
        mixtures,
        content_hash: sha256_hex(&hasher_input),
    };
    std::fs::write(
        out_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(manifest)
}

/// Materialize every planned mixture under `out_dir/samples` and write the
/// manifest. Returns the manifest with its content hash filled in.
pub fn build_dataset(
    config: &DatasetConfig,
    stft_config: &StftConfig,
    rirs: &[(String, Rir)],
    out_dir: &Path,
    config_hash: Option<&str>,
) -> Result<DatasetManifest> {
    let mixtures = plan_mixtures(config, rirs)?;
    std::fs::create_dir_all(out_dir.join("samples"))?;
    let by_ref: BTreeMap<&str, &Rir> = rirs.iter().map(|(n, r)| (n.as_str(), r)).collect();
    for spec in &mixtures {
        let sample = materialize_sample(spec, config, &by_ref)?;
        write_sample(out_dir, spec, &sample, config_hash)?;
    }
    finalize_manifest(config, stft_config, mixtures, out_dir)
}

pub fn load_manifest(dir: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(dir.join("manifest.json"))?;
    Ok(serde_json::from_str(&text)?)
}

/// Read one materialized sample back from disk.
pub fn load_sample(dir: &Path, index: usize) -> Result<Sample> {
    let stem = sample_stem(&dir.join("samples"), index);
    let record: SampleRecord =
        serde_json::from_str(&std::fs::read_to_string(stem.with_extension("json"))?)?;
    Ok(Sample {
        y: read_wav(&stem.with_extension("y.wav"))?,
        x: read_wav(&stem.with_extension("x.wav"))?,
        n: read_wav(&stem.with_extension("n.wav"))?,
        t60: record.t60,
    })
}

/// Magnitude triple + label for the trainer.
pub fn sample_to_train(sample: &Sample, stft_config: &StftConfig) -> Result<TrainSample> {
    Ok(TrainSample {
        mag_y: magnitude(&stft(&sample.y, stft_config)?),
        mag_x: magnitude(&stft(&sample.x, stft_config)?),
        mag_n: magnitude(&stft(&sample.n, stft_config)?),
        t60: sample.t60,
    })
}

/// Load every sample of a materialized dataset as training inputs.
pub fn load_train_samples(dir: &Path) -> Result<Vec<TrainSample>> {
    let manifest = load_manifest(dir)?;
    let mut out = Vec::with_capacity(manifest.mixtures.len());
    for spec in &manifest.mixtures {
        let sample = load_sample(dir, spec.index)?;
        out.push(sample_to_train(&sample, &manifest.stft)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::room::{simulate_rir, RoomSpec, SourceReceiverGeometry};

    #[test]
    fn speech_is_seed_deterministic() {
        let a = synth_speech(1.0, 16000, 42).unwrap();
        let b = synth_speech(1.0, 16000, 42).unwrap();
        assert_eq!(a.samples, b.samples);
        let c = synth_speech(1.0, 16000, 43).unwrap();
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn speech_has_negative_spectral_tilt() {
        // long-run: more energy below 1 kHz than above 4 kHz
        let x = synth_speech(8.0, 16000, 7).unwrap();
        let spec = stft(&x, &StftConfig::default()).unwrap();
        let mag = magnitude(&spec);
        let hz_per_bin = 16000.0 / 320.0;
        let (mut low, mut high) = (0.0, 0.0);
        for l in 0..mag.frames {
            for k in 0..mag.bins {
                let f = k as f64 * hz_per_bin;
                let e = mag.at(l, k).powi(2);
                if f < 1000.0 {
                    low += e;
                } else if f > 4000.0 {
                    high += e;
                }
            }
        }
        assert!(low > high, "low {} high {}", low, high);
    }

    #[test]
    fn speech_pause_ratio_in_range() {
        // energy-threshold voice activity over 10 ms windows
        let x = synth_speech(20.0, 16000, 3).unwrap();
        let win = 160;
        let energies: Vec<f64> = x
            .samples
            .chunks(win)
            .map(|c| c.iter().map(|v| v * v).sum::<f64>() / c.len() as f64)
            .collect();
        let peak = energies.iter().cloned().fold(0.0, f64::max);
        let silent = energies.iter().filter(|&&e| e < 1e-6 * peak).count();
        let ratio = silent as f64 / energies.len() as f64;
        assert!(
            (0.10..=0.30).contains(&ratio),
            "pause ratio {} outside 10-30%",
            ratio
        );
    }

    #[test]
    fn noise_kinds_deterministic_and_normalized() {
        for kind in NOISE_KINDS {
            let a = synth_noise(kind, 1.0, 16000, 5).unwrap();
            let b = synth_noise(kind, 1.0, 16000, 5).unwrap();
            assert_eq!(a.samples, b.samples);
            assert!((a.power().sqrt() - 1.0).abs() < 1e-9, "{:?}", kind);
        }
    }

    #[test]
    fn mix_at_snr_zero_db_unity_gain() {
        let x = synth_noise(NoiseKind::White, 0.5, 16000, 1).unwrap();
        let n = synth_noise(NoiseKind::White, 0.5, 16000, 2).unwrap();
        // both have unit power
        let (_, scaled) = mix_at_snr(&x, &n, 0.0).unwrap();
        for (a, b) in scaled.samples.iter().zip(n.samples.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn mix_at_snr_measured_ratio() {
        let x = synth_speech(1.0, 16000, 11).unwrap();
        let n = synth_noise(NoiseKind::Pink, 1.0, 16000, 12).unwrap();
        for snr in [-20.0, 0.0, 10.0] {
            let (y, scaled) = mix_at_snr(&x, &n, snr).unwrap();
            let measured = 10.0 * (x.power() / scaled.power()).log10();
            assert!((measured - snr).abs() < 1e-9, "snr {}", snr);
            // y = x + n exactly
            for i in 0..y.len() {
                assert_eq!(y.samples[i], x.samples[i] + scaled.samples[i]);
            }
        }
    }

    #[test]
    fn mix_snr_gain_scales_by_ten_per_twenty_db() {
        let x = synth_speech(0.5, 16000, 13).unwrap();
        let n = synth_noise(NoiseKind::White, 0.5, 16000, 14).unwrap();
        let (_, at0) = mix_at_snr(&x, &n, 0.0).unwrap();
        let (_, atm20) = mix_at_snr(&x, &n, -20.0).unwrap();
        let ratio = atm20.samples[100] / at0.samples[100];
        assert!((ratio - 10.0).abs() < 1e-9);
    }

    #[test]
    fn mix_rejects_zero_power() {
        let x = SampleBuffer::new(vec![0.0; 100], 16000);
        let n = synth_noise(NoiseKind::White, 100.0 / 16000.0, 16000, 1).unwrap();
        assert!(mix_at_snr(&x, &n, 0.0).is_err());
    }

    #[test]
    fn irm_identities() {
        let mag = |v: Vec<f64>| MagnitudeSpectrogram {
            frames: 1,
            bins: v.len(),
            data: v,
        };
        // |N| = 0: speech mask ~1, noise mask ~0
        let t = compute_irm(
            &mag(vec![1.0, 2.0]),
            &mag(vec![0.0, 0.0]),
            MaskKind::MagnitudeRatio,
        )
        .unwrap();
        assert!(t.m_speech.data.iter().all(|&v| (v - 1.0).abs() < 1e-7));
        assert!(t.m_noise.data.iter().all(|&v| v.abs() < 1e-7));

        // equal magnitudes: both 0.5
        let t = compute_irm(
            &mag(vec![0.3, 0.7]),
            &mag(vec![0.3, 0.7]),
            MaskKind::MagnitudeRatio,
        )
        .unwrap();
        for v in t.m_speech.data.iter().chain(t.m_noise.data.iter()) {
            assert!((v - 0.5).abs() < 1e-7);
        }
    }

    #[test]
    fn irm_masks_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = MagnitudeSpectrogram {
            frames: 5,
            bins: 7,
            data: (0..35).map(|_| rng.gen_range(0.0..2.0)).collect(),
        };
        let n = MagnitudeSpectrogram {
            frames: 5,
            bins: 7,
            data: (0..35).map(|_| rng.gen_range(0.0..2.0)).collect(),
        };
        let t = compute_irm(&x, &n, MaskKind::MagnitudeRatio).unwrap();
        for i in 0..35 {
            let sum = t.m_speech.data[i] + t.m_noise.data[i];
            assert!((sum - 1.0).abs() < 1e-6);
            assert!((0.0..=1.0).contains(&t.m_speech.data[i]));
        }
    }

    fn tiny_rir_pool() -> Vec<(String, Rir)> {
        let mut pool = Vec::new();
        let geos = [
            SourceReceiverGeometry::new([1.1, 1.3, 1.5], [2.6, 2.8, 1.7]),
            SourceReceiverGeometry::new([1.8, 2.6, 1.4], [3.1, 1.2, 1.9]),
        ];
        for (gi, geo) in geos.iter().enumerate() {
            let room = RoomSpec::new(4.2, 3.6, 2.8, 0.35).unwrap();
            let mut rir = simulate_rir(&room, geo, 16000, gi as u64).unwrap();
            crate::decay::attach_ground_truth(&mut rir).unwrap();
            pool.push((format!("rir_{:03}", gi), rir));
        }
        pool
    }

    #[test]
    fn plan_counts_are_cartesian() {
        let config = DatasetConfig {
            sample_rate: 16000,
            duration: 1.0,
            snr_grid_db: vec![0.0, 10.0, 20.0],
            speech: SpeechSource::Synthetic { count: 2 },
            noise: NoiseSource::Synthetic,
            noise_rir_policy: NoiseRirPolicy::DifferentSameRoom,
            mask_kind: MaskKind::MagnitudeRatio,
            seed: 9,
            split: "train".into(),
        };
        let pool = tiny_rir_pool();
        let plan = plan_mixtures(&config, &pool).unwrap();
        assert_eq!(plan.len(), 2 * 2 * 3);
        // noise RIR differs from speech RIR (two RIRs share the room)
        for spec in &plan {
            assert_ne!(spec.speech_rir, spec.noise_rir);
        }
    }

    #[test]
    fn build_rebuild_bit_identical() {
        let config = DatasetConfig {
            sample_rate: 16000,
            duration: 1.0,
            snr_grid_db: vec![0.0, 20.0],
            speech: SpeechSource::Synthetic { count: 1 },
            noise: NoiseSource::Synthetic,
            noise_rir_policy: NoiseRirPolicy::DifferentSameRoom,
            mask_kind: MaskKind::MagnitudeRatio,
            seed: 21,
            split: "train".into(),
        };
        let pool = tiny_rir_pool();
        let stft_cfg = StftConfig::default();
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let a = build_dataset(&config, &stft_cfg, &pool, dir_a.path(), None).unwrap();
        let b = build_dataset(&config, &stft_cfg, &pool, dir_b.path(), None).unwrap();
        assert_eq!(a.content_hash, b.content_hash);
        assert_eq!(a.mixtures, b.mixtures);

        // every sample decomposes as y = x + n and is exactly duration long
        let sample = load_sample(dir_a.path(), 0).unwrap();
        assert_eq!(sample.y.len(), 16000);
        for i in 0..sample.y.len() {
            let resid = sample.y.samples[i] - (sample.x.samples[i] + sample.n.samples[i]);
            assert!(resid.abs() < 1e-6);
        }
        // label matches the pool's ground truth
        let expected = pool
            .iter()
            .find(|(n, _)| n == &a.mixtures[0].speech_rir)
            .unwrap()
            .1
            .ground_truth_t60
            .unwrap();
        assert_eq!(sample.t60, expected);

        // manifest round trip
        let loaded = load_manifest(dir_a.path()).unwrap();
        assert_eq!(loaded.content_hash, a.content_hash);

        // training view has the expected framing
        let train = load_train_samples(dir_a.path()).unwrap();
        assert_eq!(train.len(), 4);
        assert_eq!(train[0].mag_y.bins, 161);
        assert_eq!(train[0].mag_y.frames, (16000 - 320) / 160 + 1);
    }

    #[test]
    fn stft_additivity_of_mixture() {
        // stft(y) = stft(x) + stft(n) within 1e-5 relative
        let pool = tiny_rir_pool();
        let config = DatasetConfig {
            sample_rate: 16000,
            duration: 1.0,
            snr_grid_db: vec![5.0],
            speech: SpeechSource::Synthetic { count: 1 },
            noise: NoiseSource::Synthetic,
            noise_rir_policy: NoiseRirPolicy::Any,
            mask_kind: MaskKind::MagnitudeRatio,
            seed: 33,
            split: "test".into(),
        };
        let plan = plan_mixtures(&config, &pool).unwrap();
        let by_ref: BTreeMap<&str, &Rir> =
            pool.iter().map(|(n, r)| (n.as_str(), r)).collect();
        let sample = materialize_sample(&plan[0], &config, &by_ref).unwrap();
        let cfg = StftConfig::default();
        let sy = stft(&sample.y, &cfg).unwrap();
        let sx = stft(&sample.x, &cfg).unwrap();
        let sn = stft(&sample.n, &cfg).unwrap();
        let scale: f64 = sy.data.iter().map(|c| c.norm()).sum::<f64>() / sy.data.len() as f64;
        for i in 0..sy.data.len() {
            let resid = (sy.data[i] - sx.data[i] - sn.data[i]).norm();
            assert!(resid / scale < 1e-5);
        }
    }

    #[test]
    fn mask_times_sum_recovers_speech_magnitude() {
        // m_speech (|X| + |N|) = |X| up to epsilon effects; and the masked
        // mixture magnitude stays below |X| plus a triangle-inequality slack
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = MagnitudeSpectrogram {
            frames: 4,
            bins: 6,
            data: (0..24).map(|_| rng.gen_range(0.0..1.0)).collect(),
        };
        let n = MagnitudeSpectrogram {
            frames: 4,
            bins: 6,
            data: (0..24).map(|_| rng.gen_range(0.0..1.0)).collect(),
        };
        let t = compute_irm(&x, &n, MaskKind::MagnitudeRatio).unwrap();
        for i in 0..24 {
            let recovered = t.m_speech.data[i] * (x.data[i] + n.data[i]);
            assert!((recovered - x.data[i]).abs() < 1e-6);
        }
    }
}
