//! Mono WAV I/O (PCM16 or float32) and the binary spectrogram dump format.
//!
//! Spectrogram dumps are little-endian: two `u32` dims (frames T, bins K)
//! followed by `T * K` row-major `f32` values.

use std::io::{Read, Write};
use std::path::Path;

use super::{MagnitudeSpectrogram, SampleBuffer};
use crate::error::{Error, Result};

/// Sample encoding for [`write_wav`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavFormat {
    Pcm16,
    Float32,
}

/// Read a mono WAV file. 16-bit PCM and 32-bit float are accepted;
/// multi-channel files and other encodings are rejected.
pub fn read_wav(path: &Path) -> Result<SampleBuffer> {
    let reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::invalid(format!(
            "{}: {} channels; only mono input is supported (split multi-channel files upstream)",
            path.display(),
            spec.channels
        )));
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()?,
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()?,
        (fmt, bits) => {
            return Err(Error::invalid(format!(
                "{}: unsupported encoding {:?}/{} bit; use PCM16 or float32",
                path.display(),
                fmt,
                bits
            )))
        }
    };
    Ok(SampleBuffer::new(samples, spec.sample_rate))
}

/// Write a mono WAV file. PCM16 clamps to [-1, 1); float32 is written as-is
/// (after casting each sample to `f32`).
pub fn write_wav(path: &Path, buf: &SampleBuffer, format: WavFormat) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: buf.sample_rate,
        bits_per_sample: match format {
            WavFormat::Pcm16 => 16,
            WavFormat::Float32 => 32,
        },
        sample_format: match format {
            WavFormat::Pcm16 => hound::SampleFormat::Int,
            WavFormat::Float32 => hound::SampleFormat::Float,
        },
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    match format {
        WavFormat::Pcm16 => {
            for &s in &buf.samples {
                let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                writer.write_sample(v)?;
            }
        }
        WavFormat::Float32 => {
            for &s in &buf.samples {
                writer.write_sample(s as f32)?;
            }
        }
    }
    writer.finalize()?;
    Ok(())
}

/// Write a magnitude spectrogram in the binary dump layout.
pub fn write_spectrogram(path: &Path, mag: &MagnitudeSpectrogram) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(&(mag.frames as u32).to_le_bytes())?;
    f.write_all(&(mag.bins as u32).to_le_bytes())?;
    for &v in &mag.data {
        f.write_all(&(v as f32).to_le_bytes())?;
    }
    f.flush()?;
    Ok(())
}

/// Read a spectrogram written by [`write_spectrogram`].
pub fn read_spectrogram(path: &Path) -> Result<MagnitudeSpectrogram> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut dims = [0u8; 8];
    f.read_exact(&mut dims)?;
    let frames = u32::from_le_bytes(dims[0..4].try_into().unwrap()) as usize;
    let bins = u32::from_le_bytes(dims[4..8].try_into().unwrap()) as usize;
    let mut payload = vec![0u8; frames * bins * 4];
    f.read_exact(&mut payload)?;
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    Ok(MagnitudeSpectrogram { frames, bins, data })
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn float32_round_trip_is_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let buf = SampleBuffer::new(vec![0.0, 0.25, -0.5, 1.0, -1.0], 16000);
        write_wav(&path, &buf, WavFormat::Float32).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.sample_rate, 16000);
        assert_eq!(back.samples, buf.samples);
    }

    #[test]
    fn pcm16_round_trip_within_quantization() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("b.wav");
        let buf = SampleBuffer::new(vec![0.1, -0.3, 0.9999], 48000);
        write_wav(&path, &buf, WavFormat::Pcm16).unwrap();
        let back = read_wav(&path).unwrap();
        for (a, b) in back.samples.iter().zip(buf.samples.iter()) {
            assert!((a - b).abs() <= 1.0 / 32768.0);
        }
    }

    #[test]
    fn stereo_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("c.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 16000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        for _ in 0..8 {
            w.write_sample(0i16).unwrap();
        }
        w.finalize().unwrap();
        let err = read_wav(&path).unwrap_err();
        assert!(err.to_string().contains("mono"));
    }

    #[test]
    fn spectrogram_dump_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("d.spec");
        let mag = MagnitudeSpectrogram {
            frames: 3,
            bins: 2,
            data: vec![0.0, 1.0, 2.5, 3.25, 4.0, 5.0],
        };
        write_spectrogram(&path, &mag).unwrap();
        let back = read_spectrogram(&path).unwrap();
        assert_eq!(back.frames, 3);
        assert_eq!(back.bins, 2);
        assert_eq!(back.data, mag.data);
    }
}
