//! Rational-ratio resampling with a Kaiser-windowed sinc kernel.

use super::SampleBuffer;
use crate::error::{Error, Result};

/// Kaiser design for ~96 dB stopband attenuation.
const KAISER_BETA: f64 = 9.6;
/// Transition band as a fraction of the lower Nyquist.
const TRANSITION: f64 = 0.09;

fn gcd(mut a: u32, mut b: u32) -> u32 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

/// Zeroth-order modified Bessel function of the first kind.
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let half_sq = x * x / 4.0;
    for k in 1..64 {
        term *= half_sq / (k as f64 * k as f64);
        sum += term;
        if term < sum * 1e-16 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Resample to `target_rate` using a polyphase windowed-sinc filter.
///
/// The passband is flat (well under 0.1 dB ripple) up to 0.45x the lower of
/// the two rates. Identical rates return the input unchanged.
pub fn resample(x: &SampleBuffer, target_rate: u32) -> Result<SampleBuffer> {
    if target_rate == 0 {
        return Err(Error::invalid("target rate must be positive"));
    }
    if target_rate == x.sample_rate {
        return Ok(x.clone());
    }
    if x.is_empty() {
        return Ok(SampleBuffer::new(Vec::new(), target_rate));
    }

    let g = gcd(x.sample_rate, target_rate);
    let up = (target_rate / g) as usize; // L
    let down = (x.sample_rate / g) as usize; // M

    // Cutoff in cycles per input sample, midway between the 0.45 passband
    // edge and the lower Nyquist.
    let ratio = target_rate as f64 / x.sample_rate as f64;
    let low_nyq = 0.5 * ratio.min(1.0);
    let cutoff = low_nyq * (1.0 - TRANSITION / 2.0);
    let transition = low_nyq * TRANSITION;

    // Kaiser length estimate for ~96 dB: N ~ (A - 7.95) / (14.36 df).
    let half = (((96.0 - 7.95) / (14.36 * transition)).ceil() as usize / 2).max(8);

    // One kernel row per output phase; row p holds the taps for fractional
    // offset frac(p * M / L), normalized to unit DC gain.
    let taps = 2 * half + 1;
    let i0_beta = bessel_i0(KAISER_BETA);
    let mut phases = Vec::with_capacity(up);
    for p in 0..up {
        let frac = (p * down % up) as f64 / up as f64;
        let mut row = Vec::with_capacity(taps);
        let mut sum = 0.0;
        for i in 0..taps {
            let t = i as f64 - half as f64 - frac;
            let u = t / (half as f64 + 1.0);
            let w = if u.abs() <= 1.0 {
                bessel_i0(KAISER_BETA * (1.0 - u * u).sqrt()) / i0_beta
            } else {
                0.0
            };
            let v = 2.0 * cutoff * sinc(2.0 * cutoff * t) * w;
            row.push(v);
            sum += v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
        phases.push(row);
    }

    let out_len = (x.len() * up + down - 1) / down;
    let n = x.len() as isize;
    let mut out = Vec::with_capacity(out_len);
    for j in 0..out_len {
        let num = j * down;
        let base = (num / up) as isize;
        let phase = &phases[j % up];
        let mut acc = 0.0;
        for (i, &k) in phase.iter().enumerate() {
            let idx = base + i as isize - half as isize;
            if idx >= 0 && idx < n {
                acc += x.samples[idx as usize] * k;
            }
        }
        out.push(acc);
    }

    Ok(SampleBuffer::new(out, target_rate))
}
