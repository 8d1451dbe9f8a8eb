//! Full linear convolution, direct for short inputs and FFT-based otherwise.

use num_complex::Complex;
use rustfft::FftPlanner;

use super::SampleBuffer;
use crate::error::{Error, Result};

/// Product size above which the FFT path is used.
const FFT_THRESHOLD: usize = 1 << 16;

/// Full linear convolution of `x` and `h`; output length is
/// `x.len() + h.len() - 1`. Both buffers must share a sample rate.
pub fn convolve(x: &SampleBuffer, h: &SampleBuffer) -> Result<SampleBuffer> {
    if x.sample_rate != h.sample_rate {
        return Err(Error::invalid(format!(
            "sample rate mismatch: {} vs {}",
            x.sample_rate, h.sample_rate
        )));
    }
    if x.is_empty() || h.is_empty() {
        return Err(Error::invalid("convolution inputs must be nonempty"));
    }
    let samples = if x.len() * h.len() <= FFT_THRESHOLD {
        convolve_direct(&x.samples, &h.samples)
    } else {
        convolve_fft(&x.samples, &h.samples)
    };
    Ok(SampleBuffer::new(samples, x.sample_rate))
}

pub(crate) fn convolve_direct(x: &[f64], h: &[f64]) -> Vec<f64> {
    let n = x.len() + h.len() - 1;
    let mut out = vec![0.0; n];
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        for (j, &hj) in h.iter().enumerate() {
            out[i + j] += xi * hj;
        }
    }
    out
}

pub(crate) fn convolve_fft(x: &[f64], h: &[f64]) -> Vec<f64> {
    let n = x.len() + h.len() - 1;
    let size = n.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(size);
    let ifft = planner.plan_fft_inverse(size);

    let mut a = vec![Complex::new(0.0, 0.0); size];
    let mut b = vec![Complex::new(0.0, 0.0); size];
    for (dst, &src) in a.iter_mut().zip(x.iter()) {
        dst.re = src;
    }
    for (dst, &src) in b.iter_mut().zip(h.iter()) {
        dst.re = src;
    }
    fft.process(&mut a);
    fft.process(&mut b);
    for (ai, bi) in a.iter_mut().zip(b.iter()) {
        *ai *= bi;
    }
    ifft.process(&mut a);
    let scale = 1.0 / size as f64;
    a[..n].iter().map(|c| c.re * scale).collect()
}
