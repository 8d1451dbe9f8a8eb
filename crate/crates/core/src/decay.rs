//! Schroeder backward integration and decay-line fitting.
//!
//! This is where every RIR gets its ground-truth T60: integrate h^2
//! backwards, fit a line to the -5..-35 dB span of the decay curve (falling
//! back to -5..-25 dB when the curve is short), and extrapolate to 60 dB.

use std::path::Path;

use crate::error::{Error, Result};
use crate::room::Rir;

/// Block length for the truncation-point search.
const CUTOFF_BLOCK_SECS: f64 = 0.010;
/// A block within this many dB of the final block ends the integration.
const CUTOFF_MARGIN_DB: f64 = 3.0;

/// Per-sample decay level in dB relative to total energy; starts at 0 dB
/// and never increases.
#[derive(Debug, Clone)]
pub struct EnergyDecayCurve {
    pub values: Vec<f64>,
    pub sample_rate: u32,
}

impl EnergyDecayCurve {
    pub fn level_at(&self, idx: usize) -> f64 {
        self.values[idx]
    }
}

/// Diagnostics of the decay-line fit behind a T60 estimate.
#[derive(Debug, Clone, Copy)]
pub struct DecayFit {
    /// dB per second; negative for any physical decay.
    pub slope_db_per_s: f64,
    pub intercept_db: f64,
    /// Level span the line was fitted on, e.g. (-5, -35).
    pub fit_range_db: (f64, f64),
    pub r_squared: f64,
    /// Set when r^2 < 0.9; the estimate is returned anyway.
    pub low_confidence: bool,
}

/// Energy decay curve by exact backward cumulative summation of h^2.
///
/// Integration stops where the 10 ms block energy first falls within 3 dB
/// of the final block (searching after the peak block), which keeps
/// truncation noise out of the integral.
pub fn schroeder_edc(rir: &Rir) -> Result<EnergyDecayCurve> {
    let h = &rir.h.samples;
    let total: f64 = h.iter().map(|v| v * v).sum();
    if !(total > 0.0) {
        return Err(Error::invalid("RIR has no energy"));
    }

    let end = truncation_point(h, rir.h.sample_rate);
    let mut values = vec![0.0; end];
    let mut acc = 0.0;
    for i in (0..end).rev() {
        acc += h[i] * h[i];
        values[i] = acc;
    }
    let norm = values[0];
    for v in values.iter_mut() {
        *v = 10.0 * (*v / norm).log10();
    }
    Ok(EnergyDecayCurve {
        values,
        sample_rate: rir.h.sample_rate,
    })
}

fn truncation_point(h: &[f64], sample_rate: u32) -> usize {
    let block = ((CUTOFF_BLOCK_SECS * sample_rate as f64) as usize).max(1);
    let n_blocks = h.len() / block;
    if n_blocks < 3 {
        return h.len();
    }
    let energies: Vec<f64> = (0..n_blocks)
        .map(|b| h[b * block..(b + 1) * block].iter().map(|v| v * v).sum())
        .collect();
    let final_energy = energies[n_blocks - 1];
    let threshold = final_energy * 10f64.powf(CUTOFF_MARGIN_DB / 10.0);
    let peak_block = energies
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap_or(0);
    for b in peak_block + 1..n_blocks {
        if energies[b] <= threshold {
            return b * block;
        }
    }
    h.len()
}

/// T60 from a least-squares line through the -5..-35 dB span of the EDC
/// (T30 fit), falling back to -5..-25 dB (T20) when the curve never
/// reaches -35 dB.
pub fn estimate_t60(rir: &Rir) -> Result<(f64, DecayFit)> {
    let edc = schroeder_edc(rir)?;
    estimate_t60_from_edc(&edc)
}

pub fn estimate_t60_from_edc(edc: &EnergyDecayCurve) -> Result<(f64, DecayFit)> {
    let reach = edc
        .values
        .iter()
        .copied()
        .filter(|v| v.is_finite())
        .fold(0.0f64, f64::min);
    let (lo, hi) = if reach <= -35.0 {
        (-5.0, -35.0)
    } else if reach <= -25.0 {
        (-5.0, -25.0)
    } else {
        return Err(Error::InsufficientDecay(format!(
            "EDC only reaches {:.1} dB; need -25 dB",
            reach
        )));
    };

    let fs = edc.sample_rate as f64;
    let mut n = 0.0;
    let (mut sx, mut sy, mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (i, &level) in edc.values.iter().enumerate() {
        if level <= lo && level >= hi {
            let t = i as f64 / fs;
            n += 1.0;
            sx += t;
            sy += level;
            sxx += t * t;
            sxy += t * level;
            syy += level * level;
        }
    }
    if n < 8.0 {
        return Err(Error::InsufficientDecay(
            "too few samples in the fit range".into(),
        ));
    }
    let denom = n * sxx - sx * sx;
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;
    if !(slope < 0.0) {
        return Err(Error::InsufficientDecay(format!(
            "non-decaying fit (slope {:.2} dB/s)",
            slope
        )));
    }
    let ss_tot = syy - sy * sy / n;
    let ss_res: f64 = {
        // residual sum via the fitted coefficients
        let mut acc = 0.0;
        for (i, &level) in edc.values.iter().enumerate() {
            if level <= lo && level >= hi {
                let t = i as f64 / fs;
                let r = level - (slope * t + intercept);
                acc += r * r;
            }
        }
        acc
    };
    let r_squared = if ss_tot > 0.0 {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    } else {
        0.0
    };

    let fit = DecayFit {
        slope_db_per_s: slope,
        intercept_db: intercept,
        fit_range_db: (lo, hi),
        r_squared,
        low_confidence: r_squared < 0.9,
    };
    Ok((-60.0 / slope, fit))
}

/// Estimate the T60 and store it in the RIR as its ground-truth label.
pub fn attach_ground_truth(rir: &mut Rir) -> Result<DecayFit> {
    let (t60, fit) = estimate_t60(rir)?;
    rir.ground_truth_t60 = Some(t60);
    Ok(fit)
}

/// Dump an EDC as `time_s,level_db` CSV.
pub fn write_edc_csv(path: &Path, edc: &EnergyDecayCurve) -> Result<()> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "time_s,level_db")?;
    for (i, v) in edc.values.iter().enumerate() {
        writeln!(f, "{},{}", i as f64 / edc.sample_rate as f64, v)?;
    }
    Ok(())
}
