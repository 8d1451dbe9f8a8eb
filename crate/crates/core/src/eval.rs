//! Estimation-error metrics, two-way ANOVA with Fisher LSD post-hoc tests,
//! duration sweeps and report tables.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dsp::SampleBuffer;
use crate::error::{Error, Result};
use crate::stats::{f_survival, t_two_sided};

/// Ground-truth/estimate pairs for one evaluation condition.
#[derive(Debug, Clone, Default)]
pub struct EvalBatch {
    /// (T60 ground truth, estimated T60), seconds.
    pub pairs: Vec<(f64, f64)>,
}

impl EvalBatch {
    pub fn new(pairs: Vec<(f64, f64)>) -> Self {
        EvalBatch { pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Signed estimation error `e = T60 - T60_hat`; positive means the
/// estimator undershot.
pub fn estimation_error(t60: f64, t60_hat: f64) -> f64 {
    t60 - t60_hat
}

/// Root mean squared estimation error in seconds.
pub fn rmse(batch: &EvalBatch) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::invalid("rmse of an empty batch"));
    }
    let sum: f64 = batch
        .pairs
        .iter()
        .map(|&(t, e)| {
            let d = estimation_error(t, e);
            d * d
        })
        .sum();
    Ok((sum / batch.len() as f64).sqrt())
}

/// Pearson correlation between ground truths and estimates.
pub fn pearson(batch: &EvalBatch) -> Result<f64> {
    let n = batch.len();
    if n < 2 {
        return Err(Error::invalid("pearson needs at least two pairs"));
    }
    let mean_t = batch.pairs.iter().map(|p| p.0).sum::<f64>() / n as f64;
    let mean_e = batch.pairs.iter().map(|p| p.1).sum::<f64>() / n as f64;
    let (mut cov, mut var_t, mut var_e) = (0.0, 0.0, 0.0);
    for &(t, e) in &batch.pairs {
        cov += (t - mean_t) * (e - mean_e);
        var_t += (t - mean_t) * (t - mean_t);
        var_e += (e - mean_e) * (e - mean_e);
    }
    if var_t == 0.0 || var_e == 0.0 {
        return Err(Error::UndefinedCorrelation(
            "a series is constant; correlation undefined".into(),
        ));
    }
    Ok(cov / (var_t.sqrt() * var_e.sqrt()))
}

/// One tested effect of a two-way ANOVA.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct AnovaEffect {
    pub ss: f64,
    pub df: f64,
    pub f: f64,
    pub p: f64,
}

/// Fixed-effects two-way ANOVA with interaction.
#[derive(Debug, Clone, Serialize)]
pub struct TwoWayAnova {
    pub factor_a: AnovaEffect,
    pub factor_b: AnovaEffect,
    pub interaction: AnovaEffect,
    pub ss_within: f64,
    pub df_within: f64,
    pub ms_within: f64,
    /// Set when every between-group deviation is zero; F is reported as 0
    /// and p as 1 in that case.
    pub degenerate: bool,
}

/// Two-way ANOVA over `cells[a][b]` = replicate values of cell (a, b).
///
/// The design must be balanced (equal cell sizes); pass
/// `allow_unbalanced = true` for the unweighted-means approximation.
pub fn anova_two_way(cells: &[Vec<Vec<f64>>], allow_unbalanced: bool) -> Result<TwoWayAnova> {
    let a_levels = cells.len();
    if a_levels < 2 {
        return Err(Error::invalid("factor A needs at least 2 levels"));
    }
    let b_levels = cells[0].len();
    if b_levels < 2 {
        return Err(Error::invalid("factor B needs at least 2 levels"));
    }
    if cells.iter().any(|row| row.len() != b_levels) {
        return Err(Error::invalid("ragged cell grid"));
    }
    if cells.iter().flatten().any(|c| c.is_empty()) {
        return Err(Error::UnbalancedDesign("empty cell".into()));
    }
    let n0 = cells[0][0].len();
    let balanced = cells.iter().flatten().all(|c| c.len() == n0);
    if !balanced && !allow_unbalanced {
        return Err(Error::UnbalancedDesign(
            "unequal cell sizes; pass allow_unbalanced for unweighted means".into(),
        ));
    }

    // Cell means and within-cell scatter.
    let mut cell_means = vec![vec![0.0; b_levels]; a_levels];
    let mut ss_within = 0.0;
    let mut total_n = 0.0;
    for (i, row) in cells.iter().enumerate() {
        for (j, cell) in row.iter().enumerate() {
            let m = cell.iter().sum::<f64>() / cell.len() as f64;
            cell_means[i][j] = m;
            ss_within += cell.iter().map(|v| (v - m) * (v - m)).sum::<f64>();
            total_n += cell.len() as f64;
        }
    }
    let df_within = total_n - (a_levels * b_levels) as f64;
    if df_within <= 0.0 {
        return Err(Error::invalid(
            "no within-cell replication; interaction cannot be tested",
        ));
    }
    let ms_within = ss_within / df_within;

    // Effective per-cell weight: actual n when balanced, harmonic mean of
    // the cell sizes for unweighted means.
    let n_eff = if balanced {
        n0 as f64
    } else {
        let inv: f64 = cells.iter().flatten().map(|c| 1.0 / c.len() as f64).sum();
        (a_levels * b_levels) as f64 / inv
    };

    let grand = cell_means.iter().flatten().sum::<f64>() / (a_levels * b_levels) as f64;
    let a_means: Vec<f64> = cell_means
        .iter()
        .map(|row| row.iter().sum::<f64>() / b_levels as f64)
        .collect();
    let b_means: Vec<f64> = (0..b_levels)
        .map(|j| cell_means.iter().map(|row| row[j]).sum::<f64>() / a_levels as f64)
        .collect();

    let ss_a = n_eff * b_levels as f64 * a_means.iter().map(|m| (m - grand) * (m - grand)).sum::<f64>();
    let ss_b = n_eff * a_levels as f64 * b_means.iter().map(|m| (m - grand) * (m - grand)).sum::<f64>();
    let mut ss_ab = 0.0;
    for i in 0..a_levels {
        for j in 0..b_levels {
            let d = cell_means[i][j] - a_means[i] - b_means[j] + grand;
            ss_ab += d * d;
        }
    }
    ss_ab *= n_eff;

    let df_a = (a_levels - 1) as f64;
    let df_b = (b_levels - 1) as f64;
    let df_ab = df_a * df_b;

    let degenerate = ms_within == 0.0;
    let effect = |ss: f64, df: f64| -> Result<AnovaEffect> {
        if degenerate {
            return Ok(AnovaEffect {
                ss,
                df,
                f: 0.0,
                p: 1.0,
            });
        }
        let f = (ss / df) / ms_within;
        Ok(AnovaEffect {
            ss,
            df,
            f,
            p: f_survival(f, df, df_within)?,
        })
    };

    Ok(TwoWayAnova {
        factor_a: effect(ss_a, df_a)?,
        factor_b: effect(ss_b, df_b)?,
        interaction: effect(ss_ab, df_ab)?,
        ss_within,
        df_within,
        ms_within,
        degenerate,
    })
}

/// Fisher least-significant-difference post-hoc test: pairwise two-sided
/// p-values using a pooled mean square error (from the preceding ANOVA).
/// The matrix is symmetric with ones on the diagonal.
pub fn fisher_lsd(groups: &[Vec<f64>], mse: f64, df_within: f64) -> Result<Vec<Vec<f64>>> {
    if groups.len() < 2 {
        return Err(Error::invalid("fisher_lsd needs at least 2 groups"));
    }
    if groups.iter().any(|g| g.is_empty()) {
        return Err(Error::invalid("empty group"));
    }
    if !(mse >= 0.0) || !(df_within > 0.0) {
        return Err(Error::invalid("need a pooled MSE and positive df"));
    }
    let means: Vec<f64> = groups
        .iter()
        .map(|g| g.iter().sum::<f64>() / g.len() as f64)
        .collect();
    let k = groups.len();
    let mut p = vec![vec![1.0; k]; k];
    for i in 0..k {
        for j in i + 1..k {
            let se = (mse * (1.0 / groups[i].len() as f64 + 1.0 / groups[j].len() as f64)).sqrt();
            let pij = if se == 0.0 {
                if means[i] == means[j] {
                    1.0
                } else {
                    0.0
                }
            } else {
                let t = (means[i] - means[j]) / se;
                t_two_sided(t, df_within)?
            };
            p[i][j] = pij;
            p[j][i] = pij;
        }
    }
    Ok(p)
}

/// Pooled within-group MSE and degrees of freedom (one-way), for driving
/// [`fisher_lsd`] when no two-way design is involved.
pub fn pooled_within(groups: &[Vec<f64>]) -> Result<(f64, f64)> {
    let n: usize = groups.iter().map(|g| g.len()).sum();
    let k = groups.len();
    if n <= k {
        return Err(Error::invalid("not enough replication"));
    }
    let mut ss = 0.0;
    for g in groups {
        let m = g.iter().sum::<f64>() / g.len() as f64;
        ss += g.iter().map(|v| (v - m) * (v - m)).sum::<f64>();
    }
    let df = (n - k) as f64;
    Ok((ss / df, df))
}

/// Duration-sweep protocol: estimates from growing prefixes of `utterance`,
/// 0.2 s steps up to 8 s. `estimate` maps a prefix to a T60 estimate.
pub fn duration_sweep<F>(estimate: F, utterance: &SampleBuffer) -> Result<Vec<(f64, f64)>>
where
    F: Fn(&SampleBuffer) -> Result<f64>,
{
    let fs = utterance.sample_rate as f64;
    if utterance.duration_secs() < 8.0 {
        return Err(Error::invalid(format!(
            "duration sweep needs >= 8 s of audio, got {:.2} s",
            utterance.duration_secs()
        )));
    }
    let mut out = Vec::with_capacity(40);
    for step in 1..=40 {
        let duration = 0.2 * step as f64;
        let len = (duration * fs).round() as usize;
        let prefix = SampleBuffer::new(
            utterance.samples[..len.min(utterance.len())].to_vec(),
            utterance.sample_rate,
        );
        out.push((duration, estimate(&prefix)?));
    }
    Ok(out)
}

/// Five-number summary (min, Q1, median, Q3, max) for box plots.
pub fn five_number_summary(values: &[f64]) -> Result<[f64; 5]> {
    if values.is_empty() {
        return Err(Error::invalid("summary of empty data"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q = |frac: f64| -> f64 {
        let pos = frac * (sorted.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        let w = pos - lo as f64;
        sorted[lo] * (1.0 - w) + sorted[hi] * w
    };
    Ok([sorted[0], q(0.25), q(0.5), q(0.75), sorted[sorted.len() - 1]])
}

/// One evaluated utterance tagged with its condition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalEntry {
    pub method: String,
    pub snr_db: f64,
    pub truth: f64,
    pub estimate: f64,
}

/// RMSE and correlation per method x SNR, mirroring the results-table
/// layout (one row per method, SNR columns plus an unweighted average).
#[derive(Debug, Clone, Serialize)]
pub struct ReportTable {
    pub methods: Vec<String>,
    pub snrs_db: Vec<f64>,
    /// rmse_ms[method][snr], milliseconds.
    pub rmse_ms: Vec<Vec<f64>>,
    pub rho: Vec<Vec<f64>>,
    pub rmse_avg_ms: Vec<f64>,
    pub rho_avg: Vec<f64>,
    /// Free-form reference annotations carried into the JSON output.
    pub annotations: BTreeMap<String, String>,
}

pub fn build_report(entries: &[EvalEntry]) -> Result<ReportTable> {
    if entries.is_empty() {
        return Err(Error::invalid("no evaluation entries"));
    }
    let mut methods: Vec<String> = Vec::new();
    let mut snrs: Vec<f64> = Vec::new();
    for e in entries {
        if !methods.contains(&e.method) {
            methods.push(e.method.clone());
        }
        if !snrs.iter().any(|s| (s - e.snr_db).abs() < 1e-9) {
            snrs.push(e.snr_db);
        }
    }
    snrs.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut rmse_ms = vec![vec![f64::NAN; snrs.len()]; methods.len()];
    let mut rho = vec![vec![f64::NAN; snrs.len()]; methods.len()];
    for (mi, method) in methods.iter().enumerate() {
        for (si, &snr) in snrs.iter().enumerate() {
            let batch = EvalBatch::new(
                entries
                    .iter()
                    .filter(|e| &e.method == method && (e.snr_db - snr).abs() < 1e-9)
                    .map(|e| (e.truth, e.estimate))
                    .collect(),
            );
            if batch.is_empty() {
                continue;
            }
            rmse_ms[mi][si] = rmse(&batch)? * 1000.0;
            rho[mi][si] = pearson(&batch).unwrap_or(f64::NAN);
        }
    }
    let avg = |rows: &Vec<Vec<f64>>| -> Vec<f64> {
        rows.iter()
            .map(|row| {
                let vals: Vec<f64> = row.iter().copied().filter(|v| v.is_finite()).collect();
                vals.iter().sum::<f64>() / vals.len().max(1) as f64
            })
            .collect()
    };
    Ok(ReportTable {
        rmse_avg_ms: avg(&rmse_ms),
        rho_avg: avg(&rho),
        methods,
        snrs_db: snrs,
        rmse_ms,
        rho,
        annotations: BTreeMap::new(),
    })
}

pub fn write_report_csv(path: &Path, table: &ReportTable) -> Result<()> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    let snr_cols = table
        .snrs_db
        .iter()
        .map(|s| format!("{}", s))
        .collect::<Vec<_>>()
        .join(",");
    writeln!(f, "metric,method,{},avg", snr_cols)?;
    for (mi, method) in table.methods.iter().enumerate() {
        let cells = table.rmse_ms[mi]
            .iter()
            .map(|v| format!("{:.3}", v))
            .collect::<Vec<_>>()
            .join(",");
        writeln!(f, "rmse_ms,{},{},{:.3}", method, cells, table.rmse_avg_ms[mi])?;
    }
    for (mi, method) in table.methods.iter().enumerate() {
        let cells = table.rho[mi]
            .iter()
            .map(|v| format!("{:.4}", v))
            .collect::<Vec<_>>()
            .join(",");
        writeln!(f, "rho,{},{},{:.4}", method, cells, table.rho_avg[mi])?;
    }
    Ok(())
}

pub fn write_report_json(path: &Path, table: &ReportTable) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(table)?)?;
    Ok(())
}

/// Gnuplot-friendly sweep dump: `duration_s estimate_s` per line.
pub fn write_sweep_dat(path: &Path, sweep: &[(f64, f64)]) -> Result<()> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "# duration_s estimate_s")?;
    for (d, e) in sweep {
        writeln!(f, "{:.1} {:.6}", d, e)?;
    }
    Ok(())
}

/// Gnuplot boxplot rows: `label min q1 median q3 max` per group.
pub fn write_boxplot_dat(path: &Path, rows: &[(String, [f64; 5])]) -> Result<()> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "# label min q1 median q3 max")?;
    for (label, s) in rows {
        writeln!(
            f,
            "{} {:.6} {:.6} {:.6} {:.6} {:.6}",
            label, s[0], s[1], s[2], s[3], s[4]
        )?;
    }
    Ok(())
}
