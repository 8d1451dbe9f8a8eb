//! Losses and the two-stage optimization schedule.
//!
//! Stage 1 trains NE-NET alone on the masked-magnitude loss; stage 2 trains
//! RE-NET and fine-tunes NE-NET jointly on `L_RE + lambda * L_NE` with
//! separate learning rates. Both stages share the plateau schedule: the
//! learning rate halves after three epochs without a validation improvement.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dsp::MagnitudeSpectrogram;
use crate::error::{Error, Result};
use crate::nn::{spectrogram_to_tensor, NeNet, ReNet};
use crate::tensor::{AdamConfig, AdamState, Graph, Scalar, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossReduction {
    /// Element-count-normalized Frobenius losses (default).
    Mean,
    /// Raw squared Frobenius norm.
    Sum,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Speech/noise weighting of the stage-1 loss.
    pub alpha: f64,
    /// Weight of the NE loss inside the stage-2 joint loss.
    pub lambda: f64,
    pub stage1_lr: f64,
    pub stage2_ne_lr: f64,
    pub stage2_re_lr: f64,
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub batch_size: usize,
    /// Epochs without validation improvement before the lr halves.
    pub plateau_patience: usize,
    /// Global gradient-norm clip; 0 disables.
    pub grad_clip: f64,
    pub loss_reduction: LossReduction,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 0.5,
            lambda: 0.1,
            stage1_lr: 1e-3,
            stage2_ne_lr: 1e-4,
            stage2_re_lr: 1e-3,
            stage1_epochs: 60,
            stage2_epochs: 60,
            batch_size: 8,
            plateau_patience: 3,
            grad_clip: 5.0,
            loss_reduction: LossReduction::Mean,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::config("alpha must be in [0, 1]"));
        }
        if self.lambda < 0.0 {
            return Err(Error::config("lambda must be nonnegative"));
        }
        if self.stage1_lr <= 0.0 || self.stage2_re_lr <= 0.0 || self.stage2_ne_lr < 0.0 {
            return Err(Error::config("learning rates must be positive (ne lr may be 0)"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        Ok(())
    }
}

/// One training utterance: magnitudes of the mixture, the reverberant
/// speech and the reverberant noise, plus the T60 label of the speech RIR.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub mag_y: MagnitudeSpectrogram,
    pub mag_x: MagnitudeSpectrogram,
    pub mag_n: MagnitudeSpectrogram,
    pub t60: f64,
}

/// `alpha ||X_hat - X||^2 + (1 - alpha) ||N_hat - N||^2`, mean- or
/// sum-reduced.
pub fn loss_ne<T: Scalar>(
    g: &mut Graph<T>,
    mag_x_hat: Var,
    mag_x: Var,
    mag_n_hat: Var,
    mag_n: Var,
    alpha: f64,
    reduction: LossReduction,
) -> Result<Var> {
    let red = |g: &mut Graph<T>, v: Var| -> Result<Var> {
        let n = g.value(v).len() as f64;
        let m = g.mean(v)?;
        Ok(match reduction {
            LossReduction::Mean => m,
            LossReduction::Sum => g.scale(m, n),
        })
    };
    let dx = g.sub(mag_x_hat, mag_x)?;
    let dx2 = g.mul(dx, dx)?;
    let lx = red(g, dx2)?;
    let dn = g.sub(mag_n_hat, mag_n)?;
    let dn2 = g.mul(dn, dn)?;
    let ln = red(g, dn2)?;
    let a = g.scale(lx, alpha);
    let b = g.scale(ln, 1.0 - alpha);
    g.add(a, b)
}

/// `(1/T) sum_l (T60_hat_l - T60)^2` against a constant label.
pub fn loss_re<T: Scalar>(g: &mut Graph<T>, t_hat: Var, t60_label: f64) -> Result<Var> {
    let shape = g.value(t_hat).shape.clone();
    if g.value(t_hat).is_empty() {
        return Err(Error::invalid("loss_re on an empty estimate vector"));
    }
    let label = g.constant(Tensor::filled(&shape, T::from_f64(t60_label)));
    let d = g.sub(t_hat, label)?;
    let d2 = g.mul(d, d)?;
    g.mean(d2)
}

/// `L = L_RE + lambda * L_NE`.
pub fn loss_joint<T: Scalar>(g: &mut Graph<T>, l_re: Var, l_ne: Var, lambda: f64) -> Result<Var> {
    let scaled = g.scale(l_ne, lambda);
    g.add(l_re, scaled)
}

/// Halve-on-plateau learning rate schedule.
#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    pub lr: f64,
    patience: usize,
    best: f64,
    stagnant: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, patience: usize) -> Self {
        PlateauScheduler {
            lr,
            patience,
            best: f64::INFINITY,
            stagnant: 0,
        }
    }

    /// Feed one validation loss; returns the (possibly halved) lr.
    pub fn observe(&mut self, val_loss: f64) -> f64 {
        if val_loss < self.best {
            self.best = val_loss;
            self.stagnant = 0;
        } else {
            self.stagnant += 1;
            if self.stagnant >= self.patience {
                self.lr /= 2.0;
                self.stagnant = 0;
            }
        }
        self.lr
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct HistoryRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    /// NE-NET learning rate during stage 2.
    pub lr_aux: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct TrainHistory {
    pub rows: Vec<HistoryRow>,
}

impl TrainHistory {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        use std::io::Write;
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "epoch,train_loss,val_loss,lr,lr_ne")?;
        for r in &self.rows {
            writeln!(
                f,
                "{},{},{},{},{}",
                r.epoch,
                r.train_loss,
                r.val_loss,
                r.lr,
                r.lr_aux.map(|v| v.to_string()).unwrap_or_default()
            )?;
        }
        Ok(())
    }
}

fn clip_gradients<T: Scalar>(grad_sets: &mut [&mut Vec<Tensor<T>>], max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let mut total = 0.0f64;
    for set in grad_sets.iter() {
        for t in set.iter() {
            for &v in &t.data {
                let v = Scalar::to_f64(v);
                total += v * v;
            }
        }
    }
    let norm = total.sqrt();
    if norm > max_norm {
        let scale = T::from_f64(max_norm / norm);
        for set in grad_sets.iter_mut() {
            for t in set.iter_mut() {
                for v in t.data.iter_mut() {
                    *v = *v * scale;
                }
            }
        }
    }
}

fn scale_grads<T: Scalar>(grads: &mut [Tensor<T>], factor: f64) {
    let f = T::from_f64(factor);
    for t in grads.iter_mut() {
        for v in t.data.iter_mut() {
            *v = *v * f;
        }
    }
}

fn accumulate_grads<T: Scalar>(acc: &mut Option<Vec<Tensor<T>>>, delta: Vec<Tensor<T>>) {
    match acc {
        None => *acc = Some(delta),
        Some(acc) => {
            for (a, d) in acc.iter_mut().zip(delta.iter()) {
                for (x, y) in a.data.iter_mut().zip(d.data.iter()) {
                    *x = *x + *y;
                }
            }
        }
    }
}

/// Deterministic epoch shuffle: a simple seeded Fisher-Yates over indices.
fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    use rand_chacha::rand_core::SeedableRng;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng =
        rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9e3779b9));
    order.shuffle(&mut rng);
    Ok::<(), ()>(()).unwrap();
    order
}

/// Stage-1 forward + loss for one sample.
fn stage1_loss(
    g: &mut Graph<f32>,
    ne: &NeNet<f32>,
    bound: &crate::nn::Bound,
    sample: &TrainSample,
    cfg: &TrainConfig,
) -> Result<Var> {
    let y = g.constant(spectrogram_to_tensor::<f32>(&sample.mag_y));
    let (m_speech, m_noise) = ne.forward(g, bound, y)?;
    let frames = sample.mag_y.frames;
    let bins = sample.mag_y.bins;
    let y_flat = g.reshape(y, &[frames, bins])?;
    let x_hat = g.mul(m_speech, y_flat)?;
    let n_hat = g.mul(m_noise, y_flat)?;
    let x = {
        let t = spectrogram_to_tensor::<f32>(&sample.mag_x);
        let t = t.reshaped(&[frames, bins])?;
        g.constant(t)
    };
    let n = {
        let t = spectrogram_to_tensor::<f32>(&sample.mag_n);
        let t = t.reshaped(&[frames, bins])?;
        g.constant(t)
    };
    loss_ne(g, x_hat, x, n_hat, n, cfg.alpha, cfg.loss_reduction)
}

/// Stage-2 forward + joint loss for one sample.
fn stage2_loss(
    g: &mut Graph<f32>,
    ne: &NeNet<f32>,
    ne_bound: &crate::nn::Bound,
    re: &ReNet<f32>,
    re_bound: &crate::nn::Bound,
    sample: &TrainSample,
    cfg: &TrainConfig,
) -> Result<Var> {
    let frames = sample.mag_y.frames;
    let bins = sample.mag_y.bins;
    let y = g.constant(spectrogram_to_tensor::<f32>(&sample.mag_y));
    let (m_speech, m_noise) = ne.forward(g, ne_bound, y)?;
    let y_flat = g.reshape(y, &[frames, bins])?;
    let x_hat = g.mul(m_speech, y_flat)?;
    let n_hat = g.mul(m_noise, y_flat)?;

    let x = {
        let t = spectrogram_to_tensor::<f32>(&sample.mag_x).reshaped(&[frames, bins])?;
        g.constant(t)
    };
    let n = {
        let t = spectrogram_to_tensor::<f32>(&sample.mag_n).reshaped(&[frames, bins])?;
        g.constant(t)
    };
    let l_ne = loss_ne(g, x_hat, x, n_hat, n, cfg.alpha, cfg.loss_reduction)?;

    let y3 = g.reshape(y_flat, &[1, frames, bins])?;
    let x3 = g.reshape(x_hat, &[1, frames, bins])?;
    let n3 = g.reshape(n_hat, &[1, frames, bins])?;
    let yx = g.concat_channels(y3, x3)?;
    let stack = g.concat_channels(yx, n3)?;
    let t_hat = re.forward(g, re_bound, stack)?;
    let l_re = loss_re(g, t_hat, sample.t60)?;
    loss_joint(g, l_re, l_ne, cfg.lambda)
}

/// Train NE-NET on (|Y|, |X|, |N|) triples. On return the network holds the
/// best-validation parameters; the history has one row per epoch.
pub fn train_stage1(
    ne: &mut NeNet<f32>,
    train: &[TrainSample],
    val: &[TrainSample],
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::config("stage 1 needs nonempty train and val sets"));
    }
    let mut adam = AdamState::new(&ne.params.shapes(), AdamConfig::default());
    let mut sched = PlateauScheduler::new(cfg.stage1_lr, cfg.plateau_patience);
    let mut history = TrainHistory::default();
    let mut best = (f64::INFINITY, ne.params.tensors.clone());

    for epoch in 1..=cfg.stage1_epochs {
        let order = epoch_order(train.len(), cfg.seed, epoch);
        let mut train_loss = 0.0;
        let mut batch_grads: Option<Vec<Tensor<f32>>> = None;
        let mut in_batch = 0usize;
        for (step, &idx) in order.iter().enumerate() {
            let sample = &train[idx];
            let mut g = Graph::new();
            let bound = ne.params.bind(&mut g);
            let loss = stage1_loss(&mut g, ne, &bound, sample, cfg)?;
            let loss_val = Scalar::to_f64(g.value(loss).scalar_value());
            if !loss_val.is_finite() {
                return Err(Error::Diverged(format!(
                    "stage 1 loss became non-finite at epoch {} step {}",
                    epoch, step
                )));
            }
            train_loss += loss_val;
            g.backward(loss)?;
            accumulate_grads(&mut batch_grads, ne.params.grads(&g, &bound));
            in_batch += 1;
            if in_batch == cfg.batch_size || step + 1 == order.len() {
                let mut grads = batch_grads.take().unwrap();
                scale_grads(&mut grads, 1.0 / in_batch as f64);
                clip_gradients(&mut [&mut grads], cfg.grad_clip);
                adam.step(&mut ne.params.tensors, &grads, sched.lr)?;
                in_batch = 0;
            }
        }
        train_loss /= train.len() as f64;

        let mut val_loss = 0.0;
        for sample in val {
            let mut g = Graph::new();
            let bound = ne.params.bind(&mut g);
            let loss = stage1_loss(&mut g, ne, &bound, sample, cfg)?;
            val_loss += Scalar::to_f64(g.value(loss).scalar_value());
        }
        val_loss /= val.len() as f64;
        if !val_loss.is_finite() {
            return Err(Error::Diverged(format!(
                "stage 1 validation loss non-finite at epoch {}",
                epoch
            )));
        }
        if val_loss < best.0 {
            best = (val_loss, ne.params.tensors.clone());
        }
        let lr_after = sched.observe(val_loss);
        history.rows.push(HistoryRow {
            epoch,
            train_loss,
            val_loss,
            lr: lr_after,
            lr_aux: None,
        });
    }
    ne.params.tensors = best.1;
    Ok(history)
}

/// Joint stage: trains RE-NET (lr `stage2_re_lr`) while fine-tuning NE-NET
/// (lr `stage2_ne_lr`; 0 freezes it bit-exactly).
pub fn train_stage2(
    ne: &mut NeNet<f32>,
    re: &mut ReNet<f32>,
    train: &[TrainSample],
    val: &[TrainSample],
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::config("stage 2 needs nonempty train and val sets"));
    }
    let mut adam_ne = AdamState::new(&ne.params.shapes(), AdamConfig::default());
    let mut adam_re = AdamState::new(&re.params.shapes(), AdamConfig::default());
    let mut sched_ne = PlateauScheduler::new(cfg.stage2_ne_lr, cfg.plateau_patience);
    let mut sched_re = PlateauScheduler::new(cfg.stage2_re_lr, cfg.plateau_patience);
    let mut history = TrainHistory::default();
    let mut best = (
        f64::INFINITY,
        ne.params.tensors.clone(),
        re.params.tensors.clone(),
    );

    for epoch in 1..=cfg.stage2_epochs {
        let order = epoch_order(train.len(), cfg.seed.wrapping_add(1), epoch);
        let mut train_loss = 0.0;
        let mut ne_grads: Option<Vec<Tensor<f32>>> = None;
        let mut re_grads: Option<Vec<Tensor<f32>>> = None;
        let mut in_batch = 0usize;
        for (step, &idx) in order.iter().enumerate() {
            let sample = &train[idx];
            let mut g = Graph::new();
            let ne_bound = ne.params.bind(&mut g);
            let re_bound = re.params.bind(&mut g);
            let loss = stage2_loss(&mut g, ne, &ne_bound, re, &re_bound, sample, cfg)?;
            let loss_val = Scalar::to_f64(g.value(loss).scalar_value());
            if !loss_val.is_finite() {
                return Err(Error::Diverged(format!(
                    "stage 2 loss became non-finite at epoch {} step {}",
                    epoch, step
                )));
            }
            train_loss += loss_val;
            g.backward(loss)?;
            accumulate_grads(&mut ne_grads, ne.params.grads(&g, &ne_bound));
            accumulate_grads(&mut re_grads, re.params.grads(&g, &re_bound));
            in_batch += 1;
            if in_batch == cfg.batch_size || step + 1 == order.len() {
                let mut gn = ne_grads.take().unwrap();
                let mut gr = re_grads.take().unwrap();
                scale_grads(&mut gn, 1.0 / in_batch as f64);
                scale_grads(&mut gr, 1.0 / in_batch as f64);
                clip_gradients(&mut [&mut gn, &mut gr], cfg.grad_clip);
                adam_ne.step(&mut ne.params.tensors, &gn, sched_ne.lr)?;
                adam_re.step(&mut re.params.tensors, &gr, sched_re.lr)?;
                in_batch = 0;
            }
        }
        train_loss /= train.len() as f64;

        let mut val_loss = 0.0;
        for sample in val {
            let mut g = Graph::new();
            let ne_bound = ne.params.bind(&mut g);
            let re_bound = re.params.bind(&mut g);
            let loss = stage2_loss(&mut g, ne, &ne_bound, re, &re_bound, sample, cfg)?;
            val_loss += Scalar::to_f64(g.value(loss).scalar_value());
        }
        val_loss /= val.len() as f64;
        if !val_loss.is_finite() {
            return Err(Error::Diverged(format!(
                "stage 2 validation loss non-finite at epoch {}",
                epoch
            )));
        }
        if val_loss < best.0 {
            best = (val_loss, ne.params.tensors.clone(), re.params.tensors.clone());
        }
        let lr_ne = sched_ne.observe(val_loss);
        let lr_re = sched_re.observe(val_loss);
        history.rows.push(HistoryRow {
            epoch,
            train_loss,
            val_loss,
            lr: lr_re,
            lr_aux: Some(lr_ne),
        });
    }
    ne.params.tensors = best.1;
    re.params.tensors = best.2;
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ModelConfig;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn mag(frames: usize, bins: usize, seed: u64) -> MagnitudeSpectrogram {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        MagnitudeSpectrogram {
            frames,
            bins,
            data: (0..frames * bins).map(|_| rng.gen_range(0.0..1.0)).collect(),
        }
    }

    fn toy_samples(n: usize, frames: usize) -> Vec<TrainSample> {
        (0..n)
            .map(|i| {
                let mag_x = mag(frames, 161, 100 + i as u64);
                let mag_n = mag(frames, 161, 200 + i as u64);
                let mag_y = MagnitudeSpectrogram {
                    frames,
                    bins: 161,
                    data: mag_x
                        .data
                        .iter()
                        .zip(mag_n.data.iter())
                        .map(|(a, b)| a + b)
                        .collect(),
                };
                TrainSample {
                    mag_y,
                    mag_x,
                    mag_n,
                    t60: 0.3 + 0.1 * i as f64,
                }
            })
            .collect()
    }

    #[test]
    fn loss_ne_hand_case() {
        // X_hat - X = 1 everywhere on 2x2, N_hat = N, alpha = 0.5 -> 0.5
        let mut g = Graph::<f64>::new();
        let x_hat = g.constant(Tensor::filled(&[2, 2], 2.0));
        let x = g.constant(Tensor::filled(&[2, 2], 1.0));
        let n_hat = g.constant(Tensor::filled(&[2, 2], 3.0));
        let n = g.constant(Tensor::filled(&[2, 2], 3.0));
        let l = loss_ne(&mut g, x_hat, x, n_hat, n, 0.5, LossReduction::Mean).unwrap();
        assert_eq!(g.value(l).scalar_value(), 0.5);

        // alpha = 1 removes the noise term entirely
        let l = loss_ne(&mut g, x_hat, x, n_hat, n, 1.0, LossReduction::Mean).unwrap();
        assert_eq!(g.value(l).scalar_value(), 1.0);

        // perfect estimates -> 0
        let l = loss_ne(&mut g, x, x, n, n, 0.5, LossReduction::Mean).unwrap();
        assert_eq!(g.value(l).scalar_value(), 0.0);

        // sum reduction scales by the element count
        let l = loss_ne(&mut g, x_hat, x, n_hat, n, 0.5, LossReduction::Sum).unwrap();
        assert_eq!(g.value(l).scalar_value(), 2.0);
    }

    #[test]
    fn loss_re_hand_case() {
        let mut g = Graph::<f64>::new();
        let t_hat = g.constant(Tensor::from_vec(&[2], vec![0.5, 0.7]).unwrap());
        let l = loss_re(&mut g, t_hat, 0.6).unwrap();
        assert!((g.value(l).scalar_value() - 0.01).abs() < 1e-12);

        // all frames equal the label -> 0
        let exact = g.constant(Tensor::filled(&[3], 0.6));
        let l = loss_re(&mut g, exact, 0.6).unwrap();
        assert_eq!(g.value(l).scalar_value(), 0.0);

        // single frame reduces to squared error
        let single = g.constant(Tensor::from_vec(&[1], vec![0.9]).unwrap());
        let l = loss_re(&mut g, single, 0.6).unwrap();
        assert!((g.value(l).scalar_value() - 0.09).abs() < 1e-12);
    }

    #[test]
    fn loss_joint_arithmetic() {
        let mut g = Graph::<f64>::new();
        let l_re = g.constant(Tensor::scalar(1.0));
        let l_ne = g.constant(Tensor::scalar(2.0));
        let l = loss_joint(&mut g, l_re, l_ne, 0.1).unwrap();
        assert!((g.value(l).scalar_value() - 1.2).abs() < 1e-12);
        let l = loss_joint(&mut g, l_re, l_ne, 0.0).unwrap();
        assert_eq!(g.value(l).scalar_value(), 1.0);
    }

    #[test]
    fn scheduler_halves_after_patience() {
        let mut s = PlateauScheduler::new(1e-3, 3);
        assert_eq!(s.observe(1.0), 1e-3); // improvement (from inf)
        assert_eq!(s.observe(1.1), 1e-3); // stagnant 1
        assert_eq!(s.observe(1.05), 1e-3); // stagnant 2
        assert_eq!(s.observe(1.2), 5e-4); // stagnant 3 -> halved
        assert_eq!(s.observe(0.5), 5e-4); // improvement resets
        assert_eq!(s.observe(0.6), 5e-4);
        assert_eq!(s.observe(0.6), 5e-4);
        assert_eq!(s.observe(0.6), 2.5e-4);
    }

    #[test]
    fn gradients_reach_ne_in_stage2() {
        let cfg_model = ModelConfig::desk();
        let ne = NeNet::<f32>::new(&cfg_model, 1);
        let re = ReNet::<f32>::new(&cfg_model, 2);
        let cfg = TrainConfig::default();
        let sample = &toy_samples(1, 7)[0];

        let mut g = Graph::new();
        let ne_bound = ne.params.bind(&mut g);
        let re_bound = re.params.bind(&mut g);
        let loss = stage2_loss(&mut g, &ne, &ne_bound, &re, &re_bound, sample, &cfg).unwrap();
        g.backward(loss).unwrap();
        let grads = ne.params.grads(&g, &ne_bound);
        let norm: f64 = grads
            .iter()
            .flat_map(|t| t.data.iter())
            .map(|&v| (v as f64) * (v as f64))
            .sum::<f64>()
            .sqrt();
        assert!(norm > 0.0, "NE gradients all zero in stage 2");
    }

    #[test]
    fn lambda_changes_ne_gradient_pathway() {
        let cfg_model = ModelConfig::desk();
        let ne = NeNet::<f32>::new(&cfg_model, 1);
        let re = ReNet::<f32>::new(&cfg_model, 2);
        let sample = &toy_samples(1, 7)[0];
        let grads_for = |lambda: f64| -> Vec<Tensor<f32>> {
            let cfg = TrainConfig {
                lambda,
                ..TrainConfig::default()
            };
            let mut g = Graph::new();
            let ne_bound = ne.params.bind(&mut g);
            let re_bound = re.params.bind(&mut g);
            let loss =
                stage2_loss(&mut g, &ne, &ne_bound, &re, &re_bound, sample, &cfg).unwrap();
            g.backward(loss).unwrap();
            ne.params.grads(&g, &ne_bound)
        };
        let with = grads_for(0.1);
        let without = grads_for(0.0);
        // lambda = 0 still leaves mask-pathway gradients, but the totals
        // must differ once the NE loss term is enabled
        let without_norm: f64 = without
            .iter()
            .flat_map(|t| t.data.iter())
            .map(|&v| (v as f64).powi(2))
            .sum();
        assert!(without_norm > 0.0);
        assert!(with
            .iter()
            .zip(without.iter())
            .any(|(a, b)| a.data != b.data));
    }

    #[test]
    fn stage1_is_deterministic_and_learns_on_toy_data() {
        let cfg_model = ModelConfig::desk();
        let samples = toy_samples(4, 9);
        let cfg = TrainConfig {
            stage1_epochs: 6,
            batch_size: 2,
            seed: 7,
            ..TrainConfig::default()
        };
        let run = || {
            let mut ne = NeNet::<f32>::new(&cfg_model, 5);
            let h = train_stage1(&mut ne, &samples, &samples, &cfg).unwrap();
            (h, ne)
        };
        let (h1, ne1) = run();
        let (h2, ne2) = run();
        for (a, b) in h1.rows.iter().zip(h2.rows.iter()) {
            assert_eq!(a.train_loss, b.train_loss);
            assert_eq!(a.val_loss, b.val_loss);
        }
        for (a, b) in ne1.params.tensors.iter().zip(ne2.params.tensors.iter()) {
            assert_eq!(a.data, b.data);
        }
        assert!(
            h1.rows.last().unwrap().train_loss < h1.rows[0].train_loss,
            "loss did not decrease: {:?}",
            h1.rows.iter().map(|r| r.train_loss).collect::<Vec<_>>()
        );
    }

    #[test]
    fn stage2_frozen_ne_stays_bit_identical() {
        let cfg_model = ModelConfig::desk();
        let samples = toy_samples(2, 7);
        let mut ne = NeNet::<f32>::new(&cfg_model, 11);
        let mut re = ReNet::<f32>::new(&cfg_model, 12);
        let before: Vec<Vec<f32>> = ne.params.tensors.iter().map(|t| t.data.clone()).collect();
        let cfg = TrainConfig {
            stage2_epochs: 2,
            stage2_ne_lr: 0.0,
            batch_size: 2,
            ..TrainConfig::default()
        };
        train_stage2(&mut ne, &mut re, &samples, &samples, &cfg).unwrap();
        for (a, b) in ne.params.tensors.iter().zip(before.iter()) {
            assert_eq!(&a.data, b);
        }
    }

    #[test]
    fn history_csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("history.csv");
        let mut h = TrainHistory::default();
        h.rows.push(HistoryRow {
            epoch: 1,
            train_loss: 0.5,
            val_loss: 0.6,
            lr: 1e-3,
            lr_aux: None,
        });
        h.rows.push(HistoryRow {
            epoch: 2,
            train_loss: 0.4,
            val_loss: 0.5,
            lr: 1e-3,
            lr_aux: Some(1e-4),
        });
        h.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("epoch,train_loss,val_loss,lr,lr_ne"));
    }
}
