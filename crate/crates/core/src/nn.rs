//! The two-stage estimator: NE-NET (noise estimation via speech/noise
//! masks) and RE-NET (frame-wise reverberation-time regression), assembled
//! from the tensor engine's layer set.
//!
//! Topology of NE-NET: a 5-block ConvGLU encoder compressing 161 frequency
//! bins down to 4 (161 -> 79 -> 39 -> 19 -> 9 -> 4), three groups of five
//! gated dilated TCN units over the flattened bottleneck, and two DeconvGLU
//! decoders (speech mask, noise mask) fed by skip concatenations, each
//! ending in a linear + ReLU head. RE-NET keeps the encoder/TCN trunk
//! (3 input channels, smaller width) and swaps the decoders for a
//! frame-wise fully-connected head. All time operations are causal; the
//! in-network normalization uses cumulative (prefix) statistics so frame t
//! never depends on later input.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::MagnitudeSpectrogram;
use crate::error::{Error, Result};
use crate::tensor::{Graph, Scalar, Tensor, Var};

/// Dilation schedule of one TCN group.
pub const TCN_DILATIONS: [usize; 5] = [1, 2, 4, 8, 16];

/// Width configuration of the two networks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub input_bins: usize,
    /// Encoder/TCN channel width of NE-NET.
    pub ne_width: usize,
    /// Encoder/TCN channel width of RE-NET.
    pub re_width: usize,
    pub tcn_groups: usize,
    pub tcn_kernel: usize,
}

impl ModelConfig {
    /// Full-size configuration from the network table (64/10 channels).
    pub fn paper() -> Self {
        ModelConfig {
            input_bins: 161,
            ne_width: 64,
            re_width: 10,
            tcn_groups: 3,
            tcn_kernel: 5,
        }
    }

    /// Laptop-scale configuration (8/4 channels), same code paths.
    pub fn desk() -> Self {
        ModelConfig {
            ne_width: 8,
            re_width: 4,
            ..Self::paper()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(Self::paper()),
            "desk" => Ok(Self::desk()),
            other => Err(Error::config(format!(
                "unknown model preset '{}' (expected 'paper' or 'desk')",
                other
            ))),
        }
    }

    /// Frequency sizes along the encoder: kernel 5 on the first block,
    /// 3 afterwards, stride 2 throughout.
    pub fn encoder_ladder(&self) -> Vec<usize> {
        let mut ladder = vec![self.input_bins];
        let mut f = self.input_bins;
        for i in 0..5 {
            let k = if i == 0 { 5 } else { 3 };
            f = (f - k) / 2 + 1;
            ladder.push(f);
        }
        ladder
    }

    /// Feature width entering the TCN stack (`channels * bottleneck bins`).
    pub fn tcn_features(&self, width: usize) -> usize {
        width * self.encoder_ladder()[5]
    }
}

/// Named parameters in insertion order; names are unique and hierarchical
/// (e.g. `ne_net.encoder.conv_glu_1.content.weight`).
pub struct ParamSet<T> {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor<T>>,
    index: BTreeMap<String, usize>,
}

impl<T: Scalar> Default for ParamSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet {
            names: Vec::new(),
            tensors: Vec::new(),
            index: BTreeMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>) {
        let name = name.into();
        assert!(
            self.index.insert(name.clone(), self.names.len()).is_none(),
            "duplicate parameter name {}",
            name
        );
        self.names.push(name);
        self.tensors.push(tensor);
    }

    pub fn get(&self, name: &str) -> &Tensor<T> {
        &self.tensors[self.index[name]]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn value_count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn shapes(&self) -> Vec<Vec<usize>> {
        self.tensors.iter().map(|t| t.shape.clone()).collect()
    }

    /// Register every tensor as a graph parameter, in order.
    pub fn bind(&self, graph: &mut Graph<T>) -> Bound {
        Bound {
            vars: self
                .tensors
                .iter()
                .map(|t| graph.param(t.clone()))
                .collect(),
        }
    }

    /// Gradients in parameter order after a backward pass; parameters the
    /// loss does not reach get zero gradients.
    pub fn grads(&self, graph: &Graph<T>, bound: &Bound) -> Vec<Tensor<T>> {
        bound
            .vars
            .iter()
            .zip(self.tensors.iter())
            .map(|(&v, t)| {
                graph
                    .grad(v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(&t.shape))
            })
            .collect()
    }

    pub fn to_f64(&self) -> ParamSet<f64> {
        let mut out = ParamSet::new();
        for (name, t) in self.names.iter().zip(self.tensors.iter()) {
            out.add(name.clone(), t.to_f64());
        }
        out
    }
}

/// Graph handles of one [`ParamSet::bind`] call.
pub struct Bound {
    pub vars: Vec<Var>,
}

impl Bound {
    pub fn var<T: Scalar>(&self, set: &ParamSet<T>, name: &str) -> Var {
        self.vars[set.index[name]]
    }
}

fn kaiming_uniform<T: Scalar>(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    Tensor {
        shape: shape.to_vec(),
        data: (0..n)
            .map(|_| T::from_f64(rng.gen_range(-bound..bound)))
            .collect(),
    }
}

fn add_conv_glu<T: Scalar>(
    set: &mut ParamSet<T>,
    prefix: &str,
    c_in: usize,
    c_out: usize,
    k_t: usize,
    k_f: usize,
    rng: &mut ChaCha8Rng,
) {
    let fan_in = c_in * k_t * k_f;
    for branch in ["content", "gate"] {
        set.add(
            format!("{prefix}.{branch}.weight"),
            kaiming_uniform(&[c_out, c_in, k_t, k_f], fan_in, rng),
        );
        set.add(format!("{prefix}.{branch}.bias"), Tensor::zeros(&[c_out]));
    }
    set.add(format!("{prefix}.norm.gamma"), Tensor::filled(&[c_out], T::one()));
    set.add(format!("{prefix}.norm.beta"), Tensor::zeros(&[c_out]));
    set.add(
        format!("{prefix}.prelu.slope"),
        Tensor::filled(&[c_out], T::from_f64(0.25)),
    );
}

fn add_deconv_glu<T: Scalar>(
    set: &mut ParamSet<T>,
    prefix: &str,
    c_in: usize,
    c_out: usize,
    k_t: usize,
    k_f: usize,
    rng: &mut ChaCha8Rng,
) {
    let fan_in = c_in * k_t * k_f;
    for branch in ["content", "gate"] {
        set.add(
            format!("{prefix}.{branch}.weight"),
            kaiming_uniform(&[c_in, c_out, k_t, k_f], fan_in, rng),
        );
        set.add(format!("{prefix}.{branch}.bias"), Tensor::zeros(&[c_out]));
    }
    set.add(format!("{prefix}.norm.gamma"), Tensor::filled(&[c_out], T::one()));
    set.add(format!("{prefix}.norm.beta"), Tensor::zeros(&[c_out]));
    set.add(
        format!("{prefix}.prelu.slope"),
        Tensor::filled(&[c_out], T::from_f64(0.25)),
    );
}

fn add_tcn_unit<T: Scalar>(
    set: &mut ParamSet<T>,
    prefix: &str,
    io: usize,
    bottleneck: usize,
    kernel: usize,
    rng: &mut ChaCha8Rng,
) {
    set.add(
        format!("{prefix}.pw_in.weight"),
        kaiming_uniform(&[bottleneck, io, 1], io, rng),
    );
    set.add(format!("{prefix}.pw_in.bias"), Tensor::zeros(&[bottleneck]));
    set.add(
        format!("{prefix}.prelu1.slope"),
        Tensor::filled(&[bottleneck], T::from_f64(0.25)),
    );
    set.add(
        format!("{prefix}.norm1.gamma"),
        Tensor::filled(&[bottleneck], T::one()),
    );
    set.add(format!("{prefix}.norm1.beta"), Tensor::zeros(&[bottleneck]));
    for branch in ["content", "gate"] {
        set.add(
            format!("{prefix}.dilated.{branch}.weight"),
            kaiming_uniform(&[bottleneck, bottleneck, kernel], bottleneck * kernel, rng),
        );
        set.add(
            format!("{prefix}.dilated.{branch}.bias"),
            Tensor::zeros(&[bottleneck]),
        );
    }
    set.add(
        format!("{prefix}.prelu2.slope"),
        Tensor::filled(&[bottleneck], T::from_f64(0.25)),
    );
    set.add(
        format!("{prefix}.norm2.gamma"),
        Tensor::filled(&[bottleneck], T::one()),
    );
    set.add(format!("{prefix}.norm2.beta"), Tensor::zeros(&[bottleneck]));
    set.add(
        format!("{prefix}.pw_out.weight"),
        kaiming_uniform(&[io, bottleneck, 1], bottleneck, rng),
    );
    set.add(format!("{prefix}.pw_out.bias"), Tensor::zeros(&[io]));
}

fn conv_glu_forward<T: Scalar>(
    g: &mut Graph<T>,
    set: &ParamSet<T>,
    bound: &Bound,
    prefix: &str,
    x: Var,
    stride_f: usize,
) -> Result<Var> {
    let content = g.conv2d(
        x,
        bound.var(set, &format!("{prefix}.content.weight")),
        bound.var(set, &format!("{prefix}.content.bias")),
        stride_f,
    )?;
    let gate = g.conv2d(
        x,
        bound.var(set, &format!("{prefix}.gate.weight")),
        bound.var(set, &format!("{prefix}.gate.bias")),
        stride_f,
    )?;
    let sg = g.sigmoid(gate);
    let gated = g.mul(content, sg)?;
    let normed = g.cumulative_norm(
        gated,
        bound.var(set, &format!("{prefix}.norm.gamma")),
        bound.var(set, &format!("{prefix}.norm.beta")),
    )?;
    g.prelu(normed, bound.var(set, &format!("{prefix}.prelu.slope")))
}

fn deconv_glu_forward<T: Scalar>(
    g: &mut Graph<T>,
    set: &ParamSet<T>,
    bound: &Bound,
    prefix: &str,
    x: Var,
    stride_f: usize,
) -> Result<Var> {
    let content = g.deconv2d(
        x,
        bound.var(set, &format!("{prefix}.content.weight")),
        bound.var(set, &format!("{prefix}.content.bias")),
        stride_f,
    )?;
    let gate = g.deconv2d(
        x,
        bound.var(set, &format!("{prefix}.gate.weight")),
        bound.var(set, &format!("{prefix}.gate.bias")),
        stride_f,
    )?;
    let sg = g.sigmoid(gate);
    let gated = g.mul(content, sg)?;
    let normed = g.cumulative_norm(
        gated,
        bound.var(set, &format!("{prefix}.norm.gamma")),
        bound.var(set, &format!("{prefix}.norm.beta")),
    )?;
    g.prelu(normed, bound.var(set, &format!("{prefix}.prelu.slope")))
}

fn tcn_unit_forward<T: Scalar>(
    g: &mut Graph<T>,
    set: &ParamSet<T>,
    bound: &Bound,
    prefix: &str,
    x: Var,
    dilation: usize,
) -> Result<Var> {
    let h = g.conv1d(
        x,
        bound.var(set, &format!("{prefix}.pw_in.weight")),
        bound.var(set, &format!("{prefix}.pw_in.bias")),
        1,
    )?;
    let h = g.prelu(h, bound.var(set, &format!("{prefix}.prelu1.slope")))?;
    let h = g.cumulative_norm(
        h,
        bound.var(set, &format!("{prefix}.norm1.gamma")),
        bound.var(set, &format!("{prefix}.norm1.beta")),
    )?;
    let content = g.conv1d(
        h,
        bound.var(set, &format!("{prefix}.dilated.content.weight")),
        bound.var(set, &format!("{prefix}.dilated.content.bias")),
        dilation,
    )?;
    let gate = g.conv1d(
        h,
        bound.var(set, &format!("{prefix}.dilated.gate.weight")),
        bound.var(set, &format!("{prefix}.dilated.gate.bias")),
        dilation,
    )?;
    let sg = g.sigmoid(gate);
    let h = g.mul(content, sg)?;
    let h = g.prelu(h, bound.var(set, &format!("{prefix}.prelu2.slope")))?;
    let h = g.cumulative_norm(
        h,
        bound.var(set, &format!("{prefix}.norm2.gamma")),
        bound.var(set, &format!("{prefix}.norm2.beta")),
    )?;
    let h = g.conv1d(
        h,
        bound.var(set, &format!("{prefix}.pw_out.weight")),
        bound.var(set, &format!("{prefix}.pw_out.bias")),
        1,
    )?;
    g.add(x, h)
}

fn encoder_forward<T: Scalar>(
    g: &mut Graph<T>,
    set: &ParamSet<T>,
    bound: &Bound,
    net: &str,
    x: Var,
) -> Result<Vec<Var>> {
    let mut outs = Vec::with_capacity(5);
    let mut h = x;
    for i in 1..=5 {
        h = conv_glu_forward(
            g,
            set,
            bound,
            &format!("{net}.encoder.conv_glu_{i}"),
            h,
            2,
        )?;
        outs.push(h);
    }
    Ok(outs)
}

fn tcn_forward<T: Scalar>(
    g: &mut Graph<T>,
    set: &ParamSet<T>,
    bound: &Bound,
    net: &str,
    groups: usize,
    mut h: Var,
) -> Result<Var> {
    for group in 1..=groups {
        for (u, &d) in TCN_DILATIONS.iter().enumerate() {
            h = tcn_unit_forward(
                g,
                set,
                bound,
                &format!("{net}.tcn.group_{group}.unit_{}", u + 1),
                h,
                d,
            )?;
        }
    }
    Ok(h)
}

/// First-stage network: noisy magnitude in, speech and noise masks out.
pub struct NeNet<T> {
    pub config: ModelConfig,
    pub params: ParamSet<T>,
}

impl<T: Scalar> NeNet<T> {
    pub fn new(config: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut set = ParamSet::new();
        let w = config.ne_width;
        for i in 1..=5 {
            let c_in = if i == 1 { 1 } else { w };
            let k_f = if i == 1 { 5 } else { 3 };
            add_conv_glu(
                &mut set,
                &format!("ne_net.encoder.conv_glu_{i}"),
                c_in,
                w,
                2,
                k_f,
                &mut rng,
            );
        }
        let io = config.tcn_features(w);
        for group in 1..=config.tcn_groups {
            for unit in 1..=TCN_DILATIONS.len() {
                add_tcn_unit(
                    &mut set,
                    &format!("ne_net.tcn.group_{group}.unit_{unit}"),
                    io,
                    w,
                    config.tcn_kernel,
                    &mut rng,
                );
            }
        }
        for decoder in ["speech", "noise"] {
            for i in 1..=5 {
                let c_out = if i == 5 { 1 } else { w };
                let k_f = if i == 5 { 5 } else { 3 };
                add_deconv_glu(
                    &mut set,
                    &format!("ne_net.decoder_{decoder}.deconv_glu_{i}"),
                    2 * w,
                    c_out,
                    2,
                    k_f,
                    &mut rng,
                );
            }
            set.add(
                format!("ne_net.head_{decoder}.weight"),
                kaiming_uniform(
                    &[config.input_bins, config.input_bins],
                    config.input_bins,
                    &mut rng,
                ),
            );
            set.add(
                format!("ne_net.head_{decoder}.bias"),
                Tensor::zeros(&[config.input_bins]),
            );
        }
        NeNet {
            config: config.clone(),
            params: set,
        }
    }

    /// Forward pass: `mag_y` is `[1, T, bins]`; returns the nonnegative
    /// speech and noise masks, each `[T, bins]`.
    pub fn forward(&self, g: &mut Graph<T>, bound: &Bound, mag_y: Var) -> Result<(Var, Var)> {
        let shape = g.value(mag_y).shape.clone();
        if shape.len() != 3 || shape[0] != 1 || shape[2] != self.config.input_bins {
            return Err(Error::invalid(format!(
                "NE-NET input must be [1, T, {}], got {:?}",
                self.config.input_bins, shape
            )));
        }
        if !g.value(mag_y).all_finite() {
            return Err(Error::invalid("NE-NET input contains non-finite values"));
        }
        let t_len = shape[1];
        let set = &self.params;
        let enc = encoder_forward(g, set, bound, "ne_net", mag_y)?;
        let flat = g.channels_to_frames(enc[4])?;
        let tcn = tcn_forward(g, set, bound, "ne_net", self.config.tcn_groups, flat)?;
        let trunk = g.frames_to_channels(tcn, self.config.ne_width)?;

        let mut masks = Vec::with_capacity(2);
        for decoder in ["speech", "noise"] {
            let mut h = trunk;
            for i in 1..=5 {
                let skip = enc[5 - i];
                let cat = g.concat_channels(h, skip)?;
                h = deconv_glu_forward(
                    g,
                    set,
                    bound,
                    &format!("ne_net.decoder_{decoder}.deconv_glu_{i}"),
                    cat,
                    2,
                )?;
            }
            let flat = g.reshape(h, &[t_len, self.config.input_bins])?;
            let lin = g.linear(
                flat,
                bound.var(set, &format!("ne_net.head_{decoder}.weight")),
                bound.var(set, &format!("ne_net.head_{decoder}.bias")),
            )?;
            masks.push(g.relu(lin));
        }
        Ok((masks[0], masks[1]))
    }
}

/// Second-stage network: (|Y|, |X_hat|, |N_hat|) stack in, per-frame T60 out.
pub struct ReNet<T> {
    pub config: ModelConfig,
    pub params: ParamSet<T>,
}

impl<T: Scalar> ReNet<T> {
    pub fn new(config: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut set = ParamSet::new();
        let w = config.re_width;
        for i in 1..=5 {
            let c_in = if i == 1 { 3 } else { w };
            let k_f = if i == 1 { 5 } else { 3 };
            add_conv_glu(
                &mut set,
                &format!("re_net.encoder.conv_glu_{i}"),
                c_in,
                w,
                2,
                k_f,
                &mut rng,
            );
        }
        let io = config.tcn_features(w);
        for group in 1..=config.tcn_groups {
            for unit in 1..=TCN_DILATIONS.len() {
                add_tcn_unit(
                    &mut set,
                    &format!("re_net.tcn.group_{group}.unit_{unit}"),
                    io,
                    w,
                    config.tcn_kernel,
                    &mut rng,
                );
            }
        }
        set.add(
            "re_net.head.weight",
            kaiming_uniform(&[1, io, 1], io, &mut rng),
        );
        set.add("re_net.head.bias", Tensor::zeros(&[1]));
        ReNet {
            config: config.clone(),
            params: set,
        }
    }

    /// Forward pass: `stack` is `[3, T, bins]`; returns per-frame estimates
    /// `[T]`, nonnegative via the ReLU head.
    pub fn forward(&self, g: &mut Graph<T>, bound: &Bound, stack: Var) -> Result<Var> {
        let shape = g.value(stack).shape.clone();
        if shape.len() != 3 || shape[0] != 3 || shape[2] != self.config.input_bins {
            return Err(Error::invalid(format!(
                "RE-NET input must be [3, T, {}], got {:?}",
                self.config.input_bins, shape
            )));
        }
        if !g.value(stack).all_finite() {
            return Err(Error::invalid("RE-NET input contains non-finite values"));
        }
        let t_len = shape[1];
        let set = &self.params;
        let enc = encoder_forward(g, set, bound, "re_net", stack)?;
        let flat = g.channels_to_frames(enc[4])?;
        let tcn = tcn_forward(g, set, bound, "re_net", self.config.tcn_groups, flat)?;
        let head = g.conv1d(
            tcn,
            bound.var(set, "re_net.head.weight"),
            bound.var(set, "re_net.head.bias"),
            1,
        )?;
        let pos = g.relu(head);
        g.reshape(pos, &[t_len])
    }
}

/// Eq.-style mask application on plain magnitudes (outside any graph):
/// `|X_hat| = M_speech |Y|`, `|N_hat| = M_noise |Y|`.
pub fn apply_masks(
    mag_y: &MagnitudeSpectrogram,
    m_speech: &MagnitudeSpectrogram,
    m_noise: &MagnitudeSpectrogram,
) -> Result<(MagnitudeSpectrogram, MagnitudeSpectrogram)> {
    if !mag_y.same_shape(m_speech) || !mag_y.same_shape(m_noise) {
        return Err(Error::invalid("apply_masks: shape mismatch"));
    }
    let mul = |m: &MagnitudeSpectrogram| MagnitudeSpectrogram {
        frames: mag_y.frames,
        bins: mag_y.bins,
        data: mag_y
            .data
            .iter()
            .zip(m.data.iter())
            .map(|(&y, &g)| y * g)
            .collect(),
    };
    Ok((mul(m_speech), mul(m_noise)))
}

/// Magnitude spectrogram (frame-major) to a `[1, T, K]` input tensor.
pub fn spectrogram_to_tensor<T: Scalar>(mag: &MagnitudeSpectrogram) -> Tensor<T> {
    Tensor {
        shape: vec![1, mag.frames, mag.bins],
        data: mag.data.iter().map(|&v| T::from_f64(v)).collect(),
    }
}

/// Both stages end to end on one utterance; returns the per-frame estimates.
/// The utterance-level estimate is the last element (the last frame has
/// seen the whole input).
pub fn two_stage_per_frame<T: Scalar>(
    ne: &NeNet<T>,
    re: &ReNet<T>,
    mag_y: &MagnitudeSpectrogram,
) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let ne_bound = ne.params.bind(&mut g);
    let re_bound = re.params.bind(&mut g);
    let y = g.constant(spectrogram_to_tensor::<T>(mag_y));
    let (m_speech, m_noise) = ne.forward(&mut g, &ne_bound, y)?;
    let y_flat = g.reshape(y, &[mag_y.frames, mag_y.bins])?;
    let mag_x = g.mul(m_speech, y_flat)?;
    let mag_n = g.mul(m_noise, y_flat)?;
    let y3 = g.reshape(y_flat, &[1, mag_y.frames, mag_y.bins])?;
    let x3 = g.reshape(mag_x, &[1, mag_y.frames, mag_y.bins])?;
    let n3 = g.reshape(mag_n, &[1, mag_y.frames, mag_y.bins])?;
    let yx = g.concat_channels(y3, x3)?;
    let stack = g.concat_channels(yx, n3)?;
    let t60 = re.forward(&mut g, &re_bound, stack)?;
    Ok(g.value(t60).data.iter().map(|&v| Scalar::to_f64(v)).collect())
}

/// Utterance-level estimate: the final frame of the per-frame output.
pub fn estimate_t60_utterance<T: Scalar>(
    ne: &NeNet<T>,
    re: &ReNet<T>,
    mag_y: &MagnitudeSpectrogram,
) -> Result<f64> {
    let frames = two_stage_per_frame(ne, re, mag_y)?;
    frames
        .last()
        .copied()
        .ok_or_else(|| Error::invalid("empty input"))
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"BT60CKPT";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    version: u32,
    config_hash: String,
    model: ModelConfig,
    params: Vec<CheckpointParam>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointParam {
    name: String,
    shape: Vec<usize>,
}

/// Write parameter sets as a JSON header plus raw little-endian f32 payload,
/// concatenated in header order.
pub fn save_checkpoint(
    path: &Path,
    model: &ModelConfig,
    sets: &[&ParamSet<f32>],
    config_hash: &str,
) -> Result<()> {
    let mut params = Vec::new();
    for set in sets {
        for (name, t) in set.names.iter().zip(set.tensors.iter()) {
            params.push(CheckpointParam {
                name: name.clone(),
                shape: t.shape.clone(),
            });
        }
    }
    let header = CheckpointHeader {
        version: CHECKPOINT_VERSION,
        config_hash: config_hash.to_string(),
        model: model.clone(),
        params,
    };
    let header_bytes = serde_json::to_vec(&header)?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(CHECKPOINT_MAGIC)?;
    f.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
    f.write_all(&header_bytes)?;
    for set in sets {
        for t in &set.tensors {
            for &v in &t.data {
                f.write_all(&v.to_le_bytes())?;
            }
        }
    }
    f.flush()?;
    Ok(())
}

/// Read a checkpoint back: model config, config hash, and named tensors in
/// file order.
pub fn load_checkpoint(path: &Path) -> Result<(ModelConfig, String, Vec<(String, Tensor<f32>)>)> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    f.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::invalid("not a checkpoint file"));
    }
    let mut len_bytes = [0u8; 8];
    f.read_exact(&mut len_bytes)?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    f.read_exact(&mut header_bytes)?;
    let header: CheckpointHeader = serde_json::from_slice(&header_bytes)?;
    if header.version != CHECKPOINT_VERSION {
        return Err(Error::invalid(format!(
            "checkpoint version {} unsupported",
            header.version
        )));
    }
    let mut tensors = Vec::with_capacity(header.params.len());
    for p in header.params {
        let n: usize = p.shape.iter().product();
        let mut bytes = vec![0u8; n * 4];
        f.read_exact(&mut bytes)?;
        let data = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        tensors.push((p.name, Tensor::from_vec(&p.shape, data)?));
    }
    Ok((header.model, header.config_hash, tensors))
}

/// Overwrite a parameter set from named checkpoint entries. Every parameter
/// must be present with a matching shape.
pub fn load_into(set: &mut ParamSet<f32>, entries: &[(String, Tensor<f32>)]) -> Result<()> {
    let by_name: BTreeMap<&str, &Tensor<f32>> =
        entries.iter().map(|(n, t)| (n.as_str(), t)).collect();
    for (name, tensor) in set.names.iter().zip(set.tensors.iter_mut()) {
        let src = by_name
            .get(name.as_str())
            .ok_or_else(|| Error::invalid(format!("checkpoint missing parameter {}", name)))?;
        if src.shape != tensor.shape {
            return Err(Error::invalid(format!(
                "checkpoint shape mismatch for {}: {:?} vs {:?}",
                name, src.shape, tensor.shape
            )));
        }
        *tensor = (*src).clone();
    }
    Ok(())
}
