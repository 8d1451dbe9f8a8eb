//! Minimal dense-tensor engine with reverse-mode differentiation: exactly
//! the layer set the estimation networks need, in f32 for training and f64
//! for gradient checking.

mod adam;
mod array;
pub mod check;
mod graph;

pub use adam::{AdamConfig, AdamState};
pub use array::{Scalar, Tensor};
pub use graph::{Graph, Var, NORM_EPS};

#[cfg(test)]
mod tests {
    use super::check::max_grad_error;
    use super::*;
    use crate::error::Result;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n: usize = shape.iter().product();
        // keep values away from relu/prelu kinks
        Tensor::from_vec(
            shape,
            (0..n)
                .map(|_| {
                    let v: f64 = rng.gen_range(0.15..1.0);
                    if rng.gen_bool(0.5) {
                        v
                    } else {
                        -v
                    }
                })
                .collect(),
        )
        .unwrap()
    }

    const EPS: f64 = 1e-5;
    const TOL: f64 = 1e-3;

    #[test]
    fn d_square_at_three_is_six() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::scalar(3.0));
        let y = g.mul(x, x).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap().scalar_value(), 6.0);
    }

    #[test]
    fn disconnected_parameter_gets_no_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::scalar(2.0));
        let unused = g.param(Tensor::scalar(5.0));
        let y = g.mul(x, x).unwrap();
        g.backward(y).unwrap();
        assert!(g.grad(unused).is_none());
    }

    #[test]
    fn backward_twice_rejected() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::scalar(1.0));
        let y = g.mul(x, x).unwrap();
        g.backward(y).unwrap();
        assert!(g.backward(y).is_err());
    }

    #[test]
    fn backward_needs_scalar() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::zeros(&[2, 2]));
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn add_sub_scale_mean_gradcheck() {
        let build = |g: &mut Graph<f64>, vs: &[Var]| -> Result<Var> {
            let s = g.add(vs[0], vs[1])?;
            let d = g.sub(s, vs[2])?;
            let sc = g.scale(d, 0.7);
            let m = g.mul(sc, vs[0])?;
            g.mean(m)
        };
        let inputs = vec![
            rand_tensor(&[3, 4], 1),
            rand_tensor(&[3, 4], 2),
            rand_tensor(&[3, 4], 3),
        ];
        assert!(max_grad_error(&build, &inputs, EPS).unwrap() < TOL);
    }

    #[test]
    fn glu_gate_gradcheck_and_limits() {
        // b = 0 halves a; large b passes a through.
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::from_vec(&[2], vec![1.0, -2.0]).unwrap());
        let zero = g.constant(Tensor::zeros(&[2]));
        let gate = g.sigmoid(zero);
        let y = g.mul(a, gate).unwrap();
        assert_eq!(g.value(y).data, vec![0.5, -1.0]);

        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::from_vec(&[1], vec![0.8]).unwrap());
        let big = g.constant(Tensor::from_vec(&[1], vec![50.0]).unwrap());
        let gate = g.sigmoid(big);
        let y = g.mul(a, gate).unwrap();
        assert!((g.value(y).data[0] - 0.8).abs() < 1e-12);

        let build = |g: &mut Graph<f64>, vs: &[Var]| -> Result<Var> {
            let gate = g.sigmoid(vs[1]);
            let y = g.mul(vs[0], gate)?;
            g.mean(y)
        };
        let inputs = vec![rand_tensor(&[4, 5], 4), rand_tensor(&[4, 5], 5)];
        assert!(max_grad_error(&build, &inputs, EPS).unwrap() < TOL);
    }

    #[test]
    fn relu_prelu_values_and_gradcheck() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_vec(&[2, 1], vec![-1.0, 2.0]).unwrap());
        let slope = g.constant(Tensor::from_vec(&[2], vec![0.25, 0.25]).unwrap());
        let y = g.prelu(x, slope).unwrap();
        assert_eq!(g.value(y).data, vec![-0.25, 2.0]);
        let r = g.relu(x);
        assert_eq!(g.value(r).data, vec![0.0, 2.0]);

        let build = |g: &mut Graph<f64>, vs: &[Var]| -> Result<Var> {
            let y = g.prelu(vs[0], vs[1])?;
            let m = g.mul(y, y)?;
            g.mean(m)
        };
        let inputs = vec![rand_tensor(&[3, 6], 6), rand_tensor(&[3], 7)];
        assert!(max_grad_error(&build, &inputs, EPS).unwrap() < TOL);
    }

    #[test]
    fn linear_matches_hand_matmul() {
        // x [2,3] * w [2,3]^T + b
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let w = g.constant(
            Tensor::from_vec(&[2, 3], vec![1.0, 0.0, -1.0, 0.5, 0.5, 0.5]).unwrap(),
        );
        let b = g.constant(Tensor::from_vec(&[2], vec![10.0, -10.0]).unwrap());
        let y = g.linear(x, w, b).unwrap();
        // row 0: [1-3+10, 0.5(1+2+3)-10] = [8, -7]
        // row 1: [4-6+10, 0.5(4+5+6)-10] = [8, -2.5]
        assert_eq!(g.value(y).data, vec![8.0, -7.0, 8.0, -2.5]);

        let build = |g: &mut Graph<f64>, vs: &[Var]| -> Result<Var> {
            let y = g.linear(vs[0], vs[1], vs[2])?;
            let sq = g.mul(y, y)?;
            g.mean(sq)
        };
        let inputs = vec![rand_tensor(&[4, 3], 8), rand_tensor(&[5, 3], 9), rand_tensor(&[5], 10)];
        assert!(max_grad_error(&build, &inputs, EPS).unwrap() < TOL);
    }

    /// Direct 6-loop convolution oracle matching conv2d's contract.
    fn conv2d_oracle(
        x: &Tensor<f64>,
        w: &Tensor<f64>,
        b: &Tensor<f64>,
        stride_f: usize,
    ) -> Tensor<f64> {
        let (c_in, t_len, f_in) = (x.shape[0], x.shape[1], x.shape[2]);
        let (c_out, k_t, k_f) = (w.shape[0], w.shape[2], w.shape[3]);
        let f_out = (f_in - k_f) / stride_f + 1;
        let mut out = Tensor::zeros(&[c_out, t_len, f_out]);
        for co in 0..c_out {
            for t in 0..t_len {
                for fo in 0..f_out {
                    let mut acc = b.data[co];
                    for ci in 0..c_in {
                        for dt in 0..k_t {
                            let src_t = (t + dt) as isize - (k_t as isize - 1);
                            if src_t < 0 {
                                continue;
                            }
                            for df in 0..k_f {
                                acc += w.data[((co * c_in + ci) * k_t + dt) * k_f + df]
                                    * x.data[(ci * t_len + src_t as usize) * f_in
                                        + fo * stride_f
                                        + df];
                            }
                        }
                    }
                    out.data[(co * t_len + t) * f_out + fo] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv2d_matches_direct_oracle() {
        let x = rand_tensor(&[4, 6, 10], 11);
        let w = rand_tensor(&[3, 4, 2, 3], 12);
        let b = rand_tensor(&[3], 13);
        let expect = conv2d_oracle(&x, &w, &b, 2);
        let mut g = Graph::<f64>::new();
        let (xv, wv, bv) = (g.constant(x), g.constant(w), g.constant(b));
        let y = g.conv2d(xv, wv, bv, 2).unwrap();
        assert_eq!(g.value(y).shape, expect.shape);
        for (a, e) in g.value(y).data.iter().zip(expect.data.iter()) {
            assert!((a - e).abs() < 1e-10);
        }
    }

    #[test]
    fn conv2d_identity_kernel_passthrough() {
        let x = rand_tensor(&[1, 5, 7], 14);
        let mut g = Graph::<f64>::new();
        let xv = g.constant(x.clone());
        let w = g.constant(Tensor::from_vec(&[1, 1, 1, 1], vec![1.0]).unwrap());
        let b = g.constant(Tensor::zeros(&[1]));
        let y = g.conv2d(xv, w, b, 1).unwrap();
        assert_eq!(g.value(y).data, x.data);
    }

    #[test]
    fn conv2d_frequency_ladder() {
        // 161 -> 79 with k_f = 5, stride 2
        let x = rand_tensor(&[1, 2, 161], 15);
        let mut g = Graph::<f64>::new();
        let xv = g.constant(x);
        let w = g.constant(rand_tensor(&[1, 1, 2, 5], 16));
        let b = g.constant(Tensor::zeros(&[1]));
        let y = g.conv2d(xv, w, b, 2).unwrap();
        assert_eq!(g.value(y).shape, vec![1, 2, 79]);
    }

    #[test]
    fn conv2d_gradcheck() {
        let build = |g: &mut Graph<f64>, vs: &[Var]| -> Result<Var> {
            let y = g.conv2d(vs[0], vs[1], vs[2], 2)?;
            let sq = g.mul(y, y)?;
            g.mean(sq)
        };
        let inputs = vec![
            rand_tensor(&[2, 3, 7], 17),
            rand_tensor(&[2, 2, 2, 3], 18),
            rand_tensor(&[2], 19),
        ];
        assert!(max_grad_error(&build, &inputs, EPS).unwrap() < TOL);
    }

    #[test]
    fn deconv2d_shape_ladder() {
        // 4 -> 9 (k_f 3), 79 -> 161 (k_f 5)
        let mut g = Graph::<f64>::new();
        let x = g.constant(rand_tensor(&[2, 3, 4], 20));
        let w = g.constant(rand_tensor(&[2, 1, 2, 3], 21));
        let b = g.constant(Tensor::zeros(&[1]));
        let y = g.deconv2d(x, w, b, 2).unwrap();
        assert_eq!(g.value(y).shape, vec![1, 3, 9]);

        let x = g.constant(rand_tensor(&[1, 2, 79], 22));
        let w = g.constant(rand_tensor(&[1, 1, 2, 5], 23));
        let y = g.deconv2d(x, w, b, 2).unwrap();
        assert_eq!(g.value(y).shape, vec![1, 2, 161]);
    }

    #[test]
    fn deconv2d_delta_reproduces_kernel() {
        // единственный impulse input lights the kernel at stride positions
        let mut x = Tensor::<f64>::zeros(&[1, 3, 4]);
        x.data[0 * 12 + 0 * 4 + 1] = 1.0; // t=0, f=1
        let mut g = Graph::<f64>::new();
        let xv = g.constant(x);
        let w = g.constant(Tensor::from_vec(&[1, 1, 1, 3], vec![0.5, 1.0, -0.5]).unwrap());
        let b = g.constant(Tensor::zeros(&[1]));
        let y = g.deconv2d(xv, w, b, 2).unwrap();
        // f_out = 3*2+3-2 = (4-1)*2+3 = 9; kernel lands at f = 2..5
        assert_eq!(g.value(y).shape, vec![1, 3, 9]);
        let frame0 = &g.value(y).data[0..9];
        assert_eq!(frame0, &[0.0, 0.0, 0.5, 1.0, -0.5, 0.0, 0.0, 0.0, 0.0]);
        // nothing in later frames from a t=0 impulse with k_t = 1
        assert!(g.value(y).data[9..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_deconv_adjoint_identity() {
        // With a time-size-1 kernel the transposed convolution is the exact
        // adjoint of the strided convolution: <conv(x), y> = <x, deconv(y)>.
        // The same weight buffer serves both layouts ([C_out, C_in, 1, k_f]
        // vs [C_in(=C_out), C_out(=C_in), 1, k_f]).
        let c_in = 3;
        let c_out = 2;
        let k_f = 3;
        let x = rand_tensor(&[c_in, 4, 9], 24);
        let y = rand_tensor(&[c_out, 4, 4], 25); // f_out = (9-3)/2+1 = 4
        let w_data = rand_tensor(&[c_out * c_in * k_f], 26).data;

        let mut g = Graph::<f64>::new();
        let xv = g.constant(x.clone());
        let w_conv = g.constant(Tensor::from_vec(&[c_out, c_in, 1, k_f], w_data.clone()).unwrap());
        let zb = g.constant(Tensor::zeros(&[c_out]));
        let cx = g.conv2d(xv, w_conv, zb, 2).unwrap();
        let lhs: f64 = g
            .value(cx)
            .data
            .iter()
            .zip(y.data.iter())
            .map(|(a, b)| a * b)
            .sum();

        let yv = g.constant(y);
        let w_deconv = g.constant(Tensor::from_vec(&[c_out, c_in, 1, k_f], w_data).unwrap());
        let zb_in = g.constant(Tensor::zeros(&[c_in]));
        let dy = g.deconv2d(yv, w_deconv, zb_in, 2).unwrap();
        let rhs: f64 = g
            .value(dy)
            .data
            .iter()
            .zip(x.data.iter())
            .map(|(a, b)| a * b)
            .sum();

        assert!((lhs - rhs).abs() < 1e-10, "{} vs {}", lhs, rhs);
    }

    #[test]
    fn deconv2d_gradcheck() {
        let build = |g: &mut Graph<f64>, vs: &[Var]| -> Result<Var> {
            let y = g.deconv2d(vs[0], vs[1], vs[2], 2)?;
            let sq = g.mul(y, y)?;
            g.mean(sq)
        };
        let inputs = vec![
            rand_tensor(&[2, 3, 4], 27),
            rand_tensor(&[2, 3, 2, 3], 28),
            rand_tensor(&[3], 29),
        ];
        assert!(max_grad_error(&build, &inputs, EPS).unwrap() < TOL);
    }

    #[test]
    fn conv1d_causal_and_gradcheck() {
        // an impulse spreads only forward in time
        let mut x = Tensor::<f64>::zeros(&[1, 8]);
        x.data[3] = 1.0;
        let mut g = Graph::<f64>::new();
        let xv = g.constant(x);
        let w = g.constant(Tensor::from_vec(&[1, 1, 3], vec![0.3, 0.2, 0.1]).unwrap());
        let b = g.constant(Tensor::zeros(&[1]));
        let y = g.conv1d(xv, w, b, 2).unwrap();
        // k=3, d=2: out[t] = 0.1 x[t] + 0.2 x[t-2] + 0.3 x[t-4]
        let expect = [0.0, 0.0, 0.0, 0.1, 0.0, 0.2, 0.0, 0.3];
        for (a, e) in g.value(y).data.iter().zip(expect.iter()) {
            assert!((a - e).abs() < 1e-12);
        }

        let build = |g: &mut Graph<f64>, vs: &[Var]| -> Result<Var> {
            let y = g.conv1d(vs[0], vs[1], vs[2], 2)?;
            let sq = g.mul(y, y)?;
            g.mean(sq)
        };
        let inputs = vec![
            rand_tensor(&[3, 9], 30),
            rand_tensor(&[2, 3, 3], 31),
            rand_tensor(&[2], 32),
        ];
        assert!(max_grad_error(&build, &inputs, EPS).unwrap() < TOL);
    }

    #[test]
    fn instance_norm_standardizes_and_gradchecks() {
        let x = rand_tensor(&[2, 4, 5], 33);
        let mut g = Graph::<f64>::new();
        let xv = g.constant(x.clone());
        let gamma = g.constant(Tensor::filled(&[2], 1.0));
        let beta = g.constant(Tensor::zeros(&[2]));
        let y = g.instance_norm(xv, gamma, beta).unwrap();
        for c in 0..2 {
            let plane = &g.value(y).data[c * 20..(c + 1) * 20];
            let mean: f64 = plane.iter().sum::<f64>() / 20.0;
            let var: f64 = plane.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 20.0;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-3);
        }

        // scale invariance pre-affine
        let mut g2 = Graph::<f64>::new();
        let scaled = Tensor::from_vec(&[2, 4, 5], x.data.iter().map(|v| v * 7.0).collect()).unwrap();
        let xv2 = g2.constant(scaled);
        let gamma2 = g2.constant(Tensor::filled(&[2], 1.0));
        let beta2 = g2.constant(Tensor::zeros(&[2]));
        let y2 = g2.instance_norm(xv2, gamma2, beta2).unwrap();
        // invariance is exact up to the epsilon in the denominator
        for (a, b) in g.value(y).data.iter().zip(g2.value(y2).data.iter()) {
            assert!((a - b).abs() < 1e-4);
        }

        let build = |g: &mut Graph<f64>, vs: &[Var]| -> Result<Var> {
            let y = g.instance_norm(vs[0], vs[1], vs[2])?;
            let w = g.mul(y, y)?;
            let z = g.add(w, y)?;
            g.mean(z)
        };
        let inputs = vec![rand_tensor(&[2, 3, 4], 34), rand_tensor(&[2], 35), rand_tensor(&[2], 36)];
        assert!(max_grad_error(&build, &inputs, EPS).unwrap() < TOL);
    }

    #[test]
    fn instance_norm_rejects_single_element_plane() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(&[3, 1, 1]));
        let gamma = g.constant(Tensor::filled(&[3], 1.0));
        let beta = g.constant(Tensor::zeros(&[3]));
        assert!(g.instance_norm(x, gamma, beta).is_err());
    }

    #[test]
    fn cumulative_norm_is_causal_and_gradchecks() {
        let x = rand_tensor(&[2, 6, 3], 37);
        let run = |input: &Tensor<f64>| -> Vec<f64> {
            let mut g = Graph::<f64>::new();
            let xv = g.constant(input.clone());
            let gamma = g.constant(Tensor::filled(&[2], 1.2));
            let beta = g.constant(Tensor::filled(&[2], 0.1));
            let y = g.cumulative_norm(xv, gamma, beta).unwrap();
            g.value(y).data.clone()
        };
        let base = run(&x);
        // perturb frame 4: frames 0..4 must be untouched
        let mut pert = x.clone();
        pert.data[1 * 18 + 4 * 3 + 2] += 0.5;
        let out = run(&pert);
        for c in 0..2 {
            for t in 0..4 {
                for f in 0..3 {
                    let i = c * 18 + t * 3 + f;
                    assert_eq!(base[i], out[i], "frame {} changed", t);
                }
            }
        }

        let build = |g: &mut Graph<f64>, vs: &[Var]| -> Result<Var> {
            let y = g.cumulative_norm(vs[0], vs[1], vs[2])?;
            let w = g.mul(y, y)?;
            let z = g.add(w, y)?;
            g.mean(z)
        };
        let inputs = vec![rand_tensor(&[2, 5, 3], 38), rand_tensor(&[2], 39), rand_tensor(&[2], 40)];
        assert!(max_grad_error(&build, &inputs, EPS).unwrap() < TOL);
    }

    #[test]
    fn concat_reshape_permute_gradcheck() {
        let build = |g: &mut Graph<f64>, vs: &[Var]| -> Result<Var> {
            let cat = g.concat_channels(vs[0], vs[1])?;
            let flat = g.channels_to_frames(cat)?;
            let back = g.frames_to_channels(flat, 5)?;
            let r = g.reshape(back, &[5, 12])?;
            let sq = g.mul(r, r)?;
            g.mean(sq)
        };
        let inputs = vec![rand_tensor(&[2, 3, 4], 41), rand_tensor(&[3, 3, 4], 42)];
        assert!(max_grad_error(&build, &inputs, EPS).unwrap() < TOL);
    }

    #[test]
    fn channels_to_frames_layout() {
        // [C=2, T=2, F=2]: feature index c*F+f per frame column
        let x = Tensor::from_vec(&[2, 2, 2], (0..8).map(|v| v as f64).collect()).unwrap();
        let mut g = Graph::<f64>::new();
        let xv = g.constant(x);
        let y = g.channels_to_frames(xv).unwrap();
        assert_eq!(g.value(y).shape, vec![4, 2]);
        // y[(c*F+f), t] = x[c, t, f]
        assert_eq!(g.value(y).data, vec![0.0, 2.0, 1.0, 3.0, 4.0, 6.0, 5.0, 7.0]);
        let back = g.frames_to_channels(y, 2).unwrap();
        assert_eq!(g.value(back).data, (0..8).map(|v| v as f64).collect::<Vec<_>>());
    }

    #[test]
    fn adam_reference_first_step() {
        // g = 1 everywhere: bias-corrected first step is lr / (1 + eps).
        let mut params = vec![Tensor::<f64>::filled(&[3], 1.0)];
        let grads = vec![Tensor::<f64>::filled(&[3], 1.0)];
        let mut state = AdamState::new(&[vec![3]], AdamConfig::default());
        state.step(&mut params, &grads, 0.001).unwrap();
        let expect = 1.0 - 0.001 * 1.0 / (1.0 + 1e-8);
        for &v in &params[0].data {
            assert!((v - expect).abs() < 1e-12, "{} vs {}", v, expect);
        }
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut params = vec![Tensor::<f64>::filled(&[2], 0.7)];
        let grads = vec![Tensor::<f64>::zeros(&[2])];
        let mut state = AdamState::new(&[vec![2]], AdamConfig::default());
        state.step(&mut params, &grads, 0.001).unwrap();
        // m = v = 0 after update with zero grad: step is exactly zero
        assert_eq!(params[0].data, vec![0.7, 0.7]);
    }

    #[test]
    fn adam_rejects_nan_gradient() {
        let mut params = vec![Tensor::<f64>::zeros(&[1])];
        let grads = vec![Tensor::<f64>::filled(&[1], f64::NAN)];
        let mut state = AdamState::new(&[vec![1]], AdamConfig::default());
        assert!(matches!(
            state.step(&mut params, &grads, 0.001),
            Err(crate::Error::Diverged(_))
        ));
    }

    #[test]
    fn adam_deterministic_across_runs() {
        let run = || -> Vec<f32> {
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            let mut params = vec![Tensor::<f32>::filled(&[8], 0.5)];
            let mut state = AdamState::new(&[vec![8]], AdamConfig::default());
            for _ in 0..100 {
                let grads = vec![Tensor::from_vec(
                    &[8],
                    (0..8).map(|_| rng.gen_range(-1.0f32..1.0)).collect(),
                )
                .unwrap()];
                state.step(&mut params, &grads, 0.01).unwrap();
            }
            params[0].data.clone()
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
    }
}
