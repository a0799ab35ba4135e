//! Second-tier classifier: conv → pool → conv → pool → locally-connected
//! → fully-connected → softmax, with ReLU activations, DropConnect on the
//! fully-connected layers and SGD-with-momentum training.

mod layers;
mod net;
mod params;
mod spec;
mod train;

pub use net::{Network, Pass};
pub use params::{init_params, param_shapes, Gradients, NetworkParams, ParamTensor};
pub use spec::{ConvSpec, DropInference, LocalSpec, NetworkSpec, Phase, PoolSpec, TrainSchedule};
pub use train::{train, train_observations, TrainOutcome};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use alloc::vec;
    use alloc::vec::Vec;
    use rand::Rng as _;

    fn single_conv(input: [usize; 4], filters: usize, kernel: usize, padding: usize) -> NetworkSpec {
        NetworkSpec {
            input,
            conv: vec![ConvSpec { filters, kernel, stride: 1, padding, pool: None }],
            locally_connected: vec![],
            fully_connected: vec![],
            n_classes: 2,
            dropconnect_rate: 0.0,
            dropconnect_inference: DropInference::MeanField,
            init_sigma: 0.3,
            crop_px: None,
        }
    }

    fn random_input(n: usize, seed: u64) -> Vec<f64> {
        let mut r = rng::rng_for(seed, 0, 0);
        (0..n).map(|_| r.random_range(-1.0..1.0)).collect()
    }

    fn tiny() -> NetworkSpec {
        NetworkSpec {
            input: [3, 1, 8, 8],
            conv: vec![ConvSpec {
                filters: 4,
                kernel: 3,
                stride: 1,
                padding: 1,
                pool: Some(PoolSpec { window: 3, stride: 2 }),
            }],
            locally_connected: vec![LocalSpec { filters: 4, kernel: 3, padding: 1 }],
            fully_connected: vec![16],
            n_classes: 2,
            dropconnect_rate: 0.5,
            dropconnect_inference: DropInference::MeanField,
            init_sigma: 0.3,
            crop_px: None,
        }
    }

    #[test]
    fn plan_shapes_standard() {
        let plan = layers::Plan::build(&NetworkSpec::standard([3, 1, 32, 32])).unwrap();
        let conv_out: Vec<[usize; 4]> = plan
            .layers
            .iter()
            .filter_map(|l| match l {
                layers::Layer::Conv(w) | layers::Layer::Local(w) => Some(w.out_shape),
                layers::Layer::Pool(p) => Some(p.out_shape),
                _ => None,
            })
            .collect();
        assert_eq!(
            conv_out,
            vec![[64, 1, 32, 32], [64, 1, 15, 15], [64, 1, 15, 15], [64, 1, 7, 7], [32, 1, 5, 5], [32, 1, 3, 3]]
        );
        assert_eq!(*plan.sizes.last().unwrap(), 2);
    }

    #[test]
    fn volumetric_plan_uses_cubic_kernels() {
        let mut spec = NetworkSpec::standard([1, 16, 16, 16]);
        spec.locally_connected.iter_mut().for_each(|l| l.padding = 1);
        let plan = layers::Plan::build(&spec).unwrap();
        match &plan.layers[0] {
            layers::Layer::Conv(w) => {
                assert_eq!(w.taps, 125);
                assert_eq!(w.out_shape, [64, 16, 16, 16]);
            }
            other => panic!("unexpected first layer {other:?}"),
        }
    }

    #[test]
    fn mismatched_shapes_rejected() {
        let mut spec = tiny();
        spec.locally_connected[0].padding = 0;
        spec.locally_connected.push(LocalSpec { filters: 2, kernel: 3, padding: 0 });
        assert!(spec.validate().is_err());
        let mut spec = tiny();
        spec.n_classes = 3;
        assert!(spec.validate().is_err());
        let net = Network::new(&tiny()).unwrap();
        let params = init_params(&tiny(), 1).unwrap();
        assert!(net.predict(&params, &[0.0; 10]).is_err());
    }

    #[test]
    fn conv_matches_triple_loop() {
        let spec = single_conv([1, 1, 6, 6], 1, 3, 0);
        let params = init_params(&spec, 3).unwrap();
        let plan = layers::Plan::build(&spec).unwrap();
        let layers::Layer::Conv(win) = &plan.layers[0] else { panic!() };
        let x = random_input(36, 1);
        let mut col = vec![0.0; win.taps * win.positions];
        layers::im2col(win, &x, &mut col);
        let mut out = vec![0.0; 16];
        layers::conv_forward(win, &params.tensors[0].weights, &[0.25], &col, &mut out);
        let k = &params.tensors[0].weights;
        for oy in 0..4 {
            for ox in 0..4 {
                let mut acc = 0.25;
                for ky in 0..3 {
                    for kx in 0..3 {
                        acc += k[ky * 3 + kx] * x[(oy + ky) * 6 + ox + kx];
                    }
                }
                assert!((out[oy * 4 + ox] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn max_pool_matches_window_max() {
        let spec = NetworkSpec {
            conv: vec![ConvSpec {
                filters: 2,
                kernel: 1,
                stride: 1,
                padding: 0,
                pool: Some(PoolSpec { window: 3, stride: 2 }),
            }],
            ..single_conv([2, 1, 9, 9], 2, 1, 0)
        };
        let plan = layers::Plan::build(&spec).unwrap();
        let layers::Layer::Pool(pw) = &plan.layers[2] else { panic!() };
        assert_eq!(pw.out_shape, [2, 1, 4, 4]);
        let x = random_input(162, 2);
        let mut out = vec![0.0; 32];
        let mut am = vec![0u32; 32];
        layers::pool_forward(pw, &x, &mut out, &mut am);
        for c in 0..2 {
            for oy in 0..4 {
                for ox in 0..4 {
                    let mut m = f64::NEG_INFINITY;
                    for dy in 0..3 {
                        for dx in 0..3 {
                            m = m.max(x[c * 81 + (2 * oy + dy) * 9 + 2 * ox + dx]);
                        }
                    }
                    assert_eq!(out[c * 16 + oy * 4 + ox], m);
                }
            }
        }
    }

    #[test]
    fn pool_backward_routes_to_first_max() {
        let spec = NetworkSpec {
            conv: vec![ConvSpec {
                filters: 1,
                kernel: 1,
                stride: 1,
                padding: 0,
                pool: Some(PoolSpec { window: 3, stride: 2 }),
            }],
            ..single_conv([1, 1, 3, 3], 1, 1, 0)
        };
        let plan = layers::Plan::build(&spec).unwrap();
        let layers::Layer::Pool(pw) = &plan.layers[2] else { panic!() };
        let x = vec![0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0];
        let (mut out, mut am) = (vec![0.0], vec![0u32]);
        layers::pool_forward(pw, &x, &mut out, &mut am);
        let mut dx = vec![9.0; 9];
        layers::pool_backward(&am, &[2.0], &mut dx);
        assert_eq!(dx, vec![0.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn tied_local_layer_equals_conv() {
        let conv = single_conv([3, 1, 7, 7], 4, 3, 1);
        let local = NetworkSpec {
            conv: vec![],
            locally_connected: vec![LocalSpec { filters: 4, kernel: 3, padding: 1 }],
            ..conv.clone()
        };
        let plan_c = layers::Plan::build(&conv).unwrap();
        let plan_l = layers::Plan::build(&local).unwrap();
        let (layers::Layer::Conv(wc), layers::Layer::Local(wl)) = (&plan_c.layers[0], &plan_l.layers[0]) else {
            panic!()
        };
        let pc = init_params(&conv, 5).unwrap();
        let (w, b) = (&pc.tensors[0].weights, &pc.tensors[0].bias);
        let pos = wl.positions;
        let mut wt = Vec::new();
        let mut bt = Vec::new();
        for f in 0..4 {
            for k in 0..wl.taps {
                wt.extend(core::iter::repeat_n(w[f * wl.taps + k], pos));
            }
            bt.extend(core::iter::repeat_n(b[f] + 0.1 * f as f64, pos));
        }
        let bc: Vec<f64> = (0..4).map(|f| b[f] + 0.1 * f as f64).collect();
        let x = random_input(147, 9);
        let mut col = vec![0.0; wc.taps * wc.positions];
        layers::im2col(wc, &x, &mut col);
        let (mut oc, mut ol) = (vec![0.0; 196], vec![0.0; 196]);
        layers::conv_forward(wc, w, &bc, &col, &mut oc);
        layers::local_forward(wl, &wt, &bt, &col, &mut ol);
        for (a, b) in oc.iter().zip(&ol) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_rows_are_distributions() {
        let spec = tiny();
        let net = Network::new(&spec).unwrap();
        let params = init_params(&spec, 2).unwrap();
        let xs: Vec<Vec<f64>> = (0..5).map(|s| random_input(192, s)).collect();
        let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let mut r = rng::rng_for(0, 1, 2);
        for pass in [Pass::Test, Pass::Train(&mut r)] {
            for row in net.forward(&params, &refs, pass).unwrap() {
                assert!((row[0] + row[1] - 1.0).abs() < 1e-6);
                assert!(row.iter().all(|p| (0.0..=1.0).contains(p)));
            }
        }
        assert_eq!(net.predict(&params, &xs[0]).unwrap(), net.forward(&params, &refs[..1], Pass::Test).unwrap()[0][1]);
    }

    #[test]
    fn zero_params_give_uniform_output() {
        let spec = tiny();
        let net = Network::new(&spec).unwrap();
        let params = NetworkParams::zeros(&spec).unwrap();
        let x = random_input(192, 4);
        assert_eq!(net.predict(&params, &x).unwrap(), 0.5);
        let (loss, _) = net.loss_and_gradients(&params, &[&x, &x], &[0, 1], Pass::Test, 0.0).unwrap();
        assert!((loss - core::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn rate_zero_train_equals_test() {
        let spec = NetworkSpec { dropconnect_rate: 0.0, ..tiny() };
        let net = Network::new(&spec).unwrap();
        let params = init_params(&spec, 8).unwrap();
        let x = random_input(192, 5);
        let mut r = rng::rng_for(1, 1, 1);
        let train = net.forward(&params, &[&x], Pass::Train(&mut r)).unwrap();
        let test = net.forward(&params, &[&x], Pass::Test).unwrap();
        assert_eq!(train, test);
    }

    #[test]
    fn sampled_inference_is_deterministic() {
        let spec = NetworkSpec { dropconnect_inference: DropInference::Sampled { samples: 8, seed: 3 }, ..tiny() };
        let net = Network::new(&spec).unwrap();
        let params = init_params(&spec, 8).unwrap();
        let x = random_input(192, 5);
        let a = net.predict(&params, &x).unwrap();
        assert_eq!(a, net.predict(&params, &x).unwrap());
        assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn init_statistics() {
        let spec = NetworkSpec {
            conv: vec![],
            fully_connected: vec![5000],
            init_sigma: 0.01,
            ..single_conv([1, 1, 2, 1], 1, 1, 0)
        };
        let a = init_params(&spec, 42).unwrap();
        assert_eq!(a, init_params(&spec, 42).unwrap());
        let w = &a.tensors[0].weights;
        assert_eq!(w.len(), 10_000);
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let sd = libm::sqrt(w.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / w.len() as f64);
        assert!((sd - 0.01).abs() < 0.05 * 0.01, "sd {sd}");
        assert!(a.tensors.iter().all(|t| t.bias.iter().all(|&b| b == 0.0)));

        let zero = init_params(&NetworkSpec { init_sigma: 0.0, ..spec }, 42).unwrap();
        assert!(zero.values().all(|&v| v == 0.0));
    }

    #[test]
    fn crop_shrinks_the_first_layer() {
        let spec = NetworkSpec { crop_px: Some(6), ..tiny() };
        assert_eq!(spec.effective_input(), [3, 1, 6, 6]);
        let net = Network::new(&spec).unwrap();
        let params = init_params(&spec, 1).unwrap();
        let x = random_input(192, 1);
        assert!((0.0..=1.0).contains(&net.predict(&params, &x).unwrap()));
        assert!(NetworkSpec { crop_px: Some(9), ..tiny() }.validate().is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let spec = tiny();
        let net = Network::new(&spec).unwrap();
        let params = init_params(&spec, 11).unwrap();
        let xs: Vec<Vec<f64>> = (0..3).map(|s| random_input(192, 100 + s)).collect();
        let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let labels = [1, 0, 1];
        let wd = 1e-3;
        let loss_at = |p: &NetworkParams| {
            let mut r = rng::rng_for(5, 5, 5);
            net.loss_and_gradients(p, &refs, &labels, Pass::Train(&mut r), wd).unwrap()
        };
        let (_, grads) = loss_at(&params);
        let analytic: Vec<f64> = grads.iter().flat_map(|t| t.weights.iter().chain(&t.bias).copied()).collect();
        let eps = 1e-4;
        let mut probe = params.clone();
        for (i, &a) in analytic.iter().enumerate() {
            let orig = *probe.values_mut().nth(i).unwrap();
            *probe.values_mut().nth(i).unwrap() = orig + eps;
            let up = loss_at(&probe).0;
            *probe.values_mut().nth(i).unwrap() = orig - eps;
            let down = loss_at(&probe).0;
            *probe.values_mut().nth(i).unwrap() = orig;
            let numeric = (up - down) / (2.0 * eps);
            let denom = a.abs().max(numeric.abs()).max(1e-6);
            assert!((a - numeric).abs() / denom < 1e-4, "param {i}: {} vs {numeric}", a);
        }
    }

    #[test]
    fn learning_rate_zero_leaves_params() {
        let spec = tiny();
        let net = Network::new(&spec).unwrap();
        let p0 = init_params(&spec, 1).unwrap();
        let xs: Vec<Vec<f64>> = (0..4).map(|s| random_input(192, s)).collect();
        let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let sched = TrainSchedule { phases: vec![Phase::new(2, 2)], learning_rate: 0.0, ..TrainSchedule::default() };
        let out = train(&net, p0.clone(), &refs, &[0, 1, 0, 1], &sched).unwrap();
        assert_eq!(out.params, p0);
        assert_eq!(out.loss_trace.len(), 2);
    }

    #[test]
    fn divergence_is_reported() {
        let spec = NetworkSpec { init_sigma: 1.0, dropconnect_rate: 0.0, ..tiny() };
        let net = Network::new(&spec).unwrap();
        let p0 = init_params(&spec, 1).unwrap();
        let xs: Vec<Vec<f64>> = (0..4).map(|s| random_input(192, s).iter().map(|v| v * 1e3).collect()).collect();
        let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let sched = TrainSchedule { phases: vec![Phase::new(50, 2)], learning_rate: 1e3, ..TrainSchedule::default() };
        assert!(matches!(train(&net, p0, &refs, &[0, 1, 0, 1], &sched), Err(crate::Error::TrainingDiverged { .. })));
    }
}
