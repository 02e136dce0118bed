use mixssm_core::fusion::{
    fuse_sum, pool_global, selective_combine, strategy_softmax, Pooling, SelectiveConfig, SelectiveModule,
};
use mixssm_core::nn::{Ctx, Init, Module};
use mixssm_core::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], scale: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

fn randomized_module(seed: u64, channels: usize, n: usize, pooling: Pooling, kernel: usize) -> SelectiveModule<f64> {
    let cfg = SelectiveConfig {
        pooling,
        kernel,
        ..SelectiveConfig::default()
    };
    let mut m = SelectiveModule::new(&mut Init::new(seed), channels, n, &cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 77);
    m.visit_mut("", &mut |_, t| {
        let v = t.data().iter().map(|x| x + rng.random_range(-2.0..2.0)).collect();
        *t = Tensor::param(t.shape(), v).unwrap();
    });
    m
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn weights_sum_to_one_and_output_is_convex(
        seed in 0u64..10_000,
        n in 1usize..=4,
        h in 1usize..=4,
        w in 1usize..=4,
        pool in 0usize..4,
        kernel in prop::sample::select(vec![1usize, 3, 5]),
    ) {
        let c = 8;
        let m = randomized_module(seed, c, n, Pooling::ALL[pool], kernel);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let branches: Vec<_> = (0..n).map(|_| random(&[h, w, c], 5.0, &mut rng)).collect();
        let ctx = if seed % 2 == 0 { Ctx::eval() } else { Ctx::train(seed) };
        let weights = m.weights_for(&branches, &ctx).unwrap();
        for row in weights.data().chunks(n) {
            let s: f64 = row.iter().sum();
            prop_assert!((s - 1.0).abs() <= 1e-6);
            prop_assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
        let out = m.forward(&branches, &ctx).unwrap();
        for (i, v) in out.data().iter().enumerate() {
            let vals: Vec<f64> = branches.iter().map(|b| b.data()[i]).collect();
            let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(*v >= lo - 1e-12 && *v <= hi + 1e-12);
        }
    }

    #[test]
    fn fuse_sum_is_order_independent(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b: Vec<_> = (0..3).map(|_| random(&[2, 3, 4], 1.0, &mut rng)).collect();
        let x = fuse_sum(&b).unwrap();
        let y = fuse_sum(&[b[2].clone(), b[0].clone(), b[1].clone()]).unwrap();
        for (p, q) in x.data().iter().zip(y.data()) {
            prop_assert!((p - q).abs() < 1e-12);
        }
    }
}

#[test]
fn single_branch_weights_are_exactly_one() {
    let m = randomized_module(3, 8, 1, Pooling::Average, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let v = random(&[3, 3, 8], 1.0, &mut rng);
    let w = m.weights_for(std::slice::from_ref(&v), &Ctx::eval()).unwrap();
    assert!(w.data().iter().all(|&p| p == 1.0));
    assert_eq!(m.forward(std::slice::from_ref(&v), &Ctx::eval()).unwrap().data(), v.data());
}

#[test]
fn stochastic_expectation_on_uniform_map_equals_average() {
    let f = Tensor::<f64>::full(&[3, 3, 2], 1.5).unwrap();
    let s = pool_global(&f, Pooling::Stochastic, &Ctx::eval()).unwrap();
    let a = pool_global(&f, Pooling::Average, &Ctx::eval()).unwrap();
    for (x, y) in s.data().iter().zip(a.data()) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn weights_match_two_matmul_softmax_oracle() {
    let (c, n) = (8, 4);
    let m = randomized_module(5, c, n, Pooling::Average, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let g = random(&[c], 1.0, &mut rng);
    let got = m.selective_weights(&g).unwrap();

    let params: std::collections::HashMap<String, Vec<f64>> =
        m.named_params().into_iter().map(|(k, t)| (k, t.to_vec())).collect();
    let hidden = c / 4;
    let (w1, b1, w2, b2) = (&params["fc1.weight"], &params["fc1.bias"], &params["fc2.weight"], &params["fc2.bias"]);
    let gelu = |x: f64| 0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh());
    let h: Vec<f64> = (0..hidden)
        .map(|j| gelu(b1[j] + (0..c).map(|i| g.data()[i] * w1[i * hidden + j]).sum::<f64>()))
        .collect();
    let logits: Vec<f64> = (0..c * n)
        .map(|o| b2[o] + (0..hidden).map(|j| h[j] * w2[j * c * n + o]).sum::<f64>())
        .collect();
    for ch in 0..c {
        let row = &logits[ch * n..(ch + 1) * n];
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - mx).exp()).sum();
        for k in 0..n {
            let expect = (row[k] - mx).exp() / z;
            assert!((got.data()[ch * n + k] - expect).abs() < 1e-6);
        }
    }
}

#[test]
fn permuting_branches_weight_columns_and_mlp_blocks_commutes() {
    let (c, n) = (8, 3);
    let m = randomized_module(11, c, n, Pooling::Average, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let b: Vec<_> = (0..n).map(|_| random(&[2, 2, c], 1.0, &mut rng)).collect();
    let out = m.forward(&b, &Ctx::eval()).unwrap();

    // strategy k -> position perm[k]
    let perm = [2usize, 0, 1];
    let mut permuted = randomized_module(11, c, n, Pooling::Average, 3);
    permuted.visit_mut("", &mut |name, t| {
        if name == "fc2.weight" || name == "fc2.bias" {
            let cols = c * n;
            let rows = t.numel() / cols;
            let src = t.to_vec();
            let mut dst = src.clone();
            for r in 0..rows {
                for ch in 0..c {
                    for k in 0..n {
                        dst[r * cols + ch * n + perm[k]] = src[r * cols + ch * n + k];
                    }
                }
            }
            *t = Tensor::param(t.shape(), dst).unwrap();
        }
    });
    let mut pb = b.clone();
    for k in 0..n {
        pb[perm[k]] = b[k].clone();
    }
    let out2 = permuted.forward(&pb, &Ctx::eval()).unwrap();
    for (x, y) in out.data().iter().zip(out2.data()) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn combine_rejects_rows_of_wrong_width() {
    let v = Tensor::<f64>::zeros(&[2, 2, 3]);
    let w = strategy_softmax(&Tensor::zeros(&[9]), 3, 3).unwrap();
    assert!(selective_combine(&[v.clone(), v], &w).is_err());
}
