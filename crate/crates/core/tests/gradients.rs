//! Finite-difference and cross-path checks for the hand-written backward pass.

use kan_tsc::network::{init_params, Layer, Network, NetworkSpec, Variant};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;

fn random_batch(seed: u64, batch: usize, t: usize, classes: usize) -> (Vec<f64>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs = (0..batch * t).map(|_| rng.random_range(-1.2..1.2)).collect();
    let ys = (0..batch).map(|_| rng.random_range(0..classes)).collect();
    (xs, ys)
}

/// Perturbs the KAN coefficients away from their initial scale so every term
/// of the gradient is exercised.
fn roughen(net: &mut Network, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for t in net.param_slices_mut() {
        for v in t.iter_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
    }
}

fn assert_close(analytic: f64, numeric: f64, what: &str) {
    let scale = analytic.abs().max(numeric.abs());
    let err = (analytic - numeric).abs();
    assert!(
        err <= 1e-4 * scale || err <= 1e-7,
        "{what}: analytic {analytic}, numeric {numeric}"
    );
}

fn check_gradients(spec: NetworkSpec, reg: f64, seed: u64) {
    let mut net = init_params(&spec, seed).unwrap();
    roughen(&mut net, seed);
    let (xs, ys) = random_batch(seed, 3, spec.input_len(), spec.class_count());
    let (loss, grads) = net.backward(&xs, &ys, reg).unwrap();
    let direct = net.loss(&xs, &ys, reg).unwrap();
    assert!((loss.total - direct.total).abs() < 1e-12);

    let analytic: Vec<Vec<f64>> = grads.param_slices().iter().map(|t| t.to_vec()).collect();
    for (ti, g) in analytic.iter().enumerate() {
        for (j, &a) in g.iter().enumerate() {
            let orig = net.param_slices()[ti][j];
            net.param_slices_mut()[ti][j] = orig + H;
            let up = net.loss(&xs, &ys, reg).unwrap().total;
            net.param_slices_mut()[ti][j] = orig - H;
            let down = net.loss(&xs, &ys, reg).unwrap().total;
            net.param_slices_mut()[ti][j] = orig;
            assert_close(
                a,
                (up - down) / (2.0 * H),
                &format!("{:?} tensor {ti} entry {j}", spec.variant),
            );
        }
    }
}

#[test]
fn finite_differences_kan_original() {
    for seed in 0..3 {
        check_gradients(
            NetworkSpec::kan(Variant::KanOriginal, vec![4, 3, 2], 5),
            0.1,
            seed,
        );
    }
}

#[test]
fn finite_differences_kan_efficient() {
    for seed in 0..3 {
        check_gradients(
            NetworkSpec::kan(Variant::KanEfficient, vec![4, 3, 2], 5),
            0.1,
            seed,
        );
    }
}

#[test]
fn finite_differences_mlp() {
    for seed in 0..3 {
        check_gradients(NetworkSpec::mlp(vec![4, 3, 2]), 1.0, seed);
    }
}

#[test]
fn finite_differences_deeper_kan_with_other_order() {
    let mut spec = NetworkSpec::kan(Variant::KanOriginal, vec![3, 4, 3, 2], 4);
    spec.spline_order = 2;
    check_gradients(spec, 0.05, 4);
}

/// Gradient of the loss with respect to the input series, recovered from the
/// first layer: perturbing x_p must match the chain rule through all layers.
#[test]
fn input_sensitivity_matches_finite_differences() {
    let spec = NetworkSpec::kan(Variant::KanEfficient, vec![3, 3, 2], 5);
    let mut net = init_params(&spec, 5).unwrap();
    roughen(&mut net, 5);
    let x = vec![0.31, -0.47, 0.05];
    // d logit_0 / d x_p by differencing; compare with a composition of
    // single-edge derivatives computed independently.
    let Layer::Kan(l0) = &net.layers[0] else {
        unreachable!()
    };
    let Layer::Kan(l1) = &net.layers[1] else {
        unreachable!()
    };
    let h1 = l0.forward(&x).unwrap().0;
    let edge_derivative = |l: &kan_tsc::network::KanLayer, q: usize, p: usize, v: f64| {
        (l.edge_value(q, p, v + H) - l.edge_value(q, p, v - H)) / (2.0 * H)
    };
    for p in 0..3 {
        let chain: f64 = (0..3)
            .map(|m| edge_derivative(l1, 0, m, h1[m]) * edge_derivative(l0, m, p, x[p]))
            .sum();
        let mut up = x.clone();
        up[p] += H;
        let mut down = x.clone();
        down[p] -= H;
        let fd = (net.forward(&up).unwrap().logits[0] - net.forward(&down).unwrap().logits[0]) / (2.0 * H);
        assert!((chain - fd).abs() < 1e-6, "p={p}: chain {chain} fd {fd}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn batched_and_per_sample_paths_agree(
        seed in any::<u64>(),
        batch in 1usize..6,
        grid in 1usize..8,
        order in 1usize..4,
    ) {
        let mut spec = NetworkSpec::kan(Variant::KanEfficient, vec![5, 4, 3], grid);
        spec.spline_order = order;
        let mut net = init_params(&spec, seed).unwrap();
        roughen(&mut net, seed);
        let (xs, _) = random_batch(seed, batch, 5, 3);
        let batched = net.logits_batch(&xs, batch).unwrap();
        for (b, row) in xs.chunks_exact(5).enumerate() {
            let single = net.forward(row).unwrap().logits;
            for c in 0..3 {
                prop_assert!((batched[b * 3 + c] - single[c]).abs() <= 1e-10);
            }
        }
        // every layer on its own
        for layer in &net.layers {
            let Layer::Kan(l) = layer else { unreachable!() };
            let (inp, _) = random_batch(seed ^ 1, batch, l.d_in, 2);
            let out = l.forward_batch(&inp, batch).unwrap();
            for (b, row) in inp.chunks_exact(l.d_in).enumerate() {
                let (single, phi) = l.forward(row).unwrap();
                for q in 0..l.d_out {
                    prop_assert!((out[b * l.d_out + q] - single[q]).abs() <= 1e-10);
                    let edge_sum: f64 = l.bias[q] + phi[q * l.d_in..(q + 1) * l.d_in].iter().sum::<f64>();
                    prop_assert!((edge_sum - single[q]).abs() <= 1e-12);
                }
            }
        }
    }
}
