//! Backward passes checked against central finite differences.

use dham_tensor::{grad_check, GradCheckOpts, Graph, Tensor, TensorError};

fn opts(probes: usize, seed: u64) -> GradCheckOpts {
    GradCheckOpts {
        probes,
        seed,
        ..Default::default()
    }
}

#[test]
fn sum_of_vector_gives_ones() {
    let v = Tensor::new(vec![4], vec![1.0, -2.0, 3.0, 0.5])
        .unwrap()
        .with_grad();
    let mut g: Graph<f64> = Graph::new();
    let x = g.leaf(&v);
    let loss = g.sum(x);
    g.backward(loss).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[1.0, 1.0, 1.0, 1.0]);
}

#[test]
fn sum_of_squares_gives_two_x() {
    let v = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap().with_grad();
    let mut g: Graph<f64> = Graph::new();
    let x = g.leaf(&v);
    let sq = g.mul(x, x).unwrap();
    let loss = g.sum(sq);
    g.backward(loss).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[2.0, 4.0]);
}

#[test]
fn backward_twice_errors() {
    let v = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap().with_grad();
    let mut g: Graph<f64> = Graph::new();
    let x = g.leaf(&v);
    let loss = g.sum(x);
    g.backward(loss).unwrap();
    assert!(matches!(
        g.backward(loss),
        Err(TensorError::BackwardConsumed)
    ));
}

#[test]
fn linear_map_is_exact() {
    let err = grad_check(
        &[&[3, 4], &[4, 2]],
        |g, vars| {
            let y = g.matmul(vars[0], vars[1])?;
            Ok(g.sum(y))
        },
        &opts(5, 1),
    )
    .unwrap();
    assert!(err < 1e-8, "linear map rel err {err}");
}

#[test]
fn matmul_bias_relu_stack() {
    let err = grad_check(
        &[&[4, 3], &[3, 5], &[5]],
        |g, vars| {
            let y = g.matmul(vars[0], vars[1])?;
            let y = g.add_bias_row(y, vars[2])?;
            let y = g.relu(y);
            Ok(g.sum(y))
        },
        &opts(20, 2),
    )
    .unwrap();
    assert!(err < 1e-4, "matmul+bias+relu rel err {err}");
}

#[test]
fn cross_entropy_grad_is_softmax_minus_onehot() {
    let logits = Tensor::new(vec![2, 3], vec![0.2, -0.4, 1.3, 2.0, 0.0, -1.0])
        .unwrap()
        .with_grad();
    let labels = [2usize, 0];
    let mut g: Graph<f64> = Graph::new();
    let x = g.leaf(&logits);
    let loss = g.cross_entropy(x, &labels).unwrap();
    g.backward(loss).unwrap();
    let grad = g.grad(x).unwrap().to_vec();
    // independent evaluation of (softmax - onehot)/batch
    for i in 0..2 {
        let row = &logits.data()[i * 3..(i + 1) * 3];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
        let z: f64 = exps.iter().sum();
        for j in 0..3 {
            let onehot = if labels[i] == j { 1.0 } else { 0.0 };
            let want = (exps[j] / z - onehot) / 2.0;
            assert!((grad[i * 3 + j] - want).abs() < 1e-12);
        }
    }

    // and against finite differences
    let err = grad_check(
        &[&[3, 4]],
        |g, vars| g.cross_entropy(vars[0], &[1, 3, 0]),
        &opts(20, 3),
    )
    .unwrap();
    assert!(err < 1e-4, "cross entropy rel err {err}");
}

#[test]
fn conv_relu_pool_dense_composite() {
    let err = grad_check(
        &[&[1, 2, 5, 5], &[4, 2, 3, 3], &[4, 3], &[3]],
        |g, vars| {
            let c = g.conv2d(vars[0], vars[1], 1, 1)?;
            let a = g.relu(c);
            let p = g.global_avg_pool(a)?;
            let d = g.matmul(p, vars[2])?;
            let d = g.add_bias_row(d, vars[3])?;
            g.cross_entropy(d, &[1])
        },
        &GradCheckOpts {
            probes: 25,
            seed: 4,
            kink_tol: 8e-3,
            ..Default::default()
        },
    )
    .unwrap();
    assert!(err < 1e-4, "composite rel err {err}");
}

#[test]
fn conv_stride_two_grad() {
    let err = grad_check(
        &[&[2, 3, 6, 6], &[4, 3, 4, 4]],
        |g, vars| {
            let c = g.conv2d(vars[0], vars[1], 2, 1)?;
            Ok(g.sum(c))
        },
        &opts(10, 5),
    )
    .unwrap();
    assert!(err < 1e-4, "strided conv rel err {err}");
}

#[test]
fn batchnorm_train_grad() {
    let err = grad_check(
        &[&[3, 2, 4, 4], &[2], &[2]],
        |g, vars| {
            let (y, _, _) = g.batchnorm_train(vars[0], vars[1], vars[2], 1e-5)?;
            let r = g.relu(y);
            Ok(g.sum(r))
        },
        &opts(15, 6),
    )
    .unwrap();
    assert!(err < 1e-4, "batchnorm rel err {err}");
}

#[test]
fn batchnorm_eval_grad() {
    let mean = vec![0.1, -0.2];
    let var = vec![1.5, 0.7];
    let err = grad_check(
        &[&[2, 2, 3, 3], &[2], &[2]],
        |g, vars| {
            let y = g.batchnorm_eval(vars[0], vars[1], vars[2], &mean, &var, 1e-5)?;
            Ok(g.sum(y))
        },
        &opts(10, 7),
    )
    .unwrap();
    assert!(err < 1e-4, "batchnorm eval rel err {err}");
}

#[test]
fn softmax_seg_grad() {
    let err = grad_check(
        &[&[2, 6, 2, 2]],
        |g, vars| {
            let y = g.softmax_seg(vars[0], 3)?;
            let sq = g.mul(y, y)?;
            Ok(g.sum(sq))
        },
        &opts(15, 8),
    )
    .unwrap();
    assert!(err < 1e-4, "softmax seg rel err {err}");
}

#[test]
fn gated_multiply_treats_gate_as_constant() {
    // out = gate(x0) ⊙ relu(x), AD must match finite differences of the
    // frozen-gate surrogate g(x0) ⊙ relu(x).
    let err = grad_check(
        &[&[2, 8]],
        |g, vars| {
            let s = g.relu(vars[0]);
            let gated = g.mul_gated(s, |vals| {
                // an arbitrary nonlinear gate of the forward value
                vals.iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect()
            })?;
            Ok(g.sum(gated))
        },
        &opts(20, 9),
    )
    .unwrap();
    assert!(err < 1e-4, "gated rel err {err}");
}

#[test]
fn gated_gradient_is_gate_times_upstream() {
    let x = Tensor::new(vec![2], vec![2.0, 1.0]).unwrap().with_grad();
    let mut g: Graph<f64> = Graph::new();
    let xv = g.leaf(&x);
    let s = g.relu(xv);
    let gate = vec![1.0, (-1.0f64).exp()];
    let gate_clone = gate.clone();
    let gated = g.mul_gated(s, move |_| gate_clone).unwrap();
    let loss = g.sum(gated);
    g.backward(loss).unwrap();
    let got = g.grad(xv).unwrap();
    assert!((got[0] - gate[0]).abs() < 1e-12);
    assert!((got[1] - gate[1]).abs() < 1e-12);
}

#[test]
fn residual_add_grad() {
    let err = grad_check(
        &[&[2, 3, 4, 4], &[3, 3, 3, 3]],
        |g, vars| {
            let c = g.conv2d(vars[0], vars[1], 1, 1)?;
            let sum = g.add(c, vars[0])?;
            let r = g.relu(sum);
            Ok(g.sum(r))
        },
        &opts(10, 10),
    )
    .unwrap();
    assert!(err < 1e-4, "residual rel err {err}");
}

#[test]
fn detached_values_block_gradients() {
    let x = Tensor::new(vec![3], vec![1.0, -2.0, 3.0])
        .unwrap()
        .with_grad();
    let mut g: Graph<f64> = Graph::new();
    let xv = g.leaf(&x);
    let d = g.detached(xv, vec![1.0, 0.0, 1.0]).unwrap();
    let both = g.add(xv, d).unwrap();
    let loss = g.sum(both);
    g.backward(loss).unwrap();
    // gradient flows through the direct path only
    assert_eq!(g.grad(xv).unwrap(), &[1.0, 1.0, 1.0]);
    assert!(g.grad(d).is_none());
}
