//! Forward semantics checked against independent naive implementations.

use dham_tensor::{Graph, Tensor};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Triple-loop reference matmul, independent of the kernel path.
fn matmul_ref(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for kk in 0..k {
                s += a[i * k + kk] * b[kk * n + j];
            }
            out[i * n + j] = s;
        }
    }
    out
}

/// Six-loop reference convolution (cross-correlation).
#[allow(clippy::too_many_arguments)]
fn conv_ref(
    x: &[f64],
    w: &[f64],
    n: usize,
    c: usize,
    h: usize,
    wd: usize,
    f: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> Vec<f64> {
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; n * f * oh * ow];
    for ni in 0..n {
        for fi in 0..f {
            for oi in 0..oh {
                for oj in 0..ow {
                    let mut s = 0.0;
                    for ci in 0..c {
                        for ki in 0..kh {
                            for kj in 0..kw {
                                let ih = (oi * stride + ki) as isize - pad as isize;
                                let iw = (oj * stride + kj) as isize - pad as isize;
                                if ih < 0 || iw < 0 || ih >= h as isize || iw >= wd as isize {
                                    continue;
                                }
                                let xv = x[((ni * c + ci) * h + ih as usize) * wd + iw as usize];
                                let wv = w[((fi * c + ci) * kh + ki) * kw + kj];
                                s += xv * wv;
                            }
                        }
                    }
                    out[((ni * f + fi) * oh + oi) * ow + oj] = s;
                }
            }
        }
    }
    out
}

#[test]
fn matmul_identity_and_scalar() {
    let mut g: Graph<f64> = Graph::new();
    let eye = Tensor::from_fn(&[3, 3], |i| if i / 3 == i % 3 { 1.0 } else { 0.0 });
    let v = Tensor::new(vec![3, 1], vec![4.0, -2.5, 7.0]).unwrap();
    let a = g.leaf(&eye);
    let b = g.leaf(&v);
    let out = g.matmul(a, b).unwrap();
    assert_eq!(g.value(out), v.data());

    let mut g: Graph<f64> = Graph::new();
    let a = g.leaf(&Tensor::new(vec![1, 1], vec![2.0]).unwrap());
    let b = g.leaf(&Tensor::new(vec![1, 1], vec![3.0]).unwrap());
    let out = g.matmul(a, b).unwrap();
    assert_eq!(g.value(out), &[6.0]);
}

#[test]
fn matmul_matches_triple_loop() {
    let mut r = rng(11);
    let a = rand_tensor(&[3, 4], &mut r);
    let b = rand_tensor(&[4, 2], &mut r);
    let mut g: Graph<f64> = Graph::new();
    let av = g.leaf(&a);
    let bv = g.leaf(&b);
    let out = g.matmul(av, bv).unwrap();
    let expect = matmul_ref(a.data(), b.data(), 3, 4, 2);
    for (got, want) in g.value(out).iter().zip(&expect) {
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }
}

#[test]
fn matmul_shape_mismatch_errors() {
    let mut g: Graph<f64> = Graph::new();
    let a = g.leaf(&Tensor::zeros(&[2, 3]));
    let b = g.leaf(&Tensor::zeros(&[4, 2]));
    assert!(g.matmul(a, b).is_err());
}

#[test]
fn conv2d_matches_six_loop_reference() {
    let mut r = rng(7);
    let x = rand_tensor(&[1, 2, 5, 5], &mut r);
    let w = rand_tensor(&[3, 2, 3, 3], &mut r);
    for (stride, pad) in [(1, 0), (1, 1), (2, 1)] {
        let mut g: Graph<f64> = Graph::new();
        let xv = g.leaf(&x);
        let wv = g.leaf(&w);
        let out = g.conv2d(xv, wv, stride, pad).unwrap();
        let expect = conv_ref(x.data(), w.data(), 1, 2, 5, 5, 3, 3, 3, stride, pad);
        assert_eq!(g.value(out).len(), expect.len());
        for (got, want) in g.value(out).iter().zip(&expect) {
            assert!((got - want).abs() < 1e-12, "stride {stride} pad {pad}");
        }
    }
}

#[test]
fn conv2d_1x1_equals_matmul_exactly() {
    // per-pixel channel mixing: conv with 1x1 kernel over (1,C,H,W) equals
    // W[F×C] · X[C×HW], bit for bit.
    let mut r = rng(3);
    let x = rand_tensor(&[1, 4, 6, 6], &mut r);
    let w = rand_tensor(&[5, 4, 1, 1], &mut r);
    let mut g: Graph<f64> = Graph::new();
    let xv = g.leaf(&x);
    let wv = g.leaf(&w);
    let conv = g.conv2d(xv, wv, 1, 0).unwrap();

    let mut g2: Graph<f64> = Graph::new();
    let wmat = g2.leaf(&Tensor::new(vec![5, 4], w.data().to_vec()).unwrap());
    let xmat = g2.leaf(&Tensor::new(vec![4, 36], x.data().to_vec()).unwrap());
    let mm = g2.matmul(wmat, xmat).unwrap();
    assert_eq!(g.value(conv), g2.value(mm));
}

#[test]
fn conv2d_delta_kernel_copies_input() {
    let mut r = rng(5);
    let x = rand_tensor(&[2, 3, 8, 8], &mut r);
    // one 3x3 kernel per output channel, 1 at center of its own input channel
    let w = Tensor::from_fn(&[3, 3, 3, 3], |i| {
        let f = i / 27;
        let c = (i / 9) % 3;
        let pos = i % 9;
        if f == c && pos == 4 {
            1.0
        } else {
            0.0
        }
    });
    let mut g: Graph<f64> = Graph::new();
    let xv = g.leaf(&x);
    let wv = g.leaf(&w);
    let out = g.conv2d(xv, wv, 1, 1).unwrap();
    assert_eq!(g.value(out), x.data());
}

#[test]
fn conv2d_rejects_non_integral_output() {
    let mut g: Graph<f64> = Graph::new();
    let x = g.leaf(&Tensor::zeros(&[1, 1, 5, 5]));
    let w = g.leaf(&Tensor::zeros(&[1, 1, 2, 2]));
    assert!(g.conv2d(x, w, 2, 0).is_err());
}

#[test]
fn relu_clamps_negatives() {
    let mut g: Graph<f64> = Graph::new();
    let x = g.leaf(&Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap());
    let y = g.relu(x);
    assert_eq!(g.value(y), &[0.0, 0.0, 2.0]);
}

#[test]
fn softmax_constant_segment_is_uniform() {
    let mut g: Graph<f64> = Graph::new();
    let x = g.leaf(&Tensor::full(&[1, 4], 3.7));
    let y = g.softmax_seg(x, 4).unwrap();
    for &v in g.value(y) {
        assert!((v - 0.25).abs() < 1e-12);
    }
}

#[test]
fn softmax_seg_shift_invariant_and_normalized() {
    let mut r = rng(17);
    for _ in 0..50 {
        let x = rand_tensor(&[2, 8, 2, 2], &mut r);
        let shifted =
            Tensor::new(vec![2, 8, 2, 2], x.data().iter().map(|v| v + 5.0).collect()).unwrap();
        let mut g: Graph<f64> = Graph::new();
        let a = g.leaf(&x);
        let b = g.leaf(&shifted);
        let ya = g.softmax_seg(a, 4).unwrap();
        let yb = g.softmax_seg(b, 4).unwrap();
        let va = g.value(ya).to_vec();
        let vb = g.value(yb);
        for (p, q) in va.iter().zip(vb) {
            assert!((p - q).abs() < 1e-6);
        }
        // per-segment sums: channels are strided over the 2x2 spatial plane
        for n in 0..2 {
            for pos in 0..4 {
                for seg in 0..2 {
                    let mut s = 0.0;
                    for j in 0..4 {
                        s += va[(n * 8 + seg * 4 + j) * 4 + pos];
                    }
                    assert!((s - 1.0).abs() < 1e-6);
                }
            }
        }
    }
}

#[test]
fn softmax_seg_rejects_bad_segment() {
    let mut g: Graph<f64> = Graph::new();
    let x = g.leaf(&Tensor::zeros(&[1, 6]));
    assert!(g.softmax_seg(x, 4).is_err());
}

#[test]
fn cross_entropy_uniform_logits() {
    let mut g: Graph<f64> = Graph::new();
    let x = g.leaf(&Tensor::zeros(&[2, 10]));
    let loss = g.cross_entropy(x, &[3, 7]).unwrap();
    assert!((g.value(loss)[0] - (10.0f64).ln()).abs() < 1e-12);
}

#[test]
fn global_avg_pool_means() {
    let x = Tensor::from_fn(&[1, 2, 2, 2], |i| i as f64);
    let mut g: Graph<f64> = Graph::new();
    let xv = g.leaf(&x);
    let y = g.global_avg_pool(xv).unwrap();
    assert_eq!(g.value(y), &[1.5, 5.5]);
}

#[test]
fn forward_is_deterministic() {
    let run = || {
        let mut r = rng(23);
        let x = rand_tensor(&[2, 4, 6, 6], &mut r).to_f32();
        let w = rand_tensor(&[4, 4, 3, 3], &mut r).to_f32();
        let mut g: Graph<f32> = Graph::new();
        let xv = g.leaf(&x);
        let wv = g.leaf(&w);
        let c = g.conv2d(xv, wv, 1, 1).unwrap();
        let a = g.relu(c);
        let p = g.global_avg_pool(a).unwrap();
        g.value(p).to_vec()
    };
    assert_eq!(run(), run());
}

#[test]
fn checkpoint_round_trips_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("weights.dnwt");
    let mut r = rng(29);
    let a = Tensor::<f32>::from_fn(&[3, 4], |_| r.random_range(-1.0f32..1.0));
    let b = Tensor::<f32>::from_fn(&[2, 2, 3, 3], |_| r.random_range(-1.0f32..1.0));
    let entries = vec![("layer.a".to_string(), &a), ("layer.b".to_string(), &b)];
    dham_tensor::save_checkpoint(&path, &entries).unwrap();
    let loaded = dham_tensor::load_checkpoint(&path).unwrap();
    assert_eq!(loaded.len(), 2);
    assert_eq!(loaded[0].0, "layer.a");
    assert_eq!(loaded[0].1.shape(), a.shape());
    assert_eq!(loaded[0].1.data(), a.data());
    assert_eq!(loaded[1].0, "layer.b");
    assert_eq!(loaded[1].1.data(), b.data());
}

#[test]
fn checkpoint_rejects_bad_magic() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.dnwt");
    std::fs::write(&path, b"NOPE\x01\x00\x00\x00\x00").unwrap();
    assert!(dham_tensor::load_checkpoint(&path).is_err());
}
