//! Brute-force oracle tests for the numeric layers. Each oracle is an
//! independent naive implementation; randomized instances are compared at
//! the stated tolerances (>= 100 cases per kind).

use ctxnet::tensor::{Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-30)
}

/// Triple-loop dense oracle: out[b][j] = sum_k w[j][k] x[b][k] + bias[j].
/// Also returns the sum of absolute terms per output, the natural scale for
/// a relative-error comparison when the signed sum nearly cancels.
fn dense_oracle(
    x: &[f64],
    w: &[f64],
    b: &[f64],
    batch: usize,
    n_in: usize,
    n_out: usize,
) -> (Vec<f64>, Vec<f64>) {
    let mut out = vec![0.0; batch * n_out];
    let mut mag = vec![0.0; batch * n_out];
    for bi in 0..batch {
        for j in 0..n_out {
            let mut s = b[j];
            let mut m = b[j].abs();
            for k in 0..n_in {
                let term = w[j * n_in + k] * x[bi * n_in + k];
                s += term;
                m += term.abs();
            }
            out[bi * n_out + j] = s;
            mag[bi * n_out + j] = m;
        }
    }
    (out, mag)
}

#[test]
fn dense_matches_triple_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for case in 0..120 {
        let (batch, n_in, n_out) = if case == 0 {
            (1, 5, 8)
        } else {
            (rng.gen_range(1..5), rng.gen_range(1..12), rng.gen_range(1..12))
        };
        let x = rand_vec(batch * n_in, &mut rng);
        let w = rand_vec(n_out * n_in, &mut rng);
        let b = rand_vec(n_out, &mut rng);
        let (expect, mag) = dense_oracle(&x, &w, &b, batch, n_in, n_out);

        let mut g = Graph::new();
        let xi = g.constant(Tensor::new(vec![batch, n_in], x).unwrap());
        let wi = g.constant(Tensor::new(vec![n_out, n_in], w).unwrap());
        let bi = g.constant(Tensor::new(vec![n_out], b).unwrap());
        let y = g.dense(xi, wi, bi).unwrap();
        for ((a, e), m) in g.value(y).data().iter().zip(&expect).zip(&mag) {
            assert!((a - e).abs() <= 1e-12 * m.max(1e-30), "{a} vs {e}");
        }
    }
}

#[test]
fn dense_identity_and_zero_cases() {
    let mut g = Graph::new();
    let v = vec![0.5f64, -1.5, 2.0];
    let xi = g.constant(Tensor::new(vec![3], v.clone()).unwrap());
    let eye = Tensor::new(vec![3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
    let wi = g.constant(eye);
    let zb = g.constant(Tensor::zeros(vec![3]));
    let y = g.dense(xi, wi, zb).unwrap();
    assert_eq!(g.value(y).data(), v.as_slice());

    // zero input -> bias
    let z = g.constant(Tensor::zeros(vec![3]));
    let w = g.constant(Tensor::new(vec![2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap());
    let b = g.constant(Tensor::new(vec![2], vec![7.0, -7.0]).unwrap());
    let y = g.dense(z, w, b).unwrap();
    assert_eq!(g.value(y).data(), &[7.0, -7.0]);
}

#[test]
fn dense_shape_mismatch_names_both_shapes() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::<f64>::zeros(vec![4]));
    let w = g.constant(Tensor::<f64>::zeros(vec![2, 3]));
    let b = g.constant(Tensor::<f64>::zeros(vec![2]));
    let err = g.dense(x, w, b).unwrap_err().to_string();
    assert!(err.contains("[4]") && err.contains("[2, 3]"), "{err}");
}

/// Six-nested-loop convolution oracle.
#[allow(clippy::too_many_arguments)]
fn conv_oracle(
    x: &[f64],
    k: &[f64],
    bias: &[f64],
    c: usize,
    h: usize,
    w: usize,
    ko: usize,
    kh: usize,
    kw: usize,
) -> Vec<f64> {
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    let mut out = vec![0.0; ko * oh * ow];
    for f in 0..ko {
        for y in 0..oh {
            for xx in 0..ow {
                let mut s = bias[f];
                for cc in 0..c {
                    for i in 0..kh {
                        for j in 0..kw {
                            s += k[((f * c + cc) * kh + i) * kw + j]
                                * x[cc * h * w + (y + i) * w + (xx + j)];
                        }
                    }
                }
                out[(f * oh + y) * ow + xx] = s;
            }
        }
    }
    out
}

#[test]
fn conv2d_matches_brute_force_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    for case in 0..110 {
        let (c, h, w, ko, kh, kw) = if case == 0 {
            (3, 9, 9, 4, 3, 3)
        } else {
            let h = rng.gen_range(3..13);
            let w = rng.gen_range(3..13);
            (
                rng.gen_range(1..5),
                h,
                w,
                rng.gen_range(1..4),
                rng.gen_range(1..=h.min(5)),
                rng.gen_range(1..=w.min(5)),
            )
        };
        let x = rand_vec(c * h * w, &mut rng);
        let k = rand_vec(ko * c * kh * kw, &mut rng);
        let b = rand_vec(ko, &mut rng);
        let expect = conv_oracle(&x, &k, &b, c, h, w, ko, kh, kw);

        let mut g = Graph::new();
        let xi = g.constant(Tensor::new(vec![c, h, w], x).unwrap());
        let ki = g.constant(Tensor::new(vec![ko, c, kh, kw], k).unwrap());
        let bi = g.constant(Tensor::new(vec![ko], b).unwrap());
        let y = g.conv2d(xi, ki, bi).unwrap();
        assert_eq!(g.value(y).shape(), &[ko, h - kh + 1, w - kw + 1]);
        for (a, e) in g.value(y).data().iter().zip(&expect) {
            assert!(rel_err(*a, *e) <= 1e-10, "{a} vs {e}");
        }
    }
}

#[test]
fn conv2d_all_ones_sums_to_25() {
    let mut g = Graph::new();
    let xi = g.constant(Tensor::new(vec![1, 5, 5], vec![1.0f64; 25]).unwrap());
    let ki = g.constant(Tensor::new(vec![1, 1, 5, 5], vec![1.0f64; 25]).unwrap());
    let bi = g.constant(Tensor::zeros(vec![1]));
    let y = g.conv2d(xi, ki, bi).unwrap();
    assert_eq!(g.value(y).data(), &[25.0]);
}

#[test]
fn conv2d_unit_impulse_reproduces_kernel() {
    let mut x = Tensor::<f64>::zeros(vec![1, 7, 7]);
    x.data_mut()[3 * 7 + 3] = 1.0; // impulse at (3,3)
    let k: Vec<f64> = (1..=9).map(|v| v as f64).collect();
    let mut g = Graph::new();
    let xi = g.constant(x);
    let ki = g.constant(Tensor::new(vec![1, 1, 3, 3], k.clone()).unwrap());
    let bi = g.constant(Tensor::zeros(vec![1]));
    let y = g.conv2d(xi, ki, bi).unwrap();
    // Output at (oy,ox) = kernel[3-oy+ ... ]: the 3x3 window around the
    // impulse holds the kernel flipped in both axes (cross-correlation).
    let out = g.value(y).data();
    for i in 0..3 {
        for j in 0..3 {
            assert_eq!(out[(1 + i) * 5 + (1 + j)], k[(2 - i) * 3 + (2 - j)]);
        }
    }
}

#[test]
fn conv2d_kernel_larger_than_input_is_shape_error() {
    let mut g = Graph::new();
    let xi = g.constant(Tensor::<f64>::zeros(vec![1, 4, 4]));
    let ki = g.constant(Tensor::<f64>::zeros(vec![1, 1, 5, 5]));
    let bi = g.constant(Tensor::<f64>::zeros(vec![1]));
    assert!(g.conv2d(xi, ki, bi).is_err());
}

#[test]
fn maxpool_matches_window_scan_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(300);
    for _ in 0..110 {
        let c = rng.gen_range(1..5);
        let h = 2 * rng.gen_range(1..7);
        let w = 2 * rng.gen_range(1..7);
        let x = rand_vec(c * h * w, &mut rng);
        // exhaustive window scan oracle
        let mut expect = vec![0.0; c * (h / 2) * (w / 2)];
        for cc in 0..c {
            for y in 0..h / 2 {
                for xx in 0..w / 2 {
                    let mut m = f64::NEG_INFINITY;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            m = m.max(x[cc * h * w + (2 * y + dy) * w + 2 * xx + dx]);
                        }
                    }
                    expect[(cc * (h / 2) + y) * (w / 2) + xx] = m;
                }
            }
        }
        let mut g = Graph::new();
        let xi = g.constant(Tensor::new(vec![c, h, w], x).unwrap());
        let y = g.maxpool2d(xi).unwrap();
        assert_eq!(g.value(y).data(), expect.as_slice());
    }
}

#[test]
fn maxpool_constant_image_and_window_max() {
    let mut g = Graph::new();
    let xi = g.constant(Tensor::new(vec![1, 4, 4], vec![0.25f64; 16]).unwrap());
    let y = g.maxpool2d(xi).unwrap();
    assert!(g.value(y).data().iter().all(|&v| v == 0.25));

    let xi = g.constant(Tensor::new(vec![1, 2, 2], vec![1.0f64, 2.0, 3.0, 4.0]).unwrap());
    let y = g.maxpool2d(xi).unwrap();
    assert_eq!(g.value(y).data(), &[4.0]);
}

#[test]
fn maxpool_odd_dims_rejected() {
    let mut g = Graph::new();
    let xi = g.constant(Tensor::<f64>::zeros(vec![1, 3, 4]));
    assert!(g.maxpool2d(xi).is_err());
}

#[test]
fn softmax_matches_high_precision_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(400);
    for _ in 0..120 {
        let x = rand_vec(10, &mut rng);
        // independent oracle: plain exp/sum without max subtraction
        let exps: Vec<f64> = x.iter().map(|v| v.exp()).collect();
        let sum: f64 = exps.iter().sum();
        let expect: Vec<f64> = exps.iter().map(|e| e / sum).collect();

        let mut g = Graph::new();
        let xi = g.constant(Tensor::new(vec![10], x).unwrap());
        let y = g.softmax(xi);
        for (a, e) in g.value(y).data().iter().zip(&expect) {
            assert!((a - e).abs() <= 1e-10, "{a} vs {e}");
        }
    }
}

#[test]
fn softmax_uniform_stability_and_normalization() {
    let mut g = Graph::new();
    let xi = g.constant(Tensor::new(vec![3], vec![0.0f64; 3]).unwrap());
    let y = g.softmax(xi);
    for v in g.value(y).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }

    // huge spread stays finite and normalized thanks to max subtraction
    let xi = g.constant(Tensor::new(vec![2], vec![3.0f64, 3.0 + 1e4]).unwrap());
    let y = g.softmax(xi);
    let d = g.value(y).data();
    assert!(d.iter().all(|v| v.is_finite() && *v >= 0.0));
    assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-6);
}

#[test]
fn softmax_normalization_on_many_random_vectors() {
    let mut rng = ChaCha8Rng::seed_from_u64(500);
    for _ in 0..10_000 {
        let k = rng.gen_range(1..16);
        let x: Vec<f32> = (0..k).map(|_| rng.gen_range(-50.0..50.0)).collect();
        let mut g = Graph::new();
        let xi = g.constant(Tensor::new(vec![k], x).unwrap());
        let y = g.softmax(xi);
        let sum: f32 = g.value(y).data().iter().sum();
        assert!((sum - 1.0).abs() <= 1e-6);
        assert!(g.value(y).data().iter().all(|&v| v > 0.0));
    }
}

#[test]
fn loss_basics() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::new(vec![2], vec![1.0f64, 0.0]).unwrap());
    let b = g.constant(Tensor::new(vec![2], vec![0.0f64, 0.0]).unwrap());
    let l = g.mse(a, a).unwrap();
    assert_eq!(g.value(l).data()[0], 0.0);
    let l = g.mse(a, b).unwrap();
    assert_eq!(g.value(l).data()[0], 0.5);

    // perfect prediction -> zero cross-entropy
    let p = g.constant(Tensor::new(vec![3], vec![0.0f64, 1.0, 0.0]).unwrap());
    let t = g.constant(Tensor::new(vec![3], vec![0.0f64, 1.0, 0.0]).unwrap());
    let l = g.cross_entropy(p, t).unwrap();
    assert_eq!(g.value(l).data()[0], 0.0);

    // shape mismatch
    let c = g.constant(Tensor::<f64>::zeros(vec![3]));
    assert!(g.mse(a, c).is_err());
    assert!(g.cross_entropy(a, c).is_err());
}
