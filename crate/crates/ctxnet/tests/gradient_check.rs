//! Central finite-difference checks for every layer kind, in double
//! precision. Analytic gradients must match to relative error <= 1e-4 on at
//! least 100 random coordinates per kind.

use ctxnet::tensor::{Graph, NodeId, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn rand_tensor(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::new(shape, data).unwrap()
}

/// Compare analytic gradients of `build` (a scalar-valued graph over the
/// given parameter tensors) against central finite differences on `checks`
/// random coordinates.
fn finite_diff_check(
    params: &[Tensor<f64>],
    build: &dyn Fn(&mut Graph<f64>, &[NodeId]) -> NodeId,
    checks: usize,
    seed: u64,
) {
    let eval = |params: &[Tensor<f64>]| -> (f64, Vec<Option<Tensor<f64>>>) {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = params.iter().map(|p| g.leaf(p.clone(), true)).collect();
        let loss = build(&mut g, &ids);
        let mut grads = g.backward(loss).unwrap();
        let gs = ids.iter().map(|&id| grads.take(id)).collect();
        (g.value(loss).data()[0], gs)
    };

    let (_, analytic) = eval(params);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checked = 0;
    while checked < checks {
        let pi = rng.gen_range(0..params.len());
        let ei = rng.gen_range(0..params[pi].len());

        let mut plus = params.to_vec();
        plus[pi].data_mut()[ei] += STEP;
        let mut minus = params.to_vec();
        minus[pi].data_mut()[ei] -= STEP;
        let numeric = (eval(&plus).0 - eval(&minus).0) / (2.0 * STEP);

        let a = analytic[pi]
            .as_ref()
            .map(|t| t.data()[ei])
            .unwrap_or(0.0);
        let denom = a.abs().max(numeric.abs()).max(1e-6);
        assert!(
            (a - numeric).abs() / denom <= TOL,
            "param {pi} elem {ei}: analytic {a} vs numeric {numeric}"
        );
        checked += 1;
    }
}

#[test]
fn dense_relu_mse_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let params = vec![
        rand_tensor(vec![4, 5], &mut rng),  // x
        rand_tensor(vec![8, 5], &mut rng),  // w
        rand_tensor(vec![8], &mut rng),     // b
        rand_tensor(vec![4, 8], &mut rng),  // target
    ];
    finite_diff_check(
        &params,
        &|g, ids| {
            let y = g.dense(ids[0], ids[1], ids[2]).unwrap();
            let y = g.relu(y);
            g.mse(y, ids[3]).unwrap()
        },
        120,
        11,
    );
}

#[test]
fn sigmoid_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let params = vec![rand_tensor(vec![6, 7], &mut rng), rand_tensor(vec![6, 7], &mut rng)];
    finite_diff_check(
        &params,
        &|g, ids| {
            let y = g.sigmoid(ids[0]);
            g.mse(y, ids[1]).unwrap()
        },
        100,
        12,
    );
}

#[test]
fn conv_pool_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let params = vec![
        rand_tensor(vec![2, 2, 8, 8], &mut rng),  // x: B=2, C=2
        rand_tensor(vec![3, 2, 3, 3], &mut rng),  // kernels
        rand_tensor(vec![3], &mut rng),           // bias
        rand_tensor(vec![2, 3, 3, 3], &mut rng),  // target after pool
    ];
    finite_diff_check(
        &params,
        &|g, ids| {
            let y = g.conv2d(ids[0], ids[1], ids[2]).unwrap();
            let y = g.relu(y);
            let y = g.maxpool2d(y).unwrap();
            g.mse(y, ids[3]).unwrap()
        },
        120,
        13,
    );
}

#[test]
fn softmax_cross_entropy_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut target = Tensor::<f64>::zeros(vec![5, 10]);
    for r in 0..5 {
        target.data_mut()[r * 10 + (r * 3) % 10] = 1.0;
    }
    let params = vec![
        rand_tensor(vec![5, 6], &mut rng),
        rand_tensor(vec![10, 6], &mut rng),
        rand_tensor(vec![10], &mut rng),
    ];
    let target_c = target.clone();
    finite_diff_check(
        &params,
        &move |g, ids| {
            let y = g.dense(ids[0], ids[1], ids[2]).unwrap();
            let p = g.softmax(y);
            let t = g.constant(target_c.clone());
            g.cross_entropy(p, t).unwrap()
        },
        120,
        14,
    );
}

#[test]
fn rowmax_gradients() {
    // Random values make max ties measure-zero, so the subgradient at the
    // argmax matches the finite difference.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let params = vec![
        rand_tensor(vec![12, 6], &mut rng),  // 2 groups of 6 rows
        rand_tensor(vec![2, 6], &mut rng),
    ];
    finite_diff_check(
        &params,
        &|g, ids| {
            let y = g.rowmax(ids[0], 6).unwrap();
            g.mse(y, ids[1]).unwrap()
        },
        100,
        15,
    );
}

#[test]
fn simple_square_gradient() {
    // f(x) = mean(x^2) via mse against zero; x = [3] -> df/dx = 2x = 6.
    let x = Tensor::new(vec![1], vec![3.0f64]).unwrap();
    let mut g = Graph::new();
    let xid = g.leaf(x, true);
    let z = g.constant(Tensor::zeros(vec![1]));
    let loss = g.mse(xid, z).unwrap();
    assert_eq!(g.value(loss).data()[0], 9.0);
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.get(xid).unwrap().data()[0], 6.0);
}

#[test]
fn unused_parameter_gets_no_gradient() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::new(vec![2], vec![1.0f64, 2.0]).unwrap(), true);
    let unused = g.leaf(Tensor::new(vec![2], vec![5.0f64, 5.0]).unwrap(), true);
    let t = g.constant(Tensor::zeros(vec![2]));
    let loss = g.mse(x, t).unwrap();
    let grads = g.backward(loss).unwrap();
    assert!(grads.get(unused).is_none());
    assert!(grads.get(x).is_some());
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::new(vec![2], vec![1.0f64, 2.0]).unwrap(), true);
    assert!(g.backward(x).is_err());
}

#[test]
fn backward_is_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = rand_tensor(vec![4, 5], &mut rng);
        let w = rand_tensor(vec![3, 5], &mut rng);
        let b = rand_tensor(vec![3], &mut rng);
        let t = rand_tensor(vec![4, 3], &mut rng);
        let mut g = Graph::new();
        let (xi, wi, bi) = (g.leaf(x, true), g.leaf(w, true), g.leaf(b, true));
        let ti = g.constant(t);
        let y = g.dense(xi, wi, bi).unwrap();
        let y = g.sigmoid(y);
        let loss = g.mse(y, ti).unwrap();
        let grads = g.backward(loss).unwrap();
        (
            g.value(loss).data().to_vec(),
            grads.get(wi).unwrap().data().to_vec(),
        )
    };
    let (l1, g1) = run();
    let (l2, g2) = run();
    assert_eq!(l1, l2);
    assert_eq!(g1, g2);
}
