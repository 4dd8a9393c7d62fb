use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tensorkit::{
    grad_check, grad_check_many, AttentionLayout, AttnSegment, Graph, Neighborhoods, SparseMatrix, Tensor,
    TensorError,
};

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Fixed random projection so vector-valued ops reduce to a scalar with a
/// non-trivial upstream gradient.
fn project(g: &mut Graph<f64>, x: tensorkit::Var, seed: u64) -> tensorkit::Result<tensorkit::Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = random(&mut rng, g.value(x).shape());
    let w = g.input(w);
    let y = g.mul(x, w)?;
    Ok(g.sum(y))
}

#[test]
fn softmax_of_zeros_is_uniform() {
    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::new(&[1, 3], vec![0.0; 3]).unwrap());
    let y = g.softmax(x).unwrap();
    for &p in g.value(y).data() {
        assert!((p - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn layer_norm_of_constant_row_is_zero() {
    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::new(&[1, 4], vec![2.5; 4]).unwrap());
    let gamma = g.input(Tensor::full(&[4], 1.0));
    let beta = g.input(Tensor::zeros(&[4]));
    let y = g.layer_norm(x, gamma, beta, 1e-5).unwrap();
    assert!(g.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn identity_matmul_is_noop() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut g = Graph::<f64>::new();
    let eye = g.input(Tensor::eye(2));
    let x = g.input(random(&mut rng, &[2, 3]));
    let y = g.matmul(eye, x).unwrap();
    assert_eq!(g.value(y), g.value(x));
}

#[test]
fn shape_errors_name_both_shapes() {
    let mut g = Graph::<f64>::new();
    let a = g.input(Tensor::zeros(&[2, 3]));
    let b = g.input(Tensor::zeros(&[2, 3]));
    match g.matmul(a, b) {
        Err(TensorError::ShapeMismatch { left, right, .. }) => {
            assert_eq!(left, vec![2, 3]);
            assert_eq!(right, vec![2, 3]);
        }
        other => panic!("expected shape mismatch, got {:?}", other.map(|_| ())),
    }
    let c = g.input(Tensor::zeros(&[3, 2]));
    assert!(matches!(g.add(a, c), Err(TensorError::ShapeMismatch { op: "add", .. })));
}

#[test]
fn relu_gradient_away_from_kinks() {
    let x = Tensor::new(&[6], vec![0.7, -0.4, 1.3, -2.0, 0.05, 0.9]).unwrap();
    let err = grad_check(
        |g, v| {
            let r = g.relu(v);
            Ok(g.sum(r))
        },
        &x,
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-6, "relu grad error {err}");
}

#[test]
fn elementwise_and_row_ops_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = random(&mut rng, &[3, 4]);
    let b = random(&mut rng, &[3, 4]);
    let row = random(&mut rng, &[4]);
    let err = grad_check_many(
        |g, v| {
            let s = g.add(v[0], v[1])?;
            let d = g.sub(s, v[1])?;
            let m = g.mul(d, v[1])?;
            let r = g.add_row(m, v[2])?;
            let l = g.leaky_relu(r, 0.2);
            let sc = g.scale(l, 1.7);
            project(g, sc, 1)
        },
        &[a, b, row],
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-6, "error {err}");
}

#[test]
fn matmul_variants_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = random(&mut rng, &[3, 5]);
    let b = random(&mut rng, &[5, 2]);
    let c = random(&mut rng, &[4, 5]);
    let err = grad_check_many(
        |g, v| {
            let ab = g.matmul(v[0], v[1])?;
            let act = g.matmul_bt(v[0], v[2])?;
            let x = project(g, ab, 2)?;
            let y = project(g, act, 3)?;
            g.add(x, y)
        },
        &[a, b, c],
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-6, "error {err}");
}

#[test]
fn softmax_layer_norm_cross_entropy_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = random(&mut rng, &[3, 5]);
    let gamma = random(&mut rng, &[5]);
    let beta = random(&mut rng, &[5]);
    let err = grad_check_many(
        |g, v| {
            let n = g.layer_norm(v[0], v[1], v[2], 1e-5)?;
            let s = g.softmax(n)?;
            let a = project(g, s, 4)?;
            let ce = g.cross_entropy(n, &[0, 4, 2])?;
            g.add(a, ce)
        },
        &[x, gamma, beta],
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-6, "error {err}");
}

#[test]
fn structural_op_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let table = random(&mut rng, &[6, 3]);
    let other = random(&mut rng, &[2, 3]);
    let err = grad_check_many(
        |g, v| {
            let e = g.embedding(v[0], &[1, 4, 1, 5])?;
            let rows = g.concat(&[e, v[1]], 0)?;
            let cols = g.concat(&[rows, rows], 1)?;
            let picked = g.select_rows(cols, &[0, 5, 2, 0])?;
            let mask: Vec<bool> = (0..24).map(|i| i % 5 == 0).collect();
            let filled = g.masked_fill(picked, &mask, 0.25)?;
            let flat = g.gather(v[0], Arc::new(vec![0, 7, 7, 17]))?;
            let a = project(g, filled, 6)?;
            let b = project(g, flat, 7)?;
            let m = g.mean(filled);
            let s = g.add(a, b)?;
            g.add(s, m)
        },
        &[table, other],
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-6, "error {err}");
}

#[test]
fn spmm_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mat = Arc::new(
        SparseMatrix::from_triplets(3, 4, &[(0, 1, 0.5), (0, 3, -1.0), (2, 0, 2.0), (2, 2, 0.25), (1, 1, 1.0)]).unwrap(),
    );
    let x = random(&mut rng, &[4, 2]);
    let err = grad_check(
        |g, v| {
            let y = g.spmm(mat.clone(), v)?;
            project(g, y, 8)
        },
        &x,
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-6, "error {err}");
}

fn two_segment_layout() -> Arc<AttentionLayout> {
    Arc::new(AttentionLayout::new(
        2,
        vec![
            AttnSegment { q_start: 0, q_len: 3, k_start: 0, k_len: 3, causal: false },
            AttnSegment { q_start: 3, q_len: 2, k_start: 3, k_len: 4, causal: true },
        ],
    ))
}

#[test]
fn attention_gradients_with_bias_and_causal_mask() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let layout = two_segment_layout();
    let q = random(&mut rng, &[5, 4]);
    let k = random(&mut rng, &[7, 4]);
    let v = random(&mut rng, &[7, 4]);
    let bias = random(&mut rng, &[layout.block_len()]);
    let err = grad_check_many(
        |g, vars| {
            let out = g.attention(vars[0], vars[1], vars[2], Some(vars[3]), layout.clone())?;
            project(g, out, 9)
        },
        &[q, k, v, bias],
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-6, "error {err}");
}

#[test]
fn attention_single_key_returns_value_row() {
    let mut g = Graph::<f64>::new();
    let layout = Arc::new(AttentionLayout::self_attention(1, &[1], false));
    let q = g.input(Tensor::new(&[1, 2], vec![3.0, -7.0]).unwrap());
    let k = g.input(Tensor::new(&[1, 2], vec![0.1, 0.2]).unwrap());
    let v = g.input(Tensor::new(&[1, 2], vec![4.0, 5.0]).unwrap());
    let out = g.attention(q, k, v, None, layout).unwrap();
    assert_eq!(g.value(out).data(), &[4.0, 5.0]);
}

#[test]
fn attention_large_bias_collapses_to_key() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut g = Graph::<f64>::new();
    let layout = Arc::new(AttentionLayout::cross_attention(1, &[2], &[3]));
    let q = g.input(random(&mut rng, &[2, 2]));
    let k = g.input(random(&mut rng, &[3, 2]));
    let vt = random(&mut rng, &[3, 2]);
    let v = g.input(vt.clone());
    let bias = g.input(Tensor::new(&[6], vec![0.0, 1e4, 0.0, 0.0, 1e4, 0.0]).unwrap());
    let out = g.attention(q, k, v, Some(bias), layout).unwrap();
    for i in 0..2 {
        for j in 0..2 {
            assert!((g.value(out).at(i, j) - vt.at(1, j)).abs() < 1e-12);
        }
    }
}

#[test]
fn attention_invariant_to_joint_key_and_bias_permutation() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let n = 4;
    let heads = 2;
    let layout = Arc::new(AttentionLayout::self_attention(heads, &[n], false));
    let q = random(&mut rng, &[n, 4]);
    let k = random(&mut rng, &[n, 4]);
    let v = random(&mut rng, &[n, 4]);
    let bias = random(&mut rng, &[heads * n * n]);
    let perm = [2usize, 0, 3, 1];
    let permute_rows = |t: &Tensor<f64>| {
        Tensor::from_fn(t.shape(), |idx| {
            let (r, c) = (idx / 4, idx % 4);
            t.at(perm[r], c)
        })
    };
    let pbias = Tensor::from_fn(&[heads * n * n], |idx| {
        let (h, i, j) = (idx / (n * n), (idx / n) % n, idx % n);
        bias.data()[h * n * n + i * n + perm[j]]
    });
    let run = |k: Tensor<f64>, v: Tensor<f64>, b: Tensor<f64>| {
        let mut g = Graph::new();
        let (qv, kv, vv, bv) = (g.input(q.clone()), g.input(k), g.input(v), g.input(b));
        let out = g.attention(qv, kv, vv, Some(bv), layout.clone()).unwrap();
        g.value(out).clone()
    };
    let base = run(k.clone(), v.clone(), bias.clone());
    let permuted = run(permute_rows(&k), permute_rows(&v), pbias);
    assert!(base.max_abs_diff(&permuted) < 1e-12);
}

#[test]
fn attention_rejects_aliased_inputs() {
    let mut g = Graph::<f64>::new();
    let layout = Arc::new(AttentionLayout::self_attention(1, &[2], false));
    let x = g.variable(Tensor::zeros(&[2, 2]));
    assert!(g.attention(x, x, x, None, layout).is_err());
}

#[test]
fn gat_gradients_and_empty_neighbourhood() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let hood = Arc::new(Neighborhoods::from_lists(&[vec![0, 1], vec![0, 1, 2], vec![1, 2, 3], vec![3, 2]]).unwrap());
    let z = random(&mut rng, &[4, 3]);
    let att = random(&mut rng, &[6]);
    let err = grad_check_many(
        |g, v| {
            let out = g.gat_aggregate(v[0], v[1], hood.clone(), 0.2)?;
            project(g, out, 10)
        },
        &[z, att],
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-6, "error {err}");

    let mut g = Graph::<f64>::new();
    let empty = Arc::new(Neighborhoods::from_lists(&[vec![0], vec![]]).unwrap());
    let z = g.variable(Tensor::zeros(&[2, 1]));
    let a = g.variable(Tensor::zeros(&[2]));
    assert!(g.gat_aggregate(z, a, empty, 0.2).is_err());
}

#[test]
fn cross_entropy_decreases_with_margin() {
    let mut last = f64::INFINITY;
    for step in 0..20 {
        let margin = step as f64 * 0.5;
        let mut g = Graph::<f64>::new();
        let logits = g.input(Tensor::new(&[1, 3], vec![margin, 0.0, 0.0]).unwrap());
        let ce = g.cross_entropy(logits, &[0]).unwrap();
        let loss = g.value(ce).data()[0];
        assert!(loss < last, "loss {loss} did not drop below {last} at margin {margin}");
        last = loss;
    }
}

#[test]
fn frozen_inputs_receive_no_gradient() {
    let mut g = Graph::<f64>::new();
    let w = g.input(Tensor::eye(2));
    let x = g.variable(Tensor::new(&[1, 2], vec![1.0, 2.0]).unwrap());
    let y = g.matmul(x, w).unwrap();
    let s = g.sum(y);
    let grads = g.backward(s).unwrap();
    assert!(grads.get(w).is_none());
    assert_eq!(grads.get(x).unwrap().data(), &[1.0, 1.0]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn softmax_rows_are_distributions(rows in 1usize..5, cols in 1usize..7, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::from_fn(&[rows, cols], |_| rng.gen_range(-20.0..20.0)));
        let y = g.softmax(x).unwrap();
        for r in 0..rows {
            let row = g.value(y).row(r);
            prop_assert!(row.iter().all(|&p| p >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn random_shape_chain_passes_grad_check(m in 1usize..4, k in 1usize..4, n in 1usize..4, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, &[m, k]);
        let w = random(&mut rng, &[k, n]);
        let gamma = random(&mut rng, &[n]);
        let beta = random(&mut rng, &[n]);
        let err = grad_check_many(
            |g, v| {
                let y = g.matmul(v[0], v[1])?;
                let y = g.layer_norm(y, v[2], v[3], 1e-3)?;
                let y = g.softmax(y)?;
                project(g, y, seed)
            },
            &[x, w, gamma, beta],
            1e-6,
        ).unwrap();
        prop_assert!(err < 1e-4, "error {}", err);
    }
}
