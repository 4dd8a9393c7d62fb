mod common;

use common::gnn::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rpelab::adapters::*;
use rpelab::graphcore::{EdgeKind, GraphStructure};
use tensorkit::Tensor;

#[test]
fn gcn_two_node_hand_case() {
    // W = I, identity activation, no bias: deg = 2 for both nodes, c = 1/4.
    let s = graph(2, &[(0, 1)]);
    let mut st = setup(AdapterKind::Gcn, 2, 2, 1);
    st.spec.activation = Activation::Identity;
    st.tensors[2] = Tensor::zeros(&[2]);
    st.tensors[5] = Tensor::eye(2);
    let x = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 5.0]]).unwrap();
    let out = lib_gnn(&st, &s, &x);
    assert_eq!(out.row(0), &[1.0, 1.75]);
    assert_eq!(out.row(1), &[1.0, 1.75]);
}

#[test]
fn gcn_single_node_self_loop_is_identity() {
    let s = GraphStructure::edgeless(1);
    let mut st = setup(AdapterKind::Gcn, 3, 3, 2);
    st.spec.activation = Activation::Identity;
    st.tensors[2] = Tensor::zeros(&[3]);
    st.tensors[5] = Tensor::eye(3);
    let x = Tensor::from_rows(&[vec![0.5, -1.0, 2.0]]).unwrap();
    assert_eq!(lib_gnn(&st, &s, &x).row(0), x.row(0));
}

#[test]
fn gcn_norms_differ_on_star_centre() {
    let s = graph(3, &[(0, 1), (0, 2)]);
    let mut st = setup(AdapterKind::Gcn, 2, 2, 3);
    st.spec.activation = Activation::Identity;
    let x = Tensor::from_rows(&[vec![1.0, 0.5], vec![0.2, 1.0], vec![-0.3, 0.7]]).unwrap();
    let paper = lib_gnn(&st, &s, &x);
    st.spec.gcn_norm = GcnNorm::SymmetricSqrt;
    let sqrt = lib_gnn(&st, &s, &x);
    assert!(paper.row(0).iter().zip(sqrt.row(0)).any(|(a, b)| (a - b).abs() > 1e-6));
}

#[test]
fn gnn_forward_matches_dense_oracles() {
    let gap = max_oracle_gap();
    assert!(gap < 1e-9, "{gap}");
}

#[test]
fn gat_uniform_and_dominant_scores() {
    let s = graph(3, &[(0, 1), (0, 2)]);
    let mut st = setup(AdapterKind::Gat, 2, 2, 5);
    st.spec.activation = Activation::Identity;
    st.tensors[2] = Tensor::zeros(&[2]);
    st.tensors[5] = Tensor::eye(2);
    let x = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![2.0, 2.0]]).unwrap();

    st.tensors[6] = Tensor::zeros(&[4]);
    let out = lib_gnn(&st, &s, &x);
    for j in 0..2 {
        assert!((out.at(0, j) - (x.at(0, j) + x.at(1, j) + x.at(2, j)) / 3.0).abs() < 1e-12);
    }

    // Large weight on the neighbour half of the score favours node 2 at the centre.
    st.tensors[6] = Tensor::new(&[4], vec![0.0, 0.0, 40.0, 40.0]).unwrap();
    let out = lib_gnn(&st, &s, &x);
    assert!((out.at(0, 0) - 2.0).abs() < 1e-9 && (out.at(0, 1) - 2.0).abs() < 1e-9);
}

#[test]
fn rgcn_chain_direction_and_ablation() {
    // A -> r -> B with A = 0, r = 1, B = 2.
    let s = graph(3, &[(0, 1), (1, 2)]);
    let mut st = setup(AdapterKind::Rgcn, 2, 2, 6);
    st.spec.activation = Activation::Identity;
    st.tensors[2] = Tensor::zeros(&[2]);
    st.tensors[7] = Tensor::zeros(&[2, 2]);
    let x = Tensor::from_rows(&[vec![1.0, 1.0], vec![0.4, -0.2], vec![1.0, 1.0]]).unwrap();
    let out = lib_gnn(&st, &s, &x);
    let wd = to_rows(&st.tensors[5]);
    let wr = to_rows(&st.tensors[6]);
    let a = matvec(x.row(1), &wd);
    let b = matvec(x.row(1), &wr);
    assert!((out.at(0, 0) - a[0]).abs() < 1e-12 && (out.at(0, 1) - a[1]).abs() < 1e-12);
    assert!((out.at(2, 0) - b[0]).abs() < 1e-12 && (out.at(2, 1) - b[1]).abs() < 1e-12);

    st.tensors.swap(5, 6);
    let swapped = lib_gnn(&st, &s, &x);
    assert!((swapped.at(0, 0) - out.at(2, 0)).abs() < 1e-12);
    assert!((swapped.at(2, 1) - out.at(0, 1)).abs() < 1e-12);

    let mut st = setup(AdapterKind::Rgcn, 2, 2, 7);
    st.tensors[6] = Tensor::zeros(&[2, 2]);
    let direct_only = GraphStructure { n: 3, edges: s.edges.iter().copied().filter(|e| e.kind == EdgeKind::Direct).collect() };
    assert!(lib_gnn(&st, &s, &x).max_abs_diff(&lib_gnn(&st, &direct_only, &x)) < 1e-12);
}

#[test]
fn rgcn_only_self_loops() {
    let s = GraphStructure::edgeless(3);
    let st = setup(AdapterKind::Rgcn, 3, 2, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = rand_matrix(&mut rng, 3, 3);
    let out = lib_gnn(&st, &s, &x);
    let ws = to_rows(&st.tensors[7]);
    for u in 0..3 {
        let z = matvec(x.row(u), &ws);
        for j in 0..2 {
            assert!((out.at(u, j) - relu(z[j] + st.tensors[2].data()[j])).abs() < 1e-12);
        }
    }
}

#[test]
fn zero_up_projection_is_identity() {
    let s = graph(4, &[(0, 1), (1, 2), (3, 1)]);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let h = rand_matrix(&mut rng, 4, 3);
    for kind in AdapterKind::ALL {
        let mut st = setup(kind, 3, 2, 12);
        st.tensors[3] = Tensor::zeros(&[2, 3]);
        st.tensors[4] = Tensor::zeros(&[3]);
        assert_eq!(lib_adapter(&st, &s, &h), h, "{kind:?}");
    }
}

#[test]
fn edgeless_gcn_matches_tied_mlp() {
    let s = GraphStructure::edgeless(5);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let h = rand_matrix(&mut rng, 5, 4);
    let gcn = setup(AdapterKind::Gcn, 4, 3, 14);
    let mut mlp = setup(AdapterKind::Mlp, 4, 3, 99);
    mlp.tensors = gcn.tensors.clone();
    assert!(lib_adapter(&gcn, &s, &h).max_abs_diff(&lib_adapter(&mlp, &s, &h)) < 1e-12);
}

#[test]
fn mlp_is_position_wise() {
    let s = GraphStructure::edgeless(4);
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let h = rand_matrix(&mut rng, 4, 3);
    let st = setup(AdapterKind::Mlp, 3, 2, 16);
    let out = lib_adapter(&st, &s, &h);
    let perm = [2, 0, 3, 1];
    let hp = Tensor::from_rows(&perm.iter().map(|&i| h.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
    let outp = lib_adapter(&st, &s, &hp);
    for (k, &i) in perm.iter().enumerate() {
        assert_eq!(outp.row(k), out.row(i));
    }
}

#[test]
fn adapters_pass_gradient_checks() {
    for kind in AdapterKind::ALL {
        let err = adapter_grad_error(kind);
        assert!(err < 1e-4, "{kind:?}: {err}");
    }
}

#[test]
fn gnn_errors_on_isolated_nodes_without_self_loops() {
    let s = graph(3, &[(0, 1)]);
    for kind in [AdapterKind::Gcn, AdapterKind::Gat] {
        let mut spec = AdapterSpec::new(kind, 2);
        spec.self_loops = false;
        assert!(GraphOperator::<f64>::build(&spec, &s).is_err());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn gnns_are_permutation_equivariant(n in 2usize..6, mask in any::<u64>(), seed in 0u64..1000, rot in 1usize..5) {
        let s = random_graph(n, mask);
        let perm: Vec<usize> = (0..n).map(|i| (i * 7 + rot) % n).collect();
        prop_assume!({ let mut p = perm.clone(); p.sort(); p == (0..n).collect::<Vec<_>>() });
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_matrix(&mut rng, n, 3);
        // Row i of x moves to row perm[i].
        let mut xp_rows = vec![Vec::new(); n];
        for i in 0..n { xp_rows[perm[i]] = x.row(i).to_vec(); }
        let xp = Tensor::from_rows(&xp_rows).unwrap();
        let sp = s.permuted(&perm);
        for kind in [AdapterKind::Gcn, AdapterKind::Gat, AdapterKind::Rgcn] {
            let st = setup(kind, 3, 2, seed + 1);
            let a = lib_gnn(&st, &s, &x);
            let b = lib_gnn(&st, &sp, &xp);
            for i in 0..n {
                for (p, q) in a.row(i).iter().zip(b.row(perm[i])) {
                    prop_assert!((p - q).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn gnn_updates_are_local(n in 3usize..6, mask in any::<u64>(), seed in 0u64..1000, node in 0usize..6) {
        let s = random_graph(n, mask);
        let v = node % n;
        let adj = dense_untyped(&s, true);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_matrix(&mut rng, n, 3);
        let mut x2 = x.clone();
        for j in 0..3 { x2.data_mut()[v * 3 + j] += 1.5; }
        for kind in [AdapterKind::Gcn, AdapterKind::Gat, AdapterKind::Rgcn] {
            let st = setup(kind, 3, 2, seed + 2);
            let a = lib_gnn(&st, &s, &x);
            let b = lib_gnn(&st, &s, &x2);
            for u in 0..n {
                if !adj[u][v] {
                    prop_assert_eq!(a.row(u), b.row(u));
                }
            }
        }
    }

    #[test]
    fn rgcn_transpose_with_swapped_weights(n in 2usize..6, mask in any::<u64>(), seed in 0u64..1000) {
        let s = random_graph(n, mask);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_matrix(&mut rng, n, 3);
        let st = setup(AdapterKind::Rgcn, 3, 2, seed + 3);
        let mut swapped = setup(AdapterKind::Rgcn, 3, 2, seed + 3);
        swapped.tensors.swap(5, 6);
        let a = lib_gnn(&st, &s, &x);
        let b = lib_gnn(&swapped, &s.transposed(), &x);
        prop_assert!(a.max_abs_diff(&b) < 1e-12);
    }
}
