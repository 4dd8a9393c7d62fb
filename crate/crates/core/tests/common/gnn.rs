//! Dense reference implementations of the GNN adapters and a harness
//! around the library versions.
#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rpelab::adapters::*;
use rpelab::graphcore::{EdgeKind, GraphStructure, TokenEdge};
use rpelab::params::Init;
use tensorkit::{grad_check_many, Graph, Tensor, Var};

pub type M = Vec<Vec<f64>>;

pub fn edge(src: usize, dst: usize, kind: EdgeKind) -> TokenEdge {
    TokenEdge { src, dst, kind }
}

/// Direct edge plus its reverse, as the token graph emits them.
pub fn pair(u: usize, v: usize) -> [TokenEdge; 2] {
    [edge(u, v, EdgeKind::Direct), edge(v, u, EdgeKind::Reverse)]
}

pub fn graph(n: usize, links: &[(usize, usize)]) -> GraphStructure {
    GraphStructure { n, edges: links.iter().flat_map(|&(u, v)| pair(u, v)).collect() }
}

pub fn rand_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor<f64> {
    Init::Normal(0.7).sample(&[r, c], rng)
}

pub fn to_rows(t: &Tensor<f64>) -> M {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

pub fn matvec(x: &[f64], w: &M) -> Vec<f64> {
    (0..w[0].len()).map(|j| x.iter().zip(w).map(|(a, row)| a * row[j]).sum()).collect()
}

pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

// ----- independent dense oracles ------------------------------------------

pub fn dense_untyped(s: &GraphStructure, self_loops: bool) -> Vec<Vec<bool>> {
    let mut a = vec![vec![false; s.n]; s.n];
    for e in &s.edges {
        if e.src != e.dst {
            a[e.src][e.dst] = true;
            a[e.dst][e.src] = true;
        }
    }
    if self_loops {
        for (i, row) in a.iter_mut().enumerate() {
            row[i] = true;
        }
    }
    a
}

pub fn oracle_gcn(g: &M, w: &M, b: &[f64], s: &GraphStructure, paper: bool, act: fn(f64) -> f64) -> M {
    let a = dense_untyped(s, true);
    let deg: Vec<f64> = a.iter().map(|r| r.iter().filter(|&&x| x).count() as f64).collect();
    (0..s.n)
        .map(|u| {
            let mut acc = b.to_vec();
            for v in 0..s.n {
                if a[u][v] {
                    let c = if paper { 1.0 / (deg[u] * deg[v]) } else { 1.0 / (deg[u] * deg[v]).sqrt() };
                    for (o, z) in acc.iter_mut().zip(matvec(&g[v], w)) {
                        *o += c * z;
                    }
                }
            }
            acc.into_iter().map(act).collect()
        })
        .collect()
}

pub fn oracle_gat(g: &M, w: &M, att: &[f64], b: &[f64], s: &GraphStructure) -> M {
    let a = dense_untyped(s, true);
    let z: M = g.iter().map(|x| matvec(x, w)).collect();
    let d = w[0].len();
    (0..s.n)
        .map(|u| {
            let nb: Vec<usize> = (0..s.n).filter(|&v| a[u][v]).collect();
            let e: Vec<f64> = nb
                .iter()
                .map(|&v| {
                    let raw: f64 = (0..d).map(|j| att[j] * z[u][j] + att[d + j] * z[v][j]).sum();
                    if raw > 0.0 {
                        raw
                    } else {
                        0.2 * raw
                    }
                })
                .collect();
            let total: f64 = e.iter().map(|x| x.exp()).sum();
            let mut acc = b.to_vec();
            for (k, &v) in nb.iter().enumerate() {
                let alpha = e[k].exp() / total;
                for j in 0..d {
                    acc[j] += alpha * z[v][j];
                }
            }
            acc.into_iter().map(relu).collect()
        })
        .collect()
}

pub fn oracle_rgcn(g: &M, ws: [&M; 3], b: &[f64], s: &GraphStructure, act: fn(f64) -> f64) -> M {
    let kinds = [Some(EdgeKind::Direct), Some(EdgeKind::Reverse), None];
    (0..s.n)
        .map(|u| {
            let mut acc = b.to_vec();
            for (kind, w) in kinds.iter().zip(ws) {
                let mut nb: Vec<usize> = match kind {
                    Some(k) => s.edges.iter().filter(|e| e.src == u && e.kind == *k).map(|e| e.dst).collect(),
                    None => vec![u],
                };
                nb.sort();
                nb.dedup();
                for &v in &nb {
                    for (o, z) in acc.iter_mut().zip(matvec(&g[v], w)) {
                        *o += z / nb.len() as f64;
                    }
                }
            }
            acc.into_iter().map(act).collect()
        })
        .collect()
}

pub fn max_diff(a: &M, b: &M) -> f64 {
    a.iter().flatten().zip(b.iter().flatten()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

// ----- harness around the library gnn ------------------------------------

pub struct Setup {
    pub spec: AdapterSpec,
    pub tensors: Vec<Tensor<f64>>,
}

/// Parameters laid out as [ln_gamma, ln_beta, down_b, up_w, up_b, extra...].
pub fn setup(kind: AdapterKind, d_model: usize, dg: usize, seed: u64) -> Setup {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = AdapterSpec::new(kind, dg);
    let mut tensors = vec![
        Tensor::from_fn(&[d_model], |i| 1.0 + 0.1 * i as f64),
        Tensor::from_fn(&[d_model], |i| 0.05 * i as f64),
        Init::Normal(0.3).sample(&[dg], &mut rng),
        rand_matrix(&mut rng, dg, d_model),
        Init::Normal(0.3).sample(&[d_model], &mut rng),
    ];
    match kind {
        AdapterKind::Mlp | AdapterKind::Gcn => tensors.push(rand_matrix(&mut rng, d_model, dg)),
        AdapterKind::Gat => {
            tensors.push(rand_matrix(&mut rng, d_model, dg));
            tensors.push(Init::Normal(0.7).sample(&[2 * dg], &mut rng));
        }
        AdapterKind::Rgcn => {
            for _ in 0..3 {
                tensors.push(rand_matrix(&mut rng, d_model, dg));
            }
        }
    }
    Setup { spec, tensors }
}

pub fn vars_from(kind: AdapterKind, v: &[Var]) -> AdapterVars {
    let mut out = AdapterVars {
        ln_gamma: v[0],
        ln_beta: v[1],
        down_b: v[2],
        up_w: v[3],
        up_b: v[4],
        down_w: None,
        att: None,
        rel_w: None,
    };
    match kind {
        AdapterKind::Mlp | AdapterKind::Gcn => out.down_w = Some(v[5]),
        AdapterKind::Gat => {
            out.down_w = Some(v[5]);
            out.att = Some(v[6]);
        }
        AdapterKind::Rgcn => out.rel_w = Some([Some(v[5]), Some(v[6]), Some(v[7])]),
    }
    out
}

/// Bottleneck output of the library GNN on raw (un-normalized) features.
pub fn lib_gnn(st: &Setup, s: &GraphStructure, x: &Tensor<f64>) -> Tensor<f64> {
    let mut g = Graph::new();
    let vars: Vec<Var> = st.tensors.iter().map(|t| g.input(t.clone())).collect();
    let av = vars_from(st.spec.kind, &vars);
    let xv = g.input(x.clone());
    let op = GraphOperator::build(&st.spec, s).unwrap();
    let out = gnn(&mut g, xv, &av, &st.spec, &op).unwrap();
    g.value(out).clone()
}

pub fn lib_adapter(st: &Setup, s: &GraphStructure, h: &Tensor<f64>) -> Tensor<f64> {
    let mut g = Graph::new();
    let vars: Vec<Var> = st.tensors.iter().map(|t| g.input(t.clone())).collect();
    let av = vars_from(st.spec.kind, &vars);
    let hv = g.input(h.clone());
    let op = GraphOperator::build(&st.spec, s).unwrap();
    let out = adapter_forward(&mut g, hv, &av, &st.spec, &op).unwrap();
    g.value(out).clone()
}

pub fn small_graphs() -> Vec<GraphStructure> {
    vec![
        graph(2, &[(0, 1)]),
        graph(3, &[(0, 1), (1, 2)]),
        graph(4, &[(0, 1), (1, 2), (3, 1)]),
        graph(4, &[(0, 1), (2, 1), (2, 3), (0, 3)]),
    ]
}

pub fn random_graph(n: usize, mask: u64) -> GraphStructure {
    let mut links = Vec::new();
    let mut bit = 0;
    for u in 0..n {
        for v in 0..n {
            if u != v {
                if mask >> (bit % 64) & 1 == 1 {
                    links.push((u, v));
                }
                bit += 1;
            }
        }
    }
    graph(n, &links)
}


/// Largest gap between library and dense oracle outputs for GCN (both
/// normalizations), GAT and RGCN over the small graphs.
pub fn max_oracle_gap() -> f64 {
    let mut worst: f64 = 0.0;
    for (i, s) in small_graphs().iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(10 + i as u64);
        let x = rand_matrix(&mut rng, s.n, 3);
        let xr = to_rows(&x);
        for paper in [true, false] {
            let mut st = setup(AdapterKind::Gcn, 3, 2, 20 + i as u64);
            if !paper {
                st.spec.gcn_norm = GcnNorm::SymmetricSqrt;
            }
            let want = oracle_gcn(&xr, &to_rows(&st.tensors[5]), st.tensors[2].data(), s, paper, relu);
            worst = worst.max(max_diff(&to_rows(&lib_gnn(&st, s, &x)), &want));
        }
        let st = setup(AdapterKind::Gat, 3, 2, 30 + i as u64);
        let want = oracle_gat(&xr, &to_rows(&st.tensors[5]), st.tensors[6].data(), st.tensors[2].data(), s);
        worst = worst.max(max_diff(&to_rows(&lib_gnn(&st, s, &x)), &want));
        let st = setup(AdapterKind::Rgcn, 3, 2, 40 + i as u64);
        let ws = [to_rows(&st.tensors[5]), to_rows(&st.tensors[6]), to_rows(&st.tensors[7])];
        let want = oracle_rgcn(&xr, [&ws[0], &ws[1], &ws[2]], st.tensors[2].data(), s, relu);
        worst = worst.max(max_diff(&to_rows(&lib_gnn(&st, s, &x)), &want));
    }
    worst
}

/// Finite-difference error of the full adapter forward, per kind.
pub fn adapter_grad_error(kind: AdapterKind) -> f64 {
    let s = graph(4, &[(0, 1), (1, 2), (3, 1)]);
    let st = setup(kind, 3, 2, 17);
    let op = GraphOperator::<f64>::build(&st.spec, &s).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let h = rand_matrix(&mut rng, 4, 3);
    let proj = rand_matrix(&mut rng, 4, 3);
    let mut inputs = st.tensors.clone();
    inputs.push(h);
    let spec = st.spec;
    grad_check_many(
        |g, v| {
            let av = vars_from(kind, v);
            let out = adapter_forward(g, v[v.len() - 1], &av, &spec, &op).map_err(|e| match e {
                rpelab::LabError::Tensor(t) => t,
                other => tensorkit::TensorError::Invalid(other.to_string()),
            })?;
            let p = g.input(proj.clone());
            let y = g.mul(out, p)?;
            Ok(g.sum(y))
        },
        &inputs,
        1e-5,
    )
    .unwrap()
}
