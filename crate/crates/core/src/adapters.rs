//! Bottleneck adapters: the vanilla MLP adapter and the structural variants
//! whose down-projection is a single GCN, GAT or RGCN layer over the token
//! graph.
//!
//! ```text
//! mlp:    h + W_up · relu(W_down · LN(h) + b) + b_up
//! struct: h + W_up · GNN(LN(h), A) + b_up
//! ```

use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use tensorkit::{lit, Float, Graph, Neighborhoods, SparseMatrix, Tensor, Var};

use crate::error::{LabError, Result};
use crate::graphcore::{EdgeKind, GraphStructure, TokenEdge};
use crate::params::{Ctx, Init, ParamStore};

pub const GAT_SLOPE: f64 = 0.2;
pub const LN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdapterKind {
    Mlp,
    Gcn,
    Gat,
    Rgcn,
}

impl AdapterKind {
    pub const ALL: [AdapterKind; 4] = [AdapterKind::Mlp, AdapterKind::Gcn, AdapterKind::Gat, AdapterKind::Rgcn];

    pub fn name(self) -> &'static str {
        match self {
            AdapterKind::Mlp => "mlp",
            AdapterKind::Gcn => "gcn",
            AdapterKind::Gat => "gat",
            AdapterKind::Rgcn => "rgcn",
        }
    }

    pub fn uses_graph(self) -> bool {
        self != AdapterKind::Mlp
    }
}

impl FromStr for AdapterKind {
    type Err = LabError;
    fn from_str(s: &str) -> Result<Self> {
        AdapterKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| LabError::Config(format!("unknown adapter kind '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GcnNorm {
    /// `1 / (deg(u) · deg(v))`
    Paper,
    /// `1 / sqrt(deg(u) · deg(v))`
    SymmetricSqrt,
}

impl FromStr for GcnNorm {
    type Err = LabError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(GcnNorm::Paper),
            "symmetric_sqrt" => Ok(GcnNorm::SymmetricSqrt),
            _ => Err(LabError::Config(format!("unknown gcn_norm '{s}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AdapterSpec {
    pub kind: AdapterKind,
    pub bottleneck: usize,
    pub gcn_norm: GcnNorm,
    pub self_loops: bool,
    pub activation: Activation,
}

impl AdapterSpec {
    pub fn new(kind: AdapterKind, bottleneck: usize) -> Self {
        AdapterSpec { kind, bottleneck, gcn_norm: GcnNorm::Paper, self_loops: true, activation: Activation::Relu }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bottleneck == 0 {
            return Err(LabError::Config("adapter bottleneck must be at least 1".into()));
        }
        Ok(())
    }

    /// Parameter names (relative to the adapter prefix), shapes and initial
    /// distributions. `W_up` starts at zero so a fresh adapter is the identity.
    pub fn param_shapes(&self, d_model: usize) -> Vec<(&'static str, Vec<usize>, Init)> {
        let dg = self.bottleneck;
        let std_in = 1.0 / (d_model as f64).sqrt();
        let mut out = vec![
            ("ln.gamma", vec![d_model], Init::Ones),
            ("ln.beta", vec![d_model], Init::Zeros),
            ("down.b", vec![dg], Init::Zeros),
            ("up.w", vec![dg, d_model], Init::Zeros),
            ("up.b", vec![d_model], Init::Zeros),
        ];
        match self.kind {
            AdapterKind::Mlp | AdapterKind::Gcn => out.push(("down.w", vec![d_model, dg], Init::Normal(std_in))),
            AdapterKind::Gat => {
                out.push(("down.w", vec![d_model, dg], Init::Normal(std_in)));
                out.push(("att", vec![2 * dg], Init::Normal(1.0 / (2.0 * dg as f64).sqrt())));
            }
            AdapterKind::Rgcn => {
                out.push(("rel.direct.w", vec![d_model, dg], Init::Normal(std_in)));
                out.push(("rel.reverse.w", vec![d_model, dg], Init::Normal(std_in)));
                if self.self_loops {
                    out.push(("rel.self.w", vec![d_model, dg], Init::Normal(std_in)));
                }
            }
        }
        out
    }

    pub fn init<F: Float>(&self, store: &mut ParamStore<F>, prefix: &str, d_model: usize, rng: &mut impl rand::Rng) {
        for (name, shape, init) in self.param_shapes(d_model) {
            store.insert(format!("{prefix}.{name}"), init.sample(&shape, rng));
        }
    }
}

/// Tape handles of one adapter's parameters.
#[derive(Clone, Copy, Debug)]
pub struct AdapterVars {
    pub ln_gamma: Var,
    pub ln_beta: Var,
    pub down_b: Var,
    pub up_w: Var,
    pub up_b: Var,
    /// `W` for MLP/GCN/GAT.
    pub down_w: Option<Var>,
    pub att: Option<Var>,
    /// `[W_direct, W_reverse, W_self]`.
    pub rel_w: Option<[Option<Var>; 3]>,
}

impl AdapterVars {
    pub fn bind<F: Float>(ctx: &mut Ctx<'_, F>, prefix: &str, spec: &AdapterSpec) -> Result<Self> {
        let mut p = |n: &str| ctx.p(&format!("{prefix}.{n}"));
        let mut vars = AdapterVars {
            ln_gamma: p("ln.gamma")?,
            ln_beta: p("ln.beta")?,
            down_b: p("down.b")?,
            up_w: p("up.w")?,
            up_b: p("up.b")?,
            down_w: None,
            att: None,
            rel_w: None,
        };
        match spec.kind {
            AdapterKind::Mlp | AdapterKind::Gcn => vars.down_w = Some(p("down.w")?),
            AdapterKind::Gat => {
                vars.down_w = Some(p("down.w")?);
                vars.att = Some(p("att")?);
            }
            AdapterKind::Rgcn => {
                let s = if spec.self_loops { Some(p("rel.self.w")?) } else { None };
                vars.rel_w = Some([Some(p("rel.direct.w")?), Some(p("rel.reverse.w")?), s]);
            }
        }
        Ok(vars)
    }
}

/// Normalized message-passing operator of one adapter kind over a fixed graph.
#[derive(Clone, Debug)]
pub enum GraphOperator<F> {
    None,
    Gcn(Arc<SparseMatrix<F>>),
    Gat(Arc<Neighborhoods>),
    /// Per relation `[direct, reverse, self]`; `None` when the relation is absent.
    Rgcn([Option<Arc<SparseMatrix<F>>>; 3]),
}

/// Block-diagonal union of several graphs, offsetting positions.
pub fn pack_structures(parts: &[&GraphStructure]) -> GraphStructure {
    let mut edges = Vec::new();
    let mut offset = 0;
    for s in parts {
        edges.extend(s.edges.iter().map(|e| TokenEdge { src: e.src + offset, dst: e.dst + offset, kind: e.kind }));
        offset += s.n;
    }
    GraphStructure { n: offset, edges }
}

/// `1/(deg(u)·deg(v))` or `1/sqrt(deg(u)·deg(v))` weights over the
/// symmetrized neighbourhoods; degrees count the self-loop when present.
pub fn gcn_coefficients(s: &GraphStructure, norm: GcnNorm, self_loops: bool) -> Result<Vec<(usize, usize, f64)>> {
    let nb = s.undirected_neighbors(self_loops);
    if let Some(u) = nb.iter().position(Vec::is_empty) {
        return Err(LabError::Shape(format!("node {u} is isolated and self-loops are off; GCN degree is zero")));
    }
    let deg: Vec<f64> = nb.iter().map(|l| l.len() as f64).collect();
    let mut out = Vec::new();
    for (u, list) in nb.iter().enumerate() {
        for &v in list {
            let c = match norm {
                GcnNorm::Paper => 1.0 / (deg[u] * deg[v]),
                GcnNorm::SymmetricSqrt => 1.0 / (deg[u] * deg[v]).sqrt(),
            };
            out.push((u, v, c));
        }
    }
    Ok(out)
}

/// Mean-aggregation weights `1/|N_r(u)|` for each relation.
pub fn rgcn_coefficients(s: &GraphStructure, self_loops: bool) -> [Vec<(usize, usize, f64)>; 3] {
    let rel = |kind: EdgeKind| {
        let mut out = Vec::new();
        for (u, list) in s.typed_neighbors(kind).iter().enumerate() {
            let c = 1.0 / list.len() as f64;
            out.extend(list.iter().map(|&v| (u, v, c)));
        }
        out
    };
    let selfs = if self_loops { (0..s.n).map(|u| (u, u, 1.0)).collect() } else { Vec::new() };
    [rel(EdgeKind::Direct), rel(EdgeKind::Reverse), selfs]
}

fn sparse<F: Float>(n: usize, trip: &[(usize, usize, f64)]) -> Result<Arc<SparseMatrix<F>>> {
    let t: Vec<(usize, usize, F)> = trip.iter().map(|&(u, v, c)| (u, v, lit(c))).collect();
    Ok(Arc::new(SparseMatrix::from_triplets(n, n, &t)?))
}

impl<F: Float> GraphOperator<F> {
    pub fn build(spec: &AdapterSpec, s: &GraphStructure) -> Result<Self> {
        Ok(match spec.kind {
            AdapterKind::Mlp => GraphOperator::None,
            AdapterKind::Gcn => GraphOperator::Gcn(sparse(s.n, &gcn_coefficients(s, spec.gcn_norm, spec.self_loops)?)?),
            AdapterKind::Gat => {
                let nb = s.undirected_neighbors(spec.self_loops);
                if let Some(u) = nb.iter().position(Vec::is_empty) {
                    return Err(LabError::Shape(format!("node {u} has an empty neighbourhood and self-loops are off")));
                }
                GraphOperator::Gat(Arc::new(Neighborhoods::from_lists(&nb)?))
            }
            AdapterKind::Rgcn => {
                let [d, r, sl] = rgcn_coefficients(s, spec.self_loops);
                let mk = |t: &[(usize, usize, f64)]| -> Result<Option<Arc<SparseMatrix<F>>>> {
                    if t.is_empty() {
                        Ok(None)
                    } else {
                        sparse(s.n, t).map(Some)
                    }
                };
                GraphOperator::Rgcn([mk(&d)?, mk(&r)?, mk(&sl)?])
            }
        })
    }

    fn check_rows(&self, n: usize) -> Result<()> {
        let m = match self {
            GraphOperator::None => return Ok(()),
            GraphOperator::Gcn(a) => a.rows(),
            GraphOperator::Gat(h) => h.len(),
            GraphOperator::Rgcn(rs) => match rs.iter().flatten().next() {
                Some(a) => a.rows(),
                None => return Ok(()),
            },
        };
        if m != n {
            return Err(LabError::Shape(format!("adapter graph has {m} nodes but the states have {n} rows")));
        }
        Ok(())
    }
}

fn activate<F: Float>(g: &mut Graph<F>, x: Var, act: Activation) -> Var {
    match act {
        Activation::Relu => g.relu(x),
        Activation::Identity => x,
    }
}

/// Bottleneck `[n, d_g]` produced from already normalized inputs `x: [n, d_model]`.
pub fn gnn<F: Float>(g: &mut Graph<F>, x: Var, vars: &AdapterVars, spec: &AdapterSpec, op: &GraphOperator<F>) -> Result<Var> {
    let missing = || LabError::Config(format!("{} adapter parameters incomplete", spec.kind.name()));
    let pre = match (spec.kind, op) {
        (AdapterKind::Mlp, _) => g.linear(x, vars.down_w.ok_or_else(missing)?, Some(vars.down_b))?,
        (AdapterKind::Gcn, GraphOperator::Gcn(a)) => {
            let z = g.matmul(x, vars.down_w.ok_or_else(missing)?)?;
            let agg = g.spmm(a.clone(), z)?;
            g.add_row(agg, vars.down_b)?
        }
        (AdapterKind::Gat, GraphOperator::Gat(hood)) => {
            let z = g.matmul(x, vars.down_w.ok_or_else(missing)?)?;
            let agg = g.gat_aggregate(z, vars.att.ok_or_else(missing)?, hood.clone(), lit(GAT_SLOPE))?;
            g.add_row(agg, vars.down_b)?
        }
        (AdapterKind::Rgcn, GraphOperator::Rgcn(rel)) => {
            let ws = vars.rel_w.ok_or_else(missing)?;
            let mut acc: Option<Var> = None;
            for (a, w) in rel.iter().zip(ws) {
                let (Some(a), Some(w)) = (a, w) else { continue };
                let z = g.matmul(x, w)?;
                let m = g.spmm(a.clone(), z)?;
                acc = Some(match acc {
                    Some(prev) => g.add(prev, m)?,
                    None => m,
                });
            }
            match acc {
                Some(sum) => g.add_row(sum, vars.down_b)?,
                None => {
                    let n = g.value(x).rows();
                    let zeros = g.input(Tensor::zeros(&[n, spec.bottleneck]));
                    g.add_row(zeros, vars.down_b)?
                }
            }
        }
        (kind, _) => {
            return Err(LabError::Config(format!("{} adapter given a mismatched graph operator", kind.name())));
        }
    };
    Ok(activate(g, pre, spec.activation))
}

/// Residual adapter over `h: [n, d_model]`.
pub fn adapter_forward<F: Float>(
    g: &mut Graph<F>,
    h: Var,
    vars: &AdapterVars,
    spec: &AdapterSpec,
    op: &GraphOperator<F>,
) -> Result<Var> {
    op.check_rows(g.value(h).rows())?;
    let x = g.layer_norm(h, vars.ln_gamma, vars.ln_beta, lit(LN_EPS))?;
    let b = gnn(g, x, vars, spec, op)?;
    let up = g.linear(b, vars.up_w, Some(vars.up_b))?;
    Ok(g.add(h, up)?)
}
