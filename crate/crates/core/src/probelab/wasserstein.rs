use crate::error::{LabError, Result};
use crate::graphcore::{adjacency, GraphStructure};

use super::dump::AttentionDump;

/// Row-normalize a binary matrix. An all-zero row becomes a point mass on
/// its diagonal entry.
pub fn normalize_adj(a: &[Vec<u8>]) -> Vec<Vec<f64>> {
    a.iter()
        .enumerate()
        .map(|(i, row)| {
            let s: f64 = row.iter().map(|&x| (x != 0) as u8 as f64).sum();
            if s == 0.0 {
                (0..row.len()).map(|j| if j == i { 1.0 } else { 0.0 }).collect()
            } else {
                row.iter().map(|&x| (x != 0) as u8 as f64 / s).collect()
            }
        })
        .collect()
}

const MASS_TOLERANCE: f64 = 1e-6;

fn check_distribution(p: &[f64], name: &str) -> Result<()> {
    if p.iter().any(|&x| !(x >= 0.0)) {
        return Err(LabError::Data(format!("{name} has a negative or non-finite entry")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > MASS_TOLERANCE {
        return Err(LabError::Data(format!("{name} sums to {s}, not 1")));
    }
    Ok(())
}

/// 1-Wasserstein distance between two distributions over positions
/// `0..n`, unit cost between neighbouring positions: `Σ_j |P(j) - Q(j)|`
/// over the cumulative sums.
pub fn w1(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(LabError::Data(format!("distributions over {} and {} positions", p.len(), q.len())));
    }
    check_distribution(p, "p")?;
    check_distribution(q, "q")?;
    let (mut cp, mut cq, mut d) = (0.0, 0.0, 0.0);
    for (a, b) in p.iter().zip(q) {
        cp += a;
        cq += b;
        d += (cp - cq).abs();
    }
    // The final cumulative difference is rounding noise of two unit masses.
    d -= (cp - cq).abs();
    Ok(d)
}

/// Two `layers × heads` matrices of mean W1 distances: attention rows to
/// the row-normalized adjacency, and attention rows to the uniform row.
/// Each entry averages over the tokens of a sample, then over samples.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceReport {
    pub to_adjacency: Vec<Vec<f64>>,
    pub to_uniform: Vec<Vec<f64>>,
}

impl DistanceReport {
    pub fn mean_to_adjacency(&self) -> f64 {
        mean_all(&self.to_adjacency)
    }

    pub fn mean_to_uniform(&self) -> f64 {
        mean_all(&self.to_uniform)
    }
}

fn mean_all(m: &[Vec<f64>]) -> f64 {
    let n: usize = m.iter().map(|r| r.len()).sum();
    m.iter().flatten().sum::<f64>() / n.max(1) as f64
}

/// `graphs[s]` must describe the tokens of `attn.samples[s]`. The adjacency
/// is untyped; `self_loops` adds the diagonal before normalizing.
pub fn attention_distance_report(attn: &AttentionDump, graphs: &[GraphStructure], self_loops: bool) -> Result<DistanceReport> {
    if attn.samples.len() != graphs.len() || attn.samples.is_empty() {
        return Err(LabError::Data(format!(
            "{} attention samples for {} graphs",
            attn.samples.len(),
            graphs.len()
        )));
    }
    let layers = attn.samples[0].layers.len();
    let heads = attn.heads;
    let mut to_adj = vec![vec![0.0; heads]; layers];
    let mut to_uni = vec![vec![0.0; heads]; layers];
    for (s, g) in attn.samples.iter().zip(graphs) {
        let n = s.n();
        if n != g.n || s.layers.len() != layers {
            return Err(LabError::Data(format!("sample {}: attention over {n} tokens, graph over {}", s.id, g.n)));
        }
        let a_tilde = normalize_adj(&adjacency(g, false, self_loops).binary());
        let uniform = vec![1.0 / n as f64; n];
        for l in 0..layers {
            for h in 0..heads {
                let (mut da, mut du) = (0.0, 0.0);
                for q in 0..n {
                    let row: Vec<f64> = s.row(l, h, q).iter().map(|&x| x as f64).collect();
                    let row = renormalize(row);
                    da += w1(&row, &a_tilde[q])?;
                    du += w1(&row, &uniform)?;
                }
                to_adj[l][h] += da / n as f64;
                to_uni[l][h] += du / n as f64;
            }
        }
    }
    let count = attn.samples.len() as f64;
    for m in [&mut to_adj, &mut to_uni] {
        for row in m.iter_mut() {
            for v in row.iter_mut() {
                *v /= count;
            }
        }
    }
    Ok(DistanceReport { to_adjacency: to_adj, to_uniform: to_uni })
}

/// Rescale single-precision probabilities so they sum to one in f64.
fn renormalize(mut row: Vec<f64>) -> Vec<f64> {
    let s: f64 = row.iter().sum();
    if s > 0.0 {
        row.iter_mut().for_each(|x| *x /= s);
    }
    row
}

/// Layers as rows, heads as columns.
pub fn heatmap_csv(m: &[Vec<f64>]) -> String {
    let heads = m.first().map_or(0, |r| r.len());
    let mut s = String::from("layer");
    for h in 0..heads {
        s.push_str(&format!(",head{}", h + 1));
    }
    s.push('\n');
    for (l, row) in m.iter().enumerate() {
        s.push_str(&format!("{}", l + 1));
        for v in row {
            s.push_str(&format!(",{v:.6}"));
        }
        s.push('\n');
    }
    s
}
