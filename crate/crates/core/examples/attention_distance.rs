//! W1 distance of attention rows to the graph and to a uniform row.

use rpelab::graphcore::{EdgeKind, GraphStructure, TokenEdge};
use rpelab::probelab::{attention_distance_report, heatmap_csv, normalize_adj, w1, AttentionDump, AttentionSample};
use tensorkit::Tensor;

fn main() -> rpelab::Result<()> {
    println!("{:?}", normalize_adj(&[vec![0, 1, 1], vec![1, 1, 1], vec![0, 0, 1]]));
    println!("w1([1,0,0], [0,0,1]) = {}", w1(&[1.0, 0.0, 0.0], &[0.0, 0.0, 1.0])?);

    // A 3-token chain; head 0 attends along the edges, head 1 to itself.
    let edges = [(0, 1), (1, 2)]
        .iter()
        .flat_map(|&(u, v)| [TokenEdge { src: u, dst: v, kind: EdgeKind::Direct }, TokenEdge { src: v, dst: u, kind: EdgeKind::Reverse }])
        .collect();
    let g = GraphStructure { n: 3, edges };
    let along = [0.0, 1.0, 0.0, 0.5, 0.0, 0.5, 0.0, 1.0, 0.0];
    let own = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
    let data: Vec<f32> = along.iter().chain(&own).copied().collect();
    let dump = AttentionDump {
        heads: 2,
        samples: vec![AttentionSample { id: "chain".into(), layers: vec![Tensor::new(&[2, 3, 3], data)?] }],
    };
    let r = attention_distance_report(&dump, &[g], false)?;
    print!("to adjacency\n{}to uniform\n{}", heatmap_csv(&r.to_adjacency), heatmap_csv(&r.to_uniform));
    Ok(())
}
