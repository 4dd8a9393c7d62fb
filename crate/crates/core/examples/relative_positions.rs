//! Relative position buckets and the per-head bias they index.

use rpelab::seq2seq::{rel_bucket, ModelSpec};

fn main() {
    let deltas = [-40i64, -9, -4, -1, 0, 1, 4, 9, 40];
    println!("{:>6} {:>13} {:>14}", "delta", "bidirectional", "unidirectional");
    for d in deltas {
        println!("{d:>6} {:>13} {:>14}", rel_bucket(d, 32, 128, true), rel_bucket(d, 32, 128, false));
    }

    let spec = ModelSpec { rpe_buckets: 8, rpe_max_distance: 16, ..ModelSpec::desk(100) };
    let rb = spec.encoder_bias();
    let table: Vec<f32> = (0..spec.n_heads * 8).map(|i| i as f32 / 10.0).collect();
    println!("\nhead 0 bias over 5 positions:");
    for row in rb.matrix(&table, 0, &[0, 1, 2, 3, 4]) {
        println!("{}", row.iter().map(|v| format!("{v:5.1}")).collect::<String>());
    }
    println!("same matrix after shifting every position by 7: {}", rb.matrix(&table, 0, &[7, 8, 9, 10, 11]) == rb.matrix(&table, 0, &[0, 1, 2, 3, 4]));
}
