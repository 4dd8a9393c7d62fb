//! The four adapter kinds on one encoder: parameter counts, aggregation
//! coefficients and how far each moves the hidden states.

use rpelab::adapters::{gcn_coefficients, AdapterKind, GcnNorm};
use rpelab::graphcore::{EdgeKind, GraphStructure, TokenEdge};
use rpelab::params::{frozen, Ctx, Init, ADAPTER, BACKBONE};
use rpelab::seq2seq::{encode, EncoderBatch, Model, ModelSpec, RpeMode};
use rand::SeedableRng;

fn main() -> rpelab::Result<()> {
    // Star around token 0.
    let edges = (1..4)
        .flat_map(|v| [TokenEdge { src: 0, dst: v, kind: EdgeKind::Direct }, TokenEdge { src: v, dst: 0, kind: EdgeKind::Reverse }])
        .collect();
    let g = GraphStructure { n: 5, edges };
    println!("symmetric GCN coefficients with self-loops:");
    for (i, j, c) in gcn_coefficients(&g, GcnNorm::SymmetricSqrt, true)? {
        println!("  {i} <- {j}: {c:.3}");
    }

    let spec = ModelSpec { d_model: 32, n_heads: 4, n_enc_layers: 2, n_dec_layers: 2, d_ff: 64, ..ModelSpec::desk(50) };
    let base = Model::init(spec, 1)?;
    let tokens = [5u32, 6, 7, 8, 1];
    let batch = EncoderBatch::new(&[(&tokens[..], &g)], None)?;
    let run = |m: &Model| -> rpelab::Result<Vec<f32>> {
        let mut ctx = Ctx::new(&m.params, &frozen);
        let out = encode(&mut ctx, &m.spec, &batch, RpeMode::Off)?;
        Ok(ctx.g.value(out.out).data().to_vec())
    };
    let reference = run(&base)?;
    println!("\n{:<6} {:>8} {:>9} {:>10}", "kind", "adapter", "backbone", "max shift");
    for kind in AdapterKind::ALL {
        let mut m = base.clone();
        m.attach_adapters(rpelab::adapters::AdapterSpec::new(kind, 16), 2)?;
        // Fresh up-projections are zero; perturb them so the adapters speak.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let ups: Vec<String> = m.params.names().filter(|n| n.ends_with("up.w")).cloned().collect();
        for n in ups {
            let shape = m.params.get(&n)?.shape().to_vec();
            *m.params.get_mut(&n)? = Init::Normal(0.1).sample(&shape, &mut rng);
        }
        let shift = run(&m)?.iter().zip(&reference).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
        println!("{:<6} {:>8} {:>9} {shift:>10.4}", kind.name(), m.params.count(ADAPTER), m.params.count(BACKBONE));
    }
    Ok(())
}
