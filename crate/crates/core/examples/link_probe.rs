//! Probe encoder states of an untrained RGCN model for graph links, next to
//! a shuffled-label null.

use rpelab::adapters::AdapterKind;
use rpelab::harness::{build_vocab, gen_corpus, prepare, Config};
use rpelab::probelab::{build_pairs, dump_hidden, link_probe, ProbeConfig};
use rpelab::seq2seq::{Model, RpeMode};

fn main() -> rpelab::Result<()> {
    let mut cfg = Config::desk();
    cfg.n_train = 400;
    cfg.n_test = 100;
    let corpus = gen_corpus(&cfg.corpus())?;
    let vocab = build_vocab(&corpus, cfg.vocab_size, cfg.max_branching)?;
    let train = prepare(&corpus.train, &vocab, cfg.max_target_len)?;
    let test = prepare(&corpus.test, &vocab, cfg.max_target_len)?;

    let mut model = Model::init(cfg.model_spec(vocab.len()), 1)?;
    model.attach_adapters(cfg.adapter(AdapterKind::Rgcn), 2)?;
    let structures = |s: &[rpelab::harness::Prepared]| s.iter().map(|p| p.graph.structure()).collect::<Vec<_>>();
    let h_train = dump_hidden(&model, &train, &structures(&train), RpeMode::Off, 1)?;
    let h_test = dump_hidden(&model, &test, &structures(&test), RpeMode::Off, 1)?;

    let graphs = |s: &[rpelab::harness::Prepared]| s.iter().map(|p| p.graph.clone()).collect::<Vec<_>>();
    let (p_train, dropped) = build_pairs(&graphs(&train), 2, 11);
    let (p_test, _) = build_pairs(&graphs(&test), 2, 12);
    println!("{} train pairs ({dropped} graphs too small), {} test pairs", p_train.len(), p_test.len());

    let layers: Vec<usize> = (1..=cfg.n_enc_layers).collect();
    let real = link_probe(&h_train, &p_train, &h_test, &p_test, &layers, ProbeConfig::default(), None)?;
    let null = link_probe(&h_train, &p_train, &h_test, &p_test, &layers, ProbeConfig::default(), Some(3))?;
    println!("layer  probe   null");
    for (r, n) in real.iter().zip(&null) {
        println!("{:>5} {:>6.3} {:>6.3}", r.layer, r.test_acc, n.test_acc);
    }
    Ok(())
}
