//! End to end on a small corpus: pretrain a backbone, train MLP and RGCN
//! adapters without relative positions, and compare test BLEU.

use std::time::Instant;

use rpelab::adapters::AdapterKind;
use rpelab::harness::train::pretrain_sequences;
use rpelab::harness::*;
use rpelab::seq2seq::RpeMode;

fn main() -> rpelab::Result<()> {
    let mut cfg = Config::desk();
    cfg.n_train = 600;
    cfg.n_dev = 60;
    cfg.n_test = 60;
    cfg.max_epochs = 6;
    let corpus = gen_corpus(&cfg.corpus())?;
    println!("sample: {}\n   text: {}", corpus.train[0].graph, corpus.train[0].text);
    let vocab = build_vocab(&corpus, cfg.vocab_size, cfg.max_branching)?;
    let train = prepare(&corpus.train, &vocab, cfg.max_target_len)?;
    let dev = prepare(&corpus.dev, &vocab, cfg.max_target_len)?;
    let test = prepare(&corpus.test, &vocab, cfg.max_target_len)?;

    let t = Instant::now();
    let (backbone, log) = pretrain_backbone(
        cfg.model_spec(vocab.len()),
        &cfg.pretrain_config(),
        &pretrain_sequences(&train),
        &pretrain_sequences(&dev),
    )?;
    print!("pretrained in {:.0?}\n{}", t.elapsed(), log.to_csv());

    for kind in [AdapterKind::Mlp, AdapterKind::Rgcn] {
        let tc = cfg.train_config(1, RpeMode::Off, Attack::None);
        let out = train_adapters(&backbone, cfg.adapter(kind), &tc, &train, &dev, &vocab)?;
        let (s, hyps) = evaluate(&out.model, &vocab, &test, RpeMode::Off, Attack::None, 1, cfg.beam)?;
        println!(
            "{:<5} w/o RPE: BLEU {:.2} chrF++ {:.2} (best epoch {}, {:.1}% trainable)\n   e.g. {}",
            kind.name(),
            s.bleu,
            s.chrf,
            out.best_epoch,
            100.0 * out.trainable_fraction,
            hyps[0]
        );
    }
    Ok(())
}
