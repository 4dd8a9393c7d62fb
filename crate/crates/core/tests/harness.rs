use proptest::prelude::*;
use rpelab::adapters::AdapterKind;
use rpelab::harness::metrics::{bleu, chrf, ter};
use rpelab::harness::report::{append_jsonl, read_jsonl};
use rpelab::harness::train::{decode, input_graphs, pretrain_sequences};
use rpelab::harness::*;
use rpelab::params::BACKBONE;
use rpelab::seq2seq::{load_model, save_model, Model, RpeMode};
use rpelab::subtok::Vocab;

const TINY: &str = r#"
n_train = 60
n_dev = 10
n_test = 10
max_depth = 2
vocab_size = 160
d_model = 16
n_heads = 2
n_enc_layers = 2
n_dec_layers = 1
d_ff = 32
bottleneck = 8
max_target_len = 32
pretrain_epochs = 3
pretrain_lr = 0.01
max_epochs = 3
patience = 1
beam = 2
"#;

struct Tiny {
    cfg: Config,
    vocab: Vocab,
    train: Vec<Prepared>,
    dev: Vec<Prepared>,
    test: Vec<Prepared>,
    backbone: Model,
    log: PretrainLog,
}

fn tiny() -> Tiny {
    let cfg = Config::from_toml(TINY).unwrap();
    let corpus = gen_corpus(&cfg.corpus()).unwrap();
    let vocab = build_vocab(&corpus, cfg.vocab_size, cfg.max_branching).unwrap();
    let train = prepare(&corpus.train, &vocab, cfg.max_target_len).unwrap();
    let dev = prepare(&corpus.dev, &vocab, cfg.max_target_len).unwrap();
    let test = prepare(&corpus.test, &vocab, cfg.max_target_len).unwrap();
    let (backbone, log) = pretrain_backbone(
        cfg.model_spec(vocab.len()),
        &cfg.pretrain_config(),
        &pretrain_sequences(&train),
        &pretrain_sequences(&dev),
    )
    .unwrap();
    Tiny { cfg, vocab, train, dev, test, backbone, log }
}

fn train(t: &Tiny, kind: AdapterKind, rpe: RpeMode, seed: u64) -> TrainOutcome {
    let tc = t.cfg.train_config(seed, rpe, Attack::None);
    train_adapters(&t.backbone, t.cfg.adapter(kind), &tc, &t.train, &t.dev, &t.vocab).unwrap()
}

#[test]
fn pretraining_lowers_eval_loss() {
    let t = tiny();
    let evals: Vec<f64> = t.log.rows.iter().map(|r| r.2).collect();
    assert_eq!(evals.len(), 4);
    assert!(evals.windows(2).all(|w| w[1] < w[0]), "{evals:?}");
    assert!(t.log.rows[0].1.is_nan());
}

#[test]
fn training_is_deterministic_and_keeps_the_backbone() {
    let t = tiny();
    let sum = t.backbone.params.checksum(BACKBONE);
    let a = train(&t, AdapterKind::Rgcn, RpeMode::Off, 4);
    let b = train(&t, AdapterKind::Rgcn, RpeMode::Off, 4);
    assert_eq!(a.model, b.model);
    assert_eq!(a.log, b.log);
    assert_eq!(a.backbone_checksum, sum);
    assert_eq!(a.model.params.checksum(BACKBONE), sum);
    assert!(a.trainable_fraction > 0.0 && a.trainable_fraction < 1.0);
    let c = train(&t, AdapterKind::Rgcn, RpeMode::Off, 5);
    assert_ne!(a.model, c.model);
}

#[test]
fn early_stopping_keeps_the_best_dev_epoch() {
    let t = tiny();
    for kind in [AdapterKind::Mlp, AdapterKind::Gat] {
        let out = train(&t, kind, RpeMode::On, 1);
        let best = out.log.rows.iter().map(|r| r.2).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(out.best_dev_bleu, best);
        let first = out.log.rows.iter().find(|r| r.2 == best).unwrap().0;
        assert_eq!(out.best_epoch, first);
        // The returned adapters reproduce the best dev score.
        let tc = t.cfg.train_config(1, RpeMode::On, Attack::None);
        let graphs = input_graphs(&t.dev, Attack::None, 1);
        let hyps = decode(&out.model, &t.dev, &graphs, RpeMode::On, 1, tc.dev_beam).unwrap();
        let h: Vec<String> = hyps.iter().map(|x| t.vocab.decode(x)).collect();
        let r: Vec<String> = t.dev.iter().map(|s| s.text.clone()).collect();
        assert_eq!(bleu(&h, &r).unwrap(), best);
        // Stopping leaves at most `patience` epochs after the best one.
        assert!(out.log.rows.len() <= out.best_epoch + t.cfg.patience);
    }
}

#[test]
fn evaluation_is_repeatable_and_survives_a_reload() {
    let t = tiny();
    let out = train(&t, AdapterKind::Gcn, RpeMode::Shuffle, 2);
    let a = evaluate(&out.model, &t.vocab, &t.test, RpeMode::Shuffle, Attack::Graph, 2, 3).unwrap();
    let b = evaluate(&out.model, &t.vocab, &t.test, RpeMode::Shuffle, Attack::Graph, 2, 3).unwrap();
    assert_eq!(a, b);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.tk");
    save_model(&out.model, &path).unwrap();
    let back = load_model(&path).unwrap();
    assert_eq!(evaluate(&back, &t.vocab, &t.test, RpeMode::Shuffle, Attack::Graph, 2, 3).unwrap(), a);
    let (s, texts) = a;
    assert_eq!(texts.len(), t.test.len());
    assert!((0.0..=100.0).contains(&s.bleu) && (0.0..=100.0).contains(&s.chrf) && s.ter >= 0.0);
}

#[test]
fn zero_epoch_pretrain_matches_init() {
    let mut cfg = Config::from_toml(TINY).unwrap();
    cfg.pretrain_epochs = 0;
    let spec = cfg.model_spec(50);
    let seqs = vec![vec![5u32, 6, 7, 8], vec![9, 10, 11]];
    let (m, log) = pretrain_backbone(spec.clone(), &cfg.pretrain_config(), &seqs, &seqs).unwrap();
    assert_eq!(log.rows.len(), 1);
    assert_eq!(m, Model::init(spec, cfg.pretrain_seed).unwrap());
}

fn report(seed: u64, adapter: AdapterKind, bleu: f64) -> MetricsReport {
    MetricsReport {
        fingerprint: "f".into(),
        seed,
        adapter,
        rpe_mode: RpeMode::Off,
        attack: Attack::None,
        split: "test".into(),
        beam: 5,
        n_samples: 10,
        bleu,
        chrf: 50.0,
        ter: 40.0,
        token_accuracy: 0.5,
        best_epoch: 3,
        trainable_fraction: 0.1,
    }
}

#[test]
fn reports_roundtrip_and_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("report.jsonl");
    let rs = vec![report(2, AdapterKind::Mlp, 40.0), report(1, AdapterKind::Mlp, 44.0), report(1, AdapterKind::Rgcn, 70.0)];
    for r in &rs {
        append_jsonl(&path, r).unwrap();
    }
    assert_eq!(read_jsonl(&path).unwrap(), rs);
    let rows = aggregate(&rs);
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0].label, "MLP w/o RPE");
    assert_eq!(rows[0].seeds, vec![1, 2]);
    assert_eq!(rows[0].bleu.0, 42.0);
    assert!((rows[0].bleu.1 - 8f64.sqrt()).abs() < 1e-12);
    assert_eq!(rows[1].bleu, (70.0, 0.0));

    std::fs::write(&path, "{\"seed\": 1}\n").unwrap();
    assert!(read_jsonl(&path).is_err());
    append_jsonl(&dir.path().join("bad.jsonl"), &report(1, AdapterKind::Mlp, 140.0)).unwrap();
    assert!(read_jsonl(&dir.path().join("bad.jsonl")).is_err());
}

fn sentence() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(vec!["the", "cat", "sat", "on", "a", "mat", "dog", "ran"]), 1..12)
        .prop_map(|w| w.join(" "))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metric_ranges_and_identity(pairs in prop::collection::vec((sentence(), sentence()), 1..6)) {
        let (h, r): (Vec<String>, Vec<String>) = pairs.into_iter().unzip();
        let b = bleu(&h, &r).unwrap();
        let c = chrf(&h, &r).unwrap();
        prop_assert!((0.0..=100.0).contains(&b));
        prop_assert!((0.0..=100.0).contains(&c));
        prop_assert!(ter(&h, &r).unwrap() >= 0.0);
        prop_assert!((bleu(&r, &r).unwrap() - 100.0).abs() < 1e-9);
        prop_assert!((chrf(&r, &r).unwrap() - 100.0).abs() < 1e-9);
        prop_assert_eq!(ter(&r, &r).unwrap(), 0.0);
        // Corpus scores ignore sentence order.
        let (hr, rr): (Vec<String>, Vec<String>) = (h.iter().rev().cloned().collect(), r.iter().rev().cloned().collect());
        prop_assert!((bleu(&hr, &rr).unwrap() - b).abs() < 1e-9);
    }
}
