use std::path::{Path, PathBuf};

use rpelab::cli::{main_with, Manifest};

const TINY: &str = r#"
n_train = 40
n_dev = 8
n_test = 8
max_depth = 2
vocab_size = 160
d_model = 16
n_heads = 2
n_enc_layers = 2
n_dec_layers = 1
d_ff = 32
bottleneck = 8
max_target_len = 32
pretrain_epochs = 1
max_epochs = 2
patience = 1
beam = 2
"#;

struct Lab {
    _tmp: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
}

impl Lab {
    fn new() -> Lab {
        let tmp = tempfile::tempdir().unwrap();
        let config = tmp.path().join("tiny.toml");
        std::fs::write(&config, TINY).unwrap();
        let root = tmp.path().join("runs");
        Lab { _tmp: tmp, root, config }
    }

    fn code(&self, args: &[&str]) -> i32 {
        let mut full = vec!["rpelab", "--root", self.root.to_str().unwrap(), "--config", self.config.to_str().unwrap()];
        full.extend_from_slice(args);
        main_with(full)
    }

    fn ok(&self, args: &[&str]) {
        assert_eq!(self.code(args), 0, "{args:?}");
    }

    fn only(&self, prefix: &str) -> Vec<PathBuf> {
        let mut v: Vec<PathBuf> = std::fs::read_dir(&self.root)
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.file_name().unwrap().to_str().unwrap().starts_with(prefix))
            .collect();
        v.sort();
        v
    }
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

#[test]
fn full_workflow() {
    let lab = Lab::new();

    lab.ok(&["gen-corpus"]);
    let corpus = &lab.only("gen-corpus-")[0];
    assert_eq!(read(&corpus.join("train.jsonl")).lines().count(), 40);

    // Training before pretraining is a data error.
    assert_eq!(lab.code(&["train", "--adapter", "rgcn", "--rpe", "off"]), 3);

    lab.ok(&["pretrain"]);
    let pre = &lab.only("pretrain-")[0];
    assert!(pre.join("backbone.tk").exists() && pre.join("pretrain_log.csv").exists());

    lab.ok(&["train", "--adapter", "rgcn", "--rpe", "off", "--seeds", "2"]);
    let train = lab.only("train-")[0].clone();
    let m = Manifest::load(&train).unwrap();
    assert_eq!(m.seeds, vec![1, 2]);
    assert!(m.artifacts.iter().all(|a| train.join(a).exists()), "{:?}", m.artifacts);
    assert!(train.join("seed-2/model.tk").exists());
    assert!(read(&train.join("seed-1/train_log.csv")).starts_with("epoch,loss,dev_bleu\n"));
    let report = read(&train.join("report.jsonl"));
    assert_eq!(report.lines().count(), 2);
    assert!(report.lines().all(|l| l.contains(&m.fingerprint)));
    assert!(read(&train.join("summary.txt")).contains("RGCN w/o RPE"));

    // Same request again reuses the run; --force recomputes it identically.
    lab.ok(&["train", "--adapter", "rgcn", "--rpe", "off", "--seeds", "2"]);
    assert_eq!(lab.only("train-").len(), 1);
    lab.ok(&["--force", "train", "--adapter", "rgcn", "--rpe", "off", "--seeds", "2"]);
    assert_eq!(read(&train.join("report.jsonl")), report);

    lab.ok(&["evaluate", "--run", train.to_str().unwrap(), "--split", "dev", "--beam", "1"]);
    let ev = &lab.only("evaluate-")[0];
    assert!(read(&ev.join("report.jsonl")).contains("\"split\":\"dev\""));

    lab.ok(&["attack-train", "--adapter", "gcn", "--rpe", "on", "--seed", "1"]);
    let atk = &lab.only("attack-train-")[0];
    assert!(read(&atk.join("report.jsonl")).contains("\"attack\":\"graph\""));

    lab.ok(&["probe-link", "--run", train.to_str().unwrap(), "--seed", "2", "--layers", "all"]);
    let probe = lab.only("probe-link-")[0].clone();
    let csv = read(&probe.join("probe.csv"));
    assert!(csv.starts_with("layer,train_acc,test_acc\n"));
    assert_eq!(csv.lines().count(), 3);
    lab.ok(&["probe-link", "--random-init", "--layers", "2"]);
    assert_eq!(lab.only("probe-link-").len(), 2);

    // A hidden-state dump holds no attention.
    assert_eq!(lab.code(&["probe-attention", "--dump", probe.to_str().unwrap()]), 2);
    assert_eq!(lab.code(&["probe-attention"]), 2);

    lab.ok(&["probe-attention", "--run", atk.to_str().unwrap(), "--seed", "1"]);
    let att = lab.only("probe-attention-")[0].clone();
    let heat = read(&att.join("w1_adjacency.csv"));
    assert_eq!(heat.lines().next().unwrap(), "layer,head1,head2");
    assert_eq!(heat.lines().count(), 3);
    let before = read(&att.join("w1_uniform.csv"));
    lab.ok(&["probe-attention", "--dump", att.to_str().unwrap()]);
    let redo = lab.only("probe-attention-").into_iter().find(|p| *p != att).unwrap();
    assert_eq!(read(&redo.join("w1_uniform.csv")), before);

    lab.ok(&["report"]);
    let rep = lab.only("report-")[0].clone();
    let table = read(&rep.join("summary.txt"));
    assert!(table.contains("RGCN w/o RPE") && table.contains("GCN w/ RPE (graph attack)"));
    lab.ok(&["--force", "report"]);
    assert_eq!(read(&rep.join("summary.txt")), table);
}

#[test]
fn config_errors_exit_with_two() {
    let lab = Lab::new();
    std::fs::write(&lab.config, "d_model = 15\nn_heads = 4\n").unwrap();
    assert_eq!(lab.code(&["gen-corpus"]), 2);
    std::fs::write(&lab.config, "no_such_key = 1\n").unwrap();
    assert_eq!(lab.code(&["gen-corpus"]), 2);
    assert_eq!(main_with(["rpelab", "--profile", "huge", "gen-corpus"]), 2);
    assert_eq!(main_with(["rpelab", "train", "--adapter", "lstm"]), 2);
    assert_eq!(main_with(["rpelab", "train", "--seed", "1", "--seeds", "2"]), 2);
}

#[test]
fn foreign_directory_needs_force() {
    let lab = Lab::new();
    lab.ok(&["gen-corpus"]);
    let dir = lab.only("gen-corpus-")[0].clone();
    std::fs::remove_file(dir.join("manifest.json")).unwrap();
    assert_eq!(lab.code(&["gen-corpus"]), 2);
    lab.ok(&["--force", "gen-corpus"]);
    assert!(dir.join("manifest.json").exists());
}
