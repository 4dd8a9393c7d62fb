//! Command-line front end. Every command writes into its own run directory
//! `<root>/<command>-<fingerprint>` holding `manifest.json`, the resolved
//! `config.toml` and the command's outputs.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::adapters::AdapterKind;
use crate::error::{LabError, Result};
use crate::harness::report::{append_jsonl, read_jsonl, render_table};
use crate::harness::train::{input_graphs, pretrain_sequences};
use crate::harness::{
    aggregate, build_vocab, evaluate, gen_corpus, prepare, pretrain_backbone, train_adapters, Attack, Config, Corpus,
    MetricsReport, Prepared,
};
use crate::probelab::{
    attention_distance_report, build_pairs, dump_encoder, heatmap_csv, link_probe, probe::probe_csv, AttentionDump,
    HiddenDump, ProbeConfig,
};
use crate::seq2seq::{load_model, save_model, Model, RpeMode};
use crate::subtok::Vocab;

const FINGERPRINT_LEN: usize = 16;
const MANIFEST: &str = "manifest.json";

#[derive(Parser, Debug)]
#[command(name = "rpelab", version, about = "Structural adapters and relative position probes for graph-to-text")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// TOML file overlaid on the profile.
    #[arg(long, global = true, env = "RPELAB_CONFIG")]
    pub config: Option<PathBuf>,
    /// Base profile: desk or paper.
    #[arg(long, global = true, env = "RPELAB_PROFILE", default_value = "desk")]
    pub profile: String,
    /// Directory holding run directories.
    #[arg(long, global = true, env = "RPELAB_ROOT", default_value = "runs")]
    pub root: PathBuf,
    /// Delete and recompute an existing run directory.
    #[arg(long, global = true, env = "RPELAB_FORCE")]
    pub force: bool,
}

#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    #[arg(long, env = "RPELAB_ADAPTER", default_value = "mlp")]
    pub adapter: AdapterKind,
    #[arg(long, env = "RPELAB_RPE", default_value = "on")]
    pub rpe: RpeMode,
    /// Train seeds 1..=N.
    #[arg(long, env = "RPELAB_SEEDS", conflicts_with = "seed")]
    pub seeds: Option<u64>,
    /// Train a single seed.
    #[arg(long, env = "RPELAB_SEED")]
    pub seed: Option<u64>,
    /// Pretrain run to start from; defaults to the one matching the config.
    #[arg(long, env = "RPELAB_BACKBONE")]
    pub backbone: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct ProbeArgs {
    /// Train run whose checkpoint is probed.
    #[arg(long, env = "RPELAB_RUN", conflicts_with_all = ["dump", "random_init"])]
    pub run: Option<PathBuf>,
    /// Probe a freshly initialized, untrained model instead.
    #[arg(long, env = "RPELAB_RANDOM_INIT")]
    pub random_init: bool,
    /// Reuse a directory written by an earlier probe run.
    #[arg(long, env = "RPELAB_DUMP")]
    pub dump: Option<PathBuf>,
    #[arg(long, env = "RPELAB_SEED", default_value_t = 1)]
    pub seed: u64,
    #[arg(long, env = "RPELAB_LAYERS", default_value = "all")]
    pub layers: String,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate the synthetic corpus.
    GenCorpus,
    /// Denoising pretraining of the backbone.
    Pretrain,
    /// Train adapters on the frozen backbone and score the test split.
    Train(RunArgs),
    /// Re-score the checkpoints of a train run.
    Evaluate {
        #[arg(long, env = "RPELAB_RUN")]
        run: PathBuf,
        #[arg(long, env = "RPELAB_SPLIT", default_value = "test")]
        split: String,
        #[arg(long, env = "RPELAB_BEAM")]
        beam: Option<usize>,
    },
    /// Train and evaluate with corrupted graph connectivity.
    AttackTrain {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, env = "RPELAB_ATTACK", default_value = "graph")]
        attack: Attack,
    },
    /// Link-prediction probe over encoder layers.
    ProbeLink {
        #[command(flatten)]
        probe: ProbeArgs,
        #[arg(long, env = "RPELAB_K", default_value_t = 2)]
        k: usize,
        /// Adapter attached to a random-init model.
        #[arg(long, env = "RPELAB_ADAPTER", default_value = "rgcn")]
        adapter: AdapterKind,
    },
    /// W1 distances of attention rows to the adjacency and to uniform.
    ProbeAttention {
        #[command(flatten)]
        probe: ProbeArgs,
        #[arg(long, env = "RPELAB_ADAPTER", default_value = "mlp")]
        adapter: AdapterKind,
    },
    /// Mean and s.d. over seeds of the reports in the given runs.
    Report {
        /// Run directories; all runs under the root when empty.
        #[arg(env = "RPELAB_RUNS", value_delimiter = ',')]
        runs: Vec<PathBuf>,
    },
}

/// Contents of `manifest.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub fingerprint: String,
    pub command: String,
    pub seeds: Vec<u64>,
    /// Relative to the run directory.
    pub artifacts: Vec<String>,
    /// Run directories this run read from.
    pub inputs: Vec<String>,
    pub options: Vec<(String, String)>,
    pub version: String,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Manifest> {
        let path = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| LabError::Data(format!("{}: {e}", path.display())))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// A run directory being written.
struct RunDir {
    dir: PathBuf,
    manifest: Manifest,
}

enum Slot {
    Fresh(RunDir),
    Done(PathBuf),
}

fn short(fp: &str) -> &str {
    &fp[..FINGERPRINT_LEN.min(fp.len())]
}

/// Claim `<root>/<command>-<fp>`. A complete run with the same fingerprint
/// is reused; anything else in the way needs `--force`.
fn claim(g: &Global, cfg: &Config, command: &str, options: &[(&str, String)], inputs: &[&Path]) -> Result<Slot> {
    let mut keys: Vec<(&str, String)> = vec![("command", command.to_string())];
    keys.extend(options.iter().cloned());
    let fp = cfg.fingerprint(&keys);
    let dir = g.root.join(format!("{command}-{}", short(&fp)));
    if dir.exists() {
        if g.force {
            std::fs::remove_dir_all(&dir)?;
        } else {
            match Manifest::load(&dir) {
                Ok(m) if m.fingerprint == fp => return Ok(Slot::Done(dir)),
                Ok(m) => {
                    return Err(LabError::Config(format!(
                        "{} holds fingerprint {} but the request resolves to {fp}; pass --force to replace it",
                        dir.display(),
                        m.fingerprint
                    )))
                }
                Err(_) => {
                    return Err(LabError::Config(format!(
                        "{} exists without a complete manifest; pass --force to replace it",
                        dir.display()
                    )))
                }
            }
        }
    }
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("config.toml"), cfg.to_toml())?;
    let manifest = Manifest {
        fingerprint: fp,
        command: command.into(),
        seeds: Vec::new(),
        artifacts: vec!["config.toml".into()],
        inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
        options: options.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
        version: env!("CARGO_PKG_VERSION").into(),
    };
    Ok(Slot::Fresh(RunDir { dir, manifest }))
}

impl RunDir {
    fn write(&mut self, name: &str, text: &str) -> Result<PathBuf> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, text)?;
        self.manifest.artifacts.push(name.into());
        Ok(path)
    }

    fn record(&mut self, name: &str) {
        self.manifest.artifacts.push(name.into());
    }

    /// The manifest goes last so a crash leaves an incomplete directory.
    fn finish(self) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(&self.manifest)?;
        text.push('\n');
        std::fs::write(self.dir.join(MANIFEST), text)?;
        Ok(self.dir)
    }
}

fn load_config(g: &Global) -> Result<Config> {
    let cfg = match &g.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| LabError::Config(format!("{}: {e}", path.display())))?;
            let mut table: toml::Table =
                toml::from_str(&text).map_err(|e| LabError::Config(format!("{}: {e}", path.display())))?;
            if !table.contains_key("profile") {
                table.insert("profile".into(), toml::Value::String(g.profile.clone()));
            }
            Config::from_toml(&toml::to_string(&table).map_err(|e| LabError::Config(e.to_string()))?)?
        }
        None => Config::profile(&g.profile)?,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Corpus, vocabulary and prepared splits, all derived from the config.
struct Data {
    corpus: Corpus,
    vocab: Vocab,
    train: Vec<Prepared>,
    dev: Vec<Prepared>,
    test: Vec<Prepared>,
}

impl Data {
    fn new(cfg: &Config) -> Result<Data> {
        let corpus = gen_corpus(&cfg.corpus())?;
        let vocab = build_vocab(&corpus, cfg.vocab_size, cfg.max_branching)?;
        let train = prepare(&corpus.train, &vocab, cfg.max_target_len)?;
        let dev = prepare(&corpus.dev, &vocab, cfg.max_target_len)?;
        let test = prepare(&corpus.test, &vocab, cfg.max_target_len)?;
        Ok(Data { corpus, vocab, train, dev, test })
    }

    fn split(&self, name: &str) -> Result<&[Prepared]> {
        match name {
            "train" => Ok(&self.train),
            "dev" => Ok(&self.dev),
            "test" => Ok(&self.test),
            _ => Err(LabError::Config(format!("unknown split '{name}' (expected train, dev or test)"))),
        }
    }
}

fn done(dir: PathBuf) -> Result<PathBuf> {
    eprintln!("{} is up to date", dir.display());
    Ok(dir)
}

fn gen_corpus_cmd(g: &Global, cfg: &Config) -> Result<PathBuf> {
    let mut run = match claim(g, cfg, "gen-corpus", &[], &[])? {
        Slot::Done(d) => return done(d),
        Slot::Fresh(r) => r,
    };
    let data = Data::new(cfg)?;
    data.corpus.write_dir(&run.dir)?;
    for f in ["train.jsonl", "dev.jsonl", "test.jsonl"] {
        run.record(f);
    }
    data.vocab.save(&run.dir.join("vocab.json"))?;
    run.record("vocab.json");
    run.finish()
}

fn pretrain_cmd(g: &Global, cfg: &Config) -> Result<PathBuf> {
    let mut run = match claim(g, cfg, "pretrain", &[], &[])? {
        Slot::Done(d) => return done(d),
        Slot::Fresh(r) => r,
    };
    let data = Data::new(cfg)?;
    let (model, log) = pretrain_backbone(
        cfg.model_spec(data.vocab.len()),
        &cfg.pretrain_config(),
        &pretrain_sequences(&data.train),
        &pretrain_sequences(&data.dev),
    )?;
    save_model(&model, &run.dir.join("backbone.tk"))?;
    run.record("backbone.tk");
    run.record("backbone.json");
    data.vocab.save(&run.dir.join("vocab.json"))?;
    run.record("vocab.json");
    run.write("pretrain_log.csv", &log.to_csv())?;
    run.finish()
}

fn default_backbone(g: &Global, cfg: &Config) -> PathBuf {
    let fp = cfg.fingerprint(&[("command", "pretrain".into())]);
    g.root.join(format!("pretrain-{}", short(&fp)))
}

/// Load a backbone and check it was produced under the same configuration.
fn load_backbone(dir: &Path, cfg: &Config) -> Result<Model> {
    let m = Manifest::load(dir)
        .map_err(|_| LabError::Data(format!("no pretrain run at {} (run `rpelab pretrain` first)", dir.display())))?;
    let want = cfg.fingerprint(&[("command", "pretrain".into())]);
    if m.command != "pretrain" || m.fingerprint != want {
        return Err(LabError::Config(format!(
            "{} was pretrained under fingerprint {}, the current config resolves to {want}",
            dir.display(),
            m.fingerprint
        )));
    }
    load_model(&dir.join("backbone.tk"))
}

fn seeds_of(a: &RunArgs) -> Vec<u64> {
    match (a.seeds, a.seed) {
        (_, Some(s)) => vec![s],
        (Some(n), None) => (1..=n).collect(),
        (None, None) => vec![1],
    }
}

fn train_cmd(g: &Global, cfg: &Config, a: &RunArgs, attack: Attack, command: &str) -> Result<PathBuf> {
    let seeds = seeds_of(a);
    if seeds.is_empty() {
        return Err(LabError::Config("--seeds must be at least 1".into()));
    }
    let backbone_dir = a.backbone.clone().unwrap_or_else(|| default_backbone(g, cfg));
    let options = [
        ("adapter", a.adapter.name().to_string()),
        ("rpe", a.rpe.name().to_string()),
        ("attack", attack.name().to_string()),
        ("seeds", format!("{seeds:?}")),
    ];
    let backbone = load_backbone(&backbone_dir, cfg)?;
    let mut run = match claim(g, cfg, command, &options, &[&backbone_dir])? {
        Slot::Done(d) => return done(d),
        Slot::Fresh(r) => r,
    };
    let data = Data::new(cfg)?;
    run.manifest.seeds = seeds.clone();
    let report_path = run.dir.join("report.jsonl");
    let mut reports = Vec::new();
    for &seed in &seeds {
        let tc = cfg.train_config(seed, a.rpe, attack);
        let out = train_adapters(&backbone, cfg.adapter(a.adapter), &tc, &data.train, &data.dev, &data.vocab)?;
        let sub = format!("seed-{seed}");
        save_model(&out.model, &run.dir.join(&sub).join("model.tk"))?;
        run.record(&format!("{sub}/model.tk"));
        run.record(&format!("{sub}/model.json"));
        run.write(&format!("{sub}/train_log.csv"), &out.log.to_csv())?;
        let (scores, hyps) = evaluate(&out.model, &data.vocab, &data.test, a.rpe, attack, seed, cfg.beam)?;
        run.write(&format!("{sub}/test_hypotheses.txt"), &(hyps.join("\n") + "\n"))?;
        let r = MetricsReport {
            fingerprint: run.manifest.fingerprint.clone(),
            seed,
            adapter: a.adapter,
            rpe_mode: a.rpe,
            attack,
            split: "test".into(),
            beam: cfg.beam,
            n_samples: data.test.len(),
            bleu: scores.bleu,
            chrf: scores.chrf,
            ter: 100.0 * scores.ter,
            token_accuracy: scores.token_accuracy,
            best_epoch: out.best_epoch,
            trainable_fraction: out.trainable_fraction,
        };
        eprintln!("seed {seed}: BLEU {:.2} chrF++ {:.2} TER {:.2}", r.bleu, r.chrf, r.ter);
        append_jsonl(&report_path, &r)?;
        reports.push(r);
    }
    run.record("report.jsonl");
    let table = render_table(&aggregate(&reports));
    print!("{table}");
    run.write("summary.txt", &table)?;
    run.finish()
}

/// Checkpoints of a train run with the condition they were trained under.
struct TrainedRun {
    manifest: Manifest,
    config: Config,
    adapter: AdapterKind,
    rpe: RpeMode,
    attack: Attack,
}

fn option<'a>(m: &'a Manifest, key: &str) -> Result<&'a str> {
    m.options
        .iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
        .ok_or_else(|| LabError::Data(format!("manifest has no '{key}' option")))
}

fn open_train_run(dir: &Path) -> Result<TrainedRun> {
    let manifest = Manifest::load(dir)?;
    if manifest.command != "train" && manifest.command != "attack-train" {
        return Err(LabError::Config(format!("{} is a {} run, not a train run", dir.display(), manifest.command)));
    }
    let config = Config::load(&dir.join("config.toml"))?;
    let fp = config.fingerprint(
        &std::iter::once(("command", manifest.command.clone()))
            .chain(manifest.options.iter().map(|(k, v)| (k.as_str(), v.clone())))
            .collect::<Vec<_>>(),
    );
    if fp != manifest.fingerprint {
        return Err(LabError::Config(format!("{}: config.toml no longer matches the manifest fingerprint", dir.display())));
    }
    Ok(TrainedRun {
        adapter: option(&manifest, "adapter")?.parse()?,
        rpe: option(&manifest, "rpe")?.parse()?,
        attack: option(&manifest, "attack")?.parse()?,
        manifest,
        config,
    })
}

fn evaluate_cmd(g: &Global, run_dir: &Path, split: &str, beam: Option<usize>) -> Result<PathBuf> {
    let src = open_train_run(run_dir)?;
    let cfg = &src.config;
    let beam = beam.unwrap_or(cfg.beam);
    if beam == 0 {
        return Err(LabError::Config("--beam must be at least 1".into()));
    }
    let options = [("source", src.manifest.fingerprint.clone()), ("split", split.to_string()), ("beam", beam.to_string())];
    let mut run = match claim(g, cfg, "evaluate", &options, &[run_dir])? {
        Slot::Done(d) => return done(d),
        Slot::Fresh(r) => r,
    };
    let data = Data::new(cfg)?;
    let samples = data.split(split)?;
    run.manifest.seeds = src.manifest.seeds.clone();
    let report_path = run.dir.join("report.jsonl");
    let mut reports = Vec::new();
    for &seed in &src.manifest.seeds {
        let model = load_model(&run_dir.join(format!("seed-{seed}")).join("model.tk"))?;
        let (scores, _) = evaluate(&model, &data.vocab, samples, src.rpe, src.attack, seed, beam)?;
        let r = MetricsReport {
            fingerprint: run.manifest.fingerprint.clone(),
            seed,
            adapter: src.adapter,
            rpe_mode: src.rpe,
            attack: src.attack,
            split: split.into(),
            beam,
            n_samples: samples.len(),
            bleu: scores.bleu,
            chrf: scores.chrf,
            ter: 100.0 * scores.ter,
            token_accuracy: scores.token_accuracy,
            best_epoch: 0,
            trainable_fraction: 0.0,
        };
        append_jsonl(&report_path, &r)?;
        reports.push(r);
    }
    run.record("report.jsonl");
    let table = render_table(&aggregate(&reports));
    print!("{table}");
    run.write("summary.txt", &table)?;
    run.finish()
}

fn parse_layers(spec: &str, n: usize) -> Result<Vec<usize>> {
    if spec == "all" {
        return Ok((1..=n).collect());
    }
    let layers: Vec<usize> = spec
        .split(',')
        .map(|s| s.trim().parse::<usize>().map_err(|_| LabError::Config(format!("bad layer '{s}' in --layers"))))
        .collect::<Result<_>>()?;
    if let Some(&l) = layers.iter().find(|&&l| l == 0 || l > n) {
        return Err(LabError::Config(format!("layer {l} outside 1..={n}")));
    }
    Ok(layers)
}

/// The model and input condition a probe looks at.
struct ProbeSource {
    cfg: Config,
    model: Model,
    rpe: RpeMode,
    attack: Attack,
    input: PathBuf,
    fingerprint: String,
}

fn probe_source(g: &Global, cfg: &Config, p: &ProbeArgs, adapter: AdapterKind) -> Result<Option<ProbeSource>> {
    if let Some(dir) = &p.run {
        let src = open_train_run(dir)?;
        if !src.manifest.seeds.contains(&p.seed) {
            return Err(LabError::Config(format!("{} holds no seed {}", dir.display(), p.seed)));
        }
        let model = load_model(&dir.join(format!("seed-{}", p.seed)).join("model.tk"))?;
        return Ok(Some(ProbeSource {
            cfg: src.config,
            model,
            rpe: src.rpe,
            attack: src.attack,
            input: dir.clone(),
            fingerprint: src.manifest.fingerprint,
        }));
    }
    if p.random_init {
        let data_vocab = Data::new(cfg)?.vocab.len();
        let mut model = Model::init(cfg.model_spec(data_vocab), p.seed)?;
        model.attach_adapters(cfg.adapter(adapter), p.seed)?;
        return Ok(Some(ProbeSource {
            cfg: cfg.clone(),
            model,
            rpe: RpeMode::Off,
            attack: Attack::None,
            input: g.root.clone(),
            fingerprint: format!("random-init-{}", adapter.name()),
        }));
    }
    Ok(None)
}

/// Dump directories inside a probe run.
const HIDDEN_DIRS: [&str; 2] = ["dump/hidden-train", "dump/hidden-test"];
const ATTENTION_DIR: &str = "dump/attention-test";

fn probe_link_cmd(g: &Global, cfg: &Config, p: &ProbeArgs, k: usize, adapter: AdapterKind) -> Result<PathBuf> {
    if k == 0 {
        return Err(LabError::Config("--k must be at least 1".into()));
    }
    let (cfg, dumps, source_fp, input) = match (probe_source(g, cfg, p, adapter)?, &p.dump) {
        (Some(src), _) => {
            let data = Data::new(&src.cfg)?;
            let tr = input_graphs(&data.train, src.attack, p.seed);
            let te = input_graphs(&data.test, src.attack, p.seed);
            let a = dump_encoder(&src.model, &data.train, &tr, src.rpe, p.seed)?.0;
            let b = dump_encoder(&src.model, &data.test, &te, src.rpe, p.seed)?.0;
            (src.cfg, Some((a, b)), src.fingerprint, src.input)
        }
        (None, Some(dir)) => {
            let m = Manifest::load(dir)?;
            if !HIDDEN_DIRS.iter().all(|d| dir.join(d).join("index.json").exists()) {
                return Err(LabError::Config(format!("{} holds no hidden-state dumps", dir.display())));
            }
            let a = HiddenDump::load(&dir.join(HIDDEN_DIRS[0]))?;
            let b = HiddenDump::load(&dir.join(HIDDEN_DIRS[1]))?;
            (Config::load(&dir.join("config.toml"))?, Some((a, b)), m.fingerprint, dir.clone())
        }
        (None, None) => return Err(LabError::Config("probe-link needs --run, --random-init or --dump".into())),
    };
    let (train_dump, test_dump) = dumps.expect("dumps resolved above");
    let layers = parse_layers(&p.layers, train_dump.n_layers())?;
    let options = [
        ("source", source_fp),
        ("seed", p.seed.to_string()),
        ("k", k.to_string()),
        ("layers", format!("{layers:?}")),
    ];
    let mut run = match claim(g, &cfg, "probe-link", &options, &[&input])? {
        Slot::Done(d) => return done(d),
        Slot::Fresh(r) => r,
    };
    run.manifest.seeds = vec![p.seed];
    let data = Data::new(&cfg)?;
    let tg = |s: &[Prepared]| s.iter().map(|x| x.graph.clone()).collect::<Vec<_>>();
    let (train_pairs, train_discarded) = build_pairs(&tg(&data.train), k, p.seed);
    let (test_pairs, test_discarded) = build_pairs(&tg(&data.test), k, p.seed.wrapping_add(1));
    let rows = link_probe(&train_dump, &train_pairs, &test_dump, &test_pairs, &layers, ProbeConfig::default(), None)?;
    let null = link_probe(&train_dump, &train_pairs, &test_dump, &test_pairs, &layers, ProbeConfig::default(), Some(p.seed))?;
    print!("{}", probe_csv(&rows));
    run.write("probe.csv", &probe_csv(&rows))?;
    run.write("probe_null.csv", &probe_csv(&null))?;
    run.write(
        "pairs.json",
        &serde_json::to_string_pretty(&serde_json::json!({
            "k": k,
            "train_pairs": train_pairs.len(),
            "test_pairs": test_pairs.len(),
            "train_discarded": train_discarded,
            "test_discarded": test_discarded,
        }))?,
    )?;
    if p.dump.is_none() {
        train_dump.save(&run.dir.join(HIDDEN_DIRS[0]))?;
        test_dump.save(&run.dir.join(HIDDEN_DIRS[1]))?;
        run.record(HIDDEN_DIRS[0]);
        run.record(HIDDEN_DIRS[1]);
    }
    run.finish()
}

fn probe_attention_cmd(g: &Global, cfg: &Config, p: &ProbeArgs, adapter: AdapterKind) -> Result<PathBuf> {
    let (cfg, attn, attack, source_fp, input) = match (probe_source(g, cfg, p, adapter)?, &p.dump) {
        (Some(src), _) => {
            let data = Data::new(&src.cfg)?;
            let te = input_graphs(&data.test, src.attack, p.seed);
            let attn = dump_encoder(&src.model, &data.test, &te, src.rpe, p.seed)?.1;
            (src.cfg, attn, src.attack, src.fingerprint, src.input)
        }
        (None, Some(dir)) => {
            let m = Manifest::load(dir)?;
            if !dir.join(ATTENTION_DIR).join("index.json").exists() {
                return Err(LabError::Config(format!("{} holds no attention dump", dir.display())));
            }
            let attack = option(&m, "attack").unwrap_or("none").parse()?;
            let attn = AttentionDump::load(&dir.join(ATTENTION_DIR))?;
            (Config::load(&dir.join("config.toml"))?, attn, attack, m.fingerprint, dir.clone())
        }
        (None, None) => return Err(LabError::Config("probe-attention needs --run, --random-init or --dump".into())),
    };
    let layers = parse_layers(&p.layers, attn.samples.first().map_or(0, |s| s.layers.len()))?;
    let options = [
        ("source", source_fp),
        ("seed", p.seed.to_string()),
        ("attack", attack.name().to_string()),
        ("layers", format!("{layers:?}")),
    ];
    let mut run = match claim(g, &cfg, "probe-attention", &options, &[&input])? {
        Slot::Done(d) => return done(d),
        Slot::Fresh(r) => r,
    };
    run.manifest.seeds = vec![p.seed];
    let data = Data::new(&cfg)?;
    // Distances are measured against the graph the model was given.
    let graphs = input_graphs(&data.test, attack, p.seed);
    let report = attention_distance_report(&attn, &graphs, cfg.self_loops)?;
    let pick = |m: &[Vec<f64>]| layers.iter().map(|&l| m[l - 1].clone()).collect::<Vec<_>>();
    let (adj, uni) = (pick(&report.to_adjacency), pick(&report.to_uniform));
    run.write("w1_adjacency.csv", &heatmap_csv(&adj))?;
    run.write("w1_uniform.csv", &heatmap_csv(&uni))?;
    println!(
        "mean W1 to adjacency {:.4}, to uniform {:.4}",
        report.mean_to_adjacency(),
        report.mean_to_uniform()
    );
    if p.dump.is_none() {
        attn.save(&run.dir.join(ATTENTION_DIR))?;
        run.record(ATTENTION_DIR);
    }
    run.finish()
}

fn report_cmd(g: &Global, cfg: &Config, runs: &[PathBuf]) -> Result<PathBuf> {
    let mut dirs: Vec<PathBuf> = if runs.is_empty() {
        let mut v = Vec::new();
        if g.root.exists() {
            for e in std::fs::read_dir(&g.root)? {
                let p = e?.path();
                if p.join("report.jsonl").exists() && p.join(MANIFEST).exists() {
                    v.push(p);
                }
            }
        }
        v
    } else {
        runs.to_vec()
    };
    dirs.sort();
    if dirs.is_empty() {
        return Err(LabError::Data(format!("no runs with reports under {}", g.root.display())));
    }
    let mut reports = Vec::new();
    let mut sources = Vec::new();
    for d in &dirs {
        let m = Manifest::load(d)?;
        let rs = read_jsonl(&d.join("report.jsonl"))?;
        if let Some(r) = rs.iter().find(|r| r.fingerprint != m.fingerprint) {
            return Err(LabError::Data(format!("{}: report fingerprint {} does not match the manifest", d.display(), r.fingerprint)));
        }
        sources.push(m.fingerprint);
        reports.extend(rs);
    }
    let options = [("sources", sources.join(","))];
    let inputs: Vec<&Path> = dirs.iter().map(|d| d.as_path()).collect();
    let mut run = match claim(g, cfg, "report", &options, &inputs)? {
        Slot::Done(d) => {
            print!("{}", std::fs::read_to_string(d.join("summary.txt"))?);
            return Ok(d);
        }
        Slot::Fresh(r) => r,
    };
    let rows = aggregate(&reports);
    let table = render_table(&rows);
    print!("{table}");
    run.write("summary.txt", &table)?;
    run.write("summary.json", &(serde_json::to_string_pretty(&rows)? + "\n"))?;
    run.finish()
}

/// Run one parsed command; returns the run directory it wrote or reused.
pub fn run(cli: Cli) -> Result<PathBuf> {
    let g = &cli.global;
    let cfg = load_config(g)?;
    match &cli.command {
        Command::GenCorpus => gen_corpus_cmd(g, &cfg),
        Command::Pretrain => pretrain_cmd(g, &cfg),
        Command::Train(a) => train_cmd(g, &cfg, a, Attack::None, "train"),
        Command::AttackTrain { run, attack } => train_cmd(g, &cfg, run, *attack, "attack-train"),
        Command::Evaluate { run, split, beam } => evaluate_cmd(g, run, split, *beam),
        Command::ProbeLink { probe, k, adapter } => probe_link_cmd(g, &cfg, probe, *k, *adapter),
        Command::ProbeAttention { probe, adapter } => probe_attention_cmd(g, &cfg, probe, *adapter),
        Command::Report { runs } => report_cmd(g, &cfg, runs),
    }
}

/// Parse `args` (program name first) and run; returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(dir) => {
            println!("{}", dir.display());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
