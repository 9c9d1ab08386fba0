//! Command-line front end. Each subcommand reads files from a run directory,
//! writes new files next to them and records the resolved config it ran with.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use crate::agent::{derive_budget, AgentError, PolicyAgent};
use crate::config::{ConfigError, RunConfig};
use crate::corpus::{generate_synthetic, noise_ids_to_text, parse_dataset, parse_noise_ids, Dataset, RelationId};
use crate::evaluate::{bag_pr_curve, bag_scores, denoise_report, pr_csv, pr_svg, NetworkScorer, PrCurve};
use crate::featurize::{FeatureStore, Vocab};
use crate::pipeline::{
    initial_embeddings, pretrain_relation, relation_seed, relation_sets, score_sets, train_multiclass, PipelineError, Prepared,
};
use crate::redistribute::redistribute;
use crate::rltrain::{epochs_csv, removed_sidecar, train_agent};
use crate::seeds::derive;
use crate::tinynn::{Checkpoint, Network};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

const GEN_SNAPSHOT: &str = "gen.config.toml";

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments, bad or missing input files.
    Validation(String),
    /// Training faults and failed writes.
    Runtime(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        let msg = e.to_string();
        match e {
            PipelineError::Corpus { .. } | PipelineError::Feature(_) | PipelineError::Io { .. } => CliError::Validation(msg),
            PipelineError::Agent { source: AgentError::Train(_), .. } | PipelineError::Rl { .. } => CliError::Runtime(msg),
            PipelineError::Agent { .. } => CliError::Validation(msg),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "dsdenoise", version, about = "Find and redistribute false positives in distantly supervised relation data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML config file; defaults to the run's gen snapshot when present.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Override one config field, e.g. `--set rl_epochs=10`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args, Debug, Clone)]
struct RunDir {
    #[command(flatten)]
    common: Common,
    /// Run directory produced by `gen` (or holding train.tsv/test.tsv).
    #[arg(long)]
    run: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Stage {
    Pretrain,
    Rl,
}

impl Stage {
    fn name(self) -> &'static str {
        match self {
            Stage::Pretrain => "pretrain",
            Stage::Rl => "rl",
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Variant {
    Original,
    Pretrain,
    Rl,
}

impl Variant {
    fn name(self) -> &'static str {
        match self {
            Variant::Original => "original",
            Variant::Pretrain => "pretrain",
            Variant::Rl => "rl",
        }
    }

    fn dataset_file(self) -> String {
        match self {
            Variant::Original => "train.tsv".into(),
            _ => format!("redistributed.{}.tsv", self.name()),
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic train and test corpora with known noise.
    Gen {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Supervised warm-up of one agent per relation.
    Pretrain(RunDir),
    /// Reinforcement training of every pre-trained agent.
    TrainAgent {
        #[command(flatten)]
        dir: RunDir,
        /// Train up to this many relations at once.
        #[arg(long, default_value_t = 1)]
        parallel_relations: usize,
    },
    /// Move flagged positives of the training corpus into NA.
    Redistribute {
        #[command(flatten)]
        dir: RunDir,
        #[arg(long, value_enum, default_value = "rl")]
        agents: Stage,
        /// Classify with an empty removed-average instead of the agent's frozen one.
        #[arg(long)]
        zero_state: bool,
    },
    /// Train a multi-class sentence classifier on one version of the corpus.
    TrainClassifier {
        #[command(flatten)]
        dir: RunDir,
        #[arg(long, value_enum, default_value = "original")]
        data: Variant,
    },
    /// Held-out precision/recall of trained classifiers on the test corpus.
    Eval {
        #[command(flatten)]
        dir: RunDir,
        #[arg(long, value_enum, default_values = ["original"])]
        data: Vec<Variant>,
        /// Also draw the curves into pr.svg.
        #[arg(long)]
        svg: bool,
    },
    /// Per-relation F1 table (original, pre-trained, RL) and removal counts.
    Report(RunDir),
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code. Diagnostics go to stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).try_init();
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.code()
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Gen { common, out } => gen(&common, &out),
        Command::Pretrain(dir) => pretrain(&dir),
        Command::TrainAgent { dir, parallel_relations } => train_agents(&dir, parallel_relations),
        Command::Redistribute { dir, agents, zero_state } => redistribute_cmd(&dir, agents, zero_state),
        Command::TrainClassifier { dir, data } => train_classifier(&dir, data),
        Command::Eval { dir, data, svg } => eval(&dir, &data, svg),
        Command::Report(dir) => report(&dir),
    }
}

// ---- config and files ----

/// Defaults, then the config file, then `--set` overrides, then `--seed`.
fn resolve_config(common: &Common, fallback: Option<&Path>) -> Result<RunConfig, CliError> {
    let mut table = toml::Table::new();
    let path = common.config.as_deref().or(fallback.filter(|p| p.exists()));
    if let Some(path) = path {
        let text = read(path)?;
        table = text.parse::<toml::Table>().map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    }
    for kv in &common.overrides {
        let (key, raw) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Validation(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        let (key, raw) = (key.trim(), raw.trim());
        let value = format!("v = {raw}")
            .parse::<toml::Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_string()));
        table.insert(key.to_string(), value);
    }
    if let Some(seed) = common.seed {
        let seed = i64::try_from(seed).map_err(|_| CliError::Validation(format!("seed {seed} exceeds {}", i64::MAX)))?;
        table.insert("seed".into(), toml::Value::Integer(seed));
    }
    let cfg: RunConfig = table.try_into().map_err(|e: toml::de::Error| CliError::Validation(format!("config: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

fn run_config(dir: &RunDir, name: &str) -> Result<RunConfig, CliError> {
    if !dir.run.is_dir() {
        return Err(CliError::Validation(format!("run directory {} does not exist", dir.run.display())));
    }
    let cfg = resolve_config(&dir.common, Some(&dir.run.join(GEN_SNAPSHOT)))?;
    write(&dir.run.join(format!("{name}.config.toml")), &cfg.to_toml())?;
    Ok(cfg)
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    let fail = |e: std::io::Error| CliError::Runtime(format!("cannot write {}: {e}", path.display()));
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(fail)?;
    }
    std::fs::write(path, contents).map_err(fail)?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn invalid(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Validation(format!("{}: {e}", path.display()))
}

/// Loads a TSV dataset and, when present, its `.noise` sidecar.
fn load_dataset(path: &Path) -> Result<Dataset, CliError> {
    let mut ds = parse_dataset(&read(path)?).map_err(|e| invalid(path, e))?;
    let noise = path.with_extension("noise");
    if noise.exists() {
        let truth = parse_noise_ids(&read(&noise)?).map_err(|e| invalid(&noise, e))?;
        if let Some(&bad) = truth.iter().find(|&&id| id as usize >= ds.instances.len()) {
            return Err(invalid(&noise, format!("instance id {bad} is out of range")));
        }
        ds.set_noise_truth(&truth);
    }
    Ok(ds)
}

/// Loads a dataset re-indexed against the training relations and vocabulary.
fn load_aligned(path: &Path, train: &Dataset, vocab: &Vocab) -> Result<Dataset, CliError> {
    let ds = load_dataset(path)?;
    Ok(ds.align_relations(&train.relations).map_err(|e| invalid(path, e))?.remap_to_vocab(vocab))
}

fn load_vocab(run: &Path) -> Result<Vocab, CliError> {
    let path = run.join("vocab.txt");
    Vocab::from_text(&read(&path)?).map_err(|e| invalid(&path, e))
}

fn prepare(ds: Dataset, cfg: &RunConfig) -> Result<Prepared, CliError> {
    let emb = initial_embeddings(cfg, &ds.vocab)?;
    Ok(Prepared::new(ds, emb, cfg.l_max).map_err(PipelineError::from)?)
}

fn agent_dir(run: &Path, stage: Stage) -> PathBuf {
    run.join("agents").join(stage.name())
}

fn agent_file(run: &Path, stage: Stage, r: RelationId) -> PathBuf {
    agent_dir(run, stage).join(format!("rel_{r}.ckpt"))
}

/// Reads the relation ids listed in an agent directory's index.
fn agent_index(run: &Path, stage: Stage) -> Result<Vec<RelationId>, CliError> {
    let path = agent_dir(run, stage).join("index.csv");
    if !path.exists() {
        let hint = match stage {
            Stage::Pretrain => "run `pretrain` first",
            Stage::Rl => "run `train-agent` first",
        };
        return Err(CliError::Validation(format!("missing {} checkpoint index {} ({hint})", stage.name(), path.display())));
    }
    read(&path)?
        .lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split(',').next().unwrap_or("").parse().map_err(|e| invalid(&path, e)))
        .collect()
}

fn load_agents(run: &Path, stage: Stage) -> Result<BTreeMap<RelationId, PolicyAgent>, CliError> {
    let mut out = BTreeMap::new();
    for r in agent_index(run, stage)? {
        let path = agent_file(run, stage, r);
        if !path.exists() {
            return Err(CliError::Validation(format!("missing {} checkpoint {}", stage.name(), path.display())));
        }
        let ck = Checkpoint::parse(&read(&path)?).map_err(|e| invalid(&path, e))?;
        let agent = PolicyAgent::from_checkpoint(&ck).map_err(|e| invalid(&path, e))?;
        if agent.relation != r {
            return Err(invalid(&path, format!("holds relation {} rather than {r}", agent.relation)));
        }
        out.insert(r, agent);
    }
    Ok(out)
}

fn check_agent_fits(agent: &PolicyAgent, prep: &Prepared, cfg: &RunConfig, path: &Path) -> Result<(), CliError> {
    let shape = agent.net.shape();
    if shape.vocab_len != prep.embeddings.vocab_len() || shape.l_max != cfg.l_max {
        return Err(invalid(path, "checkpoint was trained with a different vocabulary or l_max"));
    }
    Ok(())
}

// ---- subcommands ----

fn gen(common: &Common, out: &Path) -> Result<(), CliError> {
    let cfg = resolve_config(common, None)?;
    let (train, train_noise) = generate_synthetic(&cfg.synthetic(derive(cfg.seed, "corpus"))).map_err(|e| CliError::Validation(e.to_string()))?;
    let mut test_cfg = cfg.synthetic(derive(cfg.seed, "test-corpus"));
    test_cfg.instances_per_relation = ((cfg.instances_per_relation as f64 * cfg.test_scale).round() as usize).max(1);
    test_cfg.na_instances = (cfg.na_instances as f64 * cfg.test_scale).round() as usize;
    let (test, test_noise) = generate_synthetic(&test_cfg).map_err(|e| CliError::Validation(e.to_string()))?;
    write(&out.join("train.tsv"), &train.to_tsv())?;
    write(&out.join("train.noise"), &noise_ids_to_text(&train_noise))?;
    write(&out.join("test.tsv"), &test.to_tsv())?;
    write(&out.join("test.noise"), &noise_ids_to_text(&test_noise))?;
    write(&out.join(GEN_SNAPSHOT), &cfg.to_toml())
}

fn pretrain(dir: &RunDir) -> Result<(), CliError> {
    let cfg = run_config(dir, "pretrain")?;
    let ds = load_dataset(&dir.run.join("train.tsv"))?;
    write(&dir.run.join("vocab.txt"), &ds.vocab.to_text())?;
    let prep = prepare(ds, &cfg)?;
    let mut index = String::from("relation_id,relation,reached_band,epochs,heldout_accuracy,gamma_t,gamma_v\n");
    for r in 1..prep.dataset.relations.len() {
        let name = &prep.dataset.relations[r];
        let pre = match pretrain_relation(&prep, r, &cfg) {
            Ok(pre) => pre,
            Err(e @ (PipelineError::Corpus { .. } | PipelineError::Agent { source: AgentError::TooFewPositives { .. }, .. })) => {
                log::warn!("skipping relation {name}: {e}");
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let last = pre.outcome.history.last().map_or(0.0, |h| h.heldout_accuracy);
        log::info!("relation {name}: pretrained {} epochs, held-out accuracy {last:.3}", pre.outcome.history.len());
        let mut log_csv = String::from("epoch,train_loss,heldout_accuracy\n");
        for h in &pre.outcome.history {
            writeln!(log_csv, "{},{},{}", h.epoch, h.train_loss, h.heldout_accuracy).unwrap();
        }
        write(&dir.run.join("logs").join(format!("rel_{r}.pretrain.csv")), &log_csv)?;
        write(&agent_file(&dir.run, Stage::Pretrain, r), &pre.agent.to_checkpoint().to_text())?;
        writeln!(
            index,
            "{r},{name},{},{},{last},{},{}",
            pre.outcome.reached_band,
            pre.outcome.history.len(),
            pre.budget.gamma_t,
            pre.budget.gamma_v
        )
        .unwrap();
    }
    write(&agent_dir(&dir.run, Stage::Pretrain).join("index.csv"), &index)
}

fn train_agents(dir: &RunDir, parallel: usize) -> Result<(), CliError> {
    if parallel == 0 {
        return Err(CliError::Validation("--parallel-relations must be at least 1".into()));
    }
    let cfg = run_config(dir, "train-agent")?;
    let agents = load_agents(&dir.run, Stage::Pretrain)?;
    let vocab = load_vocab(&dir.run)?;
    let ds = load_dataset(&dir.run.join("train.tsv"))?;
    let prep = prepare(ds.remap_to_vocab(&vocab), &cfg)?;
    for (&r, agent) in &agents {
        check_agent_fits(agent, &prep, &cfg, &agent_file(&dir.run, Stage::Pretrain, r))?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallel)
        .build()
        .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?;
    let jobs: Vec<(&RelationId, &PolicyAgent)> = agents.iter().collect();
    let results: Vec<_> = pool.install(|| {
        jobs.par_iter()
            .map(|&(&r, agent)| {
                let sets = relation_sets(&prep.dataset, r, &cfg).map_err(|source| PipelineError::Corpus { relation: r, source })?;
                let budget = derive_budget(agent, &prep.store, &sets.p_train, &sets.p_valid);
                let trainer = cfg.trainer(relation_seed(cfg.seed, "rl", r));
                log::info!("relation {}: training with budget {}", prep.dataset.relations[r], budget.gamma_t);
                train_agent(prep.features(), &sets, agent, budget, &trainer).map_err(|source| PipelineError::Rl { relation: r, source })
            })
            .collect()
    });
    let mut index = String::from("relation_id,relation,best_epoch,baseline_f1,best_f1,removed\n");
    for (&(&r, _), result) in jobs.iter().zip(results) {
        let outcome = result?;
        let best = outcome.best_log();
        writeln!(index, "{r},{},{},{},{},{}", prep.dataset.relations[r], outcome.best_epoch, outcome.baseline_f1, best.f1, best.removed.len()).unwrap();
        write(&dir.run.join("logs").join(format!("rel_{r}.epochs.csv")), &epochs_csv(outcome.baseline_f1, &outcome.logs))?;
        write(&dir.run.join("logs").join(format!("rel_{r}.removed.tsv")), &removed_sidecar(&outcome.logs))?;
        write(&agent_file(&dir.run, Stage::Rl, r), &outcome.best.to_checkpoint().to_text())?;
    }
    write(&agent_dir(&dir.run, Stage::Rl).join("index.csv"), &index)
}

fn redistribute_cmd(dir: &RunDir, stage: Stage, zero_state: bool) -> Result<(), CliError> {
    let mut cfg = run_config(dir, "redistribute")?;
    cfg.zero_state_redistribution |= zero_state;
    let agents = load_agents(&dir.run, stage)?;
    let vocab = load_vocab(&dir.run)?;
    let ds = load_dataset(&dir.run.join("train.tsv"))?.remap_to_vocab(&vocab);
    let store = FeatureStore::build(&ds.instances, vocab.len(), cfg.l_max).map_err(PipelineError::from)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?;
    let (out, report) = pool.install(|| redistribute(&ds, &store, &agents, cfg.zero_state_redistribution));
    let s = stage.name();
    write(&dir.run.join(format!("redistributed.{s}.tsv")), &out.to_tsv())?;
    write(&dir.run.join(format!("redistributed.{s}.noise")), &noise_ids_to_text(&ds.noise_truth()))?;
    write(&dir.run.join(format!("redistribution.{s}.csv")), &report.to_csv(&ds.relations))?;
    if dir.run.join("train.noise").exists() {
        let dn = denoise_report(&ds, &report.flagged(), &ds.noise_truth()).map_err(|e| CliError::Validation(e.to_string()))?;
        log::info!("removal precision {:.3}, recall {:.3}", dn.removal_precision, dn.removal_recall);
        write(&dir.run.join(format!("denoise.{s}.csv")), &dn.to_csv())?;
    }
    Ok(())
}

fn train_classifier(dir: &RunDir, data: Variant) -> Result<(), CliError> {
    let cfg = run_config(dir, &format!("train-classifier.{}", data.name()))?;
    let vocab = load_vocab(&dir.run)?;
    let train = load_dataset(&dir.run.join("train.tsv"))?;
    let path = dir.run.join(data.dataset_file());
    if !path.exists() {
        return Err(CliError::Validation(format!("missing dataset {} (run `redistribute --agents {}` first)", path.display(), data.name())));
    }
    let prep = prepare(load_aligned(&path, &train, &vocab)?, &cfg)?;
    let net = train_multiclass(&prep, &cfg).map_err(|e| CliError::Runtime(format!("classifier training: {e}")))?;
    write(&dir.run.join(format!("classifier.{}.ckpt", data.name())), &net.to_checkpoint().to_text())
}

fn eval(dir: &RunDir, data: &[Variant], svg: bool) -> Result<(), CliError> {
    let cfg = run_config(dir, "eval")?;
    let vocab = load_vocab(&dir.run)?;
    let train = load_dataset(&dir.run.join("train.tsv"))?;
    let test = load_aligned(&dir.run.join("test.tsv"), &train, &vocab)?;
    let store = FeatureStore::build(&test.instances, vocab.len(), cfg.l_max).map_err(PipelineError::from)?;
    let mut curves: Vec<(&str, PrCurve)> = Vec::new();
    let mut summary = String::from("data,auc,bag_relation_pairs,positive_pairs\n");
    for &v in data {
        let path = dir.run.join(format!("classifier.{}.ckpt", v.name()));
        if !path.exists() {
            return Err(CliError::Validation(format!("missing classifier {} (run `train-classifier --data {}` first)", path.display(), v.name())));
        }
        let net = Network::from_checkpoint(&Checkpoint::parse(&read(&path)?).map_err(|e| invalid(&path, e))?).map_err(|e| invalid(&path, e))?;
        let shape = net.shape();
        if shape.vocab_len != vocab.len() || shape.n_classes != train.relations.len() || shape.l_max != cfg.l_max {
            return Err(invalid(&path, "classifier does not match this run's vocabulary, relations or l_max"));
        }
        let scores = bag_scores(&NetworkScorer { net: &net, store: &store }, &test);
        let curve = bag_pr_curve(&scores).map_err(|e| CliError::Validation(format!("test corpus: {e}")))?;
        log::info!("{}: AUC {:.4}", v.name(), curve.auc);
        writeln!(summary, "{},{},{},{}", v.name(), curve.auc, scores.len(), scores.iter().filter(|s| s.gold).count()).unwrap();
        write(&dir.run.join(format!("pr.{}.csv", v.name())), &pr_csv(&curve))?;
        curves.push((v.name(), curve));
    }
    write(&dir.run.join("eval.csv"), &summary)?;
    if svg {
        let refs: Vec<(&str, &PrCurve)> = curves.iter().map(|(n, c)| (*n, c)).collect();
        write(&dir.run.join("pr.svg"), &pr_svg(&refs))?;
    }
    Ok(())
}

fn report(dir: &RunDir) -> Result<(), CliError> {
    let cfg = run_config(dir, "report")?;
    let pre_agents = load_agents(&dir.run, Stage::Pretrain)?;
    let rl_agents = load_agents(&dir.run, Stage::Rl)?;
    let vocab = load_vocab(&dir.run)?;
    let prep = prepare(load_dataset(&dir.run.join("train.tsv"))?.remap_to_vocab(&vocab), &cfg)?;
    let mut f1 = String::from("relation,original,pretrain,rl\n");
    let mut removed = String::from("relation,positives,removed_pretrain,removed_rl\n");
    let mut table = format!("{:<24} {:>9} {:>9} {:>9}\n", "relation", "Original", "Pretrain", "RL");
    for (&r, rl) in &rl_agents {
        let pre = pre_agents
            .get(&r)
            .ok_or_else(|| CliError::Validation(format!("missing pretrain checkpoint {}", agent_file(&dir.run, Stage::Pretrain, r).display())))?;
        let name = &prep.dataset.relations[r];
        let sets = relation_sets(&prep.dataset, r, &cfg).map_err(|source| PipelineError::Corpus { relation: r, source })?;
        let original = score_sets(&prep, r, &sets, None, &cfg)?;
        let pretrained = score_sets(&prep, r, &sets, Some(pre), &cfg)?;
        let trained = score_sets(&prep, r, &sets, Some(rl), &cfg)?;
        writeln!(f1, "{name},{},{},{}", original.f1, pretrained.f1, trained.f1).unwrap();
        let positives = sets.p_train.len() + sets.p_valid.len();
        let count = |s: &crate::pipeline::SetScore| s.removed_train + s.removed_valid;
        writeln!(removed, "{name},{positives},{},{}", count(&pretrained), count(&trained)).unwrap();
        writeln!(table, "{name:<24} {:>9.2} {:>9.2} {:>9.2}", 100.0 * original.f1, 100.0 * pretrained.f1, 100.0 * trained.f1).unwrap();
    }
    print!("{table}");
    write(&dir.run.join("report.f1.csv"), &f1)?;
    write(&dir.run.join("report.removed.csv"), &removed)
}
