//! `foodex`: command-line front end for the FoodEx2 coding pipeline.
//!
//! Each subcommand is a thin wrapper over `foodex-core`; this binary owns
//! argument parsing, file plumbing, backend wiring, and the batch worker
//! pool. Remote backends are used when the config names their endpoints,
//! otherwise everything falls back to the deterministic offline stack
//! (hashed-feature embedder plus lexical Jaccard scorer), so the full
//! pipeline runs with no services at all.

use std::collections::BTreeMap;
use std::error::Error;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Parser, Subcommand};

use foodex_core::classify::{
    sigmoid, train_linear_multilabel, CategoryScorer, LinearTrainConfig, Mlp,
};
use foodex_core::dataset::{
    default_anonymized_pattern, preprocess, read_raw_csv, read_samples_csv, split,
    write_raw_csv, write_samples_csv, Sample, SplitMode, SplitSpec,
};
use foodex_core::embedding::{DeterministicEmbedder, EmbeddingProvider};
use foodex_core::metrics::classification_metrics;
use foodex_core::mining::{export_line, mine_hard_negatives, MiningConfig};
use foodex_core::pipeline::{
    render_prompt, Backends, Generator, Pipeline, PipelineConfig, PipelineError, Prediction,
    PromptInputs, PromptTask, Task13Backend, Task2Backend,
};
use foodex_core::remote::{
    RemoteCategoryScorer, RemoteCrossEncoder, RemoteEmbedder, RemoteGenerator,
};
use foodex_core::rerank::{rerank_and_filter, LexicalJaccard, PairScorer};
use foodex_core::retrieval::{build_index, top_k, BuildOptions, VectorIndex};
use foodex_core::taxonomy::{FacetCategoryId, HierarchyId, Taxonomy, TermCode};

#[derive(Parser)]
#[command(
    name = "foodex",
    version,
    about = "FoodEx2 coding pipeline: preprocess, mine, index, retrieve, classify, evaluate"
)]
struct Cli {
    /// JSON pipeline config; library defaults apply when omitted.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Catalog TSV (code, name, hierarchy, parent, implicit facets, description).
    #[arg(long, global = true, value_name = "FILE")]
    catalog: Option<PathBuf>,
    /// Output file; stdout when omitted.
    #[arg(long, global = true, value_name = "FILE")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a raw export (ENFOODNAME, BASETERM_NAME, FACETS) and re-emit
    /// it as normalized CSV.
    Ingest {
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
    },
    /// Clean raw records into samples; the audit table goes to stderr.
    Preprocess {
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
    },
    /// Partition samples into train/val/test CSVs.
    Split {
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
        /// "stratified" or "oos" (out-of-sample by base term, no val split).
        #[arg(long, default_value = "stratified")]
        mode: String,
        #[arg(long, default_value_t = 1000)]
        test_size: usize,
        #[arg(long, default_value_t = 0)]
        val_size: usize,
        #[arg(long, value_name = "FILE")]
        train_out: PathBuf,
        #[arg(long, value_name = "FILE")]
        val_out: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        test_out: PathBuf,
    },
    /// Mine hard negatives, one `target<TAB>negative<TAB>provenance<TAB>score`
    /// line per negative.
    Mine {
        /// Target term code; may repeat.
        #[arg(long = "target", value_name = "CODE")]
        targets: Vec<String>,
        /// Mine every non-root term of this hierarchy (BASE or F01..F28).
        #[arg(long, value_name = "ID")]
        hierarchy: Option<String>,
        #[arg(long, default_value_t = 10)]
        negatives: usize,
    },
    /// Embed one hierarchy into a vector index file (written to --out).
    Index {
        #[arg(long, value_name = "ID")]
        hierarchy: String,
    },
    /// Search a saved index; emits `code<TAB>score` lines.
    Retrieve {
        #[arg(long, value_name = "FILE")]
        index: PathBuf,
        #[arg(long)]
        query: String,
        #[arg(short, long)]
        k: Option<usize>,
    },
    /// Retrieve then rerank with the configured pair scorer; emits survivors.
    Rerank {
        #[arg(long, value_name = "FILE")]
        index: PathBuf,
        #[arg(long)]
        query: String,
        #[arg(short, long)]
        k: Option<usize>,
        #[arg(long)]
        tau: Option<f64>,
    },
    /// Score one text against all 28 facet categories (Task II in isolation).
    ClassifyCategories {
        #[arg(long)]
        text: String,
        /// Samples CSV to fit the linear scorer on (linear backend only).
        #[arg(long, value_name = "FILE")]
        train: Option<PathBuf>,
    },
    /// Run the full three-task pipeline on one text or a batch file.
    Code {
        #[arg(long, conflicts_with = "input")]
        text: Option<String>,
        /// Batch file, one food description per line.
        #[arg(long, value_name = "FILE")]
        input: Option<PathBuf>,
        /// Samples CSV to fit the linear Task II scorer on.
        #[arg(long, value_name = "FILE")]
        train: Option<PathBuf>,
        /// Worker threads for batch inputs.
        #[arg(long, default_value_t = 4)]
        jobs: usize,
    },
    /// Compare `input<TAB>code` predictions against gold samples.
    Eval {
        #[arg(long, value_name = "FILE")]
        pred: PathBuf,
        #[arg(long, value_name = "FILE")]
        gold: PathBuf,
        /// Emit tab-separated records instead of the table.
        #[arg(long)]
        records: bool,
    },
    /// Render the LLM prompt for one task.
    Prompt {
        /// "base-term", "category", or "descriptor".
        #[arg(long)]
        task: String,
        #[arg(long)]
        context: String,
        #[arg(long = "candidate", value_name = "CODE")]
        candidates: Vec<String>,
        #[arg(long)]
        food: String,
        /// Required for the descriptor task.
        #[arg(long)]
        category: Option<String>,
    },
}

type CliResult = Result<(), Box<dyn Error>>;

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> CliResult {
    let cfg = load_config(&cli)?;
    match &cli.command {
        Command::Ingest { input } => ingest(&cli, input),
        Command::Preprocess { input } => run_preprocess(&cli, input),
        Command::Split {
            input,
            mode,
            test_size,
            val_size,
            train_out,
            val_out,
            test_out,
        } => run_split(
            &cfg, input, mode, *test_size, *val_size, train_out, val_out.as_deref(), test_out,
        ),
        Command::Mine {
            targets,
            hierarchy,
            negatives,
        } => mine(&cli, &cfg, targets, hierarchy.as_deref(), *negatives),
        Command::Index { hierarchy } => index(&cli, &cfg, hierarchy),
        Command::Retrieve { index, query, k } => retrieve(&cli, &cfg, index, query, *k),
        Command::Rerank {
            index,
            query,
            k,
            tau,
        } => rerank(&cli, &cfg, index, query, *k, *tau),
        Command::ClassifyCategories { text, train } => {
            classify_categories(&cli, &cfg, text, train.as_deref())
        }
        Command::Code {
            text,
            input,
            train,
            jobs,
        } => code(&cli, &cfg, text.as_deref(), input.as_deref(), train.as_deref(), *jobs),
        Command::Eval {
            pred,
            gold,
            records,
        } => eval(&cli, pred, gold, *records),
        Command::Prompt {
            task,
            context,
            candidates,
            food,
            category,
        } => prompt(&cli, task, context, candidates, food, category.as_deref()),
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, Box<dyn Error>> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::from_json(&fs::read_to_string(path)?)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn load_catalog(cli: &Cli) -> Result<Taxonomy, Box<dyn Error>> {
    let path = cli
        .catalog
        .as_ref()
        .ok_or("this command needs --catalog <file>")?;
    Ok(Taxonomy::from_catalog_str(&fs::read_to_string(path)?)?)
}

fn emit(cli: &Cli, content: &str) -> CliResult {
    match &cli.out {
        Some(path) => fs::write(path, content)?,
        None => std::io::stdout().write_all(content.as_bytes())?,
    }
    Ok(())
}

/// Remote provider when the config names an embed endpoint, hashed-feature
/// embedder otherwise.
fn embedding_provider(cfg: &PipelineConfig) -> Result<Box<dyn EmbeddingProvider>, Box<dyn Error>> {
    Ok(match &cfg.endpoints.embed {
        Some(base) => Box::new(RemoteEmbedder::connect(base)?),
        None => Box::new(DeterministicEmbedder::default()),
    })
}

fn pair_scorer(cfg: &PipelineConfig) -> Result<Box<dyn PairScorer>, Box<dyn Error>> {
    Ok(match &cfg.endpoints.score {
        Some(base) => Box::new(RemoteCrossEncoder::new(base)?),
        None => Box::new(LexicalJaccard),
    })
}

fn category_scorer(
    cfg: &PipelineConfig,
    train: Option<&Path>,
) -> Result<Option<Box<dyn CategoryScorer>>, Box<dyn Error>> {
    match cfg.task2_backend {
        Task2Backend::ThresholdRemote => {
            let base = cfg
                .endpoints
                .categories
                .as_ref()
                .ok_or("task II backend is threshold_remote but the config has no categories endpoint")?;
            Ok(Some(Box::new(RemoteCategoryScorer::new(base)?)))
        }
        Task2Backend::Linear => {
            let path = train.ok_or(
                "task II backend is linear; pass --train <samples.csv> to fit the scorer",
            )?;
            let samples = read_samples_csv(fs::File::open(path)?)?;
            let data: Vec<_> = samples
                .into_iter()
                .map(|s| {
                    let cats = s.gold.facets.iter().map(|g| g.category).collect();
                    (s.description, cats)
                })
                .collect();
            let train_cfg = LinearTrainConfig {
                seed: cfg.seed,
                ..LinearTrainConfig::default()
            };
            let (model, losses) = train_linear_multilabel(&data, &train_cfg)?;
            eprintln!(
                "fitted linear scorer on {} samples, loss {:.4} -> {:.4}",
                data.len(),
                losses.first().unwrap_or(&f64::NAN),
                losses.last().unwrap_or(&f64::NAN)
            );
            Ok(Some(Box::new(model)))
        }
        Task2Backend::Biencoder | Task2Backend::Llm => Ok(None),
    }
}

fn generator(cfg: &PipelineConfig) -> Result<Option<Box<dyn Generator>>, Box<dyn Error>> {
    let llm_in_use = cfg.task2_backend == Task2Backend::Llm
        || cfg.task13_backend == Task13Backend::Llm;
    if !llm_in_use {
        return Ok(None);
    }
    let base = cfg
        .endpoints
        .generate
        .as_ref()
        .ok_or("an LLM backend is configured but the config has no generate endpoint")?;
    Ok(Some(Box::new(RemoteGenerator::new(base)?)))
}

fn backends(cfg: &PipelineConfig, train: Option<&Path>) -> Result<Backends, Box<dyn Error>> {
    Ok(Backends {
        provider: embedding_provider(cfg)?,
        pair_scorer: pair_scorer(cfg)?,
        category_scorer: category_scorer(cfg, train)?,
        biencoder_mlp: matches!(cfg.task2_backend, Task2Backend::Biencoder)
            .then(|| Mlp::identity(FacetCategoryId::COUNT)),
        generator: generator(cfg)?,
    })
}

fn ingest(cli: &Cli, input: &Path) -> CliResult {
    let records = read_raw_csv(fs::File::open(input)?)?;
    let mut buffer = Vec::new();
    write_raw_csv(&records, &mut buffer)?;
    eprintln!("ingested {} records", records.len());
    emit(cli, &String::from_utf8(buffer).expect("csv output is UTF-8"))
}

fn run_preprocess(cli: &Cli, input: &Path) -> CliResult {
    let tx = load_catalog(cli)?;
    let records = read_raw_csv(fs::File::open(input)?)?;
    let (samples, audit) = preprocess(&records, &tx, &default_anonymized_pattern());
    let mut buffer = Vec::new();
    write_samples_csv(&samples, &mut buffer)?;
    eprint!("{}", audit.render());
    emit(cli, &String::from_utf8(buffer).expect("csv output is UTF-8"))
}

#[allow(clippy::too_many_arguments)]
fn run_split(
    cfg: &PipelineConfig,
    input: &Path,
    mode: &str,
    test_size: usize,
    val_size: usize,
    train_out: &Path,
    val_out: Option<&Path>,
    test_out: &Path,
) -> CliResult {
    let mode = match mode {
        "stratified" => SplitMode::Stratified,
        "oos" => SplitMode::Oos,
        other => return Err(format!("unknown split mode {other:?}; expected stratified or oos").into()),
    };
    let samples = read_samples_csv(fs::File::open(input)?)?;
    let spec = SplitSpec {
        mode,
        seed: cfg.seed,
        test_target_size: test_size,
        val_target_size: val_size,
    };
    let splits = split(&samples, &spec)?;
    write_samples_csv(&splits.train, fs::File::create(train_out)?)?;
    write_samples_csv(&splits.test, fs::File::create(test_out)?)?;
    match (val_out, splits.val.is_empty()) {
        (Some(path), _) => write_samples_csv(&splits.val, fs::File::create(path)?)?,
        (None, false) => {
            return Err("the split produced a validation set; pass --val-out <file>".into())
        }
        (None, true) => {}
    }
    eprintln!(
        "split {} samples into {} train / {} val / {} test",
        samples.len(),
        splits.train.len(),
        splits.val.len(),
        splits.test.len()
    );
    Ok(())
}

fn mine(
    cli: &Cli,
    cfg: &PipelineConfig,
    targets: &[String],
    hierarchy: Option<&str>,
    negatives: usize,
) -> CliResult {
    let tx = load_catalog(cli)?;
    let mut codes: Vec<TermCode> = Vec::new();
    for raw in targets {
        codes.push(raw.parse().map_err(|e| format!("target {raw:?}: {e}"))?);
    }
    if let Some(raw) = hierarchy {
        let id: HierarchyId = raw.parse()?;
        let h = tx
            .hierarchy(id)
            .ok_or_else(|| format!("hierarchy {id} is not in the catalog"))?;
        // Roots are organizational, not codable; they are never mining targets.
        codes.extend(
            h.nodes()
                .iter()
                .filter(|n| n.parent.is_some())
                .map(|n| n.code.clone()),
        );
    }
    if codes.is_empty() {
        return Err("nothing to mine: pass --target <code> or --hierarchy <id>".into());
    }
    let mining = MiningConfig {
        n_negatives: negatives,
        rng_seed: cfg.seed,
    };
    let mut lines = String::new();
    for target in &codes {
        let set = mine_hard_negatives(target, &mining, &tx)?;
        if set.pool_exhausted {
            eprintln!(
                "{target}: pool exhausted, {} of {negatives} negatives",
                set.negatives.len()
            );
        }
        for negative in &set.negatives {
            lines.push_str(&export_line(&set, negative));
            lines.push('\n');
        }
    }
    emit(cli, &lines)
}

fn index(cli: &Cli, cfg: &PipelineConfig, hierarchy: &str) -> CliResult {
    let out = cli
        .out
        .as_ref()
        .ok_or("index writes a file; pass --out <file>")?;
    let tx = load_catalog(cli)?;
    let id: HierarchyId = hierarchy.parse()?;
    let provider = embedding_provider(cfg)?;
    let index = build_index(&tx, id, provider.as_ref(), BuildOptions::default())?;
    index.save(out)?;
    eprintln!(
        "indexed {} {id} entries (dimension {}) -> {}",
        index.len(),
        index.dimension(),
        out.display()
    );
    Ok(())
}

fn format_ranking(items: &[(TermCode, f64)]) -> String {
    let mut out = String::new();
    for (code, score) in items {
        out.push_str(&format!("{code}\t{score}\n"));
    }
    out
}

fn retrieve(
    cli: &Cli,
    cfg: &PipelineConfig,
    index: &Path,
    query: &str,
    k: Option<usize>,
) -> CliResult {
    let index = VectorIndex::load(index)?;
    let provider = embedding_provider(cfg)?;
    let run = top_k(&index, query, k.unwrap_or(cfg.k_base), provider.as_ref())?;
    emit(cli, &format_ranking(&run.items))
}

fn rerank(
    cli: &Cli,
    cfg: &PipelineConfig,
    index: &Path,
    query: &str,
    k: Option<usize>,
    tau: Option<f64>,
) -> CliResult {
    let index = VectorIndex::load(index)?;
    let provider = embedding_provider(cfg)?;
    let scorer = pair_scorer(cfg)?;
    let tau = tau.unwrap_or(cfg.tau_base);
    let retrieved = top_k(&index, query, k.unwrap_or(cfg.k_base), provider.as_ref())?;
    let survivors = rerank_and_filter(scorer.as_ref(), query, &retrieved, &index, tau)?;
    if survivors.items.is_empty() {
        eprintln!("no candidate cleared tau = {tau}");
    }
    emit(cli, &format_ranking(&survivors.items))
}

fn classify_categories(
    cli: &Cli,
    cfg: &PipelineConfig,
    text: &str,
    train: Option<&Path>,
) -> CliResult {
    if !matches!(
        cfg.task2_backend,
        Task2Backend::ThresholdRemote | Task2Backend::Linear
    ) {
        // The other two backends need Task I output (a base term), so they
        // only make sense inside `code`.
        return Err(
            "classify-categories supports the threshold_remote and linear backends; \
             use `code` for the bi-encoder and LLM paths"
                .into(),
        );
    }
    let scorer = category_scorer(cfg, train)?.expect("both supported backends produce a scorer");
    let scores = scorer.score_text(text)?;
    let mut out = String::new();
    for id in FacetCategoryId::all() {
        let p = sigmoid(scores.logit(id));
        if p >= cfg.tau_category {
            out.push_str(&format!("{id}\t{p:.4}\n"));
        }
    }
    if out.is_empty() {
        eprintln!("no category cleared tau = {}", cfg.tau_category);
    }
    emit(cli, &out)
}

/// Runs the pipeline over a batch with a bounded worker pool. Results come
/// back in input order regardless of scheduling, so batch output is
/// deterministic whenever the backends are.
fn classify_batch(
    pipeline: &Pipeline,
    inputs: &[String],
    jobs: usize,
) -> Vec<Result<Prediction, PipelineError>> {
    let jobs = jobs.clamp(1, inputs.len().max(1));
    let cursor = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<Prediction, PipelineError>>>> =
        inputs.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let i = cursor.fetch_add(1, Ordering::Relaxed);
                let Some(input) = inputs.get(i) else { break };
                *slots[i].lock().expect("no panics while holding the slot") =
                    Some(pipeline.classify(input));
            });
        }
    });
    slots
        .into_iter()
        .map(|slot| slot.into_inner().expect("worker pool done").expect("slot filled"))
        .collect()
}

fn code(
    cli: &Cli,
    cfg: &PipelineConfig,
    text: Option<&str>,
    input: Option<&Path>,
    train: Option<&Path>,
    jobs: usize,
) -> CliResult {
    let tx = load_catalog(cli)?;
    let backends = backends(cfg, train)?;
    let pipeline = Pipeline::new(&tx, cfg.clone(), backends)?;

    match (text, input) {
        (Some(text), None) => {
            let p = pipeline.classify(text)?;
            eprintln!(
                "base term {} ({} retrieved{}), categories [{}]",
                p.task1.base_term,
                p.task1.retrieved.items.len(),
                if p.task1.fallback { ", via fallback" } else { "" },
                p.task2
                    .categories
                    .iter()
                    .map(|c| c.to_string())
                    .collect::<Vec<_>>()
                    .join(", "),
            );
            emit(cli, &format!("{}\n", p.predicted))
        }
        (None, Some(path)) => {
            let inputs: Vec<String> = fs::read_to_string(path)?
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(str::to_owned)
                .collect();
            let mut out = String::new();
            let mut failures = 0usize;
            for (input, result) in inputs.iter().zip(classify_batch(&pipeline, &inputs, jobs)) {
                match result {
                    Ok(p) => out.push_str(&format!("{input}\t{}\n", p.predicted)),
                    Err(e) => {
                        failures += 1;
                        eprintln!("{input}: {e}");
                    }
                }
            }
            if failures > 0 {
                eprintln!("{failures} of {} inputs failed", inputs.len());
            }
            emit(cli, &out)?;
            if failures > 0 {
                return Err("batch finished with failures".into());
            }
            Ok(())
        }
        _ => Err("pass exactly one of --text or --input".into()),
    }
}

fn eval(cli: &Cli, pred: &Path, gold: &Path, records: bool) -> CliResult {
    let golds = read_samples_csv(fs::File::open(gold)?)?;
    let by_description: BTreeMap<&str, &Sample> =
        golds.iter().map(|s| (s.description.as_str(), s)).collect();

    let mut pred_codes = Vec::new();
    let mut gold_codes = Vec::new();
    for (number, line) in fs::read_to_string(pred)?.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        // Codes never contain tabs; descriptions might, so split at the last one.
        let (input, code) = line
            .rsplit_once('\t')
            .ok_or_else(|| format!("prediction line {}: expected input<TAB>code", number + 1))?;
        let sample = by_description
            .get(input)
            .ok_or_else(|| format!("prediction line {}: {input:?} is not in the gold set", number + 1))?;
        let code: foodex_core::codec::FoodCode = code
            .parse()
            .map_err(|e| format!("prediction line {}: {e}", number + 1))?;
        pred_codes.push(code);
        gold_codes.push(sample.gold.clone());
    }

    let n = pred_codes.len();
    if n == 0 {
        return Err("no predictions to evaluate".into());
    }
    let exact = pred_codes.iter().zip(&gold_codes).filter(|(p, g)| p == g).count();
    let base = pred_codes
        .iter()
        .zip(&gold_codes)
        .filter(|(p, g)| p.base_term == g.base_term)
        .count();

    let cat_sets = |codes: &[foodex_core::codec::FoodCode]| {
        codes
            .iter()
            .map(|c| c.facets.iter().map(|g| g.category).collect())
            .collect::<Vec<std::collections::BTreeSet<FacetCategoryId>>>()
    };
    let labels: Vec<FacetCategoryId> = FacetCategoryId::all().collect();
    let mut report = classification_metrics(&cat_sets(&pred_codes), &cat_sets(&gold_codes), &labels)?;
    report
        .metrics
        .insert("code_exact_match".into(), exact as f64 / n as f64);
    report
        .metrics
        .insert("base_term_acc".into(), base as f64 / n as f64);

    eprintln!("evaluated {n} predictions against {} gold samples", golds.len());
    if records {
        emit(cli, &report.render_records())
    } else {
        emit(cli, &report.render_table())
    }
}

fn prompt(
    cli: &Cli,
    task: &str,
    context: &str,
    candidates: &[String],
    food: &str,
    category: Option<&str>,
) -> CliResult {
    let task: PromptTask = task.parse()?;
    let rendered = render_prompt(
        task,
        &PromptInputs {
            context,
            candidates,
            food,
            category,
        },
    )?;
    emit(cli, &format!("{}\n{}\n", rendered.system, rendered.user))
}
