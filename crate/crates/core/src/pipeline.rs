//! Three-stage coding pipeline.
//!
//! Task I picks the base term (retrieve + rerank over the base hierarchy, or
//! a prompted LLM choosing among retrieved candidates). Task II selects facet
//! categories (thresholded 28-way scorer, bi-encoder head, or LLM). Task III
//! assigns descriptors per selected category (retrieve + rerank over that
//! category's hierarchy, or LLM). `classify` composes the three into a full
//! FoodEx2 code.
//!
//! Per-hierarchy vector indexes are built lazily and cached in memory; with a
//! cache directory configured they also persist on disk, keyed by catalog
//! hash and embedding provider so a stale index can never serve a different
//! catalog or provider.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::{
    biencoder_classify, threshold_classify, CategoryScorer, CategoryScores, ClassifyError, Mlp,
};
use crate::codec::{FacetGroup, FoodCode};
use crate::embedding::EmbeddingProvider;
use crate::rerank::{rerank_and_filter, PairScorer, RerankError};
use crate::retrieval::{
    build_index, top_k, BuildOptions, RankedCandidates, RetrievalError, VectorIndex,
};
use crate::taxonomy::{FacetCategoryId, HierarchyId, Taxonomy, TermCode};

/// How Task II turns an input text into a category set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task2Backend {
    /// Remote 28-logit scorer plus sigmoid threshold.
    ThresholdRemote,
    /// Category-similarity vector through the MLP head, then threshold.
    Biencoder,
    /// Locally trained linear multi-label model, then threshold.
    Linear,
    /// Prompted generation over the category list.
    Llm,
}

/// How Tasks I and III choose among retrieved candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task13Backend {
    RetrieveRerank,
    Llm,
}

/// Base URLs of the optional remote services.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Endpoints {
    pub embed: Option<String>,
    pub score: Option<String>,
    pub categories: Option<String>,
    pub generate: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Candidate depth for Task I retrieval.
    pub k_base: usize,
    /// Candidate depth for Task III retrieval, per category.
    pub k_descriptor: usize,
    pub tau_base: f64,
    pub tau_descriptor: f64,
    pub tau_category: f64,
    pub task2_backend: Task2Backend,
    pub task13_backend: Task13Backend,
    pub endpoints: Endpoints,
    pub seed: u64,
    /// Directory for persisted vector indexes; in-memory only when unset.
    pub index_cache_dir: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            k_base: 10,
            k_descriptor: 10,
            tau_base: 0.5,
            tau_descriptor: 0.5,
            tau_category: 0.35,
            task2_backend: Task2Backend::Linear,
            task13_backend: Task13Backend::RetrieveRerank,
            endpoints: Endpoints::default(),
            seed: 42,
            index_cache_dir: None,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.k_base == 0 || self.k_descriptor == 0 {
            return Err(PipelineError::BadConfig(
                "candidate depth k must be at least 1".to_owned(),
            ));
        }
        for (name, tau) in [("tau_base", self.tau_base), ("tau_descriptor", self.tau_descriptor)] {
            if !tau.is_finite() || !(0.0..=1.0).contains(&tau) {
                return Err(PipelineError::BadConfig(format!("{name} must lie in [0, 1]")));
            }
        }
        if !(self.tau_category > 0.0 && self.tau_category < 1.0) {
            return Err(PipelineError::BadConfig(
                "tau_category must lie strictly in (0, 1)".to_owned(),
            ));
        }
        Ok(())
    }

    /// Parses a JSON config; absent fields take their defaults.
    pub fn from_json(text: &str) -> Result<PipelineConfig, PipelineError> {
        let cfg: PipelineConfig =
            serde_json::from_str(text).map_err(|e| PipelineError::BadConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Text generation backend for the LLM task variants.
pub trait Generator: Send + Sync {
    fn generator_id(&self) -> String;
    /// Raw model reply. Errors are plain messages so implementations stay
    /// decoupled from transport details.
    fn generate(&self, system: &str, user: &str) -> Result<String, String>;
}

impl Generator for crate::remote::RemoteGenerator {
    fn generator_id(&self) -> String {
        format!("remote:{}", self.endpoint())
    }

    fn generate(&self, system: &str, user: &str) -> Result<String, String> {
        crate::remote::RemoteGenerator::generate(self, system, user).map_err(|e| e.to_string())
    }
}

/// Model plumbing the pipeline runs on. The embedder and pair scorer are
/// always needed; the rest depend on the configured backends.
pub struct Backends {
    pub provider: Box<dyn EmbeddingProvider>,
    pub pair_scorer: Box<dyn PairScorer>,
    /// For `ThresholdRemote` and `Linear` Task II backends.
    pub category_scorer: Option<Box<dyn CategoryScorer>>,
    /// For the `Biencoder` Task II backend.
    pub biencoder_mlp: Option<Mlp>,
    /// For the LLM task variants.
    pub generator: Option<Box<dyn Generator>>,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    BadConfig(String),
    #[error("{stage}: no {what} backend is wired")]
    MissingBackend {
        stage: &'static str,
        what: &'static str,
    },
    #[error("no descriptor hierarchy for category {0} in this catalog")]
    MissingCategoryIndex(FacetCategoryId),
    #[error("{task} prompt needs a value for {placeholder}")]
    MissingPlaceholder {
        task: &'static str,
        placeholder: &'static str,
    },
    #[error("{stage}: {source}")]
    Retrieval {
        stage: &'static str,
        #[source]
        source: RetrievalError,
    },
    #[error("{stage}: {source}")]
    Rerank {
        stage: &'static str,
        #[source]
        source: RerankError,
    },
    #[error("{stage}: {source}")]
    Classify {
        stage: &'static str,
        #[source]
        source: ClassifyError,
    },
    #[error("{stage}: generation failed: {message}")]
    Generation {
        stage: &'static str,
        message: String,
    },
    #[error("index cache: {0}")]
    Cache(#[from] std::io::Error),
}

pub const TASK1_SYSTEM: &str = "Given a food item, select one or more base terms from the candidate options. The context provides additional information for each candidate.";
pub const TASK2_SYSTEM: &str = "Given a food item, select one or more categories that best describe it. The context provides additional information for each candidate. If no category applies, return an empty list [].";
pub const TASK3_SYSTEM: &str = "Given a food item in a category, select its most relevant descriptor(s) from the candidate options. The context provides additional information for each candidate descriptor.";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptTask {
    BaseTerm,
    Category,
    Descriptor,
}

impl FromStr for PromptTask {
    type Err = String;

    fn from_str(s: &str) -> Result<PromptTask, String> {
        match s {
            "base-term" => Ok(PromptTask::BaseTerm),
            "category" => Ok(PromptTask::Category),
            "descriptor" => Ok(PromptTask::Descriptor),
            other => Err(format!(
                "unknown prompt task {other:?}; expected base-term, category, or descriptor"
            )),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct PromptInputs<'a> {
    pub context: &'a str,
    pub candidates: &'a [String],
    pub food: &'a str,
    /// Task III only: name of the category being filled.
    pub category: Option<&'a str>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub system: String,
    pub user: String,
}

/// Renders the system and user messages for one task. The user templates are
/// pinned byte for byte, whitespace quirks included, because downstream
/// scoring was tuned against these exact strings.
pub fn render_prompt(task: PromptTask, inputs: &PromptInputs) -> Result<Prompt, PipelineError> {
    let candidates = format!("[{}]", inputs.candidates.join(", "));
    let context = inputs.context;
    let food = inputs.food;
    let (system, user) = match task {
        PromptTask::BaseTerm => (
            TASK1_SYSTEM,
            format!("Context:{context} BaseTerms: {candidates} Food: {food}"),
        ),
        PromptTask::Category => (
            TASK2_SYSTEM,
            format!("Context: {context} Categories: {candidates} Food: {food}"),
        ),
        PromptTask::Descriptor => {
            let category = inputs.category.ok_or(PipelineError::MissingPlaceholder {
                task: "descriptor",
                placeholder: "food_category",
            })?;
            (
                TASK3_SYSTEM,
                format!("Context: {context}  Descriptors: {candidates} Food: {food} Category: {category}"),
            )
        }
    };
    Ok(Prompt {
        system: system.to_owned(),
        user,
    })
}

#[derive(Debug, Clone)]
pub struct Task1Outcome {
    pub base_term: TermCode,
    pub retrieved: RankedCandidates,
    /// None when the LLM backend chose directly from the retrieved pool.
    pub reranked: Option<RankedCandidates>,
    /// True when nothing survived selection and the retrieval front-runner
    /// was used instead.
    pub fallback: bool,
    /// Reply tokens that named no retrieved candidate (LLM backend only).
    pub rejected: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Task2Outcome {
    pub categories: BTreeSet<FacetCategoryId>,
    /// Absent for the LLM backend, which produces no scores.
    pub scores: Option<CategoryScores>,
    pub rejected: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct CategoryRun {
    pub category: FacetCategoryId,
    pub retrieved: RankedCandidates,
    pub reranked: Option<RankedCandidates>,
    pub rejected: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Task3Outcome {
    pub groups: Vec<FacetGroup>,
    pub runs: Vec<CategoryRun>,
}

#[derive(Debug, Clone)]
pub struct Prediction {
    pub input: String,
    pub predicted: FoodCode,
    pub task1: Task1Outcome,
    pub task2: Task2Outcome,
    pub task3: Task3Outcome,
}

pub struct Pipeline<'t> {
    tx: &'t Taxonomy,
    cfg: PipelineConfig,
    backends: Backends,
    indexes: Mutex<BTreeMap<HierarchyId, Arc<VectorIndex>>>,
}

impl<'t> Pipeline<'t> {
    pub fn new(
        tx: &'t Taxonomy,
        cfg: PipelineConfig,
        backends: Backends,
    ) -> Result<Pipeline<'t>, PipelineError> {
        cfg.validate()?;
        Ok(Pipeline {
            tx,
            cfg,
            backends,
            indexes: Mutex::new(BTreeMap::new()),
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn taxonomy(&self) -> &Taxonomy {
        self.tx
    }

    /// Returns the hierarchy's index, building (and persisting, if a cache
    /// dir is set) on first use.
    pub fn index_for(&self, id: HierarchyId) -> Result<Arc<VectorIndex>, PipelineError> {
        let mut cache = self.indexes.lock().expect("index cache lock");
        if let Some(index) = cache.get(&id) {
            return Ok(Arc::clone(index));
        }
        let index = Arc::new(self.load_or_build(id)?);
        cache.insert(id, Arc::clone(&index));
        Ok(index)
    }

    fn load_or_build(&self, id: HierarchyId) -> Result<VectorIndex, PipelineError> {
        let path = self.cfg.index_cache_dir.as_ref().map(|dir| {
            let provider = sanitize_for_filename(&self.backends.provider.provider_id());
            dir.join(format!("{:016x}-{provider}-{id}.idx", self.tx.content_hash()))
        });
        if let Some(path) = &path {
            if path.exists() {
                return VectorIndex::load(path).map_err(|source| map_index_error(id, source));
            }
        }
        let index = build_index(
            self.tx,
            id,
            self.backends.provider.as_ref(),
            BuildOptions::default(),
        )
        .map_err(|source| map_index_error(id, source))?;
        if let Some(path) = &path {
            if let Some(dir) = path.parent() {
                std::fs::create_dir_all(dir)?;
            }
            index.save(path).map_err(|source| map_index_error(id, source))?;
        }
        Ok(index)
    }

    /// Base term identification. Retrieval always yields at least one
    /// candidate on a non-empty index, so there is always an answer: when
    /// nothing survives reranking (or the LLM names nothing valid), the
    /// retrieval front-runner is the fallback.
    pub fn run_task1(&self, input: &str) -> Result<Task1Outcome, PipelineError> {
        const STAGE: &str = "task I";
        let index = self.index_for(HierarchyId::Base)?;
        let retrieved = top_k(&index, input, self.cfg.k_base, self.backends.provider.as_ref())
            .map_err(|source| PipelineError::Retrieval { stage: STAGE, source })?;
        match self.cfg.task13_backend {
            Task13Backend::RetrieveRerank => {
                let reranked = rerank_and_filter(
                    self.backends.pair_scorer.as_ref(),
                    input,
                    &retrieved,
                    &index,
                    self.cfg.tau_base,
                )
                .map_err(|source| PipelineError::Rerank { stage: STAGE, source })?;
                let (base_term, fallback) = match reranked.items.first() {
                    Some((code, _)) => (code.clone(), false),
                    None => (retrieved.items[0].0.clone(), true),
                };
                Ok(Task1Outcome {
                    base_term,
                    retrieved,
                    reranked: Some(reranked),
                    fallback,
                    rejected: Vec::new(),
                })
            }
            Task13Backend::Llm => {
                let (choices, rejected) =
                    self.llm_pick_codes(PromptTask::BaseTerm, input, &retrieved, &index, None, STAGE)?;
                let (base_term, fallback) = match choices.first() {
                    Some(code) => (code.clone(), false),
                    None => (retrieved.items[0].0.clone(), true),
                };
                Ok(Task1Outcome {
                    base_term,
                    retrieved,
                    reranked: None,
                    fallback,
                    rejected,
                })
            }
        }
    }

    /// Facet category classification. An empty survivor set is a valid
    /// outcome: the food is then coded by base term alone.
    pub fn run_task2(&self, input: &str, base_term: &TermCode) -> Result<Task2Outcome, PipelineError> {
        const STAGE: &str = "task II";
        match self.cfg.task2_backend {
            Task2Backend::ThresholdRemote | Task2Backend::Linear => {
                let scorer = self.backends.category_scorer.as_deref().ok_or(
                    PipelineError::MissingBackend {
                        stage: STAGE,
                        what: "category scorer",
                    },
                )?;
                let scores = scorer
                    .score_text(input)
                    .map_err(|source| PipelineError::Classify { stage: STAGE, source })?;
                let categories = threshold_classify(&scores, self.cfg.tau_category)
                    .map_err(|source| PipelineError::Classify { stage: STAGE, source })?;
                Ok(Task2Outcome {
                    categories,
                    scores: Some(scores),
                    rejected: Vec::new(),
                })
            }
            Task2Backend::Biencoder => {
                let mlp = self
                    .backends
                    .biencoder_mlp
                    .as_ref()
                    .ok_or(PipelineError::MissingBackend {
                        stage: STAGE,
                        what: "bi-encoder head",
                    })?;
                let (categories, scores) = biencoder_classify(
                    input,
                    base_term,
                    self.tx,
                    self.backends.provider.as_ref(),
                    mlp,
                    self.cfg.tau_category,
                )
                .map_err(|source| PipelineError::Classify { stage: STAGE, source })?;
                Ok(Task2Outcome {
                    categories,
                    scores: Some(scores),
                    rejected: Vec::new(),
                })
            }
            Task2Backend::Llm => {
                let generator =
                    self.backends
                        .generator
                        .as_deref()
                        .ok_or(PipelineError::MissingBackend {
                            stage: STAGE,
                            what: "generator",
                        })?;
                let cats = self.tx.categories();
                let context = cats
                    .iter()
                    .map(|c| format!("{}: {}", c.id, c.name))
                    .collect::<Vec<_>>()
                    .join("; ");
                let candidates: Vec<String> = cats.iter().map(|c| c.id.to_string()).collect();
                let prompt = render_prompt(
                    PromptTask::Category,
                    &PromptInputs {
                        context: &context,
                        candidates: &candidates,
                        food: input,
                        category: None,
                    },
                )?;
                let reply = generator
                    .generate(&prompt.system, &prompt.user)
                    .map_err(|message| PipelineError::Generation { stage: STAGE, message })?;
                let known: BTreeSet<FacetCategoryId> = cats.iter().map(|c| c.id).collect();
                let mut categories = BTreeSet::new();
                let mut rejected = Vec::new();
                for token in split_reply(&reply) {
                    match token.parse::<FacetCategoryId>() {
                        Ok(id) if known.contains(&id) => {
                            categories.insert(id);
                        }
                        _ => rejected.push(token),
                    }
                }
                Ok(Task2Outcome {
                    categories,
                    scores: None,
                    rejected,
                })
            }
        }
    }

    /// Descriptor assignment for the given categories, in category order.
    /// Every survivor is kept; one category can contribute several
    /// descriptors. The query is the food description itself; base term and
    /// category steer candidate selection, not the query text.
    pub fn run_task3(
        &self,
        input: &str,
        categories: &BTreeSet<FacetCategoryId>,
    ) -> Result<Task3Outcome, PipelineError> {
        const STAGE: &str = "task III";
        let mut groups = Vec::new();
        let mut runs = Vec::new();
        for &category in categories {
            let index = self.index_for(HierarchyId::Facet(category))?;
            let retrieved = top_k(
                &index,
                input,
                self.cfg.k_descriptor,
                self.backends.provider.as_ref(),
            )
            .map_err(|source| PipelineError::Retrieval { stage: STAGE, source })?;
            match self.cfg.task13_backend {
                Task13Backend::RetrieveRerank => {
                    let reranked = rerank_and_filter(
                        self.backends.pair_scorer.as_ref(),
                        input,
                        &retrieved,
                        &index,
                        self.cfg.tau_descriptor,
                    )
                    .map_err(|source| PipelineError::Rerank { stage: STAGE, source })?;
                    groups.extend(reranked.items.iter().map(|(code, _)| FacetGroup {
                        category,
                        descriptor: code.clone(),
                    }));
                    runs.push(CategoryRun {
                        category,
                        retrieved,
                        reranked: Some(reranked),
                        rejected: Vec::new(),
                    });
                }
                Task13Backend::Llm => {
                    let name = self
                        .tx
                        .category(category)
                        .map(|c| c.name.clone())
                        .unwrap_or_else(|| category.to_string());
                    let (choices, rejected) = self.llm_pick_codes(
                        PromptTask::Descriptor,
                        input,
                        &retrieved,
                        &index,
                        Some(&name),
                        STAGE,
                    )?;
                    groups.extend(choices.iter().map(|code| FacetGroup {
                        category,
                        descriptor: code.clone(),
                    }));
                    runs.push(CategoryRun {
                        category,
                        retrieved,
                        reranked: None,
                        rejected,
                    });
                }
            }
        }
        Ok(Task3Outcome { groups, runs })
    }

    /// Full three-stage coding of one food description.
    pub fn classify(&self, input: &str) -> Result<Prediction, PipelineError> {
        let task1 = self.run_task1(input)?;
        let task2 = self.run_task2(input, &task1.base_term)?;
        let task3 = self.run_task3(input, &task2.categories)?;
        let predicted = FoodCode::new(task1.base_term.clone(), task3.groups.clone());
        debug_assert_eq!(
            crate::codec::parse_code(&predicted.to_string()).ok(),
            Some(predicted.clone()),
            "serialized prediction must reparse identically"
        );
        Ok(Prediction {
            input: input.to_owned(),
            predicted,
            task1,
            task2,
            task3,
        })
    }

    /// Prompts the generator with the retrieved candidates and keeps only
    /// reply tokens that name one of them; everything else is returned as
    /// rejected so callers can log hallucinations.
    fn llm_pick_codes(
        &self,
        task: PromptTask,
        food: &str,
        retrieved: &RankedCandidates,
        index: &VectorIndex,
        category: Option<&str>,
        stage: &'static str,
    ) -> Result<(Vec<TermCode>, Vec<String>), PipelineError> {
        let generator = self
            .backends
            .generator
            .as_deref()
            .ok_or(PipelineError::MissingBackend {
                stage,
                what: "generator",
            })?;
        let context = candidate_context_block(retrieved, index);
        let candidates: Vec<String> = retrieved.items.iter().map(|(c, _)| c.to_string()).collect();
        let prompt = render_prompt(
            task,
            &PromptInputs {
                context: &context,
                candidates: &candidates,
                food,
                category,
            },
        )?;
        let reply = generator
            .generate(&prompt.system, &prompt.user)
            .map_err(|message| PipelineError::Generation { stage, message })?;
        let pool: BTreeSet<&TermCode> = retrieved.items.iter().map(|(c, _)| c).collect();
        let mut valid = Vec::new();
        let mut rejected = Vec::new();
        for token in split_reply(&reply) {
            match token.parse::<TermCode>() {
                Ok(code) if pool.contains(&code) => {
                    if !valid.contains(&code) {
                        valid.push(code);
                    }
                }
                _ => rejected.push(token),
            }
        }
        Ok((valid, rejected))
    }
}

/// "CODE: context; CODE: context" block for the `{context}` placeholder.
fn candidate_context_block(retrieved: &RankedCandidates, index: &VectorIndex) -> String {
    retrieved
        .items
        .iter()
        .map(|(code, _)| format!("{code}: {}", index.context_of(code).unwrap_or_default()))
        .collect::<Vec<_>>()
        .join("; ")
}

/// Splits an LLM reply into candidate tokens: newline- or comma-separated,
/// with list brackets and quotes stripped. `[]` yields no tokens.
fn split_reply(reply: &str) -> Vec<String> {
    reply
        .split(|c: char| c == ',' || c == '\n')
        .map(|t| {
            t.trim()
                .trim_matches(|c| c == '[' || c == ']' || c == '"' || c == '\'')
                .trim()
        })
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

fn sanitize_for_filename(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '-' })
        .collect()
}

/// A missing or empty facet hierarchy means there is no index to serve that
/// category; everything else passes through as a retrieval failure.
fn map_index_error(id: HierarchyId, source: RetrievalError) -> PipelineError {
    match (id, &source) {
        (HierarchyId::Facet(c), RetrievalError::UnknownHierarchy(_))
        | (HierarchyId::Facet(c), RetrievalError::EmptyHierarchy(_)) => {
            PipelineError::MissingCategoryIndex(c)
        }
        _ => PipelineError::Retrieval {
            stage: "index build",
            source,
        },
    }
}
