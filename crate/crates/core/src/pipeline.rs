//! Pipeline orchestration: resolved configuration, stage sequencing,
//! line-delimited stage artifacts, and provenance manifests.
//!
//! Every stage reads only named artifacts plus the config and seeds, and
//! writes its outputs atomically (temp file + rename). A manifest per stage
//! records input and output content fingerprints, so reruns can detect
//! stale or hand-edited artifacts. Artifacts never contain absolute paths
//! or timestamps; two runs with the same corpus, config, and seed are
//! byte-identical.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codegraph::{self, ParseOptions, SymbolIndex, SyntaxTree};
use crate::contextgen::{self, CrossFileSnippet, MarkerScheme, PromptBundle};
use crate::corpus::{self, FilterPolicy, RepoRecord, ScoreWeights};
use crate::dedup::{self, ShingleSet};
use crate::evalmetrics::{self, TaskMetrics};
use crate::lex;
use crate::preference::{self, CompletionProvider, HttpProvider, Sampling, ToyProvider};
use crate::taskgen::{self, CompletionTask, Scenario, Split, TaskLimits};
use crate::traincore::{self, DpoConfig, SynthSpec, TrainConfig};
use crate::util::{self, DetRng};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("stage `{stage}` is missing prerequisite artifact `{artifact}` (run `{hint}` first)")]
    MissingArtifact { stage: String, artifact: String, hint: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("provider error: {0}")]
    Provider(#[from] preference::ProviderError),
    #[error("ingest error: {0}")]
    Ingest(#[from] corpus::IngestError),
    #[error("training error: {0}")]
    Train(#[from] traincore::TrainError),
    #[error("context error: {0}")]
    Context(#[from] contextgen::ContextError),
    #[error("dedup error: {0}")]
    Dedup(#[from] dedup::DedupError),
    #[error("preference error: {0}")]
    Preference(#[from] preference::PreferenceError),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl PipelineError {
    /// Process exit code: 2 config, 4 provider, 3 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Provider(_) => 4,
            _ => 3,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.to_path_buf(), source }
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub corpus_root: PathBuf,
    pub out_dir: PathBuf,
    pub seed: u64,
    /// Worker cap; 0 leaves the thread pool at its default size.
    pub jobs: usize,
    /// "Now" for staleness filtering; pin it for reproducible runs.
    pub reference_date: Option<NaiveDate>,
    pub filter: FilterSection,
    pub dedup: DedupSection,
    pub tasks: TasksSection,
    pub context: ContextSection,
    pub provider: ProviderSection,
    pub split: SplitSection,
    pub train: TrainSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            corpus_root: PathBuf::from("corpus"),
            out_dir: PathBuf::from("out"),
            seed: 42,
            jobs: 0,
            reference_date: None,
            filter: FilterSection::default(),
            dedup: DedupSection::default(),
            tasks: TasksSection::default(),
            context: ContextSection::default(),
            provider: ProviderSection::default(),
            split: SplitSection::default(),
            train: TrainSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterSection {
    pub min_stars: u64,
    pub max_staleness_months: u32,
    pub license_allowlist: Vec<String>,
    pub drop_fraction: f64,
    pub score_weights: ScoreWeights,
}

impl Default for FilterSection {
    fn default() -> Self {
        FilterSection {
            min_stars: 10,
            max_staleness_months: 24,
            license_allowlist: corpus::default_license_allowlist(),
            drop_fraction: 0.10,
            score_weights: ScoreWeights::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DedupSection {
    pub threshold: f64,
    pub shingle_k: usize,
    pub bands: usize,
    pub rows: usize,
}

impl Default for DedupSection {
    fn default() -> Self {
        DedupSection {
            threshold: dedup::DEFAULT_THRESHOLD,
            shingle_k: dedup::DEFAULT_SHINGLE_K,
            bands: dedup::DEFAULT_BANDS,
            rows: dedup::DEFAULT_ROWS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TasksSection {
    pub min_tokens: usize,
    pub max_tokens: usize,
    /// Quota per (scenario, language) cell in the train split.
    pub train_quota: usize,
    /// Quota per (scenario, language) cell in the test split.
    pub test_quota: usize,
    /// Extraction cap per repository and scenario, before balancing.
    pub per_repo_cap: usize,
    pub test_cutoff: NaiveDate,
    pub parse_timeout_secs: u64,
}

impl Default for TasksSection {
    fn default() -> Self {
        TasksSection {
            min_tokens: 5,
            max_tokens: 100,
            train_quota: 10_000,
            test_quota: 1_000,
            per_repo_cap: 500,
            test_cutoff: taskgen::DEFAULT_TEST_CUTOFF.parse().expect("valid date"),
            parse_timeout_secs: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContextSection {
    pub window_lines: usize,
    pub top_k: usize,
    /// Prompt budget in lexer tokens.
    pub window_limit: usize,
    pub marker_scheme: String,
}

impl Default for ContextSection {
    fn default() -> Self {
        ContextSection {
            window_lines: contextgen::DEFAULT_WINDOW_LINES,
            top_k: contextgen::DEFAULT_TOP_K,
            window_limit: 8192,
            marker_scheme: "plain".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderSection {
    /// "toy" or "http".
    pub kind: String,
    pub url: Option<String>,
    pub timeout_secs: u64,
    pub candidates: usize,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: usize,
    pub rejected_cap: usize,
}

impl Default for ProviderSection {
    fn default() -> Self {
        ProviderSection {
            kind: "toy".into(),
            url: None,
            timeout_secs: 30,
            candidates: preference::DEFAULT_CANDIDATES,
            temperature: preference::DEFAULT_TEMPERATURE,
            top_p: preference::DEFAULT_TOP_P,
            max_tokens: 256,
            rejected_cap: preference::DEFAULT_REJECTED_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSection {
    pub sft_ratio: f64,
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection { sft_ratio: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    pub vocab_size: usize,
    pub order: usize,
    pub toy_triples: usize,
    pub beta: f64,
    pub sft_learning_rate: f64,
    pub sft_epochs: usize,
    pub dpo_learning_rate: f64,
    pub dpo_epochs: usize,
    pub batch_size: usize,
    pub val_fraction: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            vocab_size: 12,
            order: 2,
            toy_triples: 2000,
            beta: 0.9,
            sft_learning_rate: 0.5,
            sft_epochs: 2,
            dpo_learning_rate: 0.5,
            dpo_epochs: 3,
            batch_size: 32,
            val_fraction: 0.05,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<PipelineConfig, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<PipelineConfig, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Fill in the reference date if absent (today, recorded so later
    /// stages and reruns agree) and validate cross-field constraints.
    pub fn resolve(mut self) -> Result<PipelineConfig, PipelineError> {
        if self.reference_date.is_none() {
            self.reference_date = Some(chrono::Utc::now().date_naive());
        }
        if self.dedup.bands * self.dedup.rows != dedup::NUM_PERMUTATIONS {
            return Err(PipelineError::Config(format!(
                "dedup banding {}x{} must equal {}",
                self.dedup.bands,
                self.dedup.rows,
                dedup::NUM_PERMUTATIONS
            )));
        }
        if self.tasks.min_tokens == 0 || self.tasks.min_tokens > self.tasks.max_tokens {
            return Err(PipelineError::Config("invalid task token bounds".into()));
        }
        if self.train.beta.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return Err(PipelineError::Config("beta must be > 0".into()));
        }
        match self.provider.kind.as_str() {
            "toy" => {}
            "http" => {
                if self.provider.url.is_none() {
                    return Err(PipelineError::Config("provider.kind = \"http\" needs provider.url".into()));
                }
            }
            other => return Err(PipelineError::Config(format!("unknown provider kind `{other}`"))),
        }
        Ok(self)
    }

    /// Content fingerprint of the semantic config: path fields excluded so
    /// identical runs into different directories fingerprint identically.
    pub fn fingerprint(&self) -> String {
        let mut canon = self.clone();
        canon.corpus_root = PathBuf::new();
        canon.out_dir = PathBuf::new();
        util::content_fingerprint(canon.to_toml().as_bytes())
    }

    fn limits(&self) -> TaskLimits {
        TaskLimits { min_tokens: self.tasks.min_tokens, max_tokens: self.tasks.max_tokens }
    }

    fn parse_options(&self) -> ParseOptions {
        ParseOptions { timeout: std::time::Duration::from_secs(self.tasks.parse_timeout_secs) }
    }

    pub fn provider(&self) -> Result<Box<dyn CompletionProvider>, PipelineError> {
        match self.provider.kind.as_str() {
            "toy" => Ok(Box::new(ToyProvider::new(self.seed))),
            "http" => {
                let url = self
                    .provider
                    .url
                    .clone()
                    .ok_or_else(|| PipelineError::Config("missing provider url".into()))?;
                Ok(Box::new(HttpProvider::new(
                    &url,
                    std::time::Duration::from_secs(self.provider.timeout_secs),
                )))
            }
            other => Err(PipelineError::Config(format!("unknown provider kind `{other}`"))),
        }
    }

    fn sampling(&self) -> Sampling {
        Sampling {
            n: self.provider.candidates,
            temperature: self.provider.temperature,
            top_p: self.provider.top_p,
            max_tokens: self.provider.max_tokens,
            stop: None,
        }
    }
}

// ---------------------------------------------------------------------------
// Stage names and artifacts
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Ingest,
    Dedup,
    Graph,
    Extract,
    Contexts,
    Prompts,
    Prefs,
    TrainToy,
    Eval,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 10] = [
        Stage::Ingest,
        Stage::Dedup,
        Stage::Graph,
        Stage::Extract,
        Stage::Contexts,
        Stage::Prompts,
        Stage::Prefs,
        Stage::TrainToy,
        Stage::Eval,
        Stage::Report,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Dedup => "dedup",
            Stage::Graph => "graph",
            Stage::Extract => "extract",
            Stage::Contexts => "contexts",
            Stage::Prompts => "prompts",
            Stage::Prefs => "prefs",
            Stage::TrainToy => "train-toy",
            Stage::Eval => "eval",
            Stage::Report => "report",
        }
    }

    pub fn from_name(name: &str) -> Option<Stage> {
        Stage::ALL.into_iter().find(|s| s.name() == name)
    }
}

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const CORPUS_DROPPED_FILE: &str = "corpus_dropped.jsonl";
pub const CORPUS_DEDUP_FILE: &str = "corpus_dedup.jsonl";
pub const DEDUP_REPORT_FILE: &str = "dedup_report.jsonl";
pub const TASKS_FILE: &str = "tasks.jsonl";
pub const CONTEXTS_FILE: &str = "contexts.jsonl";
pub const PROMPTS_FILE: &str = "prompts.jsonl";
pub const SPLITS_FILE: &str = "splits.jsonl";
pub const TRIPLES_FILE: &str = "triples.jsonl";
pub const CURVES_FILE: &str = "curves.csv";
pub const MODEL_FILE: &str = "toy_model.bin";
pub const REPORT_FILE: &str = "report.jsonl";
pub const SUMMARY_FILE: &str = "report_summary.csv";
pub const BUCKETS_FILE: &str = "buckets.csv";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArtifactRef {
    pub name: String,
    pub fingerprint: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: String,
    pub seed: u64,
    pub config_fingerprint: String,
    pub inputs: Vec<ArtifactRef>,
    pub outputs: Vec<ArtifactRef>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DroppedRepo {
    pub repo_id: String,
    pub reason: corpus::DropReason,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskContexts {
    pub task_id: String,
    pub snippets: Vec<CrossFileSnippet>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RepoSplit {
    pub repo_id: String,
    pub half: String, // "sft" | "rl"
}

// ---------------------------------------------------------------------------
// The pipeline driver
// ---------------------------------------------------------------------------

/// Cap the global worker pool. Effective once per process; later calls
/// fail harmlessly.
pub fn configure_thread_pool(jobs: usize) -> Result<(), rayon::ThreadPoolBuildError> {
    rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global()
}

pub struct Pipeline {
    pub config: PipelineConfig,
    pub force: bool,
}

#[derive(Debug, Default)]
pub struct StageOutcome {
    pub stage: &'static str,
    pub written: Vec<String>,
    pub notes: Vec<String>,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Pipeline {
        Pipeline { config, force: false }
    }

    fn out(&self, name: &str) -> PathBuf {
        self.config.out_dir.join(name)
    }

    fn rng(&self, stage: &str) -> DetRng {
        DetRng::new(self.config.seed).derive(stage)
    }

    fn require(&self, stage: Stage, name: &str, produced_by: Stage) -> Result<PathBuf, PipelineError> {
        let path = self.out(name);
        if !path.exists() {
            return Err(PipelineError::MissingArtifact {
                stage: stage.name().into(),
                artifact: name.into(),
                hint: produced_by.name().into(),
            });
        }
        Ok(path)
    }

    /// Compare an input artifact against the fingerprint recorded by the
    /// stage that produced it; mismatches warn unless `force` is set.
    fn check_provenance(&self, producer: Stage, name: &str, notes: &mut Vec<String>) {
        if self.force {
            return;
        }
        let manifest_path = self.out(&format!("manifests/{}.json", producer.name()));
        let Ok(text) = std::fs::read_to_string(&manifest_path) else { return };
        let Ok(manifest) = serde_json::from_str::<StageManifest>(&text) else { return };
        let Some(recorded) = manifest.outputs.iter().find(|a| a.name == name) else { return };
        let Ok(bytes) = std::fs::read(self.out(name)) else { return };
        let current = util::content_fingerprint(&bytes);
        if current != recorded.fingerprint {
            notes.push(format!(
                "warning: `{name}` changed since `{}` wrote it (stale input; pass --force to silence)",
                producer.name()
            ));
        }
    }

    fn write_manifest(
        &self,
        stage: Stage,
        inputs: &[(String, String)],
        outputs: &[String],
    ) -> Result<(), PipelineError> {
        let manifest = StageManifest {
            stage: stage.name().into(),
            seed: self.config.seed,
            config_fingerprint: self.config.fingerprint(),
            inputs: inputs
                .iter()
                .map(|(name, fp)| ArtifactRef { name: name.clone(), fingerprint: fp.clone() })
                .collect(),
            outputs: outputs
                .iter()
                .map(|name| {
                    let bytes = std::fs::read(self.out(name)).unwrap_or_default();
                    ArtifactRef { name: name.clone(), fingerprint: util::content_fingerprint(&bytes) }
                })
                .collect(),
        };
        let path = self.out(&format!("manifests/{}.json", stage.name()));
        let mut body = serde_json::to_vec_pretty(&manifest)
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        body.push(b'\n');
        util::write_atomic(&path, &body).map_err(io_err(&path))?;
        Ok(())
    }

    fn fingerprint_of(&self, name: &str) -> (String, String) {
        let bytes = std::fs::read(self.out(name)).unwrap_or_default();
        (name.to_string(), util::content_fingerprint(&bytes))
    }

    pub fn run_stage(&self, stage: Stage) -> Result<StageOutcome, PipelineError> {
        match stage {
            Stage::Ingest => self.stage_ingest(),
            Stage::Dedup => self.stage_dedup(),
            Stage::Graph => self.stage_graph(),
            Stage::Extract => self.stage_extract(),
            Stage::Contexts => self.stage_contexts(),
            Stage::Prompts => self.stage_prompts(),
            Stage::Prefs => self.stage_prefs(),
            Stage::TrainToy => self.stage_train_toy(),
            Stage::Eval => self.stage_eval(),
            Stage::Report => self.stage_report(),
        }
    }

    pub fn run_all(&self) -> Result<Vec<StageOutcome>, PipelineError> {
        Stage::ALL.iter().map(|&s| self.run_stage(s)).collect()
    }

    // -- stage: ingest ------------------------------------------------------

    fn stage_ingest(&self) -> Result<StageOutcome, PipelineError> {
        let root = &self.config.corpus_root;
        if !root.is_dir() {
            return Err(PipelineError::Config(format!(
                "corpus root {} is not a directory",
                root.display()
            )));
        }
        let sidecar_path = root.join("repo_meta.jsonl");
        let sidecar = if sidecar_path.exists() {
            corpus::load_sidecar(&sidecar_path).map_err(io_err(&sidecar_path))?
        } else {
            BTreeMap::new()
        };

        let mut repo_dirs: Vec<PathBuf> = std::fs::read_dir(root)
            .map_err(io_err(root))?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_dir())
            .collect();
        repo_dirs.sort();

        let records: Vec<RepoRecord> = repo_dirs
            .par_iter()
            .filter_map(|dir| {
                let id = dir.file_name().map(|n| n.to_string_lossy().into_owned())?;
                // Empty/unreadable repo dirs are skipped.
                corpus::ingest_repo(dir, sidecar.get(&id)).ok()
            })
            .collect();

        let reference_date = self.config.reference_date.expect("resolved config");
        let policy = FilterPolicy {
            min_stars: self.config.filter.min_stars,
            max_staleness_months: self.config.filter.max_staleness_months,
            license_allowlist: self.config.filter.license_allowlist.clone(),
            drop_fraction: self.config.filter.drop_fraction,
            weights: self.config.filter.score_weights,
            reference_date,
        };
        let (kept, dropped) = corpus::filter_corpus(records, &policy);
        let dropped: Vec<DroppedRepo> =
            dropped.into_iter().map(|(repo_id, reason)| DroppedRepo { repo_id, reason }).collect();

        util::write_jsonl(&self.out(CORPUS_FILE), &kept).map_err(io_err(&self.out(CORPUS_FILE)))?;
        util::write_jsonl(&self.out(CORPUS_DROPPED_FILE), &dropped)
            .map_err(io_err(&self.out(CORPUS_DROPPED_FILE)))?;

        self.write_manifest(Stage::Ingest, &[], &[CORPUS_FILE.into(), CORPUS_DROPPED_FILE.into()])?;
        Ok(StageOutcome {
            stage: "ingest",
            written: vec![CORPUS_FILE.into(), CORPUS_DROPPED_FILE.into()],
            notes: vec![format!("kept {} repos, dropped {}", kept.len(), dropped.len())],
        })
    }

    fn load_corpus(&self, stage: Stage, name: &str, producer: Stage, notes: &mut Vec<String>) -> Result<Vec<RepoRecord>, PipelineError> {
        let path = self.require(stage, name, producer)?;
        self.check_provenance(producer, name, notes);
        let mut records: Vec<RepoRecord> = util::read_jsonl(&path).map_err(io_err(&path))?;
        corpus::hydrate_records(&mut records, &self.config.corpus_root)
            .map_err(io_err(&self.config.corpus_root))?;
        Ok(records)
    }

    // -- stage: dedup -------------------------------------------------------

    fn stage_dedup(&self) -> Result<StageOutcome, PipelineError> {
        let mut notes = Vec::new();
        let records = self.load_corpus(Stage::Dedup, CORPUS_FILE, Stage::Ingest, &mut notes)?;

        let (kept_repos, mut removals) = dedup::exact_dedup(records);

        // File-level near dedup across the surviving repositories.
        let shingle_k = self.config.dedup.shingle_k;
        let items: Vec<ShingleSet> = kept_repos
            .par_iter()
            .flat_map_iter(|repo| {
                repo.files.iter().map(move |f| {
                    let texts: Vec<&str> = f
                        .lex_tokens
                        .iter()
                        .filter(|t| t.is_code())
                        .map(|t| t.text(&f.content))
                        .collect();
                    ShingleSet::from_tokens(&f.file_id(), &texts, shingle_k)
                })
            })
            .collect();
        let outcome = dedup::near_dedup(
            &items,
            self.config.dedup.threshold,
            self.config.seed,
            self.config.dedup.bands,
            self.config.dedup.rows,
        )?;
        let removed: std::collections::BTreeSet<&str> =
            outcome.removals.iter().map(|r| r.file_id.as_str()).collect();
        removals.extend(outcome.removals.iter().cloned());

        let mut reduced = Vec::new();
        for mut repo in kept_repos {
            repo.files.retain(|f| !removed.contains(f.file_id().as_str()));
            if repo.files.is_empty() {
                notes.push(format!("repo {} became empty after near-dedup; dropped", repo.repo_id));
                continue;
            }
            reduced.push(repo);
        }

        removals.sort_by(|a, b| a.file_id.cmp(&b.file_id));
        util::write_jsonl(&self.out(DEDUP_REPORT_FILE), &removals)
            .map_err(io_err(&self.out(DEDUP_REPORT_FILE)))?;
        util::write_jsonl(&self.out(CORPUS_DEDUP_FILE), &reduced)
            .map_err(io_err(&self.out(CORPUS_DEDUP_FILE)))?;

        let inputs = vec![self.fingerprint_of(CORPUS_FILE)];
        self.write_manifest(Stage::Dedup, &inputs, &[DEDUP_REPORT_FILE.into(), CORPUS_DEDUP_FILE.into()])?;
        Ok(StageOutcome {
            stage: "dedup",
            written: vec![DEDUP_REPORT_FILE.into(), CORPUS_DEDUP_FILE.into()],
            notes,
        })
    }

    // -- stage: graph -------------------------------------------------------

    fn parse_repo(&self, repo: &RepoRecord) -> BTreeMap<String, SyntaxTree> {
        let opts = self.config.parse_options();
        repo.files
            .par_iter()
            .filter_map(|f| {
                codegraph::parse(f, &opts).ok().map(|tree| (f.relative_path.clone(), tree))
            })
            .collect()
    }

    fn stage_graph(&self) -> Result<StageOutcome, PipelineError> {
        let mut notes = Vec::new();
        let records = self.load_corpus(Stage::Graph, CORPUS_DEDUP_FILE, Stage::Dedup, &mut notes)?;

        let mut written = Vec::new();
        for repo in &records {
            let trees = self.parse_repo(repo);
            let index = codegraph::build_symbol_index(repo, &trees);
            let name = format!("symbols/{}.jsonl", repo.repo_id);
            let path = self.out(&name);
            let mut lines: Vec<serde_json::Value> = Vec::new();
            for def in &index.definitions {
                lines.push(serde_json::json!({"kind": "definition", "value": def}));
            }
            for import in &index.imports {
                lines.push(serde_json::json!({"kind": "import", "value": import}));
            }
            for reference in &index.references {
                lines.push(serde_json::json!({"kind": "reference", "value": reference}));
            }
            util::write_jsonl(&path, &lines).map_err(io_err(&path))?;
            written.push(name);
        }

        let inputs = vec![self.fingerprint_of(CORPUS_DEDUP_FILE)];
        self.write_manifest(Stage::Graph, &inputs, &written)?;
        Ok(StageOutcome { stage: "graph", written, notes })
    }

    // -- stage: extract -----------------------------------------------------

    fn stage_extract(&self) -> Result<StageOutcome, PipelineError> {
        let mut notes = Vec::new();
        let records = self.load_corpus(Stage::Extract, CORPUS_DEDUP_FILE, Stage::Dedup, &mut notes)?;
        // The symbols artifacts gate this stage (see the stage order), but
        // indexes are rebuilt in-memory from the same inputs.
        self.require(Stage::Extract, "manifests/graph.json", Stage::Graph)?;

        let limits = self.config.limits();
        let per_repo: Vec<(Split, Vec<CompletionTask>)> = records
            .par_iter()
            .map(|repo| {
                let trees = self.parse_repo(repo);
                let index = codegraph::build_symbol_index(repo, &trees);
                let split = taskgen::split_for_repo(repo, self.config.tasks.test_cutoff);
                let mut rng = self.rng(&format!("extract:{}", repo.repo_id));
                let mut tasks = Vec::new();
                tasks.extend(taskgen::extract_api_tasks(
                    repo, &trees, &index, &limits, split, self.config.tasks.per_repo_cap, &mut rng,
                ));
                tasks.extend(taskgen::extract_single_line_tasks(
                    repo, &trees, &limits, split, self.config.tasks.per_repo_cap, &mut rng,
                ));
                tasks.extend(taskgen::extract_span_tasks(
                    repo, &trees, &limits, split, self.config.tasks.per_repo_cap, &mut rng,
                ));
                (split, tasks)
            })
            .collect();

        let mut cells: BTreeMap<(Scenario, lex::Language, Split), Vec<CompletionTask>> = BTreeMap::new();
        for (_, tasks) in per_repo {
            for task in tasks {
                cells
                    .entry((task.scenario, task.language.clone(), task.split))
                    .or_default()
                    .push(task);
            }
        }

        let mut sampled = Vec::new();
        let mut shortfalls = 0usize;
        for ((scenario, language, split), tasks) in cells {
            let quota = match split {
                Split::Train => self.config.tasks.train_quota,
                Split::Test => self.config.tasks.test_quota,
            };
            let mut rng = self.rng(&format!("balance:{}:{}:{:?}", scenario.tag(), language, split));
            let (cell_tasks, shortfall) = taskgen::balance_and_sample(tasks, quota, &mut rng);
            shortfalls += shortfall;
            sampled.extend(cell_tasks);
        }
        sampled.sort_by(|a, b| a.task_id.cmp(&b.task_id));
        if shortfalls > 0 {
            notes.push(format!("warning: {shortfalls} task(s) short of the per-cell quotas"));
        }

        util::write_jsonl(&self.out(TASKS_FILE), &sampled).map_err(io_err(&self.out(TASKS_FILE)))?;
        let inputs = vec![self.fingerprint_of(CORPUS_DEDUP_FILE)];
        self.write_manifest(Stage::Extract, &inputs, &[TASKS_FILE.into()])?;
        Ok(StageOutcome {
            stage: "extract",
            written: vec![TASKS_FILE.into()],
            notes,
        })
    }

    // -- stage: contexts ----------------------------------------------------

    fn stage_contexts(&self) -> Result<StageOutcome, PipelineError> {
        let mut notes = Vec::new();
        let records = self.load_corpus(Stage::Contexts, CORPUS_DEDUP_FILE, Stage::Dedup, &mut notes)?;
        let tasks_path = self.require(Stage::Contexts, TASKS_FILE, Stage::Extract)?;
        self.check_provenance(Stage::Extract, TASKS_FILE, &mut notes);
        let tasks: Vec<CompletionTask> = util::read_jsonl(&tasks_path).map_err(io_err(&tasks_path))?;

        let repos: BTreeMap<&str, &RepoRecord> =
            records.iter().map(|r| (r.repo_id.as_str(), r)).collect();
        let trees_by_repo: BTreeMap<&str, BTreeMap<String, SyntaxTree>> = records
            .iter()
            .map(|r| (r.repo_id.as_str(), self.parse_repo(r)))
            .collect();
        let indexes: BTreeMap<&str, SymbolIndex> = records
            .iter()
            .map(|r| (r.repo_id.as_str(), codegraph::build_symbol_index(r, &trees_by_repo[r.repo_id.as_str()])))
            .collect();

        let contexts: Vec<TaskContexts> = tasks
            .par_iter()
            .filter_map(|task| {
                let repo = repos.get(task.repo_id.as_str())?;
                let file = repo.files.iter().find(|f| f.relative_path == task.file_id)?;
                let (prefix, _suffix) = contextgen::split_in_file(file, task.gt_span).ok()?;
                let mut snippets = contextgen::dependency_context(
                    task,
                    repo,
                    &indexes[task.repo_id.as_str()],
                    &trees_by_repo[task.repo_id.as_str()],
                );
                snippets.extend(contextgen::retrieval_context(
                    task,
                    repo,
                    &prefix,
                    self.config.context.window_lines,
                    self.config.context.top_k,
                ));
                Some(TaskContexts { task_id: task.task_id.clone(), snippets })
            })
            .collect();

        util::write_jsonl(&self.out(CONTEXTS_FILE), &contexts)
            .map_err(io_err(&self.out(CONTEXTS_FILE)))?;
        let inputs = vec![self.fingerprint_of(CORPUS_DEDUP_FILE), self.fingerprint_of(TASKS_FILE)];
        self.write_manifest(Stage::Contexts, &inputs, &[CONTEXTS_FILE.into()])?;
        Ok(StageOutcome { stage: "contexts", written: vec![CONTEXTS_FILE.into()], notes })
    }

    // -- stage: prompts -----------------------------------------------------

    fn stage_prompts(&self) -> Result<StageOutcome, PipelineError> {
        let mut notes = Vec::new();
        let records = self.load_corpus(Stage::Prompts, CORPUS_DEDUP_FILE, Stage::Dedup, &mut notes)?;
        let tasks_path = self.require(Stage::Prompts, TASKS_FILE, Stage::Extract)?;
        let contexts_path = self.require(Stage::Prompts, CONTEXTS_FILE, Stage::Contexts)?;
        self.check_provenance(Stage::Extract, TASKS_FILE, &mut notes);
        self.check_provenance(Stage::Contexts, CONTEXTS_FILE, &mut notes);

        let tasks: Vec<CompletionTask> = util::read_jsonl(&tasks_path).map_err(io_err(&tasks_path))?;
        let contexts: Vec<TaskContexts> =
            util::read_jsonl(&contexts_path).map_err(io_err(&contexts_path))?;
        let context_map: BTreeMap<&str, &TaskContexts> =
            contexts.iter().map(|c| (c.task_id.as_str(), c)).collect();
        let repos: BTreeMap<&str, &RepoRecord> =
            records.iter().map(|r| (r.repo_id.as_str(), r)).collect();

        let scheme = MarkerScheme::by_name(&self.config.context.marker_scheme)
            .ok_or_else(|| {
                PipelineError::Config(format!(
                    "unknown marker scheme `{}`",
                    self.config.context.marker_scheme
                ))
            })?;

        let mut bundles: Vec<PromptBundle> = Vec::new();
        let mut oversize = 0usize;
        for task in &tasks {
            let Some(repo) = repos.get(task.repo_id.as_str()) else { continue };
            let Some(file) = repo.files.iter().find(|f| f.relative_path == task.file_id) else {
                continue;
            };
            let (prefix, suffix) = contextgen::split_in_file(file, task.gt_span)?;
            let empty = Vec::new();
            let snippets = context_map.get(task.task_id.as_str()).map(|c| &c.snippets).unwrap_or(&empty);
            match contextgen::assemble_prompt(
                task,
                &prefix,
                &suffix,
                snippets,
                &scheme,
                self.config.context.window_limit,
            ) {
                Ok(bundle) => bundles.push(bundle),
                Err(contextgen::ContextError::Oversize { .. }) => oversize += 1,
                Err(e) => return Err(e.into()),
            }
        }
        if oversize > 0 {
            notes.push(format!("warning: {oversize} task(s) skipped as oversize"));
        }
        bundles.sort_by(|a, b| a.task_id.cmp(&b.task_id));

        util::write_jsonl(&self.out(PROMPTS_FILE), &bundles)
            .map_err(io_err(&self.out(PROMPTS_FILE)))?;
        let inputs = vec![
            self.fingerprint_of(CORPUS_DEDUP_FILE),
            self.fingerprint_of(TASKS_FILE),
            self.fingerprint_of(CONTEXTS_FILE),
        ];
        self.write_manifest(Stage::Prompts, &inputs, &[PROMPTS_FILE.into()])?;
        Ok(StageOutcome { stage: "prompts", written: vec![PROMPTS_FILE.into()], notes })
    }

    // -- stage: prefs -------------------------------------------------------

    fn stage_prefs(&self) -> Result<StageOutcome, PipelineError> {
        let mut notes = Vec::new();
        let tasks_path = self.require(Stage::Prefs, TASKS_FILE, Stage::Extract)?;
        let prompts_path = self.require(Stage::Prefs, PROMPTS_FILE, Stage::Prompts)?;
        self.check_provenance(Stage::Extract, TASKS_FILE, &mut notes);
        self.check_provenance(Stage::Prompts, PROMPTS_FILE, &mut notes);

        let tasks: Vec<CompletionTask> = util::read_jsonl(&tasks_path).map_err(io_err(&tasks_path))?;
        let prompts: Vec<PromptBundle> =
            util::read_jsonl(&prompts_path).map_err(io_err(&prompts_path))?;
        let prompt_map: BTreeMap<&str, &PromptBundle> =
            prompts.iter().map(|p| (p.task_id.as_str(), p)).collect();

        let train_tasks: Vec<CompletionTask> =
            tasks.into_iter().filter(|t| t.split == Split::Train).collect();
        let mut rng = self.rng("split-sft-rl");
        let (sft_tasks, rl_tasks, all_sft) =
            preference::split_sft_rl(train_tasks, self.config.split.sft_ratio, &mut rng)?;
        if all_sft {
            notes.push("warning: RL half is empty at this ratio".into());
        }

        let splits: Vec<RepoSplit> = {
            let mut seen: BTreeMap<String, &str> = BTreeMap::new();
            for t in &sft_tasks {
                seen.entry(t.repo_id.clone()).or_insert("sft");
            }
            for t in &rl_tasks {
                seen.entry(t.repo_id.clone()).or_insert("rl");
            }
            seen.into_iter().map(|(repo_id, half)| RepoSplit { repo_id, half: half.into() }).collect()
        };

        let provider = self.config.provider()?;
        let sampling = self.config.sampling();
        let mut items: Vec<(String, String, String, Vec<String>)> = Vec::new();
        let mut skipped = 0usize;
        for task in &rl_tasks {
            let Some(bundle) = prompt_map.get(task.task_id.as_str()) else { continue };
            match preference::generate_candidates(provider.as_ref(), &task.task_id, &bundle.assembled, &sampling)
            {
                Ok(set) => {
                    let rejected = preference::filter_rejected(
                        &set.candidates,
                        &task.gt_text,
                        self.config.provider.rejected_cap,
                    );
                    items.push((task.task_id.clone(), bundle.assembled.clone(), task.gt_text.clone(), rejected));
                }
                Err(preference::ProviderError::Unreachable(reason)) => {
                    // One hard failure aborts: a dead provider makes the
                    // whole stage pointless.
                    return Err(preference::ProviderError::Unreachable(reason).into());
                }
                Err(e) => {
                    skipped += 1;
                    notes.push(format!("task {} skipped: {e}", task.task_id));
                }
            }
        }
        if skipped > 0 {
            notes.push(format!("warning: {skipped} task(s) skipped on provider errors"));
        }
        let triples = preference::build_triples(&items);

        util::write_jsonl(&self.out(SPLITS_FILE), &splits).map_err(io_err(&self.out(SPLITS_FILE)))?;
        util::write_jsonl(&self.out(TRIPLES_FILE), &triples)
            .map_err(io_err(&self.out(TRIPLES_FILE)))?;
        let inputs = vec![self.fingerprint_of(TASKS_FILE), self.fingerprint_of(PROMPTS_FILE)];
        self.write_manifest(Stage::Prefs, &inputs, &[SPLITS_FILE.into(), TRIPLES_FILE.into()])?;
        Ok(StageOutcome {
            stage: "prefs",
            written: vec![SPLITS_FILE.into(), TRIPLES_FILE.into()],
            notes,
        })
    }

    // -- stage: train-toy ---------------------------------------------------

    fn stage_train_toy(&self) -> Result<StageOutcome, PipelineError> {
        let mut notes = Vec::new();
        // Gate on the preference stage: the toy run stands in for the DPO
        // phase of the pipeline even though its corpus is synthetic.
        self.require(Stage::TrainToy, TRIPLES_FILE, Stage::Prefs)?;
        self.check_provenance(Stage::Prefs, TRIPLES_FILE, &mut notes);

        let spec = SynthSpec {
            vocab_size: self.config.train.vocab_size,
            count: self.config.train.toy_triples,
            seed: self.config.seed,
            ..Default::default()
        };
        let triples = traincore::synth_preference_corpus(&spec);
        let holdout = spec.count / 10;
        let (eval_triples, train_triples) = triples.split_at(holdout.max(1));

        let sft_data: Vec<traincore::TokenSequence> =
            train_triples.iter().map(|t| t.chosen_sequence()).collect();
        let base: traincore::ToyModel<f64> =
            traincore::ToyModel::zeros(self.config.train.vocab_size, self.config.train.order);
        let sft_config = TrainConfig {
            learning_rate: self.config.train.sft_learning_rate,
            epochs: self.config.train.sft_epochs,
            batch_size: self.config.train.batch_size,
            seed: self.config.seed,
            momentum: 0.0,
            val_fraction: self.config.train.val_fraction,
            loss_norm: traincore::LossNorm::PerSequence,
        };
        let (sft_model, sft_curves) = traincore::train_sft(&base, &sft_data, &sft_config)?;

        let dpo_config = DpoConfig {
            beta: self.config.train.beta,
            learning_rate: self.config.train.dpo_learning_rate,
            epochs: self.config.train.dpo_epochs,
            batch_size: self.config.train.batch_size,
            seed: self.config.seed,
        };
        let reference = sft_model.clone();
        let (tuned, dpo_curves) = traincore::train_dpo(&sft_model, &reference, train_triples, &dpo_config)?;

        let holdout_acc =
            traincore::reward_accuracy(eval_triples, &tuned, &reference, self.config.train.beta)?;
        notes.push(format!("held-out reward accuracy: {holdout_acc:.4}"));

        // Stitch curves: SFT steps first, DPO steps continue the counter.
        let mut curves = sft_curves;
        let offset = curves.records.last().map(|r| r.step).unwrap_or(0);
        for mut record in dpo_curves.records {
            record.step += offset;
            curves.records.push(record);
        }
        let curves_path = self.out(CURVES_FILE);
        util::write_atomic(&curves_path, curves.to_csv().as_bytes()).map_err(io_err(&curves_path))?;
        traincore::save_model(&tuned, &self.out(MODEL_FILE))?;

        let inputs = vec![self.fingerprint_of(TRIPLES_FILE)];
        self.write_manifest(Stage::TrainToy, &inputs, &[CURVES_FILE.into(), MODEL_FILE.into()])?;
        Ok(StageOutcome {
            stage: "train-toy",
            written: vec![CURVES_FILE.into(), MODEL_FILE.into()],
            notes,
        })
    }

    // -- stage: eval --------------------------------------------------------

    fn stage_eval(&self) -> Result<StageOutcome, PipelineError> {
        let mut notes = Vec::new();
        let tasks_path = self.require(Stage::Eval, TASKS_FILE, Stage::Extract)?;
        let prompts_path = self.require(Stage::Eval, PROMPTS_FILE, Stage::Prompts)?;
        let contexts_path = self.require(Stage::Eval, CONTEXTS_FILE, Stage::Contexts)?;
        self.require(Stage::Eval, CURVES_FILE, Stage::TrainToy)?;
        self.check_provenance(Stage::Prompts, PROMPTS_FILE, &mut notes);

        let tasks: Vec<CompletionTask> = util::read_jsonl(&tasks_path).map_err(io_err(&tasks_path))?;
        let prompts: Vec<PromptBundle> =
            util::read_jsonl(&prompts_path).map_err(io_err(&prompts_path))?;
        let contexts: Vec<TaskContexts> =
            util::read_jsonl(&contexts_path).map_err(io_err(&contexts_path))?;
        let prompt_map: BTreeMap<&str, &PromptBundle> =
            prompts.iter().map(|p| (p.task_id.as_str(), p)).collect();
        let context_map: BTreeMap<&str, &TaskContexts> =
            contexts.iter().map(|c| (c.task_id.as_str(), c)).collect();

        let provider = self.config.provider()?;
        // Greedy decoding for evaluation: one sample, zero temperature.
        let sampling = Sampling {
            n: 1,
            temperature: 0.0,
            top_p: 1.0,
            max_tokens: self.config.provider.max_tokens,
            stop: None,
        };

        let eval_tasks: Vec<&CompletionTask> =
            tasks.iter().filter(|t| t.split == Split::Test).collect();
        let mut report: Vec<TaskMetrics> = Vec::new();
        for task in eval_tasks {
            let Some(bundle) = prompt_map.get(task.task_id.as_str()) else { continue };
            let prediction = match provider.complete(&bundle.assembled, &sampling) {
                Ok(mut completions) if !completions.is_empty() => completions.remove(0),
                Ok(_) => String::new(),
                Err(preference::ProviderError::Unreachable(reason)) => {
                    return Err(preference::ProviderError::Unreachable(reason).into())
                }
                Err(e) => {
                    notes.push(format!("task {}: prediction failed: {e}", task.task_id));
                    String::new()
                }
            };
            let reference_similarity = context_map.get(task.task_id.as_str()).and_then(|c| {
                c.snippets
                    .iter()
                    .find(|s| s.rank == Some(1))
                    .map(|s| evalmetrics::codebleu_lite(&s.text, &task.gt_text, &task.language).0)
            });
            report.push(evalmetrics::score_task(
                &task.task_id,
                &task.language,
                task.scenario,
                &prediction,
                &task.gt_text,
                task.api_name.as_deref(),
                reference_similarity,
            ));
        }
        report.sort_by(|a, b| a.task_id.cmp(&b.task_id));

        util::write_jsonl(&self.out(REPORT_FILE), &report).map_err(io_err(&self.out(REPORT_FILE)))?;
        let inputs = vec![
            self.fingerprint_of(TASKS_FILE),
            self.fingerprint_of(PROMPTS_FILE),
            self.fingerprint_of(CONTEXTS_FILE),
        ];
        self.write_manifest(Stage::Eval, &inputs, &[REPORT_FILE.into()])?;
        Ok(StageOutcome { stage: "eval", written: vec![REPORT_FILE.into()], notes })
    }

    // -- stage: report ------------------------------------------------------

    fn stage_report(&self) -> Result<StageOutcome, PipelineError> {
        let mut notes = Vec::new();
        let report_path = self.require(Stage::Report, REPORT_FILE, Stage::Eval)?;
        self.check_provenance(Stage::Eval, REPORT_FILE, &mut notes);
        let report: Vec<TaskMetrics> = util::read_jsonl(&report_path).map_err(io_err(&report_path))?;

        let mut summary = String::from("language,scenario,metric,value\n");
        for cell in evalmetrics::aggregate(&report) {
            summary.push_str(&format!(
                "{},{},{},{:.6}\n",
                cell.language,
                cell.scenario.tag(),
                cell.metric,
                cell.value
            ));
        }
        let summary_path = self.out(SUMMARY_FILE);
        util::write_atomic(&summary_path, summary.as_bytes()).map_err(io_err(&summary_path))?;

        let items: Vec<(f64, bool)> = report
            .iter()
            .filter_map(|r| r.reference_similarity.map(|s| (s, r.em == 1)))
            .collect();
        let histogram = evalmetrics::similar_code_buckets(&items);
        let mut buckets = String::from("bucket_lo,bucket_hi,correct_count\n");
        for (i, count) in histogram.iter().enumerate() {
            buckets.push_str(&format!("{:.1},{:.1},{count}\n", i as f64 / 10.0, (i + 1) as f64 / 10.0));
        }
        let buckets_path = self.out(BUCKETS_FILE);
        util::write_atomic(&buckets_path, buckets.as_bytes()).map_err(io_err(&buckets_path))?;

        let inputs = vec![self.fingerprint_of(REPORT_FILE)];
        self.write_manifest(Stage::Report, &inputs, &[SUMMARY_FILE.into(), BUCKETS_FILE.into()])?;
        Ok(StageOutcome {
            stage: "report",
            written: vec![SUMMARY_FILE.into(), BUCKETS_FILE.into()],
            notes,
        })
    }
}
