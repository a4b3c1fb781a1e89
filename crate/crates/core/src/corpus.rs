//! Corpus ingestion and quality filtering.
//!
//! Repositories are ingested from local directory trees. GitHub-side
//! metadata (stars, license, dates) comes from an optional sidecar file
//! `repo_meta.jsonl` at the corpus root; repos without a sidecar entry are
//! ingested with unknown metadata rather than rejected.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{Months, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lex::{self, Language, Token};
use crate::util;

/// Files larger than this are treated as generated/binary blobs and skipped.
pub const MAX_FILE_BYTES: u64 = 1024 * 1024;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read repository directory {path}: {source}")]
    Unreadable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("no source files in the target languages under {0}")]
    NoSourceFiles(PathBuf),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SourceFile {
    pub repo_id: String,
    pub relative_path: String,
    pub language: Language,
    pub line_count: usize,
    pub content_hash: String,
    /// File text. Not written to manifests; re-read from disk on load.
    #[serde(skip)]
    pub content: String,
    /// Cached lexical tokens, a pure function of (content, language).
    #[serde(skip)]
    pub lex_tokens: Vec<Token>,
}

impl SourceFile {
    pub fn from_content(repo_id: &str, relative_path: &str, language: Language, content: String) -> SourceFile {
        let lex_tokens = lex::lex(&content, &language);
        SourceFile {
            repo_id: repo_id.to_string(),
            relative_path: relative_path.to_string(),
            language,
            line_count: content.lines().count(),
            content_hash: util::content_fingerprint(content.as_bytes()),
            content,
            lex_tokens,
        }
    }

    /// Globally unique file id within a corpus.
    pub fn file_id(&self) -> String {
        format!("{}:{}", self.repo_id, self.relative_path)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RepoRecord {
    pub repo_id: String,
    pub language: Language,
    pub license: Option<String>,
    pub stars: Option<u64>,
    pub created_at: Option<NaiveDate>,
    pub last_update: Option<NaiveDate>,
    /// Commits per month.
    pub commit_frequency: Option<f64>,
    pub has_tests: bool,
    pub quality_score: f64,
    pub files: Vec<SourceFile>,
}

/// One line of `repo_meta.jsonl`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SidecarEntry {
    pub repo_id: String,
    #[serde(default)]
    pub stars: Option<u64>,
    #[serde(default)]
    pub license: Option<String>,
    #[serde(default)]
    pub created_at: Option<NaiveDate>,
    #[serde(default)]
    pub last_update: Option<NaiveDate>,
    #[serde(default)]
    pub commit_frequency: Option<f64>,
}

pub fn load_sidecar(path: &Path) -> std::io::Result<BTreeMap<String, SidecarEntry>> {
    let entries: Vec<SidecarEntry> = util::read_jsonl(path)?;
    Ok(entries.into_iter().map(|e| (e.repo_id.clone(), e)).collect())
}

/// Ingest one repository directory.
///
/// Scans source files of the four target languages, in sorted path order.
/// Oversized and non-UTF-8 files are skipped. Hidden directories (`.git`
/// and friends) are not descended into.
pub fn ingest_repo(root_path: &Path, meta: Option<&SidecarEntry>) -> Result<RepoRecord, IngestError> {
    let repo_id = root_path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| root_path.to_string_lossy().into_owned());

    let mut rel_paths = Vec::new();
    walk_sorted(root_path, root_path, &mut rel_paths).map_err(|source| IngestError::Unreadable {
        path: root_path.to_path_buf(),
        source,
    })?;

    let mut files = Vec::new();
    let mut has_tests = false;
    for rel in rel_paths {
        let language = Language::from_path(&rel);
        if !language.is_supported() {
            continue;
        }
        let abs = root_path.join(&rel);
        if let Ok(md) = fs::metadata(&abs) {
            if md.len() > MAX_FILE_BYTES {
                continue;
            }
        }
        let Ok(bytes) = fs::read(&abs) else { continue };
        let Ok(content) = String::from_utf8(bytes) else { continue };
        if path_looks_like_tests(&rel) {
            has_tests = true;
        }
        files.push(SourceFile::from_content(&repo_id, &rel, language, content));
    }

    if files.is_empty() {
        return Err(IngestError::NoSourceFiles(root_path.to_path_buf()));
    }

    let language = dominant_language(&files);
    let mut record = RepoRecord {
        repo_id,
        language,
        license: meta.and_then(|m| m.license.clone()),
        stars: meta.and_then(|m| m.stars),
        created_at: meta.and_then(|m| m.created_at),
        last_update: meta.and_then(|m| m.last_update),
        commit_frequency: meta.and_then(|m| m.commit_frequency),
        has_tests,
        quality_score: 0.0,
        files,
    };
    record.quality_score = score_repo(&record, &ScoreWeights::default());
    Ok(record)
}

fn walk_sorted(root: &Path, dir: &Path, out: &mut Vec<String>) -> std::io::Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<Result<_, _>>()?;
    entries.sort_by_key(|e| e.file_name());
    for entry in entries {
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.starts_with('.') {
            continue;
        }
        let path = entry.path();
        if path.is_dir() {
            walk_sorted(root, &path, out)?;
        } else if path.is_file() {
            let rel = path
                .strip_prefix(root)
                .unwrap_or(&path)
                .to_string_lossy()
                .replace('\\', "/");
            out.push(rel);
        }
    }
    Ok(())
}

fn path_looks_like_tests(rel: &str) -> bool {
    let segments: Vec<&str> = rel.split('/').collect();
    let file = segments.last().copied().unwrap_or("");
    if segments[..segments.len().saturating_sub(1)]
        .iter()
        .any(|s| *s == "test" || *s == "tests")
    {
        return true;
    }
    let stem = file.rsplit_once('.').map(|(s, _)| s).unwrap_or(file);
    stem.starts_with("test_") || stem.ends_with("_test")
}

fn dominant_language(files: &[SourceFile]) -> Language {
    let mut counts: BTreeMap<&Language, usize> = BTreeMap::new();
    for f in files {
        *counts.entry(&f.language).or_default() += 1;
    }
    counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(a.0)))
        .map(|(l, _)| l.clone())
        .unwrap_or(Language::Other(String::new()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreWeights {
    pub stars: f64,
    pub commit_frequency: f64,
    pub has_tests: f64,
}

impl Default for ScoreWeights {
    fn default() -> Self {
        ScoreWeights { stars: 1.0, commit_frequency: 0.5, has_tests: 1.0 }
    }
}

/// Quality score: `w_s*ln(1+stars) + w_c*commit_frequency + w_t*[has_tests]`.
pub fn quality_score(stars: f64, commit_frequency: f64, has_tests: bool, weights: &ScoreWeights) -> f64 {
    let tests = if has_tests { 1.0 } else { 0.0 };
    weights.stars * (1.0 + stars).ln()
        + weights.commit_frequency * commit_frequency
        + weights.has_tests * tests
}

/// Score a record; unknown metadata counts as zero.
pub fn score_repo(record: &RepoRecord, weights: &ScoreWeights) -> f64 {
    quality_score(
        record.stars.unwrap_or(0) as f64,
        record.commit_frequency.unwrap_or(0.0),
        record.has_tests,
        weights,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DropReason {
    License,
    Stars,
    Staleness,
    Quality,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FilterPolicy {
    pub min_stars: u64,
    /// Staleness horizon in months before `reference_date`.
    pub max_staleness_months: u32,
    /// Lowercased SPDX-ish tags accepted as permissive.
    pub license_allowlist: Vec<String>,
    pub drop_fraction: f64,
    pub weights: ScoreWeights,
    /// "Now" for the staleness check; explicit so runs are reproducible.
    pub reference_date: NaiveDate,
}

impl FilterPolicy {
    pub fn with_reference_date(reference_date: NaiveDate) -> Self {
        FilterPolicy {
            min_stars: 10,
            max_staleness_months: 24,
            license_allowlist: default_license_allowlist(),
            drop_fraction: 0.10,
            weights: ScoreWeights::default(),
            reference_date,
        }
    }
}

pub fn default_license_allowlist() -> Vec<String> {
    ["mit", "apache-2.0", "bsd-2-clause", "bsd-3-clause", "isc", "unlicense", "mpl-2.0"]
        .into_iter()
        .map(str::to_string)
        .collect()
}

/// Apply hard filters (license, stars, staleness) and then drop the bottom
/// `drop_fraction` of survivors by quality score.
///
/// Every dropped repo carries exactly one reason: the first failing hard
/// filter, or `Quality` for the score cut. Quality ties are broken by
/// ascending `repo_id`, dropping the lexicographically smaller first.
pub fn filter_corpus(
    records: Vec<RepoRecord>,
    policy: &FilterPolicy,
) -> (Vec<RepoRecord>, Vec<(String, DropReason)>) {
    let mut dropped = Vec::new();
    let mut survivors = Vec::new();

    let stale_before = policy
        .reference_date
        .checked_sub_months(Months::new(policy.max_staleness_months))
        .unwrap_or(policy.reference_date);

    for mut record in records {
        let license_ok = record
            .license
            .as_deref()
            .map(|l| policy.license_allowlist.iter().any(|a| a.eq_ignore_ascii_case(l)))
            .unwrap_or(false);
        if !license_ok {
            dropped.push((record.repo_id, DropReason::License));
            continue;
        }
        if record.stars.unwrap_or(0) < policy.min_stars {
            dropped.push((record.repo_id, DropReason::Stars));
            continue;
        }
        let fresh = record.last_update.map(|d| d >= stale_before).unwrap_or(false);
        if !fresh {
            dropped.push((record.repo_id, DropReason::Staleness));
            continue;
        }
        record.quality_score = score_repo(&record, &policy.weights);
        survivors.push(record);
    }

    let cut = (policy.drop_fraction * survivors.len() as f64).floor() as usize;
    survivors.sort_by(|a, b| {
        a.quality_score
            .partial_cmp(&b.quality_score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.repo_id.cmp(&b.repo_id))
    });
    let kept_tail = survivors.split_off(cut);
    for record in survivors {
        dropped.push((record.repo_id, DropReason::Quality));
    }

    let mut kept = kept_tail;
    kept.sort_by(|a, b| a.repo_id.cmp(&b.repo_id));
    (kept, dropped)
}

/// Rehydrate file contents and token caches for records loaded from a
/// manifest (`corpus.jsonl` stores paths, not contents).
pub fn hydrate_records(records: &mut [RepoRecord], corpus_root: &Path) -> std::io::Result<()> {
    for record in records.iter_mut() {
        for file in record.files.iter_mut() {
            let abs = corpus_root.join(&record.repo_id).join(&file.relative_path);
            let content = fs::read_to_string(&abs)?;
            file.lex_tokens = lex::lex(&content, &file.language);
            file.content = content;
        }
    }
    Ok(())
}
