//! Ground-truth extraction: the three completion scenarios, eligibility
//! rules, per-repository quotas, and the balanced/deduplicated final sample.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::codegraph::{self, NodeKind, SymbolIndex, SyntaxTree};
use crate::corpus::{RepoRecord, SourceFile};
use crate::dedup;
use crate::lex::Language;
use crate::util::DetRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    ApiInvocation,
    SingleLine,
    StructuredSpan,
}

impl Scenario {
    pub fn all() -> [Scenario; 3] {
        [Scenario::ApiInvocation, Scenario::SingleLine, Scenario::StructuredSpan]
    }

    pub fn tag(&self) -> &'static str {
        match self {
            Scenario::ApiInvocation => "api",
            Scenario::SingleLine => "line",
            Scenario::StructuredSpan => "span",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompletionTask {
    pub task_id: String,
    pub repo_id: String,
    /// Repo-relative path of the file the hole lives in.
    pub file_id: String,
    pub language: Language,
    pub scenario: Scenario,
    /// Byte span of the ground truth inside the file.
    pub gt_span: (usize, usize),
    /// 1-based inclusive line span.
    pub gt_line_span: (u32, u32),
    pub gt_text: String,
    pub gt_token_count: usize,
    /// Callee name; present iff `scenario == ApiInvocation`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub api_name: Option<String>,
    pub split: Split,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TaskLimits {
    pub min_tokens: usize,
    pub max_tokens: usize,
}

impl Default for TaskLimits {
    fn default() -> Self {
        TaskLimits { min_tokens: 5, max_tokens: 100 }
    }
}

/// Byte ranges of each line, excluding the newline. 1-based line numbers
/// map to `ranges[line - 1]`.
pub fn line_ranges(content: &str) -> Vec<(usize, usize)> {
    let mut ranges = Vec::new();
    let mut start = 0usize;
    for (i, b) in content.bytes().enumerate() {
        if b == b'\n' {
            ranges.push((start, i));
            start = i + 1;
        }
    }
    if start < content.len() {
        ranges.push((start, content.len()));
    }
    ranges
}

/// Single-line eligibility: non-blank, not a comment (neither a comment
/// line nor inside a block comment or multi-line string), not an import
/// statement, self-contained on one physical line, and within the token
/// budget.
pub fn eligible_single_line(file: &SourceFile, tree: &SyntaxTree, line: u32, limits: &TaskLimits) -> bool {
    if tree.line_in_comment(line) || tree.line_in_import(line) {
        return false;
    }
    // Inside a multi-line token (string/comment) that started earlier.
    if file.lex_tokens.iter().any(|t| t.line < line && t.end_line >= line) {
        return false;
    }
    let on_line: Vec<_> = file.lex_tokens.iter().filter(|t| t.line == line).collect();
    let code: Vec<_> = on_line.iter().filter(|t| t.is_code()).collect();
    if code.is_empty() {
        return false;
    }
    // Tokens that spill past the line make it non-self-contained.
    if code.iter().any(|t| t.end_line > line) {
        return false;
    }
    (limits.min_tokens..=limits.max_tokens).contains(&code.len())
}

fn count_code_tokens_on_line(file: &SourceFile, line: u32) -> usize {
    file.lex_tokens.iter().filter(|t| t.is_code() && t.line == line).count()
}

fn make_line_task(
    repo: &RepoRecord,
    file: &SourceFile,
    line: u32,
    scenario: Scenario,
    api_name: Option<String>,
    split: Split,
) -> Option<CompletionTask> {
    let ranges = line_ranges(&file.content);
    let &(start, end) = ranges.get((line as usize).checked_sub(1)?)?;
    let gt_text = file.content[start..end].to_string();
    if gt_text.trim().is_empty() {
        return None;
    }
    Some(CompletionTask {
        task_id: format!("{}:{}:{}:{}", repo.repo_id, file.relative_path, scenario.tag(), line),
        repo_id: repo.repo_id.clone(),
        file_id: file.relative_path.clone(),
        language: file.language.clone(),
        scenario,
        gt_span: (start, end),
        gt_line_span: (line, line),
        gt_token_count: count_code_tokens_on_line(file, line),
        gt_text,
        api_name,
        split,
    })
}

/// Uniformly sample eligible single lines, without replacement, up to
/// `per_repo_quota`.
pub fn extract_single_line_tasks(
    repo: &RepoRecord,
    trees: &BTreeMap<String, SyntaxTree>,
    limits: &TaskLimits,
    split: Split,
    per_repo_quota: usize,
    rng: &mut DetRng,
) -> Vec<CompletionTask> {
    let mut candidates: Vec<(&SourceFile, u32)> = Vec::new();
    for file in sorted_files(repo) {
        let Some(tree) = trees.get(&file.relative_path) else { continue };
        let lines = line_ranges(&file.content).len() as u32;
        for line in 1..=lines {
            if eligible_single_line(file, tree, line, limits) {
                candidates.push((file, line));
            }
        }
    }
    sample_without_replacement(&mut candidates, per_repo_quota, rng)
        .into_iter()
        .filter_map(|(file, line)| make_line_task(repo, file, line, Scenario::SingleLine, None, split))
        .collect()
}

/// Sample lines containing cross-file API invocations; the line rules of
/// `eligible_single_line` apply unchanged.
pub fn extract_api_tasks(
    repo: &RepoRecord,
    trees: &BTreeMap<String, SyntaxTree>,
    index: &SymbolIndex,
    limits: &TaskLimits,
    split: Split,
    per_repo_quota: usize,
    rng: &mut DetRng,
) -> Vec<CompletionTask> {
    let mut candidates: Vec<(&SourceFile, u32, String)> = Vec::new();
    for file in sorted_files(repo) {
        let Some(tree) = trees.get(&file.relative_path) else { continue };
        for line in codegraph::cross_file_call_lines(file, index) {
            if !eligible_single_line(file, tree, line, limits) {
                continue;
            }
            if let Some(callee) = codegraph::cross_file_callee_on_line(file, index, line) {
                candidates.push((file, line, callee));
            }
        }
    }
    sample_without_replacement(&mut candidates, per_repo_quota, rng)
        .into_iter()
        .filter_map(|(file, line, callee)| {
            make_line_task(repo, file, line, Scenario::ApiInvocation, Some(callee), split)
        })
        .collect()
}

/// Kinds a structured span may come from: block bodies, if-statements,
/// and loops. The node must be non-root and non-leaf.
const SPAN_KINDS: [NodeKind; 3] = [NodeKind::Block, NodeKind::IfStatement, NodeKind::Loop];

type SpanCandidate<'a> = (&'a SourceFile, (usize, usize), (u32, u32));

pub fn extract_span_tasks(
    repo: &RepoRecord,
    trees: &BTreeMap<String, SyntaxTree>,
    limits: &TaskLimits,
    split: Split,
    per_repo_quota: usize,
    rng: &mut DetRng,
) -> Vec<CompletionTask> {
    let mut candidates: Vec<SpanCandidate> = Vec::new();
    for file in sorted_files(repo) {
        let Some(tree) = trees.get(&file.relative_path) else { continue };
        for idx in tree.preorder() {
            if idx == tree.root {
                continue;
            }
            let node = &tree.nodes[idx];
            if !SPAN_KINDS.contains(&node.kind) || node.is_leaf() {
                continue;
            }
            if !span_is_eligible(file, tree, node.byte_span, limits) {
                continue;
            }
            candidates.push((file, node.byte_span, node.line_span));
        }
    }
    // A file can contribute the same byte span via nested kinds; dedup.
    candidates.sort_by_key(|c| (c.0.file_id(), c.1));
    candidates.dedup_by_key(|c| (c.0.file_id(), c.1));

    sample_without_replacement(&mut candidates, per_repo_quota, rng)
        .into_iter()
        .filter_map(|(file, span, lines)| {
            let gt_text = file.content[span.0..span.1].to_string();
            if gt_text.trim().is_empty() {
                return None;
            }
            Some(CompletionTask {
                task_id: format!(
                    "{}:{}:{}:{}-{}",
                    repo.repo_id,
                    file.relative_path,
                    Scenario::StructuredSpan.tag(),
                    span.0,
                    span.1
                ),
                repo_id: repo.repo_id.clone(),
                file_id: file.relative_path.clone(),
                language: file.language.clone(),
                scenario: Scenario::StructuredSpan,
                gt_span: span,
                gt_line_span: lines,
                gt_token_count: count_code_tokens_in_span(file, span),
                gt_text,
                api_name: None,
                split,
            })
        })
        .collect()
}

fn count_code_tokens_in_span(file: &SourceFile, span: (usize, usize)) -> usize {
    file.lex_tokens
        .iter()
        .filter(|t| t.is_code() && t.start >= span.0 && t.end <= span.1)
        .count()
}

/// Span eligibility: inside the token budget, at least one code token, and
/// not consisting solely of comments/imports.
fn span_is_eligible(file: &SourceFile, tree: &SyntaxTree, span: (usize, usize), limits: &TaskLimits) -> bool {
    let count = count_code_tokens_in_span(file, span);
    if !(limits.min_tokens..=limits.max_tokens).contains(&count) {
        return false;
    }
    // Reject spans whose code tokens all belong to import statements.
    let import_spans: Vec<(usize, usize)> = tree
        .nodes
        .iter()
        .filter(|n| n.kind == NodeKind::ImportStatement)
        .map(|n| n.byte_span)
        .collect();
    let all_imports = file
        .lex_tokens
        .iter()
        .filter(|t| t.is_code() && t.start >= span.0 && t.end <= span.1)
        .all(|t| import_spans.iter().any(|&(s, e)| t.start >= s && t.end <= e));
    !all_imports
}

fn sorted_files(repo: &RepoRecord) -> Vec<&SourceFile> {
    let mut files: Vec<&SourceFile> = repo.files.iter().collect();
    files.sort_by(|a, b| a.relative_path.cmp(&b.relative_path));
    files
}

fn sample_without_replacement<T>(candidates: &mut Vec<T>, quota: usize, rng: &mut DetRng) -> Vec<T> {
    if candidates.len() <= quota {
        return std::mem::take(candidates);
    }
    let picks = rng.sample_indices(candidates.len(), quota);
    let mut picks_sorted: Vec<usize> = picks;
    picks_sorted.sort_unstable();
    let mut out = Vec::with_capacity(picks_sorted.len());
    for (removed, idx) in picks_sorted.into_iter().enumerate() {
        out.push(candidates.remove(idx - removed));
    }
    out
}

/// Balance tasks of one (scenario, language, split) cell across
/// repositories: round-robin over repos in id order, at most
/// `ceil(quota / repo_count) + 1` from any single repo, then near-dedup the
/// ground truths. Returns the sample and the shortfall (0 when the quota
/// was met before dedup).
pub fn balance_and_sample(
    mut tasks: Vec<CompletionTask>,
    quota: usize,
    rng: &mut DetRng,
) -> (Vec<CompletionTask>, usize) {
    tasks.sort_by(|a, b| a.task_id.cmp(&b.task_id));
    let mut by_repo: BTreeMap<String, Vec<CompletionTask>> = BTreeMap::new();
    for task in tasks {
        by_repo.entry(task.repo_id.clone()).or_default().push(task);
    }
    let repo_count = by_repo.len().max(1);
    let per_repo_cap = quota.div_ceil(repo_count) + 1;

    let mut queues: Vec<Vec<CompletionTask>> = by_repo
        .into_values()
        .map(|mut q| {
            rng.shuffle(&mut q);
            q.truncate(per_repo_cap);
            q.reverse(); // pop() then draws in shuffled order
            q
        })
        .collect();

    let mut picked = Vec::new();
    while picked.len() < quota {
        let mut drew_any = false;
        for queue in queues.iter_mut() {
            if picked.len() >= quota {
                break;
            }
            if let Some(task) = queue.pop() {
                picked.push(task);
                drew_any = true;
            }
        }
        if !drew_any {
            break;
        }
    }
    let shortfall = quota.saturating_sub(picked.len());

    let deduped = dedup::dedup_ground_truths(picked, dedup::DEFAULT_THRESHOLD, gt_token_set);
    (deduped, shortfall)
}

/// Unigram token-set hashes of a task's ground truth, the similarity basis
/// for ground-truth near-dedup.
pub fn gt_token_set(task: &CompletionTask) -> Vec<u64> {
    let tokens = crate::lex::lex(&task.gt_text, &task.language);
    let texts: Vec<&str> =
        tokens.iter().filter(|t| t.is_code()).map(|t| t.text(&task.gt_text)).collect();
    dedup::unigram_set(&texts)
}

/// Assign the train/test split from repository creation dates: repositories
/// created strictly after `cutoff` are test, everything else is train.
pub fn split_for_repo(repo: &RepoRecord, cutoff: NaiveDate) -> Split {
    match repo.created_at {
        Some(d) if d > cutoff => Split::Test,
        _ => Split::Train,
    }
}

pub const DEFAULT_TEST_CUTOFF: &str = "2024-03-01";
