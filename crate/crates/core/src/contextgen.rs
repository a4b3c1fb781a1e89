//! In-file and cross-file context construction, and final prompt assembly.
//!
//! Cross-file context comes from two sources: files imported by the task's
//! file (compressed by stripping function bodies) and the top-k lexically
//! similar 20-line windows from across the repository. The assembled prompt
//! formats each cross-file snippet as an independent file block, then lays
//! out prefix/suffix/middle markers in fill-in-the-middle order.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codegraph::{NodeKind, SymbolIndex, SyntaxTree};
use crate::corpus::{RepoRecord, SourceFile};
use crate::dedup::{jaccard_sorted, unigram_set};
use crate::lex;
use crate::taskgen::CompletionTask;

pub const DEFAULT_WINDOW_LINES: usize = 20;
pub const DEFAULT_TOP_K: usize = 10;

#[derive(Debug, Error)]
pub enum ContextError {
    #[error("ground-truth span {span:?} out of bounds for file of {len} bytes")]
    SpanOutOfBounds { span: (usize, usize), len: usize },
    #[error("prompt exceeds the window limit ({tokens} > {limit}) even after full truncation")]
    Oversize { tokens: usize, limit: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SnippetOrigin {
    Dependency,
    Retrieval,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CrossFileSnippet {
    pub origin: SnippetOrigin,
    pub source_path: String,
    pub text: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rank: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub similarity: Option<f64>,
}

/// Fill-in-the-middle marker triple.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkerScheme {
    pub name: String,
    pub prefix: String,
    pub middle: String,
    pub suffix: String,
}

impl MarkerScheme {
    pub fn plain() -> MarkerScheme {
        MarkerScheme {
            name: "plain".into(),
            prefix: "<PRE>".into(),
            middle: "<MID>".into(),
            suffix: "<SUF>".into(),
        }
    }

    pub fn aixcoder() -> MarkerScheme {
        MarkerScheme {
            name: "aixcoder".into(),
            prefix: "<AIX-SPAN-PRE>".into(),
            middle: "<AIX-SPAN-MIDDLE>".into(),
            suffix: "<AIX-SPAN-POST>".into(),
        }
    }

    pub fn by_name(name: &str) -> Option<MarkerScheme> {
        match name {
            "plain" => Some(MarkerScheme::plain()),
            "aixcoder" => Some(MarkerScheme::aixcoder()),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PromptBundle {
    pub task_id: String,
    /// Full in-file prefix; `prefix + gt + suffix` reconstructs the file.
    pub prefix: String,
    pub suffix: String,
    pub snippets: Vec<CrossFileSnippet>,
    pub scheme: MarkerScheme,
    pub assembled: String,
    pub token_length: usize,
}

/// Exact partition of the file around the ground-truth span.
pub fn split_in_file(file: &SourceFile, gt_span: (usize, usize)) -> Result<(String, String), ContextError> {
    let len = file.content.len();
    if gt_span.0 > gt_span.1 || gt_span.1 > len || !file.content.is_char_boundary(gt_span.0)
        || !file.content.is_char_boundary(gt_span.1)
    {
        return Err(ContextError::SpanOutOfBounds { span: gt_span, len });
    }
    Ok((file.content[..gt_span.0].to_string(), file.content[gt_span.1..].to_string()))
}

/// Replace every outermost function body with a single elision marker line,
/// keeping signatures, doc comments, type definitions, imports, and
/// constants. Output is line-aligned: retained lines appear unmerged.
pub fn strip_function_bodies(file: &SourceFile, tree: &SyntaxTree) -> String {
    #[derive(Clone, Copy, PartialEq)]
    enum Action {
        Keep,
        Remove,
        Marker(usize), // original line index carrying the marker
    }
    let lines: Vec<&str> = file.content.split('\n').collect();
    let mut actions = vec![Action::Keep; lines.len()];

    // Outermost functions only: skip functions nested inside another
    // function's span.
    let functions = tree.nodes_of_kind(NodeKind::Function);
    let outermost: Vec<usize> = functions
        .iter()
        .copied()
        .filter(|&f| {
            let span = tree.nodes[f].byte_span;
            !functions.iter().any(|&g| {
                g != f && tree.nodes[g].byte_span.0 <= span.0 && span.1 <= tree.nodes[g].byte_span.1
            })
        })
        .collect();

    for f in outermost {
        let node = &tree.nodes[f];
        let Some(body_idx) = node.children.iter().find(|&&c| tree.nodes[c].kind == NodeKind::Block)
        else {
            continue;
        };
        let body = &tree.nodes[*body_idx];
        let sig_last_line = line_of_byte(&file.content, node.signature_end.unwrap_or(node.byte_span.0));
        let (body_first, body_last) = body.line_span;
        // For brace blocks the `{` shares the signature line and the `}`
        // line is kept; for indentation blocks the whole suite is interior.
        let interior_start = body_first.max(sig_last_line + 1);
        let interior_end = if file.content[body.byte_span.0..].starts_with('{') {
            body_last.saturating_sub(1)
        } else {
            body_last
        };
        let doc_lines = node.doc_span.map(|(s, e)| {
            (line_of_byte(&file.content, s), line_of_byte(&file.content, e.saturating_sub(1)))
        });

        let mut marker_placed = false;
        for line in interior_start..=interior_end {
            let idx = (line as usize).saturating_sub(1);
            if idx >= actions.len() {
                break;
            }
            if let Some((ds, de)) = doc_lines {
                if line >= ds && line <= de {
                    continue;
                }
            }
            actions[idx] = if marker_placed {
                Action::Remove
            } else {
                marker_placed = true;
                Action::Marker(idx)
            };
        }
    }

    let mut out = Vec::with_capacity(lines.len());
    for (idx, line) in lines.iter().enumerate() {
        match actions[idx] {
            Action::Keep => out.push((*line).to_string()),
            Action::Remove => {}
            Action::Marker(_) => {
                let indent: String = line.chars().take_while(|c| c.is_whitespace()).collect();
                out.push(format!("{indent}{} ...", file.language.line_comment()));
            }
        }
    }
    out.join("\n")
}

fn line_of_byte(content: &str, byte: usize) -> u32 {
    let byte = byte.min(content.len());
    content[..byte].bytes().filter(|&b| b == b'\n').count() as u32 + 1
}

/// Files directly imported by the task's file, bodies stripped, in import
/// order. Only in-repo edges exist in the index, so non-repo imports are
/// naturally absent.
pub fn dependency_context(
    task: &CompletionTask,
    repo: &RepoRecord,
    index: &SymbolIndex,
    trees: &BTreeMap<String, SyntaxTree>,
) -> Vec<CrossFileSnippet> {
    let mut edges: Vec<_> = index.imports_from(&task.file_id).collect();
    edges.sort_by_key(|e| e.order);
    let mut seen = Vec::new();
    let mut snippets = Vec::new();
    for edge in edges {
        if edge.to_file == task.file_id || seen.contains(&edge.to_file) {
            continue;
        }
        seen.push(edge.to_file.clone());
        let Some(file) = repo.files.iter().find(|f| f.relative_path == edge.to_file) else {
            continue;
        };
        let text = match trees.get(&edge.to_file) {
            Some(tree) => strip_function_bodies(file, tree),
            None => file.content.clone(),
        };
        snippets.push(CrossFileSnippet {
            origin: SnippetOrigin::Dependency,
            source_path: edge.to_file.clone(),
            text,
            rank: None,
            similarity: None,
        });
    }
    snippets
}

/// Split into lines without a phantom empty line after a trailing newline.
fn split_lines(text: &str) -> Vec<&str> {
    let mut lines: Vec<&str> = text.split('\n').collect();
    if lines.last() == Some(&"") && lines.len() > 1 {
        lines.pop();
    }
    lines
}

/// One retrieval-corpus window.
#[derive(Debug, Clone)]
pub struct Window {
    pub path: String,
    pub start_line: u32,
    pub end_line: u32,
    pub text: String,
}

/// Chop every repo file into non-overlapping `window_lines`-line windows
/// (final partial window included).
pub fn repo_windows(repo: &RepoRecord, window_lines: usize) -> Vec<Window> {
    let mut files: Vec<&SourceFile> = repo.files.iter().collect();
    files.sort_by(|a, b| a.relative_path.cmp(&b.relative_path));
    let mut windows = Vec::new();
    for file in files {
        let lines = split_lines(&file.content);
        let mut start = 0usize;
        while start < lines.len() {
            let end = (start + window_lines).min(lines.len());
            let text = lines[start..end].join("\n");
            if !text.trim().is_empty() {
                windows.push(Window {
                    path: file.relative_path.clone(),
                    start_line: start as u32 + 1,
                    end_line: end as u32,
                    text,
                });
            }
            start = end;
        }
    }
    windows
}

/// Top-k most similar windows to the tail of the in-file prefix, by unigram
/// token-set Jaccard. Ties break by (path, window start) ascending. Windows
/// overlapping the ground-truth span are excluded from the corpus; an empty
/// prefix yields no query and therefore no snippets.
pub fn retrieval_context(
    task: &CompletionTask,
    repo: &RepoRecord,
    prefix: &str,
    window_lines: usize,
    top_k: usize,
) -> Vec<CrossFileSnippet> {
    if prefix.is_empty() {
        return Vec::new();
    }
    let prefix_lines = split_lines(prefix);
    let tail_start = prefix_lines.len().saturating_sub(window_lines);
    let query_text = prefix_lines[tail_start..].join("\n");
    let query_tokens = token_set(&query_text, &task.language);

    let mut scored: Vec<(f64, &Window)> = Vec::new();
    let windows = repo_windows(repo, window_lines);
    for window in &windows {
        if window.path == task.file_id
            && window.start_line <= task.gt_line_span.1
            && window.end_line >= task.gt_line_span.0
        {
            continue;
        }
        let tokens = token_set(&window.text, &task.language);
        if tokens.is_empty() {
            continue;
        }
        scored.push((jaccard_sorted(&query_tokens, &tokens), window));
    }
    scored.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.1.path.cmp(&b.1.path))
            .then_with(|| a.1.start_line.cmp(&b.1.start_line))
    });
    scored
        .into_iter()
        .take(top_k)
        .enumerate()
        .map(|(i, (sim, w))| CrossFileSnippet {
            origin: SnippetOrigin::Retrieval,
            source_path: w.path.clone(),
            text: w.text.clone(),
            rank: Some(i + 1),
            similarity: Some(sim),
        })
        .collect()
}

fn token_set(text: &str, language: &crate::lex::Language) -> Vec<u64> {
    let tokens = lex::lex(text, language);
    let texts: Vec<&str> = tokens.iter().filter(|t| t.is_code()).map(|t| t.text(text)).collect();
    unigram_set(&texts)
}

/// Count every lexical token; comments included, they spend budget too.
pub fn prompt_token_length(text: &str, language: &crate::lex::Language) -> usize {
    lex::lex(text, language).len()
}

/// Assemble the final prompt.
///
/// Layout: snippet blocks (each headed by a `// path:` line, dependencies
/// before retrievals) then `marker_prefix ‖ prefix ‖ marker_suffix ‖ suffix
/// ‖ marker_middle`. Over-budget prompts are truncated in order: lowest-
/// ranked retrieval snippets, then dependency snippets last-imported-first,
/// then prefix lines from the start. The suffix and markers are never cut.
pub fn assemble_prompt(
    task: &CompletionTask,
    prefix: &str,
    suffix: &str,
    snippets: &[CrossFileSnippet],
    scheme: &MarkerScheme,
    window_limit: usize,
) -> Result<PromptBundle, ContextError> {
    let mut deps: Vec<&CrossFileSnippet> =
        snippets.iter().filter(|s| s.origin == SnippetOrigin::Dependency).collect();
    let mut retr: Vec<&CrossFileSnippet> =
        snippets.iter().filter(|s| s.origin == SnippetOrigin::Retrieval).collect();
    retr.sort_by_key(|s| s.rank.unwrap_or(usize::MAX));
    let mut trimmed_prefix: &str = prefix;

    loop {
        let assembled = render(&deps, &retr, trimmed_prefix, suffix, scheme);
        let token_length = prompt_token_length(&assembled, &task.language);
        if token_length <= window_limit {
            let kept: Vec<CrossFileSnippet> =
                deps.iter().chain(retr.iter()).map(|s| (*s).clone()).collect();
            return Ok(PromptBundle {
                task_id: task.task_id.clone(),
                prefix: prefix.to_string(),
                suffix: suffix.to_string(),
                snippets: kept,
                scheme: scheme.clone(),
                assembled,
                token_length,
            });
        }
        if retr.pop().is_some() {
            continue; // drop worst-ranked retrieval snippet
        }
        if deps.pop().is_some() {
            continue; // drop most recently imported dependency
        }
        if !trimmed_prefix.is_empty() {
            // Token length grows with retained prefix, so binary-search the
            // smallest start-trim that fits instead of shaving line by line.
            let starts: Vec<usize> = std::iter::once(0)
                .chain(trimmed_prefix.match_indices('\n').map(|(i, _)| i + 1))
                .collect();
            let fits = |from: usize| -> bool {
                let assembled = render(&deps, &retr, &trimmed_prefix[starts[from]..], suffix, scheme);
                prompt_token_length(&assembled, &task.language) <= window_limit
            };
            if fits(starts.len() - 1) {
                let (mut lo, mut hi) = (0usize, starts.len() - 1); // lo over, hi fits
                while hi - lo > 1 {
                    let mid = lo + (hi - lo) / 2;
                    if fits(mid) {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                trimmed_prefix = &trimmed_prefix[starts[hi]..];
            } else {
                trimmed_prefix = "";
            }
            continue;
        }
        return Err(ContextError::Oversize { tokens: token_length, limit: window_limit });
    }
}

fn render(
    deps: &[&CrossFileSnippet],
    retr: &[&CrossFileSnippet],
    prefix: &str,
    suffix: &str,
    scheme: &MarkerScheme,
) -> String {
    let mut out = String::new();
    for snippet in deps.iter().chain(retr.iter()) {
        out.push_str("// path: ");
        out.push_str(&snippet.source_path);
        out.push('\n');
        out.push_str(&snippet.text);
        if !snippet.text.ends_with('\n') {
            out.push('\n');
        }
    }
    out.push_str(&scheme.prefix);
    out.push_str(prefix);
    out.push_str(&scheme.suffix);
    out.push_str(suffix);
    out.push_str(&scheme.middle);
    out
}
