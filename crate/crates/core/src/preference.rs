//! Preference-data construction: candidate generation through a pluggable
//! completion provider, rejected-code filtration, and triple assembly.
//!
//! Providers implement one call: prompt in, up to `n` completions out. The
//! HTTP provider speaks a single-endpoint JSON protocol (`POST
//! /v1/complete`); the toy provider is deterministic and needs no network,
//! which is what desk-scale pipeline runs use.

use std::io::{Read, Write};
use std::net::TcpStream;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lex::{self, Language, TokenKind};
use crate::taskgen::CompletionTask;
use crate::util::{hash64, DetRng};

pub const DEFAULT_CANDIDATES: usize = 10;
pub const DEFAULT_TEMPERATURE: f64 = 1.5;
pub const DEFAULT_TOP_P: f64 = 0.95;
pub const DEFAULT_REJECTED_CAP: usize = 3;

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("provider unreachable: {0}")]
    Unreachable(String),
    #[error("provider protocol error: {0}")]
    Protocol(String),
    #[error("unsupported provider url (only http:// is spoken): {0}")]
    UnsupportedScheme(String),
}

#[derive(Debug, Error)]
pub enum PreferenceError {
    #[error("need at least 2 repositories for a repo-level split, got {0}")]
    TooFewRepos(usize),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sampling {
    pub n: usize,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stop: Option<Vec<String>>,
}

impl Default for Sampling {
    fn default() -> Self {
        Sampling {
            n: DEFAULT_CANDIDATES,
            temperature: DEFAULT_TEMPERATURE,
            top_p: DEFAULT_TOP_P,
            max_tokens: 256,
            stop: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateSet {
    pub task_id: String,
    pub candidates: Vec<String>,
    pub sampling: Sampling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceTriple {
    pub task_id: String,
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
}

pub trait CompletionProvider: Sync {
    fn complete(&self, prompt: &str, sampling: &Sampling) -> Result<Vec<String>, ProviderError>;
    fn name(&self) -> &'static str;
}

/// Ask the provider for up to `sampling.n` completions. `n == 0` returns an
/// empty set without a provider call; surplus completions are truncated.
pub fn generate_candidates(
    provider: &dyn CompletionProvider,
    task_id: &str,
    prompt: &str,
    sampling: &Sampling,
) -> Result<CandidateSet, ProviderError> {
    let mut candidates = if sampling.n == 0 {
        Vec::new()
    } else {
        provider.complete(prompt, sampling)?
    };
    candidates.truncate(sampling.n);
    Ok(CandidateSet { task_id: task_id.to_string(), candidates, sampling: sampling.clone() })
}

/// Trim outer whitespace and normalize line endings; the equality basis for
/// all filtration rules.
pub fn normalize_completion(text: &str) -> String {
    text.replace("\r\n", "\n").trim().to_string()
}

/// Filtration of candidate completions into rejected code:
/// drop empties, exact matches of the ground truth, candidates containing
/// the ground truth, and duplicates (first kept), then cap the survivors.
/// Candidate order is preserved; candidate text is kept verbatim.
pub fn filter_rejected(candidates: &[String], gt: &str, cap: usize) -> Vec<String> {
    let gt_norm = normalize_completion(gt);
    let mut kept: Vec<String> = Vec::new();
    let mut kept_norms: Vec<String> = Vec::new();
    for candidate in candidates {
        if kept.len() >= cap {
            break;
        }
        let norm = normalize_completion(candidate);
        if norm.is_empty() {
            continue;
        }
        if norm == gt_norm {
            continue;
        }
        if !gt_norm.is_empty() && norm.contains(&gt_norm) {
            continue;
        }
        if kept_norms.iter().any(|k| k == &norm) {
            continue;
        }
        kept.push(candidate.clone());
        kept_norms.push(norm);
    }
    kept
}

/// One triple per (task, surviving rejected candidate), ordered by task id.
pub fn build_triples(items: &[(String, String, String, Vec<String>)]) -> Vec<PreferenceTriple> {
    let mut sorted: Vec<&(String, String, String, Vec<String>)> = items.iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));
    let mut triples = Vec::new();
    for (task_id, prompt, chosen, rejected) in sorted {
        for bad in rejected {
            triples.push(PreferenceTriple {
                task_id: task_id.clone(),
                prompt: prompt.clone(),
                chosen: chosen.clone(),
                rejected: bad.clone(),
            });
        }
    }
    triples
}

/// Repo-level split of tasks into SFT and RL halves. No repository lands in
/// both. Returns `(sft, rl, all_sft_warning)`; the warning flags a
/// degenerate ratio that left the RL side empty.
pub fn split_sft_rl(
    tasks: Vec<CompletionTask>,
    ratio: f64,
    rng: &mut DetRng,
) -> Result<(Vec<CompletionTask>, Vec<CompletionTask>, bool), PreferenceError> {
    let mut repos: Vec<String> = tasks.iter().map(|t| t.repo_id.clone()).collect();
    repos.sort();
    repos.dedup();
    if repos.len() < 2 {
        return Err(PreferenceError::TooFewRepos(repos.len()));
    }
    rng.shuffle(&mut repos);
    let n_sft = ((ratio * repos.len() as f64).round() as usize).min(repos.len());
    let sft_repos: std::collections::BTreeSet<String> = repos.drain(..n_sft).collect();

    let (mut sft, mut rl) = (Vec::new(), Vec::new());
    for task in tasks {
        if sft_repos.contains(&task.repo_id) {
            sft.push(task);
        } else {
            rl.push(task);
        }
    }
    sft.sort_by(|a, b| a.task_id.cmp(&b.task_id));
    rl.sort_by(|a, b| a.task_id.cmp(&b.task_id));
    let warning = rl.is_empty();
    Ok((sft, rl, warning))
}

// ---------------------------------------------------------------------------
// Toy provider
// ---------------------------------------------------------------------------

/// Deterministic provider for desk-scale runs: candidates are synthesized
/// from identifier material found in the prompt itself, seeded by
/// (seed, prompt hash), so reruns are byte-identical.
pub struct ToyProvider {
    pub seed: u64,
    pub language: Language,
}

impl ToyProvider {
    pub fn new(seed: u64) -> ToyProvider {
        ToyProvider { seed, language: Language::Python }
    }
}

impl CompletionProvider for ToyProvider {
    fn complete(&self, prompt: &str, sampling: &Sampling) -> Result<Vec<String>, ProviderError> {
        let mut rng = DetRng::new(self.seed ^ hash64(prompt.as_bytes()));
        let tokens = lex::lex(prompt, &self.language);
        let mut idents: Vec<&str> = tokens
            .iter()
            .filter(|t| t.kind == TokenKind::Ident)
            .map(|t| t.text(prompt))
            .collect();
        idents.sort_unstable();
        idents.dedup();
        if idents.is_empty() {
            idents.push("value");
        }
        let pick = |rng: &mut DetRng, pool: &[&str]| -> String {
            pool[rng.gen_range(pool.len())].to_string()
        };
        let completions = (0..sampling.n)
            .map(|_| match rng.gen_range(4) {
                0 => format!(
                    "{} = {}({}, {})",
                    pick(&mut rng, &idents),
                    pick(&mut rng, &idents),
                    pick(&mut rng, &idents),
                    pick(&mut rng, &idents)
                ),
                1 => format!(
                    "{} = {} + {}",
                    pick(&mut rng, &idents),
                    pick(&mut rng, &idents),
                    pick(&mut rng, &idents)
                ),
                2 => format!("return {}({})", pick(&mut rng, &idents), pick(&mut rng, &idents)),
                _ => format!(
                    "{}.{}({})",
                    pick(&mut rng, &idents),
                    pick(&mut rng, &idents),
                    pick(&mut rng, &idents)
                ),
            })
            .collect();
        Ok(completions)
    }

    fn name(&self) -> &'static str {
        "toy"
    }
}

// ---------------------------------------------------------------------------
// HTTP provider (wire protocol: POST /v1/complete)
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
struct CompleteRequest<'a> {
    prompt: &'a str,
    n: usize,
    temperature: f64,
    top_p: f64,
    max_tokens: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    stop: Option<&'a Vec<String>>,
}

#[derive(Debug, Deserialize)]
struct CompleteResponse {
    completions: Vec<String>,
}

pub struct HttpProvider {
    pub url: String,
    pub timeout: Duration,
}

impl HttpProvider {
    pub fn new(url: &str, timeout: Duration) -> HttpProvider {
        HttpProvider { url: url.to_string(), timeout }
    }

    fn endpoint(&self) -> Result<(String, String), ProviderError> {
        let rest = self
            .url
            .strip_prefix("http://")
            .ok_or_else(|| ProviderError::UnsupportedScheme(self.url.clone()))?;
        let (authority, path) = match rest.find('/') {
            Some(i) => (&rest[..i], &rest[i..]),
            None => (rest, ""),
        };
        let authority =
            if authority.contains(':') { authority.to_string() } else { format!("{authority}:80") };
        let base = path.trim_end_matches('/');
        Ok((authority, format!("{base}/v1/complete")))
    }
}

impl CompletionProvider for HttpProvider {
    fn complete(&self, prompt: &str, sampling: &Sampling) -> Result<Vec<String>, ProviderError> {
        let (authority, path) = self.endpoint()?;
        let body = serde_json::to_string(&CompleteRequest {
            prompt,
            n: sampling.n,
            temperature: sampling.temperature,
            top_p: sampling.top_p,
            max_tokens: sampling.max_tokens,
            stop: sampling.stop.as_ref(),
        })
        .map_err(|e| ProviderError::Protocol(e.to_string()))?;

        let mut stream = TcpStream::connect(&authority)
            .map_err(|e| ProviderError::Unreachable(format!("{authority}: {e}")))?;
        stream.set_read_timeout(Some(self.timeout)).ok();
        stream.set_write_timeout(Some(self.timeout)).ok();

        let request = format!(
            "POST {path} HTTP/1.1\r\nHost: {authority}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
            body.len()
        );
        stream
            .write_all(request.as_bytes())
            .map_err(|e| ProviderError::Unreachable(e.to_string()))?;

        let mut raw = Vec::new();
        stream
            .read_to_end(&mut raw)
            .map_err(|e| ProviderError::Unreachable(format!("read: {e}")))?;
        let response = String::from_utf8(raw).map_err(|e| ProviderError::Protocol(e.to_string()))?;

        let (head, body) = response
            .split_once("\r\n\r\n")
            .ok_or_else(|| ProviderError::Protocol("malformed http response".into()))?;
        let status = head
            .lines()
            .next()
            .and_then(|l| l.split_whitespace().nth(1))
            .and_then(|c| c.parse::<u16>().ok())
            .ok_or_else(|| ProviderError::Protocol("missing status line".into()))?;
        if status != 200 {
            return Err(ProviderError::Protocol(format!("status {status}")));
        }
        let chunked = head
            .lines()
            .any(|l| l.to_ascii_lowercase().starts_with("transfer-encoding:") && l.to_ascii_lowercase().contains("chunked"));
        let body = if chunked { decode_chunked(body)? } else { body.to_string() };

        let parsed: CompleteResponse =
            serde_json::from_str(&body).map_err(|e| ProviderError::Protocol(e.to_string()))?;
        Ok(parsed.completions)
    }

    fn name(&self) -> &'static str {
        "http"
    }
}

fn decode_chunked(body: &str) -> Result<String, ProviderError> {
    let mut out = String::new();
    let mut rest = body;
    loop {
        let (size_line, tail) = rest
            .split_once("\r\n")
            .ok_or_else(|| ProviderError::Protocol("bad chunked framing".into()))?;
        let size = usize::from_str_radix(size_line.trim(), 16)
            .map_err(|e| ProviderError::Protocol(format!("bad chunk size: {e}")))?;
        if size == 0 {
            return Ok(out);
        }
        if tail.len() < size {
            return Err(ProviderError::Protocol("truncated chunk".into()));
        }
        out.push_str(&tail[..size]);
        rest = tail[size..].strip_prefix("\r\n").unwrap_or(&tail[size..]);
    }
}
