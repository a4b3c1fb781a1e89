//! Scoring of predicted completions: exact match, BLEU-4, character-level
//! edit distance, API-name accuracy, a reduced CodeBLEU, and the
//! similar-code bucketing histogram.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::codegraph::{parse, NodeKind, ParseOptions};
use crate::corpus::SourceFile;
use crate::lex::{self, Language, TokenKind};
use crate::preference::normalize_completion;
use crate::taskgen::Scenario;

/// 1 iff the normalized texts are equal (outer whitespace trimmed, line
/// endings unified).
pub fn exact_match(pred: &str, gt: &str) -> u8 {
    u8::from(normalize_completion(pred) == normalize_completion(gt))
}

fn ngram_counts<'a>(tokens: &'a [&'a str], n: usize) -> BTreeMap<&'a [&'a str], usize> {
    let mut counts: BTreeMap<&[&str], usize> = BTreeMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_default() += 1;
        }
    }
    counts
}

/// Modified n-gram precision with clipping; `(matches, total)`.
fn modified_precision(pred: &[&str], gt: &[&str], n: usize) -> (usize, usize) {
    let pred_counts = ngram_counts(pred, n);
    let gt_counts = ngram_counts(gt, n);
    let matches = pred_counts
        .iter()
        .map(|(gram, &count)| count.min(gt_counts.get(gram).copied().unwrap_or(0)))
        .sum();
    let total = pred.len().saturating_sub(n - 1);
    (matches, total)
}

/// BLEU with n up to 4 over pre-tokenized sequences: geometric mean of the
/// modified precisions, add-one smoothing on zero counts for n >= 2, and
/// brevity penalty `min(1, e^{1 - r/c})`.
pub fn bleu4_tokens(pred: &[&str], gt: &[&str]) -> f64 {
    if pred.is_empty() || gt.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0f64;
    for n in 1..=4 {
        let (m, t) = modified_precision(pred, gt, n);
        let p = if n == 1 {
            if m == 0 {
                return 0.0;
            }
            m as f64 / t as f64
        } else if m == 0 || t == 0 {
            (m as f64 + 1.0) / (t as f64 + 1.0)
        } else {
            m as f64 / t as f64
        };
        log_sum += p.ln();
    }
    let c = pred.len() as f64;
    let r = gt.len() as f64;
    let bp = (1.0 - r / c).exp().min(1.0);
    bp * (log_sum / 4.0).exp()
}

fn code_tokens<'a>(text: &'a str, language: &Language) -> Vec<&'a str> {
    lex::lex(text, language).iter().filter(|t| t.is_code()).map(|t| t.text(text)).collect()
}

/// BLEU-4 over the artifact's lexer tokens of normalized texts.
pub fn bleu4(pred: &str, gt: &str, language: &Language) -> f64 {
    let pred_n = normalize_completion(pred);
    let gt_n = normalize_completion(gt);
    bleu4_tokens(&code_tokens(&pred_n, language), &code_tokens(&gt_n, language))
}

/// Character-level Levenshtein distance (unit costs) on normalized strings.
pub fn edit_distance(pred: &str, gt: &str) -> usize {
    let a: Vec<char> = normalize_completion(pred).chars().collect();
    let b: Vec<char> = normalize_completion(gt).chars().collect();
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, &ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Callee names on a line: identifiers immediately preceding `(`. Dotted,
/// arrow, and scope chains contribute their rightmost component only.
pub fn callee_names(line: &str, language: &Language) -> Vec<String> {
    let tokens = lex::lex(line, language);
    let code: Vec<_> = tokens.iter().filter(|t| t.is_code()).collect();
    let mut names = Vec::new();
    for pair in code.windows(2) {
        if pair[0].kind == TokenKind::Ident && pair[1].text(line) == "(" {
            names.push(pair[0].text(line).to_string());
        }
    }
    names
}

/// 1 iff the prediction's first line invokes the expected API name,
/// arguments and receivers ignored.
pub fn api_accuracy(pred: &str, gt_api_name: &str, language: &Language) -> u8 {
    let first_line = normalize_completion(pred);
    let first_line = first_line.lines().next().unwrap_or("");
    u8::from(callee_names(first_line, language).iter().any(|n| n == gt_api_name))
}

/// Weighted unigram precision: keyword tokens weigh 4x.
fn weighted_unigram_precision(pred: &[&str], gt: &[&str], language: &Language) -> (f64, f64) {
    let keywords = language.keywords();
    let weight = |tok: &str| if keywords.contains(&tok) { 4.0 } else { 1.0 };
    let pred_counts = ngram_counts(pred, 1);
    let gt_counts = ngram_counts(gt, 1);
    let mut matched = 0.0;
    let mut total = 0.0;
    for (gram, &count) in &pred_counts {
        let w = weight(gram[0]);
        let clipped = count.min(gt_counts.get(gram).copied().unwrap_or(0));
        matched += w * clipped as f64;
        total += w * count as f64;
    }
    (matched, total)
}

/// BLEU-4 with the unigram term keyword-weighted.
pub fn weighted_bleu4(pred: &str, gt: &str, language: &Language) -> f64 {
    let pred_n = normalize_completion(pred);
    let gt_n = normalize_completion(gt);
    let pred_toks = code_tokens(&pred_n, language);
    let gt_toks = code_tokens(&gt_n, language);
    if pred_toks.is_empty() || gt_toks.is_empty() {
        return 0.0;
    }
    let (matched, total) = weighted_unigram_precision(&pred_toks, &gt_toks, language);
    if matched == 0.0 {
        return 0.0;
    }
    let mut log_sum = (matched / total).ln();
    for n in 2..=4 {
        let (m, t) = modified_precision(&pred_toks, &gt_toks, n);
        let p = if m == 0 || t == 0 { (m as f64 + 1.0) / (t as f64 + 1.0) } else { m as f64 / t as f64 };
        log_sum += p.ln();
    }
    let bp = (1.0 - gt_toks.len() as f64 / pred_toks.len() as f64).exp().min(1.0);
    bp * (log_sum / 4.0).exp()
}

/// Kind-paths of depth <= 3 in a parse tree, as a sorted unique list.
fn subtree_kind_paths(text: &str, language: &Language) -> Option<Vec<Vec<NodeKind>>> {
    if !language.is_supported() {
        return None;
    }
    let file = SourceFile::from_content("snippet", "snippet", language.clone(), text.to_string());
    let tree = parse(&file, &ParseOptions::default()).ok()?;
    let mut paths = Vec::new();
    for (idx, node) in tree.nodes.iter().enumerate() {
        if idx == tree.root {
            continue;
        }
        paths.push(vec![node.kind]);
        for &c in &node.children {
            let child = &tree.nodes[c];
            paths.push(vec![node.kind, child.kind]);
            for &g in &child.children {
                paths.push(vec![node.kind, child.kind, tree.nodes[g].kind]);
            }
        }
    }
    paths.sort();
    paths.dedup();
    Some(paths)
}

/// Fraction of the ground truth's depth-<=3 kind-paths present in the
/// prediction's tree (1.0 when the ground truth has none).
pub fn subtree_match(pred: &str, gt: &str, language: &Language) -> Option<f64> {
    let gt_paths = subtree_kind_paths(gt, language)?;
    let pred_paths = subtree_kind_paths(pred, language)?;
    if gt_paths.is_empty() {
        return Some(1.0);
    }
    let hits = gt_paths.iter().filter(|p| pred_paths.binary_search(p).is_ok()).count();
    Some(hits as f64 / gt_paths.len() as f64)
}

/// Weighted combination used by the reduced CodeBLEU.
pub fn combine_codebleu(bleu: f64, weighted: f64, subtree: f64) -> f64 {
    0.4 * bleu + 0.3 * weighted + 0.3 * subtree
}

/// Reduced CodeBLEU: `0.4*bleu4 + 0.3*keyword-weighted bleu + 0.3*subtree
/// match`. Returns `(value, used_fallback)`; unsupported languages fall
/// back to plain BLEU-4.
pub fn codebleu_lite(pred: &str, gt: &str, language: &Language) -> (f64, bool) {
    let bleu = bleu4(pred, gt, language);
    if normalize_completion(pred).is_empty() {
        return (0.0, false);
    }
    match subtree_match(pred, gt, language) {
        Some(subtree) => {
            let weighted = weighted_bleu4(pred, gt, language);
            (combine_codebleu(bleu, weighted, subtree), false)
        }
        None => (bleu, true),
    }
}

/// Ten equal-width similarity buckets `[0,0.1) .. [0.9,1.0]`; each bucket
/// counts the exactly-matched predictions falling in it.
pub fn similar_code_buckets(items: &[(f64, bool)]) -> [u64; 10] {
    let mut histogram = [0u64; 10];
    for &(similarity, correct) in items {
        if !correct {
            continue;
        }
        let bucket = ((similarity * 10.0).floor() as usize).min(9);
        histogram[bucket] += 1;
    }
    histogram
}

// ---------------------------------------------------------------------------
// Per-task records and aggregates
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub task_id: String,
    pub language: Language,
    pub scenario: Scenario,
    pub em: u8,
    pub bleu: f64,
    pub edit_distance: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub api_correct: Option<u8>,
    pub codebleu_lite: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_similarity: Option<f64>,
}

/// Score one prediction. API/single-line predictions are reduced to their
/// first line before scoring, mirroring how completions are consumed.
pub fn score_task(
    task_id: &str,
    language: &Language,
    scenario: Scenario,
    prediction: &str,
    gt_text: &str,
    gt_api_name: Option<&str>,
    reference_similarity: Option<f64>,
) -> TaskMetrics {
    let reduced: String = match scenario {
        Scenario::ApiInvocation | Scenario::SingleLine => {
            normalize_completion(prediction).lines().next().unwrap_or("").to_string()
        }
        Scenario::StructuredSpan => prediction.to_string(),
    };
    let api_correct = match (scenario, gt_api_name) {
        (Scenario::ApiInvocation, Some(name)) => Some(api_accuracy(&reduced, name, language)),
        _ => None,
    };
    TaskMetrics {
        task_id: task_id.to_string(),
        language: language.clone(),
        scenario,
        em: exact_match(&reduced, gt_text),
        bleu: bleu4(&reduced, gt_text, language),
        edit_distance: edit_distance(&reduced, gt_text),
        api_correct,
        codebleu_lite: codebleu_lite(&reduced, gt_text, language).0,
        reference_similarity,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellAggregate {
    pub language: Language,
    pub scenario: Scenario,
    pub metric: String,
    pub value: f64,
}

/// Per-(language, scenario) arithmetic means. API accuracy aggregates only
/// over tasks that carry it.
pub fn aggregate(per_task: &[TaskMetrics]) -> Vec<CellAggregate> {
    let mut cells: BTreeMap<(Language, Scenario), Vec<&TaskMetrics>> = BTreeMap::new();
    for record in per_task {
        cells.entry((record.language.clone(), record.scenario)).or_default().push(record);
    }
    let mut out = Vec::new();
    for ((language, scenario), records) in cells {
        let n = records.len() as f64;
        let mean = |f: &dyn Fn(&TaskMetrics) -> f64| records.iter().map(|r| f(r)).sum::<f64>() / n;
        out.push(CellAggregate {
            language: language.clone(),
            scenario,
            metric: "em".into(),
            value: mean(&|r| r.em as f64),
        });
        out.push(CellAggregate {
            language: language.clone(),
            scenario,
            metric: "bleu".into(),
            value: mean(&|r| r.bleu),
        });
        out.push(CellAggregate {
            language: language.clone(),
            scenario,
            metric: "edit_distance".into(),
            value: mean(&|r| r.edit_distance as f64),
        });
        out.push(CellAggregate {
            language: language.clone(),
            scenario,
            metric: "codebleu_lite".into(),
            value: mean(&|r| r.codebleu_lite),
        });
        let api: Vec<f64> = records.iter().filter_map(|r| r.api_correct.map(f64::from)).collect();
        if !api.is_empty() {
            out.push(CellAggregate {
                language,
                scenario,
                metric: "api_accuracy".into(),
                value: api.iter().sum::<f64>() / api.len() as f64,
            });
        }
    }
    out
}
