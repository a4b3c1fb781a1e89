//! Indentation-based parser for the reduced Python grammar.

use std::time::{Duration, Instant};

use super::{Node, NodeKind, ParseError, TreeBuilder};
use crate::lex::{Token, TokenKind};

/// One logical line: physical lines joined across open brackets,
/// backslash continuations, and multi-line strings.
struct LogicalLine {
    tok_start: usize,
    tok_end: usize, // exclusive
    indent: usize,
    byte_span: (usize, usize),
    line_span: (u32, u32),
}

pub(super) fn parse(
    content: &str,
    tokens: &[Token],
    deadline: Instant,
    timeout: Duration,
) -> Result<Vec<Node>, ParseError> {
    let last_line = content.lines().count().max(1) as u32;
    let mut builder = TreeBuilder::new(content.len(), last_line);

    let line_starts = line_start_offsets(content);
    let lines = logical_lines(content, tokens, &line_starts);

    let mut pos = 0;
    let top_indent = lines.first().map(|l| l.indent).unwrap_or(0);
    let children = parse_suite(
        content,
        tokens,
        &lines,
        &mut pos,
        top_indent,
        &mut builder,
        deadline,
        timeout,
        0,
    )?;
    // Any stragglers at shallower indent than the first line.
    let mut all_children = children;
    while pos < lines.len() {
        let indent = lines[pos].indent;
        let more = parse_suite(
            content,
            tokens,
            &lines,
            &mut pos,
            indent,
            &mut builder,
            deadline,
            timeout,
            0,
        )?;
        all_children.extend(more);
    }
    builder.nodes[0].children = all_children;
    Ok(builder.nodes)
}

fn line_start_offsets(content: &str) -> Vec<usize> {
    let mut starts = vec![0usize];
    for (i, b) in content.bytes().enumerate() {
        if b == b'\n' {
            starts.push(i + 1);
        }
    }
    starts
}

fn ends_with_backslash(content: &str, line_starts: &[usize], line: u32) -> bool {
    let idx = (line as usize).saturating_sub(1);
    let start = match line_starts.get(idx) {
        Some(&s) => s,
        None => return false,
    };
    let end = line_starts.get(idx + 1).map(|&e| e.saturating_sub(1)).unwrap_or(content.len());
    content[start..end.min(content.len())].trim_end().ends_with('\\')
}

fn logical_lines(content: &str, tokens: &[Token], line_starts: &[usize]) -> Vec<LogicalLine> {
    let mut lines = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let tok_start = i;
        let mut depth: i64 = 0;
        let mut end_line = tokens[i].end_line;
        loop {
            let t = &tokens[i];
            if t.kind == TokenKind::Punct {
                match t.text(content) {
                    "(" | "[" | "{" => depth += 1,
                    ")" | "]" | "}" => depth -= 1,
                    _ => {}
                }
            }
            end_line = end_line.max(t.end_line);
            i += 1;
            if i >= tokens.len() {
                break;
            }
            let next = &tokens[i];
            if next.line <= end_line {
                continue;
            }
            if depth > 0 {
                continue;
            }
            if ends_with_backslash(content, line_starts, end_line) {
                end_line = end_line.max(next.line - 1);
                continue;
            }
            break;
        }
        let first = &tokens[tok_start];
        let last = &tokens[i - 1];
        let line_start = line_starts.get((first.line as usize) - 1).copied().unwrap_or(0);
        lines.push(LogicalLine {
            tok_start,
            tok_end: i,
            indent: first.start - line_start,
            byte_span: (first.start, last.end),
            line_span: (first.line, end_line),
        });
    }
    lines
}

#[allow(clippy::too_many_arguments)]
fn parse_suite(
    content: &str,
    tokens: &[Token],
    lines: &[LogicalLine],
    pos: &mut usize,
    suite_indent: usize,
    builder: &mut TreeBuilder,
    deadline: Instant,
    timeout: Duration,
    depth: usize,
) -> Result<Vec<usize>, ParseError> {
    let mut children = Vec::new();
    if depth > 200 {
        // Pathological nesting; flatten the rest at this level.
        return Ok(children);
    }
    while *pos < lines.len() {
        if Instant::now() > deadline {
            return Err(ParseError::Timeout(timeout));
        }
        let line = &lines[*pos];
        if line.indent < suite_indent {
            break;
        }

        let code_first = (line.tok_start..line.tok_end).find(|&t| tokens[t].is_code());
        let Some(first_idx) = code_first else {
            // Comment-only logical line.
            let node = Node {
                kind: NodeKind::Comment,
                byte_span: line.byte_span,
                line_span: line.line_span,
                children: Vec::new(),
                name: None,
                signature_end: None,
                doc_span: None,
            };
            children.push(builder.add(node));
            *pos += 1;
            continue;
        };

        let first = &tokens[first_idx];
        let first_text = first.text(content);
        let kind = match (first.kind, first_text) {
            (TokenKind::Keyword, "import" | "from") => NodeKind::ImportStatement,
            (TokenKind::Keyword, "def" | "async") => NodeKind::Function,
            (TokenKind::Keyword, "class") => NodeKind::Class,
            (TokenKind::Keyword, "if" | "elif" | "else") => NodeKind::IfStatement,
            (TokenKind::Keyword, "for" | "while") => NodeKind::Loop,
            _ => NodeKind::Other,
        };
        // `async` only means Function when followed by `def`.
        let kind = if first_text == "async" {
            let second = (first_idx + 1..line.tok_end).find(|&t| tokens[t].is_code());
            match second {
                Some(s) if tokens[s].text(content) == "def" => NodeKind::Function,
                Some(s) if tokens[s].text(content) == "for" => NodeKind::Loop,
                Some(s) if tokens[s].text(content) == "with" => NodeKind::Other,
                _ => NodeKind::Other,
            }
        } else {
            kind
        };

        let header_span = line.byte_span;
        let header_lines = line.line_span;
        let last_code = (line.tok_start..line.tok_end)
            .rev()
            .find(|&t| tokens[t].is_code())
            .map(|t| tokens[t].text(content).to_string());
        let opens_block = last_code.as_deref() == Some(":")
            && *pos + 1 < lines.len()
            && lines[*pos + 1].indent > line.indent;

        let name = match kind {
            NodeKind::Function => ident_after(content, tokens, line, &["def"]),
            NodeKind::Class => ident_after(content, tokens, line, &["class"]),
            _ => None,
        };

        *pos += 1;
        let node_idx = if opens_block {
            let body_indent = lines[*pos].indent;
            let body_children = parse_suite(
                content, tokens, lines, pos, body_indent, builder, deadline, timeout, depth + 1,
            )?;
            let (block_span, block_lines) = enclosing_span(builder, &body_children)
                .unwrap_or((header_span, header_lines));
            let block = Node {
                kind: NodeKind::Block,
                byte_span: block_span,
                line_span: block_lines,
                children: body_children.clone(),
                name: None,
                signature_end: None,
                doc_span: None,
            };
            let block_idx = builder.add(block);

            let doc_span = if kind == NodeKind::Function {
                docstring_span(content, tokens, builder, &body_children)
            } else {
                None
            };
            let node = Node {
                kind,
                byte_span: (header_span.0, block_span.1.max(header_span.1)),
                line_span: (header_lines.0, block_lines.1.max(header_lines.1)),
                children: vec![block_idx],
                name,
                signature_end: Some(header_span.1),
                doc_span,
            };
            builder.add(node)
        } else {
            let node = Node {
                kind,
                byte_span: header_span,
                line_span: header_lines,
                children: Vec::new(),
                name,
                signature_end: (kind == NodeKind::Function).then_some(header_span.1),
                doc_span: None,
            };
            builder.add(node)
        };
        children.push(node_idx);
    }
    Ok(children)
}

fn ident_after(content: &str, tokens: &[Token], line: &LogicalLine, keywords: &[&str]) -> Option<String> {
    let mut seen_kw = false;
    for t in &tokens[line.tok_start..line.tok_end] {
        if !t.is_code() {
            continue;
        }
        let text = t.text(content);
        if seen_kw && t.kind == TokenKind::Ident {
            return Some(text.to_string());
        }
        if keywords.contains(&text) {
            seen_kw = true;
        }
    }
    None
}

fn enclosing_span(builder: &TreeBuilder, children: &[usize]) -> Option<((usize, usize), (u32, u32))> {
    let first = *children.first()?;
    let last = *children.last()?;
    Some((
        (builder.nodes[first].byte_span.0, builder.nodes[last].byte_span.1),
        (builder.nodes[first].line_span.0, builder.nodes[last].line_span.1),
    ))
}

/// A docstring is a first body statement consisting of a single string token.
fn docstring_span(
    content: &str,
    tokens: &[Token],
    builder: &TreeBuilder,
    body_children: &[usize],
) -> Option<(usize, usize)> {
    let first = *body_children.first()?;
    let node = &builder.nodes[first];
    if node.kind != NodeKind::Other {
        return None;
    }
    let span_tokens: Vec<&Token> = tokens
        .iter()
        .filter(|t| t.is_code() && t.start >= node.byte_span.0 && t.end <= node.byte_span.1)
        .collect();
    match span_tokens.as_slice() {
        [only] if only.kind == TokenKind::Str => {
            let _ = content;
            Some((only.start, only.end))
        }
        _ => None,
    }
}
