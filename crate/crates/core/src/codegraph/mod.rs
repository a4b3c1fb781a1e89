//! Lightweight per-repository syntactic analysis.
//!
//! A reduced grammar (functions, types, imports, calls, comments, blocks)
//! is enough for everything downstream: task extraction needs spans and
//! node kinds, context extraction needs import edges and function bodies,
//! and cross-file API detection needs name-resolved call sites.
//!
//! Parsing is total: regions the grammar does not understand become `Other`
//! nodes rather than errors. Resolution is syntactic and unscoped; a call
//! site resolves only when exactly one imported or defined name matches.

mod braces;
mod python;

use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{RepoRecord, SourceFile};
use crate::lex::{Language, Token, TokenKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeKind {
    Function,
    Class,
    Block,
    IfStatement,
    Loop,
    ImportStatement,
    Comment,
    Other,
}

#[derive(Debug, Clone)]
pub struct Node {
    pub kind: NodeKind,
    /// Byte span `[start, end)` into the file content.
    pub byte_span: (usize, usize),
    /// 1-based inclusive line span.
    pub line_span: (u32, u32),
    pub children: Vec<usize>,
    /// Function/Class name, when the grammar recovers one.
    pub name: Option<String>,
    /// For functions: end byte of the signature (before the body).
    pub signature_end: Option<usize>,
    /// For functions: span of a doc comment / docstring, when present.
    pub doc_span: Option<(usize, usize)>,
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct SyntaxTree {
    pub file_id: String,
    pub nodes: Vec<Node>,
    pub root: usize,
}

impl SyntaxTree {
    pub fn root_node(&self) -> &Node {
        &self.nodes[self.root]
    }

    /// Depth-first preorder walk of node indices.
    pub fn preorder(&self) -> Vec<usize> {
        let mut order = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![self.root];
        while let Some(idx) = stack.pop() {
            order.push(idx);
            for &child in self.nodes[idx].children.iter().rev() {
                stack.push(child);
            }
        }
        order
    }

    /// Nodes of the given kind, in preorder.
    pub fn nodes_of_kind(&self, kind: NodeKind) -> Vec<usize> {
        self.preorder().into_iter().filter(|&i| self.nodes[i].kind == kind).collect()
    }

    /// True when `line` lies inside a Comment node.
    pub fn line_in_comment(&self, line: u32) -> bool {
        self.nodes.iter().any(|n| {
            n.kind == NodeKind::Comment && n.line_span.0 <= line && line <= n.line_span.1
        })
    }

    /// True when `line` overlaps an ImportStatement node.
    pub fn line_in_import(&self, line: u32) -> bool {
        self.nodes.iter().any(|n| {
            n.kind == NodeKind::ImportStatement && n.line_span.0 <= line && line <= n.line_span.1
        })
    }
}

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("unsupported language: {0}")]
    UnsupportedLanguage(String),
    #[error("parse exceeded the time limit of {0:?}")]
    Timeout(Duration),
}

#[derive(Debug, Clone, Copy)]
pub struct ParseOptions {
    pub timeout: Duration,
}

impl Default for ParseOptions {
    fn default() -> Self {
        ParseOptions { timeout: Duration::from_secs(5) }
    }
}

/// Parse a source file into a reduced-grammar syntax tree.
pub fn parse(file: &SourceFile, opts: &ParseOptions) -> Result<SyntaxTree, ParseError> {
    let deadline = std::time::Instant::now() + opts.timeout;
    let nodes = match &file.language {
        Language::Python => python::parse(&file.content, &file.lex_tokens, deadline, opts.timeout)?,
        Language::Java | Language::Cpp | Language::Go => {
            braces::parse(&file.content, &file.lex_tokens, &file.language, deadline, opts.timeout)?
        }
        Language::Other(tag) => return Err(ParseError::UnsupportedLanguage(tag.clone())),
    };
    Ok(SyntaxTree { file_id: file.file_id(), nodes, root: 0 })
}

/// Arena helper shared by the per-language parsers.
pub(crate) struct TreeBuilder {
    pub nodes: Vec<Node>,
}

impl TreeBuilder {
    pub fn new(content_len: usize, last_line: u32) -> TreeBuilder {
        let root = Node {
            kind: NodeKind::Other,
            byte_span: (0, content_len),
            line_span: (1, last_line.max(1)),
            children: Vec::new(),
            name: None,
            signature_end: None,
            doc_span: None,
        };
        TreeBuilder { nodes: vec![root] }
    }

    pub fn add(&mut self, node: Node) -> usize {
        self.nodes.push(node);
        self.nodes.len() - 1
    }
}

// ---------------------------------------------------------------------------
// Symbol index
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DefKind {
    Function,
    Type,
    Constant,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Definition {
    pub name: String,
    pub kind: DefKind,
    pub file_id: String,
    pub signature_span: (usize, usize),
    #[serde(skip_serializing_if = "Option::is_none")]
    pub body_span: Option<(usize, usize)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub doc_span: Option<(usize, usize)>,
    pub line: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImportEdge {
    pub from_file: String,
    /// Repo-relative path of the imported file. Edges always point inside
    /// the repository; unresolvable imports produce no edge.
    pub to_file: String,
    /// Explicitly imported names; empty means a whole-module import.
    pub names: Vec<String>,
    /// Position of the import statement in the importing file.
    pub order: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Reference {
    pub name: String,
    pub file_id: String,
    pub call_site_span: (usize, usize),
    pub line: u32,
    /// Index into `SymbolIndex::definitions` when uniquely resolved.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resolved_def: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SymbolIndex {
    pub repo_id: String,
    pub definitions: Vec<Definition>,
    pub imports: Vec<ImportEdge>,
    pub references: Vec<Reference>,
}

impl SymbolIndex {
    pub fn defs_in_file<'a>(&'a self, file_rel: &'a str) -> impl Iterator<Item = &'a Definition> {
        self.definitions.iter().filter(move |d| d.file_id == file_rel)
    }

    pub fn imports_from<'a>(&'a self, file_rel: &'a str) -> impl Iterator<Item = &'a ImportEdge> {
        self.imports.iter().filter(move |e| e.from_file == file_rel)
    }
}

/// Collect definitions, import edges, and name-resolved references for one
/// repository. `trees` maps relative paths to parsed syntax trees; files
/// missing from the map (parse timeouts) are skipped.
pub fn build_symbol_index(repo: &RepoRecord, trees: &BTreeMap<String, SyntaxTree>) -> SymbolIndex {
    let mut index = SymbolIndex { repo_id: repo.repo_id.clone(), ..Default::default() };

    let repo_paths: BTreeSet<&str> = repo.files.iter().map(|f| f.relative_path.as_str()).collect();

    // Definitions and imports, file by file in sorted order.
    for file in sorted_files(repo) {
        let Some(tree) = trees.get(&file.relative_path) else { continue };
        collect_definitions(file, tree, &mut index.definitions);
        collect_imports(repo, file, tree, &repo_paths, &mut index.imports);
    }

    // Name → definition indices.
    let mut by_name: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, def) in index.definitions.iter().enumerate() {
        by_name.entry(def.name.as_str()).or_default().push(i);
    }

    // The enclosing type of each definition (e.g. the class a method lives
    // in), so `import pkg.Util;` makes `Util`'s methods resolvable.
    let containers: Vec<Option<String>> = index
        .definitions
        .iter()
        .map(|def| {
            index
                .definitions
                .iter()
                .filter(|outer| {
                    outer.kind == DefKind::Type
                        && outer.file_id == def.file_id
                        && outer
                            .body_span
                            .map(|(s, e)| def.signature_span.0 > s && def.signature_span.1 <= e)
                            .unwrap_or(false)
                })
                .map(|outer| outer.name.clone())
                .next()
        })
        .collect();

    for file in sorted_files(repo) {
        let Some(tree) = trees.get(&file.relative_path) else { continue };
        let sig_spans: Vec<(usize, usize)> = tree
            .nodes
            .iter()
            .filter(|n| matches!(n.kind, NodeKind::Function | NodeKind::Class))
            .map(|n| (n.byte_span.0, n.signature_end.unwrap_or(n.byte_span.0)))
            .collect();
        let edges: Vec<&ImportEdge> = index.imports.iter().filter(|e| e.from_file == file.relative_path).collect();

        for (name, span, line) in call_sites(file, &sig_spans) {
            let mut candidates: Vec<usize> = Vec::new();
            if let Some(defs) = by_name.get(name.as_str()) {
                for &di in defs {
                    let def = &index.definitions[di];
                    let local = def.file_id == file.relative_path;
                    let imported = edges.iter().any(|e| {
                        e.to_file == def.file_id
                            && (e.names.is_empty()
                                || e.names.iter().any(|n| n == &name)
                                || containers[di].as_ref().map(|c| e.names.contains(c)).unwrap_or(false))
                    });
                    if local || imported {
                        candidates.push(di);
                    }
                }
            }
            candidates.dedup();
            let resolved_def = if candidates.len() == 1 { Some(candidates[0]) } else { None };
            index.references.push(Reference {
                name,
                file_id: file.relative_path.clone(),
                call_site_span: span,
                line,
                resolved_def,
            });
        }
    }

    index
}

fn sorted_files(repo: &RepoRecord) -> Vec<&SourceFile> {
    let mut files: Vec<&SourceFile> = repo.files.iter().collect();
    files.sort_by(|a, b| a.relative_path.cmp(&b.relative_path));
    files
}

fn collect_definitions(file: &SourceFile, tree: &SyntaxTree, out: &mut Vec<Definition>) {
    for idx in tree.preorder() {
        let node = &tree.nodes[idx];
        match node.kind {
            NodeKind::Function => {
                if let Some(name) = &node.name {
                    out.push(Definition {
                        name: name.clone(),
                        kind: DefKind::Function,
                        file_id: file.relative_path.clone(),
                        signature_span: (node.byte_span.0, node.signature_end.unwrap_or(node.byte_span.1)),
                        body_span: body_block_span(tree, idx),
                        doc_span: node.doc_span,
                        line: node.line_span.0,
                    });
                }
            }
            NodeKind::Class => {
                if let Some(name) = &node.name {
                    out.push(Definition {
                        name: name.clone(),
                        kind: DefKind::Type,
                        file_id: file.relative_path.clone(),
                        signature_span: (node.byte_span.0, node.signature_end.unwrap_or(node.byte_span.1)),
                        body_span: body_block_span(tree, idx),
                        doc_span: node.doc_span,
                        line: node.line_span.0,
                    });
                }
            }
            _ => {}
        }
    }
    // Constants: language-specific, top-level only.
    collect_constants(file, tree, out);
}

fn body_block_span(tree: &SyntaxTree, idx: usize) -> Option<(usize, usize)> {
    tree.nodes[idx]
        .children
        .iter()
        .map(|&c| &tree.nodes[c])
        .find(|n| n.kind == NodeKind::Block)
        .map(|n| n.byte_span)
}

fn collect_constants(file: &SourceFile, tree: &SyntaxTree, out: &mut Vec<Definition>) {
    let root = tree.root_node();
    for &child in &root.children {
        let node = &tree.nodes[child];
        if node.kind != NodeKind::Other {
            continue;
        }
        let toks: Vec<&Token> = file
            .lex_tokens
            .iter()
            .filter(|t| t.is_code() && t.start >= node.byte_span.0 && t.end <= node.byte_span.1)
            .collect();
        let name = match file.language {
            // Go: `const Name = ...`
            Language::Go => match (toks.first(), toks.get(1), toks.get(2)) {
                (Some(a), Some(b), Some(c))
                    if a.text(&file.content) == "const"
                        && b.kind == TokenKind::Ident
                        && c.text(&file.content) == "=" =>
                {
                    Some(b.text(&file.content).to_string())
                }
                _ => None,
            },
            // Python: `ALL_CAPS = ...`
            Language::Python => match (toks.first(), toks.get(1)) {
                (Some(a), Some(b))
                    if a.kind == TokenKind::Ident
                        && b.text(&file.content) == "="
                        && is_const_case(a.text(&file.content)) =>
                {
                    Some(a.text(&file.content).to_string())
                }
                _ => None,
            },
            _ => None,
        };
        if let Some(name) = name {
            out.push(Definition {
                name,
                kind: DefKind::Constant,
                file_id: file.relative_path.clone(),
                signature_span: node.byte_span,
                body_span: None,
                doc_span: None,
                line: node.line_span.0,
            });
        }
    }
}

fn is_const_case(name: &str) -> bool {
    name.len() > 1 && name.chars().all(|c| c.is_ascii_uppercase() || c.is_ascii_digit() || c == '_')
}

fn collect_imports(
    repo: &RepoRecord,
    file: &SourceFile,
    tree: &SyntaxTree,
    repo_paths: &BTreeSet<&str>,
    out: &mut Vec<ImportEdge>,
) {
    let mut order = out.iter().filter(|e| e.from_file == file.relative_path).count();
    for idx in tree.preorder() {
        let node = &tree.nodes[idx];
        if node.kind != NodeKind::ImportStatement {
            continue;
        }
        let stmt = &file.content[node.byte_span.0..node.byte_span.1];
        for (target, names) in resolve_import_targets(repo, file, stmt, repo_paths) {
            if target == file.relative_path {
                continue;
            }
            out.push(ImportEdge {
                from_file: file.relative_path.clone(),
                to_file: target,
                names,
                order,
            });
            order += 1;
        }
    }
}

/// Resolve one import statement's text to repo-relative file paths.
fn resolve_import_targets(
    repo: &RepoRecord,
    file: &SourceFile,
    stmt: &str,
    repo_paths: &BTreeSet<&str>,
) -> Vec<(String, Vec<String>)> {
    match file.language {
        Language::Python => python_import_targets(file, stmt, repo_paths),
        Language::Java => java_import_targets(stmt, repo_paths),
        Language::Cpp => cpp_include_targets(stmt, repo_paths),
        Language::Go => go_import_targets(repo, stmt),
        Language::Other(_) => Vec::new(),
    }
}

fn lookup_suffix(repo_paths: &BTreeSet<&str>, candidate: &str) -> Option<String> {
    if repo_paths.contains(candidate) {
        return Some(candidate.to_string());
    }
    let suffix = format!("/{candidate}");
    repo_paths.iter().find(|p| p.ends_with(&suffix)).map(|p| p.to_string())
}

fn python_import_targets(
    file: &SourceFile,
    stmt: &str,
    repo_paths: &BTreeSet<&str>,
) -> Vec<(String, Vec<String>)> {
    let stmt = stmt.trim();
    let mut out = Vec::new();
    let dir = file.relative_path.rsplit_once('/').map(|(d, _)| d).unwrap_or("");

    let resolve_module = |module: &str| -> Option<String> {
        let (rel_dots, rest) = {
            let dots = module.len() - module.trim_start_matches('.').len();
            (dots, module.trim_start_matches('.'))
        };
        let path_part = rest.replace('.', "/");
        let mut candidates = Vec::new();
        if rel_dots > 0 {
            // Relative import: climb `rel_dots - 1` levels from this file's dir.
            let mut base: Vec<&str> = if dir.is_empty() { Vec::new() } else { dir.split('/').collect() };
            for _ in 1..rel_dots {
                base.pop();
            }
            let prefix = base.join("/");
            let joined = if prefix.is_empty() { path_part.clone() } else { format!("{prefix}/{path_part}") };
            candidates.push(format!("{joined}.py"));
            candidates.push(format!("{joined}/__init__.py"));
        } else {
            candidates.push(format!("{path_part}.py"));
            candidates.push(format!("{path_part}/__init__.py"));
        }
        candidates.iter().find_map(|c| lookup_suffix(repo_paths, c))
    };

    if let Some(rest) = stmt.strip_prefix("from ") {
        let Some((module, names_part)) = rest.split_once(" import ") else { return out };
        let module = module.trim();
        let names: Vec<String> = names_part
            .split(',')
            .map(|n| n.split_whitespace().next().unwrap_or("").trim_start_matches('(').to_string())
            .filter(|n| !n.is_empty() && n != "*")
            .collect();
        if let Some(target) = resolve_module(module) {
            out.push((target, names));
        }
    } else if let Some(rest) = stmt.strip_prefix("import ") {
        for part in rest.split(',') {
            let module = part.split_whitespace().next().unwrap_or("");
            if module.is_empty() {
                continue;
            }
            if let Some(target) = resolve_module(module) {
                out.push((target, Vec::new()));
            }
        }
    }
    out
}

fn java_import_targets(stmt: &str, repo_paths: &BTreeSet<&str>) -> Vec<(String, Vec<String>)> {
    let body = stmt
        .trim()
        .trim_start_matches("import")
        .trim()
        .trim_start_matches("static")
        .trim()
        .trim_end_matches(';')
        .trim();
    if body.is_empty() {
        return Vec::new();
    }
    if let Some(pkg) = body.strip_suffix(".*") {
        let dir = pkg.replace('.', "/");
        let suffix = format!("/{dir}/");
        let mut targets: Vec<(String, Vec<String>)> = repo_paths
            .iter()
            .filter(|p| {
                (p.starts_with(&format!("{dir}/")) || p.contains(&suffix))
                    && p.ends_with(".java")
                    && !p[p.rfind('/').map(|i| i + 1).unwrap_or(0)..].contains('/')
            })
            .map(|p| (p.to_string(), Vec::new()))
            .collect();
        targets.sort();
        return targets;
    }
    let class = body.rsplit('.').next().unwrap_or(body).to_string();
    let candidate = format!("{}.java", body.replace('.', "/"));
    lookup_suffix(repo_paths, &candidate).map(|t| (t, vec![class])).into_iter().collect()
}

fn cpp_include_targets(stmt: &str, repo_paths: &BTreeSet<&str>) -> Vec<(String, Vec<String>)> {
    // Only quoted includes can be repo files; `<...>` is system scope.
    let Some(start) = stmt.find('"') else { return Vec::new() };
    let rest = &stmt[start + 1..];
    let Some(end) = rest.find('"') else { return Vec::new() };
    let path = &rest[..end];
    lookup_suffix(repo_paths, path).map(|t| (t, Vec::new())).into_iter().collect()
}

fn go_import_targets(repo: &RepoRecord, stmt: &str) -> Vec<(String, Vec<String>)> {
    // Each quoted string in the statement is one package path; an import
    // edge goes to every file of the matched package directory.
    let mut out = Vec::new();
    let mut dirs: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for f in &repo.files {
        if f.relative_path.ends_with(".go") {
            let dir = f.relative_path.rsplit_once('/').map(|(d, _)| d).unwrap_or("");
            dirs.entry(dir).or_default().push(&f.relative_path);
        }
    }
    let mut rest = stmt;
    while let Some(start) = rest.find('"') {
        let tail = &rest[start + 1..];
        let Some(end) = tail.find('"') else { break };
        let pkg = &tail[..end];
        rest = &tail[end + 1..];
        let matched = dirs
            .iter()
            .filter(|(dir, _)| {
                **dir == pkg || dir.ends_with(&format!("/{pkg}")) || pkg.ends_with(&format!("/{dir}")) || {
                    // Module-qualified path: compare trailing segments.
                    let pkg_tail = pkg.rsplit('/').next().unwrap_or(pkg);
                    dir.rsplit('/').next().map(|d| d == pkg_tail).unwrap_or(false)
                        && pkg.contains('/')
                }
            })
            .min_by_key(|(dir, _)| dir.len());
        if let Some((_, files)) = matched {
            let mut files = files.clone();
            files.sort();
            for f in files {
                out.push((f.to_string(), Vec::new()));
            }
        }
    }
    out
}

/// Call sites: identifier tokens immediately followed by `(`, outside
/// comments and outside function/class signature spans.
fn call_sites(file: &SourceFile, signature_spans: &[(usize, usize)]) -> Vec<(String, (usize, usize), u32)> {
    let mut sites = Vec::new();
    let code: Vec<&Token> = file.lex_tokens.iter().filter(|t| t.is_code()).collect();
    for w in code.windows(2) {
        let (tok, next) = (w[0], w[1]);
        if tok.kind != TokenKind::Ident || next.text(&file.content) != "(" {
            continue;
        }
        if signature_spans.iter().any(|&(s, e)| tok.start >= s && tok.end <= e) {
            continue;
        }
        sites.push((tok.text(&file.content).to_string(), (tok.start, tok.end), tok.line));
    }
    sites
}

/// Lines of `file` containing at least one reference resolved to a
/// definition in a different file of the same repository. Sorted, unique.
pub fn cross_file_call_lines(file: &SourceFile, index: &SymbolIndex) -> Vec<u32> {
    let mut lines: BTreeSet<u32> = BTreeSet::new();
    for reference in &index.references {
        if reference.file_id != file.relative_path {
            continue;
        }
        if let Some(def_idx) = reference.resolved_def {
            if index.definitions[def_idx].file_id != file.relative_path {
                lines.insert(reference.line);
            }
        }
    }
    lines.into_iter().collect()
}

/// The cross-file reference (name of the callee) on a given line, if any.
pub fn cross_file_callee_on_line(file: &SourceFile, index: &SymbolIndex, line: u32) -> Option<String> {
    index
        .references
        .iter()
        .filter(|r| r.file_id == file.relative_path && r.line == line)
        .find_map(|r| {
            let def_idx = r.resolved_def?;
            (index.definitions[def_idx].file_id != file.relative_path).then(|| r.name.clone())
        })
}

/// Check the strict-nesting invariant: every child span is contained in its
/// parent span and siblings do not partially overlap.
pub fn check_strict_nesting(tree: &SyntaxTree) -> Result<(), String> {
    for (idx, node) in tree.nodes.iter().enumerate() {
        for &c in &node.children {
            let child = &tree.nodes[c];
            if child.byte_span.0 < node.byte_span.0 || child.byte_span.1 > node.byte_span.1 {
                return Err(format!(
                    "child {c} span {:?} escapes parent {idx} span {:?}",
                    child.byte_span, node.byte_span
                ));
            }
        }
        for pair in node.children.windows(2) {
            let (a, b) = (&tree.nodes[pair[0]], &tree.nodes[pair[1]]);
            if a.byte_span.1 > b.byte_span.0 {
                return Err(format!(
                    "siblings overlap: {:?} then {:?}",
                    a.byte_span, b.byte_span
                ));
            }
        }
    }
    Ok(())
}
